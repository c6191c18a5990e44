"""Symbolic execution of transformer expressions.

Evaluation produces a shaped symbolic value and appends side constraints
(noise-symbol bounds, solver contracts, traverse invariants) to the task's
constraint conjunction; the conjunction only ever grows.  The expansion
pre-pass mirrors evaluation structurally and rewrites polyhedral/symbolic
members into explicit sums wherever a map, function call, or traverse will
need to see summands.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from ..errors import (
    InvariantNotVerified, MissingExpansion, NotExpanded, RuntimeFault,
    SolverTimeout, UnsatSolverConstraint, UnsupportedTheory,
)
from ..lattice import POLYEXP, SYMEXP
from ..syntax import (
    Binary, Const, Expr, FuncCall, FuncDef, ListLit, ListOp, Map, MapList,
    MetadataAccess, Program, ShapeAccess, Solver, SymFresh, Ternary, Traverse,
    Unary, Var,
)
from .dnn import SymbolicDnn
from .terms import (
    Arena, SCons, SIte, SLin, SList, SListIte, SNeuron, SymVal, Term,
    atoms_of, is_listy, lin_add, lin_div, lin_neg, lin_of, lin_scale,
    val_term,
)

MAX_EXPANSION_DEPTH = 40


@dataclass
class SymClosure:
    name: Optional[str]
    partial: tuple = ()
    negate: bool = False
    const: Optional[object] = None


def is_expanded(v: SymVal) -> bool:
    """True iff mapping over `v` can see every summand: no still-opaque
    polyhedral/symbolic placeholder atoms occur inside."""
    if isinstance(v, Term):
        return not any(a.role == "expr" and a.sort == "Real" for a in atoms_of(v))
    if isinstance(v, SNeuron):
        return True
    if isinstance(v, SLin):
        if not is_expanded(v.const):
            return False
        return all(is_expanded(c) for c, _ in v.items)
    if isinstance(v, (SIte, SListIte)):
        return is_expanded(v.then) and is_expanded(v.other)
    if isinstance(v, SList):
        return all(is_expanded(x) for x in v.items)
    if isinstance(v, SCons):
        return is_expanded(v.head) and is_expanded(v.tail)
    return False


class SymEngine:
    """One verification task's evaluator: owns sigma conventions, threads
    (D_S, C), and calls back into the solver for invariant checks."""

    def __init__(self, program: Program, sdnn: SymbolicDnn,
                 check_valid: Optional[Callable] = None,
                 check_sat: Optional[Callable] = None):
        self.program = program
        self.funcs: dict[str, FuncDef] = {f.name: f for f in program.funcs}
        self.sdnn = sdnn
        self.arena: Arena = sdnn.arena
        self.check_valid = check_valid
        self.check_sat = check_sat
        self._invariant_cache: dict = {}
        self.trace: list[str] = []
        sdnn.prop_fn = self.property_conjuncts

    # ------------------------------------------------------------ property
    def property_conjuncts(self, rec) -> list[Term]:
        sigma = {"curr": SNeuron(rec.name, rec.atom)}
        v = self.eval(self.program.shape.prop, sigma)
        return self.flatten_ct(v)

    def flatten_ct(self, v: SymVal) -> list[Term]:
        if isinstance(v, SList):
            out = []
            for x in v.items:
                out.extend(self.flatten_ct(x))
            return out
        if isinstance(v, Term):
            if v.kind == "app" and v.op == "and":
                return self.flatten_ct(v.args[0]) + self.flatten_ct(v.args[1])
            return [v]
        if isinstance(v, SIte):
            a = self.arena
            return [a.ite(v.cond, a.conj(self.flatten_ct(v.then)),
                          a.conj(self.flatten_ct(v.other)))]
        raise RuntimeFault(f"not a constraint value: {v!r}")

    # ----------------------------------------------------------- closures
    def closure(self, e: Expr, sigma: dict) -> SymClosure:
        if isinstance(e, Const):
            return SymClosure(None, const=self.arena.const(e.value))
        if isinstance(e, Unary) and e.op == "neg":
            c = self.closure(e.e, sigma)
            return SymClosure(c.name, c.partial, not c.negate, c.const)
        if isinstance(e, Var):
            if e.name in self.funcs:
                return SymClosure(e.name)
            raise RuntimeFault(f"unknown function {e.name!r}")
        if isinstance(e, FuncCall):
            args = tuple(self.eval(a, sigma) for a in e.args)
            return SymClosure(e.name, args)
        raise RuntimeFault("expected a function reference")

    def apply(self, c: SymClosure, args: list[SymVal]) -> SymVal:
        if c.name is None:
            return c.const
        f = self.funcs[c.name]
        full = list(c.partial) + list(args)
        if len(full) > len(f.params):
            full = full[: len(f.params)]
        if len(full) != len(f.params):
            raise RuntimeFault(f"{c.name!r} arity mismatch in symbolic application")
        sigma = {p: v for (_, p), v in zip(f.params, full)}
        out = self.eval(f.body, sigma)
        if c.negate:
            out = self._neg(out)
        return out

    def _stop_args(self, c: SymClosure, neuron: SymVal, coeff: SymVal) -> list:
        if c.name is None:
            return []
        remaining = len(self.funcs[c.name].params) - len(c.partial)
        return [neuron] if remaining == 1 else [neuron, coeff]

    # ------------------------------------------------------------ evaluate
    def eval(self, e: Expr, sigma: dict) -> SymVal:
        a = self.arena
        if isinstance(e, Const):
            return a.const(e.value)
        if isinstance(e, Var):
            if e.name not in sigma:
                raise RuntimeFault(f"unbound identifier {e.name!r} in symbolic store")
            return sigma[e.name]
        if isinstance(e, SymFresh):
            eps = a.fresh("eps", "eps")
            self.sdnn.assume(a.app("and", a.app("<=", a.const(-1), eps),
                                   a.app("<=", eps, a.const(1))))
            return SLin(a.const(0), ((a.const(1), eps),))
        if isinstance(e, Unary):
            v = self.eval(e.e, sigma)
            if e.op == "not":
                return a.app("not", val_term(a, v))
            return self._neg(v)
        if isinstance(e, Binary):
            return self._binary(e, sigma)
        if isinstance(e, Ternary):
            cond = val_term(a, self.eval(e.cond, sigma))
            tv = self.eval(e.then, sigma)
            ev = self.eval(e.other, sigma)
            return self._ite(cond, tv, ev)
        if isinstance(e, MetadataAccess):
            return self._on_neurons(self.eval(e.e, sigma),
                                    lambda nm: self.sdnn.metadata(nm, e.name))
        if isinstance(e, ShapeAccess):
            return self._on_neurons(self.eval(e.e, sigma),
                                    lambda nm: self.sdnn.member(nm, e.name))
        if isinstance(e, ListLit):
            return SList(tuple(self.eval(x, sigma) for x in e.items))
        if isinstance(e, ListOp):
            return self._listop(e, sigma)
        if isinstance(e, Map):
            subject = self.eval(e.e, sigma)
            fc = self.closure(e.func, sigma)
            return self.sym_map(subject, fc)
        if isinstance(e, MapList):
            subject = self.eval(e.e, sigma)
            fc = self.closure(e.func, sigma)
            return self._maplist(subject, fc)
        if isinstance(e, FuncCall):
            return self._call(e, sigma)
        if isinstance(e, Traverse):
            return self.sym_traverse(e, sigma)
        if isinstance(e, Solver):
            return self.sym_solver(e, sigma)
        raise AssertionError(f"unhandled node {type(e).__name__}")

    # ------------------------------------------------------------- helpers
    def _ite(self, cond: Term, tv: SymVal, ev: SymVal) -> SymVal:
        if is_listy(tv) or is_listy(ev):
            return SListIte(cond, tv, ev)
        if isinstance(tv, Term) and isinstance(ev, Term):
            return self.arena.ite(cond, tv, ev)
        return SIte(cond, tv, ev)

    def _on_neurons(self, v: SymVal, fn) -> SymVal:
        if isinstance(v, SNeuron):
            return fn(v.name)
        if isinstance(v, SLin):
            nid = self._singleton_neuron(v)
            if nid is not None:
                return fn(nid)
        if isinstance(v, SList):
            return SList(tuple(self._on_neurons(x, fn) for x in v.items))
        if isinstance(v, SCons):
            return SCons(self._on_neurons(v.head, fn), self._on_neurons(v.tail, fn))
        if isinstance(v, (SListIte, SIte)):
            return self._ite(v.cond, self._on_neurons(v.then, fn),
                             self._on_neurons(v.other, fn))
        raise RuntimeFault(f"member access on a non-neuron value {v!r}")

    def _singleton_neuron(self, v: SLin) -> Optional[str]:
        if len(v.items) == 1 and v.const.kind == "const" and v.const.value == 0:
            coeff, atom = v.items[0]
            if coeff.kind == "const" and coeff.value == 1 and atom.role == "neuron":
                for nm, rec in self.sdnn.neurons.items():
                    if rec.atom.tid == atom.tid:
                        return nm
        return None

    def _neuron_of_atom(self, atom: Term) -> SNeuron:
        for nm, rec in self.sdnn.neurons.items():
            if rec.atom.tid == atom.tid:
                return SNeuron(nm, rec.atom)
        raise RuntimeFault(f"atom {atom.name} is not a registered neuron")

    # ---------------------------------------------------------- arithmetic
    def _carrier_kind(self, v: SLin) -> str:
        kinds = {atom.role for _, atom in v.items}
        if not kinds:
            return "none"
        if kinds <= {"neuron"}:
            return "neuron"
        if kinds <= {"eps"}:
            return "eps"
        raise RuntimeFault("mixed neuron/noise linear form")

    def _as_lin(self, v: SymVal) -> SLin:
        return lin_of(self.arena, v)

    def _neg(self, v: SymVal) -> SymVal:
        a = self.arena
        if isinstance(v, Term):
            return a.app("neg", v)
        if isinstance(v, (SNeuron, SLin)):
            return lin_neg(a, self._as_lin(v))
        if isinstance(v, SIte):
            return SIte(v.cond, self._neg(v.then), self._neg(v.other))
        raise RuntimeFault(f"cannot negate {v!r}")

    def _binary(self, e: Binary, sigma: dict) -> SymVal:
        a = self.arena
        op = e.op
        v1 = self.eval(e.e1, sigma)
        v2 = self.eval(e.e2, sigma)
        if op in ("and", "or"):
            return a.app(op, val_term(a, v1), val_term(a, v2))
        if op == "<>":
            return a.app("diamond", val_term(a, v1), val_term(a, v2))
        if op in ("<=", ">=", "<", ">"):
            return a.app(op, val_term(a, v1), val_term(a, v2))
        if op == "==":
            return a.app("=", val_term(a, v1), val_term(a, v2))
        return self._arith(op, v1, v2)

    def _arith(self, op: str, v1: SymVal, v2: SymVal) -> SymVal:
        a = self.arena
        if isinstance(v1, (SIte,)):
            return SIte(v1.cond, self._arith(op, v1.then, v2),
                        self._arith(op, v1.other, v2))
        if isinstance(v2, (SIte,)):
            return SIte(v2.cond, self._arith(op, v1, v2.then),
                        self._arith(op, v1, v2.other))
        lin1 = isinstance(v1, (SLin, SNeuron))
        lin2 = isinstance(v2, (SLin, SNeuron))
        if not lin1 and not lin2:
            t1, t2 = val_term(a, v1), val_term(a, v2)
            return a.app(op, t1, t2)
        l1 = self._as_lin(v1)
        l2 = self._as_lin(v2)
        if op == "+":
            return lin_add(a, l1, l2)
        if op == "-":
            return lin_add(a, l1, lin_neg(a, l2))
        if op == "*":
            k1, k2 = self._carrier_kind(l1), self._carrier_kind(l2)
            if k1 == "none" or (k1 == "eps" and k2 == "neuron"):
                return lin_scale(a, l2, val_term(a, l1))
            if k2 == "none" or (k2 == "eps" and k1 == "neuron"):
                return lin_scale(a, l1, val_term(a, l2))
            if k1 == "eps" and k2 == "eps":
                # scalar product of two symbolic scalars stays a term
                return a.mul(val_term(a, l1), val_term(a, l2))
            raise RuntimeFault("product of two neuron-bearing expressions")
        if op == "/":
            if self._carrier_kind(l2) == "neuron":
                raise RuntimeFault("division by a neuron-bearing expression")
            return lin_div(a, l1, val_term(a, l2))
        raise AssertionError(op)

    # ------------------------------------------------------------ list ops
    def _listop(self, e: ListOp, sigma: dict) -> SymVal:
        a = self.arena
        kind = e.kind
        if kind in ("max", "min"):
            return self.sym_fold_minmax(self.eval(e.args[0], sigma), kind)
        if kind in ("max2", "min2"):
            t1 = val_term(a, self.eval(e.args[0], sigma))
            t2 = val_term(a, self.eval(e.args[1], sigma))
            cmp_op = ">=" if kind == "max2" else "<="
            return a.ite(a.app(cmp_op, t1, t2), t1, t2)
        if kind == "sum":
            return self.sym_sum(self.eval(e.args[0], sigma))
        if kind == "len":
            return self.sym_len(self.eval(e.args[0], sigma))
        if kind == "avg":
            v = self.eval(e.args[0], sigma)
            total = self.sym_sum(v)
            count = self.sym_len(v)
            return self._arith("/", total, count)
        if kind == "dot":
            return self.sym_dot(self.eval(e.args[0], sigma),
                                self.eval(e.args[1], sigma))
        if kind == "concat":
            return self.sym_concat(self.eval(e.args[0], sigma),
                                   self.eval(e.args[1], sigma))
        if kind == "compare":
            subject = self.eval(e.args[0], sigma)
            fc = self.closure(e.func, sigma)
            return self.sym_compare(subject, fc)
        raise AssertionError(kind)

    def sym_sum(self, v: SymVal) -> SymVal:
        if isinstance(v, SList):
            out: SymVal = self.arena.const(0)
            for x in v.items:
                out = self._arith("+", out, x)
            return out
        if isinstance(v, SCons):
            return self._arith("+", v.head, self.sym_sum(v.tail))
        if isinstance(v, SListIte):
            return self._ite(v.cond, self.sym_sum(v.then), self.sym_sum(v.other))
        raise RuntimeFault(f"sum over non-list {v!r}")

    def sym_len(self, v: SymVal) -> SymVal:
        a = self.arena
        if isinstance(v, SList):
            return a.const(len(v.items))
        if isinstance(v, SCons):
            return a.add(a.const(1), val_term(a, self.sym_len(v.tail)))
        if isinstance(v, SListIte):
            return a.ite(v.cond, val_term(a, self.sym_len(v.then)),
                         val_term(a, self.sym_len(v.other)))
        raise RuntimeFault(f"len of non-list {v!r}")

    def sym_fold_minmax(self, v: SymVal, kind: str) -> SymVal:
        a = self.arena
        if isinstance(v, SListIte):
            return self._ite(v.cond, self.sym_fold_minmax(v.then, kind),
                             self.sym_fold_minmax(v.other, kind))
        if isinstance(v, SCons):
            rest = self.sym_fold_minmax(v.tail, kind)
            return self._pair_minmax(v.head, rest, kind)
        if isinstance(v, SList):
            if not v.items:
                return a.const(0)
            out = v.items[-1]
            for x in reversed(v.items[:-1]):
                out = self._pair_minmax(x, out, kind)
            return out
        raise RuntimeFault(f"{kind} over non-list {v!r}")

    def _pair_minmax(self, x: SymVal, y: SymVal, kind: str) -> SymVal:
        a = self.arena
        tx, ty = val_term(a, x), val_term(a, y)
        op = ">=" if kind == "max" else "<="
        return a.ite(a.app(op, tx, ty), tx, ty)

    def sym_dot(self, v1: SymVal, v2: SymVal) -> SymVal:
        if isinstance(v1, SListIte):
            return self._ite(v1.cond, self.sym_dot(v1.then, v2),
                             self.sym_dot(v1.other, v2))
        if isinstance(v2, SListIte):
            return self._ite(v2.cond, self.sym_dot(v1, v2.then),
                             self.sym_dot(v1, v2.other))
        xs = self._spine(v1)
        ys = self._spine(v2)
        out: SymVal = self.arena.const(0)
        for x, y in zip(xs, ys):
            out = self._arith("+", out, self._arith("*", x, y))
        return out

    def sym_concat(self, v1: SymVal, v2: SymVal) -> SymVal:
        if isinstance(v1, SListIte):
            return SListIte(v1.cond, self.sym_concat(v1.then, v2),
                            self.sym_concat(v1.other, v2))
        if isinstance(v2, SListIte):
            return SListIte(v2.cond, self.sym_concat(v1, v2.then),
                            self.sym_concat(v1, v2.other))
        if isinstance(v1, SCons):
            return SCons(v1.head, self.sym_concat(v1.tail, v2))
        if isinstance(v1, SList):
            if isinstance(v2, SList):
                return SList(v1.items + v2.items)
            out = v2
            for x in reversed(v1.items):
                out = SCons(x, out)
            return out
        raise RuntimeFault("concat over non-lists")

    def _spine(self, v: SymVal) -> list[SymVal]:
        if isinstance(v, SList):
            return list(v.items)
        if isinstance(v, SCons):
            return [v.head] + self._spine(v.tail)
        raise RuntimeFault("conditional list where a fixed spine is needed")

    def sym_compare(self, v: SymVal, fc: SymClosure) -> SymVal:
        """Every argmax-outcome combination as a nested conditional list."""
        a = self.arena
        if isinstance(v, SListIte):
            return SListIte(v.cond, self.sym_compare(v.then, fc),
                            self.sym_compare(v.other, fc))
        items = self._spine(v)
        if len(items) <= 1:
            return SList(tuple(items))
        acc: SymVal = SList(())
        for i in range(len(items) - 1, -1, -1):
            conds = []
            for j, other in enumerate(items):
                if j == i:
                    continue
                r = self.apply(fc, [items[i], other])
                conds.append(val_term(a, r))
            acc = SListIte(a.conj(conds), SCons(items[i], acc), acc)
        return acc

    # ----------------------------------------------------------------- map
    def sym_map(self, v: SymVal, fc: SymClosure) -> SymVal:
        a = self.arena
        if isinstance(v, (SIte,)):
            return self._ite(v.cond, self.sym_map(v.then, fc),
                             self.sym_map(v.other, fc))
        if isinstance(v, Term):
            if not is_expanded(v):
                raise NotExpanded(
                    "map over a non-expanded value; the expansion pre-pass "
                    "missed this site")
            return v  # constant-only: nothing to map
        if isinstance(v, (SNeuron, SLin)):
            lin = self._as_lin(v)
            if not is_expanded(lin):
                raise NotExpanded(
                    "map over a non-expanded value; the expansion pre-pass "
                    "missed this site")
            out: SymVal = lin.const
            for coeff, atom in lin.items:
                if atom.role == "neuron":
                    carrier: SymVal = self._neuron_of_atom(atom)
                else:
                    carrier = SLin(a.const(0), ((a.const(1), atom),))
                image = self.apply(fc, [carrier, coeff])
                out = self._arith("+", out, image)
            return out
        raise RuntimeFault(f"map over {v!r}")

    def _maplist(self, v: SymVal, fc: SymClosure) -> SymVal:
        if isinstance(v, SList):
            return SList(tuple(self.apply(fc, [x]) for x in v.items))
        if isinstance(v, SCons):
            return SCons(self.apply(fc, [v.head]), self._maplist(v.tail, fc))
        if isinstance(v, SListIte):
            return SListIte(v.cond, self._maplist(v.then, fc),
                            self._maplist(v.other, fc))
        raise RuntimeFault("mapList over a non-list")

    # ---------------------------------------------------------------- call
    def _call(self, e: FuncCall, sigma: dict) -> SymVal:
        if e.name in ("Sigmoid", "Tanh"):
            raise UnsupportedTheory(
                f"{e.name} in a transformer: the query leaves the decidable fragment")
        if e.name not in self.funcs:
            raise RuntimeFault(f"unknown function {e.name!r}")
        f = self.funcs[e.name]
        if len(e.args) != len(f.params):
            raise RuntimeFault(f"{e.name!r} arity mismatch")
        args = [self.eval(x, sigma) for x in e.args]
        return self.apply(SymClosure(e.name), args)

    # ------------------------------------------------------------ traverse
    def sym_traverse(self, e: Traverse, sigma: dict) -> SymVal:
        a = self.arena
        key = id(e)
        if key not in self._invariant_cache:
            self._invariant_cache[key] = self._check_invariant(e, sigma)
        base_ok, ind_ok = self._invariant_cache[key]
        if not base_ok:
            raise InvariantNotVerified("base", "invariant does not hold on the "
                                               "traverse input")
        if not ind_ok:
            raise InvariantNotVerified("induction", "invariant is not preserved "
                                                    "by a replacement step")
        pool = self.sdnn.expansion_pool()
        out = SLin(a.fresh("trav_c0", "const"),
                   tuple(sorted(((a.fresh(f"trav_c{i}", "const"), rec.atom)
                                 for i, rec in enumerate(pool, 1)),
                                key=lambda p: p[1].tid)))
        sigma_out = dict(sigma)
        sigma_out[e.e.name] = out
        inv = self.eval(e.invariant, sigma_out)
        self.sdnn.assume(val_term(a, inv))
        self.trace.append(f"traverse output assumed under invariant at {e.span.line}")
        return out

    def _dispatch_valid(self, premise: list[Term], conclusion: Term) -> bool:
        if self.check_valid is None:
            raise RuntimeFault("no solver wired for invariant checking")
        verdict = self.check_valid(premise, conclusion)
        if verdict == "unknown":
            raise InvariantNotVerified("timeout", "solver returned unknown")
        return verdict == "valid"

    def _check_invariant(self, e: Traverse, sigma: dict) -> tuple[bool, bool]:
        a = self.arena
        # base: the invariant holds on the traverse input state
        base_term = val_term(a, self.eval(e.invariant, sigma))
        base_ok = self._dispatch_valid(list(self.sdnn.constraints), base_term)
        if not base_ok:
            return False, True
        # induction: an arbitrary state satisfying the invariant still does
        # after one replacement step on the non-stopped summands
        pool = self.sdnn.expansion_pool()
        coeffs = [a.fresh(f"ind_c{i}", "const") for i in range(len(pool) + 1)]
        state = SLin(coeffs[0],
                     tuple(sorted(((c, rec.atom) for c, rec in zip(coeffs[1:], pool)),
                                  key=lambda p: p[1].tid)))
        sigma1 = dict(sigma)
        sigma1[e.e.name] = state
        mark = self.sdnn.snapshot()
        inv0 = val_term(a, self.eval(e.invariant, sigma1))
        fs = self.closure(e.stop, sigma)
        fr = self.closure(e.replace, sigma)
        total: SymVal = coeffs[0]
        for (c, rec) in zip(coeffs[1:], pool):
            carrier = SNeuron(rec.name, rec.atom)
            stop_t = val_term(a, self.apply(fs, self._stop_args(fs, carrier, c)))
            repl = self.apply(fr, [carrier, c])
            unchanged = a.mul(c, rec.atom)
            total = self._arith("+", total,
                                a.ite(stop_t, unchanged, val_term(a, repl)))
        sigma2 = dict(sigma)
        sigma2[e.e.name] = total
        inv1 = val_term(a, self.eval(e.invariant, sigma2))
        new_conjuncts = self.sdnn.constraints[mark:]
        premise = list(self.sdnn.constraints[:mark]) + [inv0]
        conclusion = a.conj(list(new_conjuncts) + [inv1])
        ind_ok = self._dispatch_valid(premise, conclusion)
        return base_ok, ind_ok

    # -------------------------------------------------------------- solver
    def sym_solver(self, e: Solver, sigma: dict) -> SymVal:
        a = self.arena
        obj = self.eval(e.objective, sigma)
        ct = self.eval(e.constraint, sigma)
        ct_term = a.conj(self.flatten_ct(ct))
        if self.check_sat is not None:
            verdict = self.check_sat(list(self.sdnn.constraints) + [ct_term])
            if verdict == "unsat":
                raise UnsatSolverConstraint(
                    "solver() constraint is unsatisfiable under the current path")
        fresh = a.fresh("opt", "const")
        bound_op = "<=" if e.op == "minimize" else ">="
        self.sdnn.assume(a.implies(ct_term,
                                   a.app(bound_op, fresh, val_term(a, obj))))
        self.trace.append(f"solver contract for {e.op} at line {e.span.line}")
        return fresh

    # ---------------------------------------------------------- expansion
    def expand_for(self, e: Expr, sigma: dict, depth: int = 0) -> None:
        """Static pre-pass: walk the expression the way evaluation will, and
        expand every member a map/function-call/traverse will decompose."""
        if depth > MAX_EXPANSION_DEPTH:
            from ..errors import NonTerminatingExpansion
            raise NonTerminatingExpansion(
                "expansion exceeded the call-graph depth bound")
        if isinstance(e, (Const, SymFresh, Var)):
            return
        if isinstance(e, Unary):
            self.expand_for(e.e, sigma, depth)
            return
        if isinstance(e, Binary):
            self.expand_for(e.e1, sigma, depth)
            self.expand_for(e.e2, sigma, depth)
            return
        if isinstance(e, Ternary):
            for child in (e.cond, e.then, e.other):
                self.expand_for(child, sigma, depth)
            return
        if isinstance(e, (MetadataAccess, ShapeAccess)):
            self.expand_for(e.e, sigma, depth)
            return
        if isinstance(e, ListLit):
            for x in e.items:
                self.expand_for(x, sigma, depth)
            return
        if isinstance(e, ListOp):
            for x in e.args:
                self.expand_for(x, sigma, depth)
            if e.kind == "dot":
                for x in e.args:
                    self.ensure_expanded(x, sigma, depth)
            if e.kind == "compare" and e.func is not None:
                subject = self.eval(e.args[0], sigma)
                try:
                    items = self._spine(subject)
                except RuntimeFault:
                    items = []
                fc = self.closure(e.func, sigma)
                if fc.name is not None:
                    f = self.funcs[fc.name]
                    for i, x in enumerate(items):
                        for j, y in enumerate(items):
                            if i == j:
                                continue
                            inner = {p: v for (_, p), v in
                                     zip(f.params, list(fc.partial) + [x, y])}
                            self.expand_for(f.body, inner, depth + 1)
            return
        if isinstance(e, Map):
            self.expand_for(e.e, sigma, depth)
            self.ensure_expanded(e.e, sigma, depth)
            subject = self.eval(e.e, sigma)
            fc = self.closure(e.func, sigma)
            self._expand_map_body(subject, fc, sigma, depth)
            return
        if isinstance(e, MapList):
            self.expand_for(e.e, sigma, depth)
            subject = self.eval(e.e, sigma)
            fc = self.closure(e.func, sigma)
            if fc.name is not None:
                f = self.funcs[fc.name]
                try:
                    items = self._spine(subject)
                except RuntimeFault:
                    items = []
                for x in items:
                    inner = {p: v for (_, p), v in
                             zip(f.params, list(fc.partial) + [x])}
                    self.expand_for(f.body, inner, depth + 1)
            return
        if isinstance(e, FuncCall):
            if e.name in ("Sigmoid", "Tanh"):
                for x in e.args:
                    self.expand_for(x, sigma, depth)
                return
            f = self.funcs.get(e.name)
            if f is None:
                raise RuntimeFault(f"unknown function {e.name!r}")
            for x, (ptype, _) in zip(e.args, f.params):
                self.expand_for(x, sigma, depth)
                if ptype in (POLYEXP, SYMEXP):
                    self.ensure_expanded(x, sigma, depth)
            args = [self.eval(x, sigma) for x in e.args]
            inner = {p: v for (_, p), v in zip(f.params, args)}
            self.expand_for(f.body, inner, depth + 1)
            return
        if isinstance(e, Traverse):
            self.expand_for(e.e, sigma, depth)
            self.ensure_expanded(e.e, sigma, depth)
            pool = self.sdnn.expansion_pool()
            a = self.arena
            fs = self.closure(e.stop, sigma)
            fr = self.closure(e.replace, sigma)
            for i, rec in enumerate(pool, 1):
                carrier = SNeuron(rec.name, rec.atom)
                coeff = a.fresh(f"gexp_c{i}", "const")
                for fc in (fs, fr):
                    if fc.name is None:
                        continue
                    f = self.funcs[fc.name]
                    call_args = self._stop_args(fc, carrier, coeff) if fc is fs \
                        else [carrier, coeff]
                    inner = {p: v for (_, p), v in
                             zip(f.params, list(fc.partial) + call_args)}
                    self.expand_for(f.body, inner, depth + 1)
            out = SLin(a.const(0), ())
            sigma_inv = dict(sigma)
            sigma_inv[e.e.name] = sigma[e.e.name] if e.e.name in sigma else out
            self.expand_for(e.invariant, sigma_inv, depth)
            return
        if isinstance(e, Solver):
            self.expand_for(e.objective, sigma, depth)
            self.expand_for(e.constraint, sigma, depth)
            return
        raise AssertionError(f"unhandled node {type(e).__name__}")

    def _expand_map_body(self, subject: SymVal, fc: SymClosure, sigma: dict,
                         depth: int) -> None:
        a = self.arena
        if isinstance(subject, SIte):
            self._expand_map_body(subject.then, fc, sigma, depth)
            self._expand_map_body(subject.other, fc, sigma, depth)
            return
        if isinstance(subject, Term):
            return
        if isinstance(subject, (SNeuron, SLin)) and fc.name is not None:
            lin = self._as_lin(subject)
            f = self.funcs[fc.name]
            for coeff, atom in lin.items:
                if atom.role == "neuron":
                    carrier: SymVal = self._neuron_of_atom(atom)
                else:
                    carrier = SLin(a.const(0), ((a.const(1), atom),))
                inner = {p: v for (_, p), v in
                         zip(f.params, list(fc.partial) + [carrier, coeff])}
                self.expand_for(f.body, inner, depth + 1)

    def ensure_expanded(self, e: Expr, sigma: dict, depth: int = 0) -> None:
        """The expand() judgment: rewrite member accesses the evaluation of
        `e` will surface into expanded form."""
        if isinstance(e, ShapeAccess):
            mtype = self.sdnn.tau.get(e.name)
            if mtype in (POLYEXP, SYMEXP):
                subject = self.eval(e.e, sigma)
                for nm in self._neuron_names(subject):
                    self.sdnn.expand_member(nm, e.name)
            return
        if isinstance(e, Unary):
            self.ensure_expanded(e.e, sigma, depth)
            return
        if isinstance(e, Binary):
            self.ensure_expanded(e.e1, sigma, depth)
            self.ensure_expanded(e.e2, sigma, depth)
            return
        if isinstance(e, Ternary):
            self.ensure_expanded(e.then, sigma, depth)
            self.ensure_expanded(e.other, sigma, depth)
            return
        if isinstance(e, ListLit):
            for x in e.items:
                self.ensure_expanded(x, sigma, depth)
            return
        if isinstance(e, ListOp):
            for x in e.args:
                self.ensure_expanded(x, sigma, depth)
            return
        if isinstance(e, FuncCall):
            f = self.funcs.get(e.name)
            if f is None:
                return
            args = [self.eval(x, sigma) for x in e.args]
            inner = {p: v for (_, p), v in zip(f.params, args)}
            self.ensure_expanded(f.body, inner, depth + 1)
            return
        # Var: store values are kept expanded; Map/Traverse/Solver outputs
        # are expanded by construction.
        return

    def _neuron_names(self, v: SymVal) -> list[str]:
        if isinstance(v, SNeuron):
            return [v.name]
        if isinstance(v, SLin):
            nm = self._singleton_neuron(v)
            return [nm] if nm is not None else []
        if isinstance(v, SList):
            out = []
            for x in v.items:
                out.extend(self._neuron_names(x))
            return out
        if isinstance(v, SCons):
            return self._neuron_names(v.head) + self._neuron_names(v.tail)
        if isinstance(v, (SIte, SListIte)):
            return self._neuron_names(v.then) + self._neuron_names(v.other)
        return []
