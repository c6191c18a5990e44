"""Big-step concrete execution of certifier programs.

Covers expression evaluation (including map, mapList, compare, list
operations), graph traversal with priority/stop/replace functions, solver
calls (routed through the SMT backend), and the Flow worklist that pushes
abstract shapes across a concrete network.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .errors import RuntimeFault, UnsetShapeRead
from .network import ConcreteDNN, DnnOp, Neuron, op_value
from .syntax import (
    Binary, Const, Expr, Flow, FuncCall, FuncDef, ListLit, ListOp, Map,
    MapList, MetadataAccess, Program, RetIf, RetTuple, ShapeAccess, Solver,
    SymFresh, Ternary, TransformerDef, TransformerRet, Traverse, Unary, Var,
)
from .values import (
    CtAnd, CtCmp, CtIn, VPoly, VSym, is_ct, is_number, neuron_id, to_poly,
    v_add, v_bool, v_compare, v_div, v_mul, v_neg, v_sub,
)

MAX_CALL_DEPTH = 200


@dataclass
class Closure:
    """A function-position value: a user function with partially applied
    arguments, an optional result negation, or a constant."""

    name: Optional[str]
    partial: tuple = ()
    negate: bool = False
    const: Optional[object] = None

    def describe(self) -> str:
        return self.name or f"const {self.const}"


@dataclass
class TraverseStats:
    iterations: int = 0
    initial_rank: int = 0


class Interp:
    """Evaluator over one program; owns the function/transformer tables."""

    def __init__(self, program: Program, dnn: ConcreteDNN,
                 solver_fn: Optional[Callable] = None):
        self.program = program
        self.dnn = dnn
        self.funcs: dict[str, FuncDef] = {f.name: f for f in program.funcs}
        self.transformers: dict[str, TransformerDef] = {
            t.name: t for t in program.transformers}
        self.tau = {name: t for t, name in program.shape.members}
        self.solver_fn = solver_fn
        self._eps_counter = 0
        self.last_traverse: Optional[TraverseStats] = None

    # ------------------------------------------------------------ helpers
    def fresh_eps(self) -> VSym:
        self._eps_counter += 1
        return VSym.sym(self._eps_counter)

    def _closure(self, e: Expr, rho: dict, depth: int) -> Closure:
        if isinstance(e, Const):
            return Closure(None, const=e.value)
        if isinstance(e, Unary) and e.op == "neg":
            c = self._closure(e.e, rho, depth)
            return Closure(c.name, c.partial, not c.negate, c.const)
        if isinstance(e, Var):
            if e.name in self.funcs:
                return Closure(e.name)
            raise RuntimeFault(f"unknown function {e.name!r}")
        if isinstance(e, FuncCall):
            if e.name not in self.funcs:
                raise RuntimeFault(f"unknown function {e.name!r}")
            args = tuple(self.eval(a, rho, depth) for a in e.args)
            return Closure(e.name, args)
        raise RuntimeFault("expected a function reference")

    def apply(self, c: Closure, args: list, depth: int = 0):
        if c.name is None:
            return c.const
        f = self.funcs[c.name]
        full = list(c.partial) + list(args)
        if len(full) > len(f.params):
            full = full[: len(f.params)]
        if len(full) != len(f.params):
            raise RuntimeFault(
                f"{c.name!r} expects {len(f.params)} arguments, got {len(full)}")
        if depth > MAX_CALL_DEPTH:
            raise RuntimeFault(f"call depth exceeded in {c.name!r}")
        rho = {p: v for (_, p), v in zip(f.params, full)}
        out = self.eval(f.body, rho, depth + 1)
        if c.negate:
            out = v_neg(out)
        return out

    # --------------------------------------------------------------- eval
    def eval(self, e: Expr, rho: dict, depth: int = 0):
        if isinstance(e, Const):
            return Fraction(e.value) if isinstance(e.value, Fraction) else e.value
        if isinstance(e, Var):
            if e.name not in rho:
                raise RuntimeFault(f"unbound variable {e.name!r}")
            return rho[e.name]
        if isinstance(e, SymFresh):
            return self.fresh_eps()
        if isinstance(e, Unary):
            v = self.eval(e.e, rho, depth)
            if e.op == "not":
                if not isinstance(v, bool):
                    raise RuntimeFault("'not' over a non-boolean")
                return not v
            return v_neg(v)
        if isinstance(e, Binary):
            a = self.eval(e.e1, rho, depth)
            b = self.eval(e.e2, rho, depth)
            op = e.op
            if op == "+":
                return v_add(a, b)
            if op == "-":
                return v_sub(a, b)
            if op == "*":
                return v_mul(a, b)
            if op == "/":
                return v_div(a, b)
            if op in ("and", "or"):
                return v_bool(op, a, b)
            return v_compare(op, a, b)
        if isinstance(e, Ternary):
            g = self.eval(e.cond, rho, depth)
            if not isinstance(g, bool):
                raise RuntimeFault("ternary guard did not evaluate to a boolean")
            return self.eval(e.then if g else e.other, rho, depth)
        if isinstance(e, MetadataAccess):
            return self._metadata(e, rho, depth)
        if isinstance(e, ShapeAccess):
            return self._shape(e, rho, depth)
        if isinstance(e, ListLit):
            return [self.eval(x, rho, depth) for x in e.items]
        if isinstance(e, ListOp):
            return self._listop(e, rho, depth)
        if isinstance(e, Map):
            return self._map(e, rho, depth)
        if isinstance(e, MapList):
            f = self._closure(e.func, rho, depth)
            xs = self.eval(e.e, rho, depth)
            if not isinstance(xs, list):
                raise RuntimeFault("mapList over a non-list")
            return [self.apply(f, [x], depth) for x in xs]
        if isinstance(e, FuncCall):
            return self._call(e, rho, depth)
        if isinstance(e, Traverse):
            return self._traverse(e, rho, depth)
        if isinstance(e, Solver):
            return self._solver(e, rho, depth)
        raise AssertionError(f"unhandled node {type(e).__name__}")

    # ------------------------------------------------------------ accesses
    def _metadata(self, e: MetadataAccess, rho, depth):
        v = self.eval(e.e, rho, depth)
        if isinstance(v, list):
            return [self._metadata_of(neuron_id(x), e.name) for x in v]
        return self._metadata_of(neuron_id(v), e.name)

    def _metadata_of(self, nid: int, name: str):
        n = self.dnn.neurons[nid]
        if name == "weight":
            return list(n.weight)
        if name == "bias":
            return n.bias
        if name == "layer":
            return n.layer
        if name == "equations":
            return list(n.equations)
        raise AssertionError(name)

    def _shape(self, e: ShapeAccess, rho, depth):
        v = self.eval(e.e, rho, depth)
        if isinstance(v, list):
            return [self.dnn.shape_of(neuron_id(x), e.name) for x in v]
        return self.dnn.shape_of(neuron_id(v), e.name)

    # ------------------------------------------------------------- listops
    def _listop(self, e: ListOp, rho, depth):
        kind = e.kind
        if kind in ("max", "min"):
            xs = self.eval(e.args[0], rho, depth)
            if not isinstance(xs, list):
                raise RuntimeFault(f"{kind} over a non-list")
            if not xs:
                return 0
            for x in xs:
                if not is_number(x):
                    raise RuntimeFault(f"{kind} over non-numeric elements")
            return max(xs) if kind == "max" else min(xs)
        if kind in ("max2", "min2"):
            a = self.eval(e.args[0], rho, depth)
            b = self.eval(e.args[1], rho, depth)
            if not (is_number(a) and is_number(b)):
                raise RuntimeFault(f"{kind[:3]} over non-numeric operands")
            return max(a, b) if kind == "max2" else min(a, b)
        if kind == "sum":
            xs = self.eval(e.args[0], rho, depth)
            out = 0
            for x in xs:
                out = v_add(out, x)
            return out
        if kind == "avg":
            xs = self.eval(e.args[0], rho, depth)
            if not xs:
                raise RuntimeFault("avg of an empty list")
            out = 0
            for x in xs:
                out = v_add(out, x)
            return v_div(out, len(xs))
        if kind == "len":
            xs = self.eval(e.args[0], rho, depth)
            if not isinstance(xs, list):
                raise RuntimeFault("len of a non-list")
            return len(xs)
        if kind == "dot":
            a = self.eval(e.args[0], rho, depth)
            b = self.eval(e.args[1], rho, depth)
            if not (isinstance(a, list) and isinstance(b, list)):
                raise RuntimeFault("dot of non-lists")
            out = 0
            for x, y in zip(a, b):  # truncates to the shorter list
                out = v_add(out, v_mul(x, y))
            return out
        if kind == "concat":
            a = self.eval(e.args[0], rho, depth)
            b = self.eval(e.args[1], rho, depth)
            return list(a) + list(b)
        if kind == "compare":
            xs = self.eval(e.args[0], rho, depth)
            f = self._closure(e.func, rho, depth)
            return self.compare(xs, f, depth)
        raise AssertionError(kind)

    def compare(self, xs: list, f: Closure, depth: int = 0) -> list:
        """Elements that compare greater-or-equal against every other element."""
        if len(xs) <= 1:
            return list(xs)
        out = []
        for i, x in enumerate(xs):
            wins = True
            for j, y in enumerate(xs):
                if i == j:
                    continue
                r = self.apply(f, [x, y], depth)
                if not isinstance(r, bool):
                    raise RuntimeFault("compare function returned a non-boolean")
                if not r:
                    wins = False
                    break
            if wins:
                out.append(x)
        return out

    # ----------------------------------------------------------------- map
    def _map(self, e: Map, rho, depth):
        v = self.eval(e.e, rho, depth)
        f = self._closure(e.func, rho, depth)
        return self.map_value(v, f, depth)

    def map_value(self, v, f: Closure, depth: int = 0):
        if is_number(v):
            return v
        if isinstance(v, VPoly):
            out = v.const
            for nid in sorted(v.coeffs):
                out = v_add(out, self.apply(f, [VPoly.neuron(nid), v.coeffs[nid]], depth))
            return out
        if isinstance(v, VSym):
            out = v.const
            for eid in sorted(v.coeffs):
                out = v_add(out, self.apply(f, [VSym.sym(eid), v.coeffs[eid]], depth))
            return out
        raise RuntimeFault(f"map over {v!r}")

    # ------------------------------------------------------------ traverse
    def _traverse(self, e: Traverse, rho, depth):
        v = self.eval(e.e, rho, depth)
        if is_number(v):
            v = VPoly(v)
        if not isinstance(v, VPoly):
            raise RuntimeFault("traverse over a non-polyhedral value")
        fp = self._closure(e.priority, rho, depth)
        fs = self._closure(e.stop, rho, depth)
        fr = self._closure(e.replace, rho, depth)
        return self.traverse(v, e.direction, fp, fs, fr, depth)

    def _stop_args(self, c: Closure, nid: int, coeff: Fraction) -> list:
        if c.name is None:
            return []
        f = self.funcs[c.name]
        remaining = len(f.params) - len(c.partial)
        if remaining == 1:
            return [VPoly.neuron(nid)]
        return [VPoly.neuron(nid), coeff]

    def traverse(self, v: VPoly, direction: str, fp: Closure, fs: Closure,
                 fr: Closure, depth: int = 0) -> VPoly:
        stats = TraverseStats()
        self.last_traverse = stats

        def stopped(nid: int) -> bool:
            coeff = v.coeffs.get(nid, Fraction(0))
            r = self.apply(fs, self._stop_args(fs, nid, coeff), depth)
            if not isinstance(r, bool):
                raise RuntimeFault("stopping function returned a non-boolean")
            return r

        active = {nid for nid in v.coeffs if not stopped(nid)}
        # Termination rank: neurons as bits in topological order, toward the
        # traversal direction; each step clears a bit and may set lower ones.
        order = self.dnn.topo if direction == "backward" else list(reversed(self.dnn.topo))
        rank_of = {nid: i for i, nid in enumerate(order)}
        stats.initial_rank = sum(1 << rank_of[nid] for nid in active)

        while active:
            stats.iterations += 1
            prios = {}
            for nid in sorted(active):
                p = self.apply(fp, [VPoly.neuron(nid)], depth)
                if not is_number(p):
                    raise RuntimeFault("priority function returned a non-number")
                prios[nid] = p
            best = max(prios.values())
            chosen = sorted(nid for nid, p in prios.items() if p == best)
            replaced = VPoly(0)
            rest = VPoly(v.const, {k: c for k, c in v.coeffs.items() if k not in chosen})
            for nid in chosen:
                coeff = v.coeffs.get(nid, Fraction(0))
                if coeff == 0:
                    continue
                out = self.apply(fr, [VPoly.neuron(nid), coeff], depth)
                if not (is_number(out) or isinstance(out, VPoly)):
                    raise RuntimeFault("replacement function must return a polyhedral value")
                replaced = replaced.add(to_poly(out))
            v = rest.add(replaced)
            neighbours = set()
            for nid in chosen:
                if direction == "backward":
                    neighbours.update(self.dnn.neurons[nid].prev)
                else:
                    neighbours.update(self.dnn.succs[nid])
            candidates = (active - set(chosen)) | neighbours
            active = {nid for nid in candidates if not stopped(nid)}
        return v

    # -------------------------------------------------------------- solver
    def _solver(self, e: Solver, rho, depth):
        obj = self.eval(e.objective, rho, depth)
        ct = self.eval(e.constraint, rho, depth)
        if isinstance(ct, list):
            ct = CtAnd(tuple(ct))
        if not is_ct(ct):
            raise RuntimeFault("solver constraint did not evaluate to a constraint")
        if self.solver_fn is None:
            raise RuntimeFault("no solver backend configured for solver()")
        return self.solver_fn(e.op, obj, ct)

    # ---------------------------------------------------------------- call
    def _call(self, e: FuncCall, rho, depth):
        if e.name in ("Sigmoid", "Tanh"):
            x = self.eval(e.args[0], rho, depth)
            if not is_number(x):
                raise RuntimeFault(f"{e.name} over a non-number")
            kind = DnnOp.SIGMOID if e.name == "Sigmoid" else DnnOp.TANH
            return op_value(kind, [Fraction(x)], [], Fraction(0))
        if e.name not in self.funcs:
            raise RuntimeFault(f"unknown function {e.name!r}")
        f = self.funcs[e.name]
        if len(e.args) != len(f.params):
            raise RuntimeFault(f"{e.name!r} arity mismatch")
        args = [self.eval(a, rho, depth) for a in e.args]
        return self.apply(Closure(e.name), args, depth)

    # ----------------------------------------------------------- transformer
    def eval_ret(self, ret: TransformerRet, rho: dict, depth: int = 0) -> list:
        if isinstance(ret, RetTuple):
            return [self.eval(x, rho, depth) for x in ret.exprs]
        assert isinstance(ret, RetIf)
        g = self.eval(ret.cond, rho, depth)
        if not isinstance(g, bool):
            raise RuntimeFault("transformer guard did not evaluate to a boolean")
        return self.eval_ret(ret.then if g else ret.other, rho, depth)

    def prev_binding(self, neuron: Neuron, direction: str) -> tuple[dict, DnnOp]:
        if direction == "forward":
            ids = list(neuron.prev)
            op = neuron.kind
        else:
            ids = list(self.dnn.succs[neuron.nid])
            kinds = {self.dnn.neurons[s].kind for s in ids}
            if len(kinds) != 1:
                raise RuntimeFault(
                    f"neuron {neuron.nid}: backward flow needs uniform successor kinds")
            op = kinds.pop()
        shape = op.prev_shape
        rho: dict = {"curr": VPoly.neuron(neuron.nid)}
        if shape.value == "single":
            if len(ids) != 1:
                raise RuntimeFault(f"neuron {neuron.nid}: expected exactly one neighbour")
            rho["prev"] = VPoly.neuron(ids[0])
        elif shape.value == "list":
            rho["prev"] = [VPoly.neuron(i) for i in ids]
        else:
            if len(ids) != 2:
                raise RuntimeFault(f"neuron {neuron.nid}: expected two neighbours")
            rho["prev0"] = rho["prev_0"] = VPoly.neuron(ids[0])
            rho["prev1"] = rho["prev_1"] = VPoly.neuron(ids[1])
        return rho, op

    # ---------------------------------------------------------------- flow
    def run_flow(self) -> ConcreteDNN:
        """Run every Flow statement, in order, mutating the network's shapes."""
        for fl in self.program.flows:
            self._run_one_flow(fl)
        return self.dnn

    def _rule_for(self, tdef: TransformerDef, op: DnnOp, reverse: bool):
        want = op
        if reverse:
            from .syntax import dnn_op_from_name
            rev = dnn_op_from_name("rev_" + op.value)
            if rev is None:
                raise RuntimeFault(f"no reversed form of {op.value}")
            want = rev
        for o, ret in tdef.rules:
            if o is want:
                return ret
        raise RuntimeFault(
            f"transformer {tdef.name!r} has no rule for operation {want.value}")

    def _run_one_flow(self, fl: Flow) -> None:
        tdef = self.transformers.get(fl.transformer)
        if tdef is None:
            raise RuntimeFault(f"unknown transformer {fl.transformer!r}")
        fp = self._closure(fl.priority, {}, 0)
        fs = self._closure(fl.stop, {}, 0)

        def stopped(nid: int) -> bool:
            r = self.apply(fs, [VPoly.neuron(nid)] if fs.name else [])
            if not isinstance(r, bool):
                raise RuntimeFault("flow stopping function returned a non-boolean")
            return r

        frontier = set(self.dnn.inputs() if fl.direction == "forward"
                       else self.dnn.outputs())
        active = {nid for nid in frontier if not stopped(nid)}
        while active:
            prios = {}
            for nid in sorted(active):
                p = self.apply(fp, [VPoly.neuron(nid)])
                if not is_number(p):
                    raise RuntimeFault("flow priority returned a non-number")
                prios[nid] = p
            best = max(prios.values())
            chosen = sorted(nid for nid, p in prios.items() if p == best)
            for nid in chosen:
                self._apply_transformer(tdef, nid, fl.direction)
            neighbours = set()
            for nid in chosen:
                if fl.direction == "forward":
                    neighbours.update(self.dnn.succs[nid])
                else:
                    neighbours.update(self.dnn.neurons[nid].prev)
            active = {n for n in ((active - set(chosen)) | neighbours)
                      if not stopped(n)}

    def _apply_transformer(self, tdef: TransformerDef, nid: int, direction: str) -> None:
        neuron = self.dnn.neurons[nid]
        if direction == "forward" and neuron.kind is DnnOp.INPUT:
            return  # input shapes are supplied, not computed
        if direction == "backward" and not self.dnn.succs[nid]:
            return  # terminal neurons keep their forward shapes
        rho, op = self.prev_binding(neuron, direction)
        ret = self._rule_for(tdef, op, reverse=(direction == "backward"))
        values = self.eval_ret(ret, rho)
        members = [name for _, name in self.program.shape.members]
        self.dnn.set_shape(nid, dict(zip(members, values)))
