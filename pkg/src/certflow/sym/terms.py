"""Hash-consed symbolic terms and structured symbolic values.

Terms form an immutable DAG: structurally equal terms share identity
within one arena, so equality checks and memoized folds are O(1) per
node.  On top of terms sit the shaped symbolic values the semantics
works with: linear forms over neuron/noise atoms (the "expanded" shape),
conditionals, neuron references, and (conditional) lists.

Atom roles record what a variable stands for in a counterexample model:
``const`` for learned constants and coefficients, ``neuron`` for neuron
valuations, ``eps`` for noise symbols, ``expr`` for still-opaque
polyhedral/symbolic members.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Union

from ..errors import SortError

REAL, BOOL = "Real", "Bool"

_FOLDABLE = {"+", "-", "*", "/", "neg", "<=", "<", ">=", ">", "=", "and", "or",
             "not", "ite"}


class Term:
    __slots__ = ("tid", "kind", "op", "args", "payload", "sort")

    def __init__(self, tid, kind, op, args, payload, sort):
        self.tid = tid
        self.kind = kind  # atom | const | app | exists
        self.op = op
        self.args = args
        self.payload = payload
        self.sort = sort

    @property
    def name(self) -> str:
        assert self.kind == "atom"
        return self.payload[0]

    @property
    def role(self) -> str:
        assert self.kind == "atom"
        return self.payload[1]

    @property
    def value(self):
        assert self.kind == "const"
        return self.payload

    def __repr__(self):
        return to_sexpr(self)


class Arena:
    """Term interner with a deterministic fresh-name counter."""

    def __init__(self):
        self._intern: dict = {}
        self._next = 0
        self._fresh = 0
        self.atoms: list[Term] = []

    def _new(self, kind, op, args, payload, sort) -> Term:
        t = Term(self._next, kind, op, args, payload, sort)
        self._next += 1
        return t

    def atom(self, name: str, role: str, sort: str = REAL) -> Term:
        t = self._new("atom", None, (), (name, role), sort)
        self.atoms.append(t)
        return t

    def fresh(self, prefix: str, role: str, sort: str = REAL) -> Term:
        self._fresh += 1
        return self.atom(f"{prefix}_{self._fresh}", role, sort)

    def const(self, value) -> Term:
        if isinstance(value, bool):
            key = ("const", value, BOOL)
            sort = BOOL
        else:
            value = Fraction(value)
            key = ("const", value, REAL)
            sort = REAL
        t = self._intern.get(key)
        if t is None:
            t = self._intern[key] = self._new("const", None, (), value, sort)
        return t

    def app(self, op: str, *args: Term) -> Term:
        folded = self._fold(op, args)
        if folded is not None:
            return folded
        sort = self._sort_of(op, args)
        key = ("app", op, tuple(a.tid for a in args))
        t = self._intern.get(key)
        if t is None:
            t = self._intern[key] = self._new("app", op, tuple(args), None, sort)
        return t

    def exists(self, bound: tuple[Term, ...], body: Term) -> Term:
        if body.sort != BOOL:
            raise SortError("exists body must be Bool")
        if not bound:
            return body
        key = ("exists", tuple(b.tid for b in bound), body.tid)
        t = self._intern.get(key)
        if t is None:
            t = self._intern[key] = self._new("exists", None, (body,), tuple(bound), BOOL)
        return t

    # -- small conveniences ------------------------------------------------
    def add(self, a, b):
        return self.app("+", a, b)

    def mul(self, a, b):
        return self.app("*", a, b)

    def ite(self, c, a, b):
        return self.app("ite", c, a, b)

    def conj(self, terms: Iterable[Term]) -> Term:
        out = None
        for t in terms:
            out = t if out is None else self.app("and", out, t)
        return out if out is not None else self.const(True)

    def implies(self, a: Term, b: Term) -> Term:
        return self.app("or", self.app("not", a), b)

    # ----------------------------------------------------------------------
    def _sort_of(self, op, args) -> str:
        if op in ("+", "-", "*", "/", "neg"):
            for a in args:
                if a.sort != REAL:
                    raise SortError(f"{op} over {a.sort}")
            return REAL
        if op in ("<=", "<", ">=", ">"):
            for a in args:
                if a.sort != REAL:
                    raise SortError(f"{op} over {a.sort}")
            return BOOL
        if op == "=":
            if args[0].sort != args[1].sort:
                raise SortError("= over mixed sorts")
            return BOOL
        if op == "diamond":
            return BOOL
        if op in ("and", "or", "not", "=>"):
            for a in args:
                if a.sort != BOOL:
                    raise SortError(f"{op} over {a.sort}")
            return BOOL
        if op == "ite":
            if args[0].sort != BOOL or args[1].sort != args[2].sort:
                raise SortError("ill-sorted ite")
            return args[1].sort
        raise SortError(f"unknown operator {op}")

    def _fold(self, op, args) -> Optional[Term]:
        # literal-only folding plus a few arithmetic identities that keep
        # emitted scripts readable; no deeper simplification by design
        if op == "ite" and args[0].kind == "const":
            return args[1] if args[0].value else args[2]
        if op == "+" and args[1].kind == "const" and args[1].value == 0:
            return args[0]
        if op == "+" and args[0].kind == "const" and args[0].value == 0:
            return args[1]
        if op == "*" and args[0].kind == "const" and args[0].value == 1:
            return args[1]
        if op == "*" and args[1].kind == "const" and args[1].value == 1:
            return args[0]
        if op == "*" and any(a.kind == "const" and a.value == 0 for a in args):
            return self.const(0)
        if op == "-" and args[1].kind == "const" and args[1].value == 0:
            return args[0]
        if op not in _FOLDABLE:
            return None
        if not all(a.kind == "const" for a in args):
            return None
        vals = [a.value for a in args]
        try:
            out = _apply_op(op, vals)
        except ZeroDivisionError:
            return None
        return self.const(out)


def _apply_op(op, vals):
    if op == "+":
        return vals[0] + vals[1]
    if op == "-":
        return vals[0] - vals[1]
    if op == "*":
        return vals[0] * vals[1]
    if op == "/":
        return Fraction(vals[0]) / Fraction(vals[1])
    if op == "neg":
        return -vals[0]
    if op == "<=":
        return vals[0] <= vals[1]
    if op == "<":
        return vals[0] < vals[1]
    if op == ">=":
        return vals[0] >= vals[1]
    if op == ">":
        return vals[0] > vals[1]
    if op == "=":
        return vals[0] == vals[1]
    if op == "and":
        return vals[0] and vals[1]
    if op == "or":
        return vals[0] or vals[1]
    if op == "not":
        return not vals[0]
    if op == "ite":
        return vals[1] if vals[0] else vals[2]
    raise AssertionError(op)


# -------------------------------------------------------------- term queries


def atoms_of(t: Term, out: Optional[set] = None) -> set[Term]:
    stack, seen = [t], set()
    found: set[Term] = set() if out is None else out
    while stack:
        u = stack.pop()
        if u.tid in seen:
            continue
        seen.add(u.tid)
        if u.kind == "atom":
            found.add(u)
        stack.extend(u.args)
    return found


def has_role(t: Term, role: str) -> bool:
    return any(a.role == role for a in atoms_of(t))


def affine_decompose(arena: Arena, t: Term, vars_: set[int]):
    """Write `t` as const + sum(coeff_i * atom_i) over the given atom tids,
    with var-free coefficient terms.  Returns (const, {tid: (atom, coeff)})
    or None when `t` is not affine in those atoms (e.g. they appear inside a
    guard or a product of two of them)."""
    zero = arena.const(0)

    def rec(u: Term):
        if u.kind == "atom" and u.tid in vars_:
            return zero, {u.tid: (u, arena.const(1))}
        if not any(a.tid in vars_ for a in atoms_of(u)):
            return u, {}
        if u.kind == "app" and u.op == "+":
            c1, m1 = rec(u.args[0])
            c2, m2 = rec(u.args[1])
            return arena.add(c1, c2), _merge(arena, m1, m2, 1)
        if u.kind == "app" and u.op == "-":
            c1, m1 = rec(u.args[0])
            c2, m2 = rec(u.args[1])
            return arena.app("-", c1, c2), _merge(arena, m1, m2, -1)
        if u.kind == "app" and u.op == "neg":
            c1, m1 = rec(u.args[0])
            return arena.app("neg", c1), {k: (a, arena.app("neg", w))
                                          for k, (a, w) in m1.items()}
        if u.kind == "app" and u.op == "*":
            lhs, rhs = u.args
            lf = not any(a.tid in vars_ for a in atoms_of(lhs))
            rf = not any(a.tid in vars_ for a in atoms_of(rhs))
            if lf and not rf:
                c, m = rec(rhs)
                return arena.mul(lhs, c), {k: (a, arena.mul(lhs, w))
                                           for k, (a, w) in m.items()}
            if rf and not lf:
                c, m = rec(lhs)
                return arena.mul(c, rhs), {k: (a, arena.mul(w, rhs))
                                           for k, (a, w) in m.items()}
            return None
        if u.kind == "app" and u.op == "/":
            num, den = u.args
            if any(a.tid in vars_ for a in atoms_of(den)):
                return None
            c, m = rec(num)
            return arena.app("/", c, den), {k: (a, arena.app("/", w, den))
                                            for k, (a, w) in m.items()}
        if u.kind == "app" and u.op == "ite":
            g, x, y = u.args
            if any(a.tid in vars_ for a in atoms_of(g)):
                return None
            rx, ry = rec(x), rec(y)
            if rx is None or ry is None:
                return None
            cx, mx = rx
            cy, my = ry
            keys = set(mx) | set(my)
            merged = {}
            for k in keys:
                ax = mx.get(k)
                ay = my.get(k)
                atom = (ax or ay)[0]
                wx = ax[1] if ax else zero
                wy = ay[1] if ay else zero
                merged[k] = (atom, arena.ite(g, wx, wy))
            return arena.ite(g, cx, cy), merged
        return None

    return rec(t)


def _merge(arena: Arena, m1, m2, sign: int):
    out = dict(m1)
    for k, (a, w) in m2.items():
        w2 = w if sign > 0 else arena.app("neg", w)
        if k in out:
            out[k] = (a, arena.add(out[k][1], w2))
        else:
            out[k] = (a, w2)
    return out


# ------------------------------------------------------------- ground eval


def ground_eval(t: Term, env: dict[int, object]):
    """Evaluate a term at a point; `env` maps atom tids to Fractions/bools.
    `diamond` constraints are decided exactly via affine decomposition over
    unassigned noise atoms."""
    memo: dict[int, object] = {}

    def rec(u: Term):
        if u.tid in memo:
            return memo[u.tid]
        if u.kind == "atom":
            if u.tid not in env:
                raise KeyError(f"no value for atom {u.name}")
            out = env[u.tid]
        elif u.kind == "const":
            out = u.value
        elif u.kind == "exists":
            raise SortError("ground evaluation of a quantified term is not supported")
        elif u.op == "diamond":
            out = _eval_diamond(u, env)
        elif u.op == "=>":
            out = (not rec(u.args[0])) or rec(u.args[1])
        elif u.op == "and":
            out = rec(u.args[0]) and rec(u.args[1])
        elif u.op == "or":
            out = rec(u.args[0]) or rec(u.args[1])
        elif u.op == "ite":
            out = rec(u.args[1]) if rec(u.args[0]) else rec(u.args[2])
        else:
            out = _apply_op(u.op, [rec(a) for a in u.args])
        memo[u.tid] = out
        return out

    return rec(t)


def _affine_eval(u: Term, env) -> tuple[Fraction, dict[int, Fraction]]:
    """Evaluate a term to const + sum(coeff * eps) over UNASSIGNED noise
    atoms; everything else must be ground."""
    if u.kind == "atom":
        if u.tid in env:
            return Fraction(env[u.tid]), {}
        if u.role == "eps":
            return Fraction(0), {u.tid: Fraction(1)}
        raise KeyError(f"no value for atom {u.name}")
    if u.kind == "const":
        return Fraction(u.value), {}
    if u.op == "+":
        c1, m1 = _affine_eval(u.args[0], env)
        c2, m2 = _affine_eval(u.args[1], env)
        out = dict(m1)
        for k, v in m2.items():
            out[k] = out.get(k, Fraction(0)) + v
        return c1 + c2, out
    if u.op == "-":
        c1, m1 = _affine_eval(u.args[0], env)
        c2, m2 = _affine_eval(u.args[1], env)
        out = dict(m1)
        for k, v in m2.items():
            out[k] = out.get(k, Fraction(0)) - v
        return c1 - c2, out
    if u.op == "neg":
        c1, m1 = _affine_eval(u.args[0], env)
        return -c1, {k: -v for k, v in m1.items()}
    if u.op == "*":
        c1, m1 = _affine_eval(u.args[0], env)
        c2, m2 = _affine_eval(u.args[1], env)
        if m1 and m2:
            raise SortError("non-affine noise dependence in '<>'")
        if m1:
            return c1 * c2, {k: v * c2 for k, v in m1.items()}
        return c1 * c2, {k: v * c1 for k, v in m2.items()}
    if u.op == "/":
        c1, m1 = _affine_eval(u.args[0], env)
        c2, m2 = _affine_eval(u.args[1], env)
        if m2:
            raise SortError("division by a noise-dependent term")
        return c1 / c2, {k: v / c2 for k, v in m1.items()}
    if u.op == "ite":
        g = ground_eval(u.args[0], env)
        return _affine_eval(u.args[1] if g else u.args[2], env)
    raise SortError(f"cannot '<>'-decompose operator {u.op}")


def _eval_diamond(u: Term, env) -> bool:
    # e1 <> e2 holds iff some assignment of e2's noise symbols in [-1, 1]
    # makes the sides equal; the symbolic side is affine in them.
    lhs, rhs = u.args
    lv = Fraction(ground_eval(lhs, env))
    const, coeffs = _affine_eval(rhs, env)
    radius = sum(abs(c) for c in coeffs.values())
    return abs(lv - const) <= radius


# -------------------------------------------------------------------- sexpr


def to_sexpr(t: Term) -> str:
    if t.kind == "atom":
        return t.name
    if t.kind == "const":
        v = t.value
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)
    if t.kind == "exists":
        names = " ".join(b.name for b in t.payload)
        return f"(exists ({names}) {to_sexpr(t.args[0])})"
    return "(" + t.op + "".join(" " + to_sexpr(a) for a in t.args) + ")"


# ----------------------------------------------------------- symbolic values


@dataclass(frozen=True)
class SNeuron:
    """Reference to a registered symbolic neuron."""
    name: str
    atom: Term


@dataclass(frozen=True)
class SLin:
    """const + sum(coeff_i * atom_i): the expanded polyhedral/symbolic form.
    Items are (coefficient term, carrier atom), sorted by atom id."""
    const: Term
    items: tuple  # tuple[(Term, Term)]

    def carriers(self):
        return [a for _, a in self.items]


@dataclass(frozen=True)
class SIte:
    cond: Term
    then: object
    other: object


@dataclass(frozen=True)
class SList:
    items: tuple


@dataclass(frozen=True)
class SCons:
    head: object
    tail: object


@dataclass(frozen=True)
class SListIte:
    cond: Term
    then: object
    other: object


SymVal = Union[Term, SNeuron, SLin, SIte, SList, SCons, SListIte]


def is_listy(v) -> bool:
    return isinstance(v, (SList, SCons, SListIte))


def lin_of(arena: Arena, v: SymVal) -> SLin:
    if isinstance(v, SLin):
        return v
    if isinstance(v, SNeuron):
        return SLin(arena.const(0), ((arena.const(1), v.atom),))
    if isinstance(v, Term):
        return SLin(v, ())
    raise SortError(f"not a linear-form value: {v!r}")


def val_term(arena: Arena, v: SymVal) -> Term:
    """Collapse a non-list symbolic value to a plain term."""
    if isinstance(v, Term):
        return v
    if isinstance(v, SNeuron):
        return v.atom
    if isinstance(v, SLin):
        out = v.const
        for coeff, atom in v.items:
            out = arena.add(out, arena.mul(coeff, atom))
        return out
    if isinstance(v, SIte):
        return arena.ite(v.cond, val_term(arena, v.then), val_term(arena, v.other))
    raise SortError(f"cannot collapse {v!r} to a term")


def lin_add(arena: Arena, a: SLin, b: SLin) -> SLin:
    coeffs: dict[int, list] = {}
    for coeff, atom in a.items + b.items:
        if atom.tid in coeffs:
            coeffs[atom.tid][0] = arena.add(coeffs[atom.tid][0], coeff)
        else:
            coeffs[atom.tid] = [coeff, atom]
    items = tuple(sorted(((c, at) for c, at in coeffs.values()),
                         key=lambda p: p[1].tid))
    return SLin(arena.add(a.const, b.const), items)


def lin_scale(arena: Arena, a: SLin, k: Term) -> SLin:
    return SLin(arena.mul(k, a.const),
                tuple((arena.mul(k, c), at) for c, at in a.items))


def lin_neg(arena: Arena, a: SLin) -> SLin:
    return SLin(arena.app("neg", a.const),
                tuple((arena.app("neg", c), at) for c, at in a.items))


def lin_div(arena: Arena, a: SLin, k: Term) -> SLin:
    return SLin(arena.app("/", a.const, k),
                tuple((arena.app("/", c, k), at) for c, at in a.items))


def map_branches(arena: Arena, v: SymVal, fn):
    """Apply fn at every non-conditional leaf of an SIte tree."""
    if isinstance(v, SIte):
        return SIte(v.cond, map_branches(arena, v.then, fn),
                    map_branches(arena, v.other, fn))
    return fn(v)


def dump_symval(v: SymVal) -> str:
    if isinstance(v, Term):
        return to_sexpr(v)
    if isinstance(v, SNeuron):
        return f"(neuron {v.name})"
    if isinstance(v, SLin):
        parts = [to_sexpr(v.const)] + [
            f"(* {to_sexpr(c)} {to_sexpr(a)})" for c, a in v.items]
        return "(lin " + " ".join(parts) + ")"
    if isinstance(v, SIte):
        return f"(if {to_sexpr(v.cond)} {dump_symval(v.then)} {dump_symval(v.other)})"
    if isinstance(v, SList):
        return "(list" + "".join(" " + dump_symval(x) for x in v.items) + ")"
    if isinstance(v, SCons):
        return f"(cons {dump_symval(v.head)} {dump_symval(v.tail)})"
    if isinstance(v, SListIte):
        return f"(if {to_sexpr(v.cond)} {dump_symval(v.then)} {dump_symval(v.other)})"
    return repr(v)
