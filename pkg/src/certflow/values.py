"""Concrete runtime values and their algebra.

A value is a constant (bool / int / exact rational), an affine expression
over neurons (VPoly), an affine expression over noise symbols (VSym), a
constraint (Ct* nodes), or a list.  Affine forms are kept normalized: no
zero coefficients, and ids render in ascending order.  All arithmetic is
exact; nothing here touches floats.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

from .errors import DivisionByZero, RuntimeFault
from .lattice import (
    BOOL, BOT, CT, CfType, INT, ListType, NEURON, POLYEXP, REAL, SYM, SYMEXP,
    join,
)

Number = Union[int, Fraction]
Scalar = Union[bool, int, Fraction]


def _fr(x: Number) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


class _Affine:
    """Shared implementation of affine forms over integer-identified symbols."""

    __slots__ = ("const", "coeffs")

    def __init__(self, const: Number = 0, coeffs: dict[int, Fraction] | None = None):
        self.const = _fr(const)
        self.coeffs = {k: v for k, v in (coeffs or {}).items() if v != 0}

    def _make(self, const, coeffs):
        return type(self)(const, coeffs)

    @property
    def is_const(self) -> bool:
        return not self.coeffs

    def singleton(self) -> int | None:
        """The symbol id if this is exactly one symbol with coefficient 1."""
        if self.const == 0 and len(self.coeffs) == 1:
            (k, c), = self.coeffs.items()
            if c == 1:
                return k
        return None

    def add(self, other: "_Affine") -> "_Affine":
        coeffs = dict(self.coeffs)
        for k, v in other.coeffs.items():
            coeffs[k] = coeffs.get(k, Fraction(0)) + v
        return self._make(self.const + other.const, coeffs)

    def neg(self) -> "_Affine":
        return self._make(-self.const, {k: -v for k, v in self.coeffs.items()})

    def scale(self, c: Number) -> "_Affine":
        c = _fr(c)
        return self._make(self.const * c, {k: v * c for k, v in self.coeffs.items()})

    def evaluate(self, env: dict[int, Fraction]) -> Fraction:
        total = self.const
        for k, v in self.coeffs.items():
            total += v * env[k]
        return total

    def __eq__(self, other):
        return type(self) is type(other) and self.const == other.const \
            and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((type(self).__name__, self.const, tuple(sorted(self.coeffs.items()))))

    def _render(self, prefix: str) -> str:
        parts = []
        if self.const != 0 or not self.coeffs:
            parts.append(str(self.const))
        for k in sorted(self.coeffs):
            c = self.coeffs[k]
            parts.append(f"{c}*{prefix}{k}")
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self):
        return self._render(self.PREFIX)


class VPoly(_Affine):
    """c0 + sum(ci * neuron_i)."""

    PREFIX = "n"

    @staticmethod
    def neuron(nid: int) -> "VPoly":
        return VPoly(0, {nid: Fraction(1)})


class VSym(_Affine):
    """c0 + sum(ci * eps_i)."""

    PREFIX = "eps"

    @staticmethod
    def sym(eid: int) -> "VSym":
        return VSym(0, {eid: Fraction(1)})

    def contains(self, value: Fraction) -> bool:
        """True iff some assignment of all eps in [-1, 1] makes this equal value."""
        radius = sum(abs(c) for c in self.coeffs.values())
        return abs(value - self.const) <= radius


@dataclass(frozen=True)
class CtCmp:
    op: str  # <= >= == < >
    lhs: object
    rhs: object


@dataclass(frozen=True)
class CtIn:
    lhs: object  # polyhedral side
    rhs: object  # symbolic side


@dataclass(frozen=True)
class CtAnd:
    items: tuple


@dataclass(frozen=True)
class CtOr:
    items: tuple


CtVal = Union[CtCmp, CtIn, CtAnd, CtOr, bool]
Value = Union[Scalar, VPoly, VSym, CtCmp, CtIn, CtAnd, CtOr, list]


def is_number(v) -> bool:
    return isinstance(v, (int, Fraction)) and not isinstance(v, bool)


def is_ct(v) -> bool:
    return isinstance(v, (CtCmp, CtIn, CtAnd, CtOr, bool))


def to_poly(v) -> VPoly:
    if isinstance(v, VPoly):
        return v
    if is_number(v):
        return VPoly(v)
    raise RuntimeFault(f"expected a polyhedral value, got {v!r}")


def to_sym(v) -> VSym:
    if isinstance(v, VSym):
        return v
    if is_number(v):
        return VSym(v)
    raise RuntimeFault(f"expected a symbolic value, got {v!r}")


def neuron_id(v) -> int:
    if isinstance(v, VPoly):
        nid = v.singleton()
        if nid is not None:
            return nid
    raise RuntimeFault(f"expected a neuron, got {v!r}")


# ------------------------------------------------------------------ arithmetic


def v_add(a, b):
    if is_number(a) and is_number(b):
        return a + b
    if isinstance(a, VSym) or isinstance(b, VSym):
        return to_sym(a).add(to_sym(b))
    return to_poly(a).add(to_poly(b))


def v_sub(a, b):
    return v_add(a, v_neg(b))


def v_neg(a):
    if is_number(a):
        return -a
    if isinstance(a, (VPoly, VSym)):
        return a.neg()
    raise RuntimeFault(f"cannot negate {a!r}")


def v_mul(a, b):
    if is_number(a) and is_number(b):
        return a * b
    if is_number(a) and isinstance(b, (VPoly, VSym)):
        return b.scale(a)
    if is_number(b) and isinstance(a, (VPoly, VSym)):
        return a.scale(b)
    raise RuntimeFault(f"cannot multiply {a!r} and {b!r} (nonlinear product)")


def v_div(a, b):
    if not is_number(b):
        raise RuntimeFault(f"cannot divide by {b!r}")
    if b == 0:
        raise DivisionByZero("division by zero")
    if is_number(a):
        return _fr(a) / _fr(b)
    if isinstance(a, (VPoly, VSym)):
        return a.scale(Fraction(1) / _fr(b))
    raise RuntimeFault(f"cannot divide {a!r}")


_FLIP = {"<=": ">=", ">=": "<=", "<": ">", ">": "<", "==": "=="}


def v_compare(op: str, a, b):
    if is_number(a) and is_number(b):
        return {"<=": a <= b, ">=": a >= b, "<": a < b, ">": a > b, "==": a == b}[op]
    if op == "<>":
        return CtIn(a, b)
    return CtCmp(op, a, b)


def v_bool(op: str, a, b):
    if isinstance(a, bool) and isinstance(b, bool):
        return (a and b) if op == "and" else (a or b)
    if is_ct(a) and is_ct(b):
        return CtAnd((a, b)) if op == "and" else CtOr((a, b))
    raise RuntimeFault(f"cannot apply {op} to {a!r} and {b!r}")


# ------------------------------------------------------------------- typing


def value_type(v) -> CfType:
    """Dynamic value typing per the value grammar."""
    if isinstance(v, bool):
        return BOOL
    if isinstance(v, int):
        return INT
    if isinstance(v, Fraction):
        return REAL
    if isinstance(v, VPoly):
        if v.singleton() is not None:
            return NEURON
        if v.is_const:
            return REAL
        return POLYEXP
    if isinstance(v, VSym):
        if v.singleton() is not None:
            return SYM
        if v.is_const:
            return REAL
        return SYMEXP
    if is_ct(v):
        return CT
    if isinstance(v, list):
        t = BOT
        for x in v:
            t = join(t, value_type(x))
        return ListType(t)
    raise RuntimeFault(f"not a value: {v!r}")


# ------------------------------------------------------------- point checks


def eval_at(v, neurons: dict[int, Fraction], eps: dict[int, Fraction] | None = None):
    """Evaluate a value at a concrete point (neuron and noise assignments)."""
    eps = eps or {}
    if isinstance(v, bool) or is_number(v):
        return v
    if isinstance(v, VPoly):
        return v.evaluate(neurons)
    if isinstance(v, VSym):
        return v.evaluate(eps)
    if isinstance(v, list):
        return [eval_at(x, neurons, eps) for x in v]
    raise RuntimeFault(f"cannot evaluate {v!r} at a point")


def ct_holds(ct, neurons: dict[int, Fraction], eps: dict[int, Fraction] | None = None) -> bool:
    """Decide a constraint value at a concrete point.  `<>` constraints are
    decided exactly: the symbolic side is affine in its noise symbols, so
    membership is an interval check."""
    eps = eps or {}
    if isinstance(ct, bool):
        return ct
    if isinstance(ct, CtAnd):
        return all(ct_holds(x, neurons, eps) for x in ct.items)
    if isinstance(ct, CtOr):
        return any(ct_holds(x, neurons, eps) for x in ct.items)
    if isinstance(ct, CtCmp):
        a = eval_at(ct.lhs, neurons, eps)
        b = eval_at(ct.rhs, neurons, eps)
        return {"<=": a <= b, ">=": a >= b, "<": a < b, ">": a > b, "==": a == b}[ct.op]
    if isinstance(ct, CtIn):
        lhs = eval_at(ct.lhs, neurons, eps)
        rhs = ct.rhs
        if is_number(rhs):
            return lhs == rhs
        if isinstance(rhs, VSym):
            return rhs.contains(_fr(lhs))
        raise RuntimeFault(f"bad <> operand {rhs!r}")
    raise RuntimeFault(f"not a constraint: {ct!r}")


def ct_conjuncts(ct) -> list:
    """Flatten nested conjunctions (for per-conjunct violation reports)."""
    if isinstance(ct, CtAnd):
        out = []
        for x in ct.items:
            out.extend(ct_conjuncts(x))
        return out
    if isinstance(ct, list):
        out = []
        for x in ct:
            out.extend(ct_conjuncts(x))
        return out
    return [ct]


def render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if is_number(v):
        return str(v)
    if isinstance(v, (VPoly, VSym)):
        return repr(v)
    if isinstance(v, CtCmp):
        return f"({render_value(v.lhs)} {v.op} {render_value(v.rhs)})"
    if isinstance(v, CtIn):
        return f"({render_value(v.lhs)} <> {render_value(v.rhs)})"
    if isinstance(v, CtAnd):
        return "(" + " and ".join(render_value(x) for x in v.items) + ")"
    if isinstance(v, CtOr):
        return "(" + " or ".join(render_value(x) for x in v.items) + ")"
    if isinstance(v, list):
        return "[" + ", ".join(render_value(x) for x in v) + "]"
    return repr(v)
