"""The certifier-DSL type lattice.

Scalar types sit in a fixed finite lattice; list types are covariant
wrappers over it.  `join` computes least upper bounds, `is_subtype` the
lattice order.  Everything here is total and pure.
"""
from __future__ import annotations

from dataclasses import dataclass


class CfType:
    """Base class for DSL types. Scalar types are singletons."""

    name: str

    def __repr__(self) -> str:
        return self.name


class _Scalar(CfType):
    def __init__(self, name: str):
        self.name = name


BOT = _Scalar("Bot")
BOOL = _Scalar("Bool")
SYM = _Scalar("Sym")
INT = _Scalar("Int")
NEURON = _Scalar("Neuron")
REAL = _Scalar("Real")
CT = _Scalar("Ct")
SYMEXP = _Scalar("SymExp")
POLYEXP = _Scalar("PolyExp")
TOP = _Scalar("Top")

SCALARS = (BOT, BOOL, SYM, INT, NEURON, REAL, CT, SYMEXP, POLYEXP, TOP)

# Immediate supertype edges of the subtyping lattice.
_PARENTS: dict[CfType, tuple[CfType, ...]] = {
    BOT: (BOOL, SYM, INT, NEURON),
    BOOL: (CT,),
    SYM: (SYMEXP,),
    INT: (REAL,),
    NEURON: (POLYEXP,),
    REAL: (SYMEXP, POLYEXP),
    CT: (TOP,),
    SYMEXP: (TOP,),
    POLYEXP: (TOP,),
    TOP: (),
}


def _ancestors(t: CfType) -> frozenset[CfType]:
    seen: set[CfType] = set()
    stack = [t]
    while stack:
        u = stack.pop()
        if u in seen:
            continue
        seen.add(u)
        stack.extend(_PARENTS[u])
    return frozenset(seen)


_UP: dict[CfType, frozenset[CfType]] = {t: _ancestors(t) for t in SCALARS}


@dataclass(frozen=True)
class ListType(CfType):
    elem: CfType

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"List({self.elem.name})"

    def __repr__(self) -> str:
        return self.name


def is_list(t: CfType) -> bool:
    return isinstance(t, ListType)


def is_subtype(t1: CfType, t2: CfType) -> bool:
    """t1 <= t2 in the lattice; lists are covariant."""
    if t1 is BOT or t2 is TOP:
        return True
    if isinstance(t1, ListType) and isinstance(t2, ListType):
        return is_subtype(t1.elem, t2.elem)
    if isinstance(t1, ListType) or isinstance(t2, ListType):
        return False
    return t2 in _UP[t1]


def is_strict_subtype(t1: CfType, t2: CfType) -> bool:
    return t1 != t2 and is_subtype(t1, t2)


def join(t1: CfType, t2: CfType) -> CfType:
    """Least upper bound. Lists join pointwise; list vs scalar is Top."""
    if t1 == t2:
        return t1
    if isinstance(t1, ListType) and isinstance(t2, ListType):
        return ListType(join(t1.elem, t2.elem))
    if isinstance(t1, ListType) or isinstance(t2, ListType):
        if t1 is BOT:
            return t2
        if t2 is BOT:
            return t1
        return TOP
    common = _UP[t1] & _UP[t2]
    # The shared-ancestor set always has a unique minimum in this lattice.
    best = None
    for c in common:
        if best is None or is_subtype(c, best):
            best = c
    assert best is not None
    return best


def meet_like_bounds(t: CfType) -> bool:
    """True iff Bot < t < Top strictly (the shape-member admissibility test)."""
    return t is not BOT and t is not TOP and not (
        isinstance(t, ListType) and not meet_like_bounds(t.elem)
    )


_BY_NAME = {
    "Int": INT,
    "Real": REAL,
    "Float": REAL,  # corpus alias
    "Bool": BOOL,
    "Neuron": NEURON,
    "Sym": SYM,
    "PolyExp": POLYEXP,
    "SymExp": SYMEXP,
    "ZonoExp": SYMEXP,  # corpus alias
    "Ct": CT,
}


def type_from_name(name: str) -> CfType | None:
    return _BY_NAME.get(name)
