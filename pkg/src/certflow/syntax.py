"""AST for the certifier DSL.

Nodes are plain dataclasses carrying a source span.  Shape/metadata access
is disambiguated at parse time (the shape declaration is syntactically
first, so the member list is known).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

from .lattice import CfType


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    line: int
    col: int

    def cover(self, other: "Span") -> "Span":
        if other.start < self.start:
            return Span(other.start, max(self.end, other.end), other.line, other.col)
        return Span(self.start, max(self.end, other.end), self.line, self.col)


DUMMY = Span(0, 0, 1, 1)


class Node:
    span: Span


# ---------------------------------------------------------------- expressions


@dataclass
class Expr(Node):
    span: Span = field(repr=False, compare=False)


@dataclass
class Const(Expr):
    value: Union[int, Fraction, bool]


@dataclass
class Var(Expr):
    name: str


@dataclass
class SymFresh(Expr):
    """The `sym` / `eps` construct: a fresh noise symbol in [-1, 1]."""


@dataclass
class Unary(Expr):
    op: str  # "neg" | "not"
    e: Expr


@dataclass
class Binary(Expr):
    op: str  # + - * / and or >= <= == <> < >
    e1: Expr
    e2: Expr


@dataclass
class Ternary(Expr):
    cond: Expr
    then: Expr
    other: Expr


@dataclass
class MetadataAccess(Expr):
    e: Expr
    name: str  # weight | bias | layer | equations


@dataclass
class ShapeAccess(Expr):
    e: Expr
    name: str


@dataclass
class ListLit(Expr):
    items: list[Expr]


@dataclass
class ListOp(Expr):
    kind: str  # max | min | max2 | min2 | sum | avg | len | dot | concat | compare
    args: list[Expr]
    func: Optional[Expr] = None  # for compare


@dataclass
class Map(Expr):
    e: Expr
    func: Expr


@dataclass
class MapList(Expr):
    e: Expr
    func: Expr


@dataclass
class FuncCall(Expr):
    name: str
    args: list[Expr]


@dataclass
class Traverse(Expr):
    e: Expr  # syntactically a variable
    direction: str  # forward | backward
    priority: Expr
    stop: Expr
    replace: Expr
    invariant: Expr


@dataclass
class Solver(Expr):
    op: str  # minimize | maximize
    objective: Expr
    constraint: Expr


# ----------------------------------------------------------------- statements


@dataclass
class ShapeDecl(Node):
    span: Span = field(repr=False, compare=False)
    members: list[tuple[CfType, str]]
    prop: Expr


@dataclass
class FuncDef(Node):
    span: Span = field(repr=False, compare=False)
    name: str
    params: list[tuple[CfType, str]]
    body: Expr


@dataclass
class RetTuple(Node):
    span: Span = field(repr=False, compare=False)
    exprs: list[Expr]


@dataclass
class RetIf(Node):
    span: Span = field(repr=False, compare=False)
    cond: Expr
    then: "TransformerRet"
    other: "TransformerRet"


TransformerRet = Union[RetTuple, RetIf]


@dataclass
class TransformerDef(Node):
    span: Span = field(repr=False, compare=False)
    name: str
    rules: list[tuple["DnnOp", TransformerRet]]


@dataclass
class Flow(Node):
    span: Span = field(repr=False, compare=False)
    direction: str
    priority: Expr
    stop: Expr
    transformer: str


Stmt = Union[FuncDef, TransformerDef, Flow]


@dataclass
class Program(Node):
    span: Span = field(repr=False, compare=False)
    shape: ShapeDecl
    stmts: list[Stmt]

    @property
    def funcs(self) -> list[FuncDef]:
        return [s for s in self.stmts if isinstance(s, FuncDef)]

    @property
    def transformers(self) -> list[TransformerDef]:
        return [s for s in self.stmts if isinstance(s, TransformerDef)]

    @property
    def flows(self) -> list[Flow]:
        return [s for s in self.stmts if isinstance(s, Flow)]


# ------------------------------------------------------------- DNN operations


class PrevShape(enum.Enum):
    SINGLE = "single"  # prev : Neuron
    LIST = "list"  # prev : List(Neuron)
    PAIR = "pair"  # prev0, prev1 : Neuron


class DnnOp(enum.Enum):
    AFFINE = "Affine"
    DOTPRODUCT = "DotProduct"
    RELU = "ReLU"
    RELU6 = "ReLU6"
    ABS = "Abs"
    HARDSIGMOID = "HardSigmoid"
    HARDTANH = "HardTanh"
    HARDSWISH = "HardSwish"
    SIGMOID = "Sigmoid"
    TANH = "Tanh"
    MAXPOOL = "MaxPool"
    MINPOOL = "MinPool"
    AVGPOOL = "AvgPool"
    MAX = "Max"
    MIN = "Min"
    ADD = "Add"
    MULT = "Mult"
    NEURON_ADD = "Neuron_add"
    REV_AFFINE = "rev_Affine"
    REV_RELU = "rev_ReLU"
    REV_MAXPOOL = "rev_MaxPool"
    REV_ABS = "rev_Abs"
    REV_HARDSWISH = "rev_HardSwish"
    INPUT = "Input"

    @property
    def prev_shape(self) -> PrevShape:
        return _PREV_SHAPE[self]

    @property
    def is_reversed(self) -> bool:
        return self.value.startswith("rev_")


_PREV_SHAPE = {
    DnnOp.AFFINE: PrevShape.LIST,
    DnnOp.DOTPRODUCT: PrevShape.LIST,
    DnnOp.MAXPOOL: PrevShape.LIST,
    DnnOp.MINPOOL: PrevShape.LIST,
    DnnOp.AVGPOOL: PrevShape.LIST,
    DnnOp.REV_AFFINE: PrevShape.LIST,
    DnnOp.REV_MAXPOOL: PrevShape.LIST,
    DnnOp.RELU: PrevShape.SINGLE,
    DnnOp.RELU6: PrevShape.SINGLE,
    DnnOp.ABS: PrevShape.SINGLE,
    DnnOp.HARDSIGMOID: PrevShape.SINGLE,
    DnnOp.HARDTANH: PrevShape.SINGLE,
    DnnOp.HARDSWISH: PrevShape.SINGLE,
    DnnOp.SIGMOID: PrevShape.SINGLE,
    DnnOp.TANH: PrevShape.SINGLE,
    DnnOp.REV_RELU: PrevShape.SINGLE,
    DnnOp.REV_ABS: PrevShape.SINGLE,
    DnnOp.REV_HARDSWISH: PrevShape.SINGLE,
    DnnOp.MAX: PrevShape.PAIR,
    DnnOp.MIN: PrevShape.PAIR,
    DnnOp.ADD: PrevShape.PAIR,
    DnnOp.MULT: PrevShape.PAIR,
    DnnOp.NEURON_ADD: PrevShape.PAIR,
    DnnOp.INPUT: PrevShape.SINGLE,
}

# Corpus listings spell operation names loosely (Relu, Maxpool, rev_Relu...).
_OP_LOOKUP = {op.value.lower().replace("_", ""): op for op in DnnOp}


def dnn_op_from_name(name: str) -> Optional[DnnOp]:
    return _OP_LOOKUP.get(name.lower().replace("_", ""))


METADATA_NAMES = ("weight", "bias", "layer", "equations")
METADATA_ALIASES = {"w": "weight", "b": "bias"}
RESERVED_BINDERS = frozenset(
    {"curr", "prev", "prev0", "prev1", "prev_0", "prev_1", "sym", "eps"}
    | set(METADATA_NAMES)
)


def walk(node) -> "list[Node]":
    """All AST nodes under `node` (inclusive), preorder."""
    out: list[Node] = []

    def rec(n):
        if isinstance(n, (Expr, ShapeDecl, FuncDef, RetTuple, RetIf, TransformerDef, Flow, Program)):
            out.append(n)
        for f in getattr(n, "__dataclass_fields__", {}):
            v = getattr(n, f)
            if isinstance(v, Node):
                rec(v)
            elif isinstance(v, list):
                for item in v:
                    if isinstance(item, Node):
                        rec(item)
                    elif isinstance(item, tuple):
                        for sub in item:
                            if isinstance(sub, Node):
                                rec(sub)

    rec(node)
    return out
