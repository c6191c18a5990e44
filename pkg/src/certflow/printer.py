"""Canonical text form for parsed programs.

Style: every compound operand is parenthesized, so reading the output
never requires the precedence table.  `parse(pretty_print(p))` yields an
AST equal to `p` up to spans, and printing is idempotent.
"""
from __future__ import annotations

from fractions import Fraction

from .lattice import CfType, ListType
from .syntax import (
    Binary, Const, Expr, Flow, FuncCall, FuncDef, ListLit, ListOp, Map,
    MapList, MetadataAccess, Program, RetIf, RetTuple, ShapeAccess, ShapeDecl,
    Solver, SymFresh, Ternary, TransformerDef, TransformerRet, Traverse,
    Unary, Var,
)


def _type_name(t: CfType) -> str:
    if isinstance(t, ListType):
        return f"{_type_name(t.elem)} List"
    return t.name


def _const(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return f"{v.numerator}.0"
        return _frac(v)
    return str(v)


def _frac(v: Fraction) -> str:
    # Exact decimal when the denominator is a 2*5 power, else p/q form.
    num, den = v.numerator, v.denominator
    d = den
    while d % 2 == 0:
        d //= 2
    while d % 5 == 0:
        d //= 5
    if d == 1:
        from decimal import Decimal
        return str(Decimal(num) / Decimal(den))
    return f"({num} / {den})"


def _atomic(e: Expr) -> bool:
    return isinstance(e, (Const, Var, SymFresh, MetadataAccess, ShapeAccess,
                          ListLit, ListOp, FuncCall, Map, MapList, Traverse, Solver))


def _wrap(e: Expr) -> str:
    s = print_expr(e)
    return s if _atomic(e) else f"({s})"


def print_expr(e: Expr) -> str:
    if isinstance(e, Const):
        return _const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, SymFresh):
        return "sym"
    if isinstance(e, Unary):
        op = "-" if e.op == "neg" else "not "
        return f"{op}{_wrap(e.e)}"
    if isinstance(e, Binary):
        return f"{_wrap(e.e1)} {e.op} {_wrap(e.e2)}"
    if isinstance(e, Ternary):
        return f"{_wrap(e.cond)} ? {_wrap(e.then)} : {_wrap(e.other)}"
    if isinstance(e, MetadataAccess):
        return f"{_wrap(e.e)}[{e.name}]"
    if isinstance(e, ShapeAccess):
        return f"{_wrap(e.e)}[{e.name}]"
    if isinstance(e, ListLit):
        return "[" + ", ".join(print_expr(x) for x in e.items) + "]"
    if isinstance(e, ListOp):
        if e.kind in ("max", "min", "sum", "avg", "len"):
            return f"{e.kind}({print_expr(e.args[0])})"
        if e.kind in ("max2", "min2"):
            return f"{e.kind[:3]}({print_expr(e.args[0])}, {print_expr(e.args[1])})"
        if e.kind in ("dot", "concat"):
            return f"{_wrap(e.args[0])}.{e.kind}({print_expr(e.args[1])})"
        if e.kind == "compare":
            return f"compare({print_expr(e.args[0])}, {print_expr(e.func)})"
    if isinstance(e, Map):
        return f"{_wrap(e.e)}.map({print_expr(e.func)})"
    if isinstance(e, MapList):
        return f"{_wrap(e.e)}.mapList({print_expr(e.func)})"
    if isinstance(e, FuncCall):
        return f"{e.name}(" + ", ".join(print_expr(a) for a in e.args) + ")"
    if isinstance(e, Traverse):
        head = (f"{print_expr(e.e)}.traverse({e.direction}, {print_expr(e.priority)}, "
                f"{print_expr(e.stop)}, {print_expr(e.replace)})")
        return head + "{" + print_expr(e.invariant) + "}"
    if isinstance(e, Solver):
        return f"solver({e.op}, {print_expr(e.objective)}, {print_expr(e.constraint)})"
    raise TypeError(f"unknown expression node {type(e).__name__}")


def _print_ret(r: TransformerRet, indent: str) -> str:
    if isinstance(r, RetTuple):
        return "(" + ", ".join(print_expr(x) for x in r.exprs) + ")"
    assert isinstance(r, RetIf)
    deeper = indent + "    "
    return (f"{_wrap(r.cond)} ?\n{deeper}{_print_ret(r.then, deeper)} :\n"
            f"{deeper}{_print_ret(r.other, deeper)}")


def pretty_print(p: Program) -> str:
    out: list[str] = []
    members = ", ".join(f"{_type_name(t)} {x}" for t, x in p.shape.members)
    out.append(f"Def shape as ({members}){{{print_expr(p.shape.prop)}}};")
    out.append("")
    for s in p.stmts:
        if isinstance(s, FuncDef):
            params = ", ".join(f"{_type_name(t)} {x}" for t, x in s.params)
            out.append(f"Func {s.name}({params}) = {print_expr(s.body)};")
        elif isinstance(s, TransformerDef):
            out.append(f"Transformer {s.name}{{")
            for op, ret in s.rules:
                out.append(f"    {op.value} -> {_print_ret(ret, '    ')};")
            out.append("}")
        elif isinstance(s, Flow):
            out.append(f"Flow({s.direction}, {print_expr(s.priority)}, "
                       f"{print_expr(s.stop)}, {s.transformer});")
    return "\n".join(out) + "\n"
