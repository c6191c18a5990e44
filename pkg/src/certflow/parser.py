"""Recursive-descent parser for `.cf` programs.

The shape declaration is syntactically first, so member names are known
when expressions are parsed and bracket access can be resolved to shape
vs. metadata on the spot.  Transformer return clauses need bounded
backtracking (a '(' can open a tuple, a parenthesized guard, or a
parenthesized expression).
"""
from __future__ import annotations

from fractions import Fraction
from typing import Optional

from .errors import ParseError
from .lattice import CfType, ListType, type_from_name
from .lexer import Token, tokenize
from .syntax import (
    Binary, Const, DnnOp, Expr, Flow, FuncCall, FuncDef, ListLit, ListOp, Map,
    MapList, MetadataAccess, METADATA_ALIASES, METADATA_NAMES, Program,
    RESERVED_BINDERS, RetIf, RetTuple, ShapeAccess, ShapeDecl, Span, SymFresh,
    Ternary, TransformerDef, TransformerRet, Traverse, Unary, Var,
    dnn_op_from_name,
)

_CMP_OPS = {"<=", ">=", "==", "<>", "<", ">"}
_SOLVER_NAMES = {"solver", "lp", "milp", "smt"}
_LIST_FUNCS = {"sum", "avg", "len"}


class _Parser:
    def __init__(self, toks: list[Token], members: tuple[str, ...] = ()):
        self.toks = toks
        self.pos = 0
        self.members: set[str] = set(members)

    # -- token plumbing -------------------------------------------------
    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def at(self, text: str) -> bool:
        return self.peek().text == text and self.peek().kind != "EOF"

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            return self.next()
        return None

    def expect(self, text: str, what: str = "") -> Token:
        t = self.peek()
        if t.text != text or t.kind == "EOF":
            raise ParseError(
                f"found {t.text!r}{' while parsing ' + what if what else ''}",
                t.span, expected={text})
        return self.next()

    def ident(self, what: str = "identifier") -> Token:
        t = self.peek()
        if t.kind != "IDENT":
            raise ParseError(f"expected {what}, found {t.text!r}", t.span,
                             expected={"<identifier>"})
        return self.next()

    # -- types -----------------------------------------------------------
    def parse_type(self) -> CfType:
        t = self.ident("type name")
        base = type_from_name(t.text)
        if base is None:
            raise ParseError(f"unknown type {t.text!r}", t.span,
                             expected={"Int", "Real", "Bool", "Neuron", "Sym",
                                       "PolyExp", "SymExp", "Ct"})
        while self.peek().text == "List":
            self.next()
            base = ListType(base)
        return base

    # -- expressions -----------------------------------------------------
    def parse_expr(self) -> Expr:
        return self._ternary()

    def _ternary(self) -> Expr:
        cond = self._or()
        if self.accept("?"):
            then = self._ternary()
            self.expect(":", "ternary expression")
            other = self._ternary()
            return Ternary(cond.span.cover(other.span), cond, then, other)
        return cond

    def _or(self) -> Expr:
        e = self._and()
        while self.at("or"):
            self.next()
            rhs = self._and()
            e = Binary(e.span.cover(rhs.span), "or", e, rhs)
        return e

    def _and(self) -> Expr:
        e = self._cmp()
        while self.at("and"):
            self.next()
            rhs = self._cmp()
            e = Binary(e.span.cover(rhs.span), "and", e, rhs)
        return e

    def _cmp(self) -> Expr:
        e = self._add()
        t = self.peek()
        if t.text in _CMP_OPS or t.text == "In":
            self.next()
            op = "<>" if t.text == "In" else t.text
            rhs = self._add()
            return Binary(e.span.cover(rhs.span), op, e, rhs)
        return e

    def _add(self) -> Expr:
        e = self._mul()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self._mul()
            e = Binary(e.span.cover(rhs.span), op, e, rhs)
        return e

    def _mul(self) -> Expr:
        e = self._unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            rhs = self._unary()
            e = Binary(e.span.cover(rhs.span), op, e, rhs)
        return e

    def _unary(self) -> Expr:
        t = self.peek()
        if t.text == "-":
            self.next()
            e = self._unary()
            return Unary(t.span.cover(e.span), "neg", e)
        if t.text == "not":
            self.next()
            e = self._unary()
            return Unary(t.span.cover(e.span), "not", e)
        return self._postfix()

    def _postfix(self) -> Expr:
        e = self._primary()
        while True:
            if self.at("["):
                lb = self.next()
                name = self.ident("shape member or metadata name")
                rb = self.expect("]", "member access")
                e = self._make_access(e, name, lb.span.cover(rb.span))
            elif self.at(".") and self.peek(1).kind == "IDENT":
                self.next()
                e = self._method(e)
            else:
                return e

    def _make_access(self, e: Expr, name: Token, span: Span) -> Expr:
        full = e.span.cover(span)
        if name.text in self.members:
            return ShapeAccess(full, e, name.text)
        if name.text in METADATA_NAMES:
            return MetadataAccess(full, e, name.text)
        alias = METADATA_ALIASES.get(name.text)
        if alias is not None:
            return MetadataAccess(full, e, alias)
        raise ParseError(f"unknown shape member or metadata {name.text!r}",
                         name.span, expected=set(METADATA_NAMES) | self.members)

    def _method(self, e: Expr) -> Expr:
        name = self.ident("method name")
        if name.text == "map":
            self.expect("(", "map")
            f = self._func_expr()
            rp = self.expect(")", "map")
            return Map(e.span.cover(rp.span), e, f)
        if name.text in ("mapList", "map_list"):
            self.expect("(", "mapList")
            f = self._func_expr()
            rp = self.expect(")", "mapList")
            return MapList(e.span.cover(rp.span), e, f)
        if name.text in ("dot", "concat"):
            self.expect("(", name.text)
            arg = self.parse_expr()
            rp = self.expect(")", name.text)
            return ListOp(e.span.cover(rp.span), name.text, [e, arg])
        if name.text == "traverse":
            self.expect("(", "traverse")
            d = self.ident("traversal direction")
            if d.text not in ("forward", "backward"):
                raise ParseError("traverse direction must be forward or backward",
                                 d.span, expected={"forward", "backward"})
            self.expect(",", "traverse")
            fp = self._func_expr()
            self.expect(",", "traverse")
            fs = self._func_expr()
            self.expect(",", "traverse")
            fr = self._func_expr()
            self.expect(")", "traverse")
            self.expect("{", "traverse invariant")
            inv = self.parse_expr()
            rb = self.expect("}", "traverse invariant")
            if not isinstance(e, Var):
                raise ParseError("traverse applies to a variable", e.span)
            return Traverse(e.span.cover(rb.span), e, d.text, fp, fs, fr, inv)
        raise ParseError(f"unknown method {name.text!r}", name.span,
                         expected={"map", "mapList", "dot", "concat", "traverse"})

    def _func_expr(self) -> Expr:
        """A function-position argument: name, -name, partial call, bool, or
        juxtaposed partial application (`create_c curr`)."""
        t = self.peek()
        if t.text in ("true", "false"):
            self.next()
            return Const(t.span, t.text == "true")
        if t.text == "-":
            self.next()
            inner = self._func_expr()
            return Unary(t.span.cover(inner.span), "neg", inner)
        name = self.ident("function name")
        if self.at("("):
            self.next()
            args = self._expr_list(")")
            rp = self.expect(")", "function arguments")
            return FuncCall(name.span.cover(rp.span), name.text, args)
        if self.peek().kind in ("IDENT", "NUMBER") and self.peek().text not in (
                "and", "or", "not", "In"):
            arg = self._postfix()
            return FuncCall(name.span.cover(arg.span), name.text, [arg])
        return Var(name.span, name.text)

    def _expr_list(self, closer: str) -> list[Expr]:
        args: list[Expr] = []
        if not self.at(closer):
            args.append(self.parse_expr())
            while self.accept(","):
                args.append(self.parse_expr())
        return args

    def _primary(self) -> Expr:
        t = self.peek()
        if t.kind == "NUMBER":
            self.next()
            if "." in t.text:
                return Const(t.span, Fraction(t.text))
            return Const(t.span, int(t.text))
        if t.text in ("true", "false"):
            self.next()
            return Const(t.span, t.text == "true")
        if t.text in ("sym", "eps"):
            self.next()
            return SymFresh(t.span)
        if t.text == "(":
            self.next()
            e = self.parse_expr()
            rp = self.expect(")", "parenthesized expression")
            e.span = t.span.cover(rp.span)
            return e
        if t.text == "[":
            self.next()
            items = self._expr_list("]")
            rb = self.expect("]", "list literal")
            return ListLit(t.span.cover(rb.span), items)
        if t.kind == "IDENT":
            return self._ident_primary()
        raise ParseError(f"unexpected token {t.text!r}", t.span,
                         expected={"<expression>"})

    def _ident_primary(self) -> Expr:
        t = self.next()
        name = t.text
        if name in ("max", "min") and self.at("("):
            self.next()
            args = self._expr_list(")")
            rp = self.expect(")", name)
            if len(args) == 1:
                return ListOp(t.span.cover(rp.span), name, args)
            if len(args) == 2:
                return ListOp(t.span.cover(rp.span), name + "2", args)
            raise ParseError(f"{name} takes one list or two scalars", t.span)
        if name in _LIST_FUNCS and self.at("("):
            self.next()
            arg = self.parse_expr()
            rp = self.expect(")", name)
            return ListOp(t.span.cover(rp.span), name, [arg])
        if name in ("compare", "argmax") and self.at("("):
            self.next()
            subject = self.parse_expr()
            self.expect(",", name)
            f = self._func_expr()
            rp = self.expect(")", name)
            return ListOp(t.span.cover(rp.span), "compare", [subject], func=f)
        if name in _SOLVER_NAMES and self.at("("):
            self.next()
            d = self.ident("solver objective direction")
            if d.text not in ("minimize", "maximize"):
                raise ParseError("solver direction must be minimize or maximize",
                                 d.span, expected={"minimize", "maximize"})
            self.expect(",", name)
            obj = self.parse_expr()
            self.expect(",", name)
            ct = self.parse_expr()
            rp = self.expect(")", name)
            from .syntax import Solver
            return Solver(t.span.cover(rp.span), d.text, obj, ct)
        if self.at("("):
            self.next()
            args = self._expr_list(")")
            rp = self.expect(")", "call arguments")
            return FuncCall(t.span.cover(rp.span), name, args)
        return Var(t.span, name)

    # -- statements -------------------------------------------------------
    def parse_program(self) -> Program:
        first = self.peek()
        shape = self._shape_decl()
        self.members = {name for _, name in shape.members}
        stmts = []
        while self.peek().kind != "EOF":
            stmts.append(self._stmt())
        end = shape.span if not stmts else stmts[-1].span
        return Program(first.span.cover(end), shape, stmts)

    def _shape_decl(self) -> ShapeDecl:
        t = self.peek()
        if t.text not in ("Def", "def"):
            raise ParseError("program must start with the shape declaration",
                             t.span, expected={"Def"})
        self.next()
        kw = self.ident("'shape'")
        if kw.text not in ("shape", "Shape"):
            raise ParseError("expected 'shape' after 'Def'", kw.span,
                             expected={"shape"})
        asw = self.ident("'as'")
        if asw.text != "as":
            raise ParseError("expected 'as'", asw.span, expected={"as"})
        self.expect("(", "shape member list")
        members: list[tuple[CfType, str]] = []
        while True:
            ty = self.parse_type()
            name = self.ident("shape member name")
            self._check_binder(name)
            members.append((ty, name.text))
            if not self.accept(","):
                break
        self.expect(")", "shape member list")
        seen = set()
        for _, m in members:
            if m in seen:
                raise ParseError(f"duplicate shape member {m!r}", t.span)
            seen.add(m)
        self.members = {m for _, m in members}
        self.expect("{", "shape property")
        prop = self.parse_expr()
        rb = self.expect("}", "shape property")
        self.expect(";", "shape declaration")
        return ShapeDecl(t.span.cover(rb.span), members, prop)

    def _check_binder(self, tok: Token) -> None:
        if tok.text in RESERVED_BINDERS:
            raise ParseError(f"{tok.text!r} is reserved", tok.span)

    def _stmt(self):
        t = self.peek()
        if t.text in ("Func", "func"):
            return self._func_def()
        if t.text in ("Transformer", "transformer"):
            return self._transformer_def()
        if t.text in ("Flow", "flow"):
            return self._flow()
        raise ParseError(f"unexpected token {t.text!r} at statement start",
                         t.span, expected={"Func", "Transformer", "Flow"})

    def _func_def(self) -> FuncDef:
        t = self.next()
        name = self.ident("function name")
        self._check_binder(name)
        self.expect("(", "function parameters")
        params: list[tuple[CfType, str]] = []
        if not self.at(")"):
            while True:
                ty = self.parse_type()
                p = self.ident("parameter name")
                self._check_binder(p)
                params.append((ty, p.text))
                if not self.accept(","):
                    break
        self.expect(")", "function parameters")
        self.expect("=", "function body")
        body = self.parse_expr()
        semi = self.expect(";", "function definition")
        return FuncDef(t.span.cover(semi.span), name.text, params, body)

    def _transformer_def(self) -> TransformerDef:
        t = self.next()
        name = self.ident("transformer name")
        self._check_binder(name)
        self.expect("{", "transformer body")
        rules: list[tuple[DnnOp, TransformerRet]] = []
        while not self.at("}"):
            opname = self.ident("DNN operation name")
            op = dnn_op_from_name(opname.text)
            if op is None:
                raise ParseError(f"unknown DNN operation {opname.text!r}",
                                 opname.span)
            self.expect("->", "transformer rule")
            ret = self._transformer_ret()
            self.expect(";", "transformer rule")
            rules.append((op, ret))
        rb = self.expect("}", "transformer body")
        self.accept(";")
        if not rules:
            raise ParseError("transformer defines no operations", t.span)
        return TransformerDef(t.span.cover(rb.span), name.text, rules)

    def _transformer_ret(self) -> TransformerRet:
        # A '(' may open a tuple, a wrapped guard, or the guard condition.
        if self.at("("):
            save = self.pos
            tup = self._try_tuple()
            if tup is not None and not self.at("?"):
                return tup
            self.pos = save
            save = self.pos
            self.next()  # '('
            try:
                inner = self._transformer_ret()
                if self.at(")"):
                    self.next()
                    if not self.at("?"):
                        return inner
            except ParseError:
                pass
            self.pos = save
        cond = self._or()  # stop before '?': the ternary here belongs to the ret
        q = self.expect("?", "guarded transformer return")
        then = self._transformer_ret()
        self.expect(":", "guarded transformer return")
        other = self._transformer_ret()
        return RetIf(cond.span.cover(_ret_span(other)), cond, then, other)

    def _try_tuple(self) -> Optional[RetTuple]:
        lp = self.peek()
        try:
            self.next()
            exprs = [self.parse_expr()]
            while self.accept(","):
                exprs.append(self.parse_expr())
            rp = self.expect(")")
            if len(exprs) < 2:
                return None
            return RetTuple(lp.span.cover(rp.span), exprs)
        except ParseError:
            return None

    def _flow(self) -> Flow:
        t = self.next()
        self.expect("(", "Flow")
        d = self.ident("flow direction")
        if d.text not in ("forward", "backward"):
            raise ParseError("flow direction must be forward or backward",
                             d.span, expected={"forward", "backward"})
        self.expect(",", "Flow")
        fp = self._func_expr()
        self.expect(",", "Flow")
        fs = self._func_expr()
        self.expect(",", "Flow")
        name = self.ident("transformer name")
        self.expect(")", "Flow")
        semi = self.expect(";", "Flow")
        return Flow(t.span.cover(semi.span), d.text, fp, fs, name.text)


def _ret_span(r: TransformerRet) -> Span:
    return r.span


def parse_program(src: str) -> Program:
    """Parse a full `.cf` program. Raises ParseError with a source span."""
    return _Parser(tokenize(src)).parse_program()


def parse_expr(src: str, members: tuple[str, ...] = ()) -> Expr:
    """Parse a standalone expression (testing helper). `members` supplies
    shape-member names for bracket-access resolution."""
    p = _Parser(tokenize(src), members)
    e = p.parse_expr()
    t = p.peek()
    if t.kind != "EOF":
        raise ParseError(f"trailing input {t.text!r}", t.span)
    return e
