"""Static typing for certifier programs.

Implements the subtype-lattice judgments for expressions, function and
transformer definitions, shape declarations, and flow statements.  The
checker returns the typing context: ``Gamma`` maps names to value or
function types, ``tau_s`` maps shape members to their declared types.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import TypeError_
from .lattice import (
    BOOL, BOT, CT, INT, ListType, NEURON, POLYEXP, REAL, SYM, SYMEXP, TOP,
    CfType, is_list, is_strict_subtype, is_subtype, join,
)
from .syntax import (
    Binary, Const, DnnOp, Expr, Flow, FuncCall, FuncDef, ListLit, ListOp, Map,
    MapList, MetadataAccess, PrevShape, Program, RetIf, RetTuple, ShapeAccess,
    ShapeDecl, Solver, SymFresh, Ternary, TransformerDef, TransformerRet,
    Traverse, Unary, Var,
)

METADATA_TYPES: dict[str, CfType] = {
    "weight": ListType(REAL),
    "bias": REAL,
    "layer": INT,
    "equations": ListType(CT),
}


@dataclass(frozen=True)
class FuncType:
    params: tuple[CfType, ...]
    ret: CfType

    def __repr__(self):
        ps = " x ".join(p.name for p in self.params)
        return f"({ps}) -> {self.ret.name}"


@dataclass(frozen=True)
class TransformerType:
    slots: tuple[CfType, ...]


@dataclass
class Context:
    """The typing context (Gamma, tau_s) plus per-node type annotations."""

    gamma: dict[str, object] = field(default_factory=dict)
    tau: dict[str, CfType] = field(default_factory=dict)
    expr_types: dict[int, CfType] = field(default_factory=dict)

    def copy_scope(self) -> "Context":
        child = Context(dict(self.gamma), self.tau, self.expr_types)
        return child


def _scalarish(t: CfType) -> bool:
    return is_subtype(t, REAL)


def _promote_linear(t: CfType) -> CfType:
    """Result type of +/- and scaling: neurons and noise symbols produce the
    enclosing expression type rather than themselves."""
    if t is NEURON:
        return POLYEXP
    if t is SYM:
        return SYMEXP
    return t


class Checker:
    def __init__(self, ctx: Context):
        self.ctx = ctx

    def fail(self, rule: str, msg: str, span, types=()):
        raise TypeError_(rule, msg, span, types)

    def check(self, e: Expr, env: dict[str, CfType]) -> CfType:
        t = self._check(e, env)
        self.ctx.expr_types[id(e)] = t
        return t

    # ------------------------------------------------------------------
    def _check(self, e: Expr, env: dict[str, CfType]) -> CfType:
        if isinstance(e, Const):
            if isinstance(e.value, bool):
                return BOOL
            if isinstance(e.value, int):
                return INT
            return REAL
        if isinstance(e, Var):
            if e.name not in env:
                self.fail("T-var", f"unbound identifier {e.name!r}", e.span)
            t = env[e.name]
            if isinstance(t, (FuncType, TransformerType)):
                self.fail("T-var", f"{e.name!r} names a function, not a value", e.span)
            return t
        if isinstance(e, SymFresh):
            return SYM
        if isinstance(e, Unary):
            return self._check_unary(e, env)
        if isinstance(e, Binary):
            return self._check_binary(e, env)
        if isinstance(e, Ternary):
            tc = self.check(e.cond, env)
            if tc is not BOOL:
                self.fail("T-ternary", f"guard must be Bool, got {tc}", e.cond.span, [tc])
            t1 = self.check(e.then, env)
            t2 = self.check(e.other, env)
            t = join(t1, t2)
            if t is TOP:
                self.fail("T-ternary", f"incompatible branches {t1} and {t2}", e.span, [t1, t2])
            return t
        if isinstance(e, MetadataAccess):
            return self._check_metadata(e, env)
        if isinstance(e, ShapeAccess):
            return self._check_shape_access(e, env)
        if isinstance(e, ListLit):
            ts = [self.check(x, env) for x in e.items]
            t = BOT
            for x in ts:
                t = join(t, x)
            if t is TOP:
                self.fail("T-list", "list elements have no common type", e.span, ts)
            return ListType(t)
        if isinstance(e, ListOp):
            return self._check_listop(e, env)
        if isinstance(e, Map):
            return self._check_map(e, env)
        if isinstance(e, MapList):
            return self._check_maplist(e, env)
        if isinstance(e, FuncCall):
            return self._check_call(e, env)
        if isinstance(e, Traverse):
            return self._check_traverse(e, env)
        if isinstance(e, Solver):
            return self._check_solver(e, env)
        raise AssertionError(f"unhandled node {type(e).__name__}")

    def _check_unary(self, e: Unary, env) -> CfType:
        t = self.check(e.e, env)
        if e.op == "not":
            if t is not BOOL:
                self.fail("T-unary", f"'not' needs Bool, got {t}", e.span, [t])
            return BOOL
        # negation over anything numeric, polyhedral or symbolic
        if not (is_subtype(t, POLYEXP) or is_subtype(t, SYMEXP)):
            self.fail("T-unary", f"cannot negate {t}", e.span, [t])
        return _promote_linear(t)

    def _check_binary(self, e: Binary, env) -> CfType:
        t1 = self.check(e.e1, env)
        t2 = self.check(e.e2, env)
        op = e.op
        if op in ("and", "or"):
            if t1 in (BOOL, CT) and t2 in (BOOL, CT):
                return join(t1, t2)
            self.fail("T-binary-bool", f"{op} needs Bool/Ct operands, got {t1}, {t2}",
                      e.span, [t1, t2])
        if op == "<>":
            if is_subtype(t1, POLYEXP) and is_subtype(t2, SYMEXP):
                return CT
            self.fail("T-comparison-3", f"'<>' relates PolyExp to SymExp, got {t1}, {t2}",
                      e.span, [t1, t2])
        if op in ("<=", ">=", "==", "<", ">"):
            if _scalarish(t1) and _scalarish(t2):
                return BOOL
            t = join(t1, t2)
            if t in (POLYEXP, SYMEXP):
                return CT
            self.fail("T-comparison-2", f"cannot compare {t1} with {t2}", e.span, [t1, t2])
        if op in ("+", "-"):
            t = join(t1, t2)
            if is_subtype(t, POLYEXP) or is_subtype(t, SYMEXP):
                return _promote_linear(t)
            self.fail("T-binary-arith-1", f"cannot apply {op} to {t1} and {t2}",
                      e.span, [t1, t2])
        if op in ("*", "/"):
            return self._check_mult(e, t1, t2)
        raise AssertionError(f"unknown binary op {op}")

    def _check_mult(self, e: Binary, t1: CfType, t2: CfType) -> CfType:
        op = e.op
        if _scalarish(t1) and _scalarish(t2):
            return join(t1, t2)
        if op == "*" and _scalarish(t1) and (is_subtype(t2, POLYEXP) or is_subtype(t2, SYMEXP)):
            return _promote_linear(t2)
        if _scalarish(t2) and (is_subtype(t1, POLYEXP) or is_subtype(t1, SYMEXP)):
            # covers PolyExp * Real and PolyExp / Real
            return _promote_linear(t1)
        # symbolic-coefficient polyhedral terms: SymExp * Neuron-ish
        if op == "*" and is_subtype(t1, SYMEXP) and t2 in (NEURON, POLYEXP):
            return POLYEXP
        if op == "*" and t1 in (NEURON, POLYEXP) and is_subtype(t2, SYMEXP):
            return POLYEXP
        rule = "T-binary-mult" if op == "*" else "T-binary-arith-2"
        self.fail(rule, f"cannot apply {op} to {t1} and {t2} "
                        "(products of two neuron-bearing expressions are rejected)",
                  e.span, [t1, t2])

    def _check_metadata(self, e: MetadataAccess, env) -> CfType:
        t = self.check(e.e, env)
        mt = METADATA_TYPES[e.name]
        if t is NEURON:
            return mt
        if isinstance(t, ListType) and t.elem is NEURON:
            return ListType(mt)
        self.fail("T-metadata-b", f"metadata access on {t}", e.span, [t])

    def _check_shape_access(self, e: ShapeAccess, env) -> CfType:
        t = self.check(e.e, env)
        mt = self.ctx.tau.get(e.name)
        if mt is None:
            self.fail("T-shape", f"unknown shape member {e.name!r}", e.span)
        if t is NEURON:
            return mt
        if isinstance(t, ListType) and t.elem is NEURON:
            return ListType(mt)
        self.fail("T-shape", f"shape access on {t}", e.span, [t])

    def _check_listop(self, e: ListOp, env) -> CfType:
        kind = e.kind
        if kind in ("max", "min"):
            t = self.check(e.args[0], env)
            if not is_list(t) or not is_subtype(t.elem, REAL):
                self.fail("T-min-max", f"{kind} needs a list of numbers, got {t}",
                          e.span, [t])
            return t.elem
        if kind in ("max2", "min2"):
            t1 = self.check(e.args[0], env)
            t2 = self.check(e.args[1], env)
            t = join(t1, t2)
            if is_subtype(t, POLYEXP) or is_subtype(t, SYMEXP):
                return _promote_linear(t)
            self.fail("T-min-max", f"{kind[:3]} needs comparable operands, got {t1}, {t2}",
                      e.span, [t1, t2])
        if kind == "sum":
            t = self.check(e.args[0], env)
            if not is_list(t) or not (is_subtype(t.elem, POLYEXP) or is_subtype(t.elem, SYMEXP)):
                self.fail("T-sum", f"sum over {t}", e.span, [t])
            return _promote_linear(t.elem)
        if kind == "avg":
            t = self.check(e.args[0], env)
            if not is_list(t) or not (is_subtype(t.elem, POLYEXP) or is_subtype(t.elem, SYMEXP)):
                self.fail("T-avg", f"avg over {t}", e.span, [t])
            return _promote_linear(t.elem)
        if kind == "len":
            t = self.check(e.args[0], env)
            if not is_list(t):
                self.fail("T-len", f"len of {t}", e.span, [t])
            return INT
        if kind == "dot":
            return self._check_dot(e, env)
        if kind == "concat":
            t1 = self.check(e.args[0], env)
            t2 = self.check(e.args[1], env)
            if not (is_list(t1) and is_list(t2)):
                self.fail("T-concat", f"concat of {t1} and {t2}", e.span, [t1, t2])
            t = join(t1, t2)
            if t is TOP:
                self.fail("T-concat", f"incompatible element types {t1}, {t2}",
                          e.span, [t1, t2])
            return t
        if kind == "compare":
            t = self.check(e.args[0], env)
            if not is_list(t):
                self.fail("T-compare", f"compare over {t}", e.span, [t])
            ft = self._resolve_func(e.func, env, arity=2)
            for pt in ft.params[-2:]:
                if not is_subtype(t.elem, pt):
                    self.fail("T-compare", f"comparator takes {pt}, list has {t.elem}",
                              e.span, [t.elem, pt])
            if ft.ret is not BOOL:
                self.fail("T-compare", f"comparator must return Bool, got {ft.ret}",
                          e.span, [ft.ret])
            return t
        raise AssertionError(kind)

    def _check_dot(self, e: ListOp, env) -> CfType:
        t1 = self.check(e.args[0], env)
        t2 = self.check(e.args[1], env)
        if not (is_list(t1) and is_list(t2)):
            self.fail("T-dot", f"dot of {t1} and {t2}", e.span, [t1, t2])
        a, b = t1.elem, t2.elem
        # one side numeric coefficients, the other neurons / symbolic terms
        if _scalarish(b) and (is_subtype(a, POLYEXP) or is_subtype(a, SYMEXP)):
            return _promote_linear(a)
        if _scalarish(a) and (is_subtype(b, POLYEXP) or is_subtype(b, SYMEXP)):
            return _promote_linear(b)
        self.fail("T-dot", f"dot of {t1} and {t2}", e.span, [t1, t2])

    def _resolve_func(self, f: Expr, env, arity: Optional[int] = None,
                      allow_const: bool = False) -> FuncType:
        """Type of a function-position expression, applying partial arguments."""
        if isinstance(f, Const) and isinstance(f.value, bool):
            if not allow_const:
                self.fail("T-function", "constant not allowed here", f.span)
            n = arity if arity is not None else 1
            return FuncType(tuple([TOP] * n), BOOL)
        if isinstance(f, Unary) and f.op == "neg":
            inner = self._resolve_func(f.e, env, arity)
            if not is_subtype(inner.ret, REAL):
                self.fail("T-function", "negated function must return a number", f.span,
                          [inner.ret])
            return inner
        if isinstance(f, Var):
            ft = env.get(f.name)
            if not isinstance(ft, FuncType):
                self.fail("T-function-call", f"{f.name!r} is not a function", f.span)
            return ft
        if isinstance(f, FuncCall):
            ft = env.get(f.name)
            if not isinstance(ft, FuncType):
                self.fail("T-function-call", f"{f.name!r} is not a function", f.span)
            if len(f.args) >= len(ft.params):
                self.fail("T-function-call",
                          f"partial application of {f.name!r} binds too many arguments",
                          f.span)
            for a, pt in zip(f.args, ft.params):
                ta = self.check(a, env)
                if not is_subtype(ta, pt):
                    self.fail("T-function-call",
                              f"argument of type {ta} where {pt} expected", a.span,
                              [ta, pt])
            return FuncType(ft.params[len(f.args):], ft.ret)
        self.fail("T-function", "expected a function reference", f.span)

    def _check_call(self, e: FuncCall, env) -> CfType:
        if e.name in ("Sigmoid", "Tanh"):
            if len(e.args) != 1:
                self.fail("T-function-call", f"{e.name} takes one argument", e.span)
            ta = self.check(e.args[0], env)
            if not is_subtype(ta, REAL):
                self.fail("T-function-call", f"{e.name} over {ta}", e.span, [ta])
            return REAL
        ft = env.get(e.name)
        if not isinstance(ft, FuncType):
            self.fail("T-function-call", f"{e.name!r} is not a function", e.span)
        if len(e.args) != len(ft.params):
            self.fail("T-function-call",
                      f"{e.name!r} takes {len(ft.params)} arguments, got {len(e.args)}",
                      e.span)
        for a, pt in zip(e.args, ft.params):
            ta = self.check(a, env)
            if not is_subtype(ta, pt):
                self.fail("T-function-call",
                          f"argument of type {ta} where {pt} expected", a.span, [ta, pt])
        return ft.ret

    def _check_map(self, e: Map, env) -> CfType:
        t = self.check(e.e, env)
        if t is POLYEXP or t is NEURON:
            ft = self._resolve_func(e.func, env, arity=2)
            self._expect_params(ft, (NEURON, REAL), e)
            if not is_subtype(ft.ret, POLYEXP):
                self.fail("T-map-poly", f"map body returns {ft.ret}, needs <= PolyExp",
                          e.span, [ft.ret])
            # the result is the carried constant plus the summed images
            return _promote_linear(join(REAL, ft.ret))
        if t is SYMEXP or t is SYM:
            ft = self._resolve_func(e.func, env, arity=2)
            self._expect_params(ft, (SYM, REAL), e)
            if not is_subtype(ft.ret, SYMEXP):
                self.fail("T-map-sym", f"map body returns {ft.ret}, needs <= SymExp",
                          e.span, [ft.ret])
            return _promote_linear(join(REAL, ft.ret))
        if t in (REAL, INT):
            # a polyhedral expression that happens to be constant
            self._resolve_func(e.func, env, arity=2)
            return t
        self.fail("T-map-poly", f"map over {t}", e.span, [t])

    def _expect_params(self, ft: FuncType, want: tuple, e) -> None:
        if len(ft.params) != len(want):
            self.fail("T-map-poly", f"map function takes {len(ft.params)} args, needs {len(want)}",
                      e.span)
        for pt, w in zip(ft.params, want):
            if not is_subtype(w, pt):
                self.fail("T-map-poly", f"map function parameter {pt} cannot receive {w}",
                          e.span, [pt, w])

    def _check_maplist(self, e: MapList, env) -> CfType:
        t = self.check(e.e, env)
        if not is_list(t):
            self.fail("T-map-list", f"mapList over {t}", e.span, [t])
        ft = self._resolve_func(e.func, env, arity=1)
        if len(ft.params) != 1:
            self.fail("T-map-list", "mapList function must take one remaining argument",
                      e.span)
        if not is_subtype(t.elem, ft.params[0]):
            self.fail("T-map-list", f"mapList function takes {ft.params[0]}, list has {t.elem}",
                      e.span, [t.elem, ft.params[0]])
        return ListType(ft.ret)

    def _check_traverse(self, e: Traverse, env) -> CfType:
        t = self.check(e.e, env)
        if not is_subtype(t, POLYEXP):
            self.fail("T-traverse", f"traverse over {t}", e.span, [t])
        fp = self._resolve_func(e.priority, env, arity=1)
        if not (len(fp.params) == 1 and is_subtype(NEURON, fp.params[0])
                and is_subtype(fp.ret, REAL) and fp.ret is not BOT):
            self.fail("T-traverse", "priority function must map Neuron to a number", e.span)
        fs = self._resolve_func(e.stop, env, arity=2, allow_const=True)
        if len(fs.params) not in (1, 2) or fs.ret is not BOOL:
            self.fail("T-traverse", "stopping function must map Neuron [, coeff] to Bool",
                      e.span)
        fr = self._resolve_func(e.replace, env, arity=2)
        if not (len(fr.params) == 2 and is_subtype(NEURON, fr.params[0])
                and is_subtype(REAL, fr.params[1]) and is_subtype(fr.ret, POLYEXP)
                and fr.ret is not BOT):
            self.fail("T-traverse", "replacement function must map Neuron x Real to <= PolyExp",
                      e.span)
        ti = self.check(e.invariant, env)
        if ti not in (BOOL, CT):
            self.fail("T-traverse", f"invariant must be Bool or Ct, got {ti}",
                      e.invariant.span, [ti])
        return POLYEXP

    def _check_solver(self, e: Solver, env) -> CfType:
        t1 = self.check(e.objective, env)
        if not is_subtype(t1, POLYEXP) and not is_subtype(t1, SYMEXP):
            self.fail("T-solver", f"objective of type {t1}", e.objective.span, [t1])
        t2 = self.check(e.constraint, env)
        ok = t2 in (CT, BOOL) or (is_list(t2) and is_subtype(t2.elem, CT))
        if not ok:
            self.fail("T-solver", f"constraint of type {t2}", e.constraint.span, [t2])
        return REAL


# ---------------------------------------------------------------- programs


def prev_env(op: DnnOp) -> dict[str, CfType]:
    shape = op.prev_shape
    if shape is PrevShape.SINGLE:
        return {"prev": NEURON}
    if shape is PrevShape.LIST:
        return {"prev": ListType(NEURON)}
    return {"prev0": NEURON, "prev1": NEURON, "prev_0": NEURON, "prev_1": NEURON}


def typecheck_program(p: Program) -> Context:
    """Check a full program; returns the typing context or raises TypeError_."""
    ctx = Context()
    for t, name in p.shape.members:
        if not (is_strict_subtype(BOT, t) and is_strict_subtype(t, TOP)):
            raise TypeError_("T-shape", f"member {name!r} has inadmissible type {t}",
                             p.shape.span, [t])
        ctx.tau[name] = t
    chk = Checker(ctx)

    prop_env = {"curr": NEURON}
    tp = chk.check(p.shape.prop, prop_env)
    ok = tp in (CT, BOOL) or (is_list(tp) and is_subtype(tp.elem, CT))
    if not ok:
        raise TypeError_("T-shape", f"shape property has type {tp}, needs Ct",
                         p.shape.prop.span, [tp])

    members = list(ctx.tau.values())
    for s in p.stmts:
        if isinstance(s, FuncDef):
            if s.name in ctx.gamma:
                raise TypeError_("T-func", f"{s.name!r} already bound", s.span)
            env = dict(ctx.gamma)
            for t, x in s.params:
                env[x] = t
            rt = chk.check(s.body, env)
            if rt is TOP or rt is BOT:
                raise TypeError_("T-func", f"function body has type {rt}", s.span, [rt])
            ctx.gamma[s.name] = FuncType(tuple(t for t, _ in s.params), rt)
        elif isinstance(s, TransformerDef):
            if s.name in ctx.gamma:
                raise TypeError_("T-transformer", f"{s.name!r} already bound", s.span)
            slot_types: list[CfType] = [BOT] * len(members)
            for op, ret in s.rules:
                env = dict(ctx.gamma)
                env["curr"] = NEURON
                env.update(prev_env(op))
                tys = _check_ret(chk, ret, env, members, s.name, op)
                for j, (tj, tauj) in enumerate(zip(tys, members)):
                    if not is_subtype(tj, tauj):
                        raise TypeError_(
                            "T-transformer",
                            f"transformer {s.name!r}, op {op.value}: slot {j + 1} has "
                            f"type {tj}, shape member needs {tauj}", ret.span, [tj, tauj])
                    slot_types[j] = join(slot_types[j], tj)
            ctx.gamma[s.name] = TransformerType(tuple(slot_types))
        elif isinstance(s, Flow):
            env = dict(ctx.gamma)
            fp = chk._resolve_func(s.priority, env, arity=1)
            if not is_subtype(fp.ret, REAL):
                raise TypeError_("T-flow", "flow priority must return a number", s.span,
                                 [fp.ret])
            fs = chk._resolve_func(s.stop, env, arity=1, allow_const=True)
            if fs.ret is not BOOL:
                raise TypeError_("T-flow", "flow stopping function must return Bool",
                                 s.span, [fs.ret])
            if not isinstance(ctx.gamma.get(s.transformer), TransformerType):
                raise TypeError_("T-flow", f"unknown transformer {s.transformer!r}", s.span)
    return ctx


def _check_ret(chk: Checker, ret: TransformerRet, env, members, tname: str,
               op: DnnOp) -> list[CfType]:
    if isinstance(ret, RetTuple):
        if len(ret.exprs) != len(members):
            raise TypeError_(
                "T-transformer-ret-1",
                f"transformer {tname!r}, op {op.value}: tuple has {len(ret.exprs)} "
                f"slots, shape has {len(members)}", ret.span)
        return [chk.check(x, env) for x in ret.exprs]
    assert isinstance(ret, RetIf)
    tc = chk.check(ret.cond, env)
    if tc is not BOOL:
        raise TypeError_("T-transformer-ret-2", f"guard has type {tc}, needs Bool",
                         ret.cond.span, [tc])
    t1 = _check_ret(chk, ret.then, env, members, tname, op)
    t2 = _check_ret(chk, ret.other, env, members, tname, op)
    out = []
    for a, b in zip(t1, t2):
        t = join(a, b)
        if t is TOP:
            raise TypeError_("T-transformer-ret-2",
                             f"guard branches disagree: {a} vs {b}", ret.span, [a, b])
        out.append(t)
    return out


def types_report(p: Program, ctx: Context) -> dict:
    """JSON-ready typing report: top-level binders and per-op slot types."""
    report: dict = {"shape": {m: t.name for m, t in
                              ((m, t) for t, m in p.shape.members)}}
    binders = {}
    for name, t in ctx.gamma.items():
        binders[name] = repr(t) if isinstance(t, FuncType) else \
            "(" + ", ".join(s.name for s in t.slots) + ")"
    report["binders"] = binders
    ops = {}
    for td in p.transformers:
        for op, ret in td.rules:
            key = f"{td.name}.{op.value}"
            slots = _collect_slots(ctx, ret)
            ops[key] = slots
    report["transformer_ops"] = ops
    return report


def _collect_slots(ctx: Context, ret: TransformerRet) -> list[str]:
    while isinstance(ret, RetIf):
        ret = ret.then
    return [ctx.expr_types.get(id(x), TOP).name for x in ret.exprs]
