"""Seeded mutation of certifier programs.

Four mutation classes, mirroring how unsoundness bugs are injected for
benchmark purposes: swapping binary operators between same-signature
peers, swapping same-typed shape members, swapping same-signature user
functions, and swapping neuron references.  Mutants are generated
deterministically from a seed and re-type-checked; type-breaking mutants
are labeled rather than dropped.
"""
from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from typing import Optional

from .errors import NoMutationSite, TypeError_
from .parser import parse_program
from .printer import pretty_print
from .syntax import (
    Binary, Expr, FuncCall, FuncDef, ListOp, Map, MapList, MetadataAccess,
    Program, RetIf, RetTuple, ShapeAccess, TransformerDef, Var, walk,
)
from .typecheck import Context, FuncType, typecheck_program

CLASSES = ("op-swap", "shape-member-swap", "func-swap", "neuron-swap")

_OP_PEERS = {"+": "-", "-": "+", ">=": "<=", "<=": ">=", "<": ">", ">": "<",
             "and": "or", "or": "and"}
_LISTOP_PEERS = {"max": "min", "min": "max", "max2": "min2", "min2": "max2"}


@dataclass(frozen=True)
class MutationPlan:
    seed: int
    classes: tuple[str, ...] = CLASSES
    count: int = 20

    def __post_init__(self):
        for c in self.classes:
            if c not in CLASSES:
                raise ValueError(f"unknown mutation class {c!r}")


@dataclass
class Mutant:
    index: int
    klass: str
    description: str
    text: str
    type_error: Optional[str] = None


@dataclass
class _Site:
    klass: str
    node: object
    apply: object  # () -> description
    key: str


def _sites_op_swap(p: Program) -> list[_Site]:
    out = []
    for node in walk(p):
        if isinstance(node, Binary) and node.op in _OP_PEERS:
            def apply(n=node):
                old = n.op
                n.op = _OP_PEERS[old]
                return f"binary {old!r} -> {n.op!r} at line {n.span.line}"
            out.append(_Site("op-swap", node, apply,
                             f"op:{node.span.start}:{node.op}"))
        if isinstance(node, ListOp) and node.kind in _LISTOP_PEERS:
            def apply(n=node):
                old = n.kind
                n.kind = _LISTOP_PEERS[old]
                return f"list op {old!r} -> {n.kind!r} at line {n.span.line}"
            out.append(_Site("op-swap", node, apply,
                             f"lop:{node.span.start}:{node.kind}"))
    return out


def _sites_member_swap(p: Program, ctx: Context) -> list[_Site]:
    by_type: dict = {}
    for t, name in p.shape.members:
        by_type.setdefault(t.name, []).append(name)
    peers = {}
    for names in by_type.values():
        for name in names:
            others = [x for x in names if x != name]
            if others:
                peers[name] = others
    out = []
    for node in walk(p):
        if isinstance(node, ShapeAccess) and node.name in peers:
            for other in peers[node.name]:
                def apply(n=node, o=other):
                    old = n.name
                    n.name = o
                    return f"shape member {old!r} -> {o!r} at line {n.span.line}"
                out.append(_Site("shape-member-swap", node, apply,
                                 f"mem:{node.span.start}:{node.name}>{other}"))
    return out


def _sites_func_swap(p: Program, ctx: Context) -> list[_Site]:
    sigs: dict = {}
    for f in p.funcs:
        ft = ctx.gamma.get(f.name)
        if isinstance(ft, FuncType):
            sigs.setdefault((ft.params, ft.ret), []).append(f.name)
    peers = {}
    for names in sigs.values():
        for name in names:
            others = [x for x in names if x != name]
            if others:
                peers[name] = others
    out = []
    for node in walk(p):
        name = None
        if isinstance(node, (Map, MapList)) and isinstance(node.func, Var):
            name = node.func.name
        elif isinstance(node, FuncCall):
            name = node.name
        elif isinstance(node, Var):
            name = node.name
        if name in peers:
            for other in peers[name]:
                def apply(n=node, o=other):
                    target = n.func if isinstance(n, (Map, MapList)) else n
                    old = target.name
                    target.name = o
                    return f"function {old!r} -> {o!r} at line {n.span.line}"
                out.append(_Site("func-swap", node, apply,
                                 f"fn:{node.span.start}:{name}>{other}"))
    return out


def _sites_neuron_swap(p: Program, ctx: Context) -> list[_Site]:
    out = []
    for td in p.transformers:
        for op, ret in td.rules:
            swaps = []
            if op.prev_shape.value == "pair":
                swaps = [("prev0", "prev1"), ("prev1", "prev0"),
                         ("prev_0", "prev_1"), ("prev_1", "prev_0")]
            elif op.prev_shape.value == "single":
                swaps = [("prev", "curr")]
            if not swaps:
                continue
            for node in walk_ret(ret):
                if isinstance(node, Var):
                    for old, new in swaps:
                        if node.name == old:
                            def apply(n=node, o=new):
                                prev = n.name
                                n.name = o
                                return (f"neuron {prev!r} -> {o!r} at line "
                                        f"{n.span.line}")
                            out.append(_Site("neuron-swap", node, apply,
                                             f"nr:{node.span.start}:{old}>{new}"))
    return out


def walk_ret(ret):
    if isinstance(ret, RetTuple):
        nodes = []
        for x in ret.exprs:
            nodes.extend(walk(x))
        return nodes
    nodes = walk(ret.cond)
    nodes.extend(walk_ret(ret.then))
    nodes.extend(walk_ret(ret.other))
    return nodes


def mutation_sites(p: Program, ctx: Context, classes=CLASSES) -> list[_Site]:
    out: list[_Site] = []
    if "op-swap" in classes:
        out.extend(_sites_op_swap(p))
    if "shape-member-swap" in classes:
        out.extend(_sites_member_swap(p, ctx))
    if "func-swap" in classes:
        out.extend(_sites_func_swap(p, ctx))
    if "neuron-swap" in classes:
        out.extend(_sites_neuron_swap(p, ctx))
    return out


def mutate_spec(source: str, plan: MutationPlan,
                restrict_ops=None) -> list[Mutant]:
    """Generate `plan.count` single-site mutants of a type-correct program.
    Deterministic per (seed, source)."""
    base = parse_program(source)
    ctx = typecheck_program(base)
    rng = random.Random(plan.seed)

    mutants: list[Mutant] = []
    seen_texts = {pretty_print(base)}
    attempts = 0
    while len(mutants) < plan.count and attempts < plan.count * 40:
        attempts += 1
        work = parse_program(source)  # fresh tree to mutate in place
        sites = mutation_sites(work, ctx, plan.classes)
        if restrict_ops is not None:
            sites = [s for s in sites if _in_ops(work, s, restrict_ops)]
        if not sites:
            raise NoMutationSite(
                f"no applicable site for classes {', '.join(plan.classes)}")
        sites.sort(key=lambda s: s.key)
        site = rng.choice(sites)
        description = site.apply()
        text = pretty_print(work)
        if text in seen_texts:
            continue
        seen_texts.add(text)
        type_error = None
        try:
            typecheck_program(parse_program(text))
        except TypeError_ as exc:
            type_error = str(exc)
        mutants.append(Mutant(len(mutants), site.klass, description, text,
                              type_error))
    if len(mutants) < plan.count:
        raise NoMutationSite(
            f"only {len(mutants)} distinct mutants exist for the requested classes")
    return mutants


def _in_ops(program: Program, site: _Site, ops) -> bool:
    """Restrict mutation sites to the given operations' rules plus the
    user functions they call (transitively)."""
    span = site.node.span
    wanted_funcs: set[str] = set()
    spans = []
    for td in program.transformers:
        for op, ret in td.rules:
            if op in ops:
                spans.append(ret.span)
                for node in walk_ret(ret):
                    if isinstance(node, FuncCall):
                        wanted_funcs.add(node.name)
                    if isinstance(node, (Map, MapList)) and isinstance(node.func, Var):
                        wanted_funcs.add(node.func.name)
                    if isinstance(node, Var) and node.name not in (
                            "curr", "prev", "prev0", "prev1", "prev_0", "prev_1"):
                        wanted_funcs.add(node.name)
    changed = True
    while changed:
        changed = False
        for f in program.funcs:
            if f.name in wanted_funcs:
                for node in walk(f.body):
                    if isinstance(node, FuncCall) and node.name not in wanted_funcs:
                        wanted_funcs.add(node.name)
                        changed = True
                    if isinstance(node, (Map, MapList)) and \
                            isinstance(node.func, Var) and \
                            node.func.name not in wanted_funcs:
                        wanted_funcs.add(node.func.name)
                        changed = True
    for f in program.funcs:
        if f.name in wanted_funcs:
            spans.append(f.span)
    return any(s.start <= span.start and span.end <= s.end for s in spans)
