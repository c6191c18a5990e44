"""Lowering of symbolic terms to SMT-LIB2 text.

Emission is bit-stable: declarations in ascending atom order, assertions
in insertion order, rationals as exact `(/ p q)` literals.  All numerics
use the Real sort (the DSL's Int values carry no modular semantics).
"""
from __future__ import annotations

from fractions import Fraction

from ..errors import SortError
from .terms_bridge import BOOL, Term, atoms_of

_OPMAP = {"+": "+", "-": "-", "*": "*", "/": "/", "neg": "-", "<=": "<=",
          "<": "<", ">=": ">=", ">": ">", "=": "=", "and": "and", "or": "or",
          "not": "not", "ite": "ite", "=>": "=>"}


def lit(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    v = Fraction(v)
    if v < 0:
        return f"(- {lit(-v)})"
    if v.denominator == 1:
        return f"{v.numerator}.0"
    return f"(/ {v.numerator}.0 {v.denominator}.0)"


def _term_to_smt_tree(t: Term) -> str:
    if t.kind == "atom":
        return t.name
    if t.kind == "const":
        return lit(t.value)
    if t.kind == "exists":
        binders = " ".join(f"({b.name} {b.sort})" for b in t.payload)
        return f"(exists ({binders}) {_term_to_smt_tree(t.args[0])})"
    if t.op == "diamond":
        raise SortError("'<>' terms must be lowered before emission")
    op = _OPMAP.get(t.op)
    if op is None:
        raise SortError(f"no SMT form for operator {t.op!r}")
    return "(" + op + "".join(" " + _term_to_smt_tree(a) for a in t.args) + ")"


def term_to_smt(t: Term) -> str:
    """Serialize a term.  Shared subterms are let-bound so the text stays
    proportional to the DAG, not its tree expansion.  Subterms under a
    quantifier are serialized plainly (they must not escape the binder)."""
    counts: dict[int, int] = {}
    order: list[Term] = []

    def count(u: Term):
        c = counts.get(u.tid)
        if c is not None:
            counts[u.tid] = c + 1
            return
        counts[u.tid] = 1
        if u.kind == "exists":
            order.append(u)  # opaque: its body is serialized plainly
            return
        for a in u.args:
            count(a)
        order.append(u)

    count(t)
    texts: dict[int, str] = {}
    bindings: list[tuple[str, str]] = []
    for u in order:
        if u.kind == "atom":
            texts[u.tid] = u.name
            continue
        if u.kind == "const":
            texts[u.tid] = lit(u.value)
            continue
        if u.kind == "exists":
            texts[u.tid] = _term_to_smt_tree(u)
            continue
        if u.op == "diamond":
            raise SortError("'<>' terms must be lowered before emission")
        op = _OPMAP.get(u.op)
        if op is None:
            raise SortError(f"no SMT form for operator {u.op!r}")
        body = "(" + op + "".join(" " + texts[a.tid] for a in u.args) + ")"
        if counts[u.tid] > 1 and len(body) > 24:
            name = f"_s{u.tid}"
            bindings.append((name, body))
            texts[u.tid] = name
        else:
            texts[u.tid] = body
    out = texts[t.tid]
    for name, body in reversed(bindings):
        out = f"(let (({name} {body})) {out})"
    return out


def classify_logic(terms: list[Term]) -> str:
    """QF_LRA for purely linear quantifier-free scripts, QF_NRA with
    nonlinear products, NRA once quantifiers appear."""
    quantified = False
    nonlinear = False

    def scan(t: Term, seen: set):
        nonlocal quantified, nonlinear
        if t.tid in seen:
            return
        seen.add(t.tid)
        if t.kind == "exists":
            quantified = True
        if t.kind == "app" and t.op == "*":
            if all(_has_var(a) for a in t.args):
                nonlinear = True
        if t.kind == "app" and t.op == "/":
            if _has_var(t.args[1]):
                nonlinear = True
        for a in t.args:
            scan(a, seen)

    seen: set = set()
    for t in terms:
        scan(t, seen)
    if quantified:
        return "NRA"
    return "QF_NRA" if nonlinear else "QF_LRA"


def _has_var(t: Term) -> bool:
    return bool(atoms_of(t))


def emit_script(assertions: list[Term], logic: str | None = None,
                get_model: bool = True, options: list[str] = ()) -> str:
    """A complete SMT-LIB2 script asserting the given boolean terms."""
    for t in assertions:
        if t.sort != BOOL:
            raise SortError("only boolean terms can be asserted")
    logic = logic or classify_logic(assertions)
    atoms = set()
    for t in assertions:
        atoms |= atoms_of(t)
    bound = set()
    for t in assertions:
        _collect_bound(t, bound)
    lines = [f"(set-logic {logic})"]
    lines.extend(options)
    for a in sorted(atoms, key=lambda x: x.tid):
        if a.tid in bound:
            continue
        lines.append(f"(declare-const {a.name} {a.sort})")
    for t in assertions:
        lines.append(f"(assert {term_to_smt(t)})")
    lines.append("(check-sat)")
    if get_model:
        lines.append("(get-model)")
    return "\n".join(lines) + "\n"


def _collect_bound(t: Term, out: set) -> None:
    stack = [t]
    seen = set()
    while stack:
        u = stack.pop()
        if u.tid in seen:
            continue
        seen.add(u.tid)
        if u.kind == "exists":
            out.update(b.tid for b in u.payload)
        stack.extend(u.args)
