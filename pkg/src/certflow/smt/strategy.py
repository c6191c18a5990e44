"""Validity checking with a sound linearization fallback.

Affine-style queries couple dozens of weight-sign case splits with
products; nonlinear engines blow up on them well before the paper-scale
bounds.  The fallback here:

1. purify: name every maximal nonlinear subterm (products of variables,
   variable divisions) with a fresh atom, dropping the definitions;
2. lemma saturation: propose per-summand orderings between ite-terms and
   product names that share variables, and prove each candidate from the
   *original* premises restricted to its support -- small queries the
   solver decides quickly, cached under canonical renaming so repeated
   summand structure costs one call;
3. retry the purified query, now linear, with the verified lemmas added.

Dropping definitions weakens the antecedent and every added lemma is
solver-verified from the original premises, so an `unsat` answer on the
purified query soundly transfers to the exact one.  Counterexample models
are only ever taken from the exact query.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .driver import SmtBackend, Verdict
from .emit import term_to_smt
from .terms_bridge import Arena, Term, atoms_of

MAX_CANDIDATES = 256


def _is_var_term(t: Term) -> bool:
    return bool(atoms_of(t))


class Purifier:
    """Replaces maximal nonlinear subterms by fresh `const`-role atoms."""

    def __init__(self, arena: Arena):
        self.arena = arena
        self.defs: dict[int, Term] = {}  # name atom tid -> original term
        self.names: dict[int, Term] = {}  # original term tid -> name atom
        self._has_quantifier = False

    def run(self, t: Term) -> Term:
        a = self.arena
        memo: dict[int, Term] = {}

        def rec(u: Term) -> Term:
            if u.tid in memo:
                return memo[u.tid]
            if u.kind in ("atom", "const"):
                out = u
            elif u.kind == "exists":
                self._has_quantifier = True
                out = u
            elif u.op == "*" and all(_is_var_term(x) for x in u.args):
                out = self._name(u)
            elif u.op == "/" and _is_var_term(u.args[1]):
                out = self._name(u)
            else:
                out = a.app(u.op, *[rec(x) for x in u.args])
            memo[u.tid] = out
            return out

        return rec(t)

    def _name(self, u: Term) -> Term:
        hit = self.names.get(u.tid)
        if hit is not None:
            return hit
        atom = self.arena.fresh("nl", "const")
        self.names[u.tid] = atom
        self.defs[atom.tid] = u
        return atom


def _substitute(arena: Arena, t: Term, subst: dict[int, Term]) -> Term:
    memo: dict[int, Term] = {}

    def rec(u: Term) -> Term:
        if u.tid in memo:
            return memo[u.tid]
        if u.kind == "atom":
            out = subst.get(u.tid, u)
        elif u.kind == "const":
            out = u
        elif u.kind == "exists":
            out = arena.exists(u.payload, rec(u.args[0]))
        else:
            out = arena.app(u.op, *[rec(x) for x in u.args])
        memo[u.tid] = out
        return out

    return rec(t)


def canonical_key(terms: list[Term]) -> str:
    """Serialization with atoms renamed by first occurrence, so structurally
    identical queries over different variables share a cache entry."""
    rename: dict[int, str] = {}

    def rec(t: Term) -> str:
        if t.kind == "atom":
            if t.tid not in rename:
                rename[t.tid] = f"x{len(rename)}"
            return rename[t.tid]
        if t.kind == "const":
            v = t.value
            return ("true" if v else "false") if isinstance(v, bool) else str(v)
        if t.kind == "exists":
            inner = rec(t.args[0])
            names = " ".join(rec(b) for b in t.payload)
            return f"(exists ({names}) {inner})"
        return "(" + t.op + "".join(" " + rec(a) for a in t.args) + ")"

    return ";".join(rec(t) for t in terms)


def count_nonlinear(terms: list[Term]) -> int:
    seen: set[int] = set()
    count = 0
    stack = list(terms)
    visited: set[int] = set()
    while stack:
        u = stack.pop()
        if u.tid in visited:
            continue
        visited.add(u.tid)
        if u.kind == "app":
            if u.op == "*" and all(_is_var_term(x) for x in u.args):
                if u.tid not in seen:
                    seen.add(u.tid)
                    count += 1
            if u.op == "/" and _is_var_term(u.args[1]) and u.tid not in seen:
                seen.add(u.tid)
                count += 1
        stack.extend(u.args)
    return count


@dataclass
class SmartVerdict:
    status: str  # unsat | sat | unknown
    model: dict = None
    via: str = "direct"


class ValidityChecker:
    """check_valid with the linearization ladder. Results: unsat == valid."""

    def __init__(self, backend: SmtBackend, direct_threshold: int = 12):
        self.backend = backend
        self.arena = backend.arena
        self.direct_threshold = direct_threshold
        self._lemma_cache: dict[str, bool] = {}
        self.stats = {"direct": 0, "linearized": 0, "lemma_queries": 0,
                      "lemma_cache_hits": 0}

    def check_valid(self, premises: list[Term], conclusion: Term,
                    tag: str = "valid") -> SmartVerdict:
        split_guards = self._division_guards(list(premises) + [conclusion])
        nl = count_nonlinear(list(premises) + [conclusion])
        if split_guards and 0 < len(split_guards) <= 12:
            branched = self._branch_split(premises, conclusion, split_guards, tag)
            if branched is not None:
                return branched
        if nl <= self.direct_threshold:
            v = self.backend.check_valid(premises, conclusion, tag=tag)
            self.stats["direct"] += 1
            if v.status in ("unsat", "sat"):
                return SmartVerdict(v.status, dict(v.model), "direct")
            lin = self._linearized(premises, conclusion, tag)
            return lin if lin is not None else SmartVerdict("unknown")
        lin = self._linearized(premises, conclusion, tag)
        if lin is not None:
            return lin
        v = self.backend.check_valid(premises, conclusion, tag=tag + "_exact")
        if v.status in ("unsat", "sat"):
            return SmartVerdict(v.status, dict(v.model), "direct")
        return SmartVerdict("unknown")

    # ------------------------------------------------------------------
    def _division_guards(self, terms: list[Term]) -> list[Term]:
        """Guards of ite nodes a variable division's denominator depends on.
        Enumerating their sign assignments turns pool-style queries into a
        fan of near-linear branches."""
        guards: dict[int, Term] = {}
        visited: set[int] = set()

        def collect_guards(t: Term):
            stack = [t]
            while stack:
                u = stack.pop()
                if u.kind == "app" and u.op == "ite":
                    guards.setdefault(u.args[0].tid, u.args[0])
                    stack.extend(u.args[1:])
                else:
                    stack.extend(u.args)

        def scan(t: Term):
            stack = [t]
            while stack:
                u = stack.pop()
                if u.tid in visited:
                    continue
                visited.add(u.tid)
                if u.kind == "app" and u.op == "/" and _is_var_term(u.args[1]):
                    collect_guards(u.args[1])
                stack.extend(u.args)

        for t in terms:
            scan(t)
        return [guards[k] for k in sorted(guards)]

    def _branch_split(self, premises: list[Term], conclusion: Term,
                      guards: list[Term], tag: str) -> Optional[SmartVerdict]:
        """Exact case analysis: one incremental script, one (push assert
        check-sat pop) round per sign assignment of the guard atoms.  All
        rounds unsat == valid; a sat round is re-run for its model."""
        from .emit import term_to_smt, lit
        a = self.arena
        base = list(premises) + [a.app("not", conclusion)]
        from .emit import emit_script
        header = emit_script(base, get_model=False)
        header = header.rsplit("(check-sat)", 1)[0]
        lines = [header]
        k = len(guards)
        for mask in range(1 << k):
            lines.append("(push)")
            for i, g in enumerate(guards):
                t = g if (mask >> i) & 1 else a.app("not", g)
                lines.append(f"(assert {term_to_smt(t)})")
            lines.append("(check-sat)")
            lines.append("(pop)")
        try:
            out = self.backend.config.run_script("\n".join(lines) + "\n",
                                                 f"{tag}_branch")
        except Exception:
            return None
        answers = [ln.strip() for ln in out.splitlines() if ln.strip()]
        self.stats["branched"] = self.stats.get("branched", 0) + 1
        if len(answers) != (1 << k):
            return None
        if all(x == "unsat" for x in answers):
            return SmartVerdict("unsat", via="branched")
        if "sat" in answers:
            mask = answers.index("sat")
            extra = [(g if (mask >> i) & 1 else a.app("not", g))
                     for i, g in enumerate(guards)]
            v = self.backend.check_valid(list(premises) + extra, conclusion,
                                         tag=tag + "_branchsat")
            if v.status == "sat":
                return SmartVerdict("sat", dict(v.model), "branched")
        return None

    # ------------------------------------------------------------------
    def _linearized(self, premises: list[Term], conclusion: Term,
                    tag: str) -> Optional[SmartVerdict]:
        a = self.arena
        pur = Purifier(a)
        abst_prem = [pur.run(t) for t in premises]
        abst_con = pur.run(conclusion)
        if pur._has_quantifier or not pur.defs:
            return None
        lemmas = []
        for cand in self._candidates(abst_prem + [abst_con], pur):
            if self._lemma_holds(cand, premises, pur):
                lemmas.append(cand)
        v = self.backend.check_valid(abst_prem + lemmas, abst_con,
                                     tag=tag + "_lin")
        self.stats["linearized"] += 1
        if v.status == "unsat":
            return SmartVerdict("unsat", via="linearized")
        return None

    def _candidates(self, abstracted: list[Term], pur: Purifier) -> list[Term]:
        a = self.arena
        ites: list[Term] = []
        seen: set[int] = set()
        stack = list(abstracted)
        while stack:
            u = stack.pop()
            if u.tid in seen:
                continue
            seen.add(u.tid)
            if u.kind == "app" and u.op == "ite" and u.sort == "Real":
                ites.append(u)
            stack.extend(u.args)

        def orig_vars(t: Term) -> set[int]:
            out = set()
            for atom in atoms_of(t):
                if atom.tid in pur.defs:
                    out |= {x.tid for x in atoms_of(pur.defs[atom.tid])}
                else:
                    out.add(atom.tid)
            return out

        names = [a_ for tid, a_ in sorted(pur.names.items(),
                                          key=lambda kv: kv[1].tid)]
        out: list[Term] = []
        for s in sorted(ites, key=lambda t: t.tid):
            sv = orig_vars(s)
            for m in names:
                if len(out) >= MAX_CANDIDATES:
                    return out
                if m.tid in {x.tid for x in atoms_of(s)}:
                    continue  # the ite already mentions m
                if not (sv & orig_vars(m)):
                    continue
                out.append(a.app("<=", s, m))
                out.append(a.app(">=", s, m))
        return out

    def _lemma_holds(self, cand: Term, premises: list[Term],
                     pur: Purifier) -> bool:
        a = self.arena
        original = _substitute(a, cand, pur.defs)
        support = {x.tid for x in atoms_of(original)}
        local = [p for p in premises
                 if {x.tid for x in atoms_of(p)} <= support]
        key = canonical_key(local + [original])
        if key in self._lemma_cache:
            self.stats["lemma_cache_hits"] += 1
            return self._lemma_cache[key]
        v = self.backend.check_valid(local, original, tag="lemma")
        self.stats["lemma_queries"] += 1
        ok = v.status == "unsat"
        self._lemma_cache[key] = ok
        return ok
