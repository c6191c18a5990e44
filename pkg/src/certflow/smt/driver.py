"""External-solver driver: process management, verdicts, model parsing,
and optimization.

One process per query (reproducibility over amortized speed).  The solver
command is auto-detected: a `z3` or `cvc5` binary on PATH wins; otherwise
the packaged Node runner over the `z3-solver` WebAssembly module is used.
"""
from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from ..errors import (
    ModelParseError, SolverCrashed, SolverTimeout, SolverUnsat,
    UnboundedObjective,
)
from .emit import emit_script, lit, term_to_smt
from .terms_bridge import Term, atoms_of

_RUNNER = os.path.join(os.path.dirname(__file__), "smt2run.js")


@dataclass(frozen=True)
class Verdict:
    status: str  # sat | unsat | unknown | timeout
    model: dict[str, object] = field(default_factory=dict)
    inexact: frozenset = frozenset()  # model names bound to algebraic approximations
    raw: str = ""


def _node_module_dirs() -> list[str]:
    dirs = []
    env = os.environ.get("CERTFLOW_NODE_PATH")
    if env:
        dirs.append(env)
    try:
        root = subprocess.run(["npm", "root", "-g"], capture_output=True,
                              text=True, timeout=20).stdout.strip()
        if root:
            dirs.append(root)
    except Exception:
        pass
    dirs.append(os.path.join(os.getcwd(), "node_modules"))
    return dirs


class SolverConfig:
    def __init__(self, command: Optional[list[str]] = None, timeout: float = 60.0,
                 keep_queries: Optional[str] = None):
        self.command = command
        self.timeout = timeout
        self.keep_queries = keep_queries
        self._env = dict(os.environ)
        if command is None:
            self.command, self._env = self._detect()

    @staticmethod
    def from_name(name: Optional[str], timeout: float = 60.0,
                  keep_queries: Optional[str] = None) -> "SolverConfig":
        if name in (None, "", "auto"):
            return SolverConfig(None, timeout, keep_queries)
        if name in ("z3", "cvc5"):
            path = shutil.which(name)
            if path is None and name == "z3":
                return SolverConfig(None, timeout, keep_queries)
            if path is None:
                raise SolverCrashed(f"solver binary {name!r} not found on PATH")
            cmd = [path] if name == "z3" else [path, "--produce-models"]
            return SolverConfig(cmd, timeout, keep_queries)
        return SolverConfig(name.split(), timeout, keep_queries)

    def _detect(self):
        env = dict(os.environ)
        z3 = shutil.which("z3")
        if z3:
            return [z3], env
        cvc5 = shutil.which("cvc5")
        if cvc5:
            return [cvc5, "--produce-models"], env
        node = shutil.which("node")
        if node:
            for d in _node_module_dirs():
                if os.path.isdir(os.path.join(d, "z3-solver")):
                    env["NODE_PATH"] = d + os.pathsep + env.get("NODE_PATH", "")
                    return [node, _RUNNER], env
        raise SolverCrashed(
            "no SMT solver available: install z3/cvc5 or `npm install -g z3-solver`")

    # ------------------------------------------------------------------
    def run_script(self, text: str, tag: str = "query") -> str:
        if self.keep_queries:
            os.makedirs(self.keep_queries, exist_ok=True)
            path = os.path.join(self.keep_queries, f"{tag}.smt2")
            with open(path, "w") as fh:
                fh.write(text)
        else:
            fd, path = tempfile.mkstemp(suffix=".smt2", prefix=f"certflow_{tag}_")
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
        try:
            proc = subprocess.run(self.command + [path], capture_output=True,
                                  text=True, timeout=self.timeout, env=self._env)
        except subprocess.TimeoutExpired:
            raise SolverTimeout(f"solver exceeded {self.timeout}s")
        finally:
            if not self.keep_queries:
                try:
                    os.unlink(path)
                except OSError:
                    pass
        out = proc.stdout
        if not out.strip():
            raise SolverCrashed("solver produced no output",
                                exit_code=proc.returncode, stderr=proc.stderr)
        return out


# ------------------------------------------------------------ s-expressions


def _tokenize_sexpr(s: str) -> list[str]:
    out, i, n = [], 0, len(s)
    while i < n:
        c = s[i]
        if c.isspace():
            i += 1
        elif c in "()":
            out.append(c)
            i += 1
        elif c == ";":
            j = s.find("\n", i)
            i = n if j < 0 else j
        elif c == '"':
            j = s.find('"', i + 1)
            out.append(s[i:j + 1])
            i = j + 1
        elif c == "|":
            j = s.find("|", i + 1)
            out.append(s[i:j + 1])
            i = j + 1
        else:
            j = i
            while j < n and not s[j].isspace() and s[j] not in "()":
                j += 1
            out.append(s[i:j])
            i = j
    return out


def _parse_sexprs(tokens: list[str]):
    pos = 0

    def rec():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while tokens[pos] != ")":
                items.append(rec())
            pos += 1
            return items
        return tok

    out = []
    while pos < len(tokens):
        out.append(rec())
    return out


def _numeral(node) -> tuple[Optional[Fraction], bool]:
    """Rational value of a model s-expression; (value, exact)."""
    if isinstance(node, str):
        try:
            return Fraction(node), True
        except ValueError:
            return None, True
    if isinstance(node, list) and node:
        head = node[0]
        if head == "-" and len(node) == 2:
            v, exact = _numeral(node[1])
            return (None if v is None else -v), exact
        if head == "/" and len(node) == 3:
            a, e1 = _numeral(node[1])
            b, e2 = _numeral(node[2])
            if a is None or b is None or b == 0:
                return None, True
            return a / b, e1 and e2
        if head == "root-obj":
            return _root_obj_approx(node), False
        if head == "+" and len(node) == 3:
            a, e1 = _numeral(node[1])
            b, e2 = _numeral(node[2])
            if a is None or b is None:
                return None, True
            return a + b, e1 and e2
        if head == "*" and len(node) == 3:
            a, e1 = _numeral(node[1])
            b, e2 = _numeral(node[2])
            if a is None or b is None:
                return None, True
            return a * b, e1 and e2
    return None, True


def _root_obj_approx(node) -> Fraction:
    """Rational approximation of an algebraic (root-obj poly k) model value
    by bisection on the polynomial's k-th real root."""
    poly, idx = node[1], int(node[2])
    coeffs = _poly_coeffs(poly)

    def f(x: Fraction) -> Fraction:
        out = Fraction(0)
        for deg, c in coeffs.items():
            out += c * x ** deg
        return out

    bound = Fraction(1)
    roots = []
    while len(roots) < idx and bound < Fraction(2) ** 64:
        roots = _isolate_roots(f, -bound, bound)
        bound *= 2
    if len(roots) < idx:
        raise ModelParseError("cannot isolate algebraic model value")
    lo, hi = roots[idx - 1]
    for _ in range(200):
        mid = (lo + hi) / 2
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return (lo + hi) / 2


def _poly_coeffs(node) -> dict[int, Fraction]:
    out: dict[int, Fraction] = {}

    def add(deg: int, c: Fraction):
        out[deg] = out.get(deg, Fraction(0)) + c

    def rec(n, sign=1):
        if isinstance(n, str):
            if n == "x":
                add(1, Fraction(sign))
            else:
                add(0, sign * Fraction(n))
            return
        head = n[0]
        if head == "+":
            for item in n[1:]:
                rec(item, sign)
        elif head == "-" and len(n) == 2:
            rec(n[1], -sign)
        elif head == "*":
            const = Fraction(sign)
            power = 0
            for item in n[1:]:
                if isinstance(item, list) and item and item[0] == "^":
                    power += int(item[2])
                elif item == "x":
                    power += 1
                else:
                    v, _ = _numeral(item)
                    const *= v
            add(power, const)
        elif head == "^":
            add(int(n[2]), Fraction(sign))
        else:
            v, _ = _numeral(n)
            if v is None:
                raise ModelParseError(f"bad root-obj polynomial node {n!r}")
            add(0, sign * v)

    rec(node)
    return out


def _isolate_roots(f, lo: Fraction, hi: Fraction, pieces: int = 256):
    roots = []
    step = (hi - lo) / pieces
    x = lo
    fx = f(x)
    for _ in range(pieces):
        y = x + step
        fy = f(y)
        if fx == 0:
            roots.append((x, x))
        elif fx * fy < 0:
            roots.append((x, y))
        x, fx = y, fy
    return roots


def parse_model(text: str) -> tuple[dict[str, object], frozenset]:
    """Parse `(get-model)` output into name -> Fraction/bool."""
    body = text[text.index("("):]
    sexprs = _parse_sexprs(_tokenize_sexpr(body))
    model: dict[str, object] = {}
    inexact = set()
    entries = []
    for node in sexprs:
        if isinstance(node, list):
            if node and node[0] == "model":
                entries.extend(node[1:])
            elif node and isinstance(node[0], list):
                entries.extend(node)
            else:
                entries.append(node)
    for entry in entries:
        if not (isinstance(entry, list) and entry and entry[0] == "define-fun"):
            continue
        name, args, sort, value = entry[1], entry[2], entry[3], entry[4]
        if args:
            continue
        if sort == "Bool":
            model[name] = (value == "true")
            continue
        v, exact = _numeral(value)
        if v is None:
            raise ModelParseError(f"cannot read model value {value!r} for {name}")
        model[name] = v
        if not exact:
            inexact.add(name)
    return model, frozenset(inexact)


# ----------------------------------------------------------------- verdicts


class SmtBackend:
    """check-sat / check-valid / optimize against the configured solver.

    The backend shares the caller's term arena so negations and probe
    constraints can be built against the same interner."""

    def __init__(self, arena, config: Optional[SolverConfig] = None):
        self.arena = arena
        self.config = config or SolverConfig()
        self.queries = 0

    def _run(self, assertions: list[Term], tag: str, get_model: bool,
             logic: Optional[str] = None, extra: list[str] = ()) -> Verdict:
        self.queries += 1
        text = emit_script(assertions, logic=logic, get_model=get_model,
                           options=list(extra))
        try:
            out = self.config.run_script(text, f"{tag}_{self.queries:04d}")
        except SolverTimeout:
            return Verdict("timeout")
        first, _, rest = out.strip().partition("\n")
        first = first.strip()
        if first == "unsat":
            return Verdict("unsat", raw=out)
        if first == "unknown":
            return Verdict("unknown", raw=out)
        if first != "sat":
            raise SolverCrashed(f"unexpected solver output: {out[:200]}")
        model, inexact = ({}, frozenset())
        if get_model and rest.strip().startswith("("):
            model, inexact = parse_model(rest)
        return Verdict("sat", model, inexact, raw=out)

    def check_sat(self, assertions: list[Term], tag: str = "sat") -> Verdict:
        return self._run(assertions, tag, get_model=True)

    def check_valid(self, premises: list[Term], conclusion: Term,
                    tag: str = "valid") -> Verdict:
        """Validity of (and premises) => conclusion via unsat of the negation.
        The returned verdict is about the *negation* query: unsat == valid."""
        neg = self.arena.app("not", conclusion)
        return self._run(list(premises) + [neg], tag, get_model=True)

    # ------------------------------------------------------------ optimize
    def optimize(self, objective: Term, direction: str,
                 constraints: list[Term], tag: str = "opt") -> Fraction:
        """Exact optimum via solver optimization commands, falling back to
        rational bisection refined to the simplest attained value."""
        assert direction in ("minimize", "maximize")
        try:
            return self._optimize_native(objective, direction, constraints, tag)
        except (SolverCrashed, ModelParseError):
            return self._optimize_bisect(objective, direction, constraints, tag)

    def _optimize_native(self, objective, direction, constraints, tag) -> Fraction:
        self.queries += 1
        obj_name = "__objective"
        decls = set()
        for t in constraints:
            decls |= atoms_of(t)
        decls |= atoms_of(objective)
        lines = []
        for a in sorted(decls, key=lambda x: x.tid):
            lines.append(f"(declare-const {a.name} {a.sort})")
        lines.append(f"(declare-const {obj_name} Real)")
        for t in constraints:
            lines.append(f"(assert {term_to_smt(t)})")
        lines.append(f"(assert (= {obj_name} {term_to_smt(objective)}))")
        lines.append(f"({direction} {obj_name})")
        lines.append("(check-sat)")
        lines.append("(get-objectives)")
        out = self.config.run_script("\n".join(lines) + "\n",
                                     f"{tag}_{self.queries:04d}")
        first, _, rest = out.strip().partition("\n")
        if first.strip() == "unsat":
            raise SolverUnsat("optimization constraints are unsatisfiable")
        if first.strip() != "sat":
            raise SolverCrashed(f"optimizer said {first.strip()!r}")
        if "oo" in rest:
            raise UnboundedObjective(f"{direction} is unbounded")
        sexprs = _parse_sexprs(_tokenize_sexpr(rest[rest.index("("):]))
        for node in sexprs:
            if isinstance(node, list) and node and node[0] == "objectives":
                pair = node[1]
                val_node = pair[1] if isinstance(pair, list) else pair
                if _mentions_epsilon(val_node):
                    return _epsilon_limit(val_node)
                v, _ = _numeral(val_node)
                if v is None:
                    raise ModelParseError(f"cannot read objective {val_node!r}")
                return v
        raise ModelParseError("no objectives in optimizer output")

    def _optimize_bisect(self, objective, direction, constraints, tag) -> Fraction:
        # documented fallback: feasibility probe + doubling + bisection,
        # finished by a simplest-rational exactness check
        sense = 1 if direction == "minimize" else -1
        arena = self.arena
        base = self.check_sat(constraints, tag + "_feas")
        if base.status == "unsat":
            raise SolverUnsat("optimization constraints are unsatisfiable")
        if base.status != "sat":
            raise SolverCrashed("feasibility probe inconclusive")

        def bound(value: Fraction, strict: bool) -> Term:
            ops = {(1, False): "<=", (1, True): "<", (-1, False): ">=", (-1, True): ">"}
            return arena.app(ops[(sense, strict)], objective, arena.const(value))

        def obj_value(model) -> Fraction:
            from ..sym.terms import ground_eval
            env = {a.tid: model[a.name] for a in atoms_of(objective)
                   if a.name in model}
            return Fraction(ground_eval(objective, env))

        best = obj_value(base.model)
        step = Fraction(1)
        while True:
            probe = self.check_sat(
                constraints + [bound(best - sense * step, False)], tag + "_dbl")
            if probe.status == "sat":
                best = obj_value(probe.model)
                step *= 2
                if step > Fraction(2) ** 70:
                    raise UnboundedObjective(f"{direction} appears unbounded")
            elif probe.status == "unsat":
                break
            else:
                raise SolverCrashed("bisection probe inconclusive")
        lo, hi = (best - step, best) if sense > 0 else (best, best + step)
        # `best` is attained; the optimum lies in [lo, hi] (minimize) resp.
        # [lo, hi] (maximize). Narrow, then certify the simplest candidate.
        for _ in range(200):
            cand = simplest_between(lo, hi)
            attained = self.check_sat(
                constraints + [arena.app("=", objective, arena.const(cand))],
                tag + "_hit")
            if attained.status == "sat":
                better = self.check_sat(constraints + [bound(cand, True)],
                                        tag + "_imp")
                if better.status == "unsat":
                    return cand
                if better.status == "sat":
                    improved = obj_value(better.model)
                    if sense > 0:
                        hi = improved
                    else:
                        lo = improved
                else:
                    raise SolverCrashed("bisection probe inconclusive")
            else:
                mid = (lo + hi) / 2
                probe = self.check_sat(constraints + [bound(mid, False)],
                                       tag + "_bis")
                if probe.status == "sat":
                    if sense > 0:
                        hi = obj_value(probe.model)
                    else:
                        lo = obj_value(probe.model)
                else:
                    if sense > 0:
                        lo = mid
                    else:
                        hi = mid
            if hi - lo <= Fraction(1, 2 ** 64):
                from ..errors import SolverCrashed as _SC
                raise _SC("optimum not exactly representable within the "
                          "denominator bound")
        raise SolverCrashed("bisection did not converge")


def _mentions_epsilon(node) -> bool:
    if isinstance(node, str):
        return node == "epsilon"
    return any(_mentions_epsilon(x) for x in node)


def _epsilon_limit(node) -> Fraction:
    """Objective values like (+ 2 epsilon) denote an unattained bound; the
    rational part is the exact infimum/supremum."""
    if isinstance(node, str):
        if node == "epsilon":
            return Fraction(0)
        return Fraction(node)
    head = node[0]
    if head == "+":
        return sum((_epsilon_limit(x) for x in node[1:]), Fraction(0))
    if head == "-" and len(node) == 2:
        return -_epsilon_limit(node[1])
    if head == "*":
        vals = [_epsilon_limit(x) for x in node[1:]]
        out = Fraction(1)
        for v in vals:
            out *= v
        return out
    if head == "/":
        return _epsilon_limit(node[1]) / _epsilon_limit(node[2])
    v, _ = _numeral(node)
    if v is None:
        raise ModelParseError(f"cannot read objective bound {node!r}")
    return v


def simplest_between(lo: Fraction, hi: Fraction) -> Fraction:
    """The rational with the smallest denominator in [lo, hi] (Stern-Brocot)."""
    if lo > hi:
        lo, hi = hi, lo
    from math import floor
    a, b = lo, hi

    def rec(a: Fraction, b: Fraction) -> Fraction:
        ia = Fraction(floor(a))
        if ia >= a:
            return ia
        if floor(a) == floor(b):
            frac = rec(1 / (b - floor(b)), 1 / (a - floor(a)))
            return floor(a) + 1 / frac
        return Fraction(floor(a) + 1)

    return rec(a, b)


