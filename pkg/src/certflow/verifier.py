"""Per-operation soundness verification.

For each guard case of a transformer rule the checker builds

    p  =  property-on-all-neurons  /\  operation semantics  /\  expansion
          and side constraints     /\  path condition
    q  =  property instantiated on the updated shape of curr

and dispatches validity of ``p => q``.  `<>` constraints are Skolemized in
the antecedent and existentially quantified in the consequent; when the
symbolic side is affine in its noise symbols the existential is eliminated
into an exact interval check, which keeps most corpus queries quantifier
free.  Counterexample models are replayed on a concrete micro-network.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import (
    CfError, InvariantNotVerified, ReplayMismatch, RuntimeFault,
    UnsatSolverConstraint, UnsupportedTheory,
)
from .interp import Interp
from .network import ConcreteDNN, Neuron
from .smt.driver import SmtBackend, SolverConfig
from .smt.strategy import ValidityChecker
from .syntax import (
    DnnOp, PrevShape, Program, RetIf, RetTuple, TransformerDef, TransformerRet,
)
from .sym.dnn import SymbolicDnn
from .sym.semantics import SymEngine
from .sym.terms import (
    Arena, SList, SLin, SNeuron, SymVal, Term, affine_decompose, atoms_of,
    val_term,
)
from .typecheck import Context
from .values import VPoly, ct_conjuncts, ct_holds, render_value


@dataclass
class Case:
    index: int
    path: list[Term]
    ret: RetTuple


@dataclass
class VerificationQuery:
    op: DnnOp
    case_index: int
    premises: list[Term]
    consequent: Term
    logic: str


@dataclass
class CaseVerdict:
    op: str
    case: int
    verdict: str  # Sound | Counterexample | Unknown | InvariantFailure | UnsupportedTheory | SolverConstraintUnsat
    time_ms: float = 0.0
    detail: str = ""
    model: dict = field(default_factory=dict)
    replay: Optional[dict] = None
    query_tag: str = ""

    def to_json(self) -> dict:
        out = {"op": self.op, "case": self.case, "verdict": self.verdict,
               "time_ms": round(self.time_ms, 3)}
        if self.detail:
            out["detail"] = self.detail
        if self.model:
            out["model"] = {k: str(v) for k, v in sorted(self.model.items())}
        if self.replay is not None:
            out["replay"] = self.replay
        if self.query_tag:
            out["query_path"] = self.query_tag
        return out


def _abs(arena: Arena, t: Term) -> Term:
    return arena.ite(arena.app(">=", t, arena.const(0)), t, arena.app("neg", t))


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


def enumerate_cases(ret: TransformerRet, engine: SymEngine, sigma: dict) -> list[Case]:
    """Flatten nested guard ternaries into disjoint (path, tuple) cases;
    guards are evaluated symbolically once and shared along the tree."""
    arena = engine.arena
    cases: list[Case] = []

    def rec(node: TransformerRet, path: list[Term]):
        if isinstance(node, RetTuple):
            cases.append(Case(len(cases), list(path), node))
            return
        assert isinstance(node, RetIf)
        guard = val_term(arena, engine.eval(node.cond, sigma))
        rec(node.then, path + [guard])
        rec(node.other, path + [arena.app("not", guard)])

    rec(ret, [])
    return cases


def transformer_for_op(program: Program, op: DnnOp) -> tuple[TransformerDef, TransformerRet]:
    found = []
    for td in program.transformers:
        for o, ret in td.rules:
            if o is op:
                found.append((td, ret))
    if not found:
        raise RuntimeFault(f"no transformer defines operation {op.value}")
    return found[0]


class TransformerVerifier:
    """One verification task: a (program, operation) pair at fixed bounds."""

    def __init__(self, program: Program, ctx: Context, op: DnnOp,
                 n_prev: int = 2, n_sym: int = 2,
                 solver: Optional[SolverConfig] = None,
                 quantified_membership: bool = False):
        self.program = program
        self.ctx = ctx
        self.op = op
        self.arena = Arena()
        self.sdnn = SymbolicDnn(self.arena, ctx.tau, n_prev, n_sym)
        self.backend = SmtBackend(self.arena, solver)
        self.checker = ValidityChecker(self.backend)
        self.engine = SymEngine(program, self.sdnn,
                                check_valid=self._engine_valid,
                                check_sat=self._engine_sat)
        self.quantified_membership = quantified_membership
        self.tdef, self.ret = transformer_for_op(program, op)
        self.members = [name for _, name in program.shape.members]

    # ---------------------------------------------------------- callbacks
    def _engine_valid(self, premises: list[Term], conclusion: Term) -> str:
        premises = [self._lower(t, antecedent=True) for t in premises]
        conclusion = self._lower(conclusion, antecedent=False)
        v = self.checker.check_valid(premises, conclusion, tag="invariant")
        return {"unsat": "valid", "sat": "invalid"}.get(v.status, "unknown")

    def _engine_sat(self, assertions: list[Term]) -> str:
        assertions = [self._lower(t, antecedent=True) for t in assertions]
        return self.backend.check_sat(assertions, tag="contract").status

    # ------------------------------------------------------------ lowering
    def _lower(self, t: Term, antecedent: bool) -> Term:
        """Rewrite `<>` nodes: antecedent occurrences Skolemize their noise
        symbols (they stay free, bounds already recorded); consequent
        occurrences are existential, eliminated to an interval check when
        the symbolic side is affine in its noise symbols."""
        a = self.arena
        memo: dict[int, Term] = {}

        def rec(u: Term) -> Term:
            if u.tid in memo:
                return memo[u.tid]
            if u.kind in ("atom", "const"):
                out = u
            elif u.kind == "exists":
                out = a.exists(u.payload, rec(u.args[0]))
            elif u.op == "diamond":
                out = self._lower_diamond(u, antecedent)
            else:
                out = a.app(u.op, *[rec(x) for x in u.args])
            memo[u.tid] = out
            return out

        return rec(t)

    def _lower_diamond(self, u: Term, antecedent: bool) -> Term:
        a = self.arena
        lhs, rhs = u.args
        eps = sorted((x for x in atoms_of(rhs) if x.role == "eps"),
                     key=lambda x: x.tid)
        if antecedent or not eps:
            return a.app("=", lhs, rhs)
        dec = affine_decompose(a, rhs, {x.tid for x in eps})
        if dec is not None and not self.quantified_membership:
            const, items = dec
            radius = a.const(0)
            for _, (atom, coeff) in sorted(items.items()):
                radius = a.add(radius, _abs(a, coeff))
            return a.app("<=", _abs(a, a.app("-", lhs, const)), radius)
        # general form: rename the bound symbols to avoid capture
        subst = {x.tid: a.fresh(f"q_{x.name}", "eps") for x in eps}
        body = _substitute(a, rhs, subst)
        bounds = [a.app("and", a.app("<=", a.const(-1), v), a.app("<=", v, a.const(1)))
                  for v in subst.values()]
        return a.exists(tuple(subst.values()),
                        a.conj(bounds + [a.app("=", lhs, body)]))

    # ------------------------------------------------------------- binding
    def base_sigma(self) -> dict:
        shape = self.op.prev_shape
        sigma = {"curr": self.sdnn.sneuron("curr")}
        if shape is PrevShape.SINGLE:
            sigma["prev"] = self.sdnn.sneuron("prev")
        elif shape is PrevShape.PAIR:
            sigma["prev0"] = sigma["prev_0"] = self.sdnn.sneuron("prev0")
            sigma["prev1"] = sigma["prev_1"] = self.sdnn.sneuron("prev1")
        else:
            sigma["prev"] = SList(tuple(self.sdnn.sneuron(nm)
                                        for nm in self.sdnn.prev_names))
        return sigma

    # -------------------------------------------------------------- verify
    def verify(self) -> list[CaseVerdict]:
        try:
            self.sdnn.create(self.op)
        except UnsupportedTheory as exc:
            return [CaseVerdict(self.op.value, 0, "UnsupportedTheory", detail=str(exc))]
        sigma = self.base_sigma()
        out: list[CaseVerdict] = []
        started = time.monotonic()
        try:
            self._expand_ret(self.ret, sigma)
            cases = enumerate_cases(self.ret, self.engine, sigma)
        except UnsupportedTheory as exc:
            return [CaseVerdict(self.op.value, 0, "UnsupportedTheory", detail=str(exc))]
        except InvariantNotVerified as exc:
            return [CaseVerdict(self.op.value, 0, "InvariantFailure",
                                detail=str(exc),
                                time_ms=(time.monotonic() - started) * 1000)]
        for case in cases:
            out.append(self._verify_case(case, sigma))
        return out

    def _expand_ret(self, ret: TransformerRet, sigma: dict) -> None:
        if isinstance(ret, RetTuple):
            for x in ret.exprs:
                self.engine.expand_for(x, sigma)
            return
        assert isinstance(ret, RetIf)
        self.engine.expand_for(ret.cond, sigma)
        self._expand_ret(ret.then, sigma)
        self._expand_ret(ret.other, sigma)

    def build_query(self, case: Case, sigma: dict) -> VerificationQuery:
        slots = [self.engine.eval(x, sigma) for x in case.ret.exprs]
        q = self._consequent(slots)
        premises = [self._lower(t, antecedent=True) for t in self.sdnn.constraints]
        premises += [self._lower(t, antecedent=True) for t in case.path]
        from .smt.emit import classify_logic
        query = VerificationQuery(self.op, case.index, premises, q,
                                  classify_logic(premises + [q]))
        return query

    def _consequent(self, slots: list[SymVal]) -> Term:
        sdnn = self.sdnn
        rec = sdnn.neurons["curr"]
        saved = dict(rec.members)
        try:
            rec.members = dict(zip(self.members, slots))
            conjuncts = self.engine.property_conjuncts(rec)
        finally:
            rec.members = saved
        lowered = [self._lower(t, antecedent=False) for t in conjuncts]
        return self.arena.conj(lowered)

    def _verify_case(self, case: Case, sigma: dict) -> CaseVerdict:
        t0 = time.monotonic()
        tag = f"{self.tdef.name}_{self.op.value}_case{case.index}"
        try:
            query = self.build_query(case, sigma)
        except InvariantNotVerified as exc:
            return CaseVerdict(self.op.value, case.index, "InvariantFailure",
                               detail=str(exc),
                               time_ms=(time.monotonic() - t0) * 1000)
        except UnsatSolverConstraint as exc:
            return CaseVerdict(self.op.value, case.index, "SolverConstraintUnsat",
                               detail=str(exc),
                               time_ms=(time.monotonic() - t0) * 1000)
        except UnsupportedTheory as exc:
            return CaseVerdict(self.op.value, case.index, "UnsupportedTheory",
                               detail=str(exc),
                               time_ms=(time.monotonic() - t0) * 1000)
        v = self.checker.check_valid(query.premises, query.consequent, tag=tag)
        ms = (time.monotonic() - t0) * 1000
        if v.status == "unsat":
            return CaseVerdict(self.op.value, case.index, "Sound", time_ms=ms,
                               query_tag=tag)
        if v.status in ("unknown", "timeout"):
            return CaseVerdict(self.op.value, case.index, "Unknown",
                               detail=v.status, time_ms=ms, query_tag=tag)
        replay = self.replay(case, v.model)
        return CaseVerdict(self.op.value, case.index, "Counterexample",
                           time_ms=ms, model={k: v.model[k] for k in sorted(v.model)},
                           replay=replay, query_tag=tag)

    # -------------------------------------------------------------- replay
    def _model_value(self, model: dict, atom: Term) -> Fraction:
        v = model.get(atom.name, Fraction(0))
        if isinstance(v, bool):
            return v
        return Fraction(v)

    def _member_concrete(self, model: dict, value: SymVal, name_to_id: dict):
        from .sym.terms import ground_eval, SLin as _SLin
        if isinstance(value, _SLin):
            env = {a.tid: self._model_value(model, a)
                   for a in self._value_atoms(value)}
            coeffs = {}
            const = Fraction(ground_eval(value.const, env))
            symc = Fraction(0)
            sym_coeffs = {}
            for coeff, atom in value.items:
                c = Fraction(ground_eval(coeff, env))
                if atom.role == "neuron":
                    nid = name_to_id[self._neuron_name(atom)]
                    coeffs[nid] = coeffs.get(nid, Fraction(0)) + c
                else:  # noise symbol
                    sym_coeffs[atom.tid] = sym_coeffs.get(atom.tid, Fraction(0)) + c
            if sym_coeffs:
                from .values import VSym
                return VSym(const, sym_coeffs)
            return VPoly(const, coeffs)
        if isinstance(value, Term):
            if value.sort == "Bool":
                from .sym.terms import ground_eval as ge
                env = {a.tid: self._model_value(model, a) for a in atoms_of(value)}
                try:
                    return bool(ge(value, env))
                except Exception:
                    return True
            env = {a.tid: self._model_value(model, a) for a in atoms_of(value)}
            from .sym.terms import ground_eval as ge
            return Fraction(ge(value, env))
        if isinstance(value, SList):
            return [self._member_concrete(model, x, name_to_id) for x in value.items]
        raise ReplayMismatch(f"cannot concretize member value {value!r}")

    def _value_atoms(self, value: SymVal) -> set:
        out = set(atoms_of(value.const))
        for coeff, atom in value.items:
            out |= atoms_of(coeff)
        return out

    def _neuron_name(self, atom: Term) -> str:
        for nm, rec in self.sdnn.neurons.items():
            if rec.atom.tid == atom.tid:
                return nm
        raise ReplayMismatch(f"unregistered neuron atom {atom.name}")

    def micro_network(self, model: dict) -> tuple[ConcreteDNN, dict]:
        """Instantiate the symbolic DNN at a model: prev/expansion neurons
        become inputs, curr computes the operation."""
        sdnn = self.sdnn
        name_to_id = {}
        for i, nm in enumerate(sorted(sdnn.neurons)):
            name_to_id[nm] = i
        neurons = []
        op = self.op
        for nm, rec in sdnn.neurons.items():
            nid = name_to_id[nm]
            layer_v = model.get(f"{nm}_layer", Fraction(0))
            layer = int(layer_v) if not isinstance(layer_v, bool) else 0
            if nm == "curr" and not op.is_reversed:
                weight = []
                if op.prev_shape is PrevShape.LIST:
                    weight = [self._model_value(model, w)
                              for w in sdnn.metadata("curr", "weight").items]
                neurons.append(Neuron(
                    nid=nid, kind=op,
                    prev=[name_to_id[p] for p in sdnn.prev_names],
                    weight=weight,
                    bias=self._model_value(model, sdnn.neurons["curr"].metadata["bias"]),
                    layer=layer))
            elif op.is_reversed and nm in sdnn.prev_names:
                # prev_j = forward(curr) with the rest folded into the bias
                from .syntax import dnn_op_from_name
                fwd = dnn_op_from_name(op.value[4:])
                idx = sdnn.prev_names.index(nm)
                if fwd is DnnOp.AFFINE:
                    w = sdnn.metadata("curr", "weight").items[idx]
                    rest = model.get(f"rev_rest{idx}", Fraction(0))
                    neurons.append(Neuron(
                        nid=nid, kind=DnnOp.AFFINE, prev=[name_to_id["curr"]],
                        weight=[self._model_value(model, w)],
                        bias=Fraction(rest), layer=layer))
                else:
                    neurons.append(Neuron(nid=nid, kind=fwd,
                                          prev=[name_to_id["curr"]],
                                          weight=[], bias=Fraction(0), layer=layer))
            else:
                neurons.append(Neuron(nid=nid, kind=DnnOp.INPUT, prev=[],
                                      weight=[], bias=Fraction(0), layer=layer,
                                      is_input=True))
        dnn = ConcreteDNN(neurons, self.ctx.tau)
        for nm, rec in sdnn.neurons.items():
            record = {}
            for member in self.members:
                record[member] = self._member_concrete(model, rec.members[member],
                                                       name_to_id)
            dnn.set_shape(name_to_id[nm], record)
        return dnn, name_to_id

    def replay(self, case: Case, model: dict) -> dict:
        """Run the counterexample concretely and name the violated conjunct."""
        try:
            return self._replay_inner(case, model)
        except CfError as exc:
            return {"confirmed": False,
                    "diagnostic": f"replay failed: {exc}"}

    def _replay_inner(self, case: Case, model: dict) -> dict:
        dnn, name_to_id = self.micro_network(model)
        itp = Interp(self.program, dnn)
        rho = {"curr": VPoly.neuron(name_to_id["curr"])}
        shape = self.op.prev_shape
        if shape is PrevShape.SINGLE:
            rho["prev"] = VPoly.neuron(name_to_id["prev"])
        elif shape is PrevShape.PAIR:
            rho["prev0"] = rho["prev_0"] = VPoly.neuron(name_to_id["prev0"])
            rho["prev1"] = rho["prev_1"] = VPoly.neuron(name_to_id["prev1"])
        else:
            rho["prev"] = [VPoly.neuron(name_to_id[nm])
                           for nm in self.sdnn.prev_names]
        values = itp.eval_ret(case.ret, rho)
        curr_id = name_to_id["curr"]
        dnn.set_shape(curr_id, dict(zip(self.members, values)))
        prop_val = itp.eval(self.program.shape.prop,
                            {"curr": VPoly.neuron(curr_id)})
        point = {name_to_id[nm]: self._model_value(model, rec.atom)
                 for nm, rec in self.sdnn.neurons.items()}
        conjuncts = ct_conjuncts(prop_val)
        violated = []
        for i, ct in enumerate(conjuncts):
            if not ct_holds(ct, point):
                violated.append({"index": i, "constraint": render_value(ct)})
        if not violated:
            raise ReplayMismatch(
                "model violates the symbolic query but the concrete replay "
                "satisfies the property (possible lowering bug)")
        return {
            "confirmed": True,
            "violated": violated,
            "new_shape": {m: render_value(v)
                          for m, v in zip(self.members, values)},
            "point": {nm: str(self._model_value(model, rec.atom))
                      for nm, rec in sorted(self.sdnn.neurons.items())},
        }


def verify_transformer(program: Program, ctx: Context, op: DnnOp,
                       n_prev: int = 2, n_sym: int = 2,
                       solver: Optional[SolverConfig] = None) -> list[CaseVerdict]:
    """Verify one operation's transformer; one verdict per guard case."""
    task = TransformerVerifier(program, ctx, op, n_prev, n_sym, solver)
    return task.verify()


def overall_verdict(verdicts: list[CaseVerdict]) -> str:
    states = {v.verdict for v in verdicts}
    if states == {"Sound"}:
        return "Sound"
    for bad in ("Counterexample", "InvariantFailure", "UnsupportedTheory",
                "SolverConstraintUnsat", "Unknown"):
        if bad in states:
            return bad
    return "Unknown"
