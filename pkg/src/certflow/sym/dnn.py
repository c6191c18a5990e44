"""The symbolic DNN: a finite registry of symbolic neurons plus a growing
constraint conjunction.

Creation registers `curr` and the `prev` neurons an operation needs, binds
every shape member and metadata field of every neuron to fresh atoms,
assumes the user property on each neuron, and encodes the operation's
input/output relation.  Expansion rewrites polyhedral/symbolic members
from single placeholder atoms into explicit sums over a shared pool of
expansion neurons (or fresh noise symbols), recording an equality so
earlier uses stay consistent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import NonExpandableMember, UnsupportedTheory
from ..lattice import CfType, ListType, POLYEXP, REAL, SYMEXP, CT, INT, BOOL, is_subtype
from ..syntax import DnnOp, PrevShape
from .terms import Arena, BOOL as TBOOL, SLin, SList, SNeuron, SymVal, Term


@dataclass
class NeuronRec:
    name: str
    atom: Term
    members: dict[str, SymVal] = field(default_factory=dict)
    metadata: dict[str, SymVal] = field(default_factory=dict)


class SymbolicDnn:
    """(D_S, C): neuron registry with symbolic bindings and the constraint
    conjunction, owned by a single verification task."""

    def __init__(self, arena: Arena, tau: dict[str, CfType], n_prev: int,
                 n_sym: int, prop_fn: Optional[Callable] = None):
        self.arena = arena
        self.tau = dict(tau)
        self.n_prev = n_prev
        self.n_sym = n_sym
        self.neurons: dict[str, NeuronRec] = {}
        self.constraints: list[Term] = []
        self.prop_fn = prop_fn  # NeuronRec -> list[Term], wired by the engine
        self.expansion_names: list[str] = []
        self.op: Optional[DnnOp] = None
        self.prev_names: list[str] = []
        self._expanded: set[tuple[str, str]] = set()

    # ----------------------------------------------------------------- C
    def assume(self, t: Term) -> None:
        if t.sort != TBOOL:
            raise AssertionError("assumed constraint must be boolean")
        if t.kind == "const" and t.value is True:
            return
        self.constraints.append(t)

    def snapshot(self) -> int:
        return len(self.constraints)

    # ------------------------------------------------------------ registry
    def add_neuron(self, name: str) -> NeuronRec:
        """Register a neuron with fresh member/metadata atoms and assume the
        property on it; a no-op when the neuron already exists."""
        rec = self.neurons.get(name)
        if rec is not None:
            return rec
        a = self.arena
        rec = NeuronRec(name, a.atom(f"{name}_val", "neuron"))
        for member, mtype in self.tau.items():
            rec.members[member] = self._fresh_member(name, member, mtype)
        rec.metadata["bias"] = a.atom(f"{name}_bias", "const")
        rec.metadata["layer"] = a.atom(f"{name}_layer", "const")
        rec.metadata["weight"] = SList(tuple(
            a.atom(f"{name}_w{i}", "const") for i in range(self.n_prev)))
        rec.metadata["equations"] = SList(())
        self.neurons[name] = rec
        if self.prop_fn is not None:
            for conjunct in self.prop_fn(rec):
                self.assume(conjunct)
        return rec

    def _fresh_member(self, name: str, member: str, mtype: CfType) -> SymVal:
        a = self.arena
        label = f"{name}_{member}"
        if mtype in (POLYEXP, SYMEXP):
            return a.atom(label, "expr")
        if mtype is CT:
            return a.atom(label, "expr", TBOOL)
        if mtype is BOOL:
            return a.atom(label, "const", TBOOL)
        if is_subtype(mtype, REAL):
            return a.atom(label, "const")
        if isinstance(mtype, ListType):
            return SList(tuple(
                self._fresh_member(name, f"{member}{i}", mtype.elem)
                for i in range(self.n_sym)))
        raise AssertionError(f"member type {mtype}")

    def member(self, name: str, member: str) -> SymVal:
        return self.neurons[name].members[member]

    def set_member(self, name: str, member: str, value: SymVal) -> None:
        self.neurons[name].members[member] = value

    def metadata(self, name: str, key: str) -> SymVal:
        return self.neurons[name].metadata[key]

    def sneuron(self, name: str) -> SNeuron:
        rec = self.neurons[name]
        return SNeuron(rec.name, rec.atom)

    # ----------------------------------------------------------- expansion
    def expansion_pool(self) -> list[NeuronRec]:
        """The shared expansion-neuron set; all polyhedral members expand
        over the same pool."""
        if not self.expansion_names:
            for i in range(1, self.n_sym + 1):
                nm = f"en{i}"
                self.add_neuron(nm)
                self.expansion_names.append(nm)
        return [self.neurons[nm] for nm in self.expansion_names]

    def is_member_expanded(self, name: str, member: str) -> bool:
        return (name, member) in self._expanded or \
            isinstance(self.member(name, member), SLin)

    def expand_member(self, name: str, member: str) -> None:
        """Rebind a PolyExp member to a fresh-coefficient sum over the
        expansion pool, or a SymExp member to a sum over fresh noise symbols.
        Idempotent; records `old_atom == sum` so earlier uses agree."""
        mtype = self.tau.get(member)
        if mtype not in (POLYEXP, SYMEXP):
            raise NonExpandableMember(
                f"member {member!r} of type {mtype} cannot be expanded")
        if self.is_member_expanded(name, member):
            return
        a = self.arena
        old = self.member(name, member)
        label = f"{name}_{member}"
        if mtype is POLYEXP:
            pool = self.expansion_pool()
            const = a.atom(f"{label}_c0", "const")
            items = []
            for i, rec in enumerate(pool, 1):
                items.append((a.atom(f"{label}_c{i}", "const"), rec.atom))
            lin = SLin(const, tuple(sorted(items, key=lambda p: p[1].tid)))
        else:
            const = a.atom(f"{label}_c0", "const")
            items = []
            for i in range(1, self.n_sym + 1):
                eps = a.atom(f"{label}_e{i}", "eps")
                self.assume(a.app("and",
                                  a.app("<=", a.const(-1), eps),
                                  a.app("<=", eps, a.const(1))))
                items.append((a.atom(f"{label}_c{i}", "const"), eps))
            lin = SLin(const, tuple(sorted(items, key=lambda p: p[1].tid)))
        self.set_member(name, member, lin)
        self._expanded.add((name, member))
        if isinstance(old, Term) and old.kind == "atom":
            from .terms import val_term
            self.assume(a.app("=", old, val_term(a, lin)))

    # ------------------------------------------------------------ creation
    def create(self, op: DnnOp) -> None:
        """Register curr and prev neurons for `op` and encode its concrete
        input/output relation."""
        if op in (DnnOp.SIGMOID, DnnOp.TANH):
            raise UnsupportedTheory(
                f"{op.value}: verification queries leave the decidable fragment")
        self.op = op
        a = self.arena
        curr = self.add_neuron("curr")
        shape = op.prev_shape
        if shape is PrevShape.SINGLE:
            self.prev_names = ["prev"]
        elif shape is PrevShape.PAIR:
            self.prev_names = ["prev0", "prev1"]
        else:
            self.prev_names = [f"prev{i}" for i in range(1, self.n_prev + 1)]
        prevs = [self.add_neuron(nm) for nm in self.prev_names]
        self.assume(self._op_relation(op, curr, prevs))

    def _op_relation(self, op: DnnOp, curr: NeuronRec,
                     prevs: list[NeuronRec]) -> Term:
        a = self.arena
        c = curr.atom
        if op.is_reversed:
            return self._rev_relation(op, curr, prevs)
        ps = [p.atom for p in prevs]
        if op in (DnnOp.AFFINE, DnnOp.DOTPRODUCT):
            weights = self.metadata("curr", "weight").items
            total = curr.metadata["bias"] if op is DnnOp.AFFINE else a.const(0)
            for w, p in zip(weights, ps):
                total = a.add(total, a.mul(w, p))
            return a.app("=", c, total)
        if op is DnnOp.RELU:
            return a.app("and",
                         a.implies(a.app("<=", ps[0], a.const(0)),
                                   a.app("=", c, a.const(0))),
                         a.implies(a.app(">", ps[0], a.const(0)),
                                   a.app("=", c, ps[0])))
        if op is DnnOp.RELU6:
            x = ps[0]
            return a.app("=", c, a.ite(a.app("<=", x, a.const(0)), a.const(0),
                                       a.ite(a.app(">=", x, a.const(6)),
                                             a.const(6), x)))
        if op is DnnOp.ABS:
            return a.app("=", c, a.ite(a.app(">=", ps[0], a.const(0)),
                                       ps[0], a.app("neg", ps[0])))
        if op is DnnOp.HARDSIGMOID:
            x = ps[0]
            lin = a.add(a.app("/", x, a.const(6)), a.const("1/2"))
            return a.app("=", c, a.ite(a.app("<=", x, a.const(-3)), a.const(0),
                                       a.ite(a.app(">=", x, a.const(3)),
                                             a.const(1), lin)))
        if op is DnnOp.HARDTANH:
            x = ps[0]
            return a.app("=", c, a.ite(a.app("<=", x, a.const(-1)), a.const(-1),
                                       a.ite(a.app(">=", x, a.const(1)),
                                             a.const(1), x)))
        if op is DnnOp.HARDSWISH:
            x = ps[0]
            mid = a.app("/", a.mul(x, a.add(x, a.const(3))), a.const(6))
            return a.app("=", c, a.ite(a.app("<=", x, a.const(-3)), a.const(0),
                                       a.ite(a.app(">=", x, a.const(3)), x, mid)))
        if op is DnnOp.MAXPOOL or op is DnnOp.MAX:
            ge = [a.app(">=", c, p) for p in ps]
            eq = [a.app("=", c, p) for p in ps]
            disj = eq[0]
            for t in eq[1:]:
                disj = a.app("or", disj, t)
            return a.app("and", a.conj(ge), disj)
        if op is DnnOp.MINPOOL or op is DnnOp.MIN:
            le = [a.app("<=", c, p) for p in ps]
            eq = [a.app("=", c, p) for p in ps]
            disj = eq[0]
            for t in eq[1:]:
                disj = a.app("or", disj, t)
            return a.app("and", a.conj(le), disj)
        if op is DnnOp.AVGPOOL:
            total = a.const(0)
            for p in ps:
                total = a.add(total, p)
            return a.app("=", c, a.app("/", total, a.const(len(ps))))
        if op in (DnnOp.ADD, DnnOp.NEURON_ADD):
            return a.app("=", c, a.add(ps[0], ps[1]))
        if op is DnnOp.MULT:
            return a.app("=", c, a.mul(ps[0], ps[1]))
        raise UnsupportedTheory(f"no symbolic relation for {op.value}")

    def _rev_relation(self, op: DnnOp, curr: NeuronRec,
                      prevs: list[NeuronRec]) -> Term:
        """Reversed operations constrain prev = forward(curr); for affine the
        other inputs of each successor are folded into a fresh constant, and
        the `equations` metadata is bound to the same relations."""
        a = self.arena
        c = curr.atom
        if op is DnnOp.REV_AFFINE:
            weights = self.metadata("curr", "weight").items
            conjuncts = []
            eqs = []
            for i, (p, w) in enumerate(zip(prevs, weights)):
                rest = a.atom(f"rev_rest{i}", "const")
                rel = a.app("=", p.atom, a.add(a.mul(w, c), rest))
                conjuncts.append(rel)
                eqs.append(rel)
            curr.metadata["equations"] = SList(tuple(eqs))
            return a.conj(conjuncts)
        if op is DnnOp.REV_RELU:
            p = prevs[0].atom
            return a.app("=", p, a.ite(a.app(">", c, a.const(0)), c, a.const(0)))
        if op is DnnOp.REV_ABS:
            p = prevs[0].atom
            return a.app("=", p, a.ite(a.app(">=", c, a.const(0)), c, a.app("neg", c)))
        if op is DnnOp.REV_HARDSWISH:
            p = prevs[0].atom
            mid = a.app("/", a.mul(c, a.add(c, a.const(3))), a.const(6))
            return a.app("=", p, a.ite(a.app("<=", c, a.const(-3)), a.const(0),
                                       a.ite(a.app(">=", c, a.const(3)), c, mid)))
        if op is DnnOp.REV_MAXPOOL:
            # each successor pool contains curr, so every prev >= curr
            return a.conj([a.app(">=", p.atom, c) for p in prevs])
        raise UnsupportedTheory(f"no symbolic relation for {op.value}")

    # ------------------------------------------------------------ dumping
    def dump(self) -> str:
        from .terms import dump_symval, to_sexpr
        lines = [f"(bounds :n_prev {self.n_prev} :n_sym {self.n_sym})"]
        for name, rec in self.neurons.items():
            lines.append(f"(neuron {name} {to_sexpr(rec.atom)}")
            for m, v in rec.members.items():
                lines.append(f"  (member {m} {dump_symval(v)})")
            for m, v in rec.metadata.items():
                lines.append(f"  (metadata {m} {dump_symval(v)})")
            lines.append(")")
        lines.append("(constraints")
        for t in self.constraints:
            lines.append(f"  {to_sexpr(t)}")
        lines.append(")")
        return "\n".join(lines)
