"""Concrete DNNs: JSON loading, validation, and reference forward execution.

File format (all numerics are decimal strings so nothing is read through
binary floats)::

    {"neurons": [{"id": 0, "kind": "Affine", "prev": [1, 2],
                  "weight": ["1.5", "-2"], "bias": "0.25", "layer": 1,
                  "input": false, "output": false}, ...]}

Input-shape files map input-neuron ids to member values; polyhedral
members may be written in DSL syntax over neuron names ``n<id>``::

    {"0": {"l": "0", "u": "1", "L": "n0", "U": "n0"}}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import mpmath

from .errors import ArityError, CycleError, RuntimeFault, SchemaError, UnsetShapeRead
from .lattice import CfType, ListType, POLYEXP, REAL, SYMEXP, CT, is_subtype
from .parser import parse_expr
from .syntax import Binary, Const, DnnOp, Expr, Unary, Var, dnn_op_from_name
from .values import CtCmp, VPoly, VSym, Value, is_number, value_type

UNSET = object()  # distinguished pre-Flow shape sentinel


def parse_rational(s) -> Fraction:
    if isinstance(s, bool):
        raise SchemaError(f"expected a numeric string, got {s!r}")
    if isinstance(s, int):
        return Fraction(s)
    if isinstance(s, str):
        try:
            return Fraction(s)
        except (ValueError, ZeroDivisionError) as exc:
            raise SchemaError(f"bad numeric literal {s!r}: {exc}") from None
    raise SchemaError(f"expected a numeric string, got {s!r}")


@dataclass
class Neuron:
    nid: int
    kind: DnnOp
    prev: list[int]
    weight: list[Fraction]
    bias: Fraction
    layer: int
    is_input: bool = False
    is_output: bool = False
    shape: dict[str, object] = field(default_factory=dict)
    equations: list = field(default_factory=list)


class ConcreteDNN:
    """A DAG of neurons with metadata and per-neuron abstract-shape records."""

    def __init__(self, neurons: list[Neuron], tau: dict[str, CfType]):
        self.neurons: dict[int, Neuron] = {}
        for n in neurons:
            if n.nid in self.neurons:
                raise SchemaError(f"duplicate neuron id {n.nid}")
            self.neurons[n.nid] = n
        self.tau = dict(tau)
        self.succs: dict[int, list[int]] = {nid: [] for nid in self.neurons}
        for n in neurons:
            for p in n.prev:
                if p not in self.neurons:
                    raise SchemaError(f"neuron {n.nid} references unknown neuron {p}")
                self.succs[p].append(n.nid)
        for lst in self.succs.values():
            lst.sort()
        self._validate()
        self.topo = self._topo_order()
        self._materialize_equations()

    # ------------------------------------------------------------------
    def _validate(self) -> None:
        for n in self.neurons.values():
            if n.kind is DnnOp.INPUT:
                if n.prev:
                    raise SchemaError(f"input neuron {n.nid} has predecessors")
            if n.kind.is_reversed:
                raise SchemaError(f"neuron {n.nid} uses reversed op {n.kind.value}")
            if n.kind in (DnnOp.AFFINE, DnnOp.DOTPRODUCT) and len(n.weight) != len(n.prev):
                raise ArityError(
                    f"neuron {n.nid}: {len(n.weight)} weights for {len(n.prev)} inputs")
            if n.kind.prev_shape.value == "pair" and len(n.prev) != 2:
                raise ArityError(f"neuron {n.nid}: {n.kind.value} needs 2 inputs")
            if n.kind.prev_shape.value == "single" and n.kind is not DnnOp.INPUT \
                    and len(n.prev) != 1:
                raise ArityError(f"neuron {n.nid}: {n.kind.value} needs 1 input")

    def _topo_order(self) -> list[int]:
        indeg = {nid: len(n.prev) for nid, n in self.neurons.items()}
        ready = sorted(nid for nid, d in indeg.items() if d == 0)
        order: list[int] = []
        from heapq import heapify, heappop, heappush
        heapify(ready)
        while ready:
            nid = heappop(ready)
            order.append(nid)
            for s in self.succs[nid]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    heappush(ready, s)
        if len(order) != len(self.neurons):
            raise CycleError("the network graph has a cycle")
        return order

    def _materialize_equations(self) -> None:
        # One equation per affine successor: succ == sum(w_i * pred_i) + b.
        for n in self.neurons.values():
            eqs = []
            for sid in self.succs[n.nid]:
                s = self.neurons[sid]
                if s.kind in (DnnOp.AFFINE, DnnOp.DOTPRODUCT):
                    rhs = VPoly(s.bias if s.kind is DnnOp.AFFINE else 0,
                                {p: w for p, w in zip(s.prev, s.weight)})
                    eqs.append(CtCmp("==", VPoly.neuron(sid), rhs))
            n.equations = eqs

    # ------------------------------------------------------------------
    def shape_of(self, nid: int, member: str):
        n = self.neurons[nid]
        v = n.shape.get(member, UNSET)
        if v is UNSET:
            raise UnsetShapeRead(
                f"neuron {nid}: shape member {member!r} read before it was computed")
        return v

    def set_shape(self, nid: int, values: dict[str, object]) -> None:
        self.neurons[nid].shape = dict(values)

    def inputs(self) -> list[int]:
        return sorted(n.nid for n in self.neurons.values() if n.is_input)

    def outputs(self) -> list[int]:
        return sorted(n.nid for n in self.neurons.values() if n.is_output)

    # ------------------------------------------------------------------
    def forward(self, point: dict[int, Fraction]) -> dict[int, Fraction]:
        """Exact forward execution from input values; the reference semantics
        of each operation (Sigmoid/Tanh evaluated in high-precision binary
        and rounded to dyadic rationals at ~1e-36)."""
        vals: dict[int, Fraction] = {}
        for nid in self.topo:
            n = self.neurons[nid]
            if n.kind is DnnOp.INPUT:
                if nid not in point:
                    raise RuntimeFault(f"no input value for neuron {nid}")
                vals[nid] = Fraction(point[nid])
                continue
            xs = [vals[p] for p in n.prev]
            vals[nid] = op_value(n.kind, xs, n.weight, n.bias)
        return vals


def _dyadic(x: "mpmath.mpf") -> Fraction:
    scaled = mpmath.floor(mpmath.mpf(x) * (1 << 120))
    return Fraction(int(scaled), 1 << 120)


def op_value(kind: DnnOp, xs: list[Fraction], weight: list[Fraction],
             bias: Fraction) -> Fraction:
    if kind is DnnOp.AFFINE:
        return sum((w * x for w, x in zip(weight, xs)), bias)
    if kind is DnnOp.DOTPRODUCT:
        return sum((w * x for w, x in zip(weight, xs)), Fraction(0))
    if kind is DnnOp.RELU:
        return max(xs[0], Fraction(0))
    if kind is DnnOp.RELU6:
        return min(max(xs[0], Fraction(0)), Fraction(6))
    if kind is DnnOp.ABS:
        return abs(xs[0])
    if kind is DnnOp.HARDSIGMOID:
        return min(max(xs[0] / 6 + Fraction(1, 2), Fraction(0)), Fraction(1))
    if kind is DnnOp.HARDTANH:
        return min(max(xs[0], Fraction(-1)), Fraction(1))
    if kind is DnnOp.HARDSWISH:
        x = xs[0]
        if x <= -3:
            return Fraction(0)
        if x >= 3:
            return x
        return x * (x + 3) / 6
    if kind is DnnOp.SIGMOID:
        with mpmath.workdps(50):
            x = mpmath.mpf(xs[0].numerator) / xs[0].denominator
            return _dyadic(1 / (1 + mpmath.exp(-x)))
    if kind is DnnOp.TANH:
        with mpmath.workdps(50):
            x = mpmath.mpf(xs[0].numerator) / xs[0].denominator
            return _dyadic(mpmath.tanh(x))
    if kind is DnnOp.MAXPOOL:
        return max(xs)
    if kind is DnnOp.MINPOOL:
        return min(xs)
    if kind is DnnOp.AVGPOOL:
        return sum(xs, Fraction(0)) / len(xs)
    if kind in (DnnOp.MAX,):
        return max(xs[0], xs[1])
    if kind in (DnnOp.MIN,):
        return min(xs[0], xs[1])
    if kind in (DnnOp.ADD, DnnOp.NEURON_ADD):
        return xs[0] + xs[1]
    if kind is DnnOp.MULT:
        return xs[0] * xs[1]
    raise RuntimeFault(f"operation {kind.value} has no concrete network semantics")


# ---------------------------------------------------------------- file I/O


def _eval_shape_expr(e: Expr, dnn: ConcreteDNN):
    """Tiny affine evaluator for input-shape expressions over n<id> names."""
    if isinstance(e, Const):
        v = e.value
        return Fraction(v) if not isinstance(v, bool) else v
    if isinstance(e, Var):
        if e.name.startswith("n") and e.name[1:].isdigit():
            nid = int(e.name[1:])
            if nid not in dnn.neurons:
                raise SchemaError(f"input shape references unknown neuron {e.name}")
            return VPoly.neuron(nid)
        if e.name.startswith("eps") and e.name[3:].isdigit():
            return VSym.sym(int(e.name[3:]))
        raise SchemaError(f"input shape references unknown name {e.name!r}")
    if isinstance(e, Unary) and e.op == "neg":
        from .values import v_neg
        return v_neg(_eval_shape_expr(e.e, dnn))
    if isinstance(e, Binary):
        from .values import v_add, v_compare, v_div, v_mul, v_sub
        a = _eval_shape_expr(e.e1, dnn)
        b = _eval_shape_expr(e.e2, dnn)
        return {"+": v_add, "-": v_sub, "*": v_mul, "/": v_div}.get(
            e.op, lambda x, y: v_compare(e.op, x, y))(a, b)
    raise SchemaError("input-shape expressions are limited to affine arithmetic")


def parse_member_value(text, member_type: CfType, dnn: ConcreteDNN):
    if is_subtype(member_type, REAL):
        return parse_rational(text)
    if member_type in (POLYEXP, SYMEXP) or member_type is CT or \
            isinstance(member_type, ListType):
        e = parse_expr(str(text))
        return _eval_shape_expr(e, dnn)
    raise SchemaError(f"cannot initialize member of type {member_type}")


def load_dnn(dnn_path: str, shape_path: Optional[str],
             tau: dict[str, CfType]) -> ConcreteDNN:
    """Load and validate a network plus the input-layer abstract shapes."""
    with open(dnn_path) as fh:
        doc = json.load(fh)
    dnn = dnn_from_dict(doc, tau)
    if shape_path is not None:
        with open(shape_path) as fh:
            shapes = json.load(fh)
        apply_input_shapes(dnn, shapes)
    return dnn


def dnn_from_dict(doc: dict, tau: dict[str, CfType]) -> ConcreteDNN:
    if not isinstance(doc, dict) or "neurons" not in doc:
        raise SchemaError("network file must be an object with a 'neurons' array")
    neurons = []
    for entry in doc["neurons"]:
        for key in ("id", "kind"):
            if key not in entry:
                raise SchemaError(f"neuron entry missing {key!r}: {entry}")
        kind = dnn_op_from_name(entry["kind"]) if entry["kind"] != "Input" else DnnOp.INPUT
        if kind is None:
            raise SchemaError(f"unknown operation kind {entry['kind']!r}")
        neurons.append(Neuron(
            nid=int(entry["id"]),
            kind=kind,
            prev=[int(p) for p in entry.get("prev", [])],
            weight=[parse_rational(w) for w in entry.get("weight", [])],
            bias=parse_rational(entry.get("bias", "0")),
            layer=int(entry.get("layer", 0)),
            is_input=bool(entry.get("input", kind is DnnOp.INPUT)),
            is_output=bool(entry.get("output", False)),
        ))
    return ConcreteDNN(neurons, tau)


def apply_input_shapes(dnn: ConcreteDNN, shapes: dict) -> None:
    for nid in dnn.inputs():
        entry = shapes.get(str(nid))
        if entry is None:
            raise SchemaError(f"input shape file has no entry for neuron {nid}")
        record = {}
        for member, mtype in dnn.tau.items():
            if member not in entry:
                raise SchemaError(
                    f"neuron {nid}: input shape is missing member {member!r}")
            record[member] = parse_member_value(entry[member], mtype, dnn)
        dnn.set_shape(nid, record)


def dump_shapes(dnn: ConcreteDNN) -> dict:
    from .values import render_value
    out = {}
    for nid in dnn.topo:
        n = dnn.neurons[nid]
        if not n.shape:
            continue
        out[str(nid)] = {m: render_value(v) for m, v in n.shape.items()}
    return out
