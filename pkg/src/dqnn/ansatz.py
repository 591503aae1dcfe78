"""Parameterized circuit families and their simulation.

Every parameterized gate is ``exp(-i theta G)`` with ``G`` stored as a Pauli
sum, so gradient observables can be formed symbolically. Encoding gates take
their angle from a data slot (``scale * x[slot]``) and are not trainable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .errors import ShapeError, QubitIndexError, DomainError
from .gates import (FIXED, rbs_generator, fbs_generator, rotation_matrix,
                    rotation_matrices, apply_fbs_array, rbs_matrix)
from .pauli import Observable, commutator, apply_pauli, label_from_dict
from .statevec import apply_matrix, apply_matrix_batched

TWO_TERM = "TWO_TERM"
FOUR_TERM_RBS = "FOUR_TERM_RBS"

ROTATIONS = ("RX", "RY", "RZ")
HW_KINDS = ("RBS", "FBS")
PARAM_KINDS = ROTATIONS + HW_KINDS + ("PAULI",)


@dataclass(frozen=True)
class Op:
    """One gate. ``param`` indexes the trainable vector; ``data`` a feature slot."""
    kind: str
    targets: tuple
    param: int | None = None
    angle: float | None = None
    data: int | None = None
    scale: float = 1.0
    generator: Observable | None = field(default=None, compare=False, repr=False)

    @property
    def trainable(self) -> bool:
        return self.param is not None


def _embed(local: Observable, targets, n: int) -> Observable:
    terms = []
    for c, lab in local.terms:
        terms.append((c, label_from_dict(n, {t: ch for t, ch in zip(targets, lab)})))
    return Observable(terms, n)


def generator_of(kind: str, targets, n: int) -> Observable:
    if kind in ROTATIONS:
        return Observable([(0.5, label_from_dict(n, {targets[0]: kind[1]}))], n)
    if kind == "RBS":
        return _embed(rbs_generator(), targets, n)
    if kind == "FBS":
        return fbs_generator(n, *targets)
    raise ValueError(kind)


def rule_for(kind: str) -> str:
    return FOUR_TERM_RBS if kind in HW_KINDS else TWO_TERM


class Circuit:
    """Immutable ordered gate list with block and shift-rule metadata."""

    def __init__(self, n_qubits: int, ops, blocks=None, n_data: int = 0, name: str = "custom",
                 verify: bool = True):
        self.n_qubits = int(n_qubits)
        self.ops = tuple(ops)
        self.name = name
        used = sorted({op.param for op in self.ops if op.trainable})
        self.n_params = (used[-1] + 1) if used else 0
        if used != list(range(self.n_params)):
            raise ShapeError("every parameter index must be used at least once")
        rules = {}
        for op in self.ops:
            for t in op.targets:
                if not 0 <= t < self.n_qubits:
                    raise QubitIndexError(f"target {t} outside circuit")
            if op.trainable:
                r = rule_for(op.kind)
                if rules.setdefault(op.param, r) != r:
                    raise ShapeError(f"parameter {op.param} mixes shift rules")
        self.shift_rule = tuple(rules[p] for p in range(self.n_params))
        self.n_data = max([n_data] + [op.data + 1 for op in self.ops if op.data is not None])
        if blocks is None:
            blocks = [(i, i + 1) for i, op in enumerate(self.ops) if op.trainable]
        self.blocks = tuple(tuple(b) for b in blocks)
        if verify and self.n_qubits <= 8:
            self.verify_blocks()

    def __repr__(self):
        return (f"Circuit({self.name}, n_qubits={self.n_qubits}, gates={len(self.ops)}, "
                f"n_params={self.n_params}, blocks={len(self.blocks)})")

    def param_ops(self):
        return [i for i, op in enumerate(self.ops) if op.trainable]

    def block_of(self, op_index: int) -> int:
        for b, (s, e) in enumerate(self.blocks):
            if s <= op_index < e:
                return b
        return -1

    def verify_blocks(self, tol: float = 1e-12):
        """Check that trainable generators inside each block commute pairwise."""
        for s, e in self.blocks:
            gens = [self.ops[i].generator for i in range(s, e) if self.ops[i].trainable]
            for a in range(len(gens)):
                for b in range(a + 1, len(gens)):
                    c = commutator(gens[a], gens[b])
                    if any(abs(v) > tol for v, _ in c._terms):
                        raise ShapeError(f"block {s}:{e} has non-commuting generators")

    def depth(self) -> int:
        """Moment count of the 2-qubit and parameterized layout (greedy ASAP)."""
        level = [0] * self.n_qubits
        for op in self.ops:
            qs = op.targets
            t = max(level[q] for q in qs) + 1
            for q in qs:
                level[q] = t
        return max(level) if level else 0

    def init_params(self, rng, low=-math.pi / 10, high=math.pi / 10) -> np.ndarray:
        return rng.uniform(low, high, self.n_params)

    def is_hw_preserving(self) -> bool:
        return all(op.kind in HW_KINDS or (op.kind == "CZ") for op in self.ops)

    def gate_pairs(self):
        return [op.targets for op in self.ops if op.kind in HW_KINDS]

    def __add__(self, other):
        """Concatenate (other after self); parameters of ``other`` are offset."""
        if other.n_qubits != self.n_qubits:
            raise ShapeError("qubit counts differ")
        off = self.n_params
        shifted = [Op(o.kind, o.targets, None if o.param is None else o.param + off,
                      o.angle, o.data, o.scale, o.generator) for o in other.ops]
        nb = len(self.ops)
        blocks = list(self.blocks) + [(s + nb, e + nb) for s, e in other.blocks]
        return Circuit(self.n_qubits, self.ops + tuple(shifted), blocks,
                       max(self.n_data, other.n_data), f"{self.name}+{other.name}", verify=False)

    # ---- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        ops = []
        for o in self.ops:
            d = {"kind": o.kind, "targets": list(o.targets)}
            if o.param is not None:
                d["param"] = o.param
            if o.angle is not None:
                d["angle"] = o.angle
            if o.data is not None:
                d["data"] = o.data
                d["scale"] = o.scale
            if o.kind == "PAULI":
                d["generator"] = o.generator.to_json()
            ops.append(d)
        return {"name": self.name, "n_qubits": self.n_qubits, "n_data": self.n_data,
                "blocks": [list(b) for b in self.blocks], "ops": ops}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict):
        n = d["n_qubits"]
        ops = []
        for o in d["ops"]:
            kind = o["kind"]
            targets = tuple(o["targets"])
            gen = None
            if kind == "PAULI":
                gen = Observable.from_json(o["generator"], n)
            elif kind in ROTATIONS + HW_KINDS and (o.get("param") is not None or o.get("data") is not None):
                gen = generator_of(kind, targets, n)
            ops.append(Op(kind, targets, o.get("param"), o.get("angle"), o.get("data"),
                          o.get("scale", 1.0), gen))
        return cls(n, ops, d.get("blocks"), d.get("n_data", 0), d.get("name", "custom"))

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))

    # ---- simulation ----------------------------------------------------
    def angles(self, params, x=None):
        """Per-op angle: float, per-sample array, or None for fixed gates."""
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {params.shape}")
        out = []
        for op in self.ops:
            if op.param is not None:
                out.append(float(params[op.param]))
            elif op.data is not None:
                if x is None:
                    raise DomainError("circuit has data slots but no x given")
                out.append(op.scale * x[:, op.data])
            else:
                out.append(op.angle)
        return out

    def apply(self, psi, params, x=None, start=0, stop=None, shift=None, angles=None):
        """Run ops[start:stop] on a batch of states ``psi`` (B, 2**n).

        ``shift`` maps ``(op_index, term)`` to an angle offset; ``term`` is
        ``None`` for the whole gate or the index of one Pauli term of a
        PAULI gate.
        """
        n = self.n_qubits
        if angles is None:
            x = None if x is None else np.atleast_2d(np.asarray(x, dtype=float))
            angles = self.angles(params, x)
        stop = len(self.ops) if stop is None else stop
        for i in range(start, stop):
            psi = apply_op(psi, self.ops[i], angles[i], n, i, shift)
        return psi


def apply_op(psi, op: Op, theta, n: int, index: int = -1, shift=None):
    kind = op.kind
    if kind in FIXED:
        return apply_matrix(psi, FIXED[kind]().matrix, list(op.targets), n)
    if shift and kind != "PAULI":
        theta = theta + shift.get((index, None), 0.0)
    batched = isinstance(theta, np.ndarray)
    if kind in ROTATIONS:
        if batched:
            return apply_matrix_batched(psi, rotation_matrices(kind, theta), op.targets[0], n)
        return apply_matrix(psi, rotation_matrix(kind, theta), list(op.targets), n)
    if kind == "RBS":
        if batched:
            return apply_fbs_like_rbs(psi, n, op.targets, theta)
        return apply_matrix(psi, rbs_matrix(theta), list(op.targets), n)
    if kind == "FBS":
        return apply_fbs_array(psi, n, op.targets[0], op.targets[1], theta)
    if kind == "PAULI":
        for t, (c, lab) in enumerate(op.generator.terms):
            th = theta
            if shift:
                th = th + shift.get((index, t), 0.0) + shift.get((index, None), 0.0)
            a = c * th
            if batched:
                cs, sn = np.cos(a)[:, None], np.sin(a)[:, None]
            else:
                cs, sn = math.cos(a), math.sin(a)
            psi = cs * psi - 1j * sn * apply_pauli(lab, psi)
        return psi
    raise ValueError(f"unknown gate kind {kind}")


def apply_fbs_like_rbs(psi, n, targets, theta):
    i, j = targets
    bi, bj = 1 << (n - 1 - i), 1 << (n - 1 - j)
    idx = np.arange(2 ** n)
    lo = idx[((idx & bi) == 0) & ((idx & bj) != 0)]
    hi = lo ^ bi ^ bj
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    a, b = psi[..., lo], psi[..., hi]
    out = psi.copy()
    out[..., lo] = c * a - s * b
    out[..., hi] = s * a + c * b
    return out


# ---------------------------------------------------------------------------
# loaders

class Loader:
    """Data loader V(x): ``zero`` (|0..0>), ``product_ry`` or ``unary``."""

    def __init__(self, kind: str = "zero", scale: float = math.pi / 2):
        if kind not in ("zero", "product_ry", "unary"):
            raise ShapeError(f"unknown loader {kind}")
        self.kind = kind
        self.scale = scale

    def __repr__(self):
        return f"Loader({self.kind!r})"

    def prepare(self, x, n: int, frame=None) -> np.ndarray:
        """Batch of loaded states; ``frame`` is an optional per-qubit 2x2 basis change
        applied on top (only for product loaders)."""
        if frame is not None and self.kind != "product_ry":
            from .statevec import apply_matrix
            psi = self.prepare(x, n)
            for q, m in enumerate(frame):
                if m is not None:
                    psi = apply_matrix(psi, m, [q], n)
            return psi
        if self.kind == "zero":
            b = 1 if x is None else np.atleast_2d(x).shape[0]
            psi = np.zeros((b, 2 ** n), dtype=complex)
            psi[:, 0] = 1
            return psi
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != n:
            raise QubitIndexError(f"loader expects {n} features, got {x.shape[1]}")
        if self.kind == "product_ry":
            half = self.scale * x / 2
            c, s = np.cos(half), np.sin(half)
            psi = np.ones((x.shape[0], 1))
            for q in range(n):
                v = np.stack([c[:, q], s[:, q]], axis=1)
                if frame is not None and frame[q] is not None:
                    v = v @ frame[q].T
                psi = (psi[:, :, None] * v[:, None, :]).reshape(x.shape[0], -1)
            return psi.astype(complex)
        return unary_embed(x, n)

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale}


def unary_index(n: int, j: int) -> int:
    return 1 << (n - 1 - j)


def unary_embed(x, n: int) -> np.ndarray:
    """Amplitude-inject normalized rows of x on unary basis states."""
    from .errors import NormalizationError
    x = np.atleast_2d(np.asarray(x, dtype=float))
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise NormalizationError("zero vector cannot be loaded")
    psi = np.zeros((x.shape[0], 2 ** n), dtype=complex)
    idx = [unary_index(n, j) for j in range(n)]
    psi[:, idx] = x / norms[:, None]
    return psi


def unary_amplitudes(psi, n: int) -> np.ndarray:
    idx = [unary_index(n, j) for j in range(n)]
    return psi[..., idx]


# ---------------------------------------------------------------------------
# builders

def _hw_op(kind, i, j, p, n):
    return Op(kind, (i, j), p, generator=generator_of(kind, (i, j), n))


def _layers_to_circuit(n, layers, name, kind="RBS"):
    ops, blocks, p = [], [], 0
    for layer in layers:
        s = len(ops)
        for i, j in layer:
            ops.append(_hw_op(kind, i, j, p, n))
            p += 1
        blocks.append((s, len(ops)))
    return Circuit(n, ops, blocks, name=name)


def pyramid_layers(n: int):
    layers = []
    for t in range(2 * n - 3 if n > 1 else 0):
        layer = [(i, i + 1) for i in range(t % 2, n - 1, 2) if i <= t and i + t <= 2 * n - 4]
        if layer:
            layers.append(layer)
    return layers


def build_pyramid(n: int) -> Circuit:
    """Pyramid of nearest-neighbour RBS gates, n(n-1)/2 parameters."""
    if n < 2:
        raise ShapeError("pyramid needs n >= 2")
    return _layers_to_circuit(n, pyramid_layers(n), "pyramid")


def build_x(n: int) -> Circuit:
    """X-shaped circuit: two crossing diagonals.

    Even n gives 2n-3 gates in n-1 moments. For odd n the diagonals meet at
    a qubit instead of a pair, giving 2n-2 gates in n+1 moments.
    """
    if n < 2:
        raise ShapeError("X circuit needs n >= 2")
    layers = []
    for t in range(n - 1):
        pairs = sorted({(t, t + 1), (n - 2 - t, n - 1 - t)})
        if len(pairs) == 2 and pairs[0][1] == pairs[1][0]:
            # odd n: the diagonals touch in the middle, split the moment
            layers.extend([[pairs[0]], [pairs[1]]])
        else:
            layers.append(pairs)
    return _layers_to_circuit(n, layers, "x")


def build_butterfly(n: int) -> Circuit:
    """log2(n) layers pairing qubits at distance 2^l, (n/2) log2(n) gates."""
    if n < 2 or n & (n - 1):
        raise ShapeError("butterfly needs n to be a power of two")
    layers = []
    for l in range(int(math.log2(n))):
        d = 1 << l
        layers.append([(i, i + d) for i in range(n) if not i & d])
    return _layers_to_circuit(n, layers, "butterfly")


def round_robin_schedule(n: int):
    """Circle-method tournament: n-1 perfect matchings covering all pairs."""
    if n < 2 or n % 2:
        raise ShapeError("round-robin needs an even n >= 2")
    arr = list(range(n))
    rounds = []
    for _ in range(n - 1):
        rounds.append(sorted(tuple(sorted((arr[i], arr[n - 1 - i]))) for i in range(n // 2)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return rounds


def build_round_robin(n: int, depth: int, start: int = 0) -> Circuit:
    """``depth`` round-robin layers beginning at schedule round ``start``."""
    if n % 2 or n < 2:
        raise ShapeError("round-robin needs an even n >= 2")
    if not 1 <= depth <= n - 1:
        raise ShapeError(f"depth must be in 1..{n - 1}")
    sched = round_robin_schedule(n)
    layers = [sched[(start + d) % (n - 1)] for d in range(depth)]
    return _layers_to_circuit(n, layers, f"round_robin_D{depth}")


def build_odd_even(n: int):
    """The two commuting layers of the pyramid/odd-even decomposition."""
    if n < 2:
        raise ShapeError("odd-even needs n >= 2")
    even = [(i, i + 1) for i in range(0, n - 1, 2)]
    odd = [(i, i + 1) for i in range(1, n - 1, 2)]
    return [_layers_to_circuit(n, [l], name) for l, name in ((even, "even"), (odd, "odd")) if l]


def build_layer_subunits(circuit: Circuit):
    """Split a layered RBS circuit into one single-block circuit per block."""
    out = []
    for b, (s, e) in enumerate(circuit.blocks):
        layer = [circuit.ops[i].targets for i in range(s, e)]
        out.append(_layers_to_circuit(circuit.n_qubits, [layer], f"{circuit.name}_layer{b}",
                                      kind=circuit.ops[s].kind))
    return out


def build_hardware_efficient(n: int, layers: int, alternate_cnot_direction: bool = False,
                             first_layer: int = 0) -> Circuit:
    """Rotation layer (RX, RY, RZ cycling) then a CNOT ladder, ``layers`` times."""
    if n < 2 or layers < 1:
        raise ShapeError("need n >= 2 and at least one layer")
    ops, blocks, p = [], [], 0
    for l in range(layers):
        kind = ROTATIONS[(first_layer + l) % 3]
        s = len(ops)
        for q in range(n):
            ops.append(Op(kind, (q,), p, generator=generator_of(kind, (q,), n)))
            p += 1
        blocks.append((s, len(ops)))
        flip = alternate_cnot_direction and (first_layer + l) % 2 == 1
        for q in range(n - 1):
            ops.append(Op("CNOT", (q + 1, q) if flip else (q, q + 1)))
    return Circuit(n, ops, blocks, name=f"hwe_D{layers}")


def sym(n: int, pattern, basis: str) -> Observable:
    """Sum over cyclic translations of a Pauli string on offsets ``pattern``."""
    terms = []
    for i in range(n):
        terms.append((1.0, label_from_dict(n, {(i + o) % n: basis for o in pattern})))
    return Observable(terms, n)


EQUIVARIANT_PATTERNS = {1: [(0,)], 2: [(0, 1), (0, 2)], 3: [(0, 1, 2)]}


def equivariant_generators(n: int, basis: str = "X", max_body: int = 3):
    pats = []
    for k in range(1, max_body + 1):
        pats.extend(EQUIVARIANT_PATTERNS[k])
    return [sym(n, p, basis) for p in pats]


def build_equivariant(n: int, basis: str = "X", max_body: int = 3) -> Circuit:
    """One commuting block of symmetrized same-basis Pauli rotations."""
    if n < 3:
        raise ShapeError("equivariant ansatz needs n >= 3")
    if basis not in ("X", "Y") or not 1 <= max_body <= 3:
        raise ShapeError("basis must be X or Y and max_body in 1..3")
    gens = equivariant_generators(n, basis, max_body)
    ops = [Op("PAULI", tuple(range(n)), p, generator=g) for p, g in enumerate(gens)]
    return Circuit(n, ops, [(0, len(ops))], name=f"equivariant_{basis}")


def build_reuploading(uploads: int, encoding=("RX",), trainable_block=("RZ", "RY", "RZ"),
                      variant: str = "standard") -> Circuit:
    """Single-qubit data reuploading: encoding gates then a trainable block, L times.

    ``variant="interleaved"`` uses the five-gate upload
    R_y(x) R_x(x) R_z(phi) R_y(delta) R_z(omega) (operator order) instead.
    """
    if uploads < 1:
        raise ShapeError("need at least one upload")
    ops, blocks, p = [], [], 0
    for _ in range(uploads):
        if variant == "interleaved":
            seq = [("RZ", "p"), ("RY", "p"), ("RZ", "p"), ("RX", "x"), ("RY", "x")]
        else:
            # operator order R_z R_y R_z means the rightmost acts first
            seq = [(k, "x") for k in encoding] + [(k, "p") for k in reversed(trainable_block)]
        for kind, role in seq:
            if role == "x":
                ops.append(Op(kind, (0,), data=0, generator=generator_of(kind, (0,), 1)))
            else:
                blocks.append((len(ops), len(ops) + 1))
                ops.append(Op(kind, (0,), p, generator=generator_of(kind, (0,), 1)))
                p += 1
    return Circuit(1, ops, blocks, n_data=1, name=f"reupload_L{uploads}")


def build_encoding_layer(n: int, kind: str = "RY", scale: float = 1.0) -> Circuit:
    """Angle-encoding layer binding feature q to qubit q."""
    ops = [Op(kind, (q,), data=q, scale=scale, generator=generator_of(kind, (q,), n))
           for q in range(n)]
    return Circuit(n, ops, [], n_data=n, name="encoding")


BUILDERS = {
    "pyramid": lambda n, **kw: build_pyramid(n),
    "x": lambda n, **kw: build_x(n),
    "butterfly": lambda n, **kw: build_butterfly(n),
    "round_robin": lambda n, depth=None, start=0, **kw: build_round_robin(n, depth or n - 1, start),
    "hardware_efficient": lambda n, depth=1, alternate=False, **kw:
        build_hardware_efficient(n, depth, alternate),
    "equivariant": lambda n, basis="X", max_body=3, **kw: build_equivariant(n, basis, max_body),
    "reuploading": lambda n=1, uploads=1, variant="standard", **kw:
        build_reuploading(uploads, variant=variant),
}
