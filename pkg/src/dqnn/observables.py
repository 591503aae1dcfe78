"""Gradient observables, Heisenberg evolution and measurement grouping.

For a gate exp(-i theta G) followed (after its commuting block) by the
measurement of H, the derivative of <H> is <psi| i[G, H] |psi>, evaluated on
the state right after the block. Observables are split into measurement
units; units are packed into groups that one suffix circuit diagonalizes:

* ``qwc``: Pauli strings that commute qubit-wise, rotated by H (X) or
  H S^dagger (Y) per qubit;
* RBS pairs: units c (X_a X_b + Y_a Y_b) (x) Z-string, rotated by the
  diagonalizer P on (a, b), which maps X X + Y Y to Z_a - Z_b.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ShapeError, DomainError
from .gates import GateMatrix, FIXED, rotation_matrix, apply_fbs_array
from .pauli import Observable, commutator, pauli_matrix, pauli_product
from .statevec import apply_matrix, _H, _HSDG

__all__ = ["commutator", "gradient_observable", "rbs_diagonalizer", "conjugate",
           "heisenberg", "group_gradient_observables", "plan_measurements",
           "GradientObservable", "MeasurementGroup", "MeasurementPlan"]

_S2 = 1 / math.sqrt(2)
_P = np.array([[1, 0, 0, 0],
               [0, _S2, _S2, 0],
               [0, -_S2, _S2, 0],
               [0, 0, 0, 1]], dtype=complex)


def rbs_diagonalizer() -> GateMatrix:
    """P with P (XX + YY) P^-1 = diag(0, 2, -2, 0)."""
    return GateMatrix(_P.copy(), "CUSTOM")


def gradient_observable(G: Observable, H: Observable) -> Observable:
    """i[G, H], Hermitian when G and H are."""
    return (1j * commutator(G, H)).real()


def _local_decompose(m: np.ndarray, k: int):
    """Pauli coefficients of a 2^k x 2^k matrix."""
    out = []
    labels = [""]
    for _ in range(k):
        labels = [l + c for l in labels for c in "IXYZ"]
    d = 2 ** k
    for lab in labels:
        c = np.trace(pauli_matrix(lab).conj().T @ m) / d
        if abs(c) > 1e-13:
            out.append((c, lab))
    return out


def conjugate(obs: Observable, u: np.ndarray, targets) -> Observable:
    """U^dagger obs U for a gate U on ``targets``."""
    n = obs.n_qubits
    k = len(targets)
    cache = {}
    terms = []
    for c, lab in obs._terms:
        local = "".join(lab[t] for t in targets)
        if set(local) == {"I"}:
            terms.append((c, lab))
            continue
        if local not in cache:
            cache[local] = _local_decompose(u.conj().T @ pauli_matrix(local) @ u, k)
        for lc, llab in cache[local]:
            chars = list(lab)
            for t, ch in zip(targets, llab):
                chars[t] = ch
            terms.append((c * lc, "".join(chars)))
    return Observable(terms, n)


def op_matrix(op, theta) -> np.ndarray:
    if op.kind in FIXED:
        return FIXED[op.kind]().matrix
    if op.kind in ("RX", "RY", "RZ", "RBS"):
        return rotation_matrix(op.kind, theta)
    raise ShapeError(f"cannot conjugate through {op.kind}")


def heisenberg(H: Observable, circuit, params=None, start: int = 0, x=None) -> Observable:
    """Evolve H backwards through ops[start:] (U^dagger H U).

    Data-dependent gates need ``x``, a single feature vector.
    """
    obs = H
    for i in range(len(circuit.ops) - 1, start - 1, -1):
        op = circuit.ops[i]
        if op.data is not None:
            if x is None:
                raise ShapeError("cannot evolve through data-dependent gates without x")
            theta = op.scale * float(np.asarray(x, dtype=float).reshape(-1)[op.data])
            obs = conjugate(obs, op_matrix(op, theta), list(op.targets))
            continue
        if op.kind == "PAULI":
            if params is None:
                raise ShapeError("parameterized gates after the block need params")
            theta = float(params[op.param])
            for c, lab in reversed(op.generator.terms):
                obs = _conj_pauli_rotation(obs, lab, c * theta)
            continue
        theta = None
        if op.param is not None:
            if params is None:
                raise ShapeError("parameterized gates after the block need params")
            theta = float(params[op.param])
        elif op.angle is not None:
            theta = op.angle
        if op.kind == "FBS":
            # acts on the whole span i..j through the parity of the qubits in between
            i, j = sorted(op.targets)
            m = j - i + 1
            u = apply_fbs_array(np.eye(2 ** m, dtype=complex), m, 0, m - 1, theta).T
            obs = conjugate(obs, u, list(range(i, j + 1)))
            continue
        obs = conjugate(obs, op_matrix(op, theta), list(op.targets))
    return obs


def _conj_pauli_rotation(obs: Observable, lab: str, a: float) -> Observable:
    """e^{i a P} obs e^{-i a P}."""
    from .pauli import strings_commute
    terms = []
    for c, t in obs._terms:
        if strings_commute(t, lab):
            terms.append((c, t))
        else:
            ph, prod = pauli_product(lab, t)
            terms.append((c * math.cos(2 * a), t))
            terms.append((1j * c * ph * math.sin(2 * a), prod))
    return Observable(terms, obs.n_qubits)


# ---------------------------------------------------------------------------
# measurement units and groups

@dataclass
class Unit:
    """Piece of one gradient observable measurable with a template."""
    owner: int            # index into the observable list
    kind: str             # "pauli" or "rbs"
    coef: float
    label: str            # Pauli label ("pauli") or Z-rest label ("rbs")
    pair: tuple = ()

    def support(self):
        return {q for q, ch in enumerate(self.label) if ch != "I"}

    def diag(self, n: int) -> Observable:
        zl = "".join("I" if ch == "I" else "Z" for ch in self.label)
        if self.kind == "pauli":
            return Observable([(self.coef, zl)], n)
        a, b = self.pair
        la = list(zl)
        lb = list(zl)
        la[a] = "Z"
        lb[b] = "Z"
        return Observable([(self.coef, "".join(la)), (-self.coef, "".join(lb))], n)


@dataclass
class MeasurementGroup:
    gid: int
    basis: list               # per-qubit 'X'/'Y'/'Z'/None
    pairs: list               # RBS-template pairs (a, b)
    units: list = field(default_factory=list)

    @property
    def template(self) -> str:
        if self.pairs and any(b in "XY" for b in self.basis if b):
            return "mixed"
        return "rbs_pairs" if self.pairs else "qwc"

    def suffix(self):
        """Diagonalizing gates as (GateMatrix, targets)."""
        out = []
        for a, b in self.pairs:
            out.append((rbs_diagonalizer(), (a, b)))
        for q, c in enumerate(self.basis):
            if c == "X":
                out.append((GateMatrix(_H, "H"), (q,)))
            elif c == "Y":
                out.append((GateMatrix(_HSDG, "CUSTOM"), (q,)))
        return out

    def rotate(self, psi, n):
        for g, t in self.suffix():
            psi = apply_matrix(psi, g.matrix, list(t), n)
        return psi

    def accepts(self, u: Unit) -> bool:
        paired = {q for p in self.pairs for q in p}
        if u.kind == "pauli":
            for q, ch in enumerate(u.label):
                if ch == "I":
                    continue
                if q in paired or (self.basis[q] not in (None, ch)):
                    return False
            return True
        a, b = u.pair
        if a in paired or b in paired or self.basis[a] is not None or self.basis[b] is not None:
            return False
        for q, ch in enumerate(u.label):
            if ch != "I" and (q in paired or self.basis[q] not in (None, "Z")):
                return False
        return True

    def add(self, u: Unit):
        self.units.append(u)
        if u.kind == "rbs":
            self.pairs.append(u.pair)
        for q, ch in enumerate(u.label):
            if ch != "I":
                self.basis[q] = ch


@dataclass
class GradientObservable:
    generator_index: int          # trainable parameter index
    op_index: int
    observable: Observable        # i[G, H]
    groups: tuple = ()

    @property
    def co_measurable_group(self):
        return self.groups[0] if len(self.groups) == 1 else self.groups


@dataclass
class MeasurementPlan:
    observables: list
    groups: list
    zero_ops: list                # op indices whose gradient observable vanishes
    H: Observable
    fallback: bool = False

    @property
    def n_circuits(self) -> int:
        return len(self.groups)


def _split_units(owner: int, obs: Observable):
    """Pair X_aX_b / Y_aY_b strings with equal weight and identical Z rest."""
    remaining = {lab: c for c, lab in obs.terms}
    units = []
    for lab in sorted(remaining):
        if lab not in remaining:
            continue
        xs = [q for q, ch in enumerate(lab) if ch == "X"]
        rest_ok = all(ch in "IZ" for q, ch in enumerate(lab) if q not in xs)
        if len(xs) == 2 and rest_ok:
            a, b = xs
            partner = list(lab)
            partner[a] = partner[b] = "Y"
            partner = "".join(partner)
            c = remaining[lab]
            if partner in remaining and abs(remaining[partner] - c) < 1e-12:
                rest = list(lab)
                rest[a] = rest[b] = "I"
                units.append(Unit(owner, "rbs", c, "".join(rest), (a, b)))
                del remaining[lab], remaining[partner]
    for lab, c in remaining.items():
        units.append(Unit(owner, "pauli", c, lab))
    return units


def plan_measurements(circuit, H: Observable, block: int = 0, params=None, x=None) -> MeasurementPlan:
    """Gradient observables of one block and the circuits that measure them.

    ``x`` (one sample) binds data-dependent gates after the block.
    """
    if H.n_qubits != circuit.n_qubits:
        raise ShapeError("observable and circuit sizes differ")
    if not H.is_hermitian:
        raise DomainError("H must be Hermitian")
    s, e = circuit.blocks[block]
    H_eff = heisenberg(H, circuit, params, start=e, x=x)
    n = circuit.n_qubits
    observables, zero_ops = [], []
    for i in range(s, e):
        op = circuit.ops[i]
        if not op.trainable:
            continue
        o = gradient_observable(op.generator, H_eff)
        if o.is_zero():
            zero_ops.append(i)
            continue
        observables.append(GradientObservable(op.param, i, o))
    groups: list[MeasurementGroup] = []
    for k, go in enumerate(observables):
        for u in _split_units(k, go.observable):
            for g in groups:
                if g.accepts(u):
                    g.add(u)
                    break
            else:
                g = MeasurementGroup(len(groups), [None] * n, [])
                g.add(u)
                groups.append(g)
    for k, go in enumerate(observables):
        go.groups = tuple(sorted({g.gid for g in groups for u in g.units if u.owner == k}))
    fallback = any(len(go.groups) > 1 for go in observables)
    return MeasurementPlan(observables, groups, zero_ops, H_eff, fallback)


def group_gradient_observables(circuit, H: Observable, block: int = 0, params=None):
    """List of GradientObservable for the trainable gates of ``block``."""
    return plan_measurements(circuit, H, block, params).observables


def evaluate_group(group: MeasurementGroup, psi: np.ndarray, n: int, shots=None, rng=None):
    """Per-owner contributions from one group, exact or sampled.

    Returns dict owner -> value (batch array when psi is a batch).
    """
    rotated = group.rotate(psi, n)
    probs = np.abs(rotated) ** 2
    if shots is not None:
        if probs.ndim == 1:
            probs = rng.multinomial(shots, probs / probs.sum()) / shots
        else:
            probs = np.stack([rng.multinomial(shots, p / p.sum()) for p in probs]) / shots
    out = {}
    for u in group.units:
        val = probs @ u.diag(n).diagonal()
        out[u.owner] = out.get(u.owner, 0) + val
    return out


def measurement_scheme_probabilities(psi: np.ndarray, n: int, scheme: str, shots=None, rng=None):
    """Unary-state probabilities from three Z-measurement schemes.

    ``global``: one computational-basis circuit, frequency of each e_j.
    ``per_qubit``: P(qubit j = 1) from single-qubit Z statistics.
    ``pairwise``: P(qubit j = 1) read from two-qubit marginals on pairs.
    """
    probs = np.abs(psi) ** 2
    if shots is not None:
        probs = rng.multinomial(shots, probs / probs.sum()) / shots
    idx = np.arange(2 ** n)
    if scheme == "global":
        return np.array([probs[1 << (n - 1 - j)] for j in range(n)])
    bits = (idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    if scheme == "per_qubit":
        return probs @ bits
    if scheme == "pairwise":
        out = np.zeros(n)
        for a in range(0, n, 2):
            b = min(a + 1, n - 1)
            for q in (a, b):
                # marginal of (a, b) restricted to outcomes with a single excitation on q
                other = b if q == a else a
                mask = (bits[:, q] == 1) & (bits[:, other] == 0)
                out[q] = probs[mask].sum() if q != other else probs @ bits[:, q]
        return out
    raise ShapeError(f"unknown scheme {scheme}")
