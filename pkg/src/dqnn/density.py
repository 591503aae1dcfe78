"""Density QNN: rho(x) = sum_k alpha_k U_k V(x)|0><0|V(x)^dagger U_k^dagger.

Expectations are computed as alpha-weighted sums of K pure-state
expectations. The deterministic preparation (ancilla register plus
controlled sub-unitaries) and the LCU value are provided for verification.
"""
from __future__ import annotations

from dataclasses import dataclass
import json
import math
from typing import NamedTuple

import numpy as np
from scipy.special import softmax

from .ansatz import Circuit, Loader
from .errors import SizeError, UsageError, DomainError, ShapeError
from .moe import GatingNetwork, gate_forward
from .pauli import Observable
from .statevec import (DensityMatrix, expectation_array, qwc_groups, rotate_to_z,
                       group_basis, z_image)
from .pauli import pauli_diagonal

MAX_DETERMINISTIC_QUBITS = 16


class DensityModel:
    """K sub-circuits sharing one loader, mixed by softmax coefficients.

    Parameters live in one flat vector ``theta``; ``index_map[k]`` gives the
    global positions of sub-unit k's parameters, so shared parameters are
    simply repeated indices.
    """

    def __init__(self, circuits, params=None, logits=None, gating: GatingNetwork | None = None,
                 loader: Loader | None = None, index_map=None):
        self.circuits = list(circuits)
        if not self.circuits:
            raise ShapeError("need at least one sub-unit")
        n = {c.n_qubits for c in self.circuits}
        if len(n) != 1:
            raise ShapeError("all sub-circuits must share one qubit count")
        self.n_qubits = n.pop()
        if index_map is None:
            index_map, off = [], 0
            for c in self.circuits:
                index_map.append(np.arange(off, off + c.n_params))
                off += c.n_params
        self.index_map = [np.asarray(m, dtype=int) for m in index_map]
        n_theta = 1 + max([int(m.max()) for m in self.index_map if m.size] + [-1])
        if params is None:
            self.theta = np.zeros(n_theta)
        elif isinstance(params, (list, tuple)) and len(params) == len(self.circuits) and \
                all(np.ndim(p) == 1 for p in params) and not np.isscalar(params[0]):
            self.theta = np.zeros(n_theta)
            for m, p in zip(self.index_map, params):
                self.theta[m] = p
        else:
            self.theta = np.asarray(params, dtype=float).copy()
        if self.theta.size != n_theta:
            raise ShapeError(f"expected {n_theta} parameters, got {self.theta.size}")
        self.gating = gating
        k = len(self.circuits)
        self.logits = np.zeros(k) if logits is None else np.asarray(logits, dtype=float).copy()
        if self.logits.shape != (k,):
            raise ShapeError("need one logit per sub-unit")
        if gating is not None and gating.k != k:
            raise ShapeError("gating width differs from K")
        self.loader = loader or Loader("zero")

    @property
    def K(self):
        return len(self.circuits)

    @property
    def shared(self) -> bool:
        used = np.concatenate(self.index_map) if self.index_map else np.array([])
        return used.size != np.unique(used).size

    def subunit_params(self, k: int) -> np.ndarray:
        return self.theta[self.index_map[k]]

    # flattened layout: theta, logits, gating weights
    @property
    def n_flat(self) -> int:
        return self.theta.size + self.K + (self.gating.n_params if self.gating else 0)

    def flat(self) -> np.ndarray:
        parts = [self.theta, self.logits]
        if self.gating:
            parts.append(self.gating.flat())
        return np.concatenate(parts)

    def set_flat(self, v):
        v = np.asarray(v, dtype=float)
        t = self.theta.size
        self.theta = v[:t].copy()
        self.logits = v[t:t + self.K].copy()
        if self.gating:
            self.gating.set_flat(v[t + self.K:])

    def copy(self):
        return DensityModel(self.circuits, self.theta.copy(), self.logits.copy(),
                            self.gating.copy() if self.gating else None, self.loader,
                            [m.copy() for m in self.index_map])

    def states(self, x=None):
        """Per-sub-unit output states, list of (B, 2**n) arrays."""
        xb = None if x is None else np.atleast_2d(np.asarray(x, dtype=float))
        psi0 = self.loader.prepare(xb, self.n_qubits)
        return [c.apply(psi0, self.subunit_params(k), xb) for k, c in enumerate(self.circuits)]

    # ---- checkpoint ----------------------------------------------------
    def to_dict(self, seed=None) -> dict:
        return {"layout_version": 1, "circuits": [c.to_dict() for c in self.circuits],
                "theta": self.theta.tolist(), "index_map": [m.tolist() for m in self.index_map],
                "logits": self.logits.tolist(),
                "gating": self.gating.to_dict() if self.gating else None,
                "loader": self.loader.to_dict(), "seed": seed}

    @classmethod
    def from_dict(cls, d):
        g = GatingNetwork.from_dict(d["gating"]) if d.get("gating") else None
        lo = d.get("loader") or {"kind": "zero"}
        return cls([Circuit.from_dict(c) for c in d["circuits"]], d["theta"], d["logits"], g,
                   Loader(lo["kind"], lo.get("scale", math.pi / 2)), d["index_map"])

    def save(self, path, seed=None):
        with open(path, "w") as f:
            json.dump(self.to_dict(seed), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def logits_for(alpha) -> np.ndarray:
    """Logits whose softmax is ``alpha``."""
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0):
        raise DomainError("alpha must be strictly positive")
    lg = np.log(a / a.sum())
    return lg - lg.mean()


def coefficients(model: DensityModel, x=None) -> np.ndarray:
    """alpha, or alpha(x) per row when a gating network is attached."""
    if model.gating is None:
        return softmax(model.logits)
    if x is None:
        raise UsageError("gating coefficients need x")
    return gate_forward(model.gating, x)


def _alpha_rows(model, x, b):
    a = coefficients(model, x)
    if a.ndim == 1:
        a = np.broadcast_to(a, (b, model.K))
    return a


def subunit_expectations(model: DensityModel, x, H: Observable) -> np.ndarray:
    """f_k(x) for every sub-unit, shape (B, K)."""
    return np.stack([expectation_array(psi, H) for psi in model.states(x)], axis=1)


def expectation_exact(model: DensityModel, x, H: Observable):
    """sum_k alpha_k <x|U_k^dagger H U_k|x>; scalar for one sample."""
    f = subunit_expectations(model, x, H)
    a = _alpha_rows(model, x, f.shape[0])
    out = np.sum(a * f, axis=1)
    return float(out[0]) if np.ndim(x) <= 1 else out


class SampledEstimate(NamedTuple):
    estimate: float
    circuits_used: int
    shots_used: int


def expectation_sampled(model: DensityModel, x, H: Observable, shots_per_draw: int, draws: int,
                        rng, return_sem: bool = False):
    """Randomized preparation: draw k ~ alpha, measure sub-unit k with shot noise."""
    if draws < 1 or shots_per_draw < 1:
        raise DomainError("draws and shots must be >= 1")
    alpha = _alpha_rows(model, x, 1)[0]
    ks = rng.choice(model.K, size=draws, p=alpha)
    states = model.states(x)
    terms = [(float(np.real(c)), lab) for c, lab in H.terms]
    const = sum(c for c, lab in terms if set(lab) == {"I"})
    terms = [(c, lab) for c, lab in terms if set(lab) != {"I"}]
    groups = qwc_groups([lab for _, lab in terms])
    n = model.n_qubits
    per_draw = np.full(draws, float(const))
    for k in range(model.K):
        sel = np.flatnonzero(ks == k)
        if not sel.size:
            continue
        for g in groups:
            labels = [terms[i][1] for i in g]
            diag = sum(terms[i][0] * pauli_diagonal(z_image(terms[i][1])) for i in g)
            psi = rotate_to_z(states[k][0], group_basis(labels), n)
            p = np.abs(psi) ** 2
            counts = rng.multinomial(shots_per_draw, p / p.sum(), size=sel.size)
            per_draw[sel] += counts @ diag / shots_per_draw
    circuits = draws * max(len(groups), 1)
    est = SampledEstimate(float(per_draw.mean()), circuits, circuits * shots_per_draw)
    if return_sem:
        return est, float(per_draw.std(ddof=1) / math.sqrt(draws)) if draws > 1 else float("inf")
    return est


def subunit_unitary(model: DensityModel, k: int, x=None) -> np.ndarray:
    """Dense U_k (data slots bound to x)."""
    d = 2 ** model.n_qubits
    basis = np.eye(d, dtype=complex)
    xb = None
    if x is not None:
        xb = np.repeat(np.atleast_2d(np.asarray(x, dtype=float)), d, axis=0)
    cols = model.circuits[k].apply(basis, model.subunit_params(k), xb)
    return cols.T


def prepare_deterministic(model: DensityModel, x=None) -> DensityMatrix:
    """Ancilla sum_k sqrt(alpha_k)|e_k>, controlled-U_k from ancilla k, trace out ancilla."""
    n, K = model.n_qubits, model.K
    if n + K > MAX_DETERMINISTIC_QUBITS:
        raise SizeError(f"K + n = {K + n} exceeds {MAX_DETERMINISTIC_QUBITS}")
    alpha = _alpha_rows(model, x, 1)[0]
    psi_x = model.loader.prepare(None if x is None else np.atleast_2d(x), n)[0]
    # joint register: ancilla qubits 0..K-1 (big-endian) then system qubits
    joint = np.zeros((2 ** K, 2 ** n), dtype=complex)
    for k in range(K):
        joint[1 << (K - 1 - k)] = math.sqrt(alpha[k]) * psi_x
    for k in range(K):
        u = subunit_unitary(model, k, x)
        rows = [a for a in range(2 ** K) if a >> (K - 1 - k) & 1]
        joint[rows] = joint[rows] @ u.T
    rho = joint.T @ joint.conj()
    return DensityMatrix(rho, n)


def lcu_state(model: DensityModel, x=None) -> np.ndarray:
    """Unnormalized sum_k alpha_k U_k |x>."""
    states = model.states(x)
    a = _alpha_rows(model, x, states[0].shape[0])
    return sum(a[:, k:k + 1] * s for k, s in enumerate(states))


def lcu_expectation(model: DensityModel, x, H: Observable):
    """<phi|H|phi> for phi = sum_k alpha_k U_k|x>, without renormalization."""
    out = expectation_array(lcu_state(model, x), H)
    return float(out[0]) if np.ndim(x) <= 1 else out


@dataclass
class MixingReport:
    delta1: float
    delta2: float
    density_error: float
    bound: float
    holds: bool
    premise: str = "independent"


def check_mixing_bound(subunit_errors, lcu_error: float, density_error: float, H_norm: float,
                       premise: str = "independent") -> MixingReport:
    """density_error <= max_k(err_k)^2 / (4 ||H||) + 2 lcu_error (+1e-9)."""
    errs = np.atleast_1d(np.asarray(subunit_errors, dtype=float))
    vals = list(errs) + [lcu_error, density_error]
    if any(v < 0 or not math.isfinite(v) for v in vals):
        raise DomainError("errors must be finite and non-negative")
    if not H_norm > 0:
        raise DomainError("H_norm must be positive")
    d1 = float(errs.max())
    bound = d1 ** 2 / (4 * H_norm) + 2 * lcu_error
    return MixingReport(d1, float(lcu_error), float(density_error), bound,
                        bool(density_error <= bound + 1e-9), premise)


def mean_abs_errors(model: DensityModel, x, h, H: Observable):
    """(per-sub-unit, LCU, density) mean absolute errors against targets h."""
    f = subunit_expectations(model, x, H)
    a = _alpha_rows(model, x, f.shape[0])
    sub = np.mean(np.abs(f - h[:, None]), axis=0)
    lcu = float(np.mean(np.abs(lcu_expectation(model, x, H) - h)))
    dens = float(np.mean(np.abs(np.sum(a * f, axis=1) - h)))
    return sub, lcu, dens
