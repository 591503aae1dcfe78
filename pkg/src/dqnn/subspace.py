"""Unary-subspace simulation of Hamming-weight-preserving circuits.

On the span of e_0..e_{n-1} an RBS gate on qubits (i, j) is the plane
rotation [[c, s], [-s, c]] acting on coordinates (i, j); an FBS gate reduces
to the same rotation with angle -theta because at most one qubit is excited.
CZ gates act as the identity there.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .ansatz import Circuit, unary_index
from .errors import FamilyError, NormalizationError, DomainError

NORM_TOL = 1e-10
_IDENTITY_KINDS = ("CZ",)


def _plan(circuit: Circuit, params):
    """List of (i, j, theta) plane rotations in gate order."""
    params = np.asarray(params, dtype=float)
    rots = []
    for op in circuit.ops:
        if op.kind in _IDENTITY_KINDS:
            continue
        if op.kind not in ("RBS", "FBS"):
            raise FamilyError(f"{op.kind} is not Hamming-weight preserving")
        if op.param is not None:
            th = float(params[op.param])
        elif op.angle is not None:
            th = float(op.angle)
        else:
            raise FamilyError("data-dependent gates are not supported in the subspace")
        if op.kind == "FBS":
            th = -th
        i, j = op.targets
        rots.append((i, j, th, op.param, -1.0 if op.kind == "FBS" else 1.0))
    return rots


def givens(n: int, i: int, j: int, theta: float) -> np.ndarray:
    g = np.eye(n)
    c, s = np.cos(theta), np.sin(theta)
    g[i, i] = g[j, j] = c
    g[i, j] = s
    g[j, i] = -s
    return g


def circuit_to_ortho(circuit: Circuit, params) -> np.ndarray:
    """Product of the gate rotations in circuit order (later gates on the left)."""
    n = circuit.n_qubits
    o = np.eye(n)
    for i, j, th, _, _ in _plan(circuit, params):
        c, s = np.cos(th), np.sin(th)
        ri, rj = o[i].copy(), o[j].copy()
        o[i] = c * ri + s * rj
        o[j] = -s * ri + c * rj
    return o


def _check_norm(x):
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1) > NORM_TOL):
        raise NormalizationError("input must have unit 2-norm")


def subspace_forward(circuit: Circuit, params, x) -> np.ndarray:
    """y = O(theta) x for one vector or a batch (B, n)."""
    x = np.asarray(x, dtype=float)
    _check_norm(x)
    y = np.atleast_2d(x).T.copy()
    for i, j, th, _, _ in _plan(circuit, params):
        c, s = np.cos(th), np.sin(th)
        yi, yj = y[i].copy(), y[j]
        y[i] = c * yi + s * yj
        y[j] = -s * yi + c * yj
    return y[:, 0] if x.ndim == 1 else y.T


def subspace_gradient(circuit: Circuit, params, x, upstream):
    """Reverse-mode (dtheta, dx) for L with dL/dy = upstream.

    Batched inputs sum dtheta over rows and return dx per row.
    """
    x = np.asarray(x, dtype=float)
    _check_norm(x)
    rots = _plan(circuit, params)
    y = subspace_forward(circuit, params, x)
    y = np.atleast_2d(y).T.copy()
    u = np.atleast_2d(np.asarray(upstream, dtype=float)).T.copy()
    grad = np.zeros(circuit.n_params)
    for i, j, th, p, sign in reversed(rots):
        c, s = np.cos(th), np.sin(th)
        # d y_i'/dth = y_j', d y_j'/dth = -y_i'
        if p is not None:
            grad[p] += sign * float(np.sum(u[i] * y[j] - u[j] * y[i]))
        yi, yj = y[i].copy(), y[j]
        y[i] = c * yi - s * yj
        y[j] = s * yi + c * yj
        ui, uj = u[i].copy(), u[j]
        u[i] = c * ui - s * uj
        u[j] = s * ui + c * uj
    dx = u[:, 0] if x.ndim == 1 else u.T
    return grad, dx


def unary_observable_weights(n: int):
    """Basis indices of e_0..e_{n-1} in the full register."""
    return np.array([unary_index(n, j) for j in range(n)])


# ---------------------------------------------------------------------------
# l-infinity tomography

class Tomography(NamedTuple):
    estimate: np.ndarray
    flagged: np.ndarray
    circuits: int
    shots_used: int


def sign_layer(n: int, parity: int):
    """Adjacent pairs (a, a+1) with a = parity mod 2."""
    return [(a, a + 1) for a in range(parity, n - 1, 2)]


def _rbs_layer(y, pairs, theta=np.pi / 4):
    y = y.copy()
    c, s = np.cos(theta), np.sin(theta)
    for a, b in pairs:
        ya, yb = y[a], y[b]
        y[a] = c * ya + s * yb
        y[b] = -s * ya + c * yb
    return y


def tomography_linf(circuit: Circuit, params, x, shots: int, rng, threshold: float | None = None):
    """Signed estimate of y = O x from three unary-outcome circuits.

    Magnitudes come from outcome frequencies of the plain circuit. Two more
    circuits append RBS(pi/4) layers on even and odd adjacent pairs, after
    which p'_a - p'_b = 2 y_a y_b fixes relative signs. Signs are chained
    from the largest component, so the result is defined up to a global
    sign; components below ``threshold`` get sign +1 and are flagged, and so
    is every component whose chain crosses one of them.
    """
    if shots < 1:
        raise DomainError("shots must be >= 1")
    y = subspace_forward(circuit, params, x)
    n = y.size
    thr = 2.0 / np.sqrt(shots) if threshold is None else threshold
    p = rng.multinomial(shots, _probs(y)) / shots
    mag = np.sqrt(p[:n])
    prod = np.zeros(n - 1)
    for parity in (0, 1):
        pairs = sign_layer(n, parity)
        q = rng.multinomial(shots, _probs(_rbs_layer(y, pairs))) / shots
        for a, b in pairs:
            prod[a] = (q[a] - q[b]) / 2
    sign = np.ones(n)
    flagged = mag < thr
    anchor = int(np.argmax(mag))
    for step, rng_idx in ((1, range(anchor + 1, n)), (-1, range(anchor - 1, -1, -1))):
        broken = False
        for j in rng_idx:
            prev = j - step
            if flagged[j] or flagged[prev] or broken:
                broken = broken or flagged[j] or flagged[prev]
                sign[j] = 1.0 if flagged[j] else sign[j]
                flagged[j] = True
                continue
            pair = min(j, prev)
            sign[j] = sign[prev] * (1.0 if prod[pair] >= 0 else -1.0)
    return Tomography(sign * mag, flagged, 3, 3 * shots)


def _probs(y):
    p = np.append(y ** 2, max(0.0, 1 - float(np.sum(y ** 2))))
    return p / p.sum()
