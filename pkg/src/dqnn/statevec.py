"""Dense statevector and density-matrix simulation.

Qubit 0 is the most significant bit of the basis index (big-endian):
``X`` on qubit 0 of ``|00>`` gives ``|10>``, i.e. index 2.

All hot-path helpers accept a leading batch axis: ``psi`` has shape
``(..., 2**n)`` and gates act on the last axis.
"""
from __future__ import annotations

import numpy as np

from .errors import SizeError, UnitarityError, QubitIndexError, DomainError
from .pauli import Observable, apply_pauli, pauli_diagonal, qubitwise_commute

MAX_QUBITS = 24
UNITARY_TOL = 1e-10


class State:
    """Pure state of ``n_qubits`` qubits."""

    __slots__ = ("n_qubits", "amplitudes")

    def __init__(self, amplitudes, n_qubits: int | None = None):
        amps = np.asarray(amplitudes, dtype=complex)
        if amps.ndim != 1:
            raise SizeError("amplitudes must be a vector")
        n = int(round(np.log2(amps.size))) if amps.size else -1
        if n_qubits is None:
            n_qubits = n
        if amps.size != 2 ** n_qubits or not 1 <= n_qubits <= MAX_QUBITS:
            raise SizeError(f"expected 2**n amplitudes with 1 <= n <= {MAX_QUBITS}, got {amps.size}")
        self.n_qubits = n_qubits
        self.amplitudes = amps

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __repr__(self):
        return f"State(n_qubits={self.n_qubits})"


class DensityMatrix:
    """Mixed state on ``n_qubits`` qubits."""

    __slots__ = ("n_qubits", "entries")

    def __init__(self, entries, n_qubits: int | None = None):
        m = np.asarray(entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise SizeError("density matrix must be square")
        n = int(round(np.log2(m.shape[0])))
        if n_qubits is None:
            n_qubits = n
        if m.shape[0] != 2 ** n_qubits:
            raise SizeError("dimension is not 2**n_qubits")
        self.n_qubits = n_qubits
        self.entries = m

    @classmethod
    def from_state(cls, state):
        """|psi><psi| from a State or a bare amplitude vector."""
        if not isinstance(state, State):
            state = State(state)
        a = state.amplitudes
        return cls(np.outer(a, a.conj()), state.n_qubits)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def is_valid(self, tol: float = 1e-10) -> bool:
        m = self.entries
        if np.max(np.abs(m - m.conj().T)) > tol or abs(self.trace() - 1) > tol:
            return False
        return bool(np.min(np.linalg.eigvalsh(m)) >= -1e-9)

    def expectation(self, obs: Observable) -> float:
        _check_obs(obs, self.n_qubits)
        return float(np.real(np.trace(obs.to_matrix() @ self.entries)))

    def __repr__(self):
        return f"DensityMatrix(n_qubits={self.n_qubits})"


def new_state(n: int) -> State:
    """|0...0> on n qubits."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise SizeError(f"n must be in 1..{MAX_QUBITS}, got {n}")
    amps = np.zeros(2 ** n, dtype=complex)
    amps[0] = 1.0
    return State(amps, n)


def basis_state(n: int, bits) -> State:
    """Computational basis state from a bit string ("0110") or an index."""
    s = new_state(n)
    idx = int(bits, 2) if isinstance(bits, str) else int(bits)
    s.amplitudes[0] = 0
    s.amplitudes[idx] = 1
    return s


def check_targets(targets, n: int):
    targets = [int(t) for t in targets]
    if len(set(targets)) != len(targets):
        raise QubitIndexError(f"duplicate targets {targets}")
    for t in targets:
        if not 0 <= t < n:
            raise QubitIndexError(f"target {t} outside 0..{n - 1}")
    return targets


def check_unitary(m: np.ndarray, tol: float = UNITARY_TOL):
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise UnitarityError("gate must be a square matrix")
    if not np.all(np.isfinite(m)):
        raise UnitarityError("gate has non-finite entries")
    if np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) > tol:
        raise UnitarityError("gate is not unitary")


def apply_matrix(psi: np.ndarray, mat: np.ndarray, targets, n: int) -> np.ndarray:
    """Apply a 2^k x 2^k matrix on ``targets`` (no checks, batch aware)."""
    k = len(targets)
    lead = psi.shape[:-1]
    if k == 1:
        q = targets[0]
        if q == n - 1:
            return np.einsum("ij,aj->ai", mat, psi.reshape(-1, 2)).reshape(psi.shape)
        t = psi.reshape((-1, 2 ** q, 2, 2 ** (n - q - 1)))
        return np.matmul(mat, t).reshape(psi.shape)
    t = psi.reshape(lead + (2,) * n)
    nl = len(lead)
    axes = [nl + q for q in targets]
    m = mat.reshape((2,) * (2 * k))
    out = np.tensordot(m, t, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return out.reshape(psi.shape)


def apply_matrix_batched(psi: np.ndarray, mats: np.ndarray, q: int, n: int) -> np.ndarray:
    """Per-sample single-qubit matrices ``mats`` of shape (B, 2, 2) on qubit q."""
    b = psi.shape[0]
    t = psi.reshape((b, 2 ** q, 2, 2 ** (n - q - 1)))
    return np.matmul(mats[:, None], t).reshape(psi.shape)


def apply_gate(state: State, gate, targets) -> State:
    """Apply a unitary gate (GateMatrix or array) on ``targets``."""
    mat = getattr(gate, "matrix", gate)
    mat = np.asarray(mat, dtype=complex)
    targets = check_targets(targets, state.n_qubits)
    if mat.shape != (2 ** len(targets),) * 2:
        raise QubitIndexError(f"gate of shape {mat.shape} does not fit {len(targets)} targets")
    check_unitary(mat)
    return State(apply_matrix(state.amplitudes, mat, targets, state.n_qubits), state.n_qubits)


def _check_obs(obs: Observable, n: int):
    if obs.n_qubits != n:
        raise QubitIndexError(f"observable on {obs.n_qubits} qubits, state has {n}")


def expectation_array(psi: np.ndarray, obs: Observable) -> np.ndarray:
    """<psi|O|psi> along the last axis (real part)."""
    total = np.zeros(psi.shape[:-1])
    probs = None
    for c, lab in obs.terms:
        c = np.real(c)
        if set(lab) <= {"I", "Z"}:
            if probs is None:
                probs = np.abs(psi) ** 2
            total = total + c * (probs @ pauli_diagonal(lab))
        else:
            total = total + c * np.real(np.sum(psi.conj() * apply_pauli(lab, psi), axis=-1))
    return total


def expectation(state: State, obs: Observable) -> float:
    """Exact <psi|O|psi>."""
    _check_obs(obs, state.n_qubits)
    if not obs.is_hermitian:
        raise DomainError("observable must have real coefficients")
    return float(expectation_array(state.amplitudes, obs))


def qwc_groups(labels):
    """Greedy qubit-wise-commuting grouping; returns lists of indices."""
    groups = []
    for i, lab in enumerate(labels):
        for g in groups:
            if all(qubitwise_commute(lab, labels[j]) for j in g):
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_HSDG = _H @ np.diag([1, -1j])


def rotate_to_z(psi: np.ndarray, basis: str, n: int) -> np.ndarray:
    """Rotate so that measuring Z on each qubit measures ``basis[q]``."""
    for q, c in enumerate(basis):
        if c == "X":
            psi = apply_matrix(psi, _H, [q], n)
        elif c == "Y":
            psi = apply_matrix(psi, _HSDG, [q], n)
    return psi


def group_basis(labels) -> str:
    n = len(labels[0])
    basis = ["Z"] * n
    for lab in labels:
        for q, c in enumerate(lab):
            if c != "I":
                basis[q] = c
    return "".join(basis)


def z_image(label: str) -> str:
    """Label after the QWC basis change (every non-identity becomes Z)."""
    return "".join("I" if c == "I" else "Z" for c in label)


def sample_counts(probs: np.ndarray, shots: int, rng) -> np.ndarray:
    p = np.clip(probs, 0, None)
    return rng.multinomial(shots, p / p.sum())


def sample_expectation(state: State, obs: Observable, shots: int, rng):
    """Shot-noise estimate of <O>; returns (estimate, circuits_used).

    Terms are grouped by qubit-wise commutation; each group costs one
    measurement circuit with ``shots`` samples. Identity terms are added
    exactly and cost nothing.
    """
    _check_obs(obs, state.n_qubits)
    if shots < 1:
        raise DomainError("shots must be >= 1")
    n = state.n_qubits
    estimate = 0.0
    terms = [(np.real(c), lab) for c, lab in obs.terms]
    const = sum(c for c, lab in terms if set(lab) == {"I"})
    terms = [(c, lab) for c, lab in terms if set(lab) != {"I"}]
    groups = qwc_groups([lab for _, lab in terms])
    for g in groups:
        labels = [terms[i][1] for i in g]
        psi = rotate_to_z(state.amplitudes, group_basis(labels), n)
        counts = sample_counts(np.abs(psi) ** 2, shots, rng)
        for i in g:
            c, lab = terms[i]
            estimate += c * float(counts @ pauli_diagonal(z_image(lab))) / shots
    return estimate + const, len(groups)


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Reduced state on ``keep`` (qubits ordered as given)."""
    n = rho.n_qubits
    keep = list(keep)
    if not keep:
        raise QubitIndexError("keep must be non-empty")
    keep = check_targets(keep, n)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if 2 * n > len(letters):
        raise SizeError("too many qubits for partial_trace")
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for q in range(n):
        if q not in keep:
            col[q] = row[q]
    out = "".join(row[q] for q in keep) + "".join(col[q] for q in keep)
    t = rho.entries.reshape((2,) * (2 * n))
    red = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = 2 ** len(keep)
    return DensityMatrix(red.reshape(d, d), len(keep))
