"""Gate constructors and the RBS / FBS gate algebra.

RBS(theta) = exp(-i theta Q) with Q = (Y(x)X - X(x)Y)/2. On the two-qubit
basis |00>, |01>, |10>, |11> it is the identity on |00>, |11> and the
rotation [[cos, -sin], [sin, cos]] on span{|01>, |10>}.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError, QubitIndexError, UnitarityError
from .pauli import Observable
from .statevec import State, apply_matrix, check_unitary, check_targets

KINDS = ("RBS", "FBS", "RX", "RY", "RZ", "CNOT", "CZ", "X", "H", "CONTROLLED", "CUSTOM")


@dataclass(frozen=True)
class GateMatrix:
    matrix: np.ndarray
    kind: str = "CUSTOM"
    param: float | None = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return int(round(math.log2(self.dim)))


def _angle(theta) -> float:
    theta = float(theta)
    if not math.isfinite(theta):
        raise DomainError(f"angle must be finite, got {theta}")
    return theta


def rbs_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1, 0, 0, 0],
                     [0, c, -s, 0],
                     [0, s, c, 0],
                     [0, 0, 0, 1]], dtype=complex)


def rbs(theta) -> GateMatrix:
    theta = _angle(theta)
    return GateMatrix(rbs_matrix(theta), "RBS", theta)


def rbs_generator() -> Observable:
    """Q = (Y X - X Y) / 2 on two qubits."""
    return Observable([(0.5, "YX"), (-0.5, "XY")])


def rx(theta) -> GateMatrix:
    t = _angle(theta) / 2
    c, s = math.cos(t), math.sin(t)
    return GateMatrix(np.array([[c, -1j * s], [-1j * s, c]]), "RX", 2 * t)


def ry(theta) -> GateMatrix:
    t = _angle(theta) / 2
    c, s = math.cos(t), math.sin(t)
    return GateMatrix(np.array([[c, -s], [s, c]], dtype=complex), "RY", 2 * t)


def rz(theta) -> GateMatrix:
    t = _angle(theta) / 2
    return GateMatrix(np.diag([np.exp(-1j * t), np.exp(1j * t)]), "RZ", 2 * t)


def x() -> GateMatrix:
    return GateMatrix(np.array([[0, 1], [1, 0]], dtype=complex), "X")


def h() -> GateMatrix:
    return GateMatrix(np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2), "H")


def cnot() -> GateMatrix:
    """Control on the first target qubit."""
    m = np.eye(4, dtype=complex)[[0, 1, 3, 2]]
    return GateMatrix(m, "CNOT")


def cz() -> GateMatrix:
    return GateMatrix(np.diag([1, 1, 1, -1]).astype(complex), "CZ")


def controlled(u) -> GateMatrix:
    """Control qubit first; ``u`` sits in the |1>-control block."""
    m = np.asarray(getattr(u, "matrix", u), dtype=complex)
    check_unitary(m)
    d = m.shape[0]
    out = np.eye(2 * d, dtype=complex)
    out[d:, d:] = m
    return GateMatrix(out, "CONTROLLED", getattr(u, "param", None))


def custom(matrix) -> GateMatrix:
    m = np.asarray(matrix, dtype=complex)
    check_unitary(m)
    return GateMatrix(m, "CUSTOM")


def standard_gates() -> dict:
    """Constructors by name."""
    return {"RX": rx, "RY": ry, "RZ": rz, "X": x, "H": h, "CNOT": cnot, "CZ": cz,
            "CONTROLLED": controlled, "RBS": rbs}


def rotation_matrix(kind: str, theta: float) -> np.ndarray:
    """Matrix for parameterized kinds without validation (hot path)."""
    if kind == "RX":
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "RY":
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
    if kind == "RBS":
        return rbs_matrix(theta)
    raise ValueError(kind)


def rotation_matrices(kind: str, thetas: np.ndarray) -> np.ndarray:
    """Stack of single-qubit rotation matrices, shape (B, 2, 2)."""
    c, s = np.cos(thetas / 2), np.sin(thetas / 2)
    out = np.empty(thetas.shape + (2, 2), dtype=complex)
    if kind == "RX":
        out[..., 0, 0] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
        out[..., 1, 1] = c
    elif kind == "RY":
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
    elif kind == "RZ":
        out[..., 0, 0] = np.exp(-0.5j * thetas)
        out[..., 0, 1] = 0
        out[..., 1, 0] = 0
        out[..., 1, 1] = np.exp(0.5j * thetas)
    else:
        raise ValueError(kind)
    return out


FIXED = {"X": x, "H": h, "CNOT": cnot, "CZ": cz}


def _pair_indices(n: int, i: int, j: int):
    """Basis indices with (bit_i, bit_j) = (0, 1) and their (1, 0) partners."""
    bi, bj = 1 << (n - 1 - i), 1 << (n - 1 - j)
    idx = np.arange(2 ** n, dtype=np.int64)
    lo = idx[((idx & bi) == 0) & ((idx & bj) != 0)]
    return lo, lo ^ bi ^ bj


def fbs_signs(n: int, i: int, j: int) -> np.ndarray:
    """+1 where the parity of qubits strictly between i and j is odd, else -1."""
    lo, _ = _pair_indices(n, i, j)
    between = 0
    for k in range(i + 1, j):
        between |= 1 << (n - 1 - k)
    par = np.bitwise_count(lo & between) & 1
    return np.where(par == 1, 1.0, -1.0)


def apply_fbs_array(psi: np.ndarray, n: int, i: int, j: int, theta) -> np.ndarray:
    """FBS action on the last axis; ``theta`` may be per-sample."""
    lo, hi = _pair_indices(n, i, j)
    sign = fbs_signs(n, i, j)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim:
        theta = theta[:, None]
    c = np.cos(theta)
    s = np.sin(theta) * sign
    a, b = psi[..., lo], psi[..., hi]
    out = psi.copy()
    # on (|..0_i..1_j..>, |..1_i..0_j..>) apply [[c, -s], [s, c]] with signed s
    out[..., lo] = c * a - s * b
    out[..., hi] = s * a + c * b
    return out


def apply_fbs(state: State, i: int, j: int, theta) -> State:
    """Fermionic beam splitter on qubits i < j.

    Acts as RBS(theta) on basis components whose qubits strictly between
    i and j have odd parity, and as RBS(-theta) otherwise (so adjacent
    qubits get RBS(-theta)).
    """
    n = state.n_qubits
    if not (0 <= i < j < n):
        raise QubitIndexError(f"FBS needs 0 <= i < j < n, got i={i}, j={j}")
    theta = _angle(theta)
    return State(apply_fbs_array(state.amplitudes, n, i, j, theta), n)


def fbs_generator(n: int, i: int, j: int) -> Observable:
    """Pauli form of the FBS generator: -Q_ij times Z on every qubit between."""
    terms = []
    for coef, pair in ((-0.5, "YX"), (0.5, "XY")):
        chars = ["I"] * n
        chars[i], chars[j] = pair[0], pair[1]
        for k in range(i + 1, j):
            chars[k] = "Z"
        terms.append((coef, "".join(chars)))
    return Observable(terms, n)


def fbs_decomposition(n: int, i: int, j: int, theta: float):
    """Gate list realizing FBS_ij from CNOT parity compute, CZ and an RBS.

    The parity of qubits i+1..j-1 is accumulated into qubit i+1, a CZ from
    that qubit onto j conjugates the rotation, then the parity is uncomputed.
    The central rotation is RBS(-theta) so that odd parity yields RBS(theta).
    """
    if not (0 <= i < j < n):
        raise QubitIndexError(f"FBS needs 0 <= i < j < n, got i={i}, j={j}")
    ladder = [(cnot(), (k + 1, k)) for k in range(j - 2, i, -1)]
    ops = list(ladder)
    if j - i > 1:
        ops.append((cz(), (i + 1, j)))
    ops.append((rbs(-theta), (i, j)))
    if j - i > 1:
        ops.append((cz(), (i + 1, j)))
    ops.extend(reversed(ladder))
    return ops


def circuit_matrix(ops, n: int) -> np.ndarray:
    """Dense unitary of a (GateMatrix, targets) list, for verification."""
    u = np.eye(2 ** n, dtype=complex)
    # columns are basis states; apply each gate on the row axis
    u = u.T
    for g, targets in ops:
        targets = check_targets(targets, n)
        u = apply_matrix(u, g.matrix, targets, n)
    return u.T


def is_unitary(m, tol: float = 1e-12) -> bool:
    try:
        check_unitary(np.asarray(m), tol)
    except UnitarityError:
        return False
    return True
