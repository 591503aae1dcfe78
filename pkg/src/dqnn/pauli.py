"""Pauli strings and Pauli-sum observables.

Labels are strings over ``IXYZ`` with character ``q`` acting on qubit ``q``.
Qubit 0 is the most significant bit of the basis index (big-endian), so
qubit ``q`` maps to bit ``n - 1 - q``.
"""
from __future__ import annotations

from functools import lru_cache
import math

import numpy as np

from .errors import QubitIndexError, DomainError

_PAULI_CHARS = frozenset("IXYZ")

# single-qubit products: (a, b) -> (phase, c) with a*b = phase*c
_PRODUCT = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_ZERO_TOL = 1e-13


def pauli_product(a: str, b: str):
    """Return (phase, label) with P_a P_b = phase * P_label."""
    phase = 1 + 0j
    out = []
    for ca, cb in zip(a, b):
        p, c = _PRODUCT[ca, cb]
        phase *= p
        out.append(c)
    return phase, "".join(out)


def strings_commute(a: str, b: str) -> bool:
    """Full commutation: the number of anticommuting sites is even."""
    anti = sum(1 for ca, cb in zip(a, b) if ca != "I" and cb != "I" and ca != cb)
    return anti % 2 == 0


def qubitwise_commute(a: str, b: str) -> bool:
    return all(ca == "I" or cb == "I" or ca == cb for ca, cb in zip(a, b))


def label_from_dict(n: int, ops: dict) -> str:
    """Build a label from ``{qubit: 'X'}`` style input."""
    chars = ["I"] * n
    for q, c in ops.items():
        if not 0 <= q < n:
            raise QubitIndexError(f"qubit {q} outside 0..{n - 1}")
        chars[q] = c
    return "".join(chars)


@lru_cache(maxsize=4096)
def _masks(label: str):
    n = len(label)
    xm = zm = ny = 0
    for q, c in enumerate(label):
        bit = 1 << (n - 1 - q)
        if c in "XY":
            xm |= bit
        if c in "ZY":
            zm |= bit
        if c == "Y":
            ny += 1
    return xm, zm, ny


@lru_cache(maxsize=4096)
def _action(label: str):
    """Index permutation and phases so that (P psi)[t] = phase[t] * psi[perm[t]]."""
    n = len(label)
    xm, zm, ny = _masks(label)
    t = np.arange(2 ** n, dtype=np.int64)
    src = t ^ xm
    sign = 1 - 2 * (np.bitwise_count(src & zm) & 1).astype(np.int64)
    phase = (1j) ** ny * sign
    perm = None if xm == 0 else src
    phase.setflags(write=False)
    if perm is not None:
        perm.setflags(write=False)
    return perm, phase


@lru_cache(maxsize=4096)
def _flip_axes(label: str):
    return tuple(q for q, c in enumerate(label) if c in "XY")


def apply_pauli(label: str, psi: np.ndarray) -> np.ndarray:
    """P psi along the last axis (bit flips as axis reversals, then phases)."""
    perm, phase = _action(label)
    if perm is None:
        return psi * phase
    lead = psi.shape[:-1]
    t = psi.reshape(lead + (2,) * len(label))
    axes = tuple(len(lead) + q for q in _flip_axes(label))
    return np.flip(t, axis=axes).reshape(psi.shape) * phase


def pauli_diagonal(label: str) -> np.ndarray:
    """Diagonal of a Z/I-only string as a real vector of +-1."""
    xm, zm, _ = _masks(label)
    if xm:
        raise ValueError(f"{label} is not diagonal")
    t = np.arange(2 ** len(label), dtype=np.int64)
    return 1.0 - 2.0 * (np.bitwise_count(t & zm) & 1)


def pauli_matrix(label: str) -> np.ndarray:
    m = np.ones((1, 1), dtype=complex)
    for c in label:
        m = np.kron(m, _SINGLE[c])
    return m


class Observable:
    """Weighted sum of Pauli strings, sum_k c_k P_k.

    Coefficients are stored as complex numbers so that commutators (which are
    anti-Hermitian) can be represented; physical observables have real
    coefficients, see :attr:`is_hermitian`.
    """

    __slots__ = ("n_qubits", "_terms")

    def __init__(self, terms, n_qubits: int | None = None):
        collected: dict = {}
        for coef, label in terms:
            if set(label) - _PAULI_CHARS:
                raise QubitIndexError(f"bad Pauli label {label!r}")
            if n_qubits is None:
                n_qubits = len(label)
            elif len(label) != n_qubits:
                raise QubitIndexError(f"label {label!r} does not have {n_qubits} qubits")
            c = complex(coef)
            if not (math.isfinite(c.real) and math.isfinite(c.imag)):
                raise DomainError("non-finite coefficient")
            collected[label] = collected.get(label, 0) + c
        if n_qubits is None:
            raise QubitIndexError("empty observable needs n_qubits")
        self.n_qubits = n_qubits
        self._terms = tuple((c, lab) for lab, c in collected.items() if abs(c) > _ZERO_TOL)

    @property
    def terms(self):
        """Tuple of (coefficient, label); coefficients real when Hermitian."""
        if self.is_hermitian:
            return tuple((c.real, lab) for c, lab in self._terms)
        return self._terms

    @property
    def is_hermitian(self) -> bool:
        return all(abs(c.imag) <= _ZERO_TOL for c, _ in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def __len__(self):
        return len(self._terms)

    def __iter__(self):
        return iter(self.terms)

    def __repr__(self):
        if not self._terms:
            return f"Observable(0, n={self.n_qubits})"
        body = " + ".join(f"{_fmt(c)}*{lab}" for c, lab in self.terms)
        return f"Observable({body})"

    def __add__(self, other):
        _check_same(self, other)
        return Observable(self._terms + other._terms, self.n_qubits)

    def __sub__(self, other):
        return self + (-1) * other

    def __neg__(self):
        return (-1) * self

    def __mul__(self, other):
        if isinstance(other, Observable):
            _check_same(self, other)
            out = []
            for ca, la in self._terms:
                for cb, lb in other._terms:
                    ph, lab = pauli_product(la, lb)
                    out.append((ca * cb * ph, lab))
            return Observable(out, self.n_qubits)
        return Observable([(other * c, lab) for c, lab in self._terms], self.n_qubits)

    __rmul__ = __mul__

    def real(self):
        if not self.is_hermitian:
            raise DomainError("observable has imaginary coefficients")
        return Observable([(c.real, lab) for c, lab in self._terms], self.n_qubits)

    def allclose(self, other, atol=1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= atol for c, _ in diff._terms)

    def is_diagonal(self) -> bool:
        return all(set(lab) <= {"I", "Z"} for _, lab in self._terms)

    def labels(self):
        return [lab for _, lab in self._terms]

    def to_matrix(self) -> np.ndarray:
        dim = 2 ** self.n_qubits
        m = np.zeros((dim, dim), dtype=complex)
        for c, lab in self._terms:
            perm, phase = _action(lab)
            rows = np.arange(dim)
            cols = rows if perm is None else perm
            m[rows, cols] += c * phase
        return m

    def diagonal(self) -> np.ndarray:
        """Diagonal of a Z-type observable."""
        d = np.zeros(2 ** self.n_qubits)
        for c, lab in self.terms:
            d += c * pauli_diagonal(lab)
        return d

    def apply(self, psi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(psi, dtype=complex)
        for c, lab in self._terms:
            out += c * apply_pauli(lab, psi)
        return out

    def norm_inf(self) -> float:
        """Largest-magnitude eigenvalue."""
        if self.is_zero():
            return 0.0
        if self.is_diagonal():
            return float(np.max(np.abs(self.diagonal())))
        ev = np.linalg.eigvalsh(self.to_matrix())
        return float(np.max(np.abs(ev)))

    def to_json(self):
        return [[c, lab] for c, lab in self.terms]

    @classmethod
    def from_json(cls, data, n_qubits=None):
        return cls([(c, lab) for c, lab in data], n_qubits)


def _fmt(c):
    if isinstance(c, complex):
        return f"({c.real:+.6g}{c.imag:+.6g}j)"
    return f"{c:+.6g}"


def _check_same(a, b):
    if a.n_qubits != b.n_qubits:
        raise QubitIndexError(f"qubit count mismatch: {a.n_qubits} vs {b.n_qubits}")


def commutator(a: Observable, b: Observable) -> Observable:
    """[a, b] = ab - ba, expanded over Pauli products with like terms collected."""
    _check_same(a, b)
    out = []
    for ca, la in a._terms:
        for cb, lb in b._terms:
            if strings_commute(la, lb):
                continue
            ph, lab = pauli_product(la, lb)
            # anticommuting strings: ab - ba = 2ab
            out.append((2 * ca * cb * ph, lab))
    return Observable(out, a.n_qubits)


def pauli(n: int, ops: dict, coef: float = 1.0) -> Observable:
    """Single weighted Pauli string from ``{qubit: 'X'}``."""
    return Observable([(coef, label_from_dict(n, ops))], n)


def z_sum(n: int, weights=None) -> Observable:
    """sum_i w_i Z_i (unit weights by default)."""
    if weights is None:
        weights = np.ones(n)
    return Observable([(w, label_from_dict(n, {i: "Z"})) for i, w in enumerate(weights)], n)


def zero(n: int) -> Observable:
    return Observable([], n)


def identity(n: int, coef: float = 1.0) -> Observable:
    return Observable([(coef, "I" * n)], n)
