"""Gradient engines and circuit accounting.

Engines
-------
``shift``      two-term rule for Pauli-type generators, four-term rule for
               RBS/FBS gates, one shifted pair (or quadruple) per gate
               occurrence.
``commuting``  one forward state per measurement group of a commuting
               block, gradient observables i[G, H] read off after a
               diagonalizing suffix.
``adjoint``    exact reverse-mode sweep over the statevector (simulator
               only, used for fast exact training).

Circuit accounting (``GradientPlan``) follows a fixed resource contract:
two-term shift costs 2 circuits per generator term, four-term costs 4 per
gate, a commuting block costs 1 circuit when it is a layer of RBS/FBS gates
on disjoint pairs (jointly diagonalized by the pairwise P suffix) and 2
otherwise. Parameters whose generator commutes with the observable seen by
the block are detected symbolically and cost 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import json
import math
from typing import NamedTuple

import numpy as np

from .ansatz import Circuit, Loader, apply_op, TWO_TERM, FOUR_TERM_RBS, HW_KINDS
from .errors import RuleMismatchError, ShapeError
from .moe import softmax_backward, gate_backward
from .observables import (plan_measurements, evaluate_group, heisenberg, gradient_observable,
                          conjugate)
from .pauli import Observable, apply_pauli, pauli_diagonal
from .statevec import expectation_array, qwc_groups, rotate_to_z, group_basis, z_image, _H, _HSDG

D1 = 1.0
D2 = (math.sqrt(2) - 1) / 2
ALPHA_SHIFT = math.pi / 4
BETA_SHIFT = math.pi / 2


def _batch(x):
    return None if x is None else np.atleast_2d(np.asarray(x, dtype=float))


def _psi0(circuit, x, loader, psi0):
    if psi0 is not None:
        return np.atleast_2d(psi0)
    loader = loader or Loader("zero")
    return loader.prepare(_batch(x), circuit.n_qubits)


def expval(circuit: Circuit, params, x, H: Observable, loader=None, shift=None, psi0=None,
           shots=None, rng=None) -> np.ndarray:
    """Per-sample <H> after the circuit; sampled when ``shots`` is given."""
    psi = circuit.apply(_psi0(circuit, x, loader, psi0), params, _batch(x), shift=shift)
    if shots is None:
        return expectation_array(psi, H)
    return sampled_expectation_array(psi, H, shots, rng)


def sampled_expectation_array(psi, H: Observable, shots: int, rng) -> np.ndarray:
    n = H.n_qubits
    terms = [(float(np.real(c)), lab) for c, lab in H.terms]
    out = np.zeros(psi.shape[0])
    for g in qwc_groups([lab for _, lab in terms]):
        labels = [terms[i][1] for i in g]
        if set("".join(labels)) == {"I"}:
            out += sum(terms[i][0] for i in g)
            continue
        diag = sum(terms[i][0] * pauli_diagonal(z_image(terms[i][1])) for i in g)
        p = np.abs(rotate_to_z(psi, group_basis(labels), n)) ** 2
        counts = np.stack([rng.multinomial(shots, r / r.sum()) for r in p])
        out += counts @ diag / shots
    return out


def occurrences(circuit: Circuit, p: int):
    """(op_index, term, coefficient) for every generator term carrying param p."""
    out = []
    for i, op in enumerate(circuit.ops):
        if op.param != p:
            continue
        if op.kind == "PAULI":
            for t, (c, _) in enumerate(op.generator.terms):
                out.append((i, t, float(c)))
        elif op.kind in HW_KINDS:
            out.append((i, None, 1.0))
        else:
            out.append((i, None, 0.5))
    return out


def shift_two_term(circuit: Circuit, params, x, H: Observable, param_index: int, loader=None,
                   psi0=None, shots=None, rng=None):
    """Sum over occurrences of c [f(+pi/(4c)) - f(-pi/(4c))]; 1/2 [f(+pi/2) - f(-pi/2)] for R_x/y/z."""
    if circuit.shift_rule[param_index] != TWO_TERM:
        raise RuleMismatchError(f"parameter {param_index} is tagged {circuit.shift_rule[param_index]}")
    total = 0.0
    for i, t, c in occurrences(circuit, param_index):
        s = math.pi / (4 * c)
        plus = expval(circuit, params, x, H, loader, {(i, t): s}, psi0, shots, rng)
        minus = expval(circuit, params, x, H, loader, {(i, t): -s}, psi0, shots, rng)
        total = total + c * (plus - minus)
    return _scalar(total, x)


def shift_four_term_rbs(circuit: Circuit, params, x, H: Observable, param_index: int, loader=None,
                        psi0=None, shots=None, rng=None):
    """[f(+pi/4) - f(-pi/4)] - (sqrt2 - 1)/2 [f(+pi/2) - f(-pi/2)] per RBS/FBS occurrence."""
    if circuit.shift_rule[param_index] != FOUR_TERM_RBS:
        raise RuleMismatchError(f"parameter {param_index} is tagged {circuit.shift_rule[param_index]}")
    total = 0.0
    for i, t, _ in occurrences(circuit, param_index):
        f = {s: expval(circuit, params, x, H, loader, {(i, t): s}, psi0, shots, rng)
             for s in (ALPHA_SHIFT, -ALPHA_SHIFT, BETA_SHIFT, -BETA_SHIFT)}
        total = total + D1 * (f[ALPHA_SHIFT] - f[-ALPHA_SHIFT]) - D2 * (f[BETA_SHIFT] - f[-BETA_SHIFT])
    return _scalar(total, x)


def _scalar(v, x):
    v = np.asarray(v)
    if x is None or np.ndim(x) <= 1:
        return float(v.reshape(-1)[0])
    return v


def shift_gradient(circuit: Circuit, params, x, H: Observable, loader=None, psi0=None,
                   shots=None, rng=None) -> np.ndarray:
    """Full gradient by the parameter-shift rule tagged on each parameter."""
    cols = []
    for p in range(circuit.n_params):
        fn = shift_four_term_rbs if circuit.shift_rule[p] == FOUR_TERM_RBS else shift_two_term
        cols.append(np.atleast_1d(fn(circuit, params, x, H, p, loader, psi0, shots, rng)))
    g = np.stack(cols, axis=-1) if cols else np.zeros((1, 0))
    return g[0] if (x is None or np.ndim(x) <= 1) else g


class BlockGradient(NamedTuple):
    values: np.ndarray
    circuits_used: int
    shots_used: int


def commuting_gradients(circuit: Circuit, params, x, H: Observable, shots=None, rng=None,
                        loader=None, psi0=None, block: int = 0) -> BlockGradient:
    """Gradients of one commuting block from its grouped gradient observables.

    The forward state is prepared once per measurement group, the group's
    diagonalizing suffix is appended and every gradient observable in the
    group is read from the same statistics. ``shots=None`` is exact.
    """
    if not circuit.blocks:
        raise ShapeError("circuit has no commuting block")
    s, e = circuit.blocks[block]
    n = circuit.n_qubits
    xb = _batch(x)
    psi = circuit.apply(_psi0(circuit, x, loader, psi0), params, xb, stop=e)
    b = psi.shape[0]
    grad = np.zeros((b, circuit.n_params))
    # data gates after the block make the evolved observable sample dependent
    per_sample = xb is not None and any(op.data is not None for op in circuit.ops[e:])
    rows = [slice(i, i + 1) for i in range(b)] if per_sample else [slice(None)]
    nc = 0
    for r in rows:
        plan = plan_measurements(circuit, H, block, params, xb[r][0] if per_sample else None)
        for g in plan.groups:
            vals = evaluate_group(g, psi[r], n, shots, rng)
            for owner, v in vals.items():
                grad[r, plan.observables[owner].generator_index] += v
        nc = max(nc, len(plan.groups))
    out = grad[0] if (x is None or np.ndim(x) <= 1) else grad
    return BlockGradient(out, nc, nc * (shots or 0))


def adjoint_gradient(circuit: Circuit, params, x, H: Observable, weights=None, loader=None,
                     psi0=None):
    """Exact reverse-mode gradient; returns (f per sample, sum_b w_b df_b/dtheta).

    ``weights`` defaults to ones (the gradient of the summed expectation).
    """
    xb = _batch(x)
    psi = _psi0(circuit, x, loader, psi0)
    angles = circuit.angles(params, xb)
    n = circuit.n_qubits
    psi = circuit.apply(psi, params, xb, angles=angles)
    f = expectation_array(psi, H)
    w = np.ones(psi.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    lam = H.apply(psi) * w[:, None]
    grad = np.zeros(circuit.n_params)
    for i in range(len(circuit.ops) - 1, -1, -1):
        op = circuit.ops[i]
        th = angles[i]
        if op.kind == "PAULI":
            terms = op.generator.terms
            for t in range(len(terms) - 1, -1, -1):
                c, lab = terms[t]
                gpsi = apply_pauli(lab, psi)
                grad[op.param] += 2 * c * float(np.sum(np.imag(np.sum(lam.conj() * gpsi, axis=-1))))
                a = -c * th
                cs, sn = math.cos(a), math.sin(a)
                psi = cs * psi - 1j * sn * gpsi
                lam = cs * lam - 1j * sn * apply_pauli(lab, lam)
            continue
        if op.param is not None:
            gpsi = op.generator.apply(psi)
            grad[op.param] += 2 * float(np.sum(np.imag(np.sum(lam.conj() * gpsi, axis=-1))))
        inv = None if th is None else -th
        psi = _inverse(psi, op, inv, n)
        lam = _inverse(lam, op, inv, n)
    return f, grad


def _inverse(psi, op, neg_theta, n):
    if op.kind == "H" or op.kind == "X" or op.kind == "CNOT" or op.kind == "CZ":
        return apply_op(psi, op, None, n)
    return apply_op(psi, op, neg_theta, n)


def shared_basis(circuit: Circuit):
    """Per-qubit basis letter if every generator term uses one letter per qubit, else None."""
    basis = ["Z"] * circuit.n_qubits
    seen = [False] * circuit.n_qubits
    for op in circuit.ops:
        if not op.trainable or op.kind in HW_KINDS:
            return None
        for _, lab in op.generator.terms:
            for q, ch in enumerate(lab):
                if ch == "I":
                    continue
                if seen[q] and basis[q] != ch:
                    return None
                basis[q], seen[q] = ch, True
    return "".join(basis)


_FRAME = {"X": _H, "Y": _HSDG, "Z": None}


@lru_cache(maxsize=256)
def diagonal_block(circuit: Circuit):
    """Cached DiagonalBlock for a circuit, or None when the fast path does not apply."""
    try:
        return DiagonalBlock(circuit)
    except ShapeError:
        return None


class DiagonalBlock:
    """Fast exact evaluator for one commuting block of Pauli rotations.

    All generator terms share a single-qubit basis per qubit, so one layer
    of basis changes W makes every generator diagonal: U = W^dagger
    exp(-i sum_k theta_k D_k) W. In the rotated frame the observable becomes
    W H W^dagger (cached per H), and forward plus gradient cost one phase
    multiply and one observable application.
    """

    def __init__(self, circuit: Circuit):
        basis = shared_basis(circuit)
        if basis is None or len(circuit.blocks) != 1:
            raise ShapeError("circuit is not a single block with a shared Pauli basis")
        self.circuit = circuit
        self.basis = basis
        self.frame = [_FRAME[b] for b in basis]
        n = circuit.n_qubits
        self.D = np.zeros((circuit.n_params, 2 ** n))
        for op in circuit.ops:
            for c, lab in op.generator.terms:
                self.D[op.param] += float(c) * pauli_diagonal(z_image(lab))
        self._obs = {}

    def rotated(self, H: Observable) -> Observable:
        key = tuple(H.terms)
        if key not in self._obs:
            M = H
            for q, m in enumerate(self.frame):
                if m is not None:
                    M = conjugate(M, m.conj().T, [q])
            self._obs[key] = M
        return self._obs[key]

    def values(self, params, x, H: Observable, loader=None):
        loader = loader or Loader("zero")
        phi = loader.prepare(_batch(x), self.circuit.n_qubits, frame=self.frame)
        chi = phi * np.exp(-1j * (np.asarray(params) @ self.D))
        return np.real(np.sum(chi.conj() * self.rotated(H).apply(chi), axis=1))

    def value_and_jac(self, params, x, H: Observable, loader=None):
        """(f per sample, per-sample gradients (B, n_params))."""
        loader = loader or Loader("zero")
        phi = loader.prepare(_batch(x), self.circuit.n_qubits, frame=self.frame)
        chi = phi * np.exp(-1j * (np.asarray(params) @ self.D))
        m_chi = self.rotated(H).apply(chi)
        prod = m_chi.conj() * chi
        return np.real(np.sum(prod, axis=1)), 2 * np.imag(prod) @ self.D.T

    def value_and_grad(self, params, x, H: Observable, loader=None, weights=None):
        """(f per sample, sum_b w_b df_b/dtheta)."""
        c = self.circuit
        loader = loader or Loader("zero")
        phi = loader.prepare(_batch(x), c.n_qubits, frame=self.frame)
        chi = phi * np.exp(-1j * (np.asarray(params) @ self.D))
        m_chi = self.rotated(H).apply(chi)
        f = np.real(np.sum(chi.conj() * m_chi, axis=1))
        w = np.ones(chi.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        g = 2 * np.imag(w @ (m_chi.conj() * chi)) @ self.D.T
        return f, g


def finite_difference(fn, params, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function."""
    params = np.asarray(params, dtype=float)
    g = np.zeros_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = h
        g[i] = (fn(params + e) - fn(params - e)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# accounting

@dataclass
class PlanEntry:
    subunit: int
    descriptor: str
    params: tuple
    circuits: int
    shots: int = 0
    group: int | None = None
    zero: bool = False

    def to_dict(self):
        return {"subunit": self.subunit, "circuit": self.descriptor, "params": list(self.params),
                "circuits": self.circuits, "shots": self.shots, "group": self.group,
                "zero_gradient": self.zero}


@dataclass
class GradientPlan:
    engine: str
    entries: list = field(default_factory=list)
    T_matrix: np.ndarray | None = None
    n_params: int = 0
    n_measurement_settings: int | None = None

    @property
    def n_gradient_circuits(self) -> int:
        return int(sum(e.circuits for e in self.entries))

    @property
    def n_shots(self) -> int:
        return int(sum(e.circuits * e.shots for e in self.entries))

    def covered(self):
        out = set()
        for e in self.entries:
            out.update(e.params)
        return out

    def to_dict(self):
        return {"engine": self.engine, "n_params": self.n_params,
                "n_gradient_circuits": self.n_gradient_circuits,
                "n_measurement_settings": self.n_measurement_settings,
                "T_matrix": None if self.T_matrix is None else self.T_matrix.tolist(),
                "entries": [e.to_dict() for e in self.entries]}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def rule_cost(circuit: Circuit, p: int) -> int:
    if circuit.shift_rule[p] == FOUR_TERM_RBS:
        return 4 * len(occurrences(circuit, p))
    return 2 * len(occurrences(circuit, p))


def _evolved_H(circuit, H, start, params):
    try:
        return heisenberg(H, circuit, params, start=start)
    except ShapeError:
        return None


def _is_zero(circuit, op_indices, H_eff) -> bool:
    if H_eff is None:
        return False
    return all(gradient_observable(circuit.ops[i].generator, H_eff).is_zero() for i in op_indices)


def block_cost(circuit: Circuit, block: int) -> int:
    """1 for a layer of RBS/FBS gates on disjoint pairs, else 2."""
    s, e = circuit.blocks[block]
    ops = [circuit.ops[i] for i in range(s, e) if circuit.ops[i].trainable]
    qubits = [q for op in ops for q in op.targets]
    if ops and all(op.kind in HW_KINDS for op in ops) and len(qubits) == len(set(qubits)):
        return 1
    return 2


def circuit_plan(circuit: Circuit, H: Observable | None, engine: str, subunit: int = 0,
                 params=None, shots: int = 0, index_map=None):
    """Plan entries for one circuit; ``index_map`` maps local to global params."""
    idx = np.arange(circuit.n_params) if index_map is None else np.asarray(index_map)
    entries = []
    if engine in ("shift", "adjoint"):
        for p in range(circuit.n_params):
            ops_p = [i for i, _, _ in occurrences(circuit, p)]
            zero = False
            if H is not None and len({circuit.block_of(i) for i in ops_p}) == 1:
                end = circuit.blocks[circuit.block_of(ops_p[0])][1] if circuit.block_of(ops_p[0]) >= 0 \
                    else ops_p[-1] + 1
                zero = _is_zero(circuit, ops_p, _evolved_H(circuit, H, end, params))
            rule = "four-term" if circuit.shift_rule[p] == FOUR_TERM_RBS else "two-term"
            entries.append(PlanEntry(subunit, f"{circuit.name}:param{p}:{rule}-shift",
                                     (int(idx[p]),), 0 if zero else rule_cost(circuit, p),
                                     shots, zero=zero))
    elif engine == "commuting":
        for b, (s, e) in enumerate(circuit.blocks):
            ops_b = [i for i in range(s, e) if circuit.ops[i].trainable]
            ps = tuple(sorted({int(idx[circuit.ops[i].param]) for i in ops_b}))
            zero = H is not None and _is_zero(circuit, ops_b, _evolved_H(circuit, H, e, params))
            entries.append(PlanEntry(subunit, f"{circuit.name}:block{b}:commuting", ps,
                                     0 if zero else block_cost(circuit, b), shots, group=b,
                                     zero=zero))
    else:
        raise ShapeError(f"unknown engine {engine}")
    return entries


def model_plan(model, H: Observable | None, engine: str, shots: int = 0, params=True) -> GradientPlan:
    """Plan for a DensityModel: per-sub-unit sums, plus cross terms T[l, k] when parameters are shared."""
    K = model.K
    plan = GradientPlan(engine, n_params=model.n_flat)
    T = np.zeros((K, K), dtype=int)
    for k, c in enumerate(model.circuits):
        pk = model.subunit_params(k) if params else None
        entries = circuit_plan(c, H, engine, k, pk, shots, model.index_map[k])
        for l in range(K):
            shared = set(model.index_map[l].tolist())
            T[l, k] = sum(e.circuits for e in entries if set(e.params) & shared)
        plan.entries.extend(entries)
    if model.shared:
        # every (l, k) pair with shared parameters needs its own evaluations
        extra = []
        for l in range(K):
            for k in range(K):
                if l != k and T[l, k]:
                    extra.append(PlanEntry(k, f"cross:l{l}:k{k}", tuple(
                        sorted(set(model.index_map[l].tolist()) & set(model.index_map[k].tolist()))),
                        int(T[l, k]), shots))
        plan.entries.extend(extra)
    plan.T_matrix = T
    return plan


# ---------------------------------------------------------------------------
# density gradient

def _subunit_grad(circuit, params, x, H, loader, engine, mode, shots, rng, weights):
    """(f per sample, sum_b w_b df_b/dtheta_local, circuits actually run)."""
    xb = _batch(x)
    if engine == "auto":
        if mode != "exact":
            engine = "commuting"
        else:
            fast = diagonal_block(circuit)
            if fast is not None:
                f, g = fast.value_and_grad(params, xb, H, loader, weights)
                return f, g, 0
            engine = "adjoint"
    if engine == "adjoint":
        if mode != "exact":
            raise ShapeError("adjoint engine is exact only")
        f, g = adjoint_gradient(circuit, params, xb, H, weights, loader)
        return f, g, 0
    sh = None if mode == "exact" else shots
    f = expval(circuit, params, xb, H, loader, shots=sh, rng=rng)
    if engine == "shift":
        g = shift_gradient(circuit, params, xb, H, loader, shots=sh, rng=rng)
        return f, weights @ g, sum(rule_cost(circuit, p) for p in range(circuit.n_params))
    if engine == "commuting":
        g = np.zeros(circuit.n_params)
        used = 0
        for b in range(len(circuit.blocks)):
            r = commuting_gradients(circuit, params, xb, H, sh, rng, loader, block=b)
            g += weights @ r.values
            used += r.circuits_used
        return f, g, used
    raise ShapeError(f"unknown engine {engine}")


def fast_subunit_expectations(model, x, H: Observable) -> np.ndarray:
    """f_k(x) per sample and sub-unit, (B, K), using the diagonal fast path when it applies."""
    xb = _batch(x)
    cols = []
    for k, c in enumerate(model.circuits):
        fast = diagonal_block(c)
        if fast is not None:
            cols.append(fast.values(model.subunit_params(k), xb, H, model.loader))
        else:
            psi = c.apply(model.loader.prepare(xb, c.n_qubits), model.subunit_params(k), xb)
            cols.append(expectation_array(psi, H))
    return np.stack(cols, axis=1)


def density_gradient(model, x, H: Observable, mode: str = "exact", engine: str = "adjoint",
                     shots: int = 1000, rng=None, weights=None, with_plan: bool = True,
                     return_values: bool = False):
    """Gradient of sum_b w_b Tr(H rho(x_b)) over the flat layout (theta, logits, gating).

    ``weights`` defaults to 1/B (the batch mean). Returns (gradient, plan);
    the plan is None when ``with_plan`` is false. ``return_values`` appends
    the per-sample model outputs sum_k alpha_k f_k.
    """
    from .density import coefficients
    xb = _batch(x)
    b = 1 if xb is None else xb.shape[0]
    w = np.full(b, 1.0 / b) if weights is None else np.asarray(weights, dtype=float)
    alpha = coefficients(model, xb if model.gating is not None else None)
    alpha = np.broadcast_to(alpha, (b, model.K))
    g_theta = np.zeros_like(model.theta)
    fs = np.zeros((b, model.K))
    executed = 0
    for k, c in enumerate(model.circuits):
        f, g, used = _subunit_grad(c, model.subunit_params(k), xb, H, model.loader, engine, mode,
                                   shots, rng, w * alpha[:, k])
        np.add.at(g_theta, model.index_map[k], g)
        fs[:, k] = f
        executed += used
    d_alpha = w[:, None] * fs
    if model.gating is None:
        g_logits = softmax_backward(alpha[0], d_alpha.sum(axis=0))
        g_gate = np.zeros(0)
    else:
        g_logits = np.zeros(model.K)
        dW, db, _ = gate_backward(model.gating, xb, d_alpha)
        g_gate = np.concatenate([dW.ravel(), db])
    plan = None
    if with_plan:
        plan = model_plan(model, H, "commuting" if engine == "commuting" else "shift",
                          shots if mode == "sampled" else 0)
        plan.n_measurement_settings = executed
    grad = np.concatenate([g_theta, g_logits, g_gate])
    if return_values:
        return grad, plan, np.sum(alpha * fs, axis=1)
    return grad, plan
