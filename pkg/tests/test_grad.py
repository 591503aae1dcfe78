import math

import numpy as np
import pytest

from dqnn import ansatz as A
from dqnn.ansatz import _layers_to_circuit
from dqnn.density import DensityModel, expectation_exact
from dqnn.errors import RuleMismatchError
from dqnn.grad import (D2, adjoint_gradient, commuting_gradients, density_gradient, diagonal_block,
                       expval, finite_difference, model_plan, shift_four_term_rbs, shift_gradient,
                       shift_two_term)
from dqnn.pauli import Observable, pauli, z_sum

LOADER = A.Loader("product_ry")


def _ry_circuit():
    op = A.Op("RY", (0,), 0, generator=A.generator_of("RY", (0,), 1))
    return A.Circuit(1, [op])


def _f(c, x, H, loader=None, psi0=None):
    return lambda th: float(expval(c, th, x, H, loader, psi0=psi0)[0])


def _unary_psi0(rng, n):
    return A.unary_embed(rng.normal(size=n), n)


def test_two_term_examples():
    c = _ry_circuit()
    Z = Observable([(1.0, "Z")])
    assert shift_two_term(c, [0.0], None, Z, 0) == pytest.approx(0.0, abs=1e-12)
    assert shift_two_term(c, [math.pi / 2], None, Z, 0) == pytest.approx(-1.0, abs=1e-12)


def test_two_term_vs_fd_hwe(rng):
    for i in range(100):
        n = 2 + i % 3
        c = A.build_hardware_efficient(n, 2)
        th = rng.uniform(-np.pi, np.pi, c.n_params)
        x = rng.uniform(-1, 1, n)
        H = z_sum(n) + pauli(n, {0: "X"})
        fd = finite_difference(_f(c, x, H, LOADER), th)
        p = int(rng.integers(c.n_params))
        assert shift_two_term(c, th, x, H, p, LOADER) == pytest.approx(fd[p], abs=1e-6)


def test_four_term_coefficients():
    assert D2 == pytest.approx((math.sqrt(2) - 1) / 2)


@pytest.mark.parametrize("kind", ["RBS", "FBS"])
def test_four_term_vs_fd(kind, rng):
    n = 4
    c = _layers_to_circuit(n, A.pyramid_layers(n), "pyr", kind=kind)
    H = pauli(n, {0: "Z"}) + 0.5 * pauli(n, {1: "Z", 3: "Z"})
    for _ in range(5):
        th = rng.uniform(-np.pi, np.pi, c.n_params)
        psi0 = _unary_psi0(rng, n) if kind == "RBS" else A.Loader("product_ry").prepare(
            rng.uniform(-1, 1, (1, n)), n)
        fd = finite_difference(_f(c, None, H, psi0=psi0), th)
        g = [shift_four_term_rbs(c, th, None, H, p, psi0=psi0) for p in range(c.n_params)]
        assert np.max(np.abs(np.array(g) - fd)) < 1e-6


def test_rule_mismatch():
    with pytest.raises(RuleMismatchError):
        shift_two_term(A.build_pyramid(3), np.zeros(3), None, z_sum(3), 0)
    with pytest.raises(RuleMismatchError):
        shift_four_term_rbs(_ry_circuit(), [0.1], None, Observable([(1.0, "Z")]), 0)


def test_finite_difference_examples():
    assert np.allclose(finite_difference(lambda t: 3.0, np.ones(4)), 0)
    assert finite_difference(lambda t: float(t[0] ** 2), [3.0])[0] == pytest.approx(6, abs=1e-6)


def test_engines_agree(rng):
    """adjoint, shift and finite differences over every family."""
    fams = [A.build_pyramid(4), A.build_x(4), A.build_butterfly(4), A.build_round_robin(4, 3),
            A.build_hardware_efficient(3, 2), A.build_equivariant(4, "X"),
            A.build_reuploading(2)]
    for _ in range(8):
        for c in fams:
            n = c.n_qubits
            th = rng.uniform(-np.pi, np.pi, c.n_params)
            if c.n_data:
                x, lo, psi0 = rng.uniform(-1, 1, c.n_data), None, None
            else:
                x, lo = None, None
                psi0 = _unary_psi0(rng, n) if c.shift_rule[0] == A.FOUR_TERM_RBS else \
                    LOADER.prepare(rng.uniform(-1, 1, (1, n)), n)
            H = z_sum(n) + 0.3 * pauli(n, {0: "X", n - 1: "X"}) if n > 1 else \
                Observable([(1.0, "Z")])
            fd = finite_difference(_f(c, x, H, lo, psi0), th)
            _, adj = adjoint_gradient(c, th, x, H, psi0=psi0)
            sh = shift_gradient(c, th, x, H, psi0=psi0)
            assert np.max(np.abs(adj - fd)) < 1e-5, c.name
            assert np.max(np.abs(sh - fd)) < 1e-5, c.name


def test_commuting_equals_shift(rng):
    c = A.build_equivariant(6, "X")
    H = z_sum(6)
    x = rng.uniform(-1, 1, 6)
    th = rng.uniform(-1, 1, c.n_params)
    ref = shift_gradient(c, th, x, H, LOADER)
    got = np.zeros(c.n_params)
    for b in range(len(c.blocks)):
        got += commuting_gradients(c, th, x, H, loader=LOADER, block=b).values
    assert np.max(np.abs(got - ref)) < 1e-9


def test_round_robin_single_circuit(rng):
    c = A.build_round_robin(8, 1)
    H = z_sum(8, np.arange(1, 9))
    psi0 = _unary_psi0(rng, 8)
    th = rng.uniform(-np.pi, np.pi, 4)
    r = commuting_gradients(c, th, None, H, psi0=psi0)
    assert r.circuits_used == 1
    assert np.allclose(r.values, shift_gradient(c, th, None, H, psi0=psi0), atol=1e-9)


def test_duplicate_generators(rng):
    g = A.generator_of("RX", (0,), 2)
    ops = [A.Op("RX", (0,), 0, generator=g), A.Op("RX", (0,), 1, generator=g)]
    c = A.Circuit(2, ops, [(0, 2)])
    H = pauli(2, {0: "Z", 1: "Z"}) + pauli(2, {0: "Y"})
    th = rng.uniform(-1, 1, 2)
    r = commuting_gradients(c, th, None, H, psi0=LOADER.prepare(rng.uniform(-1, 1, (1, 2)), 2))
    assert abs(r.values[0] - r.values[1]) < 1e-12


def test_density_gradient_k1(rng):
    c = A.build_hardware_efficient(3, 2)
    th = c.init_params(rng)
    x = rng.uniform(-1, 1, (5, 3))
    H = z_sum(3)
    m = DensityModel([c], [th], loader=LOADER)
    g, _ = density_gradient(m, x, H)
    _, ref = adjoint_gradient(c, th, x, H, np.full(5, 0.2), LOADER)
    assert np.allclose(g[:-1], ref) and abs(g[-1]) < 1e-12


@pytest.mark.parametrize("engine", ["adjoint", "shift", "commuting", "auto"])
def test_density_gradient_vs_fd(engine, rng):
    cs = [A.build_hardware_efficient(3, 2), A.build_hardware_efficient(3, 1),
          A.build_equivariant(3, "Y", 2)]
    m = DensityModel(cs, [c.init_params(rng) for c in cs], rng.normal(size=3), loader=LOADER)
    x = rng.uniform(-1, 1, (4, 3))
    H = z_sum(3) + pauli(3, {1: "X"})
    g, plan = density_gradient(m, x, H, engine=engine)

    def loss(v):
        mm = m.copy()
        mm.set_flat(v)
        return float(np.mean(expectation_exact(mm, x, H)))
    assert np.max(np.abs(g - finite_difference(loss, m.flat()))) < 1e-6
    assert plan.covered() | {p for e in plan.entries if e.zero for p in e.params} >= set(
        range(m.theta.size))


def test_shared_parameters(rng):
    c = A.build_hardware_efficient(2, 2)
    m = DensityModel([c, c], c.init_params(rng), [0.3, -0.2], loader=LOADER,
                     index_map=[np.arange(c.n_params), np.arange(c.n_params)])
    assert m.shared
    x = rng.uniform(-1, 1, (3, 2))
    H = z_sum(2)
    g, plan = density_gradient(m, x, H)

    def loss(v):
        mm = m.copy()
        mm.set_flat(v)
        return float(np.mean(expectation_exact(mm, x, H)))
    assert np.max(np.abs(g - finite_difference(loss, m.flat()))) < 1e-5
    assert plan.T_matrix.shape == (2, 2) and np.all(plan.T_matrix > 0)


def test_plan_hwe_2D_vs_2nD():
    n, D = 4, 3
    H = Observable([(1.0, "".join("X" if i == q else "I" for i in range(n))) for q in range(n)]) + \
        z_sum(n)
    mono = DensityModel([A.build_hardware_efficient(n, D)])
    subs = [A.build_hardware_efficient(n, 1, first_layer=l) for l in range(D)]
    dens = DensityModel(subs)
    assert model_plan(mono, H, "shift", params=False).n_gradient_circuits == 2 * n * D
    assert model_plan(dens, H, "commuting", params=False).n_gradient_circuits == 2 * D


def test_plan_zero_gradient():
    # RZ generators commute with sum Z: flagged, cost 0
    ops = [A.Op("RZ", (q,), q, generator=A.generator_of("RZ", (q,), 4)) for q in range(4)]
    c = A.Circuit(4, ops, [(0, 4)])
    p = model_plan(DensityModel([c]), z_sum(4), "shift")
    assert all(e.zero and e.circuits == 0 for e in p.entries)


def test_sampled_gradient_unbiased(rng):
    c = A.build_hardware_efficient(2, 1)
    m = DensityModel([c], [c.init_params(rng)], loader=LOADER)
    x = rng.uniform(-1, 1, (1, 2))
    H = z_sum(2)
    exact, _ = density_gradient(m, x, H)
    draws = np.array([density_gradient(m, x, H, "sampled", "shift", 200,
                                       np.random.default_rng(s), with_plan=False)[0]
                      for s in range(50)])
    sem = draws.std(0, ddof=1) / np.sqrt(50) + 1e-12
    assert np.all(np.abs(draws.mean(0) - exact) < 4 * sem + 1e-9)


def test_diagonal_block_fast_path(rng):
    c = A.build_equivariant(5, "X")
    fast = diagonal_block(c)
    assert fast is not None
    x = rng.uniform(-1, 1, (6, 5))
    th = rng.uniform(-1, 1, c.n_params)
    H = z_sum(5)
    f, g = fast.value_and_grad(th, x, H, LOADER)
    f2, g2 = adjoint_gradient(c, th, x, H, loader=LOADER)
    assert np.allclose(f, f2) and np.allclose(g, g2)
    assert diagonal_block(A.build_hardware_efficient(3, 1)) is None
