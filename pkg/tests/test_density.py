import numpy as np
import pytest

from dqnn import ansatz as A
from dqnn.density import (DensityModel, check_mixing_bound, coefficients, expectation_exact,
                          expectation_sampled, lcu_expectation, lcu_state, logits_for,
                          prepare_deterministic, subunit_expectations, subunit_unitary)
from dqnn.errors import DomainError, ShapeError, SizeError, UsageError
from dqnn.moe import GatingNetwork
from dqnn.pauli import pauli, z_sum
from dqnn.train import mixing_instance

LOADER = A.Loader("product_ry")


def _model(rng, n=2, K=2, layers=2, logits=None):
    cs = [A.build_hardware_efficient(n, layers) for _ in range(K)]
    lg = rng.normal(size=K) if logits is None else logits
    return DensityModel(cs, [c.init_params(rng) for c in cs], lg, loader=LOADER)


def _H(n):
    return z_sum(n) + pauli(n, {0: "X", n - 1: "Y"}) * 0.5


def _mixture(m, x):
    psi = m.loader.prepare(np.atleast_2d(x), m.n_qubits)[0]
    a = coefficients(m)
    rho = 0
    for k in range(m.K):
        v = subunit_unitary(m, k, x) @ psi
        rho = rho + a[k] * np.outer(v, v.conj())
    return rho


def test_coefficients(rng):
    m = _model(rng, K=4, logits=np.zeros(4))
    assert np.allclose(coefficients(m), 0.25)
    assert np.allclose(np.exp(logits_for([0.99, 0.01])) / np.exp(logits_for([0.99, 0.01])).sum(),
                       [0.99, 0.01])
    g = GatingNetwork.init(3, 4, rng)
    cs = [A.build_hardware_efficient(2, 1) for _ in range(4)]
    mg = DensityModel(cs, gating=g, loader=LOADER)
    a = coefficients(mg, rng.normal(size=(20, 3)))
    assert np.all(a >= 0) and np.allclose(a.sum(1), 1, atol=1e-12)
    with pytest.raises(UsageError):
        coefficients(mg)
    with pytest.raises(DomainError):
        logits_for([1.0, 0.0])


def test_model_checks():
    with pytest.raises(ShapeError):
        DensityModel([A.build_pyramid(3), A.build_pyramid(4)])
    with pytest.raises(ShapeError):
        DensityModel([A.build_pyramid(3)], logits=[0.0, 1.0])


def test_k1_and_degenerate(rng):
    c = A.build_hardware_efficient(3, 2)
    th = c.init_params(rng)
    x = rng.uniform(-1, 1, 3)
    m1 = DensityModel([c], [th], loader=LOADER)
    H = _H(3)
    plain = subunit_expectations(m1, x, H)[0, 0]
    assert expectation_exact(m1, x, H) == pytest.approx(plain, abs=1e-12)
    assert lcu_expectation(m1, x, H) == pytest.approx(plain, abs=1e-12)
    rho = prepare_deterministic(m1, x)
    assert rho.expectation(H) == pytest.approx(plain, abs=1e-9)
    m2 = _model(rng, 3, 2, logits=np.array([0.0, -800.0]))
    f = subunit_expectations(m2, x, H)[0]
    assert expectation_exact(m2, x, H) == pytest.approx(f[0], abs=1e-12)


def test_exact_vs_density_matrix(rng):
    m = _model(rng, 4, 3)
    H = _H(4)
    for _ in range(5):
        x = rng.uniform(-1, 1, 4)
        rho = _mixture(m, x)
        ref = np.real(np.trace(H.to_matrix() @ rho))
        assert expectation_exact(m, x, H) == pytest.approx(ref, abs=1e-10)
        f = subunit_expectations(m, x, H)[0]
        assert f.min() - 1e-12 <= expectation_exact(m, x, H) <= f.max() + 1e-12


def test_deterministic_preparation(rng):
    m = _model(rng, 2, 2)
    x = rng.uniform(-1, 1, 2)
    rho = prepare_deterministic(m, x)
    assert np.max(np.abs(rho.entries - _mixture(m, x))) < 1e-10
    assert rho.is_valid()
    assert np.linalg.eigvalsh(rho.entries).min() > -1e-10
    for K, n in ((3, 3), (2, 4)):
        mm = _model(rng, n, K)
        x = rng.uniform(-1, 1, n)
        assert prepare_deterministic(mm, x).expectation(_H(n)) == \
            pytest.approx(expectation_exact(mm, x, _H(n)), abs=1e-9)
    big = DensityModel([A.build_pyramid(12)] * 5)
    with pytest.raises(SizeError):
        prepare_deterministic(big)


def test_sampled_unbiased(rng):
    m = _model(rng, 2, 2)
    x = rng.uniform(-1, 1, 2)
    H = _H(2)
    exact = expectation_exact(m, x, H)
    est, sem = expectation_sampled(m, x, H, 100, 100000, rng, return_sem=True)
    assert abs(est.estimate - exact) < 3 * sem
    assert est.circuits_used == 100000 * 2  # two QWC groups in H
    zonly = expectation_sampled(m, x, z_sum(2), 10, 50, rng)
    assert zonly.circuits_used == 50 and zonly.shots_used == 500
    means = [expectation_sampled(m, x, H, 50, 200, np.random.default_rng(s)).estimate
             for s in range(50)]
    assert abs(np.mean(means) - exact) < 4 * np.std(means, ddof=1) / np.sqrt(50)


def test_sampled_degenerate(rng):
    m = _model(rng, 2, 2, logits=np.array([0.0, -800.0]))
    x = rng.uniform(-1, 1, 2)
    f0 = subunit_expectations(m, x, z_sum(2))[0, 0]
    est, sem = expectation_sampled(m, x, z_sum(2), 2000, 200, rng, return_sem=True)
    assert abs(est.estimate - f0) < 5 * sem + 1e-3


def test_lcu(rng):
    m = _model(rng, 2, 2)
    x = rng.uniform(-1, 1, 2)
    H = _H(2)
    psi = LOADER.prepare(np.atleast_2d(x), 2)[0]
    a = coefficients(m)
    U = sum(a[k] * subunit_unitary(m, k, x) for k in range(2))
    phi = U @ psi
    assert np.allclose(lcu_state(m, x)[0], phi)
    assert lcu_expectation(m, x, H) == pytest.approx(np.real(phi.conj() @ H.to_matrix() @ phi),
                                                     abs=1e-12)
    c = A.build_hardware_efficient(2, 2)
    th = c.init_params(rng)
    same = DensityModel([c, c, c], [th, th, th], rng.normal(size=3), loader=LOADER)
    assert lcu_expectation(same, x, H) == pytest.approx(expectation_exact(same, x, H), abs=1e-12)


def test_mixing_bound():
    assert check_mixing_bound([0.3, 0.2], 0.1, 0.0, 1.0).holds
    d = 0.05
    r = check_mixing_bound([d], d ** 2, 0.0, 1.0)
    assert r.bound == pytest.approx(d ** 2 / 4 + 2 * d ** 2)
    assert not check_mixing_bound([0.1], 0.0, 0.5, 1.0).holds
    with pytest.raises(DomainError):
        check_mixing_bound([-0.1], 0.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        check_mixing_bound([0.1], 0.0, 0.0, 0.0)


def test_mixing_teacher_instance():
    r = mixing_instance(0, n=3, K=2)
    assert r.holds and r.premise == "shared-teacher"


def test_checkpoint_roundtrip(rng, tmp_path):
    m = _model(rng, 3, 2)
    p = tmp_path / "m.json"
    m.save(p, seed=7)
    m2 = DensityModel.load(p)
    x = rng.uniform(-1, 1, (4, 3))
    assert np.allclose(expectation_exact(m, x, _H(3)), expectation_exact(m2, x, _H(3)))
