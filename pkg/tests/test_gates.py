import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from dqnn import gates as G
from dqnn.errors import DomainError, QubitIndexError, UnitarityError
from dqnn.statevec import State, apply_gate, basis_state, new_state

from conftest import random_state


def test_rbs_identity_and_swap():
    assert np.allclose(G.rbs(0).matrix, np.eye(4))
    out = apply_gate(basis_state(2, "01"), G.rbs(np.pi / 2), [0, 1])
    assert np.allclose(out.amplitudes, basis_state(2, "10").amplitudes, atol=1e-12)


@pytest.mark.parametrize("theta", [0.3, 1.1, 2.7])
def test_rbs_is_exponential_of_generator(theta):
    q = G.rbs_generator().to_matrix()
    assert np.allclose(G.rbs(theta).matrix, expm(-1j * theta * q), atol=1e-12)


def test_rbs_group_law(rng):
    for _ in range(20):
        a, b = rng.uniform(-4, 4, 2)
        assert np.allclose(G.rbs(a).matrix @ G.rbs(b).matrix, G.rbs(a + b).matrix, atol=1e-12)


def test_rbs_domain():
    with pytest.raises(DomainError):
        G.rbs(float("nan"))
    with pytest.raises(DomainError):
        G.rx(float("inf"))


def test_standard_gates():
    assert np.allclose(G.rz(0).matrix, np.eye(2))
    out = apply_gate(basis_state(2, "10"), G.cnot(), [0, 1])
    assert np.allclose(out.amplitudes, basis_state(2, "11").amplitudes)
    c = G.controlled(G.rbs(0.7)).matrix
    assert np.allclose(c[:4, :4], np.eye(4)) and np.allclose(c[4:, 4:], G.rbs(0.7).matrix)
    assert np.allclose(c[:4, 4:], 0) and np.allclose(c[4:, :4], 0)
    with pytest.raises(UnitarityError):
        G.controlled(np.array([[1, 1], [0, 1]]))
    for name, ctor in G.standard_gates().items():
        m = ctor(0.37).matrix if name in ("RX", "RY", "RZ", "RBS") else ctor().matrix if name != "CONTROLLED" \
            else ctor(G.h()).matrix
        assert G.is_unitary(m, 1e-12), name


def test_rotations_are_exp_of_pauli():
    for k, lab in (("RX", "X"), ("RY", "Y"), ("RZ", "Z")):
        p = {"X": [[0, 1], [1, 0]], "Y": [[0, -1j], [1j, 0]], "Z": [[1, 0], [0, -1]]}[lab]
        assert np.allclose(G.rotation_matrix(k, 0.8), expm(-0.4j * np.array(p)))


def test_fbs_adjacent_equals_rbs_minus_theta(rng):
    psi = random_state(rng, 3)
    out = G.apply_fbs(State(psi), 1, 2, 0.9)
    ref = apply_gate(State(psi), G.rbs(-0.9), [1, 2])
    assert np.allclose(out.amplitudes, ref.amplitudes, atol=1e-12)


def test_fbs_parity_rule():
    # odd between-parity gives RBS(theta): |0 1 1> -> qubit 1 excited between 0 and 2
    th = 0.6
    s = basis_state(3, "011")
    out = G.apply_fbs(s, 0, 2, th).amplitudes
    ref = apply_gate(s, G.rbs(th), [0, 2]).amplitudes
    assert np.allclose(out, ref)
    s = basis_state(3, "001")
    out = G.apply_fbs(s, 0, 2, th).amplitudes
    ref = apply_gate(s, G.rbs(-th), [0, 2]).amplitudes
    assert np.allclose(out, ref)


def test_fbs_vacuum_and_errors():
    s = new_state(4)
    assert np.allclose(G.apply_fbs(s, 0, 3, 1.3).amplitudes, s.amplitudes)
    with pytest.raises(QubitIndexError):
        G.apply_fbs(s, 2, 1, 0.1)


def test_fbs_matches_decomposition(rng):
    n, th = 4, 0.77
    u = G.circuit_matrix(G.fbs_decomposition(n, 0, 3, th), n)
    for _ in range(50):
        psi = random_state(rng, n)
        out = G.apply_fbs(State(psi), 0, 3, th).amplitudes
        assert np.allclose(out, u @ psi, atol=1e-10)


def test_fbs_generator_consistent(rng):
    th = 0.41
    u = expm(-1j * th * G.fbs_generator(4, 0, 3).to_matrix())
    psi = random_state(rng, 4)
    assert np.allclose(u @ psi, G.apply_fbs(State(psi), 0, 3, th).amplitudes, atol=1e-12)


def test_fbs_preserves_weight_sectors(rng):
    n = 5
    w = np.array([bin(i).count("1") for i in range(2 ** n)])
    for _ in range(20):
        psi = random_state(rng, n)
        i, j = sorted(rng.choice(n, 2, replace=False))
        out = G.apply_fbs(State(psi), int(i), int(j), rng.uniform(-3, 3)).amplitudes
        for k in range(n + 1):
            assert abs(np.sum(np.abs(psi[w == k]) ** 2) - np.sum(np.abs(out[w == k]) ** 2)) < 1e-12


angle = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(angle, angle)
def test_rbs_group_law_property(a, b):
    from dqnn.gates import rbs_matrix
    assert np.allclose(rbs_matrix(a) @ rbs_matrix(b), rbs_matrix(a + b), atol=1e-12)
