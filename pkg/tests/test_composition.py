import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddsym.certificate import AsbfSolution, even_difference_basis
from ddsym.composition import (CompositionCertificate, Part, abf_params, check_condition, compose,
                               epsilon_bound, evaluate_abf, evaluate_abf_blocks, gamma_bar,
                               relation_contains)
from ddsym.errors import ConfigurationError, DomainError, InputShapeError


def room_sol(gamma=0.985, alpha=0.1, psi=1e-3):
    return AsbfSolution([0.4949, -0.25, 0.001, 0.8], alpha, gamma, 0.0, psi, -0.0496, 1e-6,
                        even_difference_basis(1, 6))


def test_room_term():
    cert = check_condition([(-0.0496, 1e-6, 0.9675, 0.05)], multiplicity=1000)
    assert cert.per_subsystem[0].term == pytest.approx(-0.0012, abs=5e-5)
    assert cert.total == pytest.approx(1000 * (-0.0496 + 1e-6 + 0.9675 * 0.05), abs=1e-12)
    assert cert.passed


def test_vehicle_term():
    cert = check_condition([(-0.7717, 1e-6, 1.5753, 0.3)])
    assert cert.total == pytest.approx(-0.2991, abs=5e-5)
    assert cert.passed


def test_positive_terms_fail():
    M = 7
    cert = check_condition([(0.0, 1e-6, 1.0, 0.1)] * M)
    assert cert.total == pytest.approx(M * 0.100001, abs=1e-12)
    assert not cert.passed


def test_condition_errors():
    with pytest.raises(ConfigurationError):
        check_condition([])
    with pytest.raises(ConfigurationError):
        check_condition([(0.0, 0.0, 1.0, 0.1)])
    with pytest.raises(ConfigurationError):
        check_condition([(0.0, 1e-6, -1.0, 0.1)])


def test_total_matches_terms_and_is_permutation_invariant():
    rng = np.random.default_rng(0)
    parts = [Part(rng.normal(), rng.uniform(1e-6, 1), rng.uniform(0, 3), rng.uniform(0, 1)) for _ in range(200)]
    base = check_condition(parts)
    assert base.total == pytest.approx(sum(p.term for p in parts), abs=1e-12)
    for _ in range(10):
        perm = [parts[k] for k in rng.permutation(len(parts))]
        assert check_condition(perm).total == base.total


def test_worsening_a_term_raises_total():
    parts = [Part(-0.1, 1e-6, 0.5, 0.1), Part(-0.2, 1e-6, 0.3, 0.2)]
    base = check_condition(parts).total
    worse = [Part(-0.05, 1e-6, 0.5, 0.1), parts[1]]
    assert check_condition(worse).total > base
    worse = [parts[0], Part(-0.2, 1e-6, 0.3, 0.4)]
    assert check_condition(worse).total > base


def test_abf_params():
    sols = [room_sol(0.9, 0.5, 0.01), room_sol(0.99, 0.2, 0.02), room_sol(0.95, 0.8, 0.03)]
    g, a, p = abf_params(sols)
    assert g == 0.99 and a == 0.2 and p == pytest.approx(0.06)
    assert abf_params([room_sol()], multiplicity=5) == (0.985, 0.1, pytest.approx(5e-3))
    with pytest.raises(ConfigurationError):
        abf_params([])


def test_epsilon_example():
    psi_bar, eps = epsilon_bound(0.1, 1.0, 0.9, 0.5)
    assert psi_bar == pytest.approx(2.0, abs=1e-12)
    assert eps == pytest.approx(math.sqrt(2), abs=1e-12)
    assert epsilon_bound(1e-12, 1.0, 0.9, 0.5)[1] < 1e-5
    assert epsilon_bound(0.1, 2.0, 0.9, 0.5)[1] == pytest.approx(eps / math.sqrt(2), rel=1e-12)
    for bad in [(0.1, 1.0, 0.9, 1.0), (0.1, 1.0, 1.0, 0.5), (0.1, 0.0, 0.9, 0.5), (0.0, 1.0, 0.9, 0.5)]:
        with pytest.raises(DomainError):
            epsilon_bound(*bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 10), st.floats(1e-3, 100), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
       st.floats(1.01, 5))
def test_epsilon_monotonicity(psi, alpha, gamma, eta, k):
    psi_bar, eps = epsilon_bound(psi, alpha, gamma, eta)
    assert eps ** 2 * alpha == pytest.approx(psi_bar, rel=1e-12)
    assert epsilon_bound(psi, alpha * k, gamma, eta)[1] < eps
    assert epsilon_bound(psi * k, alpha, gamma, eta)[1] > eps
    gb = gamma_bar(gamma, eta)
    assert 0 < gb < 1


def test_compose_fills_network_fields():
    sols = [room_sol(), room_sol()]
    cert = compose(sols, [0.9675, 0.9675], [0.05, 0.05], eta=0.99)
    assert cert.passed
    assert cert.psi == pytest.approx(2e-3)
    assert cert.psi_bar == pytest.approx(2e-3 / (0.015 * 0.99))
    assert cert.epsilon ** 2 * cert.alpha == pytest.approx(cert.psi_bar, rel=1e-12)
    assert cert.gamma_bar == pytest.approx(1 - 0.01 * 0.015)
    with pytest.raises(ConfigurationError):
        compose(sols, [1.0], [0.1, 0.1])


def test_certificate_round_trip(tmp_path):
    cert = compose([room_sol()], [0.9675], [0.05], multiplicity=3)
    cert.save(tmp_path / "c.json")
    back = CompositionCertificate.load(tmp_path / "c.json")
    assert back.to_dict() == cert.to_dict()


def test_evaluate_abf():
    sols = [room_sol(), room_sol()]
    assert evaluate_abf(sols, [0.1, -0.3], [0.1, -0.3]) == pytest.approx(1.6, abs=1e-12)
    one = room_sol()
    assert evaluate_abf([one], [0.7], [0.2]) == pytest.approx(float(one.value([0.7], [0.2])))
    with pytest.raises(InputShapeError):
        evaluate_abf(sols, [0.1], [0.1])


def test_evaluate_abf_order_and_blocks():
    rng = np.random.default_rng(3)
    sols = [room_sol(alpha=a) for a in rng.uniform(0.1, 1, 6)]
    for k, s in enumerate(sols):
        s.q = s.q * (1 + 0.1 * k)
    x, xh = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
    base = evaluate_abf(sols, x, xh)
    perm = rng.permutation(6)
    assert evaluate_abf([sols[k] for k in perm], x[perm], xh[perm]) == pytest.approx(base, abs=1e-12)
    same = [room_sol()] * 6
    X = rng.uniform(-1, 1, (4, 6, 1))
    Xh = rng.uniform(-1, 1, (4, 6, 1))
    np.testing.assert_allclose(evaluate_abf_blocks(same[0], X, Xh),
                               [evaluate_abf(same, a.ravel(), b.ravel()) for a, b in zip(X, Xh)], atol=1e-12)


def test_relation_contains():
    sols = [room_sol(), room_sol()]
    assert relation_contains(sols, 2.0, [0.1, 0.1], [0.1, 0.1])
    assert not relation_contains(sols, 1.5, [0.1, 0.1], [0.1, 0.1])
    # V depends on x - x_hat only, so shifting both keeps membership
    a = relation_contains(sols, 1.62, [0.3, 0.0], [0.1, 0.0])
    b = relation_contains(sols, 1.62, [0.5, 0.2], [0.3, 0.2])
    assert a == b
    pos = [AsbfSolution([1.0, 0.0, 0.0, 0.0], 0.1, 0.9, 0, 1e-3, 0, 1e-6, even_difference_basis(1, 6))]
    rng = np.random.default_rng(5)
    for _ in range(100):
        x, xh = rng.uniform(-1, 1, 2)
        if x != xh:
            assert not relation_contains(pos, 0.0, [x], [xh])
