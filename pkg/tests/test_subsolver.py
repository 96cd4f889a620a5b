import numpy as np
import pytest

from dplbfgs.cluster import ClusterSim, CommLedger, partition_even
from dplbfgs.datasets import LabeledDataset, make_synthetic
from dplbfgs.lbfgs import LbfgsState
from dplbfgs.linalg import SparseColumns
from dplbfgs.problems import SquaredHingeDual
from dplbfgs.subsolver import (
    SparsaConfig,
    blockdiag_cd_solve,
    blockdiag_model_value,
    sparsa_solve,
)
from helpers import QuadraticL1, random_spd


def model_for(prob, gamma=1.0, pairs=()):
    lb = LbfgsState(prob.N, prob.cluster, 10, 1e-10, gamma)
    for s, y in pairs:
        lb.admit_pair(s, y, CommLedger())
    return lb


def dense_q(prob, lb, x, g, p):
    h = lb.materialize_dense()
    return g @ p + 0.5 * p @ h @ p + prob.psi_value(x + p) - prob.psi_value(x)


def test_scalar_l1_example():
    prob = QuadraticL1(np.eye(1), np.zeros(1), lam=1.0)
    res = sparsa_solve(prob, np.zeros(1), np.array([3.0]), model_for(prob), SparsaConfig(),
                       CommLedger())
    assert res.p[0] == pytest.approx(-2.0)
    assert res.q == pytest.approx(-2.0)
    assert res.q_history[1] == pytest.approx(-2.0)
    assert res.iterations == 2 and res.step_sq[1] == 0.0


def test_smooth_case_single_step_is_newton():
    prob = QuadraticL1(np.eye(4), np.zeros(4), lam=0.0, k=2)
    g = np.array([1.0, -2.0, 0.5, 4.0])
    res = sparsa_solve(prob, np.zeros(4), g, model_for(prob, gamma=2.5), SparsaConfig(),
                       CommLedger())
    np.testing.assert_allclose(res.p, -g / 2.5, rtol=1e-15)
    assert res.q_history[1] == res.q


def make_model_problem(seed, n=30, k=3, lam=0.3, pairs=5):
    rng = np.random.default_rng(seed)
    a = random_spd(n, rng, cond=50.0)
    prob = QuadraticL1(a, np.zeros(n), lam=lam, k=k)
    lb = model_for(prob, pairs=[(s, a @ s) for s in rng.standard_normal((pairs, n))])
    x, g = rng.standard_normal(n), rng.standard_normal(n) * 3
    return prob, lb, x, g


@pytest.mark.parametrize("seed", range(5))
def test_acceptance_and_descent(seed):
    prob, lb, x, g = make_model_problem(seed)
    res = sparsa_solve(prob, x, g, lb, SparsaConfig(), CommLedger())
    assert res.q <= 0.0
    for i in range(res.iterations):
        drop = res.q_history[i] - res.q_history[i + 1]
        assert drop >= 0.5 * 1e-2 * res.psi_accepted[i] * res.step_sq[i]
    assert max(res.backoffs) <= 60
    assert res.q == pytest.approx(dense_q(prob, lb, x, g, res.p), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_spectral_estimates_within_model_spectrum(seed):
    prob, lb, x, g = make_model_problem(seed, n=20)
    eig = np.linalg.eigvalsh(lb.materialize_dense())
    res = sparsa_solve(prob, x, g, lb, SparsaConfig(eps1=1e-6), CommLedger())
    assert res.psi_init[0] == lb.gamma
    for psi in res.psi_init[1:]:
        assert eig[0] * (1 - 1e-10) <= psi <= eig[-1] * (1 + 1e-10)


def test_one_round_per_acceptance_check():
    prob, lb, x, g = make_model_problem(7)
    led = CommLedger()
    res = sparsa_solve(prob, x, g, lb, SparsaConfig(max_iters=10), led)
    assert led.rounds == res.checks
    assert led.scalars_transmitted == res.checks * (2 * lb.size + 4)
    assert res.checks == res.iterations + sum(res.backoffs)


def test_stops_on_relative_step():
    prob, lb, x, g = make_model_problem(8)
    res = sparsa_solve(prob, x, g, lb, SparsaConfig(eps1=1e-2), CommLedger())
    if res.iterations < 100:
        assert res.step_sq[-1] <= 1e-4 * res.step_sq[0]
    short = sparsa_solve(prob, x, g, lb, SparsaConfig(max_iters=3), CommLedger())
    assert short.iterations <= 3


def test_warm_start_requires_nonpositive_model():
    prob, lb, x, g = make_model_problem(9)
    res = sparsa_solve(prob, x, g, lb, SparsaConfig(), CommLedger())
    again = sparsa_solve(prob, x, g, lb, SparsaConfig(), CommLedger(), warm=res.point)
    assert again.q <= res.q
    bad = res.point
    bad.lin = 1.0
    with pytest.raises(ValueError):
        sparsa_solve(prob, x, g, lb, SparsaConfig(), CommLedger(), warm=bad)


def test_config_validation():
    for kwargs in ({"beta": 1.0}, {"sigma0": 0.0}, {"eps1": 0.0}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            SparsaConfig(**kwargs)


def test_cd_single_variable_is_exact():
    data = LabeledDataset(SparseColumns.from_dense(np.array([[2.0]])), np.array([1.0]))
    prob = SquaredHingeDual(data, 0.5, 1)
    x, g = np.array([0.3]), np.array([-1.5])
    p = blockdiag_cd_solve(prob, x, g)
    # minimize -1.5 t + 2 t^2 + (0.3 + t)^2 - (0.3 + t) over t >= -0.3
    ts = np.linspace(-0.3, 2, 2300001)
    vals = g[0] * ts + 0.5 * 4.0 * ts**2 + (x[0] + ts) ** 2 / 2.0 - (x[0] + ts)
    assert p[0] == pytest.approx(ts[np.argmin(vals)], abs=1e-6)


def test_cd_orthogonal_instances_reach_block_minimizer():
    d = 6
    cols = np.eye(d) * np.array([1.0, 2.0, 0.5, 1.5, 1.0, 3.0])
    data = LabeledDataset(SparseColumns.from_dense(cols), np.array([1, -1, 1, 1, -1, 1.0]))
    prob = SquaredHingeDual(data, 0.8, 2)
    rng = np.random.default_rng(0)
    x, g = np.abs(rng.standard_normal(d)), rng.standard_normal(d)
    p = blockdiag_cd_solve(prob, x, g, epochs=1, rngs=[np.random.default_rng(i) for i in range(2)])
    q = np.sum(cols**2, axis=0)
    expected = np.maximum(0.0, (q * x - g + 1.0) / (q + 1.0 / 1.6)) - x
    np.testing.assert_allclose(p, expected, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_cd_decreases_block_model(k):
    data = make_synthetic(40, 10, seed=k, correlation=0.5)
    prob = SquaredHingeDual(data, 1.0, k)
    rng = np.random.default_rng(k)
    x, g = np.abs(rng.standard_normal(40)), rng.standard_normal(40)
    led = CommLedger()
    p = blockdiag_cd_solve(prob, x, g, rngs=[np.random.default_rng(i) for i in range(k)])
    assert blockdiag_model_value(prob, x, g, p) <= 0.0
    assert led.rounds == 0
    assert np.all(x + p >= 0.0)
