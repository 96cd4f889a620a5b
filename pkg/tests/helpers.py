"""Small problems with closed-form answers, used as oracles across tests."""

import numpy as np

from dplbfgs.cluster import ClusterSim, partition_even
from dplbfgs.problems import CompositeProblem, ExactStep, SmoothState, soft_threshold


class QuadraticL1(CompositeProblem):
    """``0.5 x'Ax - b'x + lam ||x||_1`` with the solver's problem interface.

    Products with A are treated as local work (A is replicated); objective
    evaluations are charged one two-slot round like the real problems.
    """

    name = "quadratic-l1"

    def __init__(self, a, b, lam=0.0, k=1, exact=False):
        self.A = np.asarray(a, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.lam = float(lam)
        self.N = len(self.b)
        ranges = partition_even(self.N, k)
        self.cluster = ClusterSim(k, instance_ranges=ranges, variable_ranges=ranges)
        if exact:
            self.exact_line_search = self._exact_line_search

    def psi_terms(self, x):
        return self.lam * np.abs(x)

    def prox(self, u, tau):
        return soft_threshold(u, tau * self.lam)

    def init_state(self, x, ledger=None):
        return SmoothState(self.A @ x)

    def _objective_slots(self, x, state, ledger):
        ledger.record(2, self.cluster.k)
        return 0.5 * x @ state.z - self.b @ x, self.psi_value(x)

    def smooth_value_grad(self, x, state, ledger):
        return 0.5 * x @ state.z - self.b @ x, state.z - self.b

    def initial_curvature(self, x, grad, state, ledger):
        gg = grad @ grad
        return 1.0 if gg == 0.0 else abs(grad @ self.A @ grad) / gg

    def linesearch_precompute(self, p, state, ledger):
        return self.A @ p

    def trial_objective(self, x, p, lam, state, image, ledger):
        ledger.record(2, self.cluster.k)
        xt = x + lam * p
        return 0.5 * xt @ (state.z + lam * image) - self.b @ xt + self.psi_value(xt)

    def advance(self, x, p, lam, state, image):
        state.z = state.z + lam * image
        return x + lam * p

    def _exact_line_search(self, x, p, f_cur, state, image, ledger):
        ledger.record(1, self.cluster.k)
        slope = (state.z - self.b) @ p
        curv = 0.5 * p @ image
        lam = -slope / (2.0 * curv)
        return ExactStep(lam, f_cur + lam * slope + lam * lam * curv, slope, 1)

    def full_objective(self, x):
        return 0.5 * x @ self.A @ x - self.b @ x + self.psi_value(x)


def random_spd(n, rng, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.geomspace(1.0, cond, n)) @ q.T


def bfgs_recursive(gamma, pairs, n):
    """Dense BFGS updates of ``H`` applied pair by pair from ``gamma * I``."""
    h = gamma * np.eye(n)
    for s, y in pairs:
        hs = h @ s
        h = h - np.outer(hs, hs) / (s @ hs) + np.outer(y, y) / (y @ s)
    return h
