"""Approximate minimization of the local model

    Q(p) = g^T p + 0.5 p^T H p + Psi(x + p) - Psi(x)

by distributed SpaRSA (spectral proximal gradient with a monotone
acceptance test), and by per-worker coordinate descent when H is the
block-diagonal part of the dual Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_BACKOFFS = 60


class SubsolverError(RuntimeError):
    """The inner solver hit a non-finite value or an impossible backoff count."""


@dataclass
class SparsaConfig:
    beta: float = 2.0
    sigma0: float = 1e-2
    eps1: float = 1e-2
    max_iters: int = 100

    def __post_init__(self):
        if not self.beta > 1.0:
            raise ValueError("beta must exceed 1")
        if not 0.0 < self.sigma0 < 1.0:
            raise ValueError("sigma0 must lie in (0, 1)")
        if not self.eps1 > 0.0:
            raise ValueError("eps1 must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class ModelPoint:
    """A candidate p with everything needed to evaluate Q without communication.

    ``w`` holds ``[S^T p; Y^T p]``, ``pp = ||p||^2`` and ``lin`` is
    ``g^T p + Psi(x + p) - Psi(x)`` (the line-search Delta).
    """

    p: np.ndarray
    w: np.ndarray
    pp: float
    lin: float

    def q_value(self, model, scale):
        return self.lin + 0.5 * model.quad_form(self.pp, self.w, scale)


@dataclass
class SparsaResult:
    point: ModelPoint
    q: float
    quad: float
    iterations: int
    checks: int
    backoffs: list = field(default_factory=list)
    psi_init: list = field(default_factory=list)
    psi_accepted: list = field(default_factory=list)
    step_sq: list = field(default_factory=list)
    q_history: list = field(default_factory=list)

    @property
    def p(self):
        return self.point.p

    @property
    def delta(self):
        return self.point.lin


def zero_point(n, model):
    return ModelPoint(np.zeros(n), np.zeros(2 * model.size), 0.0, 0.0)


def sparsa_solve(problem, x, grad, model, config, ledger, scale=1.0, warm=None):
    """Distributed SpaRSA on the L-BFGS model ``scale * H``.

    Every acceptance test is one round carrying ``[S^T p; Y^T p]`` for the
    trial point together with four scalar sums; the spectral estimate and the
    stopping test then need no further communication.  Stops when a step is
    no longer than ``eps1`` times the first step, or after ``max_iters``.
    """
    cluster = problem.cluster
    ranges = problem.variable_ranges
    gamma = scale * model.gamma
    cur = warm if warm is not None else zero_point(problem.N, model)
    q_cur = cur.q_value(model, scale)
    if q_cur > 0.0:
        raise ValueError("warm start must satisfy Q(p0) <= 0")
    grad_hat = grad + model.apply(cur.p, cur.w, scale)
    prev = None
    step_sq = 0.0
    first_step = None
    result = SparsaResult(cur, q_cur, model.quad_form(cur.pp, cur.w, scale), 0, 0)
    result.q_history.append(q_cur)

    for i in range(config.max_iters):
        psi = gamma
        if prev is not None and step_sq > 0.0:
            curv = model.quad_form(step_sq, cur.w - prev.w, scale)
            if curv > 0.0 and math.isfinite(curv):
                psi = curv / step_sq
        result.psi_init.append(psi)

        backoffs = 0
        while True:
            u = cur.p - grad_hat / psi
            trial = problem.prox(x + u, 1.0 / psi) - x
            dpsi = problem.psi_delta_terms(x, trial)
            diff = trial - cur.p
            extra = [
                [trial[r] ** 2, grad[r] * trial[r], dpsi[r], diff[r] ** 2]
                for r in (slice(rg.start, rg.stop) for rg in ranges)
            ]
            wt, sums = model.project(trial, ledger, extra)
            result.checks += 1
            t_pp, t_g, t_psi, t_step = (float(v) for v in sums)
            cand = ModelPoint(trial, wt, t_pp, t_g + t_psi)
            quad = model.quad_form(t_pp, wt, scale)
            q_new = cand.lin + 0.5 * quad
            if not math.isfinite(q_new):
                raise SubsolverError(f"non-finite model value at SpaRSA iteration {i}")
            if q_new <= q_cur - 0.5 * config.sigma0 * psi * t_step:
                break
            psi *= config.beta
            backoffs += 1
            if backoffs > MAX_BACKOFFS:
                raise SubsolverError("acceptance test failed after 60 backoffs")
        result.backoffs.append(backoffs)
        result.psi_accepted.append(psi)
        result.step_sq.append(t_step)

        prev, cur, q_cur, step_sq = cur, cand, q_new, t_step
        grad_hat = grad + model.apply(cur.p, cur.w, scale)
        result.point, result.q, result.quad = cur, q_new, quad
        result.iterations = i + 1
        result.q_history.append(q_new)
        step = math.sqrt(t_step)
        if first_step is None:
            first_step = step
        if step <= config.eps1 * first_step:
            break
    return result


def _cd_epoch(ptr, idx, vals, sq, order, start, x, grad, center, p, v, qpsi, kappa):
    """One pass of coordinate descent on a block; updates ``p`` and ``v`` in place.

    Coordinate i minimizes ``g (b - a) + q/2 (b - a)^2 + Psi_i(b)`` over
    ``b >= 0`` with ``g`` the model gradient and ``q = ||x_i||^2``.
    """
    for j in order:
        lo, hi = ptr[j], ptr[j + 1]
        i = start + j
        g = grad[i]
        for t in range(lo, hi):
            g += vals[t] * v[idx[t]]
        a = x[i] + p[i]
        q = sq[j]
        b = (q * a - g + 1.0 + kappa * center[i]) / (q + qpsi + kappa)
        if b < 0.0:
            b = 0.0
        step = b - a
        if step != 0.0:
            p[i] += step
            for t in range(lo, hi):
                v[idx[t]] += step * vals[t]


try:  # the kernel is a tight scalar loop; compile it when numba is around
    from numba import njit

    _cd_epoch = njit(cache=True, nogil=True)(_cd_epoch)
except ImportError:  # pragma: no cover
    pass


def blockdiag_cd_solve(problem, x, grad, epochs=1, rngs=None):
    """Random-permutation coordinate descent on each worker's block.

    The quadratic term is ``(YX)_k^T (YX)_k`` on worker k's variables, so the
    model decouples and no communication is needed.  ``rngs[k]`` drives the
    permutation on worker k.
    """
    p = np.zeros(problem.N)
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    center = np.ascontiguousarray(problem.center, dtype=np.float64)
    qpsi = 1.0 / (2.0 * problem.C)
    for k, (block, r) in enumerate(zip(problem.blocks, problem.instance_ranges)):
        rng = rngs[k] if rngs is not None else np.random.default_rng(k)
        v = np.zeros(problem.data.d)
        sq = block.column_sq_norms()
        for _ in range(epochs):
            order = rng.permutation(len(r))
            _cd_epoch(block.indptr, block.indices, block.data, sq, order, r.start,
                      x, grad, center, p, v, qpsi, float(problem.kappa))
    return p


def blockdiag_model_value(problem, x, grad, p):
    """``Q(p)`` under the block-diagonal model (unmetered; for checks)."""
    h = problem.build_h0()
    return float(
        grad @ p + 0.5 * p @ h.matvec(p) + np.sum(problem.psi_delta_terms(x, p))
    )
