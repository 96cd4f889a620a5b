"""Comparison methods: SpaRSA applied to F itself, block-diagonal BDA for the
dual, and BDA inside the Catalyst acceleration loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .cluster import CommLedger
from .problems import SquaredHingeDual
from .solver import IterationRecord, RunResult, relative_error
from .subsolver import MAX_BACKOFFS, SparsaConfig, blockdiag_cd_solve

# Kappa and warmup (unaccelerated BDA iterations) tuned for three benchmark sets.
KAPPA_PRESETS = {
    "news": (17.0, 0),
    "epsilon": (12000.0, 2000),
    "webspam": (2000.0, 400),
}


class _Recorder:
    def __init__(self, ledger, f_ref):
        self.ledger = ledger
        self.f_ref = f_ref
        self.start = time.perf_counter()
        self.records = []

    def add(self, rec):
        rec.rel_err = relative_error(rec.obj, self.f_ref)
        rec.rounds, rec.scalars = self.ledger.snapshot()
        rec.elapsed = time.perf_counter() - self.start
        self.records.append(rec)

    def reached(self, target):
        if self.f_ref is None or target is None:
            return False
        return self.records[-1].rel_err <= target


def sparsa_direct_run(problem, max_iter=1000, config=None, ledger=None, f_ref=None,
                      target=None, x0=None):
    """SpaRSA on ``F`` with the Hessian replaced by ``psi * I``.

    ``psi`` starts from the Barzilai-Borwein value ``s'y / s's`` and is
    multiplied by ``beta`` until
    ``F(x+) <= F(x) - sigma0 * psi / 2 * ||x+ - x||^2``.
    """
    config = config or SparsaConfig()
    ledger = ledger if ledger is not None else CommLedger()
    cluster = problem.cluster
    ranges = problem.variable_ranges
    rec = _Recorder(ledger, f_ref)
    x = problem.initial_point() if x0 is None else np.array(x0, dtype=np.float64)
    state = problem.init_state(x, ledger)
    f_cur = problem.objective(x, state, ledger)
    rec.add(IterationRecord(0, f_cur, math.nan))
    status, message = "max_iter", ""
    prev_x = prev_g = None
    psi = None
    for t in range(max_iter):
        if rec.reached(target):
            status = "target"
            break
        _, grad = problem.smooth_value_grad(x, state, ledger)
        if prev_x is not None:
            s, y = x - prev_x, grad - prev_g
            slots = [[s[r.start:r.stop] * y[r.start:r.stop], s[r.start:r.stop] ** 2]
                     for r in ranges]
            sy, ss = cluster.fold_slots(slots, ledger)
            if ss > 0.0 and sy > 0.0:
                psi = float(sy / ss)
        if psi is None:
            psi = problem.initial_curvature(x, grad, state, ledger)
        trials = 0
        while True:
            trials += 1
            p = problem.prox(x - grad / psi, 1.0 / psi) - x
            slots = [[p[r.start:r.stop] ** 2] for r in ranges]
            (pp,) = cluster.fold_slots(slots, ledger)
            if pp == 0.0:
                status = "converged"
                break
            image = problem.linesearch_precompute(p, state, ledger)
            f_new = problem.trial_objective(x, p, 1.0, state, image, ledger)
            if f_new <= f_cur - 0.5 * config.sigma0 * psi * pp:
                break
            psi *= config.beta
            if trials > MAX_BACKOFFS:
                status, message = "aborted", "acceptance test failed after 60 backoffs"
                break
        if status != "max_iter":
            break
        if not math.isfinite(f_new):
            status, message = "aborted", "objective became non-finite"
            break
        prev_x, prev_g = x, grad
        x = problem.advance(x, p, 1.0, state, image)
        f_cur = f_new
        rec.add(IterationRecord(t + 1, f_cur, math.nan, step_size=1.0, ls_trials=trials,
                                phase="sparsa"))
    else:
        if rec.reached(target):
            status = "target"
    return RunResult(x, rec.records, status, ledger, message)


def _bda_iteration(problem, x, state, f_cur, epochs, rngs, ledger):
    """One BDA step: local RPCD direction plus exact line search.

    Returns ``(x, ExactStep or None)``; ``None`` means no positive step.
    """
    _, grad = problem.smooth_value_grad(x, state, ledger)
    p = blockdiag_cd_solve(problem, x, grad, epochs, rngs)
    if not np.any(p):
        return x, None
    image = problem.linesearch_precompute(p, state, ledger)
    step = problem.exact_line_search(x, p, f_cur, state, image, ledger)
    if not step.lam > 0.0:
        return x, None
    x = problem.advance(x, p, step.lam, state, image)
    return x, step


def _require_dual(problem):
    if not isinstance(problem, SquaredHingeDual):
        raise ValueError("BDA needs the dual squared-hinge problem")


def bda_run(problem, max_iter=1000, ledger=None, f_ref=None, target=None, epochs=1,
            seed=0, x0=None):
    """Block-diagonal approximation: each worker runs ``epochs`` RPCD passes on
    its local Gram block, then an exact line search along the joint direction."""
    _require_dual(problem)
    ledger = ledger if ledger is not None else CommLedger()
    rngs = [np.random.default_rng([seed, k]) for k in range(problem.cluster.k)]
    rec = _Recorder(ledger, f_ref)
    x = problem.initial_point() if x0 is None else np.array(x0, dtype=np.float64)
    state = problem.init_state(x, ledger)
    f_cur = problem.objective(x, state, ledger)
    rec.add(IterationRecord(0, f_cur, math.nan))
    status = "max_iter"
    for t in range(max_iter):
        if rec.reached(target):
            status = "target"
            break
        x, step = _bda_iteration(problem, x, state, f_cur, epochs, rngs, ledger)
        if step is None:
            status = "converged"
            break
        f_cur = step.f_new
        rec.add(IterationRecord(t + 1, f_cur, math.nan, step_size=step.lam,
                                ls_trials=step.rounds, phase="bda"))
    else:
        if rec.reached(target):
            status = "target"
    return RunResult(x, rec.records, status, ledger)


@dataclass
class CatalystConfig:
    """``kappa`` and ``mu`` define ``q = mu/(mu+kappa)`` and the extrapolation
    weight ``(1 - sqrt q)/(1 + sqrt q)``.  ``inner_iters=None`` uses one BDA
    iteration per worker; ``warmup`` plain BDA iterations run first."""

    kappa: float
    mu: float
    inner_iters: int | None = None
    warmup: int = 0

    def __post_init__(self):
        if not self.kappa >= 0.0 or not self.mu > 0.0:
            raise ValueError("kappa must be >= 0 and mu > 0")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")

    @property
    def q(self):
        return self.mu / (self.mu + self.kappa)

    @property
    def beta(self):
        sq = math.sqrt(self.q)
        return (1.0 - sq) / (1.0 + sq)

    @classmethod
    def preset(cls, name, c):
        kappa, warmup = KAPPA_PRESETS[name]
        return cls(kappa=kappa, mu=1.0 / (2.0 * c), warmup=warmup)


def catalyst_run(problem, config, max_iter=1000, ledger=None, f_ref=None, target=None,
                 epochs=1, seed=0, x0=None):
    """BDA accelerated by Catalyst on the dual.

    ``max_iter`` counts BDA iterations (warmup included).  Every inner solve
    starts from the previous outer iterate and stops early when the exact
    line search gives a non-positive step.  Records report the original
    objective, not the kappa-augmented one.
    """
    _require_dual(problem)
    ledger = ledger if ledger is not None else CommLedger()
    k = problem.cluster.k
    budget = k if config.inner_iters is None else config.inner_iters
    rngs = [np.random.default_rng([seed, j]) for j in range(k)]
    rec = _Recorder(ledger, f_ref)
    x = problem.initial_point() if x0 is None else np.array(x0, dtype=np.float64)
    state = problem.init_state(x, ledger)
    f_cur = problem.objective(x, state, ledger)
    rec.add(IterationRecord(0, f_cur, math.nan))
    status = "max_iter"
    t = 0
    outer_iterates = []

    while t < config.warmup and t < max_iter:
        if rec.reached(target):
            return RunResult(x, rec.records, "target", ledger)
        x, step = _bda_iteration(problem, x, state, f_cur, epochs, rngs, ledger)
        if step is None:
            break
        t += 1
        f_cur = step.f_new
        rec.add(IterationRecord(t, f_cur, math.nan, step_size=step.lam,
                                ls_trials=step.rounds, phase="warmup"))

    x_prev = x.copy()
    y = x.copy()
    while t < max_iter:
        sub = problem.augmented(config.kappa, y)
        # F_aug at the warm start; only differences matter for the line search
        f_aug = f_cur + 0.5 * config.kappa * float((x - y) @ (x - y))
        inner = 0
        while inner < budget and t < max_iter:
            if rec.reached(target):
                break
            x, step = _bda_iteration(sub, x, state, f_aug, epochs, rngs, ledger)
            if step is None:
                break
            inner += 1
            t += 1
            f_aug = step.f_new
            f_cur = f_cur + step.base_change
            rec.add(IterationRecord(t, f_cur, math.nan, step_size=step.lam,
                                    ls_trials=step.rounds, phase="catalyst"))
        outer_iterates.append(x.copy())
        if rec.reached(target):
            status = "target"
            break
        if inner == 0:
            status = "converged"
            break
        y = x + config.beta * (x - x_prev)
        x_prev = x.copy()
    else:
        if rec.reached(target):
            status = "target"
    result = RunResult(x, rec.records, status, ledger)
    result.outer_iterates = outer_iterates
    return result
