"""Distributed proximal L-BFGS (DPLBFGS) outer loop.

Each main iteration computes the gradient, offers the previous step to the
L-BFGS memory, solves the local model for a direction and then either
backtracks on the step size (``variant="ls"``) or inflates the model until a
unit step gives enough decrease (``variant="tr"``).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cluster import CommLedger
from .lbfgs import LbfgsState
from .problems import PocketTracker
from .subsolver import (
    ModelPoint,
    SparsaConfig,
    SubsolverError,
    blockdiag_cd_solve,
    sparsa_solve,
)

MAX_BACKTRACKS = 50
MAX_RESCALES = 50


class LineSearchError(RuntimeError):
    pass


class InvariantViolation(RuntimeError):
    """A quantity that the theory guarantees to be negative was not."""


@dataclass
class SolverConfig:
    """Outer-loop settings.

    ``h0`` picks the model used before any curvature pair is stored:
    ``"scalar"`` (``a0 * I``) or ``"blockdiag"`` (dual only; coordinate
    descent on the local Gram blocks until ``warmup_pairs`` pairs exist).
    ``exact_linesearch=None`` means exact for the quadratic dual and
    backtracking otherwise.
    """

    variant: str = "ls"
    theta: float = 0.5
    sigma1: float = 1e-4
    memory: int = 10
    delta: float = 1e-10
    sparsa: SparsaConfig = field(default_factory=SparsaConfig)
    max_iter: int = 1000
    target: float | None = None
    exact_linesearch: bool | None = None
    h0: str | None = None
    warmup_pairs: int | None = None
    bda_epochs: int = 1
    seed: int = 0
    stationarity_tol: float | None = None
    track_primal: bool = False

    def __post_init__(self):
        if self.variant not in ("ls", "tr"):
            raise ValueError("variant must be 'ls' or 'tr'")
        if not 0.0 < self.theta < 1.0 or not 0.0 < self.sigma1 < 1.0:
            raise ValueError("theta and sigma1 must lie in (0, 1)")


@dataclass
class IterationRecord:
    iteration: int
    obj: float
    rel_err: float
    step_size: float = math.nan
    sparsa_iters: int = 0
    sparsa_checks: int = 0
    max_backoffs: int = 0
    ls_trials: int = 0
    tr_rescales: int = 0
    admitted: bool | None = None
    pairs: int = 0
    phase: str = ""
    rounds: int = 0
    scalars: int = 0
    elapsed: float = 0.0
    gamma: float = math.nan
    primal_obj: float = math.nan


@dataclass
class RunResult:
    x: np.ndarray
    records: list
    status: str
    ledger: CommLedger
    message: str = ""
    pocket: PocketTracker | None = None
    model: LbfgsState | None = None

    @property
    def objective(self):
        return self.records[-1].obj


def relative_error(f, f_ref):
    if f_ref is None:
        return math.nan
    return abs((f - f_ref) / f_ref) if f_ref != 0.0 else abs(f)


def line_search(objective_at, f_cur, delta, theta=0.5, sigma1=1e-4,
                max_backtracks=MAX_BACKTRACKS):
    """Largest ``lam`` in ``{1, theta, theta^2, ...}`` with
    ``F(x + lam p) <= F(x) + lam * sigma1 * delta``.

    ``objective_at(lam)`` returns ``F(x + lam p)``.  Returns
    ``(lam, F(x + lam p), trials)``.
    """
    if not delta < 0.0:
        raise InvariantViolation(f"direction is not a descent direction (Delta={delta:g})")
    lam = 1.0
    for trial in range(1, max_backtracks + 2):
        f_new = objective_at(lam)
        if not math.isfinite(f_new) and f_new != math.inf:
            raise FloatingPointError("objective evaluated to NaN")
        if f_new <= f_cur + lam * sigma1 * delta:
            return lam, f_new, trial
        lam *= theta
    raise LineSearchError(f"no acceptable step after {max_backtracks} backtracks")


def direction_delta(problem, x, grad, p, ledger):
    """``g^T p + Psi(x + p) - Psi(x)`` in one scalar round."""
    dpsi = problem.psi_delta_terms(x, p)
    slots = [[grad[r.start:r.stop] * p[r.start:r.stop], dpsi[r.start:r.stop]]
             for r in problem.variable_ranges]
    a, b = problem.cluster.fold_slots(slots, ledger)
    return float(a + b)


def trust_region_step(problem, x, grad, model, first, f_cur, state, config, ledger):
    """Inflate the model by ``1/theta`` until a unit step decreases F enough.

    ``first`` is the SpaRSA result for the unscaled model.  Returns
    ``(p, image, F(x + p), rescales, sparsa_iters, sparsa_checks)``.
    """
    res, scale, rescales = first, 1.0, 0
    iters, checks = first.iterations, first.checks
    while True:
        p = res.p
        image = problem.linesearch_precompute(p, state, ledger)
        f_new = problem.trial_objective(x, p, 1.0, state, image, ledger)
        if f_new - f_cur <= config.sigma1 * res.q:
            return p, image, f_new, rescales, iters, checks
        rescales += 1
        if rescales > MAX_RESCALES:
            raise LineSearchError("trust-region rescaling did not terminate")
        scale /= config.theta
        pt = res.point
        warm = None
        if pt.q_value(model, scale) < 0.0:
            warm = ModelPoint(pt.p, pt.w, pt.pp, pt.lin)
        res = sparsa_solve(problem, x, grad, model, config.sparsa, ledger,
                           scale=scale, warm=warm)
        iters += res.iterations
        checks += res.checks


def dplbfgs_run(problem, config=None, ledger=None, f_ref=None, x0=None):
    """Run DPLBFGS on ``problem``; returns a :class:`RunResult`.

    Stops when the relative objective error against ``f_ref`` reaches
    ``config.target``, when the stationarity measure drops below
    ``config.stationarity_tol``, when the direction vanishes, or after
    ``config.max_iter`` iterations.  Numerical failures end the run with the
    trajectory so far and a non-``ok`` status.
    """
    config = config or SolverConfig()
    ledger = ledger if ledger is not None else CommLedger()
    start = time.perf_counter()
    has_blocks = getattr(problem, "supports_blockdiag", False)
    has_exact = hasattr(problem, "exact_line_search")
    h0 = config.h0 or ("blockdiag" if has_blocks else "scalar")
    if h0 == "blockdiag" and not has_blocks:
        raise ValueError("block-diagonal H0 needs the dual problem")
    exact = has_exact if config.exact_linesearch is None else config.exact_linesearch
    if exact and not has_exact:
        raise ValueError("exact line search needs a quadratic problem")
    warmup_pairs = config.memory if config.warmup_pairs is None else config.warmup_pairs
    rngs = [np.random.default_rng([config.seed, k]) for k in range(problem.cluster.k)]

    x = problem.initial_point() if x0 is None else np.array(x0, dtype=np.float64)
    state = problem.init_state(x, ledger)
    f_cur = problem.objective(x, state, ledger)
    model = LbfgsState(problem.N, problem.cluster, config.memory, config.delta)
    pocket = None
    if config.track_primal and hasattr(problem, "primal_objective_from_state"):
        pocket = PocketTracker()

    def snapshot(rec):
        rec.rounds, rec.scalars = ledger.snapshot()
        rec.elapsed = time.perf_counter() - start
        return rec

    records = [snapshot(IterationRecord(0, f_cur, relative_error(f_cur, f_ref)))]
    result = RunResult(x, records, "max_iter", ledger, pocket=pocket, model=model)
    prev_s = prev_g = None

    for t in range(config.max_iter):
        if f_ref is not None and config.target is not None:
            if relative_error(f_cur, f_ref) <= config.target:
                result.status = "target"
                break
        rec = IterationRecord(t + 1, f_cur, math.nan)
        try:
            _, grad = problem.smooth_value_grad(x, state, ledger)
            if pocket is not None:
                primal = problem.primal_objective_from_state(state, grad, ledger)
                pocket.update(problem.primal_recovery(x, state), primal)
                records[-1].primal_obj = primal
            if prev_s is not None:
                rec.admitted = model.admit_pair(prev_s, grad - prev_g, ledger)
            elif h0 == "scalar":
                model.gamma = problem.initial_curvature(x, grad, state, ledger)
            if config.stationarity_tol is not None:
                if _stationarity(problem, x, grad, ledger) <= config.stationarity_tol:
                    result.status = "stationary"
                    break
            rec.pairs, rec.gamma = model.size, model.gamma

            use_bda = h0 == "blockdiag" and model.size < warmup_pairs
            delta = None
            first = None
            if use_bda:
                rec.phase = "bda"
                p = blockdiag_cd_solve(problem, x, grad, config.bda_epochs, rngs)
            else:
                rec.phase = "lbfgs"
                first = sparsa_solve(problem, x, grad, model, config.sparsa, ledger)
                p, delta = first.p, first.delta
                rec.sparsa_iters, rec.sparsa_checks = first.iterations, first.checks
                rec.max_backoffs = max(first.backoffs, default=0)
            if not np.any(p):
                result.status = "converged"
                break

            if config.variant == "tr" and not use_bda:
                p, image, f_new, rec.tr_rescales, rec.sparsa_iters, rec.sparsa_checks = (
                    trust_region_step(problem, x, grad, model, first, f_cur, state,
                                      config, ledger)
                )
                lam = 1.0
            else:
                image = problem.linesearch_precompute(p, state, ledger)
                if exact:
                    step = problem.exact_line_search(x, p, f_cur, state, image, ledger)
                    delta = step.delta
                    # no F comparison is involved, so only a non-descent
                    # direction ends the run here
                    if not delta < 0.0 and _stalled(delta, f_cur):
                        result.status = "stalled"
                        break
                    if not delta < 0.0:
                        raise InvariantViolation(f"Delta={delta:g} is not negative")
                    lam, f_new, rec.ls_trials = step.lam, step.f_new, step.rounds
                else:
                    if delta is None:
                        delta = direction_delta(problem, x, grad, p, ledger)
                    if _stalled(delta, f_cur):
                        result.status = "stalled"
                        break
                    lam, f_new, rec.ls_trials = line_search(
                        lambda lam: problem.trial_objective(x, p, lam, state, image, ledger),
                        f_cur, delta, config.theta, config.sigma1,
                    )
            if not math.isfinite(f_new):
                raise FloatingPointError("objective became non-finite")
        except (LineSearchError, SubsolverError, FloatingPointError) as exc:
            result.status = "aborted"
            result.message = str(exc)
            break

        x = problem.advance(x, p, lam, state, image)
        prev_s, prev_g = lam * p, grad
        f_cur = f_new
        rec.obj, rec.rel_err, rec.step_size = f_cur, relative_error(f_cur, f_ref), lam
        records.append(snapshot(rec))
    else:
        if f_ref is not None and config.target is not None:
            if relative_error(f_cur, f_ref) <= config.target:
                result.status = "target"

    result.x = x
    return result


def _stalled(delta, f_cur):
    # no decrease measurable in double precision
    return abs(delta) <= 1e-15 * max(1.0, abs(f_cur)) and delta <= 1e-15 * max(1.0, abs(f_cur))


def _stationarity(problem, x, grad, ledger):
    g = problem.prox(x - grad, 1.0) - x
    slots = [[g[r.start:r.stop] ** 2] for r in problem.variable_ranges]
    (sq,) = problem.cluster.fold_slots(slots, ledger)
    return math.sqrt(float(sq))
