"""Composite objectives ``F(x) = f(x) + Psi(x)`` over instance-split data.

Two instances are provided:

* :class:`L1Logistic` -- ``C * sum log(1 + exp(-y_i x_i^T w)) + ||w||_1`` in
  the primal, with variables split evenly by feature.
* :class:`SquaredHingeDual` -- ``0.5 * ||(YX) a||^2 + sum(a_i^2/(4C) - a_i)``
  over ``a >= 0``, with variables split like the instances.

Each worker only touches its own column block of the data and its own range
of variables; sums across workers use the cluster's ordered reductions and
are metered on the ledger passed in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterSim, partition_even
from .linalg import power_iteration, spmv, spmv_transpose


FEASIBILITY_TOL = 1e-12


def soft_threshold(u, tau):
    return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)


@dataclass
class SmoothState:
    """Cached data-side image of the iterate.

    ``z`` is ``X^T w`` (length n) for the primal and ``(YX) a`` (length d) for
    the dual.
    """

    z: np.ndarray


@dataclass
class ExactStep:
    """Closed-form minimizer of ``F(x + lam p)`` for quadratic duals."""

    lam: float
    f_new: float
    delta: float
    rounds: int
    base_change: float = 0.0


class CompositeProblem:
    """Shared machinery; subclasses supply the loss-specific pieces."""

    name = "composite"
    N: int
    cluster: ClusterSim

    @property
    def variable_ranges(self):
        return self.cluster.variable_ranges

    @property
    def instance_ranges(self):
        return self.cluster.instance_ranges

    def initial_point(self):
        return np.zeros(self.N)

    def psi_terms(self, x):
        raise NotImplementedError

    def psi_value(self, x):
        return float(np.sum(self.psi_terms(x)))

    def prox(self, u, tau):
        raise NotImplementedError

    def prox_block(self, k, u, tau):
        """Proximal map of ``tau * Psi_k`` on worker k's variable block."""
        r = self.variable_ranges[k]
        return self._prox_range(np.asarray(u, dtype=np.float64), tau, r)

    def _prox_range(self, u, tau, r):
        full = np.zeros(self.N)
        full[r.start:r.stop] = u
        return self.prox(full, tau)[r.start:r.stop]

    def psi_delta_terms(self, x, p):
        return self.psi_terms(x + p) - self.psi_terms(x)

    def stationarity_measure(self, x, grad):
        """Norm of ``prox_Psi(x - grad) - x``; zero exactly at stationary points."""
        return float(np.linalg.norm(self.prox(x - grad, 1.0) - x))

    def objective(self, x, state, ledger):
        """``F(x)`` in one scalar round (two slots: loss part and Psi)."""
        loss, psi = self._objective_slots(x, state, ledger)
        return loss + psi


class L1Logistic(CompositeProblem):
    """L1-regularized logistic regression in the primal variable w."""

    name = "primal-l1-logistic"

    def __init__(self, data, c, cluster_or_k=1):
        if c <= 0:
            raise ValueError("C must be positive")
        self.data = data
        self.C = float(c)
        self.N = data.d
        if isinstance(cluster_or_k, ClusterSim):
            k = cluster_or_k.k
        else:
            k = int(cluster_or_k)
        self.cluster = ClusterSim(
            k,
            instance_ranges=partition_even(data.n, k),
            variable_ranges=partition_even(data.d, k),
        )
        self.y = data.labels
        self.blocks = [data.X.column_range(r.start, r.stop) for r in self.instance_ranges]
        self._lipschitz = None

    def init_state(self, w, ledger=None):
        # w is replicated, so every worker forms X_k^T w on its own
        return SmoothState(self._local_products(w))

    def _local_products(self, v):
        return np.concatenate([spmv_transpose(b, v) for b in self.blocks])

    def loss_terms(self, z, r):
        yz = self.y[r.start:r.stop] * z[r.start:r.stop]
        return self.C * np.logaddexp(0.0, -yz)

    def psi_terms(self, x):
        return np.abs(x)

    def prox(self, u, tau):
        return soft_threshold(u, tau)

    def _objective_slots(self, w, state, ledger):
        slots = [
            [self.loss_terms(state.z, ri), np.abs(w[rv.start:rv.stop])]
            for ri, rv in zip(self.instance_ranges, self.variable_ranges)
        ]
        loss, psi = self.cluster.fold_slots(slots, ledger)
        return float(loss), float(psi)

    def _loss_derivative(self, z):
        # d/dt C log(1 + exp(-y t)) = -C y sigmoid(-y t)
        yz = self.y * z
        return -self.C * self.y * np.exp(-np.logaddexp(0.0, yz))

    def smooth_value_grad(self, w, state, ledger):
        """Loss value and gradient ``X xi'(X^T w)`` in one round of length d+1."""
        d = self.N
        deriv = self._loss_derivative(state.z)

        def make(block, r):
            def fold(acc):
                spmv(block, deriv[r.start:r.stop], out=acc[:d])
                acc[d] = _fold_1d(acc[d], self.loss_terms(state.z, r))
                return acc

            return fold

        folds = [make(b, r) for b, r in zip(self.blocks, self.instance_ranges)]
        out = self.cluster.allreduce_fold(folds, d + 1, ledger)
        return float(out[d]), out[:d]

    def initial_curvature(self, w, grad, state, ledger):
        """``|g^T (X D X^T) g| / ||g||^2`` with one scalar round.

        ``D`` is the diagonal of second derivatives of the logistic loss.
        Returns 1 when the gradient vanishes.
        """
        gg = float(grad @ grad)
        yz = self.y * state.z
        sig = np.exp(-np.logaddexp(0.0, -yz))
        curv = self.C * sig * (1.0 - sig)
        slots = []
        for b, r in zip(self.blocks, self.instance_ranges):
            xg = spmv_transpose(b, grad)
            slots.append([curv[r.start:r.stop] * xg * xg])
        (q,) = self.cluster.fold_slots(slots, ledger)
        if gg == 0.0:
            return 1.0
        return abs(float(q)) / gg

    def build_h0(self, w, grad, state, ledger):
        return self.initial_curvature(w, grad, state, ledger)

    def linesearch_precompute(self, p, state, ledger):
        """Share p (one O(d) round) and form ``X_k^T p`` locally."""
        parts = []
        for r in self.variable_ranges:
            v = np.zeros(self.N)
            v[r.start:r.stop] = p[r.start:r.stop]
            parts.append(v)
        shared = self.cluster.allreduce_sum(parts, ledger)
        return self._local_products(shared)

    def trial_objective(self, w, p, lam, state, image, ledger):
        z = state.z + lam * image
        wt = w + lam * p
        slots = [
            [self.loss_terms(z, ri), np.abs(wt[rv.start:rv.stop])]
            for ri, rv in zip(self.instance_ranges, self.variable_ranges)
        ]
        loss, psi = self.cluster.fold_slots(slots, ledger)
        return float(loss + psi)

    def advance(self, w, p, lam, state, image):
        state.z = state.z + lam * image
        return w + lam * p

    def lipschitz(self):
        """``(C/4) * ||X||^2`` by 50 power-iteration steps."""
        if self._lipschitz is None:
            X = self.data.X
            top = power_iteration(lambda v: spmv(X, spmv_transpose(X, v)), self.N)
            self._lipschitz = 0.25 * self.C * top
        return self._lipschitz

    def full_objective(self, w):
        """Direct (unmetered) evaluation, for checks."""
        z = spmv_transpose(self.data.X, w)
        return float(self.C * np.sum(np.logaddexp(0.0, -self.y * z)) + np.sum(np.abs(w)))

    def full_gradient(self, w):
        z = spmv_transpose(self.data.X, w)
        return spmv(self.data.X, self._loss_derivative(z))


class SquaredHingeDual(CompositeProblem):
    """Dual of the L2-regularized squared-hinge SVM.

    ``f(a) = 0.5 * ||z||^2`` with ``z = (YX) a`` and, per coordinate,
    ``Psi_i(a) = a^2/(4C) - a`` on ``a >= 0``.  A proximal term
    ``(kappa/2) * (a - center)^2`` can be folded into ``Psi`` for Catalyst.
    """

    name = "dual-sqhinge-svm"
    supports_blockdiag = True

    def __init__(self, data, c, cluster_or_k=1, kappa=0.0, center=None):
        if c <= 0:
            raise ValueError("C must be positive")
        self.data = data
        self.C = float(c)
        self.N = data.n
        self.sigma = 1.0 / (2.0 * self.C)
        if isinstance(cluster_or_k, ClusterSim):
            k = cluster_or_k.k
        else:
            k = int(cluster_or_k)
        ranges = partition_even(data.n, k)
        self.cluster = ClusterSim(k, instance_ranges=ranges, variable_ranges=ranges)
        # label scaling folded into the columns once
        self.XY = data.X.scale_columns(data.labels)
        self.blocks = [self.XY.column_range(r.start, r.stop) for r in ranges]
        self.kappa = float(kappa)
        self.center = np.zeros(self.N) if center is None else np.asarray(center, dtype=np.float64)
        self._lipschitz = None

    def augmented(self, kappa, center):
        """Same data with ``(kappa/2)||a - center||^2`` added to Psi."""
        other = object.__new__(SquaredHingeDual)
        other.__dict__.update(self.__dict__)
        other.kappa = float(kappa)
        other.center = np.array(center, dtype=np.float64)
        return other

    @property
    def psi_curvature(self):
        """Coefficient of ``a^2`` in each ``Psi_i``."""
        return 1.0 / (4.0 * self.C) + 0.5 * self.kappa

    def psi_terms(self, a):
        a = np.asarray(a, dtype=np.float64)
        # x + p can land a rounding error below zero even when x + p is a
        # prox output; only clearly negative entries count as infeasible
        bad = a < -FEASIBILITY_TOL
        a = np.maximum(a, 0.0)
        out = a * a / (4.0 * self.C) - a
        if self.kappa:
            out = out + 0.5 * self.kappa * (a - self.center) ** 2
        return np.where(bad, np.inf, out)

    def psi_slope(self, a):
        """Derivative of the smooth part of each ``Psi_i``."""
        out = a / (2.0 * self.C) - 1.0
        if self.kappa:
            out = out + self.kappa * (a - self.center)
        return out

    def prox(self, u, tau):
        num = u + tau + tau * self.kappa * self.center
        den = 1.0 + tau / (2.0 * self.C) + tau * self.kappa
        return np.maximum(0.0, num / den)

    def coordinate_minimizer(self, i, a, g, q):
        """argmin over b >= 0 of ``g (b - a) + q/2 (b - a)^2 + Psi_i(b)``."""
        num = q * a - g + 1.0 + self.kappa * self.center[i]
        den = q + 1.0 / (2.0 * self.C) + self.kappa
        return max(0.0, num / den)

    def _gather(self, v, ledger):
        """``(YX) v`` via the ordered chained reduction (one O(d) round)."""
        folds = [
            (lambda acc, b=b, r=r: spmv(b, v[r.start:r.stop], out=acc))
            for b, r in zip(self.blocks, self.instance_ranges)
        ]
        return self.cluster.allreduce_fold(folds, self.data.d, ledger)

    def init_state(self, a, ledger):
        return SmoothState(self._gather(a, ledger))

    def _objective_slots(self, a, state, ledger):
        terms = self.psi_terms(a)
        slots = [[terms[r.start:r.stop]] for r in self.variable_ranges]
        (psi,) = self.cluster.fold_slots(slots, ledger)
        return 0.5 * float(state.z @ state.z), float(psi)

    def smooth_value_grad(self, a, state, ledger):
        """``0.5 ||z||^2`` and ``(YX)_k^T z`` per block; no communication."""
        grad = np.concatenate([spmv_transpose(b, state.z) for b in self.blocks])
        return 0.5 * float(state.z @ state.z), grad

    def initial_curvature(self, a, grad, state, ledger):
        """``||(YX) g||^2 / ||g||^2`` with one round of length d+1."""
        d = self.data.d

        def make(b, r):
            def fold(acc):
                spmv(b, grad[r.start:r.stop], out=acc[:d])
                acc[d] = _fold_1d(acc[d], grad[r.start:r.stop] ** 2)
                return acc

            return fold

        folds = [make(b, r) for b, r in zip(self.blocks, self.instance_ranges)]
        out = self.cluster.allreduce_fold(folds, d + 1, ledger)
        gg = float(out[d])
        if gg == 0.0:
            return 1.0
        return float(out[:d] @ out[:d]) / gg

    def build_h0(self, a=None, grad=None, state=None, ledger=None):
        """Block-diagonal part of the Gram matrix, applied implicitly."""
        return BlockDiagonalGram(self.blocks, self.instance_ranges)

    def linesearch_precompute(self, p, state, ledger):
        return self._gather(p, ledger)

    def trial_objective(self, a, p, lam, state, image, ledger):
        z = state.z + lam * image
        at = a + lam * p
        terms = self.psi_terms(at)
        slots = [[terms[r.start:r.stop]] for r in self.variable_ranges]
        (psi,) = self.cluster.fold_slots(slots, ledger)
        return 0.5 * float(z @ z) + float(psi)

    def exact_line_search(self, a, p, f_cur, state, image, ledger):
        """Minimize the quadratic ``lam -> F(a + lam p)`` over feasible lam > 0.

        One round gathers ``sum p Psi'(a)``, ``sum p^2`` and, with a prox
        term, ``sum p (a - center)``; a second (min) round finds the largest
        feasible step only when the unconstrained minimizer exceeds 1.
        """
        slope = p * self.psi_slope(a)
        offset = p * (a - self.center)
        slots = []
        for r in self.variable_ranges:
            ps = p[r.start:r.stop]
            row = [slope[r.start:r.stop], ps * ps]
            if self.kappa:
                row.append(offset[r.start:r.stop])
            slots.append(row)
        sums = self.cluster.fold_slots(slots, ledger)
        lin, pp = float(sums[0]), float(sums[1])
        zz = float(image @ image)
        b = float(state.z @ image) + lin
        qa = 0.5 * zz + self.psi_curvature * pp
        delta = b + self.psi_curvature * pp
        rounds = 1
        lam = -b / (2.0 * qa) if qa > 0.0 else 0.0
        if lam > 1.0:
            limits = []
            for r in self.variable_ranges:
                ps, as_ = p[r.start:r.stop], a[r.start:r.stop]
                neg = ps < 0.0
                limits.append(np.min(-as_[neg] / ps[neg]) if np.any(neg) else np.inf)
            lam_max = float(self.cluster.allreduce_min(limits, ledger)[0])
            rounds += 1
            # the unit step is feasible by construction
            lam = max(1.0, min(lam, lam_max))
        f_new = f_cur + lam * b + lam * lam * qa
        base_change = 0.0
        if self.kappa:
            kap_lin = self.kappa * float(sums[2])
            base_change = lam * (b - kap_lin) + lam * lam * (qa - 0.5 * self.kappa * pp)
        else:
            base_change = f_new - f_cur
        return ExactStep(lam, f_new, delta, rounds, base_change)

    def advance(self, a, p, lam, state, image):
        state.z = state.z + lam * image
        return np.maximum(a + lam * p, 0.0)

    def primal_recovery(self, a, state):
        """``w(a) = (YX) a``, which is the cached z."""
        return state.z.copy()

    def primal_objective_terms(self, margins, r):
        h = np.maximum(0.0, 1.0 - margins[r.start:r.stop])
        return self.C * h * h

    def primal_objective_from_state(self, state, grad, ledger):
        """``P(w(a))`` where the margins ``y_i x_i^T w`` equal the dual gradient."""
        slots = [[self.primal_objective_terms(grad, r)] for r in self.instance_ranges]
        (hinge,) = self.cluster.fold_slots(slots, ledger)
        return 0.5 * float(state.z @ state.z) + float(hinge)

    def primal_objective(self, w):
        """Direct (unmetered) ``0.5||w||^2 + C sum max(0, 1 - y_i x_i^T w)^2``."""
        margins = spmv_transpose(self.XY, w)
        h = np.maximum(0.0, 1.0 - margins)
        return float(0.5 * w @ w + self.C * h @ h)

    def lipschitz(self):
        """``||X||^2`` by 50 power-iteration steps."""
        if self._lipschitz is None:
            X = self.XY
            self._lipschitz = power_iteration(
                lambda v: spmv(X, spmv_transpose(X, v)), self.data.d
            )
        return self._lipschitz

    def full_objective(self, a):
        z = spmv(self.XY, a)
        return float(0.5 * z @ z + np.sum(self.psi_terms(a)))

    def full_gradient(self, a):
        return spmv_transpose(self.XY, spmv(self.XY, a))


class BlockDiagonalGram:
    """The block-diagonal part ``diag((YX)_k^T (YX)_k)`` of the dual Hessian."""

    def __init__(self, blocks, ranges):
        self.blocks = blocks
        self.ranges = ranges
        self.n = ranges[-1].stop if ranges else 0

    def matvec(self, p):
        out = np.empty(self.n)
        for b, r in zip(self.blocks, self.ranges):
            out[r.start:r.stop] = spmv_transpose(b, spmv(b, p[r.start:r.stop]))
        return out

    def dense(self):
        out = np.zeros((self.n, self.n))
        for b, r in zip(self.blocks, self.ranges):
            xb = b.to_dense()
            out[r.start:r.stop, r.start:r.stop] = xb.T @ xb
        return out


@dataclass
class PocketTracker:
    """Keeps the primal candidate with the smallest objective seen so far.

    Ties keep the earlier candidate.
    """

    best_w: np.ndarray | None = None
    best_obj: float = np.inf
    history: list = field(default_factory=list)

    def update(self, w, obj):
        if self.best_w is None or obj < self.best_obj:
            self.best_w = np.array(w, copy=True)
            self.best_obj = float(obj)
        self.history.append(self.best_obj)
        return self


def pocket_update(tracker, w, obj):
    return tracker.update(w, obj)


def _fold_1d(acc, terms):
    if len(terms) == 0:
        return acc
    return np.cumsum(np.concatenate(([acc], terms)))[-1]


def make_problem(kind, data, c, k):
    if kind == L1Logistic.name:
        return L1Logistic(data, c, k)
    if kind == SquaredHingeDual.name:
        return SquaredHingeDual(data, c, k)
    raise ValueError(f"unknown problem {kind!r}")
