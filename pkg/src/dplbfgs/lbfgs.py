"""Compact limited-memory BFGS model ``H = gamma*I - U M^{-1} U^T``.

``U = [gamma*S, Y]`` and ``M = [[gamma*S^T S, L], [L^T, -D]]`` where ``L`` is
the strictly lower part of ``S^T Y`` and ``D`` its diagonal.  Rows of ``S``
and ``Y`` belong to the worker owning the matching variables; all inner
products across rows go through the cluster's ordered reduction.
"""

from __future__ import annotations

import numpy as np

from .linalg import SingularMatrixError, SymmetricFactor


class LbfgsState:
    """Curvature pairs, scaling and the factorized middle matrix.

    Parameters
    ----------
    n : int
        Variable dimension.
    cluster : ClusterSim
        Supplies ``variable_ranges`` (row ownership) and the collectives.
    memory : int
        Maximum number of stored pairs.
    delta : float
        Safeguard constant; a pair is kept only if ``s'y >= delta * s's``.
    gamma : float
        Scaling used while no pair is stored (the H0 = a0*I choice).
    """

    def __init__(self, n, cluster, memory=10, delta=1e-10, gamma=1.0):
        if memory < 1:
            raise ValueError("memory must be >= 1")
        self.n = int(n)
        self.cluster = cluster
        self.memory = int(memory)
        self.delta = float(delta)
        self.gamma = float(gamma)
        self.S = np.zeros((self.n, 0))
        self.Y = np.zeros((self.n, 0))
        self.SS = np.zeros((0, 0))
        # lower triangle (with diagonal) of S^T Y; the upper part is never needed
        self.SY = np.zeros((0, 0))
        self.M = np.zeros((0, 0))
        self._factor = SymmetricFactor(self.M)

    @property
    def size(self):
        return self.S.shape[1]

    def _ranges(self):
        return self.cluster.variable_ranges

    def admit_pair(self, s, y, ledger):
        """Safeguarded admission of a new (s, y) pair.

        One 3-scalar round decides admission; on acceptance a second round of
        length ``2 * size`` refreshes the cached inner products with ``s``.
        Returns whether the pair was stored.
        """
        s = np.asarray(s, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        slots = [
            [s[r] * y[r], s[r] * s[r], y[r] * y[r]] for r in self._ranges()
        ]
        sy, ss, yy = self.cluster.fold_slots(slots, ledger)
        if not (ss > 0.0 and sy >= self.delta * ss):
            return False

        S = np.column_stack((self.S, s))
        Y = np.column_stack((self.Y, y))
        SS, SY = _grow(self.SS), _grow(self.SY)
        if S.shape[1] > self.memory:
            S, Y = S[:, 1:], Y[:, 1:]
            SS, SY = SS[1:, 1:], SY[1:, 1:]
        c = S.shape[1]
        stack = [np.hstack((S[r], Y[r])) * s[r, None] for r in self._ranges()]
        prods = self.cluster.fold_vectors(stack, 2 * c, ledger)
        SS[c - 1, :] = prods[:c]
        SS[:, c - 1] = prods[:c]
        SY[c - 1, :] = prods[c:]
        SY[c - 1, c - 1] = sy

        self.S, self.Y, self.SS, self.SY = S, Y, SS, SY
        self.gamma = yy / sy
        self._refactor()
        return True

    def _refactor(self):
        while True:
            c = self.size
            low = np.tril(self.SY, -1)
            self.M = np.block(
                [[self.gamma * self.SS, low], [low.T, -np.diag(np.diag(self.SY))]]
            )
            try:
                self._factor = SymmetricFactor(self.M)
                return
            except SingularMatrixError:
                if c == 0:
                    return
                # drop the oldest pair and try again
                self.S, self.Y = self.S[:, 1:], self.Y[:, 1:]
                self.SS, self.SY = self.SS[1:, 1:], self.SY[1:, 1:]

    def project(self, p, ledger, extra=None):
        """Return ``[S^T p; Y^T p]`` in one round.

        ``extra[k]`` optionally lists worker k's term arrays for further
        scalar sums batched into the same round; their totals are returned as
        the second value.
        """
        c = self.size
        n_extra = 0 if extra is None else len(extra[0])

        def make(k, r):
            def fold(acc):
                if c:
                    terms = np.hstack((self.S[r], self.Y[r])) * p[r, None]
                    head = acc[: 2 * c]
                    acc[: 2 * c] = _fold_rows(head, terms)
                for j in range(n_extra):
                    acc[2 * c + j] = _fold_1d(acc[2 * c + j], extra[k][j])
                return acc

            return fold

        folds = [make(k, r) for k, r in enumerate(self._ranges())]
        out = self.cluster.allreduce_fold(folds, 2 * c + n_extra, ledger)
        return out[: 2 * c], out[2 * c:]

    def _middle(self, w):
        c = self.size
        return self._factor.solve(np.concatenate((self.gamma * w[:c], w[c:])))

    def apply(self, p, w, scale=1.0):
        """``scale * H p`` given ``w = [S^T p; Y^T p]`` (purely local work)."""
        if self.size == 0:
            return scale * self.gamma * p
        c = self.size
        r = self._middle(w)
        hp = self.gamma * p - self.gamma * (self.S @ r[:c]) - self.Y @ r[c:]
        return scale * hp

    def quad_form(self, pp, w, scale=1.0):
        """``scale * p^T H p`` from ``pp = p^T p`` and ``w = [S^T p; Y^T p]``."""
        if self.size == 0:
            return scale * self.gamma * pp
        c = self.size
        uw = np.concatenate((self.gamma * w[:c], w[c:]))
        return scale * (self.gamma * pp - uw @ self._factor.solve(uw))

    def hvp(self, p, ledger):
        """``H p`` with ``U^T p`` assembled by one O(m) round."""
        p = np.asarray(p, dtype=np.float64)
        if self.size == 0:
            return self.gamma * p
        w, _ = self.project(p, ledger)
        return self.apply(p, w)

    def materialize_dense(self):
        """Dense ``H`` for small problems (tests and diagnostics only)."""
        if self.n > 64:
            raise ValueError("materialize_dense is limited to n <= 64")
        h = self.gamma * np.eye(self.n)
        if self.size == 0:
            return h
        U = np.hstack((self.gamma * self.S, self.Y))
        return h - U @ np.column_stack([self._factor.solve(row) for row in U])


def _grow(a):
    c = a.shape[0]
    out = np.zeros((c + 1, c + 1))
    out[:c, :c] = a
    return out


def _fold_rows(acc, terms):
    return np.cumsum(np.concatenate((acc[None], terms)), axis=0)[-1]


def _fold_1d(acc, terms):
    if len(terms) == 0:
        return acc
    return np.cumsum(np.concatenate(([acc], terms)))[-1]
