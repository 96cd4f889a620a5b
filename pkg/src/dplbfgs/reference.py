"""Reference optimal objective by plain proximal gradient (step 1/L).

This is deliberately independent of the distributed code paths: it works on
one scipy sparse matrix, uses scipy's singular-value routine for L, and never
touches the cluster simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import svds

from .problems import L1Logistic, SquaredHingeDual, soft_threshold

DEFAULT_ITERS = 200_000


@dataclass
class Reference:
    f_star: float
    x: np.ndarray
    iterations: int
    lipschitz: float
    primal: float | None = None


def _top_singular_sq(mat):
    if min(mat.shape) <= 2:
        return float(np.linalg.norm(mat.toarray(), 2) ** 2)
    s = svds(mat.astype(np.float64), k=1, return_singular_vectors=False, tol=1e-12,
             random_state=0)
    return float(s[0] ** 2)


def prox_gradient(value_grad, prox, x0, lipschitz, iters, tol=0.0):
    """``x <- prox(x - g/L, 1/L)``; stops early once an update changes nothing
    beyond ``tol * (1 + ||x||)``.  Returns ``(x, iterations)``."""
    step = 1.0 / lipschitz
    x = np.array(x0, dtype=np.float64)
    for it in range(1, iters + 1):
        _, g = value_grad(x)
        x_new = prox(x - step * g, step)
        moved = float(np.linalg.norm(x_new - x))
        x = x_new
        if moved <= tol * (1.0 + float(np.linalg.norm(x))):
            return x, it
    return x, iters


def compute_reference(problem, iters=DEFAULT_ITERS, tol=0.0):
    """Run proximal gradient on ``problem``'s full objective."""
    if isinstance(problem, L1Logistic):
        X = problem.data.X.to_scipy().tocsr()
        XT = X.T.tocsr()
        y, c = problem.y, problem.C
        lip = 0.25 * c * _top_singular_sq(X)

        def value_grad(w):
            m = y * (XT @ w)
            return None, X @ (-c * y * np.exp(-np.logaddexp(0.0, m)))

        x, it = prox_gradient(value_grad, soft_threshold, np.zeros(problem.N), lip, iters, tol)
        margins = y * (XT @ x)
        f_star = float(c * np.sum(np.logaddexp(0.0, -margins)) + np.sum(np.abs(x)))
        return Reference(f_star, x, it, lip)
    if isinstance(problem, SquaredHingeDual):
        Z = problem.XY.to_scipy().tocsr()
        ZT = Z.T.tocsr()
        lip = _top_singular_sq(Z)
        c = problem.C

        def value_grad(a):
            return None, ZT @ (Z @ a)

        def prox(u, tau):
            return np.maximum(0.0, (u + tau) / (1.0 + tau / (2.0 * c)))

        x, it = prox_gradient(value_grad, prox, np.zeros(problem.N), lip, iters, tol)
        w = Z @ x
        f_star = float(0.5 * w @ w + np.sum(x * x / (4.0 * c) - x))
        h = np.maximum(0.0, 1.0 - ZT @ w)
        primal = float(0.5 * w @ w + c * h @ h)
        return Reference(f_star, x, it, lip, primal)
    raise TypeError(f"no reference solver for {type(problem).__name__}")


def quadratic_reference(a, b, iters=DEFAULT_ITERS, tol=0.0):
    """Minimize ``0.5 x'Ax - b'x`` (A symmetric PSD) by gradient descent."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lip = float(np.linalg.eigvalsh(a)[-1])
    x, it = prox_gradient(lambda x: (None, a @ x - b), lambda u, tau: u, np.zeros(len(b)),
                          lip, iters, tol)
    return Reference(float(0.5 * x @ a @ x - b @ x), x, it, lip)


def format_reference(ref):
    """File body: F* to 15 significant digits, plus the recovered primal if any."""
    lines = [f"{ref.f_star:.15g}"]
    if ref.primal is not None:
        lines.append(f"# primal_recovered {ref.primal:.15g}")
    lines.append(f"# iterations {ref.iterations}")
    return "\n".join(lines) + "\n"


def read_reference(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                value = float(line)
                if not math.isfinite(value):
                    raise ValueError("reference objective is not finite")
                return value
    raise ValueError(f"{path}: no reference value found")
