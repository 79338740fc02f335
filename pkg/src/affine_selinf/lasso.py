"""
Coordinate descent for the LASSO with a KKT certificate.

The problem solved is

.. math::

    \\text{minimize}_{\\beta} \\frac{1}{2} \\|y - X\\beta\\|^2_2 + \\lambda \\|\\beta\\|_1

and the returned fit carries the active set and signs that label the
selection event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_THRESHOLD = 1e-10
KKT_TOL = 1e-10
MAX_SWEEPS = 100_000


class LassoConvergenceError(RuntimeError):
    """Raised when coordinate descent fails to reach the KKT tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class DesignMatrix:
    """
    A dense design matrix with its column norms.

    Parameters
    ----------
    values : np.ndarray
        Matrix of shape (n, p).
    normalized : bool
        If True the columns are asserted to have unit Euclidean norm.
    """

    values: np.ndarray
    column_norms: np.ndarray
    normalized: bool = False

    @classmethod
    def from_array(cls, X, normalized=False):
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("design must be a nonempty 2-d array, got shape %s" % (X.shape,))
        if not np.all(np.isfinite(X)):
            raise ValueError("design contains non-finite entries")
        norms = np.linalg.norm(X, axis=0)
        if normalized and np.max(np.abs(norms - 1)) > 1e-12:
            raise ValueError("design flagged normalized but column norms deviate from 1")
        X.setflags(write=False)
        norms.setflags(write=False)
        return cls(X, norms, normalized)

    @classmethod
    def normalize(cls, X):
        """Rescale every column to unit norm."""
        X = np.array(X, dtype=float)
        norms = np.linalg.norm(X, axis=0)
        if np.any(norms == 0):
            raise ValueError("cannot normalize an all-zero column")
        return cls.from_array(X / norms, normalized=True)

    @property
    def shape(self):
        return self.values.shape


def as_design(X):
    if isinstance(X, DesignMatrix):
        return X
    return DesignMatrix.from_array(X)


@dataclass(frozen=True)
class LassoFit:
    beta: np.ndarray
    active: tuple
    signs: tuple
    lam: float
    kkt_residual: float
    sweeps: int = 0

    @property
    def state(self):
        """The (E, z_E) pair as a hashable tuple."""
        return self.active, self.signs


def _soft_threshold(z, lam):
    return np.sign(z) * max(abs(z) - lam, 0.0)


def _kkt_violation(G, c, beta, lam, active, signs):
    # gradient of the smooth part, x_j^T (y - X beta)
    grad = c - G @ beta
    viol = np.maximum(np.abs(grad) - lam, 0.0)
    if len(active):
        idx = np.asarray(active)
        viol[idx] = np.abs(grad[idx] - lam * np.asarray(signs, dtype=float))
    return float(viol.max()) if viol.size else 0.0


def _support(beta, zero_threshold):
    beta = beta.copy()
    beta[np.abs(beta) <= zero_threshold] = 0.0
    active = tuple(int(j) for j in np.flatnonzero(beta))
    signs = tuple(int(s) for s in np.sign(beta[list(active)]))
    return beta, active, signs


def _polish(G, c, beta, lam, zero_threshold):
    """
    Solve the equality-constrained stationarity equations on the current
    support. Returns None when the solution flips a sign.
    """
    beta, active, signs = _support(beta, zero_threshold)
    if not active:
        return beta
    idx = np.asarray(active)
    z = np.asarray(signs, dtype=float)
    try:
        sol = np.linalg.solve(G[np.ix_(idx, idx)], c[idx] - lam * z)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(sol) != z):
        return None
    out = np.zeros_like(beta)
    out[idx] = sol
    return out


def solve_lasso(X, y, lam, tol=KKT_TOL, max_sweeps=MAX_SWEEPS,
                zero_threshold=ZERO_THRESHOLD):
    """
    Solve the LASSO by cyclic coordinate descent with active-set sweeps.

    After each full sweep the current support is polished by solving the
    stationarity equations exactly; the fit is returned as soon as the
    maximal KKT violation is at most `tol`.

    Parameters
    ----------
    X : DesignMatrix or array of shape (n, p)
    y : array of shape (n,)
    lam : float
        Regularization parameter, must be positive.

    Returns
    -------
    LassoFit

    Raises
    ------
    LassoConvergenceError
        If the tolerance is not met after `max_sweeps` full sweeps.
    """
    X = as_design(X).values
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("response has shape %s, expected (%d,)" % (y.shape, n))
    if not lam > 0:
        raise ValueError("lam must be positive, got %r" % (lam,))

    G = X.T @ X
    c = X.T @ y
    col_sq = np.diag(G).copy()
    beta = np.zeros(p)

    if np.max(np.abs(c)) <= lam:
        return LassoFit(beta, (), (), float(lam), 0.0, 0)

    grad = c.copy()
    usable = np.flatnonzero(col_sq > 0)

    def sweep(coords):
        delta = 0.0
        for j in coords:
            old = beta[j]
            new = _soft_threshold(grad[j] + col_sq[j] * old, lam) / col_sq[j]
            if new != old:
                grad[:] -= G[:, j] * (new - old)
                beta[j] = new
                delta = max(delta, abs(new - old) * np.sqrt(col_sq[j]))
        return delta

    last = np.inf
    for it in range(1, max_sweeps + 1):
        sweep(usable)
        # inner passes over the current support only
        for _ in range(1000):
            act = np.flatnonzero(beta)
            if sweep(act) <= tol * 1e-2:
                break
        grad[:] = c - G @ beta

        polished = _polish(G, c, beta, lam, zero_threshold)
        if polished is not None:
            _, act, sgn = _support(polished, zero_threshold)
            v = _kkt_violation(G, c, polished, lam, act, sgn)
            if v <= tol:
                beta_out, act, sgn = _support(polished, zero_threshold)
                return LassoFit(beta_out, act, sgn, float(lam), v, it)

        b_cur, act, sgn = _support(beta, zero_threshold)
        last = _kkt_violation(G, c, b_cur, lam, act, sgn)
        if last <= tol:
            return LassoFit(b_cur, act, sgn, float(lam), last, it)

    raise LassoConvergenceError(
        "coordinate descent did not converge in %d sweeps" % max_sweeps, last)


def verify_kkt(X, y, fit):
    """
    Maximal violation of the LASSO KKT conditions at `fit`.

    For j in the active set the violation is
    ``|x_j^T(y - X beta) - lam * sign(beta_j)|``, otherwise
    ``max(0, |x_j^T(y - X beta)| - lam)``.
    """
    X = as_design(X).values
    y = np.asarray(y, dtype=float)
    beta = np.asarray(fit.beta, dtype=float)
    if X.shape[1] != beta.shape[0] or X.shape[0] != y.shape[0]:
        raise ValueError("fit dimensions do not agree with the design")
    grad = X.T @ (y - X @ beta)
    viol = np.maximum(np.abs(grad) - fit.lam, 0.0)
    if len(fit.active):
        idx = np.asarray(fit.active)
        viol[idx] = np.abs(grad[idx] - fit.lam * np.asarray(fit.signs, dtype=float))
    return float(viol.max())


def lambda_four_sigma_sqrt_log_p(sigma, p, scale=1.0):
    """The ``4 sigma sqrt(log p)`` regularization level, optionally rescaled."""
    return scale * 4.0 * sigma * np.sqrt(np.log(p))
