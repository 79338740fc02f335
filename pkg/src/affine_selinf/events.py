"""
Affine selection events.

Every selection state considered here is a polyhedron ``{y : A y <= b}`` in
the response. Two families of states are built:

* the LASSO state ``(E, z_E)`` at a fixed regularization parameter, and
* the first knot ``(j*, s*)`` of an l1-penalized GLM path, which drives the
  covariance test for the global null.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .lasso import as_design

MEMBERSHIP_SLACK = 1e-10
MAX_CONDITION = 1e12


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


class DegenerateSelectionError(ValueError):
    """The selecting argmax is tied; the event has Lebesgue measure zero."""


@dataclass(frozen=True)
class LassoState:
    active: tuple
    signs: tuple

    def describe(self):
        return {"active": list(self.active), "signs": list(self.signs)}


@dataclass(frozen=True)
class KnotState:
    j: int
    s: int

    def describe(self):
        return {"j": self.j, "s": self.s}


@dataclass(frozen=True)
class NoSelection:
    """Label for an inference target fixed before looking at the data."""

    def describe(self):
        return {}


Label = Union[LassoState, KnotState, NoSelection]


@dataclass(frozen=True, eq=False)
class SelectionEvent:
    """
    The polyhedron ``{y : A y <= b}`` together with the state it encodes.

    An event with zero rows is the unconstrained (no selection) event.
    """

    A: np.ndarray
    b: np.ndarray
    label: Label

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise ValueError("A has shape %s but b has length %d" % (A.shape, b.shape[0]))
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def unconstrained(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0), NoSelection())

    @property
    def n_constraints(self):
        return self.A.shape[0]

    def slack(self, y):
        """``b - A y``; nonnegative entries mean the constraint holds."""
        return self.b - self.A @ np.asarray(y, dtype=float)

    def contains(self, y, tol=MEMBERSHIP_SLACK):
        if self.n_constraints == 0:
            return True
        return bool(np.all(self.slack(y) >= -tol))

    def facet_distance(self, y):
        """Smallest Euclidean distance from `y` to a bounding hyperplane."""
        if self.n_constraints == 0:
            return np.inf
        norms = np.linalg.norm(self.A, axis=1)
        keep = norms > 0
        if not np.any(keep):
            return np.inf
        return float(np.min(np.abs(self.slack(y)[keep]) / norms[keep]))


def _gram_inverse(XE):
    """Inverse of ``XE^T XE`` via Cholesky, with a condition-number guard."""
    G = XE.T @ XE
    eig = np.linalg.eigvalsh(G)
    cond = np.inf if eig[0] <= 0 else eig[-1] / eig[0]
    if not cond <= MAX_CONDITION:
        raise RankDeficiencyError(
            "Gram matrix of the active columns is singular (condition %.3g)" % cond, cond)
    L = np.linalg.cholesky(G)
    Linv = np.linalg.solve(L, np.eye(G.shape[0]))
    return Linv.T @ Linv


def _check_active(E, z, p):
    E = tuple(int(j) for j in E)
    z = tuple(int(s) for s in z)
    if len(E) == 0:
        raise ValueError("active set is empty")
    if len(E) != len(z):
        raise ValueError("active set and sign vector differ in length")
    if len(set(E)) != len(E) or min(E) < 0 or max(E) >= p:
        raise ValueError("invalid active set %r for p=%d" % (E, p))
    if any(s not in (-1, 1) for s in z):
        raise ValueError("signs must be +1 or -1")
    return E, z


def lasso_event(X, E, z_E, lam, include_inactive=True):
    """
    The selection event of the LASSO state ``(E, z_E)``.

    The sign constraints are
    ``-diag(z_E) (X_E^T X_E)^{-1} X_E^T y <= -lam diag(z_E) (X_E^T X_E)^{-1} z_E``.
    With `include_inactive` the ``2(p - |E|)`` subgradient constraints of the
    inactive variables are stacked underneath, so that the polyhedron is
    exactly the set of responses whose LASSO solution has support `E` and
    signs `z_E`. Those rows are orthogonal to ``X_E`` and leave the truncation
    interval of a coefficient contrast unchanged when the noise covariance is
    a multiple of the identity.
    """
    X = as_design(X).values
    n, p = X.shape
    E, z = _check_active(E, z_E, p)
    idx = list(E)
    XE = X[:, idx]
    Ginv = _gram_inverse(XE)
    zv = np.asarray(z, dtype=float)
    pinv = Ginv @ XE.T

    A1 = -zv[:, None] * pinv
    b1 = -lam * zv * (Ginv @ zv)
    if not include_inactive:
        return SelectionEvent(A1, b1, LassoState(E, z))

    inactive = [j for j in range(p) if j not in set(E)]
    if not inactive:
        return SelectionEvent(A1, b1, LassoState(E, z))
    XI = X[:, inactive]
    # |x_j^T (I - P_E) y + lam x_j^T X_E (X_E^T X_E)^{-1} z_E| <= lam
    resid_op = XI.T - (XI.T @ XE) @ pinv
    shift = XI.T @ (XE @ (Ginv @ zv))
    A0 = np.vstack([resid_op, -resid_op])
    b0 = lam * np.concatenate([1 - shift, 1 + shift])
    return SelectionEvent(np.vstack([A1, A0]), np.concatenate([b1, b0]), LassoState(E, z))


def coefficient_contrast(X, E, j):
    """
    ``eta = X_E (X_E^T X_E)^{-1} e_j`` so that ``eta^T mu`` is the
    coefficient of variable `j` in the least-squares fit on the columns `E`.
    """
    X = as_design(X).values
    E = tuple(int(k) for k in E)
    if j not in E:
        raise ValueError("variable %d is not in the active set %r" % (j, E))
    XE = X[:, list(E)]
    Ginv = _gram_inverse(XE)
    return XE @ Ginv[:, E.index(j)]


@dataclass(frozen=True)
class GlmFamily:
    name: str
    null_mean: float
    null_variance: float


GLM_FAMILIES = {
    "gaussian": GlmFamily("gaussian", 0.0, 1.0),
    "bernoulli": GlmFamily("bernoulli", 0.5, 0.25),
    "poisson": GlmFamily("poisson", 1.0, 1.0),
}


def glm_family(name):
    if isinstance(name, GlmFamily):
        return name
    try:
        return GLM_FAMILIES[name]
    except KeyError:
        raise ValueError("unknown GLM family %r; expected one of %s"
                         % (name, sorted(GLM_FAMILIES))) from None


def score_covariance(X, sigma_diag):
    """``Theta = X^T diag(sigma_diag) X``."""
    X = as_design(X).values
    s = np.asarray(sigma_diag, dtype=float)
    if s.shape != (X.shape[0],):
        raise ValueError("variance vector must have length %d" % X.shape[0])
    if np.any(s <= 0):
        raise ValueError("variances must be strictly positive")
    theta = X.T @ (s[:, None] * X)
    return 0.5 * (theta + theta.T)


def first_knot_event(X, y, family="gaussian", tie_tol=1e-12):
    """
    Selection event of the first variable to enter an l1-penalized GLM path.

    Returns
    -------
    event : SelectionEvent
        ``2p`` constraints, labelled ``KnotState(j*, s*)``.
    lambda1 : float
        The first knot ``||X^T (y - null_mean)||_inf``.
    """
    X = as_design(X).values
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if p < 2:
        raise ValueError("the first-knot event needs p >= 2")
    if y.shape != (n,):
        raise ValueError("response has shape %s, expected (%d,)" % (y.shape, n))
    fam = glm_family(family)
    null = np.full(n, fam.null_mean)
    scores = X.T @ (y - null)
    order = np.argsort(-np.abs(scores), kind="stable")
    top, second = np.abs(scores[order[0]]), np.abs(scores[order[1]])
    if top - second <= tie_tol * max(1.0, top):
        raise DegenerateSelectionError(
            "tied first knot between variables %d and %d (|score| = %.17g)"
            % (order[0], order[1], top))
    j = int(order[0])
    s = 1 if scores[j] > 0 else -1
    lambda1 = float(s * scores[j])

    xj = X[:, j]
    A = np.vstack([X.T - s * xj[None, :], -X.T - s * xj[None, :]])
    b = A @ null
    return SelectionEvent(A, b, KnotState(j, s)), lambda1


def knot_contrast(X, knot):
    """``eta = s* x_{j*}``, whose inner product with the centred response is the first knot."""
    X = as_design(X).values
    return knot.s * X[:, knot.j]


class CovarianceTestBounds(NamedTuple):
    lower: float
    upper: float
    theta_jj: float
    skipped: int


def covariance_test_bounds(X, y, sigma_diag, knot, null_mean=0.0, zero_tol=1e-12):
    """
    Truncation limits of the first knot given ``(j*, s*)``.

    For every ``k != j*`` and sign ``s`` the ratio
    ``s (x_k - Theta_{j*k}/Theta_{j*j*} x_{j*})^T (y - mu) / (1 - s s* Theta_{j*k}/Theta_{j*j*})``
    bounds the knot from below when the denominator is positive and from
    above when it is negative. Zero denominators are skipped and counted.
    """
    X = as_design(X).values
    y = np.asarray(y, dtype=float)
    theta = score_covariance(X, sigma_diag)
    j, sstar = knot.j, knot.s
    tjj = theta[j, j]
    if not tjj > 0:
        raise ValueError("Theta_{j*j*} must be positive, got %r" % tjj)
    resid = y - null_mean
    rho = theta[j] / tjj
    partial = X.T @ resid - rho * (X[:, j] @ resid)

    lower, upper, skipped = -np.inf, np.inf, 0
    for k in range(X.shape[1]):
        if k == j:
            continue
        for s in (-1, 1):
            den = 1.0 - s * sstar * rho[k]
            if abs(den) <= zero_tol:
                skipped += 1
                continue
            ratio = s * partial[k] / den
            if den > 0:
                lower = max(lower, ratio)
            else:
                upper = min(upper, ratio)
    return CovarianceTestBounds(float(lower), float(upper), float(tjj), skipped)
