"""
Rate diagnostics for the asymptotic validity of selective pivots.

None of these quantities changes the inference itself. They measure how
much a single observation can move the pivot's inputs, how many
constraints and states a selection procedure has, and evaluate the
resulting convergence expressions so that a simulation campaign can
report whether it sits in the regime where non-Gaussian errors are
harmless. Unknown universal constants are omitted throughout, so values
compare across settings of one campaign, not across procedures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lasso import as_design


@dataclass(frozen=True)
class InfluenceSummary:
    """
    Influence constant ``M``, constraint count ``r`` and the number of
    distinct states seen so far.

    ``M`` is infinite when some nonzero constraint row is orthogonal to
    ``Sigma eta``; those rows are listed in `infinite_rows`.
    """

    M: float
    r: int
    observed_state_count: int = 1
    infinite_rows: tuple = ()

    def merge(self, other):
        return InfluenceSummary(max(self.M, other.M), max(self.r, other.r),
                                max(self.observed_state_count, other.observed_state_count),
                                self.infinite_rows + other.infinite_rows)


@dataclass(frozen=True)
class RateConfig:
    delta: float
    n: int
    kappa: float = 0.1
    sigma: float = 1.0
    p: int = 1

    def __post_init__(self):
        for name in ("delta", "n", "kappa", "sigma", "p"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)

    @classmethod
    def log_p_regime(cls, n, p, kappa=0.1, sigma=1.0):
        """``delta = (log p)^{-(1 + kappa)/2}``, the choice for both worked examples."""
        return cls(math.log(p) ** (-(1 + kappa) / 2), n, kappa, sigma, p)


@dataclass(frozen=True)
class SmoothedMaxParams:
    beta: float

    def __post_init__(self):
        if not self.beta >= 1:
            raise ValueError("smoothing parameter must be >= 1, got %r" % (self.beta,))


def influence_constant(event, sigma_diag, eta, zero_tol=1e-12):
    """
    ``M = max_{i,j} |A_ij / (A Sigma eta)_i| + ||eta||_inf``.

    All-zero rows of ``A`` are trivially satisfied constraints and are
    skipped. A nonzero row with ``(A Sigma eta)_i = 0`` makes ``M`` infinite
    and is reported by index.
    """
    eta = np.asarray(eta, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma_diag, dtype=float), eta.shape)
    if not float(eta @ (sig * eta)) > 0:
        raise ValueError("eta^T Sigma eta must be positive")
    A = event.A
    eta_inf = float(np.max(np.abs(eta)))
    r = A.shape[0]
    if r == 0:
        return InfluenceSummary(eta_inf, 0)
    row_max = np.max(np.abs(A), axis=1)
    scale = np.max(row_max)
    trivial = row_max <= zero_tol * max(scale, 1.0)
    proj = A @ (sig * eta)
    degenerate = (~trivial) & (np.abs(proj) <= zero_tol * row_max * np.linalg.norm(sig * eta))
    if np.any(degenerate):
        return InfluenceSummary(np.inf, r, 1, tuple(int(i) for i in np.flatnonzero(degenerate)))
    keep = ~trivial
    if not np.any(keep):
        return InfluenceSummary(eta_inf, r)
    M = float(np.max(row_max[keep] / np.abs(proj[keep]))) + eta_inf
    return InfluenceSummary(M, r)


def smoothed_max(values, params):
    """
    ``(1/beta) log sum_j exp(beta v_j)``, evaluated after shifting by the
    maximum so that ``max(v) <= result <= max(v) + log(s)/beta``.
    """
    beta = params.beta if isinstance(params, SmoothedMaxParams) else SmoothedMaxParams(params).beta
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("smoothed maximum of an empty collection")
    top = float(np.max(v))
    total = float(np.sum(np.exp(beta * (v - top))))
    return top + math.log(total) / beta


def theorem2_bound(M, n, r, card_S):
    """
    ``[(log(r |S|))^4 n M^3]^{1/5}``, the distance between the law of the
    pivot inputs under general and Gaussian errors, up to a constant that
    depends on the test function and the third moment.
    """
    for name, v in (("M", M), ("n", n), ("r", r), ("card_S", card_S)):
        if not v > 0:
            raise ValueError("%s must be positive" % name)
    return (math.log(r * card_S) ** 4 * n * M ** 3) ** 0.2


def theorem3_condition(cfg, M, r, card_S):
    """``delta^-6 M^3 n (log r + log |S|)^4``; the pivot converges when this tends to 0."""
    for name, v in (("M", M), ("r", r), ("card_S", card_S)):
        if not v > 0:
            raise ValueError("%s must be positive" % name)
    return cfg.delta ** -6 * M ** 3 * cfg.n * (math.log(r) + math.log(card_S)) ** 4


def log_p_rate(n, p, kappa):
    """``n^{-1/2} (log p)^{7 + 3 kappa}``, the rate shared by the LASSO and covariance-test examples."""
    return n ** -0.5 * math.log(p) ** (7 + 3 * kappa)


@dataclass(frozen=True)
class SparsityBound:
    """
    Bound ``16 Q^2 K / m^2`` on the LASSO support size and the companion
    state-count bound ``p^{cK}`` with ``c = 16 Q^2 / m^2``.
    """

    support_bound: float
    c: float
    K: int
    proxy: bool = False

    def log_state_bound(self, p):
        return self.c * self.K * math.log(p)


def sparsity_bound(Q, m, K, proxy=False):
    if not (Q > 0 and m > 0):
        raise ValueError("Q and m must be positive")
    if K < 0:
        raise ValueError("K must be nonnegative")
    c = 16.0 * Q ** 2 / m ** 2
    return SparsityBound(c * K, c, int(K), proxy)


def sparsity_bound_from_design(X, support, K=None):
    """
    Eigenvalue proxies for the sparsity bound: ``Q`` is the largest
    eigenvalue of ``X^T X`` and ``m`` the smallest eigenvalue of the Gram
    matrix of the true support. The result is flagged as a proxy.
    """
    X = as_design(X).values
    support = list(support)
    Q = float(np.linalg.eigvalsh(X.T @ X)[-1])
    m = float(np.linalg.eigvalsh(X[:, support].T @ X[:, support])[0])
    return sparsity_bound(Q, m, len(support) if K is None else K, proxy=True)


@dataclass(frozen=True)
class SubmatrixInfluence:
    lhs: float
    rhs: float
    holds: bool
    min_eigenvalue: float
    precondition_met: bool


def submatrix_influence_check(X, E, nu):
    """
    Compare ``max |((X_E^T X_E)^{-1} X_E^T)_{ij}|`` against
    ``|E| / nu^2 * max |X_ij|``.

    The comparison presumes the smallest eigenvalue of ``X_E^T X_E`` is at
    least ``nu^2``; a violated precondition is reported, not raised.
    """
    X = as_design(X).values
    E = list(E)
    XE = X[:, E]
    G = XE.T @ XE
    min_eig = float(np.linalg.eigvalsh(G)[0])
    lhs = float(np.max(np.abs(np.linalg.solve(G, XE.T))))
    rhs = len(E) / nu ** 2 * float(np.max(np.abs(X)))
    return SubmatrixInfluence(lhs, rhs, lhs <= rhs + 1e-10, min_eig, min_eig >= nu ** 2)


@dataclass(frozen=True)
class CorrelationCheck:
    rho_sq: float
    holds: bool
    denominator_floor: float
    influence_bound: float


def correlation_check(X, rho_sq=None):
    """
    Largest absolute inner product between distinct (normalized) columns.

    When it is at most ``rho^2 < 1`` every covariance-test denominator is at
    least ``1 - rho^2`` and the influence constant of the first-knot event
    is at most ``2 max |X_ij| / (1 - rho^2)``.
    """
    X = as_design(X).values
    C = X.T @ X
    np.fill_diagonal(C, 0.0)
    observed = float(np.max(np.abs(C))) if C.size > 1 else 0.0
    target = observed if rho_sq is None else rho_sq
    holds = observed <= target < 1
    floor = 1 - target
    bound = 2 * float(np.max(np.abs(X))) / floor if floor > 0 else np.inf
    return CorrelationCheck(observed, holds, floor, bound)


@dataclass
class StateCounter:
    """Distinct selection labels observed; merging is a set union."""

    labels: set = field(default_factory=set)

    def add(self, label):
        self.labels.add(label)

    def merge(self, other):
        return StateCounter(self.labels | other.labels)

    def __len__(self):
        return len(self.labels)
