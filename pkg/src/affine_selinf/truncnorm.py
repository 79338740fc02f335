"""
Truncated Gaussian pivots for affine selection events.

Given an event ``{A y <= b}``, a contrast ``eta`` and a diagonal noise
covariance, ``eta^T y`` is Gaussian truncated to ``[L, U]`` where the limits
depend on ``y`` only through the part of ``y`` independent of ``eta^T y``.
Evaluating the truncated CDF at the observed value gives a pivot.

The CDF is evaluated without forming differences of tiny tail
probabilities: for an interval above the mean the upper-tail probability
is written as ``erfcx(t / sqrt 2) exp(-t^2 / 2) / 2`` and ratios of tails
reduce to ratios of ``erfcx`` times an exponential of an exactly computed
difference of squares. Intervals below the mean are handled by reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfcx
from scipy.stats import norm as ndist

ALPHA_ZERO_TOL = 1e-12
SANDWICH_TOL = 1e-9

_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SHORT_SPAN = 0.5
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class SelectionPreconditionError(ValueError):
    """The response does not lie in the selection event."""


class PivotInversionError(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ConstraintGeometry:
    alpha: np.ndarray
    eta_variance: float


@dataclass(frozen=True)
class TruncationInterval:
    lower: float
    upper: float

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, x, tol=SANDWICH_TOL):
        return self.lower - tol <= x <= self.upper + tol


@dataclass(frozen=True)
class PivotInputs:
    observed: float
    variance: float
    mean: float
    interval: TruncationInterval

    @property
    def sd(self):
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class DeltaCheckConfig:
    delta: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1), got %r" % (self.delta,))


def truncation_interval(event, sigma_diag, eta, y):
    """
    Limits ``(L, U)`` of ``eta^T y`` on the event, holding fixed the
    component of ``y`` independent of ``eta^T y``.

    Rows whose ``alpha`` is zero (relative to ``max |alpha|``) enter neither
    bound.
    """
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma_diag, dtype=float), eta.shape)
    if eta.shape != y.shape or event.A.shape[1] != y.shape[0]:
        raise ValueError("dimensions of event, contrast and response disagree")
    sig_eta = sig * eta
    var = float(eta @ sig_eta)
    if not var > 0:
        raise ValueError("eta^T Sigma eta must be positive, got %r" % var)
    alpha = event.A @ sig_eta / var
    geom = ConstraintGeometry(alpha, var)
    if alpha.size == 0:
        return TruncationInterval(-np.inf, np.inf), geom

    obs = float(eta @ y)
    ratio_num = event.b - event.A @ y + alpha * obs
    scale = np.max(np.abs(alpha))
    thresh = ALPHA_ZERO_TOL * scale
    neg = alpha < -thresh
    pos = alpha > thresh
    lower = float(np.max(ratio_num[neg] / alpha[neg])) if np.any(neg) else -np.inf
    upper = float(np.min(ratio_num[pos] / alpha[pos])) if np.any(pos) else np.inf
    return TruncationInterval(lower, upper), geom


def _log_upper_tail_ratio(s, t, diff):
    """
    ``log(Q(t) / Q(s))`` for ``0 <= s <= t`` where ``Q`` is the standard
    normal upper tail and ``diff = t - s`` is supplied directly.

    Short spans integrate the hazard ``phi / Q`` by Gauss-Legendre, which
    keeps full relative precision as ``diff -> 0``.
    """
    if t == np.inf:
        return -np.inf
    if diff <= _SHORT_SPAN:
        u = s + 0.5 * diff * (_GL_NODES + 1.0)
        hazard = _SQRT_2_OVER_PI / erfcx(u / _SQRT2)
        return -0.5 * diff * float(_GL_WEIGHTS @ hazard)
    return (math.log(erfcx(t / _SQRT2)) - math.log(erfcx(s / _SQRT2))
            - 0.5 * diff * (s + t))


def _cdf_sf_upper(za, zx, zb, dxa, dba):
    """
    CDF and survival for a standard normal truncated to ``[za, zb]`` with
    ``za >= 0``; ``dxa = zx - za`` and ``dba = zb - za``.
    """
    log_qx = _log_upper_tail_ratio(za, zx, dxa)
    log_qb = _log_upper_tail_ratio(za, zb, dba)
    den = -math.expm1(log_qb)
    cdf = -math.expm1(log_qx) / den
    # Q(x) - Q(b) = Q(x) (1 - Q(b)/Q(x))
    if zb == np.inf:
        sf = math.exp(log_qx) / den
    else:
        log_bx = _log_upper_tail_ratio(zx, zb, dba - dxa)
        sf = math.exp(log_qx) * -math.expm1(log_bx) / den
    return cdf, sf


def _phi_diff(s, t):
    """``Phi(t) - Phi(s)`` for ``s <= 0 <= t`` without cancellation."""
    return 0.5 * (erf(t / _SQRT2) - erf(s / _SQRT2))


def truncated_gaussian_cdf_sf(x, variance, mean, a, b):
    """
    CDF and survival function of ``N(mean, variance)`` truncated to
    ``[a, b]`` at `x`, each computed to full relative precision.
    """
    if not a < b:
        raise ValueError("truncation interval must satisfy a < b, got [%r, %r]" % (a, b))
    if not variance > 0:
        raise ValueError("variance must be positive")
    if x <= a:
        return 0.0, 1.0
    if x >= b:
        return 1.0, 0.0
    sd = math.sqrt(variance)
    za, zx, zb = (a - mean) / sd, (x - mean) / sd, (b - mean) / sd

    if za >= 0:
        dba = (b - a) / sd
        return _cdf_sf_upper(za, zx, zb, (x - a) / sd, dba)
    if zb <= 0:
        # reflect: X -> -X maps [a, b] onto [-b, -a]
        dab = (b - a) / sd
        sf, cdf = _cdf_sf_upper(-zb, -zx, -za, (b - x) / sd, dab)
        return cdf, sf
    den = _phi_diff(za, zb)
    if zx >= 0:
        cdf = _phi_diff(za, zx)
        sf = _upper_diff(zx, zb, (b - x) / sd)
    else:
        cdf = _lower_diff(za, zx, (x - a) / sd)
        sf = _phi_diff(zx, zb)
    return cdf / den, sf / den


def _upper_diff(s, t, diff):
    """``Q(s) - Q(t)`` for ``0 <= s <= t``."""
    qs = 0.5 * erfcx(s / _SQRT2) * math.exp(-0.5 * s * s)
    return qs * -math.expm1(_log_upper_tail_ratio(s, t, diff))


def _lower_diff(s, t, diff):
    """``Phi(t) - Phi(s)`` for ``s <= t <= 0``."""
    if s == -np.inf:
        return float(ndist.cdf(t))
    return _upper_diff(-t, -s, diff)


def truncated_gaussian_cdf(x, variance, mean, a, b):
    """
    CDF at `x` of ``N(mean, variance)`` truncated to ``[a, b]``.

    Endpoints may be infinite. Values of `x` outside ``[a, b]`` clamp to
    0 or 1.
    """
    return truncated_gaussian_cdf_sf(x, variance, mean, a, b)[0]


def two_sided_pivot(inputs):
    """``2 min(F, 1 - F)`` with ``F`` the truncated CDF at the observed value."""
    L, U = inputs.interval.lower, inputs.interval.upper
    x = min(max(inputs.observed, L), U)
    cdf, sf = truncated_gaussian_cdf_sf(x, inputs.variance, inputs.mean, L, U)
    return min(1.0, 2.0 * min(cdf, sf))


def pivot_inputs(event, sigma_diag, eta, y, mean):
    interval, geom = truncation_interval(event, sigma_diag, eta, y)
    obs = float(np.dot(eta, y))
    if not interval.contains(obs):
        raise SelectionPreconditionError(
            "eta^T y = %r lies outside its truncation interval [%r, %r]"
            % (obs, interval.lower, interval.upper))
    return PivotInputs(obs, geom.eta_variance, float(mean), interval)


def selective_pvalue(event, sigma_diag, eta, y, null_mean=0.0):
    """
    Two-sided selective p-value for ``H0: eta^T mu = null_mean``.

    Raises
    ------
    SelectionPreconditionError
        If `y` is not in the event.
    """
    if not event.contains(y):
        raise SelectionPreconditionError("response is not in the selection event")
    return two_sided_pivot(pivot_inputs(event, sigma_diag, eta, y, null_mean))


def _root_decreasing(fun, center, step, max_doublings, tol, diagnostics):
    """
    Root of a nonincreasing function, bracketed outward from `center` by
    offsets ``step * 2**k`` for ``k <= max_doublings`` and then bisected.
    """
    def bracket(sign):
        offset = step
        for _ in range(max_doublings + 1):
            m = center + sign * offset
            if (fun(m) > 0) == (sign < 0):
                return m
            offset *= 2
        raise PivotInversionError(
            "could not bracket the confidence limit within %d doublings" % max_doublings,
            dict(diagnostics, last_offset=offset / 2))

    lo, hi = bracket(-1), bracket(+1)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if fun(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def confidence_interval(observed, variance, L, U, alpha, max_doublings=6,
                        initial_width=10.0, rel_tol=1e-9):
    """
    Equal-tailed interval ``{m : alpha/2 <= F(observed; m) <= 1 - alpha/2}``.

    ``F`` decreases in ``m``; each endpoint is bracketed starting from
    ``observed -/+ initial_width * sd`` and doubling the offset up to
    `max_doublings` times, then refined by bisection to ``rel_tol * sd``.

    Raises
    ------
    PivotInversionError
        If an endpoint cannot be bracketed.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    sd = math.sqrt(variance)
    x = min(max(observed, L), U)
    target = alpha / 2
    diag = {"observed": x, "lower": L, "upper": U, "sd": sd, "alpha": alpha}

    def cdf_gap(m):
        return truncated_gaussian_cdf_sf(x, variance, m, L, U)[0] - target

    def sf_gap(m):
        return target - truncated_gaussian_cdf_sf(x, variance, m, L, U)[1]

    step = initial_width * sd
    high = _root_decreasing(cdf_gap, x, step, max_doublings, rel_tol * sd,
                            dict(diag, side="upper"))
    low = _root_decreasing(sf_gap, x, step, max_doublings, rel_tol * sd,
                           dict(diag, side="lower"))
    return low, high


def invert_pivot_interval(event, sigma_diag, eta, y, alpha, max_doublings=6):
    """
    Selective ``1 - alpha`` confidence interval for ``eta^T mu``.

    Raises
    ------
    PivotInversionError
        If an endpoint cannot be bracketed within `max_doublings` expansions.
    """
    if not event.contains(y):
        raise SelectionPreconditionError("response is not in the selection event")
    inp = pivot_inputs(event, sigma_diag, eta, y, 0.0)
    return confidence_interval(inp.observed, inp.variance, inp.interval.lower,
                               inp.interval.upper, alpha, max_doublings=max_doublings)


def delta_assumption_check(intervals, config):
    """
    Fractions of truncation intervals that are narrower than ``delta`` and
    that sit farther than ``1 / delta`` from the origin.

    An infinite endpoint makes the width infinite. The distance uses the
    finite endpoint when only one is finite and is zero when both are
    infinite.
    """
    intervals = list(intervals)
    if not intervals:
        raise ValueError("no intervals supplied")
    delta = config.delta if isinstance(config, DeltaCheckConfig) else float(config)
    narrow = far = 0
    for iv in intervals:
        if iv.upper - iv.lower < delta:
            narrow += 1
        ends = [abs(e) for e in (iv.lower, iv.upper) if np.isfinite(e)]
        dist = min(ends) if ends else 0.0
        if dist > 1.0 / delta:
            far += 1
    return narrow / len(intervals), far / len(intervals)
