"""
Reproducible Monte Carlo campaigns for selective pivots.

A campaign fixes a design, draws independent error vectors, runs a
selection procedure on each response and collects the resulting pivots.
Uniformity of the pivots is summarized by the Kolmogorov-Smirnov distance,
the rejection rate at level 0.05 and, for LASSO campaigns, the coverage of
the inverted selective intervals.

Randomness is counter based: the design is drawn from the stream
``(seed, 0)`` and replication ``i`` from ``(seed, 1, i)``, so the outcome of
a replication does not depend on which worker computes it or in which
order. Replications are consumed in index order until the requested number
of usable pivots is reached.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from . import diagnostics as diag
from .events import (DegenerateSelectionError, coefficient_contrast, first_knot_event,
                     knot_contrast, lasso_event)
from .lasso import lambda_four_sigma_sqrt_log_p, solve_lasso
from .truncnorm import (DeltaCheckConfig, PivotInversionError, PivotInputs,
                        SANDWICH_TOL, TruncationInterval, confidence_interval,
                        delta_assumption_check, truncated_gaussian_cdf_sf,
                        truncation_interval, two_sided_pivot)

SCHEMA_VERSION = 1
MIN_USABLE = 10
CHUNK = 2000

ERROR_FAMILIES = ("gaussian", "laplace", "centered_exponential", "rademacher", "student_t")
DESIGNS = ("row_iid_normal_column_normalized", "orthonormal", "user_csv")
EXPERIMENTS = ("lasso_pivot", "covtest_pivot")
TARGETS = ("true_mean", "zero_null")
LAMBDA_RULES = ("fixed", "four_sigma_sqrt_log_p")


class ConfigError(ValueError):
    """Invalid simulation configuration; `key` names the offending field."""

    def __init__(self, key, message):
        super().__init__("%s: %s" % (key, message))
        self.key = key


class CampaignError(RuntimeError):
    pass


@dataclass(frozen=True)
class ErrorFamily:
    """
    A centered error law scaled to variance ``variance``.

    ``student_t`` requires ``df >= 7`` to keep a margin on the third moment.
    """

    name: str = "gaussian"
    variance: float = 1.0
    df: Optional[float] = None

    def __post_init__(self):
        if self.name not in ERROR_FAMILIES:
            raise ConfigError("family", "unknown error family %r" % (self.name,))
        if not self.variance > 0:
            raise ConfigError("family", "variance must be positive")
        if self.name == "student_t":
            if self.df is None or self.df < 7:
                raise ConfigError("family", "student_t needs df >= 7, got %r" % (self.df,))
        elif self.df is not None:
            raise ConfigError("family", "df only applies to student_t")

    @property
    def sigma(self):
        return math.sqrt(self.variance)

    @property
    def third_abs_moment(self):
        """``E|e|^3`` for one draw."""
        s3 = self.sigma ** 3
        if self.name == "gaussian":
            return 2.0 * math.sqrt(2.0 / math.pi) * s3
        if self.name == "laplace":
            return 3.0 / math.sqrt(2.0) * s3
        if self.name == "centered_exponential":
            return (12.0 / math.e - 2.0) * s3
        if self.name == "rademacher":
            return s3
        nu = self.df
        t3 = nu ** 1.5 * gamma_fn((nu - 3) / 2) / (math.sqrt(math.pi) * gamma_fn(nu / 2))
        return (self.sigma * math.sqrt((nu - 2) / nu)) ** 3 * t3

    def draw(self, rng, n):
        s = self.sigma
        if self.name == "gaussian":
            return s * rng.standard_normal(n)
        if self.name == "laplace":
            return rng.laplace(0.0, s / math.sqrt(2.0), n)
        if self.name == "centered_exponential":
            return s * (rng.standard_exponential(n) - 1.0)
        if self.name == "rademacher":
            return s * (2.0 * rng.integers(0, 2, n) - 1.0)
        nu = self.df
        return s * math.sqrt((nu - 2) / nu) * rng.standard_t(nu, n)


def draw_errors(family, n, rng):
    return family.draw(rng, n)


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    p: int
    design: str
    beta0: tuple
    sparsity: int
    lambda_rule: dict
    family: ErrorFamily
    replications: int
    seed: int
    experiment: str
    target: str = "true_mean"
    alpha: float = 0.05
    kappa: float = 0.1
    max_attempts_factor: int = 10
    inversion_max_doublings: int = 6
    compute_coverage: bool = True
    design_path: Optional[str] = None

    @classmethod
    def from_dict(cls, d):
        """Build and validate a config; unknown or missing keys raise `ConfigError`."""
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a mapping")
        names = {f.name for f in fields(cls)}
        for key in d:
            if key not in names:
                raise ConfigError(key, "unknown configuration key")
        required = [f.name for f in fields(cls)
                    if f.default is MISSING and f.default_factory is MISSING]
        for key in required:
            if key not in d:
                raise ConfigError(key, "missing required key")
        d = dict(d)

        fam = d["family"]
        if isinstance(fam, str):
            fam = {"name": fam}
        if not isinstance(fam, dict):
            raise ConfigError("family", "expected a mapping with name/variance/df")
        unknown = set(fam) - {"name", "variance", "df"}
        if unknown:
            raise ConfigError("family", "unknown keys %s" % sorted(unknown))
        d["family"] = ErrorFamily(**fam)

        for key in ("n", "p", "sparsity", "replications", "seed",
                    "max_attempts_factor", "inversion_max_doublings"):
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], int)):
                raise ConfigError(key, "must be an integer")

        rule = d["lambda_rule"]
        if isinstance(rule, str):
            rule = {"rule": rule}
        if not isinstance(rule, dict) or rule.get("rule") not in LAMBDA_RULES:
            raise ConfigError("lambda_rule", "rule must be one of %s" % (LAMBDA_RULES,))
        if rule["rule"] == "fixed":
            if set(rule) != {"rule", "value"} or not float(rule["value"]) > 0:
                raise ConfigError("lambda_rule", "fixed rule needs a positive 'value'")
            rule = {"rule": "fixed", "value": float(rule["value"])}
        else:
            if set(rule) - {"rule", "scale"}:
                raise ConfigError("lambda_rule", "four_sigma_sqrt_log_p accepts only 'scale'")
            rule = {"rule": rule["rule"], "scale": float(rule.get("scale", 1.0))}
        d["lambda_rule"] = rule

        beta0 = d["beta0"]
        if isinstance(beta0, (int, float)):
            beta0 = [float(beta0)] * d["sparsity"] + [0.0] * (d["p"] - d["sparsity"])
        d["beta0"] = tuple(float(b) for b in beta0)
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.n < 1:
            raise ConfigError("n", "must be >= 1")
        if self.p < 1:
            raise ConfigError("p", "must be >= 1")
        if self.design not in DESIGNS:
            raise ConfigError("design", "must be one of %s" % (DESIGNS,))
        if self.design == "orthonormal" and self.p > self.n:
            raise ConfigError("design", "orthonormal design needs p <= n")
        if self.design == "user_csv" and not self.design_path:
            raise ConfigError("design_path", "required for a user_csv design")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", "must be one of %s" % (EXPERIMENTS,))
        if self.target not in TARGETS:
            raise ConfigError("target", "must be one of %s" % (TARGETS,))
        if self.replications < 1:
            raise ConfigError("replications", "must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if len(self.beta0) != self.p:
            raise ConfigError("beta0", "must have length p=%d" % self.p)
        if sum(b != 0 for b in self.beta0) != self.sparsity:
            raise ConfigError("beta0", "must have exactly sparsity=%d nonzeros" % self.sparsity)
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha", "must lie in (0, 1)")
        if not self.kappa > 0:
            raise ConfigError("kappa", "must be positive")
        if self.max_attempts_factor < 1:
            raise ConfigError("max_attempts_factor", "must be >= 1")
        if self.experiment == "covtest_pivot" and self.p < 2:
            raise ConfigError("p", "covariance test needs p >= 2")

    @property
    def sigma(self):
        return self.family.sigma

    @property
    def lam(self):
        rule = self.lambda_rule
        if rule["rule"] == "fixed":
            return rule["value"]
        return lambda_four_sigma_sqrt_log_p(self.sigma, self.p, rule["scale"])

    def to_dict(self):
        d = asdict(self)
        d["beta0"] = list(self.beta0)
        return d


def design_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def replication_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def generate_design(cfg, rng=None, user_values=None):
    """
    Design matrix for a campaign.

    ``row_iid_normal_column_normalized`` draws iid standard normal entries
    and rescales each column to unit norm; ``orthonormal`` takes the first
    ``p`` columns of a Haar-random orthogonal matrix; ``user_csv`` passes
    `user_values` through unchanged.
    """
    rng = design_rng(cfg.seed) if rng is None else rng
    n, p = cfg.n, cfg.p
    if cfg.design == "row_iid_normal_column_normalized":
        X = rng.standard_normal((n, p))
        return X / np.linalg.norm(X, axis=0)
    if cfg.design == "orthonormal":
        if p > n:
            raise ConfigError("design", "orthonormal design needs p <= n")
        Q, R = np.linalg.qr(rng.standard_normal((n, p)))
        return Q * np.sign(np.diag(R))
    if user_values is None:
        raise ConfigError("design_path", "user_csv design requires the loaded matrix")
    X = np.asarray(user_values, dtype=float)
    if X.shape != (n, p):
        raise ConfigError("design_path", "design has shape %s, config says (%d, %d)"
                          % (X.shape, n, p))
    return X


def simulate_response(cfg, X, index):
    """The response of replication `index`."""
    rng = replication_rng(cfg.seed, index)
    return X @ np.asarray(cfg.beta0) + draw_errors(cfg.family, cfg.n, rng)


def ks_statistic(pivots):
    """Kolmogorov-Smirnov distance between the empirical CDF and Unif(0, 1)."""
    u = np.sort(np.asarray(pivots, dtype=float))
    N = u.size
    if N == 0:
        raise ValueError("no pivots")
    if u[0] < 0 or u[-1] > 1:
        raise ValueError("pivots must lie in [0, 1]")
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - u), np.max(u - (i - 1) / N)))


def _lasso_replication(cfg, X, mu, index):
    y = simulate_response(cfg, X, index)
    lam = cfg.lam
    if np.max(np.abs(X.T @ y)) <= lam:
        return {"index": index, "status": "empty"}
    fit = solve_lasso(X, y, lam)
    if not fit.active:
        return {"index": index, "status": "empty"}
    E, z = fit.active, fit.signs
    j = min(E)
    event = lasso_event(X, E, z, lam)
    eta = coefficient_contrast(X, E, j)
    var_e = cfg.family.variance
    interval, geom = truncation_interval(event, var_e, eta, y)
    obs = float(eta @ y)
    truth = float(eta @ mu)
    mean = truth if cfg.target == "true_mean" else 0.0
    sandwich = interval.contains(obs, SANDWICH_TOL)
    pivot = two_sided_pivot(PivotInputs(obs, geom.eta_variance, mean, interval))
    infl = diag.influence_constant(lasso_event(X, E, z, lam, include_inactive=False),
                                   var_e, eta)
    out = {"index": index, "status": "ok", "pivot": pivot, "lower": interval.lower,
           "upper": interval.upper, "observed": obs, "mean": mean, "size": len(E),
           "label": ("E", E, z), "M": infl.M, "r": infl.r, "sandwich": sandwich}
    if cfg.compute_coverage:
        try:
            lo, hi = confidence_interval(obs, geom.eta_variance, interval.lower,
                                         interval.upper, cfg.alpha,
                                         max_doublings=cfg.inversion_max_doublings)
            out["covered"] = lo <= truth <= hi
        except PivotInversionError:
            out["covered"] = None
    return out


def _covtest_replication(cfg, X, mu, index):
    y = simulate_response(cfg, X, index)
    try:
        event, lambda1 = first_knot_event(X, y, "gaussian")
    except DegenerateSelectionError:
        return {"index": index, "status": "tie"}
    knot = event.label
    eta = knot_contrast(X, knot)
    var_e = cfg.family.variance
    interval, geom = truncation_interval(event, var_e, eta, y)
    obs = float(eta @ y)
    mean = float(eta @ mu) if cfg.target == "true_mean" else 0.0
    sandwich = interval.contains(obs, SANDWICH_TOL)
    x = min(max(obs, interval.lower), interval.upper)
    # the global-null p-value is the upper tail of the truncated law at the first knot
    _, pivot = truncated_gaussian_cdf_sf(x, geom.eta_variance, mean,
                                         interval.lower, interval.upper)
    infl = diag.influence_constant(event, var_e, eta)
    return {"index": index, "status": "ok", "pivot": pivot, "lower": interval.lower,
            "upper": interval.upper, "observed": obs, "mean": mean,
            "label": ("K", knot.j, knot.s), "lambda1": lambda1,
            "M": infl.M, "r": infl.r, "sandwich": sandwich}


_RUNNERS = {"lasso_pivot": _lasso_replication, "covtest_pivot": _covtest_replication}


def _run_chunk(cfg, X, start, stop):
    mu = X @ np.asarray(cfg.beta0)
    run = _RUNNERS[cfg.experiment]
    return [run(cfg, X, mu, i) for i in range(start, stop)]


@dataclass
class SimulationReport:
    config: dict
    pivots: list
    ks_statistic: float
    rejection_rate_at_05: float
    coverage_rate: Optional[float]
    diagnostics: dict
    selected_counts: dict
    attempts: int
    usable: int
    skipped_empty: int
    skipped_ties: int
    target_reached: bool
    pivot_kind: str
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return jsonable(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def pivots_csv(self):
        return "pivot\n" + "".join("%r\n" % float(u) for u in self.pivots)


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def run_campaign(cfg, workers=1, X=None, user_design=None):
    """
    Run a campaign and summarize it.

    Replications are evaluated in chunks of consecutive indices, possibly on
    several processes, and then consumed in index order until
    ``cfg.replications`` usable pivots are collected or
    ``cfg.max_attempts_factor * cfg.replications`` replications have been
    tried. The report does not depend on `workers`.

    Raises
    ------
    CampaignError
        If fewer than 10 usable pivots are obtained.
    """
    if X is None:
        X = generate_design(cfg, user_values=user_design)
    X = np.ascontiguousarray(X, dtype=float)
    cap = cfg.max_attempts_factor * cfg.replications

    kept = []
    empty = ties = attempts = 0
    start = 0
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(kept) < cfg.replications and start < cap:
            need = cfg.replications - len(kept)
            span = max(CHUNK, need) * (workers if pool else 1)
            stop = min(cap, start + span)
            bounds = list(range(start, stop, CHUNK)) + [stop]
            pieces = list(zip(bounds[:-1], bounds[1:]))
            if pool:
                futures = [pool.submit(_run_chunk, cfg, X, a, b) for a, b in pieces]
                results = [r for f in futures for r in f.result()]
            else:
                results = [r for a, b in pieces for r in _run_chunk(cfg, X, a, b)]
            for out in results:
                if len(kept) >= cfg.replications:
                    break
                attempts += 1
                if out["status"] == "ok":
                    kept.append(out)
                elif out["status"] == "empty":
                    empty += 1
                else:
                    ties += 1
            start = stop
    finally:
        if pool:
            pool.shutdown()

    if len(kept) < MIN_USABLE:
        raise CampaignError(
            "only %d usable pivots in %d replications (%d empty selections); "
            "lower lambda or strengthen beta0" % (len(kept), attempts, empty))
    return _summarize(cfg, X, kept, attempts, empty, ties)


def _summarize(cfg, X, kept, attempts, empty, ties):
    pivots = [o["pivot"] for o in kept]
    ks = ks_statistic(pivots)
    reject = float(np.mean(np.asarray(pivots) <= 0.05))

    coverage = None
    inversion_failures = 0
    if cfg.experiment == "lasso_pivot" and cfg.compute_coverage:
        flags = [o["covered"] for o in kept]
        inversion_failures = sum(f is None for f in flags)
        ok = [f for f in flags if f is not None]
        coverage = float(np.mean(ok)) if ok else None

    labels = diag.StateCounter()
    counts = Counter()
    for o in kept:
        labels.add(o["label"])
        if cfg.experiment == "lasso_pivot":
            counts[str(o["size"])] += 1
        else:
            counts["%d:%+d" % (o["label"][1], o["label"][2])] += 1

    Ms = np.array([o["M"] for o in kept])
    rs = [o["r"] for o in kept]
    finite = Ms[np.isfinite(Ms)]
    M_max = float(np.max(Ms))
    r_max = int(max(rs))
    n_states = len(labels)

    rate = diag.RateConfig.log_p_regime(cfg.n, max(cfg.p, 2), cfg.kappa, cfg.sigma)
    intervals = [TruncationInterval(o["lower"], o["upper"]) for o in kept]
    width_rate, dist_rate = delta_assumption_check(intervals, DeltaCheckConfig(rate.delta)) \
        if rate.delta < 1 else (float("nan"), float("nan"))
    card = max(n_states, 1)
    r_eff = max(r_max, 1)
    diagnostics = {
        "M_max": M_max,
        "M_median": float(np.median(finite)) if finite.size else float("inf"),
        "infinite_M_count": int(np.sum(~np.isfinite(Ms))),
        "r_max": r_max,
        "observed_state_count": n_states,
        "delta": rate.delta,
        "kappa": cfg.kappa,
        "width_violation_rate": width_rate,
        "distance_violation_rate": dist_rate,
        "distance_rule": "finite endpoint only when one endpoint is infinite",
        "theorem2_kernel": diag.theorem2_bound(M_max, cfg.n, r_eff, card)
        if math.isfinite(M_max) else float("inf"),
        "theorem3_condition": diag.theorem3_condition(rate, M_max, r_eff, card)
        if math.isfinite(M_max) else float("inf"),
        "log_p_rate": diag.log_p_rate(cfg.n, max(cfg.p, 2), cfg.kappa),
        "sandwich_violations": int(sum(not o["sandwich"] for o in kept)),
        "inversion_failures": inversion_failures,
        "third_abs_moment": cfg.family.third_abs_moment,
        "lambda": cfg.lam if cfg.experiment == "lasso_pivot" else None,
    }
    if cfg.experiment == "covtest_pivot":
        cc = diag.correlation_check(X)
        diagnostics["max_abs_column_correlation"] = cc.rho_sq
        diagnostics["first_knot_influence_bound"] = cc.influence_bound

    kind = "two_sided" if cfg.experiment == "lasso_pivot" else "upper_tail"
    return SimulationReport(
        config=cfg.to_dict(), pivots=pivots, ks_statistic=ks, rejection_rate_at_05=reject,
        coverage_rate=coverage, diagnostics=diagnostics,
        selected_counts=dict(sorted(counts.items())), attempts=attempts, usable=len(kept),
        skipped_empty=empty, skipped_ties=ties,
        target_reached=len(kept) >= cfg.replications, pivot_kind=kind)
