"""Command-line driver: ``fit``, ``covtest`` and ``simulate``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import influence_constant
from .events import (DegenerateSelectionError, RankDeficiencyError, coefficient_contrast,
                     covariance_test_bounds, first_knot_event, glm_family, lasso_event)
from .lasso import lambda_four_sigma_sqrt_log_p, solve_lasso
from .simharness import (CampaignError, ConfigError, SimulationConfig, jsonable,
                         run_campaign)
from .truncnorm import (PivotInversionError, confidence_interval, pivot_inputs,
                        truncated_gaussian_cdf_sf, two_sided_pivot)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EMPTY = 2
EXIT_DEGENERATE = 3


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisRequest:
    design_path: str
    response_path: str
    lam: object = None
    sigma: float = None
    alpha: float = 0.05


def _parse_float(cell, path, lineno):
    try:
        v = float(cell)
    except ValueError:
        raise InputError("%s:%d: non-numeric value %r" % (path, lineno, cell)) from None
    if not math.isfinite(v):
        raise InputError("%s:%d: non-finite value %r" % (path, lineno, cell))
    return v


def read_csv_matrix(path):
    """
    Read a comma-separated numeric table. A first row whose first cell is
    not numeric is taken as a header.
    """
    path = str(path)
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise InputError("cannot read %s: %s" % (path, e.strerror)) from None
    rows = []
    width = None
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1:
                try:
                    float(row[0])
                except ValueError:
                    continue
            vals = [_parse_float(c.strip(), path, lineno) for c in row]
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputError("%s:%d: expected %d columns, found %d"
                                 % (path, lineno, width, len(vals)))
            rows.append(vals)
    if not rows:
        raise InputError("%s: no data rows" % path)
    return np.array(rows, dtype=float)


def load_request_data(request):
    X = read_csv_matrix(request.design_path)
    y = read_csv_matrix(request.response_path)
    if y.shape[1] != 1:
        raise InputError("%s: response must be a single column, found %d"
                         % (request.response_path, y.shape[1]))
    y = y[:, 0]
    if X.shape[0] != y.shape[0]:
        raise InputError("design has %d rows but response has %d" % (X.shape[0], y.shape[0]))
    return X, y


def resolve_lambda(lam, sigma, p):
    if isinstance(lam, str):
        if lam == "four_sigma_sqrt_log_p":
            return float(lambda_four_sigma_sqrt_log_p(sigma, p))
        try:
            lam = float(lam)
        except ValueError:
            raise InputError("--lambda must be a positive number or four_sigma_sqrt_log_p") \
                from None
    if lam is None or not lam > 0:
        raise InputError("--lambda must be positive")
    return float(lam)


def cmd_fit(request):
    """
    Fit the LASSO and report selective p-values and intervals for every
    selected coefficient. Returns ``(exit_code, report)``.
    """
    X, y = load_request_data(request)
    n, p = X.shape
    sigma = request.sigma
    if sigma is None or not sigma > 0:
        raise InputError("--sigma must be a positive known noise level")
    if not 0 < request.alpha < 1:
        raise InputError("--alpha must lie in (0, 1)")
    lam = resolve_lambda(request.lam, sigma, p)
    fit = solve_lasso(X, y, lam)
    report = {"schema_version": SCHEMA_VERSION, "command": "fit", "n": n, "p": p,
              "lambda": lam, "sigma": sigma, "alpha": request.alpha,
              "active": list(fit.active), "signs": list(fit.signs),
              "kkt_residual": fit.kkt_residual, "coefficients": []}
    if not fit.active:
        return EXIT_EMPTY, report

    var = sigma ** 2
    event = lasso_event(X, fit.active, fit.signs, lam)
    sign_event = lasso_event(X, fit.active, fit.signs, lam, include_inactive=False)
    for j, s in zip(fit.active, fit.signs):
        eta = coefficient_contrast(X, fit.active, j)
        inp = pivot_inputs(event, var, eta, y, 0.0)
        infl = influence_constant(sign_event, var, eta)
        entry = {"variable": j, "sign": s, "estimate": inp.observed,
                 "pvalue": two_sided_pivot(inp),
                 "truncation": [inp.interval.lower, inp.interval.upper],
                 "M": infl.M, "r": infl.r}
        try:
            entry["interval"] = list(confidence_interval(
                inp.observed, inp.variance, inp.interval.lower, inp.interval.upper,
                request.alpha))
        except PivotInversionError as e:
            entry["interval"] = None
            entry["interval_error"] = str(e)
        report["coefficients"].append(entry)
    return EXIT_OK, report


def cmd_covtest(request, family="gaussian"):
    """
    Covariance test of the global null from the first knot. The p-value is
    the upper tail of the truncated law of the knot. Returns
    ``(exit_code, report)``.
    """
    fam = glm_family(family)
    X, y = load_request_data(request)
    n, p = X.shape
    sigma = request.sigma if request.sigma is not None else math.sqrt(fam.null_variance)
    if not sigma > 0:
        raise InputError("--sigma must be positive")
    try:
        event, lambda1 = first_knot_event(X, y, fam)
    except DegenerateSelectionError as e:
        return EXIT_DEGENERATE, {"schema_version": SCHEMA_VERSION, "command": "covtest",
                                 "family": fam.name, "error": str(e)}
    knot = event.label
    var = np.full(n, sigma ** 2)
    bounds = covariance_test_bounds(X, y, var, knot, fam.null_mean)
    sd = math.sqrt(bounds.theta_jj)
    cdf, sf = truncated_gaussian_cdf_sf(lambda1, bounds.theta_jj, 0.0,
                                        bounds.lower, bounds.upper)
    report = {"schema_version": SCHEMA_VERSION, "command": "covtest", "family": fam.name,
              "n": n, "p": p, "sigma": sigma, "j": knot.j, "s": knot.s,
              "lambda1": lambda1, "L": bounds.lower, "U": bounds.upper,
              "theta_jj": bounds.theta_jj, "sd": sd,
              "skipped_zero_denominators": bounds.skipped,
              "pvalue": sf, "two_sided_pvalue": min(1.0, 2 * min(cdf, sf))}
    return EXIT_OK, report


def load_config(path_or_name):
    """Load a YAML/JSON config from a path or by bundled name."""
    path = Path(path_or_name)
    if path.exists():
        text = path.read_text()
    else:
        name = path_or_name if path_or_name.endswith(".yaml") else path_or_name + ".yaml"
        ref = resources.files("affine_selinf").joinpath("configs", name)
        if not ref.is_file():
            raise InputError("config %s not found (neither a file nor a bundled config)"
                             % path_or_name)
        text = ref.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise InputError("cannot parse config %s: %s" % (path_or_name, e)) from None
    return data


def cmd_simulate(config_path, out_dir=".", workers=1, seed=None):
    """Run a campaign; writes ``report.json`` and ``pivots.csv`` into `out_dir`."""
    data = load_config(config_path)
    cfg = SimulationConfig.from_dict(data)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
        cfg.validate()
    user = None
    if cfg.design == "user_csv":
        user = read_csv_matrix(cfg.design_path)
    report = run_campaign(cfg, workers=workers, user_design=user)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "pivots.csv").write_text(report.pivots_csv())
    return EXIT_OK, report


def _emit(report, out):
    text = json.dumps(jsonable(report), sort_keys=True, indent=1) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="affine-selinf",
        description="Selective inference after LASSO selection and the first-knot covariance test.")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--design", required=True, help="CSV design matrix, n rows by p columns")
        p.add_argument("--response", required=True, help="CSV response, one column")
        p.add_argument("--out", help="write the JSON report here instead of stdout")

    fit = sub.add_parser("fit", help="LASSO fit with selective p-values and intervals")
    data_args(fit)
    fit.add_argument("--lambda", dest="lam", required=True,
                     help="positive number or four_sigma_sqrt_log_p")
    fit.add_argument("--sigma", type=float, required=True, help="known noise standard deviation")
    fit.add_argument("--alpha", type=float, default=0.05)

    cov = sub.add_parser("covtest", help="first-knot covariance test of the global null")
    data_args(cov)
    cov.add_argument("--family", default="gaussian", choices=["gaussian", "bernoulli", "poisson"])
    cov.add_argument("--sigma", type=float, default=None,
                     help="noise standard deviation (default: the family's null value)")

    sim = sub.add_parser("simulate", help="run a Monte Carlo campaign from a config file")
    sim.add_argument("config", help="YAML/JSON config path or bundled config name")
    sim.add_argument("--out", default=".", help="output directory")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            req = AnalysisRequest(args.design, args.response, args.lam, args.sigma, args.alpha)
            code, report = cmd_fit(req)
            _emit(report, args.out)
        elif args.command == "covtest":
            req = AnalysisRequest(args.design, args.response, None, args.sigma)
            code, report = cmd_covtest(req, args.family)
            if code == EXIT_DEGENERATE:
                sys.stderr.write("degenerate selection: %s\n" % report["error"])
            _emit(report, args.out)
        else:
            if args.workers < 1:
                raise InputError("--workers must be >= 1")
            code, _ = cmd_simulate(args.config, args.out, args.workers, args.seed)
        return code
    except ConfigError as e:
        sys.stderr.write("config error in `%s`: %s\n" % (e.key, e))
        return EXIT_INPUT
    except (InputError, RankDeficiencyError, CampaignError) as e:
        sys.stderr.write("error: %s\n" % e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
