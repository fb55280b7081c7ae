"""Command line interface: estimate from bid data, simulate, report tables.

Three subcommands share one flag vocabulary. ``estimate`` reads an
``auction_id,bidder_id,bid`` CSV and writes the fitted curves plus
per-object point estimates; ``simulate`` drives the Monte Carlo
laboratory and writes a long-format report; ``report`` renders
min-normalized relative-error tables (text, CSV, and PNG heat tables)
from a saved report. All writes go through a temp file and an atomic
rename, so a failed run leaves no partial artifacts.

Exit codes: 0 success; 2 malformed input or options; 3 estimator
failure; 4 invalid simulation design; 5 missing report inputs.
"""

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .core import (
    BidDataError,
    MaxRivalSample,
    empirical_quantile_fn,
    read_bid_data,
)
from .isotonic_ls import solve_ls_max_rival, solve_ls_pooled
from .npmle import pava_mle, pava_mle_pooled
from .objects import (
    alpha_smoothed,
    alpha_unsmoothed,
    bidder_surplus_asymmetric,
    bidder_surplus_symmetric,
    cdf_v,
    gamma_plugins,
    local_quadratic_quantile,
    mean_valuation,
    pdf_v_twostep,
)
from .simlab import (
    DgpSpec,
    McCell,
    McReport,
    _jackknife_hat_curve,
    _vectorize_scalar,
    ibf_estimate,
    relative_rmse_rows,
    report_long_rows,
    report_to_json,
    rule_of_thumb_bandwidth,
    run_monte_carlo,
    silverman_bandwidth,
)
from .smooth import (
    SmoothSpec,
    alpha_derivative,
    kernel_epanechnikov,
    reflection_state,
    smooth_alpha,
    smooth_alpha_reflected,
    smooth_payment,
    transform_fifthroot,
    transform_from_pilot,
    transform_identity,
    transform_log,
    transform_sqrt,
)
from .winprob import fp_empirical, fp_min_entropy, fp_symmetric

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_ESTIMATOR_FAILURE = 3
EXIT_BAD_DESIGN = 4
EXIT_MISSING_INPUT = 5

_PGRID = np.linspace(0.0, 1.0, 2001)
_CLI_ESTIMATORS = ("ls", "mle", "smoothed-ls", "smoothed-mle",
                   "ibf", "ibf-bc", "jackknife")
_PSI_CHOICES = ("identity", "alpha", "log", "sqrt", "fifthroot")
_BOUNDARY_CHOICES = ("none", "kernel", "reflect")


class CliError(Exception):
    """Command failure carrying its exit code."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


# ----------------------------------------------------------- small parsers


def _fraction(text: str) -> float:
    # accepts "0.25" and "1/4"
    s = str(text).strip()
    try:
        if "/" in s:
            num, den = s.split("/", 1)
            return float(num) / float(den)
        return float(s)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _fraction_list(text: str):
    items = [t for t in str(text).split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return [_fraction(t) for t in items]


def _int_list(text: str):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not integers: {text!r}") from None


def _str_list(text: str):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _bool(text: str) -> bool:
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# ------------------------------------------------------------ config files


def _load_config_file(path: str) -> dict:
    # flat key = value lines; '#' comments; keys match the long flag names
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(EXIT_BAD_INPUT,
                                   f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                out[key.strip().lower().replace("-", "_")] = value.strip()
    except OSError as err:
        raise CliError(EXIT_BAD_INPUT, f"cannot read config {path}: {err}")
    return out


# field name -> (converter, hard default); config values pass through the
# same converters as the flags, and flags win over config entries
_FIELDS = {
    "estimate": {
        "input": (str, None),
        "output_dir": (str, "."),
        "estimator": (str, "ls"),
        "psi": (str, "identity"),
        "boundary": (str, "kernel"),
        "bandwidth_scale": (_fraction, 1.0),
        "undersmooth": (_bool, False),
        "symmetric": (_bool, False),
        "n": (int, None),
        "objects": (_str_list, ["bs", "mv"]),
    },
    "simulate": {
        "output_dir": (str, "."),
        "estimator": (_str_list, ["ls"]),
        "objects": (_str_list, ["alpha@0.5", "bs"]),
        "bandwidth_scale": (_fraction_list, [1.0]),
        "gamma": (_fraction_list, [1.0]),
        "theta": (_fraction_list, [1.0]),
        "T": (_int_list, [100]),
        "reps": (int, 50),
        "seed": (int, 0),
    },
    "report": {
        "input": (str, None),
        "output_dir": (str, "."),
    },
}


def _resolve(command: str, args: argparse.Namespace) -> dict:
    config = _load_config_file(args.config) if args.config else {}
    fields = _FIELDS[command]
    canonical = {k.lower(): k for k in fields}
    for key in config:
        if key not in canonical:
            raise CliError(EXIT_BAD_INPUT, f"unknown config key {key!r}")
    out = {}
    for key, (conv, default) in fields.items():
        val = getattr(args, key, None)
        if val is None and key.lower() in config:
            try:
                val = conv(config[key.lower()])
            except argparse.ArgumentTypeError as err:
                raise CliError(EXIT_BAD_INPUT, f"config key {key}: {err}")
        out[key] = default if val is None else val
    return out


# ---------------------------------------------------------- output helpers


def _fmt(x) -> str:
    # shortest round-trip decimals for floats
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_text_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv_atomic(path: str, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(x) for x in row) for row in rows)
    _write_text_atomic(path, "\n".join(lines) + "\n")


def _json_safe(obj):
    # nonfinite floats become null so the JSON stays standard
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _write_json_atomic(path: str, obj) -> None:
    text = json.dumps(_json_safe(obj), indent=2, sort_keys=True)
    _write_text_atomic(path, text + "\n")


def _ensure_output_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ------------------------------------------------------------- estimation


def _psi_of(name: str, step):
    if name == "identity":
        return transform_identity()
    if name == "log":
        return transform_log()
    if name == "sqrt":
        return transform_sqrt()
    if name == "fifthroot":
        return transform_fifthroot()
    if name == "alpha":
        return transform_from_pilot(step)
    raise CliError(EXIT_BAD_INPUT, f"unknown psi {name!r}")


def _parse_objects(tokens, estimator: str):
    out = []
    for tok in tokens:
        if tok in ("bs", "mv"):
            out.append(tok)
            continue
        if tok.startswith("alpha@"):
            try:
                x = float(tok[6:])
            except ValueError:
                raise CliError(EXIT_BAD_INPUT, f"bad object {tok!r}")
            if not 0.0 <= x <= 1.0:
                raise CliError(EXIT_BAD_INPUT,
                               f"alpha@ point must be in [0,1]: {tok}")
            out.append(tok)
            continue
        raise CliError(EXIT_BAD_INPUT, f"unknown object {tok!r}")
    if estimator == "jackknife":
        bad = [t for t in out if not t.startswith("alpha@")]
        if bad:
            raise CliError(EXIT_BAD_INPUT,
                           "jackknife supports only alpha@x objects, got "
                           + ",".join(bad))
    return out


def _estimate_bundle(cfg: dict, data) -> dict:
    """Fit the selected estimator and package curve and object evaluators."""
    name = cfg["estimator"]
    kernel = kernel_epanechnikov()
    scale = float(cfg["bandwidth_scale"])
    if not scale > 0:
        raise CliError(EXIT_BAD_INPUT, "bandwidth-scale must be positive")
    symmetric = bool(cfg["symmetric"])
    own = data.bids_of(data.bidder_one)

    if symmetric:
        n = cfg["n"]
        if n is None or int(n) < 2:
            raise CliError(EXIT_BAD_INPUT, "symmetric mode requires --n >= 2")
        n = int(n)
        if name in ("ibf", "ibf-bc", "jackknife"):
            raise CliError(EXIT_BAD_INPUT,
                           f"estimator {name} has no symmetric mode")
        sample = data.max_rival_sample(source="pooled_symmetric")
        fp = fp_symmetric(n)
        # win probability of a bid = pooled ECDF to the n-1 power
        p_own = (np.searchsorted(sample.values, own, side="right")
                 / sample.T) ** (n - 1)
    else:
        n = None
        sample = data.max_rival_sample()
        fp = fp_empirical(own, empirical_quantile_fn(sample))
        p_own = np.searchsorted(sample.values, own, side="right") / sample.T

    bundle = {"sample": sample, "own": own, "fp": fp, "p_own": p_own,
              "n": n, "symmetric": symmetric, "trim": 0.0, "kernel": kernel}

    if name in ("ls", "mle", "smoothed-ls", "smoothed-mle"):
        if name.endswith("mle"):
            if sample.T < 3:
                raise CliError(EXIT_ESTIMATOR_FAILURE, "NPMLE requires T >= 3")
            fit = pava_mle_pooled(sample, n) if symmetric else pava_mle(sample)
            step = fit.alpha_fn
        else:
            fit = (solve_ls_pooled(sample, n) if symmetric
                   else solve_ls_max_rival(sample))
            step = fit.alpha
        bundle["payment"] = fit.payment
        bundle["step"] = step
        pseudo_step = np.asarray(step(p_own), dtype=float)
        if name in ("ls", "mle"):
            bundle["pseudo"] = pseudo_step
            bundle["alpha_vec"] = lambda g: np.asarray(step(g), dtype=float)
            bundle["e_vec"] = lambda g: np.asarray(fit.payment(g), dtype=float)
            bundle["alpha_obj"] = alpha_unsmoothed(step, fit.payment)
            bundle["alpha_scalar"] = step
            return bundle
        psi = _psi_of(cfg["psi"], step)
        boundary = cfg["boundary"]
        if boundary not in _BOUNDARY_CHOICES:
            raise CliError(EXIT_BAD_INPUT, f"unknown boundary {boundary!r}")
        under_curve = bool(cfg["undersmooth"])
        h_curve = rule_of_thumb_bandwidth(pseudo_step, psi=psi, target="alpha",
                                          scale=scale,
                                          undersmooth=under_curve)
        # scalar functionals always use the undersmoothed bandwidth
        h_scalar = rule_of_thumb_bandwidth(pseudo_step, psi=psi,
                                           target="alpha", scale=scale,
                                           undersmooth=True)

        def smoother(h: float):
            if boundary == "reflect":
                state = reflection_state(step, psi, h)
                return _vectorize_scalar(
                    lambda p: smooth_alpha_reflected(step, state, psi, h, p))
            sp = SmoothSpec(kernel, psi, h, boundary=boundary)
            return _vectorize_scalar(lambda p: smooth_alpha(step, sp, p))

        breve = smoother(h_curve)
        breve_us = smoother(h_scalar)
        bundle["pseudo"] = np.asarray(breve(p_own), dtype=float)
        bundle["alpha_vec"] = breve
        bundle["e_vec"] = lambda g: np.array(
            [smooth_payment(fit.payment, float(p), h_curve, kernel)
             for p in g])
        bundle["alpha_obj"] = alpha_smoothed(breve)
        bundle["alpha_scalar"] = breve_us
        bundle["h_scalar"] = h_scalar
        bundle["psi_obj"] = psi
        bundle["pseudo_step"] = pseudo_step
        return bundle

    if name in ("ibf", "ibf-bc"):
        h_g = scale * silverman_bandwidth(sample, kernel)
        ib = ibf_estimate(sample, bandwidth=h_g,
                          boundary="bc" if name == "ibf-bc" else "none",
                          kernel=kernel)
        pseudo = np.asarray(ib.pseudo_value(own), dtype=float)
        finite = np.isfinite(pseudo)
        bundle["trim"] = float(1.0 - finite.mean()) if finite.size else 0.0
        bundle["pseudo"] = pseudo
        bundle["ib"] = ib
        bundle["alpha_vec"] = lambda g: np.asarray(ib.alpha(g), dtype=float)
        bundle["e_vec"] = None
        bundle["alpha_scalar"] = lambda p: float(ib.alpha(float(p)))
        return bundle

    if name == "jackknife":
        fit = solve_ls_max_rival(sample)
        pseudo_step = np.asarray(fit.alpha(p_own), dtype=float)
        h = rule_of_thumb_bandwidth(pseudo_step, target="alpha", scale=scale)
        bundle["pseudo"] = pseudo_step
        bundle["alpha_vec"] = lambda g: _jackknife_hat_curve(
            sample, np.asarray(g, dtype=float), h, kernel)
        bundle["e_vec"] = lambda g: np.array(
            [smooth_payment(fit.payment, float(p), h, kernel) for p in g])
        bundle["alpha_scalar"] = lambda p: float(_jackknife_hat_curve(
            sample, np.array([float(p)]), h, kernel)[0])
        return bundle

    raise CliError(EXIT_BAD_INPUT, f"unknown estimator {name!r}")


def _interp_on_grid(fn, grid: np.ndarray):
    # variance quadratures probe plug-ins at ~1e5 points; tabulate once.
    # Transforms with singular endpoints give nonfinite endpoint values;
    # those are filled from the nearest finite grid neighbors.
    vals = np.array([float(fn(float(p))) for p in grid])
    ok = np.isfinite(vals)
    if np.count_nonzero(ok) < 2:
        raise ValueError("plug-in evaluator is nonfinite on the grid")
    vals = np.interp(grid, grid[ok], vals[ok])

    def ev(p):
        return np.interp(np.asarray(p, dtype=float), grid, vals)

    return ev


def _variance_plugins(cfg: dict, bundle: dict):
    # gamma influence weights for the asymmetric variance formulas;
    # available only in smoothed mode, where a derivative estimate exists
    try:
        sample = bundle["sample"]
        psi = bundle["psi_obj"]
        step = bundle["step"]
        scale = float(cfg["bandwidth_scale"])
        fpm = fp_min_entropy(bundle["fp"], 2)
        grid = np.linspace(0.0, 1.0, 801)
        _, q1, q2 = local_quadratic_quantile(sample)
        q1, q2 = _interp_on_grid(q1, grid), _interp_on_grid(q2, grid)
        h_d = rule_of_thumb_bandwidth(bundle["pseudo_step"], psi=psi,
                                      target="derivative", scale=scale)
        state = reflection_state(step, psi, h_d)
        sp_d = SmoothSpec(bundle["kernel"], psi, h_d, boundary="reflect")
        deriv = _interp_on_grid(
            lambda p: alpha_derivative(step, sp_d, p, state=state), grid)
        return gamma_plugins(fpm, q1, q2, deriv)
    except (ValueError, RuntimeError, ArithmeticError):
        return None, None


def _scalar_objects(cfg: dict, bundle: dict, objects) -> dict:
    name = cfg["estimator"]
    out = {}
    gamma1 = gamma2 = None
    if not bundle["symmetric"] and name in ("smoothed-ls", "smoothed-mle") \
            and any(tok in ("bs", "mv") for tok in objects):
        gamma1, gamma2 = _variance_plugins(cfg, bundle)
    for tok in objects:
        if tok.startswith("alpha@"):
            x = float(tok[6:])
            out[tok] = {"estimate": float(bundle["alpha_scalar"](x)),
                        "variance": math.nan}
            continue
        if tok == "bs":
            if bundle["symmetric"]:
                _, q_prime, _ = local_quadratic_quantile(bundle["sample"])
                rep = bidder_surplus_symmetric(
                    bundle["payment"], bundle["n"],
                    q_prime=_vectorize_scalar(q_prime))
                out[tok] = {"estimate": rep.estimate,
                            "variance": rep.asymptotic_variance}
            elif name in ("ibf", "ibf-bc"):
                ib, own = bundle["ib"], bundle["own"]
                dens = np.asarray(ib.g(own), dtype=float)
                cdfs = np.asarray(ib.G(own), dtype=float)
                with np.errstate(divide="ignore", invalid="ignore"):
                    terms = np.where(dens > 0.0, cdfs * cdfs / dens, np.nan)
                out[tok] = {"estimate": float(np.nanmean(terms)),
                            "variance": math.nan}
            else:
                rep = bidder_surplus_asymmetric(
                    bundle["alpha_scalar"], bundle["payment"], bundle["fp"],
                    gamma1=gamma1, gamma2=gamma2)
                out[tok] = {"estimate": rep.estimate,
                            "variance": rep.asymptotic_variance}
            continue
        if tok == "mv":
            if name in ("ibf", "ibf-bc"):
                fin = bundle["pseudo"][np.isfinite(bundle["pseudo"])]
                est = float(np.mean(fin)) if fin.size else math.nan
                out[tok] = {"estimate": est, "variance": math.nan}
            elif bundle["symmetric"]:
                _, q_prime, _ = local_quadratic_quantile(bundle["sample"])
                alpha_arg = (bundle["alpha_obj"]
                             if name in ("ls", "mle")
                             else alpha_smoothed(bundle["alpha_scalar"]))
                rep = mean_valuation(alpha_arg, bundle["fp"],
                                     q_prime=_vectorize_scalar(q_prime))
                out[tok] = {"estimate": rep.estimate,
                            "variance": rep.asymptotic_variance}
            else:
                g1 = g2 = None
                if gamma1 is not None:
                    # the mean-valuation weights are the surplus ones over p
                    g1 = lambda p: np.asarray(gamma1(p)) / np.asarray(p)
                    g2 = lambda p: np.asarray(gamma2(p)) / np.asarray(p)
                alpha_arg = (bundle["alpha_obj"] if name in ("ls", "mle")
                             else alpha_smoothed(bundle["alpha_scalar"]))
                rep = mean_valuation(alpha_arg, bundle["fp"],
                                     gamma1=g1, gamma2=g2)
                out[tok] = {"estimate": rep.estimate,
                            "variance": rep.asymptotic_variance}
            continue
    return out


def _value_dist_columns(cfg: dict, bundle: dict):
    name = cfg["estimator"]
    kernel = bundle["kernel"]
    scale = float(cfg["bandwidth_scale"])
    pseudo = np.asarray(bundle["pseudo"], dtype=float)
    fin = np.sort(pseudo[np.isfinite(pseudo)])
    if fin.size == 0:
        raise ValueError("all pseudo-values trimmed; no value support")
    if name in ("ibf", "ibf-bc", "jackknife"):
        vmax = float(fin[-1])
    else:
        vmax = float(np.asarray(bundle["alpha_vec"](np.array([1.0])))[0])
        vmax = max(vmax, float(fin[-1]))
    if not vmax > 0:
        raise ValueError("degenerate value support")
    grid = np.linspace(0.0, vmax, 2001)

    if name in ("ibf", "ibf-bc", "jackknife"):
        F_vals = np.searchsorted(fin, grid, side="right") / fin.size
    else:
        est, fp = bundle["alpha_obj"], bundle["fp"]
        F_vals = np.array([cdf_v(est, fp, float(v)) for v in grid])

    if name == "ibf":
        # plain variant stays uncorrected, matching its density stage
        hv = scale * silverman_bandwidth(fin, kernel)
        diffs = (grid[:, None] - fin[None, :]) / hv
        f_vals = kernel.k(diffs).sum(axis=1) / (fin.size * hv)
    else:
        if name == "ibf-bc":
            hv = scale * silverman_bandwidth(fin, kernel)
        else:
            hv = scale * rule_of_thumb_bandwidth(fin, target="density")
        kde = pdf_v_twostep(fin, kernel=kernel, bandwidth=hv,
                            support=(0.0, float(fin[-1])))
        f_vals = np.asarray(kde(grid), dtype=float)
    return grid, F_vals, f_vals


def cmd_estimate(cfg: dict) -> int:
    """Estimate curves and objects from a bid data CSV.

    Writes ``alpha_e.csv`` (2001 rows of p, alpha, e), ``value_dist.csv``
    (2001 rows of v, F_v, f_v), and ``objects.json`` into the output
    directory.
    """
    if not cfg["input"]:
        raise CliError(EXIT_BAD_INPUT, "estimate requires --input")
    if cfg["estimator"] not in _CLI_ESTIMATORS:
        raise CliError(EXIT_BAD_INPUT,
                       f"unknown estimator {cfg['estimator']!r}")
    objects = _parse_objects(cfg["objects"], cfg["estimator"])
    try:
        data = read_bid_data(cfg["input"])
    except OSError as err:
        raise CliError(EXIT_BAD_INPUT,
                       f"cannot read {cfg['input']}: {err}")
    except BidDataError as err:
        raise CliError(EXIT_BAD_INPUT, f"{cfg['input']}: {err}")

    try:
        bundle = _estimate_bundle(cfg, data)
        alpha_vals = np.asarray(bundle["alpha_vec"](_PGRID), dtype=float)
        if bundle["e_vec"] is None:
            # no payment functional for this estimator; integrate the curve
            e_vals = cumulative_trapezoid(alpha_vals, _PGRID, initial=0.0)
        else:
            e_vals = np.asarray(bundle["e_vec"](_PGRID), dtype=float)
        vgrid, F_vals, f_vals = _value_dist_columns(cfg, bundle)
        scalars = _scalar_objects(cfg, bundle, objects)
    except CliError:
        raise
    except (ValueError, RuntimeError, ArithmeticError,
            np.linalg.LinAlgError) as err:
        raise CliError(EXIT_ESTIMATOR_FAILURE, f"estimator failure: {err}")

    outdir = _ensure_output_dir(cfg["output_dir"])
    _write_csv_atomic(os.path.join(outdir, "alpha_e.csv"),
                      ["p", "alpha", "e"],
                      zip(_PGRID, alpha_vals, e_vals))
    _write_csv_atomic(os.path.join(outdir, "value_dist.csv"),
                      ["v", "F_v", "f_v"],
                      zip(vgrid, F_vals, f_vals))
    meta = {
        "estimator": cfg["estimator"],
        "symmetric": bundle["symmetric"],
        "n": bundle["n"],
        "T": int(bundle["sample"].T),
        "psi": cfg["psi"],
        "boundary": cfg["boundary"],
        "bandwidth_scale": float(cfg["bandwidth_scale"]),
        "undersmooth": bool(cfg["undersmooth"]),
        "trim_fraction": bundle["trim"],
        "objects": scalars,
    }
    _write_json_atomic(os.path.join(outdir, "objects.json"), meta)
    print(f"wrote alpha_e.csv, value_dist.csv, objects.json to {outdir}")
    return EXIT_OK


# -------------------------------------------------------------- simulation


def cmd_simulate(cfg: dict) -> int:
    """Run the Monte Carlo grid and write report.csv / report.json.

    Designs are the aligned (gamma, theta) pairs crossed with every T;
    a singleton gamma or theta list broadcasts against the other.
    Deterministic for a fixed seed regardless of AUCTIONSHAPE_THREADS.
    """
    gammas, thetas = list(cfg["gamma"]), list(cfg["theta"])
    if len(gammas) == 1 and len(thetas) > 1:
        gammas = gammas * len(thetas)
    if len(thetas) == 1 and len(gammas) > 1:
        thetas = thetas * len(gammas)
    if len(gammas) != len(thetas):
        raise CliError(EXIT_BAD_DESIGN,
                       "gamma and theta lists must have matching lengths")
    try:
        designs = [DgpSpec(g, th, int(T), int(cfg["seed"]))
                   for g, th in zip(gammas, thetas) for T in cfg["T"]]
        report = run_monte_carlo(designs, cfg["estimator"], cfg["objects"],
                                 replications=int(cfg["reps"]),
                                 scales=tuple(cfg["bandwidth_scale"]))
    except ValueError as err:
        raise CliError(EXIT_BAD_DESIGN, str(err))

    outdir = _ensure_output_dir(cfg["output_dir"])
    header, rows = report_long_rows(report)
    _write_csv_atomic(os.path.join(outdir, "report.csv"), header, rows)
    _write_json_atomic(os.path.join(outdir, "report.json"),
                       report_to_json(report))
    print(f"wrote report.csv and report.json to {outdir}")
    return EXIT_OK


# ----------------------------------------------------------------- report


def _report_from_json(doc: dict) -> McReport:
    def num(x):
        return math.nan if x is None else float(x)

    cells = tuple(
        McCell(gamma=num(c["gamma"]), theta=num(c["theta"]), T=int(c["T"]),
               seed=int(c["seed"]), estimator=str(c["estimator"]),
               obj=str(c["object"]), scale=num(c["scale"]),
               rmse=num(c["rmse"]), bias=num(c["bias"]),
               rmise=num(c["rmise"]), n_fail=int(c["n_fail"]),
               n_reps=int(c["n_reps"]),
               trim_fraction=num(c["trim_fraction"]),
               flagged=bool(c["flagged"]))
        for c in doc["cells"])
    return McReport(replications=int(doc["replications"]),
                    scales=tuple(num(s) for s in doc["scales"]),
                    cells=cells)


def _aligned_table(header, rows) -> str:
    def cell(x, name):
        if isinstance(x, (float, np.floating)):
            if not math.isfinite(float(x)):
                return "-"
            # only the normalized column is integer-valued by convention
            return f"{float(x):.0f}" if name == "relative" else f"{float(x):g}"
        return str(x)

    grid = [list(header)] + [
        [cell(x, name) for x, name in zip(row, header)] for row in rows]
    widths = [max(len(r[j]) for r in grid) for j in range(len(header))]
    lines = []
    for i, row in enumerate(grid):
        lines.append("  ".join(s.rjust(w) for s, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _safe_name(obj: str) -> str:
    return obj.replace("@", "_at_").replace("/", "_")


def _write_figures(rows, outdir: str) -> list:
    # heat table per object: designs down, estimator x scale across
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_obj = {}
    for gamma, theta, T, scale, obj, est, rel in rows:
        by_obj.setdefault(obj, []).append((gamma, theta, T, scale, est, rel))
    written = []
    for obj, entries in sorted(by_obj.items()):
        designs = sorted({(g, th, T) for g, th, T, _, _, _ in entries})
        columns = sorted({(e, s) for _, _, _, s, e, _ in entries})
        mat = np.full((len(designs), len(columns)), np.nan)
        for g, th, T, s, e, rel in entries:
            mat[designs.index((g, th, T)), columns.index((e, s))] = rel
        fig, ax = plt.subplots(
            figsize=(1.6 + 1.15 * len(columns), 1.2 + 0.45 * len(designs)))
        masked = np.ma.masked_invalid(mat)
        im = ax.imshow(masked, cmap="viridis_r", aspect="auto")
        midpoint = (np.nanmin(mat) + np.nanmax(mat)) / 2.0 \
            if np.any(np.isfinite(mat)) else 0.0
        ax.set_xticks(range(len(columns)))
        ax.set_xticklabels([f"{e}\nx{s:g}" for e, s in columns], fontsize=8)
        ax.set_yticks(range(len(designs)))
        ax.set_yticklabels(
            [f"g={g:.3g} t={th:.3g} T={T}" for g, th, T in designs],
            fontsize=8)
        for i in range(len(designs)):
            for j in range(len(columns)):
                if np.isfinite(mat[i, j]):
                    ax.text(j, i, f"{mat[i, j]:.0f}", ha="center",
                            va="center", fontsize=7,
                            color="white" if mat[i, j] > midpoint else "black")
        ax.set_title(f"relative error x1000, {obj} (best = 1000)")
        fig.colorbar(im, ax=ax, shrink=0.85)
        fig.tight_layout()
        path = os.path.join(outdir, f"relative_rmse_{_safe_name(obj)}.png")
        fd, tmp = tempfile.mkstemp(dir=outdir, prefix=".tmp-", suffix=".png")
        os.close(fd)
        try:
            fig.savefig(tmp, dpi=150)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        finally:
            plt.close(fig)
        written.append(path)
    return written


def cmd_report(cfg: dict) -> int:
    """Render relative-error tables from a saved simulation report.

    Reads report.json (or a directory containing one) and writes
    relative_rmse.csv, an aligned relative_rmse.txt, and one PNG heat
    table per object.
    """
    path = cfg["input"]
    if not path:
        raise CliError(EXIT_MISSING_INPUT, "report requires --input")
    if os.path.isdir(path):
        path = os.path.join(path, "report.json")
    if not os.path.exists(path):
        raise CliError(EXIT_MISSING_INPUT, f"missing input {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        report = _report_from_json(doc)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise CliError(EXIT_BAD_INPUT, f"{path}: malformed report: {err}")

    header, rows = relative_rmse_rows(report)
    outdir = _ensure_output_dir(cfg["output_dir"])
    _write_csv_atomic(os.path.join(outdir, "relative_rmse.csv"), header, rows)
    _write_text_atomic(os.path.join(outdir, "relative_rmse.txt"),
                       _aligned_table(header, rows))
    figures = _write_figures(rows, outdir)
    print(f"wrote relative_rmse.csv, relative_rmse.txt and "
          f"{len(figures)} figure(s) to {outdir}")
    return EXIT_OK


# ------------------------------------------------------------------ driver


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auctionshape",
        description="Shape-constrained estimation for first-price auctions")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate from a bid data CSV")
    est.add_argument("--input", help="CSV with header auction_id,bidder_id,bid")
    est.add_argument("--output-dir", dest="output_dir")
    est.add_argument("--estimator", choices=_CLI_ESTIMATORS)
    est.add_argument("--psi", choices=_PSI_CHOICES)
    est.add_argument("--boundary", choices=_BOUNDARY_CHOICES)
    est.add_argument("--bandwidth-scale", dest="bandwidth_scale",
                     type=_fraction)
    est.add_argument("--undersmooth", action="store_const", const=True,
                     help="undersmooth the exported curves too")
    est.add_argument("--symmetric", action="store_const", const=True,
                     help="pool bids under symmetry; requires --n")
    est.add_argument("--n", type=int, help="number of bidders (symmetric)")
    est.add_argument("--objects", type=_str_list,
                     help="comma list from bs, mv, alpha@x")
    est.add_argument("--config", help="flat key = value config file")

    sim = sub.add_parser("simulate", help="run the Monte Carlo laboratory")
    sim.add_argument("--output-dir", dest="output_dir")
    sim.add_argument("--estimator", type=_str_list,
                     help="comma list of estimators")
    sim.add_argument("--objects", type=_str_list)
    sim.add_argument("--bandwidth-scale", dest="bandwidth_scale",
                     type=_fraction_list)
    sim.add_argument("--gamma", type=_fraction_list,
                     help="comma list; fractions like 1/3 accepted")
    sim.add_argument("--theta", type=_fraction_list)
    sim.add_argument("--T", type=_int_list, help="comma list of sample sizes")
    sim.add_argument("--reps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--config", help="flat key = value config file")

    rep = sub.add_parser("report", help="render tables from a saved report")
    rep.add_argument("--input", help="report.json or its directory")
    rep.add_argument("--output-dir", dest="output_dir")
    rep.add_argument("--config", help="flat key = value config file")
    return parser


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args.command, args)
        if args.command == "estimate":
            return cmd_estimate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_report(cfg)
    except CliError as err:
        print(f"auctionshape: error: {err.message}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
