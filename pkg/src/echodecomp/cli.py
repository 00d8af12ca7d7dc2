"""Command-line entry point: ``echodecomp <command> [options]``.

Parameters come from three layers, later ones winning: built-in defaults,
a JSON ``--config`` file (a flat object, or a previous run's manifest whose
``config`` entry is reused), and flags given on the command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error,
4 non-convergence under ``--strict``.
"""

import argparse
import datetime
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .bundle import (
    format_number,
    is_bundle,
    read_bundle,
    read_matrix_csv,
    write_bundle,
    write_matrix_csv,
    write_rows_csv,
)
from .echogram import DataMatrix, fill_missing, flatten, shift_nonnegative, unflatten
from .errors import DataError, EchodecompError, ParameterError
from .model_select import l_curve_scan, mse_rank_scan
from .pcp import PcpConfig, pcp_decompose
from .summarize import activation_distance, ward_cluster
from .synth import (
    SynthSpec,
    cube_from_matrix,
    gen_lowrank_sparse,
    gen_patterned_echogram,
    sparse_outliers,
)
from .tsnmf import TsnmfConfig, multistart_fit, run_seeds, scale_normalize

log = logging.getLogger("echodecomp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4
THREADS_ENV = "ECHODECOMP_THREADS"
MANIFEST = "manifest.json"


class UsageError(ParameterError):
    pass


def parse_int_list(text):
    """``"1..8"`` (inclusive) or ``"1,2,5"``."""
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split(".."))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse integer list {text!r}") from None


def parse_float_list(text):
    """``"1e0..1e6"`` (every power of ten in between) or ``"10,100,5e5"``."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (float(v) for v in text.split(".."))
            a, b = np.log10(lo), np.log10(hi)
            if lo <= 0 or hi < lo or a != round(a) or b != round(b):
                raise ValueError
            return [float(10.0 ** e) for e in range(int(round(a)), int(round(b)) + 1)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse value list {text!r} (use a,b,c or 1eM..1eN)") from None


def _auto_or_float(text):
    if isinstance(text, str) and text.strip().lower() == "auto":
        return "auto"
    return float(text)


def _none_or_float(text):
    if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none", "auto")):
        return None
    return float(text)


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name: (converter, default, help).  Names double as JSON config keys.
PARAMS = {
    "input": (str, None, "input echogram bundle directory (or CSV matrix where noted)"),
    "seed": (int, 0, "global seed"),
    "fill": (str, "fail", "missing-cell policy: fail, column-mean or constant"),
    "fill_value": (_none_or_float, None, "value for --fill constant"),
    "gamma": (_auto_or_float, "auto", "sparse weight, or 'auto' for 1/sqrt(max(D, T))"),
    "pcp_tol": (float, 1e-7, "PCP relative residual tolerance"),
    "pcp_max_iter": (int, 1000, "PCP iteration cap"),
    "rho": (float, 1.5, "PCP penalty growth factor"),
    "rank": (int, 3, "number of patterns K"),
    "eta": (float, 500000.0, "temporal smoothness weight"),
    "lam": (float, 0.0, "L1 weight on W"),
    "beta_w": (float, 0.0, "Frobenius weight on W"),
    "beta_h": (float, 0.0, "Frobenius weight on H"),
    "restarts": (int, 320, "random restarts"),
    "max_iter": (int, 20000, "PALM iteration cap per restart"),
    "stop_ratio": (float, 0.005, "stop when the latest decrease is below this fraction of the running mean"),
    "stop_window": (int, 5, "running-mean window for the stopping rule"),
    "init_scale": (_none_or_float, None,
                   "upper bound of the uniform initialization; None means 2*sqrt(mean(X)/K)"),
    "ranks": (parse_int_list, [1, 2, 3, 4, 5, 6, 7, 8], "ranks to scan, e.g. 1..8 or 1,2,4"),
    "perm_seed": (int, None, "seed for the row permutation (defaults to --seed)"),
    "etas": (parse_float_list, [10.0 ** e for e in range(0, 8)], "eta values, e.g. 1e0..1e7 or 1,10,100"),
    "clusters": (int, 4, "number of day clusters"),
    "raw_activations": (_bool, False, "cluster raw H rather than norm-scaled activations"),
    "kind": (str, "patterned", "synthetic generator: patterned or lowrank"),
    "n_depth": (int, 20, "synthetic depth bins"),
    "n_ping": (int, 24, "synthetic time bins per day"),
    "n_freq": (int, 3, "synthetic frequencies"),
    "n_day": (int, 60, "synthetic days"),
    "synth_rank": (int, 3, "true rank of the synthetic data"),
    "sparsity": (float, 0.0, "fraction of entries corrupted by outliers"),
    "noise_sigma": (float, 0.0, "Gaussian noise scale"),
    "smoothness": (float, 0.1, "random-walk step scale of synthetic activations"),
    "layout": (parse_int_list, None, "n_depth,n_ping,n_freq when the input has no manifest"),
}

PCP_KEYS = ["fill", "fill_value", "gamma", "pcp_tol", "pcp_max_iter", "rho"]
NMF_KEYS = ["rank", "eta", "lam", "beta_w", "beta_h", "restarts", "max_iter",
            "stop_ratio", "stop_window", "init_scale"]
COMMANDS = {
    "pipeline": ["input", "seed"] + PCP_KEYS + NMF_KEYS + ["clusters", "raw_activations"],
    "pcp": ["input", "seed"] + PCP_KEYS,
    "tsnmf": ["input", "seed", "fill", "fill_value"] + NMF_KEYS,
    "rank-scan": ["input", "seed", "fill", "fill_value", "ranks", "perm_seed"] + NMF_KEYS,
    "lcurve": ["input", "seed", "fill", "fill_value", "etas"] + NMF_KEYS,
    "summarize": ["input", "seed", "clusters", "raw_activations"],
    "synth": ["seed", "kind", "n_depth", "n_ping", "n_freq", "n_day", "synth_rank",
              "sparsity", "noise_sigma", "smoothness"],
    "unflatten-pattern": ["input", "seed", "layout"],
}
HELP = {
    "pipeline": "PCP, tsNMF and day clustering on an echogram bundle",
    "pcp": "split the flattened echogram into low-rank L and sparse S",
    "tsnmf": "multistart temporally smooth NMF of a bundle or nonnegative CSV matrix",
    "rank-scan": "reconstruction MSE versus rank on data and row-permuted data",
    "lcurve": "reconstruction versus smoothness cost over eta",
    "summarize": "cluster days from tsNMF activations",
    "synth": "write a synthetic echogram bundle with its ground truth",
    "unflatten-pattern": "reshape each W column into per-frequency daily images",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    parser = _Parser(prog="echodecomp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"echodecomp {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for command, keys in COMMANDS.items():
        p = sub.add_parser(command, help=HELP[command], description=HELP[command])
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="JSON config file; explicit flags override it")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker cap for restarts (default ${THREADS_ENV} or 1)")
        p.add_argument("--strict", action="store_true",
                       help="exit 4 when a solver stops at its iteration cap")
        p.add_argument("-v", "--verbose", action="count", default=0)
        for key in keys:
            conv, default, text = PARAMS[key]
            shown = default if not isinstance(default, list) else ",".join(f"{v:g}" for v in default)
            p.add_argument(_flag(key), dest=key, default=argparse.SUPPRESS, metavar="VALUE",
                           type=_argtype(conv), help=f"{text} (default: {shown})")
    return parser


def _argtype(conv):
    def parse(text):
        try:
            return conv(text)
        except UsageError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
        except (TypeError, ValueError):
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
    parse.__name__ = getattr(conv, "__name__", "value")
    return parse


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict) and "command" in data:
        data = data["config"]  # a manifest from an earlier run
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


def resolve_config(command, explicit, config_path=None):
    """Merge defaults < config file < explicit flags for ``command``."""
    keys = COMMANDS[command]
    resolved = {k: PARAMS[k][1] for k in keys}
    if config_path:
        for key, value in load_config(config_path).items():
            if key not in PARAMS:
                raise UsageError(f"unknown config key {key!r}")
            if key not in resolved:
                continue  # shared config files may carry other commands' keys
            try:
                resolved[key] = PARAMS[key][0](value) if value is not None else None
            except (TypeError, ValueError):
                raise UsageError(f"bad value for config key {key!r}: {value!r}") from None
    for key in keys:
        if key in explicit:
            resolved[key] = explicit[key]
    if "input" in resolved and not resolved["input"]:
        raise UsageError("--input is required (flag or config)")
    return resolved


def resolve_threads(value):
    if value is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        try:
            value = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError("--threads must be >= 1")
    return value


def pcp_config(cfg):
    return PcpConfig(gamma=cfg["gamma"], tol=cfg["pcp_tol"], max_iter=cfg["pcp_max_iter"],
                     rho=cfg["rho"])


def nmf_config(cfg):
    return TsnmfConfig(rank=cfg["rank"], eta=cfg["eta"], lam=cfg["lam"], beta_w=cfg["beta_w"],
                       beta_h=cfg["beta_h"], stop_ratio=cfg["stop_ratio"],
                       stop_window=cfg["stop_window"], max_iter=cfg["max_iter"],
                       n_restarts=cfg["restarts"], seed=cfg["seed"],
                       init_scale=cfg["init_scale"])


def _versions():
    out = {"echodecomp": __version__, "python": platform.python_version(),
           "numpy": np.__version__, "backend": backend()}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        out["numba"] = None
    return out


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


class Run:
    """Per-invocation state: output directory, timings and manifest."""

    def __init__(self, command, out, cfg, threads, strict):
        self.command = command
        self.out = Path(out)
        self.cfg = cfg
        self.threads = threads
        self.strict = strict
        self.timings = {}
        self.info = {}
        self.converged = True

    def stage(self, name):
        return _Stage(self, name)

    def path(self, name):
        return self.out / name

    def write_manifest(self):
        manifest = {
            "command": self.command,
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
            "versions": _versions(),
            "config": self.cfg,
            "threads": self.threads,
            "timings_s": self.timings,
            "converged": self.converged,
        }
        manifest.update(self.info)
        with open(self.path(MANIFEST), "w", encoding="utf-8", newline="") as fh:
            json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _Stage:
    def __init__(self, run, name):
        self.run, self.name = run, name

    def __enter__(self):
        log.info("stage %s ...", self.name)
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.run.timings[self.name] = round(time.perf_counter() - self.t0, 6)
        if exc is not None:
            exc.stage = self.name
        return False


def _load_matrix(cfg):
    """Return ``(DataMatrix, cube or None)`` from a bundle or a CSV matrix."""
    path = Path(cfg["input"])
    if is_bundle(path):
        cube = fill_missing(read_bundle(path), cfg["fill"], cfg["fill_value"])
        return flatten(cube), cube
    if path.is_file():
        x = read_matrix_csv(path)
        if x.size == 0:
            raise DataError(f"{path} holds no data")
        if not np.all(np.isfinite(x)):
            raise DataError(f"{path} has missing or non-finite entries")
        return DataMatrix(x, (x.shape[0], 1, 1)), None
    raise DataError(f"{path} is neither an echogram bundle nor a CSV matrix")


def _axes_info(matrix, cube):
    info = {"shape": list(matrix.shape), "layout": list(matrix.layout)}
    if cube is not None:
        info["frequencies_khz"] = [float(f) for f in cube.freq_axis]
        info["days"] = [str(d) for d in cube.day_axis]
    return info


def _write_pcp(run, res):
    write_matrix_csv(run.path("L.csv"), res.low_rank)
    write_matrix_csv(run.path("S.csv"), res.sparse)
    lines = [
        ("iterations", res.iterations),
        ("residual", format_number(res.final_residual)),
        ("rank_estimate", res.rank_estimate),
        ("sparsity", format_number(res.sparsity)),
        ("converged", str(res.converged).lower()),
        ("gamma", format_number(res.gamma)),
        ("mu0", format_number(res.mu0)),
    ]
    with open(run.path("pcp_diagnostics.txt"), "w", encoding="utf-8", newline="") as fh:
        fh.writelines(f"{k}={v}\n" for k, v in lines)
    run.info["pcp"] = {"gamma": res.gamma, "mu0": res.mu0, "iterations": res.iterations,
                       "residual": res.final_residual, "rank_estimate": res.rank_estimate,
                       "sparsity": res.sparsity, "converged": res.converged}
    if not res.converged:
        run.converged = False
        log.warning("PCP stopped at the iteration cap (residual %.3g)", res.final_residual)


def _write_tsnmf(run, ens, offset):
    best = ens.best
    w_scaled, h_scaled = scale_normalize(best)
    write_matrix_csv(run.path("W.csv"), best.w)
    write_matrix_csv(run.path("H.csv"), best.h)
    write_matrix_csv(run.path("H_scaled.csv"), h_scaled)
    write_rows_csv(run.path("cost_trace.csv"),
                   [(i + 1, c) for i, c in enumerate(best.cost_trace)], ["iteration", "cost"])
    write_rows_csv(run.path("ensemble_mse.csv"),
                   [(i, m.seed, m.mse, m.cost, m.iterations, m.converged)
                    for i, m in enumerate(ens.models)],
                   ["run", "seed", "mse", "cost", "iterations", "converged"])
    run.info["tsnmf"] = {
        "best_index": ens.best_index,
        "best_seed": best.seed,
        "best_cost": best.cost,
        "best_mse": best.mse,
        "best_iterations": best.iterations,
        "cost_parts": best.cost_parts._asdict(),
        "shift_offset": offset,
        "restarts_converged": int(sum(m.converged for m in ens.models)),
    }
    if not best.converged:
        run.converged = False
        log.warning("best tsNMF run stopped at the iteration cap (%d iterations)", best.iterations)
    return w_scaled, h_scaled


def _write_summary(run, summary, days=None):
    t = summary.labels.size
    day_names = days if days is not None else [""] * t
    write_matrix_csv(run.path("distance.csv"), summary.distance)
    write_rows_csv(run.path("labels.csv"),
                   [(i, day_names[i], int(lab)) for i, lab in enumerate(summary.labels)],
                   ["day_index", "day", "label"])
    write_rows_csv(run.path("merges.csv"),
                   [(int(a), int(b), h, int(s)) for a, b, h, s in summary.merge_tree],
                   ["a", "b", "height", "size"])
    write_rows_csv(run.path("transitions.csv"),
                   [(i, day_names[i], int(summary.labels[i - 1]), int(summary.labels[i]))
                    for i in summary.change_points],
                   ["day_index", "day", "from_label", "to_label"])
    run.info["summarize"] = {"n_clusters": summary.n_clusters,
                             "change_points": summary.change_points}


def cmd_pcp(run):
    cfg = run.cfg
    with run.stage("load"):
        matrix, cube = _load_matrix(cfg)
    run.info["input"] = _axes_info(matrix, cube)
    with run.stage("pcp"):
        res = pcp_decompose(matrix, pcp_config(cfg))
    _write_pcp(run, res)


def _nmf_input(run):
    with run.stage("load"):
        matrix, cube = _load_matrix(run.cfg)
        shifted = shift_nonnegative(matrix)
    run.info["input"] = _axes_info(matrix, cube)
    return shifted, cube


def cmd_tsnmf(run):
    shifted, _ = _nmf_input(run)
    cfg = nmf_config(run.cfg)
    run.info["seeds"] = {"seed": cfg.seed, "restart_seeds": run_seeds(cfg.seed, cfg.n_restarts)}
    with run.stage("tsnmf"):
        ens = multistart_fit(shifted.values, cfg, threads=run.threads)
    _write_tsnmf(run, ens, shifted.offset)


def _scan_converged(run, n_capped):
    run.info["fits_at_iteration_cap"] = n_capped
    if n_capped:
        run.converged = False
        log.warning("%d fits stopped at the iteration cap", n_capped)


def cmd_rank_scan(run):
    shifted, _ = _nmf_input(run)
    cfg = nmf_config(run.cfg)
    perm_seed = run.cfg["perm_seed"] if run.cfg["perm_seed"] is not None else cfg.seed
    run.info["seeds"] = {"seed": cfg.seed, "perm_seed": perm_seed,
                         "restart_seeds": run_seeds(cfg.seed, cfg.n_restarts)}
    with run.stage("rank-scan"):
        rep = mse_rank_scan(shifted.values, run.cfg["ranks"], cfg, perm_seed=perm_seed,
                            threads=run.threads)
    write_rows_csv(run.path("rank_scan.csv"), rep.rows(),
                   ["rank", "mse_data", "mse_perm", "cophenetic"])
    run.info["rank_scan"] = {"knee": rep.knee, "mse_data_raw": rep.mse_data_raw,
                             "mse_perm_raw": rep.mse_perm_raw, "iqr_data": rep.iqr_data,
                             "iqr_perm": rep.iqr_perm, "n_runs": rep.n_runs}
    _scan_converged(run, rep.n_capped)
    log.info("knee advisory: %s", rep.knee)


def cmd_lcurve(run):
    shifted, _ = _nmf_input(run)
    cfg = nmf_config(run.cfg)
    run.info["seeds"] = {"seed": cfg.seed, "restart_seeds": run_seeds(cfg.seed, cfg.n_restarts)}
    with run.stage("lcurve"):
        rep = l_curve_scan(shifted.values, run.cfg["etas"], cfg, threads=run.threads)
    write_rows_csv(run.path("lcurve.csv"), rep.rows(), ["eta", "recon_cost", "smooth_cost"])
    run.info["lcurve"] = {"selected_eta": rep.selected_eta, "curvature": rep.curvature,
                          "iqr_recon": rep.iqr_recon, "iqr_smooth": rep.iqr_smooth}
    _scan_converged(run, rep.n_capped)
    log.info("selected eta: %g", rep.selected_eta)


def _read_factor_dir(path):
    path = Path(path)
    if path.is_dir():
        h_file = path / "H.csv"
        if not h_file.is_file():
            raise DataError(f"{path} has no H.csv")
        w = read_matrix_csv(path / "W.csv") if (path / "W.csv").is_file() else None
        return w, read_matrix_csv(h_file)
    if path.is_file():
        return None, read_matrix_csv(path)
    raise DataError(f"{path} does not exist")


def _manifest_info(path):
    mpath = Path(path) / MANIFEST if Path(path).is_dir() else Path(path).parent / MANIFEST
    if not mpath.is_file():
        return {}
    try:
        with open(mpath, encoding="utf-8") as fh:
            return json.load(fh).get("input", {})
    except (json.JSONDecodeError, AttributeError):
        return {}


def cmd_summarize(run):
    cfg = run.cfg
    with run.stage("load"):
        w, h = _read_factor_dir(cfg["input"])
    if not np.all(np.isfinite(h)):
        raise DataError("activations contain missing or non-finite values")
    with run.stage("summarize"):
        if w is not None and not cfg["raw_activations"]:
            _, h = scale_normalize(w, h)
        summary = ward_cluster(activation_distance(h), cfg["clusters"])
    _write_summary(run, summary, _manifest_info(cfg["input"]).get("days"))


def cmd_synth(run):
    cfg = run.cfg
    spec = SynthSpec(n_depth=cfg["n_depth"], n_ping=cfg["n_ping"], n_freq=cfg["n_freq"],
                     n_day=cfg["n_day"], rank=cfg["synth_rank"], sparsity=cfg["sparsity"],
                     noise_sigma=cfg["noise_sigma"], smoothness=cfg["smoothness"],
                     seed=cfg["seed"])
    with run.stage("synth"):
        if cfg["kind"] == "patterned":
            w0, h0, cube = gen_patterned_echogram(spec)
            low = w0 @ h0
            rng = np.random.default_rng([spec.seed, 1])
            mag = 5.0 * np.abs(low).max() if np.any(low) else 5.0
            sparse = sparse_outliers(low.shape, spec.sparsity, mag, rng)
            if spec.sparsity > 0:
                cube = cube_from_matrix(flatten(cube).values + sparse, spec.layout)
        elif cfg["kind"] == "lowrank":
            low, sparse, x = gen_lowrank_sparse(spec)
            w0 = h0 = None
            cube = cube_from_matrix(x, spec.layout)
        else:
            raise UsageError(f"unknown synth kind {cfg['kind']!r}")
        write_bundle(run.path("bundle"), cube)
        if w0 is not None:
            write_matrix_csv(run.path("W0.csv"), w0)
            write_matrix_csv(run.path("H0.csv"), h0)
        write_matrix_csv(run.path("L0.csv"), low)
        write_matrix_csv(run.path("S0.csv"), sparse)
    run.info["input"] = {"shape": [spec.n_features, spec.n_day], "layout": list(spec.layout)}


def cmd_unflatten_pattern(run):
    cfg = run.cfg
    src = Path(cfg["input"])
    w_path = src / "W.csv" if src.is_dir() else src
    if not w_path.is_file():
        raise DataError(f"{w_path} does not exist")
    info = _manifest_info(src)
    layout = cfg["layout"] or info.get("layout")
    if not layout or len(layout) != 3:
        raise UsageError("layout unknown: pass --layout n_depth,n_ping,n_freq")
    freqs = info.get("frequencies_khz") or list(range(1, layout[2] + 1))
    with run.stage("unflatten"):
        w = read_matrix_csv(w_path)
        for k in range(w.shape[1]):
            images = unflatten(w[:, k], tuple(layout))
            for fi, freq in enumerate(freqs):
                write_matrix_csv(run.path(f"pattern{k + 1}_f{freq:g}.csv"), images[:, :, fi])


def cmd_pipeline(run):
    cfg = run.cfg
    with run.stage("load"):
        cube = fill_missing(read_bundle(cfg["input"]), cfg["fill"], cfg["fill_value"])
        matrix = flatten(cube)
    run.info["input"] = _axes_info(matrix, cube)
    with run.stage("pcp"):
        res = pcp_decompose(matrix, pcp_config(cfg))
        _write_pcp(run, res)
    with run.stage("tsnmf"):
        low = DataMatrix(res.low_rank, matrix.layout, matrix.day_axis, matrix.offset,
                         matrix.freq_axis)
        shifted = shift_nonnegative(low)
        ncfg = nmf_config(cfg)
        run.info["seeds"] = {"seed": ncfg.seed,
                             "restart_seeds": run_seeds(ncfg.seed, ncfg.n_restarts)}
        ens = multistart_fit(shifted.values, ncfg, threads=run.threads)
        _, h_scaled = _write_tsnmf(run, ens, shifted.offset)
    with run.stage("summarize"):
        h = ens.best.h if cfg["raw_activations"] else h_scaled
        summary = ward_cluster(activation_distance(h), min(cfg["clusters"], h.shape[1]))
        _write_summary(run, summary, [str(d) for d in cube.day_axis])


HANDLERS = {
    "pipeline": cmd_pipeline,
    "pcp": cmd_pcp,
    "tsnmf": cmd_tsnmf,
    "rank-scan": cmd_rank_scan,
    "lcurve": cmd_lcurve,
    "summarize": cmd_summarize,
    "synth": cmd_synth,
    "unflatten-pattern": cmd_unflatten_pattern,
}


def _check_input_exists(cfg):
    if "input" in cfg and not Path(cfg["input"]).exists():
        raise UsageError(f"input path does not exist: {cfg['input']}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    explicit = {k: v for k, v in vars(args).items() if k in PARAMS}
    try:
        cfg = resolve_config(args.command, explicit, args.config)
        threads = resolve_threads(args.threads)
        _check_input_exists(cfg)
    except EchodecompError as exc:
        print(f"echodecomp {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code

    run = Run(args.command, args.out, cfg, threads, args.strict)
    run.out.mkdir(parents=True, exist_ok=True)
    failed = run.path("FAILED")
    if failed.exists():
        failed.unlink()
    try:
        HANDLERS[args.command](run)
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        stage = getattr(exc, "stage", "setup")
        if isinstance(exc, EchodecompError):
            code = exc.exit_code
        elif isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)):
            code = EXIT_NUMERICAL
        else:
            code = EXIT_DATA
        with open(failed, "w", encoding="utf-8") as fh:
            fh.write(f"stage={stage}\nerror={type(exc).__name__}: {exc}\n")
        run.info["failed_stage"] = stage
        run.write_manifest()
        print(f"echodecomp {args.command}: stage {stage} failed: {exc}", file=sys.stderr)
        if not isinstance(exc, (EchodecompError, OSError)):
            log.debug("traceback", exc_info=True)
        return code
    run.write_manifest()
    if run.strict and not run.converged:
        print(f"echodecomp {args.command}: not converged (--strict)", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
