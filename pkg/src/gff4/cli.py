"""Command-line orchestration: configuration, deterministic replay, CSV/JSON
emission for every module's reports.

Exit codes: 0 = command ran to completion, 1 = parameter/geometry rejection,
2 = numerical failure (factorization, degenerate estimate, precision loss).
Every data output is CSV (comma, dot decimal, header row, LF) or JSON with
sorted keys; floats are serialized with shortest round-trip repr, so repeated
runs with one seed are byte-identical.  The per-run manifest (config echo,
seed, versions, wall clock) is written as manifest.txt precisely because the
wall clock would break byte-identity of the data formats.

Configuration: an INI file (sections per command plus [run]); precedence is
built-in defaults < config file < command-line flags.  The merged effective
config is echoed into the manifest and is idempotent under parse/serialize.
"""

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import acceptance, covariance, liouville, multifractal, sampler
from .errors import (
    DegenerateEstimateError,
    DomainError,
    FactorizationError,
    GeometryError,
    ParameterError,
    PrecisionLossError,
    StateError,
)
from .sampler import RngStream

COMMANDS = (
    "specfun-table",
    "cov-table",
    "kc-check",
    "sample",
    "liouville",
    "tilt-check",
    "dimension",
    "energy",
    "verify-all",
)

DEFAULTS = {
    "run": {"seed": acceptance.SHIPPED_SEED, "output_dir": "gff4_out", "threads": 0},
    "specfun-table": {"x_min": 1e-4, "x_max": 30.0, "points": 200, "spacing": "log"},
    "cov-table": {},
    "kc-check": {},
    "sample": {"grid_n": 3, "radii": [0.1, 0.05], "draws": 1},
    "liouville": {
        "gamma": 1.5,
        "eps0": 0.06,
        "levels": 3,
        "grid_n": 6,
        "replications": 200,
    },
    "tilt-check": {"gamma": math.pi, "times": [1.0, 2.0], "draws": 200000, "ref_radius": 1.0},
    "dimension": {
        "a": [0.25, 0.5, 1.0],
        "zeta": 0.5,
        "kexp": 1.0,
        "c_delta": 0.1,
        "levels": [2, 3, 4, 5],
        "nmax": 0,  # when set, overrides levels with 2..nmax
        "finest": 8,
        "beta": 2.05,
        "replications": 48,
    },
    "energy": {
        "a": 0.25,
        "alpha": 3.5,
        "nmax": 3,
        "replications": [600, 400, 150],
        "p_paths": 400000,
        "corr_draws": 20000,
        "corr_classes": [1, 2, 3],
    },
    "verify-all": {"criteria": []},
}


def _coerce(default, raw):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        items = [s for s in raw.replace(",", " ").split() if s]
        if (default and isinstance(default[0], int)) or all(
            s.lstrip("+-").isdigit() for s in items
        ):
            return [int(s) for s in items]
        return [float(s) for s in items]
    return raw.strip()


def load_config_file(path):
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    return {section: dict(parser.items(section)) for section in parser.sections()}


def effective_config(command, file_cfg, overrides):
    cfg = dict(DEFAULTS[command])
    run_cfg = dict(DEFAULTS["run"])
    for section, target in (("run", run_cfg), (command, cfg)):
        for key, raw in file_cfg.get(section, {}).items():
            base = DEFAULTS[section].get(key)
            if base is None and key not in DEFAULTS[section]:
                raise ParameterError(f"cli.config: unknown key '{key}' in section [{section}]")
            target[key] = _coerce(base, raw)
    for key, value in overrides.items():
        if value is None:
            continue
        if key in run_cfg:
            run_cfg[key] = value
        else:
            cfg[key] = value
    return run_cfg, cfg


def config_text(command, run_cfg, cfg):
    """Canonical INI dump of the merged effective config (idempotent)."""
    buf = io.StringIO()
    for section, mapping in (("run", run_cfg), (command, cfg)):
        buf.write(f"[{section}]\n")
        for key in sorted(mapping):
            value = mapping[key]
            if isinstance(value, list):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            buf.write(f"{key} = {value}\n")
        buf.write("\n")
    return buf.getvalue()


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def write_json(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def write_manifest(out_dir, command, run_cfg, cfg, wall_clock):
    import platform
    import scipy

    from . import __version__

    lines = [
        f"command: {command}",
        f"seed: {run_cfg['seed']}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"gff4: {__version__}",
        f"wall_clock_s: {wall_clock:.3f}",
        "",
        "effective config:",
        config_text(command, run_cfg, cfg),
    ]
    with open(out_dir / "manifest.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------


def cmd_specfun_table(out, run_cfg, cfg):
    if cfg["points"] < 2 or cfg["x_min"] <= 0 or cfg["x_max"] <= cfg["x_min"]:
        raise ParameterError("cli.specfun-table: need 0 < x_min < x_max and points >= 2")
    if cfg["spacing"] == "log":
        xs = np.geomspace(cfg["x_min"], cfg["x_max"], cfg["points"])
    elif cfg["spacing"] == "linear":
        xs = np.linspace(cfg["x_min"], cfg["x_max"], cfg["points"])
    else:
        raise ParameterError("cli.specfun-table: spacing must be 'log' or 'linear'")
    from . import specfun

    rows = specfun.function_table(xs)
    write_csv(
        out / "specfun_table.csv",
        ("x", "I0", "I1", "I2", "K0", "K1", "turan", "f1", "f2"),
        rows,
    )


def cmd_cov_table(out, run_cfg, cfg):
    rows = []
    for a, b in covariance.default_kc_samples():
        geo = covariance.classify(a, b)
        if geo.case is covariance.GeometryCase.UNSUPPORTED:
            continue
        rows.append(
            tuple(a.center)
            + (a.radius,)
            + tuple(b.center)
            + (b.radius, geo.case.value, covariance.kernel(a, b))
        )
    write_csv(
        out / "cov_table.csv",
        ("x1", "x2", "x3", "x4", "r1", "y1", "y2", "y3", "y4", "r2", "case", "value"),
        rows,
    )


def cmd_kc_check(out, run_cfg, cfg):
    report = covariance.kc_difference_bound(covariance.default_kc_samples())
    write_json(out / "kc_report.json", report.to_dict())


def cmd_sample(out, run_cfg, cfg):
    radii = tuple(float(r) for r in cfg["radii"])
    m = int(cfg["grid_n"])
    spacing = 1.0 / m
    if radii and spacing <= 2.0 * max(radii):
        raise ParameterError(
            f"cli.sample: grid spacing 1/{m} = {spacing:.4g} must exceed twice the coarsest "
            f"radius {max(radii):.4g} (hierarchical sampling precondition)"
        )
    centers = sampler.hypercube_centers(m)
    rng = RngStream(run_cfg["seed"])
    draws, _ = sampler.hierarchical_draws(
        centers, radii, rng, int(cfg["draws"]), spacing=spacing
    )
    # one file per realization, each a serialized FieldGrid
    for d in range(draws.shape[0]):
        rows = []
        for i, center in enumerate(centers):
            for j, radius in enumerate(radii):
                rows.append(tuple(center) + (radius, draws[d, i, j]))
        name = "field.csv" if draws.shape[0] == 1 else f"field_{d:03d}.csv"
        write_csv(out / name, ("x1", "x2", "x3", "x4", "radius", "value"), rows)
    write_json(
        out / "field.json",
        {
            "seed": run_cfg["seed"],
            "grid_n": m,
            "spacing": spacing,
            "radii": list(radii),
            "draws": int(cfg["draws"]),
            "n_centers": len(centers),
        },
    )


def cmd_liouville(out, run_cfg, cfg):
    params = liouville.LiouvilleParams(
        gamma=float(cfg["gamma"]), eps0=float(cfg["eps0"]), n_levels=int(cfg["levels"])
    )
    if params.gamma**2 >= covariance.TWO_PI_SQ:
        raise ParameterError(
            f"cli.liouville: gamma^2 = {params.gamma ** 2:.4f} >= 2*pi^2 = "
            f"{covariance.TWO_PI_SQ:.4f} violates the L2-regime constraint 0 < gamma^2 < 2*pi^2"
        )
    rng = RngStream(run_cfg["seed"]).substream("liouville")
    report = liouville.convergence_diagnostic(
        int(cfg["grid_n"]), params, int(cfg["replications"]), rng
    )
    rows = []
    for rep in range(report.masses_matrix.shape[0]):
        for level, eps in enumerate(report.eps_levels):
            rows.append((rep, level + 1, eps, report.masses_matrix[rep, level]))
    write_csv(out / "masses.csv", ("replication", "level", "eps", "total_mass"), rows)
    write_json(out / "liouville_report.json", report.to_dict())


def cmd_tilt_check(out, run_cfg, cfg):
    params = liouville.LiouvilleParams(gamma=float(cfg["gamma"]))
    rng = RngStream(run_cfg["seed"]).substream("tilt")
    payload = []
    for t in cfg["times"]:
        eps = liouville.tilt_eps_for(float(t), ref_radius=float(cfg["ref_radius"]))
        spec = covariance.SphereSpec((0.0, 0.0, 0.0, 0.0), eps)
        rep = liouville.cm_tilt_check(
            spec,
            float(t),
            params,
            int(cfg["draws"]),
            rng.substream(float(t)),
            ref_radius=float(cfg["ref_radius"]),
        )
        payload.append(rep.to_dict())
    write_json(out / "tilt_report.json", {"checks": payload})


def cmd_dimension(out, run_cfg, cfg):
    if cfg.get("nmax"):
        cfg["levels"] = list(range(2, int(cfg["nmax"]) + 1))
    proto = multifractal.UpperSchemeParams(
        a=float(cfg["a"][0]),
        eps_scheme=1.0 / float(cfg["kexp"]),
        zeta=float(cfg["zeta"]),
        c_delta=float(cfg["c_delta"]),
        n_max=max(int(n) for n in cfg["levels"]),
    )
    grid_cfg = multifractal.DimensionGridConfig(
        finest_per_side=int(cfg["finest"]),
        beta=float(cfg["beta"]),
        levels=tuple(int(n) for n in cfg["levels"]),
    )
    rng = RngStream(run_cfg["seed"]).substream("dimension")
    report = multifractal.dimension_pipeline(
        [float(a) for a in cfg["a"]], proto, grid_cfg, int(cfg["replications"]), rng
    )
    # one counts file per thickness, schema (replication, n, r_n, threshold, count)
    for a in cfg["a"]:
        rows = [row[1:] for row in report.count_rows if row[0] == float(a)]
        write_csv(
            out / f"dimension_counts_a{a:g}.csv",
            ("replication", "n", "r_n", "threshold", "count"),
            rows,
        )
    write_json(out / "dimension_report.json", report.to_dict())


def cmd_energy(out, run_cfg, cfg):
    params = multifractal.LowerSchemeParams(a=float(cfg["a"]), n_max=int(cfg["nmax"]))
    rng = RngStream(run_cfg["seed"]).substream("energy")
    reps = cfg["replications"]
    if isinstance(reps, (int, float)):
        reps = [int(reps)] * params.n_max
    if len(reps) < params.n_max:
        raise ParameterError("cli.energy: need one replication count per n")
    rows = []
    payload = {"studies": [], "correlation": []}
    for n in range(1, params.n_max + 1):
        study = multifractal.mu_n_energy_study(
            params,
            n,
            float(cfg["alpha"]),
            rng.substream("mu", n),
            int(reps[n - 1]),
            p_paths=int(cfg["p_paths"]),
        )
        payload["studies"].append(study.to_dict())
        rows.append(
            (
                n,
                study.p_hat,
                study.mass_mean,
                study.mass_se,
                study.energy_mean,
                study.energy_se,
            )
        )
    corr_params = multifractal.LowerSchemeParams(a=float(cfg["a"]), n_max=min(2, params.n_max))
    for l in cfg["corr_classes"]:
        rep = multifractal.correlation_inequality_check(
            int(l),
            corr_params.n_max,
            corr_params,
            int(cfg["corr_draws"]),
            rng.substream("corr", int(l)),
        )
        payload["correlation"].append(rep.to_dict())
    write_csv(
        out / "energy.csv",
        ("n", "p_hat", "mass_mean", "mass_se", "energy_mean", "energy_se"),
        rows,
    )
    write_json(out / "energy_report.json", payload)


def cmd_verify_all(out, run_cfg, cfg):
    numbers = [int(n) for n in cfg["criteria"]] or None
    threads = int(run_cfg["threads"]) or (os.cpu_count() or 1)
    results = acceptance.run_all(
        seed=int(run_cfg["seed"]), numbers=numbers, threads=threads, echo=print
    )
    payload = {
        "seed": int(run_cfg["seed"]),
        "all_passed": all(r.passed for r in results),
        "criteria": [r.to_dict() for r in results],
    }
    write_json(out / "verify_summary.json", payload)


HANDLERS = {
    "specfun-table": cmd_specfun_table,
    "cov-table": cmd_cov_table,
    "kc-check": cmd_kc_check,
    "sample": cmd_sample,
    "liouville": cmd_liouville,
    "tilt-check": cmd_tilt_check,
    "dimension": cmd_dimension,
    "energy": cmd_energy,
    "verify-all": cmd_verify_all,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gff4",
        description="Sphere-average Gaussian field in R^4: tables, sampling, "
        "Liouville measures, thick-point estimators.",
    )
    parser.add_argument("--config", help="INI config file ([run] plus per-command sections)")
    parser.add_argument("--out", help="output directory (or env GFF4_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="master seed for all streams")
    parser.add_argument("--threads", type=int, help="worker threads (0 = hardware)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("specfun-table", help="dump (x, I0, I1, I2, K0, K1, turan, f1, f2)")
    p.add_argument("--x-min", dest="x_min", type=float)
    p.add_argument("--x-max", dest="x_max", type=float)
    p.add_argument("--points", type=int)
    p.add_argument("--spacing", choices=("log", "linear"))

    sub.add_parser("cov-table", help="dump kernel values over a demo pair family")
    sub.add_parser("kc-check", help="covariance-difference bound sweep report (JSON)")

    p = sub.add_parser("sample", help="hierarchical field samples on a hypercube grid")
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--radii", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--draws", type=int)

    p = sub.add_parser("liouville", help="cutoff-measure masses and diagnostics")
    p.add_argument("--gamma", type=float)
    p.add_argument("--eps0", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--grid-n", dest="grid_n", type=int)
    p.add_argument("--replications", type=int)

    p = sub.add_parser("tilt-check", help="Cameron-Martin tilt identity check")
    p.add_argument("--gamma", type=float)
    p.add_argument("--times", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--draws", type=int)
    p.add_argument("--ref-radius", dest="ref_radius", type=float)

    p = sub.add_parser("dimension", help="thick-point counting and dimension estimate")
    p.add_argument("--a", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--zeta", type=float)
    p.add_argument("--Kexp", dest="kexp", type=float)
    p.add_argument("--c-delta", dest="c_delta", type=float)
    p.add_argument("--levels", type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--nmax", type=int, help="use levels 2..nmax")
    p.add_argument("--finest", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--replications", type=int)

    p = sub.add_parser("energy", help="perfect-thick measure masses and alpha-energies")
    p.add_argument("--a", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nmax", type=int)
    p.add_argument("--replications", type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--p-paths", dest="p_paths", type=int)
    p.add_argument("--corr-draws", dest="corr_draws", type=int)
    p.add_argument("--corr-classes", dest="corr_classes", type=lambda s: [int(v) for v in s.split(",")])

    p = sub.add_parser("verify-all", help="run the acceptance battery, write JSON summary")
    p.add_argument("--criteria", type=lambda s: [int(v) for v in s.split(",")])

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        file_cfg = load_config_file(args.config) if args.config else {}
        overrides = {
            k: v
            for k, v in vars(args).items()
            if k not in ("config", "command", "out") and v is not None
        }
        run_cfg, cfg = effective_config(command, file_cfg, overrides)
        out_root = args.out or os.environ.get("GFF4_OUTPUT_DIR") or run_cfg["output_dir"]
        out = Path(out_root) / command
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        HANDLERS[command](out, run_cfg, cfg)
        write_manifest(out, command, run_cfg, cfg, time.perf_counter() - t0)
        return 0
    except (ParameterError, GeometryError, DomainError) as exc:
        print(f"gff4 {command}: parameter rejected: {exc}", file=sys.stderr)
        return 1
    except (FactorizationError, DegenerateEstimateError, PrecisionLossError, StateError) as exc:
        print(f"gff4 {command}: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
