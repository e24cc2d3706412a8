"""Command-line experiment runner.

Each subcommand reads a YAML or JSON config, validates it against a schema
(unknown keys are rejected), computes everything in memory and only then
writes CSV tables, SVG plots and a ``manifest.json`` into ``--out``.

Exit codes: 0 success, 2 invalid config, 3 capacity guard, 1 other library
errors.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import click
import jsonschema
import numpy as np
import yaml

from . import __version__
from .errors import CapacityError, ThermalabError

EXIT_CONFIG = 2
EXIT_CAPACITY = 3

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}
_chain = {
    "L": {"type": "integer", "minimum": 2, "maximum": 14},
    "g": _num, "h": _num, "J": _num, "periodic": {"type": "boolean"},
}


def _schema(props: dict, required=()) -> dict:
    return {"type": "object", "properties": {"seed": {"type": "integer", "minimum": 0}, **props},
            "additionalProperties": False, "required": list(required)}


SCHEMAS = {
    "diagonalize": _schema({
        **_chain,
        "truncation": {"oneOf": [{"enum": ["default", "none"]},
                                 {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]},
        "nu0": _pos,
    }),
    "bath-table": _schema({
        "beta": _nonneg, "delta_b": _pos, "omega_min": _num, "omega_max": _num,
        "n_points": {"type": "integer", "minimum": 1, "maximum": 100000},
    }),
    "davies-evolve": _schema({
        **_chain, "nu0": _pos, "beta": _nonneg, "delta_b": _pos,
        "family": {"enum": ["sigma_x_sites", "xxx", "zzz", "xyz"]},
        "tau_factor": _pos, "n_points": {"type": "integer", "minimum": 3, "maximum": 2001},
        "initial": {"enum": ["ground", "top", "maximally_mixed"]},
    }),
    "expander-scan": _schema({
        "L": {"type": "array", "items": {"type": "integer", "minimum": 2, "maximum": 12}, "minItems": 1},
        "g": _num, "h": _num, "J": _num, "periodic": {"type": "boolean"},
        "nu0": _pos, "omega": _num,
        "omega_prime": {"type": "array", "items": _num},
        "n_terms": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "family": {"enum": ["sigma_x_sites", "xxx", "zzz", "xyz"]},
        "strings": {"type": ["array", "null"], "items": {"type": "string"}},
        "mode": {"enum": ["chain", "gaussian"]},
        "rates": {"enum": ["constant", "bath"]},
        "gamma_const": _pos, "beta": _nonneg, "delta_b": _pos, "variance": _pos,
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "center": {"type": ["number", "null"]},
    }),
    "rmt-concentration": _schema({
        "kind": {"enum": ["tensor", "product"]},
        "counts": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "trials": {"type": "integer", "minimum": 1},
        "variance": _pos,
        "coefficients": {"enum": ["inverse", "unit"]},
    }),
    "rw-gap": _schema({
        "density": {"enum": ["truncated-gaussian", "table", "from-spectrum"]},
        "delta_spec": _pos, "nu0": _pos, "cutoff": _pos, "beta": _nonneg,
        "deltas": {"type": "array", "items": _pos, "minItems": 1},
        "labels": {"type": "array", "items": _num},
        "masses": {"type": "array", "items": _pos},
        **_chain,
    }),
    "metropolis-run": _schema({
        **_chain, "beta": _nonneg, "nu0": _pos,
        "qpe": {"enum": ["perfect", "two-bin", "two-bin-with-tail"]},
        "p_amp": {"type": "number", "minimum": 0, "maximum": 1},
        "r_amp": {"type": ["integer", "null"], "minimum": 0}, "c": _pos,
        "r_rej": {"type": "integer", "minimum": 0, "maximum": 64},
        "steps": {"type": "integer", "minimum": 1, "maximum": 100000},
        "family": {"enum": ["sigma_x_sites", "xxx", "zzz", "xyz"]},
    }),
}

DEFAULTS = {
    "diagonalize": {"L": 8, "g": 0.9045, "h": 0.8090, "J": 1.0, "periodic": True, "truncation": "default",
                    "nu0": 0.5},
    "bath-table": {"beta": 1.0, "delta_b": 1.0, "omega_min": -6.0, "omega_max": 6.0, "n_points": 121},
    "davies-evolve": {"L": 4, "g": 0.9045, "h": 0.8090, "J": 1.0, "periodic": True, "nu0": 0.2, "beta": 0.5,
                      "delta_b": 1.0, "family": "sigma_x_sites", "tau_factor": 20.0, "n_points": 41,
                      "initial": "top"},
    "expander-scan": {},
    "rmt-concentration": {"kind": "tensor", "counts": [1, 4, 16], "dims": [64, 64], "trials": 10,
                          "variance": 1.0, "coefficients": "inverse"},
    "rw-gap": {"density": "truncated-gaussian", "delta_spec": 1.0, "nu0": 0.01, "cutoff": 3.0, "beta": 0.0,
               "deltas": [0.05, 0.1, 0.2, 0.4], "L": 8, "g": 0.9045, "h": 0.8090, "J": 1.0, "periodic": True},
    "metropolis-run": {"L": 4, "g": 0.9045, "h": 0.8090, "J": 1.0, "periodic": False, "beta": 0.5, "nu0": 0.2,
                       "qpe": "two-bin", "p_amp": 0.0, "r_amp": None, "c": 1.0, "r_rej": 2, "steps": 50,
                       "family": "sigma_x_sites"},
}


class ConfigError(Exception):
    pass


def load_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: not valid YAML/JSON ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    return data


def validate_config(command: str, data: dict) -> dict:
    """Schema-check ``data`` and merge it over the subcommand defaults."""
    validator = jsonschema.Draft7Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}")
    cfg = dict(DEFAULTS[command])
    cfg.update(data)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ----------------------------------------------------------------- output

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue().encode()


def read_csv(data) -> tuple:
    text = data.decode() if isinstance(data, bytes) else Path(data).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return [], []
    return rows[0], rows[1:]


def render_plot(csv_source, spec: dict) -> bytes:
    """Deterministic SVG of column ``spec['y']`` against ``spec['x']``.

    ``spec`` keys: x, y, optional group, logx, logy, title.  Missing columns
    raise a ValueError naming the column; an empty table gives bare axes.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, rows = read_csv(csv_source)
    needed = [spec["x"], spec["y"]] + ([spec["group"]] if spec.get("group") else [])
    if header:
        for col in needed:
            if col not in header:
                raise ValueError(f"missing column {col!r}")
    matplotlib.rcParams["svg.hashsalt"] = "thermalab"
    matplotlib.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows:
        ix, iy = header.index(spec["x"]), header.index(spec["y"])
        ig = header.index(spec["group"]) if spec.get("group") else None
        groups = {}
        for r in rows:
            try:
                x, y = float(r[ix]), float(r[iy])
            except ValueError:
                continue
            if math.isnan(y):
                continue
            groups.setdefault(r[ig] if ig is not None else "", []).append((x, y))
        for key in sorted(groups):
            pts = sorted(groups[key])
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=key or None)
        if ig is not None and groups:
            ax.legend(title=spec["group"])
    if spec.get("logx"):
        ax.set_xscale("log")
    if spec.get("logy"):
        ax.set_yscale("log")
    ax.set_xlabel(spec["x"])
    ax.set_ylabel(spec["y"])
    if spec.get("title"):
        ax.set_title(spec["title"])
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def write_outputs(out: Path, files: dict, manifest: dict):
    """Write all artifacts plus a manifest listing each file's sha256."""
    out.mkdir(parents=True, exist_ok=True)
    listing = {}
    for name in sorted(files):
        data = files[name]
        (out / name).write_bytes(data)
        listing[name] = hashlib.sha256(data).hexdigest()
    manifest = dict(manifest, files=listing)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _versions() -> dict:
    import scipy

    return {"thermalab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


# ----------------------------------------------------------------- runners

def _model(cfg, truncation="default"):
    from .spectrum import SpinChainParams, build_chain, diagonalize

    params = SpinChainParams(cfg["L"], cfg["g"], cfg["h"], cfg["J"], cfg["periodic"])
    return diagonalize(build_chain(params), truncation=truncation, params=params)


def run_diagonalize(cfg, seed, jobs) -> dict:
    from .spectrum import round_spectrum

    trunc = cfg["truncation"]
    trunc = None if trunc == "none" else (tuple(trunc) if isinstance(trunc, list) else trunc)
    model = _model(cfg, trunc)
    rounded = round_spectrum(model, cfg["nu0"])
    labels = rounded.rounded_energies
    spec_rows = [{"index": i, "energy": float(e), "bin": float(b)} for i, (e, b) in enumerate(zip(model.energies, labels))]
    bin_rows = [{"label": float(lab), "rank": int(r)} for lab, r in zip(rounded.labels, rounded.ranks)]
    return {"spectrum.csv": csv_bytes(["index", "energy", "bin"], spec_rows),
            "bins.csv": csv_bytes(["label", "rank"], bin_rows),
            "_summary": {"dim": model.dim, "retained": model.n_retained, "max_residual": model.max_residual,
                         "bins": rounded.n_bins}}


def run_bath_table(cfg, seed, jobs) -> dict:
    from .bath import BathProfile, bath_table

    om = np.linspace(cfg["omega_min"], cfg["omega_max"], cfg["n_points"])
    tab = bath_table(BathProfile(cfg["beta"], cfg["delta_b"]), om)
    cols = ["omega", "gamma", "re_Gamma", "im_Gamma"]
    rows = [{c: float(tab[c][i]) for c in cols} for i in range(om.size)]
    data = csv_bytes(cols, rows)
    return {"bath.csv": data, "gamma.svg": render_plot(data, {"x": "omega", "y": "gamma", "title": "gamma"})}


def run_davies_evolve(cfg, seed, jobs) -> dict:
    from .bath import BathProfile
    from .davies import converge_to_gibbs, davies_spectrum, interaction_set, mlsi_lower, rounded_davies
    from .spectrum import round_spectrum, rounded_gibbs_diagonal

    model = _model(cfg)
    rounded = round_spectrum(model, cfg["nu0"])
    inter = interaction_set(model, cfg["family"])
    bath = BathProfile(cfg["beta"], cfg["delta_b"])
    L = rounded_davies(rounded, inter, bath)
    sigma = rounded_gibbs_diagonal(rounded, cfg["beta"])
    ev = np.sort(np.real(davies_spectrum(L, rounded, sigma)))[::-1]
    gap = float(-ev[1])
    n = rounded.dim
    rho0 = np.zeros((n, n), complex)
    if cfg["initial"] == "ground":
        rho0[0, 0] = 1.0
    elif cfg["initial"] == "top":
        rho0[-1, -1] = 1.0
    else:
        rho0 = np.eye(n, dtype=complex) / n
    curve = converge_to_gibbs(L, rho0, sigma, cfg["tau_factor"] / gap, cfg["n_points"])
    rows = [{"tau": float(t), "distance": float(d)} for t, d in zip(curve.taus, curve.distances)]
    data = csv_bytes(["tau", "distance"], rows)
    return {"trajectory.csv": data,
            "trajectory.svg": render_plot(data, {"x": "tau", "y": "distance", "logy": True}),
            "_summary": {"gap": gap, "fitted_rate": curve.rate, "mlsi_lower": mlsi_lower(gap, sigma),
                         "final_distance": float(curve.distances[-1])}}


SCAN_COLUMNS = ["L", "n_terms", "omega", "omega_prime", "seed", "nu1", "nu2", "rank1", "rank2", "gap",
                "expected_gap", "deviation", "expander_ratio", "error"]


def run_expander_scan(cfg, seed, jobs) -> dict:
    from .expander import fit_linear, scan_gaps

    cfg = dict(cfg)
    cfg.setdefault("seeds", [seed])
    cfg.setdefault("L", [8])
    rows = scan_gaps(cfg, jobs)
    data = csv_bytes(SCAN_COLUMNS, rows)
    summary = {}
    ok = [r for r in rows if not r["error"] and r["omega_prime"] == 0]
    if len({r["n_terms"] for r in ok}) >= 2:
        slope, intercept, r2 = fit_linear([r["n_terms"] for r in ok], [r["gap"] for r in ok])
        summary = {"slope": slope, "intercept": intercept, "r2": r2}
    return {"scan.csv": data,
            "gap_vs_a.svg": render_plot(data, {"x": "n_terms", "y": "gap", "group": "L",
                                               "title": "sector gap against |a|"}),
            "_summary": summary}


def run_rmt_concentration(cfg, seed, jobs) -> dict:
    from .rmt import fit_exponent, sum_concentration_mc

    coeff = (lambda n: np.ones(n) / n) if cfg["coefficients"] == "inverse" else (lambda n: np.ones(n))
    rows = sum_concentration_mc(cfg["kind"], cfg["counts"], coeff, tuple(cfg["dims"]), cfg["trials"], seed,
                                cfg["variance"])
    trial_rows = [{"count": r["count"], "trial": t, "norm": float(v)} for r in rows for t, v in enumerate(r["samples"])]
    summary = {"rows": [{k: r[k] for k in ("count", "mean", "se", "ratio", "l2_coeff")} for r in rows]}
    if len(rows) >= 2:
        summary["exponent"] = fit_exponent([r["count"] for r in rows], [r["mean"] for r in rows])
    return {"trials.csv": csv_bytes(["count", "trial", "norm"], trial_rows),
            "summary.json": (json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n").encode(),
            "_summary": summary}


def run_rw_gap(cfg, seed, jobs) -> dict:
    from .randomwalk import conductance, heat_bath_walk, spectral_gap, table_grid, truncated_gaussian_grid
    from .spectrum import round_spectrum

    if cfg["density"] == "truncated-gaussian":
        grid = truncated_gaussian_grid(cfg["delta_spec"], cfg["nu0"], cfg["cutoff"])
    elif cfg["density"] == "table":
        if "labels" not in cfg or "masses" not in cfg:
            raise ConfigError("labels: table density needs labels and masses")
        grid = table_grid(cfg["labels"], cfg["masses"])
    else:
        rounded = round_spectrum(_model(cfg), cfg["nu0"])
        grid = (rounded.labels, rounded.ranks.astype(float))
    rows = []
    for d in cfg["deltas"]:
        ch = heat_bath_walk(grid[0], grid[1], cfg["beta"], d)
        gap = spectral_gap(ch)
        rows.append({"delta": float(d), "phi": conductance(ch).phi, "lambda2": 1.0 - gap, "gap": gap})
    data = csv_bytes(["delta", "phi", "lambda2", "gap"], rows)
    summary = {}
    if len(rows) >= 2:
        x = np.log([r["delta"] for r in rows])
        y = np.log([r["gap"] for r in rows])
        summary["exponent"] = float(np.polyfit(x, y, 1)[0])
    return {"rw.csv": data, "gap_vs_delta.svg": render_plot(data, {"x": "delta", "y": "gap", "logx": True,
                                                                    "logy": True}),
            "_summary": summary}


def run_metropolis(cfg, seed, jobs) -> dict:
    from .davies import interaction_set
    from .metropolis import MetropolisConfig, QPEModel, build_bundle, epsilon_db, iterate_to_fixed_point
    from .spectrum import gibbs_diagonal

    model = _model(cfg, None)
    inter = interaction_set(model, cfg["family"])
    qpe = QPEModel(cfg["nu0"], cfg["qpe"], cfg["p_amp"], cfg["r_amp"], cfg["c"])
    bundle = build_bundle(model.energies, inter, MetropolisConfig(cfg["beta"], r_rej=cfg["r_rej"]), qpe)
    n = bundle.dim
    rep = iterate_to_fixed_point(bundle, np.eye(n) / n, cfg["steps"])
    eps = epsilon_db(bundle, gibbs_diagonal(model.energies, cfg["beta"]), seed=seed)
    rows = [{"step": i + 1, "trace": float(t), "tv": float(d)} for i, (t, d) in enumerate(zip(rep.traces, rep.distances))]
    diag = {"epsilon_db": eps, "lambda_lead": rep.lambda_lead, "lambda2_h": rep.lambda2_h,
            "fixed_point_distance": rep.fix_distance}
    return {"trajectory.csv": csv_bytes(["step", "trace", "tv"], rows),
            "diagnostics.json": (json.dumps(diag, indent=2, sort_keys=True) + "\n").encode(),
            "_summary": diag}


RUNNERS = {
    "diagonalize": run_diagonalize,
    "bath-table": run_bath_table,
    "davies-evolve": run_davies_evolve,
    "expander-scan": run_expander_scan,
    "rmt-concentration": run_rmt_concentration,
    "rw-gap": run_rw_gap,
    "metropolis-run": run_metropolis,
}


def run(command: str, config_path=None, out=None, seed=None, jobs: int = 1, config: dict = None) -> int:
    """Run one subcommand; returns the process exit status."""
    t0 = time.perf_counter()
    try:
        data = load_config(config_path) if config is None else dict(config)
        cfg = validate_config(command, data)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    root_seed = seed if seed is not None else int(cfg.pop("seed", 0))
    cfg.pop("seed", None)
    try:
        files = RUNNERS[command](cfg, root_seed, jobs)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except CapacityError as exc:
        click.echo(f"capacity error: {exc}", err=True)
        return EXIT_CAPACITY
    except ThermalabError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 1
    summary = files.pop("_summary", {})
    manifest = {"command": command, "config": cfg, "seed": root_seed,
                "config_hash": config_hash({"config": cfg, "seed": root_seed}),
                "versions": _versions(), "wall_time_s": time.perf_counter() - t0, "summary": summary}
    out = Path(out or os.path.join("runs", command))
    write_outputs(out, files, manifest)
    click.echo(json.dumps(summary, sort_keys=True, default=float))
    return 0


@click.group()
@click.version_option(__version__)
def main():
    """Thermalization numerics: spectra, Davies generators, expanders, Metropolis maps."""


def _command(name: str):
    @main.command(name)
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="YAML or JSON config file.")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("--seed", type=int, default=None, help="Root seed (overrides the config).")
    @click.option("--jobs", type=click.IntRange(min=1), default=1, help="Worker processes for scans.")
    def cmd(config_path, out, seed, jobs):
        sys.exit(run(name, config_path, out, seed, jobs))

    cmd.__doc__ = f"Run the {name} experiment."
    return cmd


for _name in RUNNERS:
    _command(_name)


if __name__ == "__main__":
    main()
