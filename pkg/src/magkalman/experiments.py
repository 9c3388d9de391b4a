"""Experiment configuration, deterministic batch runs, sweeps and figure data.

A run is described by one JSON document::

    {
      "phys":   {"J": 1e9, "gamma": 1e6, "M": 1e5, "eta": 1, "gamma_y": 0.1},
      "ou":     {"chi": 0, "q_B": 100, "sigma0_sq": "inf", "B0": 0},
      "grid":   {"t_S_min": 1e-8, "t_S_max": 1, "n_points": 200, "spacing": "log"},
      "run":    {"kind": "filter", "n_trajectories": 0, "master_seed": 0},
      "output": {"digits": 17}
    }

Times in ``grid`` are given either in seconds (``t_min``/``t_max``) or as
rescaled times t_S = (M + gamma_y) t (``t_S_min``/``t_S_max``).  Sweeps add
``run.sweep = {"axis": ..., "values": [...] | {"min", "max", "n", "spacing"},
"t" | "t_S": ...}`` and figures ``run.figure``.

Every random quantity is drawn from a stream keyed by (master seed,
trajectory or sweep index), and results are gathered in index order, so the
output bytes do not depend on the number of worker threads.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .bounds import NoDecoherenceWarning, cs_limit, fisher_continuum
from .errors import ConfigError, RegimeError
from .kalman import (amse_noiseless, amse_noiseless_asymptotes, build_model, filter_ensemble,
                     integrate_riccati, steady_state)
from .moments import (integrate_conditional, jx_approx, jx_constant_field, jx_relative_error,
                      squeezing, variance_exact, variance_noiseless, variance_regimes)
from .params import INFINITE, OuParams, PhysParams, fold_gamma_z, is_infinite, validate_regime
from .stochproc import simulate_ou, time_average_stats

__all__ = [
    "FIGURES",
    "KINDS",
    "CsvTable",
    "ExperimentConfig",
    "config_hash",
    "load_config",
    "parse_config",
    "read_table",
    "refined_grid",
    "reproduce_figure",
    "run_experiment",
    "sweep",
]

KINDS = ("simulate", "filter", "bounds", "sweep_time", "sweep_J", "oracle", "figure")
FIGURES = ("fig2a", "fig2b", "fig3", "fig4", "fig5_main", "fig5_inset",
           "fig6_main", "fig6_inset", "figA1", "figB1")
SWEEP_AXES = ("t", "J", "q_B", "gamma_y")
MAX_SIM_STEPS = 2_000_000
CHUNK = 100  # trajectories per work item

FILTER_COLUMNS = ["t", "t_S", "Sigma22", "cs_limit", "cs_limit_qB0", "steady_state",
                  "amse_noiseless", "empirical_mse", "empirical_stderr"]


# configuration -------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    n_points: int = 100
    spacing: str = "log"
    t_min: float | None = None
    t_max: float | None = None
    t_S_min: float | None = None
    t_S_max: float | None = None


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    t: float | None = None
    t_S: float | None = None


@dataclass(frozen=True)
class RunSpec:
    kind: str
    n_trajectories: int = 0
    master_seed: int = 0
    sweep: SweepSpec | None = None
    figure: str | None = None


@dataclass(frozen=True)
class OutputSpec:
    path: str | None = None
    digits: int = 17


@dataclass(frozen=True)
class ExperimentConfig:
    phys: PhysParams
    ou: OuParams
    grid: GridSpec
    run: RunSpec
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> dict:
        """Normalized JSON-ready form (defaults filled in)."""
        ou = asdict(self.ou)
        if is_infinite(self.ou.sigma0_sq):
            ou["sigma0_sq"] = "inf"
        run = {"kind": self.run.kind, "n_trajectories": self.run.n_trajectories,
               "master_seed": self.run.master_seed}
        if self.run.sweep is not None:
            run["sweep"] = {k: v for k, v in asdict(self.run.sweep).items() if v is not None}
            run["sweep"]["values"] = list(self.run.sweep.values)
        if self.run.figure is not None:
            run["figure"] = self.run.figure
        grid = {k: v for k, v in asdict(self.grid).items() if v is not None}
        phys = asdict(self.phys)
        phys.pop("record_scale")
        out = {k: v for k, v in asdict(self.output).items() if v is not None}
        return {"phys": phys, "ou": ou, "grid": grid, "run": run, "output": out}


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _num(d, key, path, default=None, required=False, integer=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}: missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _section(raw, key, required=True):
    if key not in raw:
        if required:
            raise ConfigError(f"{key}: missing section")
        return {}
    v = raw[key]
    if not isinstance(v, dict):
        raise ConfigError(f"{key}: expected an object")
    return v


def _check_keys(d, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(extra)}")


def _values(spec, path):
    if isinstance(spec, list):
        vals = [float(v) for v in spec]
    elif isinstance(spec, dict):
        _check_keys(spec, ("min", "max", "n", "spacing"), path)
        lo = _num(spec, "min", path, required=True)
        hi = _num(spec, "max", path, required=True)
        n = _num(spec, "n", path, required=True, integer=True)
        sp = spec.get("spacing", "log")
        if sp not in ("log", "linear") or n < 1 or not 0 < lo <= hi:
            raise ConfigError(f"{path}: need 0 < min <= max, n >= 1, spacing log|linear")
        vals = list(np.geomspace(lo, hi, n) if sp == "log" else np.linspace(lo, hi, n))
    else:
        raise ConfigError(f"{path}: expected a list or a range object")
    if not vals:
        raise ConfigError(f"{path}: empty values")
    if any(not (math.isfinite(v) and v > 0) for v in vals):
        raise ConfigError(f"{path}: values must be positive")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{path}: values must be strictly increasing")
    return tuple(vals)


def parse_config(raw: dict, kind: str | None = None) -> ExperimentConfig:
    """Validate a config document; errors name the offending field path."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    _check_keys(raw, ("phys", "ou", "grid", "run", "output"), "config")
    run_d = _section(raw, "run", required=False)
    _check_keys(run_d, ("kind", "n_trajectories", "master_seed", "sweep", "figure"), "run")
    k = run_d.get("kind", kind)
    if kind is not None and k != kind:
        raise ConfigError(f"run.kind: config says {k!r}, command line says {kind!r}")
    if k not in KINDS:
        raise ConfigError(f"run.kind: must be one of {', '.join(KINDS)}, got {k!r}")
    n_traj = _num(run_d, "n_trajectories", "run", default=0, integer=True)
    if n_traj < 0:
        raise ConfigError("run.n_trajectories: must be >= 0")
    seed = _num(run_d, "master_seed", "run", default=0, integer=True)
    if not 0 <= seed < 2**64:
        raise ConfigError("run.master_seed: must be an unsigned 64-bit integer")
    fig = run_d.get("figure")
    if k == "figure" and fig not in FIGURES:
        raise ConfigError(f"run.figure: must be one of {', '.join(FIGURES)}, got {fig!r}")
    sw = None
    if "sweep" in run_d:
        sd = run_d["sweep"]
        if not isinstance(sd, dict):
            raise ConfigError("run.sweep: expected an object")
        _check_keys(sd, ("axis", "values", "t", "t_S"), "run.sweep")
        axis = sd.get("axis", "J" if k == "sweep_J" else "t")
        if axis not in SWEEP_AXES:
            raise ConfigError(f"run.sweep.axis: must be one of {', '.join(SWEEP_AXES)}")
        if "values" not in sd:
            raise ConfigError("run.sweep.values: missing")
        sw = SweepSpec(axis, _values(sd["values"], "run.sweep.values"),
                       _num(sd, "t", "run.sweep"), _num(sd, "t_S", "run.sweep"))
        if k == "sweep_J" and axis == "t":
            raise ConfigError("run.sweep.axis: sweep_J cannot sweep time")
    elif k == "sweep_J":
        raise ConfigError("run.sweep: sweep_J needs a sweep block")
    run = RunSpec(k, n_traj, seed, sw, fig)

    if k == "figure":
        # figures carry their own parameters; phys/ou/grid are optional
        phys_d = _section(raw, "phys", required=False) or {"J": 1e9}
        ou_d = _section(raw, "ou", required=False)
        grid_d = _section(raw, "grid", required=False) or {"t_S_min": 1e-8, "t_S_max": 1.0}
    else:
        phys_d, ou_d, grid_d = (_section(raw, "phys"), _section(raw, "ou", required=False),
                                _section(raw, "grid", required=k not in ("sweep_J",)))
    _check_keys(phys_d, ("J", "gamma", "M", "eta", "gamma_x", "gamma_y", "gamma_z"), "phys")
    pk = {key: _num(phys_d, key, "phys") for key in phys_d}
    if "J" not in pk:
        raise ConfigError("phys.J: missing")
    try:
        phys = PhysParams(**pk)
    except ConfigError as e:
        raise ConfigError(f"phys: {e}") from None

    _check_keys(ou_d, ("chi", "q_B", "sigma0_sq", "B0"), "ou")
    ok = {key: _num(ou_d, key, "ou") for key in ("chi", "q_B", "B0") if key in ou_d}
    if "sigma0_sq" in ou_d:
        s = ou_d["sigma0_sq"]
        if isinstance(s, str):
            if s.lower() not in ("inf", "infinite"):
                raise ConfigError(f"ou.sigma0_sq: expected a number or \"inf\", got {s!r}")
            ok["sigma0_sq"] = INFINITE
        else:
            ok["sigma0_sq"] = _num(ou_d, "sigma0_sq", "ou")
    try:
        ou = OuParams(**ok)
    except ConfigError as e:
        raise ConfigError(f"ou: {e}") from None

    _check_keys(grid_d, ("n_points", "spacing", "t_min", "t_max", "t_S_min", "t_S_max"), "grid")
    g = GridSpec(
        n_points=_num(grid_d, "n_points", "grid", default=100, integer=True),
        spacing=grid_d.get("spacing", "log"),
        **{key: _num(grid_d, key, "grid") for key in ("t_min", "t_max", "t_S_min", "t_S_max")
           if key in grid_d})
    if g.spacing not in ("log", "linear"):
        raise ConfigError("grid.spacing: must be 'log' or 'linear'")
    if g.n_points < 1:
        raise ConfigError("grid.n_points: must be >= 1")
    if grid_d and k not in ("figure",):
        if (g.t_max is None) == (g.t_S_max is None):
            raise ConfigError("grid: give exactly one of t_max, t_S_max")
        if g.spacing == "log" and g.t_min is None and g.t_S_min is None:
            raise ConfigError("grid: log spacing needs t_min or t_S_min")

    out_d = _section(raw, "output", required=False)
    _check_keys(out_d, ("path", "digits"), "output")
    digits = _num(out_d, "digits", "output", default=17, integer=True)
    if not 1 <= digits <= 17:
        raise ConfigError("output.digits: must lie in 1..17")
    path = out_d.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path: expected a string")
    return ExperimentConfig(phys, ou, g, run, OutputSpec(path, digits))


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return parse_config(raw, kind)


# tables --------------------------------------------------------------------


@dataclass
class CsvTable:
    """Rectangular numeric table with '#' provenance lines; NaN prints as empty."""

    name: str
    columns: list
    data: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if self.data.size == 0:
            self.data = self.data.reshape(0, len(self.columns))
        if self.data.shape[1] != len(self.columns):
            raise ValueError("column count does not match the data")

    def column(self, name):
        return self.data[:, self.columns.index(name)]

    def to_text(self, digits: int = 17, sep: str = ",") -> str:
        buf = io.StringIO()
        buf.write(f"# magkalman {__version__}\n")
        for k, v in self.provenance.items():
            buf.write(f"# {k}: {v}\n")
        buf.write(sep.join(self.columns) + "\n")
        fmt = f"{{:.{digits}g}}"
        for row in self.data:
            buf.write(sep.join("" if math.isnan(x) else fmt.format(x) for x in row) + "\n")
        return buf.getvalue()

    def write(self, path, digits: int = 17, sep: str = ","):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text(digits, sep))


def read_table(path) -> CsvTable:
    """Parse a table written by :meth:`CsvTable.write` (comma separated)."""
    prov, rows, cols = {}, [], None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                if val:
                    prov[key] = val
                continue
            if cols is None:
                cols = line.split(",")
                continue
            rows.append([float(x) if x else math.nan for x in line.split(",")])
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return CsvTable(name, cols, np.array(rows).reshape(len(rows), len(cols)), prov)


# helpers -------------------------------------------------------------------


def _threads(threads):
    if threads is None:
        env = os.environ.get("MAGKALMAN_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _ordered_map(fn, items, threads):
    """map() over items, results in input order whatever the worker count."""
    items = list(items)
    if _threads(threads) == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=_threads(threads)) as ex:
        return list(ex.map(fn, items))


def _output_times(g: GridSpec, r: float):
    scale = 1.0 if g.t_max is not None else 1.0 / r
    hi = g.t_max if g.t_max is not None else g.t_S_max
    lo = g.t_min if g.t_min is not None else g.t_S_min
    if not (hi and hi > 0):
        raise ConfigError("grid: the upper time must be positive")
    if g.spacing == "log":
        if not (lo and 0 < lo <= hi):
            raise ConfigError("grid: need 0 < min <= max for log spacing")
        vals = np.geomspace(lo, hi, g.n_points)
    else:
        lo = hi / g.n_points if lo is None else lo
        if not 0 < lo <= hi:
            raise ConfigError("grid: need 0 < min <= max")
        vals = np.linspace(lo, hi, g.n_points)
    return np.unique(vals * scale)


def refined_grid(t_out, rel: float, cap: float, t0: float, max_steps: int = MAX_SIM_STEPS):
    """Integration grid from 0 containing every output time exactly.

    Steps grow as rel*(t + t0) and never exceed ``cap``.
    """
    t_out = np.asarray(t_out, dtype=float)
    ts = [0.0]
    t = 0.0
    for target in t_out:
        while t < target:
            nt = t + min(rel * (t + t0), cap)
            if nt >= target * (1.0 - 1e-12):
                nt = target
            ts.append(nt)
            t = nt
            if len(ts) > max_steps:
                raise ConfigError(
                    f"simulation grid exceeds {max_steps} steps; shorten the time range")
    return np.array(ts)


def _sim_cap(p: PhysParams, t_max: float):
    cap = 1e-3 / p.r
    if p.gamma_y > 0:
        cap = min(cap, variance_regimes(p).t_star / 20.0)
    return min(cap, t_max / 20.0)


def _check_regime(p, ou, t_max, allow):
    rep = validate_regime(p, ou, t_max)
    if not rep.ok and not allow:
        bad = [k for k, ok in (("chi", rep.chi_ok), ("q_B", rep.qB_ok), ("time", rep.time_ok))
               if not ok]
        raise RegimeError(
            "outside the linear-Gaussian regime (needs chi << 4r/3, q_B <= 3r^3/(4 gamma^2), "
            f"r t <= 1 with r = M + gamma_y): failing {', '.join(bad)}; margins "
            + ", ".join(f"{k}={v:.3g}" for k, v in rep.margins.items()))
    return rep


def _sigma0(ou):
    return INFINITE if is_infinite(ou.sigma0_sq) else np.diag([0.0, ou.sigma0_sq])


def _quiet_cs(t, p, ou):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoDecoherenceWarning)
        return cs_limit(t, p, ou)


def _steady(p, ou, t):
    try:
        return steady_state(p, ou, t).value
    except ConfigError:
        return np.full(np.shape(t), np.nan)


def _analytic(p, ou, t):
    """Filter error, bounds and reference curves on the time grid t."""
    m = build_model(p, ou)
    S = integrate_riccati(_sigma0(ou), t, m)[:, 1, 1]
    return {
        "Sigma22": S,
        "cs_limit": _quiet_cs(t, p, ou).value,
        "cs_limit_qB0": _quiet_cs(t, p, replace(ou, q_B=0.0)).value,
        "steady_state": _steady(p, ou, t),
        "amse_noiseless": amse_noiseless(t, ou.sigma0_sq, p),
    }


def _empirical(p, ou, t_out, n_traj, seed, threads):
    """Monte Carlo MSE of the filter's field estimate and its standard error."""
    if is_infinite(ou.sigma0_sq):
        raise ConfigError("ou.sigma0_sq: empirical runs need a finite prior variance "
                          "(an improper prior cannot be sampled)")
    T = refined_grid(t_out, 0.01, _sim_cap(p, float(t_out[-1])), 1e-6 * float(t_out[0]))
    idx = np.searchsorted(T, t_out)
    m = build_model(p, ou)
    sig = integrate_riccati(np.diag([0.0, ou.sigma0_sq]), T, m)
    chunks = [(s, min(CHUNK, n_traj - s)) for s in range(0, n_traj, CHUNK)]

    def work(c):
        return filter_ensemble(p, ou, T, c[1], seed, idx, m=m, sigma_path=sig, start=c[0])[0]

    err = np.vstack(_ordered_map(work, chunks, threads))
    sq = err**2
    se = sq.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.full(len(t_out), np.nan)
    return sq.mean(axis=0), se, err


def _derived_seed(master_seed, index):
    return int(np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


# run kinds -----------------------------------------------------------------


def _provenance(cfg, seed, extra=None):
    prov = {"kind": cfg.run.kind, "config_hash": config_hash(cfg), "seed": seed,
            "config": json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))}
    if extra:
        prov.update(extra)
    return prov


def _run_filter(cfg, p, ou, t, seed, threads):
    a = _analytic(p, ou, t)
    cols = [t, t * p.r] + [a[k] for k in FILTER_COLUMNS[2:7]]
    if cfg.run.n_trajectories > 0:
        mse, se, _ = _empirical(p, ou, t, cfg.run.n_trajectories, seed, threads)
    else:
        mse = se = np.full(len(t), np.nan)
    return [CsvTable("filter", FILTER_COLUMNS, np.column_stack(cols + [mse, se]))]


def _run_bounds(cfg, p, ou, t, seed, threads):
    cs = _quiet_cs(t, p, ou)
    cols = ["t", "t_S", "cs_limit", "cs_limit_short", "cs_limit_long", "fisher_continuum",
            "cs_limit_qB0"]
    data = np.column_stack([t, t * p.r, cs.value, cs.short_time,
                            np.full(len(t), cs.long_time), fisher_continuum(t, p, ou),
                            _quiet_cs(t, p, replace(ou, q_B=0.0)).value])
    return [CsvTable("bounds", cols, data)]


def _run_simulate(cfg, p, ou, t, seed, threads):
    n = max(cfg.run.n_trajectories, 1)
    T = refined_grid(t, 0.01, _sim_cap(p, float(t[-1])), 1e-6 * float(t[0]))
    idx = np.searchsorted(T, t)

    def work(i):
        f = simulate_ou(ou, 0.0, 0, seed, index=i, times=T)
        c = integrate_conditional(p, f, seed, index=i, check_regime=False)
        y = np.concatenate([[0.0], np.cumsum(c.y_increments)])
        return np.column_stack([np.full(len(t), i), t, t * p.r, f.values[idx],
                                c.jz_mean[idx], c.jz_var[idx], y[idx]])

    rows = np.vstack(_ordered_map(work, range(n), threads))
    return [CsvTable("simulate", ["traj", "t", "t_S", "B", "jz_mean", "jz_var", "y"], rows)]


def _run_oracle(cfg, p, ou, t, seed, threads):
    from .sme import css_state, integrate_sme

    if p.J > 50:
        raise ConfigError("phys.J: the quantum oracle supports J <= 50")
    n = max(cfg.run.n_trajectories, 1)
    t_max = float(t[-1])
    dt = min(1e-2 / p.M, t_max / max(len(t), 100))
    steps = int(math.ceil(t_max / dt))
    dt = t_max / steps
    T = dt * np.arange(steps + 1)
    idx = np.unique(np.clip(np.rint(t / dt).astype(int), 0, steps))

    def work(i):
        f = simulate_ou(ou, dt, steps, seed, index=i)
        g = integrate_conditional(p, f, seed, index=i, check_regime=False)
        s = integrate_sme(css_state(p.J), p, f, seed, index=i, store_every=0)
        rows = np.column_stack([np.full(len(idx), i), T[idx], T[idx] * p.r, s.jx[idx],
                                s.jz[idx], s.var_z[idx], g.jz_mean[idx], g.jz_var[idx]])
        summ = [i, float(np.max(np.abs(s.var_z - g.jz_var))), s.trace_error, s.min_eigenvalue]
        return rows, summ

    res = _ordered_map(work, range(n), threads)
    main = CsvTable("oracle", ["traj", "t", "t_S", "jx_sme", "jz_sme", "var_z_sme",
                               "jz_gauss", "var_z_gauss"], np.vstack([r[0] for r in res]))
    summ = CsvTable("oracle_summary", ["traj", "max_abs_var_diff", "trace_error",
                                       "min_eigenvalue"], np.array([r[1] for r in res]))
    return [main, summ]


def sweep(cfg: ExperimentConfig, threads=None, allow_out_of_regime=False,
          seed: int | None = None) -> CsvTable:
    """One row per axis value with all analytic quantities (plus empirical MSE
    when ``n_trajectories`` > 0, seeded per value from (master_seed, index))."""
    seed = cfg.run.master_seed if seed is None else seed
    sw = cfg.run.sweep
    p0, ou0 = fold_gamma_z(cfg.phys), cfg.ou
    if sw is None or sw.axis == "t":
        t = np.asarray(sw.values) if sw is not None else _output_times(cfg.grid, p0.r)
        _check_regime(p0, ou0, float(t[-1]), allow_out_of_regime)
        a = _analytic(p0, ou0, t)
        seeds = [_derived_seed(seed, i) for i in range(len(t))]
        cols = {"value": t, "t": t, "t_S": t * p0.r, **a}
        if cfg.run.n_trajectories > 0:
            emp = [_empirical(p0, ou0, t[i:i + 1], cfg.run.n_trajectories, s, threads)[:2]
                   for i, s in enumerate(seeds)]
            cols["empirical_mse"] = np.array([e[0][0] for e in emp])
            cols["empirical_stderr"] = np.array([e[1][0] for e in emp])
        cols["seed_index"] = np.arange(len(t), dtype=float)
        return CsvTable("sweep_t", list(cols), np.column_stack(list(cols.values())),
                        _provenance(cfg, seed, {"axis": "t"}))
    if sw.t is None and sw.t_S is None:
        raise ConfigError("run.sweep: give t or t_S for a non-time axis")
    tval = sw.t if sw.t is not None else sw.t_S

    def work(item):
        i, v = item
        p = p0
        ou = ou0
        if sw.axis == "J":
            p = replace(p0, J=v)
        elif sw.axis == "gamma_y":
            p = replace(p0, gamma_y=v)
        else:
            ou = replace(ou0, q_B=v)
        t = tval if sw.t is not None else tval / p.r
        _check_regime(p, ou, t, allow_out_of_regime)
        tt = np.array([t])
        a = _analytic(p, ou, tt)
        row = [v, t, t * p.r] + [float(a[k][0]) for k in FILTER_COLUMNS[2:7]]
        if cfg.run.n_trajectories > 0:
            mse, se, _ = _empirical(p, ou, tt, cfg.run.n_trajectories,
                                    _derived_seed(seed, i), 1)
            row += [float(mse[0]), float(se[0])]
        return row + [float(i)]

    rows = _ordered_map(work, enumerate(sw.values), threads)
    cols = ["value", "t", "t_S"] + FILTER_COLUMNS[2:7]
    if cfg.run.n_trajectories > 0:
        cols += ["empirical_mse", "empirical_stderr"]
    cols.append("seed_index")
    return CsvTable(f"sweep_{sw.axis}", cols, np.array(rows),
                    _provenance(cfg, seed, {"axis": sw.axis}))


def run_experiment(cfg: ExperimentConfig, threads=None, allow_out_of_regime=False,
                   seed: int | None = None) -> list:
    """Run the configured kind and return its tables (deterministic in seed)."""
    seed = cfg.run.master_seed if seed is None else int(seed)
    kind = cfg.run.kind
    if kind == "figure":
        tab = reproduce_figure(cfg.run.figure, seed=seed)
        tab.provenance = {**_provenance(cfg, seed), **tab.provenance}
        return [tab]
    if kind in ("sweep_time", "sweep_J"):
        return [sweep(cfg, threads, allow_out_of_regime, seed)]
    p = fold_gamma_z(cfg.phys)
    ou = cfg.ou
    t = _output_times(cfg.grid, p.r)
    _check_regime(p, ou, float(t[-1]), allow_out_of_regime)
    fn = {"filter": _run_filter, "bounds": _run_bounds, "simulate": _run_simulate,
          "oracle": _run_oracle}[kind]
    tables = fn(cfg, p, ou, t, seed, threads)
    extra = {}
    if cfg.phys.gamma_z:
        extra["record_scale"] = repr(p.record_scale)
    for tab in tables:
        tab.provenance = _provenance(cfg, seed, extra)
    return tables


# figures -------------------------------------------------------------------


def _fig_squeezing(gamma_y, noiseless):
    p = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0, gamma_y=gamma_y)
    tS = np.geomspace(1e-10, 1.0, 400)
    t = tS / p.r
    xi2, xs, xl = squeezing(t, p)
    cols = {"t_S": tS, "t": t, "xi2": xi2, "xi2_short": xs, "xi2_long": xl}
    if noiseless:
        cols["xi2_noiseless"] = 2.0 * p.J * variance_noiseless(t, p) / jx_approx(t, p) ** 2
    return cols, {"t_S_star": repr(variance_regimes(p).t_star * p.r)}


def _fig3(seed):
    p = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0, gamma_y=0.01)
    ou = OuParams(chi=0.0, q_B=100.0, sigma0_sq=INFINITE, B0=0.0)
    tS = np.geomspace(1e-8, 1.0, 300)
    t = tS / p.r
    T = refined_grid(t, 0.01, t[-1] / 2e4, 1e-6 * t[0])
    idx = np.searchsorted(T, t)
    f = simulate_ou(ou, 0.0, 0, seed, times=T)
    c = integrate_conditional(p, f, seed, check_regime=False, variance="exact")
    # running time average by the trapezoid rule on the fine grid
    I = np.concatenate([[0.0], np.cumsum(0.5 * (f.values[1:] + f.values[:-1]) * np.diff(T))])
    ci = 2.0 * np.sqrt([time_average_stats(ou, x).variance for x in t])
    xi2 = squeezing(t, p)[0]
    p0 = replace(p, gamma_y=0.0)
    a = _analytic(p, ou, t)
    cols = {
        "t_S": tS, "t": t, "B": f.values[idx], "B_bar": I[idx] / t,
        "B_bar_ci": ci, "B_bar_bound": np.full(len(t), math.sqrt(2.0) * p.r / p.gamma),
        "jz_over_J": c.jz_mean[idx] / p.J, "xi2": xi2,
        "xi2_noiseless": 2.0 * p.J * variance_exact(t, p0) / jx_approx(t, p0) ** 2,
        "Sigma22": a["Sigma22"], "noiseless_scaling": a["amse_noiseless"],
        "cs_scaling": p.gamma_y / (p.gamma**2 * t), "steady_state": a["steady_state"],
    }
    return cols, {}


def _fig4():
    p = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0)
    tS = np.geomspace(1e-8, 1.0, 300)
    t = tS / p.r
    m = build_model(p, OuParams())
    short, long = amse_noiseless_asymptotes(t, p)
    return {"t_S": tS, "t": t, "amse_noiseless": amse_noiseless(t, INFINITE, p),
            "Sigma22": integrate_riccati(INFINITE, t, m)[:, 1, 1],
            "short_time": short, "long_time": long}, {"J": repr(p.J)}


FIG5_OU = OuParams(chi=0.0, q_B=100.0, sigma0_sq=INFINITE)


def _fig5(J):
    p = PhysParams(J=J, gamma=1e6, M=1e5, eta=1.0, gamma_y=0.1)
    tS = np.geomspace(1e-8, 1.0, 200)
    t = tS / p.r
    return {"t_S": tS, "t": t, **_analytic(p, FIG5_OU, t)}, {}


def _fig6(t_S):
    base = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0, gamma_y=0.1)
    Js = np.geomspace(1e2, 1e12, 121)
    t = t_S / base.r
    tt = np.array([t])
    rows = [[J] + [float(v[0]) for v in _analytic(replace(base, J=J), FIG5_OU, tt).values()]
            for J in Js]
    keys = ["J", "Sigma22", "cs_limit", "cs_limit_qB0", "steady_state", "amse_noiseless"]
    data = np.array(rows)
    return {k: data[:, i] for i, k in enumerate(keys)}, {"t_S": repr(t_S), "t": repr(t)}


def _figA1(seed):
    p = PhysParams(J=1e7, gamma=1e6, M=1e5, eta=1.0, gamma_y=1.0)
    tS = np.linspace(0.0, 1.0, 1001)
    t = tS / p.r
    cols = {"t_S": tS, "t": t}
    for q, tag in ((100.0, "qB1e2"), (1e4, "qB1e4")):
        ou = OuParams(q_B=q)
        err, B, Bb = jx_relative_error(p, ou, t, 1, seed)
        ci = np.concatenate([[0.0], [2.0 * math.sqrt(time_average_stats(ou, x).variance)
                                     for x in t[1:]]])
        cols.update({f"B_{tag}": B[0], f"B_bar_{tag}": Bb[0], f"B_bar_ci_{tag}": ci,
                     f"jx_exact_{tag}": jx_constant_field(t, Bb[0], p),
                     f"err_pct_{tag}": 100.0 * err[0]})
    cols["jx_approx"] = jx_approx(t, p)
    cols["B_bar_bound"] = np.full(len(t), math.sqrt(2.0) * p.r / p.gamma)
    return cols, {}


def _figB1():
    tS = np.geomspace(1e-10, 1.0, 400)
    cols = {"t_S": tS}
    for gy, tag in ((0.01, "a"), (1e8, "b")):
        p = PhysParams(J=1e9, gamma=1e6, M=1e5, eta=1.0, gamma_y=gy)
        t = tS / p.r
        reg = variance_regimes(p)
        cols.update({f"t_{tag}": t, f"var_{tag}": variance_exact(t, p),
                     f"var_short_{tag}": reg.short_time(t), f"var_long_{tag}": reg.long_time(t)})
    return cols, {}


def reproduce_figure(name: str, seed: int = 0) -> CsvTable:
    """Curves of a named figure, one column per plotted line."""
    builders = {
        "fig2a": lambda: _fig_squeezing(0.01, True),
        "fig2b": lambda: _fig_squeezing(1e8, False),
        "fig3": lambda: _fig3(seed),
        "fig4": _fig4,
        "fig5_main": lambda: _fig5(1e9),
        "fig5_inset": lambda: _fig5(1e5),
        "fig6_main": lambda: _fig6(1e-4),
        "fig6_inset": lambda: _fig6(1e-2),
        "figA1": lambda: _figA1(seed),
        "figB1": _figB1,
    }
    if name not in builders:
        raise ConfigError(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")
    cols, notes = builders[name]()
    data = np.column_stack([np.asarray(v, dtype=float) for v in cols.values()])
    return CsvTable(name, list(cols), data, {"figure": name, "seed": seed, **notes})
