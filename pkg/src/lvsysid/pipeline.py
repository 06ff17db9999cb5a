"""Scenario configuration, the identification pipeline and Monte-Carlo sweeps.

One pipeline run simulates a day of operation, measures it, and then runs
switch detection, phase identification, total-impedance regression, cable
typing and the joint closed-form estimate. Every stage records a status;
a failing stage only disables the stages that depend on it.
"""

import csv
import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .cables import cable_montecarlo, identify_cables
from .closedform import HARD, OFF, SHARE, SOFT, RAW, ClosedFormIdentifier
from .exceptions import ConfigError, SysIdError
from .grid import (
    CLOSED,
    decompose_subsystems,
    default_grid_path,
    load_grid,
    open_ended,
    subsystem_true_impedance,
    true_type_vector,
)
from .kernels import MAXIMIZE, MINIMIZE
from .phases import IDENTITY, count_phase_errors, identify_phases, unscramble
from .regression import POWER, UNIFORM, estimate_ztot_all
from .simulate import NPMU, PMU, NoiseModel, measure, profiles_for_grid, simulate
from .switches import SwitchStateDetector, count_switch_errors

TREE = "tree"
MESHED = "meshed"
STAGES = ("switches", "phases", "ztot", "cables", "closed_form")
PIPELINE = "pipeline"
ESTIMATE = "estimate"
EXACT = "exact"
CABLES = "cables"
ENV_PREFIX = "LVSYSID_"
DAY = 86400


@dataclass
class ScenarioConfig:
    """Everything that determines a run; two equal configs give equal outputs.

    Noise levels are fractions (``0.005`` is 3 sigma = 0.5 %). ``dt`` is in
    seconds. Sweep axes (``noise_grid``, ``dt_grid``, ``samples_grid``) are
    only read by :func:`run_montecarlo`; an unset axis keeps the base value.
    """

    grid: str = None
    topology: str = TREE
    switch_states: dict = field(default_factory=dict)
    dt: int = 60
    days: int = 1
    kind: str = NPMU
    three_sigma_v: float = 0.0
    three_sigma_i: float = 0.0
    three_sigma_angle: float = None
    scramble: bool = True
    seed: int = 0
    stages: list = field(default_factory=lambda: ["switches", "phases", "ztot", "cables"])
    samples: int = None

    switch_epsilon: float = None
    switch_window: int = None
    sense: str = MAXIMIZE
    weighting: str = POWER
    weight_exponent: float = 2.0
    current_floor: float = 0.5
    cable_source: str = "estimate"
    energy_mode: str = HARD
    energy_sign: float = 1.0
    energy_scaling: str = SHARE
    max_steps: int = 96

    experiment: str = PIPELINE
    trials: int = 1
    noise_grid: list = None
    dt_grid: list = None
    samples_grid: list = None
    cable_subsystem: str = "IV"
    sigma_z: list = field(default_factory=lambda: [1e-4, 2e-4, 5e-4, 1e-3])
    sigma_length: list = None
    workers: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def T(self):
        return int(self.days * DAY // self.dt)

    def validate(self):
        def bad(msg):
            raise ConfigError(msg)

        if self.topology not in (TREE, MESHED):
            bad(f"topology must be {TREE!r} or {MESHED!r}, got {self.topology!r}")
        if self.kind not in (PMU, NPMU):
            bad(f"kind must be {PMU!r} or {NPMU!r}, got {self.kind!r}")
        for name in ("dt", "days", "trials", "workers", "max_steps"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                bad(f"{name} must be a positive integer, got {v!r}")
        for dt in [self.dt] + list(self.dt_grid or []):
            if dt % 60 or (self.days * DAY) % dt:
                bad(f"dt={dt} must be a multiple of 60 s that divides the horizon")
        for name in ("three_sigma_v", "three_sigma_i", "current_floor"):
            if getattr(self, name) < 0:
                bad(f"{name} must be non-negative")
        if self.three_sigma_angle is not None and self.three_sigma_angle < 0:
            bad("three_sigma_angle must be non-negative")
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            bad(f"unknown stages {sorted(unknown)}; choose from {list(STAGES)}")
        if self.sense not in (MINIMIZE, MAXIMIZE):
            bad(f"sense must be 'min' or 'max', got {self.sense!r}")
        if self.weighting not in (POWER, UNIFORM):
            bad(f"weighting must be {POWER!r} or {UNIFORM!r}")
        if self.cable_source not in (ESTIMATE, EXACT):
            bad(f"cable_source must be {ESTIMATE!r} or {EXACT!r}, got {self.cable_source!r}")
        if self.energy_mode not in (HARD, SOFT, OFF):
            bad(f"energy_mode must be one of hard, soft, off, got {self.energy_mode!r}")
        if self.energy_sign not in (1, -1):
            bad("energy_sign must be +1 or -1")
        if self.energy_scaling not in (SHARE, RAW):
            bad(f"energy_scaling must be {SHARE!r} or {RAW!r}")
        if self.experiment not in (PIPELINE, CABLES):
            bad(f"experiment must be {PIPELINE!r} or {CABLES!r}")
        for name in ("noise_grid", "dt_grid", "samples_grid", "sigma_z"):
            v = getattr(self, name)
            if v is not None and len(v) == 0:
                bad(f"sweep grid {name} must not be empty")
        if self.sigma_length is not None and len(self.sigma_length) != len(self.sigma_z):
            bad("sigma_length needs one value per sigma_z level")
        if self.samples is not None and not 2 <= self.samples <= self.T:
            bad(f"samples must lie in [2, {self.T}]")
        if self.seed < 0:
            bad("seed must be non-negative")

    def to_dict(self):
        return asdict(self)

    def sha256(self):
        blob = json.dumps(_jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return ScenarioConfig(**d)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        """Read a YAML or JSON config file."""
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(doc)


def apply_env(config, environ=None):
    """Override config fields from ``LVSYSID_<FIELD>`` variables (YAML-parsed values)."""
    environ = os.environ if environ is None else environ
    changes = {}
    for f in fields(ScenarioConfig):
        key = ENV_PREFIX + f.name.upper()
        if key in environ:
            try:
                changes[f.name] = yaml.safe_load(environ[key])
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {key}: {exc}") from exc
    return config.replace(**changes) if changes else config


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ------------------------------------------------------------------ pipeline


def topology_states(g, topology, overrides=None):
    """Switch states of a scenario: the file's states, with every tie closed when meshed."""
    states = g.true_switch_states()
    if topology == MESHED:
        for sw in g.switches:
            if sw.is_tie:
                states[sw.id] = CLOSED
    states.update(overrides or {})
    return states


def trial_seeds(seed, trial):
    """Profile, noise and scramble seeds of one trial; shared by all sweep cells."""
    return [int(s) for s in np.random.SeedSequence([seed, trial]).generate_state(3)]


@dataclass
class IdentificationReport:
    """Estimates of one run, each paired with its ground truth and error."""

    provenance: dict
    stages: dict = field(default_factory=dict)
    switches: list = field(default_factory=list)
    switch_errors: int = None
    phases: list = field(default_factory=list)
    phase_errors: int = None
    ztot: list = field(default_factory=list)
    cables: list = field(default_factory=list)
    closed_form: list = field(default_factory=list)

    @property
    def failed(self):
        return any(s.startswith("failed") for s in self.stages.values())

    def to_dict(self):
        return _jsonable(asdict(self))

    def metrics(self):
        """Flat ``{metric: value}`` view used by the Monte-Carlo tables."""
        m = {}
        if self.switch_errors is not None:
            m["switch_errors"] = self.switch_errors
        if self.phase_errors is not None:
            m["phase_errors"] = self.phase_errors
        for r in self.ztot:
            if r["status"] == "ok":
                m[f"ztot_rel_error:{r['subsystem']}"] = r["rel_error"]
        for r in self.cables:
            if r["status"] == "ok":
                m[f"cable_misclassified:{r['subsystem']}"] = r["misclassified"]
        for r in self.closed_form:
            if r["status"] == "ok":
                m[f"cf_max_rel_error:{r['subsystem']}"] = r["max_rel_error"]
                m[f"cf_type_errors:{r['subsystem']}"] = r["type_errors"]
        for stage, status in self.stages.items():
            m[f"stage_failed:{stage}"] = int(status.startswith("failed"))
        return m

    def write(self, directory):
        """``report.json`` plus one CSV table per stage."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        doc = self.to_dict()
        (directory / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        for name in ("switches", "phases", "ztot", "cables", "closed_form"):
            rows = doc[name]
            if rows:
                write_csv(directory / f"{name}.csv", rows)


def write_csv(path, rows, columns=None):
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, tuple)):
        return " ".join(str(v) for v in x)
    return str(x)


def _load_grid(config):
    path = config.grid or default_grid_path()
    if not Path(path).exists():
        raise ConfigError(f"grid file {path} does not exist")
    return load_grid(path)


def _fail(exc):
    return f"failed: {type(exc).__name__}: {exc}"


def run_pipeline(config, trial=0, measurements=None):
    """Simulate, measure and identify; returns an :class:`IdentificationReport`.

    ``measurements`` replaces the simulated data (e.g. imported from disk);
    ground truth still comes from the grid file.
    """
    g = _load_grid(config)
    truth_states = topology_states(g, config.topology, config.switch_states)
    p_seed, n_seed, s_seed = trial_seeds(config.seed, trial)
    report = IdentificationReport(
        provenance={
            "config_sha256": config.sha256(),
            "seed": config.seed,
            "trial": trial,
            "profile_seed": p_seed,
            "noise_seed": n_seed,
            "scramble_seed": s_seed,
            "version": _version(),
            "grid": Path(config.grid or default_grid_path()).name,
        }
    )
    noise = NoiseModel(config.three_sigma_v, config.three_sigma_i, n_seed, config.three_sigma_angle)
    if measurements is None:
        profiles = profiles_for_grid(g, dt=config.dt, T=config.T, seed=p_seed)
        sim = simulate(g, profiles, truth_states)
        meas = measure(sim, noise, config.kind, config.scramble, s_seed)
    else:
        meas = measurements
    run = set(config.stages)

    # switch states
    states = truth_states
    if "switches" in run:
        try:
            det = SwitchStateDetector(config.switch_epsilon, config.switch_window, noise).fit(g, meas)
            states = dict(truth_states)
            states.update(det.states_)
            report.switches = [
                {"switch": k, "estimate": d.state, "truth": truth_states[k], "statistic_a": d.statistic,
                 "threshold_a": d.threshold, "error": int(d.state != truth_states[k])}
                for k, d in sorted(det.decisions_.items())
            ]
            report.switch_errors = count_switch_errors(det.states_, truth_states)
            report.stages["switches"] = "ok"
        except SysIdError as exc:
            report.stages["switches"] = _fail(exc)
    subsystems = decompose_subsystems(g, states)

    # phases
    truth_perm = {n: tuple(meas.scramble.get(n, IDENTITY)) for n in meas.nodes}
    phased = None
    if "phases" in run:
        try:
            assign = identify_phases(g, meas, states, config.sense)
            report.phases = [
                {"node": n, "estimate": a.label(), "truth": "".join("ABC"[p] for p in truth_perm[n]),
                 "method": a.method, "objective": a.objective, "tie": int(a.tie),
                 "error": int(tuple(a.perm) != truth_perm[n])}
                for n, a in sorted(assign.items(), key=lambda kv: g.node_index(kv[0]))
                if n in truth_perm
            ]
            report.phase_errors = count_phase_errors(assign, truth_perm)
            report.stages["phases"] = "ok"
            phased = unscramble(meas, assign)
        except SysIdError as exc:
            report.stages["phases"] = _fail(exc)
    else:
        phased = unscramble(meas, {n: _Perm(p) for n, p in truth_perm.items()})
    if phased is not None and config.samples is not None:
        phased = phased.window(0, config.samples)

    # total impedance and cable types
    fits = None
    if "ztot" in run or "cables" in run:
        if phased is None:
            report.stages["ztot"] = "skipped: phase identification failed"
        else:
            fits = estimate_ztot_all(g, phased, states, subsystems, config.weighting,
                                     config.weight_exponent, config.current_floor)
            report.ztot = [_ztot_row(f) for f in fits.values()]
            report.stages["ztot"] = "ok"
    if "cables" in run:
        if config.cable_source == ESTIMATE and fits is None:
            report.stages["cables"] = "skipped: no total-impedance estimates"
        else:
            report.cables = _cable_rows(g, subsystems, fits, config.cable_source)
            report.stages["cables"] = "ok"

    if "closed_form" in run:
        if phased is None:
            report.stages["closed_form"] = "skipped: phase identification failed"
        else:
            report.closed_form = _closed_form_rows(g, phased, states, subsystems, config)
            failed = [r for r in report.closed_form if r["status"] != "ok"]
            report.stages["closed_form"] = (
                "ok" if not failed else "failed: " + "; ".join(f"{r['subsystem']}: {r['reason']}" for r in failed)
            )
    return report


class _Perm:
    """Minimal stand-in for a phase assignment when phases are taken as known."""

    def __init__(self, perm):
        self.perm = tuple(perm)


def _ztot_row(f):
    return {
        "subsystem": f.subsystem,
        "z_hat_mohm": f.z_hat * 1e3,
        "z_true_mohm": f.z_true * 1e3,
        "rel_error": f.rel_error if f.estimated else float("nan"),
        "rel_error_pct": 100 * f.rel_error if f.estimated else float("nan"),
        "n_samples": f.n_samples,
        "scheme": f.scheme,
        "z_lb_min_mohm": f.z_lb_min * 1e3,
        "z_ub_max_mohm": f.z_ub_max * 1e3,
        "swapped": int(f.swapped),
        "status": f.status,
        "reason": f.reason,
    }


def _cable_rows(g, subsystems, fits, source):
    """Cable typing from the regression estimate, or from the exact total impedance."""
    rows = []
    for sub in subsystems:
        if sub.deenergized:
            continue
        if source == EXACT:
            z = subsystem_true_impedance(sub, g.catalog)[2]
        elif fits[sub.id].estimated:
            z = fits[sub.id].z_hat
        else:
            continue
        truth = true_type_vector(sub, g.catalog)
        row = {"subsystem": sub.id, "source": source, "truth": [g.catalog[i].id for i in truth],
               "z_in_mohm": z * 1e3}
        if not np.isfinite(z) or z <= 0:
            # noisy regressions can extrapolate below zero; no type vector fits
            row.update(status="skipped", reason="non-positive total-impedance estimate")
            rows.append(row)
            continue
        a = identify_cables(z, sub.lengths, g.catalog.z_per_len)
        row.update(
            estimate=list(a.labels(g.catalog)), z_types_mohm=a.z * 1e3, residual=a.residual,
            tie=int(a.tie), misclassified=sum(int(x != y) for x, y in zip(a.types, truth)),
            status="ok", reason="",
        )
        rows.append(row)
    return rows


def _closed_form_rows(g, meas, states, subsystems, config):
    rows = []
    for sub in subsystems:
        if sub.deenergized:
            continue
        truth = true_type_vector(sub, g.catalog)
        z_true = g.catalog.z_per_len[list(truth)] * sub.lengths / 1000.0
        row = {"subsystem": sub.id, "truth": [g.catalog[i].id for i in truth]}
        try:
            est = ClosedFormIdentifier(
                g.catalog, config.energy_mode, config.energy_sign, config.energy_scaling, config.max_steps
            ).fit(sub, meas)
        except SysIdError as exc:
            row.update(status="failed", reason=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            continue
        sol = est.solution_
        rel = (est.impedances_ - z_true) / z_true
        row.update(
            estimate=[g.catalog[i].id for i in est.types_],
            z_hat_mohm=[round(float(z) * 1e3, 6) for z in est.impedances_],
            z_true_mohm=[round(float(z) * 1e3, 6) for z in z_true],
            max_rel_error=float(np.max(np.abs(rel))),
            type_errors=sum(int(a != b) for a, b in zip(est.types_, truth)),
            objective=sol.objective,
            ordering_residual=sol.ordering_residual,
            energy_residual=sol.energy_residual,
            infeasible_candidates=sum(1 for c in sol.candidates if c[2] != "ok"),
            open_ended=int(open_ended(g, sub, states)),
            status="ok",
            reason="",
        )
        rows.append(row)
    return rows


def _version():
    from . import __version__

    return __version__


# --------------------------------------------------------------- Monte-Carlo


def sweep_cells(config):
    """Cartesian product of the sweep axes, in a fixed order."""
    noise = config.noise_grid or [None]
    dts = config.dt_grid or [config.dt]
    samples = config.samples_grid or [config.samples]
    return [
        {"cell": i, "noise": n, "dt": d, "samples": s}
        for i, (n, d, s) in enumerate(itertools.product(noise, dts, samples))
    ]


def cell_config(config, cell):
    changes = {"dt": cell["dt"], "samples": cell["samples"], "noise_grid": None, "dt_grid": None,
               "samples_grid": None}
    if cell["noise"] is not None:
        changes.update(three_sigma_v=cell["noise"], three_sigma_i=cell["noise"])
    return config.replace(**changes)


def _run_trial(job):
    config, cell, trial = job
    try:
        rep = run_pipeline(cell_config(config, cell), trial)
        metrics = rep.metrics()
    except SysIdError as exc:
        metrics = {"trial_failed": 1, f"error:{type(exc).__name__}": 1}
    return cell, trial, metrics


@dataclass
class SweepResult:
    rows: list  # long format, one row per (cell, trial, metric)
    summary: dict

    def write(self, directory, name="montecarlo"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_csv(directory / f"{name}.csv", self.rows)
        (directory / f"{name}_summary.json").write_text(
            json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n"
        )


def run_montecarlo(config):
    """Repeat the pipeline over trials x sweep cells (or run the cable sweep).

    Seeds depend only on ``(seed, trial)``, so all cells of one trial see the
    same load profiles and noise draws (common random numbers). Rows are
    sorted before they are returned, so the worker count does not change
    the output.
    """
    if config.experiment == CABLES:
        return run_cable_sweep(config)
    jobs = [(config, c, t) for c in sweep_cells(config) for t in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    rows = []
    for cell, trial, metrics in results:
        for metric, value in metrics.items():
            rows.append({
                "cell": cell["cell"], "noise": cell["noise"], "dt": cell["dt"], "samples": cell["samples"],
                "trial": trial, "metric": metric, "value": float(value),
            })
    rows.sort(key=lambda r: (r["cell"], r["trial"], r["metric"]))
    return SweepResult(rows, _summarize(rows, config))


def _summarize(rows, config):
    groups = {}
    for r in rows:
        groups.setdefault((r["cell"], r["metric"]), []).append(r["value"])
    cells = {c["cell"]: c for c in sweep_cells(config)} if config.experiment == PIPELINE else {}
    out = []
    for (cell, metric), vals in sorted(groups.items()):
        v = np.asarray(vals, dtype=float)
        entry = {"cell": cell, "metric": metric, "n": int(v.size), "mean": float(v.mean()),
                 "median": float(np.median(v)), "q05": float(np.quantile(v, 0.05)),
                 "q95": float(np.quantile(v, 0.95)), "min": float(v.min()), "max": float(v.max())}
        entry.update({k: cells[cell][k] for k in ("noise", "dt", "samples")} if cell in cells else {})
        out.append(entry)
    return {
        "provenance": {"config_sha256": config.sha256(), "seed": config.seed, "trials": config.trials,
                       "version": _version()},
        "cells": out,
    }


def run_cable_sweep(config):
    """Per-segment misclassification frequency under noise on the total impedance and lengths.

    Uses the exact total impedance of ``config.cable_subsystem``; one row per
    (sigma level, segment).
    """
    g = _load_grid(config)
    subs = {s.id: s for s in decompose_subsystems(g, topology_states(g, config.topology))}
    if config.cable_subsystem not in subs:
        raise ConfigError(f"unknown subsystem {config.cable_subsystem!r}; have {sorted(subs)}")
    sub = subs[config.cable_subsystem]
    z_true = subsystem_true_impedance(sub, g.catalog)[2]
    truth = true_type_vector(sub, g.catalog)
    rates = cable_montecarlo(z_true, sub.lengths, g.catalog.z_per_len, truth, config.sigma_z,
                             config.trials, config.seed, config.sigma_length)
    rows = []
    sig_len = config.sigma_length or config.sigma_z
    for a, (sz, sl) in enumerate(zip(config.sigma_z, sig_len)):
        for k, seg in enumerate(sub.segments):
            rows.append({"cell": a, "sigma_z_ohm": float(sz), "sigma_length_km": float(sl),
                         "segment": seg.id, "length_m": float(seg.length), "trial": config.trials,
                         "metric": "misclassification_rate", "value": float(rates[a, k])})
    summary = {
        "provenance": {"config_sha256": config.sha256(), "seed": config.seed, "trials": config.trials,
                       "version": _version()},
        "subsystem": sub.id,
        "heat_table": heat_table(rows),
    }
    return SweepResult(rows, summary)


def heat_table(rows):
    """Pivot cable-sweep rows into ``sigma level x segment`` (plot-ready)."""
    segs = list(dict.fromkeys(r["segment"] for r in rows))
    table = []
    for cell in sorted({r["cell"] for r in rows}):
        rs = {r["segment"]: r for r in rows if r["cell"] == cell}
        first = next(iter(rs.values()))
        entry = {"sigma_z_ohm": first["sigma_z_ohm"], "sigma_length_km": first["sigma_length_km"]}
        entry.update({s: rs[s]["value"] for s in segs})
        table.append(entry)
    return table
