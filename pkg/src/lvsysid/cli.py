"""Command-line interface.

Settings are layered: dataclass defaults, then ``--config`` (YAML/JSON),
then ``LVSYSID_<FIELD>`` environment variables, then explicit flags.
Exit codes: 0 success, 1 configuration error, 2 a pipeline stage failed.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .exceptions import ConfigError, SysIdError
from .pipeline import (
    CABLES,
    STAGES,
    ScenarioConfig,
    _load_grid,
    apply_env,
    run_cable_sweep,
    run_montecarlo,
    run_pipeline,
    topology_states,
    trial_seeds,
)
from .simulate import NoiseModel, export_measurements, import_measurements, measure, profiles_for_grid, simulate

log = logging.getLogger("lvsysid")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2

# each stage with the stages it consumes, in pipeline order
REQUIRES = {
    "switches": ["switches"],
    "phases": ["switches", "phases"],
    "ztot": ["switches", "phases", "ztot"],
    "cables": ["switches", "phases", "ztot", "cables"],
    "closed-form": ["switches", "phases", "closed_form"],
    "all": list(STAGES),
}


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    return [int(x) for x in _floats(text)]


def _sign(text):
    table = {"+": 1.0, "+1": 1.0, "1": 1.0, "-": -1.0, "-1": -1.0}
    if text not in table:
        raise argparse.ArgumentTypeError("energy sign must be + or -")
    return table[text]


def _scenario_flags(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--config", help="YAML or JSON scenario file")
    g.add_argument("--grid", help="grid YAML file (default: bundled fixture grid)")
    g.add_argument("--topology", choices=["tree", "meshed"])
    g.add_argument("--kind", choices=["pmu", "npmu"], help="measurement device kind")
    g.add_argument("--dt", type=int, help="resolution in seconds")
    g.add_argument("--days", type=int)
    g.add_argument("--noise", type=float, dest="noise", help="3-sigma relative noise on voltage and current")
    g.add_argument("--three-sigma-v", type=float)
    g.add_argument("--three-sigma-i", type=float)
    g.add_argument("--three-sigma-angle", type=float, help="3-sigma phase-angle noise in rad")
    g.add_argument("--no-scramble", action="store_true", help="keep the true phase labelling")
    g.add_argument("--samples", type=int, help="use only the first N steps for the estimators")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", default="lvsysid-out", help="output directory")
    g.add_argument("-v", "--verbose", action="store_true")


def _method_flags(p):
    g = p.add_argument_group("methods")
    g.add_argument("--switch-epsilon", type=float, help="switch threshold in A")
    g.add_argument("--switch-window", type=int, help="steps used by the switch test")
    g.add_argument("--sense", choices=["min", "max"], help="assignment sense for NPMU phase matching")
    g.add_argument("--weighting", choices=["power", "uniform"])
    g.add_argument("--weight-exponent", type=float)
    g.add_argument("--current-floor", type=float, help="drop steps with inflow below this (A)")
    g.add_argument("--cable-source", choices=["estimate", "exact"],
                   help="total impedance fed to cable typing")
    g.add_argument("--energy-sign", type=_sign, help="+ or -")
    g.add_argument("--energy-mode", choices=["hard", "soft", "off"])
    g.add_argument("--no-energy-constraint", action="store_true", help="same as --energy-mode off")
    g.add_argument("--max-steps", type=int, help="time blocks used by the closed-form solver")


def _sweep_flags(p):
    g = p.add_argument_group("sweep")
    g.add_argument("--experiment", choices=["pipeline", "cables"])
    g.add_argument("--trials", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--noise-grid", type=_floats)
    g.add_argument("--dt-grid", type=_ints)
    g.add_argument("--samples-grid", type=_ints)
    g.add_argument("--cable-subsystem")
    g.add_argument("--sigma-z", type=_floats, help="noise std on the total impedance (ohm), comma list")
    g.add_argument("--sigma-length", type=_floats, help="noise std on lengths (km), comma list")


FLAG_FIELDS = (
    "grid", "topology", "kind", "dt", "days", "three_sigma_v", "three_sigma_i", "three_sigma_angle",
    "samples", "seed", "switch_epsilon", "switch_window", "sense", "weighting", "weight_exponent",
    "current_floor", "cable_source", "energy_sign", "energy_mode", "max_steps", "experiment", "trials",
    "workers", "noise_grid", "dt_grid", "samples_grid", "cable_subsystem", "sigma_z", "sigma_length",
)


def build_parser():
    p = _Parser(prog="lvsysid", description="Identify switch states, phases, impedances and cable types.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a scenario and export its measurements")
    _scenario_flags(s)

    i = sub.add_parser("identify", help="run identification stages and write a report")
    i.add_argument("stage", choices=list(REQUIRES))
    i.add_argument("--measurements", help="directory written by 'simulate' (default: simulate in memory)")
    i.add_argument("--only", action="store_true",
                   help="run just this stage; upstream results are taken from ground truth")
    _scenario_flags(i)
    _method_flags(i)
    _sweep_flags(i)

    m = sub.add_parser("montecarlo", help="repeat the pipeline over trials and sweep cells")
    m.add_argument("--stages", help="comma list of stages (default: from config)")
    _scenario_flags(m)
    _method_flags(m)
    _sweep_flags(m)

    r = sub.add_parser("report", help="print a summary of a report or sweep directory")
    r.add_argument("path", help="directory holding report.json or *_summary.json")
    return p


def resolve_config(args, environ=None):
    """Defaults < config file < environment < flags."""
    config = ScenarioConfig.load(args.config) if getattr(args, "config", None) else ScenarioConfig()
    config = apply_env(config, environ)
    changes = {f: getattr(args, f) for f in FLAG_FIELDS if getattr(args, f, None) is not None}
    if getattr(args, "noise", None) is not None:
        changes.setdefault("three_sigma_v", args.noise)
        changes.setdefault("three_sigma_i", args.noise)
    if getattr(args, "no_scramble", False):
        changes["scramble"] = False
    if getattr(args, "no_energy_constraint", False):
        changes["energy_mode"] = "off"
    if getattr(args, "stages", None):
        changes["stages"] = [s.strip() for s in args.stages.split(",") if s.strip()]
    if getattr(args, "stage", None):
        changes["stages"] = [args.stage.replace("-", "_")] if args.only else REQUIRES[args.stage]
    return config.replace(**changes) if changes else config


def _write_config(config, out):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_simulate(args, config):
    out = Path(args.out)
    g = _load_grid(config)
    p_seed, n_seed, s_seed = trial_seeds(config.seed, 0)
    profiles = profiles_for_grid(g, dt=config.dt, T=config.T, seed=p_seed)
    sim = simulate(g, profiles, topology_states(g, config.topology, config.switch_states))
    noise = NoiseModel(config.three_sigma_v, config.three_sigma_i, n_seed, config.three_sigma_angle)
    meas = measure(sim, noise, config.kind, config.scramble, s_seed)
    export_measurements(meas, out)
    _write_config(config, out)
    print(f"wrote {len(meas.nodes)} node tables ({meas.T} steps) to {out}")
    return EXIT_OK


def cmd_identify(args, config):
    out = Path(args.out)
    if args.stage == "cables" and config.sigma_z and args.sigma_z is not None:
        # explicit noise levels: misclassification heat table on the exact impedance
        result = run_cable_sweep(config.replace(experiment=CABLES))
        result.write(out, "cables_sweep")
        _write_config(config, out)
        print(_heat_text(result.summary["heat_table"]))
        return EXIT_OK
    meas = None
    if args.measurements:
        try:
            meas = import_measurements(args.measurements)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read measurements from {args.measurements}: {exc}") from exc
    report = run_pipeline(config, measurements=meas)
    report.write(out)
    _write_config(config, out)
    print(summarize_report(report.to_dict()))
    return EXIT_STAGE if report.failed else EXIT_OK


def cmd_montecarlo(args, config):
    out = Path(args.out)
    result = run_montecarlo(config)
    name = "cables_sweep" if config.experiment == CABLES else "montecarlo"
    result.write(out, name)
    _write_config(config, out)
    print(f"wrote {len(result.rows)} rows to {out / (name + '.csv')}")
    failed = [r for r in result.rows if r["metric"].startswith("stage_failed") and r["value"]]
    failed += [r for r in result.rows if r["metric"] == "trial_failed"]
    if failed:
        log.warning("%d trial/stage failures recorded", len(failed))
    return EXIT_OK


def cmd_report(args):
    path = Path(args.path)
    if (path / "report.json").exists():
        print(summarize_report(json.loads((path / "report.json").read_text())))
        return EXIT_OK
    summaries = sorted(path.glob("*_summary.json"))
    if not summaries:
        raise ConfigError(f"no report.json or *_summary.json in {path}")
    for s in summaries:
        doc = json.loads(s.read_text())
        print(f"# {s.name}")
        if "heat_table" in doc:
            print(_heat_text(doc["heat_table"]))
        for c in doc.get("cells", []):
            print(f"cell {c['cell']:>3}  {c['metric']:<32} n={c['n']:<4} mean={c['mean']:.4g} "
                  f"median={c['median']:.4g} q05={c['q05']:.4g} q95={c['q95']:.4g}")
    return EXIT_OK


def summarize_report(doc):
    lines = [f"config {doc['provenance']['config_sha256'][:12]}  seed {doc['provenance']['seed']}"]
    for stage, status in doc["stages"].items():
        lines.append(f"  {stage:<12} {status}")
    if doc["switch_errors"] is not None:
        lines.append(f"switch errors: {doc['switch_errors']}")
    if doc["phase_errors"] is not None:
        lines.append(f"phase errors: {doc['phase_errors']}")
    for r in doc["ztot"]:
        if r["status"] == "ok":
            lines.append(f"ztot {r['subsystem']:<4} {r['z_hat_mohm']:.3f} mOhm vs {r['z_true_mohm']:.3f} "
                         f"({r['rel_error_pct']:+.2f} %)")
        else:
            lines.append(f"ztot {r['subsystem']:<4} {r['reason']}")
    for r in doc["cables"]:
        if r.get("status", "ok") == "ok":
            lines.append(f"cables {r['subsystem']:<4} misclassified {r['misclassified']} ({r['source']})")
        else:
            lines.append(f"cables {r['subsystem']:<4} {r['status']}: {r['reason']}")
    for r in doc["closed_form"]:
        if r["status"] == "ok":
            lines.append(f"closed-form {r['subsystem']:<4} type errors {r['type_errors']}, "
                         f"max error {100 * r['max_rel_error']:.2f} %")
        else:
            lines.append(f"closed-form {r['subsystem']:<4} {r['reason']}")
    return "\n".join(lines)


def _heat_text(table):
    if not table:
        return ""
    segs = [k for k in table[0] if k not in ("sigma_z_ohm", "sigma_length_km")]
    lines = ["sigma_z/ohm  " + " ".join(f"{s:>6}" for s in segs)]
    for row in table:
        lines.append(f"{row['sigma_z_ohm']:<12.1e} " + " ".join(f"{row[s]:6.2f}" for s in segs))
    return "\n".join(lines)


def main(argv=None, environ=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "report":
            return cmd_report(args)
        config = resolve_config(args, environ)
        handler = {"simulate": cmd_simulate, "identify": cmd_identify, "montecarlo": cmd_montecarlo}
        return handler[args.command](args, config)
    except ConfigError as exc:
        print(f"lvsysid: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SysIdError as exc:
        print(f"lvsysid: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
