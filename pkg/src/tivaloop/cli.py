"""Command-line entry point: run scenarios, validate configs, re-report traces.

Exit codes: 0 success, 1 configuration error, 2 controller divergence,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__, metrics
from .controller import SIGN_MODES, ControllerConfig
from .engine import SimTrace, run_cohort
from .patient import (
    MODE_CORRECTED,
    NonphysicalParameterWarning,
    PARAM_MODES,
    builtin_cohort,
    derive_pk,
    read_cohort,
)
from .pkpd import DEFAULT_PLANT_DT, SCHEMES, StepScheme
from .scenario import BUILTIN_SCENARIOS, NoiseModel, builtin_scenario, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(_apply_config_file(argv, parser))
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


# run-config file keys, mapped onto the corresponding flag destinations
_RUN_CONFIG_KEYS = (
    "scenario", "patients", "outdir", "seed", "jobs", "scheme", "plant_dt_s",
    "coast", "no_traces", "no_summary", "plot_data", "param_mode", "noise_std",
    "no_noise", "eta", "k", "k_u", "em", "u_max", "target_bis",
    "sample_period_s", "sign_mode", "no_antiwindup",
)


def _apply_config_file(argv, parser):
    """Load --config values as parser defaults; explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    try:
        with open(known.config) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {known.config}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid config {known.config}: {exc}") from exc
    unknown = sorted(set(doc) - set(_RUN_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{known.config}: unknown config keys {unknown}; "
                          f"valid: {sorted(_RUN_CONFIG_KEYS)}")
    for sub_action in parser._subparsers._group_actions[0].choices.values():
        defaults = {key: val for key, val in doc.items()
                    if any(a.dest == key for a in sub_action._actions)}
        sub_action.set_defaults(**defaults)
    return argv


class ConfigError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tivaloop",
        description="Closed-loop propofol anesthesia simulation workbench.",
    )
    p.add_argument("--version", action="version", version=f"tivaloop {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="simulate a scenario over selected patients")
    runp.add_argument("--config", default=None, metavar="FILE",
                      help="JSON run config; explicit flags override its values")
    _add_common(runp)
    runp.add_argument("--outdir", default="out", help="output directory (created)")
    runp.add_argument("--seed", type=int, default=42, help="master seed")
    runp.add_argument("--jobs", type=int, default=1, help="parallel workers")
    runp.add_argument("--scheme", choices=SCHEMES, default="exact")
    runp.add_argument("--plant-dt-s", type=float, default=DEFAULT_PLANT_DT * 60.0,
                      help="internal plant step, seconds")
    runp.add_argument("--coast", type=float, default=0.0, metavar="MIN",
                      help="append a no-infusion tail (minutes)")
    runp.add_argument("--no-traces", action="store_true", help="skip per-patient trace files")
    runp.add_argument("--no-summary", action="store_true", help="skip summary files")
    runp.add_argument("--plot-data", action="store_true",
                      help="emit columnar BIS/infusion files for plotting")
    _add_controller_flags(runp)
    runp.set_defaults(func=cmd_run)

    valp = sub.add_parser("validate", help="check scenario/cohort files and derived parameters")
    _add_common(valp)
    valp.set_defaults(func=cmd_validate)

    repp = sub.add_parser("report", help="recompute the metrics table from stored traces")
    repp.add_argument("traces", nargs="+", help="trace CSV files from a previous run")
    repp.add_argument("--channel", choices=("measured", "disturbed", "clean"),
                      default="measured")
    repp.set_defaults(func=cmd_report)

    cohp = sub.add_parser("cohort", help="print the built-in patient table")
    cohp.set_defaults(func=cmd_cohort)
    return p


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="standard",
                   help=f"builtin name {BUILTIN_SCENARIOS} or a scenario JSON file")
    p.add_argument("--patients", default="all",
                   help='"all", comma-separated ids (e.g. "9" or "1,5,13"), or @cohort.csv')
    p.add_argument("--param-mode", choices=PARAM_MODES, default=MODE_CORRECTED)
    p.add_argument("--noise-std", type=float, default=None,
                   help="enable measurement noise with this std (BIS units)")
    p.add_argument("--no-noise", action="store_true", help="strip noise from the scenario")


def _add_controller_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("controller overrides")
    g.add_argument("--eta", type=float, default=None)
    g.add_argument("--k", type=float, default=None)
    g.add_argument("--k-u", type=float, default=None)
    g.add_argument("--em", type=float, default=None)
    g.add_argument("--u-max", type=float, default=None)
    g.add_argument("--target-bis", type=float, default=None)
    g.add_argument("--sample-period-s", type=float, default=None)
    g.add_argument("--sign-mode", choices=SIGN_MODES, default=None)
    g.add_argument("--no-antiwindup", action="store_true")


def _load_scenario(args):
    name = args.scenario
    try:
        if name in BUILTIN_SCENARIOS:
            spec = builtin_scenario(name)
        else:
            spec = load_scenario(name)
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {name}") from exc
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid scenario {name}: {exc}") from exc
    if args.no_noise:
        spec = spec.with_noise(None)
    elif args.noise_std is not None:
        spec = spec.with_noise(NoiseModel(std=args.noise_std))
    return spec


def _load_patients(args):
    sel = args.patients.strip()
    try:
        if sel.startswith("@"):
            return read_cohort(sel[1:])
        cohort = builtin_cohort()
        if sel.lower() == "all":
            return cohort
        ids = [int(tok) for tok in sel.split(",") if tok.strip()]
        by_id = {rec.id: rec for rec in cohort}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ConfigError(f"unknown patient ids {missing}; built-in ids are 1-13")
        return [by_id[i] for i in ids]
    except FileNotFoundError as exc:
        raise ConfigError(f"cohort file not found: {sel[1:]}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad --patients {sel!r}: {exc}") from exc


def _controller_config(args, scenario) -> ControllerConfig:
    cfg = ControllerConfig(target_bis=scenario.target_bis)
    over = {}
    for flag, field in (("eta", "eta"), ("k", "k"), ("k_u", "k_u"), ("em", "em"),
                        ("u_max", "u_max"), ("target_bis", "target_bis"),
                        ("sign_mode", "sign_mode")):
        val = getattr(args, flag)
        if val is not None:
            over[field] = val
    if args.sample_period_s is not None:
        over["sample_period"] = args.sample_period_s / 60.0
    if args.no_antiwindup:
        over["antiwindup"] = False
    try:
        return cfg.with_overrides(**over) if over else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(args) -> int:
    scenario = _load_scenario(args)
    patients = _load_patients(args)
    cfg = _controller_config(args, scenario)
    if cfg.target_bis != scenario.target_bis:
        scenario = replace(scenario, target_bis=cfg.target_bis)
    try:
        scheme = StepScheme(method=args.scheme, dt=args.plant_dt_s / 60.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    try:
        result = run_cohort(patients, scenario, cfg, master_seed=args.seed,
                            param_mode=args.param_mode, scheme=scheme,
                            jobs=args.jobs, coast=args.coast)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    header = _config_header(cfg, scenario, scheme, args)
    written = []
    if not args.no_traces:
        for trace in result.traces:
            path = outdir / f"{scenario.name}_{trace.patient_id:02d}.csv"
            trace.to_csv(path)
            written.append(path)
    if not args.no_summary:
        spath = outdir / f"{scenario.name}_summary.csv"
        _write_summary_csv(spath, result.reports, result.summary, header)
        written.append(spath)
        jpath = outdir / f"{scenario.name}_metrics.json"
        _write_metrics_json(jpath, result, cfg, scenario, args)
        written.append(jpath)
    if args.plot_data:
        written += _write_plot_data(outdir, scenario.name, result.traces, header)

    print(f"ran {len(result.traces)} patient(s) on scenario "
          f"{scenario.name!r} (seed {args.seed}, mode {args.param_mode})")
    if result.summary is not None:
        print(_format_summary_table(result.reports, result.summary))
    for path in written:
        print(f"wrote {path}")
    if result.failures:
        for pid, msg in result.failures:
            print(f"patient {pid}: {msg}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_validate(args) -> int:
    problems = []
    try:
        scenario = _load_scenario(args)
        print(f"scenario {scenario.name!r}: horizon {scenario.horizon} min, "
              f"target BIS {scenario.target_bis}, induction ends {scenario.induction_end} min, "
              f"{len(scenario.events)} event(s), "
              f"noise {'off' if scenario.noise is None else scenario.noise.std}")
    except ConfigError as exc:
        problems.append(str(exc))
        scenario = None
    try:
        patients = _load_patients(args)
    except ConfigError as exc:
        problems.append(str(exc))
        patients = []

    for rec in patients:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NonphysicalParameterWarning)
            try:
                pk = derive_pk(rec.demographics, args.param_mode)
            except ValueError as exc:
                problems.append(f"patient {rec.id}: {exc}")
                continue
        for w in caught:
            print(f"patient {rec.id}: warning: {w.message}")
        print(f"patient {rec.id:2d}: v=({pk.v1:.2f}, {pk.v2:.3f}, {pk.v3:.0f}) l  "
              f"cl=({pk.cl1:.4f}, {pk.cl2:.4f}, {pk.cl3:.3f}) l/min  "
              f"k10={pk.k10:.4f} k12={pk.k12:.4f} k13={pk.k13:.4f} "
              f"k21={pk.k21:.5f} k31={pk.k31:.6f} ke0={pk.ke0} 1/min")

    if problems:
        for prob in problems:
            print(f"error: {prob}", file=sys.stderr)
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def cmd_report(args) -> int:
    traces = []
    for path in args.traces:
        try:
            traces.append(SimTrace.from_csv(path))
        except FileNotFoundError as exc:
            print(f"i/o error: {exc}", file=sys.stderr)
            return EXIT_IO
        except ValueError as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    targets = {t.target_bis for t in traces}
    if len(targets) > 1:
        print(f"error: traces have mixed target BIS values {sorted(targets)}",
              file=sys.stderr)
        return EXIT_CONFIG
    reports = [metrics.compute_report(t, channel=args.channel) for t in traces]
    summary = metrics.summarize_cohort(reports)
    print(_format_summary_table(reports, summary))
    return EXIT_OK


def cmd_cohort(args) -> int:
    print("id  age  height_cm  weight_kg  sex     ec50   e0    emax   gamma")
    for rec in builtin_cohort():
        d, h = rec.demographics, rec.hill
        print(f"{rec.id:2d}  {d.age:3d}  {d.height:9.0f}  {d.weight:9.0f}  "
              f"{d.sex:6s}  {h.ec50:5.2f}  {h.e0:5.1f}  {h.emax:5.1f}  {h.gamma:5.2f}")
    return EXIT_OK


def _config_header(cfg, scenario, scheme, args) -> list:
    """Comment block embedding the effective configuration (auditability)."""
    pairs = [
        ("version", __version__), ("scenario", scenario.name),
        ("horizon_min", scenario.horizon), ("target_bis", cfg.target_bis),
        ("induction_end_min", scenario.induction_end),
        ("noise_std", 0.0 if scenario.noise is None else scenario.noise.std),
        ("master_seed", args.seed), ("param_mode", args.param_mode),
        ("scheme", scheme.method), ("plant_dt_min", scheme.dt),
        ("eta", cfg.eta), ("k", cfg.k), ("k_u", cfg.k_u), ("em", cfg.em),
        ("u_min", cfg.u_min), ("u_max", cfg.u_max),
        ("sample_period_min", cfg.sample_period), ("sign_mode", cfg.sign_mode),
        ("antiwindup", cfg.antiwindup), ("dead_zone", cfg.dead_zone),
        ("closing_threshold", cfg.closing_threshold),
        ("closing_band", cfg.closing_band),
    ]
    return [f"# {key} = {val}" for key, val in pairs]


def _write_summary_csv(path, reports, summary, header) -> None:
    with open(path, "w") as fh:
        for line in header:
            fh.write(line + "\n")
        ids = ",".join(f"p{r.patient_id}" for r in reports)
        fh.write(f"metric,{ids},mean,std,worst,worst_patient\n")
        for name in metrics.METRIC_FIELDS:
            vals = ",".join(repr(getattr(r, name)) for r in reports)
            if summary is not None:
                st = summary.stat(name)
                fh.write(f"{name},{vals},{st.mean!r},{st.std!r},{st.worst!r},"
                         f"{st.worst_patient}\n")
            else:
                fh.write(f"{name},{vals},,,,\n")


def _write_metrics_json(path, result, cfg, scenario, args) -> None:
    doc = {
        "version": __version__,
        "scenario": scenario.name,
        "master_seed": args.seed,
        "param_mode": args.param_mode,
        "controller": {
            "eta": cfg.eta, "k": cfg.k, "k_u": cfg.k_u, "em": cfg.em,
            "u_min": cfg.u_min, "u_max": cfg.u_max,
            "sample_period_min": cfg.sample_period, "target_bis": cfg.target_bis,
            "sign_mode": cfg.sign_mode, "antiwindup": cfg.antiwindup,
            "dead_zone": cfg.dead_zone, "closing_threshold": cfg.closing_threshold,
            "closing_band": cfg.closing_band,
        },
        "reports": {
            str(r.patient_id): {name: _json_num(getattr(r, name))
                                for name in metrics.METRIC_FIELDS}
            for r in result.reports
        },
        "summary": {} if result.summary is None else {
            name: {
                "mean": _json_num(result.summary.stat(name).mean),
                "std": _json_num(result.summary.stat(name).std),
                "worst": _json_num(result.summary.stat(name).worst),
                "worst_patient": result.summary.stat(name).worst_patient,
            }
            for name in metrics.METRIC_FIELDS
        },
        "failures": [{"patient_id": pid, "message": msg}
                     for pid, msg in result.failures],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _json_num(x: float):
    # NaN (e.g. PE metrics of induction-only runs) is not valid JSON
    return None if x != x else x


def _write_plot_data(outdir: Path, name: str, traces, header) -> list:
    paths = []
    for stem, getter in (("bis", lambda tr: tr.bis_measured),
                         ("infusion", lambda tr: tr.u)):
        path = outdir / f"{name}_{stem}.csv"
        cols = [getter(tr) for tr in traces]
        n = min(len(c) for c in cols)
        with open(path, "w") as fh:
            for line in header:
                fh.write(line + "\n")
            columns = ",".join(f"p{tr.patient_id}" for tr in traces)
            fh.write(f"time_min,{columns}\n")
            t = traces[0].t
            for i in range(n):
                row = ",".join(repr(float(c[i])) for c in cols)
                fh.write(f"{float(t[i])!r},{row}\n")
        paths.append(path)
    return paths


def _format_summary_table(reports, summary) -> str:
    lines = []
    header = f"{'metric':<24}" + "".join(f"{'p' + str(r.patient_id):>9}" for r in reports)
    header += f"{'mean':>10}{'std':>9}{'worst':>9}"
    lines.append(header)
    for name in metrics.METRIC_FIELDS:
        row = f"{name:<24}"
        for r in reports:
            row += f"{getattr(r, name):>9.2f}"
        if summary is not None:
            st = summary.stat(name)
            row += f"{st.mean:>10.2f}{st.std:>9.2f}{st.worst:>9.2f}"
        lines.append(row)
    return "\n".join(lines)


if __name__ == "__main__":
    sys.exit(main())
