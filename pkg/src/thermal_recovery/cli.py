"""Command-line entry point: ``thermal-recovery <subcommand> ...``.

Exit status: 0 on success, 2 for bad input, 3 when recovery runs out of its
time budget, 4 when the requested motion is infeasible.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dynamics.model import load_model
from .dynamics.statics import solve_statics
from .errors import (
    ActuationDeficiencyError,
    DegenerateDataError,
    InfeasibleCommandError,
    InvalidInputError,
    InvalidStartError,
    NoStrategyError,
    SingularityError,
    ThermalRecoveryError,
)
from .recovery import RecoveryReport, load_scenario, run_recovery, update_cost_matrix
from .sysid import (
    FitSettings,
    TelemetryLog,
    derivative_filter,
    fit,
    open_loop_prediction,
    squat_stand_schedule,
    synthesize_log,
)
from .thermal_core import load_params, save_params
from .thermal_ik import descend, write_trace

log = logging.getLogger("thermal_recovery")

EXIT_OK, EXIT_INPUT, EXIT_TIMEOUT, EXIT_INFEASIBLE = 0, 2, 3, 4
NORM_RATE_CUTOFF = 0.1  # Hz
DEFAULT_SCENARIO = "hot_right_leg"

_INFEASIBLE = (InfeasibleCommandError, InvalidStartError, NoStrategyError, ActuationDeficiencyError,
               SingularityError)


def _scenario(args):
    overrides = {}
    if getattr(args, "config", None):
        p = Path(args.config)
        if not p.exists():
            raise InvalidInputError(f"config file not found: {p}")
        overrides = yaml.safe_load(p.read_text()) or {}
        if not isinstance(overrides, dict):
            raise InvalidInputError(f"{p}: config must be a mapping")
    if getattr(args, "model", None):
        overrides["model"] = args.model
    sc = load_scenario(args.scenario or DEFAULT_SCENARIO, overrides)
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    return sc


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, data) -> None:
    path.write_text(yaml.safe_dump(data, sort_keys=False))


# ----------------------------------------------------------------- generate


def generated_efforts(sc, gen: dict) -> dict[str, np.ndarray]:
    """Effort channels for synthetic telemetry.

    ``schedule: squat_stand`` (default) alternates signed effort holds on
    every actuator. ``schedule: poses`` cycles the model's named poses and
    takes the static efforts of each.
    """
    duration = float(gen.get("duration", 3000.0))
    fs = float(gen.get("sample_rate", 10.0))
    interval = float(gen.get("interval", 270.0))
    kind = gen.get("schedule", "squat_stand")
    acts = sc.model.actuator_names
    if kind == "squat_stand":
        e = squat_stand_schedule(duration, fs, interval,
                                 gen.get("squat_levels", (40.0, 25.0, 32.0, 18.0)),
                                 gen.get("stand_levels", (-40.0, -25.0, -32.0, -18.0)))
        return {a: e.copy() for a in acts}
    if kind == "poses":
        c = sc.model.contact_config(gen.get("contact", sc.policy.nominal_contact))
        poses = list(gen.get("poses", sc.model.poses))
        table = np.array([solve_statics(sc.model, sc.model.pose(p, c), c).efforts for p in poses])
        n = int(round(duration * fs))
        k = (np.floor(np.arange(n) / fs / interval).astype(int)) % len(poses)
        E = table[k] if n else np.zeros((0, len(acts)))
        return {a: E[:, i] for i, a in enumerate(acts)}
    raise InvalidInputError(f"unknown generate schedule {kind!r}; use 'squat_stand' or 'poses'")


def cmd_generate(args) -> int:
    sc = _scenario(args)
    gen = dict(sc.generate)
    for key in ("duration", "noise"):
        if getattr(args, key, None) is not None:
            gen[key] = getattr(args, key)
    fs = float(gen.get("sample_rate", 10.0))
    efforts = generated_efforts(sc, gen)
    nodes = {n: (sc.scene.params[n], sc.scene.bindings[n]) for n in sc.scene.node_ids}
    tl = synthesize_log(nodes, efforts, fs, float(gen.get("ambient", 25.0)),
                        float(gen.get("noise", 0.1)), sc.seed)
    path = _out(args) / "telemetry.csv"
    tl.write_csv(path)
    print(f"wrote {path} ({len(tl)} samples, {len(nodes)} nodes)")
    return EXIT_OK


# ---------------------------------------------------------------------- fit


def cmd_fit(args) -> int:
    tl = _read_log(args.log)
    nodes = args.nodes.split(",") if args.nodes else tl.nodes
    unknown = [n for n in nodes if n not in tl.temperatures]
    if unknown:
        raise InvalidInputError(f"unknown node(s) {unknown}; available: {tl.nodes}")
    out = _out(args)
    report, failed = {}, []
    for n in nodes:
        try:
            params, rep = fit(tl, n, FitSettings())
        except (DegenerateDataError, ThermalRecoveryError) as exc:
            report[n] = {"error": str(exc)}
            failed.append(n)
            print(f"{n}: FAILED ({exc})", file=sys.stderr)
            continue
        save_params(params, out / f"{n}.yaml")
        report[n] = rep.to_dict()
        print(f"{n}: rc={params.rc:.4g} beta_r={params.beta_r:.4g} "
              f"beta_bias_r={params.beta_bias_r:.4g} t_offset={params.t_offset:.4g} "
              f"rmse={rep.rmse:.4f}")
    _dump(out / "fit_report.yaml", report)
    return EXIT_INPUT if failed else EXIT_OK


def _read_log(path) -> TelemetryLog:
    p = Path(path)
    if not p.exists():
        raise InvalidInputError(f"telemetry file not found: {p}")
    return TelemetryLog.read_csv(p)


# ------------------------------------------------------------------ predict


def cmd_predict(args) -> int:
    tl = _read_log(args.log)
    if args.node not in tl.temperatures:
        raise InvalidInputError(f"unknown node {args.node!r}; available: {tl.nodes}")
    pp = Path(args.params)
    if not pp.exists():
        raise InvalidInputError(f"parameter file not found: {pp}")
    params = load_params(pp)
    pred = open_loop_prediction(params, tl, args.node)
    meas = tl.temperatures[args.node]
    rmse = float(np.sqrt(np.mean((pred - meas) ** 2)))
    path = _out(args) / f"{args.node}_prediction.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "measured_c", "predicted_c"])
        for row in zip(tl.sample_times, meas, pred):
            w.writerow([repr(float(v)) for v in row])
    print(f"{args.node}: open-loop RMSE {rmse:.4f} degC -> {path}")
    return EXIT_OK


# ----------------------------------------------------------------- minimize


def cmd_minimize(args) -> int:
    sc = _scenario(args)
    m = sc.model
    contact = m.contact_config(args.contact)
    scene = sc.scene.with_weights(np.diag(update_cost_matrix(sc.policy, sc.scene.t0)))
    if args.start:
        q0 = np.array([float(v) for v in args.start.split(",")])
    else:
        q0 = m.pose(args.pose or sc.policy.nominal_pose, m.contact_config(sc.policy.nominal_contact))
        q0 = m.project_to_contacts(q0, contact) if contact else q0
    res = descend(scene, m, q0, contact, sc.settings)
    out = _out(args)
    write_trace(res, out / "descent_trace.csv")
    _dump(out / "configuration.yaml", {
        "contact": contact.name,
        "coordinates": m.coordinate_names,
        "q": [float(v) for v in res.q],
        "f_initial": float(res.f0),
        "f_final": float(res.f),
        "iterations": int(res.iterations),
        "stop_reason": res.stop_reason,
        "contact_drift": float(res.drift),
    })
    print(f"{contact.name}: f {res.f0:.6g} -> {res.f:.6g} in {res.iterations} iterations ({res.stop_reason})")
    return EXIT_OK


# ------------------------------------------------------------------ recover


def _run(sc, mode) -> RecoveryReport:
    return run_recovery(sc.plant(), sc.policy, sc.scene, sc.model, mode, sc.settings, sc.groups)


def cmd_recover(args) -> int:
    sc = _scenario(args)
    mode = args.mode or sc.mode
    rep = _run(sc, mode)
    trace, summary = rep.write(_out(args), prefix=mode.replace("-", "_"))
    print(f"{mode}: schedule {rep.contact_schedule()} recovered={rep.recovered} -> {trace}, {summary}")
    return EXIT_TIMEOUT if rep.timed_out else EXIT_OK


# ------------------------------------------------------------------ compare


def norm_rates(report: RecoveryReport, cutoff: float = NORM_RATE_CUTOFF) -> dict[str, np.ndarray]:
    """Low-pass filtered time derivative of each group's temperature norm."""
    fs = 1.0 / float(np.median(np.diff(report.times)))
    return {g: derivative_filter(v, cutoff, fs) for g, v in report.group_norms().items()}


def compare_reports(sw: RecoveryReport, me: RecoveryReport, hot_group: str) -> dict:
    sw_rate, me_rate = norm_rates(sw)[hot_group], norm_rates(me)[hot_group]
    t_sw = sw.group_time_to_safe()[hot_group]
    t_me = me.group_time_to_safe()[hot_group]
    if t_sw is None and t_me is None:
        first = "neither"
    elif t_me is None or (t_sw is not None and t_sw < t_me):
        first = "switching"
    elif t_sw is None or t_me < t_sw:
        first = "min-effort"
    else:
        first = "tie"
    return {
        "hot_group": hot_group,
        "time_to_safe": {"switching": t_sw, "min-effort": t_me},
        "peak_cooling_rate": {"switching": float(np.min(sw_rate)), "min-effort": float(np.min(me_rate))},
        "recovered": {"switching": sw.recovered, "min-effort": me.recovered},
        "contact_schedule": {"switching": sw.contact_schedule(), "min-effort": me.contact_schedule()},
        "first_recovered": first,
    }


def _write_aligned(path, sw: RecoveryReport, me: RecoveryReport):
    """Both runs on one time axis measured from the start of recovery."""
    cols = {}
    for tag, rep in (("switching", sw), ("min_effort", me)):
        t = rep.times - rep.times[0]
        cols[f"{tag}_time_s"] = t
        for g, v in rep.group_norms().items():
            cols[f"{tag}_{g}_norm"] = v
        for g, v in norm_rates(rep).items():
            cols[f"{tag}_{g}_norm_rate"] = v
    n = max(len(v) for v in cols.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols))
        for k in range(n):
            w.writerow([repr(float(v[k])) if k < len(v) else "nan" for v in cols.values()])


def cmd_compare(args) -> int:
    sc = _scenario(args)
    hot = sc.hot_group or next(iter(sc.groups))
    sw, me = _run(sc, "switching"), _run(sc, "min-effort")
    out = _out(args)
    sw.write(out, "switching")
    me.write(out, "min_effort")
    _write_aligned(out / "comparison.csv", sw, me)
    summary = compare_reports(sw, me, hot)
    _dump(out / "comparison_summary.yaml", summary)
    tts = summary["time_to_safe"]
    print(f"{hot}: time-to-safe switching={tts['switching']} s, min-effort={tts['min-effort']} s; "
          f"first recovered: {summary['first_recovered']}")
    return EXIT_TIMEOUT if (sw.timed_out or me.timed_out) else EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermal-recovery", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        if scenario:
            sp.add_argument("--scenario", default=None, help=f"scenario file or bundled name "
                                                             f"(default {DEFAULT_SCENARIO})")
            sp.add_argument("--model", default=None, help="robot model file or fixture name")
            sp.add_argument("--config", default=None, help="YAML overrides merged into the scenario")

    g = sub.add_parser("generate", help="synthesize telemetry from a scenario")
    common(g)
    g.add_argument("--duration", type=float, default=None)
    g.add_argument("--noise", type=float, default=None)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="identify thermal parameters from telemetry")
    common(f, scenario=False)
    f.add_argument("log")
    f.add_argument("--nodes", default=None, help="comma-separated node ids (default: all)")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="open-loop prediction against a log")
    common(pr, scenario=False)
    pr.add_argument("log")
    pr.add_argument("--params", required=True)
    pr.add_argument("--node", required=True)
    pr.set_defaults(func=cmd_predict)

    mi = sub.add_parser("minimize", help="thermally minimizing configuration for one contact set")
    common(mi)
    mi.add_argument("--contact", default="double")
    mi.add_argument("--pose", default=None, help="named start pose")
    mi.add_argument("--start", default=None, help="comma-separated start configuration")
    mi.set_defaults(func=cmd_minimize)

    rc = sub.add_parser("recover", help="run the recovery loop on the plant simulator")
    common(rc)
    rc.add_argument("--mode", choices=("switching", "min-effort"), default=None)
    rc.set_defaults(func=cmd_recover)

    cp = sub.add_parser("compare", help="contact switching versus minimum effort")
    common(cp)
    cp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _INFEASIBLE as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ThermalRecoveryError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
