"""Command-line pipeline: simulate, analyze, calibrate, g2, tune.

Run configurations are JSON documents; analysis results are JSON reports
with units encoded in key names (_ps, _uev, _nm, _s, _hz). Errors are
emitted as a JSON envelope on stderr with a nonzero exit status. All
commands are deterministic for fixed inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import calib, coincidence, linkmodel, qtg
from .cascade import (
    CH_X,
    CH_XX,
    DetectionConfig,
    QDParams,
    ScheduleEntry,
    TimeTagStream,
    schedule_segments,
    simulate_run,
)
from .errors import ConfigError, QdlinkError
from .polmath import (
    AnalyzerSetting,
    MuellerRotation,
    NAMED_STATES,
    StokesVector,
    analyzer_to_stokes,
)

DEFAULT_WINDOW_PS = 48
DEFAULT_BIN_PS = 48
DEFAULT_RANGE_PS = 4800


def _parse_state(spec) -> StokesVector:
    """Analyzer state from a name, a Stokes triple or waveplate angles."""
    if isinstance(spec, str):
        if spec.upper() in NAMED_STATES:
            return NAMED_STATES[spec.upper()]
        raise ConfigError(f"unknown polarization state {spec!r}")
    if isinstance(spec, dict):
        setting = AnalyzerSetting.standard(
            math.radians(float(spec.get("hwp_deg", 0.0))),
            math.radians(float(spec.get("qwp_deg", 0.0))),
            math.radians(float(spec.get("lp_deg", 0.0))),
        )
        return analyzer_to_stokes(setting)
    if isinstance(spec, (list, tuple)) and len(spec) == 3:
        return StokesVector.normalized(*[float(c) for c in spec])
    raise ConfigError(f"cannot interpret analyzer specification {spec!r}")


def _parse_mueller(spec) -> MuellerRotation:
    if spec is None or spec == "identity":
        return MuellerRotation.identity()
    if isinstance(spec, dict):
        if "axis" in spec:
            return MuellerRotation.from_axis_angle(
                [float(c) for c in spec["axis"]],
                math.radians(float(spec["angle_deg"])),
            )
        if "random_seed" in spec:
            return MuellerRotation.random(
                np.random.default_rng(int(spec["random_seed"]))
            )
    if isinstance(spec, list):
        return MuellerRotation(np.array(spec, dtype=float))
    raise ConfigError(f"cannot interpret rotation specification {spec!r}")


def load_run_config(path) -> dict:
    cfg = json.loads(Path(path).read_text())
    qd = QDParams(**cfg["qd"])
    det_cfg = dict(cfg.get("detection", {}))
    link = cfg.get("link")
    mueller_xx = MuellerRotation.identity()
    drift_rate = 0.0
    if link is not None:
        mueller_xx = _parse_mueller(link.get("mueller"))
        drift_rate = float(link.get("drift_rate_deg_per_hr", 0.0))
        loss_db = float(link.get("loss_db", 0.0))
        det_cfg["efficiency_xx"] = det_cfg.get(
            "efficiency_xx", 1.0
        ) * linkmodel.db_to_efficiency(loss_db)
        classical = link.get("classical")
        if classical is not None:
            rate = classical.get("background_rate_hz")
            if rate is None:
                rate = linkmodel.crosstalk_background(
                    float(classical["launch_power_uw"]),
                    float(classical["isolation_db"]),
                    float(classical["counts_per_uw_hz"]),
                )
            det_cfg["background_rate_xx_hz"] = det_cfg.get(
                "background_rate_xx_hz", 0.0
            ) + float(rate)
    mueller_x = _parse_mueller(cfg.get("mueller_x"))

    schedule = []
    for item in cfg["schedule"]:
        schedule.append(
            ScheduleEntry(
                basis_id=int(item["basis_id"]),
                role=str(item.get("role", f"basis{item['basis_id']}")),
                analyzer_x=_parse_state(item["analyzer_x"]),
                analyzer_xx=_parse_state(item["analyzer_xx"]),
                dwell_s=float(item["dwell_s"]),
            )
        )
    det = DetectionConfig(
        analyzer_x=schedule[0].analyzer_x,
        analyzer_xx=schedule[0].analyzer_xx,
        **det_cfg,
    )
    return {
        "qd": qd,
        "detection": det,
        "schedule": tuple(schedule),
        "mueller_x": mueller_x,
        "mueller_xx": mueller_xx,
        "drift_rate_deg_per_hr": drift_rate,
        "seed": int(cfg.get("seed", 0)),
        "duration_s": float(cfg["duration_s"]),
    }


def _write_report(report: dict, path: Optional[str]) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    seed = cfg["seed"] if args.seed is None else args.seed
    duration = cfg["duration_s"] if args.duration is None else args.duration
    drift = None
    if cfg["drift_rate_deg_per_hr"] > 0:
        segments = schedule_segments(cfg["schedule"], duration)
        total_hr = duration / 3600.0
        drift = linkmodel.drift_walk(
            cfg["drift_rate_deg_per_hr"],
            total_hr,
            len(segments),
            np.random.default_rng(np.random.SeedSequence([seed, 0xD81F])),
        )
    stream = simulate_run(
        cfg["qd"],
        cfg["detection"],
        cfg["schedule"],
        mueller_x=cfg["mueller_x"],
        mueller_xx=cfg["mueller_xx"],
        duration_s=duration,
        seed=seed,
        drift_per_segment=drift,
    )
    qtg.write_qtg(args.out, stream)
    summary = {
        "n_records": stream.n_records,
        "out": str(args.out),
        "seed": seed,
        "duration_s": duration,
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def _timeseries_report(points) -> dict:
    return {
        "t_ps": [p.t_ps for p in points],
        "c_hv": [p.c_hv for p in points],
        "c_da": [p.c_da for p in points],
        "c_rl": [p.c_rl for p in points],
        "fidelity": [p.fidelity for p in points],
        "qber": [p.qber for p in points],
    }


def _analyze_stream(stream: TimeTagStream, bin_ps: int, range_ps: int,
                    window_ps: int) -> dict:
    hists = coincidence.standard_histograms(stream, bin_ps, range_ps)
    points = coincidence.fidelity_timeseries(hists, window_ps)
    peak = coincidence.peak_fidelity(points)
    return {
        "bin_width_ps": bin_ps,
        "range_ps": range_ps,
        "window_ps": window_ps,
        "counts": {role: int(h.counts.sum()) for role, h in hists.items()},
        "peak": {
            "t_ps": peak.t_ps,
            "fidelity": peak.fidelity,
            "qber": peak.qber,
            "c_hv": peak.c_hv,
            "c_da": peak.c_da,
            "c_rl": peak.c_rl,
        },
        "max_c_hv": max(p.c_hv for p in points),
        "timeseries": _timeseries_report(points),
    }


def cmd_analyze(args) -> int:
    stream = qtg.read_qtg(args.tags)
    report = _analyze_stream(stream, args.bin_ps, args.range_ps, args.window_ps)
    if args.report_bin_s is not None:
        report["stability"] = _stability_series(
            stream, args.bin_ps, args.range_ps, args.window_ps, args.report_bin_s
        )
    _write_report(report, args.report)
    return 0


def _stability_series(stream, bin_ps, range_ps, window_ps, chunk_s) -> list:
    out = []
    n_chunks = int(stream.header.duration_s // chunk_s)
    for k in range(n_chunks):
        lo = int(k * chunk_s * 1e12)
        hi = int((k + 1) * chunk_s * 1e12)
        mask = (stream.records["t_ps"].astype(np.int64) >= lo) & (
            stream.records["t_ps"].astype(np.int64) < hi
        )
        chunk = TimeTagStream(header=stream.header, records=stream.records[mask])
        try:
            hists = coincidence.standard_histograms(chunk, bin_ps, range_ps)
            points = coincidence.fidelity_timeseries(hists, window_ps)
            peak = coincidence.peak_fidelity(points)
        except QdlinkError:
            continue
        out.append(
            {
                "t_start_s": k * chunk_s,
                "peak_fidelity": peak.fidelity,
                "qber": peak.qber,
            }
        )
    return out


def _parse_refs(arg: Optional[str], n: int):
    if arg is None:
        return None
    parts = [p.strip() for p in arg.split(",") if p.strip()]
    if len(parts) != n:
        raise ConfigError(f"expected {n} reference states, got {len(parts)}")
    return [_parse_state(p) for p in parts]


def cmd_calibrate(args) -> int:
    stream = qtg.read_qtg(args.tags)
    roles = coincidence.roles_to_basis_ids(stream)
    labels = sorted(
        {r.split(":", 1)[1] for r in roles if r.startswith("cal_co:")}
    )
    if len(labels) != 3:
        raise ConfigError(
            "calibration needs exactly three reference bases labelled "
            "cal_co:<name> / cal_cross:<name> in the schedule"
        )
    refs_override = _parse_refs(args.refs, 3)
    entry_by_id = {e.basis_id: e for e in stream.header.schedule}
    basis_data = []
    for i, label in enumerate(labels):
        co_ids = roles[f"cal_co:{label}"]
        cross_ids = roles.get(f"cal_cross:{label}")
        if not cross_ids:
            raise ConfigError(f"missing cross entry for reference {label}")
        s_r = (
            refs_override[i]
            if refs_override
            else entry_by_id[co_ids[0]].analyzer_x
        )
        co = coincidence.build_histogram(
            stream, CH_XX, CH_X, args.bin_ps, args.range_ps, basis_ids=co_ids
        )
        cross = coincidence.build_histogram(
            stream, CH_XX, CH_X, args.bin_ps, args.range_ps, basis_ids=cross_ids
        )
        basis_data.append((label, s_r, co, cross))
    prior = None
    if args.prior:
        prior_doc = json.loads(Path(args.prior).read_text())
        prior = MuellerRotation(np.array(prior_doc["mueller"], dtype=float))
    result = calib.calibrate(basis_data, prior=prior)
    report = {
        "mueller": [[float(x) for x in row] for row in result.mueller.matrix],
        "delta_uev": result.delta_uev,
        "delta_uev_err": result.delta_uev_err,
        "delta_chi2": result.delta_chi2,
        "tau_ns": result.tau_ns,
        "residual": result.residual,
        "n_ties": result.n_ties,
        "branches": list(result.branches),
        "reference_states": {
            k: list(v.as_array()) for k, v in result.reference_states.items()
        },
        "bases": [
            {
                "label": f.label,
                "s_r": list(f.s_r.as_array()),
                "theta_rad": f.theta_rad,
                "phi_rad": f.phi_rad,
                "delta_uev": f.delta_uev,
                "tau_ns": f.tau_ns,
                "amplitude": f.amplitude,
                "phi_identifiable": f.phi_identifiable,
                "converged": f.converged,
            }
            for f in result.basis_fits
        ],
        "warnings": result.warnings,
    }
    _write_report(report, args.out)
    return 0


def cmd_g2(args) -> int:
    stream = qtg.read_qtg(args.tags, require_sidecar=False)
    channel = {"X": CH_X, "XX": CH_XX}[args.channel.upper()]
    bin_ps, range_ps = args.bin_ps, args.range_ps
    if (bin_ps is None or range_ps is None) and stream.header.qd is not None:
        cascade_ps = (
            stream.header.qd.tau_xx_ns + stream.header.qd.tau_x_ns
        ) * 1e3
        range_ps = range_ps or int(cascade_ps * 12)
        bin_ps = bin_ps or max(int(range_ps / 100), 1)
    if bin_ps is None or range_ps is None:
        raise ConfigError("--bin-ps and --range-ps are required without a sidecar")
    hist = coincidence.build_histogram(
        stream, channel, channel, bin_ps, range_ps
    )
    result = coincidence.fit_g2(hist, source_g2=args.source_g2)
    report = {
        "channel": args.channel.upper(),
        "bin_width_ps": bin_ps,
        "range_ps": range_ps,
        "g2_zero": result.g2_zero,
        "background_fraction": result.background_fraction,
        "signal_fraction": result.signal_fraction,
        "dip_tau_ps": result.dip_tau_ps,
        "amplitude": result.amplitude,
        "t0_ps": result.t0_ps,
        "residual_norm": result.residual_norm,
        "converged": result.converged,
        "below_classical_limit": result.g2_zero < 0.5,
    }
    _write_report(report, args.report)
    return 0


def _read_stark_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"bias_v", "lambda_xx_nm", "lambda_x_nm", "fss_uev"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise ConfigError(
                "stark CSV needs columns bias_v, lambda_xx_nm, lambda_x_nm, fss_uev"
            )
        for row in reader:
            rows.append(
                (
                    float(row["bias_v"]),
                    float(row["lambda_xx_nm"]),
                    float(row["lambda_x_nm"]),
                    float(row["fss_uev"]),
                )
            )
    if not rows:
        raise ConfigError("stark CSV contains no data rows")
    return rows


def cmd_tune(args) -> int:
    rows = _read_stark_csv(args.stark)
    v = [r[0] for r in rows]
    lam = [r[1] if args.line == "xx" else r[2] for r in rows]
    fss = [r[3] for r in rows]
    params = linkmodel.fit_stark_params(v, lam, fss)
    plan = linkmodel.tune_plan(params, args.target, args.fss_limit)
    try:
        channel = linkmodel.nearest_cwdm_channel(args.target)
        channel_doc = {"center_nm": channel.center_nm, "index": channel.index}
    except QdlinkError:
        channel_doc = None
    report = {
        "line": args.line,
        "target_nm": plan.target_nm,
        "cwdm_channel": channel_doc,
        "feasible": plan.feasible,
        "bias_v": plan.bias_v,
        "achieved_nm": plan.achieved_nm,
        "fss_uev": plan.fss_uev,
        "fss_limit_uev": plan.fss_limit_uev,
        "reason": plan.reason,
        "model": {
            "e0_uev": params.e0_uev,
            "dipole_uev_per_v": params.dipole_uev_per_v,
            "polarizability_uev_per_v2": params.polarizability_uev_per_v2,
            "fss_min_uev": params.fss_min_uev,
            "fss_slope_uev_per_v": params.fss_slope_uev_per_v,
            "fss_v0_v": params.fss_v0_v,
            "v_min": params.v_min,
            "v_max": params.v_max,
        },
    }
    _write_report(report, args.report)
    return 0 if plan.feasible else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdlink",
        description="Entangled-pair link simulator and analysis pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a time-tag stream")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="fidelity and error-rate analysis")
    p.add_argument("--tags", required=True)
    p.add_argument("--window-ps", type=int, default=DEFAULT_WINDOW_PS)
    p.add_argument("--bin-ps", type=int, default=DEFAULT_BIN_PS)
    p.add_argument("--range-ps", type=int, default=DEFAULT_RANGE_PS)
    p.add_argument("--report", default=None)
    p.add_argument("--report-bin-s", type=float, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calibrate", help="detection-basis calibration")
    p.add_argument("--tags", required=True)
    p.add_argument("--refs", default=None,
                   help="comma-separated reference states (names like H,D,R)")
    p.add_argument("--out", default=None)
    p.add_argument("--prior", default=None,
                   help="previous calibration JSON used to break branch ties")
    p.add_argument("--bin-ps", type=int, default=DEFAULT_BIN_PS)
    p.add_argument("--range-ps", type=int, default=6000)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("g2", help="autocorrelation dip fit")
    p.add_argument("--tags", required=True)
    p.add_argument("--channel", default="XX", choices=["X", "XX", "x", "xx"])
    p.add_argument("--bin-ps", type=int, default=None)
    p.add_argument("--range-ps", type=int, default=None)
    p.add_argument("--source-g2", type=float, default=0.0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("tune", help="Stark model fit and channel plan")
    p.add_argument("--stark", required=True, help="CSV of bias scan data")
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--fss-limit", type=float, default=10.0, dest="fss_limit")
    p.add_argument("--line", default="xx", choices=["xx", "x"])
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QdlinkError as exc:
        envelope = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        sys.stderr.write(json.dumps(envelope, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
