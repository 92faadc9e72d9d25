"""Command-line front end: simulate, estimate, analyze.

Exit codes: 0 success, 1 invalid input (parse/validation errors), 2 numeric
failure during estimation or analysis.  Every failure prints a one-line
diagnostic on standard error naming the offending file or field.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from .dataio import (Dataset, DatasetBearingProvider, DatasetPositionProvider,
                     TraceRecord, apply_overrides, interpolating_imu,
                     load_config, load_dataset, save_dataset, write_trace)
from .errors import (CameraOnLandmarkError, InsufficientHistoryError,
                     NonFiniteStateError, SingularInnovationError,
                     TooFewLandmarksError, VisnavError)
from .geom import dist_identity
from .hybrid import run as hybrid_run, zoh_imu
from .observability import (check_mono_motion, check_stereo_condition,
                            classify_static_degeneracy, gramian_discrete,
                            transition_matrix)
from .observer import (GainConfig, ObserverState, innovation_mono,
                       innovation_position, innovation_stereo, run_continuous)
from .sim import (EightTrajectory, apply_noise, apply_position_noise,
                  default_stereo_rig, make_bearing_frame, make_position_frame,
                  sample_landmarks)

_NUMERIC_ERRORS = (NonFiniteStateError, SingularInnovationError,
                   np.linalg.LinAlgError, FloatingPointError, OverflowError)


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="visnav",
        description="Landmark-aided inertial navigation: simulation, "
                    "estimation, and observability analysis.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", required=True, help="run config file")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        sp.add_argument("--out", required=True, help="output path")
        sp.add_argument("--seed", type=int, default=None,
                        help="override config seed")
        sp.add_argument("--mode", default=None,
                        choices=["position3d", "stereo", "monocular"],
                        help="override config mode")
        sp.add_argument("--duration", type=float, default=None,
                        help="override config duration [s]")

    common(sub.add_parser("simulate", help="generate a synthetic dataset"))
    common(sub.add_parser("estimate", help="run the estimator on a dataset"),
           data=True)
    common(sub.add_parser("analyze", help="observability report for a dataset"),
           data=True)
    return ap


def _cameras_for(cfg):
    cams = default_stereo_rig(cfg.baseline)
    if cfg.mode == "stereo":
        return cams
    if cfg.mode == "monocular":
        return cams[:1]
    return []


def _simulate(cfg, out_dir):
    dt = 1.0 / cfg.imu_rate
    n = int(round(cfg.duration * cfg.imu_rate))
    times = np.arange(n + 1) * dt
    traj = EightTrajectory(t_end=cfg.duration, dt=dt)
    cams = _cameras_for(cfg)
    lms = sample_landmarks(cfg.n_landmarks, seed=cfg.seed)

    imu_rows = np.empty((times.size, 7))
    gt_rows = np.empty((times.size, 16))
    rng_imu = np.random.default_rng([cfg.seed, 1])
    for k, t in enumerate(times):
        st = traj.state(t)
        w, a = st.omega.copy(), st.a.copy()
        if cfg.imu_noise_omega > 0:
            w += rng_imu.normal(0.0, cfg.imu_noise_omega, 3)
        if cfg.imu_noise_accel > 0:
            a += rng_imu.normal(0.0, cfg.imu_noise_accel, 3)
        imu_rows[k] = [t, *w, *a]
        gt_rows[k] = [t, *st.R.reshape(-1), *st.p, *st.v]

    bearings, positions = [], []
    n_frames = int(np.floor(cfg.duration * cfg.vision_rate + 1e-9))
    for k in range(1, n_frames + 1):
        t = k / cfg.vision_rate
        st = traj.state(t)
        if cfg.mode == "position3d":
            fr = make_position_frame(st, lms)
            if cfg.position_noise > 0:
                fr = apply_position_noise(fr, cfg.position_noise,
                                          seed=[cfg.seed, 3, k])
            positions.append(fr)
        else:
            fr = make_bearing_frame(st, lms, cams)
            if cfg.bearing_noise > 0:
                fr = apply_noise(fr, cfg.bearing_noise, seed=[cfg.seed, 2, k])
            bearings.append(fr)

    save_dataset(out_dir, Dataset(imu=imu_rows, landmarks=lms,
                                  bearings=bearings, positions=positions,
                                  groundtruth=gt_rows, extrinsics=cams))
    return 0


def _require_cameras(cfg, ds):
    need = cfg.required_cameras()
    if len(ds.extrinsics) < need:
        raise VisnavError(
            f"extrinsics.csv: mode {cfg.mode!r} needs {need} camera(s), "
            f"dataset has {len(ds.extrinsics)}")


def _truth_lookup(ds):
    if ds.groundtruth is None:
        return None
    table = {round(float(row[0]) * 1e9): row for row in ds.groundtruth}

    def fn(t):
        return table.get(round(float(t) * 1e9))

    return fn


def _trace_records(times, states, truth_fn):
    records = []
    for t, est in zip(times, states):
        att = pos = vel = float("nan")
        if truth_fn is not None:
            row = truth_fn(t)
            if row is not None:
                R = row[1:10].reshape(3, 3)
                att = dist_identity(R @ est.R.T)
                pos = float(np.linalg.norm(row[10:13] - est.p))
                vel = float(np.linalg.norm(row[13:16] - est.v))
        records.append(TraceRecord(t=float(t), att_err=att, pos_err=pos,
                                   vel_err=vel, p=est.p, v=est.v, R=est.R))
    return records


def _estimate(cfg, data_dir, out_path):
    ds = load_dataset(data_dir)
    _require_cameras(cfg, ds)
    gains = cfg.gain_config()
    imu = np.asarray(ds.imu)
    t0 = float(imu[0, 0])
    t_end = min(float(imu[-1, 0]), t0 + cfg.duration)
    dt = (imu[-1, 0] - imu[0, 0]) / (imu.shape[0] - 1) if imu.shape[0] > 1 \
        else 1.0 / cfg.imu_rate
    est0 = cfg.initial_estimate()
    lms = ds.landmarks
    cams = sorted(ds.extrinsics, key=lambda c: c.cam_id)

    if cfg.estimator == "continuous":
        if cfg.mode == "position3d":
            provider = DatasetPositionProvider(ds, gains)
        else:
            provider = DatasetBearingProvider(ds, gains, cfg.mode)
        times, states = run_continuous(est0, interpolating_imu(imu), provider,
                                       gains, t_end=t_end, dt=dt, t0=t0)
    else:
        frames = ds.positions if cfg.mode == "position3d" else ds.bearings
        frames = [fr for fr in frames if fr.t <= t_end + 1e-9]
        times, states, _ = hybrid_run(
            est0, zoh_imu(imu), frames, lms, gains, mode=cfg.mode, cams=cams,
            ncov=cfg.noise_covariances(), t_end=t_end, dt=dt, t0=t0)

    write_trace(out_path, _trace_records(times, states, _truth_lookup(ds)))
    return 0


def _gramian_windows(cfg, ds):
    frames = ds.positions if cfg.mode == "position3d" else ds.bearings
    if not frames:
        return []
    imu = np.asarray(ds.imu)
    zoh = zoh_imu(imu)

    def omega_fn(t):
        return zoh(t)[0]

    dummy = ObserverState.initial()
    lms = ds.landmarks
    cams = sorted(ds.extrinsics, key=lambda c: c.cam_id)

    def c_matrix(fr):
        if cfg.mode == "position3d":
            return innovation_position(dummy, fr, lms)[1]
        if cfg.mode == "stereo":
            return innovation_stereo(dummy, fr, cams, lms,
                                     allow_mono_fallback=True)[1]
        return innovation_mono(dummy, fr, cams[0], lms)[1]

    out = []
    gravity = np.array(GainConfig().gravity, dtype=float)
    w = cfg.gramian_window
    t0 = float(imu[0, 0])
    start = t0
    t_last = frames[-1].t
    while start + w <= t_last + 1e-9:
        in_win = [fr for fr in frames if start <= fr.t < start + w]
        if in_win:
            phis = [transition_matrix(omega_fn, gravity, start, fr.t)
                    for fr in in_win]
            rep = gramian_discrete(phis, [c_matrix(fr) for fr in in_win],
                                   mu=cfg.gramian_mu,
                                   window=(start, start + w))
            entry = {"status": "ok", **asdict(rep)}
            entry["window"] = list(entry["window"])
        else:
            entry = {"status": "skipped", "window": [start, start + w],
                     "reason": "no measurements in window"}
        out.append(entry)
        start += w
    return out


def _mono_motion_entry(cfg, ds, witness):
    if ds.groundtruth is None:
        return {"status": "skipped", "reason": "groundtruth.csv not present"}
    if not ds.bearings:
        return {"status": "skipped", "reason": "bearings.csv not present"}
    if not ds.extrinsics:
        return {"status": "skipped", "reason": "extrinsics.csv not present"}
    cam = sorted(ds.extrinsics, key=lambda c: c.cam_id)[0]
    gt = np.asarray(ds.groundtruth)
    ids = list(witness) if witness else [lm.id for lm in ds.landmarks[:3]]
    times, series = [], {i: [] for i in ids}
    for fr in ds.bearings:
        if not all((cam.cam_id, i) in fr.obs for i in ids):
            continue
        k = int(np.argmin(np.abs(gt[:, 0] - fr.t)))
        R = gt[k, 1:10].reshape(3, 3)
        times.append(fr.t)
        for i in ids:
            series[i].append(R @ (cam.R @ fr.obs[(cam.cam_id, i)]))
    try:
        ok = check_mono_motion(np.array(times),
                               {i: np.array(v) for i, v in series.items()},
                               ids, cfg.mono_epsilon, cfg.mono_window)
    except InsufficientHistoryError as exc:
        return {"status": "skipped", "reason": str(exc)}
    return {"status": "ok", "satisfied": bool(ok), "witness": ids}


def _static_entry(cfg, ds):
    if ds.groundtruth is None:
        return {"status": "skipped", "reason": "groundtruth.csv not present"}
    gt = np.asarray(ds.groundtruth)
    p_prime = gt[0, 10:13]
    if ds.extrinsics:
        cam = sorted(ds.extrinsics, key=lambda c: c.cam_id)[0]
        p_prime = p_prime + gt[0, 1:10].reshape(3, 3) @ cam.p
    try:
        v = classify_static_degeneracy(ds.landmarks, p_prime,
                                       GainConfig().gravity)
    except (TooFewLandmarksError, CameraOnLandmarkError) as exc:
        return {"status": "skipped", "reason": str(exc)}
    return {"status": "ok", **asdict(v)}


def _analyze(cfg, data_dir, out_path):
    ds = load_dataset(data_dir)
    gravity = np.array(GainConfig().gravity, dtype=float)
    if len(ds.landmarks) >= 3:
        ok, witness = check_stereo_condition(ds.landmarks, gravity,
                                             cfg.stereo_eps_area,
                                             cfg.stereo_eps_grav)
        stereo_entry = {"status": "ok", "satisfied": bool(ok),
                        "witness": list(witness) if witness else None}
    else:
        ok, witness = False, None
        stereo_entry = {"status": "skipped",
                        "reason": "needs at least 3 landmarks"}
    report = {
        "windows": _gramian_windows(cfg, ds),
        "stereo_condition": stereo_entry,
        "mono_motion": _mono_motion_entry(cfg, ds, witness),
        "static_degeneracy": _static_entry(cfg, ds),
    }
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise VisnavError(f"cannot write {out_path}: {exc}") from exc
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), seed=args.seed,
                              mode=args.mode, duration=args.duration)
        if args.command == "simulate":
            return _simulate(cfg, args.out)
        if args.command == "estimate":
            return _estimate(cfg, args.data, args.out)
        return _analyze(cfg, args.data, args.out)
    except _NUMERIC_ERRORS as exc:
        print(f"visnav: numeric failure: {exc}", file=sys.stderr)
        return 2
    except VisnavError as exc:
        print(f"visnav: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
