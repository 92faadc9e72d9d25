"""Sampled-measurement variant of the observer.

Between vision frames the estimator flows on IMU data alone (the covariance
grows, no measurement terms); at each frame it jumps with a Kalman-style
gain from the continuous-discrete Riccati recursion.  Measurement-noise
covariances can be mapped into the Riccati weights V and Q^-1 through the
local noise Jacobians of the error dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ScheduleViolationError, SingularInnovationError
from .geom import I3, pi_proj, skew
from .observer import (
    GainConfig,
    I15,
    ObserverState,
    innovation_mono,
    innovation_position,
    innovation_stereo,
    step,
)
from .sim import BearingFrame, PositionFrame


@dataclass(frozen=True)
class MeasurementSchedule:
    """Strictly increasing jump times with dwell bounds [t_min, t_max]."""

    times: np.ndarray
    t_min: float
    t_max: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if self.t_min <= 0 or self.t_max < self.t_min:
            raise ScheduleViolationError(
                f"invalid dwell bounds [{self.t_min}, {self.t_max}]")
        if times.size == 0:
            return
        if times.size > 1:
            gaps = np.diff(times)
            if np.any(gaps <= 0):
                raise ScheduleViolationError("jump times not strictly increasing")
            if np.any(gaps < self.t_min - 1e-12) or np.any(gaps > self.t_max + 1e-12):
                raise ScheduleViolationError(
                    f"inter-jump gap outside [{self.t_min}, {self.t_max}]")

    @classmethod
    def from_times(cls, times, slack: float = 1e-9) -> "MeasurementSchedule":
        """Derive the tightest valid dwell bounds from observed jump times."""
        times = np.asarray(times, dtype=float)
        if times.size < 2:
            gap = 1.0 if times.size == 0 else max(times[0], 1e-3)
            return cls(times=times, t_min=min(gap, 1e-3), t_max=gap + slack)
        gaps = np.diff(times)
        if np.any(gaps <= 0):
            raise ScheduleViolationError("jump times not strictly increasing")
        return cls(times=times, t_min=float(gaps.min()) - slack,
                   t_max=float(gaps.max()) + slack)

    def check_start(self, t0: float):
        if self.times.size and self.times[0] - t0 > self.t_max + 1e-12:
            raise ScheduleViolationError(
                f"first jump at {self.times[0]} later than t0 + t_max")


@dataclass
class NoiseCovariances:
    """Measurement noise model feeding the adaptive Riccati weights.

    cov_omega / cov_a are per-axis variances (scalar) or full 3x3 blocks
    of the gyro and accelerometer noise; cov_y is the per-axis variance of
    one vision measurement; reg regularizes both constructed weights.
    """

    cov_omega: float | np.ndarray = 0.0024
    cov_a: float | np.ndarray = 0.028
    cov_y: float = 0.0005
    reg: float = 0.002

    def __post_init__(self):
        if self.reg <= 0:
            raise ValueError("reg must be positive")

    def cov_x(self) -> np.ndarray:
        out = np.zeros((6, 6))
        for k, blk in enumerate((self.cov_omega, self.cov_a)):
            b = blk * I3 if np.isscalar(blk) else np.asarray(blk, dtype=float)
            out[3 * k:3 * k + 3, 3 * k:3 * k + 3] = b
        return out


def flow(est: ObserverState, imu, cfg: GainConfig, dt: float,
         t: float = 0.0) -> ObserverState:
    """Pure inertial propagation: the continuous observer with no
    measurement terms; P grows as A P + P A^T + V."""
    return step(est, imu, cfg, dt, t=t, meas=None)


def jump(est: ObserverState, innovation, q_inv: np.ndarray) -> ObserverState:
    """Measurement update at a vision frame.

    K = P C^T (C P C^T + Q^-1)^-1; attitude is untouched, the translational
    states are corrected through R_hat K sigma_y, and P contracts by
    (I - K C) P.
    """
    sy, C = innovation
    if C.size == 0:
        return est.copy()
    S = C @ est.P @ C.T + q_inv
    S = 0.5 * (S + S.T)
    if np.linalg.cond(S) > 1e12:
        raise SingularInnovationError(
            "innovation covariance numerically singular")
    K = np.linalg.solve(S, C @ est.P).T
    corr = K @ sy
    P_new = (I15 - K @ C) @ est.P
    e_new = est.e + corr[3:12].reshape(3, 3) @ est.R.T
    return ObserverState(
        R=est.R.copy(),
        p=est.p + est.R @ corr[0:3],
        v=est.v + est.R @ corr[12:15],
        e=e_new,
        P=0.5 * (P_new + P_new.T),
    )


def tune_vq(est: ObserverState, ncov: NoiseCovariances, lms, frame=None,
            cams=None):
    """Map measurement-noise covariances into the Riccati weights.

    V comes from the IMU-noise Jacobian of the error dynamics (always
    available); Q^-1 needs the current vision frame to know the measured
    landmarks and their projectors, so it is None when frame is None.
    Position frames use identity blocks (the noise enters directly);
    bearing frames use range-scaled summed projectors.
    """
    G = np.zeros((15, 6))
    vecs = (est.p, est.e[0], est.e[1], est.e[2], est.v)
    for i, x in enumerate(vecs):
        G[3 * i:3 * i + 3, 0:3] = skew(est.R.T @ x)
    G[12:15, 3:6] = I3
    V = G @ ncov.cov_x() @ G.T + ncov.reg * I15
    V = 0.5 * (V + V.T)

    if frame is None:
        return V, None
    lm_map = {lm.id: lm for lm in lms}
    blocks = []
    if isinstance(frame, PositionFrame):
        blocks = [I3 for _ in sorted(frame.obs)]
    else:
        cam_map = {c.cam_id: c for c in (cams or [])}
        by_lm: dict = {}
        for (cam_id, lm_id), y in frame.obs.items():
            if cam_id in cam_map:
                by_lm.setdefault(lm_id, {}).setdefault(cam_id, y)
        for lm_id in sorted(by_lm):
            lm = lm_map[lm_id]
            rng = np.linalg.norm(lm.p @ est.e - est.p)
            Pi = np.zeros((3, 3))
            for cam_id in sorted(by_lm[lm_id]):
                Pi += pi_proj(cam_map[cam_id].R @ by_lm[lm_id][cam_id])
            blocks.append(rng * Pi)
    n = 3 * len(blocks)
    M = np.zeros((n, n))
    for i, blk in enumerate(blocks):
        M[3 * i:3 * i + 3, 3 * i:3 * i + 3] = blk
    q_inv = ncov.cov_y * (M @ M.T) + ncov.reg * np.eye(n)
    return V, 0.5 * (q_inv + q_inv.T)


def _innovation_for(est, frame, mode, cams, lms, allow_mono_fallback):
    if mode == "position3d":
        return innovation_position(est, frame, lms)
    if mode == "stereo":
        return innovation_stereo(est, frame, cams, lms,
                                 allow_mono_fallback=allow_mono_fallback)
    if mode == "monocular":
        return innovation_mono(est, frame, cams[0], lms)
    raise ValueError(f"unknown measurement mode {mode!r}")


def zoh_imu(samples: np.ndarray):
    """Turn rows (t, wx, wy, wz, ax, ay, az) into a zero-order-hold
    lookup t -> (omega, a)."""
    samples = np.asarray(samples, dtype=float)
    ts = samples[:, 0]

    def imu_fn(t):
        k = np.searchsorted(ts, t + 1e-12, side="right") - 1
        k = min(max(k, 0), len(ts) - 1)
        return samples[k, 1:4], samples[k, 4:7]

    return imu_fn


def run(est: ObserverState, imu, frames, lms, cfg: GainConfig,
        mode: str = "stereo", cams=None, ncov: NoiseCovariances | None = None,
        t_end: float | None = None, dt: float = 1.0 / 200.0, t0: float = 0.0,
        schedule: MeasurementSchedule | None = None,
        allow_mono_fallback: bool = False):
    """Flow/jump driver.

    Vision frames are snapped to the nearest IMU grid node (max error
    dt/2); the jump is applied right after the flow step landing on that
    node, and the recorded state at the node is the post-jump one.

    Returns (times, states, jumps) where jumps is a list of
    (t, lambda_max_before, lambda_max_after) covariance diagnostics.
    """
    frames = sorted(frames, key=lambda f: f.t)
    if t_end is None:
        if not frames:
            raise ValueError("t_end required when there are no frames")
        t_end = frames[-1].t
    n = int(round((t_end - t0) / dt))
    times = t0 + dt * np.arange(n + 1)

    by_node: dict = {}
    snapped = []
    for f in frames:
        k = int(round((f.t - t0) / dt))
        if k <= 0 or k > n:
            raise ScheduleViolationError(
                f"frame at t={f.t} outside the run horizon")
        if abs(f.t - times[k]) > dt / 2 + 1e-12:
            raise ScheduleViolationError(
                f"frame at t={f.t} cannot be snapped to the IMU grid")
        if k in by_node:
            raise ScheduleViolationError(
                f"two frames snap to the same IMU node t={times[k]}")
        by_node[k] = f
        snapped.append(times[k])
    if schedule is None:
        schedule = MeasurementSchedule.from_times(snapped)
    else:
        MeasurementSchedule(times=np.asarray(snapped), t_min=schedule.t_min,
                            t_max=schedule.t_max)
        schedule.check_start(t0)

    states = [est.copy()]
    jumps = []
    v_cur = None
    if ncov is not None:
        v_cur, _ = tune_vq(est, ncov, lms)
    for k in range(n):
        cfg_k = cfg if v_cur is None else replace(cfg, v=v_cur)
        est = flow(est, imu, cfg_k, dt, t=float(times[k]))
        frame = by_node.get(k + 1)
        if frame is not None:
            inn = _innovation_for(est, frame, mode, cams, lms,
                                  allow_mono_fallback)
            if ncov is not None:
                v_cur, q_inv = tune_vq(est, ncov, lms, frame=frame, cams=cams)
            else:
                nrows = inn[1].shape[0]
                q_inv = (np.linalg.inv(cfg.q_matrix(nrows)) if nrows
                         else np.zeros((0, 0)))
            lam_before = float(np.linalg.eigvalsh(est.P)[-1])
            est = jump(est, inn, q_inv)
            jumps.append((float(times[k + 1]), lam_before,
                          float(np.linalg.eigvalsh(est.P)[-1])))
        states.append(est)
    return times, states, jumps
