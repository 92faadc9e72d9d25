"""Unit tests for the continuous observer: innovation algebra, error-state
identities, Riccati integration, and the step() integrator."""

import numpy as np
import pytest

from visnav.errors import (MissingStereoPairError, NonFiniteStateError,
                           UnknownLandmarkError)
from visnav.geom import (E3, I3, dist_identity, exp_so3, psi_antisym,
                         random_rotation, skew)
from visnav.observer import (GainConfig, ObserverState, attitude_innovation,
                             build_A, error_state, innovation_mono,
                             innovation_position, innovation_stereo,
                             riccati_rhs, run_continuous, step,
                             StereoBearingSource)
from visnav.sim import (GRAVITY, BearingFrame, CameraExtrinsics,
                        EightTrajectory, Landmark, RigidBodyState,
                        default_stereo_rig, make_bearing_frame,
                        make_position_frame, sample_landmarks)


def _truth(rng):
    return RigidBodyState(t=0.0, R=random_rotation(rng),
                          p=rng.normal(0.0, 2.0, 3),
                          v=rng.normal(0.0, 1.0, 3),
                          omega=np.zeros(3), a=np.zeros(3))


def _random_estimate(rng):
    return ObserverState.initial(R=random_rotation(rng),
                                 p=rng.normal(0.0, 2.0, 3),
                                 v=rng.normal(0.0, 1.0, 3),
                                 e=rng.normal(0.0, 1.0, (3, 3)))


def _landmarks(rng, n=5):
    return [Landmark(i, rng.uniform(-5.0, 5.0, 3)) for i in range(n)]


# ---------------------------------------------------------------------------
# attitude innovation


def test_attitude_innovation_hand_value():
    # e_hat rows (0,1,0), (-1,0,0), (0,0,1):
    #   rho_1 * (0,1,0) x (1,0,0) = 0.5 * (0,0,-1)
    #   rho_2 * (-1,0,0) x (0,1,0) = 0.3 * (0,0,-1)
    #   rho_3 * (0,0,1) x (0,0,1) = 0
    # half the sum: (0, 0, -0.4)
    est = ObserverState.initial(e=np.array([[0.0, 1.0, 0.0],
                                            [-1.0, 0.0, 0.0],
                                            [0.0, 0.0, 1.0]]))
    s = attitude_innovation(est, GainConfig())
    assert np.allclose(s, [0.0, 0.0, -0.4], atol=1e-15)


def test_attitude_innovation_zero_at_alignment():
    est = ObserverState.initial()
    assert np.allclose(attitude_innovation(est, GainConfig()), 0.0)


def test_attitude_innovation_decomposition():
    # With consistent auxiliary vectors (e_tilde = 0) the innovation equals
    # k_r * antisymmetric-projection(M R_tilde); the general case adds a
    # linear term (k_r/2) rho_i e_i^x R_hat acting on the e_tilde blocks.
    rng = np.random.default_rng(11)
    cfg = GainConfig(k_r=1.7)
    M = cfg.rho_matrix()
    worst = 0.0
    for _ in range(1000):
        truth = _truth(rng)
        est = _random_estimate(rng)
        est.e = E3 @ truth.R @ est.R.T  # consistent: e_tilde = 0
        R_tilde, x = error_state(truth, est)
        assert np.linalg.norm(x[3:12]) < 1e-12
        s = attitude_innovation(est, cfg)
        worst = max(worst, np.max(np.abs(
            s - cfg.k_r * psi_antisym(M @ R_tilde))))
    assert worst <= 1e-10

    # general e_hat: full decomposition sigma_R = k psi_a(M R_tilde) + Gam x
    worst = 0.0
    for _ in range(1000):
        truth = _truth(rng)
        est = _random_estimate(rng)
        R_tilde, x = error_state(truth, est)
        Gam = np.zeros((3, 15))
        for i in range(3):
            Gam[:, 3 + 3 * i:6 + 3 * i] = \
                0.5 * cfg.k_r * cfg.rho[i] * skew(E3[i]) @ est.R
        s = attitude_innovation(est, cfg)
        worst = max(worst, np.max(np.abs(
            s - cfg.k_r * psi_antisym(M @ R_tilde) - Gam @ x)))
    assert worst <= 1e-10


# ---------------------------------------------------------------------------
# output linearity: sigma_y = C x for every mode


@pytest.mark.parametrize("mode", ["stereo", "monocular", "position3d"])
def test_output_linearity(mode):
    rng = np.random.default_rng(23)
    cams = default_stereo_rig()
    worst = 0.0
    for _ in range(100):
        truth = _truth(rng)
        lms = _landmarks(rng)
        est = _random_estimate(rng)
        if mode == "position3d":
            frame = make_position_frame(truth, lms)
            sy, C = innovation_position(est, frame, lms)
        elif mode == "stereo":
            frame = make_bearing_frame(truth, lms, cams)
            sy, C = innovation_stereo(est, frame, cams, lms)
        else:
            frame = make_bearing_frame(truth, lms, cams[:1])
            sy, C = innovation_mono(est, frame, cams[0], lms)
        assert C.shape == (15, 15)
        _, x = error_state(truth, est)
        worst = max(worst, np.max(np.abs(sy - C @ x)))
    assert worst <= 1e-9


def test_output_linearity_with_missing_landmark():
    # landmarks absent from the frame are omitted; the identity still holds
    rng = np.random.default_rng(29)
    cams = default_stereo_rig()
    truth = _truth(rng)
    lms = _landmarks(rng)
    est = _random_estimate(rng)
    frame = make_bearing_frame(truth, lms, cams)
    for cam_id in (1, 2):
        del frame.obs[(cam_id, lms[2].id)]
    sy, C = innovation_stereo(est, frame, cams, lms)
    assert sy.shape == (12,) and C.shape == (12, 15)
    _, x = error_state(truth, est)
    assert np.max(np.abs(sy - C @ x)) <= 1e-9


def test_innovation_empty_frame():
    est = ObserverState.initial()
    sy, C = innovation_stereo(est, BearingFrame(t=0.0),
                              default_stereo_rig(), [Landmark(0, np.ones(3))])
    assert sy.size == 0 and C.shape == (0, 15)


def test_innovation_missing_stereo_pair():
    rng = np.random.default_rng(31)
    cams = default_stereo_rig()
    truth = _truth(rng)
    lms = _landmarks(rng)
    frame = make_bearing_frame(truth, lms, cams)
    del frame.obs[(2, lms[0].id)]
    est = _random_estimate(rng)
    with pytest.raises(MissingStereoPairError):
        innovation_stereo(est, frame, cams, lms)
    # fallback keeps the landmark with a single-projector block
    sy, C = innovation_stereo(est, frame, cams, lms, allow_mono_fallback=True)
    assert sy.shape == (15,)
    _, x = error_state(truth, est)
    assert np.max(np.abs(sy - C @ x)) <= 1e-9


def test_innovation_unknown_landmark():
    est = ObserverState.initial()
    frame = BearingFrame(t=0.0, obs={(1, 99): np.array([0.0, 0.0, 1.0])})
    with pytest.raises(UnknownLandmarkError):
        innovation_stereo(est, frame, default_stereo_rig(),
                          [Landmark(0, np.ones(3))], allow_mono_fallback=True)


# ---------------------------------------------------------------------------
# state matrix


def test_build_A_structure():
    rng = np.random.default_rng(37)
    omega = rng.normal(size=3)
    g = np.array(GRAVITY)
    A = build_A(omega, g)
    ref = np.zeros((15, 15))
    for i in range(5):
        ref[3 * i:3 * i + 3, 3 * i:3 * i + 3] = -skew(omega)
    ref[0:3, 12:15] = I3
    for j in range(3):
        ref[12:15, 3 + 3 * j:6 + 3 * j] = g[j] * I3
    assert np.array_equal(A, ref)


def test_constant_part_nilpotent():
    Abar = build_A(np.zeros(3), np.array(GRAVITY))
    A2 = Abar @ Abar
    assert np.any(A2 != 0.0)
    assert np.max(np.abs(A2 @ Abar)) == 0.0


# ---------------------------------------------------------------------------
# error state


def test_error_state_zero_at_truth():
    rng = np.random.default_rng(41)
    truth = _truth(rng)
    est = ObserverState.initial(R=truth.R.copy(), p=truth.p.copy(),
                                v=truth.v.copy(), e=E3 @ truth.R @ truth.R.T)
    R_tilde, x = error_state(truth, est)
    assert np.max(np.abs(R_tilde - I3)) <= 1e-14
    assert np.max(np.abs(x)) <= 1e-14


def test_error_state_right_shift_invariance():
    # Rotating both attitudes by a common right factor leaves R_tilde
    # unchanged and only re-expresses the error blocks in the new body
    # frame (norms preserved).
    rng = np.random.default_rng(43)
    for _ in range(50):
        truth = _truth(rng)
        est = _random_estimate(rng)
        Q = random_rotation(rng)
        R_tilde, x = error_state(truth, est)
        shifted = RigidBodyState(t=0.0, R=truth.R @ Q, p=truth.p, v=truth.v,
                                 omega=truth.omega, a=truth.a)
        est_shift = est.copy()
        est_shift.R = est.R @ Q
        R_tilde2, x2 = error_state(shifted, est_shift)
        assert np.max(np.abs(R_tilde2 - R_tilde)) <= 1e-12
        for blk in range(5):
            s = slice(3 * blk, 3 * blk + 3)
            assert abs(np.linalg.norm(x2[s]) - np.linalg.norm(x[s])) <= 1e-12


# ---------------------------------------------------------------------------
# Riccati equation


def test_riccati_scalar_closed_form():
    # A=0, C=Q=V=I decouples into dp/dt = 1 - p^2 per eigenvalue:
    # p(t) = ((1+p0)e^{2t} - (1-p0)) / ((1+p0)e^{2t} + (1-p0)), p0 = 4.
    A = np.zeros((15, 15))
    C = np.eye(15)
    Q = np.eye(15)
    V = np.eye(15)
    P = 4.0 * np.eye(15)
    h, t_end = 1e-3, 1.0
    n = int(round(t_end / h))
    for _ in range(n):
        k1 = riccati_rhs(P, A, C, Q, V)
        k2 = riccati_rhs(P + 0.5 * h * k1, A, C, Q, V)
        k3 = riccati_rhs(P + 0.5 * h * k2, A, C, Q, V)
        k4 = riccati_rhs(P + h * k3, A, C, Q, V)
        P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    p0 = 4.0
    e2t = np.exp(2.0 * t_end)
    p_exact = ((1 + p0) * e2t - (1 - p0)) / ((1 + p0) * e2t + (1 - p0))
    assert np.max(np.abs(P - p_exact * np.eye(15))) <= 1e-9
    assert np.max(np.abs(P - P.T)) == 0.0


def test_riccati_rhs_no_measurement_growth():
    P = np.diag(np.linspace(1.0, 2.0, 15))
    A = build_A(np.array([0.1, -0.2, 0.3]), np.array(GRAVITY))
    V = 1e-4 * np.eye(15)
    out = riccati_rhs(P, A, np.zeros((0, 15)), np.zeros((0, 0)), V)
    ref = A @ P + P @ A.T + V
    assert np.max(np.abs(out - 0.5 * (ref + ref.T))) <= 1e-15


# ---------------------------------------------------------------------------
# integration


def test_free_fall_exact():
    # omega = 0, accelerometer reads 0: the estimate must reproduce the
    # ballistic arc exactly (RK4 is exact on polynomials of degree <= 3).
    g = np.array(GRAVITY)
    p0, v0 = np.array([1.0, -2.0, 3.0]), np.array([0.5, 0.2, -0.1])
    est = ObserverState.initial(p=p0, v=v0, P=1e-6 * np.eye(15))
    cfg = GainConfig()
    dt, t = 1.0 / 200.0, 0.0
    for _ in range(200):
        est = step(est, (np.zeros(3), np.zeros(3)), cfg, dt, t=t)
        t += dt
    assert np.max(np.abs(est.R - I3)) <= 1e-13
    assert np.max(np.abs(est.e - E3)) <= 1e-13
    assert np.max(np.abs(est.v - (v0 + g * t))) <= 1e-12
    assert np.max(np.abs(est.p - (p0 + v0 * t + 0.5 * g * t * t))) <= 1e-12


def test_equilibrium_invariance_short():
    # Starting from zero error the stereo-corrected estimate must stay on
    # the truth trajectory to integration accuracy over 1 s.
    traj = EightTrajectory(t_end=1.0)
    lms = sample_landmarks(5, seed=0)
    cams = default_stereo_rig()
    st0 = traj.state(0.0)
    est0 = ObserverState.initial(R=st0.R.copy(), p=st0.p.copy(),
                                 v=st0.v.copy(), P=1e-4 * np.eye(15))
    _, states = run_continuous(est0, traj.imu,
                               StereoBearingSource(traj, lms, cams),
                               GainConfig(), t_end=1.0)
    st = traj.state(1.0)
    est = states[-1]
    assert np.linalg.norm(st.R - est.R) <= 1e-8
    assert np.linalg.norm(est.e - E3) <= 1e-8
    assert np.linalg.norm(st.p - est.p) <= 1e-8
    assert np.linalg.norm(st.v - est.v) <= 1e-8


def test_equilibrium_invariance_long():
    traj = EightTrajectory(t_end=10.0)
    lms = sample_landmarks(5, seed=0)
    cams = default_stereo_rig()
    st0 = traj.state(0.0)
    est0 = ObserverState.initial(R=st0.R.copy(), p=st0.p.copy(),
                                 v=st0.v.copy(), P=1e-4 * np.eye(15))
    _, states = run_continuous(est0, traj.imu,
                               StereoBearingSource(traj, lms, cams),
                               GainConfig(), t_end=10.0)
    st = traj.state(10.0)
    est = states[-1]
    assert dist_identity(st.R @ est.R.T) <= 1e-7
    assert np.linalg.norm(st.p - est.p) <= 1e-7
    assert np.linalg.norm(st.v - est.v) <= 1e-7


def test_flow_matches_none_returning_measurement():
    # a measurement callable that always reports "nothing" must reproduce
    # the pure inertial flow bit for bit
    traj = EightTrajectory(t_end=0.1)
    est0 = ObserverState.initial(R=exp_so3(np.array([0.2, -0.1, 0.3])))
    cfg = GainConfig()
    a = est0.copy()
    b = est0.copy()
    t, dt = 0.0, 1.0 / 200.0
    for _ in range(20):
        a = step(a, traj.imu, cfg, dt, t=t)
        b = step(b, traj.imu, cfg, dt, t=t, meas=lambda est, tau: None)
        t += dt
    for fa, fb in ((a.R, b.R), (a.p, b.p), (a.v, b.v), (a.e, b.e), (a.P, b.P)):
        assert np.array_equal(fa, fb)


def test_step_nonfinite_guard():
    est = ObserverState.initial(P=np.full((15, 15), np.nan))
    with pytest.raises(NonFiniteStateError):
        step(est, (np.zeros(3), np.zeros(3)), GainConfig(), 1.0 / 200.0)


def test_run_continuous_bookkeeping():
    traj = EightTrajectory(t_end=0.5)
    est0 = ObserverState.initial()
    times, states = run_continuous(est0, traj.imu, None, GainConfig(),
                                   t_end=0.5)
    assert len(times) == len(states) == 101
    assert times[0] == 0.0 and abs(times[-1] - 0.5) < 1e-12
    assert states[0] is not est0  # stored as an independent copy
    assert np.array_equal(states[0].R, est0.R)


# ---------------------------------------------------------------------------
# configuration validation


def test_gain_config_rejects_bad_values():
    with pytest.raises(ValueError):
        GainConfig(k_r=0.0)
    with pytest.raises(ValueError):
        GainConfig(rho=(0.5, 0.5, 0.2))
    with pytest.raises(ValueError):
        GainConfig(rho=(0.5, -0.3, 0.2))
    with pytest.raises(ValueError):
        GainConfig(q_reg=0.0)
    with pytest.raises(ValueError):
        GainConfig(gravity=np.zeros(2))


def test_gain_config_matrix_weights():
    cfg = GainConfig()
    assert np.array_equal(cfg.q_matrix(6), 1e3 * np.eye(6))
    assert np.array_equal(cfg.v_matrix(), 1e-4 * np.eye(15))
    assert np.array_equal(cfg.rho_matrix(), np.diag([0.5, 0.3, 0.2]))
