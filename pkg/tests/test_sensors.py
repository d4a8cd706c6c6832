import numpy as np
import pytest

from twsbr.plant import PlantState
from twsbr.sensors import FilterState, ImuConfig, ImuReading, complementary_filter, sample_imu

STATE = PlantState(theta_p=0.07, omega_p=-0.4)


def test_noiseless_passthrough():
    r = sample_imu(STATE, ImuConfig(), t=1.25, index=250)
    assert r.theta_acc == STATE.theta_p
    assert r.omega_gyro == STATE.omega_p
    assert r.t == 1.25


def test_bias_only():
    cfg = ImuConfig(gyro_bias=0.03)
    r = sample_imu(STATE, cfg, t=0.0, index=0)
    assert r.theta_acc == STATE.theta_p
    assert r.omega_gyro == pytest.approx(STATE.omega_p + 0.03)


def test_noise_stream_is_reproducible():
    cfg = ImuConfig(accel_noise_std=0.01, gyro_noise_std=0.02, seed=42)
    run1 = [sample_imu(STATE, cfg, t=k * 0.005, index=k) for k in range(50)]
    run2 = [sample_imu(STATE, cfg, t=k * 0.005, index=k) for k in range(50)]
    assert run1 == run2


def test_noise_depends_on_index_and_seed():
    cfg = ImuConfig(accel_noise_std=0.01, seed=42)
    a = sample_imu(STATE, cfg, t=0.0, index=0)
    b = sample_imu(STATE, cfg, t=0.0, index=1)
    c = sample_imu(STATE, ImuConfig(accel_noise_std=0.01, seed=43), t=0.0, index=0)
    assert a.theta_acc != b.theta_acc
    assert a.theta_acc != c.theta_acc


def test_noise_magnitude_sane():
    cfg = ImuConfig(accel_noise_std=0.01, seed=7)
    vals = np.array([sample_imu(STATE, cfg, 0.0, k).theta_acc - STATE.theta_p
                     for k in range(4000)])
    assert abs(vals.mean()) < 5e-4
    assert vals.std() == pytest.approx(0.01, rel=0.05)


def test_negative_std_rejected():
    with pytest.raises(ValueError):
        ImuConfig(accel_noise_std=-0.1)


def test_filter_weight_bounds():
    with pytest.raises(ValueError):
        FilterState(theta_filt=0.0, w=1.5)


def test_filter_pure_accelerometer():
    reading = ImuReading(theta_acc=0.12, omega_gyro=5.0, t=0.0)
    out = complementary_filter(FilterState(theta_filt=0.5, w=0.0), reading, 0.005)
    assert out.theta_filt == 0.12


def test_filter_pure_gyro_integration():
    reading = ImuReading(theta_acc=99.0, omega_gyro=0.2, t=0.0)
    out = complementary_filter(FilterState(theta_filt=0.1, w=1.0), reading, 0.01)
    assert out.theta_filt == pytest.approx(0.1 + 0.2 * 0.01)


def test_filter_geometric_convergence_closed_form():
    # constant theta_acc = theta*, omega = 0, start 0:
    # theta_filt(n) = theta* (1 - w^n)
    w, target = 0.98, 0.3
    st = FilterState(theta_filt=0.0, w=w)
    reading = ImuReading(theta_acc=target, omega_gyro=0.0, t=0.0)
    for n in range(1, 200):
        st = complementary_filter(st, reading, 0.005)
        assert st.theta_filt == pytest.approx(target * (1.0 - w**n), rel=1e-12)


def test_filter_error_decay_ratio_is_w():
    w = 0.9
    st = FilterState(theta_filt=0.0, w=w)
    reading = ImuReading(theta_acc=1.0, omega_gyro=0.0, t=0.0)
    errors = []
    for _ in range(10):
        st = complementary_filter(st, reading, 0.005)
        errors.append(1.0 - st.theta_filt)
    ratios = [errors[i + 1] / errors[i] for i in range(9)]
    assert all(r == pytest.approx(w, rel=1e-12) for r in ratios)


def test_filter_output_is_convex_combination():
    rng = np.random.default_rng(3)
    for _ in range(200):
        w = rng.uniform(0.0, 1.0)
        prev = FilterState(theta_filt=rng.normal(), w=w)
        reading = ImuReading(theta_acc=rng.normal(), omega_gyro=rng.normal(), t=0.0)
        dt = rng.uniform(1e-4, 0.05)
        out = complementary_filter(prev, reading, dt)
        gyro_prop = prev.theta_filt + reading.omega_gyro * dt
        lo = min(gyro_prop, reading.theta_acc)
        hi = max(gyro_prop, reading.theta_acc)
        assert lo - 1e-12 <= out.theta_filt <= hi + 1e-12


def test_filter_bias_steady_state_error():
    # constant true angle with gyro bias b: steady error = w b dt / (1 - w)
    w, b, dt, target = 0.95, 0.02, 0.005, 0.1
    st = FilterState(theta_filt=target, w=w)
    reading = ImuReading(theta_acc=target, omega_gyro=b, t=0.0)
    for _ in range(2000):
        st = complementary_filter(st, reading, dt)
    assert st.theta_filt - target == pytest.approx(w * b * dt / (1.0 - w), rel=1e-9)


def test_filter_requires_positive_dt():
    with pytest.raises(ValueError):
        complementary_filter(FilterState(), ImuReading(0.0, 0.0, 0.0), 0.0)
