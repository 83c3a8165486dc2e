import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from somiv.errors import ConfigError
from somiv.sim import (Dataset, InputDesign, NoiseConfig, check_excitation, design_input,
                       read_dataset_csv, run_experiment, step, write_dataset_csv)
from somiv.vessel import TRUE_VALUES, ShipParams, VesselState, rotation

P = ShipParams.preset("true")
QUIET = NoiseConfig().without_measurement_noise().without_disturbances()


def test_zero_amplitude_is_constant():
    tau = design_input(InputDesign(tau_bar=(5, -3, 2), pulse_amp=(0, 0, 0)), 300, seed=1)
    np.testing.assert_array_equal(tau, np.tile([5.0, -3.0, 2.0], (300, 1)))


def test_design_deterministic():
    d = InputDesign()
    np.testing.assert_array_equal(design_input(d, 500, 4), design_input(d, 500, 4))
    assert not np.array_equal(design_input(d, 500, 4), design_input(d, 500, 5))


def test_pulses_stay_within_amplitude():
    d = InputDesign(tau_bar=(10, 20, 30), pulse_amp=(1, 2, 3))
    tau = design_input(d, 2000, 0) - np.array(d.tau_bar)
    assert np.all(np.abs(tau) <= np.array(d.pulse_amp) + 1e-12)


def test_zigzag_validation_input():
    d = InputDesign().validation()
    tau = design_input(d, 1200, 0)
    assert np.all(tau[:, 0] == d.tau_bar[0])
    assert not tau[:, 1].any()
    yaw = tau[:, 2]
    assert yaw.max() > 0.9 * d.zigzag_amp and yaw.min() < -0.9 * d.zigzag_amp


def test_invalid_design():
    with pytest.raises(ConfigError):
        InputDesign(width_range=(0, 5))
    with pytest.raises(ConfigError):
        InputDesign(width_range=(10, 5))
    with pytest.raises(ConfigError):
        InputDesign(smoothing=-1)


def test_mirrored_design():
    assert InputDesign(tau_bar=(1, 2, 3)).mirrored().tau_bar == (1.0, -2.0, -3.0)


def test_negative_variance_rejected():
    with pytest.raises(ConfigError):
        NoiseConfig(var_e_psi=-1)


# -- single step --------------------------------------------------------------

def _state(nu):
    return VesselState(np.array(nu, dtype=float), np.zeros(3))


def test_step_zero_equilibrium():
    out = step(P, _state([0, 0, 0]), np.zeros(3), np.zeros(3), np.zeros(3))
    assert not out.nu.any() and not out.eta.any()


def test_step_surge_only():
    out = step(P, _state([1, 0, 0]), np.zeros(3), np.zeros(3), np.zeros(3))
    assert out.nu[0] == pytest.approx(0.8995, abs=1e-15)


def test_step_matches_hand_evaluation():
    u, v, r = 1.0, 0.5, 0.1
    th = dict(zip(("Xu", "Xvr", "Xuu", "Wuu", "Xt", "Yv", "Yur", "Yvv", "Yvr", "Wvv", "Yt",
                   "Nr", "Nuv", "Nvv", "Nvr", "Wuv", "Nt"), TRUE_VALUES))
    du = th["Xu"] * u + th["Xvr"] * v * r + (th["Xuu"] + th["Wuu"]) * u * abs(u)
    dv = th["Yv"] * v + th["Yur"] * u * r + (th["Yvv"] + th["Wvv"]) * v * abs(v) \
        + th["Yvr"] * r * abs(v)
    dr = th["Nr"] * r + (th["Nuv"] + th["Wuv"]) * u * v + th["Nvv"] * v * abs(v) \
        + th["Nvr"] * r * abs(v)
    out = step(P, _state([u, v, r]), np.zeros(3), np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(out.nu, [u + du, v + dv, r + dr], rtol=0, atol=1e-15)
    np.testing.assert_allclose(out.eta, [u, v, r], atol=1e-15)


def test_step_matches_kernel_with_disturbances():
    ds = run_experiment(P, InputDesign(), NoiseConfig(), 50, seed=3)
    t = ds.truth
    for k in (0, 10, 37):
        jinv = rotation(t.eta[k, 2]).T
        nu_c = jinv @ np.append(t.current[k], 0.0)
        nu_w = jinv @ np.append(t.wind[k], 0.0)
        out = step(P, VesselState(t.nu[k], t.eta[k]), ds.u[k], nu_c, nu_w)
        np.testing.assert_allclose(out.nu, t.nu[k + 1], atol=1e-13)
        np.testing.assert_allclose(out.eta, t.eta[k + 1], atol=1e-12)


# -- experiments --------------------------------------------------------------

def test_noise_free_measurements_equal_truth():
    ds = run_experiment(P, InputDesign(), QUIET, 300, seed=1)
    np.testing.assert_array_equal(ds.y, ds.truth.nu)
    np.testing.assert_array_equal(ds.y_psi, ds.truth.eta[:, 2])
    assert not ds.y_aux.any()


def test_measurement_noise_mean():
    noise = NoiseConfig().without_disturbances()
    n = 100_000
    ds = run_experiment(P, InputDesign(), noise, n, seed=12)
    bound = 4 * np.sqrt(noise.var_e_nu) / np.sqrt(n)
    assert np.all(np.abs((ds.y - ds.truth.nu).mean(axis=0)) < bound)


def test_static_input_circles():
    d = InputDesign(pulse_amp=(0, 0, 0))
    ds = run_experiment(P, d, QUIET, 2000, seed=0)
    dpsi = np.diff(ds.truth.eta[:, 2])
    assert np.all(dpsi > 0) or np.all(dpsi < 0)
    assert abs(ds.truth.eta[-1, 2] - ds.truth.eta[0, 2]) > 2 * math.pi


def test_experiment_deterministic():
    a = run_experiment(P, InputDesign(), NoiseConfig(), 400, seed=11)
    b = run_experiment(P, InputDesign(), NoiseConfig(), 400, seed=11)
    for name in ("u", "y", "y_psi", "y_aux"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    for x, y in zip(a.truth, b.truth):
        assert np.array_equal(x, y)


def test_input_independent_of_noise_settings():
    a = run_experiment(P, InputDesign(), NoiseConfig(), 400, seed=11)
    b = run_experiment(P, InputDesign(), QUIET, 400, seed=11)
    np.testing.assert_array_equal(a.u, b.u)


def test_aux_measures_wind_relative_velocity():
    noise = NoiseConfig(var_e_nu=0, var_e_psi=0, var_e_aux=0)
    ds = run_experiment(P, InputDesign(), noise, 200, seed=5)
    t = ds.truth
    nu_w = np.einsum("kji,kj->ki", np.stack([rotation(p) for p in t.eta[:, 2]]),
                     np.column_stack([t.wind, np.zeros(len(t.wind))]))
    np.testing.assert_allclose(ds.y + ds.y_aux, t.nu - nu_w, atol=1e-14)


def test_measured_rotation_orthogonal():
    ds = run_experiment(P, InputDesign(), NoiseConfig(), 300, seed=2)
    gram = np.swapaxes(ds.Y_R, 1, 2) @ ds.Y_R
    np.testing.assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-12)


def test_dissipation_without_input():
    ds = run_experiment(P, InputDesign(tau_bar=(0, 0, 0)), QUIET, 500, seed=0,
                        nu0=np.array([2.0, 0.5, 0.05]))
    speed = np.linalg.norm(ds.truth.nu, axis=1)
    assert np.all(np.diff(speed) <= 1e-15)


def test_view_and_truncate():
    ds = run_experiment(P, InputDesign(), NoiseConfig(), 300, seed=2)
    assert ds.view().truth is None and ds.truth is not None
    short = ds.truncate(120)
    assert short.n_d == 120 and short.truth.nu.shape == (120, 3)
    np.testing.assert_array_equal(short.y, ds.y[:120])


def test_dataset_length_check():
    with pytest.raises(ValueError):
        Dataset(u=np.zeros((5, 3)), y=np.zeros((4, 3)), y_psi=np.zeros(5))


# -- excitation diagnostics ---------------------------------------------------

def test_clean_offset_data_not_flagged():
    ds = run_experiment(P, InputDesign(), QUIET, 2000, seed=4)
    rep = check_excitation(ds)
    assert 1 not in rep.flagged() and 2 not in rep.flagged()


def test_zigzag_flags_yaw_only():
    ds = run_experiment(P, InputDesign().validation(), QUIET, 3000, seed=0)
    flagged = check_excitation(ds).flagged()
    assert 3 in flagged and 1 not in flagged


def test_all_zero_dataset():
    n = 50
    ds = Dataset(u=np.zeros((n, 3)), y=np.zeros((n, 3)), y_psi=np.zeros(n),
                 y_aux=np.zeros((n, 3)), meta={"std_e_nu": [0.01] * 3, "std_e_aux": [0.01] * 3})
    rep = check_excitation(ds)
    assert all(c.amplitude_violation == 1.0 for c in rep.measured)
    assert rep.flagged() == [1, 2, 3]
    assert "VIOLATED" in rep.format()


# -- CSV ----------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    ds = run_experiment(P, InputDesign(), NoiseConfig(), 100, seed=9, psi0=0.4)
    path = tmp_path / "exp.csv"
    write_dataset_csv(ds, path, truth=True)
    back = read_dataset_csv(path)
    for name in ("u", "y", "y_psi", "y_aux"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    for x, y in zip(back.truth, ds.truth):
        np.testing.assert_array_equal(x, y)
    assert back.psi0 == 0.4 and back.seed == 9
    assert back.meta["std_e_nu"] == ds.meta["std_e_nu"]


def test_csv_header_and_no_truth(tmp_path):
    ds = run_experiment(P, InputDesign(), NoiseConfig(), 20, seed=1)
    path = tmp_path / "exp.csv"
    write_dataset_csv(ds, path)
    text = path.read_text().splitlines()
    header = next(line for line in text if not line.startswith("#"))
    assert header == "k,u1,u2,u3,y1,y2,y3,y_psi,yaux1,yaux2,yaux3"
    assert read_dataset_csv(path).truth is None


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        read_dataset_csv(path)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(4, 60))
def test_design_widths_respected(seed, lo):
    d = InputDesign(tau_bar=(0, 0, 0), pulse_amp=(1, 1, 1), width_range=(lo, lo + 10),
                    smoothing=0)
    tau = design_input(d, 400, seed)
    for c in range(3):
        switches = np.flatnonzero(np.diff(tau[:, c]) != 0)
        gaps = np.diff(np.concatenate([[-1], switches]))
        assert np.all(gaps[1:] >= lo)
