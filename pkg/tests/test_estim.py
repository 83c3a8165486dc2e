from dataclasses import replace

import numpy as np
import pytest

from somiv.errors import RankDeficientError, SignPatternError
from somiv.estim import (AGGREGATE_NAMES, EstimateOptions, PredictorKind, PredictorStructure,
                         StackedSystem, aggregate, build_instruments, build_regressors, center,
                         estimate, expand_aggregate, fit_metric, infer_sign_patterns, model_fit,
                         param_error, solve_iv)
from somiv.sim import Dataset, InputDesign, NoiseConfig, run_experiment
from somiv.som import eval_regressor
from somiv.vessel import NOMINAL_VALUES, TRUE_VALUES, ShipParams, full_spec

P = ShipParams.preset("true")
TRUE = np.array(TRUE_VALUES)
QUIET = NoiseConfig().without_measurement_noise().without_disturbances()
# Constant current, exactly measured varying wind, no measurement noise.
STEADY = replace(NoiseConfig(), var_e_nu=(0, 0, 0), var_e_psi=0.0, current_var=(0, 0),
                 var_e_aux=(0, 0, 0))


def experiments(noise, n_d, n_exp=2, seed=0, design=InputDesign()):
    out = []
    for i in range(n_exp):
        d = design.mirrored() if i % 2 else design
        out.append(run_experiment(P, d, noise, n_d, seed=seed + i, psi0=2 * np.pi * i / n_exp))
    return out


@pytest.fixture(scope="module")
def clean():
    return experiments(QUIET, 1000)


@pytest.fixture(scope="module")
def steady():
    return experiments(STEADY, 1500, n_exp=4)


@pytest.fixture(scope="module")
def noisy():
    return experiments(NoiseConfig(), 1250, n_exp=4, seed=100)


# -- helpers ------------------------------------------------------------------

def test_kind_parsing():
    assert PredictorKind.parse("IV3") is PredictorKind.AUGMENTED_WITH_AUX
    assert PredictorKind.parse(PredictorKind.BASIC) is PredictorKind.BASIC
    with pytest.raises(ValueError):
        PredictorKind.parse("iv9")
    assert PredictorKind.LEAST_SQUARES_AUX.uses_aux and not PredictorKind.LEAST_SQUARES_AUX.is_iv


def test_aggregate_round_trip():
    agg = aggregate(TRUE)
    assert len(agg) == len(AGGREGATE_NAMES) == 14
    np.testing.assert_allclose(aggregate(expand_aggregate(agg)), agg)
    assert param_error(TRUE, TRUE) == 0.0
    assert param_error(np.array(NOMINAL_VALUES), TRUE) > 0.5


# -- sign patterns ------------------------------------------------------------

def test_sign_pattern_of_offset_data(clean):
    pat, _ = infer_sign_patterns(clean[0])
    assert pat.states[:2] == (1, 1)


def test_sign_pattern_negated(clean):
    ds = clean[0]
    neg = replace(ds, y=-ds.y, y_aux=-ds.y_aux)
    assert infer_sign_patterns(neg)[0] == -infer_sign_patterns(ds)[0]


def test_sign_pattern_constant_negative():
    n = 20
    ds = Dataset(u=np.zeros((n, 3)), y=-np.ones((n, 3)), y_psi=np.zeros(n))
    assert infer_sign_patterns(ds)[0].states == (-1, -1, -1)


def test_sign_pattern_zero_mean_rejected():
    n = 20
    y = np.ones((n, 3))
    y[:, 1] = np.tile([1.0, -1.0], n // 2)
    ds = Dataset(u=np.zeros((n, 3)), y=y, y_psi=np.zeros(n))
    with pytest.raises(SignPatternError):
        infer_sign_patterns(ds)


# -- regressors and instruments -----------------------------------------------

def test_basic_regressors_on_clean_data(clean):
    ds = clean[0]
    struct = PredictorStructure("iv1")
    phi, target = build_regressors(ds, struct, 0)
    truth = eval_regressor(struct.base, ds.truth.nu[1:-1], ds.u[1:-1])
    np.testing.assert_array_equal(phi, truth)
    np.testing.assert_array_equal(target, np.diff(ds.y, axis=0)[1:])


def test_augmented_row_count(clean):
    signs = [infer_sign_patterns(ds)[0] for ds in clean]
    struct = PredictorStructure("iv2", signs)
    phi, _ = build_regressors(clean[1], struct, 1)
    assert phi.shape[1] == struct.n_base + struct.aug.n_rho + struct.aug.n_lambda


def test_aux_kind_needs_aux(clean):
    ds = replace(clean[0], y_aux=None)
    with pytest.raises(ValueError):
        estimate([ds], "iv3")


def test_instruments_zero_mean(noisy):
    signs = [infer_sign_patterns(ds)[0] for ds in noisy]
    for kind in ("iv1", "iv2", "iv3"):
        struct = PredictorStructure(kind, signs if kind != "iv1" else None)
        z = build_instruments(np.array(NOMINAL_VALUES), noisy[0], struct, 0)
        assert np.max(np.abs(z.mean(axis=0))) < 1e-12


def test_instruments_from_true_model_equal_centered_regressors(clean):
    ds = clean[0]
    signs = [infer_sign_patterns(d)[0] for d in clean]
    struct = PredictorStructure("iv2", signs)
    z = build_instruments(TRUE, ds, struct, 0)
    phi, _ = build_regressors(ds, struct, 0)
    np.testing.assert_allclose(z, center(phi), atol=1e-12)


def test_instruments_ignore_measurement_noise(noisy):
    ds = noisy[0]
    other = run_experiment(P, InputDesign(), NoiseConfig(), ds.n_d, seed=100)
    fresh = replace(other, y=other.y + 0.01, y_psi=other.y_psi + 0.01)
    struct = PredictorStructure("iv2", [infer_sign_patterns(ds)[0]])
    np.testing.assert_array_equal(build_instruments(TRUE, ds, struct, 0),
                                  build_instruments(TRUE, fresh, struct, 0))


# -- solver -------------------------------------------------------------------

def test_solve_identity():
    b = np.array([1.0, -2.0, 3.5])
    np.testing.assert_allclose(solve_iv((np.eye(3), b)).beta, b, rtol=1e-15)


def test_solve_square_consistent():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6))
    beta = rng.normal(size=6)
    out = solve_iv((A, A @ beta))
    np.testing.assert_allclose(out.beta, beta, rtol=1e-12)
    assert out.rank == 6


def test_solve_rank_deficient():
    A = np.random.default_rng(1).normal(size=(8, 3))
    A[:, 2] = A[:, 0]
    with pytest.raises(RankDeficientError) as err:
        solve_iv((A, np.ones(8)))
    assert err.value.rank == 2
    assert "full rank" in str(err.value)


def test_stacking_order_irrelevant(noisy):
    opts = EstimateOptions(max_iter=1)
    a = estimate(noisy, "iv2", opts=opts)
    perm = [noisy[i] for i in (2, 0, 3, 1)]
    b = estimate(perm, "iv2", opts=opts)
    np.testing.assert_allclose(b.theta, a.theta, rtol=1e-10, atol=1e-14)
    rng = np.random.default_rng(3)
    blocks = [rng.normal(size=(5, 4)) for _ in range(3)]
    rhs = [rng.normal(size=5) for _ in range(3)]
    s1 = solve_iv(StackedSystem(blocks, rhs)).beta
    s2 = solve_iv(StackedSystem(blocks[::-1], rhs[::-1])).beta
    np.testing.assert_allclose(s1, s2, rtol=1e-10)


def test_square_system_residual_orthogonal(noisy):
    ds = noisy[0]
    struct = PredictorStructure("iv1")
    phi, target = build_regressors(ds, struct, 0)
    z = build_instruments(np.array(NOMINAL_VALUES), ds, struct, 0)
    system = StackedSystem.from_series([z], [phi], [target])
    beta = solve_iv(system).beta
    resid = target - np.einsum("tpf,p->tf", phi, beta)
    moment = np.einsum("tpf,tf->p", z, resid) / len(target)
    assert np.linalg.norm(moment) < 1e-12 * max(1.0, np.linalg.norm(system.b))


def test_augmented_normal_equations_hold(noisy):
    res = estimate(noisy[:1], "iv2", opts=EstimateOptions(max_iter=1))
    signs = res.sign_patterns
    struct = PredictorStructure("iv2", signs)
    phi, target = build_regressors(noisy[0].view(), struct, 0)
    z = build_instruments(np.array(NOMINAL_VALUES), noisy[0], struct, 0)
    system = StackedSystem.from_series([z], [phi], [target])
    kept = np.flatnonzero(np.isfinite(res.beta))
    A = system.A[:, kept]
    r = system.b - A @ res.beta[kept]
    assert np.linalg.norm(A.T @ r) < 1e-10 * np.linalg.norm(A) * np.linalg.norm(system.b)


# -- estimation ---------------------------------------------------------------

@pytest.mark.parametrize("kind", ["iv1", "iv2"])
def test_clean_recovery_aggregated(clean, kind):
    res = estimate(clean, kind)
    np.testing.assert_allclose(res.theta_aggregated, aggregate(TRUE), rtol=1e-8)
    assert res.converged
    assert res.instrument_mean_max < 1e-12


@pytest.mark.parametrize("kind", ["iv3", "ls"])
def test_clean_aux_kinds_rank_deficient(clean, kind):
    # Without wind the wind-relative and current-relative regressors coincide.
    with pytest.raises(RankDeficientError):
        estimate(clean, kind)


@pytest.mark.parametrize("kind", ["iv3", "ls"])
def test_steady_wind_recovers_all_parameters(steady, kind):
    res = estimate(steady, kind)
    np.testing.assert_allclose(res.theta, TRUE, rtol=1e-8)


def test_fixed_wind_only_identifies_sums():
    # A wind that is constant in the world frame is a combination of the current
    # nuisance columns, so only the hydro+wind sums are pinned down.
    data = experiments(replace(STEADY, wind_var=(0, 0)), 1000)
    res = estimate(data, "iv3")
    np.testing.assert_allclose(res.theta_aggregated, aggregate(TRUE), rtol=1e-8)


def test_nuisance_matches_disturbance_mean(steady):
    res = estimate(steady, "iv3", opts=EstimateOptions(max_iter=2))
    struct = PredictorStructure("iv3", res.sign_patterns)
    full = np.full(len(res.names), np.nan)
    full[struct.theta_index] = struct.model_part(TRUE)
    full[struct.nuisance_index] = struct.true_nuisance(TRUE, -np.array(STEADY.current_mean))
    # An aliased column's true value is carried by the columns it aliases.
    target = full.copy()
    for col, coefs in res.dropped.items():
        for k, c in coefs.items():
            target[k] += c * full[col]
        target[col] = np.nan
    ok = np.isfinite(target)
    np.testing.assert_allclose(res.beta[ok], target[ok], rtol=1e-8, atol=1e-12)
    rho = res.rho
    assert rho["v1*X_vr"] == pytest.approx(-0.2 * 1.0, rel=1e-8)


def test_least_squares_is_biased():
    data = experiments(NoiseConfig(), 5000, n_exp=4, seed=7)
    res = estimate(data, "ls")
    assert param_error(res.theta, TRUE) > 0.5


def test_refinement_bookkeeping(noisy):
    res = estimate(noisy, "iv2", opts=EstimateOptions(max_iter=3))
    assert not res.converged
    assert res.iterations == 3
    assert "lowest simulation error" in res.message
    assert res.instrument_mean_max < 1e-12
    one = estimate(noisy, "iv2", opts=EstimateOptions(max_iter=1))
    assert one.iterations == 1


def test_estimate_ignores_truth(noisy):
    a = estimate(noisy, "iv3", opts=EstimateOptions(max_iter=2))
    b = estimate([ds.view() for ds in noisy], "iv3", opts=EstimateOptions(max_iter=2))
    np.testing.assert_array_equal(a.beta, b.beta)


def test_report_lists_parameters(noisy):
    res = estimate(noisy, "iv3", opts=EstimateOptions(max_iter=2))
    text = res.report(TRUE)
    assert "W_uv" in text and "rel. error" in text and "singular values" in text
    assert len(res.theta2) == 3


# -- fit metric ---------------------------------------------------------------

def test_fit_perfect_and_mean():
    y = np.random.default_rng(0).normal(size=(40, 3))
    np.testing.assert_allclose(fit_metric(y, y), 100.0)
    np.testing.assert_allclose(fit_metric(y, np.broadcast_to(y.mean(axis=0), y.shape)), 0.0,
                               atol=1e-12)


def test_fit_hand_case():
    value = fit_metric(np.array([0.0, 1.0, 0.0, 1.0]), np.zeros(4))
    assert abs(value - 100.0 * (1.0 - np.sqrt(2.0))) < 1e-10


def test_fit_constant_channel():
    with pytest.raises(ValueError):
        fit_metric(np.ones(5), np.zeros(5))


def test_model_fit_true_and_divergent():
    val = run_experiment(P, InputDesign().validation(), QUIET, 600, seed=0)
    np.testing.assert_allclose(model_fit(val, P), 100.0)
    bad = TRUE.copy()
    bad[0] = 3.0
    assert np.all(model_fit(val, bad) == -np.inf)


def test_full_spec_and_structure_agree():
    st3 = PredictorStructure("iv3", [infer_sign_patterns(
        run_experiment(P, InputDesign(), QUIET, 50, seed=0))[0]])
    assert set(st3.base.names) | set(st3.wind.names) == set(full_spec().names)
