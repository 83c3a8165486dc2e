"""Instrumental-variable estimators for the vessel.

Four predictors are supported:

``iv1``  basic predictor, regressors on the measured state only;
``iv2``  augmented predictor, adds nuisance rows in the measured rotation;
``iv3``  augmented hydrodynamic predictor plus a wind block evaluated on the
         auxiliary wind-relative measurement ``y + y_aux``;
``ls``   least squares on the ``iv3`` regressors (the biased baseline).

All IV kinds use zero-mean instruments simulated from a noise- and
disturbance-free model and refine them from the latest estimate.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import RankDeficientError, SignPatternError, SimulationDivergedError
from .sim import check_excitation, equilibrium
from .som import SignPattern, derive_augmented, eval_regressor
from .vessel import (HYDRO_PARAMS, NOMINAL_VALUES, PARAM_NAMES, R_MASK, ShipParams,
                     merged_spec, r_matrix, ship_regressor_spec)


class PredictorKind(enum.Enum):
    BASIC = "iv1"
    AUGMENTED = "iv2"
    AUGMENTED_WITH_AUX = "iv3"
    LEAST_SQUARES_AUX = "ls"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"basic": "iv1", "augmented": "iv2", "augmentedwithaux": "iv3",
                   "augmented_with_aux": "iv3", "aux": "iv3", "leastsquaresaux": "ls",
                   "least_squares_aux": "ls", "least_squares": "ls"}
        key = aliases.get(key, key)
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown estimator {value!r} (expected one of iv1, iv2, iv3, ls)")

    @property
    def is_iv(self):
        return self is not PredictorKind.LEAST_SQUARES_AUX

    @property
    def uses_aux(self):
        return self in (PredictorKind.AUGMENTED_WITH_AUX, PredictorKind.LEAST_SQUARES_AUX)

    @property
    def augmented(self):
        return self is not PredictorKind.BASIC


ALL_KINDS = tuple(PredictorKind)

# Aggregated parameterization: coefficients whose regressors coincide when the
# hydrodynamic and wind terms see the same signal are only identifiable as sums.
_MERGED, _GROUPS = merged_spec()
AGGREGATE_NAMES = _MERGED.names
AGGREGATE_GROUPS = _GROUPS


def aggregate(theta17):
    """Collapse a 17-vector onto the identifiable sums (length 14)."""
    theta17 = np.asarray(theta17, dtype=float)
    return np.array([theta17[list(g)].sum() for g in AGGREGATE_GROUPS])


def expand_aggregate(theta14):
    """17-vector assigning each sum to its hydrodynamic member, zero to the rest."""
    out = np.zeros(len(PARAM_NAMES))
    for value, g in zip(theta14, AGGREGATE_GROUPS):
        out[g[0]] = value
    return out


def param_error(theta17, truth17):
    """RMS of relative errors over the identifiable (aggregated) parameters."""
    est = aggregate(theta17)
    ref = aggregate(truth17)
    return float(np.sqrt(np.mean(((est - ref) / ref) ** 2)))


# ---------------------------------------------------------------------------
# Sign patterns
# ---------------------------------------------------------------------------

def _pattern_from_means(means, modulus_channels, what):
    signs = []
    for c, m in enumerate(means, start=1):
        if m == 0 and c in modulus_channels:
            raise SignPatternError(
                f"time-average of {what} channel {c} is exactly zero; the experiment needs an "
                "excitation offset that keeps this channel away from the origin")
        signs.append(1 if m >= 0 else -1)
    return SignPattern(tuple(signs))


def infer_sign_patterns(ds, relative=False):
    """Sign pattern from time-averages of the measured state.

    With ``relative=True`` the pattern of ``y + y_aux`` is returned instead.
    Returns ``(pattern, excitation_report)``.
    """
    if ds.n_d == 0:
        raise ValueError("dataset is empty")
    channels = set(ship_regressor_spec().hydro.modulus_indices())
    if relative:
        if ds.y_aux is None:
            raise ValueError("dataset has no auxiliary measurement")
        pattern = _pattern_from_means(np.mean(ds.y + ds.y_aux, axis=0), channels, "y + y_aux")
    else:
        pattern = _pattern_from_means(np.mean(ds.y, axis=0), channels, "measured")
    return pattern, check_excitation(ds)


# ---------------------------------------------------------------------------
# Predictor structures
# ---------------------------------------------------------------------------

class PredictorStructure:
    """Parameter layout and regressor evaluation for one kind and sign set.

    The parameter vector is ``[theta_base; nuisance; theta_wind]``; the wind
    block exists only for the auxiliary kinds.
    """

    def __init__(self, kind, signs=None):
        self.kind = PredictorKind.parse(kind)
        if self.kind.uses_aux:
            st = ship_regressor_spec()
            self.base, self.wind = st.hydro, st.wind
        else:
            self.base, self.wind = _MERGED, None
        self.signs = tuple(signs) if signs is not None else None
        if self.kind.augmented:
            if not self.signs:
                raise SignPatternError("augmented predictors need one sign pattern per experiment")
            self.aug = derive_augmented(self.base, self.signs, 2, R_MASK)
        else:
            self.aug = None
        self.n_base = self.base.n_theta
        self.n_nuisance = 0 if self.aug is None else self.aug.n_rho + self.aug.n_lambda
        self.n_rho = 0 if self.aug is None else self.aug.n_rho
        self.n_wind = 0 if self.wind is None else self.wind.n_theta
        self.names = (list(self.base.names)
                      + ([] if self.aug is None else self.aug.nuisance_labels())
                      + ([] if self.wind is None else list(self.wind.names)))

    @property
    def n_params(self):
        return self.n_base + self.n_nuisance + self.n_wind

    @property
    def theta_index(self):
        """Positions of model (non-nuisance) parameters in the full vector."""
        idx = list(range(self.n_base))
        start = self.n_base + self.n_nuisance
        return np.array(idx + list(range(start, start + self.n_wind)), dtype=int)

    @property
    def nuisance_index(self):
        return np.arange(self.n_base, self.n_base + self.n_nuisance)

    def regressors(self, e, x, u, R=None, x_wind=None):
        """Stacked regressor matrices, shape ``(T, n_params, 3)``."""
        blocks = [eval_regressor(self.base, x, u)]
        if self.aug is not None:
            blocks.append(self.aug.eval_nuisance_rows(e, x, u, R))
        if self.wind is not None:
            blocks.append(eval_regressor(self.wind, x_wind, u))
        return np.concatenate(blocks, axis=-2)

    def theta17(self, beta):
        """Map the model part of ``beta`` to the 17 ship coefficients."""
        beta = np.asarray(beta, dtype=float)
        if self.wind is None:
            return expand_aggregate(beta[:self.n_base])
        out = np.zeros(len(PARAM_NAMES))
        hydro = beta[:self.n_base]
        wind = beta[self.n_base + self.n_nuisance:]
        for name, value in zip(self.base.names, hydro):
            out[PARAM_NAMES.index(name)] = value
        for name, value in zip(self.wind.names, wind):
            out[PARAM_NAMES.index(name)] = value
        return out

    def model_part(self, theta17):
        """Inverse of :meth:`theta17` on the model parameters."""
        theta17 = np.asarray(theta17, dtype=float)
        if self.wind is None:
            return aggregate(theta17)
        idx = [PARAM_NAMES.index(n) for n in self.base.names + self.wind.names]
        return theta17[idx]

    def true_nuisance(self, theta17, v_mean, v_cov=None):
        """Nuisance values implied by ``theta17`` and disturbance moments.

        ``v_mean`` is the mean of the generic disturbance ``v`` (length 2) and
        ``v_cov`` its covariance; degree-two entries use ``E{v_j v_m}``.
        """
        if self.aug is None:
            return np.zeros(0)
        theta = self.model_part(theta17)[:self.n_base]
        v_mean = np.asarray(v_mean, dtype=float)
        second = np.outer(v_mean, v_mean) + (np.zeros((2, 2)) if v_cov is None
                                              else np.asarray(v_cov, dtype=float))
        rho = [v_mean[j - 1] * theta[p - 1] for j, p in self.aug.rho_keys]
        lam = [second[j - 1, m - 1] * theta[p - 1] for j, m, p in self.aug.lambda_keys]
        return np.array(rho + lam)


def _window(ds):
    """Regressor times ``t = 1 .. N_D - 2`` (``t - 1`` is needed by lagged signals)."""
    if ds.n_d < 4:
        raise ValueError("an estimation experiment needs at least four samples")
    return slice(1, ds.n_d - 1)


def build_regressors(ds, struct, e):
    """Regressors ``Phi_i(t)`` and targets ``(y(t+1) - y(t)) / dt`` for experiment ``e``."""
    if struct.kind.uses_aux and ds.y_aux is None:
        raise ValueError(f"estimator {struct.kind.value} requires the auxiliary measurement y_aux")
    sl = _window(ds)
    y = np.asarray(ds.y, dtype=float)
    x_wind = (y + ds.y_aux)[sl] if struct.wind is not None else None
    phi = struct.regressors(e, y[sl], ds.u[sl], ds.Y_R[sl], x_wind)
    target = (y[2:] - y[1:-1]) / ds.dt
    return phi, target


def center(z):
    """Subtract the time-average of every component (two passes for rounding)."""
    z = z - z.mean(axis=0)
    return z - z.mean(axis=0)


def simulate_nominal(theta17, ds):
    """Noise- and disturbance-free response of the model ``theta17`` to ``ds.u``."""
    theta17 = np.asarray(theta17, dtype=float)
    nu0 = equilibrium(theta17, ds.u[0], ds.dt, what="instrument model equilibrium")
    return kernels.simulate_ship(theta17, nu0, ds.psi0, ds.u, dt=ds.dt,
                                 what="instrument model simulation")


def build_instruments(theta17, ds, struct, e, heading="simulated", return_sim=False):
    """Zero-mean instruments for experiment ``e`` from a simulated model.

    The model ``theta17`` is simulated without noise or disturbances under the
    experiment input from the design heading. The predictor structure is then
    evaluated on the simulated velocities and on ``R = J^-1(psi_hat)``. With
    ``heading="lagged"`` the rotation instead uses the measured heading one
    sample back. The wind block is evaluated on the simulated velocity plus the
    auxiliary measurement one sample back, which keeps it uncorrelated with the
    noise in the current regressor. With ``return_sim`` the simulated
    velocities are returned as well.
    """
    nu_hat, eta_hat = simulate_nominal(theta17, ds)
    sl = _window(ds)
    if heading == "simulated":
        R = r_matrix(eta_hat[sl, 2])
    elif heading == "lagged":
        R = r_matrix(ds.y_psi[:-2])
    else:
        raise ValueError(f"unknown instrument heading source {heading!r}")
    x_wind = None
    if struct.wind is not None:
        x_wind = nu_hat[sl] + ds.y_aux[:-2]
    z = center(struct.regressors(e, nu_hat[sl], ds.u[sl], R, x_wind))
    return (z, nu_hat) if return_sim else z


def simulation_cost(datasets, sims):
    """Normalized output error of noise-free simulations against measurements."""
    cost = 0.0
    for ds, nu_hat in zip(datasets, sims):
        y = np.asarray(ds.y, dtype=float)
        dev = np.sum((y - y.mean(axis=0)) ** 2, axis=0)
        cost += float(np.sum(np.sum((y - nu_hat) ** 2, axis=0) / np.maximum(dev, 1e-300)))
    return cost / len(datasets)


# ---------------------------------------------------------------------------
# Stacked system and solve
# ---------------------------------------------------------------------------

@dataclass
class StackedSystem:
    """Per-experiment correlation blocks ``A_i``, ``b_i`` and their stack."""

    blocks_A: list
    blocks_b: list
    names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.blocks_A or len(self.blocks_A) != len(self.blocks_b):
            raise ValueError("need matching, non-empty A and b blocks")
        m = self.blocks_A[0].shape[1]
        for A, b in zip(self.blocks_A, self.blocks_b):
            if A.shape[1] != m or A.shape[0] != b.shape[0]:
                raise ValueError("inconsistent block shapes in stacked system")
            if not np.all(np.isfinite(A)):
                raise ValueError("stacked system contains non-finite entries")

    @classmethod
    def from_series(cls, zs, phis, targets, names=()):
        """``A_i = (1/T) sum_t Z_i(t) Phi_i(t)^T``, ``b_i = (1/T) sum_t Z_i(t) dy(t)``."""
        As, bs = [], []
        for z, phi, dy in zip(zs, phis, targets):
            T = phi.shape[0]
            zf = z.transpose(1, 0, 2).reshape(z.shape[1], -1)
            pf = phi.transpose(1, 0, 2).reshape(phi.shape[1], -1)
            As.append(zf @ pf.T / T)
            bs.append(zf @ dy.reshape(-1) / T)
        return cls(As, bs, list(names))

    @classmethod
    def regression(cls, phis, targets, names=()):
        """Tall least-squares system ``Phi(t)^T beta = dy(t)`` (rows scaled by 1/sqrt(T))."""
        As, bs = [], []
        for phi, dy in zip(phis, targets):
            T = phi.shape[0]
            As.append(phi.transpose(0, 2, 1).reshape(-1, phi.shape[1]) / math.sqrt(T))
            bs.append(dy.reshape(-1) / math.sqrt(T))
        return cls(As, bs, list(names))

    @property
    def A(self):
        return np.vstack(self.blocks_A)

    @property
    def b(self):
        return np.concatenate(self.blocks_b)

    @property
    def n_params(self):
        return self.blocks_A[0].shape[1]

    def select(self, columns):
        cols = list(columns)
        return StackedSystem([A[:, cols] for A in self.blocks_A], list(self.blocks_b),
                             [self.names[c] for c in cols] if self.names else [])


class SolveResult(dict):
    """Plain record: ``beta``, ``singular_values``, ``rank``."""

    __getattr__ = dict.__getitem__


def solve_iv(system):
    """Least-squares solution of the stacked system via an SVD.

    Columns are equilibrated to unit norm first; the rank threshold is
    ``m * eps * sigma_max`` on the equilibrated matrix.
    """
    if isinstance(system, StackedSystem):
        A, b = system.A, system.b
    else:
        A, b = (np.asarray(a, dtype=float) for a in system)
    m = A.shape[1]
    if A.shape[0] < m:
        raise RankDeficientError(A.shape[0], m, np.zeros(0))
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    U, s, Vt = np.linalg.svd(A / scale, full_matrices=False)
    tol = m * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < m:
        raise RankDeficientError(rank, m, s)
    beta = (Vt.T @ ((U.T @ b) / s)) / scale
    return SolveResult(beta=beta, singular_values=s, rank=rank)


def reduce_nuisance_columns(A, protected, tol=1e-9):
    """Drop nuisance columns that are linear combinations of earlier columns.

    Columns are visited in order with the ``protected`` (model parameter)
    columns first; a non-protected column whose normalized residual after
    orthogonalization falls below ``tol`` is dropped. Exact dependencies of this
    kind arise from the rotation structure (``cos^2 + sin^2 = 1`` against
    zero-mean instruments) and must not be mistaken for a rank failure.

    Returns ``(kept, dropped)``; ``dropped`` maps a column to its alias
    coefficients over ``kept``.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0] = 1.0
    An = A / norms
    protected = [int(c) for c in protected]
    order = protected + [c for c in range(m) if c not in set(protected)]
    basis = np.zeros((A.shape[0], 0))
    kept, dropped_cols = [], []
    for c in order:
        v = An[:, c].copy()
        for _ in range(2):
            v -= basis @ (basis.T @ v)
        r = np.linalg.norm(v)
        if c in protected or r > tol:
            kept.append(c)
            if r > 0:
                basis = np.column_stack([basis, v / r])
        else:
            dropped_cols.append(c)
    kept.sort()
    dropped = {}
    for c in dropped_cols:
        coef, *_ = np.linalg.lstsq(A[:, kept], A[:, c], rcond=None)
        dropped[c] = dict(zip(kept, coef))
    return kept, dropped


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateOptions:
    tol: float = 1e-6
    max_iter: int = 20
    heading: str = "simulated"
    drop_tol: float = 1e-9
    reduce: bool = True


@dataclass
class EstimationResult:
    """Estimate plus diagnostics.

    ``beta`` is the full parameter vector of the predictor (``names`` labels
    it); nuisance columns removed as exact aliases hold NaN there. ``theta``
    holds the 17 ship coefficients; for the aggregated kinds, each identifiable
    sum is assigned to its hydrodynamic member.
    """

    kind: PredictorKind
    beta: np.ndarray
    names: list
    theta: np.ndarray
    theta_index: np.ndarray
    nuisance_index: np.ndarray
    singular_values: np.ndarray
    rank: int
    iterations: int
    converged: bool
    sign_patterns: tuple
    dropped: dict
    instrument_mean_max: float = float("nan")
    excitation: tuple = ()
    n_equations: int = 0
    message: str = ""

    @property
    def params(self):
        return ShipParams.from_array(self.theta)

    @property
    def theta_aggregated(self):
        return aggregate(self.theta)

    @property
    def nuisance(self):
        return dict(zip([self.names[i] for i in self.nuisance_index], self.beta[self.nuisance_index]))

    @property
    def rho(self):
        return {k: v for k, v in self.nuisance.items() if "v" in k and not _is_lambda(k)}

    @property
    def lam(self):
        return {k: v for k, v in self.nuisance.items() if _is_lambda(k)}

    @property
    def theta2(self):
        if not self.kind.uses_aux:
            return np.zeros(0)
        return self.beta[self.theta_index[-3:]]

    def report(self, truth=None):
        """Plain-text report: parameter table, spectrum and diagnostics."""
        lines = [f"estimator: {self.kind.value}",
                 f"iterations: {self.iterations}  converged: {self.converged}",
                 f"equations: {self.n_equations}  parameters: {len(self.beta)}  rank: {self.rank}",
                 f"max |instrument row mean|: {self.instrument_mean_max:.3e}"]
        if self.message:
            lines.append(f"note: {self.message}")
        lines.append("")
        if self.kind.uses_aux:
            names, est = list(PARAM_NAMES), self.theta
            ref = None if truth is None else np.asarray(truth, dtype=float)
        else:
            names, est = list(AGGREGATE_NAMES), self.theta_aggregated
            ref = None if truth is None else aggregate(truth)
        head = f"{'parameter':<16} {'estimate':>14}"
        if ref is not None:
            head += f" {'truth':>14} {'rel. error':>12}"
        lines.append(head)
        for k, (name, value) in enumerate(zip(names, est)):
            row = f"{name:<16} {value:>14.6g}"
            if ref is not None:
                rel = abs(value - ref[k]) / abs(ref[k]) if ref[k] != 0 else float("nan")
                row += f" {ref[k]:>14.6g} {rel:>12.3e}"
            lines.append(row)
        if len(self.nuisance_index):
            lines.append("")
            lines.append("nuisance parameters (NaN = removed as exact alias):")
            for name, value in self.nuisance.items():
                lines.append(f"  {name:<22} {value:>14.6g}")
        lines.append("")
        lines.append("singular values (equilibrated): "
                     + " ".join(f"{s:.3e}" for s in self.singular_values))
        if self.sign_patterns:
            pats = ["(" + ",".join(f"{s:+d}" for s in p.states) + ")" if p is not None else "-"
                    for p in self.sign_patterns]
            lines.append("sign patterns: " + " ".join(pats))
        return "\n".join(lines) + "\n"


def _is_lambda(label):
    head = label.split("*", 1)[0]
    return head.count("v") == 2


def _relative_change(new, old):
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-300))


def _solve_reduced(system, struct, opts):
    m = system.n_params
    if opts.reduce and struct.n_nuisance:
        kept, dropped = reduce_nuisance_columns(system.A, struct.theta_index, opts.drop_tol)
    else:
        kept, dropped = list(range(m)), {}
    sol = solve_iv(system.select(kept))
    beta = np.full(m, np.nan)
    beta[kept] = sol.beta
    return beta, sol, dropped


def estimate(datasets, kind, nominal=None, opts=None):
    """Estimate the ship parameters from one or more experiments.

    Parameters
    ----------
    datasets : sequence of Dataset
        Estimation experiments (truth, if present, is ignored).
    kind : PredictorKind or str
    nominal : ShipParams or array, optional
        Starting model for the instruments (defaults to the nominal preset).
    opts : EstimateOptions, optional
    """
    kind = PredictorKind.parse(kind)
    opts = opts or EstimateOptions()
    datasets = [ds.view() for ds in datasets]
    if not datasets:
        raise ValueError("at least one estimation experiment is required")
    if kind.uses_aux and any(ds.y_aux is None for ds in datasets):
        raise ValueError(f"estimator {kind.value} requires the auxiliary measurement y_aux")
    if nominal is None:
        theta17 = np.array(NOMINAL_VALUES)
    elif isinstance(nominal, ShipParams):
        theta17 = nominal.as_array()
    else:
        theta17 = np.asarray(nominal, dtype=float)

    excitation = tuple(check_excitation(ds) for ds in datasets)
    signs = tuple(infer_sign_patterns(ds)[0] for ds in datasets) if kind.augmented else ()
    struct = PredictorStructure(kind, signs or None)
    phis, targets = zip(*(build_regressors(ds, struct, e) for e, ds in enumerate(datasets)))

    common = dict(kind=kind, names=struct.names, theta_index=struct.theta_index,
                  nuisance_index=struct.nuisance_index, sign_patterns=signs,
                  excitation=excitation)

    if not kind.is_iv:
        system = StackedSystem.regression(phis, targets, struct.names)
        beta, sol, dropped = _solve_reduced(system, struct, opts)
        return EstimationResult(beta=beta, theta=struct.theta17(beta),
                                singular_values=sol.singular_values, rank=sol.rank, iterations=1,
                                converged=True, dropped=dropped,
                                n_equations=system.A.shape[0], **common)

    # Without convergence the returned iterate is the one whose noise-free
    # simulation matches the estimation data best; the simulation of iterate k
    # is the one that builds the instruments of iteration k + 1.
    current = struct.model_part(theta17)
    iterates = []
    best = None
    converged = False
    message = ""
    it = 0
    for it in range(1, opts.max_iter + 1):
        try:
            built = [build_instruments(theta17, ds, struct, e, opts.heading, return_sim=True)
                     for e, ds in enumerate(datasets)]
        except SimulationDivergedError as exc:
            if not iterates:
                raise
            message = f"refinement stopped: {exc}"
            it -= 1
            break
        zs, sims = zip(*built)
        if iterates:
            iterates[-1][-1] = simulation_cost(datasets, sims)
        system = StackedSystem.from_series(zs, phis, targets, struct.names)
        beta, sol, dropped = _solve_reduced(system, struct, opts)
        zmean = max(float(np.max(np.abs(z.mean(axis=0)))) for z in zs)
        iterates.append([beta, sol, dropped, zmean, system.A.shape[0], np.inf])
        new = beta[struct.theta_index]
        change = _relative_change(new, current)
        current = new
        theta17 = struct.theta17(beta)
        if change < opts.tol:
            converged = True
            break
    if converged:
        best = iterates[-1]
    else:
        if not message:
            message = f"no convergence within {opts.max_iter} iterations"
            try:
                sims = [simulate_nominal(theta17, ds)[0] for ds in datasets]
                iterates[-1][-1] = simulation_cost(datasets, sims)
            except SimulationDivergedError:
                pass
        pick = min(range(len(iterates)), key=lambda i: iterates[i][-1])
        best = iterates[pick]
        message += f"; returned iterate {pick + 1} (lowest simulation error)"
    beta, sol, dropped, zmean, n_eq, _ = best
    return EstimationResult(beta=beta, theta=struct.theta17(beta),
                            singular_values=sol.singular_values, rank=sol.rank, iterations=it,
                            converged=converged, dropped=dropped, instrument_mean_max=zmean,
                            n_equations=n_eq, message=message, **common)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def fit_metric(y, y_hat):
    """Normalized fit ``100 (1 - ||y - y_hat|| / ||y - mean(y)||)`` per channel."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    squeeze = y.ndim == 1
    if squeeze:
        y, y_hat = y[:, None], y_hat[:, None]
    denom = np.linalg.norm(y - y.mean(axis=0), axis=0)
    if np.any(denom == 0):
        bad = [int(c) + 1 for c in np.flatnonzero(denom == 0)]
        raise ValueError(f"validation channel(s) {bad} are constant; fit is undefined")
    fit = 100.0 * (1.0 - np.linalg.norm(y - y_hat, axis=0) / denom)
    return float(fit[0]) if squeeze else fit


def model_fit(validation, theta17):
    """Free-run the model ``theta17`` on a validation experiment; fit per channel.

    A model whose simulation leaves the finite range scores ``-inf``.
    """
    theta17 = theta17.as_array() if isinstance(theta17, ShipParams) else np.asarray(theta17, float)
    y = np.asarray(validation.y, dtype=float)
    try:
        nu_hat, _ = kernels.simulate_ship(theta17, y[0], validation.psi0, validation.u,
                                          dt=validation.dt, what="validation free run")
    except SimulationDivergedError:
        return np.full(3, -np.inf)
    return fit_metric(y, nu_hat)


__all__ = [
    "PredictorKind", "ALL_KINDS", "PredictorStructure", "StackedSystem", "EstimationResult",
    "EstimateOptions", "infer_sign_patterns", "build_regressors", "build_instruments",
    "solve_iv", "reduce_nuisance_columns", "simulate_nominal", "simulation_cost", "estimate", "fit_metric", "model_fit",
    "aggregate", "expand_aggregate", "param_error", "AGGREGATE_NAMES", "HYDRO_PARAMS",
]
