"""Smoothed minimal-time problem: the control-affine split of the planar
dynamics, the disc-constrained auxiliary control that makes the Hamiltonian
maximizer unique and smooth, and the field of extremals obtained by flowing
the Hamiltonian system backward from the target corner.

Terminal costates are unit vectors parameterized by an angle measured
*clockwise* from the positive S-axis, so the working interval (pi, 3pi/2)
yields p_S < 0 and p_V > 0 -- the sign pattern of costates along
time-optimal approaches to the corner.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .dynamics import PlanarState, ProcessParams, _Runner
from .errors import ConfigError, DegenerateAdjointError, DomainError
from .growth import GrowthModel, eval_mu, eval_mu_prime
from .kernels import MODE_HAM_BACKWARD, P_FDJAC

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-11
DEFAULT_T_BACK_MAX = 200.0
DEFAULT_MAX_STEP = 0.25
DEFAULT_EPSILON = 0.01
DEFAULT_N_ALPHA = 64
EPSILON_SCHEDULE = (0.04, 0.02, 0.01, 0.005)


def terminal_costate(alpha: float) -> np.ndarray:
    """Unit costate at the target, angle measured clockwise from +S."""
    return np.array([math.cos(alpha), -math.sin(alpha)])


def default_alpha_grid(n: int = DEFAULT_N_ALPHA) -> np.ndarray:
    """n midpoint angles of the open interval (pi, 3pi/2)."""
    k = np.arange(n)
    return math.pi + (k + 0.5) * (0.5 * math.pi / n)


@dataclass(frozen=True)
class AugmentedControls:
    """Rescaled flow u1 = 2Q/Q_max - 1 and the fictitious control u2,
    constrained to the unit disc."""

    u1: float
    u2: float

    def __post_init__(self):
        if self.u1 * self.u1 + self.u2 * self.u2 > 1.0 + 1e-9:
            raise DomainError("controls must satisfy u1^2 + u2^2 <= 1")

    def flow(self, params: ProcessParams) -> float:
        return params.Q_max * (self.u1 + 1.0) / 2.0


def drift_F(params: ProcessParams, model: GrowthModel,
            state: PlanarState) -> np.ndarray:
    """Drift absorbing the midpoint inflow, so F + G1*u1 with u1 in [-1, 1]
    spans exactly Q in [0, Q_max]."""
    X = params.M0 / state.V + params.S_in - state.S
    base = np.array([-eval_mu(model, state.S) * X, 0.0])
    return base + control_field_G1(params, state)


def control_field_G1(params: ProcessParams, state: PlanarState) -> np.ndarray:
    if state.V <= 0:
        raise DomainError(f"V must be > 0, got {state.V}")
    half = 0.5 * params.Q_max
    return np.array([half * (params.S_in - state.S) / state.V, half])


def control_field_G2(state: Optional[PlanarState] = None) -> np.ndarray:
    """Constant auxiliary direction; with G1 it spans the plane everywhere
    and its norm is bounded by 1."""
    return np.array([1.0, 0.0])


def drift_jacobian(params: ProcessParams, model: GrowthModel,
                   state: PlanarState) -> np.ndarray:
    """Analytic d(F)/d(S, V); the second row is zero (constant fill rate)."""
    S, V = state.S, state.V
    X = params.M0 / V + params.S_in - S
    m = eval_mu(model, S)
    md = eval_mu_prime(model, S)
    half = 0.5 * params.Q_max
    return np.array([
        [-md * X + m - half / V,
         m * params.M0 / (V * V) - half * (params.S_in - S) / (V * V)],
        [0.0, 0.0],
    ])


def g1_jacobian(params: ProcessParams, state: PlanarState) -> np.ndarray:
    S, V = state.S, state.V
    half = 0.5 * params.Q_max
    return np.array([
        [-half / V, -half * (params.S_in - S) / (V * V)],
        [0.0, 0.0],
    ])


def maximizing_controls(params: ProcessParams, state: PlanarState,
                        p: np.ndarray, epsilon: float) -> AugmentedControls:
    """The unique disc-constrained maximizer of the smoothed Hamiltonian."""
    g1 = float(p @ control_field_G1(params, state))
    g2 = float(p[0])
    rho = math.hypot(g1, epsilon * g2)
    if rho < 1e-30:
        raise DegenerateAdjointError(
            "adjoint nearly orthogonal to both control fields")
    return AugmentedControls(g1 / rho, epsilon * g2 / rho)


def hamiltonian_eps(params: ProcessParams, model: GrowthModel, S, V, pS, pV,
                    epsilon: float):
    """Value of the smoothed Hamiltonian (without the constant multiplier):
    p.F + sqrt((p.G1)^2 + (eps p.G2)^2); vectorized over samples."""
    S = np.asarray(S, dtype=float)
    V = np.asarray(V, dtype=float)
    X = params.M0 / V + params.S_in - S
    half = 0.5 * params.Q_max
    G1S = half * (params.S_in - S) / V
    FS = -eval_mu(model, S) * X + G1S
    g1 = pS * G1S + pV * half
    rho = np.hypot(g1, epsilon * pS)
    return pS * FS + pV * half + rho


@dataclass(frozen=True)
class ExtremalConfig:
    """Knobs of one backward extremal: smoothing magnitude, terminal-costate
    angle, integration tolerances and stop rules."""

    epsilon: float = DEFAULT_EPSILON
    alpha: float = 1.25 * math.pi
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    max_step: float = DEFAULT_MAX_STEP
    t_back_max: float = DEFAULT_T_BACK_MAX
    v_min: Optional[float] = None       # default 0.02 * V_max
    S_max: Optional[float] = None       # default S_in - 1e-6
    fd_jacobian: bool = False
    max_samples: int = 200_000

    def __post_init__(self):
        if self.epsilon == 0:
            raise ConfigError("epsilon must be nonzero")

    def resolve(self, params: ProcessParams):
        v_min = 0.02 * params.V_max if self.v_min is None else self.v_min
        s_max = params.S_in - 1e-6 if self.S_max is None else self.S_max
        if not (0 < v_min < params.V_max):
            raise ConfigError(f"v_min {v_min} outside (0, V_max)")
        if not (0 < s_max <= params.S_in):
            raise ConfigError(f"S_max {s_max} outside (0, S_in]")
        return v_min, s_max


@dataclass(frozen=True)
class Extremal:
    """One backward solution of the smoothed Hamiltonian system.  Sample 0
    is exactly the target corner with the unit terminal costate; H_residual
    is the drift |H(t_back) - H(0)| of the conserved Hamiltonian."""

    params: ProcessParams
    config: ExtremalConfig
    t_back: np.ndarray
    S: np.ndarray
    V: np.ndarray
    pS: np.ndarray
    pV: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    H_residual: np.ndarray
    stop_reason: str

    @property
    def alpha(self) -> float:
        return self.config.alpha

    @property
    def epsilon(self) -> float:
        return self.config.epsilon

    @property
    def n_samples(self) -> int:
        return int(self.t_back.shape[0])

    def normalized_xy(self):
        return self.S / self.params.S_in, self.V / self.params.V_max

    def interior_mask(self) -> np.ndarray:
        p = self.params
        return ((self.S > p.S_ref) & (self.S < p.S_in)
                & (self.V > 0) & (self.V < p.V_max))

    def tracking_time(self, S_bar: float, tol_abs: float) -> float:
        """Backward time spent within tol_abs of the arc level."""
        if self.n_samples < 2:
            return 0.0
        dt = np.diff(self.t_back)
        near = np.abs(self.S[:-1] - S_bar) <= tol_abs
        return float(dt[near].sum())

    def first_tracking_time(self, S_bar: float, tol_abs: float) -> float:
        near = np.abs(self.S - S_bar) <= tol_abs
        idx = np.flatnonzero(near)
        return float(self.t_back[idx[0]]) if idx.size else math.inf

    def write_csv(self, path):
        from .serialize import write_csv

        rows = np.column_stack([self.t_back, self.S, self.V, self.pS,
                                self.pV, self.u1, self.u2, self.H_residual])
        write_csv(path, ("t_back", "S", "V", "pS", "pV", "u1", "u2",
                         "H_residual"), rows)


_STOP_NAMES = {None: "t_back_max", "v_min": "v_min", "S_max": "S_max",
               "S_low": "S_low"}


def backward_extremal(params: ProcessParams, model: GrowthModel,
                      config: ExtremalConfig) -> Extremal:
    """Flow state and costate backward in time from the target corner with
    the closed-loop maximizing controls, until a stop rule triggers."""
    v_min, s_max = config.resolve(params)
    pars = params.pack(a=config.epsilon)
    if config.fd_jacobian:
        pars[P_FDJAC] = 1.0
    pf = terminal_costate(config.alpha)
    y0 = np.array([params.S_ref, params.V_max, pf[0], pf[1]])
    runner = _Runner(params, model, config.rtol, config.atol,
                     config.max_step, cap=config.max_samples)
    events = [("v_min", 1, v_min, -1.0),
              ("S_max", 0, s_max, 1.0),
              ("S_low", 0, 0.0, -1.0)]
    t_arr, y_arr, fired = runner.leg(MODE_HAM_BACKWARD, pars, 0.0, y0,
                                     config.t_back_max, events)
    S, V, pS, pV = (y_arr[:, k] for k in range(4))
    half = 0.5 * params.Q_max
    g1 = pS * half * (params.S_in - S) / V + pV * half
    rho = np.hypot(g1, config.epsilon * pS)
    u1 = g1 / rho
    u2 = config.epsilon * pS / rho
    H = hamiltonian_eps(params, model, S, V, pS, pV, config.epsilon)
    return Extremal(params, config, t_arr, S, V, pS, pV, u1, u2,
                    np.abs(H - H[0]), _STOP_NAMES.get(fired, fired))


def extremal_field(params: ProcessParams, model: GrowthModel,
                   epsilon: float = DEFAULT_EPSILON,
                   alphas: Optional[Sequence[float]] = None,
                   n_alpha: int = DEFAULT_N_ALPHA,
                   base_config: Optional[ExtremalConfig] = None,
                   threads: int = 1,
                   allow_any_alpha: bool = False) -> list:
    """One backward extremal per angle, order preserved.  Angles default to
    the midpoint grid of (pi, 3pi/2); other angles require
    ``allow_any_alpha`` since their sign pattern is not meaningful for the
    synthesis."""
    if alphas is None:
        alphas = default_alpha_grid(n_alpha)
    alphas = [float(a) for a in alphas]
    if not allow_any_alpha:
        for a in alphas:
            if not (math.pi < a < 1.5 * math.pi):
                raise ConfigError(
                    f"alpha {a} outside (pi, 3pi/2); pass allow_any_alpha=True")
    base = base_config if base_config is not None else ExtremalConfig()

    def one(a):
        return backward_extremal(params, model,
                                 replace(base, epsilon=epsilon, alpha=a))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, alphas))
    return [one(a) for a in alphas]


@dataclass(frozen=True)
class MinTimeEstimate:
    T_hat: float
    nearest_alpha: float
    distance: float


def approximate_min_time(field: Sequence[Extremal],
                         z0: PlanarState) -> MinTimeEstimate:
    """Backward time of the field sample nearest to z0 in normalized
    (S/S_in, V/V_max) coordinates.  The caller judges whether the match
    distance is small enough to trust the estimate."""
    if not field:
        raise DomainError("empty extremal field")
    best = (math.inf, 0.0, 0.0)
    for ext in field:
        xs, ys = ext.normalized_xy()
        d2 = ((xs - z0.S / ext.params.S_in) ** 2
              + (ys - z0.V / ext.params.V_max) ** 2)
        k = int(np.argmin(d2))
        if d2[k] < best[0]:
            best = (float(d2[k]), float(ext.t_back[k]), ext.alpha)
    return MinTimeEstimate(best[1], best[2], math.sqrt(best[0]))
