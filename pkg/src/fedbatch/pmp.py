"""Maximum-principle objects for the unregularized minimal-time problem:
Hamiltonian, adjoint system, switching function, singular arcs with their
feedback flow and closed-form volume growth, the controllability check, the
boundary curve through the target, and time-to-target under the arc-seeking
synthesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad

from . import kernels
from .dynamics import (DEFAULT_ATOL, DEFAULT_RTOL, PlanarState, ProcessParams,
                       SingularSynthesis, Trajectory, _Runner, default_t_max,
                       simulate)
from .errors import DomainError, NumericalError, TargetTimeoutError
from .growth import (CriticalPointSet, GrowthModel, eval_mu, eval_mu_prime,
                     eval_mu_second, find_local_maxima)
from .kernels import MODE_HAM_FORWARD, MODE_SIGMA, P_A, P_B

ARC_DERIVATIVE_TOL = 1e-6
DEGENERATE_CURVATURE_TOL = 1e-10


@dataclass(frozen=True)
class Adjoint:
    """Costates of (S, V) plus the abnormal multiplier (<= 0)."""

    lambda_S: float
    lambda_V: float
    lambda_0: float = -1.0

    def __post_init__(self):
        if self.lambda_0 > 0:
            raise DomainError("abnormal multiplier must be <= 0")


@dataclass(frozen=True)
class SingularArc:
    S_bar: float
    mu_value: float


@dataclass(frozen=True)
class SingularFlowResult:
    Q: float
    clamped: bool


def hamiltonian(params: ProcessParams, model: GrowthModel, state: PlanarState,
                adj: Adjoint, Q: float) -> float:
    X = params.M0 / state.V + params.S_in - state.S
    phi = switching_function(params, state, adj)
    return adj.lambda_0 - adj.lambda_S * eval_mu(model, state.S) * X + Q * phi


def switching_function(params: ProcessParams, state: PlanarState,
                       adj: Adjoint) -> float:
    """phi = lambda_S (S_in - S)/V + lambda_V; its sign selects the bang flow."""
    if state.V <= 0:
        raise DomainError(f"V must be > 0, got {state.V}")
    return adj.lambda_S * (params.S_in - state.S) / state.V + adj.lambda_V


def adjoint_field(params: ProcessParams, model: GrowthModel,
                  state: PlanarState, adj: Adjoint, Q: float):
    """(d lambda_S, d lambda_V) along the flow with control Q."""
    S, V = state.S, state.V
    X = params.M0 / V + params.S_in - S
    m = eval_mu(model, S)
    md = eval_mu_prime(model, S)
    dlS = adj.lambda_S * (md * X - m + Q / V)
    dlV = adj.lambda_S * (-m * params.M0 + Q * (params.S_in - S)) / (V * V)
    return dlS, dlV


def phi_rate(params: ProcessParams, model: GrowthModel, state: PlanarState,
             adj: Adjoint) -> float:
    """Closed-form time derivative of the switching function (control-free)."""
    X = params.M0 / state.V + params.S_in - state.S
    return (adj.lambda_S * (params.S_in - state.S)
            * eval_mu_prime(model, state.S) * X / state.V)


def require_arc(model: GrowthModel, S_bar: float,
                tol: float = ARC_DERIVATIVE_TOL) -> SingularArc:
    """Validate that S_bar is an interior maximum of mu (a singular level)."""
    d1 = eval_mu_prime(model, S_bar)
    if abs(d1) > tol:
        raise DomainError(f"mu'({S_bar}) = {d1:.3e}; not a critical point")
    if eval_mu_second(model, S_bar) >= 0:
        raise DomainError(f"S_bar = {S_bar} is not a local maximum of mu")
    return SingularArc(float(S_bar), eval_mu(model, S_bar))


def singular_flow_Qs(params: ProcessParams, model: GrowthModel, S_bar: float,
                     V: float) -> SingularFlowResult:
    """Feedback flow holding S = S_bar: mu(S_bar) * (M0/(S_in - S_bar) + V)."""
    require_arc(model, S_bar)
    if V <= 0:
        raise DomainError(f"V must be > 0, got {V}")
    q = kernels.singular_flow(model.coeffs, params.S_in, params.M0, S_bar, V)
    return SingularFlowResult(float(q), bool(q > params.Q_max))


def singular_volume(params: ProcessParams, model: GrowthModel, S_bar: float,
                    V1: float, t1: float, t) -> float:
    """Closed-form volume along a singular arc started at (V1, t1)."""
    if np.any(np.asarray(t) < t1):
        raise DomainError("need t >= t1")
    m = eval_mu(model, S_bar)
    c = params.M0 / (params.S_in - S_bar)
    growth = np.exp(m * (np.asarray(t, dtype=float) - t1))
    out = V1 * growth + c * (growth - 1.0)
    return float(out) if np.isscalar(t) else out


def classify_fold(model: GrowthModel, S_bar: float,
                  tol: float = ARC_DERIVATIVE_TOL) -> str:
    """Sign-of-curvature class of a critical point of mu: only hyperbolic
    points (local maxima) admit optimal singular arcs."""
    d1 = eval_mu_prime(model, S_bar)
    if abs(d1) > tol:
        raise DomainError(f"mu'({S_bar}) = {d1:.3e}; not a critical point")
    d2 = eval_mu_second(model, S_bar)
    if abs(d2) < DEGENERATE_CURVATURE_TOL:
        return "degenerate"
    return "hyperbolic" if d2 < 0 else "elliptic"


@dataclass(frozen=True)
class Assumption3Report:
    holds: bool
    max_required_flow: float
    argmax_S: float
    Q_max: float


def check_assumption3(params: ProcessParams, model: GrowthModel,
                      maxima: Optional[CriticalPointSet] = None,
                      scan_points: int = 4097) -> Assumption3Report:
    """Q_max must strictly exceed the largest flow the singular feedback can
    request on [min S_bar, max S_bar] at full volume."""
    if maxima is None:
        maxima = find_local_maxima(model, 0.0, params.S_in)
    if not maxima.maxima:
        return Assumption3Report(False, float("nan"), float("nan"), params.Q_max)
    lo = maxima.maxima[0].S_bar
    hi = maxima.maxima[-1].S_bar

    def needed(S):
        return eval_mu(model, S) * (params.M0 / (params.S_in - S) + params.V_max)

    if hi - lo < 1e-14:
        return Assumption3Report(params.Q_max > needed(lo), needed(lo), lo,
                                 params.Q_max)
    grid = np.linspace(lo, hi, scan_points)
    vals = np.array([needed(s) for s in grid])
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, scan_points - 1)]
    # golden-section refinement of the bracketed maximum
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = needed(c), needed(d)
    while b - a > 1e-12 * (hi - lo):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = needed(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = needed(d)
    s_star = 0.5 * (a + b)
    m_star = max(needed(s_star), vals[k])
    s_star = s_star if needed(s_star) >= vals[k] else grid[k]
    return Assumption3Report(params.Q_max > m_star, float(m_star),
                             float(s_star), params.Q_max)


@dataclass(frozen=True)
class SigmaCurve:
    """The full-flow trajectory through (S_ref, V_max), sampled as a graph
    sigma(V); everything below it reaches the target with S <= S_ref."""

    V: np.ndarray
    sigma: np.ndarray
    increasing: bool

    def sigma_at(self, v):
        return np.interp(v, self.V[::-1], self.sigma[::-1])


def sigma_curve(params: ProcessParams, model: GrowthModel,
                v_min: Optional[float] = None, rtol: float = DEFAULT_RTOL,
                atol: float = DEFAULT_ATOL) -> SigmaCurve:
    """Integrate d sigma/dv backward in volume from sigma(V_max) = S_ref
    until sigma reaches 0 or v reaches v_min."""
    if v_min is None:
        v_min = 1e-3 * params.V_max
    runner = _Runner(params, GrowthModel(model.terms), rtol, atol, math.inf)
    pars = params.pack(a=0.0, b=params.V_max)
    y0 = np.array([params.S_ref])
    events = [("sigma_zero", 0, 0.0, -1.0)]
    t_arr, y_arr, fired = runner.leg(MODE_SIGMA, pars, 0.0, y0,
                                     params.V_max - v_min, events)
    v = params.V_max - t_arr
    sig = y_arr[:, 0]
    increasing = bool(np.all(np.diff(sig[::-1]) > 0))
    return SigmaCurve(v, sig, increasing)


def batch_time_quadrature(params: ProcessParams, model: GrowthModel,
                          S_from: float, S_to: float, V: float) -> float:
    """Batch (Q = 0) transit time from S_from down to S_to at fixed volume,
    by adaptive Gauss-Kronrod quadrature."""
    if not (0 <= S_to <= S_from < params.S_in):
        raise DomainError(f"need 0 <= S_to <= S_from < S_in, got {S_from}, {S_to}")
    if S_from == S_to:
        return 0.0

    coeffs = model.coeffs

    def integrand(S):
        X = params.M0 / V + params.S_in - S
        return 1.0 / (kernels.mu_scalar(coeffs, S) * X)

    val, err = quad(integrand, S_to, S_from, epsabs=1e-10, epsrel=1e-11,
                    limit=200)
    if not np.isfinite(val):
        raise NumericalError("batch-time quadrature failed")
    return float(val)


@dataclass(frozen=True)
class TimeToTarget:
    T: float
    trajectory: Trajectory
    saturated: bool
    arc_entry_t: Optional[float]
    vmax_t: Optional[float]
    batch_time_sim: Optional[float]
    batch_time_quad: Optional[float]


def time_to_target(params: ProcessParams, model: GrowthModel,
                   policy: SingularSynthesis, state0: PlanarState,
                   rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                   t_max: Optional[float] = None) -> TimeToTarget:
    """Run the arc-seeking synthesis until S reaches S_ref at full volume.

    The closing batch phase is cross-checked against the quadrature form;
    both durations are reported.
    """
    if not isinstance(policy, SingularSynthesis):
        raise DomainError("time_to_target expects a SingularSynthesis policy")
    require_arc(model, policy.S_bar)
    if not ((params.S_ref <= state0.S < params.S_in)
            and 0 < state0.V <= params.V_max):
        raise DomainError(f"initial state {state0} outside the working domain")

    if state0.S == params.S_ref and state0.V == params.V_max:
        traj = Trajectory(np.array([0.0]),
                          np.array([[state0.S, state0.V]]),
                          np.array([0.0]), [], True, False, "hit_Sref")
        return TimeToTarget(0.0, traj, False, None, 0.0, 0.0, 0.0)

    if t_max is None:
        t_max = default_t_max(params, model)
    traj = simulate(params, model, policy, state0, stop=("hit_Sref",),
                    t_max=t_max, rtol=rtol, atol=atol)
    if traj.stop_reason != "hit_Sref":
        if traj.stop_reason == "t_max":
            raise TargetTimeoutError(
                f"target not reached within t_max = {t_max}")
        raise NumericalError(f"synthesis run ended with {traj.stop_reason}")

    T = traj.duration
    arc_entry = next((e.t for e in traj.events if e.kind == "hit_Smax_arc"), None)
    if state0.V == params.V_max:
        vmax_t = 0.0
        s_exit = state0.S
    else:
        hit = next((e for e in traj.events if e.kind == "hit_Vmax"), None)
        vmax_t = hit.t if hit else None
        s_exit = hit.state.S if hit else None
    batch_sim = batch_quad = None
    if vmax_t is not None:
        batch_sim = T - vmax_t
        batch_quad = batch_time_quadrature(params, model, s_exit,
                                           params.S_ref, params.V_max)
    return TimeToTarget(float(T), traj, traj.saturated, arc_entry, vmax_t,
                        batch_sim, batch_quad)


def integrate_extremal(params: ProcessParams, model: GrowthModel,
                       state0: PlanarState, adj0: Adjoint, Q: float,
                       t_final: float, rtol: float = DEFAULT_RTOL,
                       atol: float = DEFAULT_ATOL):
    """Integrate state plus costates of the original problem under a constant
    admissible flow; returns (t, S, V, lambda_S, lambda_V) arrays."""
    if not (0 <= Q <= params.Q_max):
        raise DomainError(f"flow {Q} outside [0, {params.Q_max}]")
    runner = _Runner(params, model, rtol, atol, math.inf)
    pars = params.pack(a=Q)
    y0 = np.array([state0.S, state0.V, adj0.lambda_S, adj0.lambda_V])
    events = [("left_domain", 0, 0.0, -1.0),
              ("left_domain", 0, params.S_in, 1.0),
              ("left_domain", 1, params.V_max * (1 + 1e-12), 1.0)]
    t_arr, y_arr, fired = runner.leg(MODE_HAM_FORWARD, pars, 0.0, y0,
                                     t_final, events)
    return t_arr, y_arr[:, 0], y_arr[:, 1], y_arr[:, 2], y_arr[:, 3]
