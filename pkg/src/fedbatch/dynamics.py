"""Fed-batch tank dynamics: the 3-D (S, B, V) system, its reduction to the
(S, V) plane through the conserved quantity M = V*(B/y + S - S_in), and
event-driven simulation under feedback policies.

Simulation restarts the integrator at every policy switch located by event
detection (discontinuities are never stepped across), and pins the substrate
level exactly while sliding on a singular arc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import (ConfigError, ControlError, DomainError, NumericalError,
                     StiffnessError, TargetTimeoutError)
from .growth import GrowthModel, eval_mu
from .kernels import (MODE_FULL_CONST, MODE_PLANAR_CONST, MODE_PLANAR_PIN,
                      MODE_PLANAR_QS, NPARS, P_A, P_B, P_M0, P_QMAX, P_SIN,
                      P_Y, STATUS_BUFFER_FULL, STATUS_EVENT,
                      STATUS_RHS_FAILURE, STATUS_STEP_UNDERFLOW,
                      STATUS_T_BOUND)

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-11
EVENT_TIME_TOL = 1e-10
ARC_SNAP_FRACTION = 1e-9  # |S - S_bar| <= frac * S_in counts as "on the arc"


@dataclass(frozen=True)
class ProcessParams:
    """Tank and feed constants.  M0 is the conserved mass offset
    V0*(X0 + S0 - S_in); y is only used by the 3-D form."""

    S_in: float
    S_ref: float
    V_max: float
    Q_max: float
    M0: float
    y: float = 1.0

    def __post_init__(self):
        if not (self.S_in > self.S_ref > 0):
            raise ConfigError(f"need S_in > S_ref > 0, got {self.S_in}, {self.S_ref}")
        for name in ("V_max", "Q_max", "y"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not np.isfinite(self.M0):
            raise ConfigError("M0 must be finite")
        for name in ("S_in", "S_ref", "V_max", "Q_max", "M0", "y"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def pack(self, a=0.0, b=0.0) -> np.ndarray:
        pars = np.zeros(NPARS)
        pars[P_SIN] = self.S_in
        pars[P_M0] = self.M0
        pars[P_QMAX] = self.Q_max
        pars[P_A] = a
        pars[P_B] = b
        pars[P_Y] = self.y
        return pars


@dataclass(frozen=True)
class PlanarState:
    S: float
    V: float

    def as_array(self):
        return np.array([self.S, self.V], dtype=np.float64)


@dataclass(frozen=True)
class FullState:
    S: float
    B: float
    V: float

    def as_array(self):
        return np.array([self.S, self.B, self.V], dtype=np.float64)


def in_domain(params: ProcessParams, state: PlanarState) -> bool:
    """Membership in the working domain [S_ref, S_in) x (0, V_max]."""
    return (params.S_ref <= state.S < params.S_in) and (0 < state.V <= params.V_max)


def biomass_X(params: ProcessParams, state: PlanarState) -> float:
    """Reduced biomass X = M0/V + S_in - S recovered from the planar state."""
    if state.V <= 0:
        raise DomainError(f"V must be > 0, got {state.V}")
    return params.M0 / state.V + params.S_in - state.S


def planar_vector_field(params: ProcessParams, model: GrowthModel,
                        state: PlanarState, Q: float):
    """(dS, dV) of the reduced system under flow Q."""
    if not (0 <= Q <= params.Q_max):
        raise ControlError(f"flow {Q} outside [0, {params.Q_max}]")
    if state.V <= 0 or not (0 <= state.S <= params.S_in):
        raise DomainError(f"state {state} outside the closed working domain")
    X = biomass_X(params, state)
    dS = -eval_mu(model, state.S) * X + (Q / state.V) * (params.S_in - state.S)
    return dS, Q


def full_vector_field(params: ProcessParams, model: GrowthModel,
                      state: FullState, Q: float):
    """(dS, dB, dV) of the 3-D system under flow Q."""
    if not (0 <= Q <= params.Q_max):
        raise ControlError(f"flow {Q} outside [0, {params.Q_max}]")
    if state.V <= 0 or state.S < 0 or state.B < 0:
        raise DomainError(f"state {state} outside the admissible set")
    m = eval_mu(model, state.S)
    dS = -m * state.B / params.y + (Q / state.V) * (params.S_in - state.S)
    dB = m * state.B - (Q / state.V) * state.B
    return dS, dB, Q


def conserved_M(params: ProcessParams, state: FullState) -> float:
    """V*(B/y + S - S_in); constant along every admissible trajectory."""
    if state.V <= 0:
        raise DomainError(f"V must be > 0, got {state.V}")
    return state.V * (state.B / params.y + state.S - params.S_in)


# ---------------------------------------------------------------------------
# feedback policies

class FeedbackPolicy:
    kind = "abstract"

    def flow(self, params, model, S, V) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantFlow(FeedbackPolicy):
    Q: float
    kind = "constant"

    def flow(self, params, model, S, V):
        return self.Q


@dataclass(frozen=True)
class PiecewiseConstantFlow(FeedbackPolicy):
    """Open-loop schedule: flows[i] applies on [times[i], times[i+1])."""

    times: tuple
    flows: tuple
    kind = "piecewise"

    def __post_init__(self):
        if len(self.times) != len(self.flows) or not self.times:
            raise ConfigError("times and flows must be equally sized, nonempty")
        if list(self.times) != sorted(self.times):
            raise ConfigError("switch times must be increasing")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "flows", tuple(float(q) for q in self.flows))

    def flow(self, params, model, S, V):
        raise TypeError("piecewise schedule is a function of time, not state")

    def flow_at(self, t):
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.flows[max(k, 0)]


@dataclass(frozen=True)
class BangPolicy(FeedbackPolicy):
    """Q_max below the threshold, 0 above it, equivalent control while
    sliding on it."""

    threshold: float
    kind = "bang"

    def flow(self, params, model, S, V):
        if S > self.threshold:
            return 0.0
        if S < self.threshold:
            return params.Q_max
        q = kernels.singular_flow(model.coeffs, params.S_in, params.M0,
                                  self.threshold, V)
        return min(max(q, 0.0), params.Q_max)


@dataclass(frozen=True)
class SingularSynthesis(FeedbackPolicy):
    """Reach the arc S = S_bar, hold it with the singular flow while
    V < V_max, then batch down to the target at V = V_max."""

    S_bar: float
    kind = "singular_synthesis"

    def flow(self, params, model, S, V):
        if V >= params.V_max or S > self.S_bar:
            return 0.0
        if S < self.S_bar:
            return params.Q_max
        q = kernels.singular_flow(model.coeffs, params.S_in, params.M0,
                                  self.S_bar, V)
        return min(max(q, 0.0), params.Q_max)


@dataclass(frozen=True)
class QsFeedback(FeedbackPolicy):
    """Smooth singular feedback applied everywhere (for closed-form checks)."""

    S_bar: float
    clamp: bool = True
    kind = "qs_feedback"

    def flow(self, params, model, S, V):
        q = kernels.singular_flow(model.coeffs, params.S_in, params.M0,
                                  self.S_bar, V)
        return min(q, params.Q_max) if self.clamp else q


# ---------------------------------------------------------------------------
# trajectories

EVENT_KINDS = ("hit_Smax_arc", "hit_Vmax", "hit_Sref", "left_domain")


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    state: object


@dataclass
class Trajectory:
    """Sampled run: one row per accepted integrator step, event points
    included exactly.  ``Y`` columns are (S, V) or (S, B, V)."""

    t: np.ndarray
    Y: np.ndarray
    Q: np.ndarray
    events: list = field(default_factory=list)
    planar: bool = True
    saturated: bool = False
    stop_reason: str = "t_max"

    @property
    def S(self):
        return self.Y[:, 0]

    @property
    def B(self):
        if self.planar:
            raise AttributeError("planar trajectory has no biomass column")
        return self.Y[:, 1]

    @property
    def V(self):
        return self.Y[:, -1]

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    def state_at_end(self):
        if self.planar:
            return PlanarState(float(self.Y[-1, 0]), float(self.Y[-1, 1]))
        return FullState(*(float(v) for v in self.Y[-1]))

    def write_csv(self, path):
        from .serialize import write_csv

        if self.planar:
            header = ("t", "S", "V", "Q")
        else:
            header = ("t", "S", "B", "V", "Q")
        rows = np.column_stack([self.t, self.Y, self.Q])
        write_csv(path, header, rows)


def _concat_pieces(pieces, planar, events, saturated, stop_reason):
    ts, ys, qs = [], [], []
    for k, (t, y, q) in enumerate(pieces):
        if k > 0 and len(ts) and t.shape[0] and ts[-1][-1] == t[0]:
            t, y, q = t[1:], y[1:], q[1:]
        ts.append(t)
        ys.append(y)
        qs.append(q)
    return Trajectory(np.concatenate(ts), np.vstack(ys), np.concatenate(qs),
                      events, planar, saturated, stop_reason)


# ---------------------------------------------------------------------------
# the phase engine

_GUARD_CAP = 200_000


class _Runner:
    """One integration leg per phase; collects samples and events."""

    def __init__(self, params, model, rtol, atol, max_step, cap=_GUARD_CAP):
        self.params = params
        self.model = model
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.cap = cap

    def leg(self, mode, pars, t0, y0, t_bound, events):
        """events: list of (name, idx, level, direction)."""
        n_ev = len(events)
        ev_idx = np.array([e[1] for e in events], dtype=np.int64)
        ev_level = np.array([e[2] for e in events], dtype=np.float64)
        ev_dir = np.array([e[3] for e in events], dtype=np.float64)
        if n_ev == 0:
            ev_idx = np.zeros(0, dtype=np.int64)
            ev_level = np.zeros(0)
            ev_dir = np.zeros(0)
        t_out = np.empty(self.cap)
        y_out = np.empty((self.cap, y0.shape[0]))
        status, n, ev = kernels.rk45_integrate(
            mode, self.model.coeffs, pars, t0, y0, t_bound,
            self.rtol, self.atol, self.max_step,
            ev_idx, ev_level, ev_dir, EVENT_TIME_TOL, t_out, y_out)
        if status == STATUS_BUFFER_FULL:
            raise NumericalError("sample buffer exhausted; raise max_samples")
        if status == STATUS_STEP_UNDERFLOW:
            raise StiffnessError("step size underflow", t=float(t_out[n - 1]),
                                 state=y_out[n - 1].copy())
        if status == STATUS_RHS_FAILURE:
            raise NumericalError("right-hand side evaluation failed")
        t_arr = t_out[:n].copy()
        y_arr = y_out[:n].copy()
        name = events[ev][0] if status == STATUS_EVENT else None
        return t_arr, y_arr, name


def _q_column(policy, params, model, t, y, mode, pars):
    if mode == MODE_PLANAR_CONST or mode == MODE_FULL_CONST:
        return np.full(t.shape[0], pars[P_A])
    S_bar = pars[P_A]
    q = kernels.singular_flow(model.coeffs, params.S_in, params.M0, S_bar, 0.0)
    qs = q + eval_mu(model, S_bar) * y[:, -1]
    return np.minimum(qs, pars[P_B])


def default_t_max(params: ProcessParams, model: GrowthModel) -> float:
    """Generous horizon: ten fillings plus twice the longest batch phase."""
    from .pmp import batch_time_quadrature

    s_hi = params.S_in * (1 - 1e-9)
    t_batch = batch_time_quadrature(params, model, s_hi, params.S_ref,
                                    params.V_max)
    return 10.0 * params.V_max / params.Q_max + 2.0 * t_batch


def simulate(params: ProcessParams, model: GrowthModel, policy: FeedbackPolicy,
             state0, stop: Sequence[str] = ("hit_Sref", "hit_Vmax"),
             s_level: Optional[float] = None, t_max: Optional[float] = None,
             rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
             max_step: float = math.inf,
             max_samples: int = _GUARD_CAP) -> Trajectory:
    """Integrate the system under ``policy`` until the first stop event or
    ``t_max``.

    Monitored events: crossing of ``s_level`` (kind ``hit_Smax_arc``; the
    switching level of bang/singular policies is monitored automatically),
    ``hit_Vmax``, ``hit_Sref`` and ``left_domain``.  Only kinds listed in
    ``stop`` (plus ``left_domain``) terminate the run; other crossings are
    recorded and integration continues.
    """
    for kind in stop:
        if kind not in EVENT_KINDS:
            raise ConfigError(f"unknown stop event {kind!r}")
    if t_max is None:
        t_max = default_t_max(params, model)
    runner = _Runner(params, model, rtol, atol, max_step, max_samples)
    if isinstance(state0, FullState):
        return _simulate_full(runner, policy, state0, stop, s_level, t_max)
    if not isinstance(state0, PlanarState):
        raise DomainError(f"state0 must be PlanarState or FullState, got {state0!r}")
    if not (0 <= state0.S < params.S_in and 0 < state0.V <= params.V_max):
        raise DomainError(f"initial state {state0} outside the working domain")
    return _simulate_planar(runner, policy, state0, stop, s_level, t_max)


def _base_events(params, stop, s_level, V_cur):
    ev = []
    ev.append(("hit_Sref", 0, params.S_ref, -1.0))
    ev.append(("left_domain", 0, 0.0, -1.0))
    ev.append(("left_domain", 0, params.S_in, 1.0))
    if V_cur < params.V_max:
        ev.append(("hit_Vmax", 1, params.V_max, 1.0))
    if s_level is not None:
        ev.append(("hit_Smax_arc", 0, s_level, 0.0))
    return ev


def _simulate_planar(runner, policy, state0, stop, s_level, t_max):
    params, model = runner.params, runner.model
    snap = ARC_SNAP_FRACTION * params.S_in
    pieces, events = [], []
    saturated = False
    t, S, V = 0.0, state0.S, state0.V
    stop_reason = "t_max"

    if isinstance(policy, ConstantFlow):
        schedule = PiecewiseConstantFlow((0.0,), (policy.Q,))
    elif isinstance(policy, PiecewiseConstantFlow):
        schedule = policy
    else:
        schedule = None

    if schedule is not None:
        for q in schedule.flows:
            if not (0 <= q <= params.Q_max):
                raise ControlError(f"scheduled flow {q} outside [0, {params.Q_max}]")

    while t < t_max:
        vdx = 1
        if schedule is not None:
            k = int(np.searchsorted(schedule.times, t, side="right")) - 1
            k = max(k, 0)
            q = schedule.flows[k]
            t_bound = schedule.times[k + 1] if k + 1 < len(schedule.times) else t_max
            t_bound = min(t_bound, t_max)
            mode, pars = MODE_PLANAR_CONST, params.pack(a=q)
            phase_events = _base_events(params, stop, s_level, V)
            internal = {}
        elif isinstance(policy, QsFeedback):
            hi = params.Q_max if policy.clamp else math.inf
            mode, pars = MODE_PLANAR_QS, params.pack(a=policy.S_bar, b=hi)
            t_bound = t_max
            phase_events = _base_events(params, stop, s_level, V)
            internal = {}
        elif isinstance(policy, (BangPolicy, SingularSynthesis)):
            star = policy.threshold if isinstance(policy, BangPolicy) else policy.S_bar
            synthesis = isinstance(policy, SingularSynthesis)
            internal = {}
            if synthesis and V >= params.V_max:
                mode, pars = MODE_PLANAR_CONST, params.pack(a=0.0)
                t_bound = t_max
                phase_events = _base_events(params, stop, s_level, V)
            elif abs(S - star) <= snap:
                qs_here = kernels.singular_flow(model.coeffs, params.S_in,
                                                params.M0, star, V)
                if qs_here >= params.Q_max:
                    saturated = True
                    mode, pars = MODE_PLANAR_CONST, params.pack(a=params.Q_max)
                    t_bound = t_max
                    phase_events = _base_events(params, stop, s_level, V)
                else:
                    S = star  # pin exactly while sliding
                    mode, pars = MODE_PLANAR_PIN, params.pack(a=star, b=params.Q_max)
                    t_bound = t_max
                    phase_events = _base_events(params, stop, s_level, V)
                    mu_bar = eval_mu(model, star)
                    v_sat = params.Q_max / mu_bar - params.M0 / (params.S_in - star)
                    if v_sat < params.V_max:
                        phase_events.append(("qs_saturated", 1, v_sat, 1.0))
                        internal["qs_saturated"] = "saturate"
            elif S < star:
                mode, pars = MODE_PLANAR_CONST, params.pack(a=params.Q_max)
                t_bound = t_max
                phase_events = _base_events(params, stop, s_level, V)
                phase_events.append(("reach_arc", 0, star, 1.0))
                internal["reach_arc"] = "arc"
            else:
                mode, pars = MODE_PLANAR_CONST, params.pack(a=0.0)
                t_bound = t_max
                phase_events = _base_events(params, stop, s_level, V)
                phase_events.append(("reach_arc", 0, star, -1.0))
                internal["reach_arc"] = "arc"
        else:
            raise ConfigError(f"unsupported policy {policy!r} for planar simulation")

        y0 = np.array([S, V])
        t_arr, y_arr, fired = runner.leg(mode, pars, t, y0, t_bound, phase_events)
        q_arr = _q_column(policy, params, model, t_arr, y_arr, mode, pars)
        pieces.append((t_arr, y_arr, q_arr))
        t, S, V = float(t_arr[-1]), float(y_arr[-1, 0]), float(y_arr[-1, 1])

        if fired is None:
            if schedule is not None and t_bound < t_max:
                continue  # next schedule segment
            stop_reason = "t_max"
            break

        if fired == "reach_arc":
            events.append(Event(t, "hit_Smax_arc", PlanarState(S, V)))
            continue
        if fired == "qs_saturated":
            saturated = True
            continue

        end_state = PlanarState(S, V)
        events.append(Event(t, fired, end_state))
        if fired == "left_domain":
            stop_reason = "left_domain"
            break
        if fired in stop:
            stop_reason = fired
            break
        if fired == "hit_Vmax":
            # not a requested stop: only a synthesis policy (which batches at
            # V_max) can continue without overflowing the tank
            if isinstance(policy, SingularSynthesis):
                continue
            q_now = (schedule.flow_at(t) if schedule is not None
                     else policy.flow(params, model, S, V))
            if q_now > 0:
                events.append(Event(t, "left_domain", end_state))
                stop_reason = "left_domain"
                break
            continue
        continue

    return _concat_pieces(pieces, True, events, saturated, stop_reason)


def _simulate_full(runner, policy, state0, stop, s_level, t_max):
    params = runner.params
    if not (state0.V > 0 and 0 <= state0.S < params.S_in and state0.B >= 0):
        raise DomainError(f"initial state {state0} outside the admissible set")
    if isinstance(policy, ConstantFlow):
        schedule = PiecewiseConstantFlow((0.0,), (policy.Q,))
    elif isinstance(policy, PiecewiseConstantFlow):
        schedule = policy
    else:
        raise ConfigError("3-D simulation supports constant/piecewise flows")
    for q in schedule.flows:
        if not (0 <= q <= params.Q_max):
            raise ControlError(f"scheduled flow {q} outside [0, {params.Q_max}]")

    pieces, events = [], []
    t = 0.0
    y = state0.as_array()
    stop_reason = "t_max"
    while t < t_max:
        k = max(int(np.searchsorted(schedule.times, t, side="right")) - 1, 0)
        q = schedule.flows[k]
        t_bound = min(schedule.times[k + 1] if k + 1 < len(schedule.times)
                      else t_max, t_max)
        phase_events = [("hit_Sref", 0, params.S_ref, -1.0),
                        ("left_domain", 0, 0.0, -1.0),
                        ("left_domain", 0, params.S_in, 1.0)]
        if y[2] < params.V_max:
            phase_events.append(("hit_Vmax", 2, params.V_max, 1.0))
        if s_level is not None:
            phase_events.append(("hit_Smax_arc", 0, s_level, 0.0))
        t_arr, y_arr, fired = runner.leg(MODE_FULL_CONST, params.pack(a=q),
                                         t, y, t_bound, phase_events)
        q_arr = np.full(t_arr.shape[0], q)
        pieces.append((t_arr, y_arr, q_arr))
        t = float(t_arr[-1])
        y = y_arr[-1].copy()
        if fired is None:
            if t_bound < t_max:
                continue
            stop_reason = "t_max"
            break
        end_state = FullState(*(float(v) for v in y))
        events.append(Event(t, fired, end_state))
        if fired == "left_domain" or fired in stop:
            stop_reason = fired
            break
        if fired == "hit_Vmax" and q > 0:
            events.append(Event(t, "left_domain", end_state))
            stop_reason = "left_domain"
            break
    return _concat_pieces(pieces, False, events, False, stop_reason)
