"""SCOPF objective, operating constraints and penalized fitness.

Control classes use the short labels of the swarm speed coefficients:

====  =====================================================  ========
AR    active power redispatch of a resource                   MW
RR    reactive power redispatch of a non-voltage-controlling  Mvar
      resource
VC    voltage magnitude setpoint of the slack / PV buses      p.u.
TIP   in-phase tap step ``n`` of a transformer                integer
TQ    quadrature tap step ``m`` of a transformer              integer
====  =====================================================  ========
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .network import BusKind, Network
from .powerflow import (PowerFlowError, PowerFlowSpec, PowerFlowState, Setpoints,
                        solve_power_flow)

CONTROL_CLASSES = ("AR", "RR", "VC", "TIP", "TQ")
PENALTY_CLASSES = ("voltage", "current", "reactive", "active", "control")
DEFAULT_PENALTY_WEIGHTS = MappingProxyType({
    "voltage": 1e4, "current": 1e4, "reactive": 1e3, "active": 1e3, "control": 1e4,
})
SENTINEL_FITNESS = 1e12


@dataclass(frozen=True)
class Resource:
    """A dispatchable plant; bounds are deviations from the schedule ``p0``/``q0``."""

    id: int
    bus: int
    p0: float = 0.0  # MW
    q0: float = 0.0  # Mvar
    dp_min: float = 0.0
    dp_max: float = 0.0
    dq_min: float = 0.0
    dq_max: float = 0.0
    voltage_control: bool = False
    cost: float = 0.0  # per MW of redispatch


@dataclass(frozen=True)
class ScopfConfig:
    resources: tuple[Resource, ...] = ()
    c_loss: float = 1.0
    penalty_weights: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_PENALTY_WEIGHTS))
    power_factor: float = 1.0
    absolute_redispatch: bool = False
    feasibility_tol: float = 1e-6
    sentinel: float = SENTINEL_FITNESS

    def __post_init__(self):
        object.__setattr__(self, "resources", tuple(self.resources))
        if self.c_loss < 0 or any(r.cost < 0 for r in self.resources):
            raise ValueError("costs must be non-negative")
        weights = dict(DEFAULT_PENALTY_WEIGHTS)
        weights.update(self.penalty_weights)
        if any(w <= 0 for w in weights.values()):
            raise ValueError("penalty weights must be positive")
        object.__setattr__(self, "penalty_weights", weights)

    @property
    def c_n(self) -> np.ndarray:
        return np.array([r.cost for r in self.resources], dtype=float)


@dataclass
class ControlVector:
    """One assignment of all degrees of freedom.

    ``dp``/``dq`` are per resource (MW/Mvar), ``v_set`` per bus (only slack
    and voltage-controlled entries act), ``n``/``m`` per port (only tap
    ports act).
    """

    dp: np.ndarray
    dq: np.ndarray
    v_set: np.ndarray
    n: np.ndarray
    m: np.ndarray

    def copy(self) -> "ControlVector":
        return ControlVector(*(np.array(a, copy=True) for a in
                               (self.dp, self.dq, self.v_set, self.n, self.m)))


def base_controls(net: Network, cfg: ScopfConfig) -> ControlVector:
    nr = len(cfg.resources)
    return ControlVector(dp=np.zeros(nr), dq=np.zeros(nr),
                         v_set=np.array([b.v_set for b in net.buses], dtype=float),
                         n=np.zeros(net.n_port), m=np.zeros(net.n_port))


def to_setpoints(net: Network, cfg: ScopfConfig, controls: ControlVector) -> Setpoints:
    p = np.array([b.p0 for b in net.buses], dtype=float)
    q = np.array([b.q0 for b in net.buses], dtype=float)
    for k, r in enumerate(cfg.resources):
        idx = net.index[r.bus]
        p[idx] += controls.dp[k] / net.base_mva
        q[idx] += controls.dq[k] / net.base_mva
    return Setpoints(p=p, q=q, vm=np.asarray(controls.v_set, dtype=float))


@dataclass
class ConstraintReport:
    """Non-negative excess per constraint, all in p.u.

    ``reactive`` holds reactive outcomes of voltage-controlling resources
    (aggregated per bus), ``reactive_pq`` the reactive set-points of the
    other resources; both feed the reactive penalty class.
    """

    converged: bool
    voltage: np.ndarray
    current: np.ndarray
    reactive: np.ndarray
    reactive_pq: np.ndarray
    active: np.ndarray
    control: np.ndarray
    ids: dict = field(default_factory=dict, repr=False)
    tolerance: float = 1e-6

    def by_class(self) -> dict[str, np.ndarray]:
        return {
            "voltage": self.voltage,
            "current": self.current,
            "reactive": np.concatenate([self.reactive, self.reactive_pq]),
            "active": self.active,
            "control": self.control,
        }

    @property
    def worst(self) -> dict[str, float]:
        return {k: float(v.max()) if v.size else 0.0 for k, v in self.by_class().items()}

    @property
    def feasible(self) -> bool:
        return self.converged and all(w <= self.tolerance for w in self.worst.values())

    def violations(self) -> list[dict]:
        """Every constraint whose excess exceeds the tolerance, with its element id."""
        out = []
        for name in ("voltage", "current", "reactive", "reactive_pq", "active", "control"):
            arr = getattr(self, name)
            for k in np.flatnonzero(arr > self.tolerance):
                out.append({"class": name, "element": self.ids.get(name, [None] * len(arr))[k],
                            "excess": float(arr[k])})
        return out


def objective(state: PowerFlowState, controls: ControlVector, cfg: ScopfConfig) -> float:
    """``c_loss * P_loss + c_N . dp`` with losses in MW.

    Only the redispatch chosen in ``controls`` is costed; the slack's
    balancing deviation is an outcome.  With ``absolute_redispatch`` the
    cost applies to ``|dp|``.
    """
    if not state.converged:
        raise PowerFlowError("objective of an unconverged power flow is undefined")
    dp = np.abs(controls.dp) if cfg.absolute_redispatch else np.asarray(controls.dp)
    p_loss = cfg.power_factor * state.p_loss * state.base_mva
    return float(cfg.c_loss * p_loss + cfg.c_n @ dp) if len(dp) else float(cfg.c_loss * p_loss)


def _excess(x, lo, hi):
    x = np.asarray(x, dtype=float)
    return np.maximum(0.0, np.maximum(x - hi, lo - x))


@dataclass(frozen=True)
class _Layout:
    """Index arrays for vectorized constraint checks of one (network, config) pair."""

    base: float
    slack_id: int
    vc_buses: list
    pq_res: np.ndarray
    slack_res: np.ndarray
    dp_lo: np.ndarray
    dp_hi: np.ndarray
    dq_lo: np.ndarray
    dq_hi: np.ndarray
    vc_idx: np.ndarray
    ctrl_ids: list
    q_fixed: np.ndarray  # per vc bus: injection not owned by voltage-controlling resources
    q_pq_map: np.ndarray  # (n_vc, n_res) ones for non-voltage-controlling resources at vc buses
    q_lo: np.ndarray
    q_hi: np.ndarray
    slack_p_fixed: float
    slack_q_fixed: float
    slack_p_bounds: tuple
    slack_q_bounds: tuple
    tap_n: np.ndarray  # (n_port, 2) step range
    tap_m: np.ndarray


_LAYOUTS: dict = {}


def _layout(net: Network, cfg: ScopfConfig) -> _Layout:
    key = (id(net), id(cfg))
    hit = _LAYOUTS.get(key)
    if hit is not None and hit[0] is net and hit[1] is cfg:
        return hit[2]
    base = net.base_mva
    slack_id = net.buses[net.slack].id
    res = cfg.resources
    nr = len(res)
    res_by_bus: dict[int, list[int]] = {}
    for k, r in enumerate(res):
        res_by_bus.setdefault(r.bus, []).append(k)
    vc_buses = sorted({r.bus for r in res if r.voltage_control and r.bus != slack_id},
                      key=net.index.__getitem__)
    pq_res = np.array([k for k, r in enumerate(res) if not r.voltage_control], dtype=int)
    slack_res = np.array(res_by_bus.get(slack_id, []), dtype=int)
    vc_idx = np.array([k for k, b in enumerate(net.buses) if b.kind != BusKind.POWER_CONTROLLED],
                      dtype=int)
    ctrl_ids = ([f"AR:{r.id}" for r in res] + [f"RR:{res[k].id}" for k in pq_res]
                + [f"VC:{net.buses[k].id}" for k in vc_idx]
                + [f"TIP:{p.id}" for p in net.ports] + [f"TQ:{p.id}" for p in net.ports])

    def fixed(bus_id, attr):
        bus = net.buses[net.index[bus_id]]
        own = sum(getattr(res[k], attr + "0") for k in res_by_bus.get(bus_id, []))
        return getattr(bus, attr + "0") - own / base

    q_fixed = np.array([fixed(b, "q") for b in vc_buses])
    q_pq_map = np.zeros((len(vc_buses), nr))
    q_lo = np.zeros(len(vc_buses))
    q_hi = np.zeros(len(vc_buses))
    for i, b in enumerate(vc_buses):
        for k in res_by_bus[b]:
            r = res[k]
            if r.voltage_control:
                q_lo[i] += (r.q0 + r.dq_min) / base
                q_hi[i] += (r.q0 + r.dq_max) / base
            else:
                q_pq_map[i, k] = 1.0
                q_fixed[i] += r.q0 / base
    sp_lo = sum(res[k].p0 + res[k].dp_min for k in slack_res) / base
    sp_hi = sum(res[k].p0 + res[k].dp_max for k in slack_res) / base
    sq_lo = sum(res[k].q0 + res[k].dq_min for k in slack_res) / base
    sq_hi = sum(res[k].q0 + res[k].dq_max for k in slack_res) / base
    out = _Layout(
        base=base, slack_id=slack_id, vc_buses=vc_buses, pq_res=pq_res, slack_res=slack_res,
        dp_lo=np.array([r.dp_min for r in res], float), dp_hi=np.array([r.dp_max for r in res], float),
        dq_lo=np.array([r.dq_min for r in res], float), dq_hi=np.array([r.dq_max for r in res], float),
        vc_idx=vc_idx, ctrl_ids=ctrl_ids, q_fixed=q_fixed, q_pq_map=q_pq_map, q_lo=q_lo, q_hi=q_hi,
        slack_p_fixed=fixed(slack_id, "p") if len(slack_res) else 0.0,
        slack_q_fixed=fixed(slack_id, "q") if len(slack_res) else 0.0,
        slack_p_bounds=(sp_lo, sp_hi), slack_q_bounds=(sq_lo, sq_hi),
        tap_n=np.array([(p.tap.n_min, p.tap.n_max) for p in net.ports], float).reshape(-1, 2),
        tap_m=np.array([(p.tap.m_min, p.tap.m_max) for p in net.ports], float).reshape(-1, 2),
    )
    if len(_LAYOUTS) > 64:
        _LAYOUTS.clear()
    _LAYOUTS[key] = (net, cfg, out)
    return out


def check_constraints(state: PowerFlowState, controls: ControlVector, cfg: ScopfConfig,
                      net: Network) -> ConstraintReport:
    lay = _layout(net, cfg)
    base = lay.base
    dp = np.asarray(controls.dp, float)
    dq = np.asarray(controls.dq, float)

    # control bounds: redispatch, setpoints and tap steps (range and integrality)
    tap_n, tap_m = lay.tap_n, lay.tap_m
    n = np.asarray(controls.n, float)
    m = np.asarray(controls.m, float)
    reactive_pq = _excess(dq[lay.pq_res], lay.dq_lo[lay.pq_res], lay.dq_hi[lay.pq_res]) / base
    control = np.concatenate([
        _excess(dp, lay.dp_lo, lay.dp_hi) / base,
        reactive_pq,
        _excess(np.asarray(controls.v_set, float)[lay.vc_idx], net.v_min[lay.vc_idx],
                net.v_max[lay.vc_idx]),
        _excess(n, tap_n[:, 0], tap_n[:, 1]) + np.abs(n - np.rint(n)),
        _excess(m, tap_m[:, 0], tap_m[:, 1]) + np.abs(m - np.rint(m)),
    ])
    has_slack = len(lay.slack_res) > 0
    ids = {
        "voltage": [b.id for b in net.buses],
        "current": [f"{p.id}:{side}" for p in net.ports for side in ("i", "j")],
        "reactive": list(lay.vc_buses) + ([lay.slack_id] if has_slack else []),
        "reactive_pq": [cfg.resources[k].id for k in lay.pq_res],
        "active": [lay.slack_id] if has_slack else [],
        "control": lay.ctrl_ids,
    }
    tol = cfg.feasibility_tol
    if not state.converged or not np.all(np.isfinite(state.v)):
        inf = np.inf
        return ConstraintReport(
            converged=False, voltage=np.full(net.n_bus, inf), current=np.full(net.n_terminal, inf),
            reactive=np.full(len(ids["reactive"]), inf), reactive_pq=reactive_pq,
            active=np.full(len(ids["active"]), inf), control=control, ids=ids, tolerance=tol)

    vm = np.abs(state.v)
    voltage = _excess(vm, net.v_min, net.v_max)
    current = np.maximum(0.0, np.abs(state.i_t) - net.i_max)

    # reactive outcome of the voltage-controlling resources at each bus
    vc_pos = np.array([net.index[b] for b in lay.vc_buses], dtype=int)
    q_out = state.q_inj[vc_pos] - lay.q_fixed - lay.q_pq_map @ dq / base
    reactive = [_excess(q_out, lay.q_lo, lay.q_hi)]
    active = np.zeros(0)
    if has_slack:
        # the slack's active and reactive outputs are outcomes as well
        s = net.slack
        active = _excess(np.array([state.p_inj[s] - lay.slack_p_fixed]), *lay.slack_p_bounds)
        reactive.append(_excess(np.array([state.q_inj[s] - lay.slack_q_fixed]),
                                *lay.slack_q_bounds))
    return ConstraintReport(
        converged=True, voltage=voltage, current=current,
        reactive=np.concatenate(reactive), reactive_pq=reactive_pq,
        active=active, control=control, ids=ids, tolerance=tol)


def penalty(report: ConstraintReport, cfg: ScopfConfig) -> float:
    """Quadratic penalty ``sum_class w_class * sum excess**2``."""
    total = 0.0
    for name, arr in report.by_class().items():
        if arr.size:
            total += cfg.penalty_weights[name] * float(np.sum(arr ** 2))
    return total


def fitness(state: PowerFlowState, controls: ControlVector, cfg: ScopfConfig,
            net: Network) -> float:
    if not state.converged or not np.all(np.isfinite(state.v)):
        return cfg.sentinel
    report = check_constraints(state, controls, cfg, net)
    return objective(state, controls, cfg) + penalty(report, cfg)


@dataclass
class Evaluation:
    controls: ControlVector
    state: PowerFlowState | None
    objective: float
    fitness: float
    report: ConstraintReport


class ScopfProblem:
    """Flat-vector view of a SCOPF instance for the particle swarm.

    The position vector lists AR, RR, VC, TIP and TQ dimensions in that
    order.  Every coordinate is a deviation from the scheduled operating
    point: redispatch in MW/Mvar, voltage setpoints relative to the case
    setpoint, tap steps relative to neutral.  Evaluation warm-starts every
    power flow from the base case.
    """

    def __init__(self, net: Network, cfg: ScopfConfig, spec: PowerFlowSpec | None = None):
        self.net = net
        self.cfg = cfg
        slack_id = net.buses[net.slack].id
        dims = []  # (class, slot, index, lower, upper, element id, origin)
        for k, r in enumerate(cfg.resources):
            if r.bus != slack_id:
                dims.append(("AR", "dp", k, r.dp_min, r.dp_max, r.id, 0.0))
        for k, r in enumerate(cfg.resources):
            if not r.voltage_control:
                dims.append(("RR", "dq", k, r.dq_min, r.dq_max, r.id, 0.0))
        for k, b in enumerate(net.buses):
            if b.kind != BusKind.POWER_CONTROLLED:
                dims.append(("VC", "v_set", k, b.v_min, b.v_max, b.id, b.v_set))
        for k in net.tap_ports:
            t = net.ports[k].tap
            if t.in_phase:
                dims.append(("TIP", "n", int(k), t.n_min, t.n_max, net.ports[k].id, 0.0))
        for k in net.tap_ports:
            t = net.ports[k].tap
            if t.quadrature:
                dims.append(("TQ", "m", int(k), t.m_min, t.m_max, net.ports[k].id, 0.0))
        self.dims = dims
        self.classes = tuple(d[0] for d in dims)
        self.origin = np.array([d[6] for d in dims], dtype=float)
        self.lower = np.array([d[3] for d in dims], dtype=float) - self.origin
        self.upper = np.array([d[4] for d in dims], dtype=float) - self.origin
        self.integer_mask = np.array([d[0] in ("TIP", "TQ") for d in dims], dtype=bool)
        base_spec = spec or PowerFlowSpec()
        self.base_controls = base_controls(net, cfg)
        self.base_state = solve_power_flow(net, setpoints=to_setpoints(net, cfg, self.base_controls),
                                           spec=base_spec)
        start = self.base_state if self.base_state.converged else None
        self.spec = PowerFlowSpec(tolerance=base_spec.tolerance, max_iter=base_spec.max_iter,
                                  start=start, dense_limit=base_spec.dense_limit)

    @property
    def size(self) -> int:
        return len(self.dims)

    def controls(self, x: np.ndarray) -> ControlVector:
        c = self.base_controls.copy()
        for val, (_, slot, idx, *_rest) in zip(np.asarray(x, float) + self.origin, self.dims):
            getattr(c, slot)[idx] = val
        return c

    def position(self, controls: ControlVector) -> np.ndarray:
        return np.array([getattr(controls, slot)[idx] for _, slot, idx, *_ in self.dims],
                        dtype=float) - self.origin

    def solve(self, controls: ControlVector) -> PowerFlowState | None:
        n = np.rint(controls.n).astype(int)
        m = np.rint(controls.m).astype(int)
        try:
            return solve_power_flow(self.net, setpoints=to_setpoints(self.net, self.cfg, controls),
                                    spec=self.spec, n=n, m=m)
        except (PowerFlowError, FloatingPointError, ValueError):
            return None

    def inspect(self, x: np.ndarray) -> Evaluation:
        controls = self.controls(x)
        state = self.solve(controls)
        if state is None or not state.converged:
            dummy = state or self.base_state
            unconverged = PowerFlowState(**{**dummy.__dict__, "converged": False})
            report = check_constraints(unconverged, controls, self.cfg, self.net)
            return Evaluation(controls, state, np.inf, self.cfg.sentinel, report)
        report = check_constraints(state, controls, self.cfg, self.net)
        obj = objective(state, controls, self.cfg)
        return Evaluation(controls, state, obj, obj + penalty(report, self.cfg), report)

    def __call__(self, x: np.ndarray) -> float:
        controls = self.controls(x)
        state = self.solve(controls)
        if state is None:
            return self.cfg.sentinel
        return fitness(state, controls, self.cfg, self.net)

    def utilization(self, x: np.ndarray) -> list[dict]:
        """Absolute control values with their bounds, one row per dimension."""
        vals = np.asarray(x, float) + self.origin
        return [{"class": cls, "element": eid, "value": float(val), "min": lo, "max": hi}
                for val, (cls, _slot, _idx, lo, hi, eid, _o) in zip(vals, self.dims)]
