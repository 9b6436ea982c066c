import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scopf.case_io import parse_case, to_network
from scopf.network import Bus, BusKind, Network, TwoPort
from scopf.powerflow import PowerFlowError, PowerFlowState, solve_power_flow
from scopf.problem import (SENTINEL_FITNESS, ControlVector, Resource, ScopfConfig, ScopfProblem,
                           base_controls, check_constraints, fitness, objective, penalty,
                           to_setpoints)

THREE_BUS = {
    "format": "scopf-case", "version": 1, "name": "three-bus", "base_mva": 100,
    "buses": [
        {"id": 1, "type": "slack", "base_kv": 220, "v_set_pu": 1.02},
        {"id": 2, "type": "pv", "base_kv": 220, "pd_mw": 20, "v_set_pu": 1.01},
        {"id": 3, "type": "pq", "base_kv": 110, "pd_mw": 90, "qd_mvar": 30},
    ],
    "branches": [
        {"id": 1, "bus_i": 1, "bus_j": 2, "r_pu": 0.01, "x_pu": 0.08, "b_pu": 0.02},
        {"id": 2, "bus_i": 2, "bus_j": 3, "r_pu": 0.002, "x_pu": 0.05, "transformer": True,
         "v_i_rated_kv": 220, "v_j_rated_kv": 110, "tap": True},
        {"id": 3, "bus_i": 1, "bus_j": 3, "r_pu": 0.003, "x_pu": 0.06, "transformer": True,
         "v_i_rated_kv": 220, "v_j_rated_kv": 110, "tap": True},
    ],
    "resources": [
        {"id": 1, "bus": 1, "p_mw": 60, "dp_min_mw": -60, "dp_max_mw": 100,
         "dq_min_mvar": -80, "dq_max_mvar": 80, "voltage_control": True},
        {"id": 2, "bus": 2, "p_mw": 50, "dp_min_mw": -30, "dp_max_mw": 30,
         "dq_min_mvar": -60, "dq_max_mvar": 60, "voltage_control": True, "cost": 2.0},
        {"id": 3, "bus": 3, "p_mw": 5, "q_mvar": 2, "dp_min_mw": -5, "dp_max_mw": 5,
         "dq_min_mvar": -10, "dq_max_mvar": 10, "cost": 2.0},
    ],
}


@pytest.fixture(scope="module")
def three_bus():
    return to_network(parse_case(json.dumps(THREE_BUS)))


def fake_state(net, v=None, p_loss=0.0, converged=True, i_t=None):
    v = np.ones(net.n_bus, complex) if v is None else np.asarray(v, complex)
    return PowerFlowState(
        v=v, i_t=np.zeros(net.n_terminal, complex) if i_t is None else i_t,
        p_inj=np.zeros(net.n_bus), q_inj=np.zeros(net.n_bus), p_loss=p_loss,
        converged=converged, iterations=1, max_mismatch=0.0,
        n=np.zeros(net.n_port, int), m=np.zeros(net.n_port, int), base_mva=net.base_mva)


def lossless_pair():
    buses = (Bus(1, BusKind.SLACK, 110), Bus(2, BusKind.POWER_CONTROLLED, 110))
    return Network(buses, (TwoPort(1, 2, -20j, -20j),))


# -- objective ----------------------------------------------------------------

def test_objective_loss_only():
    net = lossless_pair()
    cfg = ScopfConfig()
    st_ = fake_state(net, p_loss=1.8990)
    assert objective(st_, base_controls(net, cfg), cfg) == pytest.approx(189.90, abs=1e-12)


def test_objective_zero():
    net = lossless_pair()
    cfg = ScopfConfig()
    assert objective(fake_state(net), base_controls(net, cfg), cfg) == 0.0


def test_objective_signed_vs_absolute_redispatch():
    net = lossless_pair()
    res = tuple(Resource(id=k, bus=1, cost=2.0, dp_min=-5, dp_max=5) for k in range(3))
    signed = ScopfConfig(resources=res)
    absolute = ScopfConfig(resources=res, absolute_redispatch=True)
    c = base_controls(net, signed)
    c.dp[:] = [1.0, -1.0, 0.0]
    st_ = fake_state(net, p_loss=0.5)
    assert objective(st_, c, signed) == pytest.approx(50.0)
    assert objective(st_, c, absolute) == pytest.approx(54.0)


def test_objective_rejects_unconverged():
    net = lossless_pair()
    cfg = ScopfConfig()
    with pytest.raises(PowerFlowError):
        objective(fake_state(net, converged=False), base_controls(net, cfg), cfg)


@given(scale=st.floats(0.1, 10), dp=st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_objective_linear_in_redispatch(scale, dp):
    net = lossless_pair()
    res = tuple(Resource(id=k, bus=1, cost=1.0 + k) for k in range(3))
    cfg = ScopfConfig(resources=res, c_loss=0.0)
    c = base_controls(net, cfg)
    c.dp[:] = dp
    c2 = c.copy()
    c2.dp *= scale
    st_ = fake_state(net, p_loss=0.3)
    assert objective(st_, c2, cfg) == pytest.approx(scale * objective(st_, c, cfg),
                                                    rel=1e-12, abs=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        ScopfConfig(c_loss=-1)
    with pytest.raises(ValueError):
        ScopfConfig(penalty_weights={"voltage": 0})
    with pytest.raises(ValueError):
        ScopfConfig(resources=(Resource(1, 1, cost=-1),))


# -- constraints and fitness ---------------------------------------------------

def test_flat_state_is_feasible():
    net = lossless_pair()
    cfg = ScopfConfig()
    rep = check_constraints(fake_state(net), base_controls(net, cfg), cfg, net)
    assert rep.feasible
    assert rep.violations() == []


def test_overvoltage_reported_at_bus():
    net = lossless_pair()
    cfg = ScopfConfig()
    rep = check_constraints(fake_state(net, v=[1.0, 1.15]), base_controls(net, cfg), cfg, net)
    assert not rep.feasible
    assert rep.voltage[1] == pytest.approx(0.05, abs=1e-15)
    assert rep.violations() == [{"class": "voltage", "element": 2, "excess": rep.voltage[1]}]


def test_voltage_penalty_value():
    net = lossless_pair()
    cfg = ScopfConfig()
    c = base_controls(net, cfg)
    st_ = fake_state(net, v=[1.0, 1.15])
    rep = check_constraints(st_, c, cfg, net)
    assert penalty(rep, cfg) == pytest.approx(25.0, rel=1e-12)
    assert fitness(st_, c, cfg, net) == pytest.approx(25.0, rel=1e-12)


def test_current_limit_reported():
    buses = (Bus(1, BusKind.SLACK, 110), Bus(2, BusKind.POWER_CONTROLLED, 110))
    net = Network(buses, (TwoPort(1, 2, -20j, -20j, i_max=0.5, id=4),))
    cfg = ScopfConfig()
    i_t = np.array([0.7, -0.7], complex)
    rep = check_constraints(fake_state(net, i_t=i_t), base_controls(net, cfg), cfg, net)
    assert rep.current == pytest.approx([0.2, 0.2])
    assert {v["element"] for v in rep.violations()} == {"4:i", "4:j"}


def test_unconverged_is_maximally_infeasible():
    net = lossless_pair()
    cfg = ScopfConfig()
    c = base_controls(net, cfg)
    st_ = fake_state(net, converged=False)
    rep = check_constraints(st_, c, cfg, net)
    assert not rep.feasible and np.all(np.isinf(rep.voltage))
    assert fitness(st_, c, cfg, net) == SENTINEL_FITNESS


def test_reactive_outcome_checked(three_bus):
    net, cfg = three_bus
    c = base_controls(net, cfg)
    st_ = solve_power_flow(net, setpoints=to_setpoints(net, cfg, c))
    tight = replace(cfg, resources=tuple(
        replace(r, dq_min=-0.1, dq_max=0.1) if r.id == 2 else r for r in cfg.resources))
    rep = check_constraints(st_, c, tight, net)
    q_gen = st_.q_inj[net.index[2]] * 100
    assert rep.reactive[0] == pytest.approx(max(0.0, abs(q_gen) - 0.1) / 100, abs=1e-12)
    assert 2 in rep.ids["reactive"]


def test_tap_integrality_and_range(three_bus):
    net, cfg = three_bus
    c = base_controls(net, cfg)
    c.n[1] = 2.5
    c.m[2] = 12
    st_ = solve_power_flow(net, setpoints=to_setpoints(net, cfg, c), n=np.rint(c.n).astype(int),
                           m=np.rint(c.m).astype(int))
    rep = check_constraints(st_, c, cfg, net)
    bad = {v["element"]: v["excess"] for v in rep.violations() if v["class"] == "control"}
    assert bad["TIP:2"] == pytest.approx(0.5)
    assert bad["TQ:3"] == pytest.approx(2.0)


@pytest.fixture(scope="module")
def problem(three_bus):
    net, cfg = three_bus
    return ScopfProblem(net, cfg)


def test_problem_layout(problem):
    assert problem.classes == ("AR", "AR", "RR", "VC", "VC", "TIP", "TIP", "TQ", "TQ")
    assert problem.integer_mask.tolist() == [False] * 5 + [True] * 4
    # voltage setpoints are deviations from the case setpoint
    assert problem.lower[3] == pytest.approx(0.9 - 1.02)
    assert problem.upper[4] == pytest.approx(1.1 - 1.01)
    assert np.all(problem.lower <= 0) and np.all(problem.upper >= 0)


def test_problem_base_position_is_zero(problem):
    x = problem.position(problem.base_controls)
    assert np.array_equal(x, np.zeros(problem.size))
    ev = problem.inspect(x)
    assert ev.state.converged
    assert ev.objective == pytest.approx(problem.base_state.p_loss_mw, rel=1e-12)
    assert problem(x) == ev.fitness


@settings(max_examples=40, deadline=None)
@given(u=st.lists(st.floats(0, 1), min_size=9, max_size=9))
def test_fitness_dominates_objective(problem, u):
    x = problem.lower + np.array(u) * (problem.upper - problem.lower)
    x[problem.integer_mask] = np.rint(x[problem.integer_mask])
    ev = problem.inspect(x)
    assert np.allclose(problem.position(problem.controls(x)), x, rtol=0, atol=1e-14)
    if ev.state is None or not ev.state.converged:
        assert ev.fitness == SENTINEL_FITNESS
        return
    assert ev.fitness >= ev.objective
    assert (ev.fitness == ev.objective) == ev.report.feasible


@settings(max_examples=30, deadline=None)
@given(u=st.lists(st.floats(0, 1), min_size=9, max_size=9), widen=st.floats(0.0, 0.2))
def test_widening_limits_never_adds_violation(three_bus, u, widen):
    net, cfg = three_bus
    prob = ScopfProblem(net, cfg)
    x = prob.lower + np.array(u) * (prob.upper - prob.lower)
    ev = prob.inspect(x)
    if ev.state is None or not ev.state.converged:
        return
    wide_net = Network(tuple(replace(b, v_min=b.v_min - widen, v_max=b.v_max + widen)
                             for b in net.buses), net.ports, net.base_mva)
    wide_cfg = replace(cfg, resources=tuple(
        replace(r, dq_min=r.dq_min - 100 * widen, dq_max=r.dq_max + 100 * widen,
                dp_min=r.dp_min - 100 * widen, dp_max=r.dp_max + 100 * widen)
        for r in cfg.resources))
    narrow = check_constraints(ev.state, ev.controls, cfg, net)
    wide = check_constraints(ev.state, ev.controls, wide_cfg, wide_net)
    for name, arr in narrow.by_class().items():
        assert np.all(wide.by_class()[name] <= arr + 1e-15)


def test_utilization_reports_absolute_values(problem):
    x = np.zeros(problem.size)
    rows = problem.utilization(x)
    vc = [r for r in rows if r["class"] == "VC"]
    assert [r["value"] for r in vc] == pytest.approx([1.02, 1.01])
    assert all(r["min"] <= r["value"] <= r["max"] for r in rows)


def test_to_setpoints_adds_redispatch(three_bus):
    net, cfg = three_bus
    c = base_controls(net, cfg)
    c.dp[2] = 4.0
    c.dq[2] = -3.0
    sp_ = to_setpoints(net, cfg, c)
    k = net.index[3]
    assert sp_.p[k] == pytest.approx((5 + 4 - 90) / 100)
    assert sp_.q[k] == pytest.approx((2 - 3 - 30) / 100)
