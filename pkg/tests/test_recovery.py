import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from conftest import uniform_scene
from thermal_recovery.dynamics import fixture_path, load_model, solve_statics
from thermal_recovery.errors import InfeasibleCommandError, InvalidInputError, NoStrategyError
from thermal_recovery.recovery import (
    Plant,
    PlantState,
    RecoveryPolicy,
    horizon_for,
    load_scenario,
    min_effort_configuration,
    read_recovery_trace,
    run_recovery,
    select_strategy,
    simulate_plant,
    update_cost_matrix,
)
from thermal_recovery.thermal_core import ThermalParams, steady_state_temperature
from thermal_recovery.thermal_ik import DescentSettings, potential, predict_node_temperatures

KNEE = ThermalParams(rc=120.0, beta_r=0.03, beta_bias_r=0.1, t_offset=28.0)


# ------------------------------------------------------------- cost matrix


def test_cool_nodes_get_identity():
    assert np.array_equal(update_cost_matrix(RecoveryPolicy(), [25.0] * 4), np.eye(4))


def test_one_hot_node_gets_hot_weight():
    Q = update_cost_matrix(RecoveryPolicy(), [40.0, 76.0, 69.9])
    assert np.array_equal(np.diag(Q), [1.0, 1e3, 1.0])
    assert np.count_nonzero(Q - np.diag(np.diag(Q))) == 0


def test_trigger_follows_policy_field():
    pol = RecoveryPolicy(reweight_threshold=75.0)
    assert np.array_equal(np.diag(update_cost_matrix(pol, [72.0, 76.0])), [1.0, 1e3])


@given(st.lists(st.floats(0.0, 150.0), min_size=1, max_size=12))
def test_reweighting_is_idempotent_and_binary(T):
    pol = RecoveryPolicy()
    Q1 = update_cost_matrix(pol, T)
    assert np.array_equal(Q1, update_cost_matrix(pol, T))
    assert set(np.diag(Q1)) <= {1.0, 1e3}


def test_policy_validation():
    with pytest.raises(InvalidInputError):
        RecoveryPolicy(safe=80.0)
    with pytest.raises(InvalidInputError):
        RecoveryPolicy(contacts=())
    with pytest.raises(InvalidInputError):
        RecoveryPolicy(hot_weight=0.0)
    with pytest.raises(InvalidInputError):
        RecoveryPolicy.from_dict({"warnign": 75.0})
    assert RecoveryPolicy.from_dict(RecoveryPolicy().to_dict()) == RecoveryPolicy()


def test_half_rc_horizon(scenario):
    pol = RecoveryPolicy(horizon_rule="half_rc", reweight_threshold=75.0)
    # the hot bridge nodes have the shortest time constant
    assert horizon_for(pol, scenario.scene, scenario.scene.t0) == 30.0
    assert horizon_for(RecoveryPolicy(), scenario.scene, scenario.scene.t0) == 20.0


# ---------------------------------------------------------------- strategy


def _enumerate(policy, scene, model, settings=None):
    """Independent oracle: evaluate every contact's minimizer directly."""
    from thermal_recovery.thermal_ik import descend

    T = scene.t0
    scene = scene.with_weights(np.diag(update_cost_matrix(policy, T)))
    out = {}
    for name in policy.contacts:
        c = model.contact_config(name)
        q_nom = model.pose(policy.nominal_pose, model.contact_config(policy.nominal_contact))
        q = descend(scene, model, model.project_to_contacts(q_nom, c), c, settings).q
        out[name] = potential(scene, model, q, c)
    return out


def test_hot_right_leg_selects_left_support(scenario):
    s = select_strategy(scenario.policy, scenario.scene, scenario.model, scenario.plant(), scenario.settings)
    f = _enumerate(scenario.policy, scenario.scene, scenario.model, scenario.settings)
    assert min(f, key=f.get) == "left_support" == s.contact
    for name, v in f.items():
        assert s.per_contact[name] == pytest.approx(v, rel=1e-12)
        assert s.f <= v


def test_cool_equal_nodes_select_double(biped):
    scene = uniform_scene(biped, temp=40.0)
    pol = RecoveryPolicy()
    s = select_strategy(pol, scene, biped)
    f = _enumerate(pol, scene, biped)
    assert s.contact == "double" == min(f, key=f.get)


def test_singleton_contact_menu(scenario):
    pol = RecoveryPolicy(contacts=("right_support",))
    s = select_strategy(pol, scenario.scene, scenario.model, settings=scenario.settings)
    assert s.contact == "right_support"
    assert list(s.per_contact) == ["right_support"]
    assert np.array_equal(s.q, s.results["right_support"].q)


def test_hot_node_priority(scenario):
    s = select_strategy(scenario.policy, scenario.scene, scenario.model, settings=scenario.settings)
    hot = scenario.scene.t0 > scenario.policy.trigger
    chosen = s.predicted[s.contact][hot]
    for name, T in s.predicted.items():
        assert np.all(chosen <= T[hot] + 1e-6), name


def test_cache_reuses_minimizers(scenario):
    cache = {}
    a = select_strategy(scenario.policy, scenario.scene, scenario.model, settings=scenario.settings, cache=cache)
    assert len(cache) == 3
    b = select_strategy(scenario.policy, scenario.scene, scenario.model, settings=scenario.settings, cache=cache)
    assert all(r is None for r in b.results.values())
    assert a.contact == b.contact and np.array_equal(a.q, b.q)


def test_no_feasible_contact_raises():
    # a nominal pose past the knee limits gives no contact set a valid start
    doc = yaml.safe_load(fixture_path("biped").read_text())
    doc["poses"]["nominal"].update(knee_l=-2.5, knee_r=-2.5)
    model = load_model(doc)
    with pytest.raises(NoStrategyError, match="left_support"):
        select_strategy(RecoveryPolicy(), uniform_scene(model), model)


# --------------------------------------------------------------- min effort


def test_min_effort_symmetric_and_lower(biped):
    c = biped.contact_config("double")
    q0 = biped.pose("nominal", c)
    q = min_effort_configuration(biped, q0, c)
    norm = lambda x: np.linalg.norm(solve_statics(biped, x, c).torque)
    assert norm(q) < norm(q0)
    # left and right legs end mirrored
    assert np.allclose(q[3:6], q[6:9], atol=1e-6)


def test_min_effort_ignores_temperatures(scenario):
    # two plants that differ only in temperature hold the same stance bitwise
    held = []
    for t_hot in (80.0, 95.0):
        scene = scenario.scene.with_temperatures({n: (t_hot if "_r_" in n else 45.0) for n in scenario.scene.node_ids})
        plant = Plant(scenario.model, scene, PlantState(scenario.plant().state.q, scene.t0, 0.0, "double"))
        pol = RecoveryPolicy.from_dict({**scenario.policy.to_dict(), "time_budget": 3.0})
        run_recovery(plant, pol, mode="min-effort", settings=scenario.settings)
        held.append(plant.state.q)
    m = scenario.model
    c = m.contact_config("double")
    direct = min_effort_configuration(m, m.pose("nominal", c), c, scenario.settings)
    assert np.array_equal(held[0], held[1])
    assert np.array_equal(held[0], direct)


# -------------------------------------------------------------------- plant


def knee_plant(model, pose="nominal", contact="double", t0=80.0):
    c = model.contact_config(contact)
    q = model.pose(pose, c)
    scene = uniform_scene(model, temp=t0, params=KNEE)
    return Plant(model, scene, PlantState(q, scene.t0, 0.0, c.name)), q, c


def test_hold_reaches_steady_state(biped):
    plant, q, c = knee_plant(biped)
    eff = solve_statics(biped, q, c).efforts
    ss = np.array([steady_state_temperature(KNEE, f) for f in eff])
    gap = np.abs(plant.state.temperatures - ss)
    n = int(round(5 * KNEE.rc / plant.max_dt))
    trace = simulate_plant(plant, [q] * n, plant.max_dt)
    assert len(trace) == n
    assert trace[-1].time == pytest.approx(5 * KNEE.rc)
    assert np.all(np.abs(trace[-1].temperatures - ss) <= 0.01 * gap)


def test_zero_gravity_decays_to_offset():
    doc = yaml.safe_load(fixture_path("biped").read_text())
    doc["gravity"] = 0.0
    model = load_model(doc)
    plant, q, _ = knee_plant(model)
    trace = simulate_plant(plant, [q] * 600, 1.0)
    T = np.array([s.temperatures for s in trace])
    assert np.all(np.diff(T, axis=0) < 0)
    assert np.all(T[-1] > KNEE.t_offset)
    assert np.allclose(T[-1], KNEE.t_offset, atol=0.05 * (80.0 - KNEE.t_offset))


def test_deeper_stance_runs_hotter(biped):
    temps = {}
    for pose in ("stand", "nominal", "half_squat", "squat"):
        plant, q, _ = knee_plant(biped, pose)
        simulate_plant(plant, [q] * 600, 1.0)
        temps[pose] = plant.state.temperatures[biped.actuator_index["knee_l"]]
    vals = list(temps.values())
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_infeasible_command_raises(biped):
    plant, q, _ = knee_plant(biped)
    bad = q.copy()
    bad[biped.n_base] += 0.1
    with pytest.raises(InfeasibleCommandError):
        simulate_plant(plant, [bad], 0.1)


def test_step_above_stability_limit_rejected(biped):
    plant, q, _ = knee_plant(biped)
    with pytest.raises(InvalidInputError):
        simulate_plant(plant, [q], 2.0)


def test_trajectory_with_contact_changes(biped):
    plant, q, _ = knee_plant(biped)
    ls = biped.contact_config("left_support")
    q_ls = biped.project_to_contacts(q, ls)
    trace = simulate_plant(plant, [q, (q_ls, "left_support")], 0.1)
    assert [s.contact for s in trace] == ["double", "left_support"]


# ----------------------------------------------------------------- recovery


@pytest.fixture(scope="module")
def reports():
    sc = load_scenario("hot_right_leg")
    out = {}
    for mode in ("switching", "min-effort"):
        out[mode] = run_recovery(sc.plant(), sc.policy, mode=mode, settings=sc.settings, groups=sc.groups)
    return sc, out


def test_switching_schedule_shape(reports):
    _, rep = reports
    sched = rep["switching"].contact_schedule()
    assert sched[0] == "left_support"
    assert sched[-1] == "nominal"
    assert len(set(sched) - {"nominal"}) >= 2
    assert rep["switching"].recovered and not rep["switching"].timed_out


def test_min_effort_holds_one_configuration(reports):
    _, rep = reports
    r = rep["min-effort"]
    holds = [s for s in r.schedule if s["phase"] == "hold"]
    assert len(holds) == 1
    assert r.contact_schedule() == ["double", "nominal"]


def test_switching_cools_hot_leg_sooner(reports):
    sc, rep = reports
    a = rep["switching"].group_time_to_safe()[sc.hot_group]
    b = rep["min-effort"].group_time_to_safe()[sc.hot_group]
    assert a is not None and b is not None
    assert a < b


def test_recovery_is_deterministic(reports):
    sc, rep = reports
    again = run_recovery(sc.plant(), sc.policy, mode="switching", settings=sc.settings, groups=sc.groups)
    a = rep["switching"]
    assert np.array_equal(a.temperatures, again.temperatures)
    assert a.schedule == again.schedule


def test_report_round_trip(tmp_path, reports):
    sc, rep = reports
    r = rep["switching"]
    trace, summary = r.write(tmp_path)
    cols = read_recovery_trace(trace)
    assert np.array_equal(cols["time_s"], r.times)
    assert np.array_equal(cols["knee_r_core_temp_c"], r.temperatures[:, sc.scene.node_ids.index("knee_r_core")])
    assert np.array_equal(cols["right_leg_norm"], r.group_norms()["right_leg"])
    doc = yaml.safe_load(summary.read_text())
    assert doc["contact_schedule"] == r.contact_schedule()
    assert doc["recovered"] is True


def test_small_budget_reports_timeout(scenario):
    pol = RecoveryPolicy.from_dict({**scenario.policy.to_dict(), "time_budget": 5.0})
    r = run_recovery(scenario.plant(), pol, settings=scenario.settings, groups=scenario.groups)
    assert r.timed_out and not r.recovered
    assert r.times[-1] <= 5.0 + 1e-9


def test_nothing_hot_is_rejected(biped):
    plant, _, _ = knee_plant(biped, t0=60.0)
    with pytest.raises(InvalidInputError):
        run_recovery(plant, RecoveryPolicy())


def test_bad_mode_rejected(scenario):
    with pytest.raises(InvalidInputError):
        run_recovery(scenario.plant(), scenario.policy, mode="greedy")


@settings(max_examples=5, deadline=None)
@given(st.floats(76.0, 95.0))
def test_recovery_terminates_when_every_stance_is_safe(t_hot):
    sc = load_scenario("hot_right_leg")
    temps = {n: (t_hot if "_r_" in n else 45.0) for n in sc.scene.node_ids}
    scene = sc.scene.with_temperatures(temps)
    plant = Plant(sc.model, scene, PlantState(sc.plant().state.q, scene.t0, 0.0, "double"))
    r = run_recovery(plant, sc.policy, settings=sc.settings)
    assert r.recovered
    assert np.all(r.temperatures[-1] < sc.policy.safe)


# ---------------------------------------------------------------- scenarios


def test_scenario_overrides(tmp_path):
    sc = load_scenario("hot_right_leg", {"policy": {"horizon": 10.0}})
    assert sc.policy.horizon == 10.0 and sc.policy.warning == 75.0


def test_scenario_errors(tmp_path):
    with pytest.raises(InvalidInputError):
        load_scenario(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("nodes: [{id: a, actuator: tail, params: {rc: 1, beta_r: 0, beta_bias_r: 0, t_offset: 20}}]\n")
    with pytest.raises(InvalidInputError):
        load_scenario(p)
    p.write_text("nodes: [{id: a, actuator: knee_l, template: nope}]\n")
    with pytest.raises(InvalidInputError):
        load_scenario(p)
    p.write_text("nodes: [{id: a, actuator: knee_l, params: {rc: 100, beta_r: 0.01, beta_bias_r: 0, t_offset: 20}}]\n"
                 "groups: {g: [b]}\n")
    with pytest.raises(InvalidInputError):
        load_scenario(p)
