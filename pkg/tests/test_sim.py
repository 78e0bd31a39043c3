"""Closed-loop simulation, validation reports, and trajectory I/O."""

import copy

import numpy as np
import pytest

from horizon_abs import controller, grid, planner, sim
from horizon_abs.errors import ModelError

from conftest import make_model, make_stack, single_doc


def decoupled_doc():
    """Two drifting agents with no coupling and one box goal each."""
    agent = {
        "dim": 2,
        "neighbors": [],
        "dynamics": {"type": "zero"},
        "v_max": 1.0,
        "M": 0.5,
        "L1": 0.0,
        "L2": 0.0,
    }
    return {
        "horizon": 1.0,
        "tau": 0.3,
        "agents": [
            dict(agent, id=1, x0=[0.0, 0.0]),
            dict(agent, id=2, x0=[1.0, 1.0]),
        ],
        "spec": {
            "1": {
                "goals": [
                    {"box": [[0.05, 0.05], [0.35, 0.35]], "window": [0.5, 1.0], "relative": False}
                ]
            },
            "2": {
                "goals": [
                    {"box": [[0.75, 0.75], [0.95, 0.95]], "window": [0.5, 1.0], "relative": False}
                ]
            },
        },
    }


def plan_and_run(doc, lam):
    model, params, ab = make_stack(doc, lam=lam)
    plan = planner.cascade_synthesize(model, ab)
    schedule = planner.extract_controls(model, ab, plan)
    traj = sim.simulate_closed_loop(model, ab, schedule, plan.m)
    return model, ab, plan, schedule, traj


@pytest.fixture(scope="module")
def pair_run(pair_stack):
    model, params, ab = pair_stack
    plan = planner.cascade_synthesize(model, ab)
    schedule = planner.extract_controls(model, ab, plan)
    traj = sim.simulate_closed_loop(model, ab, schedule, plan.m)
    return model, ab, plan, schedule, traj


def test_single_agent_follows_its_plan():
    doc = single_doc()
    doc["spec"] = {
        "1": {
            "goals": [
                {"box": [[0.05, 0.05], [0.35, 0.35]], "window": [0.5, 1.0], "relative": False}
            ]
        }
    }
    model, ab, plan, schedule, traj = plan_and_run(doc, lam={1: 0.55})
    report = sim.validate_plan(model, ab, plan, traj)
    assert report.passed and report.min_margin > 0
    dec = ab.decs[1]
    for k in range(plan.m + 1):
        assert grid.locate(dec, traj.state_at_step(0, k)) == plan.cells[1][k]


def test_decoupled_network_equals_independent_runs():
    doc = decoupled_doc()
    model, ab, plan, schedule, traj = plan_and_run(doc, lam={1: 0.55, 2: 0.55})
    assert sim.validate_plan(model, ab, plan, traj).passed
    for a, i in enumerate(model.agent_ids):
        solo_doc = {
            "horizon": doc["horizon"],
            "tau": doc["tau"],
            "agents": [doc["agents"][a]],
            "spec": {str(i): doc["spec"][str(i)]},
        }
        _, _, solo_plan, _, solo_traj = plan_and_run(solo_doc, lam={i: 0.55})
        assert solo_plan.cells[i] == plan.cells[i]
        assert np.array_equal(solo_traj.states[:, 0], traj.states[:, a])
        assert np.array_equal(solo_traj.inputs[:, 0], traj.inputs[:, a])


def test_trajectory_grid_and_time_axis(pair_run):
    model, ab, plan, schedule, traj = pair_run
    dt = ab.params.dt
    assert traj.ts[0] == 0.0
    assert traj.ts[-1] == pytest.approx(plan.m * dt, rel=1e-12)
    assert np.all(np.diff(traj.ts) > 0)
    assert len(traj.ts) == plan.m * traj.substeps + 1
    for k in range(plan.m + 1):
        assert traj.ts[k * traj.substeps] == pytest.approx(k * dt, rel=1e-12)
    finals = traj.final_states()
    for a, i in enumerate(model.agent_ids):
        assert np.array_equal(finals[i], traj.states[-1, a])


def test_closed_loop_obeys_speed_and_input_bounds(pair_run):
    model, ab, plan, schedule, traj = pair_run
    gaps = np.diff(traj.ts)
    for a, i in enumerate(model.agent_ids):
        agent = model.agent(i)
        speeds = np.linalg.norm(np.diff(traj.states[:, a], axis=0), axis=-1)
        assert np.all(speeds <= (agent.M + agent.v_max) * gaps * (1 + 1e-6) + 1e-9)
        input_norms = np.linalg.norm(traj.inputs[:, a], axis=-1)
        assert np.max(input_norms) < agent.v_max  # saturation never engages


def test_realized_steps_match_the_planned_points(pair_run):
    """Each realized step endpoint lands on the planned target point."""
    model, ab, plan, schedule, traj = pair_run
    dt = ab.params.dt
    for a, i in enumerate(model.agent_ids):
        lam = ab.params.lam[i]
        for k in range(plan.m):
            step = schedule[i][k]
            ref = ab.reference_for(i, step.config)
            predicted = ref.eval(dt) + lam * dt * step.w
            realized = traj.state_at_step(a, k + 1)
            assert np.max(np.abs(realized - predicted)) <= 5e-8
            assert np.max(np.abs(realized - step.point)) <= 5e-8


def test_validation_flags_a_rerouted_plan(pair_run):
    model, ab, plan, schedule, traj = pair_run
    report = sim.validate_plan(model, ab, plan, traj)
    assert report.passed and report.min_margin > 0
    doc = report.to_doc()
    assert doc["passed"] is True and doc["min_margin"] == report.min_margin

    mutated = copy.deepcopy(plan)
    c = mutated.cells[2][2]
    mutated.cells[2][2] = (c[0] + 3, c[1])
    bad = sim.validate_plan(model, ab, mutated, traj)
    assert not bad.passed
    failing = [e for e in bad.entries if not e["ok"]]
    assert failing and failing[0]["agent"] == 2 and failing[0]["step"] == 2
    assert failing[0]["margin"] < 0
    assert "located" in failing[0]


def test_validation_checks_step_zero_by_identity(pair_run):
    model, ab, plan, schedule, traj = pair_run
    entry0 = sim.validate_plan(model, ab, plan, traj).entries[0]
    assert entry0["step"] == 0 and entry0["ok"] and "margin" not in entry0

    mutated = copy.deepcopy(plan)
    c = mutated.cells[1][0]
    mutated.cells[1][0] = (c[0] + 1, c[1])
    bad = sim.validate_plan(model, ab, mutated, traj)
    assert not bad.passed
    assert not bad.entries[0]["ok"]


def test_zero_length_plan_simulates_to_a_point(pair_stack):
    model, params, ab = pair_stack
    schedule = {1: [], 2: []}
    traj = sim.simulate_closed_loop(model, ab, schedule, 0)
    assert traj.states.shape[0] == 1
    assert np.all(traj.inputs == 0)
    for a, i in enumerate(model.agent_ids):
        assert np.array_equal(traj.states[0, a], model.agent(i).x0)


def test_substeps_override(pair_run):
    model, ab, plan, schedule, _ = pair_run
    traj = sim.simulate_closed_loop(model, ab, schedule, plan.m, substeps=50)
    assert traj.substeps == 50
    assert len(traj.ts) == plan.m * 50 + 1
    assert sim.validate_plan(model, ab, plan, traj).passed


def test_open_loop_integrates_declared_inputs():
    model = make_model(single_doc())
    v = np.array([0.6, -0.3])
    traj = sim.simulate_open_loop(model, {1: lambda t: v}, 0.8)
    # zero dynamics: the state moves exactly along the input
    assert np.allclose(traj.states[-1, 0], model.agent(1).x0 + 0.8 * v, atol=1e-12)
    assert np.allclose(traj.inputs[:, 0], v)


def test_open_loop_rejects_oversized_inputs():
    model = make_model(single_doc())
    with pytest.raises(ModelError, match="exceeds v_max"):
        sim.simulate_open_loop(model, {1: lambda t: np.array([2.0, 0.0])}, 0.5)


def test_trajectory_csv_round_trip(pair_run):
    _, _, _, _, traj = pair_run
    text = sim.trajectory_to_csv(traj)
    back = sim.trajectory_from_csv(text)
    assert back.agent_ids == traj.agent_ids
    assert np.array_equal(back.ts, traj.ts)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.inputs, traj.inputs)
    finals = sim.final_states_from_csv(text)
    for a, i in enumerate(traj.agent_ids):
        assert np.array_equal(finals[i], traj.states[-1, a])


def test_csv_rejects_malformed_documents():
    with pytest.raises(ModelError, match="empty trajectory"):
        sim.trajectory_from_csv("")
    with pytest.raises(ModelError, match="malformed trajectory header"):
        sim.trajectory_from_csv("a,b,c\n1,2,3\n")
    good_header = "t,agent,x1,x2,v1,v2\n"
    with pytest.raises(ModelError, match="malformed trajectory row"):
        sim.trajectory_from_csv(good_header + "0.0,1,0.0,oops,0.0,0.0\n")
    with pytest.raises(ModelError, match="unbalanced"):
        sim.trajectory_from_csv(
            good_header
            + "0.0,1,0.0,0.0,0.0,0.0\n"
            + "0.0,2,0.0,0.0,0.0,0.0\n"
            + "0.1,1,0.1,0.0,0.0,0.0\n"
        )
    with pytest.raises(ModelError, match="empty trajectory"):
        sim.final_states_from_csv("")
