from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcflatten.errors import PlanError
from kcflatten.labels import CATEGORIES, ClassLabel, GarmentCategory
from kcflatten.plans import (
    Arm,
    DEFAULT_GEOMETRY,
    GripperCommand,
    ManipulationPlan,
    PlanRegistry,
    PlanStep,
    build_default_registry,
    default_workspace,
    generate_flatten_template,
    parse_plan_csv,
    plan_filename,
    select_plan,
    validate_plan,
    write_plan_csv,
)

WS = default_workspace()

PLAN_5_ROWS = """step_index,arm,x,y,z,qx,qy,qz,qw,gripper
0,left,0.0,0.25,0.9,0.0,0.0,0.0,1.0,close
1,right,0.1,0.25,1.6,0.0,0.0,0.0,1.0,open
2,right,0.05,0.25,1.5,0.0,0.0,0.0,1.0,close
3,left,-0.2,0.25,1.3,0.0,0.0,0.0,1.0,hold
4,right,0.2,0.25,1.3,0.0,0.0,0.0,1.0,hold
"""


def _write(tmp_path, text, name="plan.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- parsing


def test_parse_five_row_file(tmp_path):
    plan = parse_plan_csv(_write(tmp_path, PLAN_5_ROWS))
    assert len(plan.steps) == 5
    assert plan.steps[0].arm is Arm.LEFT
    assert plan.steps[0].gripper is GripperCommand.CLOSE
    assert plan.steps[4].position == (0.2, 0.25, 1.3)
    assert plan.phase_tags is None


def test_parse_rejects_bad_quaternion_naming_row(tmp_path):
    text = PLAN_5_ROWS.replace(
        "2,right,0.05,0.25,1.5,0.0,0.0,0.0,1.0,close",
        "2,right,0.05,0.25,1.5,0.0,0.0,0.0,0.5,close",
    )
    with pytest.raises(PlanError, match="row 4"):
        parse_plan_csv(_write(tmp_path, text))


def test_identity_quaternion_round_trip(tmp_path):
    plan = parse_plan_csv(_write(tmp_path, PLAN_5_ROWS))
    for step in plan.steps:
        assert step.quaternion == (0.0, 0.0, 0.0, 1.0)
    out = write_plan_csv(plan, tmp_path / "copy.csv")
    again = parse_plan_csv(out, plan_id=plan.plan_id)
    assert again == plan


def test_parse_rejects_missing_column(tmp_path):
    text = PLAN_5_ROWS.replace(",gripper", "").replace(",close", "").replace(
        ",open", ""
    ).replace(",hold", "")
    with pytest.raises(PlanError, match="missing columns.*gripper"):
        parse_plan_csv(_write(tmp_path, text))


def test_parse_rejects_empty_and_missing_files(tmp_path):
    with pytest.raises(PlanError, match="empty"):
        parse_plan_csv(_write(tmp_path, ""))
    with pytest.raises(PlanError, match="not found"):
        parse_plan_csv(tmp_path / "ghost.csv")
    header_only = PLAN_5_ROWS.splitlines()[0] + "\n"
    with pytest.raises(PlanError, match="no steps"):
        parse_plan_csv(_write(tmp_path, header_only))


def test_parse_rejects_non_numeric_pose(tmp_path):
    text = PLAN_5_ROWS.replace("0,left,0.0", "0,left,wide")
    with pytest.raises(PlanError, match="row 2.*x="):
        parse_plan_csv(_write(tmp_path, text))


def test_parse_rejects_non_increasing_step_index(tmp_path):
    text = PLAN_5_ROWS.replace(
        "1,right,0.1,0.25,1.6", "0,right,0.1,0.25,1.6"
    )
    with pytest.raises(PlanError, match="row 3.*increase"):
        parse_plan_csv(_write(tmp_path, text))


# ---------------------------------------------------------------- validation


def _step(i, arm, pos, grip):
    return PlanStep(i, arm, pos, (0.0, 0.0, 0.0, 1.0), grip)


def test_validate_clean_template():
    plan = generate_flatten_template(GarmentCategory.TOWEL, 0)
    assert validate_plan(plan, WS).ok


def test_validate_flags_below_table_transit():
    plan = ManipulationPlan(
        "bad",
        steps=(
            _step(0, Arm.LEFT, (0.0, 0.25, 1.0), GripperCommand.CLOSE),
            _step(1, Arm.LEFT, (0.0, 0.6, 0.5), GripperCommand.HOLD),  # inside table
            _step(2, Arm.LEFT, (0.0, 0.6, 0.8), GripperCommand.OPEN),
        ),
    )
    report = validate_plan(plan, WS)
    violations = [v for v in report.violations if v.code == "below_table"]
    assert len(violations) == 1
    assert violations[0].step_index == 1


def test_validate_flags_double_close():
    plan = ManipulationPlan(
        "bad",
        steps=(
            _step(0, Arm.RIGHT, (0.0, 0.25, 1.0), GripperCommand.CLOSE),
            _step(1, Arm.RIGHT, (0.1, 0.25, 1.0), GripperCommand.CLOSE),
            _step(2, Arm.RIGHT, (0.1, 0.25, 1.0), GripperCommand.OPEN),
        ),
    )
    report = validate_plan(plan, WS)
    bad = [v for v in report.violations if v.code == "double_close"]
    assert len(bad) == 1 and bad[0].step_index == 1


def test_validate_flags_missing_terminal_release():
    plan = ManipulationPlan(
        "bad",
        steps=(_step(0, Arm.LEFT, (0.0, 0.25, 1.0), GripperCommand.CLOSE),),
    )
    report = validate_plan(plan, WS)
    assert "missing_release" in report.codes()


def test_validate_flags_out_of_workspace():
    plan = ManipulationPlan(
        "bad",
        steps=(
            _step(0, Arm.LEFT, (5.0, 0.25, 1.0), GripperCommand.CLOSE),
            _step(1, Arm.LEFT, (0.0, 0.25, 1.0), GripperCommand.OPEN),
        ),
    )
    report = validate_plan(plan, WS)
    assert "out_of_workspace" in report.codes()


def test_quaternion_norm_enforced_on_construction():
    with pytest.raises(PlanError, match="norm"):
        PlanStep(0, Arm.LEFT, (0, 0, 1), (0.0, 0.0, 0.0, 0.5), GripperCommand.HOLD)
    # within tolerance passes
    PlanStep(0, Arm.LEFT, (0, 0, 1), (0.0, 0.0, 0.0, 1.0005), GripperCommand.HOLD)


# ---------------------------------------------------------------- registry


@pytest.fixture(scope="module")
def registry():
    return build_default_registry(WS)


def test_registry_is_complete(registry):
    assert len(registry) == 50
    assert registry.complete
    for flat in range(50):
        label = ClassLabel.from_flat_index(flat)
        plan = select_plan(label, registry)
        assert plan.label == label


def test_select_plan_by_label(registry):
    plan = select_plan(ClassLabel(GarmentCategory.TOWEL, 3), registry)
    assert plan.plan_id == "towel_03"


def test_select_plan_missing_category_errors(registry):
    partial = PlanRegistry(
        {k: v for k, v in registry.plans.items() if k >= 10}  # drop jeans
    )
    with pytest.raises(PlanError, match="no plan for class jean/5"):
        select_plan(ClassLabel(GarmentCategory.JEAN, 5), partial)
    assert not partial.complete


def test_registry_directory_round_trip(registry, tmp_path):
    registry.write_dir(tmp_path / "plans")
    assert (tmp_path / "plans" / "towel_03.csv").is_file()
    loaded = PlanRegistry.load_dir(tmp_path / "plans")
    assert loaded.complete
    for flat, plan in registry.plans.items():
        assert loaded.plans[flat] == plan


# ---------------------------------------------------------------- templates


def test_template_stretch_distance_honors_factor():
    width = DEFAULT_GEOMETRY[GarmentCategory.TOWEL].width
    plan = generate_flatten_template(GarmentCategory.TOWEL, 0, stretch_factor=0.95)
    stretch_steps = [
        s for s, t in zip(plan.steps, plan.phase_tags) if t == "stretch"
    ]
    assert len(stretch_steps) == 2
    a, b = (np.array(s.position) for s in stretch_steps)
    assert math.dist(a, b) == pytest.approx(width * 0.95, abs=1e-12)


def test_template_phase_sequence():
    plan = generate_flatten_template(GarmentCategory.SHIRT, 4)
    assert plan.phase_sequence() == ("grasp2", "grasp3", "stretch", "lift", "place")


def test_templates_differ_across_segments():
    plans = [generate_flatten_template(GarmentCategory.JEAN, s) for s in range(10)]
    poses = {p.steps[0].position for p in plans}
    assert len(poses) == 10


def test_template_rejects_geometry_wider_than_reach():
    from kcflatten.plans import GarmentGeometry

    huge = GarmentGeometry(width=4.0, height=0.5, hang_length=0.7)
    with pytest.raises(PlanError, match="incompatible"):
        generate_flatten_template(GarmentCategory.TOWEL, 0, geometry=huge)


def test_plan_filename_layout():
    assert plan_filename(ClassLabel(GarmentCategory.SWEATER, 7)) == "sweater_07.csv"


# ---------------------------------------------------------------- properties


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 49), st.floats(0.5, 1.0))
def test_template_round_trip_and_gripper_machine(flat, stretch):
    label = ClassLabel.from_flat_index(flat)
    plan = generate_flatten_template(
        label.category, label.segment_id, stretch_factor=stretch
    )
    # gripper state machine: simulate each arm, never double-close/open
    state: dict[Arm, str] = {}
    for step in plan.steps:
        if step.gripper is GripperCommand.CLOSE:
            assert state.get(step.arm) != "closed"
            state[step.arm] = "closed"
        elif step.gripper is GripperCommand.OPEN:
            assert state.get(step.arm) != "open"
            state[step.arm] = "open"
    assert all(s == "open" for s in state.values())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 49))
def test_csv_round_trip_field_for_field(tmp_path_factory, flat):
    label = ClassLabel.from_flat_index(flat)
    plan = generate_flatten_template(label.category, label.segment_id)
    path = tmp_path_factory.mktemp("plans") / plan_filename(label)
    write_plan_csv(plan, path)
    again = parse_plan_csv(path, plan_id=plan.plan_id, label=label)
    assert again == plan
