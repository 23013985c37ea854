"""Mock dual-arm robot that plays back manipulation plans.

The mock has no dynamics: commanded poses are reached exactly and the
garment is a set of abstract handle points. Closing a gripper attaches the
nearest free handle within the grasp radius; opening releases it at the
current pose. The executor enforces workspace membership and gripper
transition legality at every step and emits a JSON-lines-exportable trace.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .errors import ExecutionError
from .plans import (
    Arm,
    GripperCommand,
    ManipulationPlan,
    PlanStep,
    Workspace,
    validate_plan,
)

DEFAULT_GRASP_RADIUS = 0.05  # meters within which a close attaches a handle


class GripperState(Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class ArmState:
    position: tuple[float, float, float]
    quaternion: tuple[float, float, float, float]
    gripper: GripperState
    held_object: str | None = None

    def __post_init__(self) -> None:
        if self.held_object is not None and self.gripper is not GripperState.CLOSED:
            raise ExecutionError(
                f"arm holds {self.held_object!r} with an open gripper"
            )


@dataclass(frozen=True)
class MockRobotState:
    left: ArmState
    right: ArmState
    free_handles: tuple[tuple[str, tuple[float, float, float]], ...] = ()
    clock: int = 0

    def arm(self, arm: Arm) -> ArmState:
        return self.left if arm is Arm.LEFT else self.right

    def with_arm(self, arm: Arm, state: ArmState) -> "MockRobotState":
        if arm is Arm.LEFT:
            return replace(self, left=state)
        return replace(self, right=state)


@dataclass(frozen=True)
class TraceEvent:
    step_index: int
    arm: str
    position: tuple[float, float, float]
    quaternion: tuple[float, float, float, float]
    gripper_command: str
    gripper_transition: str  # e.g. "open->closed", "none"
    phase_tag: str | None
    clock: int

    def to_record(self) -> dict:
        return {
            "step_index": self.step_index,
            "arm": self.arm,
            "position": list(self.position),
            "quaternion": list(self.quaternion),
            "gripper_command": self.gripper_command,
            "gripper_transition": self.gripper_transition,
            "phase_tag": self.phase_tag,
            "clock": self.clock,
        }


@dataclass(frozen=True)
class ExecutionTrace:
    plan_id: str
    events: tuple[TraceEvent, ...]
    status: str  # "success" | "failed"
    failure_reason: str | None = None
    failed_step_index: int | None = None

    @property
    def success(self) -> bool:
        return self.status == "success"

    def phase_sequence(self) -> tuple[str, ...]:
        out: list[str] = []
        for event in self.events:
            if event.phase_tag and (not out or out[-1] != event.phase_tag):
                out.append(event.phase_tag)
        return tuple(out)

    def to_jsonl(self, path: Path | str) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as f:
            for event in self.events:
                f.write(json.dumps(event.to_record()) + "\n")
            f.write(
                json.dumps(
                    {
                        "plan_id": self.plan_id,
                        "status": self.status,
                        "failure_reason": self.failure_reason,
                        "failed_step_index": self.failed_step_index,
                    }
                )
                + "\n"
            )
        return path


def _distance(a: tuple[float, float, float], b: tuple[float, float, float]) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def initial_state_for_plan(
    plan: ManipulationPlan, workspace: Workspace, holding_arm: Arm = Arm.RIGHT
) -> MockRobotState:
    """Starting state for a flattening plan: the holding arm grips the hung
    garment at the anchor, the other arm idles open, and a free garment
    handle sits at every pose the plan will close on."""
    anchor = workspace.hang_anchor
    home = (anchor[0] - 0.35, anchor[1], anchor[2] - 0.10)
    holding = ArmState(
        position=anchor,
        quaternion=(0.0, 0.0, 0.0, 1.0),
        gripper=GripperState.CLOSED,
        held_object="initial-grasp",
    )
    idle = ArmState(
        position=home,
        quaternion=(0.0, 0.0, 0.0, 1.0),
        gripper=GripperState.OPEN,
    )
    handles = tuple(
        (f"handle-{step.step_index}", step.position)
        for step in plan.steps
        if step.gripper is GripperCommand.CLOSE
    )
    left, right = (holding, idle) if holding_arm is Arm.LEFT else (idle, holding)
    return MockRobotState(left=left, right=right, free_handles=handles)


def step(
    state: MockRobotState,
    plan_step: PlanStep,
    workspace: Workspace,
    grasp_radius: float = DEFAULT_GRASP_RADIUS,
    phase_tag: str | None = None,
) -> tuple[MockRobotState, TraceEvent]:
    """Apply one plan step: move the arm to the pose, then run the gripper
    command. Raises ExecutionError on a workspace or transition breach."""
    box = workspace.box_for(plan_step.arm)
    if not box.contains(plan_step.position):
        raise ExecutionError(
            f"{plan_step.arm.value} arm pose {plan_step.position} is outside "
            "its reachability box",
            step_index=plan_step.step_index,
        )

    arm_state = state.arm(plan_step.arm)
    arm_state = replace(
        arm_state, position=plan_step.position, quaternion=plan_step.quaternion
    )
    free = list(state.free_handles)
    transition = "none"

    if plan_step.gripper is GripperCommand.CLOSE:
        if arm_state.gripper is GripperState.CLOSED:
            raise ExecutionError(
                f"{plan_step.arm.value} gripper commanded to close while "
                "already closed",
                step_index=plan_step.step_index,
            )
        held = None
        in_reach = [
            (name, pos)
            for name, pos in free
            if _distance(pos, plan_step.position) <= grasp_radius
        ]
        if in_reach:
            in_reach.sort(key=lambda h: (_distance(h[1], plan_step.position), h[0]))
            held = in_reach[0][0]
            free = [h for h in free if h[0] != held]
        arm_state = replace(
            arm_state, gripper=GripperState.CLOSED, held_object=held
        )
        transition = "open->closed"
    elif plan_step.gripper is GripperCommand.OPEN:
        if arm_state.gripper is GripperState.OPEN:
            raise ExecutionError(
                f"{plan_step.arm.value} gripper commanded to open while "
                "already open",
                step_index=plan_step.step_index,
            )
        if arm_state.held_object is not None:
            free.append((arm_state.held_object, plan_step.position))
        arm_state = replace(
            arm_state, gripper=GripperState.OPEN, held_object=None
        )
        transition = "closed->open"

    new_state = state.with_arm(plan_step.arm, arm_state)
    new_state = replace(
        new_state, free_handles=tuple(free), clock=state.clock + 1
    )
    event = TraceEvent(
        step_index=plan_step.step_index,
        arm=plan_step.arm.value,
        position=plan_step.position,
        quaternion=plan_step.quaternion,
        gripper_command=plan_step.gripper.value,
        gripper_transition=transition,
        phase_tag=phase_tag,
        clock=new_state.clock,
    )
    return new_state, event


def execute_plan(
    plan: ManipulationPlan,
    workspace: Workspace,
    initial: MockRobotState | None = None,
    grasp_radius: float = DEFAULT_GRASP_RADIUS,
) -> ExecutionTrace:
    """Play a validated plan from the initial state.

    Structural problems (no steps, static validation failures) raise before
    any step runs. Runtime breaches (a pose outside the workspace, a
    transition that is illegal from the actual gripper state) terminate the
    trace with status "failed" and keep the events up to the breach.
    """
    if not plan.steps:
        raise ExecutionError(f"plan {plan.plan_id} has no steps")
    report = validate_plan(plan, workspace)
    if not report.ok:
        raise ExecutionError(
            f"plan {plan.plan_id} failed validation:\n{report.summary()}"
        )
    if initial is None:
        initial = initial_state_for_plan(plan, workspace)

    state = initial
    events: list[TraceEvent] = []
    for i, plan_step in enumerate(plan.steps):
        tag = plan.phase_tags[i] if plan.phase_tags is not None else None
        try:
            state, event = step(state, plan_step, workspace, grasp_radius, tag)
        except ExecutionError as e:
            return ExecutionTrace(
                plan_id=plan.plan_id,
                events=tuple(events),
                status="failed",
                failure_reason=str(e),
                failed_step_index=plan_step.step_index,
            )
        events.append(event)
    return ExecutionTrace(plan_id=plan.plan_id, events=tuple(events), status="success")
