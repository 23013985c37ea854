"""Manipulation plans: CSV encoding, workspace validation, the 50-plan
registry and the parameterized five-phase flattening template.

CSV schema: header ``step_index,arm,x,y,z,qx,qy,qz,qw,gripper``, one row per
step, UTF-8, meters and unit quaternions. A trailing optional ``phase``
column persists phase tags for generated plans; files without it parse to
untagged plans.

The flattening routine has five phases: grasp the hang's lowest point with
the free arm (grasp2), re-grasp the opposing corner with the initially
holding arm (grasp3), stretch the garment between the grippers, lift it
over the table edge, then slide it down onto the table and release. A phase
may span several steps because each step commands a single arm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import LabelError, PlanError
from .labels import CATEGORIES, NUM_CLASSES, ClassLabel, GarmentCategory
from .validation import ValidationReport

QUAT_NORM_TOL = 1e-3
IDENTITY_QUAT = (0.0, 0.0, 0.0, 1.0)

PHASE_GRASP2 = "grasp2"
PHASE_GRASP3 = "grasp3"
PHASE_STRETCH = "stretch"
PHASE_LIFT = "lift"
PHASE_PLACE = "place"
PHASES = (PHASE_GRASP2, PHASE_GRASP3, PHASE_STRETCH, PHASE_LIFT, PHASE_PLACE)

CSV_COLUMNS = ("step_index", "arm", "x", "y", "z", "qx", "qy", "qz", "qw", "gripper")
PHASE_COLUMN = "phase"


class Arm(Enum):
    LEFT = "left"
    RIGHT = "right"


class GripperCommand(Enum):
    OPEN = "open"
    CLOSE = "close"
    HOLD = "hold"


@dataclass(frozen=True)
class PlanStep:
    step_index: int
    arm: Arm
    position: tuple[float, float, float]
    quaternion: tuple[float, float, float, float]  # (qx, qy, qz, qw)
    gripper: GripperCommand

    def __post_init__(self) -> None:
        norm = math.sqrt(sum(q * q for q in self.quaternion))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise PlanError(
                f"step {self.step_index}: quaternion norm {norm:.4f} is not "
                f"within {QUAT_NORM_TOL} of 1"
            )


@dataclass(frozen=True)
class ManipulationPlan:
    plan_id: str
    steps: tuple[PlanStep, ...]
    label: ClassLabel | None = None
    phase_tags: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.phase_tags is not None and len(self.phase_tags) != len(self.steps):
            raise PlanError(
                f"plan {self.plan_id}: {len(self.phase_tags)} phase tags for "
                f"{len(self.steps)} steps"
            )
        if self.phase_tags is not None:
            bad = [t for t in self.phase_tags if t not in PHASES]
            if bad:
                raise PlanError(f"plan {self.plan_id}: unknown phase tags {bad}")

    def phase_sequence(self) -> tuple[str, ...]:
        """Phase tags with consecutive duplicates collapsed."""
        if self.phase_tags is None:
            return ()
        out: list[str] = []
        for tag in self.phase_tags:
            if not out or out[-1] != tag:
                out.append(tag)
        return tuple(out)


# --------------------------------------------------------------------------
# CSV round trip
# --------------------------------------------------------------------------


def parse_plan_csv(
    path: Path | str,
    plan_id: str | None = None,
    label: ClassLabel | None = None,
) -> ManipulationPlan:
    """Parse a plan CSV; errors name the offending file row."""
    path = Path(path)
    if not path.is_file():
        raise PlanError(f"plan file not found: {path}")
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise PlanError(f"{path}: empty plan file")

    header = [c.strip() for c in rows[0]]
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise PlanError(f"{path}: header is missing columns {missing}")
    extra = [c for c in header if c not in CSV_COLUMNS and c != PHASE_COLUMN]
    if extra:
        raise PlanError(f"{path}: header has unknown columns {extra}")
    col = {name: header.index(name) for name in header}
    has_phase = PHASE_COLUMN in col

    steps: list[PlanStep] = []
    tags: list[str] = []
    prev_index: int | None = None
    for rownum, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise PlanError(
                f"{path}: row {rownum}: expected {len(header)} fields, got {len(row)}"
            )

        def cell(name: str) -> str:
            return row[col[name]].strip()

        try:
            step_index = int(cell("step_index"))
        except ValueError:
            raise PlanError(
                f"{path}: row {rownum}: step_index {cell('step_index')!r} is not "
                "an integer"
            ) from None
        if prev_index is not None and step_index <= prev_index:
            raise PlanError(
                f"{path}: row {rownum}: step_index {step_index} does not "
                f"increase (previous was {prev_index})"
            )
        prev_index = step_index

        try:
            arm = Arm(cell("arm"))
        except ValueError:
            raise PlanError(
                f"{path}: row {rownum}: unknown arm {cell('arm')!r}"
            ) from None
        try:
            gripper = GripperCommand(cell("gripper"))
        except ValueError:
            raise PlanError(
                f"{path}: row {rownum}: unknown gripper command {cell('gripper')!r}"
            ) from None

        pose_vals = []
        for name in ("x", "y", "z", "qx", "qy", "qz", "qw"):
            try:
                pose_vals.append(float(cell(name)))
            except ValueError:
                raise PlanError(
                    f"{path}: row {rownum}: field {name}={cell(name)!r} is not "
                    "numeric"
                ) from None

        try:
            step = PlanStep(
                step_index=step_index,
                arm=arm,
                position=(pose_vals[0], pose_vals[1], pose_vals[2]),
                quaternion=(pose_vals[3], pose_vals[4], pose_vals[5], pose_vals[6]),
                gripper=gripper,
            )
        except PlanError as e:
            raise PlanError(f"{path}: row {rownum}: {e}") from None
        steps.append(step)
        if has_phase:
            tag = cell(PHASE_COLUMN)
            if tag not in PHASES:
                raise PlanError(f"{path}: row {rownum}: unknown phase {tag!r}")
            tags.append(tag)

    if not steps:
        raise PlanError(f"{path}: plan has no steps")
    return ManipulationPlan(
        plan_id=plan_id or path.stem,
        steps=tuple(steps),
        label=label,
        phase_tags=tuple(tags) if has_phase else None,
    )


def write_plan_csv(plan: ManipulationPlan, path: Path | str) -> Path:
    """Write a plan; float fields use repr so the round trip is exact."""
    path = Path(path)
    columns = list(CSV_COLUMNS)
    if plan.phase_tags is not None:
        columns.append(PHASE_COLUMN)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for i, step in enumerate(plan.steps):
            row = [
                step.step_index,
                step.arm.value,
                *(repr(v) for v in step.position),
                *(repr(v) for v in step.quaternion),
                step.gripper.value,
            ]
            if plan.phase_tags is not None:
                row.append(plan.phase_tags[i])
            writer.writerow(row)
    return path


# --------------------------------------------------------------------------
# Workspace and static validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]

    def __post_init__(self) -> None:
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise PlanError(f"degenerate workspace box {self.lower}..{self.upper}")

    def contains(self, point: tuple[float, float, float], tol: float = 1e-9) -> bool:
        return all(
            l - tol <= p <= u + tol
            for p, l, u in zip(point, self.lower, self.upper)
        )


@dataclass(frozen=True)
class Workspace:
    """Reachability boxes plus the table geometry used for collision checks.

    The table surface occupies y >= table_edge_y at height table_height; the
    garment hangs from hang_anchor, in front of the edge.
    """

    left_box: Box
    right_box: Box
    table_height: float
    table_edge_y: float
    table_x_range: tuple[float, float]
    hang_anchor: tuple[float, float, float]

    def box_for(self, arm: Arm) -> Box:
        return self.left_box if arm is Arm.LEFT else self.right_box


def default_workspace() -> Workspace:
    box = Box(lower=(-1.1, -0.3, 0.1), upper=(1.1, 1.2, 2.2))
    return Workspace(
        left_box=box,
        right_box=box,
        table_height=0.75,
        table_edge_y=0.45,
        table_x_range=(-0.9, 0.9),
        hang_anchor=(0.0, 0.25, 1.6),
    )


def validate_plan(plan: ManipulationPlan, workspace: Workspace) -> ValidationReport:
    """Static safety checks: reachability, table collision, gripper-sequence
    legality and terminal release.

    Gripper legality is initial-state agnostic: an arm's first command only
    establishes its state; later commands must alternate (a close on a
    closed gripper or an open on an open one is a violation). Every arm
    that ever closes must end open.
    """
    report = ValidationReport()
    if not plan.steps:
        report.add("empty_plan", f"plan {plan.plan_id} has no steps")
        return report

    prev_index: int | None = None
    gripper_state: dict[Arm, GripperCommand] = {}
    ever_closed: set[Arm] = set()
    for step in plan.steps:
        if prev_index is not None and step.step_index <= prev_index:
            report.add(
                "bad_step_order",
                f"step_index {step.step_index} does not increase",
                step_index=step.step_index,
            )
        prev_index = step.step_index

        box = workspace.box_for(step.arm)
        if not box.contains(step.position):
            report.add(
                "out_of_workspace",
                f"{step.arm.value} arm pose {step.position} is outside its "
                "reachability box",
                step_index=step.step_index,
            )
        x, y, z = step.position
        if y >= workspace.table_edge_y and z < workspace.table_height - 1e-9:
            report.add(
                "below_table",
                f"pose {step.position} is below the table surface "
                f"(z < {workspace.table_height})",
                step_index=step.step_index,
            )

        state = gripper_state.get(step.arm)
        if step.gripper is GripperCommand.CLOSE:
            if state is GripperCommand.CLOSE:
                report.add(
                    "double_close",
                    f"{step.arm.value} gripper closed while already closed",
                    step_index=step.step_index,
                )
            gripper_state[step.arm] = GripperCommand.CLOSE
            ever_closed.add(step.arm)
        elif step.gripper is GripperCommand.OPEN:
            if state is GripperCommand.OPEN:
                report.add(
                    "double_open",
                    f"{step.arm.value} gripper opened while already open",
                    step_index=step.step_index,
                )
            gripper_state[step.arm] = GripperCommand.OPEN

    for arm in sorted(ever_closed, key=lambda a: a.value):
        if gripper_state.get(arm) is GripperCommand.CLOSE:
            report.add(
                "missing_release",
                f"{arm.value} gripper is still closed at the end of the plan",
            )
    return report


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------


def plan_filename(label: ClassLabel) -> str:
    return f"{label.category.value}_{label.segment_id:02d}.csv"


@dataclass
class PlanRegistry:
    """Map from flat class index to its manipulation plan."""

    plans: dict[int, ManipulationPlan]

    @property
    def complete(self) -> bool:
        return set(self.plans) == set(range(NUM_CLASSES))

    def __len__(self) -> int:
        return len(self.plans)

    def __contains__(self, label: ClassLabel) -> bool:
        return label.flat_index in self.plans

    @classmethod
    def load_dir(cls, path: Path | str) -> "PlanRegistry":
        """Load every ``<category>_<segment>.csv`` below ``path``."""
        path = Path(path)
        if not path.is_dir():
            raise PlanError(f"plan directory not found: {path}")
        plans: dict[int, ManipulationPlan] = {}
        for file in sorted(path.glob("*.csv")):
            stem = file.stem
            try:
                cat_name, seg_text = stem.rsplit("_", 1)
                label = ClassLabel(GarmentCategory.from_name(cat_name), int(seg_text))
            except (ValueError, LabelError):
                raise PlanError(
                    f"{file}: file name must look like towel_03.csv"
                ) from None
            plans[label.flat_index] = parse_plan_csv(file, plan_id=stem, label=label)
        return cls(plans)

    def write_dir(self, path: Path | str) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for plan in self.plans.values():
            if plan.label is None:
                raise PlanError(f"plan {plan.plan_id} has no label; cannot file it")
            write_plan_csv(plan, path / plan_filename(plan.label))
        return path


def select_plan(label: ClassLabel, registry: PlanRegistry) -> ManipulationPlan:
    plan = registry.plans.get(label.flat_index)
    if plan is None:
        raise PlanError(f"registry has no plan for class {label}")
    return plan


# --------------------------------------------------------------------------
# Flatten template
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GarmentGeometry:
    """Nominal flat dimensions and how far the garment hangs when held."""

    width: float
    height: float
    hang_length: float

    def __post_init__(self) -> None:
        if min(self.width, self.height, self.hang_length) <= 0:
            raise PlanError("garment geometry must be positive")


DEFAULT_GEOMETRY: dict[GarmentCategory, GarmentGeometry] = {
    GarmentCategory.JEAN: GarmentGeometry(width=0.45, height=1.00, hang_length=1.05),
    GarmentCategory.SHIRT: GarmentGeometry(width=0.55, height=0.75, hang_length=0.90),
    GarmentCategory.SWEATER: GarmentGeometry(width=0.62, height=0.68, hang_length=0.88),
    GarmentCategory.TOWEL: GarmentGeometry(width=0.60, height=0.45, hang_length=0.72),
    GarmentCategory.TSHIRT: GarmentGeometry(width=0.52, height=0.66, hang_length=0.82),
}

DEFAULT_STRETCH_FACTOR = 0.95


def generate_flatten_template(
    category: GarmentCategory,
    segment_id: int,
    geometry: GarmentGeometry | None = None,
    workspace: Workspace | None = None,
    stretch_factor: float = DEFAULT_STRETCH_FACTOR,
) -> ManipulationPlan:
    """Build the five-phase flattening plan for one known configuration.

    The left arm takes the second grasp at the hang's lowest point; the
    right arm (which made the initial grasp) releases and re-grasps the
    opposing corner; then both arms stretch to width * stretch_factor,
    lift over the table edge, slide down onto the table and release.
    Grasp offsets vary with the segment so all fifty plans are distinct.
    """
    label = ClassLabel(category, segment_id)
    geometry = geometry or DEFAULT_GEOMETRY[category]
    workspace = workspace or default_workspace()
    if not 0 < stretch_factor <= 1.0:
        raise PlanError(f"stretch_factor must be in (0, 1], got {stretch_factor}")

    ax, ay, az = workspace.hang_anchor
    # segment-specific grasp variation: lateral nudge and hang-depth scale
    nudge = 0.012 * (segment_id - 4.5)
    hang = geometry.hang_length * (0.88 + 0.024 * (segment_id % 5))

    half_stretch = geometry.width * stretch_factor / 2.0
    z_stretch = az - 0.25
    z_lift = workspace.table_height + 0.18
    y_place = workspace.table_edge_y + 0.18
    z_place = workspace.table_height + 0.02

    lowest = (ax + nudge, ay, az - hang)
    release = (ax + 0.08, ay, az)
    corner = (ax + nudge + 0.05, ay, az - 0.08)

    def step(i: int, arm: Arm, pos: tuple[float, float, float], grip: GripperCommand):
        return PlanStep(i, arm, pos, IDENTITY_QUAT, grip)

    steps = (
        step(0, Arm.LEFT, lowest, GripperCommand.CLOSE),
        step(1, Arm.RIGHT, release, GripperCommand.OPEN),
        step(2, Arm.RIGHT, corner, GripperCommand.CLOSE),
        step(3, Arm.LEFT, (-half_stretch, ay, z_stretch), GripperCommand.HOLD),
        step(4, Arm.RIGHT, (half_stretch, ay, z_stretch), GripperCommand.HOLD),
        step(5, Arm.LEFT, (-half_stretch, workspace.table_edge_y, z_lift), GripperCommand.HOLD),
        step(6, Arm.RIGHT, (half_stretch, workspace.table_edge_y, z_lift), GripperCommand.HOLD),
        step(7, Arm.LEFT, (-half_stretch, y_place, z_place), GripperCommand.OPEN),
        step(8, Arm.RIGHT, (half_stretch, y_place, z_place), GripperCommand.OPEN),
    )
    tags = (
        PHASE_GRASP2,
        PHASE_GRASP3,
        PHASE_GRASP3,
        PHASE_STRETCH,
        PHASE_STRETCH,
        PHASE_LIFT,
        PHASE_LIFT,
        PHASE_PLACE,
        PHASE_PLACE,
    )
    plan = ManipulationPlan(
        plan_id=f"{category.value}_{segment_id:02d}",
        steps=steps,
        label=label,
        phase_tags=tags,
    )
    report = validate_plan(plan, workspace)
    if not report.ok:
        raise PlanError(
            f"garment geometry is incompatible with the workspace for "
            f"{plan.plan_id}: {report.summary()}"
        )
    return plan


def build_default_registry(
    workspace: Workspace | None = None,
    stretch_factor: float = DEFAULT_STRETCH_FACTOR,
) -> PlanRegistry:
    """Generate all fifty template plans."""
    workspace = workspace or default_workspace()
    plans = {}
    for category in CATEGORIES:
        for segment_id in range(10):
            plan = generate_flatten_template(
                category, segment_id, workspace=workspace, stretch_factor=stretch_factor
            )
            plans[plan.label.flat_index] = plan
    return PlanRegistry(plans)
