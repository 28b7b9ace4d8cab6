"""Rule-based combination of pose and hand-detector streams.

The engine scores each frame against an ordered rule list:

  1. the pose estimate is confident (mean arm-joint score);
  2. at least two hands are detected with sufficient score;
  3. each confident wrist lies close to an edge of some hand box;
  4. the elbow-to-wrist direction points at the center of that box;
  5. both associated hand boxes sit inside the steering-wheel region;
  6. (strict) the associated hand scores clear a higher bar;
  7. (strict) the wrist-to-edge distances clear a tighter bar.

Rules 1-5 passing means "safe driving"; 1-7 the strict variant. When
exactly one scored hand is on the wheel, the pose side of its wrist is
trusted over the detector side, mislabels are corrected, and every change
is exported as a training record with the justifying rule trace. Episode
labels are assigned per temporal segment from a data-driven predicate
table.

Coordinates are normalized to [0, 1] by image size; distances are measured
in units of the image diagonal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

JOINT_NAMES = (
    "head",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
)
ARM_JOINTS = ("r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist")
_DIAG = math.sqrt(2.0)


@dataclass(frozen=True)
class PoseFrame:
    frame_index: int
    joints: dict[str, tuple[float, float, float]]  # name -> (x, y, score)


@dataclass(frozen=True)
class HandDetection:
    box: tuple[float, float, float, float]  # x0, y0, x1, y1
    score: float
    side: str = "unknown"  # left | right | unknown
    side_score: float = 0.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"hand box has no area: {self.box}")
        if self.side not in ("left", "right", "unknown"):
            raise ValueError(f"bad side {self.side!r}")

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))


@dataclass(frozen=True)
class ObjectDetection:
    label: str
    box: tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"object box has no area: {self.box}")

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))


@dataclass
class FusionConfig:
    """Thresholds for the rule engine; all geometric values are normalized.

    wheel_region is an axis-aligned box [x0, y0, x1, y1] or a polygon
    [[x, y], ...]. consistency_frames=None derives ceil(frame_rate / 2).
    """

    wheel_region: Sequence
    pose_score_min: float = 0.5
    hand_score_min: float = 0.5
    hand_score_strict: float = 0.8
    wrist_edge_dist_max: float = 0.05
    wrist_edge_dist_strict: float = 0.02
    elbow_angle_max_deg: float = 45.0
    frame_rate: float = 10.0
    consistency_frames: int | None = None

    def __post_init__(self):
        if self.hand_score_strict < self.hand_score_min:
            raise ValueError("hand_score_strict must be at least hand_score_min")
        if self.wrist_edge_dist_strict > self.wrist_edge_dist_max:
            raise ValueError("wrist_edge_dist_strict must not exceed wrist_edge_dist_max")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")

    def resolved_consistency_frames(self) -> int:
        if self.consistency_frames is not None:
            if self.consistency_frames < 1:
                raise ValueError("consistency_frames must be at least 1")
            return self.consistency_frames
        return max(1, math.ceil(self.frame_rate / 2.0))


@dataclass(frozen=True)
class RuleResult:
    rule: int
    passed: bool
    value: float | None
    detail: str


@dataclass
class RuleVerdict:
    frame_index: int
    rule_results: list[RuleResult]
    safe_driving: bool
    strict_safe_driving: bool
    associations: dict[str, int]  # wrist name -> hand index
    relabels: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    stabilized_safe_driving: bool | None = None

    def passed_rules(self) -> list[int]:
        return [r.rule for r in self.rule_results if r.passed]


@dataclass(frozen=True)
class WristAssociation:
    wrist: str
    hand_index: int
    distance: float  # wrist-to-edge distance in diagonal units
    angle_deg: float | None
    angle_waived: bool


@dataclass
class TrainingRecord:
    frame_index: int
    kind: str  # hand_side_label | pose_correction
    payload: dict
    provenance: dict

    def __post_init__(self):
        if self.kind not in ("hand_side_label", "pose_correction"):
            raise ValueError(f"bad record kind {self.kind!r}")
        if not self.provenance.get("rules"):
            raise ValueError("training record requires a justifying rule trace")


def region_contains(region: Sequence, point: tuple[float, float]) -> bool:
    """Point-in-region test for a flat box [x0,y0,x1,y1] or a polygon."""
    x, y = point
    flat = list(region)
    if len(flat) == 4 and all(isinstance(c, (int, float)) for c in flat):
        x0, y0, x1, y1 = flat
        return x0 <= x <= x1 and y0 <= y <= y1
    pts = [(float(px), float(py)) for px, py in flat]
    if len(pts) < 3:
        raise ValueError("polygon region needs at least 3 vertices")
    inside = False
    j = len(pts) - 1
    for i in range(len(pts)):
        xi, yi = pts[i]
        xj, yj = pts[j]
        if (yi > y) != (yj > y) and x < (xj - xi) * (y - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


def edge_distance(point: tuple[float, float], box: Sequence) -> float:
    """Unsigned distance from a point to the box boundary, in diagonal units."""
    x, y = point
    x0, y0, x1, y1 = (float(c) for c in box)
    if x0 <= x <= x1 and y0 <= y <= y1:
        d = min(x - x0, x1 - x, y - y0, y1 - y)
    else:
        dx = max(x0 - x, 0.0, x - x1)
        dy = max(y0 - y, 0.0, y - y1)
        d = math.hypot(dx, dy)
    return d / _DIAG


def _angle_deg(u: tuple[float, float], v: tuple[float, float]) -> float:
    nu = math.hypot(*u)
    nv = math.hypot(*v)
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    c = (u[0] * v[0] + u[1] * v[1]) / (nu * nv)
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


_WRIST_SPECS = (("l_wrist", "l_elbow", "left"), ("r_wrist", "r_elbow", "right"))


def _associate(pose: PoseFrame, hands, cfg: FusionConfig, enforce_angle: bool):
    candidates = []
    for wrist_name, elbow_name, _side in _WRIST_SPECS:
        wj = pose.joints.get(wrist_name)
        if wj is None or wj[2] < cfg.pose_score_min:
            continue
        ej = pose.joints.get(elbow_name)
        elbow_ok = ej is not None and ej[2] >= cfg.pose_score_min
        for idx, hand in enumerate(hands):
            dist = edge_distance((wj[0], wj[1]), hand.box)
            if dist > cfg.wrist_edge_dist_max:
                continue
            angle: float | None = None
            waived = not elbow_ok
            if elbow_ok:
                cx, cy = hand.center
                angle = _angle_deg(
                    (wj[0] - ej[0], wj[1] - ej[1]), (cx - wj[0], cy - wj[1])
                )
                if enforce_angle and angle > cfg.elbow_angle_max_deg:
                    continue
            candidates.append((dist, wrist_name, idx, angle, waived))

    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    taken_wrists: set[str] = set()
    taken_hands: set[int] = set()
    out: list[WristAssociation] = []
    for dist, wrist_name, idx, angle, waived in candidates:
        if wrist_name in taken_wrists or idx in taken_hands:
            continue
        taken_wrists.add(wrist_name)
        taken_hands.add(idx)
        out.append(WristAssociation(wrist_name, idx, dist, angle, waived))
    out.sort(key=lambda a: a.wrist)
    return out


def associate_wrists(pose: PoseFrame, hands, cfg: FusionConfig) -> list[WristAssociation]:
    """Greedy wrist-to-hand-box assignment.

    A confident wrist is a candidate for a box when it lies within
    wrist_edge_dist_max of the box boundary and (unless its elbow is
    unscored, which waives the check) the elbow-to-wrist direction points at
    the box center within elbow_angle_max_deg. Smallest distance assigns
    first; each box is used at most once.
    """
    return _associate(pose, hands, cfg, enforce_angle=True)


def evaluate_safe_driving(pose: PoseFrame, hands, cfg: FusionConfig) -> RuleVerdict:
    """Score one frame against rules 1-7; never raises on missing data."""
    results: list[RuleResult] = []
    notes: list[str] = []

    arm_scores = [pose.joints.get(j, (0.0, 0.0, 0.0))[2] for j in ARM_JOINTS]
    mean_score = sum(arm_scores) / len(arm_scores)
    results.append(
        RuleResult(1, mean_score >= cfg.pose_score_min, mean_score, "mean arm joint score")
    )

    n_scored = sum(1 for h in hands if h.score >= cfg.hand_score_min)
    results.append(RuleResult(2, n_scored >= 2, float(n_scored), "scored hand count"))
    if n_scored < 2:
        notes.append(f"rule 2: only {n_scored} hand(s) with score >= {cfg.hand_score_min}")

    edge_assoc = _associate(pose, hands, cfg, enforce_angle=False)
    full_assoc = _associate(pose, hands, cfg, enforce_angle=True)
    edge_by_wrist = {a.wrist: a for a in edge_assoc}
    full_by_wrist = {a.wrist: a for a in full_assoc}

    both_edges = all(w in edge_by_wrist for w in ("l_wrist", "r_wrist"))
    edge_val = (
        max(a.distance for a in edge_assoc) if both_edges and edge_assoc else None
    )
    results.append(RuleResult(3, both_edges, edge_val, "max wrist-to-edge distance"))
    if not both_edges:
        missing = [w for w, _, _ in _WRIST_SPECS if w not in edge_by_wrist]
        notes.append(f"rule 3: no close hand box for {', '.join(missing)}")

    both_full = all(w in full_by_wrist for w in ("l_wrist", "r_wrist"))
    angles = [a.angle_deg for a in full_assoc if a.angle_deg is not None]
    results.append(
        RuleResult(4, both_full, max(angles) if both_full and angles else None, "max arm-to-box angle")
    )

    on_wheel = both_full and all(
        region_contains(cfg.wheel_region, hands[a.hand_index].center) for a in full_assoc
    )
    results.append(
        RuleResult(5, on_wheel, float(on_wheel) if both_full else None, "both hands in wheel region")
    )
    if both_full and not on_wheel:
        off = [
            a.wrist
            for a in full_assoc
            if not region_contains(cfg.wheel_region, hands[a.hand_index].center)
        ]
        notes.append(f"rule 5: hand for {', '.join(off)} outside wheel region")

    scores_ok = both_full and all(
        hands[a.hand_index].score >= cfg.hand_score_strict for a in full_assoc
    )
    min_assoc_score = (
        min(hands[a.hand_index].score for a in full_assoc) if both_full and full_assoc else None
    )
    results.append(RuleResult(6, scores_ok, min_assoc_score, "min associated hand score"))

    tight = both_full and all(a.distance <= cfg.wrist_edge_dist_strict for a in full_assoc)
    max_dist = max((a.distance for a in full_assoc), default=None) if both_full else None
    results.append(RuleResult(7, tight, max_dist, "max associated wrist-to-edge distance"))

    safe = all(r.passed for r in results[:5])
    strict = safe and all(r.passed for r in results[5:])
    return RuleVerdict(
        frame_index=pose.frame_index,
        rule_results=results,
        safe_driving=safe,
        strict_safe_driving=strict,
        associations={a.wrist: a.hand_index for a in full_assoc},
        notes=notes,
    )


def _opposite(side: str) -> str:
    return "left" if side == "right" else "right"


def _wrist_side(wrist: str) -> str:
    return "left" if wrist.startswith("l_") else "right"


def relabel_hands(
    pose: PoseFrame,
    hands,
    cfg: FusionConfig,
    verdict: RuleVerdict | None = None,
) -> tuple[list[HandDetection], list[TrainingRecord]]:
    """Correct left/right hand labels using the pose as the side authority.

    Applies only when exactly one scored hand sits in the wheel region and
    is associated to a confident wrist with rules 1, 3 and 4 holding for
    that wrist: the on-wheel hand takes the wrist's side, and any other
    associated hand sharing that side flips to the opposite one. Each change
    yields a hand_side_label training record. Idempotent. If *verdict* is
    given, skip reasons are appended to its notes.
    """
    corrected = list(hands)
    records: list[TrainingRecord] = []
    local = verdict if verdict is not None else evaluate_safe_driving(pose, hands, cfg)

    def note(msg: str):
        if verdict is not None:
            verdict.notes.append(msg)

    scored = [i for i, h in enumerate(hands) if h.score >= cfg.hand_score_min]
    on_wheel = [i for i in scored if region_contains(cfg.wheel_region, hands[i].center)]
    if len(on_wheel) != 1:
        note(f"relabel skipped: {len(on_wheel)} scored hand(s) in wheel region")
        return corrected, records

    rule1 = any(r.rule == 1 and r.passed for r in local.rule_results)
    if not rule1:
        note("relabel skipped: pose confidence (rule 1) failed")
        return corrected, records

    wheel_idx = on_wheel[0]
    assoc = {w: i for w, i in local.associations.items()}
    wheel_wrist = next((w for w, i in assoc.items() if i == wheel_idx), None)
    if wheel_wrist is None:
        note("relabel skipped: on-wheel hand not associated to a wrist")
        return corrected, records

    wheel_side = _wrist_side(wheel_wrist)
    trace_rules = sorted(set(local.passed_rules()) & {1, 2, 3, 4, 5, 6, 7})
    provenance = {
        "frame": pose.frame_index,
        "rules": trace_rules,
        "on_wheel_wrist": wheel_wrist,
        "values": {
            str(r.rule): r.value for r in local.rule_results if r.passed and r.value is not None
        },
    }

    def relabel(idx: int, new_side: str, reason: str):
        old = corrected[idx]
        corrected[idx] = replace(old, side=new_side)
        change = {
            "hand_index": idx,
            "box": list(old.box),
            "old_side": old.side,
            "new_side": new_side,
            "reason": reason,
        }
        if verdict is not None:
            verdict.relabels.append(change)
        records.append(
            TrainingRecord(
                frame_index=pose.frame_index,
                kind="hand_side_label",
                payload=change,
                provenance=provenance,
            )
        )

    if corrected[wheel_idx].side != wheel_side:
        relabel(wheel_idx, wheel_side, "pose side of the on-wheel wrist is trusted")
    for wrist, idx in sorted(assoc.items()):
        if idx == wheel_idx:
            continue
        if corrected[idx].side == wheel_side:
            relabel(idx, _opposite(wheel_side), "only one hand can match the on-wheel side")
    return corrected, records


def emit_pose_corrections(
    pose: PoseFrame,
    corrected_hands,
    side_records: list[TrainingRecord],
    cfg: FusionConfig,
) -> list[TrainingRecord]:
    """One wrist-position correction per relabeled hand.

    The corrected side names the wrist, which is pinned to the hand-box
    center; the justifying trace is inherited from the side record.
    """
    out: list[TrainingRecord] = []
    for rec in side_records:
        if rec.kind != "hand_side_label":
            continue
        idx = rec.payload["hand_index"]
        hand = corrected_hands[idx]
        cx, cy = hand.center
        wrist = "l_wrist" if hand.side == "left" else "r_wrist"
        out.append(
            TrainingRecord(
                frame_index=pose.frame_index,
                kind="pose_correction",
                payload={"joint": wrist, "x": cx, "y": cy, "side": hand.side, "hand_index": idx},
                provenance=rec.provenance,
            )
        )
    return out


def temporal_verdict(verdicts: Sequence[RuleVerdict], cfg: FusionConfig) -> list[RuleVerdict]:
    """Stabilize per-frame verdicts over a consistency window.

    The stabilized flag at frame t is true only if the raw flag held for the
    whole trailing window, so a stabilized true never appears on a raw-false
    frame.
    """
    k = cfg.resolved_consistency_frames()
    out = []
    streak = 0
    for v in verdicts:
        streak = streak + 1 if v.safe_driving else 0
        nv = replace(v, stabilized_safe_driving=streak >= k)
        out.append(nv)
    return out


# --------------------------------------------------------------------------
# episode classification


@dataclass(frozen=True)
class EpisodeRule:
    label: str
    predicate: str
    params: dict = field(default_factory=dict)
    with_side: bool = False


@dataclass
class EpisodeRuleTable:
    rules: list[EpisodeRule]

    @classmethod
    def from_json(cls, path) -> "EpisodeRuleTable":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeRuleTable":
        rules = [
            EpisodeRule(
                label=r["label"],
                predicate=r["predicate"],
                params=r.get("params", {}),
                with_side=bool(r.get("with_side", False)),
            )
            for r in data["rules"]
        ]
        return cls(rules=rules)

    def to_dict(self) -> dict:
        return {
            "rules": [
                {
                    "label": r.label,
                    "predicate": r.predicate,
                    "params": r.params,
                    "with_side": r.with_side,
                }
                for r in self.rules
            ]
        }


@dataclass
class EpisodeLabel:
    segment: int
    start: int
    end: int  # exclusive
    label: str
    votes: dict[str, int]
    notes: list[str] = field(default_factory=list)


@dataclass
class _FrameContext:
    pose: PoseFrame
    hands: list[HandDetection]
    objects: list[ObjectDetection]
    verdict: RuleVerdict
    associations: dict[str, int]
    on_wheel: set[int]

    def off_wheel_assoc(self):
        return [
            (w, i) for w, i in sorted(self.associations.items()) if i not in self.on_wheel
        ]


def _pred_both_hands_on_wheel(ctx: _FrameContext, params: dict):
    return ("", None) if ctx.verdict.safe_driving else None


def _boxes_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _pred_phone_at_head(ctx: _FrameContext, params: dict):
    head = ctx.pose.joints.get("head")
    if head is None:
        return None
    labels = set(params.get("object_labels", ["cell phone", "phone"]))
    radius = params.get("head_radius", 0.12)
    off = ctx.off_wheel_assoc()
    if not off:
        return None
    for obj in ctx.objects:
        if obj.label not in labels:
            continue
        cx, cy = obj.center
        if math.hypot(cx - head[0], cy - head[1]) > radius:
            continue
        wrist, idx = min(
            off,
            key=lambda wi: math.hypot(
                ctx.hands[wi[1]].center[0] - cx, ctx.hands[wi[1]].center[1] - cy
            ),
        )
        return ("", ctx.hands[idx].side if ctx.hands[idx].side != "unknown" else _wrist_side(wrist))
    return None


def _pred_phone_at_offwheel_wrist(ctx: _FrameContext, params: dict):
    labels = set(params.get("object_labels", ["cell phone", "phone"]))
    radius = params.get("wrist_radius", 0.10)
    chest = params.get("chest_line", 0.45)
    for wrist, idx in ctx.off_wheel_assoc():
        wj = ctx.pose.joints.get(wrist)
        if wj is None or wj[1] <= chest:
            continue
        for obj in ctx.objects:
            if obj.label not in labels:
                continue
            cx, cy = obj.center
            if math.hypot(cx - wj[0], cy - wj[1]) <= radius:
                side = ctx.hands[idx].side
                return ("", side if side != "unknown" else _wrist_side(wrist))
    return None


def _pred_object_in_hand(ctx: _FrameContext, params: dict):
    labels = set(params.get("object_labels", ["cup", "bottle"]))
    for _wrist, idx in sorted(ctx.associations.items()):
        hand = ctx.hands[idx]
        for obj in ctx.objects:
            if obj.label in labels and _boxes_overlap(obj.box, hand.box):
                return ("", hand.side if hand.side != "unknown" else None)
    return None


def _pred_offwheel_wrist_in_region(ctx: _FrameContext, params: dict):
    region = params.get("region")
    if region is None:
        return None
    for wrist, _idx in ctx.off_wheel_assoc():
        wj = ctx.pose.joints.get(wrist)
        if wj is not None and region_contains(region, (wj[0], wj[1])):
            return ("", _wrist_side(wrist))
    # also allow a confident wrist with no hand box at all
    for wrist, _elbow, _side in _WRIST_SPECS:
        if wrist in ctx.associations:
            continue
        wj = ctx.pose.joints.get(wrist)
        if wj is not None and wj[2] > 0 and region_contains(region, (wj[0], wj[1])):
            return ("", _wrist_side(wrist))
    return None


PREDICATES = {
    "both_hands_on_wheel": _pred_both_hands_on_wheel,
    "phone_at_head": _pred_phone_at_head,
    "phone_at_offwheel_wrist": _pred_phone_at_offwheel_wrist,
    "object_in_hand": _pred_object_in_hand,
    "offwheel_wrist_in_region": _pred_offwheel_wrist_in_region,
}

DEFAULT_EPISODE_RULES = EpisodeRuleTable(
    rules=[
        EpisodeRule("safe_driving", "both_hands_on_wheel"),
        EpisodeRule(
            "talking_on_phone",
            "phone_at_head",
            {"object_labels": ["cell phone", "phone"], "head_radius": 0.12},
            with_side=True,
        ),
        EpisodeRule(
            "texting",
            "phone_at_offwheel_wrist",
            {"object_labels": ["cell phone", "phone"], "wrist_radius": 0.10, "chest_line": 0.45},
            with_side=True,
        ),
        EpisodeRule("drinking", "object_in_hand", {"object_labels": ["cup", "bottle"]}),
        EpisodeRule(
            "operating_radio",
            "offwheel_wrist_in_region",
            {"region": [0.66, 0.50, 0.86, 0.68]},
        ),
    ]
)


def frame_context(pose: PoseFrame, hands, objects, cfg: FusionConfig) -> _FrameContext:
    verdict = evaluate_safe_driving(pose, hands, cfg)
    on_wheel = {
        i
        for i, h in enumerate(hands)
        if h.score >= cfg.hand_score_min and region_contains(cfg.wheel_region, h.center)
    }
    return _FrameContext(
        pose=pose,
        hands=list(hands),
        objects=list(objects),
        verdict=verdict,
        associations=dict(verdict.associations),
        on_wheel=on_wheel,
    )


def classify_episode(
    frames: Sequence[tuple[PoseFrame, Sequence[HandDetection], Sequence[ObjectDetection]]],
    segments,
    rule_table: EpisodeRuleTable,
    cfg: FusionConfig,
) -> list[EpisodeLabel]:
    """Majority-vote a label per temporal segment from the predicate table.

    Every firing predicate contributes one vote per frame; a segment whose
    top two labels tie is reported unknown with the candidates noted, and a
    segment with no votes is unknown.
    """
    group_ids = list(segments.group_ids)
    if len(group_ids) != len(frames):
        raise ValueError(
            f"segments cover {len(group_ids)} frames but {len(frames)} were given"
        )
    for rule in rule_table.rules:
        if rule.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {rule.predicate!r}")

    votes_per_segment: dict[int, dict[str, int]] = {}
    bounds: dict[int, tuple[int, int]] = {}
    for i, (gid, (pose, hands, objects)) in enumerate(zip(group_ids, frames)):
        lo, hi = bounds.get(gid, (i, i))
        bounds[gid] = (min(lo, i), max(hi, i))
        ctx = frame_context(pose, hands, objects, cfg)
        tally = votes_per_segment.setdefault(gid, {})
        for rule in rule_table.rules:
            fired = PREDICATES[rule.predicate](ctx, rule.params)
            if fired is None:
                continue
            _, side = fired
            label = rule.label
            if rule.with_side and side is not None:
                label = f"{rule.label}_{side}"
            tally[label] = tally.get(label, 0) + 1

    out: list[EpisodeLabel] = []
    for gid in sorted(bounds):
        lo, hi = bounds[gid]
        tally = votes_per_segment.get(gid, {})
        notes: list[str] = []
        if not tally:
            label = "unknown"
        else:
            ranked = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))
            if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
                tied = [k for k, v in ranked if v == ranked[0][1]]
                label = "unknown"
                notes.append(f"ambiguous: {' vs '.join(sorted(tied))}")
            else:
                label = ranked[0][0]
        out.append(
            EpisodeLabel(segment=gid, start=lo, end=hi + 1, label=label, votes=dict(sorted(tally.items())), notes=notes)
        )
    return out


# --------------------------------------------------------------------------
# serialization helpers (JSON-friendly dicts)


def verdict_to_dict(v: RuleVerdict) -> dict:
    return {
        "frame": v.frame_index,
        "rules": [
            {"rule": r.rule, "passed": r.passed, "value": r.value, "detail": r.detail}
            for r in v.rule_results
        ],
        "safe_driving": v.safe_driving,
        "strict_safe_driving": v.strict_safe_driving,
        "stabilized_safe_driving": v.stabilized_safe_driving,
        "associations": dict(sorted(v.associations.items())),
        "relabels": v.relabels,
        "notes": v.notes,
    }


def record_to_dict(r: TrainingRecord) -> dict:
    return {
        "frame": r.frame_index,
        "kind": r.kind,
        "payload": r.payload,
        "provenance": r.provenance,
    }
