"""Paired ground-truth assignment for anchors and proposals.

Anchor rule: anchor A is positive for Q=(F, V) when
IoU(A, F) >= alpha1 and IoF(A, V) >= beta1.
Proposal rule: pair X=(Pf, Pv) is positive for Q when
IoU(Pf, F) >= alpha2 and IoU(Pv, V) >= beta2.
Negatives follow the standard RPN band on full-box IoU.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Hashable, List, Optional, Sequence, Tuple

import numpy as np

from config import ANCHOR_CONFIG, ASSIGN_CONFIG
from geometry import BBox, PairedBox, area, boxes_to_array, iof_matrix, iou_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssignmentConfig:
    alpha1: float = ASSIGN_CONFIG["alpha1"]
    beta1: float = ASSIGN_CONFIG["beta1"]
    alpha2: float = ASSIGN_CONFIG["alpha2"]
    beta2: float = ASSIGN_CONFIG["beta2"]
    negative_iou_max: float = ASSIGN_CONFIG["negative_iou_max"]
    best_match_fallback: bool = ASSIGN_CONFIG["best_match_fallback"]

    def __post_init__(self):
        for name in ("alpha1", "beta1", "alpha2", "beta2", "negative_iou_max"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if not self.negative_iou_max < self.alpha1:
            raise ValueError(
                f"negative_iou_max ({self.negative_iou_max}) must be below alpha1 ({self.alpha1})"
            )


@dataclass(frozen=True)
class GroundTruthEntry:
    """Annotated pair. visible_missing marks entries read without a visible box."""
    pair: PairedBox
    ignore: bool = False
    id: Hashable = 0
    tag: str = "person"
    visible_missing: bool = False

    def __post_init__(self):
        if area(self.pair.visible) > area(self.pair.full):
            logger.warning("Ground truth %r: visible box larger than full box", self.id)


@dataclass(frozen=True)
class AnchorGridSpec:
    strides: Tuple[float, ...]
    scales: Tuple[float, ...]
    image_size: Tuple[int, int]  # (width, height)
    aspect_ratios: Tuple[float, ...] = ANCHOR_CONFIG["aspect_ratios"]
    scale_by_stride: bool = False  # anchor side = scale * stride

    def __post_init__(self):
        for name in ("strides", "scales", "aspect_ratios"):
            values = getattr(self, name)
            if len(values) == 0:
                raise ValueError(f"Anchor grid needs at least one entry in {name}")
            if any(not (v > 0 and math.isfinite(v)) for v in values):
                raise ValueError(f"All {name} must be positive, got {values}")
        if any(s <= 0 for s in self.image_size):
            raise ValueError(f"Image size must be positive, got {self.image_size}")


class LabelKind(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORE = "ignore"


@dataclass(frozen=True)
class Label:
    kind: LabelKind
    gt_id: Optional[Hashable] = None


@dataclass
class AssignmentResult:
    """One label per candidate, aligned with the candidate list."""
    labels: List[Label]

    def positives(self) -> List[int]:
        return [i for i, lab in enumerate(self.labels) if lab.kind is LabelKind.POSITIVE]

    def counts(self) -> dict:
        out = {kind.value: 0 for kind in LabelKind}
        for lab in self.labels:
            out[lab.kind.value] += 1
        return out


def generate_anchors(spec: AnchorGridSpec) -> List[BBox]:
    """Dense anchors centered on each stride lattice.

    Order: stride, then row-major lattice position, then aspect ratio, then
    scale. Width / height equals the aspect ratio and area equals side^2.
    """
    width, height = spec.image_size
    anchors = []
    for stride in spec.strides:
        nx = math.ceil(width / stride)
        ny = math.ceil(height / stride)
        for gy in range(ny):
            cy = (gy + 0.5) * stride
            for gx in range(nx):
                cx = (gx + 0.5) * stride
                for ratio in spec.aspect_ratios:
                    root = math.sqrt(ratio)
                    for scale in spec.scales:
                        side = scale * stride if spec.scale_by_stride else scale
                        w = side * root
                        h = side / root
                        anchors.append(BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    return anchors


def _sorted_gts(gts: Sequence[GroundTruthEntry]) -> List[GroundTruthEntry]:
    ids = [g.id for g in gts]
    if len(set(ids)) != len(ids):
        raise ValueError("Ground-truth ids must be unique")
    try:
        return sorted(gts, key=lambda g: g.id)
    except TypeError:
        raise ValueError("Ground-truth ids must share one orderable type") from None


def _label(
    n: int,
    gts: List[GroundTruthEntry],
    full_iou: np.ndarray,
    qualify: np.ndarray,
    cfg: AssignmentConfig,
) -> List[Label]:
    if not gts:
        return [Label(LabelKind.NEGATIVE)] * n

    ignored = np.array([g.ignore for g in gts], dtype=bool)
    # highest full IoU among qualifying gts; argmax picks the lowest id on ties
    masked = np.where(qualify, full_iou, -1.0)
    best = masked.argmax(axis=1)
    has_match = qualify.any(axis=1)
    max_iou = full_iou.max(axis=1)

    labels = []
    for i in range(n):
        if has_match[i]:
            g = best[i]
            if ignored[g]:
                labels.append(Label(LabelKind.IGNORE))
            else:
                labels.append(Label(LabelKind.POSITIVE, gts[g].id))
        elif max_iou[i] < cfg.negative_iou_max:
            labels.append(Label(LabelKind.NEGATIVE))
        else:
            labels.append(Label(LabelKind.IGNORE))
    return labels


def assign_anchors(
    anchors: Sequence[BBox],
    gts: Sequence[GroundTruthEntry],
    cfg: AssignmentConfig = AssignmentConfig(),
) -> AssignmentResult:
    """Label anchors with the paired IoU/IoF rule.

    With best_match_fallback, every non-ignored gt claims the anchors with its
    highest full-box IoU (when above 0) that are not already positive.
    """
    gts = _sorted_gts(gts)
    n = len(anchors)
    if n == 0:
        return AssignmentResult(labels=[])
    anchor_arr = boxes_to_array(anchors)
    full_arr = boxes_to_array([g.pair.full for g in gts])
    vis_arr = boxes_to_array([g.pair.visible for g in gts])

    full_iou = iou_matrix(anchor_arr, full_arr)
    vis_iof = iof_matrix(anchor_arr, vis_arr)
    usable = np.array([not g.visible_missing for g in gts], dtype=bool)
    qualify = (full_iou >= cfg.alpha1) & (vis_iof >= cfg.beta1) & usable[None, :]

    labels = _label(n, gts, full_iou, qualify, cfg)

    if cfg.best_match_fallback and gts:
        for j, g in enumerate(gts):
            if g.ignore or g.visible_missing:
                continue
            column = full_iou[:, j]
            top = column.max()
            if top <= 0:
                continue
            for i in np.nonzero(column == top)[0]:
                if labels[i].kind is not LabelKind.POSITIVE:
                    labels[i] = Label(LabelKind.POSITIVE, g.id)

    result = AssignmentResult(labels=labels)
    logger.debug("Anchor assignment: %s", result.counts())
    return result


def assign_proposals(
    proposals: Sequence[PairedBox],
    gts: Sequence[GroundTruthEntry],
    cfg: AssignmentConfig = AssignmentConfig(),
) -> AssignmentResult:
    """Label proposal pairs with the paired IoU/IoU rule, ranked by full-box IoU."""
    gts = _sorted_gts(gts)
    n = len(proposals)
    if n == 0:
        return AssignmentResult(labels=[])
    pf = boxes_to_array([p.full for p in proposals])
    pv = boxes_to_array([p.visible for p in proposals])
    full_arr = boxes_to_array([g.pair.full for g in gts])
    vis_arr = boxes_to_array([g.pair.visible for g in gts])

    full_iou = iou_matrix(pf, full_arr)
    vis_iou = iou_matrix(pv, vis_arr)
    usable = np.array([not g.visible_missing for g in gts], dtype=bool)
    qualify = (full_iou >= cfg.alpha2) & (vis_iou >= cfg.beta2) & usable[None, :]

    result = AssignmentResult(labels=_label(n, gts, full_iou, qualify, cfg))
    logger.debug("Proposal assignment: %s", result.counts())
    return result
