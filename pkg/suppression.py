"""Non-maximum suppression family over paired detections.

Greedy full-box NMS, R2NMS (greedy NMS on visible boxes, reporting the full
pairs), soft-NMS and density-driven adaptive NMS. All greedy variants use the
strict comparison overlap > threshold.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import METHOD_ALIASES, NMS_CONFIG
from geometry import PairedBox, boxes_to_array, iou_row

logger = logging.getLogger(__name__)

METHODS = ("greedy-full", "greedy-visible", "soft-linear", "soft-gaussian", "adaptive")


@dataclass(frozen=True)
class Detection:
    """A paired detection with its confidence score."""
    pair: PairedBox
    score: float
    id: Hashable
    extra: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"Detection {self.id!r} has non-finite score {self.score}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Detection {self.id!r} score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class NmsConfig:
    """Suppression settings. threshold is Omega."""
    threshold: float = NMS_CONFIG["threshold"]
    method: str = NMS_CONFIG["method"]
    soft_sigma: float = NMS_CONFIG["soft_sigma"]
    score_floor: float = NMS_CONFIG["score_floor"]
    shuffle_seed: Optional[int] = None  # randomize the order of tied scores

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"NMS threshold must be in [0, 1], got {self.threshold}")
        if self.method not in METHODS:
            raise ValueError(f"Unknown NMS method '{self.method}', expected one of {METHODS}")
        if not self.soft_sigma > 0:
            raise ValueError(f"soft_sigma must be positive, got {self.soft_sigma}")
        if not 0.0 <= self.score_floor <= 1.0:
            raise ValueError(f"score_floor must be in [0, 1], got {self.score_floor}")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "threshold": self.threshold,
            "soft_sigma": self.soft_sigma,
            "score_floor": self.score_floor,
            "shuffle_seed": self.shuffle_seed,
        }


@dataclass
class SuppressionResult:
    """Kept detections in rank order plus (suppressed id, suppressor id) pairs."""
    kept: List[Detection]
    suppressed: List[Tuple[Hashable, Hashable]]

    def kept_ids(self) -> List[Hashable]:
        return [d.id for d in self.kept]


def canonical_method(name: str) -> str:
    """Map a user-facing method name to its canonical form."""
    try:
        return METHOD_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(
            f"Unknown NMS method '{name}'. Choose from: {', '.join(sorted(METHOD_ALIASES))}"
        ) from None


def rank(dets: Sequence[Detection], shuffle_seed: Optional[int] = None) -> List[Detection]:
    """Order by descending score.

    Ties break by ascending id, or in a seeded random order when shuffle_seed is set.
    """
    ids = [d.id for d in dets]
    if len(set(ids)) != len(ids):
        raise ValueError("Detection ids must be unique within an image")
    for d in dets:
        if math.isnan(d.score):
            raise ValueError(f"Detection {d.id!r} has NaN score")

    if shuffle_seed is None:
        return sorted(dets, key=lambda d: (-d.score, d.id))

    rng = np.random.default_rng(shuffle_seed)
    shuffled = [dets[i] for i in rng.permutation(len(dets))]
    # sorted() is stable, so tied scores keep their shuffled order
    return sorted(shuffled, key=lambda d: -d.score)


def _greedy(ranked: List[Detection], boxes: np.ndarray, thresholds: np.ndarray) -> SuppressionResult:
    n = len(ranked)
    removed = np.zeros(n, dtype=bool)
    suppressed = []
    for i in range(n):
        if removed[i]:
            continue
        # the last index scans an empty tail
        tail = np.arange(i + 1, n)
        if tail.size == 0:
            continue
        tail = tail[~removed[tail]]
        if tail.size == 0:
            continue
        overlap = iou_row(boxes[i], boxes[tail])
        hits = tail[overlap > thresholds[i]]
        removed[hits] = True
        suppressed.extend((ranked[j].id, ranked[i].id) for j in hits)

    kept = [d for d, r in zip(ranked, removed) if not r]
    return SuppressionResult(kept=kept, suppressed=suppressed)


def greedy_nms(dets: Sequence[Detection], cfg: NmsConfig, box_selector: str = "full") -> SuppressionResult:
    """Classical greedy NMS on the selected box of each pair."""
    ranked = rank(dets, cfg.shuffle_seed)
    if not ranked:
        return SuppressionResult(kept=[], suppressed=[])
    boxes = boxes_to_array([d.pair.select(box_selector) for d in ranked])
    thresholds = np.full(len(ranked), cfg.threshold)
    result = _greedy(ranked, boxes, thresholds)
    logger.debug(
        "greedy-%s: kept %d of %d at %.2f", box_selector, len(result.kept), len(ranked), cfg.threshold
    )
    return result


def r2_nms(dets: Sequence[Detection], cfg: NmsConfig) -> SuppressionResult:
    """R2NMS: overlap measured on visible boxes, kept detections retain both boxes."""
    return greedy_nms(dets, cfg, box_selector="visible")


def adaptive_nms(
    dets: Sequence[Detection],
    densities: Mapping[Hashable, float],
    cfg: NmsConfig,
) -> SuppressionResult:
    """Greedy full-box NMS where suppressor i uses max(threshold, density_i)."""
    for d in dets:
        if d.id not in densities:
            raise ValueError(f"Missing density for detection {d.id!r}")
        dens = densities[d.id]
        if not 0.0 <= dens <= 1.0:
            raise ValueError(f"Density {dens} for detection {d.id!r} outside [0, 1]")

    ranked = rank(dets, cfg.shuffle_seed)
    if not ranked:
        return SuppressionResult(kept=[], suppressed=[])
    boxes = boxes_to_array([d.pair.full for d in ranked])
    thresholds = np.array([max(cfg.threshold, densities[d.id]) for d in ranked])
    return _greedy(ranked, boxes, thresholds)


def _soft(dets: Sequence[Detection], cfg: NmsConfig, gaussian: bool):
    ranked = rank(dets, cfg.shuffle_seed)
    boxes = boxes_to_array([d.pair.full for d in ranked])
    scores = np.array([d.score for d in ranked], dtype=np.float64)
    alive = np.ones(len(ranked), dtype=bool)
    if len(ranked):
        alive &= scores >= cfg.score_floor
    pruned = [(ranked[j].id, None) for j in np.nonzero(~alive)[0]]

    out = []
    while alive.any():
        candidates = np.nonzero(alive)[0]
        # argmax returns the first maximum, i.e. the best-ranked among ties
        i = candidates[np.argmax(scores[candidates])]
        alive[i] = False
        out.append((ranked[i], float(scores[i])))

        rest = np.nonzero(alive)[0]
        if rest.size == 0:
            break
        overlap = iou_row(boxes[i], boxes[rest])
        if gaussian:
            weight = np.exp(-(overlap ** 2) / cfg.soft_sigma)
        else:
            weight = np.where(overlap > cfg.threshold, 1.0 - overlap, 1.0)
        scores[rest] *= weight

        dropped = rest[scores[rest] < cfg.score_floor]
        alive[dropped] = False
        pruned.extend((ranked[j].id, ranked[i].id) for j in dropped)

    return out, pruned


def soft_nms(dets: Sequence[Detection], cfg: NmsConfig) -> List[Tuple[Detection, float]]:
    """Soft-NMS on full boxes.

    Linear decay s <- s * (1 - iou) when iou > threshold; gaussian decay
    s <- s * exp(-iou^2 / sigma). Detections falling below score_floor are
    dropped. Output is sorted by rescored value.
    """
    gaussian = cfg.method == "soft-gaussian"
    out, _ = _soft(dets, cfg, gaussian)
    return out


def suppress(
    dets: Sequence[Detection],
    cfg: NmsConfig,
    densities: Optional[Mapping[Hashable, float]] = None,
) -> SuppressionResult:
    """Run the method named in cfg. Soft variants return rescored detections."""
    if cfg.method == "greedy-full":
        return greedy_nms(dets, cfg, box_selector="full")
    if cfg.method == "greedy-visible":
        return r2_nms(dets, cfg)
    if cfg.method == "adaptive":
        if densities is None:
            raise ValueError("Adaptive NMS needs a density for every detection")
        return adaptive_nms(dets, densities, cfg)

    out, pruned = _soft(dets, cfg, gaussian=cfg.method == "soft-gaussian")
    kept = [replace(d, score=s) for d, s in out]
    return SuppressionResult(kept=kept, suppressed=pruned)
