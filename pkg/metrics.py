"""Pedestrian detection evaluation: matching, log-average miss rate and AP.

Curves are built from a sweep over the distinct detection scores, so results
depend only on score rank and never on the order detections or images are
listed in.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from assignment import GroundTruthEntry
from config import EVAL_CONFIG, VISIBILITY_SUBSETS
from geometry import BOX_SELECTORS, area, boxes_to_array, iou_matrix
from suppression import Detection, rank

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    match_iou: float = EVAL_CONFIG["match_iou"]
    box_selector: str = "full"
    fppi_points: int = EVAL_CONFIG["fppi_points"]
    fppi_range: Tuple[float, float] = EVAL_CONFIG["fppi_range"]
    min_height: float = EVAL_CONFIG["min_height"]
    visibility_band: Optional[Tuple[float, float]] = None  # [lo, hi)
    mr_floor: float = EVAL_CONFIG["mr_floor"]

    def __post_init__(self):
        if not 0.0 <= self.match_iou <= 1.0:
            raise ValueError(f"match_iou must be in [0, 1], got {self.match_iou}")
        if self.box_selector not in BOX_SELECTORS:
            raise ValueError(f"box_selector must be one of {BOX_SELECTORS}, got '{self.box_selector}'")
        lo, hi = self.fppi_range
        if not (0 < lo < hi):
            raise ValueError(f"fppi_range must satisfy 0 < lo < hi, got {self.fppi_range}")
        if self.fppi_points < 2:
            raise ValueError(f"fppi_points must be at least 2, got {self.fppi_points}")
        if self.visibility_band is not None and not self.visibility_band[0] < self.visibility_band[1]:
            raise ValueError(f"visibility_band must satisfy lo < hi, got {self.visibility_band}")

    @classmethod
    def for_subset(cls, name: str, **overrides) -> "EvalConfig":
        """Config for a named visibility subset (reasonable, heavy, partial, bare, all)."""
        try:
            lo, hi, min_height = VISIBILITY_SUBSETS[name]
        except KeyError:
            raise ValueError(
                f"Unknown subset '{name}'. Choose from: {', '.join(VISIBILITY_SUBSETS)}"
            ) from None
        band = None if lo is None else (lo, hi)
        params = {"visibility_band": band, "min_height": min_height}
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return {
            "match_iou": self.match_iou,
            "box_selector": self.box_selector,
            "fppi_points": self.fppi_points,
            "fppi_range": list(self.fppi_range),
            "min_height": self.min_height,
            "visibility_band": None if self.visibility_band is None else list(self.visibility_band),
            "mr_floor": self.mr_floor,
        }


class MatchLabel(Enum):
    TP = "tp"
    FP = "fp"
    IGNORED = "ignored"


@dataclass(frozen=True)
class MatchResult:
    detection: Detection
    label: MatchLabel
    gt_id: Optional[Hashable] = None


@dataclass(frozen=True)
class EvalCounts:
    num_gt: int
    num_det: int
    num_tp: int
    num_fp: int


@dataclass
class EvalReport:
    """MR, AP and recall with the curves they were read from."""
    mr: float
    mr_raw: float
    ap: float
    recall: float
    pr_curve: List[Tuple[float, float]]
    fppi_curve: List[Tuple[float, float]]
    counts: EvalCounts
    num_images: int
    config: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "mr": self.mr,
            "mr_raw": self.mr_raw,
            "ap": self.ap,
            "recall": self.recall,
            "num_gt": self.counts.num_gt,
            "num_det": self.counts.num_det,
            "num_tp": self.counts.num_tp,
            "num_fp": self.counts.num_fp,
            "num_images": self.num_images,
        }


def visibility(gt: GroundTruthEntry) -> float:
    """Area(visible) / Area(full), clamped to [0, 1]."""
    full_area = area(gt.pair.full)
    if full_area <= 0:
        raise ValueError(f"Ground truth {gt.id!r} has a degenerate full box")
    return min(1.0, max(0.0, area(gt.pair.visible) / full_area))


def _is_ignored(gt: GroundTruthEntry, cfg: EvalConfig) -> bool:
    if gt.ignore:
        return True
    if cfg.box_selector == "visible" and gt.visible_missing:
        return True
    if gt.pair.full.height < cfg.min_height:
        return True
    if cfg.visibility_band is not None:
        if gt.visible_missing or gt.pair.full.is_degenerate:
            return True
        lo, hi = cfg.visibility_band
        vis = visibility(gt)
        if not lo <= vis < hi:
            return True
    return False


def _best_is_ignored(row: np.ndarray, ignored: np.ndarray, match_iou: float) -> bool:
    best_ignored = row[ignored].max()
    best_other = row[~ignored].max() if (~ignored).any() else 0.0
    return best_ignored >= match_iou and best_ignored >= best_other


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthEntry],
    cfg: EvalConfig = EvalConfig(),
) -> List[MatchResult]:
    """Greedy score-ordered matching of one image's detections to its ground truths.

    Each detection takes the unmatched non-ignored gt with the highest IoU
    at or above match_iou. Otherwise it is ignored when its best overlap among
    all gts, matched ones included, is with an ignored gt at or above
    match_iou, else it is a false positive. Ties go to the ignored gt.
    """
    ranked = rank(dets)
    if not ranked:
        return []

    ignored = np.array([_is_ignored(g, cfg) for g in gts], dtype=bool)
    det_arr = boxes_to_array([d.pair.select(cfg.box_selector) for d in ranked])
    gt_arr = boxes_to_array([g.pair.select(cfg.box_selector) for g in gts])
    overlaps = iou_matrix(det_arr, gt_arr)
    matched = np.zeros(len(gts), dtype=bool)

    results = []
    for i, det in enumerate(ranked):
        row = overlaps[i]
        open_gts = ~ignored & ~matched & (row >= cfg.match_iou)
        if open_gts.any():
            j = int(np.argmax(np.where(open_gts, row, -1.0)))
            matched[j] = True
            results.append(MatchResult(det, MatchLabel.TP, gts[j].id))
        elif ignored.any() and _best_is_ignored(row, ignored, cfg.match_iou):
            results.append(MatchResult(det, MatchLabel.IGNORED))
        else:
            results.append(MatchResult(det, MatchLabel.FP))
    return results


def _num_gt(gts_by_image: Mapping[Hashable, Sequence[GroundTruthEntry]], cfg: EvalConfig) -> int:
    return sum(1 for gts in gts_by_image.values() for g in gts if not _is_ignored(g, cfg))


def _match_all(
    dets_by_image: Mapping[Hashable, Sequence[Detection]],
    gts_by_image: Mapping[Hashable, Sequence[GroundTruthEntry]],
    cfg: EvalConfig,
    workers: int = 1,
) -> List[List[MatchResult]]:
    unknown = sorted(str(k) for k in dets_by_image if k not in gts_by_image)
    if unknown:
        raise ValueError(f"Detections for images without ground truth: {', '.join(unknown)}")

    image_ids = sorted(gts_by_image, key=str)

    def run(image_id):
        return match_detections(dets_by_image.get(image_id, []), gts_by_image[image_id], cfg)

    if workers > 1 and len(image_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, image_ids))
    return [run(image_id) for image_id in image_ids]


@dataclass
class _Sweep:
    """Cumulative TP/FP at each distinct score threshold, high to low."""
    tp: np.ndarray
    fp: np.ndarray
    num_gt: int
    num_images: int


def _sweep(
    dets_by_image: Mapping[Hashable, Sequence[Detection]],
    gts_by_image: Mapping[Hashable, Sequence[GroundTruthEntry]],
    cfg: EvalConfig,
    workers: int = 1,
) -> _Sweep:
    num_gt = _num_gt(gts_by_image, cfg)
    if num_gt == 0:
        raise ValueError("No non-ignored ground truths; miss rate and AP are undefined")

    matches = _match_all(dets_by_image, gts_by_image, cfg, workers)
    scored = [
        (m.detection.score, m.label is MatchLabel.TP)
        for per_image in matches
        for m in per_image
        if m.label is not MatchLabel.IGNORED
    ]
    if not scored:
        empty = np.zeros(0)
        return _Sweep(tp=empty, fp=empty, num_gt=num_gt, num_images=len(gts_by_image))

    scores = np.array([s for s, _ in scored])
    is_tp = np.array([t for _, t in scored], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    scores, is_tp = scores[order], is_tp[order]
    tp = np.cumsum(is_tp).astype(np.float64)
    fp = np.cumsum(~is_tp).astype(np.float64)
    # keep the last entry of each run of equal scores
    last = np.append(scores[1:] != scores[:-1], True)
    return _Sweep(tp=tp[last], fp=fp[last], num_gt=num_gt, num_images=len(gts_by_image))


def _log_average(miss: np.ndarray, floor: float) -> Tuple[float, float]:
    clamped = float(np.exp(np.mean(np.log(np.maximum(miss, floor)))))
    if np.any(miss <= 0):
        raw = 0.0
    else:
        raw = float(np.exp(np.mean(np.log(miss))))
    return clamped, raw


def _mr_from_sweep(sweep: _Sweep, cfg: EvalConfig) -> Tuple[float, float, List[Tuple[float, float]]]:
    fppi = sweep.fp / sweep.num_images
    miss = 1.0 - sweep.tp / sweep.num_gt
    curve = [(float(x), float(y)) for x, y in zip(fppi, miss)]

    lo, hi = cfg.fppi_range
    refs = np.logspace(math.log10(lo), math.log10(hi), cfg.fppi_points)
    if not curve:
        sampled = np.ones(len(refs))
    else:
        sampled = np.empty(len(refs))
        for k, ref in enumerate(refs):
            # fppi is non-decreasing; the last sample not beyond ref has the lowest miss rate
            idx = np.searchsorted(fppi, ref, side="right") - 1
            # no sample at or below ref: extend the curve from its smallest fppi
            sampled[k] = miss[idx] if idx >= 0 else miss[0]
    mr, mr_raw = _log_average(sampled, cfg.mr_floor)
    return mr, mr_raw, curve


def log_average_miss_rate(
    dets_by_image: Mapping[Hashable, Sequence[Detection]],
    gts_by_image: Mapping[Hashable, Sequence[GroundTruthEntry]],
    cfg: EvalConfig = EvalConfig(),
    workers: int = 1,
) -> Tuple[float, List[Tuple[float, float]]]:
    """Caltech log-average miss rate over log-spaced FPPI references.

    Returns the clamped MR and the (fppi, miss_rate) curve. The raw MR is on
    the full report from evaluate().
    """
    sweep = _sweep(dets_by_image, gts_by_image, cfg, workers)
    mr, _, curve = _mr_from_sweep(sweep, cfg)
    return mr, curve


def _ap_from_sweep(sweep: _Sweep) -> Tuple[float, List[Tuple[float, float]], float]:
    if sweep.tp.size == 0:
        return 0.0, [], 0.0
    rec = sweep.tp / sweep.num_gt
    prec = sweep.tp / (sweep.tp + sweep.fp)
    curve = [(float(r), float(p)) for r, p in zip(rec, prec)]

    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    # precision envelope
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    ap = float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    return ap, curve, float(rec[-1])


def average_precision(
    dets_by_image: Mapping[Hashable, Sequence[Detection]],
    gts_by_image: Mapping[Hashable, Sequence[GroundTruthEntry]],
    cfg: EvalConfig = EvalConfig(),
    workers: int = 1,
) -> Tuple[float, List[Tuple[float, float]], float]:
    """All-point interpolated AP, the (recall, precision) curve and final recall."""
    return _ap_from_sweep(_sweep(dets_by_image, gts_by_image, cfg, workers))


def evaluate(
    dets_by_image: Mapping[Hashable, Sequence[Detection]],
    gts_by_image: Mapping[Hashable, Sequence[GroundTruthEntry]],
    cfg: EvalConfig = EvalConfig(),
    workers: int = 1,
) -> EvalReport:
    """Full report: MR (clamped and raw), AP, recall, curves and counts."""
    sweep = _sweep(dets_by_image, gts_by_image, cfg, workers)
    mr, mr_raw, fppi_curve = _mr_from_sweep(sweep, cfg)
    ap, pr_curve, recall = _ap_from_sweep(sweep)
    num_tp = int(sweep.tp[-1]) if sweep.tp.size else 0
    num_fp = int(sweep.fp[-1]) if sweep.fp.size else 0
    counts = EvalCounts(num_gt=sweep.num_gt, num_det=num_tp + num_fp, num_tp=num_tp, num_fp=num_fp)
    logger.debug("Evaluated %d images: %s", sweep.num_images, counts)
    return EvalReport(
        mr=mr,
        mr_raw=mr_raw,
        ap=ap,
        recall=recall,
        pr_curve=pr_curve,
        fppi_curve=fppi_curve,
        counts=counts,
        num_images=sweep.num_images,
        config=cfg,
    )


def write_curve(path: Path, points: Sequence[Tuple[float, float]], header: Optional[str] = None) -> None:
    """Write one 'x y' pair per line for external plotting."""
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write(header)
        for x, y in points:
            f.write(f"{x:.9g} {y:.9g}\n")
