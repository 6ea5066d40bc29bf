"""Synthetic crowd scenes, the perfect-detector survival check and a noisy paired detector.

Persons are integer-coordinate rectangles. The visible box of a person is the
tight bounding box of the part of its full box not covered by anyone in front
of it, computed on a 1-pixel raster. Scene i of a dataset uses seed + i.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from assignment import GroundTruthEntry
from config import NOISE_CONFIG, ORACLE_THRESHOLDS, SCENE_PRESETS
from geometry import BBox, PairedBox, boxes_to_array, iou, iou_matrix
from suppression import Detection, NmsConfig, suppress

logger = logging.getLogger(__name__)

_SPARSE = SCENE_PRESETS["sparse"]


@dataclass(frozen=True)
class CrowdSceneSpec:
    """Scene layout. depth_order lists person indices front to back."""
    image_size: Tuple[int, int] = _SPARSE["image_size"]
    num_people: int = _SPARSE["num_people"]
    person_size: Tuple[float, float] = _SPARSE["person_size"]  # (mean height, jitter)
    aspect_ratio: float = _SPARSE["aspect_ratio"]
    clusters: int = _SPARSE["clusters"]
    cluster_spread: float = _SPARSE["cluster_spread"]
    row_jitter: float = _SPARSE["row_jitter"]
    min_visible_fraction: float = _SPARSE["min_visible_fraction"]
    depth_order: Optional[Tuple[int, ...]] = None  # None: lower feet line is nearer
    keep_fully_occluded: bool = False
    seed: int = 0

    def __post_init__(self):
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError(f"Image size must be positive, got {self.image_size}")
        if self.num_people < 0:
            raise ValueError(f"num_people must be non-negative, got {self.num_people}")
        if self.clusters < 1:
            raise ValueError(f"clusters must be at least 1, got {self.clusters}")
        mean, jitter = self.person_size
        if mean <= 0 or jitter < 0 or self.aspect_ratio <= 0:
            raise ValueError("Person size and aspect ratio must be positive")
        if mean > h or mean * self.aspect_ratio > w:
            raise ValueError(
                f"Person of height {mean} (width {mean * self.aspect_ratio:.1f}) does not fit a {w}x{h} image"
            )
        if self.cluster_spread < 0 or self.row_jitter < 0:
            raise ValueError("Spreads must be non-negative")
        if not 0.0 <= self.min_visible_fraction <= 1.0:
            raise ValueError(f"min_visible_fraction must be in [0, 1], got {self.min_visible_fraction}")
        if self.depth_order is not None and sorted(self.depth_order) != list(range(self.num_people)):
            raise ValueError("depth_order must be a permutation of person indices")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "CrowdSceneSpec":
        try:
            params = dict(SCENE_PRESETS[name])
        except KeyError:
            raise ValueError(
                f"Unknown scene preset '{name}'. Choose from: {', '.join(SCENE_PRESETS)}"
            ) from None
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["image_size"] = list(self.image_size)
        out["person_size"] = list(self.person_size)
        if self.depth_order is not None:
            out["depth_order"] = list(self.depth_order)
        return out


@dataclass
class CrowdScene:
    gts: List[GroundTruthEntry]
    spec: CrowdSceneSpec
    full_boxes: List[BBox] = field(default_factory=list)  # every placed person, occluded or not

    @property
    def image_id(self) -> str:
        return f"synth_{self.spec.seed:06d}"


@dataclass(frozen=True)
class NoiseModel:
    center_jitter_sigma: float = NOISE_CONFIG["center_jitter_sigma"]
    size_jitter_sigma: float = NOISE_CONFIG["size_jitter_sigma"]
    duplicates_per_gt: float = NOISE_CONFIG["duplicates_per_gt"]
    fp_per_image: float = NOISE_CONFIG["fp_per_image"]
    tp_score_band: Tuple[float, float] = NOISE_CONFIG["tp_score_band"]
    fp_score_band: Tuple[float, float] = NOISE_CONFIG["fp_score_band"]
    seed: int = 0

    def __post_init__(self):
        if self.center_jitter_sigma < 0 or self.size_jitter_sigma < 0:
            raise ValueError("Jitter sigmas must be non-negative")
        if self.duplicates_per_gt < 0 or self.fp_per_image < 0:
            raise ValueError("Duplicate and false-positive rates must be non-negative")
        for name in ("tp_score_band", "fp_score_band"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1, got {(lo, hi)}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tp_score_band"] = list(self.tp_score_band)
        out["fp_score_band"] = list(self.fp_score_band)
        return out


@dataclass(frozen=True)
class OracleSurvival:
    method: str
    threshold: float
    total: int
    kept: int

    @property
    def fraction(self) -> float:
        return self.kept / self.total if self.total else 1.0

    @property
    def missed(self) -> int:
        return self.total - self.kept


def _int_box(b: BBox) -> Tuple[int, int, int, int]:
    coords = tuple(int(round(c)) for c in b.to_list())
    if any(abs(c - v) > 1e-9 for c, v in zip(coords, b.to_list())):
        raise ValueError(f"Raster occlusion needs integer coordinates, got {b}")
    return coords


def compute_visible_regions(
    fulls: Sequence[BBox],
    depth_order: Sequence[int],
) -> List[Tuple[Optional[BBox], int]]:
    """(visible box, unoccluded pixel count) of each person given a front-to-back order.

    The box is None when the full box is completely covered.
    """
    rects = [_int_box(b) for b in fulls]
    visible: List[Tuple[Optional[BBox], int]] = [(None, 0)] * len(rects)
    in_front: List[int] = []
    for p in depth_order:
        x1, y1, x2, y2 = rects[p]
        mask = np.ones((y2 - y1, x2 - x1), dtype=bool)
        for q in in_front:
            qx1, qy1, qx2, qy2 = rects[q]
            ix1, iy1 = max(x1, qx1), max(y1, qy1)
            ix2, iy2 = min(x2, qx2), min(y2, qy2)
            if ix1 < ix2 and iy1 < iy2:
                mask[iy1 - y1:iy2 - y1, ix1 - x1:ix2 - x1] = False
        in_front.append(p)

        if mask.size == 0 or not mask.any():
            continue
        rows, cols = ndimage.find_objects(mask.astype(np.int8))[0]
        box = BBox(x1 + cols.start, y1 + rows.start, x1 + cols.stop, y1 + rows.stop)
        visible[p] = (box, int(mask.sum()))
    return visible


def compute_visible_boxes(
    fulls: Sequence[BBox],
    depth_order: Sequence[int],
) -> List[Optional[BBox]]:
    """Visible box of each person; None marks a completely covered one."""
    return [box for box, _ in compute_visible_regions(fulls, depth_order)]


def _place(spec: CrowdSceneSpec, rng: np.random.Generator) -> List[BBox]:
    img_w, img_h = spec.image_size
    mean_h, jitter_h = spec.person_size
    centers = np.column_stack([
        rng.uniform(0, img_w, spec.clusters),
        rng.uniform(mean_h, img_h, spec.clusters),  # feet line
    ])
    boxes = []
    for _ in range(spec.num_people):
        k = rng.integers(spec.clusters)
        h = int(round(np.clip(mean_h + jitter_h * rng.standard_normal(), 4, img_h)))
        w = int(round(np.clip(h * spec.aspect_ratio, 1, img_w)))
        cx = centers[k, 0] + spec.cluster_spread * rng.standard_normal()
        feet = centers[k, 1] + spec.row_jitter * rng.standard_normal()
        x1 = int(np.clip(round(cx - w / 2), 0, img_w - w))
        y1 = int(np.clip(round(feet - h), 0, img_h - h))
        boxes.append(BBox(x1, y1, x1 + w, y1 + h))
    return boxes


def generate_scene(spec: CrowdSceneSpec) -> CrowdScene:
    """Place persons in clusters and derive visible boxes from depth occlusion."""
    rng = np.random.default_rng(spec.seed)
    fulls = _place(spec, rng)
    if spec.depth_order is not None:
        order = list(spec.depth_order)
    else:
        # nearer persons stand lower in the image; ties by index
        order = sorted(range(len(fulls)), key=lambda i: (-fulls[i].y2, i))

    regions = compute_visible_regions(fulls, order)
    gts = []
    dropped = 0
    for i, (full, (vis, pixels)) in enumerate(zip(fulls, regions)):
        # fraction of the full box left uncovered, not the area of its tight box
        fraction = pixels / (full.width * full.height)
        hidden = vis is None or fraction < spec.min_visible_fraction
        if hidden and not spec.keep_fully_occluded:
            dropped += 1
            continue
        if vis is None:
            vis = BBox(full.x1, full.y1, full.x1, full.y1)
        gts.append(GroundTruthEntry(pair=PairedBox(full, vis), ignore=hidden, id=i))
    if dropped:
        logger.debug("Scene %d: dropped %d occluded persons", spec.seed, dropped)
    return CrowdScene(gts=gts, spec=spec, full_boxes=fulls)


def generate_dataset(spec: CrowdSceneSpec, count: int, workers: int = 1) -> List[CrowdScene]:
    """count scenes; scene i uses seed spec.seed + i."""
    specs = [CrowdSceneSpec(**{**asdict(spec), "seed": spec.seed + i}) for i in range(count)]
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(generate_scene, specs))
    return [generate_scene(s) for s in specs]


def crowding_stats(scene: CrowdScene) -> Dict[str, float]:
    """Overlap statistics over ground-truth pairs of one scene.

    separable_fraction is, among pairs with full IoU >= 0.5, the share whose
    visible IoU is at most 0.3.
    """
    gts = [g for g in scene.gts if not g.ignore]
    overlapping = heavy = separable = 0
    for a, b in combinations(gts, 2):
        full_iou = iou(a.pair.full, b.pair.full)
        if full_iou <= 0:
            continue
        overlapping += 1
        if full_iou >= 0.5:
            heavy += 1
            if iou(a.pair.visible, b.pair.visible) <= 0.3:
                separable += 1
    return {
        "overlapping_pairs": overlapping,
        "heavy_pairs": heavy,
        "separable_pairs": separable,
        "separable_fraction": separable / heavy if heavy else 0.0,
    }


def gt_densities(gts: Sequence[GroundTruthEntry]) -> Dict[Hashable, float]:
    """Per-gt density: max full-box IoU with any other gt."""
    if not gts:
        return {}
    arr = boxes_to_array([g.pair.full for g in gts])
    overlaps = iou_matrix(arr, arr)
    np.fill_diagonal(overlaps, 0.0)
    return {g.id: float(overlaps[i].max()) if len(gts) > 1 else 0.0 for i, g in enumerate(gts)}


def _oracle_image(
    gts: Sequence[GroundTruthEntry],
    cfg: NmsConfig,
) -> Tuple[int, int]:
    usable = [g for g in gts if not g.ignore]
    if cfg.method == "greedy-visible":
        usable = [g for g in usable if not g.visible_missing]
    dets = [Detection(pair=g.pair, score=1.0, id=k) for k, g in enumerate(usable)]
    densities = None
    if cfg.method == "adaptive":
        by_gt = gt_densities(usable)
        densities = {k: by_gt[g.id] for k, g in enumerate(usable)}
    result = suppress(dets, cfg, densities)
    return len(usable), len(result.kept)


def oracle_nms_recall(
    gts_per_image: Sequence[Sequence[GroundTruthEntry]],
    method: str,
    threshold: float,
    seed: int = 0,
    workers: int = 1,
) -> OracleSurvival:
    """Perfect-detector check: every gt becomes a score-1.0 detection with exact boxes.

    Tied scores are shuffled with seed + image index before suppression, so
    survivors can vary slightly with the seed.
    """
    def run(indexed):
        k, gts = indexed
        cfg = NmsConfig(threshold=threshold, method=method, shuffle_seed=seed + k)
        return _oracle_image(gts, cfg)

    items = list(enumerate(gts_per_image))
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(run, items))
    else:
        counts = [run(item) for item in items]
    total = sum(t for t, _ in counts)
    kept = sum(k for _, k in counts)
    logger.debug("Oracle %s@%.2f: %d of %d survive", method, threshold, kept, total)
    return OracleSurvival(method=method, threshold=threshold, total=total, kept=kept)


def oracle_survival_table(
    gts_per_image: Sequence[Sequence[GroundTruthEntry]],
    methods: Sequence[str] = ("greedy-full", "greedy-visible"),
    thresholds: Sequence[float] = ORACLE_THRESHOLDS,
    seed: int = 0,
    workers: int = 1,
) -> List[OracleSurvival]:
    """Survival for each (method, threshold) pair, thresholds varying fastest."""
    return [
        oracle_nms_recall(gts_per_image, method, threshold, seed, workers)
        for method in methods
        for threshold in thresholds
    ]


def _band_score(rng: np.random.Generator, band: Tuple[float, float]) -> float:
    lo, hi = band
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _rate_count(rng: np.random.Generator, mean: float) -> int:
    """floor(mean) plus one more with probability frac(mean)."""
    base = int(math.floor(mean))
    frac = mean - base
    return base + int(frac > 0 and rng.random() < frac)


def _clip(b: BBox, width: float, height: float) -> BBox:
    x1 = min(max(b.x1, 0.0), width)
    y1 = min(max(b.y1, 0.0), height)
    x2 = min(max(b.x2, 0.0), width)
    y2 = min(max(b.y2, 0.0), height)
    return BBox(x1, y1, x2, y2)


def _jitter(pair: PairedBox, rng: np.random.Generator, noise: NoiseModel, image_size) -> PairedBox:
    """Perturb both boxes with the same normalized draws, each in its own frame.

    Offsets and scale factors are relative to the size of the box they move, so a
    narrow visible strip is displaced by a fraction of its own width rather than
    the full box's. Both boxes of a copy share the draws and move the same way.
    """
    zx, zy, zw, zh = rng.standard_normal(4)
    sx = max(0.1, 1.0 + noise.size_jitter_sigma * zw)
    sy = max(0.1, 1.0 + noise.size_jitter_sigma * zh)

    def move(b: BBox) -> BBox:
        cx, cy = b.center
        cx += noise.center_jitter_sigma * b.width * zx
        cy += noise.center_jitter_sigma * b.height * zy
        half_w, half_h = b.width * sx / 2, b.height * sy / 2
        return BBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h)

    if noise.center_jitter_sigma == 0 and noise.size_jitter_sigma == 0:
        return pair
    w, h = image_size
    return PairedBox(_clip(move(pair.full), w, h), _clip(move(pair.visible), w, h))


def _random_pair(rng: np.random.Generator, spec: CrowdSceneSpec) -> PairedBox:
    img_w, img_h = spec.image_size
    mean_h, jitter_h = spec.person_size
    h = float(np.clip(mean_h + jitter_h * rng.standard_normal(), 4, img_h))
    w = min(h * spec.aspect_ratio, img_w)
    x1 = rng.uniform(0, img_w - w)
    y1 = rng.uniform(0, img_h - h)
    full = BBox(x1, y1, x1 + w, y1 + h)
    # visible part: a random sub-box covering at least a third of each side
    vw = w * rng.uniform(1 / 3, 1.0)
    vh = h * rng.uniform(1 / 3, 1.0)
    vx = x1 + rng.uniform(0, w - vw)
    vy = y1 + rng.uniform(0, h - vh)
    return PairedBox(full, BBox(vx, vy, vx + vw, vy + vh))


def random_detections(n: int, seed: int = 0, spec: CrowdSceneSpec = CrowdSceneSpec()) -> List[Detection]:
    """n unrelated paired detections with uniform scores, for timing runs."""
    rng = np.random.default_rng(seed)
    return [
        Detection(pair=_random_pair(rng, spec), score=float(rng.random()), id=i)
        for i in range(n)
    ]


def simulate_detector(scene: CrowdScene, noise: NoiseModel) -> List[Detection]:
    """Paired detections for a scene: jittered copies of each gt plus background FPs."""
    rng = np.random.default_rng(noise.seed)
    dets = []
    next_id = 0
    for g in scene.gts:
        if g.ignore:
            continue
        copies = 1 + _rate_count(rng, noise.duplicates_per_gt)
        for _ in range(copies):
            pair = _jitter(g.pair, rng, noise, scene.spec.image_size)
            dets.append(Detection(pair=pair, score=_band_score(rng, noise.tp_score_band), id=next_id))
            next_id += 1

    for _ in range(_rate_count(rng, noise.fp_per_image)):
        pair = _random_pair(rng, scene.spec)
        dets.append(Detection(pair=pair, score=_band_score(rng, noise.fp_score_band), id=next_id))
        next_id += 1
    return dets
