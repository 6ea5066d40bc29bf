"""Reading and writing ODGT ground truths and line-delimited predictions.

ODGT boxes are (x, y, w, h) and convert to corners with x2 = x + w, no +1.
Both formats hold one JSON object per line; lines starting with '#' carry the
config echo header and are skipped on read.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

from assignment import GroundTruthEntry
from config import FLOAT_DIGITS, HEADER_PREFIX
from geometry import BBox, PairedBox
from suppression import Detection

logger = logging.getLogger(__name__)

_DT_BOX_KEYS = ("fbox", "vbox", "score")


class IngestError(ValueError):
    """A parse failure with its file location."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        self.message = message
        super().__init__(f"{self.path}:{line}: {message}")


@dataclass
class ImageRecord:
    image_id: str
    gts: List[GroundTruthEntry] = field(default_factory=list)
    dets: Optional[List[Detection]] = None
    extra: Dict[str, Any] = field(default_factory=dict)  # unknown top-level fields


def _iter_lines(path: Path) -> Iterator[tuple]:
    """Yield (line number, parsed object) for every data line."""
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            try:
                text = raw.decode("utf-8").strip()
            except UnicodeDecodeError as e:
                raise IngestError(path, lineno, f"invalid UTF-8: {e.reason}") from None
            if not text or text.startswith("#"):
                continue
            try:
                obj = json.loads(text)
            except (json.JSONDecodeError, RecursionError) as e:
                raise IngestError(path, lineno, f"invalid JSON: {e}") from None
            if not isinstance(obj, dict):
                raise IngestError(path, lineno, "record must be a JSON object")
            yield lineno, obj


def _image_id(path, lineno: int, obj: dict, seen: set) -> str:
    image_id = obj.get("ID")
    if not isinstance(image_id, str) or not image_id:
        raise IngestError(path, lineno, "missing or empty 'ID'")
    if image_id in seen:
        raise IngestError(path, lineno, f"duplicate image id '{image_id}'")
    seen.add(image_id)
    return image_id


def _number(path, lineno: int, v, name: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise IngestError(path, lineno, f"'{name}' holds a non-numeric value")
    try:
        value = float(v)
    except OverflowError:
        value = math.inf
    if not math.isfinite(value):
        raise IngestError(path, lineno, f"'{name}' holds a non-finite value")
    return value


def _box(path, lineno: int, value, name: str) -> BBox:
    if not isinstance(value, list) or len(value) != 4:
        raise IngestError(path, lineno, f"'{name}' must be a list of 4 numbers")
    x, y, w, h = (_number(path, lineno, v, name) for v in value)
    if w < 0 or h < 0:
        raise IngestError(path, lineno, f"'{name}' has negative width or height")
    try:
        return BBox.from_xywh(x, y, w, h)
    except ValueError as e:
        raise IngestError(path, lineno, f"'{name}': {e}") from None


def _box_list(path, lineno: int, obj: dict, key: str) -> list:
    boxes = obj.get(key, [])
    if not isinstance(boxes, list):
        raise IngestError(path, lineno, f"'{key}' must be a list")
    for b in boxes:
        if not isinstance(b, dict):
            raise IngestError(path, lineno, f"entries of '{key}' must be objects")
    return boxes


def iter_odgt(path: Path, tag_counter: Optional[Counter] = None) -> Iterator[ImageRecord]:
    """Stream ImageRecords from an ODGT ground-truth file."""
    seen = set()
    for lineno, obj in _iter_lines(path):
        image_id = _image_id(path, lineno, obj, seen)
        gts = []
        for k, box in enumerate(_box_list(path, lineno, obj, "gtboxes")):
            if "fbox" not in box:
                raise IngestError(path, lineno, f"gtbox {k} has no 'fbox'")
            full = _box(path, lineno, box["fbox"], "fbox")
            missing = "vbox" not in box
            vis = full if missing else _box(path, lineno, box["vbox"], "vbox")
            if missing:
                logger.warning("%s:%d: gtbox %d has no vbox, usable for full-box evaluation only", path, lineno, k)

            extra = box.get("extra", {})
            if not isinstance(extra, dict):
                raise IngestError(path, lineno, f"gtbox {k} 'extra' must be an object")
            tag = box.get("tag", "person")
            if not isinstance(tag, str):
                raise IngestError(path, lineno, f"gtbox {k} 'tag' must be a string")
            box_id = extra.get("box_id", k)
            if isinstance(box_id, bool) or not isinstance(box_id, (int, str)):
                raise IngestError(path, lineno, f"gtbox {k} 'box_id' must be an integer or string")
            if tag_counter is not None:
                tag_counter[tag] += 1
            gts.append(GroundTruthEntry(
                pair=PairedBox(full, vis),
                ignore=extra.get("ignore", 0) == 1,
                id=box_id,
                tag=tag,
                visible_missing=missing,
            ))
        if any(isinstance(g.id, str) for g in gts):
            # explicit string box_ids next to positional ones: one id type per image
            gts = [replace(g, id=str(g.id)) for g in gts]
        yield ImageRecord(image_id=image_id, gts=gts)


def read_odgt(path: Path) -> List[ImageRecord]:
    """Read a whole ODGT file. Tags other than 'person' are reported, not interpreted."""
    tags = Counter()
    records = list(iter_odgt(path, tags))
    unknown = {t: n for t, n in tags.items() if t != "person"}
    if unknown:
        logger.warning("%s: non-person tags kept as annotated: %s", path, unknown)
    logger.debug("Read %d images from %s", len(records), path)
    return records


def iter_predictions(path: Path) -> Iterator[ImageRecord]:
    """Stream ImageRecords with detections from a prediction file."""
    seen = set()
    for lineno, obj in _iter_lines(path):
        image_id = _image_id(path, lineno, obj, seen)
        dets = []
        for k, box in enumerate(_box_list(path, lineno, obj, "dtboxes")):
            for key in _DT_BOX_KEYS:
                if key not in box:
                    raise IngestError(path, lineno, f"dtbox {k} has no '{key}'")
            score = _number(path, lineno, box["score"], "score")
            if not 0.0 <= score <= 1.0:
                raise IngestError(path, lineno, f"dtbox {k} score {score} outside [0, 1]")
            pair = PairedBox(_box(path, lineno, box["fbox"], "fbox"), _box(path, lineno, box["vbox"], "vbox"))
            extra = {key: value for key, value in box.items() if key not in _DT_BOX_KEYS}
            dets.append(Detection(pair=pair, score=score, id=k, extra=extra))
        extra = {key: value for key, value in obj.items() if key not in ("ID", "dtboxes")}
        yield ImageRecord(image_id=image_id, dets=dets, extra=extra)


def read_predictions(path: Path) -> List[ImageRecord]:
    records = list(iter_predictions(path))
    logger.debug("Read predictions for %d images from %s", len(records), path)
    return records


def _num(v: float) -> float:
    return float(f"{v:.{FLOAT_DIGITS}g}")


def _xywh(b: BBox) -> List[float]:
    return [_num(v) for v in b.to_xywh()]


def format_header(config: dict) -> str:
    """Config echo as a comment line."""
    return HEADER_PREFIX + json.dumps(config, sort_keys=True) + "\n"


def write_predictions(path: Path, records: Sequence[ImageRecord], header: Optional[dict] = None) -> None:
    """Write one line per image with stable field order; unknown fields follow in sorted order."""
    with open(path, "w", encoding="utf-8") as f:
        if header is not None:
            f.write(format_header(header))
        for rec in records:
            boxes = []
            for d in rec.dets or []:
                box = {"fbox": _xywh(d.pair.full), "vbox": _xywh(d.pair.visible), "score": _num(d.score)}
                box.update({key: d.extra[key] for key in sorted(d.extra)})
                boxes.append(box)
            line = {"ID": rec.image_id, "dtboxes": boxes}
            line.update({key: rec.extra[key] for key in sorted(rec.extra)})
            f.write(json.dumps(line) + "\n")


def write_odgt(path: Path, records: Sequence[ImageRecord], header: Optional[dict] = None) -> None:
    """Write ground truths in ODGT form; box ids go to extra.box_id."""
    with open(path, "w", encoding="utf-8") as f:
        if header is not None:
            f.write(format_header(header))
        for rec in records:
            boxes = []
            for g in rec.gts:
                box = {"tag": g.tag, "fbox": _xywh(g.pair.full)}
                if not g.visible_missing:
                    box["vbox"] = _xywh(g.pair.visible)
                box["extra"] = {"box_id": g.id, "ignore": int(g.ignore)}
                boxes.append(box)
            f.write(json.dumps({"ID": rec.image_id, "gtboxes": boxes}) + "\n")
