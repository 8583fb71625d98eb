"""File formats: ILM1 label maps, JSON annotation documents, JSON reports.

ILM1 is a tiny binary container for one integer label grid: the magic bytes
"ILM1", height and width as little-endian u32, then height*width u16
little-endian labels in row-major order.  The payload length must match
exactly.

Annotation documents are JSON.  One document describes one image:

    {"image": {"id": "frame0", "width": W, "height": H},
     "instances": [{"score": s,
                    "box": [x1, y1, x2, y2],
                    "labelmap": "relative/path.ilm1" | {"height": h,
                                                        "width": w,
                                                        "data": [...]},
                    "points": [{"part": i, "u": u, "v": v,
                                "x": px, "y": py}, ...]}]}

A file holds either a single document or a JSON array of documents; ids
default to the array position.  ``labelmap`` and ``points`` are each
optional (parsing evaluation needs label maps, point evaluation needs
points).  Unknown keys anywhere are rejected.  Boxes are clamped to the
declared image bounds on load.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import DensePosePoint, InstanceParsing
from .roi import Box

ILM1_MAGIC = b"ILM1"


def write_labelmap(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"label map must hold integers, got {labels.dtype}")
    if np.any(labels < 0) or np.any(labels > 0xFFFF):
        raise ValueError("label values must fit in u16")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(ILM1_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(labels.astype("<u2").tobytes())


def read_labelmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != ILM1_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {ILM1_MAGIC!r}")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    h, w = struct.unpack("<II", raw[4:12])
    payload = raw[12:]
    if len(payload) != 2 * h * w:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, expected exactly {2 * h * w}"
        )
    labels = np.frombuffer(payload, dtype="<u2").reshape(h, w)
    return labels.astype(np.int64)


# ---------------------------------------------------------------------------
# annotation documents


@dataclass
class ImageAnnotation:
    image_id: str
    width: int
    height: int
    instances: list = field(default_factory=list)


@dataclass
class AnnotatedInstance:
    score: float
    box: Box
    labels: np.ndarray | None = None
    points: list | None = None

    def parsing_instance(self) -> InstanceParsing:
        if self.labels is None:
            raise ValueError("instance has no label map")
        return InstanceParsing(self.labels, self.score, self.box)


def _require_keys(obj: dict, allowed: set, required: set, where: str) -> None:
    keys = set(obj)
    unknown = keys - allowed
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - keys
    if missing:
        raise ValueError(f"{where}: missing keys {sorted(missing)}")


def _parse_labelmap(spec, base_dir: Path, where: str) -> np.ndarray:
    if isinstance(spec, str):
        return read_labelmap(base_dir / spec)
    if isinstance(spec, dict):
        _require_keys(spec, {"height", "width", "data"}, {"height", "width", "data"}, where)
        h, w = int(spec["height"]), int(spec["width"])
        data = np.asarray(spec["data"], dtype=np.int64)
        if data.shape != (h * w,):
            raise ValueError(f"{where}: inline data length {data.size} != {h}*{w}")
        return data.reshape(h, w)
    raise ValueError(f"{where}: labelmap must be a path or an inline object")


def _parse_point(obj: dict, where: str) -> DensePosePoint:
    _require_keys(obj, {"part", "u", "v", "x", "y"}, {"part", "u", "v", "x", "y"}, where)
    return DensePosePoint(
        part_index=int(obj["part"]),
        u=float(obj["u"]),
        v=float(obj["v"]),
        pixel=(int(obj["x"]), int(obj["y"])),
    )


def _parse_document(doc: dict, base_dir: Path, default_id: str, where: str) -> ImageAnnotation:
    _require_keys(doc, {"image", "instances"}, {"image", "instances"}, where)
    img = doc["image"]
    _require_keys(img, {"id", "width", "height"}, {"width", "height"}, f"{where}.image")
    width, height = int(img["width"]), int(img["height"])
    if width < 1 or height < 1:
        raise ValueError(f"{where}.image: dimensions must be positive, got {width}x{height}")
    image_id = str(img.get("id", default_id))
    instances = []
    for i, inst in enumerate(doc["instances"]):
        iw = f"{where}.instances[{i}]"
        _require_keys(inst, {"score", "box", "labelmap", "points"}, {"score", "box"}, iw)
        box_vals = [float(v) for v in inst["box"]]
        if len(box_vals) != 4:
            raise ValueError(f"{iw}: box must have 4 coordinates")
        x1, y1, x2, y2 = box_vals
        box = Box(
            min(max(x1, 0.0), width),
            min(max(y1, 0.0), height),
            min(max(x2, 0.0), width),
            min(max(y2, 0.0), height),
            score=float(inst["score"]),
        )
        labels = None
        if "labelmap" in inst:
            labels = _parse_labelmap(inst["labelmap"], base_dir, f"{iw}.labelmap")
        points = None
        if "points" in inst:
            points = [_parse_point(p, f"{iw}.points[{j}]") for j, p in enumerate(inst["points"])]
        instances.append(AnnotatedInstance(float(inst["score"]), box, labels, points))
    return ImageAnnotation(image_id, width, height, instances)


def load_annotations(path) -> dict[str, ImageAnnotation]:
    """Load an annotation file into {image_id: ImageAnnotation}."""
    path = Path(path)
    try:
        parsed = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    docs = parsed if isinstance(parsed, list) else [parsed]
    out: dict[str, ImageAnnotation] = {}
    for i, doc in enumerate(docs):
        if not isinstance(doc, dict):
            raise ValueError(f"{path}[{i}]: document must be an object")
        ann = _parse_document(doc, path.parent, default_id=str(i), where=f"{path}[{i}]")
        if ann.image_id in out:
            raise ValueError(f"{path}: duplicate image id {ann.image_id!r}")
        out[ann.image_id] = ann
    return out


def dump_report(report: dict) -> str:
    """Canonical JSON serialization: sorted keys, two-space indent."""
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
