"""File formats: header+binary arrays, box CSV, assignment CSV, pixmaps.

Binary arrays are a single JSON header line (shape, dtype, order) followed by
raw little-endian float32 bytes, row-major. Deterministic byte-for-byte given
the same data; no timestamps anywhere.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .boxes import Box3D

BOX_CSV_FIELDS = ("class_id", "score", "x", "y", "z", "w", "l", "h", "theta", "vx", "vy")


class FileFormatError(ValueError):
    """Raised for malformed bevkit files."""


def save_array(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = json.dumps({"shape": list(arr.shape), "dtype": "float32", "order": "C"})
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        f.write(arr.tobytes())


def load_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
            shape = tuple(int(s) for s in header["shape"])
            if header["dtype"] != "float32" or header.get("order", "C") != "C":
                raise FileFormatError(f"{path}: unsupported dtype/order")
        except (ValueError, KeyError) as exc:
            raise FileFormatError(f"{path}: bad array header: {exc}") from exc
        raw = f.read()
    expect = int(np.prod(shape)) * 4
    if len(raw) != expect:
        raise FileFormatError(f"{path}: expected {expect} data bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape)


def save_boxes_csv(path, boxes: list[Box3D]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BOX_CSV_FIELDS)
        for b in boxes:
            w.writerow([b.class_id, repr(b.score), repr(b.x), repr(b.y), repr(b.z),
                        repr(b.w), repr(b.l), repr(b.h), repr(b.theta),
                        repr(b.vx), repr(b.vy)])


def load_boxes_csv(path) -> list[Box3D]:
    boxes = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(BOX_CSV_FIELDS) - set(reader.fieldnames):
            raise FileFormatError(f"{path}: expected columns {BOX_CSV_FIELDS}")
        for i, row in enumerate(reader):
            try:
                boxes.append(Box3D(
                    x=float(row["x"]), y=float(row["y"]), z=float(row["z"]),
                    w=float(row["w"]), l=float(row["l"]), h=float(row["h"]),
                    theta=float(row["theta"]), vx=float(row["vx"]), vy=float(row["vy"]),
                    score=float(row["score"]), class_id=int(row["class_id"])))
            except ValueError as exc:
                raise FileFormatError(f"{path}: row {i}: {exc}") from exc
    return boxes


def save_assignment_csv(path, result) -> None:
    gt_of = dict(result.positive)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["anchor_index", "label", "gt_index"])
        rows = ([(a, "pos", g) for a, g in result.positive]
                + [(a, "neg", -1) for a in result.negative]
                + [(a, "ign", -1) for a in result.ignored])
        for a, label, g in sorted(rows):
            w.writerow([a, label, g])


def save_pgm(path, image: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """Grayscale binary portable pixmap (P5), values scaled [lo, hi] -> 0..255."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise FileFormatError("pixmap needs a 2D array")
    if lo is None:
        lo = float(img.min())
    if hi is None:
        hi = float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = np.clip((img - lo) * scale, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(pix.tobytes())


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
