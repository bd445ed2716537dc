"""Synthetic data sets and the file formats used by the command line.

Points are stored as CSV (UTF-8, LF, header ``x0,x1,...``).  Images are
16x16 grayscale; a set of n images is one binary PGM strip of size
16 x 16n (P5, maxval 255, [-1, 1] mapped linearly onto [0, 255]) plus an
index CSV next to it describing each image.
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .numcore import Rng

POINT_KINDS = ("ring", "blobs", "shifted")
IMAGE_KINDS = ("disks", "crosses")
KINDS = POINT_KINDS + IMAGE_KINDS
SIDE = 16
RING_BAND = (0.8, 1.0)
RING_NOISE = 0.02
BLOB_RADIUS = 0.5
BLOB_STD = 0.05
SHIFT = (0.25, 0.25)


# ------------------------------------------------------------------ points

def ring(n: int, rng: Rng) -> np.ndarray:
    r = rng.uniform((n,), *RING_BAND) + rng.normal((n,), 0.0, RING_NOISE)
    theta = rng.uniform((n,), 0.0, 2 * np.pi)
    return np.clip(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1), -1.0, 1.0)


def blobs(n: int, rng: Rng, n_blobs: int = 8) -> np.ndarray:
    which = rng.integers(n_blobs, n)
    angle = 2 * np.pi * which / n_blobs
    centers = BLOB_RADIUS * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return np.clip(centers + rng.normal((n, 2), 0.0, BLOB_STD), -1.0, 1.0)


def shifted(n: int, rng: Rng) -> np.ndarray:
    """``blobs`` translated by a constant vector."""
    return np.clip(blobs(n, rng) + np.asarray(SHIFT), -1.0, 1.0)


# ------------------------------------------------------------------ images

def _grid():
    return np.mgrid[0:SIDE, 0:SIDE].astype(np.float64)


def disk_image(cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = _grid()
    return np.where((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r, 1.0, -1.0)


def cross_image(cy: int, cx: int, arm: int, half_width: int) -> np.ndarray:
    yy, xx = _grid()
    vert = (np.abs(xx - cx) <= half_width) & (np.abs(yy - cy) <= arm)
    horiz = (np.abs(yy - cy) <= half_width) & (np.abs(xx - cx) <= arm)
    return np.where(vert | horiz, 1.0, -1.0)


def disks(n: int, rng: Rng):
    r = rng.uniform((n,), 2.0, 6.0)
    u = rng.uniform((n, 2), 0.0, 1.0)
    lo, hi = r - 0.5, SIDE - 0.5 - r
    cy, cx = lo + u[:, 0] * (hi - lo), lo + u[:, 1] * (hi - lo)
    imgs = np.stack([disk_image(cy[i], cx[i], r[i]).ravel() for i in range(n)])
    meta = [{"cy": cy[i], "cx": cx[i], "size": r[i]} for i in range(n)]
    return imgs, meta


def crosses(n: int, rng: Rng):
    arm = 3 + rng.integers(4, n)           # 3..6
    width = rng.integers(2, n)             # half width 0..1
    # centre so the whole cross stays inside the frame
    u = rng.uniform((n, 2), 0.0, 1.0)
    span = SIDE - 2 * arm
    cy = arm + np.minimum((u[:, 0] * span).astype(np.int64), span - 1)
    cx = arm + np.minimum((u[:, 1] * span).astype(np.int64), span - 1)
    imgs = np.stack([cross_image(cy[i], cx[i], arm[i], width[i]).ravel() for i in range(n)])
    meta = [{"cy": cy[i], "cx": cx[i], "size": arm[i], "half_width": width[i]} for i in range(n)]
    return imgs, meta


def generate(kind: str, n: int, seed: int):
    """Return (samples, meta); meta is None for point kinds."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = Rng(seed)
    if kind == "ring":
        return ring(n, rng), None
    if kind == "blobs":
        return blobs(n, rng), None
    if kind == "shifted":
        return shifted(n, rng), None
    if kind == "disks":
        return disks(n, rng)
    if kind == "crosses":
        return crosses(n, rng)
    raise ValueError(f"unknown data kind {kind!r}; choose from {', '.join(KINDS)}")


# ------------------------------------------------------------------- files

def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def format_float(v: float) -> str:
    return repr(float(v))


def write_points_csv(path, points: np.ndarray, header: list[str] | None = None) -> None:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header or [f"x{i}" for i in range(points.shape[1])])
    for row in points:
        w.writerow([format_float(v) for v in row])
    _atomic_write(Path(path), buf.getvalue().encode("utf-8"))


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)


def write_rows_csv(path, rows: list[dict], columns) -> None:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (format_float(r[c]) if isinstance(r[c], float) else r[c])
                    for c in columns])
    _atomic_write(Path(path), buf.getvalue().encode("utf-8"))


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.rint((np.clip(img, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + to_bytes(img).tobytes()


def decode_pgm(blob: bytes) -> np.ndarray:
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pixels = np.frombuffer(blob, np.uint8, w * h, pos + 1).reshape(h, w)
    return pixels.astype(np.float64) / 127.5 - 1.0


def write_pgm(path, img: np.ndarray) -> None:
    _atomic_write(Path(path), encode_pgm(img))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def images_to_strip(images: np.ndarray) -> np.ndarray:
    return np.asarray(images).reshape(-1, SIDE * SIDE).reshape(-1, SIDE)


def montage(grid: np.ndarray) -> np.ndarray:
    """(rows, cols, 256) image grid -> one (16*rows, 16*cols) picture."""
    rows, cols = grid.shape[:2]
    g = grid.reshape(rows, cols, SIDE, SIDE)
    return g.transpose(0, 2, 1, 3).reshape(rows * SIDE, cols * SIDE)


def index_path(pgm_path) -> Path:
    p = Path(pgm_path)
    return p.with_name(p.name + ".index.csv")


def write_image_set(path, images: np.ndarray, meta: list[dict] | None = None, kind: str = "") -> None:
    images = np.atleast_2d(images)
    write_pgm(path, images_to_strip(images))
    cols = ["index", "kind", "cy", "cx", "size", "half_width"]
    rows = [{"index": i, "kind": kind, **(meta[i] if meta else {})} for i in range(len(images))]
    write_rows_csv(index_path(path), rows, cols)


def read_image_set(path) -> np.ndarray:
    strip = read_pgm(path)
    if strip.shape[1] != SIDE or strip.shape[0] % SIDE:
        raise ValueError(f"{path}: not a strip of {SIDE}x{SIDE} images")
    return strip.reshape(-1, SIDE * SIDE)


def make_data(kind: str, n: int, seed: int, out_path) -> Path:
    samples, meta = generate(kind, n, seed)
    out = Path(out_path)
    if kind in IMAGE_KINDS:
        write_image_set(out, samples, meta, kind)
    else:
        write_points_csv(out, samples)
    return out


def load_dataset(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if path.suffix.lower() == ".pgm":
        return read_image_set(path)
    return read_points_csv(path)


def save_samples(path, samples: np.ndarray) -> None:
    """CSV for low-dimensional samples, PGM strip for 16x16 images."""
    samples = np.atleast_2d(samples)
    if Path(path).suffix.lower() == ".pgm":
        write_pgm(path, images_to_strip(samples))
    else:
        write_points_csv(path, samples)
