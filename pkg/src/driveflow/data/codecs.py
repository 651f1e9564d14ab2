"""Point-cloud and image file formats.

Clouds come in two flavours, chosen by extension:

* ``.pcb`` binary: magic ``PCB1``, little-endian u64 point count, then
  float32 ``x y z`` triples.
* anything else is ASCII: one ``x y z [intensity]`` per line, ``#`` starts
  a comment.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError, TruncationError
from ..pointcloud import PointCloud, _read_pnm_header

PCB_MAGIC = b"PCB1"


def save_cloud(cloud: PointCloud, path) -> None:
    path = Path(path)
    if path.suffix == ".pcb":
        pts = np.ascontiguousarray(cloud.points, dtype="<f4")
        path.write_bytes(PCB_MAGIC + struct.pack("<Q", len(cloud)) + pts.tobytes())
        return
    lines = []
    pts = cloud.points.astype(np.float32).astype(np.float64)
    for i, (x, y, z) in enumerate(pts.tolist()):
        row = f"{x!r} {y!r} {z!r}"
        if cloud.intensity is not None:
            row += f" {float(np.float32(cloud.intensity[i]))!r}"
        lines.append(row)
    path.write_text("\n".join(lines) + ("\n" if lines else ""))


def load_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix == ".pcb":
        return _load_binary(path)
    return _load_ascii(path)


def _load_binary(path: Path) -> PointCloud:
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != PCB_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}, expected {PCB_MAGIC!r}", 0)
    if len(raw) < 12:
        raise TruncationError(f"{path}: header truncated at offset {len(raw)}", len(raw))
    (count,) = struct.unpack_from("<Q", raw, 4)
    need = 12 + count * 12
    if len(raw) < need:
        raise TruncationError(
            f"{path}: declared {count} points needs {need} bytes, file ends at offset {len(raw)}", len(raw))
    if len(raw) > need:
        raise ParseError(f"{path}: {len(raw) - need} trailing bytes after offset {need}", need)
    pts = np.frombuffer(raw, dtype="<f4", count=count * 3, offset=12).reshape(count, 3)
    return PointCloud(pts.astype(np.float64))


def _load_ascii(path: Path) -> PointCloud:
    points, inten = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        toks = body.split()
        if len(toks) not in (3, 4):
            raise ParseError(f"{path}:{lineno}: expected 3 or 4 values, got {len(toks)}", lineno)
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric token in {body!r}", lineno) from None
        if not all(np.isfinite(vals)):
            raise ParseError(f"{path}:{lineno}: non-finite value", lineno)
        if points and (len(vals) == 4) != bool(inten):
            raise ParseError(f"{path}:{lineno}: intensity column present on some lines only", lineno)
        points.append(vals[:3])
        if len(vals) == 4:
            inten.append(vals[3])
    arr = np.array(points, dtype=np.float64).reshape(-1, 3)
    return PointCloud(arr, np.array(inten) if inten else None)


def save_image_ppm(image: np.ndarray, path) -> None:
    """Write a ``3 x H x W`` array in [0, 1] as binary P6."""
    img = np.asarray(image)
    _, h, w = img.shape
    pix = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def load_image_ppm(path) -> np.ndarray:
    """Read binary P6 (maxval 255) into a channel-major float array in [0, 1]."""
    raw = Path(path).read_bytes()
    try:
        (w, h, maxval), offset = _read_pnm_header(raw, b"P6", 3)
    except ParseError as exc:
        raise type(exc)(f"{path}: {exc}", exc.location) from None
    if maxval != 255:
        raise ParseError(f"{path}: maxval {maxval} unsupported, expected 255", offset)
    need = w * h * 3
    body = raw[offset:offset + need]
    if len(body) < need:
        raise TruncationError(
            f"{path}: header says {w}x{h} ({need} bytes), payload has {len(body)}", offset + len(body))
    pix = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return pix.transpose(2, 0, 1).astype(np.float64) / 255.0
