"""File formats: PGM images, PFM depth maps, camera text files, weight files,
dataset layout and the training metrics CSV.

Dataset layout (BlendedMVS-like)::

    root/scene*/images/<id>.pgm
    root/scene*/depths/<id>.pfm
    root/scene*/cams/<id>.txt
    root/scene*/pairs.txt          # one "idA idB" per line
"""
from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DatasetError, FormatError, ValidationError
from .geometry import Camera, CameraExtrinsics, CameraIntrinsics, DepthMap

__all__ = [
    "ScenePair",
    "PairDescriptor",
    "load_image",
    "save_image",
    "load_depth",
    "save_depth",
    "load_camera",
    "save_camera",
    "save_weights",
    "load_weights",
    "weights_to_bytes",
    "scan_dataset",
    "load_pair",
    "find_pair",
    "METRICS_HEADER",
    "append_metrics",
    "read_metrics",
    "generate_synthetic_dataset",
]

WEIGHTS_MAGIC = b"CLFW"
WEIGHTS_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}

METRICS_HEADER = ("epoch", "step", "loss", "l_distill", "l_target", "mae", "lr")


# ---------------------------------------------------------------------------
# PGM / PFM


def _read_header_tokens(buf: bytes, count: int, what: str) -> tuple[list[bytes], int]:
    """Whitespace separated header tokens (``#`` comments allowed) and the data offset."""
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise FormatError(f"{what}: truncated header at byte {pos}")
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise FormatError(f"{what}: expected whitespace after header at byte {pos}")
    return tokens, pos + 1


def _parse_int(tok: bytes, what: str, offset: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise FormatError(f"{what}: bad integer {tok!r} in header near byte {offset}") from None


def load_image(path) -> np.ndarray:
    """Binary 8-bit PGM as a ``[1, h, w]`` float64 array scaled to [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: bad magic {buf[:2]!r} at byte 0, expected b'P5'")
    tokens, offset = _read_header_tokens(buf, 4, str(path))
    w, h, maxval = (_parse_int(t, str(path), offset) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval} (only 8-bit, 255, is supported)")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: non-positive image size {w}x{h}")
    need = w * h
    if len(buf) - offset < need:
        raise FormatError(f"{path}: truncated pixel data at byte {len(buf)}, expected {offset + need} bytes")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    return (pixels.reshape(1, h, w) / 255.0).astype(np.float64)


def save_image(path, image) -> None:
    """Write an image in [0, 1] (shape ``[h, w]`` or ``[1, h, w]``) as 8-bit PGM."""
    img = np.asarray(image, dtype=np.float64)
    img = img.reshape(img.shape[-2:])
    data = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def load_depth(path) -> DepthMap:
    """Grayscale PFM; rows are stored bottom-up and returned top-down."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"Pf":
        if buf[:2] == b"PF":
            raise FormatError(f"{path}: colour PFM (PF) is not a depth map; expected 'Pf'")
        raise FormatError(f"{path}: bad magic {buf[:2]!r} at byte 0, expected b'Pf'")
    tokens, offset = _read_header_tokens(buf, 4, str(path))
    w, h = (_parse_int(t, str(path), offset) for t in tokens[1:3])
    try:
        scale = float(tokens[3])
    except ValueError:
        raise FormatError(f"{path}: bad scale {tokens[3]!r} near byte {offset}") from None
    if scale == 0 or w < 1 or h < 1:
        raise FormatError(f"{path}: malformed header (size {w}x{h}, scale {scale})")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    need = 4 * w * h
    if len(buf) - offset < need:
        raise FormatError(f"{path}: truncated float data at byte {len(buf)}, expected {offset + need} bytes")
    values = np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset).reshape(h, w)[::-1]
    return DepthMap(w, h, values.astype(np.float64))


def save_depth(path, depth: DepthMap) -> None:
    """Little-endian PFM (scale -1.0); values are stored as float32."""
    data = np.ascontiguousarray(depth.values[::-1], dtype="<f4")
    Path(path).write_bytes(b"Pf\n%d %d\n-1.0\n" % (depth.width, depth.height) + data.tobytes())


# ---------------------------------------------------------------------------
# cameras


def _parse_rows(lines: list[tuple[int, str]], start: int, rows: int, cols: int, path) -> tuple[np.ndarray, int]:
    out = []
    i = start
    while len(out) < rows:
        if i >= len(lines):
            raise FormatError(f"{path}: unexpected end of file, expected {rows} rows of {cols} numbers")
        lineno, text = lines[i]
        parts = text.split()
        if len(parts) != cols:
            raise FormatError(f"{path}:{lineno}: expected {cols} numbers, got {len(parts)}")
        try:
            out.append([float(p) for p in parts])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: could not parse numbers from {text!r}") from None
        i += 1
    return np.array(out), i


def load_camera(path) -> Camera:
    """BlendedMVS-style camera text: ``extrinsic`` 4x4 then ``intrinsic`` 3x3.

    Trailing lines (e.g. depth range) are ignored.
    """
    raw = Path(path).read_text().splitlines()
    lines = [(n, s.strip()) for n, s in enumerate(raw, start=1) if s.strip()]
    keys = [i for i, (_, s) in enumerate(lines) if s.lower() in ("extrinsic", "intrinsic")]
    kinds = [lines[i][1].lower() for i in keys]
    if kinds[:2] != ["extrinsic", "intrinsic"]:
        line = lines[0][0] if lines else 1
        raise FormatError(f"{path}:{line}: expected 'extrinsic' block followed by 'intrinsic' block")
    E, _ = _parse_rows(lines, keys[0] + 1, 4, 4, path)
    K, _ = _parse_rows(lines, keys[1] + 1, 3, 3, path)
    intr_line = lines[keys[1]][0]
    if K[0, 1] != 0.0:
        raise FormatError(f"{path}:{intr_line + 1}: unsupported intrinsic matrix with skew {K[0, 1]}")
    if K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0 or K[2, 2] != 1:
        raise FormatError(f"{path}:{intr_line + 1}: unsupported intrinsic matrix layout")
    extr = CameraExtrinsics(E[:3, :3], E[:3, 3])
    try:
        extr.check(1e-3)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    try:
        intr = CameraIntrinsics(K[0, 0], K[1, 1], K[0, 2], K[1, 2])
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return Camera(intr, extr)


def save_camera(path, cam: Camera) -> None:
    E = np.eye(4)
    E[:3, :3] = cam.extr.R
    E[:3, 3] = cam.extr.t
    rows = ["extrinsic"]
    rows += [" ".join(repr(float(x)) for x in r) for r in E]
    rows += ["", "intrinsic"]
    rows += [" ".join(repr(float(x)) for x in r) for r in cam.intr.matrix()]
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# weights


def _as_arrays(model) -> dict[str, np.ndarray]:
    if hasattr(model, "state_dict"):
        model = model.state_dict()
    return {k: np.asarray(getattr(v, "data", v)) for k, v in model.items()}


def weights_to_bytes(model) -> bytes:
    arrays = _as_arrays(model)
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC)
    out.write(struct.pack("<II", WEIGHTS_VERSION, len(arrays)))
    for name, arr in arrays.items():
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_TAGS:
            raise FormatError(f"weights: unsupported dtype {arr.dtype} for {name}")
        encoded = name.encode("utf-8")
        out.write(struct.pack("<I", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<BI", _DTYPE_TAGS[dt], arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return out.getvalue()


def save_weights(model, path) -> None:
    """Persist a module (or a name -> array mapping) in the CLFW format.

    Layout, all integers little-endian::

        b"CLFW" | u32 version | u32 count
        per entry: u32 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64)
                   | u32 rank | rank x u32 extents | raw little-endian values
    """
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(weights_to_bytes(model))
    os.replace(tmp, path)


def load_weights(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at byte 0, expected {WEIGHTS_MAGIC!r}")
    pos = 4

    def read(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = read("<II")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weights version {version} (expected {WEIGHTS_VERSION})")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = read("<I")
        if pos + nlen > len(buf):
            raise FormatError(f"{path}: truncated entry name at byte {pos}")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        tag, rank = read("<BI")
        if tag not in _TAG_DTYPES:
            raise FormatError(f"{path}: unknown dtype tag {tag} for {name!r} at byte {pos - 5}")
        shape = read(f"<{rank}I") if rank else ()
        dt = _TAG_DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(buf):
            raise FormatError(f"{path}: truncated data for {name!r} at byte {pos}")
        arrays[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes at byte {pos}")
    return arrays


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class PairDescriptor:
    scene: str
    idA: str
    idB: str
    root: Path

    @property
    def key(self) -> str:
        return f"{self.scene}:{self.idA}:{self.idB}"

    def paths(self, view: str) -> tuple[Path, Path, Path]:
        base = self.root / self.scene
        return base / "images" / f"{view}.pgm", base / "depths" / f"{view}.pfm", base / "cams" / f"{view}.txt"


@dataclass
class ScenePair:
    imageA: np.ndarray
    imageB: np.ndarray
    depthA: DepthMap
    depthB: DepthMap
    camA: Camera
    camB: Camera


def scan_dataset(root) -> list[PairDescriptor]:
    """Pair descriptors ordered by scene name, then by line in ``pairs.txt``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    out = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("scene")):
        pairs_file = scene_dir / "pairs.txt"
        if not pairs_file.exists():
            raise DatasetError(f"scene {scene_dir.name}: missing pairs.txt")
        for lineno, line in enumerate(pairs_file.read_text().splitlines(), start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise DatasetError(f"scene {scene_dir.name}: pairs.txt line {lineno} must read 'idA idB'")
            desc = PairDescriptor(scene_dir.name, parts[0], parts[1], root)
            for view in parts:
                missing = [p.name for p in desc.paths(view) if not p.exists()]
                if missing:
                    raise DatasetError(
                        f"scene {scene_dir.name}: pair {parts[0]} {parts[1]} references view {view} "
                        f"with missing files {missing}"
                    )
            out.append(desc)
    return out


def find_pair(root, key: str) -> PairDescriptor:
    """Descriptor for ``SCENE:IDA:IDB``; any two existing views of a scene qualify."""
    parts = key.split(":")
    if len(parts) != 3 or not all(parts):
        raise DatasetError(f"pair key {key!r} must read SCENE:IDA:IDB")
    desc = PairDescriptor(parts[0], parts[1], parts[2], Path(root))
    for view in parts[1:]:
        missing = [p.name for p in desc.paths(view) if not p.exists()]
        if missing:
            raise DatasetError(f"pair {key} not found under {root}: view {view} lacks {missing}")
    return desc


def load_pair(desc: PairDescriptor) -> ScenePair:
    views = []
    for view in (desc.idA, desc.idB):
        img_p, depth_p, cam_p = desc.paths(view)
        image, depth, cam = load_image(img_p), load_depth(depth_p), load_camera(cam_p)
        if image.shape[1:] != (depth.height, depth.width):
            raise DatasetError(
                f"{desc.scene}/{view}: image {image.shape[2]}x{image.shape[1]} vs depth {depth.width}x{depth.height}"
            )
        views.append((image, depth, cam))
    (ia, da, ca), (ib, db, cb) = views
    return ScenePair(ia, ib, da, db, ca, cb)


# ---------------------------------------------------------------------------
# metrics


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.9g" % float(value)


def append_metrics(path, row: Mapping[str, float]) -> None:
    """Append one row to the metrics CSV, writing the header on first use."""
    path = Path(path)
    header = ",".join(METRICS_HEADER)
    if path.exists() and path.stat().st_size > 0:
        with path.open() as fh:
            first = fh.readline().rstrip("\r\n")
        if first != header:
            raise FormatError(f"{path}: metrics header {first!r} does not match {header!r}")
        prefix = ""
    else:
        prefix = header + "\n"
    line = ",".join(_fmt(row[k]) for k in METRICS_HEADER)
    with path.open("a") as fh:
        fh.write(prefix + line + "\n")


def read_metrics(path) -> list[dict[str, float]]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise FormatError(f"{path}: unexpected metrics header {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({k: (int(r[k]) if k in ("epoch", "step") else float(r[k])) for k in METRICS_HEADER})
    return rows


def generate_synthetic_dataset(root, n_scenes: int, image_size: tuple[int, int], seed: int, force: bool = False):
    """Write a procedural plane-scene dataset; see :mod:`coarse_loftr.synthetic`."""
    from .synthetic import generate_synthetic_dataset as generate

    return generate(root, n_scenes, image_size, seed, force)
