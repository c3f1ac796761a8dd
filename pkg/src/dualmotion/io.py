"""File formats: Middlebury ``.flo``, frame directories, flow visualization, CSV/JSON.

All writers are atomic: data goes to a temporary file in the target
directory which is then renamed over the destination.
"""

from __future__ import annotations

import contextlib
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .stimuli import StimulusSequence

FLO_MAGIC = 202021.25
FLO_TAG = np.array([FLO_MAGIC], "<f4").tobytes()  # b"PIEH"
FRAME_SUFFIXES = (".pgm", ".png", ".ppm")


class FloError(ValueError):
    pass


class BadMagicError(FloError):
    pass


class TruncatedFloError(FloError):
    pass


class BadDimensionsError(FloError):
    pass


class FrameSizeError(ValueError):
    pass


# ------------------------------------------------------------ atomic write
@contextlib.contextmanager
def atomic_open(path, mode: str = "wb"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    with atomic_open(path, "w") as f:
        f.write(text)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_json(path):
    with open(path) as f:
        return json.load(f)


# ------------------------------------------------------------------- .flo
def flo_bytes(F) -> bytes:
    F = np.asarray(F)
    if F.ndim != 3 or F.shape[-1] != 2:
        raise BadDimensionsError(f"flow must be [H, W, 2], got {F.shape}")
    H, W = F.shape[:2]
    if H <= 0 or W <= 0:
        raise BadDimensionsError(f"nonpositive flow size {H}x{W}")
    if not np.all(np.isfinite(F)):
        raise FloError("flow has non-finite values")
    return FLO_TAG + np.array([W, H], "<i4").tobytes() + np.ascontiguousarray(F, "<f4").tobytes()


def parse_flo(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise TruncatedFloError(f"header needs 12 bytes, file has {len(buf)}")
    if buf[:4] != FLO_TAG:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {FLO_TAG!r}")
    W, H = (int(v) for v in np.frombuffer(buf, "<i4", 2, 4))
    if W <= 0 or H <= 0:
        raise BadDimensionsError(f"nonpositive flow size {H}x{W}")
    need = 12 + 8 * W * H
    if len(buf) < need:
        raise TruncatedFloError(f"expected {need} bytes for {H}x{W}, file has {len(buf)}")
    return np.frombuffer(buf, "<f4", 2 * W * H, 12).reshape(H, W, 2).astype(np.float32)


def write_flo(F, path) -> None:
    data = flo_bytes(F)
    with atomic_open(path) as f:
        f.write(data)


def read_flo(path) -> np.ndarray:
    """[H, W, 2] float32 flow from a Middlebury ``.flo`` file."""
    return parse_flo(Path(path).read_bytes())


# ------------------------------------------------------------------ frames
def _frame_key(p: Path):
    nums = re.findall(r"\d+", p.stem)
    return (int(nums[-1]) if nums else -1, p.name)


def read_image(path) -> np.ndarray:
    """[3, H, W] float image in [0, 1]; gray images are replicated to 3 channels."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, np.float64) / 65535.0
        elif im.mode == "L":
            a = np.asarray(im, np.float64) / 255.0
        else:
            a = np.asarray(im.convert("RGB"), np.float64) / 255.0
    if a.ndim == 2:
        return np.repeat(a[None], 3, axis=0)
    return np.moveaxis(a, -1, 0)


def load_sequence(directory, pattern: str = "*") -> StimulusSequence:
    """Numbered PGM/PNG frames sorted numerically into a StimulusSequence."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such frame directory: {d}")
    files = sorted((p for p in d.glob(pattern) if p.suffix.lower() in FRAME_SUFFIXES), key=_frame_key)
    if not files:
        raise FileNotFoundError(f"no PGM/PNG frames matching {pattern!r} in {d}")
    frames = []
    for p in files:
        img = read_image(p)
        if frames and img.shape != frames[0].shape:
            raise FrameSizeError(f"frame {p.name} is {img.shape[1]}x{img.shape[2]}, "
                                 f"expected {frames[0].shape[1]}x{frames[0].shape[2]}")
        frames.append(img)
    return StimulusSequence(np.stack(frames), meta={"source": str(d), "files": [p.name for p in files]})


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, float), 0, 1) * 255).astype(np.uint8)


def write_png(img, path) -> None:
    """Write [H, W], [H, W, 3] or [3, H, W] data in [0, 1] (or uint8) as PNG."""
    a = np.asarray(img)
    if a.ndim == 3 and a.shape[0] == 3 and a.shape[-1] != 3:
        a = np.moveaxis(a, 0, -1)
    if a.dtype != np.uint8:
        a = to_uint8(a)
    with atomic_open(path) as f:
        Image.fromarray(a).save(f, format="PNG")


def write_pgm(img, path) -> None:
    """Write a 2-D array as 8-bit binary PGM; boolean masks map to 0/255."""
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {a.shape}")
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    elif a.dtype != np.uint8:
        a = to_uint8(a)
    with atomic_open(path) as f:
        Image.fromarray(a, mode="L").save(f, format="PPM")


def load_flows(directory, pattern: str = "flow_*.flo") -> np.ndarray:
    """Numbered ``.flo`` files stacked to [T, H, W, 2]."""
    files = sorted(Path(directory).glob(pattern), key=_frame_key)
    if not files:
        raise FileNotFoundError(f"no flow files matching {pattern!r} in {directory}")
    flows = [read_flo(p) for p in files]
    for p, F in zip(files, flows):
        if F.shape != flows[0].shape:
            raise FrameSizeError(f"flow {p.name} is {F.shape[1]}x{F.shape[0]}, expected "
                                 f"{flows[0].shape[1]}x{flows[0].shape[0]}")
    return np.stack(flows)


def save_sequence(seq: StimulusSequence, directory, prefix: str = "frame") -> list[Path]:
    d = Path(directory)
    paths = []
    for t, fr in enumerate(seq.frames):
        p = d / f"{prefix}_{t:04d}.png"
        write_png(fr, p)
        paths.append(p)
    return paths


# --------------------------------------------------------- visualization
def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Vectorized HSV -> RGB, all inputs in [0, 1]; returns [..., 3]."""
    h = np.mod(h, 1.0) * 6.0
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros(np.shape(h) + (3,))
    for k, (r, g, b) in enumerate(table):
        sel = i == k
        out[sel] = np.stack([r[sel], g[sel], b[sel]], axis=-1)
    return out


def flow_direction_hue(F) -> np.ndarray:
    """Hue in [0, 1): the flow direction angle divided by 2*pi."""
    F = np.asarray(F, float)
    return np.mod(np.arctan2(F[..., 1], F[..., 0]) / (2 * np.pi), 1.0)


def flow_to_image(F, max_speed: float | None = None) -> np.ndarray:
    """[H, W, 3] uint8 color coding: hue = direction, saturation = speed / max speed.

    Value is fixed at 1, so zero flow renders white. ``max_speed`` defaults to
    the field's maximum speed.
    """
    F = np.asarray(F, float)
    if F.shape[-1] != 2:
        raise ValueError(f"flow must be [H, W, 2], got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError("flow has non-finite values")
    rad = np.hypot(F[..., 0], F[..., 1])
    m = rad.max(initial=0.0) if max_speed is None else float(max_speed)
    sat = np.clip(rad / m, 0, 1) if m > 0 else np.zeros_like(rad)
    rgb = hsv_to_rgb(flow_direction_hue(F), sat, np.ones_like(rad))
    return np.round(rgb * 255).astype(np.uint8)
