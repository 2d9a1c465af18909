"""Case directory I/O.

Layout: `<dir>/image.pgm` (binary P5, 16-bit big-endian), `<dir>/mask.pgm`
(binary P5, 8-bit, 0 or 255) and `<dir>/meta.json` with `id`, `spacing_mm`
and `dataset_tag`. Intensities are quantized to 16 bits, so a save/load
round trip is exact to 1/65535 per pixel.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CorruptCase, MissingFile
from .types import Image2D, LabeledCase, Mask


def _write_pgm(path: Path, samples: np.ndarray, maxval: int) -> None:
    h, w = samples.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        payload = samples.astype(">u2").tobytes()
    else:
        payload = samples.astype(np.uint8).tobytes()
    path.write_bytes(header + payload)


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    if not path.exists():
        raise MissingFile(f"missing {path}")
    data = path.read_bytes()
    # header: magic, width, height, maxval; '#' comments allowed per PGM spec
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        if pos >= len(data):
            raise CorruptCase(f"{path}: truncated PGM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise CorruptCase(f"{path}: truncated PGM comment")
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            fields.append(data[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise CorruptCase(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise CorruptCase(f"{path}: bad PGM header") from exc
    if w <= 0 or h <= 0 or maxval <= 0 or maxval > 65535:
        raise CorruptCase(f"{path}: bad PGM dimensions {w}x{h} maxval {maxval}")
    dtype = ">u2" if maxval > 255 else np.uint8
    expected = w * h * (2 if maxval > 255 else 1)
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise CorruptCase(f"{path}: expected {expected} sample bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(np.int64), maxval


def save_case(case: LabeledCase, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    quantized = np.round(case.image.intensities * 65535.0).astype(np.int64)
    _write_pgm(directory / "image.pgm", quantized, 65535)
    _write_pgm(directory / "mask.pgm", np.where(case.truth.bits, 255, 0), 255)
    meta = {
        "id": case.id,
        "spacing_mm": [case.image.spacing[0], case.image.spacing[1]],
        "dataset_tag": case.dataset_tag,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_case(directory) -> LabeledCase:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise MissingFile(f"missing {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        case_id = str(meta["id"])
        spacing = tuple(float(s) for s in meta["spacing_mm"])
        tag = str(meta.get("dataset_tag", ""))
        if len(spacing) != 2:
            raise KeyError("spacing_mm")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCase(f"{meta_path}: malformed metadata ({exc})") from exc

    img_samples, maxval = _read_pgm(directory / "image.pgm")
    mask_samples, _ = _read_pgm(directory / "mask.pgm")
    if img_samples.shape != mask_samples.shape:
        raise CorruptCase(
            f"{directory}: image {img_samples.shape} and mask {mask_samples.shape} dimensions differ"
        )
    image = Image2D(img_samples.astype(np.float64) / float(maxval), spacing=spacing)
    mask = Mask(mask_samples > 0)
    try:
        return LabeledCase(id=case_id, image=image, truth=mask, dataset_tag=tag)
    except Exception as exc:
        raise CorruptCase(f"{directory}: {exc}") from exc
