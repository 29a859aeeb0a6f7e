"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import Label


class NetpbmError(ValueError):
    pass


def _read_header(data: bytes, path) -> tuple:
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise NetpbmError(f"{path}: truncated header")
        fields.append(data[start:pos])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise NetpbmError(f"{path}: header must end with a single whitespace byte")
    pos += 1
    magic = fields[0].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise NetpbmError(f"{path}: wrong magic {magic!r}, expected P5 or P6")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise NetpbmError(f"{path}: malformed header fields {fields[1:]}") from None
    if width < 1 or height < 1:
        raise NetpbmError(f"{path}: invalid size {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"{path}: maxval must be 255, got {maxval}")
    return magic, width, height, pos


def read_pnm(path) -> tuple:
    """Return ``(magic, pixels, data_offset)``; pixels are ``(H, W)`` for P5, ``(H, W, 3)`` for P6, uint8."""
    data = Path(path).read_bytes()
    magic, width, height, offset = _read_header(data, path)
    channels = 3 if magic == "P6" else 1
    need = width * height * channels
    body = data[offset:]
    if len(body) != need:
        raise NetpbmError(f"{path}: expected {need} pixel bytes, found {len(body)}")
    px = np.frombuffer(body, dtype=np.uint8)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return magic, px.reshape(shape), offset


def write_pnm(path, pixels: np.ndarray) -> None:
    px = np.asarray(pixels, dtype=np.uint8)
    if px.ndim == 3 and px.shape[2] == 3:
        magic = b"P6"
    elif px.ndim == 2:
        magic = b"P5"
    else:
        raise NetpbmError(f"cannot write pixel array of shape {px.shape}")
    h, w = px.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(px).tobytes())


def load_image(path) -> np.ndarray:
    """RGB image as a ``(3, H, W)`` float array in [0, 1]."""
    magic, px, _ = read_pnm(path)
    if magic != "P6":
        raise NetpbmError(f"{path}: expected a P6 colour image, got {magic}")
    return px.transpose(2, 0, 1).astype(np.float64) / 255.0


def save_image(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    write_pnm(path, np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0))


def load_scribble(path) -> np.ndarray:
    """Scribble labels (``Label`` codes, uint8) decoded from 0 / 255 / 128 bytes."""
    magic, px, offset = read_pnm(path)
    if magic != "P5":
        raise NetpbmError(f"{path}: expected a P5 scribble map, got {magic}")
    bad = ~np.isin(px, (0, 128, 255))
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NetpbmError(f"{path}: illegal scribble byte {int(px.reshape(-1)[idx])} at pixel offset {idx} "
                          f"(file offset {offset + idx})")
    out = np.zeros(px.shape, dtype=np.uint8)
    out[px == 255] = Label.FOREGROUND
    out[px == 128] = Label.BACKGROUND
    return out


def save_scribble(path, labels: np.ndarray) -> None:
    lab = np.asarray(labels)
    px = np.zeros(lab.shape, dtype=np.uint8)
    px[lab == Label.FOREGROUND] = 255
    px[lab == Label.BACKGROUND] = 128
    write_pnm(path, px)


def load_mask(path) -> np.ndarray:
    """Binary ground truth as uint8 {0, 1} (bytes >= 128 are foreground)."""
    magic, px, _ = read_pnm(path)
    if magic != "P5":
        raise NetpbmError(f"{path}: expected a P5 mask, got {magic}")
    return (px >= 128).astype(np.uint8)


def save_mask(path, mask: np.ndarray) -> None:
    write_pnm(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def load_map(path) -> np.ndarray:
    """Saliency map as float values in [0, 1]."""
    magic, px, _ = read_pnm(path)
    if magic != "P5":
        raise NetpbmError(f"{path}: expected a P5 saliency map, got {magic}")
    return px.astype(np.float64) / 255.0


def save_map(path, saliency: np.ndarray) -> None:
    v = np.asarray(saliency, dtype=np.float64)
    v = v.reshape(v.shape[-2:])
    write_pnm(path, np.round(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8))
