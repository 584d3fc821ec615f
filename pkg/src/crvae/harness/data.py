"""Image I/O (binary PPM, optional PNG), the synthetic two-blob corpus, and batching."""
from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

MANIFEST = "manifest.json"


class ImageFormatError(ValueError):
    """Malformed or inconsistent image file."""


# --- PPM -----------------------------------------------------------------------------------

def encode_ppm(img: np.ndarray) -> bytes:
    """``img`` is uint8 ``[H,W,3]`` (P6) or ``[H,W]`` (P5)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    elif img.ndim == 2:
        magic = b"P5"
    else:
        raise ImageFormatError(f"cannot write image of shape {img.shape} as PPM/PGM")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + img.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


def decode_ppm(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    """Parse binary P6 (or P5); returns uint8 ``[H,W,3]`` (``[H,W]`` for P5)."""
    pos = 0

    def token() -> tuple[bytes, int]:
        nonlocal pos
        while pos < len(buf):
            ch = buf[pos:pos + 1]
            if ch == b"#":
                while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{source}: truncated header at byte {start}")
        return buf[start:pos], start

    magic, _ = token()
    if magic not in (b"P6", b"P5"):
        raise ImageFormatError(f"{source}: bad magic {magic[:8]!r} at byte 0 (expected P6)")
    values = []
    for label in ("width", "height", "maxval"):
        tok, at = token()
        if not tok.isdigit():
            raise ImageFormatError(f"{source}: {label} {tok[:16]!r} at byte {at} is not a number")
        values.append(int(tok))
    w, h, maxval = values
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"{source}: empty image {w}x{h}")
    if maxval != 255:
        raise ImageFormatError(f"{source}: maxval {maxval} unsupported (only 255)")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError(f"{source}: missing whitespace after header at byte {pos}")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    if len(buf) - pos < need:
        raise ImageFormatError(f"{source}: pixel data truncated at byte {len(buf)}; expected {need} bytes from byte {pos}")
    if len(buf) - pos > need:
        raise ImageFormatError(f"{source}: {len(buf) - pos - need} trailing bytes after pixel data at byte {pos + need}")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(h, w, 3) if channels == 3 else data.reshape(h, w)


def read_ppm(path) -> np.ndarray:
    p = Path(path)
    return decode_ppm(p.read_bytes(), str(p))


def read_image(path) -> np.ndarray:
    """uint8 ``[H,W,3]``; PNG needs Pillow."""
    p = Path(path)
    if p.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError:
            raise ImageFormatError(f"{p}: PNG support needs Pillow") from None
        with Image.open(p) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    img = read_ppm(p)
    return np.repeat(img[:, :, None], 3, axis=2) if img.ndim == 2 else img


def to_unit(img_u8: np.ndarray) -> np.ndarray:
    """uint8 ``[...,H,W,C]`` -> float32 ``[...,C,H,W]`` in [-1, 1]."""
    x = img_u8.astype(np.float32) * np.float32(2.0 / 255.0) - np.float32(1.0)
    return np.moveaxis(x, -1, -3)


def to_bytes(x: np.ndarray) -> np.ndarray:
    """float ``[...,C,H,W]`` in [-1, 1] -> uint8 ``[...,H,W,C]``."""
    y = np.clip((np.asarray(x, dtype=np.float64) + 1.0) * 127.5, 0, 255)
    return np.moveaxis(np.rint(y).astype(np.uint8), -3, -1)


# --- synthetic corpus ----------------------------------------------------------------------

@dataclass
class SyntheticCorpusSpec:
    n_images: int = 2000
    image_size: int = 32
    seed: int = 7
    generator: str = "two-blob"

    def __post_init__(self):
        if self.generator != "two-blob":
            raise ValueError(f"unknown corpus generator {self.generator!r}")
        if self.n_images < 0 or self.image_size < 4:
            raise ValueError(f"bad corpus size n={self.n_images}, image_size={self.image_size}")

    @classmethod
    def load(cls, path) -> "SyntheticCorpusSpec":
        return cls(**json.loads(Path(path).read_text()))


def render_blobs(rng: np.random.Generator, size: int) -> tuple[np.ndarray, dict]:
    """One image (float RGB in [0,1], ``[H,W,3]``) with 1-2 soft-edged axis-aligned ellipses."""
    shade = float(rng.uniform(0.1, 0.9))
    img = np.full((size, size, 3), shade)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    blobs = []
    for _ in range(int(rng.integers(1, 3))):
        cx, cy = (float(v) for v in rng.uniform(0.2 * size, 0.8 * size, 2))
        rx, ry = (float(v) for v in rng.uniform(0.1 * size, 0.3 * size, 2))
        hue = float(rng.uniform(0, 1))
        color = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95))
        r = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
        alpha = 1.0 / (1.0 + np.exp((r - 1.0) * rx / 1.0))  # ~1 pixel soft edge
        img = img * (1 - alpha[..., None]) + color * alpha[..., None]
        blobs.append({"cx": cx, "cy": cy, "rx": rx, "ry": ry, "hue": hue})
    return img, {"background": shade, "blobs": blobs}


def generate_images(spec: SyntheticCorpusSpec) -> tuple[np.ndarray, list]:
    """uint8 ``[N,H,W,3]`` plus per-image factors, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    imgs = np.zeros((spec.n_images, spec.image_size, spec.image_size, 3), dtype=np.uint8)
    factors = []
    for k in range(spec.n_images):
        img, f = render_blobs(rng, spec.image_size)
        imgs[k] = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)
        factors.append(f)
    return imgs, factors


def generate_corpus(spec: SyntheticCorpusSpec, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        imgs, factors = generate_images(spec)
        names = []
        for k, img in enumerate(imgs):
            name = f"img_{k:05d}.ppm"
            write_ppm(out / name, img)
            names.append(name)
        manifest = {"spec": asdict(spec), "images": [{"file": n, **f} for n, f in zip(names, factors)]}
        (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    except OSError as e:
        raise OSError(f"writing corpus to {out}: {e}") from e
    return out


# --- datasets ------------------------------------------------------------------------------

class Dataset:
    """In-memory images in [-1, 1], ``[N,C,H,W]`` float32."""

    def __init__(self, images: np.ndarray, files: list | None = None):
        self.images = images
        self.files = files or []

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def batches(self, batch_size: int, rng: np.random.Generator, flip: bool = False) -> Iterator[np.ndarray]:
        """One epoch of shuffled full batches; flips are drawn from ``rng`` too, so the
        order depends only on the generator state."""
        if batch_size > len(self):
            raise ValueError(f"batch size {batch_size} exceeds dataset size {len(self)}")
        order = rng.permutation(len(self))
        for start in range(0, len(self) - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            batch = self.images[idx]
            if flip:
                flips = rng.random(batch_size) < 0.5
                batch = np.where(flips[:, None, None, None], batch[..., ::-1], batch)
            yield np.ascontiguousarray(batch)


def load_dataset(directory, normalize: bool = True) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".ppm", ".png"))
    if not files:
        raise ImageFormatError(f"{d}: no .ppm or .png images")
    imgs = []
    for p in files:
        img = read_image(p)
        if imgs and img.shape != imgs[0].shape:
            raise ImageFormatError(f"{p}: size {img.shape[1]}x{img.shape[0]} differs from "
                                   f"{imgs[0].shape[1]}x{imgs[0].shape[0]} of {files[0].name}")
        imgs.append(img)
    arr = np.stack(imgs)
    images = to_unit(arr) if normalize else np.moveaxis(arr, -1, -3).astype(np.float32)
    return Dataset(np.ascontiguousarray(images), [p.name for p in files])
