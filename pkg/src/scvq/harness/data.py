"""Synthetic image generation and binary PPM (P6) I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_SUPERSAMPLE = 4


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM output needs an (H, W, 3) uint8 array")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _tokens(buf: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        out.append(buf[start:pos])
    return out, pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file with maxval 255 into an (H, W, 3) uint8 array."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(buf, 4, 0)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * 3
    if len(buf) - pos < need:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3).copy()


def _coverage_grid(size: int):
    s = _SUPERSAMPLE
    c = (np.arange(size * s) + 0.5) / s
    return np.meshgrid(c, c, indexing="ij")


def _downsample(mask: np.ndarray, size: int) -> np.ndarray:
    s = _SUPERSAMPLE
    return mask.reshape(size, s, size, s).mean(axis=(1, 3))


def synth_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """One image: gradient or flat background plus anti-aliased ellipses/rectangles."""
    yy, xx = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    c0, c1 = rng.uniform(0, 255, 3), rng.uniform(0, 255, 3)
    if rng.random() < 0.6:
        ang = rng.uniform(0, 2 * np.pi)
        t = (np.cos(ang) * xx + np.sin(ang) * yy) / size
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        img = c0 * (1 - t[..., None]) + c1 * t[..., None]
    else:
        img = np.broadcast_to(c0, (size, size, 3)).copy()

    sy, sx = _coverage_grid(size)
    for _ in range(rng.integers(2, 5)):
        color = rng.uniform(0, 255, 3)
        cy, cx = rng.uniform(0.1, 0.9, 2) * size
        ry, rx = rng.uniform(0.1, 0.35, 2) * size
        theta = rng.uniform(0, np.pi)
        dy, dx = sy - cy, sx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        if rng.random() < 0.5:
            mask = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        else:
            mask = (np.abs(u) <= rx) & (np.abs(v) <= ry)
        alpha = _downsample(mask.astype(np.float64), size)[..., None]
        img = img * (1 - alpha) + color * alpha
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint32)[0])


def synth_dataset(n_images: int, size: int, seed: int) -> np.ndarray:
    """(n, size, size, 3) uint8, image i drawn from its own derived seed."""
    return np.stack([synth_image(size, np.random.default_rng(image_seed(seed, i)))
                     for i in range(n_images)])


def gen_data(n_images: int, size: int, seed: int, out_dir, factor: int = 8) -> list[Path]:
    """Write ``n_images`` synthetic PPMs plus ``manifest.txt`` (file name, image seed)."""
    if size % factor:
        raise ValueError(f"image size {size} is not a multiple of the codec factor {factor}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    lines = []
    for i in range(n_images):
        s = image_seed(seed, i)
        p = out / f"img_{i:05d}.ppm"
        write_ppm(p, synth_image(size, np.random.default_rng(s)))
        paths.append(p)
        lines.append(f"{p.name} {s}\n")
    (out / "manifest.txt").write_text("".join(lines))
    return paths


def load_dir(path) -> np.ndarray:
    """All ``*.ppm`` files in a directory (sorted by name) as an (N, H, W, 3) uint8 stack."""
    files = sorted(Path(path).glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"no .ppm files in {path}")
    imgs = [read_ppm(f) for f in files]
    if len({im.shape for im in imgs}) != 1:
        raise ValueError(f"images in {path} have differing sizes")
    return np.stack(imgs)
