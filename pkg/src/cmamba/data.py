"""Image file I/O and the synthetic toy corpus used for desk-scale training."""
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

__all__ = ["IMAGE_SUFFIXES", "load_image", "save_png", "list_images", "load_dataset", "toy_corpus"]

IMAGE_SUFFIXES = (".png", ".ppm")


def load_image(path) -> np.ndarray:
    """Read a PNG or PPM file as an ``(H, W, 3)`` uint8 array."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ValueError(f"{path}: unsupported image type (expected PNG or PPM)")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(path, image: np.ndarray):
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(Path(path), format="PNG")


def list_images(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(directory, min_size: int = 0) -> List[np.ndarray]:
    """All images in ``directory``; images smaller than ``min_size`` are skipped."""
    images = [load_image(p) for p in list_images(directory)]
    return [im for im in images if min(im.shape[:2]) >= min_size]


def toy_corpus(count: int = 32, size: int = 64, seed: int = 0) -> List[np.ndarray]:
    """Smooth synthetic scenes: a colour gradient with a few flat ellipses and
    rectangles with soft edges, plus mild texture. Cheap to learn, yet not
    constant."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    softness = size / 4.0
    images = []
    for _ in range(count):
        c0, c1, c2 = rng.uniform(0, 1, (3, 3))
        angle = rng.uniform(0, 2 * np.pi)
        t = 0.5 + 0.5 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)) * 1.4
        img = c0 * (1 - t)[..., None] + c1 * t[..., None]
        for _ in range(rng.integers(2, 5)):
            cx, cy = rng.uniform(0.1, 0.9, 2)
            rx, ry = rng.uniform(0.08, 0.3, 2)
            colour = rng.uniform(0, 1, 3)
            if rng.random() < 0.5:
                dist = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
            else:
                dist = np.maximum(np.abs(xx - cx) / rx, np.abs(yy - cy) / ry)
            # soft edge a few pixels wide
            alpha = 1.0 / (1.0 + np.exp((dist - 1.0) * softness))[..., None]
            img = (1 - alpha) * img + alpha * colour
        freq = rng.uniform(4, 12)
        img += 0.04 * np.sin(2 * np.pi * freq * (xx + yy))[..., None] * c2
        img += rng.normal(0, 0.01, img.shape)
        images.append((np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8))
    return images
