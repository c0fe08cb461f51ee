"""Regenerate the small natural-image fixture corpus used by the test suites.

Sources are the sample images bundled with scikit-image (public domain / CC0).
Each source is area-downscaled by 2, cut into 64x64 cells, and the most
textured cells are kept. Train and validation tiles come from disjoint cells.
"""
import os
import sys

import numpy as np
from PIL import Image
from skimage import data

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "crates", "bsr", "tests", "fixtures")
SOURCES = ["astronaut", "coffee", "chelsea", "rocket", "camera", "grass", "brick", "coins", "gravel", "immunohistochemistry"]
CELL = 64


def load(name):
    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = img[..., :3].astype(np.float64)
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    img = img[:h, :w].reshape(h // 2, 2, w // 2, 2, 3).mean(axis=(1, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def save(arr, path):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    Image.fromarray(arr).save(path, optimize=True)


def main():
    for name in SOURCES:
        img = load(name)
        cells = []
        for y in range(0, img.shape[0] - CELL + 1, CELL):
            for x in range(0, img.shape[1] - CELL + 1, CELL):
                tile = img[y:y + CELL, x:x + CELL]
                cells.append((float(tile.astype(np.float64).std()), y, x))
        cells.sort(reverse=True)
        picked = cells[:7]
        for rank, (_, y, x) in enumerate(picked):
            split = "val" if rank in (2, 5) else "train"
            save(img[y:y + CELL, x:x + CELL], os.path.join(ROOT, "desk", split, f"{name}_{y:03d}_{x:03d}.png"))
    for name in ["astronaut", "coffee", "chelsea", "rocket", "camera", "coins"]:
        img = load(name)
        h, w = img.shape[:2]
        y, x = (h - 128) // 2, (w - 128) // 2
        save(img[y:y + 128, x:x + 128], os.path.join(ROOT, "pyramid", f"{name}.png"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
