"""Regenerate the committed fixtures under configs/data.

The outputs are committed; this script only documents how they were made.
Run from the repository root: ``python3 scripts/make_fixtures.py``.
"""
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from gaussdiff.adsn import write_png
from gaussdiff.deblur import BlurKernel, save_kernel

DATA = Path(__file__).resolve().parent.parent / "configs" / "data"


def texture(rng, size=64):
    # colored stationary noise plus a faint oriented stripe pattern
    noise = gaussian_filter(rng.standard_normal((3, size, size)), (0, 1.5, 3.0), mode="wrap")
    mix = np.array([[0.9, 0.3, 0.1], [0.4, 0.8, 0.2], [0.1, 0.3, 0.7]])
    img = np.einsum("ij,jmn->imn", mix, noise)
    yy, xx = np.mgrid[0:size, 0:size]
    stripes = 0.08 * np.sin(2 * np.pi * (3 * xx + 5 * yy) / size)
    img = 0.5 + 1.2 * img + stripes * np.array([1.0, 0.6, 0.2])[:, None, None]
    return np.clip(img, 0.0, 1.0)


def motion_kernel(rng, size, steps, inertia):
    # random walk with momentum, rasterized with bilinear splatting
    pos = np.zeros(2)
    vel = rng.standard_normal(2)
    vel /= np.linalg.norm(vel)
    path = [pos.copy()]
    for _ in range(steps):
        vel = inertia * vel + (1 - inertia) * rng.standard_normal(2)
        vel /= np.linalg.norm(vel)
        pos = pos + 0.5 * vel
        path.append(pos.copy())
    path = np.array(path)
    path -= path.mean(axis=0)
    path += (size - 1) / 2
    w = np.zeros((size, size))
    for y, x in path:
        i0, j0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - i0, x - j0
        for di, dj, wt in ((0, 0, (1 - fy) * (1 - fx)), (1, 0, fy * (1 - fx)),
                           (0, 1, (1 - fy) * fx), (1, 1, fy * fx)):
            i, j = i0 + di, j0 + dj
            if 0 <= i < size and 0 <= j < size:
                w[i, j] += wt
    w /= w.sum()
    return BlurKernel(w, ((size - 1) // 2, (size - 1) // 2))


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240501)
    write_png(DATA / "texture64.png", texture(rng))
    write_png(DATA / "tiny4x4.png", rng.uniform(0.1, 0.9, size=(3, 4, 4)))
    save_kernel(DATA / "motion_kernel_1.txt", motion_kernel(rng, 15, 24, 0.9))
    save_kernel(DATA / "motion_kernel_2.txt", motion_kernel(rng, 21, 40, 0.7))


if __name__ == "__main__":
    main()
