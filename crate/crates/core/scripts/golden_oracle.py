#!/usr/bin/env python3
"""Reference image kernels used to produce the committed golden files.

This is a separate, vectorised numpy implementation of the fifteen
operations. Where an operation coincides with Pillow's definition (Invert,
Solarize, Posterize, Equalize) the output is also checked against Pillow.

Usage: python3 golden_oracle.py <output dir>
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

MASK = (1 << 64) - 1
FILL = 128
OPS = [
    "ShearX", "ShearY", "TranslateX", "TranslateY", "Rotate", "AutoContrast",
    "Invert", "Equalize", "Solarize", "Posterize", "Contrast", "Color",
    "Brightness", "Sharpness", "Cutout",
]


def splitmix64(x):
    z = (x + 0x9E3779B97F4A7C15) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def child(seed, i):
    return splitmix64(seed ^ (0xC0FFEE00 + i))


def sign(seed):
    return -1.0 if splitmix64(seed) & 1 else 1.0


def unit(seed, k):
    return (splitmix64((seed + k) & MASK) >> 11) / float(1 << 53)


def magnitude(op, level):
    t = level / 4.0
    lerp = lambda lo, hi: lo + (hi - lo) * t
    return {
        "ShearX": lerp(0.0, 0.3), "ShearY": lerp(0.0, 0.3),
        "TranslateX": lerp(0.0, 0.33), "TranslateY": lerp(0.0, 0.33),
        "Rotate": lerp(0.0, 30.0),
        "Solarize": 256.0 - 64.0 * level, "Posterize": 8.0 - level,
        "Contrast": lerp(0.0, 0.9), "Color": lerp(0.0, 0.9),
        "Brightness": lerp(0.0, 0.9), "Sharpness": lerp(0.0, 0.9),
        "Cutout": lerp(0.0, 0.5),
    }.get(op, 0.0)


def quantize(v):
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def bilinear(img, sy, sx):
    h, w, _ = img.shape
    padded = np.full((h + 4, w + 4, 3), float(FILL))
    padded[2:-2, 2:-2] = img
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    def tap(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yy = np.clip(yy, -2, h + 1) + 2
        xx = np.clip(xx, -2, w + 1) + 2
        v = padded[yy, xx]
        return np.where(inside[..., None], v, float(FILL))

    top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx
    bottom = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx
    return quantize(top * (1.0 - fy) + bottom * fy)


def grid(img):
    h, w, _ = img.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    return ys, xs, (h - 1) / 2.0, (w - 1) / 2.0


def luma(img):
    i = img.astype(np.int64)
    return (299 * i[..., 0] + 587 * i[..., 1] + 114 * i[..., 2] + 500) // 1000


def blend(img, degenerate, factor):
    return quantize(degenerate + factor * (img.astype(float) - degenerate))


def shift(img, dy, dx):
    h, w, _ = img.shape
    out = np.full_like(img, FILL)
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    yt = slice(max(-dy, 0), min(h - dy, h))
    xt = slice(max(-dx, 0), min(w - dx, w))
    if ys.start < ys.stop and xs.start < xs.stop:
        out[ys, xs] = img[yt, xt]
    return out


def equalize_channel(ch):
    hist = np.bincount(ch.ravel(), minlength=256)
    nonzero = hist[hist > 0]
    step = (int(hist.sum()) - int(nonzero[-1])) // 255
    if step == 0:
        return ch
    cum = np.concatenate([[0], np.cumsum(hist)[:-1]])
    lut = np.minimum((step // 2 + cum) // step, 255).astype(np.uint8)
    return lut[ch]


def autocontrast_channel(ch):
    lo, hi = int(ch.min()), int(ch.max())
    if hi <= lo:
        return ch
    span = hi - lo
    return (((ch.astype(np.int64) - lo) * 510 + span) // (2 * span)).astype(np.uint8)


def smooth(img):
    i = img.astype(np.int64)
    out = i.astype(float)
    h, w, _ = img.shape
    acc = np.zeros((h - 2, w - 2, 3), dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            acc += i[dy:dy + h - 2, dx:dx + w - 2]
    acc += 4 * i[1:-1, 1:-1]
    out[1:-1, 1:-1] = (acc + 6) // 13
    return out


def apply_op(img, op, level, seed):
    m = magnitude(op, level)
    s = sign(seed)
    h, w, _ = img.shape
    if op in ("ShearX", "ShearY", "Rotate"):
        ys, xs, cy, cx = grid(img)
        if op == "ShearX":
            return bilinear(img, ys, xs + (s * m) * (ys - cy))
        if op == "ShearY":
            return bilinear(img, ys + (s * m) * (xs - cx), xs)
        theta = math.radians(s * m)
        sin, cos = math.sin(theta), math.cos(theta)
        dy, dx = ys - cy, xs - cx
        return bilinear(img, -sin * dx + cos * dy + cy, cos * dx + sin * dy + cx)
    if op == "TranslateX":
        return shift(img, 0, int(s) * int(math.floor(m * w + 0.5)))
    if op == "TranslateY":
        return shift(img, int(s) * int(math.floor(m * h + 0.5)), 0)
    if op == "AutoContrast":
        return np.stack([autocontrast_channel(img[..., c]) for c in range(3)], axis=-1)
    if op == "Invert":
        return 255 - img
    if op == "Equalize":
        return np.stack([equalize_channel(img[..., c]) for c in range(3)], axis=-1)
    if op == "Solarize":
        return np.where(img.astype(int) >= int(m), 255 - img, img).astype(np.uint8)
    if op == "Posterize":
        return img & np.uint8((0xFF << (8 - int(m))) & 0xFF)
    factor = 1.0 + s * m
    if op == "Contrast":
        mean = math.floor(int(luma(img).sum()) / (h * w) + 0.5)
        return blend(img, np.full(img.shape, float(mean)), factor)
    if op == "Color":
        return blend(img, np.repeat(luma(img)[..., None], 3, axis=-1).astype(float), factor)
    if op == "Brightness":
        return blend(img, np.zeros(img.shape), factor)
    if op == "Sharpness":
        return blend(img, smooth(img), factor)
    if op == "Cutout":
        side = int(math.floor(m * min(h, w) + 0.5))
        out = img.copy()
        if side <= 0:
            return out
        cy = int(math.floor(unit(seed, 1) * h))
        cx = int(math.floor(unit(seed, 2) * w))
        y0, x0 = cy - side // 2, cx - side // 2
        out[max(y0, 0):min(y0 + side, h), max(x0, 0):min(x0 + side, w)] = FILL
        return out
    raise ValueError(op)


def apply_policy(img, first, second, seed):
    a = apply_op(img, first[0], first[1], child(seed, 0))
    return apply_op(a, second[0], second[1], child(seed, 1))


def pillow_check(img, op, level, out):
    try:
        from PIL import Image, ImageOps
    except ImportError:
        return
    pil = Image.fromarray(img, "RGB")
    if op == "Invert":
        ref = ImageOps.invert(pil)
    elif op == "Solarize":
        ref = ImageOps.solarize(pil, int(magnitude(op, level)))
    elif op == "Posterize":
        ref = ImageOps.posterize(pil, int(magnitude(op, level)))
    elif op == "Equalize":
        ref = ImageOps.equalize(pil)
    else:
        return
    assert np.array_equal(np.asarray(ref), out), f"Pillow disagrees on {op}@L{level}"


def fixture(h, w, salt):
    """Gradient plus splitmix noise, with a saturated corner block."""
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    noise = np.array(
        [splitmix64(salt * 1_000_003 + k) & 0xFF for k in range(h * w * 3)], dtype=np.int64
    ).reshape(h, w, 3)
    base = np.stack([ys * 255 // (h - 1), xs * 255 // (w - 1), (ys + xs) * 127 // (h + w - 2)], -1)
    img = (base * 3 + noise) // 4
    img[: h // 4, : w // 4] = [250, 10, 128]
    return img.astype(np.uint8)


def write_ppm(path, img):
    h, w, _ = img.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def main():
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    fixtures = {"fixture_a": fixture(8, 8, 1), "fixture_b": fixture(12, 10, 2)}
    manifest = {"fixtures": {}, "ops": [], "policies": []}
    for name, img in fixtures.items():
        write_ppm(out / f"{name}.ppm", img)
        manifest["fixtures"][name] = f"{name}.ppm"
    for f_index, (name, img) in enumerate(fixtures.items()):
        for k, op in enumerate(OPS):
            for level in range(5):
                seed = 1000 * f_index + 5 * k + level
                result = apply_op(img, op, level, seed)
                pillow_check(img, op, level, result)
                file = f"{name}_{op}_L{level}.ppm"
                write_ppm(out / file, result)
                manifest["ops"].append(
                    {"fixture": name, "op": op, "level": level, "seed": seed, "file": file}
                )
    policy = (("Rotate", 2), ("Brightness", 3))
    for name, img in fixtures.items():
        seed = 7
        file = f"{name}_policy_Rotate@L2+Brightness@L3.ppm"
        write_ppm(out / file, apply_policy(img, *policy, seed))
        manifest["policies"].append(
            {"fixture": name, "policy": "Rotate@L2+Brightness@L3", "seed": seed, "file": file}
        )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


if __name__ == "__main__":
    main()
