"""Procedural texture datasets for desk-scale training and protocol tests.

Each synthetic "individual" is a class of oriented sinusoid textures with a
fixed orientation/frequency/color signature; images of the same individual
vary in phase, brightness, and noise. Source-image datasets embed the
canonical texture under a random similarity transform and record the
matching landmark positions, exercising the full align -> embed pipeline.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .align import LandmarkSet, save_image, write_landmark_csv

CROP_W, CROP_H = 96, 112

# base landmark triple in crop coordinates (left eye, right eye, mouth)
BASE_POINTS = np.array([[28.0, 48.0], [68.0, 48.0], [48.0, 88.0]])

SOURCE_W, SOURCE_H = 192, 208

# capture conditions shared across all classes (lighting analogue): each
# image is shot under one of these, so larger templates cover more of them
N_CONDITIONS = 6


def class_params(num_classes: int, seed: int = 0) -> list[dict]:
    """Per-class texture signatures: orientation, frequencies, color mix."""
    rng = np.random.default_rng([seed, 1])
    out = []
    for c in range(num_classes):
        theta = math.pi * c / num_classes + rng.uniform(-0.05, 0.05)
        out.append({
            "theta": theta,
            "freq": 3.0 + 1.25 * (c % 7) + rng.uniform(-0.2, 0.2),
            "freq2": 2.0 + 1.5 * ((c * 3) % 5) + rng.uniform(-0.2, 0.2),
            "mix": 0.35 + 0.4 * ((c * 7) % 4) / 4.0,
            "tint": rng.uniform(-0.35, 0.35, size=3),
        })
    return out


def condition_params(seed: int = 0) -> list[dict]:
    """Global capture conditions: brightness, gamma, color cast, light band."""
    rng = np.random.default_rng([seed, 9])
    out = []
    for k in range(N_CONDITIONS):
        out.append({
            "brightness": -30 + 12.0 * k,
            "gamma": 0.72 + 0.15 * k,
            "cast": rng.uniform(-18, 18, size=3),
            "band_phi": math.pi * k / N_CONDITIONS,
            "band_freq": 0.8 + 0.25 * k,
            "band_amp": 26.0,
        })
    return out


def _apply_condition(img: np.ndarray, cond: dict, xs: np.ndarray,
                     ys: np.ndarray) -> np.ndarray:
    """Condition transform in crop-frame coordinates, float in/out."""
    ct, st = math.cos(cond["band_phi"]), math.sin(cond["band_phi"])
    band = cond["band_amp"] * np.sin(
        2 * math.pi * cond["band_freq"] * (xs * ct + ys * st) / CROP_W)
    out = np.clip(img, 0, 255) / 255.0
    out = np.power(out, cond["gamma"]) * 255.0
    out += cond["brightness"] + band[..., None]
    out += cond["cast"]
    return out


def _pattern(params: dict, xs: np.ndarray, ys: np.ndarray,
             phase: float, phase2: float) -> np.ndarray:
    """Texture value in [-1, 1] at the given crop-frame coordinates."""
    ct, st = math.cos(params["theta"]), math.sin(params["theta"])
    along = xs * ct + ys * st
    across = -xs * st + ys * ct
    v = np.sin(2 * math.pi * params["freq"] * along / CROP_W + phase)
    v += params["mix"] * np.sin(2 * math.pi * params["freq2"] * across / CROP_W + phase2)
    return v / (1.0 + params["mix"])


def _colorize(value: np.ndarray, params: dict, rng: np.random.Generator) -> np.ndarray:
    brightness = rng.uniform(-8, 8)
    amp = rng.uniform(52, 64)
    img = np.empty(value.shape + (3,), dtype=np.float64)
    for ch in range(3):
        img[..., ch] = 127.5 + brightness + amp * (value + params["tint"][ch])
    return img


def render_crop(params: dict, rng: np.random.Generator,
                cond: dict | None = None) -> np.ndarray:
    """One canonical-frame (112, 96, 3) texture image."""
    ys, xs = np.mgrid[0:CROP_H, 0:CROP_W].astype(np.float64)
    value = _pattern(params, xs, ys, rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi))
    img = _colorize(value, params, rng)
    if cond is not None:
        img = _apply_condition(img, cond, xs, ys)
    img += rng.normal(0, 5.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def aligned_texture_dataset(num_classes: int = 10, per_class: int = 40,
                            seed: int = 0, with_conditions: bool = True
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Pre-aligned crops: (n, 112, 96, 3) uint8 plus integer labels."""
    classes = class_params(num_classes, seed)
    conditions = condition_params(seed) if with_conditions else None
    crops = np.empty((num_classes * per_class, CROP_H, CROP_W, 3), dtype=np.uint8)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    i = 0
    for c, params in enumerate(classes):
        for k in range(per_class):
            rng = np.random.default_rng([seed, 2, c, k])
            cond = conditions[int(rng.integers(N_CONDITIONS))] if conditions else None
            crops[i] = render_crop(params, rng, cond)
            labels[i] = c
            i += 1
    return crops, labels


def _random_transform(rng: np.random.Generator) -> tuple[float, float, float, float]:
    """(a, b, mx, my) mapping crop coordinates into the source canvas."""
    s = rng.uniform(0.9, 1.25)
    theta = rng.uniform(-0.18, 0.18)
    a, b = s * math.cos(theta), s * math.sin(theta)
    mx = 24 + rng.uniform(-6, 6) + 14 * abs(b)
    my = 18 + rng.uniform(-6, 6)
    return a, b, mx, my


def source_image_dataset(root: str | Path, num_classes: int = 12, per_class: int = 8,
                         seed: int = 0, species: str = "lemur") -> Path:
    """Write source PNGs, a landmark CSV, and a JSON manifest under ``root``.

    Each source image shows its class texture under a random similarity
    transform; landmarks sit at the transformed base triple. Returns the
    manifest path.
    """
    root = Path(root)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    classes = class_params(num_classes, seed)
    conditions = condition_params(seed)
    ys, xs = np.mgrid[0:SOURCE_H, 0:SOURCE_W].astype(np.float64)
    manifest = []
    landmark_rows = []
    for c, params in enumerate(classes):
        for k in range(per_class):
            rng = np.random.default_rng([seed, 3, c, k])
            a, b, mx, my = _random_transform(rng)
            s2 = a * a + b * b
            # crop-frame coordinates of each source pixel (inverse transform)
            cx = (a * (xs - mx) + b * (ys - my)) / s2
            cy = (-b * (xs - mx) + a * (ys - my)) / s2
            value = _pattern(params, cx, cy,
                             rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi))
            img = _colorize(value, params, rng)
            img = _apply_condition(img, conditions[int(rng.integers(N_CONDITIONS))], cx, cy)
            img += rng.normal(0, 5.0, size=img.shape)
            img = np.clip(img, 0, 255).astype(np.uint8)
            pts = np.stack([a * BASE_POINTS[:, 0] - b * BASE_POINTS[:, 1] + mx,
                            b * BASE_POINTS[:, 0] + a * BASE_POINTS[:, 1] + my], axis=1)
            name = f"ind{c:03d}_{k:03d}.png"
            save_image(img, img_dir / name)
            rel = f"images/{name}"
            landmark_rows.append(LandmarkSet(
                left_eye=(float(pts[0, 0]), float(pts[0, 1])),
                right_eye=(float(pts[1, 0]), float(pts[1, 1])),
                mouth=(float(pts[2, 0]), float(pts[2, 1])),
                image_ref=rel))
            manifest.append({
                "image": rel,
                "landmarks": {"lx": float(pts[0, 0]), "ly": float(pts[0, 1]),
                              "rx": float(pts[1, 0]), "ry": float(pts[1, 1]),
                              "mx": float(pts[2, 0]), "my": float(pts[2, 1])},
                "individual_id": f"ind{c:03d}",
                "species": species,
            })
    write_landmark_csv(root / "landmarks.csv", landmark_rows)
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path
