"""Landmark-based face alignment.

Three manually annotated points per image (left eye, right eye, mouth
center) are centered, pooled into a dataset-wide landmark template, and
each image is warped onto a canonical crop by a least-squares similarity
transform fit to the template's anchored pixel positions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateLandmarks, EmptyDataset, FormatError, SingularSystem

# Canonical crop geometry: 96x112 canvas with the landmark centroid at
# (48, 56) and the anchored inter-ocular distance scaled to 40 px.
DEFAULT_CANVAS = (96, 112)
DEFAULT_ANCHOR_OFFSET = (48.0, 56.0)
DEFAULT_INTEROCULAR_PX = 40.0

# sin(angle at the eye-line) below this treats the triple as collinear
_COLLINEAR_TOL = 1e-9

LANDMARK_CSV_HEADER = ["image", "lx", "ly", "rx", "ry", "mx", "my"]


@dataclass(frozen=True)
class LandmarkSet:
    """Three annotated points on a source image, in pixel coordinates."""

    left_eye: tuple[float, float]
    right_eye: tuple[float, float]
    mouth: tuple[float, float]
    image_ref: str = ""

    def points(self) -> np.ndarray:
        """Return the landmarks as a (3, 2) float64 array."""
        return np.array([self.left_eye, self.right_eye, self.mouth], dtype=np.float64)

    def validate(self, image_size: tuple[int, int] | None = None) -> None:
        """Raise DegenerateLandmarks for non-finite, duplicate, collinear or
        out-of-bounds points. ``image_size`` is (width, height) when known."""
        pts = self.points()
        if not np.all(np.isfinite(pts)):
            raise DegenerateLandmarks(f"non-finite landmark in {self.image_ref!r}")
        d01 = pts[1] - pts[0]
        d02 = pts[2] - pts[0]
        n01 = float(np.hypot(*d01))
        n02 = float(np.hypot(*d02))
        n12 = float(np.hypot(*(pts[2] - pts[1])))
        if min(n01, n02, n12) == 0.0:
            raise DegenerateLandmarks(f"duplicate landmarks in {self.image_ref!r}")
        cross = d01[0] * d02[1] - d01[1] * d02[0]
        if abs(cross) <= _COLLINEAR_TOL * n01 * n02:
            raise DegenerateLandmarks(f"collinear landmarks in {self.image_ref!r}")
        if image_size is not None:
            w, h = image_size
            if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > w) or np.any(
                pts[:, 1] < 0
            ) or np.any(pts[:, 1] > h):
                raise DegenerateLandmarks(
                    f"landmmarks outside {w}x{h} image bounds in {self.image_ref!r}"
                )


@dataclass(frozen=True)
class CenteredLandmarkVector:
    """Centroid-relative landmark coordinates [x1,x2,x3,y1,y2,y3]."""

    l: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.l, dtype=np.float64)
        if v.shape != (6,):
            raise DegenerateLandmarks("centered landmark vector must have 6 elements")
        object.__setattr__(self, "l", v)


@dataclass(frozen=True)
class LandmarkTemplate:
    """Dataset-mean normalized landmark geometry plus its pixel anchoring."""

    t: np.ndarray
    canvas: tuple[int, int] = DEFAULT_CANVAS
    anchor_scale: float = 1.0
    anchor_offset: tuple[float, float] = DEFAULT_ANCHOR_OFFSET

    def __post_init__(self):
        v = np.asarray(self.t, dtype=np.float64)
        if v.shape != (6,):
            raise FormatError("landmark template must have 6 elements")
        if self.anchor_scale <= 0:
            raise FormatError("anchor_scale must be positive")
        object.__setattr__(self, "t", v)

    def anchored_points(self) -> np.ndarray:
        """Template landmarks mapped to canvas pixels, shape (3, 2)."""
        ox, oy = self.anchor_offset
        xs = ox + self.anchor_scale * self.t[:3]
        ys = oy + self.anchor_scale * self.t[3:]
        return np.stack([xs, ys], axis=1)

    def to_json(self) -> dict:
        return {
            "t": [float(v) for v in self.t],
            "canvas": [int(self.canvas[0]), int(self.canvas[1])],
            "anchor_scale": float(self.anchor_scale),
            "anchor_offset": [float(self.anchor_offset[0]), float(self.anchor_offset[1])],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LandmarkTemplate":
        try:
            return cls(
                t=np.asarray(obj["t"], dtype=np.float64),
                canvas=(int(obj["canvas"][0]), int(obj["canvas"][1])),
                anchor_scale=float(obj["anchor_scale"]),
                anchor_offset=(float(obj["anchor_offset"][0]), float(obj["anchor_offset"][1])),
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise FormatError(f"invalid landmark template: {exc}") from exc


@dataclass(frozen=True)
class SimilarityParams:
    """Least-squares similarity transform dst = R(a,b) @ src + (m_x, m_y)."""

    a: float
    b: float
    m_x: float
    m_y: float

    @property
    def s(self) -> float:
        return math.hypot(self.a, self.b)

    @property
    def theta(self) -> float:
        return math.atan2(self.b, self.a)

    def matrix(self) -> np.ndarray:
        """2x3 forward transform matrix [R | m]."""
        return np.array(
            [[self.a, -self.b, self.m_x], [self.b, self.a, self.m_y]], dtype=np.float64
        )

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 2) source points into destination coordinates."""
        pts = np.asarray(pts, dtype=np.float64)
        r = np.array([[self.a, -self.b], [self.b, self.a]])
        return pts @ r.T + np.array([self.m_x, self.m_y])

    def inverse(self) -> "SimilarityParams":
        s2 = self.a * self.a + self.b * self.b
        if s2 <= 0:
            raise SingularSystem("zero-scale transform has no inverse")
        ia, ib = self.a / s2, -self.b / s2
        imx = -(ia * self.m_x - ib * self.m_y)
        imy = -(ib * self.m_x + ia * self.m_y)
        return SimilarityParams(ia, ib, imx, imy)


def center_landmarks(lm: LandmarkSet) -> CenteredLandmarkVector:
    """Subtract the centroid, producing [x1,x2,x3,y1,y2,y3]."""
    lm.validate()
    pts = lm.points()
    centered = pts - pts.mean(axis=0)
    return CenteredLandmarkVector(np.concatenate([centered[:, 0], centered[:, 1]]))


def compute_landmark_template(
    dataset: Sequence[LandmarkSet],
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    anchor_offset: tuple[float, float] = DEFAULT_ANCHOR_OFFSET,
    interocular_px: float = DEFAULT_INTEROCULAR_PX,
    squared_norm: bool = True,
) -> LandmarkTemplate:
    """Mean of centered landmark vectors, each divided by its squared L2 norm.

    ``squared_norm=False`` switches to plain-norm normalization; the default
    divides by the squared norm. The template is anchored so its centroid
    sits at ``anchor_offset`` and its inter-ocular distance spans
    ``interocular_px`` pixels on the canvas.
    """
    if len(dataset) == 0:
        raise EmptyDataset("landmark template needs at least one landmark set")
    acc = np.zeros(6, dtype=np.float64)
    for lm in dataset:
        vec = center_landmarks(lm).l
        norm2 = float(vec @ vec)
        acc += vec / (norm2 if squared_norm else math.sqrt(norm2))
    t = acc / len(dataset)

    eye_dx = t[1] - t[0]
    eye_dy = t[4] - t[3]
    eye_dist = math.hypot(eye_dx, eye_dy)
    if eye_dist <= 0:
        raise DegenerateLandmarks("template eyes coincide; cannot anchor")
    scale = interocular_px / eye_dist
    tpl = LandmarkTemplate(t=t, canvas=canvas, anchor_scale=scale, anchor_offset=anchor_offset)
    pts = tpl.anchored_points()
    w, h = canvas
    if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > w) or np.any(pts[:, 1] < 0) or np.any(
        pts[:, 1] > h
    ):
        raise DegenerateLandmarks("anchored template points fall outside the canvas")
    return tpl


def solve_similarity(source: LandmarkSet, target: LandmarkTemplate) -> SimilarityParams:
    """Least-squares fit of the 4-parameter similarity transform mapping the
    source landmarks onto the template's anchored canvas positions.

    Solved in closed form via the normal equations of the 6x4 system: two
    rows per correspondence, unknowns [a, b, m_x, m_y] with a = s*cos(theta)
    and b = s*sin(theta).
    """
    source.validate()
    src = source.points()
    dst = target.anchored_points()
    a_mat = np.zeros((6, 4), dtype=np.float64)
    b_vec = np.zeros(6, dtype=np.float64)
    for j in range(3):
        x, y = src[j]
        a_mat[2 * j] = [x, -y, 1.0, 0.0]
        a_mat[2 * j + 1] = [y, x, 0.0, 1.0]
        b_vec[2 * j] = dst[j, 0]
        b_vec[2 * j + 1] = dst[j, 1]
    ata = a_mat.T @ a_mat
    atb = a_mat.T @ b_vec
    try:
        x = np.linalg.solve(ata, atb)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("normal equations are singular") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("similarity solve produced non-finite parameters")
    params = SimilarityParams(a=float(x[0]), b=float(x[1]), m_x=float(x[2]), m_y=float(x[3]))
    if params.s <= 1e-12:
        raise SingularSystem("degenerate zero-scale solution")
    return params


def warp_image(
    img: np.ndarray, p: SimilarityParams, canvas: tuple[int, int] = DEFAULT_CANVAS
) -> np.ndarray:
    """Resample ``img`` onto the canvas under the forward transform ``p``.

    Each output pixel is bilinearly sampled from the source at the
    inverse-transformed location; samples outside the source are zero.
    ``img`` is (H, W) or (H, W, C) uint8; output has the same channel count.
    """
    if p.s <= 0:
        raise SingularSystem("warp requires a positive scale")
    img = np.asarray(img)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    src_h, src_w, channels = img.shape
    out_w, out_h = int(canvas[0]), int(canvas[1])

    inv = p.inverse()
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64), np.arange(out_h, dtype=np.float64))
    sx = inv.a * xs - inv.b * ys + inv.m_x
    sy = inv.b * xs + inv.a * ys + inv.m_y

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros((out_h, out_w, channels), dtype=np.float64)
    src = img.astype(np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = ((1 - fx) if dx == 0 else fx) * ((1 - fy) if dy == 0 else fy)
            valid = (xi >= 0) & (xi < src_w) & (yi >= 0) & (yi < src_h)
            xi_c = np.clip(xi, 0, src_w - 1)
            yi_c = np.clip(yi, 0, src_h - 1)
            sample = src[yi_c, xi_c] * valid[:, :, None]
            out += weight[:, :, None] * sample

    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out[:, :, 0] if squeeze else out


def align_crop(
    img: np.ndarray, lm: LandmarkSet, template: LandmarkTemplate
) -> tuple[np.ndarray, SimilarityParams]:
    """Solve the similarity transform for ``lm`` and warp ``img`` onto the
    template canvas. Returns (crop, params)."""
    lm.validate(image_size=(img.shape[1], img.shape[0]))
    params = solve_similarity(lm, template)
    return warp_image(img, params, template.canvas), params


# ---------------------------------------------------------------------------
# File formats


def read_landmark_csv(path: str | Path) -> list[LandmarkSet]:
    """Parse a `image,lx,ly,rx,ry,mx,my` CSV into landmark sets.

    Raises FormatError on a bad header and DegenerateLandmarks (with the
    offending row's image ref) on unparseable coordinates.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty landmark CSV") from None
        if [h.strip() for h in header] != LANDMARK_CSV_HEADER:
            raise FormatError(f"{path}: expected header {','.join(LANDMARK_CSV_HEADER)}")
        out = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 7:
                raise DegenerateLandmarks(f"{path}: malformed row {row!r}")
            ref = row[0].strip()
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DegenerateLandmarks(f"{path}: non-numeric row for {ref!r}") from exc
            out.append(
                LandmarkSet(
                    left_eye=(vals[0], vals[1]),
                    right_eye=(vals[2], vals[3]),
                    mouth=(vals[4], vals[5]),
                    image_ref=ref,
                )
            )
    return out


def write_landmark_csv(path: str | Path, landmarks: Iterable[LandmarkSet]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LANDMARK_CSV_HEADER)
        for lm in landmarks:
            writer.writerow(
                [
                    lm.image_ref,
                    lm.left_eye[0],
                    lm.left_eye[1],
                    lm.right_eye[0],
                    lm.right_eye[1],
                    lm.mouth[0],
                    lm.mouth[1],
                ]
            )


def save_template(template: LandmarkTemplate, path: str | Path) -> None:
    Path(path).write_text(json.dumps(template.to_json(), indent=2) + "\n", encoding="utf-8")


def load_template(path: str | Path) -> LandmarkTemplate:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON") from exc
    return LandmarkTemplate.from_json(obj)


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG/JPEG file as (H, W, 3) uint8 RGB."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(img: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)
