"""Synthetic non-uniform motion blur and desk-scale corpora.

Two blur routes over one per-pixel motion field (the displacement each
pixel accumulates over the exposure):

- temporal: warp the sharp frame to T uniform timestamps spanning the
  exposure (midpoint sampling, centered so zero motion is exact), average
  the linear frames, then apply the response curve g(x) = x^(1/gamma);
- kernel: rasterize the same motion into an explicit per-pixel kernel
  footprint (normalized weights on an integer offset grid) and apply it
  as a weighted gather, plus optional Gaussian noise.

Both routes share the bilinear interpolation rule of the deformable ops.
Corpora are procedural (textured polygons, gradients, glyph-like rows),
so nothing external is needed, and fully seeded.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage, ImageDraw

from .deform import bilinear_gather
from .imageio import read_png, write_png


class SynthError(ValueError):
    pass


# ---------------------------------------------------------------------------
# motion fields


@dataclass
class MotionField:
    """Per-pixel (vy, vx) displacement in pixels over the exposure."""

    vy: np.ndarray
    vx: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        self.vy = np.asarray(self.vy, dtype=np.float32)
        self.vx = np.asarray(self.vx, dtype=np.float32)
        if self.vy.shape != self.vx.shape or self.vy.ndim != 2:
            raise SynthError(f"motion components disagree: {self.vy.shape} vs {self.vx.shape}")
        if not (np.isfinite(self.vy).all() and np.isfinite(self.vx).all()):
            raise SynthError("motion field contains non-finite values")

    @property
    def shape(self):
        return self.vy.shape

    def magnitude(self):
        return np.hypot(self.vy, self.vx)

    def clipped(self, max_disp):
        """Scale down anywhere the magnitude exceeds max_disp."""
        mag = self.magnitude()
        scale = np.minimum(1.0, max_disp / np.maximum(mag, 1e-12))
        return MotionField(self.vy * scale, self.vx * scale, self.kind)


def _grid(size):
    return np.meshgrid(np.arange(size, dtype=np.float32),
                       np.arange(size, dtype=np.float32), indexing="ij")


def affine_field(size, rng, max_disp=6.0):
    """Global shake: small rotation/scale/shear plus translation."""
    yy, xx = _grid(size)
    cy, cx = (size - 1) / 2.0, (size - 1) / 2.0
    ang = rng.uniform(-1.5, 1.5) * max_disp / size
    zoom = rng.uniform(-1.0, 1.0) * max_disp / size
    shear = rng.uniform(-0.5, 0.5) * max_disp / size
    ty, tx = rng.uniform(-0.6, 0.6, size=2) * max_disp
    dy = ang * (xx - cx) + zoom * (yy - cy) + ty
    dx = -ang * (yy - cy) + zoom * (xx - cx) + shear * (yy - cy) + tx
    return MotionField(dy, dx, "affine").clipped(max_disp)


def region_field(size, rng, max_disp=6.0, n_objects=3):
    """Independently moving soft regions over a still background."""
    yy, xx = _grid(size)
    dy = np.zeros((size, size), dtype=np.float32)
    dx = np.zeros((size, size), dtype=np.float32)
    for _ in range(n_objects):
        cy, cx = rng.uniform(0, size, size=2)
        sigma = rng.uniform(0.08, 0.25) * size
        w = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        ty, tx = rng.uniform(-1.0, 1.0, size=2) * max_disp
        dy += w * ty
        dx += w * tx
    return MotionField(dy, dx, "regions").clipped(max_disp)


def mixture_field(size, rng, max_disp=6.0, n_objects=2):
    a = affine_field(size, rng, max_disp * 0.5)
    r = region_field(size, rng, max_disp, n_objects)
    return MotionField(a.vy + r.vy, a.vx + r.vx, "mixture").clipped(max_disp)


FIELD_KINDS = {"affine": affine_field, "regions": region_field, "mixture": mixture_field}


def make_field(kind, size, rng, max_disp=6.0):
    if kind not in FIELD_KINDS:
        raise SynthError(f"unknown motion kind '{kind}' (choose from {sorted(FIELD_KINDS)})")
    return FIELD_KINDS[kind](size, rng, max_disp=max_disp)


def zero_field(size):
    z = np.zeros((size, size), dtype=np.float32)
    return MotionField(z, z, "zero")


# ---------------------------------------------------------------------------
# temporal-integration route


def exposure_timestamps(count):
    """Midpoint samples of the exposure, centered on 0 (count=1 -> [0])."""
    if count < 1:
        raise SynthError("need at least one timestamp")
    return (np.arange(count, dtype=np.float64) + 0.5) / count - 0.5


def warp_image(img, field, factor):
    """Backward-warp (h, w, 3) by factor * field, zeros outside."""
    h, w = field.shape
    yy, xx = _grid(h)
    ys = yy - factor * field.vy
    xs = xx - factor * field.vx
    chw = np.asarray(img, dtype=np.float32).transpose(2, 0, 1)
    return bilinear_gather(chw, ys, xs).transpose(1, 2, 0)


def render_frames(sharp, field, count=15):
    return [warp_image(sharp, field, s) for s in exposure_timestamps(count)]


def apply_crf(linear, gamma):
    if gamma == 1.0:
        return np.asarray(linear, dtype=np.float32)
    return np.power(np.clip(linear, 0.0, None), 1.0 / gamma).astype(np.float32)


def blur_temporal(frames, crf_gamma=1.0):
    """Average linear frames over the exposure, then apply the response
    curve. frames must be same-shaped (h, w, 3) arrays."""
    if not frames:
        raise SynthError("blur_temporal needs at least one frame")
    shape = np.asarray(frames[0]).shape
    for f in frames[1:]:
        if np.asarray(f).shape != shape:
            raise SynthError(f"frame shapes disagree: {shape} vs {np.asarray(f).shape}")
    mean = np.mean(np.stack([np.asarray(f, dtype=np.float64) for f in frames]), axis=0)
    return apply_crf(mean, crf_gamma)


def temporal_blur(sharp, field, frames=15, gamma=1.0):
    return blur_temporal(render_frames(sharp, field, frames), gamma)


# ---------------------------------------------------------------------------
# kernel-matrix route


class SparseKernelMatrix:
    """Per-pixel normalized kernel footprints on an integer offset grid.

    weights has shape (h, w, d, d) with d = 2*radius + 1; weights[y, x,
    i, j] multiplies the source pixel at (y + i - radius, x + j - radius).
    """

    def __init__(self, weights, radius):
        weights = np.asarray(weights, dtype=np.float32)
        if weights.ndim != 4 or weights.shape[2] != weights.shape[3] or weights.shape[2] != 2 * radius + 1:
            raise SynthError(f"kernel weights shape {weights.shape} inconsistent with radius {radius}")
        if (weights < 0).any():
            raise SynthError("kernel weights must be non-negative")
        sums = weights.sum(axis=(2, 3))
        if np.abs(sums - 1.0).max() > 1e-6:
            raise SynthError(f"kernel columns must sum to 1 (worst off by {np.abs(sums - 1.0).max():.2e})")
        self.weights = weights
        self.radius = radius

    @classmethod
    def delta(cls, size):
        w = np.zeros((size, size, 3, 3), dtype=np.float32)
        w[:, :, 1, 1] = 1.0
        return cls(w, 1)

    @classmethod
    def from_motion(cls, field, taps=31):
        """Rasterize linear motion into footprints by splatting bilinear
        weights of each exposure timestamp onto the integer grid."""
        h, w = field.shape
        mag = field.magnitude().max()
        radius = max(1, int(np.ceil(mag / 2.0 + 1)))
        d = 2 * radius + 1
        weights = np.zeros((h, w, d, d), dtype=np.float64)
        per = 1.0 / taps
        for s in exposure_timestamps(taps):
            uy = -s * field.vy.astype(np.float64)
            ux = -s * field.vx.astype(np.float64)
            y0 = np.floor(uy)
            x0 = np.floor(ux)
            ty = uy - y0
            tx = ux - x0
            iy = y0.astype(np.int64) + radius
            ix = x0.astype(np.int64) + radius
            rows = np.arange(h)[:, None] * np.ones(w, dtype=np.int64)
            cols = np.ones(h, dtype=np.int64)[:, None] * np.arange(w)
            for dy, dx, wt in ((0, 0, (1 - ty) * (1 - tx)), (0, 1, (1 - ty) * tx),
                               (1, 0, ty * (1 - tx)), (1, 1, ty * tx)):
                np.add.at(weights, (rows, cols, iy + dy, ix + dx), per * wt)
        return cls(weights.astype(np.float32), radius)


def blur_kernel_matrix(sharp, kernels, noise_sigma=0.0, rng=None):
    """Per-pixel weighted gather of the sharp image plus Gaussian noise.

    Source positions outside the image read zero, matching the temporal
    route's border rule.
    """
    sharp = np.asarray(sharp, dtype=np.float32)
    h, w = sharp.shape[:2]
    if kernels.weights.shape[:2] != (h, w):
        raise SynthError(f"kernel grid {kernels.weights.shape[:2]} does not cover image {h}x{w}")
    r = kernels.radius
    padded = np.pad(sharp, ((r, r), (r, r), (0, 0)))
    out = np.zeros((h, w, 3), dtype=np.float64)
    for i in range(2 * r + 1):
        for j in range(2 * r + 1):
            out += kernels.weights[:, :, i, j, None] * padded[i : i + h, j : j + w]
    out = out.astype(np.float32)
    if noise_sigma > 0:
        rng = rng or np.random.default_rng(0)
        out = out + rng.normal(0.0, noise_sigma, out.shape).astype(np.float32)
    return out


# ---------------------------------------------------------------------------
# procedural sharp images


def _rand_color(rng):
    return tuple(int(v) for v in rng.integers(30, 226, size=3))


def sharp_image(rng, size, detail=1.0):
    """Textured scene: gradient base, filled polygons, glyph-like rows.

    ``detail`` in [0, 1] scales the fine content (glyph rows, sinusoid
    texture); 1.0 is the regular corpus, lower values give the smoother
    scenes desk-scale capacity studies use.
    """
    yy, xx = _grid(size)
    corners = rng.uniform(0.1, 0.9, size=(2, 2, 3))
    fy = yy / max(size - 1, 1)
    fx = xx / max(size - 1, 1)
    base = ((1 - fy)[..., None] * ((1 - fx)[..., None] * corners[0, 0] + fx[..., None] * corners[0, 1])
            + fy[..., None] * ((1 - fx)[..., None] * corners[1, 0] + fx[..., None] * corners[1, 1]))
    im = PILImage.fromarray((base * 255).astype(np.uint8), "RGB")
    draw = ImageDraw.Draw(im)

    for _ in range(int(rng.integers(4, 9))):
        n_pts = int(rng.integers(3, 7))
        cx, cy = rng.uniform(0, size, size=2)
        rad = rng.uniform(0.08, 0.3) * size
        angs = np.sort(rng.uniform(0, 2 * np.pi, size=n_pts))
        pts = [(float(cx + rad * np.cos(a)), float(cy + rad * np.sin(a))) for a in angs]
        draw.polygon(pts, fill=_rand_color(rng))

    # glyph-like strokes in a few text rows
    n_rows = int(round(float(rng.integers(2, 5)) * detail))
    for _ in range(n_rows):
        y = float(rng.uniform(0.1, 0.9) * size)
        x = float(rng.uniform(0.05, 0.3) * size)
        color = _rand_color(rng)
        while x < 0.9 * size:
            seg = float(rng.uniform(0.02, 0.08) * size)
            if rng.uniform() < 0.8:
                draw.line([(x, y), (x + seg, y + float(rng.uniform(-2, 2)))],
                          fill=color, width=max(1, size // 48))
            x += seg + float(rng.uniform(0.01, 0.04) * size)

    arr = np.asarray(im, dtype=np.float32) / 255.0
    # mild sinusoidal texture keeps flat fills from being featureless
    amp = 0.03 * detail
    tex = amp * np.sin(2 * np.pi * (xx * rng.uniform(2, 6) + yy * rng.uniform(2, 6)) / size)
    return np.clip(arr + tex[..., None].astype(np.float32), 0.0, 1.0)


# ---------------------------------------------------------------------------
# corpora


@dataclass
class CorpusSpec:
    seed: int = 0
    count: int = 4
    size: int = 64
    frames: int = 15
    gamma: float = 1.0
    sigma: float = 0.0
    max_disp: float = 5.0
    kind: str = "mixture"
    detail: float = 1.0


def make_corpus(out_dir, spec):
    """Write sharp/blur PNG pairs plus a line-oriented manifest.

    Per-image seeds derive from (seed, index), so any prefix of a corpus
    is reproducible independently of count.
    """
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"seed = {spec.seed}", f"count = {spec.count}", f"size = {spec.size}",
             f"frames = {spec.frames}", f"gamma = {spec.gamma!r}", f"sigma = {spec.sigma!r}",
             f"max_disp = {spec.max_disp!r}", f"kind = {spec.kind}", f"detail = {spec.detail!r}"]
    for i in range(spec.count):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i]))
        sharp = sharp_image(rng, spec.size, detail=spec.detail)
        field = make_field(spec.kind, spec.size, rng, spec.max_disp)
        blur = temporal_blur(sharp, field, frames=spec.frames, gamma=spec.gamma)
        if spec.sigma > 0:
            blur = blur + rng.normal(0.0, spec.sigma, blur.shape).astype(np.float32)
        write_png(os.path.join(out_dir, f"sharp_{i:04d}.png"), sharp)
        write_png(os.path.join(out_dir, f"blur_{i:04d}.png"), blur)
        lines.append(f"item.{i:04d}.kind = {field.kind}")
        lines.append(f"item.{i:04d}.max_mag = {float(field.magnitude().max()):.4f}")
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_corpus(corpus_dir):
    """Read (sharp, blur) float pairs back in index order."""
    names = sorted(f for f in os.listdir(corpus_dir) if f.startswith("sharp_") and f.endswith(".png"))
    pairs = []
    for name in names:
        idx = name[len("sharp_") : -len(".png")]
        blur_path = os.path.join(corpus_dir, f"blur_{idx}.png")
        if not os.path.exists(blur_path):
            raise SynthError(f"corpus pair incomplete: missing {blur_path}")
        pairs.append((read_png(os.path.join(corpus_dir, name)), read_png(blur_path)))
    return pairs
