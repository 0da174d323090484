"""Deterministic synthetic signature corpus generator.

Each writer is a template of smooth cubic-curve strokes in the unit
square. Genuine samples re-render the template with small control-point
jitter; forgeries are renders of the same template with a larger
perturbation, the skilled-forgery analogue at toy scale. Everything
derives from the corpus seed, so regeneration is byte-identical.
"""

import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .seeding import stable_rng, stable_seed

GENERATOR_VERSION = "1"
META_FILE = "corpus.meta"


@dataclass(frozen=True)
class StyleParams:
    """Stroke statistics that give a corpus its visual identity."""

    stroke_count: tuple = (3, 5)
    segments: tuple = (2, 3)
    step: tuple = (0.05, 0.10)
    wiggle: float = 0.55
    width: tuple = (0.012, 0.028)
    darkness: tuple = (0.65, 0.95)
    slant: tuple = (-0.1, 0.3)


STYLES = {
    # flowing, few long smooth strokes
    "cursive": StyleParams(),
    # many short jagged strokes, steep opposite slant
    "blocky": StyleParams(
        stroke_count=(7, 10),
        segments=(1, 2),
        step=(0.03, 0.06),
        wiggle=1.4,
        width=(0.014, 0.032),
        darkness=(0.85, 1.0),
        slant=(-0.55, -0.25),
    ),
}


@dataclass
class WriterTemplate:
    seed: int
    strokes: list            # each [3k+1, 2] cubic control-point chain in [0,1]^2
    widths: list
    darkness: list
    slant: float


@dataclass
class CorpusSpec:
    num_writers: int
    genuine_per_writer: int = 24
    forged_per_writer: int = 30
    height: int = 110
    width: int = 160
    genuine_amplitude: float = 0.01
    forgery_amplitude: float = 0.1
    seed: int = 0
    style: str = "cursive"

    def __post_init__(self):
        if self.num_writers < 1:
            raise ValueError("num_writers must be positive")
        if self.height < 32 or self.width < 32:
            raise ValueError(f"image size must be at least 32x32, got "
                             f"{self.height}x{self.width}")
        if not self.forgery_amplitude > self.genuine_amplitude:
            raise ValueError("forgery amplitude must exceed genuine jitter")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}; have {sorted(STYLES)}")


def gen_writer(seed, style=None):
    """Deterministic stroke template for one writer."""
    style = style or STYLES["cursive"]
    rng = np.random.default_rng(seed)
    n_strokes = int(rng.integers(style.stroke_count[0], style.stroke_count[1] + 1))
    slant = float(rng.uniform(*style.slant))
    strokes, widths, darkness = [], [], []
    for _ in range(n_strokes):
        n_seg = int(rng.integers(style.segments[0], style.segments[1] + 1))
        step = float(rng.uniform(*style.step))
        pos = rng.uniform((0.08, 0.2), (0.6, 0.8))
        # mostly left-to-right drift, like handwriting
        direction = np.array([1.0, rng.uniform(-0.7, 0.7)])
        direction /= np.linalg.norm(direction)
        pts = [pos.copy()]
        for _ in range(3 * n_seg):
            direction = direction + style.wiggle * rng.normal(0.0, 0.45, 2)
            direction /= np.linalg.norm(direction)
            pos = np.clip(pos + step * direction, 0.02, 0.98)
            pts.append(pos.copy())
        strokes.append(np.array(pts))
        widths.append(float(rng.uniform(*style.width)))
        darkness.append(float(rng.uniform(*style.darkness)))
    return WriterTemplate(seed=seed, strokes=strokes, widths=widths,
                          darkness=darkness, slant=slant)


def _bezier_polyline(ctrl, samples_per_segment=24):
    """Sample a chain of cubic segments [p0 p1 p2 p3 | p3 p4 p5 p6 | ...]."""
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
    pts = []
    for s in range((len(ctrl) - 1) // 3):
        p0, p1, p2, p3 = ctrl[3 * s : 3 * s + 4]
        u = 1.0 - t
        pts.append(u**3 * p0 + 3 * u**2 * t * p1 + 3 * u * t**2 * p2 + t**3 * p3)
    pts.append(ctrl[-1][None])
    return np.concatenate(pts)


def _paint_stroke(canvas, poly, width_px, dark):
    """Darken the canvas along a polyline with a 1-pixel anti-alias ramp."""
    h, w = canvas.shape
    radius = width_px / 2.0
    reach = radius + 1.5
    x0 = max(int(np.floor(poly[:, 0].min() - reach)), 0)
    x1 = min(int(np.ceil(poly[:, 0].max() + reach)), w - 1)
    y0 = max(int(np.floor(poly[:, 1].min() - reach)), 0)
    y1 = min(int(np.ceil(poly[:, 1].max() + reach)), h - 1)
    if x1 < x0 or y1 < y0:
        return
    gy, gx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    px = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)

    a = poly[:-1]
    ab = poly[1:] - a
    denom = (ab * ab).sum(axis=1)
    denom[denom == 0] = 1.0
    ap = px[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / denom[None, :], 0.0, 1.0)
    closest = ap - t[:, :, None] * ab[None, :, :]
    dist = np.sqrt((closest * closest).sum(axis=2)).min(axis=1)

    coverage = np.clip(0.5 + (radius - dist), 0.0, 1.0)
    ink = 255.0 * (1.0 - dark * coverage)
    region = canvas[y0 : y1 + 1, x0 : x1 + 1]
    np.minimum(region, ink.reshape(region.shape), out=region)


def render_sample(template, perturbation_amplitude, rng, size):
    """Render the template with jittered control points to an 8-bit image.

    White (255) background, dark ink, margins kept clear so the image
    border stays background.
    """
    h, w = size
    if h < 32 or w < 32:
        raise ValueError(f"render size must be at least 32x32, got {h}x{w}")
    canvas = np.full((h, w), 255.0)
    mx = 0.08 * (w - 1)
    my = 0.10 * (h - 1)
    for ctrl, width, dark in zip(template.strokes, template.widths, template.darkness):
        pts = ctrl
        if perturbation_amplitude > 0:
            pts = np.clip(pts + rng.normal(0.0, perturbation_amplitude, pts.shape),
                          0.0, 1.0)
        # shear around the vertical center, then map into the margin box
        x = np.clip(pts[:, 0] + template.slant * (0.5 - pts[:, 1]), 0.0, 1.0)
        y = pts[:, 1]
        unit = np.stack([x, y], axis=1)
        poly = _bezier_polyline(unit)
        poly = np.stack(
            [mx + poly[:, 0] * (w - 1 - 2 * mx), my + poly[:, 1] * (h - 1 - 2 * my)],
            axis=1,
        )
        _paint_stroke(canvas, poly, width * min(h, w), dark)
    return np.rint(np.clip(canvas, 0.0, 255.0)).astype(np.uint8)


def ink_fraction(image):
    """Fraction of pixels visibly darker than the background."""
    return float((np.asarray(image) < 200).mean())


def _png_bytes(image):
    buf = io.BytesIO()
    Image.fromarray(image, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _write_if_changed(path, payload):
    if os.path.exists(path):
        with open(path, "rb") as fh:
            if fh.read() == payload:
                return False
    with open(path, "wb") as fh:
        fh.write(payload)
    return True


@dataclass
class CorpusReport:
    image_files: int
    written: int
    unchanged: int
    out_dir: str


def gen_corpus(spec, out_dir):
    """Write the corpus in the dataset layout; byte-identical per seed.

    Existing identical files are left untouched, so a rerun with the same
    spec reports everything unchanged.
    """
    style = STYLES[spec.style]
    size = (spec.height, spec.width)
    written = unchanged = 0
    for i in range(spec.num_writers):
        wid = f"writer_{i:03d}"
        template = gen_writer(stable_seed(spec.seed, "writer", i), style)
        for label, count, amplitude, prefix in (
            ("genuine", spec.genuine_per_writer, spec.genuine_amplitude, "g"),
            ("forged", spec.forged_per_writer, spec.forgery_amplitude, "f"),
        ):
            sub = os.path.join(out_dir, wid, label)
            os.makedirs(sub, exist_ok=True)
            for j in range(count):
                rng = stable_rng(spec.seed, label, i, j)
                img = render_sample(template, amplitude, rng, size)
                path = os.path.join(sub, f"{prefix}{j:02d}.png")
                if _write_if_changed(path, _png_bytes(img)):
                    written += 1
                else:
                    unchanged += 1
    meta = [
        f"generator_version = {GENERATOR_VERSION}",
        f"seed = {spec.seed}",
        f"style = {spec.style}",
        f"num_writers = {spec.num_writers}",
        f"genuine_per_writer = {spec.genuine_per_writer}",
        f"forged_per_writer = {spec.forged_per_writer}",
        f"height = {spec.height}",
        f"width = {spec.width}",
        f"genuine_amplitude = {spec.genuine_amplitude!r}",
        f"forgery_amplitude = {spec.forgery_amplitude!r}",
    ]
    images = written + unchanged
    payload = ("\n".join(meta) + "\n").encode("utf-8")
    if _write_if_changed(os.path.join(out_dir, META_FILE), payload):
        written += 1
    else:
        unchanged += 1
    return CorpusReport(
        image_files=images,
        written=written,
        unchanged=unchanged,
        out_dir=out_dir,
    )
