"""Synthetic segmentation data: generation, manifest I/O, augmentation.

Each sample is one foreground shape (ellipse or convex polygon) over a
textured background, with the mask derived analytically from the shape at
pixel centers, plus distractor shapes that perturb the image but never the
mask.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import netpbm

MANIFEST_VERSION = 1


@dataclass
class Sample:
    """One (image, mask) pair; image is (3, H, W) in [0, 1], mask is
    (1, H, W) strictly binary."""

    image: np.ndarray
    mask: np.ndarray
    id: str


@dataclass
class GenParams:
    """Difficulty knobs for the synthetic generator."""

    min_fg_fraction: float = 0.05
    max_fg_fraction: float = 0.60
    polygon_prob: float = 0.5
    polygon_sides: tuple = (3, 7)  # inclusive range
    n_distractors: tuple = (0, 2)  # inclusive range
    texture_amp: float = 0.10
    pixel_noise: float = 0.03


@dataclass
class DatasetManifest:
    root: str
    seed: int
    params: dict
    entries: list  # dicts: {id, image, mask, split}
    version: int = MANIFEST_VERSION

    def save(self):
        path = os.path.join(self.root, "manifest.json")
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


# ---------------------------------------------------------------------------
# Analytic shapes


class Ellipse:
    def __init__(self, cy, cx, a, b, angle):
        self.cy, self.cx, self.a, self.b, self.angle = cy, cx, a, b, angle

    def contains(self, y, x):
        """Membership at coordinates (y, x); broadcasts."""
        dy, dx = y - self.cy, x - self.cx
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


class ConvexPolygon:
    """Vertices taken in angular order on an ellipse, hence convex."""

    def __init__(self, vertices):
        self.vertices = np.asarray(vertices)  # (k, 2) as (y, x)

    def contains(self, y, x):
        inside = np.ones(np.broadcast(y, x).shape, dtype=bool)
        k = len(self.vertices)
        for i in range(k):
            y0, x0 = self.vertices[i]
            y1, x1 = self.vertices[(i + 1) % k]
            cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
            inside &= cross >= 0
        return inside


def _random_shape(rng, size, params):
    S = size
    cy, cx = rng.uniform(0.3 * S, 0.7 * S, size=2)
    a, b = rng.uniform(0.15 * S, 0.42 * S, size=2)
    angle = rng.uniform(0.0, 2 * np.pi)
    if rng.random() < params.polygon_prob:
        lo, hi = params.polygon_sides
        k = int(rng.integers(lo, hi + 1))
        # Angular order around the ellipse keeps the polygon convex and
        # counter-clockwise (positive cross products in image coordinates).
        thetas = np.sort(rng.uniform(0.0, 2 * np.pi, size=k))
        c, s = np.cos(angle), np.sin(angle)
        u = a * np.cos(thetas)
        v = b * np.sin(thetas)
        xs = cx + c * u - s * v
        ys = cy + s * u + c * v
        return ConvexPolygon(np.stack([ys, xs], axis=1))
    return Ellipse(cy, cx, a, b, angle)


def _pixel_centers(h, w):
    y, x = np.mgrid[0:h, 0:w]
    return y + 0.5, x + 0.5


def _smooth_noise(rng, h, w, cells=4):
    """Low-frequency texture: bilinear interpolation of a coarse random grid."""
    grid = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    ys = np.linspace(0.0, cells, h)
    xs = np.linspace(0.0, cells, w)
    iy = np.minimum(ys.astype(int), cells - 1)
    ix = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - iy)[:, None]
    fx = (xs - ix)[None, :]
    g00 = grid[np.ix_(iy, ix)]
    g01 = grid[np.ix_(iy, ix + 1)]
    g10 = grid[np.ix_(iy + 1, ix)]
    g11 = grid[np.ix_(iy + 1, ix + 1)]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def render_sample(rng, size, params: GenParams, sample_id):
    """Render one image/mask pair; the mask fraction is kept inside the
    configured bounds by re-drawing the shape."""
    h = w = size
    y, x = _pixel_centers(h, w)
    for _ in range(200):
        shape = _random_shape(rng, size, params)
        mask = shape.contains(y, x)
        frac = mask.mean()
        if params.min_fg_fraction <= frac <= params.max_fg_fraction:
            break
    else:
        raise RuntimeError(f"could not draw a shape within fg-fraction bounds for {sample_id}")

    bg_color = rng.uniform(0.10, 0.45, size=3)
    fg_color = rng.uniform(0.55, 0.90, size=3)
    image = bg_color[:, None, None] + params.texture_amp * _smooth_noise(rng, h, w, cells=4)

    lo, hi = params.n_distractors
    for _ in range(int(rng.integers(lo, hi + 1))):
        d = _random_shape(rng, size, params)
        dmask = d.contains(y, x) & ~mask
        d_color = rng.uniform(0.10, 0.45, size=3)
        d_tex = params.texture_amp * _smooth_noise(rng, h, w, cells=8)
        image = np.where(dmask, d_color[:, None, None] + d_tex, image)

    fg_tex = params.texture_amp * _smooth_noise(rng, h, w, cells=8)
    image = np.where(mask, fg_color[:, None, None] + fg_tex, image)
    image = image + params.pixel_noise * rng.standard_normal((3, h, w))
    image = np.clip(image, 0.0, 1.0)
    return Sample(image=image, mask=mask[None].astype(np.float64), id=sample_id)


def gen_synthetic(out_dir, seed, n_train, n_val, size, params: GenParams = None):
    """Write a dataset directory (images/, masks/, manifest.json)."""
    params = params or GenParams()
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    seeds = np.random.SeedSequence(seed).spawn(n_train + n_val)
    entries = []
    for i, ss in enumerate(seeds):
        split = "train" if i < n_train else "val"
        idx = i if split == "train" else i - n_train
        sample_id = f"{split}_{idx:04d}"
        sample = render_sample(np.random.default_rng(ss), size, params, sample_id)
        image_rel = f"images/{sample_id}.ppm"
        mask_rel = f"masks/{sample_id}.pgm"
        netpbm.save_ppm(os.path.join(out_dir, image_rel), sample.image)
        netpbm.save_pgm(os.path.join(out_dir, mask_rel), sample.mask[0])
        entries.append({"id": sample_id, "image": image_rel, "mask": mask_rel, "split": split})
    manifest = DatasetManifest(
        root=out_dir, seed=seed, params=asdict(params), entries=entries
    )
    manifest.save()
    return manifest


def load_manifest(root):
    with open(os.path.join(root, "manifest.json")) as f:
        d = json.load(f)
    if d["version"] != MANIFEST_VERSION:
        raise IOError(f"unsupported manifest version {d['version']}")
    d["root"] = root
    return DatasetManifest(**d)


def load_split(manifest: DatasetManifest, split):
    """Load all samples of a split into memory, quantized exactly as stored."""
    samples = []
    for e in manifest.entries:
        if e["split"] != split:
            continue
        image = netpbm.load_ppm(os.path.join(manifest.root, e["image"]))
        mask = netpbm.load_pgm(os.path.join(manifest.root, e["mask"]))
        samples.append(Sample(image=image, mask=(mask >= 0.5)[None].astype(np.float64), id=e["id"]))
    return samples


# ---------------------------------------------------------------------------
# Augmentation


def _affine_resample(arr, angle, scale, nearest):
    """Rotate by ``angle`` and scale by ``scale`` about the image center.

    Inverse mapping with clamp-to-edge; bilinear for images, nearest for
    masks (preserves binarity).
    """
    h, w = arr.shape[-2:]
    yo, xo = _pixel_centers(h, w)
    yo = yo - h / 2.0
    xo = xo - w / 2.0
    c, s = np.cos(angle), np.sin(angle)
    yi = (c * yo - s * xo) / scale + h / 2.0 - 0.5
    xi = (s * yo + c * xo) / scale + w / 2.0 - 0.5
    if nearest:
        ry = np.clip(np.rint(yi).astype(int), 0, h - 1)
        rx = np.clip(np.rint(xi).astype(int), 0, w - 1)
        out = arr[..., ry, rx].copy()
        # outside the source grid the mask is background
        outside = (yi < -0.5) | (yi > h - 0.5) | (xi < -0.5) | (xi > w - 0.5)
        out[..., outside] = 0.0
        return out
    y0 = np.clip(np.floor(yi).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xi).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(yi - y0, 0.0, 1.0)
    fx = np.clip(xi - x0, 0.0, 1.0)
    v00 = arr[..., y0, x0]
    v01 = arr[..., y0, x1]
    v10 = arr[..., y1, x0]
    v11 = arr[..., y1, x1]
    return (v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx
            + v10 * fy * (1 - fx) + v11 * fy * fx)


def augment_sample(sample: Sample, rng, flags):
    """Apply the enabled augmentations; always consumes rng draws in a fixed
    order so seeded runs reproduce."""
    image, mask = sample.image, sample.mask
    if flags.get("hflip") and rng.random() < 0.5:
        image = image[:, :, ::-1].copy()
        mask = mask[:, :, ::-1].copy()
    if flags.get("vflip") and rng.random() < 0.5:
        image = image[:, ::-1, :].copy()
        mask = mask[:, ::-1, :].copy()
    angle = rng.uniform(0.0, 2 * np.pi) if flags.get("rotate") else 0.0
    scale = rng.uniform(0.75, 1.25) if flags.get("scale") else 1.0
    if angle != 0.0 or scale != 1.0:
        image = _affine_resample(image, angle, scale, nearest=False)
        mask = _affine_resample(mask, angle, scale, nearest=True)
    return Sample(image=image, mask=mask, id=sample.id)
