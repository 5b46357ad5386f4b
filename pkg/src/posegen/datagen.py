"""Procedural two-domain toy dataset.

Domain X holds pose sketches (white stick figures on black), domain Y holds
the same kind of articulated figure rendered as a coloured silhouette wearing
a class-dependent garment.  Both domains are sampled independently, so the
dataset is unpaired.  Because the garment shapes are known exactly, a
template-matching oracle can classify any appearance image without a learned
model; evaluation code uses it in place of pretrained detectors.

All geometry is authored on a 32-pixel canvas and scaled to the requested
size.  Horizontal coordinates are measured from the vertical centre line so
that mirrored poses rasterise to exactly mirrored images.
"""
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import list_images, load_png, save_png

MIN_SIZE = 16
MAX_CLASSES = 8
ARTICULATION = 0.9
CANVAS = 32.0

# figure skeleton on the 32-px canvas: (horizontal offset from centre, row)
HEAD_CENTER = (0.0, 5.5)
HEAD_RADIUS = 3.0
NECK = (0.0, 9.0)
SHOULDER = (0.0, 10.0)
HIP = (0.0, 19.0)
UPPER_ARM, FOREARM, LEG = 4.5, 3.5, 11.0

SKETCH_HALF_WIDTH = 0.5
BODY_HALF_WIDTH = 0.6
TEXTURE_PERIOD = 5.0
FILL_RANGE = (0.35, 1.0)
# body is drawn as a dim shade of the fill colour, the garment at full strength
BODY_SHADE = 0.45
TEXTURE_MEAN, TEXTURE_AMPLITUDE = 0.85, 0.15
FOREGROUND_FLOOR = 0.1
FOREGROUND_RELATIVE = 0.6

# convex garment pieces, vertices as (offset, row) in canvas units
_PIECES = {
    "skirt": [(-4.0, 18.0), (4.0, 18.0), (8.0, 28.0), (-8.0, 28.0)],
    "panel": [(-5.0, 10.0), (5.0, 10.0), (5.0, 17.0), (-5.0, 17.0)],
    "full": [(-5.0, 10.0), (5.0, 10.0), (5.0, 28.0), (-5.0, 28.0)],
    "cape": [(-9.0, 10.0), (9.0, 10.0), (9.0, 17.0), (-9.0, 17.0)],
    "short_skirt": [(-4.0, 18.0), (4.0, 18.0), (7.0, 24.0), (-7.0, 24.0)],
}
GARMENTS = (
    ("skirt",),
    ("panel",),
    ("full",),
    ("cape",),
    ("short_skirt",),
    ("panel", "short_skirt"),
    ("cape", "skirt"),
    ("cape", "short_skirt"),
)


@dataclass(frozen=True)
class ToySceneSpec:
    """Latent description of one toy figure.

    ``joint_angles`` are, in order: left shoulder, left elbow, right shoulder,
    right elbow, left hip, right hip.  Zero is the rest pose (every limb hangs
    straight down); positive angles swing a limb away from the body.
    """

    joint_angles: tuple
    class_id: int = 0
    fill_color: tuple = (1.0, 1.0, 1.0)
    texture_phase: float = 0.0
    n_classes: int = 2
    articulation: float = ARTICULATION

    def __post_init__(self):
        angles = tuple(float(a) for a in self.joint_angles)
        if len(angles) != 6:
            raise ValueError(f"joint_angles needs 6 entries, got {len(angles)}")
        if any(abs(a) > self.articulation + 1e-12 for a in angles):
            raise ValueError(f"joint angle outside +/-{self.articulation} rad")
        if not 0 <= self.class_id < self.n_classes:
            raise ValueError(f"class_id {self.class_id} not in [0, {self.n_classes})")
        color = tuple(float(c) for c in self.fill_color)
        if len(color) != 3 or any(not 0.0 <= c <= 1.0 for c in color):
            raise ValueError("fill_color must be an RGB triple in [0, 1]")
        object.__setattr__(self, "joint_angles", angles)
        object.__setattr__(self, "fill_color", color)
        object.__setattr__(self, "texture_phase", float(self.texture_phase) % (2 * math.pi))

    def to_dict(self):
        return {
            "joint_angles": list(self.joint_angles),
            "class_id": self.class_id,
            "fill_color": list(self.fill_color),
            "texture_phase": self.texture_phase,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            joint_angles=tuple(d["joint_angles"]),
            class_id=int(d["class_id"]),
            fill_color=tuple(d["fill_color"]),
            texture_phase=float(d["texture_phase"]),
            n_classes=int(d.get("n_classes", 2)),
        )


def sample_spec(rng, class_id=None, n_classes=2):
    angles = rng.uniform(-ARTICULATION, ARTICULATION, size=6)
    if class_id is None:
        class_id = int(rng.integers(n_classes))
    color = rng.uniform(*FILL_RANGE, size=3)
    phase = rng.uniform(0.0, 2 * math.pi)
    return ToySceneSpec(tuple(angles), int(class_id), tuple(color), float(phase), n_classes)


# --------------------------------------------------------------------------
# rasterisation helpers


def _check_size(size):
    if int(size) != size or size < MIN_SIZE:
        raise ValueError(f"image size must be an integer >= {MIN_SIZE}, got {size}")
    return int(size)


@lru_cache(maxsize=16)
def _grid(size):
    # pixel centres in canvas units, horizontal axis centred
    scale = size / CANVAS
    coords = np.arange(size) + 0.5
    u = (coords - size / 2.0) / scale
    v = coords / scale
    uu, vv = np.meshgrid(u, v)
    uu.setflags(write=False)
    vv.setflags(write=False)
    return uu, vv, scale


def _segment_distance(uu, vv, a, b):
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    px, py = uu - ax, vv - ay
    t = np.clip((px * dx + py * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(px - t * dx, py - t * dy)


def _stroke(dist, half_width, scale):
    # anti-aliased coverage of a stroke, in pixel units
    return np.clip((half_width - dist) * scale + 0.5, 0.0, 1.0)


def _convex_coverage(uu, vv, vertices, scale):
    sd = None
    n = len(vertices)
    for i in range(n):
        (x0, y0), (x1, y1) = vertices[i], vertices[(i + 1) % n]
        ex, ey = x1 - x0, y1 - y0
        norm = math.hypot(ex, ey)
        # positive inside for clockwise-on-screen vertex order (row axis down)
        d = ((uu - x0) * ey - (vv - y0) * ex) / norm * -1.0
        sd = d if sd is None else np.minimum(sd, d)
    return np.clip(sd * scale + 0.5, 0.0, 1.0)


def _limb_segments(angles):
    ls, le, rs, re, lh, rh = angles

    def chain(origin, side, lengths_angles):
        pts = [origin]
        theta = 0.0
        for length, a in lengths_angles:
            theta += a
            x, y = pts[-1]
            pts.append((x + side * math.sin(theta) * length, y + math.cos(theta) * length))
        return list(zip(pts[:-1], pts[1:]))

    segs = [(NECK, HIP)]
    segs += chain(SHOULDER, -1.0, [(UPPER_ARM, ls), (FOREARM, le)])
    segs += chain(SHOULDER, 1.0, [(UPPER_ARM, rs), (FOREARM, re)])
    segs += chain(HIP, -1.0, [(LEG, lh)])
    segs += chain(HIP, 1.0, [(LEG, rh)])
    return segs


def _figure_coverage(angles, size, half_width, filled_head):
    uu, vv, scale = _grid(size)
    cov = np.zeros((size, size))
    for a, b in _limb_segments(angles):
        cov = np.maximum(cov, _stroke(_segment_distance(uu, vv, a, b), half_width, scale))
    head_d = np.hypot(uu - HEAD_CENTER[0], vv - HEAD_CENTER[1])
    if filled_head:
        head = np.clip((HEAD_RADIUS - head_d) * scale + 0.5, 0.0, 1.0)
    else:
        head = _stroke(np.abs(head_d - HEAD_RADIUS), half_width, scale)
    return np.maximum(cov, head)


def garment_coverage(class_id, size):
    """Anti-aliased coverage map of the garment worn by ``class_id``."""
    size = _check_size(size)
    if not 0 <= class_id < MAX_CLASSES:
        raise ValueError(f"class_id must be in [0, {MAX_CLASSES})")
    uu, vv, scale = _grid(size)
    cov = np.zeros((size, size))
    for piece in GARMENTS[class_id]:
        cov = np.maximum(cov, _convex_coverage(uu, vv, _PIECES[piece], scale))
    return cov


def render_pose_sketch(spec, size=32, channels=3):
    """Stick-figure sketch of ``spec``'s pose: strokes +1 on a -1 background."""
    size = _check_size(size)
    cov = _figure_coverage(spec.joint_angles, size, SKETCH_HALF_WIDTH, filled_head=False)
    img = (2.0 * cov - 1.0).astype(np.float32)
    return np.repeat(img[None], channels, axis=0)


def render_appearance(spec, size=32):
    """Coloured silhouette of ``spec`` wearing its class garment, shape [3, S, S]."""
    size = _check_size(size)
    uu, vv, scale = _grid(size)
    body = _figure_coverage(spec.joint_angles, size, BODY_HALF_WIDTH, filled_head=True)
    garment = garment_coverage(spec.class_id, size)
    texture = TEXTURE_MEAN + TEXTURE_AMPLITUDE * np.sin(
        2 * math.pi * vv / TEXTURE_PERIOD + spec.texture_phase
    )
    color = np.asarray(spec.fill_color)[:, None, None]
    img = body[None] * color * BODY_SHADE
    img = (1.0 - garment[None]) * img + garment[None] * color * texture[None]
    return (2.0 * img - 1.0).astype(np.float32)


# --------------------------------------------------------------------------
# oracle


def _opening_size(size):
    k = max(3, int(round(5 * size / CANVAS)))
    return k if k % 2 else k + 1


def _median_size(size):
    k = max(1, int(3 * size / CANVAS))
    return k if k % 2 else k + 1


def foreground_mask(image):
    """Binary mask of bright, thick regions.

    Brightness is the brightest channel, median filtered so that pixel-level
    texture noise does not punch holes into a region.  Pixels count as
    foreground when that brightness exceeds a fixed fraction of the image's
    near-maximum, which keeps the garment and drops the dimmer body; a
    morphological opening then removes thin strokes such as sketch lines.
    """
    image = np.asarray(image, dtype=np.float64)
    level = (image.max(axis=0) + 1.0) * 0.5
    m = _median_size(image.shape[-1])
    if m > 1:
        level = ndimage.median_filter(level, size=m, mode="nearest")
    thr = max(FOREGROUND_FLOOR, FOREGROUND_RELATIVE * float(np.percentile(level, 99)))
    fg = level > thr
    k = _opening_size(image.shape[-1])
    return ndimage.binary_opening(fg, structure=np.ones((k, k), dtype=bool))


@lru_cache(maxsize=32)
def _templates(size, n_classes):
    k = _opening_size(size)
    masks = []
    for c in range(n_classes):
        m = garment_coverage(c, size) > 0.5
        masks.append(ndimage.binary_opening(m, structure=np.ones((k, k), dtype=bool)))
    masks = np.stack(masks)
    zone = masks.any(axis=0)
    masks.setflags(write=False)
    zone.setflags(write=False)
    return masks, zone


def template_scores(image, n_classes=2):
    """Intersection-over-union of the foreground with each class template."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[1] != image.shape[2]:
        raise ValueError(f"expected a square [C, S, S] image, got {image.shape}")
    masks, zone = _templates(image.shape[-1], n_classes)
    fg = foreground_mask(image) & zone
    inter = (masks & fg).sum(axis=(1, 2))
    union = (masks | fg).sum(axis=(1, 2))
    return inter / np.maximum(union, 1)


def oracle_classify(image, n_classes=2):
    """Return ``(class_id, confidence)`` for a toy appearance image.

    Confidence is the best template IoU, so it lies in [0, 1] and is near 0
    for images that carry no garment.
    """
    if not 2 <= n_classes <= MAX_CLASSES:
        raise ValueError(f"n_classes must be in [2, {MAX_CLASSES}]")
    scores = template_scores(image, n_classes)
    best = int(np.argmax(scores))
    return best, float(scores[best])


def one_hot(class_id, n_classes):
    if not 0 <= class_id < n_classes:
        raise ValueError(f"class_id {class_id} not in [0, {n_classes})")
    v = np.zeros(n_classes, dtype=np.float32)
    v[class_id] = 1.0
    return v


# --------------------------------------------------------------------------
# datasets on disk

MANIFEST = "manifest.tsv"
MANIFEST_COLUMNS = ("filename", "domain", "class_id", "hidden_spec_json")
# hidden specs live under this key; only evaluation code may read them
HIDDEN_KEY = "eval_only"

_DOMAIN_STREAM = {"X": 0, "Y": 1, "labels": 2}


@dataclass
class ManifestRow:
    filename: str
    domain: str
    class_id: int = -1
    hidden: str = ""


@dataclass
class Dataset:
    """Images of both domains loaded into memory.

    ``labels`` holds one class id per Y image, -1 where unlabeled.  Hidden
    generator specs are deliberately not part of this object.
    """

    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    root: Path = None
    x_files: list = field(default_factory=list)
    y_files: list = field(default_factory=list)

    @property
    def has_labels(self):
        return bool((self.labels >= 0).any())


def _rng(seed, stream, index=0):
    return np.random.default_rng([int(seed), _DOMAIN_STREAM[stream], int(index)])


def generate_dataset(n_x, n_y, n_classes, size, seed, out_dir):
    """Write an unpaired toy dataset to ``out_dir`` and return its manifest rows.

    X and Y draw from disjoint spec indices (X uses ``0..n_x-1``, Y uses
    ``n_x..n_x+n_y-1``) with per-sample random streams, so the output does
    not depend on generation order.
    """
    if n_x < 1 or n_y < 1:
        raise ValueError("n_x and n_y must be >= 1")
    if not 2 <= n_classes <= MAX_CLASSES:
        raise ValueError(f"n_classes must be in [2, {MAX_CLASSES}], got {n_classes}")
    size = _check_size(size)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "X").mkdir(exist_ok=True)
    (out / "Y").mkdir(exist_ok=True)

    labels = np.arange(n_y) % n_classes
    _rng(seed, "labels").shuffle(labels)

    rows = []
    for i in range(n_x):
        spec = sample_spec(_rng(seed, "X", i), n_classes=n_classes)
        name = f"X/x_{i:05d}.png"
        save_png(render_pose_sketch(spec, size), out / name)
        rows.append(ManifestRow(name, "X", -1, _hidden_json(spec, i)))
    for j in range(n_y):
        spec = sample_spec(_rng(seed, "Y", j), class_id=int(labels[j]), n_classes=n_classes)
        name = f"Y/y_{j:05d}.png"
        save_png(render_appearance(spec, size), out / name)
        rows.append(ManifestRow(name, "Y", int(labels[j]), _hidden_json(spec, n_x + j)))
    write_manifest(rows, out / MANIFEST)
    return rows


def _hidden_json(spec, index):
    payload = {HIDDEN_KEY: dict(spec.to_dict(), spec_index=index)}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def write_manifest(rows, path):
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for r in rows:
        lines.append(f"{r.filename}\t{r.domain}\t{r.class_id}\t{r.hidden}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path, include_hidden=False):
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header[:3]) != MANIFEST_COLUMNS[:3]:
            raise ValueError(f"{path}: unexpected manifest header {header}")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 3 or parts[1] not in ("X", "Y"):
                raise ValueError(f"{path}: malformed manifest line {line!r}")
            hidden = parts[3] if include_hidden and len(parts) > 3 else ""
            rows.append(ManifestRow(parts[0], parts[1], int(parts[2]), hidden))
    return rows


def hidden_specs(data_dir):
    """Map filename -> ToySceneSpec for a generated dataset (evaluation only)."""
    rows = read_manifest(Path(data_dir) / MANIFEST, include_hidden=True)
    out = {}
    for r in rows:
        if r.hidden:
            out[r.filename] = ToySceneSpec.from_dict(json.loads(r.hidden)[HIDDEN_KEY])
    return out


def is_toy_dataset(data_dir):
    path = Path(data_dir) / MANIFEST
    return path.exists() and bool(hidden_specs(data_dir))


def scan_image_dirs(data_dir):
    """Build manifest rows for a user dataset laid out as ``X/`` and ``Y/``.

    Y images may sit directly in ``Y/`` (unlabeled) or in integer-named class
    subdirectories ``Y/<class_id>/``.
    """
    root = Path(data_dir)
    rows = [ManifestRow(str(p.relative_to(root)), "X") for p in list_images(root / "X")]
    ydir = root / "Y"
    rows += [ManifestRow(str(p.relative_to(root)), "Y") for p in list_images(ydir)]
    for sub in sorted(p for p in ydir.iterdir() if p.is_dir()):
        if not sub.name.isdigit():
            raise ValueError(f"class directory name must be an integer: {sub}")
        rows += [ManifestRow(str(p.relative_to(root)), "Y", int(sub.name)) for p in list_images(sub)]
    if not any(r.domain == "X" for r in rows) or not any(r.domain == "Y" for r in rows):
        raise FileNotFoundError(f"{root}: need images in both X/ and Y/")
    return rows


def load_dataset(data_dir, size=None, channels=3):
    """Load a dataset directory (generated or user supplied) into memory."""
    root = Path(data_dir)
    manifest = root / MANIFEST
    if manifest.exists():
        rows = read_manifest(manifest)
    elif (root / "X").is_dir() and (root / "Y").is_dir():
        rows = scan_image_dirs(root)
    else:
        raise FileNotFoundError(f"{root}: no {MANIFEST} and no X/ Y/ image directories")
    xs = [r for r in rows if r.domain == "X"]
    ys = [r for r in rows if r.domain == "Y"]
    if not xs or not ys:
        raise ValueError(f"{root}: dataset needs at least one image per domain")
    x = np.stack([load_png(root / r.filename, size, channels) for r in xs])
    y = np.stack([load_png(root / r.filename, size, channels) for r in ys])
    labels = np.array([r.class_id for r in ys], dtype=np.int64)
    return Dataset(x, y, labels, root, [r.filename for r in xs], [r.filename for r in ys])
