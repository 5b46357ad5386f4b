"""Evaluation metrics for trained checkpoints.

Diversity is the mean absolute pixel difference over random sample pairs
(a perceptual network is not available here).  Class and instance adherence
use the toy-domain oracle.  SSIM follows the usual windowed formulation and
backs the nearest-neighbour memorisation audit.
"""
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .datagen import foreground_mask, is_toy_dataset, load_dataset, oracle_classify
from .imageio import IMAGE_SUFFIXES, list_images, load_png
from .inference import encode_codes, generate, label_codes

DIVERSITY_PAIRS = 19
DIVERSITY_METRIC = "pixel_l1"


class UnsupportedMetric(ValueError):
    """The metric needs the toy-domain oracle but the dataset has none."""


def _validate_stack(samples, minimum, what):
    arrs = [np.asarray(s, dtype=np.float64) for s in samples]
    if len(arrs) < minimum:
        raise ValueError(f"{what} needs at least {minimum} images, got {len(arrs)}")
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise ValueError(f"{what}: shape mismatch {a.shape} vs {shape}")
    return np.stack(arrs)


# --------------------------------------------------------------------------
# diversity


def _canonical_order(stack):
    keys = [hashlib.sha256(np.ascontiguousarray(im).tobytes()).hexdigest() for im in stack]
    return np.argsort(keys, kind="stable")


def diversity_pairs(samples, seed=0, n_pairs=DIVERSITY_PAIRS):
    """Index pairs (into ``samples``) used by :func:`diversity_score`.

    Pairs are drawn without replacement from all distinct pairs after
    sorting the samples by content hash, so the draw does not depend on the
    order the samples are listed in.  With fewer than ``n_pairs`` distinct
    pairs, all of them are used.
    """
    stack = _validate_stack(samples, 2, "diversity_score")
    order = _canonical_order(stack)
    i, j = np.triu_indices(len(stack), k=1)
    if len(i) > n_pairs:
        pick = np.sort(np.random.default_rng(seed).choice(len(i), size=n_pairs, replace=False))
        i, j = i[pick], j[pick]
    return [(int(order[a]), int(order[b])) for a, b in zip(i, j)]


def diversity_score(samples, seed=0, n_pairs=DIVERSITY_PAIRS):
    """Average pixel-L1 distance over random sample pairs."""
    stack = _validate_stack(samples, 2, "diversity_score")
    pairs = diversity_pairs(stack, seed, n_pairs)
    return float(np.mean([np.abs(stack[a] - stack[b]).mean() for a, b in pairs]))


# --------------------------------------------------------------------------
# SSIM

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_RANGE = 2.0
SSIM_K = (0.01, 0.03)


def _gaussian_1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    k = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(k**2) / (2 * sigma**2))
    return g / g.sum()


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    g = _gaussian_1d(size, sigma)
    return np.outer(g, g)


def _as_chw(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected [H, W] or [C, H, W] image, got shape {a.shape}")
    return a


def _filter(t, g):
    # t: [N, C, H, W]; separable valid correlation with the 1-D factor g
    c = t.shape[1]
    k = torch.as_tensor(g, dtype=t.dtype)
    t = F.conv2d(t, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    return F.conv2d(t, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)


def _ssim_batch(a, b):
    """Per-pair SSIM for [N, C, H, W] float64 tensors already shifted to [0, L]."""
    g1 = _gaussian_1d()
    c1 = (SSIM_K[0] * SSIM_RANGE) ** 2
    c2 = (SSIM_K[1] * SSIM_RANGE) ** 2
    mu_a, mu_b = _filter(a, g1), _filter(b, g1)
    saa = _filter(a * a, g1) - mu_a * mu_a
    sbb = _filter(b * b, g1) - mu_b * mu_b
    sab = _filter(a * b, g1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return (num / den).mean(dim=(1, 2, 3))


def _check_window(shape):
    if shape[-1] < SSIM_WINDOW or shape[-2] < SSIM_WINDOW:
        raise ValueError(f"SSIM window {SSIM_WINDOW}x{SSIM_WINDOW} larger than image {shape[-2]}x{shape[-1]}")


def ssim(a, b):
    """Mean local SSIM of two images in [-1, 1], averaged over channels.

    Inputs are shifted to the non-negative range [0, 2] before the
    statistics are taken, so that the luminance term reads as a similarity
    of brightness levels.
    """
    a, b = _as_chw(a), _as_chw(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    _check_window(a.shape)
    ta = torch.from_numpy(a + 1.0)[None]
    tb = torch.from_numpy(b + 1.0)[None]
    return float(_ssim_batch(ta, tb)[0])


def ssim_matrix(generated, training, chunk=256):
    """SSIM of every generated image against every training image."""
    gen = np.stack([_as_chw(g) for g in generated]) + 1.0
    train = np.stack([_as_chw(t) for t in training]) + 1.0
    if gen.shape[1:] != train.shape[1:]:
        raise ValueError(f"image shape mismatch {gen.shape[1:]} vs {train.shape[1:]}")
    _check_window(gen.shape)
    tt = torch.from_numpy(train)
    out = np.empty((len(gen), len(train)))
    for i, g in enumerate(gen):
        tg = torch.from_numpy(g)[None]
        for s in range(0, len(train), chunk):
            part = tt[s:s + chunk]
            out[i, s:s + len(part)] = _ssim_batch(tg.expand(len(part), -1, -1, -1), part).numpy()
    return out


@dataclass
class NeighborReport:
    generated: list
    neighbors: list  # per generated image: list of (training name, score)
    max_ssim: float

    def lines(self):
        yield f"max_ssim\t{self.max_ssim:.9g}"
        for name, nb in zip(self.generated, self.neighbors):
            yield "\t".join([name] + [f"{t}\t{s:.9g}" for t, s in nb])

    def write(self, path):
        Path(path).write_text("\n".join(self.lines()) + "\n")


def _load_dir(directory, channels=3, recursive=False):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    if recursive:
        paths = sorted(p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    else:
        paths = list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no images in {directory}")
    return [str(p.relative_to(directory)) for p in paths], [load_png(p, channels=channels) for p in paths]


def nearest_neighbor_audit(generated_dir, training_dir, k=1, channels=3):
    """For each generated image, the ``k`` most SSIM-similar training images.

    Both directories are searched recursively for images.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    gnames, gen = _load_dir(generated_dir, channels, recursive=True)
    tnames, train = _load_dir(training_dir, channels, recursive=True)
    size = gen[0].shape[-1]
    train = [t if t.shape == gen[0].shape else load_png(Path(training_dir) / n, size, channels)
             for n, t in zip(tnames, train)]
    m = ssim_matrix(gen, train)
    k = min(k, len(train))
    neighbors = []
    for row in m:
        top = np.argsort(-row, kind="stable")[:k]
        neighbors.append([(tnames[j], float(row[j])) for j in top])
    return NeighborReport(gnames, neighbors, float(m.max()))


# --------------------------------------------------------------------------
# model-based metrics


def _require_toy(data_dir):
    if not is_toy_dataset(data_dir):
        raise UnsupportedMetric(f"{data_dir}: not a generated toy dataset, no oracle available")


def _oracle_classes(images, n_classes):
    return np.array([oracle_classify(im, n_classes)[0] for im in images])


def adherence_of(images, requested, n_classes):
    """Fraction of ``images`` the oracle assigns to the ``requested`` classes."""
    requested = np.asarray(requested)
    if len(images) != len(requested) or len(images) == 0:
        raise ValueError("need one requested class per image")
    return float((_oracle_classes(images, n_classes) == requested).mean())


def class_adherence(ckpt, data_dir, n_per_pose=1, seed=0, n_poses=None, data=None):
    """Conditional-sampling accuracy over held-out poses x classes x samples.

    Returns ``(fraction, n_samples)``.
    """
    _require_toy(data_dir)
    cfg = ckpt.config
    data = data or load_dataset(data_dir, cfg.image_size, cfg.channels)
    poses = data.x if n_poses is None else data.x[:n_poses]
    k = cfg.n_classes
    images, requested = [], []
    for p_i, pose in enumerate(poses):
        for c in range(k):
            codes = label_codes(c, n_per_pose, cfg.d_u, k, [seed, p_i, c])
            images.extend(generate(ckpt, np.repeat(pose[None], n_per_pose, 0), codes))
            requested.extend([c] * n_per_pose)
    return adherence_of(images, requested, k), len(images)


def instance_pairs(n_x, n_y, n_pairs, seed=0):
    rng = np.random.default_rng([seed, 1])
    return rng.integers(n_x, size=n_pairs), rng.integers(n_y, size=n_pairs)


def instance_adherence(ckpt, data_dir, n_pairs=200, seed=0, data=None):
    """Fraction of (pose, reference) pairs whose output has the reference's class.

    Returns ``(fraction, n_pairs)``.
    """
    _require_toy(data_dir)
    cfg = ckpt.config
    data = data or load_dataset(data_dir, cfg.image_size, cfg.channels)
    xi, yi = instance_pairs(len(data.x), len(data.y), n_pairs, seed)
    refs = data.y[yi]
    out = generate(ckpt, data.x[xi], encode_codes(ckpt, refs))
    return adherence_of(out, _oracle_classes(refs, cfg.n_classes), cfg.n_classes), n_pairs


def latent_gap(encode, render, poses, codes):
    """Mean L1 gap between ``codes`` and ``encode(render(poses, codes))``."""
    codes = np.asarray(codes, dtype=np.float64)
    back = np.asarray(encode(render(poses, codes)), dtype=np.float64)
    if back.shape != codes.shape:
        raise ValueError(f"re-encoded codes have shape {back.shape}, expected {codes.shape}")
    return float(np.abs(back - codes).mean())


def latent_consistency_metric(ckpt, data_dir, n=100, seed=0, data=None):
    """Held-out code reconstruction error ``|Q(G_Y(x, z)) - z|``.

    ``z`` is the deterministic code of a held-out appearance image and ``x``
    an independently drawn held-out pose.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cfg = ckpt.config
    data = data or load_dataset(data_dir, cfg.image_size, cfg.channels)
    xi, yi = instance_pairs(len(data.x), len(data.y), n, seed + 1)
    codes = encode_codes(ckpt, data.y[yi])
    return latent_gap(lambda ims: encode_codes(ckpt, ims), lambda p, z: generate(ckpt, p, z), data.x[xi], codes)


def sample_diversity(ckpt, data_dir, n_poses=10, n_samples=20, seed=0, data=None):
    """Mean diversity of ``n_samples`` conditional samples, over poses and classes."""
    cfg = ckpt.config
    data = data or load_dataset(data_dir, cfg.image_size, cfg.channels)
    scores = []
    for p_i, pose in enumerate(data.x[:n_poses]):
        for c in range(cfg.n_classes):
            codes = label_codes(c, n_samples, cfg.d_u, cfg.n_classes, [seed, p_i, c, 1])
            scores.append(diversity_score(generate(ckpt, np.repeat(pose[None], n_samples, 0), codes), seed))
    return float(np.mean(scores)), len(scores) * n_samples


# --------------------------------------------------------------------------
# latent projection


def project_codes(codes, method="pca", seed=0):
    """2-D projection of code vectors (PCA by default, or t-SNE)."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or len(codes) < 2:
        raise ValueError(f"need at least two code vectors, got shape {codes.shape}")
    if method == "pca":
        from sklearn.decomposition import PCA

        return PCA(n_components=2, svd_solver="full").fit_transform(codes)
    if method == "tsne":
        from sklearn.manifold import TSNE

        perplexity = min(30.0, (len(codes) - 1) / 3)
        return TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca").fit_transform(codes)
    raise ValueError(f"unknown projection method {method!r} (expected 'pca' or 'tsne')")


def color_proxy(image):
    """Mean foreground brightness in [0, 1]; whole-image mean if nothing is foreground."""
    im = (np.asarray(image, dtype=np.float64) + 1) / 2
    mask = foreground_mask(image)
    gray = im.mean(axis=0)
    return float(gray[mask].mean() if mask.any() else gray.mean())


@dataclass
class Projection:
    points: np.ndarray
    labels: np.ndarray
    colors: np.ndarray
    files: list = field(default_factory=list)

    def lines(self):
        yield "x\ty\tclass_id\tcolor_proxy"
        for (px, py), c, col in zip(self.points, self.labels, self.colors):
            yield f"{px:.9g}\t{py:.9g}\t{int(c)}\t{col:.6f}"

    def write(self, path):
        Path(path).write_text("\n".join(self.lines()) + "\n")


def read_projection(path):
    rows = [l.split("\t") for l in Path(path).read_text().splitlines()[1:] if l.strip()]
    arr = np.array([[float(v) for v in r] for r in rows]).reshape(-1, 4)
    return Projection(arr[:, :2], arr[:, 2].astype(int), arr[:, 3])


def project_latents(ckpt, data_dir, method="pca", seed=0, data=None):
    """Encode every appearance image and project the codes to 2-D."""
    cfg = ckpt.config
    data = data or load_dataset(data_dir, cfg.image_size, cfg.channels)
    codes = encode_codes(ckpt, data.y)
    points = project_codes(codes, method, seed)
    colors = np.array([color_proxy(im) for im in data.y])
    return Projection(points, data.labels.copy(), colors, list(data.y_files))


def linear_separability(points, labels):
    """Training accuracy of a linear classifier on labelled points."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.preprocessing import StandardScaler

    points, labels = np.asarray(points), np.asarray(labels)
    keep = labels >= 0
    if len(np.unique(labels[keep])) < 2:
        raise ValueError("need at least two labelled classes")
    xs = StandardScaler().fit_transform(points[keep])
    clf = LogisticRegression(C=1e3, max_iter=5000).fit(xs, labels[keep])
    return float(clf.score(xs, labels[keep]))


# --------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    diversity: float
    class_adherence: float
    instance_adherence: float
    latent_consistency_mae: float
    nn_max_ssim: float
    counts: dict = field(default_factory=dict)
    diversity_metric: str = DIVERSITY_METRIC

    def __post_init__(self):
        for name in ("class_adherence", "instance_adherence"):
            v = getattr(self, name)
            if not (np.isnan(v) or 0 <= v <= 1):
                raise ValueError(f"{name} must be a fraction, got {v}")
        if self.diversity < 0:
            raise ValueError(f"diversity must be >= 0, got {self.diversity}")
        if not -1 < self.nn_max_ssim <= 1 + 1e-12:
            raise ValueError(f"nn_max_ssim must lie in (-1, 1], got {self.nn_max_ssim}")

    def lines(self):
        yield f"diversity\t{self.diversity:.9g}"
        yield f"diversity_metric\t{self.diversity_metric}"
        yield f"class_adherence\t{self.class_adherence:.9g}"
        yield f"instance_adherence\t{self.instance_adherence:.9g}"
        yield f"latent_consistency_mae\t{self.latent_consistency_mae:.9g}"
        yield f"nn_max_ssim\t{self.nn_max_ssim:.9g}"
        for k, v in self.counts.items():
            yield f"n_{k}\t{v}"

    def write(self, path):
        Path(path).write_text("\n".join(self.lines()) + "\n")


def read_report(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("\t", 1)
            out[k] = v
    return out


def evaluate(ckpt, data_dir, seed=0, n_poses=10, n_samples=20, n_pairs=200, n_latent=100):
    """All metrics for one checkpoint on one dataset.

    The oracle-based adherence fractions are NaN for non-toy datasets.  The
    memorisation score compares the conditional samples with the dataset's
    appearance images.
    """
    cfg = ckpt.config
    data = load_dataset(data_dir, cfg.image_size, cfg.channels)
    div, n_div = sample_diversity(ckpt, data_dir, n_poses, n_samples, seed, data)
    toy = is_toy_dataset(data_dir)
    if toy:
        ca, n_ca = class_adherence(ckpt, data_dir, n_samples // cfg.n_classes or 1, seed, n_poses, data)
        ia, n_ia = instance_adherence(ckpt, data_dir, n_pairs, seed, data)
    else:
        ca, n_ca, ia, n_ia = float("nan"), 0, float("nan"), 0
    lc = latent_consistency_metric(ckpt, data_dir, n_latent, seed, data)
    poses = data.x[:n_poses]
    samples = []
    for p_i, pose in enumerate(poses):
        codes = label_codes(p_i % cfg.n_classes, 1, cfg.d_u, cfg.n_classes, [seed, p_i, 2])
        samples.extend(generate(ckpt, pose[None], codes))
    nn_max = float(ssim_matrix(samples, data.y).max())
    counts = {"diversity": n_div, "class_adherence": n_ca, "instance_adherence": n_ia,
              "latent_consistency": n_latent, "nn_generated": len(samples), "nn_reference": len(data.y)}
    return EvalReport(div, ca, ia, lc, nn_max, counts)
