"""Generation from a trained checkpoint.

Two modes:

* instance control -- the style code is read from a reference appearance
  image (class head plus posterior mean, no sampling);
* conditional sampling -- the class part is an exact one-hot label and the
  free part is drawn from the unit normal prior.
"""
from dataclasses import dataclass

import numpy as np
import torch

from .models import _check_image


@dataclass(frozen=True)
class StyleSource:
    """Where the style code comes from: a reference image or a class label."""

    reference_image: np.ndarray = None
    class_label: int = None

    def __post_init__(self):
        if (self.reference_image is None) == (self.class_label is None):
            raise ValueError("style source needs exactly one of reference_image or class_label")

    @property
    def kind(self):
        return "reference" if self.reference_image is not None else "label"


def _as_batch(image, config, name):
    t = torch.as_tensor(np.asarray(image, dtype=np.float32))
    if t.dim() == 3:
        t = t[None]
    try:
        _check_image(t, config.channels, config.image_size, name)
    except ValueError as err:
        raise ValueError(f"{err} (checkpoint expects {config.channels}x{config.image_size}x{config.image_size})") from None
    return t


def encode_codes(ckpt, images, batch_size=64):
    """Deterministic codes ``[z_s, mu]`` for a stack of appearance images."""
    images = np.asarray(images, dtype=np.float32)
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            y = _as_batch(images[i:i + batch_size], ckpt.config, "reference")
            out.append(ckpt.nets.Q(y).code().numpy())
    return np.concatenate(out) if out else np.zeros((0, ckpt.config.architecture.d_z), np.float32)


def generate(ckpt, poses, codes):
    """``G_Y(pose, z)`` for matching stacks of poses and codes."""
    x = _as_batch(poses, ckpt.config, "pose")
    z = torch.as_tensor(np.asarray(codes, dtype=np.float32))
    if z.dim() == 1:
        z = z[None]
    d_z = ckpt.config.architecture.d_z
    if z.shape != (x.shape[0], d_z):
        raise ValueError(f"latent code: expected shape [{x.shape[0]}, {d_z}], got {list(z.shape)}")
    with torch.no_grad():
        return ckpt.nets.G_Y(x, z).clamp(-1, 1).numpy()


def infer_instance(ckpt, pose, reference):
    """Render ``pose`` in the style of ``reference``; returns one [C, H, W] image."""
    code = encode_codes(ckpt, _as_batch(reference, ckpt.config, "reference").numpy())
    return generate(ckpt, _as_batch(pose, ckpt.config, "pose").numpy(), code)[0]


def label_codes(label, n, d_u, n_classes, seed):
    """``n`` codes with one-hot class part and seeded unit-normal free part."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    s = np.asarray(label)
    if s.ndim == 0:
        k = int(s)
        if not 0 <= k < n_classes:
            raise ValueError(f"class label {k} outside [0, {n_classes})")
        s = np.eye(n_classes, dtype=np.float32)[k]
    elif s.shape != (n_classes,):
        raise ValueError(f"label vector must have length {n_classes}, got {s.shape[0] if s.ndim == 1 else s.shape}")
    z_u = np.random.default_rng(seed).standard_normal((n, d_u))
    return np.concatenate([np.tile(s, (n, 1)), z_u], axis=1).astype(np.float32)


def infer_sample(ckpt, pose, label, n, seed):
    """``n`` samples for one pose and class; returns a list of [C, H, W] images."""
    cfg = ckpt.config
    codes = label_codes(label, n, cfg.d_u, cfg.n_classes, seed)
    x = _as_batch(pose, cfg, "pose")
    if x.shape[0] != 1:
        raise ValueError("infer_sample takes a single pose")
    return list(generate(ckpt, x.expand(n, -1, -1, -1).numpy(), codes))


def infer(ckpt, pose, style, n=1, seed=0):
    """Dispatch on a StyleSource."""
    if style.kind == "reference":
        return [infer_instance(ckpt, pose, style.reference_image)]
    return infer_sample(ckpt, pose, style.class_label, n, seed)
