"""Loss terms and their per-optimizer composites.

Every term reduces with a mean over elements (and over the batch), so the
weight magnitudes do not depend on resolution or batch size.  The adversarial
terms use the least-squares form.
"""
from dataclasses import dataclass, field

import torch

from .config import ConfigError, LossWeights

TERMS = ("gan_d", "gan_g", "rec", "kl", "c", "s")
GROUPS = ("D", "Q", "G_X", "G_Y")


class TrainingDivergence(RuntimeError):
    """A loss went non-finite or blew past the divergence guard."""

    def __init__(self, term, value, iteration=None, last_good=None):
        where = f" at iteration {iteration}" if iteration is not None else ""
        msg = f"loss term {term!r} diverged{where} (value {value})"
        if last_good:
            msg += f"; last good checkpoint: {last_good}"
        super().__init__(msg)
        self.term = term
        self.value = value
        self.iteration = iteration
        self.last_good = last_good


def _t(x):
    return x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)


def _finite(name, *tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise TrainingDivergence(name, "non-finite input")


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def lsgan_d_loss(d_real_x, d_real_y, d_fake_x, d_fake_y):
    """Discriminator objective; the fake maps should already be detached."""
    maps = [_t(m) for m in (d_real_x, d_real_y, d_fake_x, d_fake_y)]
    _finite("gan_d", *maps)
    rx, ry, fx, fy = maps
    return ((rx - 1) ** 2).mean() + ((ry - 1) ** 2).mean() + (fx**2).mean() + (fy**2).mean()


def lsgan_g_loss(d_fake_x, d_fake_y):
    fx, fy = _t(d_fake_x), _t(d_fake_y)
    _finite("gan_g", fx, fy)
    return ((fx - 1) ** 2).mean() + ((fy - 1) ** 2).mean()


def cycle_loss(x, x_rec, y, y_rec):
    x, x_rec, y, y_rec = (_t(v) for v in (x, x_rec, y, y_rec))
    _same_shape("cycle_loss(x)", x, x_rec)
    _same_shape("cycle_loss(y)", y, y_rec)
    return (x_rec - x).abs().mean() + (y_rec - y).abs().mean()


def kl_loss(mu, log_var):
    """KL divergence of N(mu, exp(log_var)) from N(0, 1), summed over code
    dimensions and averaged over any leading batch axes."""
    mu, log_var = _t(mu), _t(log_var)
    _same_shape("kl_loss", mu, log_var)
    per = 0.5 * (torch.exp(log_var) + mu**2 - 1.0 - log_var).sum(dim=-1)
    return per.mean()


def latent_consistency_loss(z, z_hat):
    z, z_hat = _t(z), _t(z_hat)
    _same_shape("latent_consistency_loss", z, z_hat)
    return (z_hat - z).abs().mean()


def supervision_loss(z_s, s, labeled=None):
    """Mean L1 between class-code head and one-hot labels.

    ``labeled`` is an optional boolean mask over the batch; unlabeled rows
    are dropped and the mean is taken over labeled rows only.  Returns
    ``(loss, skipped)`` where ``skipped`` is True when no row carries a label
    (the loss is then an exact zero still attached to ``z_s``'s graph).
    """
    z_s, s = _t(z_s), _t(s)
    _same_shape("supervision_loss", z_s, s)
    if labeled is None:
        return (z_s - s).abs().mean(), False
    labeled = torch.as_tensor(labeled, dtype=torch.bool)
    if not labeled.any():
        return (z_s * 0.0).sum(), True
    return (z_s[labeled] - s[labeled]).abs().mean(), False


@dataclass
class LossReport:
    gan_d: float
    gan_g: float
    rec: float
    kl: float
    c: float
    s: float
    composites: dict
    s_skipped: bool = False
    extras: dict = field(default_factory=dict)

    def as_dict(self):
        d = {t: getattr(self, t) for t in TERMS}
        d.update({f"total_{g}": self.composites[g] for g in GROUPS})
        return d

    def tsv_line(self, iteration):
        vals = [self.gan_d, self.gan_g, self.rec, self.kl, self.c, self.s]
        vals += [self.composites[g] for g in GROUPS]
        return "\t".join([str(iteration)] + [f"{float(v):.9g}" for v in vals])

    @classmethod
    def from_tsv_line(cls, line):
        parts = line.rstrip("\n").split("\t")
        vals = [float(p) for p in parts[1:]]
        comps = dict(zip(GROUPS, vals[6:10]))
        return int(parts[0]), cls(*vals[:6], composites=comps)


LOG_COLUMNS = ("iter",) + TERMS + tuple(f"total_{g}" for g in GROUPS)


def compose(parts, weights=None):
    """Weighted objectives for the four optimizer groups.

    ``parts`` maps term name to value (float or tensor).  Returns a dict with
    keys ``D``, ``Q``, ``G_X``, ``G_Y``.
    """
    if weights is None:
        weights = LossWeights()
    for name in ("w_gan", "w_cyc", "w_kl", "w_c", "w_s"):
        if getattr(weights, name) < 0:
            raise ConfigError(name, "loss weight must be >= 0")
    for k in TERMS:
        v = parts[k]
        finite = torch.isfinite(v).all() if torch.is_tensor(v) else v == v and abs(v) != float("inf")
        if not finite:
            raise TrainingDivergence(k, v)
    w = weights
    adv_rec = w.w_gan * parts["gan_g"] + w.w_cyc * parts["rec"]
    return {
        "D": w.w_gan * parts["gan_d"],
        "Q": adv_rec + w.w_s * parts["s"] + w.w_kl * parts["kl"],
        "G_X": adv_rec,
        "G_Y": adv_rec + w.w_c * parts["c"],
    }
