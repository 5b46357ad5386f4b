"""Training configuration and its flat ``key = value`` file format."""
import hashlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .models import Architecture


class ConfigError(ValueError):
    """Bad configuration key or value; ``key`` names the offender."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class LossWeights:
    w_gan: float = 1.0
    w_cyc: float = 10.0
    w_kl: float = 0.01
    w_c: float = 10.0
    w_s: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ConfigError(f.name, f"loss weight must be >= 0, got {v}")


@dataclass(frozen=True)
class TrainConfig:
    image_size: int = 32
    channels: int = 3
    d_u: int = 8
    n_classes: int = 2
    lr: float = 6e-5
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 4
    iterations: int = 1000
    seed: int = 0
    ablate_lc: bool = False
    ablate_ls: bool = False
    checkpoint_every: int = 500
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ngf: int = 16
    ndf: int = 16
    nef: int = 16

    def __post_init__(self):
        checks = {
            "image_size": self.image_size >= 16,
            "channels": self.channels in (1, 3),
            "d_u": self.d_u >= 1,
            "n_classes": 2 <= self.n_classes <= 8,
            "lr": self.lr > 0,
            "batch_size": self.batch_size >= 1,
            "iterations": self.iterations >= 1,
            "checkpoint_every": self.checkpoint_every >= 1,
            "adam_beta1": 0 <= self.adam_beta1 < 1,
            "adam_beta2": 0 <= self.adam_beta2 < 1,
            "adam_eps": self.adam_eps > 0,
            "ngf": self.ngf >= 1,
            "ndf": self.ndf >= 1,
            "nef": self.nef >= 1,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(key, f"invalid value {getattr(self, key)!r}")
        if self.image_size % 8:
            raise ConfigError("image_size", "must be a multiple of 8")

    @property
    def architecture(self):
        return Architecture(
            image_size=self.image_size,
            channels=self.channels,
            d_u=self.d_u,
            n_classes=self.n_classes,
            ngf=self.ngf,
            ndf=self.ndf,
            nef=self.nef,
        )

    @property
    def effective_weights(self):
        """Loss weights with ablated terms zeroed."""
        w = self.weights
        if self.ablate_lc:
            w = replace(w, w_c=0.0)
        if self.ablate_ls:
            w = replace(w, w_s=0.0)
        return w

    def to_flat(self):
        flat = {}
        for k, v in asdict(self).items():
            if k == "weights":
                flat.update(v)
            else:
                flat[k] = v
        return flat

    def dumps(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())

    def hash(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def replace(self, **changes):
        return from_flat({**self.to_flat(), **changes})


_WEIGHT_KEYS = {f.name for f in fields(LossWeights)}
_TOP_KEYS = {f.name: f for f in fields(TrainConfig) if f.name != "weights"}
_TYPES = {
    "image_size": int, "channels": int, "d_u": int, "n_classes": int, "batch_size": int,
    "iterations": int, "seed": int, "checkpoint_every": int, "ngf": int, "ndf": int, "nef": int,
    "lr": float, "adam_beta1": float, "adam_beta2": float, "adam_eps": float,
    "ablate_lc": bool, "ablate_ls": bool,
}
KNOWN_KEYS = tuple(_TOP_KEYS) + tuple(sorted(_WEIGHT_KEYS))


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key, raw):
    if key in _WEIGHT_KEYS:
        kind = float
    elif key in _TYPES:
        kind = _TYPES[key]
    else:
        raise ConfigError(key, "unknown configuration key")
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind.__name__}") from None


def from_flat(values):
    """Build a TrainConfig from a flat mapping of known keys (defaults elsewhere)."""
    top, w = {}, {}
    for key, raw in values.items():
        v = _parse(key, raw)
        (w if key in _WEIGHT_KEYS else top)[key] = v
    return TrainConfig(weights=LossWeights(**w), **top)


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        _parse(key, raw)
        values[key] = raw
    return values


def load_config(path=None, overrides=()):
    """Resolve defaults < file values < ``overrides`` (``key=value`` strings or pairs)."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(item, "override must look like key=value")
            key, raw = (s.strip() for s in item.split("=", 1))
        else:
            key, raw = item
        _parse(key, raw)
        values[key] = raw
    return from_flat(values)


def write_config(config, path):
    Path(path).write_text(config.dumps())
