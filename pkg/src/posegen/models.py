"""The five networks: two generators, two patch discriminators, one encoder.

Generators follow a downsample / residual chain / upsample layout.  The
appearance generator receives the style code by spatially tiling it and
concatenating it to the input of every residual block.  The encoder is a
small residual trunk with three linear heads: mean and log-variance of the
free code, and the class code.
"""
import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F


def _check_image(t, channels, size, name="image"):
    if t.dim() != 4 or t.shape[1] != channels or t.shape[2] != size or t.shape[3] != size:
        raise ValueError(
            f"{name}: expected shape [N, {channels}, {size}, {size}], got {list(t.shape)}"
        )


def generator_depth(image_size):
    """Residual blocks per generator: 9 at 128 px and above, otherwise scaled down."""
    if image_size >= 128:
        return 9
    if image_size >= 64:
        return 6
    return 4


@dataclass(frozen=True)
class Architecture:
    image_size: int = 32
    channels: int = 3
    d_u: int = 8
    n_classes: int = 2
    ngf: int = 16
    ndf: int = 16
    nef: int = 16
    n_down: int = 2
    n_blocks: int = None

    @property
    def d_z(self):
        return self.n_classes + self.d_u

    @property
    def blocks(self):
        return self.n_blocks if self.n_blocks is not None else generator_depth(self.image_size)


def layer_norm(dim):
    """Normalise over channels and pixels jointly, with per-channel affine."""
    return nn.GroupNorm(1, dim)


class ResBlock(nn.Module):
    """Residual block; with ``extra > 0`` a tiled code joins its first conv.

    The first convolution sees ``concat(h, tile(z))``.  Over a spatially
    constant input a 3x3 kernel acts only through the sum of its taps, so the
    code channels get a 1x1 kernel (``code``) instead, which is the same
    function class without the redundant taps.
    """

    def __init__(self, dim, extra=0, norm=nn.InstanceNorm2d):
        super().__init__()
        self.pad1 = nn.ReflectionPad2d(1)
        self.conv1 = nn.Conv2d(dim, dim, 3)
        self.code = nn.Conv2d(extra, dim, 1, bias=False) if extra else None
        if self.code is not None:
            # the code pathway starts closed; training decides how much to use it
            nn.init.zeros_(self.code.weight)
        self.rest = nn.Sequential(
            norm(dim),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            norm(dim),
        )

    def forward(self, h, z=None):
        a = self.conv1(self.pad1(h))
        if self.code is not None:
            a = a + self.code(_tile(z, a))
        return h + self.rest(a)


def _tile(z, like):
    return z[:, :, None, None].expand(-1, -1, like.shape[2], like.shape[3])


class Generator(nn.Module):
    """Image-to-image generator with an optional latent input.

    With ``latent_dim > 0`` the code is tiled over the bottleneck and fed to
    every residual block.  A tiled code adds a per-channel constant, which
    instance normalisation would cancel exactly, so layers after the
    injection point use layer normalisation in latent-conditioned generators.
    """

    def __init__(self, arch, latent_dim=0):
        super().__init__()
        self.arch = arch
        self.latent_dim = latent_dim
        c, ngf = arch.channels, arch.ngf
        post_norm = nn.InstanceNorm2d if latent_dim == 0 else layer_norm

        down = [nn.ReflectionPad2d(3), nn.Conv2d(c, ngf, 7), nn.InstanceNorm2d(ngf), nn.ReLU(True)]
        dim = ngf
        for _ in range(arch.n_down):
            down += [nn.Conv2d(dim, dim * 2, 3, stride=2, padding=1), nn.InstanceNorm2d(dim * 2), nn.ReLU(True)]
            dim *= 2
        self.down = nn.Sequential(*down)
        self.blocks = nn.ModuleList(ResBlock(dim, latent_dim, norm=post_norm) for _ in range(arch.blocks))

        up = []
        for _ in range(arch.n_down):
            up += [
                # resize-then-convolve avoids transposed-conv checkerboard patterns
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.ReflectionPad2d(1),
                nn.Conv2d(dim, dim // 2, 3),
                post_norm(dim // 2),
                nn.ReLU(True),
            ]
            dim //= 2
        up += [nn.ReflectionPad2d(3), nn.Conv2d(dim, c, 7), nn.Tanh()]
        self.up = nn.Sequential(*up)

    def forward(self, x, z=None):
        _check_image(x, self.arch.channels, self.arch.image_size, "generator input")
        if self.latent_dim:
            if z is None or z.dim() != 2 or z.shape[1] != self.latent_dim or z.shape[0] != x.shape[0]:
                got = None if z is None else list(z.shape)
                raise ValueError(f"latent code: expected shape [{x.shape[0]}, {self.latent_dim}], got {got}")
        elif z is not None:
            raise ValueError("this generator takes no latent code")
        h = self.down(x)
        for block in self.blocks:
            h = block(h, z)
        return self.up(h)


class PatchDiscriminator(nn.Module):
    """Three stride-2 stages then a 3x3 scoring conv; 32 px in -> 4x4 scores out."""

    def __init__(self, arch):
        super().__init__()
        self.arch = arch
        ndf = arch.ndf
        self.net = nn.Sequential(
            nn.Conv2d(arch.channels, ndf, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf, ndf * 2, 4, stride=2, padding=1),
            nn.InstanceNorm2d(ndf * 2),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf * 2, ndf * 4, 4, stride=2, padding=1),
            nn.InstanceNorm2d(ndf * 4),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf * 4, 1, 3, padding=1),
        )

    def forward(self, x):
        _check_image(x, self.arch.channels, self.arch.image_size, "discriminator input")
        return self.net(x)


@dataclass
class EncoderOutput:
    mu: torch.Tensor
    log_var: torch.Tensor
    z_s: torch.Tensor

    def code(self):
        """Deterministic code: class head followed by the posterior mean."""
        return torch.cat([self.z_s, self.mu], dim=1)


_HALF_SQRT2 = 2 ** -0.5


class _EncBlock(nn.Module):
    def __init__(self, dim_in, dim_out):
        super().__init__()
        self.conv1 = nn.Conv2d(dim_in, dim_in, 3, padding=1)
        self.conv2 = nn.Conv2d(dim_in, dim_out, 3, padding=1)
        self.skip = nn.Conv2d(dim_in, dim_out, 1)

    def forward(self, h):
        r = self.conv2(F.leaky_relu(self.conv1(F.leaky_relu(h, 0.2)), 0.2))
        return F.avg_pool2d((self.skip(h) + r) * _HALF_SQRT2, 2)


class Encoder(nn.Module):
    """Shared residual trunk with three heads (mu, log_var, z_s).

    The trunk is unnormalised so that global colour survives to the heads.
    The heads see the final 4x4 map flattened (where on the body a garment
    sits) next to its spatial mean (overall colour).
    """

    def __init__(self, arch):
        super().__init__()
        self.arch = arch
        nef = arch.nef
        self.stem = nn.Conv2d(arch.channels, nef, 3, padding=1)
        blocks, dim = [], nef
        for _ in range(int(math.log2(arch.image_size // 4))):
            out = min(dim * 2, nef * 4)
            blocks.append(_EncBlock(dim, out))
            dim = out
        self.trunk = nn.Sequential(*blocks)
        feat = dim * 17
        self.mu = nn.Linear(feat, arch.d_u)
        self.log_var = nn.Linear(feat, arch.d_u)
        self.z_s = nn.Linear(feat, arch.n_classes)
        # variance-preserving init: with no normalisation the default init
        # shrinks activations stage by stage
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)

    def forward(self, y):
        _check_image(y, self.arch.channels, self.arch.image_size, "encoder input")
        h = self.trunk(self.stem(y))
        h = F.leaky_relu(h, 0.2)
        h = torch.cat([h.flatten(1), h.mean(dim=(2, 3))], dim=1)
        return EncoderOutput(self.mu(h), self.log_var(h), self.z_s(h))


def reparameterize(mu, log_var, noise):
    """``mu + exp(log_var / 2) * noise``; pass zero noise for the posterior mean."""
    if mu.shape != log_var.shape or mu.shape != noise.shape:
        raise ValueError(
            f"shape mismatch: mu {list(mu.shape)}, log_var {list(log_var.shape)}, noise {list(noise.shape)}"
        )
    return mu + torch.exp(0.5 * log_var) * noise


NETWORK_NAMES = ("G_X", "G_Y", "D_X", "D_Y", "Q")


class Networks(nn.Module):
    """Container for the five networks, addressable by name."""

    def __init__(self, arch, seed=0):
        super().__init__()
        self.arch = arch
        # framework default init, except Q's convs and G_Y's code pathway
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.G_X = Generator(arch)
            self.G_Y = Generator(arch, latent_dim=arch.d_z)
            self.D_X = PatchDiscriminator(arch)
            self.D_Y = PatchDiscriminator(arch)
            self.Q = Encoder(arch)

    def network(self, name):
        if name not in NETWORK_NAMES:
            raise ValueError(f"unknown network {name!r}")
        return getattr(self, name)

    def d_forward(self, image, domain):
        if domain not in ("X", "Y"):
            raise ValueError(f"domain must be 'X' or 'Y', got {domain!r}")
        return (self.D_X if domain == "X" else self.D_Y)(image)

    def named_network_parameters(self):
        """Yield ``(network, name, parameter)`` with names unique per network."""
        for net in NETWORK_NAMES:
            for name, p in self.network(net).named_parameters():
                yield net, name, p

    def parameter_count(self):
        return {net: sum(p.numel() for p in self.network(net).parameters()) for net in NETWORK_NAMES}
