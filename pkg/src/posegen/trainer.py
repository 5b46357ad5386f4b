"""Alternating four-group training of the translation networks.

One iteration runs a single forward pass

    z       = [z_s(y), mu(y) + sigma(y) * eps]
    x_hat   = G_X(y)          y_hat   = G_Y(x, z)
    x_tilde = G_X(y_hat)      y_tilde = G_Y(x_hat, z)
    z_hat   = [z_s(y_hat), mu(y_hat)]

and then updates the discriminators, the encoder, G_X and G_Y in that order,
each with its own composite objective.  All gradients are taken from the same
forward graph before any parameter moves.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .config import write_config
from .datagen import load_dataset
from .models import Networks, reparameterize

log = logging.getLogger(__name__)

GROUP_NETWORKS = {"D": ("D_X", "D_Y"), "Q": ("Q",), "G_X": ("G_X",), "G_Y": ("G_Y",)}
DIVERGENCE_LIMIT = 1e4


@dataclass
class TrainState:
    config: object
    nets: Networks
    optimizers: dict
    iteration: int = 0

    def group_params(self, group):
        return [p for net in GROUP_NETWORKS[group] for p in self.nets.network(net).parameters()]


def _make_optimizer(config, nets, group):
    named = [(f"{net}/{name}", p) for net in GROUP_NETWORKS[group] for name, p in nets.network(net).named_parameters()]
    opt = torch.optim.Adam(
        [p for _, p in named],
        lr=config.lr,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )
    opt.named_params = named
    return opt


def init_state(config, dtype=torch.float32):
    nets = Networks(config.architecture, seed=config.seed).to(dtype)
    nets.train()
    opts = {g: _make_optimizer(config, nets, g) for g in L.GROUPS}
    return TrainState(config, nets, opts, 0)


def state_from_checkpoint(ckpt, config=None):
    """Rebuild a TrainState (parameters and Adam moments) from a checkpoint."""
    config = config or ckpt.config
    if config.architecture != ckpt.config.architecture:
        raise ValueError("resume config does not match the checkpoint architecture")
    state = init_state(config)
    with torch.no_grad():
        for (net, name, p), (_, _, q) in zip(
            state.nets.named_network_parameters(), ckpt.nets.named_network_parameters()
        ):
            p.copy_(q)
    entries = ckpt.optimizer_entries()
    for group, opt in state.optimizers.items():
        for key, p in opt.named_params:
            base = f"opt/{group}/{key}"
            if f"{base}/step" not in entries:
                continue
            opt.state[p] = {
                "step": torch.tensor(float(ckpt.load_array(f"{base}/step")[0])),
                "exp_avg": torch.from_numpy(ckpt.load_array(f"{base}/exp_avg").copy()),
                "exp_avg_sq": torch.from_numpy(ckpt.load_array(f"{base}/exp_avg_sq").copy()),
            }
    state.iteration = ckpt.iteration
    return state


# --------------------------------------------------------------------------
# batches


def iteration_rng(seed, iteration):
    return np.random.default_rng([int(seed), 7, int(iteration)])


@dataclass
class Batch:
    x: torch.Tensor
    y: torch.Tensor
    labels: torch.Tensor  # int64, -1 where unlabeled
    noise: torch.Tensor


def sample_batch(config, x_data, y_data, labels, iteration):
    """Uniformly draw an x batch and an independent y batch for ``iteration``.

    The draw depends only on ``(seed, iteration)``, so a resumed run sees the
    same batches as an unbroken one.
    """
    rng = iteration_rng(config.seed, iteration)
    b = config.batch_size
    xi = rng.integers(len(x_data), size=b)
    yi = rng.integers(len(y_data), size=b)
    noise = rng.standard_normal((b, config.d_u))
    return Batch(
        torch.as_tensor(x_data[xi]),
        torch.as_tensor(y_data[yi]),
        torch.as_tensor(np.asarray(labels)[yi], dtype=torch.int64),
        torch.as_tensor(noise, dtype=torch.float32),
    )


def _one_hot(labels, n_classes, dtype):
    labeled = labels >= 0
    s = torch.zeros(len(labels), n_classes, dtype=dtype)
    if labeled.any():
        s[labeled] = torch.nn.functional.one_hot(labels[labeled], n_classes).to(dtype)
    return s, labeled


# --------------------------------------------------------------------------
# forward pass and objectives


def forward(nets, x, y, noise):
    enc = nets.Q(y)
    z_u = reparameterize(enc.mu, enc.log_var, noise)
    z = torch.cat([enc.z_s, z_u], dim=1)
    x_hat = nets.G_X(y)
    y_hat = nets.G_Y(x, z)
    x_tilde = nets.G_X(y_hat)
    y_tilde = nets.G_Y(x_hat, z)
    z_hat = nets.Q(y_hat).code()
    return dict(enc=enc, z=z, x_hat=x_hat, y_hat=y_hat, x_tilde=x_tilde, y_tilde=y_tilde, z_hat=z_hat)


def loss_terms(nets, batch, fw, n_classes):
    """All six loss terms as tensors, plus the supervision skip flag."""
    x, y = batch.x, batch.y
    s, labeled = _one_hot(batch.labels, n_classes, x.dtype)
    x_hat, y_hat = fw["x_hat"], fw["y_hat"]
    parts = {
        "gan_d": L.lsgan_d_loss(nets.D_X(x), nets.D_Y(y), nets.D_X(x_hat.detach()), nets.D_Y(y_hat.detach())),
        "gan_g": L.lsgan_g_loss(nets.D_X(x_hat), nets.D_Y(y_hat)),
        "rec": L.cycle_loss(x, fw["x_tilde"], y, fw["y_tilde"]),
        "kl": L.kl_loss(fw["enc"].mu, fw["enc"].log_var),
        "c": L.latent_consistency_loss(fw["z"], fw["z_hat"]),
    }
    parts["s"], skipped = L.supervision_loss(fw["enc"].z_s, s, labeled)
    return parts, skipped


def group_gradients(state, parts, weights, groups=L.GROUPS):
    """Gradient of each group's composite w.r.t. that group's own parameters.

    The encoder, G_X and G_Y composites share every term except the latent
    consistency term (G_Y only), and the supervision and KL terms depend on
    the encoder alone, so one backward pass for the shared part plus one for
    the consistency term yields all three exactly.
    """
    comps = L.compose(parts, weights)
    grads = {}
    gen_groups = [g for g in ("Q", "G_X", "G_Y") if g in groups]
    if "D" in groups:
        params = state.group_params("D")
        grads["D"] = torch.autograd.grad(comps["D"], params, retain_graph=bool(gen_groups), allow_unused=True)
    if gen_groups:
        shared = comps["Q"]
        params = [p for g in gen_groups for p in state.group_params(g)]
        flat = torch.autograd.grad(shared, params, retain_graph=True, allow_unused=True)
        i = 0
        for g in gen_groups:
            n = len(state.group_params(g))
            grads[g] = list(flat[i:i + n])
            i += n
        if "G_Y" in grads and weights.w_c > 0:
            extra = torch.autograd.grad(weights.w_c * parts["c"], state.group_params("G_Y"), allow_unused=True)
            grads["G_Y"] = [
                e if g is None else (g if e is None else g + e) for g, e in zip(grads["G_Y"], extra)
            ]
    return comps, grads


def _check_divergence(parts, comps, iteration):
    named = dict(parts)
    named.update({f"total_{g}": v for g, v in comps.items()})
    for name, v in named.items():
        v = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not np.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
            raise L.TrainingDivergence(name, v, iteration)


def train_step(state, batch, groups=L.GROUPS):
    """Run one iteration; returns ``(state, LossReport)``.

    ``groups`` restricts which optimizer groups are stepped (all four by
    default, always in the order D, Q, G_X, G_Y).
    """
    cfg = state.config
    for t, name in ((batch.x, "x batch"), (batch.y, "y batch")):
        expected = (cfg.channels, cfg.image_size, cfg.image_size)
        if t.dim() != 4 or tuple(t.shape[1:]) != expected:
            raise ValueError(f"{name}: expected [N, {', '.join(map(str, expected))}], got {list(t.shape)}")
    if batch.noise.shape != (batch.y.shape[0], cfg.d_u):
        raise ValueError(f"noise: expected [{batch.y.shape[0]}, {cfg.d_u}], got {list(batch.noise.shape)}")
    if (batch.labels >= cfg.n_classes).any():
        raise ValueError(f"label outside [0, {cfg.n_classes})")

    weights = cfg.effective_weights
    fw = forward(state.nets, batch.x, batch.y, batch.noise)
    parts, skipped = loss_terms(state.nets, batch, fw, cfg.n_classes)
    comps, grads = group_gradients(state, parts, weights, groups)
    _check_divergence(parts, comps, state.iteration)

    for g in L.GROUPS:
        if g not in grads:
            continue
        for p, gr in zip(state.group_params(g), grads[g]):
            p.grad = None if gr is None else gr.detach()
        state.optimizers[g].step()
        state.optimizers[g].zero_grad(set_to_none=True)

    report = L.LossReport(
        **{k: float(v.detach()) for k, v in parts.items()},
        composites={g: float(v.detach()) if torch.is_tensor(v) else float(v) for g, v in comps.items()},
        s_skipped=skipped,
    )
    if cfg.ablate_lc:
        report.c = 0.0
    if cfg.ablate_ls:
        report.s = 0.0
    state.iteration += 1
    return state, report


# --------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    final_checkpoint: Path
    loss_log: Path
    reports: list = field(default_factory=list)


def fit_arrays(state, x_data, y_data, labels, until, on_report=None, on_iteration_end=None):
    """Advance ``state`` to ``until`` iterations on in-memory arrays."""
    x_data = np.asarray(x_data, dtype=np.float32)
    y_data = np.asarray(y_data, dtype=np.float32)
    labels = np.full(len(y_data), -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if len(labels) != len(y_data):
        raise ValueError("labels must have one entry per y image")
    while state.iteration < until:
        it = state.iteration
        batch = sample_batch(state.config, x_data, y_data, labels, it)
        _, report = train_step(state, batch)
        if on_report is not None:
            on_report(it, report)
        if on_iteration_end is not None:
            on_iteration_end(state)
    return state


def train(config, data_dir, out_dir, resume=None):
    """Train from a dataset directory, writing checkpoints and ``losses.tsv``."""
    out = Path(out_dir)
    data = load_dataset(data_dir, size=config.image_size, channels=config.channels)
    if (data.labels >= config.n_classes).any():
        raise ValueError(f"dataset labels exceed n_classes={config.n_classes}")
    out.mkdir(parents=True, exist_ok=True)
    write_config(config, out / "resolved.cfg")

    if resume is not None:
        state = state_from_checkpoint(load_checkpoint(resume), config)
    else:
        state = init_state(config)

    log_path = out / "losses.tsv"
    last_good = [str(resume) if resume else None]
    reports = []

    with open(log_path, "w") as fh:

        def on_report(it, report):
            fh.write(report.tsv_line(it) + "\n")
            reports.append(report)
            if it % 100 == 0:
                log.info("iter %d  rec %.4f  gan_g %.4f  gan_d %.4f  c %.4f  s %.4f",
                         it, report.rec, report.gan_g, report.gan_d, report.c, report.s)

        def on_end(st):
            done = st.iteration
            if done % config.checkpoint_every == 0 and done < config.iterations:
                fh.flush()
                path = save_checkpoint(out / "checkpoints" / f"iter_{done:06d}", config, st.nets, done, st.optimizers)
                last_good[0] = str(path)

        try:
            fit_arrays(state, data.x, data.y, data.labels, config.iterations, on_report, on_end)
        except L.TrainingDivergence as err:
            raise L.TrainingDivergence(err.term, err.value, err.iteration, last_good[0]) from None

    final = save_checkpoint(out / "final", config, state.nets, state.iteration, state.optimizers)
    return TrainResult(final, log_path, reports)


def read_loss_log(path):
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(L.LossReport.from_tsv_line(line))
    return out


# --------------------------------------------------------------------------
# gradient verification

TERM_NETWORKS = ("G_X", "G_Y", "D_X", "D_Y", "Q")


@dataclass
class GradcheckEntry:
    loss: str
    network: str
    max_rel_error: float
    n_checked: int
    absent: bool = False
    n_kinks: int = 0

    @property
    def ok(self):
        return self.absent or self.max_rel_error < GRADCHECK_TOL


GRADCHECK_TOL = 1e-4
_EPS = float(np.finfo(np.float64).eps)


@dataclass
class GradcheckReport:
    entries: list

    def get(self, loss, network):
        for e in self.entries:
            if e.loss == loss and e.network == network:
                return e
        raise KeyError((loss, network))

    @property
    def present(self):
        return [e for e in self.entries if not e.absent]

    @property
    def failures(self):
        return [e for e in self.entries if not e.ok]

    @property
    def max_rel_error(self):
        return max((e.max_rel_error for e in self.present), default=0.0)

    def lines(self):
        for e in self.entries:
            status = "absent" if e.absent else f"{e.max_rel_error:.3e}"
            yield f"{e.loss}\t{e.network}\t{status}\t{e.n_checked}\t{e.n_kinks}\t{'ok' if e.ok else 'FAIL'}"


def _rel_error(analytic, numeric, resolution):
    """Relative error, treating differences below the FD resolution as zero."""
    diff = max(abs(analytic - numeric) - resolution, 0.0)
    return diff / max(abs(analytic), abs(numeric), resolution, 1e-300)


def _central_difference(f, p, local, step):
    """Central difference plus its roundoff bound and a kink indicator.

    For smooth f the gap between forward and backward slopes is linear in
    the step, so it halves when the step halves.  A ReLU or L1 corner inside
    the probe interval breaks that scaling; such probes set ``kinked``.
    """
    with torch.no_grad():
        flat = p.view(-1)
        orig = float(flat[local])
        vals = {}
        for k in (-2, -1, 0, 1, 2):
            flat[local] = orig + k * step / 2
            vals[k] = f()
        flat[local] = orig
    numeric = (vals[2] - vals[-2]) / (2 * step)
    scale = max(abs(v) for v in vals.values())
    resolution = 4 * _EPS * scale / step
    gap_h = (vals[2] - 2 * vals[0] + vals[-2]) / step
    gap_half = (vals[1] - 2 * vals[0] + vals[-1]) / (step / 2)
    kinked = abs(gap_h - 2 * gap_half) > 20 * resolution
    return numeric, resolution, kinked


def gradcheck_suite(config, n_params=20, step=1e-6, seed=0, grad_hook=None, max_tries=10):
    """Compare analytic gradients with central differences at float64.

    Checks every loss term and every group composite against every network.
    A (loss, network) pair whose analytic gradient is structurally missing
    (for example the discriminator loss w.r.t. the generators, whose outputs
    it sees detached) is reported as absent.  Probes that straddle a
    non-differentiable point are redrawn (at most ``max_tries`` draws per
    checked parameter) and counted in ``n_kinks``.  ``grad_hook(loss,
    network, grads)`` may rewrite analytic gradients, which lets tests
    inject faults.
    """
    state = init_state(config, dtype=torch.float64)
    nets = state.nets
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    b, c, s = 2, config.channels, config.image_size
    batch = Batch(
        torch.rand(b, c, s, s, generator=gen, dtype=torch.float64) * 2 - 1,
        torch.rand(b, c, s, s, generator=gen, dtype=torch.float64) * 2 - 1,
        torch.tensor([0, -1], dtype=torch.int64),
        torch.randn(b, config.d_u, generator=gen, dtype=torch.float64),
    )
    weights = config.effective_weights

    def evaluate():
        fw = forward(nets, batch.x, batch.y, batch.noise)
        parts, _ = loss_terms(nets, batch, fw, config.n_classes)
        return parts

    def scalar(name, parts):
        if name.startswith("composite_"):
            return L.compose(parts, weights)[name[len("composite_"):]]
        return parts[name]

    _, ggrads = group_gradients(state, evaluate(), weights)
    objectives = list(L.TERMS) + [f"composite_{g}" for g in L.GROUPS]

    entries = []
    for obj in objectives:
        if obj.startswith("composite_"):
            group = obj[len("composite_"):]
            nets_for = GROUP_NETWORKS[group]
        else:
            group, nets_for = None, TERM_NETWORKS
        for net in nets_for:
            params = list(nets.network(net).parameters())
            if group is not None:
                # verify the trainer's own gradient routine
                offset = sum(len(list(nets.network(n).parameters())) for n in nets_for[: nets_for.index(net)])
                grads = list(ggrads[group][offset:offset + len(params)])
            else:
                grads = list(torch.autograd.grad(scalar(obj, evaluate()), params, allow_unused=True))
            if grad_hook is not None:
                grads = grad_hook(obj, net, grads)
            if all(g is None for g in grads):
                entries.append(GradcheckEntry(obj, net, 0.0, 0, absent=True))
                continue
            sizes = np.array([p.numel() for p in params])
            bounds = np.cumsum(sizes)
            order = rng.permutation(int(sizes.sum()))
            budget = min(n_params, len(order))
            worst, checked, kinks = 0.0, 0, 0
            f = lambda: float(scalar(obj, evaluate()))
            for flat_idx in order[: budget * max_tries]:
                if checked == budget:
                    break
                pi = int(np.searchsorted(bounds, flat_idx, side="right"))
                local = int(flat_idx - (bounds[pi - 1] if pi else 0))
                numeric, resolution, kinked = _central_difference(f, params[pi], local, step)
                if kinked:
                    kinks += 1
                    continue
                g = grads[pi]
                analytic = 0.0 if g is None else float(g.reshape(-1)[local])
                worst = max(worst, _rel_error(analytic, numeric, resolution))
                checked += 1
            entries.append(GradcheckEntry(obj, net, worst, checked, n_kinks=kinks))
    return GradcheckReport(entries)
