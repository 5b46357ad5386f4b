"""Acceptance criteria 1-10.

Each test prints one ``[acceptance N] PASS|FAIL`` line.  The desk-scale runs
(criteria 5-9) train three 32 px models for 1000 iterations each on one
shared toy dataset: the full objective, one without the latent consistency
term and one without the class supervision term.  Metrics use a separately
seeded held-out dataset.
"""
import copy
import filecmp
import math
import time

import numpy as np
import pytest
import torch

from posegen import evaluation as E
from posegen import losses as L
from posegen.checkpoint import load_checkpoint
from posegen.cli import dispatch
from posegen.config import LossWeights, TrainConfig
from posegen.datagen import generate_dataset, load_dataset
from posegen.inference import generate, label_codes
from posegen.trainer import (
    GROUP_NETWORKS,
    fit_arrays,
    forward,
    gradcheck_suite,
    init_state,
    loss_terms,
    read_loss_log,
    sample_batch,
    train,
    train_step,
)

from test_evaluation import reference_ssim

SEED = 0
N_TRAIN, N_HELD = 600, 200


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {n:>2}] {'PASS' if ok else 'FAIL'}  {detail}")


# -- shared desk-scale runs -------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def train_dir(workspace):
    generate_dataset(N_TRAIN, N_TRAIN, 2, 32, SEED, workspace / "train")
    return workspace / "train"


@pytest.fixture(scope="module")
def held_dir(workspace):
    generate_dataset(N_HELD, N_HELD, 2, 32, SEED + 1, workspace / "held")
    return workspace / "held"


VARIANTS = {
    "full": {},
    "ablate_lc": {"ablate_lc": True},
    "ablate_ls": {"ablate_ls": True},
}


@pytest.fixture(scope="module")
def runs(workspace, train_dir):
    out = {}
    for name, flags in VARIANTS.items():
        cfg = TrainConfig(image_size=32, n_classes=2, iterations=1000, batch_size=4, seed=SEED, **flags)
        t0 = time.time()
        result = train(cfg, train_dir, workspace / name)
        out[name] = dict(result=result, seconds=time.time() - t0, ckpt=load_checkpoint(result.final_checkpoint))
    return out


@pytest.fixture(scope="module")
def metrics(runs, held_dir):
    held = load_dataset(held_dir, 32, 3)
    out = {}
    for name, run in runs.items():
        ck = run["ckpt"]
        proj = E.project_latents(ck, held_dir, data=held)
        out[name] = dict(
            diversity=E.sample_diversity(ck, held_dir, n_poses=10, n_samples=20, seed=SEED, data=held)[0],
            class_adherence=E.class_adherence(ck, held_dir, n_per_pose=2, seed=SEED, n_poses=25, data=held),
            instance_adherence=E.instance_adherence(ck, held_dir, n_pairs=200, seed=SEED, data=held),
            separability=E.linear_separability(proj.points, proj.labels),
            n_projected=len(proj.points),
        )
    return out


# -- 1 ------------------------------------------------------------------------------------

def _loss_examples():
    """(name, value, expected) for every losses example, evaluated at float64."""
    rng = np.random.default_rng(1)
    t = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64))
    ones, zeros = t(np.ones((2, 1, 4, 4))), t(np.zeros((2, 1, 4, 4)))
    rows = []
    rows.append(("gan_d perfect", L.lsgan_d_loss(ones, ones, zeros, zeros), 0.0))
    rows.append(("gan_d worst", L.lsgan_d_loss(zeros, zeros, ones, ones), 4.0))
    rx, ry, fx, fy = rng.normal(size=(4, 2, 1, 4, 4))
    rows.append(("gan_d random", L.lsgan_d_loss(t(rx), t(ry), t(fx), t(fy)),
                 ((rx - 1) ** 2).mean() + ((ry - 1) ** 2).mean() + (fx**2).mean() + (fy**2).mean()))
    rows.append(("gan_g wins", L.lsgan_g_loss(ones, ones), 0.0))
    rows.append(("gan_g zeros", L.lsgan_g_loss(zeros, zeros), 2.0))
    rows.append(("gan_g random", L.lsgan_g_loss(t(fx), t(fy)), ((fx - 1) ** 2).mean() + ((fy - 1) ** 2).mean()))
    x, y, xr, yr = rng.uniform(-1, 1, (4, 2, 3, 8, 8))
    rows.append(("cycle identity", L.cycle_loss(t(x), t(x), t(y), t(y)), 0.0))
    rows.append(("cycle offset", L.cycle_loss(t(x), t(x + 0.5), t(y), t(y)), 0.5))
    rows.append(("cycle random", L.cycle_loss(t(x), t(xr), t(y), t(yr)), np.abs(xr - x).mean() + np.abs(yr - y).mean()))
    rows.append(("kl prior", L.kl_loss(t([0.0, 0.0]), t([0.0, 0.0])), 0.0))
    rows.append(("kl mu=1", L.kl_loss(t([1.0]), t([0.0])), 0.5))
    mu, lv = rng.normal(size=(2, 6))
    rows.append(("kl random", L.kl_loss(t(mu), t(lv)), 0.5 * sum(math.exp(v) + m * m - 1 - v for m, v in zip(mu, lv))))
    z, zh = rng.normal(size=(2, 3, 10))
    rows.append(("c identity", L.latent_consistency_loss(t(z), t(z)), 0.0))
    rows.append(("c ones", L.latent_consistency_loss(t(np.zeros(10)), t(np.ones(10))), 1.0))
    rows.append(("c random", L.latent_consistency_loss(t(z), t(zh)), np.abs(zh - z).mean()))
    rows.append(("s one-hot", L.supervision_loss(t([0.0, 1.0]), t([0.0, 1.0]))[0], 0.0))
    rows.append(("s half", L.supervision_loss(t([0.5, 0.5]), t([1.0, 0.0]))[0], 0.5))
    loss, skipped = L.supervision_loss(t([[0.3, 0.7]]), t([[0.0, 0.0]]), labeled=[False])
    rows.append(("s unlabeled", loss, 0.0))
    rows.append(("s unlabeled flagged", float(skipped), 1.0))
    parts = {k: 1.0 for k in L.TERMS}
    rows.append(("compose Q defaults", L.compose(parts)["Q"], 12.01))
    zero_w = L.compose(parts, LossWeights(0, 0, 0, 0, 0))
    rows.append(("compose zero weights", max(abs(v) for v in zero_w.values()), 0.0))
    vals = dict(zip(L.TERMS, rng.uniform(0, 5, 6)))
    w = LossWeights(*rng.uniform(0, 3, 5))
    comps = L.compose(vals, w)
    adv = w.w_gan * vals["gan_g"] + w.w_cyc * vals["rec"]
    rows.append(("compose D", comps["D"], w.w_gan * vals["gan_d"]))
    rows.append(("compose Q", comps["Q"], adv + w.w_s * vals["s"] + w.w_kl * vals["kl"]))
    rows.append(("compose G_X", comps["G_X"], adv))
    rows.append(("compose G_Y", comps["G_Y"], adv + w.w_c * vals["c"]))
    return [(n, float(v), float(e)) for n, v, e in rows]


def test_criterion_01_loss_golden_values(capsys):
    t0 = time.perf_counter()
    rows = _loss_examples()
    elapsed = time.perf_counter() - t0
    worst = max(abs(v - e) for _, v, e in rows)
    bad = [n for n, v, e in rows if abs(v - e) >= 1e-6]
    ok = not bad and elapsed < 1.0
    report(capsys, 1, ok, f"{len(rows)} examples, max abs err {worst:.2e}, {elapsed:.3f}s {bad or ''}")
    assert ok


# -- 2 ------------------------------------------------------------------------------------

def test_criterion_02_gradient_suite(capsys):
    t0 = time.time()
    rep = gradcheck_suite(TrainConfig(image_size=16, d_u=4))
    elapsed = time.time() - t0
    ok = not rep.failures and rep.max_rel_error < 1e-4 and elapsed < 300
    report(capsys, 2, ok, f"{len(rep.present)} checked pairs ({len(rep.entries) - len(rep.present)} absent), "
                          f"max rel err {rep.max_rel_error:.2e}, {elapsed:.0f}s")
    assert ok


# -- 3 ------------------------------------------------------------------------------------

def test_criterion_03_kl_properties(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    scale = 10.0 ** rng.uniform(-4, 0.5, (10000, 1))
    mu = torch.as_tensor(rng.normal(0, 1, (10000, 8)) * scale)
    lv = torch.as_tensor(rng.normal(0, 1, (10000, 8)) * scale)
    mu[::3] = 0.0
    lv[1::3] = 0.0
    per_row = 0.5 * (torch.exp(lv) + mu**2 - 1 - lv).sum(-1)
    batch_value = float(L.kl_loss(mu, lv))
    rows = [float(L.kl_loss(mu[i], lv[i])) for i in range(0, 10000, 7)]
    zero = float(L.kl_loss(torch.zeros(8, dtype=torch.float64), torch.zeros(8, dtype=torch.float64)))
    elapsed = time.perf_counter() - t0
    ok = (
        bool((per_row >= 0).all())
        and min(rows) > 0.0
        and abs(batch_value - float(per_row.mean())) < 1e-9
        and abs(zero) <= 1e-12
        and elapsed < 1.0
    )
    report(capsys, 3, ok, f"min over 10000 draws {float(per_row.min()):.3e}, kl(0,0) = {zero}, {elapsed:.3f}s")
    assert ok


# -- 4 ------------------------------------------------------------------------------------

def test_criterion_04_schedule_fidelity(capsys, train_dir):
    data = load_dataset(train_dir, 32, 3)
    cfg = TrainConfig(seed=SEED)
    state = init_state(cfg)
    violations = []
    x, y = data.x.astype(np.float32), data.y.astype(np.float32)
    for it in range(10):
        batch = sample_batch(cfg, x, y, data.labels, it)
        fw = forward(state.nets, batch.x, batch.y, batch.noise)
        parts, _ = loss_terms(state.nets, batch, fw, cfg.n_classes)
        for net in ("G_X", "G_Y", "Q"):
            grads = torch.autograd.grad(parts["gan_d"], list(state.nets.network(net).parameters()),
                                        retain_graph=True, allow_unused=True)
            if any(g is not None for g in grads):
                violations.append(f"gan_d reaches {net} at iter {it}")
        del fw, parts
        for group, owned in GROUP_NETWORKS.items():
            trial = copy.deepcopy(state)
            before = {(n, k): p.detach().clone() for n, k, p in trial.nets.named_network_parameters()}
            train_step(trial, batch, groups=(group,))
            for n, k, p in trial.nets.named_network_parameters():
                if n not in owned and not torch.equal(p, before[(n, k)]):
                    violations.append(f"{group} update changed {n}/{k} at iter {it}")
        train_step(state, batch)

    logs = []
    for _ in range(2):
        st, log = init_state(cfg), []
        fit_arrays(st, data.x, data.y, data.labels, 5, on_report=lambda i, r: log.append(r.as_dict()))
        logs.append(log)
    worst = max(abs(a[k] - b[k]) / max(abs(a[k]), 1e-12) for a, b in zip(*logs) for k in a)
    ok = not violations and worst <= 1e-6
    report(capsys, 4, ok, f"isolation/detachment violations {len(violations)} over 10 iterations, "
                          f"5-iteration log max rel diff {worst:.1e}")
    assert ok, violations[:5]


# -- 5 ------------------------------------------------------------------------------------

def test_criterion_05_desk_scale_training(capsys, runs):
    log = [r for _, r in read_loss_log(runs["full"]["result"].loss_log)]
    rec = np.array([r.rec for r in log])
    early, late = rec[:100].mean(), rec[900:1000].mean()
    seconds = runs["full"]["seconds"]
    ok = len(log) == 1000 and late < 0.5 * early and seconds <= 30 * 60
    report(capsys, 5, ok, f"rec {early:.4f} (iters 0-99) -> {late:.4f} (900-999), ratio {late / early:.3f}, "
                          f"{seconds / 60:.1f} min on {torch.get_num_threads()} thread(s)")
    assert ok


# -- 6 ------------------------------------------------------------------------------------

def test_criterion_06_ablation_ordering(capsys, metrics):
    div_full, div_lc = metrics["full"]["diversity"], metrics["ablate_lc"]["diversity"]
    ca_full, n_ca = metrics["full"]["class_adherence"]
    ca_ls, _ = metrics["ablate_ls"]["class_adherence"]
    ok = div_full > 10 * div_lc and div_lc < 0.01 and ca_full - ca_ls >= 0.10 and ca_full >= 0.7
    report(capsys, 6, ok, f"diversity full {div_full:.4f} vs ablate_lc {div_lc:.4f} (x{div_full / max(div_lc, 1e-12):.1f}); "
                          f"class adherence full {ca_full:.3f} vs ablate_ls {ca_ls:.3f} over {n_ca} samples")
    assert ok


# -- 7 ------------------------------------------------------------------------------------

def test_criterion_07_instance_control(capsys, metrics):
    ia_full, n = metrics["full"]["instance_adherence"]
    ia_lc, _ = metrics["ablate_lc"]["instance_adherence"]
    ok = n == 200 and ia_full >= 0.8 and ia_full > ia_lc
    report(capsys, 7, ok, f"instance adherence full {ia_full:.3f} vs ablate_lc {ia_lc:.3f} on {n} held-out pairs")
    assert ok


# -- 8 ------------------------------------------------------------------------------------

def test_criterion_08_latent_structure(capsys, metrics):
    sep = metrics["full"]["separability"]
    ok = sep >= 0.9
    report(capsys, 8, ok, f"linear separator on 2D PCA of {metrics['full']['n_projected']} held-out codes: {sep:.3f}")
    assert ok


# -- 9 ------------------------------------------------------------------------------------

def test_criterion_09_ssim(capsys, runs, train_dir, held_dir):
    rng = np.random.default_rng(9)
    pairs = [(rng.uniform(-1, 1, (3, 32, 32)), rng.uniform(-1, 1, (3, 32, 32))) for _ in range(50)]
    identity = all(E.ssim(a, a) == 1.0 for a, _ in pairs)
    symmetry = max(abs(E.ssim(a, b) - E.ssim(b, a)) for a, b in pairs)
    brute = max(abs(E.ssim(a, b) - reference_ssim(a, b)) for a, b in pairs)

    ck = runs["full"]["ckpt"]
    held = load_dataset(held_dir, 32, 3)
    train_y = load_dataset(train_dir, 32, 3).y
    samples = []
    for p in range(20):
        codes = label_codes(p % 2, 2, ck.config.d_u, 2, p)
        samples.extend(generate(ck, np.repeat(held.x[p:p + 1], 2, 0), codes))
    max_ssim = float(E.ssim_matrix(samples, train_y).max())

    ok = identity and symmetry <= 1e-12 and brute <= 1e-6 and max_ssim < 0.99
    report(capsys, 9, ok, f"identity exact {identity}, symmetry {symmetry:.1e}, brute-force max diff {brute:.1e} "
                          f"(50 pairs); max train-vs-generated SSIM {max_ssim:.4f} over {len(samples)}x{len(train_y)}")
    assert ok


# -- 10 -----------------------------------------------------------------------------------

def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    files = [f for f in cmp.common_files]
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return not mismatch and not errors and all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_criterion_10_end_to_end_determinism(capsys, workspace, runs):
    root = workspace / "determinism"
    codes = []
    for tag in ("a", "b"):
        codes.append(dispatch(["datagen", "--out", str(root / tag / "data"), "--n-x", "50", "--n-y", "50",
                               "--classes", "2", "--size", "32", "--seed", "7"]))
    pose = root / "a" / "data" / "X" / "x_00000.png"
    for tag in ("a", "b"):
        codes.append(dispatch(["infer", "sample", "--ckpt", str(runs["full"]["result"].final_checkpoint),
                               "--pose", str(pose), "--class", "1", "--n", "8", "--seed", "3",
                               "--out", str(root / tag / "samples")]))
    same_data = _same_tree(root / "a" / "data", root / "b" / "data")
    same_samples = _same_tree(root / "a" / "samples", root / "b" / "samples")
    n_files = sum(1 for p in (root / "a").rglob("*") if p.is_file())
    ok = codes == [0, 0, 0, 0] and same_data and same_samples
    report(capsys, 10, ok, f"exit codes {codes}; datagen identical {same_data}, infer sample identical "
                           f"{same_samples} ({n_files} files per run)")
    assert ok
