import numpy as np
import pytest
import torch

from posegen.inference import (
    StyleSource,
    encode_codes,
    generate,
    infer,
    infer_instance,
    infer_sample,
    label_codes,
)


@pytest.fixture(scope="module")
def pose(tiny_data):
    return tiny_data.x[0]


@pytest.fixture(scope="module")
def ref(tiny_data):
    return tiny_data.y[0]


def test_style_source_exactly_one_variant(ref):
    assert StyleSource(reference_image=ref).kind == "reference"
    assert StyleSource(class_label=1).kind == "label"
    with pytest.raises(ValueError):
        StyleSource()
    with pytest.raises(ValueError):
        StyleSource(reference_image=ref, class_label=1)


def test_instance_is_deterministic(tiny_ckpt, pose, ref):
    a = infer_instance(tiny_ckpt, pose, ref)
    b = infer_instance(tiny_ckpt, pose, ref)
    assert a.shape == pose.shape
    assert np.array_equal(a, b)


def test_instance_uses_posterior_mean(tiny_ckpt, pose, ref):
    with torch.no_grad():
        enc = tiny_ckpt.nets.Q(torch.as_tensor(ref[None]))
    code = torch.cat([enc.z_s, enc.mu], 1).numpy()
    assert np.array_equal(encode_codes(tiny_ckpt, ref[None]), code)
    assert np.array_equal(infer_instance(tiny_ckpt, pose, ref), generate(tiny_ckpt, pose[None], code)[0])


def test_blank_pose_stays_in_range(tiny_ckpt, ref):
    out = infer_instance(tiny_ckpt, -np.ones_like(ref), ref)
    assert np.isfinite(out).all() and out.min() >= -1 and out.max() <= 1


def test_wrong_shape_rejected(tiny_ckpt, ref):
    with pytest.raises(ValueError, match="checkpoint expects"):
        infer_instance(tiny_ckpt, np.zeros((3, 32, 32), np.float32), ref)
    with pytest.raises(ValueError, match="latent code"):
        generate(tiny_ckpt, ref[None], np.zeros((1, 3)))


def test_sample_seeded_and_varied(tiny_ckpt, pose):
    a = infer_sample(tiny_ckpt, pose, 1, 3, seed=5)
    b = infer_sample(tiny_ckpt, pose, 1, 3, seed=5)
    c = infer_sample(tiny_ckpt, pose, 1, 3, seed=6)
    assert len(a) == 3
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    assert not np.array_equal(a[0], a[1])
    assert all(x.min() >= -1 and x.max() <= 1 for x in a)


def test_label_codes():
    z = label_codes(1, 4, 3, 2, seed=0)
    assert z.shape == (4, 5)
    assert np.array_equal(z[:, :2], np.tile([0.0, 1.0], (4, 1)))
    assert np.array_equal(z[:, 2:], np.random.default_rng(0).standard_normal((4, 3)).astype(np.float32))
    assert np.array_equal(label_codes(np.array([1.0, 0.0]), 2, 3, 2, 0)[:, :2], [[1, 0], [1, 0]])


@pytest.mark.parametrize("label,n", [(2, 1), (-1, 1), (np.zeros(3), 1), (0, 0)])
def test_label_codes_rejects(label, n):
    with pytest.raises(ValueError):
        label_codes(label, n, 3, 2, 0)


def test_infer_dispatch(tiny_ckpt, pose, ref):
    assert np.array_equal(infer(tiny_ckpt, pose, StyleSource(reference_image=ref))[0],
                          infer_instance(tiny_ckpt, pose, ref))
    out = infer(tiny_ckpt, pose, StyleSource(class_label=0), n=2, seed=1)
    assert all(np.array_equal(x, y) for x, y in zip(out, infer_sample(tiny_ckpt, pose, 0, 2, 1)))
