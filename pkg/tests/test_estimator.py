import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from posegen import PoseStyleGenerator
from posegen.validation import check_image_stack, check_labels, check_positive_int

SMALL = dict(image_size=16, d_u=4, ngf=8, ndf=8, nef=8, iterations=2)


@pytest.fixture(scope="module")
def fitted(tiny_data):
    return PoseStyleGenerator(**SMALL).fit(tiny_data.x, tiny_data.y, tiny_data.labels)


def test_get_set_params_and_clone():
    est = PoseStyleGenerator(**SMALL)
    params = est.get_params()
    assert params["lr"] == 6e-5 and params["w_c"] == 10.0 and params["image_size"] == 16
    twin = clone(est.set_params(seed=3))
    assert twin.get_params()["seed"] == 3
    assert not hasattr(twin, "nets_")


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        PoseStyleGenerator().transform(np.zeros((1, 3, 32, 32)))


def test_fit_attributes(fitted):
    assert fitted.n_iter_ == 2
    assert len(fitted.loss_history_) == 2
    assert fitted.config_.image_size == 16


def test_transform_predict_generate(fitted, tiny_data):
    codes = fitted.transform(tiny_data.y[:5])
    assert codes.shape == (5, 2 + 4)
    assert fitted.predict(tiny_data.y[:5]).shape == (5,)
    out = fitted.generate(tiny_data.x[:5], codes)
    assert out.shape == (5, 3, 16, 16)
    assert fitted.to_pose(tiny_data.y[:2]).shape == (2, 3, 16, 16)


def test_sample_and_render(fitted, tiny_data):
    s = fitted.sample(tiny_data.x[0], 1, n=3, seed=2)
    assert s.shape == (3, 3, 16, 16)
    assert np.array_equal(s, fitted.sample(tiny_data.x[0], 1, n=3, seed=2))
    assert fitted.render(tiny_data.x[0], tiny_data.y[0]).shape == (3, 16, 16)
    with pytest.raises(ValueError):
        fitted.sample(tiny_data.x[0], 1, n=0)


def test_fit_is_deterministic(fitted, tiny_data):
    again = PoseStyleGenerator(**SMALL).fit(tiny_data.x, tiny_data.y, tiny_data.labels)
    assert np.array_equal(again.transform(tiny_data.y[:3]), fitted.transform(tiny_data.y[:3]))


def test_save_and_reload(fitted, tiny_data, tmp_path):
    fitted.save(tmp_path / "ck")
    back = PoseStyleGenerator.from_checkpoint(tmp_path / "ck")
    assert back.get_params() == fitted.get_params()
    assert np.array_equal(back.transform(tiny_data.y[:3]), fitted.transform(tiny_data.y[:3]))


def test_fit_validates_inputs(tiny_data):
    est = PoseStyleGenerator(**SMALL)
    with pytest.raises(ValueError, match="16x16"):
        est.fit(np.zeros((2, 3, 32, 32)), tiny_data.y)
    with pytest.raises(ValueError, match="labels"):
        est.fit(tiny_data.x, tiny_data.y, np.zeros(3))
    with pytest.raises(ValueError):
        PoseStyleGenerator(**dict(SMALL, lr=-1)).fit(tiny_data.x, tiny_data.y)


def test_validation_helpers():
    assert check_image_stack(np.zeros((3, 8, 8))).shape == (1, 3, 8, 8)
    with pytest.raises(ValueError, match="\\[-1, 1\\]"):
        check_image_stack(np.full((1, 3, 8, 8), 2.0))
    with pytest.raises(ValueError, match="NaN"):
        check_image_stack(np.full((1, 3, 8, 8), np.nan))
    with pytest.raises(ValueError, match="square"):
        check_image_stack(np.zeros((1, 3, 8, 9)))
    with pytest.raises(ValueError, match="empty"):
        check_image_stack(np.zeros((0, 3, 8, 8)))
    assert check_labels(None, 3, 2).tolist() == [-1, -1, -1]
    assert check_labels([0.0, 1.0], 2, 2).dtype == np.int64
    with pytest.raises(ValueError):
        check_labels([0, 2], 2, 2)
    with pytest.raises(ValueError):
        check_labels([0.5, 1], 2, 2)
    assert check_positive_int(3, "n") == 3
    for bad in (0, -1, 1.5, True):
        with pytest.raises(ValueError):
            check_positive_int(bad, "n")
