"""Scikit-learn style wrapper around training and inference.

``fit(X, Y, labels)`` trains on unpaired stacks of pose sketches ``X`` and
appearance images ``Y``.  Afterwards ``transform(Y)`` returns style codes,
``predict(Y)`` the class read off the code, and ``generate`` /
``sample`` / ``render`` produce images.
"""
import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import from_flat
from .inference import encode_codes, generate, infer_instance, infer_sample
from .trainer import fit_arrays, init_state
from .validation import check_image_stack, check_labels, check_positive_int


class PoseStyleGenerator(TransformerMixin, BaseEstimator):
    """Unpaired pose-to-appearance generator with a class-structured style code.

    Parameters mirror the training configuration keys; see ``TrainConfig``.
    """

    def __init__(self, image_size=32, channels=3, d_u=8, n_classes=2, lr=6e-5,
                 batch_size=4, iterations=1000, seed=0, ablate_lc=False, ablate_ls=False,
                 w_gan=1.0, w_cyc=10.0, w_kl=0.01, w_c=10.0, w_s=1.0,
                 ngf=16, ndf=16, nef=16):
        self.image_size = image_size
        self.channels = channels
        self.d_u = d_u
        self.n_classes = n_classes
        self.lr = lr
        self.batch_size = batch_size
        self.iterations = iterations
        self.seed = seed
        self.ablate_lc = ablate_lc
        self.ablate_ls = ablate_ls
        self.w_gan = w_gan
        self.w_cyc = w_cyc
        self.w_kl = w_kl
        self.w_c = w_c
        self.w_s = w_s
        self.ngf = ngf
        self.ndf = ndf
        self.nef = nef

    def _make_config(self):
        return from_flat(self.get_params())

    def fit(self, X, Y, labels=None):
        config = self._make_config()
        X = check_image_stack(X, config.channels, config.image_size, "X")
        Y = check_image_stack(Y, config.channels, config.image_size, "Y")
        labels = check_labels(labels, len(Y), config.n_classes)
        state = init_state(config)
        history = []
        fit_arrays(state, X, Y, labels, config.iterations, on_report=lambda it, r: history.append(r))
        state.nets.eval()
        self.config_ = config
        self.nets_ = state.nets
        self.n_iter_ = state.iteration
        self.loss_history_ = history
        return self

    @property
    def checkpoint_(self):
        check_is_fitted(self, "nets_")
        return Checkpoint(self.config_, self.nets_, self.n_iter_, {})

    def transform(self, Y):
        """Deterministic style codes ``[z_s, mu]``, shape ``[N, n_classes + d_u]``."""
        ckpt = self.checkpoint_
        Y = check_image_stack(Y, ckpt.config.channels, ckpt.config.image_size, "Y")
        return encode_codes(ckpt, Y)

    def predict(self, Y):
        """Class id read from the class part of the code."""
        return self.transform(Y)[:, : self.config_.n_classes].argmax(axis=1)

    def generate(self, X, codes):
        """Appearance images for poses ``X`` with explicit codes."""
        ckpt = self.checkpoint_
        X = check_image_stack(X, ckpt.config.channels, ckpt.config.image_size, "X")
        return generate(ckpt, X, codes)

    def render(self, pose, reference):
        """Instance control: ``pose`` in the style of ``reference``."""
        return infer_instance(self.checkpoint_, pose, reference)

    def sample(self, pose, label, n=1, seed=0):
        """Conditional sampling: ``n`` images of class ``label`` for one pose."""
        check_positive_int(n, "n")
        return np.stack(infer_sample(self.checkpoint_, pose, label, n, seed))

    def to_pose(self, Y):
        """Pose sketches extracted from appearance images (``G_X``)."""
        ckpt = self.checkpoint_
        Y = check_image_stack(Y, ckpt.config.channels, ckpt.config.image_size, "Y")
        with torch.no_grad():
            return self.nets_.G_X(torch.as_tensor(Y)).clamp(-1, 1).numpy()

    def save(self, path):
        check_is_fitted(self, "nets_")
        return save_checkpoint(path, self.config_, self.nets_, self.n_iter_)

    @classmethod
    def from_checkpoint(cls, path):
        ckpt = load_checkpoint(path)
        params = {k: v for k, v in ckpt.config.to_flat().items()
                  if k in cls._get_param_names()}
        est = cls(**params)
        est.config_ = ckpt.config
        est.nets_ = ckpt.nets
        est.n_iter_ = ckpt.iteration
        est.loss_history_ = []
        return est
