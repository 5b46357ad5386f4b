"""Input checks shared by the estimator and the command line."""
import numpy as np


def check_image_stack(images, channels=None, size=None, name="images", allow_single=True):
    """Return ``images`` as float32 ``[N, C, S, S]`` in [-1, 1], or raise ValueError."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3 and allow_single:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"{name}: expected [N, C, H, W] array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name}: empty stack")
    if arr.shape[2] != arr.shape[3]:
        raise ValueError(f"{name}: images must be square, got {arr.shape[2]}x{arr.shape[3]}")
    if channels is not None and arr.shape[1] != channels:
        raise ValueError(f"{name}: expected {channels} channels, got {arr.shape[1]}")
    if size is not None and arr.shape[2] != size:
        raise ValueError(f"{name}: expected {size}x{size} images, got {arr.shape[2]}x{arr.shape[3]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains NaN or inf")
    if arr.min() < -1.0 - 1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError(f"{name}: pixel values must lie in [-1, 1]")
    return arr


def check_labels(labels, n, n_classes, name="labels"):
    """Integer class ids, one per image; -1 marks an unlabeled image."""
    if labels is None:
        return np.full(n, -1, dtype=np.int64)
    arr = np.asarray(labels)
    if arr.shape != (n,):
        raise ValueError(f"{name}: expected shape ({n},), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name}: class ids must be integers")
    arr = arr.astype(np.int64)
    bad = (arr < -1) | (arr >= n_classes)
    if bad.any():
        raise ValueError(f"{name}: class id {int(arr[bad][0])} outside [-1, {n_classes})")
    return arr


def check_positive_int(value, name):
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
