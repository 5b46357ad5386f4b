"""PNG input/output for [-1, 1] image tensors.

Images travel through the package as float arrays shaped ``[C, H, W]``.
On disk they are 8-bit RGB PNGs; the mapping between byte values and the
signed range is linear (0 -> -1, 255 -> +1).
"""
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def to_bytes(image):
    arr = np.asarray(image, dtype=np.float64)
    arr = np.clip((arr + 1.0) * 0.5 * 255.0, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8)


def from_bytes(arr):
    return arr.astype(np.float32) / 255.0 * 2.0 - 1.0


def save_png(image, path):
    """Write a ``[C, H, W]`` image in [-1, 1] as an RGB (or grayscale) PNG."""
    arr = to_bytes(image)
    if arr.ndim != 3:
        raise ValueError(f"expected [C, H, W] image, got shape {arr.shape}")
    if arr.shape[0] == 1:
        pil = Image.fromarray(arr[0], mode="L")
    elif arr.shape[0] == 3:
        pil = Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0)), mode="RGB")
    else:
        raise ValueError(f"cannot write {arr.shape[0]}-channel image as PNG")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no ancillary chunks, so identical pixels give identical bytes
    pil.save(path, format="PNG", optimize=False, compress_level=6)


def load_png(path, size=None, channels=3):
    """Read an image file into a float32 ``[channels, size, size]`` array."""
    with Image.open(path) as pil:
        pil = pil.convert("RGB" if channels == 3 else "L")
        if size is not None and pil.size != (size, size):
            pil = pil.resize((size, size), Image.BILINEAR)
        arr = np.asarray(pil)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return from_bytes(arr)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def contact_sheet(images, ncols=None, pad=1):
    """Tile a list of ``[C, H, W]`` images into one grid image."""
    images = [np.asarray(im) for im in images]
    n = len(images)
    if n == 0:
        raise ValueError("no images to tile")
    c, h, w = images[0].shape
    ncols = ncols or int(np.ceil(np.sqrt(n)))
    nrows = int(np.ceil(n / ncols))
    sheet = -np.ones((c, nrows * (h + pad) + pad, ncols * (w + pad) + pad), dtype=np.float32)
    for i, im in enumerate(images):
        r, col = divmod(i, ncols)
        top, left = pad + r * (h + pad), pad + col * (w + pad)
        sheet[:, top:top + h, left:left + w] = im
    return sheet
