"""PNG <-> float image <-> tensor plumbing.

Images are float (h, w, 3) arrays in [0, 1]. Quantization to 8 bit is
round-half-away-from-zero (floor(x*255 + 0.5) on clipped values), and a
write-then-read round trip reproduces 8-bit values exactly.
"""

import numpy as np
from PIL import Image as PILImage

from . import tensor as T


def to_uint8(img):
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def from_uint8(arr):
    return np.asarray(arr, dtype=np.float32) / 255.0


def write_png(path, img):
    """img: (h, w, 3) floats in [0,1] or (h, w) for grayscale."""
    arr = to_uint8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    PILImage.fromarray(arr, mode=mode).save(path, format="PNG")


def read_png(path):
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def to_tensor(images, dtype=np.float32):
    """Stack (h, w, 3) images into an (n, 3, h, w) tensor."""
    if not isinstance(images, (list, tuple)):
        images = [images]
    batch = np.stack([np.asarray(im, dtype=dtype).transpose(2, 0, 1) for im in images])
    return T.Tensor(batch, dtype=dtype)


def from_tensor(t):
    """(n, 3, h, w) tensor -> list of (h, w, 3) float arrays."""
    return [np.ascontiguousarray(t.data[i].transpose(1, 2, 0)) for i in range(t.shape[0])]


def reflect_pad_to_multiple(img, multiple):
    """Reflect-pad (h, w, 3) so both dims divide `multiple`; returns
    (padded, original (h, w)) for cropping the output back."""
    h, w = img.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img, (h, w)
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return padded, (h, w)
