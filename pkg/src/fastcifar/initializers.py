"""Frozen patch-whitening and partial-identity initialization."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WhitenConfig:
    patch_h: int = 2
    patch_w: int = 2
    sample_count: int = 5000
    eps: float = 5e-4

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")


def extract_patches(images: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """All stride-1 ``ph``×``pw`` patches, shape ``(M*(H-ph+1)*(W-pw+1), C, ph, pw)``."""
    if ph > images.shape[2] or pw > images.shape[3]:
        raise ValueError(f"patch {ph}x{pw} larger than images {images.shape[2:]}")
    win = np.lib.stride_tricks.sliding_window_view(images, (ph, pw), axis=(2, 3))
    # M, C, Ho, Wo, ph, pw -> M, Ho, Wo, C, ph, pw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, images.shape[1], ph, pw)


def patch_second_moment(images: np.ndarray, ph: int, pw: int, chunk: int = 500) -> np.ndarray:
    """Uncentered patch covariance ``XᵀX / P``, accumulated in float64 over image chunks."""
    d = images.shape[1] * ph * pw
    acc = np.zeros((d, d))
    count = 0
    for s in range(0, len(images), chunk):
        flat = extract_patches(images[s:s + chunk], ph, pw).reshape(-1, d).astype(np.float64)
        acc += flat.T @ flat
        count += len(flat)
    return acc / count


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of each column non-negative
    rows = np.abs(vecs).argmax(axis=0)
    signs = np.where(vecs[rows, np.arange(vecs.shape[1])] < 0, -1.0, 1.0)
    return vecs * signs


def eigen_descending(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        vals, vecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigendecomposition of patch covariance failed: {e}") from e
    if not np.all(np.isfinite(vals)):
        raise NumericalError("patch covariance has non-finite eigenvalues")
    order = np.argsort(vals)[::-1]
    return vals[order], _fix_signs(vecs[:, order])


def whitening_from_covariance(cov: np.ndarray, shape: tuple[int, int, int], eps: float):
    vals, vecs = eigen_descending(cov)
    vals = np.clip(vals, 0.0, None)
    filters = (vecs / np.sqrt(vals + eps)).T.reshape(-1, *shape)
    return vals, filters


def whitening_filters(patches: np.ndarray, eps: float = 5e-4) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and filters ``eigvec_k / sqrt(eigval_k + eps)``.

    ``patches`` has shape ``(P, C, ph, pw)``; the returned filters have shape
    ``(C*ph*pw, C, ph, pw)``.
    """
    p = len(patches)
    d = int(np.prod(patches.shape[1:]))
    if p < d:
        raise ValueError(f"need at least {d} patches, got {p}")
    flat = patches.reshape(p, d).astype(np.float64)
    cov = flat.T @ flat / p
    return whitening_from_covariance(cov, patches.shape[1:], eps)


def init_whiten_layer(graph, normalized_images: np.ndarray, cfg: WhitenConfig = WhitenConfig()) -> np.ndarray:
    """Set the first conv to ±whitening filters of the leading training images.

    Filters 0..11 whiten, 12..23 are their negation. The bias is zeroed and
    the weight frozen. Returns the eigenvalues.
    """
    layer = graph.whiten
    weight = layer.weight.value
    cout, cin, ph, pw = weight.shape
    d = cin * ph * pw
    if cout != 2 * d or (ph, pw) != (cfg.patch_h, cfg.patch_w):
        raise ConfigError(f"whitening layer must be a {2 * d}-filter {cfg.patch_h}x{cfg.patch_w} conv, got {weight.shape}")
    if len(normalized_images) < cfg.sample_count:
        log.warning("only %d images available for whitening (wanted %d)", len(normalized_images), cfg.sample_count)
    sample = normalized_images[:cfg.sample_count]
    cov = patch_second_moment(sample, ph, pw)
    vals, filters = whitening_from_covariance(cov, (cin, ph, pw), cfg.eps)
    filters = filters.astype(weight.dtype)
    weight[:d] = filters
    weight[d:] = -filters
    layer.weight.requires_grad = False
    layer.weight.grad = None
    if layer.bias is not None:
        layer.bias.value[:] = 0
    return vals


def dirac_init(weight: np.ndarray) -> None:
    """In place: the first ``min(Cout, Cin)`` filters become identity maps."""
    cout, cin, kh, kw = weight.shape
    m = min(cout, cin)
    weight[:m] = 0
    weight[np.arange(m), np.arange(m), kh // 2, kw // 2] = 1


def default_uniform(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float32) -> np.ndarray:
    """Uniform on ±1/sqrt(fan_in) with fan_in = prod(shape[1:])."""
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
