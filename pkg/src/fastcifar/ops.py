"""Forward and backward kernels for every layer type the networks use.

Tensors are plain numpy arrays in NCHW layout. Kernels preserve the dtype of
their inputs: training runs in float32, gradient checks run the same code in
float64.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .exceptions import ShapeError

_INV_SQRT_2PI = 0.3989422804014327


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _same_pads(k: int) -> tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


def _padded_nhwc(x: np.ndarray, kh: int, kw: int, padding: str) -> np.ndarray:
    xt = x.transpose(0, 2, 3, 1)
    if padding == "none":
        return xt
    (t, b), (l, r) = _same_pads(kh), _same_pads(kw)
    n, h, w, c = xt.shape
    xp = np.zeros((n, h + t + b, w + l + r, c), dtype=x.dtype)
    xp[:, t:t + h, l:l + w] = xt
    return xp


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # xp is NHWC; columns are ordered (ky, kx, c) so every copy below moves a
    # contiguous run of channels
    n, hp, wp, c = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + ho, j:j + wo, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def _weight_matrix(weight: np.ndarray) -> np.ndarray:
    # Cout×(ky,kx,c), matching the column order of _im2col
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def _check_conv(x: np.ndarray, weight: np.ndarray, padding: str) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    if padding not in ("same", "none"):
        raise ValueError(f"padding must be 'same' or 'none', got {padding!r}")


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           padding: str = "same") -> np.ndarray:
    """Stride-1 cross-correlation. ``padding='same'`` zero-pads to keep H and W."""
    _check_conv(x, weight, padding)
    cout, _, kh, kw = weight.shape
    n = x.shape[0]
    cols = _im2col(_padded_nhwc(x, kh, kw, padding), kh, kw)
    ho = x.shape[2] if padding == "same" else x.shape[2] - kh + 1
    wo = x.shape[3] if padding == "same" else x.shape[3] - kw + 1
    out = cols @ _weight_matrix(weight).T
    if bias is not None:
        out += bias
    return np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))


def conv2d_backward(grad: np.ndarray, x: np.ndarray, weight: np.ndarray, padding: str = "same",
                    need_input: bool = True, need_weight: bool = True, need_bias: bool = False):
    """Gradients of :func:`conv2d` with respect to (input, weight, bias).

    Entries that were not requested come back as ``None``.
    """
    cout, cin, kh, kw = weight.shape
    n, _, ho, wo = grad.shape
    g2 = grad.transpose(0, 2, 3, 1).reshape(-1, cout)
    dx = dw = db = None
    if need_weight:
        cols = _im2col(_padded_nhwc(x, kh, kw, padding), kh, kw)
        dw = np.ascontiguousarray((g2.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2))
    if need_bias:
        db = g2.sum(axis=0)
    if need_input:
        dcols = (g2 @ _weight_matrix(weight)).reshape(n, ho, wo, kh, kw, cin)
        hp, wp = ho + kh - 1, wo + kw - 1
        dxp = np.zeros((n, hp, wp, cin), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + ho, j:j + wo] += dcols[:, :, :, i, j]
        if padding == "same":
            (t, _), (l, _) = _same_pads(kh), _same_pads(kw)
            dxp = dxp[:, t:t + x.shape[2], l:l + x.shape[3]]
        dx = np.ascontiguousarray(dxp.transpose(0, 3, 1, 2))
    return dx, dw, db


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def _pool_windows(x: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    xc = x[:, :, :ho * k, :wo * k]
    return xc.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)


def maxpool2d(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping k×k max pooling with floor truncation.

    Returns the pooled tensor and the flat in-window argmax (first occurrence
    in row-major order), which :func:`maxpool2d_backward` consumes.
    """
    if k <= 0:
        raise ValueError(f"pool size must be positive, got {k}")
    win = _pool_windows(x, k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2d_backward(grad: np.ndarray, arg: np.ndarray, input_shape, k: int) -> np.ndarray:
    n, c, h, w = input_shape
    ho, wo = grad.shape[2], grad.shape[3]
    win = np.zeros((n, c, ho, wo, k * k), dtype=grad.dtype)
    np.put_along_axis(win, arg[..., None], grad[..., None], axis=-1)
    dx = np.zeros(input_shape, dtype=grad.dtype)
    dx[:, :, :ho * k, :wo * k] = (win.reshape(n, c, ho, wo, k, k)
                                  .transpose(0, 1, 2, 4, 3, 5)
                                  .reshape(n, c, ho * k, wo * k))
    return dx


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------

def batchnorm2d(x: np.ndarray, scale: np.ndarray, bias: np.ndarray, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, retention: float = 0.6,
                eps: float = 1e-12):
    """Per-channel batch norm.

    In training mode the running statistics are updated in place as
    ``running = retention * running + (1 - retention) * batch_stat`` (the
    running variance uses the unbiased batch variance; normalization uses the
    biased one). Returns ``(out, cache)``.
    """
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ShapeError("batch norm in training mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        centered = x - mean[:, None, None]
        var = np.square(centered).mean(axis=(0, 2, 3))
        running_mean *= retention
        running_mean += (1 - retention) * mean
        running_var *= retention
        running_var += (1 - retention) * var * (m / (m - 1))
    else:
        mean, var = running_mean, running_var
        centered = x - mean[:, None, None]
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std[:, None, None]
    out = xhat * scale[:, None, None] + bias[:, None, None]
    return out, (xhat, inv_std, scale, training)


def batchnorm2d_backward(grad: np.ndarray, cache, need_input: bool = True):
    """Returns ``(dx, dbias)``; the scale is frozen so it gets no gradient."""
    xhat, inv_std, scale, training = cache
    dbias = grad.sum(axis=(0, 2, 3))
    if not need_input:
        return None, dbias
    dxhat = grad * scale[:, None, None]
    if not training:
        return dxhat * inv_std[:, None, None], dbias
    m = grad.shape[0] * grad.shape[2] * grad.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3))
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (dxhat - (s1 / m)[:, None, None] - xhat * (s2 / m)[:, None, None]) * inv_std[:, None, None]
    return dx, dbias


# ---------------------------------------------------------------------------
# elementwise and dense
# ---------------------------------------------------------------------------

def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x)."""
    return x * ndtr(x)


def gelu_backward(grad: np.ndarray, x: np.ndarray, cdf: np.ndarray | None = None) -> np.ndarray:
    """``grad * (Phi(x) + x * phi(x))``; pass ``cdf = Phi(x)`` to skip recomputing it."""
    pdf = np.exp(np.square(x) * x.dtype.type(-0.5))
    pdf *= x.dtype.type(_INV_SQRT_2PI)
    pdf *= x
    pdf += ndtr(x) if cdf is None else cdf
    return grad * pdf


def linear(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """``x @ weight.T`` with no bias."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: cannot multiply {x.shape} by {weight.shape}ᵀ")
    return x @ weight.T


def linear_backward(grad: np.ndarray, x: np.ndarray, weight: np.ndarray):
    return grad @ weight, grad.T @ x


def reflect_pad2d(x: np.ndarray, p: int) -> np.ndarray:
    """Mirror padding that excludes the edge pixel (``[a,b,c] -> [b,a,b,c,b]``)."""
    if p < 0:
        raise ValueError(f"padding must be non-negative, got {p}")
    if p >= x.shape[-2] or p >= x.shape[-1]:
        raise ValueError(f"reflection padding {p} needs spatial extents larger than {p}, got {x.shape[-2:]}")
    if p == 0:
        return x.copy()
    widths = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, widths, mode="reflect")


def softmax_crossentropy(logits: np.ndarray, labels: np.ndarray, smoothing: float = 0.0):
    """Summed label-smoothed cross entropy and its gradient with respect to the logits.

    The target puts ``1 - smoothing + smoothing/K`` on the true class and
    ``smoothing/K`` elsewhere. The gradient is ``softmax - target`` per row,
    not divided by the batch size.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    target = np.full((n, k), smoothing / k, dtype=logits.dtype)
    target[np.arange(n), labels] += 1.0 - smoothing
    loss = float(-(target * logp).sum(dtype=np.float64))
    grad = np.exp(logp) - target
    return loss, grad
