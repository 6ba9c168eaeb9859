"""Inference with test-time augmentation, and accuracy."""
from __future__ import annotations

import numpy as np

from .ops import reflect_pad2d

TTA_LEVELS = (0, 1, 2)
EVAL_BATCH = 2000


def _mirror_pair(net, x):
    return 0.5 * net.forward(x, False) + 0.5 * net.forward(np.ascontiguousarray(x[..., ::-1]), False)


def _infer_batch(net, x: np.ndarray, level: int) -> np.ndarray:
    if level == 0:
        return net.forward(x, False)
    if level == 1:
        return _mirror_pair(net, x)
    h, w = x.shape[-2:]
    padded = reflect_pad2d(x, 1)
    up_left = np.ascontiguousarray(padded[:, :, 0:h, 0:w])
    down_right = np.ascontiguousarray(padded[:, :, 2:h + 2, 2:w + 2])
    # weights 1/4 on the untranslated pair, 1/8 on each translated view
    return (0.5 * _mirror_pair(net, x)
            + 0.25 * _mirror_pair(net, up_left)
            + 0.25 * _mirror_pair(net, down_right))


def infer(net, images: np.ndarray, level: int = 0, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode logits for normalized ``images`` under TTA ``level`` (0 none, 1 mirror, 2 mirror+translate).

    ``net`` only needs a ``forward(x, training)`` method.
    """
    if level not in TTA_LEVELS:
        raise ValueError(f"tta level must be one of {TTA_LEVELS}, got {level}")
    outs = [_infer_batch(net, images[s:s + batch_size], level) for s in range(0, len(images), batch_size)]
    return np.concatenate(outs)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def evaluate(net, images: np.ndarray, labels: np.ndarray, level: int = 0) -> float:
    return accuracy(infer(net, images, level), labels)
