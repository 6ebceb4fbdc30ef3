"""Forward/backward kernels for the layer kinds of the embedding network.

All kernels work on batched float64 arrays. Frame-level tensors are shaped
``(batch, frames, dim)``; segment-level tensors ``(batch, dim)``.
"""
from dataclasses import dataclass

import numpy as np

from ..exceptions import LabelError, StructuralError

LAYER_KINDS = ("time_delay", "dense", "stats_pool", "grl")
ACTIVATIONS = ("relu", "none")

# floor added to the pooled variance before the square root
STD_EPS = 1e-10


@dataclass
class LayerSpec:
    """Static description of one layer.

    ``context`` and ``dilation`` only matter for ``time_delay`` layers.
    """

    name: str
    kind: str
    out_dim: int = 0
    context: int = 1
    dilation: int = 1
    activation: str = "relu"
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise StructuralError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise StructuralError(f"unknown activation {self.activation!r}")
        if self.kind == "time_delay":
            if self.context < 1 or self.context % 2 == 0:
                raise StructuralError(f"{self.name}: context width must be odd and >= 1")
            if self.dilation < 1:
                raise StructuralError(f"{self.name}: dilation must be >= 1")
        if self.kind in ("time_delay", "dense") and self.out_dim < 1:
            raise StructuralError(f"{self.name}: out_dim must be >= 1")

    @property
    def has_params(self):
        return self.kind in ("time_delay", "dense")

    @property
    def frame_span(self):
        """Frames consumed at the edges: T_out = T_in - frame_span."""
        if self.kind != "time_delay":
            return 0
        return (self.context - 1) * self.dilation


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -- time-delay -------------------------------------------------------------

def splice(x, context, dilation):
    """Stack the symmetric dilated context of every valid output frame.

    ``x`` is ``(B, T, D)``; returns ``(B, T - (K-1)*Dl, K*D)`` where the
    k-th block of columns holds frame ``t + (k - (K-1)/2) * Dl``.
    """
    t_out = x.shape[1] - (context - 1) * dilation
    blocks = [x[:, k * dilation:k * dilation + t_out] for k in range(context)]
    return np.concatenate(blocks, axis=-1) if context > 1 else blocks[0]


def unsplice(grad_ctx, context, dilation, t_in):
    b, t_out, kd = grad_ctx.shape
    d = kd // context
    dx = np.zeros((b, t_in, d))
    for k in range(context):
        dx[:, k * dilation:k * dilation + t_out] += grad_ctx[..., k * d:(k + 1) * d]
    return dx


def time_delay_forward(x, W, b, context, dilation):
    ctx = splice(x, context, dilation)
    return ctx @ W + b, ctx


def time_delay_backward(dz, ctx, W, context, dilation, t_in, need_input_grad=True,
                        need_param_grad=True):
    dW = db = None
    if need_param_grad:
        flat_ctx = ctx.reshape(-1, ctx.shape[-1])
        flat_dz = dz.reshape(-1, dz.shape[-1])
        dW = flat_ctx.T @ flat_dz
        db = flat_dz.sum(axis=0)
    dx = None
    if need_input_grad:
        dx = unsplice(dz @ W.T, context, dilation, t_in)
    return dW, db, dx


# -- dense ------------------------------------------------------------------

def dense_forward(x, W, b):
    return x @ W + b


def dense_backward(dz, x, W, need_input_grad=True, need_param_grad=True):
    dW = db = None
    if need_param_grad:
        dW = x.T @ dz
        db = dz.sum(axis=0)
    dx = dz @ W.T if need_input_grad else None
    return dW, db, dx


# -- statistics pooling -----------------------------------------------------

def _ordered_sum(x, axis):
    # summing sorted values makes the result independent of frame order
    return np.sort(x, axis=axis).sum(axis=axis)


def stats_pool_forward(x):
    """Concatenate per-dimension mean and population std over frames.

    Deviations are taken from the per-dimension minimum and summed in
    sorted order, so the output is bit-identical under any permutation of
    frames and a constant sequence yields a variance of exactly zero.
    """
    t = x.shape[1]
    low = x.min(axis=1, keepdims=True)
    shifted = x - low
    shift_mean = _ordered_sum(shifted, 1) / t
    centred = shifted - shift_mean[:, None]
    var = _ordered_sum(centred ** 2, 1) / t
    std = np.sqrt(var + STD_EPS)
    mean = low[:, 0] + shift_mean
    return np.concatenate([mean, std], axis=1), (centred, var, std)


def stats_pool_backward(dout, cache):
    centred, _, std = cache
    t = centred.shape[1]
    d = centred.shape[2]
    dmean, dstd = dout[:, :d], dout[:, d:]
    return dmean[:, None, :] / t + centred * (dstd / (t * std))[:, None, :]


# -- gradient reversal ------------------------------------------------------

def grad_reversal_forward(x):
    return x


def grad_reversal_backward(upstream, lam):
    """Backward pass of the reversal layer: ``-lam * upstream``."""
    return -lam * np.asarray(upstream, dtype=float)


# -- activations ------------------------------------------------------------

def relu(z):
    return np.maximum(z, 0.0)


def relu_backward(dout, z):
    return dout * (z > 0)


# -- softmax cross-entropy ----------------------------------------------------

def log_softmax(logits):
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, label):
    """Loss ``-log softmax(logits)[label]`` and its gradient w.r.t. ``logits``.

    Accepts a single logit vector with an integer label, or a ``(B, C)``
    batch with ``B`` labels; the batched loss is the sum over rows.
    """
    logits = np.asarray(logits, dtype=float)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(label))
    if labels.shape[0] != z.shape[0]:
        raise StructuralError("one label per logit row is required")
    n_classes = z.shape[1]
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(f"labels must be integers in [0, {n_classes})")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return float(loss.sum()), grad
