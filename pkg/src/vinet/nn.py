"""Differentiable layers and the SGD optimizer.

Ops accept either the unbatched shapes from the module contracts
(``conv2d`` on C×H×W, ``linear`` on a flat vector) or a leading batch
dimension; internally everything runs batched. Convolutions use
cross-correlation semantics (no kernel flip) and are computed as
im2col + BLAS matmul, with the input gradient expressed as a stride-1
correlation of the (dilated) output gradient against the flipped kernel
so no scatter-add is needed on the hot path.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, Tensor

__all__ = [
    "conv2d",
    "maxpool2d",
    "relu",
    "batchnorm2d",
    "linear",
    "softmax_cross_entropy",
    "sgd_step",
    "Module",
    "Conv2d",
    "MaxPool2d",
    "ReLU",
    "BatchNorm2d",
    "Linear",
    "Flatten",
    "SGD",
    "uniform_init",
    "bind_parameter_names",
]


# ---------------------------------------------------------------------------
# low-level numpy kernels
# ---------------------------------------------------------------------------


def _im2col(x_pad: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> contiguous (N, C*kh*kw, oh*ow) patch matrix."""
    n, c, _, _ = x_pad.shape
    sn, sc, sh, sw = x_pad.strides
    windows = np.lib.stride_tricks.as_strided(
        x_pad,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return windows.reshape(n, c * kh * kw, oh * ow)


def _conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    """Direct cross-correlation. Returns (out, cols, x_pad_shape) for reuse."""
    n, c, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = h + 2 * padding, wd + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, oh, ow)
    w_mat = w.reshape(c_out, c * kh * kw)
    out = np.matmul(w_mat, cols).reshape(n, c_out, oh, ow)
    return out, cols, (hp, wp)


def _conv2d_grad_weight(cols: np.ndarray, gy: np.ndarray, w_shape: tuple) -> np.ndarray:
    c_out = w_shape[0]
    n = cols.shape[0]
    gy_mat = gy.reshape(n, c_out, -1)
    gw = np.zeros((c_out, cols.shape[1]))
    for i in range(n):  # per-sample GEMMs avoid a large transposed copy
        gw += gy_mat[i] @ cols[i].T
    return gw.reshape(w_shape)


def _dilate(y: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return y
    n, c, h, w = y.shape
    out = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1))
    out[:, :, ::stride, ::stride] = y
    return out


def _grad_input_correlate(gy: np.ndarray, w: np.ndarray, x_shape: tuple, stride: int, padding: int) -> np.ndarray:
    """Gradient w.r.t. input as a stride-1 correlation with the rotated kernel."""
    n, c, h, wd = x_shape
    c_out, _, kh, kw = w.shape
    gy = _dilate(gy, stride)
    hp, wp = h + 2 * padding, wd + 2 * padding
    # right/bottom zero-pad restores rows the forward floor-division dropped
    extra_h = hp - (gy.shape[2] + kh - 1)
    extra_w = wp - (gy.shape[3] + kw - 1)
    gy = np.pad(gy, ((0, 0), (0, 0), (kh - 1, kh - 1 + extra_h), (kw - 1, kw - 1 + extra_w)))
    w_rot = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (C_in, C_out, kh, kw)
    cols = _im2col(gy, kh, kw, 1, hp, wp)
    gx_pad = np.matmul(w_rot.reshape(c, c_out * kh * kw), cols).reshape(n, c, hp, wp)
    if padding:
        return gx_pad[:, :, padding : padding + h, padding : padding + wd]
    return gx_pad


def _grad_input_col2im(gy: np.ndarray, w: np.ndarray, x_shape: tuple, stride: int, padding: int) -> np.ndarray:
    """Gradient w.r.t. input via W^T @ gy followed by overlap-add of patch columns."""
    n, c, h, wd = x_shape
    c_out, _, kh, kw = w.shape
    oh, ow = gy.shape[2], gy.shape[3]
    hp, wp = h + 2 * padding, wd + 2 * padding
    w_mat = w.reshape(c_out, c * kh * kw)
    dcol = np.matmul(w_mat.T, gy.reshape(n, c_out, oh * ow))
    dcol = dcol.reshape(n, c, kh, kw, oh, ow)
    gx_pad = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            gx_pad[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += dcol[:, :, i, j]
    if padding:
        return gx_pad[:, :, padding : padding + h, padding : padding + wd]
    return gx_pad


def _conv2d_grad_input(gy: np.ndarray, w: np.ndarray, x_shape: tuple, stride: int, padding: int) -> np.ndarray:
    c, (h, wd) = x_shape[1], x_shape[2:]
    c_out, _, kh, kw = w.shape
    # Per-element work: correlation materialises (c_out*kh*kw, hp*wp) patch
    # columns, col2im touches the (c*kh*kw, oh*ow) product twice. Pick the
    # cheaper; shapes alone decide, so the choice is deterministic.
    corr_cost = c_out * (h + 2 * padding) * (wd + 2 * padding)
    col2im_cost = 2 * c * gy.shape[2] * gy.shape[3]
    if col2im_cost < corr_cost:
        return _grad_input_col2im(gy, w, x_shape, stride, padding)
    return _grad_input_correlate(gy, w, x_shape, stride, padding)


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------


def _promote(x: Tensor, ndim: int):
    """Add a leading batch axis if `x` is one dimension short."""
    if x.ndim == ndim:
        return x.reshape((1,) + x.shape), True
    if x.ndim == ndim + 1:
        return x, False
    raise ValueError(f"expected a {ndim}- or {ndim + 1}-dimensional tensor, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of C×H×W (or N×C×H×W) input with C_out×C_in×kh×kw kernels.

    Output spatial size is floor((H + 2*padding - kh)/stride) + 1; padding is
    zero-filled.
    """
    x4, squeezed = _promote(x, 3)
    n, c, h, w = x4.shape
    c_out, c_in, kh, kw = weight.shape
    if c != c_in:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {c_in}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")

    out_data, cols, _ = _conv2d_forward(x4.data, weight.data, stride, padding)
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    parents = (x4, weight) if bias is None else (x4, weight, bias)

    def bwd(g):
        if weight.requires_grad:
            weight._accumulate(_conv2d_grad_weight(cols, g, weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x4.requires_grad:
            x4._accumulate(_conv2d_grad_input(g, weight.data, x4.shape, stride, padding))

    out = Tensor.from_op(out_data, parents, bwd)
    return out.reshape(out.shape[1:]) if squeezed else out


def maxpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Max over window×window patches; gradient flows to the first argmax in scan order."""
    x4, squeezed = _promote(x, 3)
    n, c, h, w = x4.shape
    if window > h or window > w:
        raise ValueError(f"maxpool2d: window {window} exceeds input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    sn, sc, sh, sw = x4.data.strides
    patches = np.lib.stride_tricks.as_strided(
        x4.data,
        shape=(n, c, oh, ow, window, window),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw),
        writeable=False,
    ).reshape(n, c, oh, ow, window * window)
    arg = patches.argmax(axis=-1)  # first max wins on ties (row-major scan)
    out_data = np.take_along_axis(patches, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        if not x4.requires_grad:
            return
        ni, ci, hi, wi = np.indices((n, c, oh, ow), sparse=False)
        rows = hi * stride + arg // window
        colidx = wi * stride + arg % window
        flat = ((ni * c + ci) * h + rows) * w + colidx
        gx = np.bincount(flat.ravel(), weights=g.ravel(), minlength=n * c * h * w)
        x4._accumulate(gx.reshape(n, c, h, w))

    out = Tensor.from_op(out_data, (x4,), bwd)
    return out.reshape(out.shape[1:]) if squeezed else out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), bwd)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over an N×C×H×W tensor.

    Training mode normalizes with (biased) batch statistics and updates the
    running arrays in place by exponential moving average (the running
    variance uses the unbiased estimate when more than one value is
    available). Eval mode normalizes with the running statistics.
    """
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d expects N×C×H×W input, got shape {x.shape}")
    n, c, h, w = x.shape
    m = n * h * w
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data[None, :, None, None]
        if training:
            # full gradient through the batch statistics
            sum_gxhat = gxhat.sum(axis=(0, 2, 3))
            sum_gxhat_xhat = (gxhat * xhat).sum(axis=(0, 2, 3))
            gx = (
                gxhat
                - (sum_gxhat[None, :, None, None] + xhat * sum_gxhat_xhat[None, :, None, None]) / m
            ) * inv_std[None, :, None, None]
        else:
            gx = gxhat * inv_std[None, :, None, None]
        x._accumulate(gx)

    return Tensor.from_op(out_data, (x, gamma, beta), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = W·x + b for a flat input vector (or row-wise for a batch of vectors)."""
    x2, squeezed = _promote(x, 1)
    n_out, n_in = weight.shape
    if x2.shape[1] != n_in:
        raise ValueError(f"linear: input width {x2.shape[1]} != weight fan-in {n_in}")
    out_data = x2.data @ weight.data.T
    if bias is not None:
        if bias.shape != (n_out,):
            raise ValueError(f"linear: bias shape {bias.shape} != ({n_out},)")
        out_data += bias.data

    parents = (x2, weight) if bias is None else (x2, weight, bias)

    def bwd(g):
        if x2.requires_grad:
            x2._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x2.data)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    out = Tensor.from_op(out_data, parents, bwd)
    return out.reshape(out.shape[1]) if squeezed else out


def softmax_cross_entropy(logits: Tensor, label, reduction: str = "mean") -> Tensor:
    """Cross-entropy of softmax(logits) against an integer class label.

    Accepts a flat (S+1)-vector with a scalar label, or an N×(S+1) batch with
    a length-N label vector (reduced by `reduction`: "mean" or "sum").
    Computed with max-subtraction; the gradient is softmax − onehot.
    """
    l2, squeezed = _promote(logits, 1)
    n, k = l2.shape
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} incompatible with logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k - 1}]: {labels}")

    shifted = l2.data - l2.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(n), labels]
    if squeezed or reduction == "mean":
        out_data = losses.mean()
    elif reduction == "sum":
        out_data = losses.sum()
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def bwd(g):
        if not l2.requires_grad:
            return
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), labels] -= 1.0
        scale = float(g) / n if (squeezed or reduction == "mean") else float(g)
        l2._accumulate(probs * scale)

    return Tensor.from_op(np.asarray(out_data), (l2,), bwd)


def sgd_step(params, lr: float):
    """w ← w − lr·grad for every parameter, then zero the grads."""
    params = list(params)
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ValueError(f"sgd_step: no gradient for {missing}")
    for p in params:
        p.data -= lr * p.grad
        p.grad = None


# ---------------------------------------------------------------------------
# module system
# ---------------------------------------------------------------------------


class Module:
    """Minimal layer container: tracks child modules, parameters and buffers."""

    _buffers: tuple = ()

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (f"{prefix}{name}", value)
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield (f"{prefix}{name}", getattr(self, name))
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def train(self):
        self.training = True
        for _, child in self._children():
            child.train()
        return self

    def eval(self):
        self.training = False
        for _, child in self._children():
            child.eval()
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def bind_parameter_names(model: Module, prefix: str = ""):
    """Assign hierarchical names to all parameters; names must be unique."""
    seen = set()
    for name, p in model.named_parameters(prefix):
        if name in seen:
            raise ValueError(f"duplicate parameter name {name!r}")
        seen.add(name)
        p.name = name
    return model


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """Fan-in-scaled uniform draw on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True, *, rng):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(
            uniform_init(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        )
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class MaxPool2d(Module):
    def __init__(self, window, stride=None):
        super().__init__()
        self.window = window
        self.stride = window if stride is None else stride

    def forward(self, x):
        return maxpool2d(x, self.window, self.stride)


class ReLU(Module):
    def forward(self, x):
        return relu(x)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = Parameter(np.ones(num_features))
        self.bias = Parameter(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def forward(self, x):
        return batchnorm2d(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )


class Linear(Module):
    def __init__(self, in_features, out_features, *, rng):
        super().__init__()
        self.weight = Parameter(uniform_init(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Flatten(Module):
    """Flatten everything after the batch axis."""

    def forward(self, x):
        return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


class SGD:
    """Plain stochastic gradient descent; `step` updates and zeroes grads."""

    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self):
        sgd_step(self.params, self.lr)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
