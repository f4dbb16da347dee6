"""Dense float64 tensor primitives with hand-derived backward passes.

Every operation is a pure function: no global state, no in-place edits of
arguments, deterministic output for identical input. The network topology
is fixed, so there is no autodiff tape; each primitive exposes exactly the
backward rule it needs.

Convolution is cross-correlation (no kernel flip) throughout. Forward and
backward use an im2col layout so the heavy lifting is a single matrix
product per call.
"""

import numpy as np

from .errors import ShapeError


def _as_f64(x, ndim, name):
    """Validate and convert an array argument to a float64 ndarray."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim} dimensions, got {a.ndim}")
    return a


def matmul(a, b):
    """Matrix product of a[m,k] and b[k,n].

    Args:
        a: 2-d array, shape (m, k).
        b: 2-d array, shape (k, n).

    Returns:
        2-d array of shape (m, n).

    Raises:
        ShapeError: if the inner dimensions disagree.
    """
    a = _as_f64(a, 2, "matmul a")
    b = _as_f64(b, 2, "matmul b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape[1]} != {b.shape[0]}")
    return a @ b


def _im2col(x, kh, kw, stride, pad):
    """Unfold x[C,H,W] into columns of shape (C*kh*kw, Ho*Wo).

    Returns (cols, Ho, Wo). Raises ShapeError if the kernel does not fit
    in the padded input.
    """
    C, H, W = x.shape
    if pad > 0:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Hp, Wp = x.shape[1], x.shape[2]
    if kh > Hp or kw > Wp:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    cols = np.empty((C, kh, kw, Ho, Wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = x[:, i:i + stride * Ho:stride,
                              j:j + stride * Wo:stride]
    return cols.reshape(C * kh * kw, Ho * Wo), Ho, Wo


def conv2d_forward(x, w, b, stride=1, pad=0):
    """2-d cross-correlation of x[C,H,W] with w[F,C,kh,kw] plus bias b[F].

    Args:
        x: input, shape (C, H, W).
        w: kernels, shape (F, C, kh, kw).
        b: per-output-channel bias, shape (F,).
        stride: spatial step, same in both axes.
        pad: zero padding, same on all four sides.

    Returns:
        Output of shape (F, Ho, Wo) with Ho = (H + 2*pad - kh)//stride + 1.

    Raises:
        ShapeError: channel mismatch or kernel larger than padded input.
    """
    x = _as_f64(x, 3, "conv input")
    w = _as_f64(w, 4, "conv weights")
    b = _as_f64(b, 1, "conv bias")
    F, C, kh, kw = w.shape
    if x.shape[0] != C:
        raise ShapeError(f"conv: input channels {x.shape[0]} != kernel {C}")
    if b.shape[0] != F:
        raise ShapeError(f"conv: bias length {b.shape[0]} != filters {F}")
    cols, Ho, Wo = _im2col(x, kh, kw, stride, pad)
    out = w.reshape(F, C * kh * kw) @ cols + b[:, None]
    return out.reshape(F, Ho, Wo)


def conv2d_backward(grad_out, x, w, stride=1, pad=0, need_input_grad=True):
    """Gradients of conv2d_forward w.r.t. input, weights, and bias.

    Args:
        grad_out: upstream gradient, shape (F, Ho, Wo).
        x: the forward input, shape (C, H, W).
        w: the forward kernels, shape (F, C, kh, kw).
        stride, pad: must match the forward call.
        need_input_grad: skip the input-gradient fold when the caller is
            the first layer (its input gradient is never used).

    Returns:
        (grad_input, grad_weights, grad_bias); grad_input is None when
        need_input_grad is False.
    """
    grad_out = _as_f64(grad_out, 3, "conv grad_out")
    x = _as_f64(x, 3, "conv input")
    w = _as_f64(w, 4, "conv weights")
    F, C, kh, kw = w.shape
    cols, Ho, Wo = _im2col(x, kh, kw, stride, pad)
    if grad_out.shape != (F, Ho, Wo):
        raise ShapeError(
            f"conv backward: grad_out {grad_out.shape} != {(F, Ho, Wo)}")
    go2 = grad_out.reshape(F, Ho * Wo)
    grad_b = go2.sum(axis=1)
    grad_w = (go2 @ cols.T).reshape(F, C, kh, kw)
    if not need_input_grad:
        return None, grad_w, grad_b
    gcols = (w.reshape(F, C * kh * kw).T @ go2).reshape(C, kh, kw, Ho, Wo)
    H, W = x.shape[1], x.shape[2]
    buf = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            buf[:, i:i + stride * Ho:stride,
                j:j + stride * Wo:stride] += gcols[:, i, j]
    if pad > 0:
        buf = buf[:, pad:pad + H, pad:pad + W]
    return buf, grad_w, grad_b


def fc_forward(x, w, b):
    """Affine map w[n,d] @ x[d] + b[n]."""
    x = _as_f64(x, 1, "fc input")
    w = _as_f64(w, 2, "fc weights")
    b = _as_f64(b, 1, "fc bias")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"fc: weights expect {w.shape[1]}, got {x.shape[0]}")
    if w.shape[0] != b.shape[0]:
        raise ShapeError(f"fc: bias length {b.shape[0]} != {w.shape[0]}")
    return w @ x + b


def fc_backward(grad_out, x, w):
    """Gradients of fc_forward.

    Returns:
        (grad_input, grad_weights, grad_bias).
    """
    grad_out = _as_f64(grad_out, 1, "fc grad_out")
    x = _as_f64(x, 1, "fc input")
    w = _as_f64(w, 2, "fc weights")
    if grad_out.shape[0] != w.shape[0]:
        raise ShapeError(
            f"fc backward: grad_out {grad_out.shape[0]} != {w.shape[0]}")
    grad_input = w.T @ grad_out
    grad_w = np.outer(grad_out, x)
    return grad_input, grad_w, grad_out.copy()


def relu_forward(x):
    """Elementwise max(x, 0)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x):
    """Pass upstream gradient where x > 0, zero elsewhere."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise ShapeError(
            f"relu backward: {grad_out.shape} != {x.shape}")
    return grad_out * (x > 0.0)


def _replicate_to_even(x):
    """Edge-replicate the last row/column of x[C,H,W] where H or W is odd."""
    C, H, W = x.shape
    if H % 2 == 1:
        x = np.concatenate([x, x[:, -1:, :]], axis=1)
    if W % 2 == 1:
        x = np.concatenate([x, x[:, :, -1:]], axis=2)
    return x


def avg_pool2_forward(x):
    """Non-overlapping 2x2 mean pool of x[C,H,W].

    Odd spatial dimensions are edge-replicated to even first, so the
    output is always (C, ceil(H/2), ceil(W/2)).
    """
    x = _as_f64(x, 3, "pool input")
    x = _replicate_to_even(x)
    C, Hp, Wp = x.shape
    return x.reshape(C, Hp // 2, 2, Wp // 2, 2).mean(axis=(2, 4))


def avg_pool2_backward(grad_out, input_shape):
    """Gradient of avg_pool2_forward for an input of input_shape (C,H,W)."""
    grad_out = _as_f64(grad_out, 3, "pool grad_out")
    C, H, W = input_shape
    Hp, Wp = H + H % 2, W + W % 2
    if grad_out.shape != (C, Hp // 2, Wp // 2):
        raise ShapeError(
            f"pool backward: grad_out {grad_out.shape} != "
            f"{(C, Hp // 2, Wp // 2)}")
    buf = np.repeat(np.repeat(grad_out, 2, axis=1), 2, axis=2) / 4.0
    # Fold gradient of replicated rows/columns back onto their source.
    if Wp > W:
        buf[:, :, W - 1] += buf[:, :, W]
        buf = buf[:, :, :W]
    if Hp > H:
        buf[:, H - 1, :] += buf[:, H, :]
        buf = buf[:, :H, :]
    return np.ascontiguousarray(buf)


def global_avg_pool_forward(x):
    """Mean over all spatial positions: x[C,H,W] -> (C,)."""
    x = _as_f64(x, 3, "gap input")
    return x.mean(axis=(1, 2))


def global_avg_pool_backward(grad_out, input_shape):
    """Gradient of global_avg_pool_forward for an input of input_shape."""
    grad_out = _as_f64(grad_out, 1, "gap grad_out")
    C, H, W = input_shape
    if grad_out.shape != (C,):
        raise ShapeError(f"gap backward: grad_out {grad_out.shape} != ({C},)")
    g = np.empty((C, H, W), dtype=np.float64)
    g[:] = (grad_out / (H * W))[:, None, None]
    return g


def he_init(shape, fan_in, seed):
    """He-normal initializer: i.i.d. N(0, 2/fan_in), deterministic per seed."""
    if fan_in <= 0:
        raise ShapeError(f"he_init: fan_in must be positive, got {fan_in}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
