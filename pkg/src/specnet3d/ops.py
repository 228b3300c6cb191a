"""Forward and backward numeric kernels the network is composed from.

Convolution and pooling are realized as strided window views plus a
contraction.  Forward contractions go through un-optimized np.einsum on
purpose: its per-row accumulation order depends only on the reduction
axis, so a sample's activations are bitwise identical no matter how many
other samples share the batch.  Backward contractions carry no such
contract and use the faster BLAS matmul.
"""

import numpy as np

from .errors import ShapeError
from .tensor import as_tensor5, Conv3dSpec, Pool3dSpec


def _pad_spatial(x, padding):
    ph, pw, pd = padding
    if ph == 0 and pw == 0 and pd == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw), (pd, pd)))


def _window_view(xp, kernel, stride, out_dims):
    """Read-only (n, c, h', w', d', kh, kw, kd) view over the padded input."""
    n, c = xp.shape[:2]
    kh, kw, kd = kernel
    sh, sw, sd = stride
    ho, wo, do = out_dims
    sn, sc, sH, sW, sD = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, ho, wo, do, kh, kw, kd),
        strides=(sn, sc, sH * sh, sW * sw, sD * sd, sH, sW, sD),
        writeable=False,
    )


def _offset_slices(kernel, stride, out_dims):
    """Strided slice triples addressing each kernel offset's window sweep."""
    kh, kw, kd = kernel
    sh, sw, sd = stride
    ho, wo, do = out_dims
    for a in range(kh):
        rows = slice(a, a + sh * ho, sh)
        for b in range(kw):
            cols = slice(b, b + sw * wo, sw)
            for c in range(kd):
                yield rows, cols, slice(c, c + sd * do, sd)


def _im2col(x, spec: Conv3dSpec):
    """Contiguous (n*h'*w'*d', in_channels*kh*kw*kd) patch matrix.

    The contiguous copy pins einsum's reduction order to the k axis alone,
    keeping each row's result independent of the batch it was computed in.
    """
    n = x.shape[0]
    out_dims = spec.output_dims(x.shape[2:])
    xp = _pad_spatial(x, spec.padding)
    win = _window_view(xp, spec.kernel, spec.stride, out_dims)
    m = n * out_dims[0] * out_dims[1] * out_dims[2]
    return np.ascontiguousarray(
        win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(m, -1)
    )


def _conv3d_forward_cols(x, spec: Conv3dSpec):
    """conv3d_forward that also hands back its patch matrix for reuse."""
    x = as_tensor5(x)
    n, cin, h, w, d = x.shape
    if cin != spec.in_channels:
        raise ShapeError(
            f"{spec.name}: input has {cin} channels, layer expects {spec.in_channels}"
        )
    ho, wo, do = spec.output_dims((h, w, d))
    cols = _im2col(x, spec)
    wmat = np.ascontiguousarray(spec.weights.reshape(spec.out_channels, -1))
    out = np.einsum("mk,ok->mo", cols, wmat)
    out += spec.bias
    out = out.reshape(n, ho, wo, do, spec.out_channels)
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3)), cols


def conv3d_forward(x, spec: Conv3dSpec):
    """Strided 3D cross-correlation with bias over a (n, c, h, w, d) tensor."""
    out, _ = _conv3d_forward_cols(x, spec)
    return out


def conv3d_backward(x, spec: Conv3dSpec, upstream, cols=None):
    """Exact partials of sum(upstream * conv3d_forward(x, spec)).

    Returns (grad_x, grad_weights, grad_bias) with the shapes of x,
    spec.weights and spec.bias.  cols may reuse the patch matrix an earlier
    forward built for the same x and spec.
    """
    x = as_tensor5(x)
    n, cin, h, w, d = x.shape
    if cin != spec.in_channels:
        raise ShapeError(
            f"{spec.name}: input has {cin} channels, layer expects {spec.in_channels}"
        )
    out_dims = spec.output_dims((h, w, d))
    ho, wo, do = out_dims
    expected = (n, spec.out_channels) + out_dims
    upstream = np.asarray(upstream)
    if upstream.shape != expected:
        raise ShapeError(
            f"{spec.name}: upstream shape {upstream.shape} != forward output {expected}"
        )

    if cols is None:
        cols = _im2col(x, spec)
    g = np.ascontiguousarray(upstream.transpose(0, 2, 3, 4, 1)).reshape(-1, spec.out_channels)

    grad_bias = g.sum(axis=0)
    grad_weights = (g.T @ cols).reshape(spec.weights.shape)

    wmat = spec.weights.reshape(spec.out_channels, -1)
    grad_cols = (g @ wmat).reshape(
        (n, ho, wo, do, spec.in_channels, -1)
    )
    # scatter into a channels-last buffer so both sides of the += share
    # their memory layout, then permute once at the end
    ph, pw, pd = spec.padding
    grad_padded = np.zeros(
        (n, h + 2 * ph, w + 2 * pw, d + 2 * pd, spec.in_channels),
        dtype=grad_cols.dtype,
    )
    for q, (rows, cols_s, depths) in enumerate(
        _offset_slices(spec.kernel, spec.stride, out_dims)
    ):
        grad_padded[:, rows, cols_s, depths, :] += grad_cols[..., q]
    grad_x = grad_padded[:, ph:ph + h, pw:pw + w, pd:pd + d, :]
    return np.ascontiguousarray(grad_x.transpose(0, 4, 1, 2, 3)), grad_weights, grad_bias


def avgpool3d_forward(x, spec: Pool3dSpec):
    """Include-pad average pooling: window sum over the zero-padded input
    divided by the full kernel volume."""
    x = as_tensor5(x)
    out_dims = spec.output_dims(x.shape[2:])
    xp = _pad_spatial(x, spec.padding)
    acc = np.zeros((x.shape[0], x.shape[1]) + out_dims, dtype=x.dtype)
    for rows, cols, depths in _offset_slices(spec.kernel, spec.stride, out_dims):
        acc += xp[:, :, rows, cols, depths]
    return acc / spec.volume


def avgpool3d_backward(x_dims, spec: Pool3dSpec, upstream):
    """Route each upstream value back to every input position its window
    covered, divided by the kernel volume; padded positions receive nothing."""
    x_dims = tuple(int(v) for v in x_dims)
    if len(x_dims) != 5:
        raise ShapeError(f"expected 5 input dims, got {x_dims!r}")
    n, c, h, w, d = x_dims
    out_dims = spec.output_dims((h, w, d))
    expected = (n, c) + out_dims
    upstream = np.asarray(upstream)
    if upstream.shape != expected:
        raise ShapeError(
            f"pool upstream shape {upstream.shape} != pooled output {expected}"
        )
    g = upstream / spec.volume
    ph, pw, pd = spec.padding
    grad_padded = np.zeros((n, c, h + 2 * ph, w + 2 * pw, d + 2 * pd), dtype=g.dtype)
    for rows, cols, depths in _offset_slices(spec.kernel, spec.stride, out_dims):
        grad_padded[:, :, rows, cols, depths] += g
    grad_x = grad_padded[:, :, ph:ph + h, pw:pw + w, pd:pd + d]
    return np.ascontiguousarray(grad_x)


def relu(x):
    """Element-wise max(0, x)."""
    return np.maximum(x, 0)


def relu_backward(x, upstream):
    """Pass upstream where x > 0; the subgradient at exactly 0 is 0."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if upstream.shape != x.shape:
        raise ShapeError(f"relu upstream shape {upstream.shape} != input {x.shape}")
    return np.where(x > 0, upstream, np.zeros((), dtype=upstream.dtype))


def linear_forward(x, weights, bias):
    """logits[c] = bias[c] + sum_f weights[c, f] * x[f], for one sample (F,)
    or a batch (n, F)."""
    x = np.ascontiguousarray(x)
    weights = np.ascontiguousarray(weights)
    bias = np.asarray(bias)
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(
            f"feature length {x.shape[-1]} != classifier width {weights.shape[1]}"
        )
    if x.ndim == 1:
        return np.einsum("cf,f->c", weights, x) + bias
    if x.ndim == 2:
        return np.einsum("nf,cf->nc", x, weights) + bias
    raise ShapeError(f"linear input must be 1-D or 2-D, got ndim={x.ndim}")


def linear_backward(x, weights, upstream):
    """Exact partials of sum(upstream * linear_forward(x, ...)).

    Returns (grad_x, grad_weights, grad_bias).
    """
    x = np.asarray(x)
    weights = np.asarray(weights)
    upstream = np.asarray(upstream)
    if x.ndim == 1:
        x2 = x[None, :]
        g2 = upstream[None, :]
    else:
        x2 = x
        g2 = upstream
    if g2.shape != (x2.shape[0], weights.shape[0]):
        raise ShapeError(
            f"linear upstream shape {upstream.shape} does not match "
            f"{x2.shape[0]} samples x {weights.shape[0]} classes"
        )
    grad_x = g2 @ weights
    grad_weights = g2.T @ x2
    grad_bias = g2.sum(axis=0)
    if x.ndim == 1:
        grad_x = grad_x[0]
    return grad_x, grad_weights, grad_bias


def softmax_cross_entropy(logits, target):
    """Negative log softmax probability of the target class, max-shifted
    for stability, plus the exact logit gradient softmax(logits) - onehot.

    For a single sample pass (C,) logits and an int target; for a batch
    pass (n, C) logits and (n,) targets, getting per-sample losses and
    per-sample gradients back (no mean is taken).
    """
    logits = np.asarray(logits)
    if logits.ndim == 1:
        loss, grad = softmax_cross_entropy(logits[None, :], np.asarray([target]))
        return float(loss[0]), grad[0]
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 1-D or 2-D, got ndim={logits.ndim}")
    n, c = logits.shape
    target = np.asarray(target)
    if target.shape != (n,):
        raise ShapeError(f"targets shape {target.shape} != ({n},)")
    if target.min() < 0 or target.max() >= c:
        raise ValueError(f"target class out of range [0, {c})")

    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    losses = np.log(denom[:, 0]) - z[np.arange(n), target]
    grads = ez / denom
    grads[np.arange(n), target] -= 1.0
    return losses, grads.astype(logits.dtype)
