"""Reverse-mode autodiff over dense float64 arrays.

Carries exactly the operations the convolutional relation models need:
1-D convolution, ReLU, elementwise add, max-over-time pooling, affine maps,
embedding lookup, dropout, and softmax cross-entropy, plus an Adam optimizer
and a central-difference gradient checker. Every op records parent links and
a backward closure on its output; ``backward`` replays the closures in
reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, ShapeError


class Tensor:
    """Dense float64 array with an optional gradient slot.

    ``requires_grad`` tensors get a zero-initialized ``grad`` of the same
    shape; gradients accumulate across backward passes until ``zero_grad``.
    Construction rejects NaN/Inf payloads outright: non-finite values are an
    error surface, never silent state.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=()):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            where = f" in {name!r}" if name else ""
            raise NumericsError(f"non-finite values{where}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        if self.requires_grad:
            self.grad[...] = 0.0

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def _result(data, parents):
    """Op output: requires grad iff any parent does; parents kept for topo."""
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else ())


def topo_order(root):
    """All tensors reachable from ``root`` via parent links, parents first.

    Each node appears exactly once, so a reverse sweep visits every op
    backward closure exactly once.
    """
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        nxt = next(parents, None)
        if nxt is None:
            order.append(node)
            stack.pop()
        elif id(nxt) not in seen:
            seen.add(id(nxt))
            stack.append((nxt, iter(nxt._parents)))
    return order


def backward(loss):
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    ``loss`` must be a scalar. Unreached parameters keep whatever their grad
    already holds (zeros after ``zero_grads``).
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def relu(x):
    """max(0, x); subgradient at exactly 0 is 0."""
    out = _result(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        mask = x.data > 0.0

        def _bw():
            x.grad += mask * out.grad

        out._backward = _bw
    return out


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    out = _result(a.data + b.data, (a, b))
    if out.requires_grad:

        def _bw():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad

        out._backward = _bw
    return out


def sum_all(x):
    out = _result(np.asarray(x.data.sum()), (x,))
    if out.requires_grad:

        def _bw():
            x.grad += out.grad

        out._backward = _bw
    return out


def mean(x):
    out = _result(np.asarray(x.data.mean()), (x,))
    if out.requires_grad:
        inv = 1.0 / x.data.size

        def _bw():
            x.grad += inv * out.grad

        out._backward = _bw
    return out


def concat(parts, axis=-1):
    """Concatenate tensors along ``axis``; backward slices the gradient."""
    parts = tuple(parts)
    out = _result(np.concatenate([p.data for p in parts], axis=axis), parts)
    if out.requires_grad:
        widths = [p.data.shape[axis] for p in parts]

        def _bw():
            offset = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(offset, offset + w)
                    p.grad += out.grad[tuple(index)]
                offset += w

        out._backward = _bw
    return out


def dropout(x, p_keep, mode, rng=None):
    """Bernoulli masking in train mode, activation scaling in test mode.

    Train multiplies elementwise by a 0/1 mask with keep probability
    ``p_keep``; test multiplies by the scalar ``p_keep``. For any affine
    layer consuming the result this equals the usual test-time weight
    rescaling: E[w . (z * r)] = w . (p z) = (p w) . z.
    """
    if not 0.0 < p_keep <= 1.0:
        raise ValueError(f"p_keep must be in (0, 1], got {p_keep}")
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        factor = (rng.random(x.data.shape) < p_keep).astype(np.float64)
    elif mode == "test":
        factor = p_keep
    else:
        raise ValueError(f"dropout mode must be 'train' or 'test', got {mode!r}")
    out = _result(x.data * factor, (x,))
    if out.requires_grad:

        def _bw():
            x.grad += factor * out.grad

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# structured ops


def lookup(table, indices):
    """Gather rows of a (vocab, dim) table; scatter-add on the way back.

    ``indices`` may have any shape (including empty); repeated ids accumulate
    their gradients into the same row.
    """
    if table.data.ndim != 2:
        raise ShapeError(f"lookup table must be 2-D, got shape {table.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    rows = table.data.shape[0]
    if idx.size:
        bad = (idx < 0) | (idx >= rows)
        if bad.any():
            offender = int(idx[bad].reshape(-1)[0])
            raise IndexError(f"lookup id {offender} out of range for table with {rows} rows")
    out = _result(table.data[idx], (table,))
    if out.requires_grad:

        def _bw():
            np.add.at(table.grad, idx, out.grad)

        out._backward = _bw
    return out


def affine(x, weight, bias):
    """x @ W + b for x of shape (in,) or (batch, in)."""
    if weight.data.ndim != 2:
        raise ShapeError(f"affine weight must be 2-D, got shape {weight.data.shape}")
    if x.data.ndim not in (1, 2):
        raise ShapeError(f"affine input must be 1-D or 2-D, got shape {x.data.shape}")
    in_dim, out_dim = weight.data.shape
    if x.data.shape[-1] != in_dim:
        raise ShapeError(f"affine: input shape {x.data.shape} does not match weight shape {weight.data.shape}")
    if bias.data.shape != (out_dim,):
        raise ShapeError(f"affine: bias shape {bias.data.shape} does not match weight shape {weight.data.shape}")
    batched = x.data.ndim == 2
    xd = x.data if batched else x.data[None, :]
    data = xd @ weight.data + bias.data
    out = _result(data if batched else data[0], (x, weight, bias))
    if out.requires_grad:

        def _bw():
            g = out.grad if batched else out.grad[None, :]
            if x.requires_grad:
                gx = g @ weight.data.T
                x.grad += gx if batched else gx[0]
            if weight.requires_grad:
                weight.grad += xd.T @ g  # outer(x, g) summed over the batch
            if bias.requires_grad:
                bias.grad += g.sum(axis=0)

        out._backward = _bw
    return out


def _conv_pad(width, padding, seq_len):
    """Left/right zero padding; 'same' puts the extra zero on the right."""
    if padding == "valid":
        if width > seq_len:
            raise ShapeError(f"conv1d: width {width} exceeds sequence length {seq_len} in valid mode")
        return 0, 0
    if padding == "same":
        left = (width - 1) // 2
        return left, width - 1 - left
    raise ValueError(f"conv1d padding must be 'valid' or 'same', got {padding!r}")


def _conv_forward(xp, kernel, bias):
    width = kernel.shape[0]
    s = xp.shape[1] - width + 1
    out = np.zeros((xp.shape[0], s, kernel.shape[2]))
    for k in range(width):
        out += xp[:, k : k + s, :] @ kernel[k]
    return out + bias


def _conv_input_grad(g, kernel, padded_shape, left, seq_len):
    width = kernel.shape[0]
    s = g.shape[1]
    gxp = np.zeros(padded_shape)
    for k in range(width):
        gxp[:, k : k + s, :] += g @ kernel[k].T
    return gxp[:, left : left + seq_len, :]


def _conv_kernel_grad(g, xp):
    width = xp.shape[1] - g.shape[1] + 1
    s = g.shape[1]
    gk = np.zeros((width, xp.shape[2], g.shape[2]))
    for k in range(width):
        gk[k] = np.einsum("bsc,bso->co", xp[:, k : k + s, :], g)
    return gk


def conv1d(x, kernel, bias, padding="valid"):
    """1-D convolution over the sequence axis.

    ``x`` is (seq, in_ch) or (batch, seq, in_ch); ``kernel`` is
    (width, in_ch, out_ch); ``bias`` is (out_ch,). Valid mode yields
    seq - width + 1 output rows; same mode zero-pads back to seq rows with
    the extra zero on the right when the width is even. The output is
    linear; activations are applied separately.
    """
    if kernel.data.ndim != 3:
        raise ShapeError(f"conv1d kernel must be 3-D (width, in_ch, out_ch), got shape {kernel.data.shape}")
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"conv1d input must be 2-D or 3-D, got shape {x.data.shape}")
    width, in_ch, out_ch = kernel.data.shape
    if x.data.shape[-1] != in_ch:
        raise ShapeError(f"conv1d: input shape {x.data.shape} does not match kernel shape {kernel.data.shape}")
    if bias.data.shape != (out_ch,):
        raise ShapeError(f"conv1d: bias shape {bias.data.shape} does not match kernel shape {kernel.data.shape}")
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    seq_len = xd.shape[1]
    left, right = _conv_pad(width, padding, seq_len)
    xp = np.pad(xd, ((0, 0), (left, right), (0, 0))) if left or right else xd
    data = _conv_forward(xp, kernel.data, bias.data)
    out = _result(data if batched else data[0], (x, kernel, bias))
    if out.requires_grad:

        def _bw():
            g = out.grad if batched else out.grad[None]
            if x.requires_grad:
                gx = _conv_input_grad(g, kernel.data, xp.shape, left, seq_len)
                x.grad += gx if batched else gx[0]
            if kernel.requires_grad:
                kernel.grad += _conv_kernel_grad(g, xp)
            if bias.requires_grad:
                bias.grad += g.sum(axis=(0, 1))

        out._backward = _bw
    return out


def max_over_time(x):
    """Per-channel maximum over the sequence axis.

    Gradient flows only to the first argmax position per channel; ties break
    to the lowest index.
    """
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"max_over_time input must be 2-D or 3-D, got shape {x.data.shape}")
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.shape[1] == 0:
        raise ShapeError("max_over_time: empty sequence")
    argmax = np.argmax(xd, axis=1)  # first occurrence wins ties
    data = np.take_along_axis(xd, argmax[:, None, :], axis=1)[:, 0, :]
    out = _result(data if batched else data[0], (x,))
    if out.requires_grad:
        b_ix = np.arange(xd.shape[0])[:, None]
        c_ix = np.arange(xd.shape[2])[None, :]

        def _bw():
            g = out.grad if batched else out.grad[None]
            gx = np.zeros_like(xd)
            gx[b_ix, argmax, c_ix] = g
            x.grad += gx if batched else gx[0]

        out._backward = _bw
    return out


def softmax_cross_entropy(logits, labels):
    """-log softmax(logits)[label], max-shifted for stability.

    1-D logits with an int label give a scalar loss; (batch, K) logits with
    a length-batch label vector give per-row losses. The gradient of each
    row is softmax(logits) - one_hot(label), scaled by the upstream grad.
    """
    if logits.data.ndim not in (1, 2):
        raise ShapeError(f"logits must be 1-D or 2-D, got shape {logits.data.shape}")
    batched = logits.data.ndim == 2
    ld = logits.data if batched else logits.data[None, :]
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    n_rows, n_classes = ld.shape
    if lab.shape != (n_rows,):
        raise ShapeError(f"labels shape {lab.shape} does not match logits shape {logits.data.shape}")
    bad = (lab < 0) | (lab >= n_classes)
    if bad.any():
        raise IndexError(f"label {int(lab[bad][0])} out of range for {n_classes} classes")
    shift = ld - ld.max(axis=1, keepdims=True)
    expd = np.exp(shift)
    expd_sum = expd.sum(axis=1)
    losses = np.log(expd_sum) - shift[np.arange(n_rows), lab]
    out = _result(losses if batched else np.asarray(losses[0]), (logits,))
    if out.requires_grad:
        probs = expd / expd_sum[:, None]

        def _bw():
            gmat = probs.copy()
            gmat[np.arange(n_rows), lab] -= 1.0
            g = out.grad.reshape(-1)
            glogits = gmat * g[:, None]
            logits.grad += glogits if batched else glogits[0]

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """Per-parameter Adam moment buffers; shapes mirror the parameter list."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        params = list(params)
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place on the parameter data."""
    params = list(params)
    grads = list(grads)
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.first_moment)} moment buffers"
        )
    state.step_count += 1
    t = state.step_count
    corr1 = 1.0 - state.beta1**t
    corr2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} does not match param shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


# ---------------------------------------------------------------------------
# verification


@dataclass
class GradCheckResult:
    max_rel_err: float
    per_param: dict

    def __str__(self):
        lines = [f"{name:24s} max rel err {err:.3e}" for name, err in self.per_param.items()]
        lines.append(f"{'OVERALL':24s} max rel err {self.max_rel_err:.3e}")
        return "\n".join(lines)


def finite_diff_check(build, eps=1e-5):
    """Compare analytic gradients against central finite differences.

    ``build`` re-runs the forward pass over a persistent set of parameter
    tensors and returns ``(scalar loss, {name: param})``; perturbing a
    parameter in place and calling it again must re-evaluate the loss. The
    graph must be deterministic (dropout in test mode or p_keep=1). Relative
    error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    loss, params = build()
    zero_grads(params.values())
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    per_param = {}
    for name, p in params.items():
        worst = 0.0
        for ix in np.ndindex(*p.data.shape):
            orig = p.data[ix]
            p.data[ix] = orig + eps
            loss_plus = float(build()[0].data)
            p.data[ix] = orig - eps
            loss_minus = float(build()[0].data)
            p.data[ix] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            a = float(analytic[name][ix])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        per_param[name] = worst
    overall = max(per_param.values()) if per_param else 0.0
    return GradCheckResult(overall, per_param)
