"""Layers, distributions and parameter containers built on ``Tensor``."""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _make, add, as_tensor, matmul, mul, sigmoid, sub, tanh

MASK_FILL = -1e30
PROB_ATOL = 1e-6


class ShapeError(ValueError):
    pass


class DistributionError(ValueError):
    pass


# convolution ---------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an (N, C, H, W) batch with (O, C, kh, kw) filters."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weights")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if c != wc:
        raise ShapeError(f"input has {c} channels, weights expect {wc}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"non-positive conv output {ho}x{wo} for input {h}x{w}, kernel {kh}x{kw}")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (N, Ho, Wo, C, kh, kw) -> rows of patches
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"bias shape {bias.shape} != ({o},)")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, back)


# dense layers -------------------------------------------------------------


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (N, in) and weight (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = matmul(x, weight.T)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
        out = add(out, bias)
    return out


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def masked_log_softmax(x, mask: np.ndarray) -> Tensor:
    """Log-softmax over the last axis restricted to ``mask`` (True = allowed).

    Disallowed entries come out as a huge negative number so that
    ``exp`` gives exactly zero and ``p * log p`` stays finite.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=-1).all():
        raise DistributionError("every row needs at least one allowed entry")
    filled = np.where(mask, x.data, -np.inf)
    z = filled - filled.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = np.where(mask, z - lse, MASK_FILL).astype(x.dtype)
    p = np.where(mask, np.exp(out), 0.0).astype(x.dtype)

    def back(g):
        g = np.where(mask, g, 0.0)
        return (np.where(mask, g - p * g.sum(axis=-1, keepdims=True), 0.0).astype(x.dtype),)

    return _make(out, (x,), back)


# recurrent cell -------------------------------------------------------------


def gru_step(x, h, params) -> Tensor:
    """One GRU update with reset, update and candidate gates.

    ``params`` maps ``w_ih`` (3H, D), ``w_hh`` (3H, H), ``b_ih`` and ``b_hh``
    (3H,). Gate rows are ordered reset, update, candidate.
    """
    x, h = as_tensor(x), as_tensor(h)
    w_ih, w_hh = as_tensor(params["w_ih"]), as_tensor(params["w_hh"])
    b_ih, b_hh = as_tensor(params["b_ih"]), as_tensor(params["b_hh"])
    hidden = w_hh.shape[1]
    if w_ih.shape[0] != 3 * hidden or w_hh.shape[0] != 3 * hidden:
        raise ShapeError("GRU weights must have 3*hidden rows")
    if h.ndim != 2 or h.shape[1] != hidden:
        raise ShapeError(f"hidden state shape {h.shape} does not match hidden size {hidden}")
    if x.ndim != 2 or x.shape[1] != w_ih.shape[1]:
        raise ShapeError(f"input shape {x.shape} does not match input size {w_ih.shape[1]}")
    if x.shape[0] != h.shape[0]:
        raise ShapeError("input and hidden batch sizes differ")
    gi = linear(x, w_ih, b_ih)
    gh = linear(h, w_hh, b_hh)
    H = hidden
    r = sigmoid(gi[:, :H] + gh[:, :H])
    z = sigmoid(gi[:, H : 2 * H] + gh[:, H : 2 * H])
    n = tanh(gi[:, 2 * H :] + mul(r, gh[:, 2 * H :]))
    return add(mul(sub(1.0, z), n), mul(z, h))


# categorical distribution ---------------------------------------------------


def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DistributionError("probabilities must be a non-empty vector")
    if not np.isfinite(p).all() or (p < 0).any():
        raise DistributionError("probabilities must be finite and nonnegative")
    if abs(p.sum() - 1.0) > PROB_ATOL:
        raise DistributionError(f"probabilities sum to {p.sum():.8f}, not 1")
    return p


def categorical_sample(probs, rng: np.random.Generator) -> int:
    p = _check_probs(probs)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= p.size:  # u landed on the top edge through rounding
        idx = int(np.flatnonzero(p)[-1])
    return idx


def log_prob(probs, index: int) -> float:
    p = _check_probs(probs)
    if not 0 <= index < p.size:
        raise DistributionError(f"index {index} outside 0..{p.size - 1}")
    with np.errstate(divide="ignore"):
        return float(np.log(p[index]))


def entropy(probs) -> float:
    p = _check_probs(probs)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


# parameters -----------------------------------------------------------------


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float = 1.0) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], gain: float = 1.0) -> np.ndarray:
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParameterSet:
    """Ordered, uniquely named trainable tensors with seeded initialization."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._rng = np.random.default_rng(seed)
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, shape, init: str = "uniform", gain: float = 1.0) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "uniform":
            data = fan_in_uniform(self._rng, shape, gain)
        elif init == "orthogonal":
            data = orthogonal(self._rng, shape, gain)
        elif init == "orthogonal_blocks":
            # recurrent matrix stacked from square gate blocks
            k = shape[0] // shape[1]
            data = np.concatenate([orthogonal(self._rng, (shape[1], shape[1]), gain) for _ in range(k)])
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def num_scalars(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, t.data.copy()) for k, t in self._params.items())

    def load_state_dict(self, state) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ShapeError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def grads(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict(
            (k, t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self._params.items()
        )
