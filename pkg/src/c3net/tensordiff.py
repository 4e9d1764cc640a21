"""A small dense-tensor engine with reverse-mode differentiation and Adam.

Values live in numpy arrays. Every primitive returns a new ``Tensor``; when
any input requires a gradient the result records its parents and a
backward closure, forming a dynamic tape that ``Tensor.backward`` replays
in reverse topological order.

Broadcasting is restricted: binary elementwise ops accept identical shapes,
or one operand whose shape equals the other's shape without its leading
(batch) axis. Anything else raises ``ShapeError``.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, NumericalError, ShapeError

_LN2 = math.log(2.0)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(build_tape(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def build_tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _result(data, parents, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if a.ndim >= 1 and a.shape[1:] == b.shape:
        return "b_over_batch"
    if b.ndim >= 1 and b.shape[1:] == a.shape:
        return "a_over_batch"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce(g, kind, which):
    if (kind == "b_over_batch" and which == "b") or (kind == "a_over_batch" and which == "a"):
        return g.sum(axis=0)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast_kind(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_reduce(g, kind, "a"), _reduce(g, kind, "b")))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast_kind(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_reduce(g, kind, "a"), -_reduce(g, kind, "b")))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast_kind(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_reduce(g * bd, kind, "a"), _reduce(g * ad, kind, "b")))


mul_elementwise = mul


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * a.dtype.type(c), (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def sum_over_axis(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"sum_over_axis: axis {axis} out of range for shape {shape}")

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(x * x, (a,), lambda g: (2.0 * g * x,))


def shifted_softplus(a) -> Tensor:
    """ln(0.5 e^x + 0.5), zero at the origin."""
    a = as_tensor(a)
    x = a.data
    y = np.logaddexp(x, 0.0) - x.dtype.type(_LN2)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _result(y.astype(x.dtype), (a,), lambda g: (g * sig,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def gather_rows(a, index) -> Tensor:
    """Rows ``a[index]``; backward scatters with accumulation."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.ndim < 1:
        raise ShapeError("gather_rows: scalar input")
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")

    def backward(g):
        out = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), backward)


def segment_sum(a, segment, n_segments: int) -> Tensor:
    """out[k] = sum of rows a[r] with segment[r] == k, accumulated in row order."""
    a = as_tensor(a)
    segment = np.asarray(segment, dtype=np.int64)
    if segment.shape != a.shape[:1]:
        raise ShapeError(f"segment_sum: {segment.shape} segment ids for {a.shape}")
    out = np.zeros((n_segments,) + a.shape[1:], dtype=a.dtype)
    np.add.at(out, segment, a.data)
    return _result(out, (a,), lambda g: (g[segment],))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mismatched shapes {sorted(shapes)}")
    return _result(np.stack([t.data for t in tensors]), tuple(tensors),
                   lambda g: tuple(g[k] for k in range(len(tensors))))


def mse(pred, target) -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: incompatible shapes {pred.shape} and {target.shape}")
    diff = pred.data - target
    n = max(diff.size, 1)
    return _result(np.asarray((diff * diff).sum() / n), (pred,), lambda g: (g * 2.0 * diff / n,))


RBF_FORMS = ("printed", "textbook")


def rbf_conv(dist: np.ndarray, s_rows, mu, sigma, form: str = "printed", mask=None) -> Tensor:
    """Continuous-filter convolution of environment rows with Gaussian filters.

    out[i, f] = sum_j s[j, f] * W[i, j, f], where for d = dist[i, j]
      printed:  W = exp(-(|d - mu_f| / (2 sigma_f))^2)
      textbook: W = exp(-(d - mu_f)^2 / (2 sigma_f^2))
    ``s_rows`` is either (s, M) or a single (M,) row shared by every point
    (homogeneous medium), which takes a much cheaper path. ``dist`` and the
    optional 0/1 ``mask`` are constants.
    """
    s_rows, mu, sigma = as_tensor(s_rows), as_tensor(mu), as_tensor(sigma)
    if form not in RBF_FORMS:
        raise ContractError(f"unknown RBF form {form!r}")
    dist = np.asarray(dist, dtype=mu.dtype)
    M = mu.shape[0] if mu.ndim == 1 else -1
    shared = s_rows.ndim == 1
    if dist.ndim != 2 or mu.ndim != 1 or sigma.shape != mu.shape:
        raise ShapeError(f"rbf_conv: distances {dist.shape}, mu {mu.shape}, sigma {sigma.shape}")
    if (shared and s_rows.shape != (M,)) or (not shared and s_rows.shape != (dist.shape[1], M)):
        raise ShapeError(f"rbf_conv: environment rows {s_rows.shape} vs distances {dist.shape} "
                         f"and {M} features")
    sig = sigma.data
    c = 1.0 / (4.0 * sig * sig) if form == "printed" else 1.0 / (2.0 * sig * sig)
    delta = dist[:, :, None] - mu.data[None, None, :]
    w = np.exp(-c * delta * delta)
    if mask is not None:
        w = w * np.asarray(mask, dtype=w.dtype)[:, :, None]
    S = s_rows.data

    if shared:
        w_sum = w.sum(axis=1)  # (n, M)
        wd = w * delta
        m1 = wd.sum(axis=1)
        m2 = (wd * delta).sum(axis=1)
        out = w_sum * S

        def backward(g):
            gs = g * S
            return ((g * w_sum).sum(axis=0), (gs * m1).sum(axis=0) * (2.0 * c),
                    (gs * m2).sum(axis=0) * (2.0 * c / sig))

        return _result(out, (s_rows, mu, sigma), backward)

    out = np.einsum("jf,ijf->if", S, w)

    def backward(g):
        gw = g[:, None, :] * S[None, :, :] * w  # dL/dW * W
        g_s = np.einsum("if,ijf->jf", g, w)
        g_mu = (gw * delta).sum(axis=(0, 1)) * (2.0 * c)
        g_sigma = (gw * delta * delta).sum(axis=(0, 1)) * (2.0 * c / sig)
        return g_s, g_mu, g_sigma

    return _result(out, (s_rows, mu, sigma), backward)


# --------------------------------------------------------------------------
# optimisation


class Adam:
    """Adam with bias-corrected moments over a named parameter set.

    ``step_scale`` optionally maps a parameter name to a multiplier (scalar or
    same-shape array) on its step; a parameter consumed as ``p / scale``
    then moves as if Adam ran on the normalized coordinates.
    """

    def __init__(self, params: Mapping[str, Tensor], lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 step_scale: Mapping[str, object] | None = None):
        self.params = dict(params)
        self.step_scale = {k: np.asarray(v, dtype=np.float64) for k, v in (step_scale or {}).items()}
        for k, v in self.step_scale.items():
            if k not in self.params or (v.shape and v.shape != self.params[k].shape):
                raise ShapeError(f"step scale for {k!r} has shape {v.shape}")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            update = self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
            if name in self.step_scale:
                update = update * self.step_scale[name]
            p.data = (p.data - update).astype(p.dtype, copy=False)


def adam_step(state: Adam, grads: Mapping[str, np.ndarray] | None = None):
    """Functional entry point: optionally install ``grads`` then take one step."""
    if grads is not None:
        for name, g in grads.items():
            state.params[name].grad = np.asarray(g, dtype=state.params[name].dtype)
    state.step()
    return state.params


# --------------------------------------------------------------------------
# finite-difference checking


def _as_named(params) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {p.name or f"param{k}": p for k, p in enumerate(params)}


def grad_check_detailed(f: Callable[[], Tensor], params, h: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error between tape and central differences."""
    named = _as_named(params)
    if not 1e-6 <= h <= 1e-4:
        raise ContractError(f"finite-difference step must lie in [1e-6, 1e-4], got {h}")
    for name, p in named.items():
        if p.dtype != np.float64:
            raise ContractError(f"gradient checking needs 64-bit parameters; {name!r} is {p.dtype}")
    for p in named.values():
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericalError("objective is not finite at the base point")
    out.backward()
    errors = {}
    for name, p in named.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        worst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = float(f().data)
            flat[k] = orig - h
            fm = float(f().data)
            flat[k] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericalError(f"non-finite objective perturbing {name}[{k}]")
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic.reshape(-1)[k])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        errors[name] = worst
    return errors


def grad_check(f: Callable[[], Tensor], params, h: float = 1e-5) -> float:
    errors = grad_check_detailed(f, params, h)
    return max(errors.values(), default=0.0)


def parameters_requiring_grad(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
