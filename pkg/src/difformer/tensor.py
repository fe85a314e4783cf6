"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 2-D: scalars are (1, 1), row vectors (1, D), point sets (N, 3).
Forward ops build an implicit graph; ``backward`` on a scalar loss replays the
adjoints in reverse topological order, accumulating gradients into every
``requires_grad`` leaf exactly once. Values are validated for finiteness at
creation, so a NaN/Inf produced anywhere surfaces immediately with the name
of the offending op.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs do not conform to the op's shape contract."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_op", "_parents", "_backward",
                 "_grad_borrowed")

    def __init__(self, data, requires_grad=False, *, op="leaf", parents=(), backward=None):
        self.data = _as_array(data)
        if self.data.size:
            # min/max propagate NaN and catch +-Inf in two temporary-free passes
            mn, mx = self.data.min(), self.data.max()
            if not (mn > -np.inf and mx < np.inf):
                raise ValueError(f"non-finite values produced by op '{op}'")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = None
        self._op = op
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self._grad_borrowed = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def _accumulate(self, g: np.ndarray) -> None:
        # first contribution borrows the array; a second one forces ownership,
        # so backward functions may hand over freshly computed gradients
        if self.grad is None:
            self.grad = g
            self._grad_borrowed = True
        elif self._grad_borrowed:
            self.grad = self.grad + g
            self._grad_borrowed = False
        else:
            self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        ``self`` must be a scalar. The graph is single-use: intermediate
        gradients are released as soon as their adjoint has fired.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # intermediate node: its gradient is no longer needed
                node.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # convenience operators; broadcast rules live in the op functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return smul(self, float(other))

    def __rmul__(self, other):
        return smul(self, float(other))

    def __neg__(self):
        return smul(self, -1.0)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False, op="constant")


def make_scatter_plan(idx: np.ndarray):
    """Precompute the sort-based segments for repeated scatter-adds over idx."""
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(sorted_idx)) + 1])
    return "segments", order, starts, sorted_idx[starts]


def make_grouped_plan(n_groups: int, group_size: int):
    """Plan for idx = repeat(arange(n_groups), group_size): a plain reshape-sum."""
    return "grouped", n_groups, group_size


def scatter_add_rows(target: np.ndarray, idx: np.ndarray, rows: np.ndarray,
                     plan=None) -> None:
    """target[idx[i]] += rows[i] with duplicate indices summed."""
    if idx.size == 0:
        return
    if plan is None:
        plan = make_scatter_plan(idx)
    if plan[0] == "grouped":
        _, n_groups, group_size = plan
        target += rows.reshape(n_groups, group_size, -1).sum(axis=1)
    else:
        _, order, starts, targets = plan
        target[targets] += np.add.reduceat(rows[order], starts, axis=0)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if sb == (1, 1) or sa == (1, 1):
        return
    if sb == (1, sa[1]) or sa == (1, sb[1]):
        return
    raise ShapeError(f"op '{op}': incompatible shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum-reduce a gradient back to the broadcast operand's shape."""
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum().reshape(1, 1)
    return g.sum(axis=0, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad,
                 op="add", parents=(a, b))
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(g, b.shape))
        out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad,
                 op="sub", parents=(a, b))
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(-g, b.shape))
        out._backward = backward
    return out


def smul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    if not np.isfinite(c):
        raise ValueError("op 'smul': non-finite scalar")
    out = Tensor(a.data * c, requires_grad=a.requires_grad, op="smul", parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * c)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad,
                 op="mul", parents=(a, b))
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(g * a.data, b.shape))
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"op 'matmul': incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad,
                 op="matmul", parents=(a, b))
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, requires_grad=a.requires_grad, op="transpose", parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.T)
    return out


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along the last (feature) dimension."""
    if axis != 1:
        raise ShapeError("op 'concat': only last-dimension concatenation is supported")
    tensors = list(tensors)
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"op 'concat': row counts differ: {[t.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=1)
    needs = any(t.requires_grad for t in tensors)
    out = Tensor(data, requires_grad=needs, op="concat", parents=tuple(tensors))
    if needs:
        widths = [t.shape[1] for t in tensors]
        offsets = np.cumsum([0] + widths)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._accumulate(g[:, lo:hi])
        out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=a.requires_grad, op="relu", parents=(a,))
    if out.requires_grad:
        def backward(g):
            a._accumulate(g * (a.data > 0.0))
        out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    val = np.exp(a.data)
    out = Tensor(val, requires_grad=a.requires_grad, op="exp", parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * val)
    return out


def softplus(a: Tensor) -> Tensor:
    val = np.logaddexp(0.0, a.data)
    out = Tensor(val, requires_grad=a.requires_grad, op="softplus", parents=(a,))
    if out.requires_grad:
        sig = 1.0 / (1.0 + np.exp(-a.data))
        out._backward = lambda g: a._accumulate(g * sig)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, max-shifted for stability. Rows sum to one."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad, op="softmax_rows", parents=(a,))
    if out.requires_grad:
        def backward(g):
            dot = (g * y).sum(axis=1, keepdims=True)
            a._accumulate(y * (g - dot))
        out._backward = backward
    return out


def row_norm(a: Tensor) -> Tensor:
    """L2 norm of each row, as an (N, 1) column. Subgradient 0 at zero rows."""
    n = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    out = Tensor(n, requires_grad=a.requires_grad, op="row_norm", parents=(a,))
    if out.requires_grad:
        def backward(g):
            safe = np.where(n > 0.0, n, 1.0)
            a._accumulate(g * a.data / safe)
        out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum().reshape(1, 1), requires_grad=a.requires_grad,
                 op="sum_all", parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.full(a.shape, g.reshape(())))
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean().reshape(1, 1), requires_grad=a.requires_grad,
                 op="mean_all", parents=(a,))
    if out.requires_grad:
        inv = 1.0 / a.data.size
        out._backward = lambda g: a._accumulate(np.full(a.shape, g.reshape(()) * inv))
    return out


def group_max(a: Tensor, group_size: int) -> Tensor:
    """Segment max over blocks of ``group_size`` consecutive rows.

    (G * group_size, D) -> (G, D), elementwise over columns. The argmax inside
    each group is recorded; ties resolve to the first (lowest) row.
    """
    n, d = a.shape
    if group_size < 1 or n % group_size != 0:
        raise ShapeError(f"op 'group_max': {n} rows not divisible into groups of {group_size}")
    grouped = a.data.reshape(n // group_size, group_size, d)
    if a.requires_grad:
        arg = grouped.argmax(axis=1)  # first occurrence on ties
        val = np.take_along_axis(grouped, arg[:, None, :], axis=1)[:, 0, :]
    else:
        val = grouped.max(axis=1)
    out = Tensor(val, requires_grad=a.requires_grad, op="group_max", parents=(a,))
    if out.requires_grad:
        def backward(g):
            ga = np.zeros_like(a.data)
            rows = arg + (np.arange(n // group_size) * group_size)[:, None]
            # one argmax per (group, column): flat positions are unique
            ga.reshape(-1)[(rows * d + np.arange(d)[None, :]).reshape(-1)] = g.reshape(-1)
            a._accumulate(ga)
        out._backward = backward
    return out


LAYER_NORM_EPS = 1e-12


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row normalization with learnable affine: gain * (x - mu) / sigma + bias."""
    d = a.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError(f"op 'layer_norm': affine shapes {gain.shape}/{bias.shape} "
                         f"do not match feature dim {d}")
    mu = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv_sigma
    out = Tensor(xhat * gain.data + bias.data,
                 requires_grad=a.requires_grad or gain.requires_grad or bias.requires_grad,
                 op="layer_norm", parents=(a, gain, bias))
    if out.requires_grad:
        def backward(g):
            if gain.requires_grad:
                gain._accumulate((g * xhat).sum(axis=0, keepdims=True))
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=0, keepdims=True))
            if a.requires_grad:
                gg = g * gain.data
                m1 = gg.mean(axis=1, keepdims=True)
                m2 = (gg * xhat).mean(axis=1, keepdims=True)
                a._accumulate(inv_sigma * (gg - m1 - xhat * m2))
        out._backward = backward
    return out


def gather_rows(a: Tensor, idx, plan=None) -> Tensor:
    """Select rows by integer index (repeats allowed); scatter-add on backward.

    ``plan`` optionally carries a precomputed scatter plan so graphs reused
    across many gathers sort their indices only once.
    """
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"op 'gather_rows': index out of range for {a.shape[0]} rows")
    if plan is not None and plan[0] == "grouped":
        taken = np.repeat(a.data, plan[2], axis=0)
    else:
        taken = np.take(a.data, idx, axis=0)
    out = Tensor(taken, requires_grad=a.requires_grad, op="gather_rows", parents=(a,))
    if out.requires_grad:
        def backward(g):
            ga = np.zeros_like(a.data)
            scatter_add_rows(ga, idx, g, plan)
            a._accumulate(ga)
        out._backward = backward
    return out


def row_slice(a: Tensor, lo: int, hi: int) -> Tensor:
    """Contiguous row range a[lo:hi]; backward pads the complement with zeros."""
    if not 0 <= lo < hi <= a.shape[0]:
        raise ShapeError(f"op 'row_slice': range [{lo}, {hi}) invalid for {a.shape[0]} rows")
    out = Tensor(a.data[lo:hi], requires_grad=a.requires_grad, op="row_slice", parents=(a,))
    if out.requires_grad:
        def backward(g):
            ga = np.zeros_like(a.data)
            ga[lo:hi] = g
            a._accumulate(ga)
        out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2 or shape[0] * shape[1] != a.data.size:
        raise ShapeError(f"op 'reshape': cannot reshape {a.shape} to {shape}")
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad, op="reshape", parents=(a,))
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.reshape(a.shape))
    return out


def svd3(m: Tensor):
    """SVD of a 3x3 matrix: m = U diag(S) V^T with S descending, U/V orthogonal.

    Returns (U, S, V) tensors; S has shape (1, 3). The backward pass uses the
    standard square-matrix SVD adjoint; near-equal singular values zero out
    the affected cross terms rather than dividing by ~0.
    """
    if m.shape != (3, 3):
        raise ShapeError(f"op 'svd3': expected (3, 3), got {m.shape}")
    try:
        u, s, vh = np.linalg.svd(m.data)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"op 'svd3': decomposition did not converge: {exc}") from exc
    v = vh.T

    holder = {"U": None, "S": None, "V": None}
    core = Tensor(m.data, requires_grad=m.requires_grad, op="svd3_core", parents=(m,))

    if m.requires_grad:
        def core_backward(_g):
            gu = holder["U"] if holder["U"] is not None else np.zeros((3, 3))
            gs = holder["S"] if holder["S"] is not None else np.zeros(3)
            gv = holder["V"] if holder["V"] is not None else np.zeros((3, 3))
            s2 = s * s
            denom = s2[None, :] - s2[:, None]
            f = np.zeros((3, 3))
            ok = np.abs(denom) > 1e-12 * max(s2.max(), 1e-300)
            f[ok] = 1.0 / denom[ok]
            su = f * (u.T @ gu - gu.T @ u)
            sv = f * (v.T @ gv - gv.T @ v)
            mid = su * s[None, :] + s[:, None] * sv + np.diag(gs)
            m._accumulate(u @ mid @ v.T)
        core._backward = core_backward

    def _output(value, key, shape):
        t = Tensor(value, requires_grad=m.requires_grad, op=f"svd3_{key}", parents=(core,))
        if m.requires_grad:
            def stash(g, key=key, shape=shape):
                prev = holder[key]
                holder[key] = g.reshape(shape) if prev is None else prev + g.reshape(shape)
                core._accumulate(np.zeros((3, 3)))  # ensure the core adjoint fires
            t._backward = stash
        return t

    u_t = _output(u, "U", (3, 3))
    s_t = _output(s.reshape(1, 3), "S", (3,))
    v_t = _output(v, "V", (3, 3))
    return u_t, s_t, v_t


class ParameterStore:
    """Named trainable tensors with deterministic (sorted) iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(data, requires_grad=True, op="parameter")
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grads(self) -> None:
        for _, p in self.items():
            p.grad = None

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for n, p in self.items():
            other.add(n, p.data.copy())
        return other


class Adam:
    """Adam with bias correction; zero-gradient steps leave parameters unchanged."""

    def __init__(self, store: ParameterStore, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.store = store
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in store.items()}
        self._v = {n: np.zeros_like(p.data) for n, p in store.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.store.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))
