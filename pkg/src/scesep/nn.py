"""Minimal reverse-mode tensor engine and the layers the model needs.

Only the operations required by the separation network are implemented:
broadcast arithmetic, matmul, reshape/concat/slice/stack, sigmoid, tanh,
log-sigmoid, softmax, and sums. Everything is float64 so gradient checks
can be tight. Forward passes are pure functions of (inputs, parameters).
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoForwardRecorded, ShapeMismatch


class Tensor:
    """Node in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Accumulate gradients of a scalar (or seeded) output into every
        requires_grad ancestor."""
        if self._backward_fn is None and not self._parents:
            raise NoForwardRecorded("tensor has no recorded computation")
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Parameter(Tensor):
    """Trainable tensor with a name; grad is zeroed at batch start."""

    __slots__ = ("name",)

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True)
        self.name = name

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    # Reduce a broadcasted gradient back to the operand's shape.
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def bwd(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    out._backward_fn = bwd
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data, parents=(a, b))

    def bwd(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(-_unbroadcast(g, b.shape))

    out._backward_fn = bwd
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def bwd(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    out._backward_fn = bwd
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(np.matmul(a.data, b.data), parents=(a, b))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        a._accum(_unbroadcast(ga, a.shape))
        b._accum(_unbroadcast(gb, b.shape))

    out._backward_fn = bwd
    return out


def swap_last(a):
    a = _as_tensor(a)
    out = Tensor(np.swapaxes(a.data, -1, -2), parents=(a,))
    out._backward_fn = lambda g: a._accum(np.swapaxes(g, -1, -2))
    return out


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), parents=(a,))
    out._backward_fn = lambda g: a._accum(g.reshape(a.shape))
    return out


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])

    out._backward_fn = bwd
    return out


def time_slice(x, t):
    """x[:, t, :] for a (B, T, D) tensor."""
    x = _as_tensor(x)
    out = Tensor(x.data[:, t, :], parents=(x,))

    def bwd(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[:, t, :] += g

    out._backward_fn = bwd
    return out


def stack_time(tensors):
    """Stack (B, D) tensors into (B, T, D) along a new time axis."""
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=1), parents=tuple(tensors))

    def bwd(g):
        for t_idx, t in enumerate(tensors):
            t._accum(g[:, t_idx, :])

    out._backward_fn = bwd
    return out


def gather_rows(table, ids):
    """table[ids] with gradient fan-in summed over repeated ids."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], parents=(table,))

    def bwd(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    out._backward_fn = bwd
    return out


def sigmoid(a):
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, parents=(a,))
    out._backward_fn = lambda g: a._accum(g * s * (1.0 - s))
    return out


def tanh(a):
    a = _as_tensor(a)
    h = np.tanh(a.data)
    out = Tensor(h, parents=(a,))
    out._backward_fn = lambda g: a._accum(g * (1.0 - h * h))
    return out


def log_sigmoid(a):
    """Numerically stable log(sigmoid(x))."""
    a = _as_tensor(a)
    x = a.data
    ls = np.where(x > 0, -np.log1p(np.exp(-np.abs(x))), x - np.log1p(np.exp(-np.abs(x))))
    out = Tensor(ls, parents=(a,))
    out._backward_fn = lambda g: a._accum(g / (1.0 + np.exp(x)))  # d/dx = sigmoid(-x)
    return out


def softmax(a, axis=-1):
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, parents=(a,))

    def bwd(g):
        a._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    out._backward_fn = bwd
    return out


def tsum(a, axis=None):
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis), parents=(a,))

    def bwd(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g))
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    out._backward_fn = bwd
    return out


def tmean(a):
    return mul(tsum(a), 1.0 / _as_tensor(a).data.size)


# --- layers --------------------------------------------------------------


@dataclass
class LstmCellParams:
    """One direction's gate parameters; weights are ((H + D_in), H)."""

    w_input: Parameter
    w_forget: Parameter
    w_output: Parameter
    w_candidate: Parameter
    b_input: Parameter
    b_forget: Parameter
    b_output: Parameter
    b_candidate: Parameter

    @property
    def hidden(self):
        return self.w_input.shape[1]

    def parameters(self):
        return [
            self.w_input, self.w_forget, self.w_output, self.w_candidate,
            self.b_input, self.b_forget, self.b_output, self.b_candidate,
        ]


def init_lstm_params(d_in, hidden, rng, prefix):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget bias +1."""
    bound = 1.0 / np.sqrt(d_in + hidden)

    def w(name):
        return Parameter(rng.uniform(-bound, bound, size=(d_in + hidden, hidden)), f"{prefix}.{name}")

    return LstmCellParams(
        w_input=w("w_input"),
        w_forget=w("w_forget"),
        w_output=w("w_output"),
        w_candidate=w("w_candidate"),
        b_input=Parameter(np.zeros(hidden), f"{prefix}.b_input"),
        b_forget=Parameter(np.ones(hidden), f"{prefix}.b_forget"),
        b_output=Parameter(np.zeros(hidden), f"{prefix}.b_output"),
        b_candidate=Parameter(np.zeros(hidden), f"{prefix}.b_candidate"),
    )


def lstm_forward(x: Tensor, p: LstmCellParams, direction: str = "fwd") -> Tensor:
    """Standard LSTM over (B, T, D_in); zero initial state.

    direction="bwd" processes reversed time and re-reverses the output.
    """
    if direction not in ("fwd", "bwd"):
        raise ValueError("direction must be 'fwd' or 'bwd'")
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeMismatch(f"expected (B, T, D), got {x.shape}")
    B, T, _ = x.shape
    H = p.hidden
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    times = range(T) if direction == "fwd" else range(T - 1, -1, -1)
    outs = [None] * T
    for t in times:
        z = concat([h, time_slice(x, t)], axis=1)
        i = sigmoid(add(matmul(z, p.w_input), p.b_input))
        f = sigmoid(add(matmul(z, p.w_forget), p.b_forget))
        o = sigmoid(add(matmul(z, p.w_output), p.b_output))
        g = tanh(add(matmul(z, p.w_candidate), p.b_candidate))
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        outs[t] = h
    return stack_time(outs)


def blstm_layer(x: Tensor, p_fwd: LstmCellParams, p_bwd: LstmCellParams) -> Tensor:
    """Concatenate forward and backward LSTM outputs along features."""
    return concat([lstm_forward(x, p_fwd, "fwd"), lstm_forward(x, p_bwd, "bwd")], axis=2)


def time_affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-timestep affine map (width-1 convolution): (B,T,D) -> (B,T,K)."""
    x = _as_tensor(x)
    B, T, D = x.shape
    if w.shape[0] != D:
        raise ShapeMismatch(f"weight rows {w.shape[0]} != input width {D}")
    flat = reshape(x, (B * T, D))
    return reshape(add(matmul(flat, w), b), (B, T, w.shape[1]))


# --- optimization ---------------------------------------------------------


class Adam:
    """Adam with bias correction; deterministic given the gradient stream."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(params, max_norm=5.0):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = np.sqrt(
        sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)
    )
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


# --- verification ---------------------------------------------------------


def finite_difference_check(loss_fn, params, eps=1e-5, floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    loss_fn() must rebuild the forward pass from the current parameter
    values and return a scalar Tensor. ``floor`` bounds the denominator so
    finite-difference noise on near-zero gradients does not dominate.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(gflat[i]), floor)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
