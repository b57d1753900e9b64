"""Small MLPs with hand-written reverse-mode gradients, Gaussian heads and Adam."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from gfmsim._jit import kernel
from gfmsim.errors import ContractViolation, CorruptFileError

LOG_2PI = float(np.log(2.0 * np.pi))


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def softplus_grad(x):
    # d/dx log(1 + e^x) = sigmoid(x)
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@kernel
def _elu_flat(x, out):
    for i in range(x.size):
        v = x[i]
        out[i] = v if v > 0.0 else math.expm1(v)


@kernel
def _elu_grad_flat(x, y, out):
    for i in range(x.size):
        out[i] = 1.0 if x[i] > 0.0 else y[i] + 1.0


def _elu(x):
    x = np.ascontiguousarray(x, dtype=float)
    out = np.empty_like(x)
    _elu_flat(x.reshape(-1), out.reshape(-1))
    return out


def _elu_grad(x, y):
    x = np.ascontiguousarray(x, dtype=float)
    out = np.empty_like(x)
    _elu_grad_flat(x.reshape(-1), np.ascontiguousarray(y, dtype=float).reshape(-1), out.reshape(-1))
    return out


def _tanh(x):
    return np.tanh(x)


def _tanh_grad(x, y):
    return 1.0 - y * y


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x, y):
    return (x > 0).astype(float)


ACTIVATIONS = {
    "elu": (_elu, _elu_grad),
    "tanh": (_tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
}
ACTIVATION_CODES = {"elu": 0, "tanh": 1, "relu": 2}


@dataclass
class MLPParams:
    """Weights ``W[i]`` of shape (in, out) and biases ``b[i]`` of shape (out,)."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "elu"

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ContractViolation("layer count does not match sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ContractViolation(f"layer {i} shapes {W.shape}/{b.shape} do not chain")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, activation: str = "elu", out_scale: float = 0.01) -> "MLPParams":
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            if i == len(sizes) - 2:
                W *= out_scale
            weights.append(W)
            biases.append(np.zeros(fan_out))
        return cls(tuple(sizes), weights, biases, activation)

    @property
    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays) -> "MLPParams":
        arrays = list(arrays)
        return MLPParams(self.sizes, arrays[0::2], arrays[1::2], self.activation)

    def copy(self) -> "MLPParams":
        return self.with_arrays([a.copy() for a in self.arrays])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def from_flat(self, vec) -> "MLPParams":
        out, i = [], 0
        for a in self.arrays:
            out.append(np.asarray(vec[i:i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        return self.with_arrays(out)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays)


def mlp_forward(params: MLPParams, x):
    """Batched forward pass. Returns ``(output, cache)`` for :func:`mlp_backward`."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != params.sizes[0]:
        raise ContractViolation(f"input width {x.shape[-1]} != {params.sizes[0]}")
    if not np.all(np.isfinite(x)):
        raise ContractViolation("non-finite network input")
    act, _ = ACTIVATIONS[params.activation]
    pre, post = [], [x]
    h = x
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        pre.append(z)
        h = z if i == last else act(z)
        post.append(h)
    out = h[0] if single else h
    return out, (single, pre, post)


def mlp_backward(params: MLPParams, cache, grad_out):
    """Reverse pass: gradients of a scalar loss given ``dL/d output``.

    Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered like
    :attr:`MLPParams.arrays`.
    """
    single, pre, post = cache
    g = np.asarray(grad_out, dtype=float)
    if single:
        g = g[None, :]
    _, dact = ACTIVATIONS[params.activation]
    grads = [None] * (2 * len(params.weights))
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * dact(pre[i], post[i + 1])
        grads[2 * i] = post[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return grads, (g[0] if single else g)


def gradient_check(n_nets: int = 20, seed: int = 0, h: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    Each random network gets a random batch and a random linear loss; the
    error per parameter array is ``|g - g_fd| / (|g| + |g_fd|)`` in the 2-norm.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_nets):
        depth = int(rng.integers(1, 4))
        sizes = tuple(int(x) for x in rng.integers(2, 9, size=depth + 1))
        act = ("elu", "tanh")[k % 2]
        params = MLPParams.init(sizes, rng, act, out_scale=1.0)
        params = params.with_arrays([a + 0.1 * rng.standard_normal(a.shape) for a in params.arrays])
        x = rng.standard_normal((5, sizes[0]))
        c = rng.standard_normal((5, sizes[-1]))
        out, cache = mlp_forward(params, x)
        grads, _ = mlp_backward(params, cache, c)
        flat = params.flat()
        num = np.empty_like(flat)
        for i in range(flat.size):
            e = np.zeros_like(flat)
            e[i] = h
            fp = np.sum(c * mlp_forward(params.from_flat(flat + e), x)[0])
            fm = np.sum(c * mlp_forward(params.from_flat(flat - e), x)[0])
            num[i] = (fp - fm) / (2 * h)
        ana = np.concatenate([g.ravel() for g in grads])
        offset = 0
        for a in params.arrays:
            sl = slice(offset, offset + a.size)
            offset += a.size
            denom = np.linalg.norm(ana[sl]) + np.linalg.norm(num[sl])
            if denom > 0:
                worst = max(worst, float(np.linalg.norm(ana[sl] - num[sl]) / denom))
    return worst


@dataclass
class GaussianHead:
    """Diagonal Gaussian: mean ``mu`` and positive Cholesky diagonal ``scale``."""

    mu: np.ndarray
    scale: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.scale ** 2)


def split_head(raw_out, action_dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Network output -> ``(mu, scale, raw_scale)`` with ``scale = softplus(raw)``."""
    mu = raw_out[..., :action_dim]
    raw = raw_out[..., action_dim:]
    return mu, softplus(raw), raw


def forward(params: MLPParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian head outputs ``(mu, A_diag)`` for input ``x``."""
    out, _ = mlp_forward(params, x)
    d = params.sizes[-1] // 2
    mu, scale, _ = split_head(out, d)
    return mu, scale


def backward(params: MLPParams, x, grad_out) -> list[np.ndarray]:
    _, cache = mlp_forward(params, x)
    grads, _ = mlp_backward(params, cache, grad_out)
    return grads


def sample(head: GaussianHead, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """``mu + A * eps`` with ``eps`` standard normal from a seeded generator."""
    if rng is None:
        rng = np.random.default_rng(seed)
    mu = np.asarray(head.mu, dtype=float)
    return mu + np.asarray(head.scale) * rng.standard_normal(mu.shape)


def log_prob(mu, scale, action) -> np.ndarray:
    """Diagonal Gaussian log-density, summed over the last axis."""
    mu = np.asarray(mu, dtype=float)
    scale = np.asarray(scale, dtype=float)
    action = np.asarray(action, dtype=float)
    z = (action - mu) / scale
    return -0.5 * np.sum(z * z + LOG_2PI, axis=-1) - np.sum(np.log(scale), axis=-1)


def log_prob_grads(mu, scale, action):
    """Gradients of :func:`log_prob` w.r.t. ``(mu, scale, action)``."""
    mu = np.asarray(mu, dtype=float)
    scale = np.asarray(scale, dtype=float)
    diff = np.asarray(action, dtype=float) - mu
    inv2 = 1.0 / (scale * scale)
    d_mu = diff * inv2
    d_scale = diff * diff * inv2 / scale - 1.0 / scale
    return d_mu, d_scale, -d_mu


@dataclass
class OptimizerState:
    """Adam moments and hyperparameters."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    skipped: int = 0
    max_grad_norm: float | None = None

    @classmethod
    def for_params(cls, params: MLPParams, lr: float = 3e-4, **kwargs) -> "OptimizerState":
        arrays = params.arrays
        return cls(lr=lr, m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays], **kwargs)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.lr, self.beta1, self.beta2, self.eps, self.step_count,
                              [a.copy() for a in self.m], [a.copy() for a in self.v], self.skipped,
                              self.max_grad_norm)


def optimizer_step(opt: OptimizerState, params: MLPParams, grads) -> MLPParams:
    """One Adam step (descent on ``grads``); mutates ``opt`` and returns new params.

    Non-finite gradients skip the update and bump ``opt.skipped``.
    """
    arrays = params.arrays
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ContractViolation("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        opt.skipped += 1
        return params
    if not opt.m:
        opt.m = [np.zeros_like(a) for a in arrays]
        opt.v = [np.zeros_like(a) for a in arrays]
    if opt.max_grad_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > opt.max_grad_norm:
            grads = [g * (opt.max_grad_norm / norm) for g in grads]
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    new = []
    for i, (a, g) in enumerate(zip(arrays, grads)):
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g
        new.append(a - opt.lr * (opt.m[i] / c1) / (np.sqrt(opt.v[i] / c2) + opt.eps))
    return params.with_arrays(new)


# --- checkpoint format ------------------------------------------------------
# little-endian throughout:
#   magic b"GFMC" | u32 version | u32 activation | u32 n_sizes | u32 sizes[n]
#   | f64 params (W0, b0, W1, b1, ... row-major)
#   | u8 has_optimizer [ | u64 step | u64 skipped | f64 lr, beta1, beta2, eps
#                         | f64 m arrays | f64 v arrays ]
#   | u32 extra_len | extra bytes (caller-defined header, e.g. GFM metadata)
CHECKPOINT_MAGIC = b"GFMC"
CHECKPOINT_VERSION = 1


def dumps_checkpoint(params: MLPParams, opt: OptimizerState | None = None, extra: bytes = b"") -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<III", CHECKPOINT_VERSION, ACTIVATION_CODES[params.activation], len(params.sizes)))
    buf.write(struct.pack(f"<{len(params.sizes)}I", *params.sizes))
    for a in params.arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    if opt is None or not opt.m:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<BQQdddd", 1, opt.step_count, opt.skipped, opt.lr, opt.beta1, opt.beta2, opt.eps))
        for a in opt.m + opt.v:
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    buf.write(struct.pack("<I", len(extra)))
    buf.write(extra)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFileError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(float).reshape(shape)


def loads_checkpoint(data: bytes) -> tuple[MLPParams, OptimizerState | None, bytes]:
    r = _Reader(data)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CorruptFileError("bad checkpoint magic")
    version, act_code, n_sizes = r.unpack("<III")
    if version != CHECKPOINT_VERSION:
        raise CorruptFileError(f"unsupported checkpoint version {version}")
    codes = {v: k for k, v in ACTIVATION_CODES.items()}
    if act_code not in codes:
        raise CorruptFileError(f"unknown activation code {act_code}")
    sizes = r.unpack(f"<{n_sizes}I")
    arrays = []
    for i in range(n_sizes - 1):
        arrays.append(r.array((sizes[i], sizes[i + 1])))
        arrays.append(r.array((sizes[i + 1],)))
    params = MLPParams(sizes, arrays[0::2], arrays[1::2], codes[act_code])
    (has_opt,) = r.unpack("<B")
    opt = None
    if has_opt:
        step_count, skipped, lr, b1, b2, eps = r.unpack("<QQdddd")
        m = [r.array(a.shape) for a in params.arrays]
        v = [r.array(a.shape) for a in params.arrays]
        opt = OptimizerState(lr, b1, b2, eps, int(step_count), m, v, int(skipped))
    (n_extra,) = r.unpack("<I")
    extra = r.take(n_extra)
    if r.pos != len(data):
        raise CorruptFileError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return params, opt, extra
