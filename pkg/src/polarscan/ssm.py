"""Diagonal state space scans: ZOH discretization, recurrent and kernel forms.

Hidden state is kept as an (N, d) array: N state entries for each of d
independent channels. Two parameterizations share one recurrence:

* fixed (time-invariant): per-channel step size, B and C;
* selective: step size, B and C are affine functions of each token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ShapeError

_CHUNK = 256


class ScanModeError(ValueError):
    pass


def discretize_zoh(a, b, delta):
    """Zero-order hold: ``a_bar = exp(delta*a)``, ``b_bar = (exp(delta*a) - 1)/a * b``.

    Elementwise over a diagonal ``a``; where ``a == 0`` the limit
    ``b_bar = delta * b`` is used.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("delta must be positive")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = delta * a
    a_bar = np.exp(da)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(a == 0, delta, np.expm1(da) / a)
    return a_bar, coef * b


def softplus(v):
    return np.logaddexp(0.0, v)


def inverse_softplus(v):
    v = np.asarray(v, dtype=np.float64)
    return v + np.log(-np.expm1(-v))


@dataclass(frozen=True, eq=False)
class SsmParams:
    """Parameters for one scan direction.

    ``a`` holds the negative diagonal of A for every channel, shape (N, d).
    Fixed mode uses ``delta`` (d,), ``b`` and ``c`` (N, d). Selective mode
    projects each token x_t (d,) to delta_t = softplus(x_t @ w_delta + bias_delta),
    B_t = x_t @ w_b + bias_b and C_t = x_t @ w_c + bias_c.
    """

    a: np.ndarray
    d_skip: np.ndarray
    delta: np.ndarray | None = None
    b: np.ndarray | None = None
    c: np.ndarray | None = None
    w_delta: np.ndarray | None = None
    bias_delta: np.ndarray | None = None
    w_b: np.ndarray | None = None
    bias_b: np.ndarray | None = None
    w_c: np.ndarray | None = None
    bias_c: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 2 or min(a.shape) < 1:
            raise ShapeError(f"a must be (N, d), got {a.shape}")
        if not np.all(a < 0):
            raise ValueError("a must be strictly negative for a stable scan")
        n, d = a.shape
        expected = {"d_skip": (d,)}
        if self.selective:
            expected |= {
                "w_delta": (d, d), "bias_delta": (d,),
                "w_b": (d, n), "bias_b": (n,),
                "w_c": (d, n), "bias_c": (n,),
            }
        else:
            if self.delta is None or self.b is None or self.c is None:
                raise ScanModeError("fixed mode needs delta, b and c")
            if np.any(np.asarray(self.delta) <= 0):
                raise ValueError("delta must be positive")
            expected |= {"delta": (d,), "b": (n, d), "c": (n, d)}
        for name, shape in expected.items():
            val = getattr(self, name)
            if val is None or np.shape(val) != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {np.shape(val)}")

    @property
    def selective(self) -> bool:
        return self.w_delta is not None

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.a.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        names = ("a", "d_skip", "delta", "b", "c", "w_delta", "bias_delta",
                 "w_b", "bias_b", "w_c", "bias_c")
        return {k: getattr(self, k) for k in names if getattr(self, k) is not None}


def s4d_real_a(n: int, d: int) -> np.ndarray:
    return -np.tile(np.arange(1, n + 1, dtype=np.float64)[:, None], (1, d))


def init_selective(
    d: int, n: int = 16, seed: int = 0, dt_min: float = 1e-3, dt_max: float = 1e-1
) -> SsmParams:
    """Seeded selective parameters; softplus(bias_delta) lies in [dt_min, dt_max]."""
    rng = np.random.default_rng(seed)
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d))
    scale = 1.0 / math.sqrt(d)
    return SsmParams(
        a=s4d_real_a(n, d),
        d_skip=np.ones(d),
        w_delta=rng.normal(0.0, 0.1 * scale, size=(d, d)),
        bias_delta=inverse_softplus(dt),
        w_b=rng.normal(0.0, scale, size=(d, n)),
        bias_b=np.zeros(n),
        w_c=rng.normal(0.0, scale, size=(d, n)),
        bias_c=np.zeros(n),
    )


def init_fixed(d: int, n: int = 16, seed: int = 0) -> SsmParams:
    rng = np.random.default_rng(seed)
    return SsmParams(
        a=-rng.uniform(0.05, 2.0, size=(n, d)),
        d_skip=rng.normal(size=d),
        delta=rng.uniform(0.01, 1.0, size=d),
        b=rng.normal(size=(n, d)),
        c=rng.normal(size=(n, d)),
    )


@dataclass(frozen=True, eq=False)
class ScanState:
    h: np.ndarray  # (N, d)
    tokens_seen: int = 0

    @classmethod
    def zeros(cls, n: int, d: int) -> ScanState:
        return cls(np.zeros((n, d)), 0)

    @classmethod
    def for_params(cls, p: SsmParams) -> ScanState:
        return cls.zeros(p.n, p.d)

    def __post_init__(self):
        if self.tokens_seen < 0:
            raise ValueError("tokens_seen must be >= 0")


def _project(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # Explicit ordered accumulation keeps each row independent of the batch
    # size, which the bit-exact prefix property relies on.
    acc = np.broadcast_to(bias, (x.shape[0], w.shape[1])).copy()
    for j in range(w.shape[0]):
        acc += x[:, j : j + 1] * w[j]
    return acc


def _check(params: SsmParams, x: np.ndarray, state: ScanState) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d:
        raise ShapeError(f"x must be (L, {params.d}), got {x.shape}")
    if state.h.shape != (params.n, params.d):
        raise ShapeError(f"state h is {state.h.shape}, params need {(params.n, params.d)}")
    if x.size and not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")
    return x


def _recurrence(params, x, state, deltas_fn, b_fn, c_fn):
    """Shared loop: h_t = exp(delta_t a) h_{t-1} + b_bar_t x_t, y_t = C_t h_t + D x_t."""
    length, d = x.shape
    y = np.empty((length, d))
    h = state.h.copy()
    a = params.a
    for start in range(0, length, _CHUNK):
        xs = x[start : start + _CHUNK]
        delta = deltas_fn(xs)  # (c, d)
        da = delta[:, None, :] * a[None]
        a_bar = np.exp(da)
        bx = (np.expm1(da) / a[None]) * b_fn(xs) * xs[:, None, :]
        hs = np.empty_like(a_bar)
        for t in range(xs.shape[0]):
            h = a_bar[t] * h + bx[t]
            hs[t] = h
        c = c_fn(xs)  # broadcastable to (c, N, d)
        out = np.broadcast_to(c[:, 0], (xs.shape[0], d)) * hs[:, 0]
        for k in range(1, params.n):
            out = out + np.broadcast_to(c[:, k], (xs.shape[0], d)) * hs[:, k]
        y[start : start + xs.shape[0]] = out + params.d_skip * xs
    return y, ScanState(h, state.tokens_seen + length)


def scan(params: SsmParams, x, state: ScanState | None = None):
    """Time-invariant recurrent scan, returning outputs and the carried state."""
    if params.selective:
        raise ScanModeError("scan() takes fixed parameters; use selective_scan()")
    state = state or ScanState.for_params(params)
    x = _check(params, x, state)
    delta = params.delta
    return _recurrence(
        params,
        x,
        state,
        lambda xs: np.broadcast_to(delta, xs.shape),
        lambda xs: params.b[None],
        lambda xs: params.c[None],
    )


def selective_scan(params: SsmParams, x, state: ScanState | None = None):
    """Input-dependent scan; fixed parameters fall through to :func:`scan`."""
    if not params.selective:
        return scan(params, x, state)
    state = state or ScanState.for_params(params)
    x = _check(params, x, state)
    return _recurrence(
        params,
        x,
        state,
        lambda xs: softplus(_project(xs, params.w_delta, params.bias_delta)),
        lambda xs: _project(xs, params.w_b, params.bias_b)[:, :, None],
        lambda xs: _project(xs, params.w_c, params.bias_c)[:, :, None],
    )


def bidirectional_local(params_fw: SsmParams, params_bw: SsmParams, x) -> np.ndarray:
    """Forward scan plus the re-reversed backward scan of the reversed sequence."""
    if (params_fw.n, params_fw.d) != (params_bw.n, params_bw.d):
        raise ShapeError("forward and backward parameters differ in shape")
    x = np.asarray(x, dtype=np.float64)
    y_fw, _ = selective_scan(params_fw, x)
    y_bw, _ = selective_scan(params_bw, x[::-1])
    return y_fw + y_bw[::-1]


@dataclass(frozen=True, eq=False)
class Kernel:
    k: np.ndarray  # (L, d): k_j = C a_bar^j b_bar per channel


def kernel(params: SsmParams, length: int) -> Kernel:
    """Global-convolution kernel of a time-invariant scan."""
    if params.selective:
        raise ScanModeError("the convolution kernel is undefined for selective parameters")
    a_bar, b_bar = discretize_zoh(params.a, params.b, params.delta[None, :])
    powers = a_bar[None] ** np.arange(length)[:, None, None]  # (L, N, d)
    return Kernel((params.c[None] * powers * b_bar[None]).sum(axis=1))


def causal_conv(x, k: Kernel, d_skip) -> np.ndarray:
    """y_t = sum_{j<=t} k_j * x_{t-j} + D * x_t, channelwise."""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[0]
    y = np.empty_like(x)
    for ch in range(x.shape[1]):
        y[:, ch] = np.convolve(x[:, ch], k.k[:length, ch])[:length]
    return y + np.asarray(d_skip) * x
