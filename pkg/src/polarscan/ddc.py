"""Dimensionally-decomposed sparse convolutions.

A 3D polar tensor is folded into 2D slices on the (z, r) plane (one slice
per sector and azimuth index) or on the (z, theta) plane (one slice per
sector and radial index). Every kernel therefore spans z and at most one
of r or theta; nothing here convolves jointly over (r, theta).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import GridSpec, ShapeError, SparseVoxelTensor, sort_canonical

NORM_EPS = 1e-5


class PairingError(ValueError):
    pass


class Plane(str, enum.Enum):
    ZR = "zr"
    ZTHETA = "ztheta"


class ConvMode(str, enum.Enum):
    SPARSE = "sparse"
    SUBMANIFOLD = "submanifold"
    INVERSE = "inverse_sparse"


# column of the folded axis and of the in-plane axis b in (sector, theta, r, z)
_PLANE_AXES = {Plane.ZR: (1, 2), Plane.ZTHETA: (2, 1)}


@dataclass(frozen=True, eq=False)
class ConvSpec:
    """One 2D sparse convolution on a plane that contains z.

    ``kernel`` and ``stride`` are ordered (z, b) where b is r for the ZR
    plane and theta for the ZTheta plane. ``weights`` has shape
    (k_z, k_b, in_dim, out_dim).
    """

    plane: Plane
    kernel: tuple[int, int]
    stride: tuple[int, int]
    mode: ConvMode
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "plane", Plane(self.plane))
        object.__setattr__(self, "mode", ConvMode(self.mode))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValueError(f"kernel sizes must be odd and positive, got {self.kernel}")
        if any(s < 1 for s in self.stride):
            raise ValueError(f"strides must be positive, got {self.stride}")
        if self.mode is ConvMode.SUBMANIFOLD and self.stride != (1, 1):
            raise ValueError("submanifold convolutions run with stride (1, 1)")
        w = np.asarray(self.weights)
        if w.ndim != 4 or w.shape[:2] != self.kernel:
            raise ShapeError(f"weights {w.shape} do not match kernel {self.kernel}")
        if np.shape(self.bias) != (w.shape[3],):
            raise ShapeError(f"bias must have shape ({w.shape[3]},)")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[2]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[3]

    @classmethod
    def create(cls, plane, kernel, stride, mode, in_dim, out_dim, seed=0, bias=False):
        """Seeded He-normal weights; bias zero unless ``bias`` is set."""
        rng = np.random.default_rng(seed)
        kernel = tuple(kernel)
        fan_in = kernel[0] * kernel[1] * in_dim
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(*kernel, in_dim, out_dim))
        b = rng.normal(0.0, 0.1, size=out_dim) if bias else np.zeros(out_dim)
        return cls(Plane(plane), kernel, tuple(stride), ConvMode(mode), w, b)

    @classmethod
    def identity(cls, plane, mode, dim, kernel=(1, 1), stride=(1, 1)):
        w = np.zeros((*kernel, dim, dim))
        w[kernel[0] // 2, kernel[1] // 2] = np.eye(dim)
        return cls(Plane(plane), kernel, stride, ConvMode(mode), w, np.zeros(dim))


@dataclass(frozen=True)
class LayerStack:
    layers: tuple[ConvSpec, ...]

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


@dataclass(frozen=True, eq=False)
class Slice2D:
    """Active sites of one folded plane; ``coords`` columns are (i_z, i_b)."""

    key: tuple[int, int]  # (sector_id, folded index)
    coords: np.ndarray
    features: np.ndarray
    shape: tuple[int, int]  # (n_z, n_b)


def _plane_shape(spec: GridSpec, plane: Plane) -> tuple[int, int]:
    return (spec.n_z, spec.n_r if plane is Plane.ZR else spec.n_theta)


def fold_axis(t: SparseVoxelTensor, plane) -> list[Slice2D]:
    """Split a tensor into independent 2D slices, folded axis in the batch."""
    plane = Plane(plane)
    fold, b_axis = _PLANE_AXES[plane]
    shape = _plane_shape(t.spec, plane)
    if len(t) == 0:
        return []
    batch = t.coords[:, [0, fold]]
    keys, inverse = np.unique(batch, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
    out = []
    for i, key in enumerate(keys):
        rows = order[bounds[i] : bounds[i + 1]]
        coords = t.coords[rows][:, [3, b_axis]]
        out.append(Slice2D((int(key[0]), int(key[1])), coords, t.features[rows], shape))
    return out


def unfold(slices: list[Slice2D], plane, spec: GridSpec, dim: int | None = None):
    """Inverse of :func:`fold_axis`; ``spec`` is the grid the slices live on."""
    plane = Plane(plane)
    fold, b_axis = _PLANE_AXES[plane]
    if not slices:
        return SparseVoxelTensor.empty(spec, dim or 0)
    parts = []
    for s in slices:
        c = np.empty((len(s.coords), 4), np.int64)
        c[:, 0] = s.key[0]
        c[:, fold] = s.key[1]
        c[:, 3] = s.coords[:, 0]
        c[:, b_axis] = s.coords[:, 1]
        parts.append(c)
    coords = np.concatenate(parts)
    feats = np.concatenate([s.features for s in slices])
    return sort_canonical(SparseVoxelTensor(spec, coords, feats))


# --- batched 2D kernels -------------------------------------------------------
# Sites are (batch, a, b) with a the z index. Keys a flat int64 index.


def _keys(bid, ab, shape):
    return (bid * shape[0] + ab[:, 0]) * shape[1] + ab[:, 1]


def _lookup(sorted_keys, query):
    """Index of each query key in ``sorted_keys`` or -1."""
    pos = np.searchsorted(sorted_keys, query)
    pos = np.minimum(pos, len(sorted_keys) - 1)
    hit = sorted_keys[pos] == query if len(sorted_keys) else np.zeros(len(query), bool)
    return np.where(hit, pos, -1)


def _taps(kernel):
    return [(ta, tb) for ta in range(kernel[0]) for tb in range(kernel[1])]


def _out_shape(shape, stride):
    return (-(-shape[0] // stride[0]), -(-shape[1] // stride[1]))


def _sparse_forward(bid, ab, feats, shape, spec: ConvSpec):
    """Strided sparse conv; an output site is active if any tap reaches an input."""
    pad = (spec.kernel[0] // 2, spec.kernel[1] // 2)
    out_shape = _out_shape(shape, spec.stride)
    s = np.asarray(spec.stride)
    cand_b, cand_ab, per_tap = [], [], []
    for ta, tb in _taps(spec.kernel):
        num = ab + np.asarray(pad) - np.asarray([ta, tb])
        ok = np.all(num % s == 0, axis=1)
        o = num // s
        ok &= (o[:, 0] >= 0) & (o[:, 0] < out_shape[0]) & (o[:, 1] >= 0) & (o[:, 1] < out_shape[1])
        idx = np.flatnonzero(ok)
        per_tap.append((ta, tb, idx, o[idx]))
        cand_b.append(bid[idx])
        cand_ab.append(o[idx])
    all_b = np.concatenate(cand_b) if cand_b else np.zeros(0, np.int64)
    all_ab = np.concatenate(cand_ab) if cand_ab else np.zeros((0, 2), np.int64)
    out_keys = np.unique(_keys(all_b, all_ab.reshape(-1, 2), out_shape))
    n_out = len(out_keys)
    out_bid = out_keys // (out_shape[0] * out_shape[1])
    rem = out_keys % (out_shape[0] * out_shape[1])
    out_ab = np.stack([rem // out_shape[1], rem % out_shape[1]], axis=1)
    out = np.zeros((n_out, spec.out_dim), dtype=feats.dtype)
    for ta, tb, idx, o in per_tap:
        if idx.size == 0:
            continue
        pos = _lookup(out_keys, _keys(bid[idx], o, out_shape))
        # each output receives at most one input per tap
        out[pos] += feats[idx] @ spec.weights[ta, tb]
    out += spec.bias
    return out_bid, out_ab, out, out_shape


def _gather_conv(bid, ab, feats, shape, target_bid, target_ab, spec: ConvSpec, transpose):
    """Evaluate a conv only at the given target sites.

    Forward (submanifold): target i reads input i + t - pad.
    Transpose (inverse): target i reads input o where i = o*s + t - pad.
    """
    pad = np.asarray([spec.kernel[0] // 2, spec.kernel[1] // 2])
    s = np.asarray(spec.stride)
    in_keys = _keys(bid, ab, shape)
    order = np.argsort(in_keys, kind="stable")
    sorted_keys = in_keys[order]
    out = np.zeros((len(target_bid), spec.out_dim), dtype=feats.dtype)
    for ta, tb in _taps(spec.kernel):
        tap = np.asarray([ta, tb])
        if transpose:
            num = target_ab + pad - tap
            ok = np.all(num % s == 0, axis=1)
            src = num // s
        else:
            src = target_ab + tap - pad
            ok = np.ones(len(target_ab), bool)
        ok &= (src[:, 0] >= 0) & (src[:, 0] < shape[0]) & (src[:, 1] >= 0) & (src[:, 1] < shape[1])
        idx = np.flatnonzero(ok)
        if idx.size == 0 or len(sorted_keys) == 0:
            continue
        pos = _lookup(sorted_keys, _keys(target_bid[idx], src[idx], shape))
        hit = pos >= 0
        if not hit.any():
            continue
        out[idx[hit]] += feats[order[pos[hit]]] @ spec.weights[ta, tb]
    out += spec.bias
    return out


def _check_channels(features: np.ndarray, spec: ConvSpec):
    if features.shape[1] != spec.in_dim:
        raise ShapeError(f"conv expects {spec.in_dim} channels, got {features.shape[1]}")


def _single(slice_: Slice2D):
    bid = np.zeros(len(slice_.coords), np.int64)
    return bid, np.asarray(slice_.coords, np.int64).reshape(-1, 2)


def sparse_conv2d(slice_: Slice2D, spec: ConvSpec) -> Slice2D:
    if spec.mode is not ConvMode.SPARSE:
        raise ValueError(f"sparse_conv2d needs a sparse spec, got {spec.mode}")
    _check_channels(slice_.features, spec)
    bid, ab = _single(slice_)
    _, out_ab, out, out_shape = _sparse_forward(bid, ab, slice_.features, slice_.shape, spec)
    return Slice2D(slice_.key, out_ab, out, out_shape)


def submanifold_conv2d(slice_: Slice2D, spec: ConvSpec) -> Slice2D:
    if spec.mode is not ConvMode.SUBMANIFOLD:
        raise ValueError(f"submanifold_conv2d needs a submanifold spec, got {spec.mode}")
    _check_channels(slice_.features, spec)
    bid, ab = _single(slice_)
    out = _gather_conv(bid, ab, slice_.features, slice_.shape, bid, ab, spec, False)
    return Slice2D(slice_.key, ab.copy(), out, slice_.shape)


def inverse_sparse_conv2d(slice_: Slice2D, spec: ConvSpec, target) -> Slice2D:
    """Transpose convolution evaluated on ``target``, the pre-downsampling sites.

    ``target`` is an (M, 2) coordinate array or a :class:`Slice2D` giving both
    sites and the fine plane shape.
    """
    if spec.mode is not ConvMode.INVERSE:
        raise ValueError(f"inverse_sparse_conv2d needs an inverse spec, got {spec.mode}")
    if target is None:
        raise PairingError("inverse convolution needs the recorded target active set")
    _check_channels(slice_.features, spec)
    if isinstance(target, Slice2D):
        t_ab, fine_shape = np.asarray(target.coords, np.int64), target.shape
    else:
        t_ab = np.asarray(target, np.int64).reshape(-1, 2)
        fine_shape = (slice_.shape[0] * spec.stride[0], slice_.shape[1] * spec.stride[1])
    if _out_shape(fine_shape, spec.stride) != tuple(slice_.shape):
        raise PairingError(f"target plane {fine_shape} does not stride to {slice_.shape}")
    bid, ab = _single(slice_)
    t_bid = np.zeros(len(t_ab), np.int64)
    out = _gather_conv(bid, ab, slice_.features, slice_.shape, t_bid, t_ab, spec, True)
    return Slice2D(slice_.key, t_ab.copy(), out, fine_shape)


# --- 3D tensors through folded planes ----------------------------------------


def _fold_arrays(t: SparseVoxelTensor, plane: Plane):
    fold, b_axis = _PLANE_AXES[plane]
    batch = t.coords[:, [0, fold]]
    keys, bid = np.unique(batch, axis=0, return_inverse=True)
    ab = t.coords[:, [3, b_axis]]
    return keys, bid.reshape(-1), ab


def _unfold_arrays(keys, bid, ab, feats, plane: Plane, spec: GridSpec):
    fold, b_axis = _PLANE_AXES[plane]
    coords = np.empty((len(bid), 4), np.int64)
    coords[:, 0] = keys[bid, 0]
    coords[:, fold] = keys[bid, 1]
    coords[:, 3] = ab[:, 0]
    coords[:, b_axis] = ab[:, 1]
    return sort_canonical(SparseVoxelTensor(spec, coords, feats))


def _strided_spec(spec: GridSpec, plane: Plane, stride) -> GridSpec:
    if plane is Plane.ZR:
        return spec.downsample(s_z=stride[0], s_r=stride[1])
    return spec.downsample(s_z=stride[0], s_theta=stride[1])


def apply_conv(t: SparseVoxelTensor, spec: ConvSpec) -> SparseVoxelTensor:
    """Run a sparse or submanifold ConvSpec over every folded slice of ``t``."""
    if spec.mode is ConvMode.INVERSE:
        raise ValueError("use apply_inverse_conv for inverse convolutions")
    _check_channels(t.features, spec)
    if len(t) == 0:
        out_spec = _strided_spec(t.spec, spec.plane, spec.stride)
        return SparseVoxelTensor.empty(out_spec, spec.out_dim, t.features.dtype)
    keys, bid, ab = _fold_arrays(t, spec.plane)
    shape = _plane_shape(t.spec, spec.plane)
    if spec.mode is ConvMode.SUBMANIFOLD:
        out = _gather_conv(bid, ab, t.features, shape, bid, ab, spec, False)
        return _unfold_arrays(keys, bid, ab, out, spec.plane, t.spec)
    out_bid, out_ab, out, _ = _sparse_forward(bid, ab, t.features, shape, spec)
    out_spec = _strided_spec(t.spec, spec.plane, spec.stride)
    return _unfold_arrays(keys, out_bid, out_ab, out, spec.plane, out_spec)


def apply_inverse_conv(
    t: SparseVoxelTensor, spec: ConvSpec, target: SparseVoxelTensor
) -> SparseVoxelTensor:
    """Transpose conv of ``t`` evaluated on the coordinates of ``target``."""
    if spec.mode is not ConvMode.INVERSE:
        raise ValueError("apply_inverse_conv needs an inverse spec")
    _check_channels(t.features, spec)
    if _strided_spec(target.spec, spec.plane, spec.stride) != t.spec:
        raise PairingError("target grid does not stride onto the input grid")
    if len(target) == 0:
        return SparseVoxelTensor.empty(target.spec, spec.out_dim, t.features.dtype)
    fold, b_axis = _PLANE_AXES[spec.plane]
    fine_shape = _plane_shape(target.spec, spec.plane)
    coarse_shape = _plane_shape(t.spec, spec.plane)
    # folded axis is never strided, so both sides share batch keys
    keys = np.unique(
        np.concatenate([t.coords[:, [0, fold]], target.coords[:, [0, fold]]]), axis=0
    )
    t_bid = _lookup(keys[:, 0] * (1 << 32) + keys[:, 1],
                    t.coords[:, 0] * (1 << 32) + t.coords[:, fold])
    g_bid = _lookup(keys[:, 0] * (1 << 32) + keys[:, 1],
                    target.coords[:, 0] * (1 << 32) + target.coords[:, fold])
    t_ab = t.coords[:, [3, b_axis]]
    g_ab = target.coords[:, [3, b_axis]]
    out = _gather_conv(t_bid, t_ab, t.features, coarse_shape, g_bid, g_ab, spec, True)
    return SparseVoxelTensor(target.spec, target.coords, out)


# --- normalization ------------------------------------------------------------


def normalize(features: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Per-channel standardization over rows.

    Channels whose variance is below ``eps`` become zero; others are
    mapped to zero mean and unit variance exactly.
    """
    features = np.asarray(features)
    if features.shape[0] == 0:
        return features.copy()
    mean = features.mean(axis=0)
    centered = features - mean
    var = (centered * centered).mean(axis=0)
    safe = np.where(var < eps, 1.0, np.sqrt(var))
    out = centered / safe
    out[:, var < eps] = 0.0
    return out


def normalize_by_sector(t: SparseVoxelTensor, eps: float = NORM_EPS) -> SparseVoxelTensor:
    """Standardize each sector on its own, so sectors never share statistics."""
    out = np.empty_like(t.features)
    sectors = t.coords[:, 0]
    for s in np.unique(sectors):
        rows = sectors == s
        out[rows] = normalize(t.features[rows], eps)
    return t.with_features(out)


def relu(t: SparseVoxelTensor) -> SparseVoxelTensor:
    return t.with_features(np.maximum(t.features, 0.0))


# --- encoder / decoder --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PairingRecord:
    """Active sets recorded by ``ddc_down`` for each strided sparse layer."""

    targets: tuple[SparseVoxelTensor, ...] = ()  # input of each sparse layer
    outputs: tuple[np.ndarray, ...] = ()  # coords produced by each sparse layer
    input_coords: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), np.int64))


def _post(t, norm, activation):
    if norm:
        t = normalize_by_sector(t)
    if activation:
        t = relu(t)
    return t


def ddc_down(t: SparseVoxelTensor, encoder: LayerStack, norm=True, activation=True):
    """Apply the encoder layers, normalizing after each, and record active sets."""
    targets, outputs = [], []
    for spec in encoder:
        if spec.mode is ConvMode.INVERSE:
            raise ValueError("encoder stacks hold sparse or submanifold layers only")
        if spec.mode is ConvMode.SPARSE:
            targets.append(t.with_features(np.zeros((len(t), 0))))
        t = apply_conv(t, spec)
        if spec.mode is ConvMode.SPARSE:
            outputs.append(t.coords.copy())
        t = _post(t, norm, activation)
    record = PairingRecord(tuple(targets), tuple(outputs), t.coords.copy())
    return t, record


def ddc_up(t: SparseVoxelTensor, decoder: LayerStack, record: PairingRecord,
           norm=True, activation=True) -> SparseVoxelTensor:
    """Mirror of :func:`ddc_down`: inverse layers restore recorded active sets.

    Normalization and activation follow every decoder layer except the
    last, whose output is returned linear.
    """
    if not np.array_equal(t.coords, record.input_coords):
        raise PairingError("decoder input does not match the encoder output record")
    n_inverse = sum(spec.mode is ConvMode.INVERSE for spec in decoder)
    if n_inverse != len(record.targets):
        raise PairingError(
            f"decoder has {n_inverse} inverse layers, record holds {len(record.targets)}"
        )
    pending = list(zip(record.targets, record.outputs))
    layers = list(decoder)
    for i, spec in enumerate(layers):
        if spec.mode is ConvMode.INVERSE:
            target, produced = pending.pop()
            if not np.array_equal(t.coords, produced):
                raise PairingError("inverse layer input differs from the paired layer output")
            t = apply_inverse_conv(t, spec, target)
        elif spec.mode is ConvMode.SUBMANIFOLD:
            t = apply_conv(t, spec)
        else:
            raise ValueError("decoder stacks hold inverse or submanifold layers only")
        if i < len(layers) - 1:
            t = _post(t, norm, activation)
    return t


def encoder_stack(dim: int, stride: int, kernel: int, seed: int = 0) -> LayerStack:
    """(z, r) sparse conv, (z, r) submanifold conv, (z, theta) sparse conv."""
    k = (kernel, kernel)
    return LayerStack((
        ConvSpec.create(Plane.ZR, k, (stride, stride), ConvMode.SPARSE, dim, dim, seed),
        ConvSpec.create(Plane.ZR, k, (1, 1), ConvMode.SUBMANIFOLD, dim, dim, seed + 1),
        ConvSpec.create(Plane.ZTHETA, k, (1, stride), ConvMode.SPARSE, dim, dim, seed + 2),
    ))


def decoder_stack(dim: int, stride: int, kernel: int, seed: int = 0) -> LayerStack:
    """Reverse of :func:`encoder_stack` with inverse convolutions."""
    k = (kernel, kernel)
    return LayerStack((
        ConvSpec.create(Plane.ZTHETA, k, (1, stride), ConvMode.INVERSE, dim, dim, seed),
        ConvSpec.create(Plane.ZR, k, (1, 1), ConvMode.SUBMANIFOLD, dim, dim, seed + 1),
        ConvSpec.create(Plane.ZR, k, (stride, stride), ConvMode.INVERSE, dim, dim, seed + 2),
    ))
