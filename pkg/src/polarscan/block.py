"""Hierarchical sector block: local bidirectional scan, decomposed encoder,
global forward scan carried across sectors, decoder and local residual."""

from __future__ import annotations

from dataclasses import dataclass, field


from .core import ShapeError, SparseVoxelTensor, concat
from .ddc import LayerStack, ddc_down, ddc_up, decoder_stack, encoder_stack, normalize
from .ssm import ScanState, SsmParams, bidirectional_local, init_selective, selective_scan

DEFAULT_STRIDES = (1, 1, 1, 2, 1, 4)
DEFAULT_KERNELS = (3, 3, 3, 3, 3, 5)
MODEL_DIM = 128
STATE_DIM = 16


class ContextError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PhimBlockParams:
    local_fw: SsmParams
    local_bw: SsmParams
    global_fw: SsmParams
    encoder: LayerStack
    decoder: LayerStack

    def __post_init__(self):
        dims = {self.local_fw.d, self.local_bw.d, self.global_fw.d}
        dims |= {self.encoder.layers[0].in_dim, self.encoder.layers[-1].out_dim}
        dims |= {self.decoder.layers[0].in_dim, self.decoder.layers[-1].out_dim}
        if len(dims) != 1:
            raise ShapeError(f"block channel dims do not chain: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.local_fw.d

    @classmethod
    def create(cls, dim=MODEL_DIM, stride=1, kernel=3, state_dim=STATE_DIM, seed=0):
        return cls(
            local_fw=init_selective(dim, state_dim, seed=seed),
            local_bw=init_selective(dim, state_dim, seed=seed + 1),
            global_fw=init_selective(dim, state_dim, seed=seed + 2),
            encoder=encoder_stack(dim, stride, kernel, seed=seed + 3),
            decoder=decoder_stack(dim, stride, kernel, seed=seed + 6),
        )


@dataclass(frozen=True, eq=False)
class BackboneParams:
    blocks: tuple[PhimBlockParams, ...]
    strides: tuple[int, ...] = DEFAULT_STRIDES
    kernels: tuple[int, ...] = DEFAULT_KERNELS
    seed: int = 0

    def __post_init__(self):
        if len(self.blocks) != 6:
            raise ValueError(f"backbone has 6 blocks, got {len(self.blocks)}")
        if len({b.dim for b in self.blocks}) != 1:
            raise ShapeError("all blocks must share the model dimension")

    @property
    def dim(self) -> int:
        return self.blocks[0].dim

    @classmethod
    def create(cls, dim=MODEL_DIM, strides=DEFAULT_STRIDES, kernels=DEFAULT_KERNELS,
               state_dim=STATE_DIM, seed=0):
        blocks = tuple(
            PhimBlockParams.create(dim, s, k, state_dim, seed=seed + 100 * i)
            for i, (s, k) in enumerate(zip(strides, kernels))
        )
        return cls(blocks, tuple(strides), tuple(kernels), seed)


@dataclass
class StreamContext:
    """Global scan state of every block plus the position in the rotation.

    Owned by exactly one driver; block calls update it in place.
    """

    states: list[ScanState]
    rotation: int = 0
    cursor: int = -1  # last sector processed in this rotation
    history: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def fresh(cls, bp: BackboneParams) -> StreamContext:
        return cls([ScanState.for_params(b.global_fw) for b in bp.blocks])

    def begin_rotation(self, rotation: int) -> None:
        if rotation < self.rotation:
            raise ContextError(f"rotation {rotation} precedes {self.rotation}")
        self.rotation = rotation
        self.cursor = -1

    def copy(self) -> StreamContext:
        return StreamContext(list(self.states), self.rotation, self.cursor, list(self.history))


def _process_sector(ts: SparseVoxelTensor, p: PhimBlockParams, state: ScanState):
    # pre-norm keeps the quadratic selective scan bounded across stacked blocks
    v_local = bidirectional_local(p.local_fw, p.local_bw, normalize(ts.features))
    x = ts.with_features(v_local)
    enc, record = ddc_down(x, p.encoder)
    y, state = selective_scan(p.global_fw, enc.features, state)
    g = enc.with_features(normalize(y))
    dec = ddc_up(g, p.decoder, record)
    return dec.with_features((dec.features + v_local).astype(ts.features.dtype)), state


def phim_block_forward(
    t: SparseVoxelTensor, p: PhimBlockParams, ctx: StreamContext, block: int = 0
) -> SparseVoxelTensor:
    """One block over every sector present in ``t``, in sector order.

    The local scan, encoder, normalizations and decoder see one sector at a
    time. Only the global scan links sectors, through ``ctx.states[block]``,
    so one call over several sectors equals consecutive per-sector calls.
    """
    if t.dim != p.dim:
        raise ShapeError(f"block expects {p.dim} channels, got {t.dim}")
    state = ctx.states[block]
    if state.h.shape != (p.global_fw.n, p.global_fw.d):
        raise ContextError(
            f"context state {state.h.shape} does not fit block {block} "
            f"({p.global_fw.n}, {p.global_fw.d})"
        )
    if len(t) == 0:
        return t
    outs = []
    for s in t.sector_ids():
        out, state = _process_sector(t.sector(int(s)), p, state)
        outs.append(out)
    ctx.states[block] = state
    return concat(outs)


def backbone_forward(
    t: SparseVoxelTensor, bp: BackboneParams, ctx: StreamContext
) -> SparseVoxelTensor:
    """All blocks in sequence; sector ids must move forward within a rotation."""
    if len(ctx.states) != len(bp.blocks):
        raise ContextError(f"context holds {len(ctx.states)} states for {len(bp.blocks)} blocks")
    sectors = t.sector_ids()
    if len(sectors) and sectors[0] <= ctx.cursor:
        raise ContextError(
            f"sector {int(sectors[0])} is not after sector {ctx.cursor} "
            f"in rotation {ctx.rotation}"
        )
    for i, p in enumerate(bp.blocks):
        t = phim_block_forward(t, p, ctx, block=i)
    if len(sectors):
        ctx.cursor = int(sectors[-1])
        ctx.history.extend((ctx.rotation, int(s)) for s in sectors)
    return t

