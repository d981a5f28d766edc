import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from oracles import dense_dilate
from polarscan.core import GridSpec, SparseVoxelTensor
from polarscan.ddc import (
    ConvMode,
    ConvSpec,
    LayerStack,
    PairingError,
    Plane,
    Slice2D,
    apply_conv,
    apply_inverse_conv,
    ddc_down,
    ddc_up,
    decoder_stack,
    encoder_stack,
    fold_axis,
    inverse_sparse_conv2d,
    normalize,
    normalize_by_sector,
    sparse_conv2d,
    submanifold_conv2d,
    unfold,
)
from polarscan.voxelize import FeatureLift, split_sectors, voxelize_sector


def _tensor(seed=0, dim=4, n=300, n_sectors=2):
    g = GridSpec.full_circle(0.0, 16.0, 16, 32, -2.0, 4.0, 8)
    pts = random_cloud(np.random.default_rng(seed), n)
    lift = FeatureLift.create(4, dim, seed=seed)
    from polarscan.core import concat

    return concat([lift(voxelize_sector(s, g)) for s in split_sectors(pts, n_sectors)])


def test_fold_unfold_round_trip():
    t = _tensor()
    for plane in Plane:
        slices = fold_axis(t, plane)
        back = unfold(slices, plane, t.spec)
        assert np.array_equal(back.coords, t.coords) and np.array_equal(back.features, t.features)


def test_zr_kernel_never_reaches_other_azimuths():
    # two voxels differing only in theta stay independent under a ZR conv
    g = GridSpec.full_circle(0, 4, 4, 8, 0, 2, 2)
    t = SparseVoxelTensor(g, np.array([[0, 1, 1, 0], [0, 2, 1, 0]]), np.array([[1.0], [0.0]]))
    spec = ConvSpec.create(Plane.ZR, (3, 3), (1, 1), ConvMode.SUBMANIFOLD, 1, 1, seed=0)
    out = apply_conv(t, spec)
    assert out.features[1, 0] == 0.0


def test_identity_kernel_submanifold():
    sl = Slice2D((0, 0), np.array([[0, 0], [2, 3]]), np.array([[1.0, 2.0], [3.0, 4.0]]), (4, 4))
    out = submanifold_conv2d(sl, ConvSpec.identity(Plane.ZR, ConvMode.SUBMANIFOLD, 2, kernel=(3, 3)))
    assert np.array_equal(out.features, sl.features)


def test_stride_one_sparse_conv_dilates():
    sl = Slice2D((0, 0), np.array([[2, 2]]), np.ones((1, 1)), (5, 5))
    out = sparse_conv2d(sl, ConvSpec.create(Plane.ZR, (3, 3), (1, 1), ConvMode.SPARSE, 1, 1))
    assert len(out.coords) == 9


def test_spec_validation():
    with pytest.raises(ValueError):
        ConvSpec.create(Plane.ZR, (2, 3), (1, 1), ConvMode.SPARSE, 1, 1)
    with pytest.raises(ValueError):
        ConvSpec.create(Plane.ZR, (3, 3), (2, 1), ConvMode.SUBMANIFOLD, 1, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 3), st.integers(1, 3),
       st.sampled_from([1, 3, 5]), st.integers(0, 10**6))
def test_sparse_active_set_matches_dilation_oracle(nz, nb, sz, sb, k, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((nz, nb)) < 0.3
    coords = np.argwhere(mask)
    if len(coords) == 0:
        return
    sl = Slice2D((0, 0), coords, np.ones((len(coords), 1)), (nz, nb))
    out = sparse_conv2d(sl, ConvSpec.create(Plane.ZR, (k, k), (sz, sb), ConvMode.SPARSE, 1, 1))
    ref = dense_dilate(mask, (k, k), (sz, sb))
    assert {tuple(c) for c in out.coords} == {tuple(c) for c in np.argwhere(ref)}


def test_inverse_needs_target():
    sl = Slice2D((0, 0), np.array([[0, 0]]), np.ones((1, 1)), (2, 2))
    spec = ConvSpec.create(Plane.ZR, (3, 3), (2, 2), ConvMode.INVERSE, 1, 1)
    with pytest.raises(PairingError):
        inverse_sparse_conv2d(sl, spec, None)


def test_encoder_decoder_restore_active_set():
    t = _tensor(dim=6)
    for stride, k in ((1, 3), (2, 3), (4, 5)):
        enc, rec = ddc_down(t, encoder_stack(6, stride, k, seed=1))
        if stride > 1:
            assert enc.spec.n_r == -(-t.spec.n_r // stride)
        dec = ddc_up(enc, decoder_stack(6, stride, k, seed=2), rec)
        assert np.array_equal(dec.coords, t.coords) and dec.spec == t.spec


def test_decoder_rejects_foreign_input():
    t = _tensor(dim=3)
    enc, rec = ddc_down(t, encoder_stack(3, 2, 3))
    other = enc.select(np.arange(len(enc)) > 0)
    with pytest.raises(PairingError):
        ddc_up(other, decoder_stack(3, 2, 3), rec)
    with pytest.raises(PairingError):
        ddc_up(enc, LayerStack(decoder_stack(3, 2, 3).layers[1:]), rec)


def test_apply_inverse_checks_grids():
    t = _tensor(dim=2)
    spec = ConvSpec.create(Plane.ZR, (3, 3), (2, 2), ConvMode.INVERSE, 2, 2)
    with pytest.raises(PairingError):
        apply_inverse_conv(t, spec, t)


def test_normalize_cases():
    assert np.array_equal(normalize(np.array([[1.0], [3.0]])), np.array([[-1.0], [1.0]]))
    assert np.array_equal(normalize(np.full((4, 2), 7.0)), np.zeros((4, 2)))
    z = normalize(np.random.default_rng(0).normal(size=(50, 3)))
    np.testing.assert_allclose(normalize(z), z, atol=1e-12)
    assert normalize(np.zeros((0, 3))).shape == (0, 3)


def test_normalize_by_sector_keeps_sectors_apart():
    t = _tensor(dim=3)
    a = normalize_by_sector(t)
    for s in t.sector_ids():
        rows = t.coords[:, 0] == s
        assert np.array_equal(a.features[rows], normalize(t.features[rows]))
