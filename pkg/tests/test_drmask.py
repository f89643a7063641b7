import numpy as np
import pytest

from symsweep.expr import (
    ADD, IDENTITY, MUL, KOZA, OperatorSet, Variable, equivalent, evaluate,
    format_expr,
)
from symsweep.engine import build_network, deduce, enumerate_all, forward
from symsweep.drmask import DrMask, apply_mask, compute_drmask, mask_fingerprint

ID_ADD = OperatorSet("id_add", (ADD, IDENTITY))
ID_ADD_MUL = OperatorSet("id_add_mul", (ADD, MUL, IDENTITY))
DOM = {f"_s{i}": (0.3, 1.7) for i in range(8)}


def test_mask_one_slot_keeps_distinct():
    # layer-1 outputs over one slot: {x, x+x}; both canonically distinct
    mask = compute_drmask(ID_ADD, 1, 2)
    assert mask.width == 2
    assert mask.keep.tolist() == [True, True]


def test_mask_removes_reachable_duplicates():
    # identity chains at layer 2 duplicate layer-1 columns reached by
    # different paths; only the first occurrence stays
    mask = compute_drmask(ID_ADD_MUL, 2, 3)
    exprs = enumerate_all(ID_ADD_MUL, [Variable("_s0"), Variable("_s1")], 2)
    keys = [e.key for e in exprs]
    first = {}
    expected = []
    for i, k in enumerate(keys):
        expected.append(k not in first)
        first.setdefault(k, i)
    assert mask.keep.tolist() == expected
    assert mask.kept_count < mask.width


def test_mask_purity_and_fingerprint():
    a = compute_drmask(KOZA, 3, 2)
    b = compute_drmask(KOZA, 3, 2)
    assert np.array_equal(a.keep, b.keep)
    assert a.fingerprint == b.fingerprint == mask_fingerprint(KOZA, 3, 2)
    assert mask_fingerprint(KOZA, 3, 2) != mask_fingerprint(KOZA, 4, 2)


def test_apply_all_true_identity():
    mask = DrMask(np.ones(3, dtype=bool), "fp")
    cols = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(apply_mask(mask, cols), cols)


def test_apply_compacts_and_remaps():
    mask = DrMask(np.array([True, False, True]), "fp")
    cols = np.arange(12.0).reshape(4, 3)
    out = apply_mask(mask, cols)
    np.testing.assert_array_equal(out, cols[:, [0, 2]])
    assert mask.remap() == {0: 0, 2: 1}


def test_apply_length_mismatch():
    mask = DrMask(np.array([True, False]), "fp")
    with pytest.raises(ValueError):
        apply_mask(mask, np.zeros((4, 3)))


def test_mask_soundness_every_removed_has_kept_equivalent():
    n_slots, n_layers = 2, 2
    mask = compute_drmask(KOZA, n_slots, n_layers)
    slots = [Variable(f"_s{i}") for i in range(n_slots)]
    exprs = enumerate_all(KOZA, slots, n_layers - 1)
    kept_by_key = {}
    for i in np.flatnonzero(mask.keep):
        kept_by_key[exprs[i].key] = exprs[i]
    for i in np.flatnonzero(~mask.keep):
        e = exprs[i]
        assert e.key in kept_by_key
        assert equivalent(e, kept_by_key[e.key], DOM)


@pytest.mark.parametrize("n_slots,n_layers", [(2, 2), (3, 2), (2, 3)])
def test_masked_forward_top1_matches_unmasked(n_slots, n_layers):
    rng = np.random.default_rng(7)
    plain = build_network(KOZA, n_slots, n_layers, use_drmask=False)
    masked = build_network(KOZA, n_slots, n_layers, use_drmask=True)
    assert masked.final_width < plain.final_width
    for trial in range(5):
        S = rng.uniform(0.4, 1.6, size=(12, n_slots))
        y = rng.normal(size=12)
        top_plain = forward(plain, S, y, k=1).entries[0]
        top_masked = forward(masked, S, y, k=1).entries[0]
        assert top_masked.mse == pytest.approx(top_plain.mse, abs=1e-10)


def test_masked_candidates_subset_of_unmasked():
    n_slots, n_layers = 2, 2
    plain = build_network(KOZA, n_slots, n_layers, use_drmask=False)
    masked = build_network(KOZA, n_slots, n_layers, use_drmask=True)
    slots = [Variable(f"_s{i}") for i in range(n_slots)]
    plain_keys = {deduce(plain, i, slots).key for i in range(plain.final_width)}
    masked_keys = {deduce(masked, i, slots).key for i in range(masked.final_width)}
    assert masked_keys <= plain_keys


def test_mask_disk_cache_roundtrip(tmp_path):
    first = compute_drmask(KOZA, 3, 2, cache_dir=str(tmp_path))
    files = list(tmp_path.glob("drmask-*.bits"))
    assert len(files) == 1
    again = compute_drmask(KOZA, 3, 2, cache_dir=str(tmp_path))
    assert np.array_equal(first.keep, again.keep)
    # a corrupt cache is ignored and recomputed
    files[0].write_text("{not json")
    third = compute_drmask(KOZA, 3, 2, cache_dir=str(tmp_path))
    assert np.array_equal(first.keep, third.keep)


def test_mask_requires_two_layers():
    with pytest.raises(ValueError):
        compute_drmask(KOZA, 2, 1)
