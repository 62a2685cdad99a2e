"""Validation split, branch selection, and the end-to-end protocol."""

import numpy as np
import pytest

from mdatrain.data import gen_glyphs
from mdatrain.errors import ContractError
from mdatrain.model import tiny_mlp
from mdatrain.selection import (select_branch, selection_protocol,
                                split_train_val)
from mdatrain.trainer import TrainConfig, evaluate_branches, train


def _cfg(**kw):
    base = dict(model_spec=tiny_mlp(64, 4, hidden=16), method="ours",
                epochs=2, batch_size=20, base_lr=0.05, split_index=1,
                eval_every=0)
    base.update(kw)
    return TrainConfig(**base)


def _data(seed=7, n=200):
    return gen_glyphs(4, n, 8, 0.15, seed)


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def test_split_sizes_80_20():
    tr, va = split_train_val(_data(n=100), 0.8, seed=3)
    assert len(tr) == 80 and len(va) == 20


def test_split_is_a_partition():
    ds = _data(n=97)
    tr, va = split_train_val(ds, 0.8, seed=4)
    ids = set(map(int, tr.ids)) | set(map(int, va.ids))
    assert ids == set(map(int, ds.ids))
    assert not set(map(int, tr.ids)) & set(map(int, va.ids))


def test_split_deterministic():
    ds = _data()
    a = split_train_val(ds, 0.8, seed=5)
    b = split_train_val(ds, 0.8, seed=5)
    np.testing.assert_array_equal(a[0].ids, b[0].ids)
    np.testing.assert_array_equal(a[1].ids, b[1].ids)


def test_split_fraction_range():
    with pytest.raises(ContractError):
        split_train_val(_data(), 1.0, seed=0)
    with pytest.raises(ContractError):
        split_train_val(_data(), 0.0, seed=0)


# ---------------------------------------------------------------------------
# select_branch
# ---------------------------------------------------------------------------

def test_select_branch_worked_example():
    report = select_branch([[0.80, 0.90, 0.85], [0.82, 0.88, 0.85]])
    np.testing.assert_allclose(report.means, [0.81, 0.89, 0.85])
    assert report.selected == 1
    assert not report.tie


def test_select_branch_tie_goes_to_lowest_index():
    report = select_branch([[0.8, 0.8, 0.8]])
    assert report.selected == 0
    assert report.tie


def test_select_branch_single_run():
    assert select_branch([[0.1, 0.9]]).selected == 1


def test_select_branch_scale_invariance():
    rows = [[0.5, 0.7, 0.6], [0.55, 0.65, 0.6]]
    scaled = [[v * 0.5 for v in r] for r in rows]
    assert select_branch(rows).selected == select_branch(scaled).selected


def test_select_branch_ragged_rejected():
    with pytest.raises(ContractError):
        select_branch([[0.1, 0.2], [0.3]])
    with pytest.raises(ContractError):
        select_branch([])


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

def test_protocol_exports_single_branch_network():
    ds = _data()
    net, report, _ = selection_protocol(_cfg(), ds, runs=2)
    assert net.n == 1
    assert 0 <= report.selected < 3
    assert len(report.val_acc) == 2 and len(report.val_acc[0]) == 3


def test_protocol_deterministic():
    ds = _data()
    a = selection_protocol(_cfg(), ds, runs=2)
    b = selection_protocol(_cfg(), ds, runs=2)
    assert a[1].to_json() == b[1].to_json()
    for p, q in zip(a[0].params(), b[0].params()):
        assert p.data.tobytes() == q.data.tobytes()
    assert evaluate_branches(a[0], ds) == evaluate_branches(b[0], ds)


def test_protocol_requires_ours_and_positive_runs():
    ds = _data()
    with pytest.raises(ContractError):
        selection_protocol(_cfg(method="single"), ds, runs=2)
    with pytest.raises(ContractError):
        selection_protocol(_cfg(), ds, runs=0)


def test_selection_runs_never_touch_validation_samples():
    ds = _data(n=200)
    cfg = _cfg(track_samples=True)
    train_part, val_part = split_train_val(ds, 0.8, cfg.seed_shuffle)
    _, _, metrics = train(cfg, train_part)
    assert metrics.consumed_ids
    assert not metrics.consumed_ids & set(map(int, val_part.ids))


def test_injected_accuracies_reproduce_decision():
    rows = [[0.71, 0.74, 0.70], [0.69, 0.75, 0.72], [0.73, 0.73, 0.71]]
    report = select_branch(rows)
    means = np.array(rows).mean(axis=0)
    assert report.selected == int(means.argmax())
    np.testing.assert_allclose(report.means, means)
