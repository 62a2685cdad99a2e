"""Training loops: budgets, degeneracies, determinism, evaluation."""

import json
from dataclasses import replace

import numpy as np
import pytest

from mdatrain.data import gen_glyphs
from mdatrain.errors import ContractError
from mdatrain.model import build_branched, tiny_mlp
from mdatrain.optim import cosine_lr
from mdatrain.rng import RngStream
from mdatrain.trainer import (RunMetrics, TrainConfig, budget_steps, evaluate,
                              evaluate_branches, train, train_baseline1,
                              train_single)

MLP = tiny_mlp(64, 4, hidden=16)


def _data(seed=7, n=200, classes=4, noise=0.15):
    return gen_glyphs(classes, n, 8, noise, seed)


def _cfg(**kw):
    base = dict(model_spec=MLP, method="ours", epochs=2, batch_size=25,
                base_lr=0.05, split_index=1, eval_every=0)
    base.update(kw)
    return TrainConfig(**base)


def _records_blob(metrics):
    return json.dumps(metrics.records, sort_keys=True)


# ---------------------------------------------------------------------------
# budget
# ---------------------------------------------------------------------------

def test_budget_steps_paper_values():
    assert budget_steps(3000, 3, True) == 1000
    assert budget_steps(3000, 2, True) == 1500
    assert budget_steps(3000, 3, False) == 3000


def test_budget_steps_precondition():
    with pytest.raises(ContractError):
        budget_steps(2, 3, True)


def test_fair_budget_applied_to_ours_only():
    ds = _data()
    spe = len(ds) // 25
    m, _, met = train(_cfg(epochs=3), ds)
    assert met.base_steps == 3 * spe
    assert met.steps_run == (3 * spe) // 3
    _, met1 = train_baseline1(_cfg(epochs=3), ds)
    assert met1.steps_run == 3 * spe


def test_augmented_sample_counts_match_within_one_batch():
    ds = _data()
    _, _, ours = train(_cfg(epochs=3), ds)
    _, b1 = train_baseline1(_cfg(epochs=3), ds)
    assert abs(ours.augmented_samples - b1.augmented_samples) <= 25 * 3


# ---------------------------------------------------------------------------
# degeneracies and zero cases
# ---------------------------------------------------------------------------

def test_zero_lr_leaves_parameters_at_init():
    ds = _data()
    cfg = _cfg(base_lr=0.0, epochs=1)
    model, _, _ = train(cfg, ds)
    fresh = build_branched(MLP, cfg.split_index, 3,
                           RngStream(cfg.seed_init, "init"))
    for a, b in zip(model.params(), fresh.params()):
        np.testing.assert_array_equal(a.data, b.data)


@pytest.mark.parametrize("da", ["randaugment", "mixup", "cutmix"])
def test_n1_ours_bit_identical_to_single(da):
    ds = _data()
    cfg_ours = _cfg(da_set=(da,), epochs=2)
    cfg_single = _cfg(method="single", single_da=da, epochs=2)
    m1, _, met1 = train(cfg_ours, ds)
    m2, met2 = train_single(cfg_single, ds)
    for a, b in zip(m1.params(), m2.params()):
        assert a.data.tobytes() == b.data.tobytes()
    assert _records_blob(met1) == _records_blob(met2)


def test_baseline1_size_one_set_equals_single():
    ds = _data()
    m1, _ = train_baseline1(_cfg(da_set=("cutmix",), epochs=2), ds)
    m2, _ = train_single(_cfg(method="single", single_da="cutmix", epochs=2), ds)
    for a, b in zip(m1.params(), m2.params()):
        assert a.data.tobytes() == b.data.tobytes()


def test_drop_flags_are_beta_endpoints():
    ds = _data(n=100)
    runs = {}
    for key, kw in (("drop_kd", dict(drop_kd=True)),
                    ("fixed0", dict(beta_mode="fixed", beta_fixed=0.0)),
                    ("drop_direct", dict(drop_direct=True)),
                    ("fixed1", dict(beta_mode="fixed", beta_fixed=1.0))):
        model, _, _ = train(_cfg(epochs=1, **kw), ds)
        runs[key] = [t.data.tobytes() for t in model.params()]
    assert runs["drop_kd"] == runs["fixed0"]
    assert runs["drop_direct"] == runs["fixed1"]


def test_drop_both_rejected():
    with pytest.raises(ContractError):
        _cfg(drop_kd=True, drop_direct=True).resolve_beta_mode()


def test_unknown_method_rejected():
    with pytest.raises(ContractError):
        _cfg(method="ensemble")


# ---------------------------------------------------------------------------
# determinism and logging
# ---------------------------------------------------------------------------

def test_training_is_reproducible():
    ds = _data()
    test = _data(seed=8, n=80)
    a = train(_cfg(eval_every=1), ds, test)
    b = train(_cfg(eval_every=1), ds, test)
    assert _records_blob(a[2]) == _records_blob(b[2])
    for p, q in zip(a[0].params(), b[0].params()):
        assert p.data.tobytes() == q.data.tobytes()


def test_lr_log_matches_cosine_exactly():
    ds = _data()
    _, _, met = train(_cfg(epochs=3), ds)
    steps = met.steps_run
    for k, lr in enumerate(met.lr_steps):
        assert lr == cosine_lr(k, steps, 0.05)
    assert all(a >= b for a, b in zip(met.lr_steps, met.lr_steps[1:]))


def test_epoch_records_structure():
    ds = _data()
    test = _data(seed=9, n=80)
    _, met = train_single(_cfg(method="single", epochs=3, eval_every=1),
                          ds, test)
    assert len(met.records) == 3
    for rec in met.records:
        assert np.isfinite(rec["loss"])
        assert all(0.0 <= b <= 1.0 for b in rec["beta"])
        assert "test_acc" in rec
    assert met.final_test_acc == met.records[-1]["test_acc"]


def test_beta_trajectory_logged_and_bounded():
    ds = _data()
    _, beta, met = train(_cfg(epochs=3), ds)
    assert met.beta_start == [0.0, 0.0, 0.0]
    for rec in met.records:
        assert len(rec["beta"]) == 3
    np.testing.assert_array_equal(np.clip(beta.beta, 0, 1), beta.beta)


def test_da_choice_counters_roughly_uniform():
    ds = _data(n=1000, noise=0.1)
    _, met = train_baseline1(_cfg(epochs=2, batch_size=100), ds)
    total = sum(met.da_choice_counts.values())
    assert total == met.steps_run * 100
    for c in met.da_choice_counts.values():
        assert abs(c / total - 1 / 3) < 0.05


def test_noda_learns_separable_task():
    # clean two-class glyphs are linearly separable enough for a perfect fit
    ds = gen_glyphs(2, 100, 8, 0.0, 11)
    cfg = _cfg(method="noda", epochs=50, batch_size=25, base_lr=0.1,
               model_spec=tiny_mlp(64, 2, hidden=16))
    model, met = train_single(cfg, ds)
    assert evaluate(model, ds) == 1.0


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_evaluate_constant_network_is_chance():
    ds = _data(n=100, noise=0.0)
    model = build_branched(MLP, 1, 1, RngStream(1, "init"))
    for p in model.params():
        p.data[:] = 0.0  # uniform softmax; argmax tie -> class 0
    assert evaluate(model, ds) == (ds.labels.argmax(axis=1) == 0).mean()


def test_evaluate_matches_per_sample_recount():
    ds = _data(n=100)
    model, _, _ = train(_cfg(epochs=1), ds)
    from mdatrain.tensor import Tensor
    hits = 0
    for j in range(len(ds)):
        pred = model.predict(Tensor(ds.images[j:j + 1]), 0).data
        hits += int(pred.argmax() == ds.labels[j].argmax())
    assert evaluate(model, ds, branch=0) == hits / len(ds)


def test_evaluate_branches_agrees_with_evaluate():
    ds = _data(n=100)
    model, _, _ = train(_cfg(epochs=1), ds)
    accs = evaluate_branches(model, ds)
    assert accs == [evaluate(model, ds, branch=i) for i in range(model.n)]


def test_evaluate_empty_dataset_rejected():
    ds = _data(n=10)
    model = build_branched(MLP, 1, 1, RngStream(1, "init"))
    with pytest.raises(ContractError):
        evaluate(model, ds.subset([]))


def test_track_samples_records_consumed_ids():
    ds = _data(n=100)
    _, _, met = train(_cfg(epochs=1, track_samples=True), ds)
    assert met.consumed_ids  # populated
    assert met.consumed_ids <= set(map(int, ds.ids))


def test_dataset_smaller_than_batch_rejected():
    ds = _data(n=10)
    with pytest.raises(ContractError):
        train(_cfg(batch_size=64), ds)
