"""Branched-network topology, parameter partition, and gradient flow."""

import numpy as np
import pytest

from mdatrain.errors import ContractError
from mdatrain.losses import BetaState, total_loss
from mdatrain.model import (BlockSpec, build_branched, export_branch,
                            forward_all, param_partition, tiny_cnn, tiny_mlp)
from mdatrain.rng import RngStream
from mdatrain.tensor import AdjointTape, Tensor, backward, finite_diff_grad


def _count(spec):
    """Independent per-unit parameter counts for tiny_cnn-style specs."""
    total = 0
    for layer in spec:
        if layer[0] == "conv":
            _, cin, cout, _ = layer
            total += cout * cin * 9 + cout
        elif layer[0] == "linear":
            _, din, dout = layer
            total += din * dout + dout


    return total


CNN = tiny_cnn()  # 1ch, 10 classes, 16x16, widths (16,32,64)
MLP = tiny_mlp(64, 4, hidden=16)


# ---------------------------------------------------------------------------
# parameter counting
# ---------------------------------------------------------------------------

def test_param_count_split1_n3():
    model = build_branched(CNN, 1, 3, RngStream(1, "init"))
    shared = _count(CNN.stem) + _count(CNN.blocks[0])
    branch = _count(CNN.blocks[1]) + _count(CNN.head)
    assert shared == 160 + 4640          # conv1->16 and conv16->32
    assert branch == 18496 + 10250       # conv32->64 and linear 1024->10
    assert model.param_count() == shared + 3 * branch


def test_param_count_split_minus1_is_three_full_nets():
    single = build_branched(CNN, CNN.num_blocks, 1, RngStream(2, "init"))
    model = build_branched(CNN, -1, 3, RngStream(2, "init"))
    assert model.param_count() == 3 * single.param_count()
    shared, _ = param_partition(model)
    assert shared == []


def test_n1_equals_unbranched_count():
    a = build_branched(CNN, 1, 1, RngStream(3, "init"))
    b = build_branched(CNN, -1, 1, RngStream(3, "init"))
    assert a.param_count() == b.param_count()


def test_shared_count_independent_of_n():
    counts = set()
    for n in (1, 2, 4):
        model = build_branched(CNN, 1, n, RngStream(4, "init"))
        shared, _ = param_partition(model)
        counts.add(sum(t.size for t in shared))
    assert len(counts) == 1


def test_split_index_out_of_range():
    with pytest.raises(ContractError):
        build_branched(CNN, 3, 2, RngStream(5, "init"))
    with pytest.raises(ContractError):
        build_branched(CNN, -2, 2, RngStream(5, "init"))


def test_param_partition_disjoint_and_exhaustive():
    model = build_branched(MLP, 1, 3, RngStream(6, "init"))
    shared, branches = param_partition(model)
    ids = [id(t) for t in shared] + [id(t) for b in branches for t in b]
    assert len(ids) == len(set(ids))
    assert set(ids) == {id(t) for t in model.params()}
    assert len(branches) == 3


def test_branches_start_from_independent_inits():
    model = build_branched(MLP, 1, 2, RngStream(7, "init"))
    w0 = model.branches[0][0].params["w"].data
    w1 = model.branches[1][0].params["w"].data
    assert not np.array_equal(w0, w1)


# ---------------------------------------------------------------------------
# forward_all
# ---------------------------------------------------------------------------

def _views(n, seed=0, batch=3):
    rng = np.random.default_rng(seed)
    return [rng.uniform(size=(batch, 64)).astype(np.float32) for _ in range(n)]


def test_forward_all_identical_branches_give_identical_rows():
    model = build_branched(MLP, 1, 3, RngStream(8, "init"))
    for b in model.branches[1:]:
        for src, dst in zip(model.branches[0], b):
            for pn in src.params:
                dst.params[pn].data = src.params[pn].data.copy()
    grid = forward_all(model, _views(3))
    for k in range(3):
        for i in range(1, 3):
            np.testing.assert_allclose(grid[i][k].data, grid[0][k].data,
                                       atol=1e-6)


def test_forward_all_n1_equals_plain_forward():
    model = build_branched(MLP, 1, 1, RngStream(9, "init"))
    x = _views(1)[0]
    grid = forward_all(model, [x])
    np.testing.assert_array_equal(grid[0][0].data,
                                  model.predict(Tensor(x), 0).data)


def test_forward_all_shared_prefix_runs_once_per_view():
    model = build_branched(MLP, 1, 3, RngStream(10, "init"))
    before = model.shared_eval_count
    forward_all(model, _views(3))
    assert model.shared_eval_count - before == 3  # N, not N*N


def test_forward_all_wrong_view_count():
    model = build_branched(MLP, 1, 2, RngStream(11, "init"))
    with pytest.raises(ContractError):
        forward_all(model, _views(3))


def test_forward_all_outputs_are_probabilities():
    model = build_branched(CNN, 1, 2, RngStream(12, "init"))
    x = np.random.default_rng(0).uniform(size=(2, 1, 16, 16)).astype(np.float32)
    grid = forward_all(model, [x, x])
    for row in grid:
        for cell in row:
            np.testing.assert_allclose(cell.data.sum(axis=1), 1.0, atol=1e-5)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def test_export_branch_matches_grid_row():
    model = build_branched(MLP, 1, 3, RngStream(13, "init"))
    views = _views(3, seed=5)
    grid = forward_all(model, views)
    for i in range(3):
        net = export_branch(model, i)
        out = net.predict(Tensor(views[0]), 0).data
        np.testing.assert_allclose(out, grid[i][0].data, atol=1e-6)


def test_export_branch_param_count():
    model = build_branched(MLP, 1, 3, RngStream(14, "init"))
    shared, branches = param_partition(model)
    net = export_branch(model, 1)
    expect = sum(t.size for t in shared) + sum(t.size for t in branches[1])
    assert net.param_count() == expect


def test_export_branch_is_a_copy():
    model = build_branched(MLP, 1, 2, RngStream(15, "init"))
    net = export_branch(model, 0)
    model.branches[0][0].params["w"].data += 1.0
    x = Tensor(_views(1)[0])
    assert not np.array_equal(net.predict(x, 0).data,
                              model.predict(x, 0).data)


def test_export_branch_index_range():
    model = build_branched(MLP, 1, 2, RngStream(16, "init"))
    with pytest.raises(ContractError):
        export_branch(model, 2)


# ---------------------------------------------------------------------------
# gradient flow through the branched topology
# ---------------------------------------------------------------------------

def test_shared_gradient_accumulates_across_branches():
    model = build_branched(MLP, 1, 2, RngStream(17, "init"))
    views = _views(2, seed=6, batch=2)
    labels = [np.eye(4, dtype=np.float32)[[0, 1]],
              np.eye(4, dtype=np.float32)[[2, 3]]]
    # beta = 0 keeps the objective free of stop-gradient (detached teacher)
    # terms, so finite differences and the tape measure the same derivative
    beta = BetaState(n=2, mode="fixed", fixed_value=0.0)

    def forward():
        grid = forward_all(model, [Tensor(v) for v in views])
        loss, _ = total_loss(labels, grid, beta)
        return loss

    model.zero_grads()
    with AdjointTape() as tape:
        backward(forward(), tape)
    shared, _ = param_partition(model)
    for p in shared:
        def fd_fn(arr, p=p):
            saved = p.data
            p.data = arr.astype(np.float32)
            try:
                return float(forward().data)
            finally:
                p.data = saved

        fd = finite_diff_grad(fd_fn, p, eps=1e-3)
        assert np.abs(p.grad - fd).max() / max(np.abs(fd).max(), 1e-6) < 2e-2


def test_branch_isolation_under_self_loss():
    # dropping branch 1's loss must not change branch 0's self-loss gradient
    from mdatrain.losses import self_loss
    from mdatrain.tensor import add

    def run(include_other):
        model = build_branched(MLP, 1, 2, RngStream(18, "init"))
        views = _views(2, seed=7, batch=2)
        labels = np.eye(4, dtype=np.float32)[[0, 1]]
        model.zero_grads()
        with AdjointTape() as tape:
            grid = forward_all(model, [Tensor(v) for v in views])
            loss = self_loss(labels, grid[0][0])
            if include_other:
                loss = add(loss, self_loss(labels, grid[1][1]))
            backward(loss, tape)
        return [t.grad.copy() for t in model.branches[0][0].params.values()]

    for a, b in zip(run(False), run(True)):
        np.testing.assert_array_equal(a, b)


def test_blockspec_json_roundtrip():
    d = CNN.to_json()
    back = BlockSpec.from_json(d)
    assert back == CNN
