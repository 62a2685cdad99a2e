"""Validation-based branch selection.

The training data is split 80/20 once; the branched model is trained R times
on the 80% slice with derived seeds, each branch is scored on the 20%
validation slice, and the branch with the best mean validation accuracy is
selected. The model is then retrained on the full set and the selected
branch is exported as the inference network.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import ContractError
from .model import BranchedModel, export_branch
from .rng import RngStream
from .trainer import RunMetrics, TrainConfig, evaluate_branches, train_ours


@dataclass
class SelectionReport:
    val_acc: list            # R x N validation accuracies
    means: list              # per-branch column means
    selected: int            # argmax of means, lowest index on ties
    tie: bool

    def to_json(self) -> dict:
        return {"val_acc": self.val_acc, "means": self.means,
                "selected": self.selected, "tie": self.tie}


def split_train_val(dataset: Dataset, fraction: float, seed: int):
    """Seeded permutation split: first floor(fraction*n) samples train."""
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"fraction must be in (0,1), got {fraction}")
    if len(dataset) == 0:
        raise ContractError("cannot split an empty dataset")
    perm = RngStream(seed, "trainval").permutation(len(dataset))
    cut = int(fraction * len(dataset))
    return dataset.subset(perm[:cut]), dataset.subset(perm[cut:])


def select_branch(val_acc) -> SelectionReport:
    """Column means over runs; argmax with lowest-index tie-breaking."""
    rows = [list(map(float, r)) for r in val_acc]
    if not rows:
        raise ContractError("need at least one run of validation accuracies")
    n = len(rows[0])
    if n < 1 or any(len(r) != n for r in rows):
        raise ContractError("validation accuracy matrix is ragged")
    cols = np.array(rows, dtype=np.float64)
    means = cols.mean(axis=0)
    best = int(np.argmax(means))   # argmax takes the lowest tied index
    tie = bool((means == means[best]).sum() > 1)
    return SelectionReport(val_acc=rows, means=[float(m) for m in means],
                           selected=best, tie=tie)


def selection_protocol(config: TrainConfig, dataset: Dataset, runs: int,
                       fraction: float = 0.8, split_seed: int | None = None):
    """Full protocol; returns (inference network, report, final metrics).

    The R selection runs share one split and differ only in derived seeds;
    the final model is trained on the whole dataset with the base seeds.
    """
    if runs < 1:
        raise ContractError("need at least one selection run")
    if config.method != "ours":
        raise ContractError("branch selection applies to method 'ours'")
    seed = config.seed_shuffle if split_seed is None else split_seed
    train_part, val_part = split_train_val(dataset, fraction, seed)
    val_rows = []
    for r in range(runs):
        run_cfg = replace(
            config,
            seed_init=int(RngStream(config.seed_init, "selrun", r).integers(2**31)),
            seed_augment=int(RngStream(config.seed_augment, "selrun", r).integers(2**31)),
            seed_shuffle=int(RngStream(config.seed_shuffle, "selrun", r).integers(2**31)))
        model, _, _ = train_ours(run_cfg, train_part)
        val_rows.append(evaluate_branches(model, val_part))
    report = select_branch(val_rows)
    final_model, _, final_metrics = train_ours(config, dataset)
    network = export_branch(final_model, report.selected)
    return network, report, final_metrics
