"""Training loops: the multi-view branched method plus the baselines.

All loops share one engine. Per step it builds one augmented view per
branch, runs the N x N prediction grid, minimises the summed per-branch
loss, and advances the beta schedule from the per-branch batch fits.
Single-DA and the two baseline policies are the N = 1 special case with a
different view constructor, which is what makes the N = 1 degeneracy of the
multi-view method exactly (bit-for-bit) equal to single-DA training.

Randomness is addressed, never sequential: shuffling is keyed by
(seed, epoch), augmentation by (seed, epoch, batch, view-slot), so runs are
reproducible and parallelisable per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import augment as A
from .augment import AugmentConfig
from .data import Dataset
from .errors import ContractError
from .losses import BetaState, fit_measure, total_loss
from .model import BlockSpec, BranchedModel, build_branched, forward_all
from .optim import SgdState, cosine_lr, sgd_step
from .rng import RngStream
from .tensor import AdjointTape, Tensor, backward, softmax

METHODS = ("ours", "single", "baseline1", "baseline2", "noda")


@dataclass
class TrainConfig:
    model_spec: BlockSpec
    method: str = "ours"
    single_da: str = "randaugment"          # for method="single"
    da_set: tuple = ("randaugment", "mixup", "cutmix")
    split_index: int = 1
    epochs: int = 10
    batch_size: int = 128
    base_lr: float = 0.05
    weight_decay: float = 5e-4
    momentum: float = 0.9                   # optimizer Nesterov momentum
    beta_mode: str = "adaptive"             # adaptive | fixed | linear
    beta_fixed: float = 0.0
    beta_momentum: float = 0.9              # m of the beta scheduler
    seed_init: int = 1
    seed_augment: int = 2
    seed_shuffle: int = 3
    fair_budget: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    drop_direct: bool = False
    drop_kd: bool = False
    drop_mutual: bool = False
    eval_every: int = 1                     # epoch records with accuracy; 0 = final only
    track_samples: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method: {self.method!r}")
        if self.method == "ours" and not self.da_set:
            raise ContractError("method 'ours' needs a non-empty da_set")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be positive")

    def resolve_beta_mode(self):
        """Ablation endpoints are beta endpoints: drop_kd pins beta to 0
        (pure direct loss), drop_direct pins beta to 1 (pure KD)."""
        if self.drop_kd and self.drop_direct:
            raise ContractError("cannot drop both mutual-loss terms; "
                                "use drop_mutual instead")
        if self.drop_kd:
            return "fixed", 0.0
        if self.drop_direct:
            return "fixed", 1.0
        return self.beta_mode, self.beta_fixed


@dataclass
class RunMetrics:
    """Per-epoch records plus whole-run counters."""

    records: list = field(default_factory=list)
    lr_steps: list = field(default_factory=list)
    final_test_acc: list = field(default_factory=list)
    da_choice_counts: dict = field(default_factory=dict)
    augmented_samples: int = 0
    steps_run: int = 0
    base_steps: int = 0
    beta_start: list = field(default_factory=list)
    consumed_ids: set = field(default_factory=set)


def budget_steps(base_steps: int, n: int, fair: bool) -> int:
    """Fair compute budget: divide the step count by the number of views."""
    if not base_steps >= n >= 1:
        raise ContractError(f"need base_steps >= n >= 1, got {base_steps}, {n}")
    return base_steps // n if fair else base_steps


# ---------------------------------------------------------------------------
# view construction
# ---------------------------------------------------------------------------

def _aug_stream(cfg: TrainConfig, tag: str, epoch: int, pos: int, slot: int = 0):
    return RngStream(cfg.seed_augment, tag, epoch, pos, slot)


def _augment_one(cfg: TrainConfig, name: str, x, y, epoch, pos, slot):
    """One named DA applied to a whole batch, on the slot's own streams."""
    aug = cfg.augment
    rng = _aug_stream(cfg, "aug", epoch, pos, slot)
    if name == "identity":
        return x, y
    if name == "randaugment":
        return A.randaugment_batch(x, aug.ra_num_ops, aug.ra_magnitude, rng), y
    perm = _aug_stream(cfg, "mixpartner", epoch, pos, slot).permutation(len(x))
    if name == "mixup":
        return A.mixup_batch(x, y, perm, aug.mixup_alpha, rng)
    if name == "cutmix":
        return A.cutmix_batch(x, y, perm, aug.cutmix_alpha, rng)
    raise ContractError(f"unknown DA method: {name!r}")


def _make_views(cfg: TrainConfig, x, y, epoch, pos, metrics: RunMetrics):
    if cfg.method == "ours":
        return [_augment_one(cfg, name, x, y, epoch, pos, i)
                for i, name in enumerate(cfg.da_set)]
    if cfg.method == "single":
        return [_augment_one(cfg, cfg.single_da, x, y, epoch, pos, 0)]
    if cfg.method == "noda":
        return [(x, y)]
    if cfg.method == "baseline1":
        outs = [_augment_one(cfg, name, x, y, epoch, pos, i)
                for i, name in enumerate(cfg.da_set)]
        choices = _aug_stream(cfg, "b1choice", epoch, pos).integers(
            0, len(cfg.da_set), size=len(x))
        xa = np.empty_like(x)
        ya = np.empty_like(y)
        for gi, name in enumerate(cfg.da_set):
            sel = choices == gi
            xa[sel] = outs[gi][0][sel]
            ya[sel] = outs[gi][1][sel]
            metrics.da_choice_counts[name] = (
                metrics.da_choice_counts.get(name, 0) + int(sel.sum()))
        return [(xa, ya)]
    # baseline2: randaugment both sides, then mixup/cutmix 50/50 per sample
    aug = cfg.augment
    xr = A.randaugment_batch(x, aug.ra_num_ops, aug.ra_magnitude,
                             _aug_stream(cfg, "aug", epoch, pos, 0))
    perm = _aug_stream(cfg, "mixpartner", epoch, pos, 0).permutation(len(x))
    pr = A.randaugment_batch(x[perm], aug.ra_num_ops, aug.ra_magnitude,
                             _aug_stream(cfg, "b2partner", epoch, pos))
    xm, ym = A.mixup_pair(xr, y, pr, y[perm], aug.mixup_alpha,
                          _aug_stream(cfg, "b2mixup", epoch, pos))
    xc, yc = A.cutmix_pair(xr, y, pr, y[perm], aug.cutmix_alpha,
                           _aug_stream(cfg, "b2cutmix", epoch, pos))
    coin = _aug_stream(cfg, "b2choice", epoch, pos).uniform(size=len(x)) < 0.5
    xa = np.where(coin.reshape(-1, 1, 1, 1), xm, xc)
    ya = np.where(coin.reshape(-1, 1), ym, yc)
    metrics.da_choice_counts["mixup"] = (
        metrics.da_choice_counts.get("mixup", 0) + int(coin.sum()))
    metrics.da_choice_counts["cutmix"] = (
        metrics.da_choice_counts.get("cutmix", 0) + int((~coin).sum()))
    return [(xa, ya)]


# ---------------------------------------------------------------------------
# the engine
# ---------------------------------------------------------------------------

def _train_engine(cfg: TrainConfig, train_set: Dataset, eval_set: Dataset | None):
    n = len(cfg.da_set) if cfg.method == "ours" else 1
    spe = len(train_set) // cfg.batch_size
    if spe < 1:
        raise ContractError("dataset smaller than one batch")
    base_steps = cfg.epochs * spe
    fair = cfg.fair_budget and cfg.method == "ours"
    steps = budget_steps(base_steps, n, fair)

    model = build_branched(cfg.model_spec, cfg.split_index, n,
                           RngStream(cfg.seed_init, "init"))
    params = model.params()
    mode, fixed = cfg.resolve_beta_mode()
    beta = BetaState(n=n, momentum=cfg.beta_momentum, mode=mode,
                     fixed_value=fixed, total_steps=steps)
    opt = SgdState(params, base_lr=cfg.base_lr, total_steps=steps,
                   momentum_mu=cfg.momentum, weight_decay=cfg.weight_decay)
    metrics = RunMetrics(base_steps=base_steps,
                         beta_start=[float(b) for b in beta.beta])

    order = None
    acc_loss = 0.0
    acc_branch = [dict(self=0.0, mutual=0.0, total=0.0) for _ in range(n)]
    acc_count = 0
    for step in range(steps):
        epoch, pos = divmod(step, spe)
        if pos == 0:
            order = RngStream(cfg.seed_shuffle, "shuffle", epoch).permutation(
                len(train_set))
        idx = order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]
        bx = train_set.images[idx]
        by = train_set.labels[idx]
        if cfg.augment.base_preprocess:
            bx = A.base_preprocess_batch(bx, _aug_stream(cfg, "basepre", epoch, pos))
        if cfg.track_samples:
            metrics.consumed_ids.update(map(int, train_set.ids[idx]))

        views = _make_views(cfg, bx, by, epoch, pos, metrics)
        model.zero_grads()
        with AdjointTape() as tape:
            grid = forward_all(model, [Tensor(vx) for vx, _ in views])
            loss, breakdown = total_loss([vy for _, vy in views], grid, beta,
                                         include_mutual=not cfg.drop_mutual)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise FloatingPointError(
                    f"non-finite loss {lval} at step {step} (epoch {epoch}, "
                    f"batch {pos}); aborting run")
            backward(loss, tape)
        sgd_step(params, opt)
        fits = [fit_measure(views[k][1], grid[k][k].data) for k in range(n)]
        beta.on_batch_end(fits)

        metrics.lr_steps.append(cosine_lr(step, steps, cfg.base_lr))
        metrics.augmented_samples += len(bx) * n
        metrics.steps_run += 1
        acc_loss += lval
        for i in range(n):
            for key in acc_branch[i]:
                acc_branch[i][key] += breakdown[i][key]
        acc_count += 1

        last = step == steps - 1
        if pos == spe - 1 or last:
            rec = {"epoch": epoch, "step": step + 1,
                   "lr": metrics.lr_steps[-1],
                   "loss": acc_loss / acc_count,
                   "branches": [{k: v / acc_count for k, v in d.items()}
                                for d in acc_branch],
                   "beta": [float(b) for b in beta.beta]}
            want_eval = eval_set is not None and (
                last or (cfg.eval_every and (epoch + 1) % cfg.eval_every == 0))
            if want_eval:
                rec["test_acc"] = evaluate_branches(model, eval_set)
            metrics.records.append(rec)
            acc_loss = 0.0
            acc_branch = [dict(self=0.0, mutual=0.0, total=0.0) for _ in range(n)]
            acc_count = 0
    if eval_set is not None:
        metrics.final_test_acc = (metrics.records[-1].get("test_acc")
                                  or evaluate_branches(model, eval_set))
    return model, beta, metrics


def train_ours(config: TrainConfig, train_set: Dataset,
               eval_set: Dataset | None = None):
    """The multi-view branched method; returns (model, beta state, metrics)."""
    cfg = replace(config, method="ours")
    return _train_engine(cfg, train_set, eval_set)


def train_single(config: TrainConfig, train_set: Dataset,
                 eval_set: Dataset | None = None):
    """Plain training with one DA (or none); returns (network, metrics)."""
    if config.method not in ("single", "noda"):
        config = replace(config, method="single")
    model, _, metrics = _train_engine(config, train_set, eval_set)
    return model, metrics


def train_baseline1(config: TrainConfig, train_set: Dataset,
                    eval_set: Dataset | None = None):
    """Uniformly chosen DA per sample (parallel multi-DA baseline)."""
    cfg = replace(config, method="baseline1")
    model, _, metrics = _train_engine(cfg, train_set, eval_set)
    return model, metrics


def train_baseline2(config: TrainConfig, train_set: Dataset,
                    eval_set: Dataset | None = None):
    """RandAugment followed by a mixing DA (sequential multi-DA baseline)."""
    cfg = replace(config, method="baseline2")
    model, _, metrics = _train_engine(cfg, train_set, eval_set)
    return model, metrics


def train(config: TrainConfig, train_set: Dataset,
          eval_set: Dataset | None = None):
    """Dispatch on config.method; always returns (model, beta, metrics)."""
    return _train_engine(config, train_set, eval_set)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(network: BranchedModel, dataset: Dataset, branch: int = 0,
             batch: int = 512) -> float:
    """Top-1 accuracy on clean data; argmax ties go to the lower class."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    hits = 0
    for s in range(0, len(dataset), batch):
        x = Tensor(dataset.images[s:s + batch])
        pred = network.predict(x, branch).data
        hits += int((pred.argmax(axis=1) ==
                     dataset.labels[s:s + batch].argmax(axis=1)).sum())
    return hits / len(dataset)


def evaluate_branches(model: BranchedModel, dataset: Dataset,
                      batch: int = 512) -> list:
    """Per-branch top-1 accuracy with one shared-prefix pass per batch."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    hits = [0] * model.n
    for s in range(0, len(dataset), batch):
        x = Tensor(dataset.images[s:s + batch])
        truth = dataset.labels[s:s + batch].argmax(axis=1)
        h = model.forward_shared(x)
        for i in range(model.n):
            pred = softmax(model.forward_branch(i, h)).data
            hits[i] += int((pred.argmax(axis=1) == truth).sum())
    return [hh / len(dataset) for hh in hits]
