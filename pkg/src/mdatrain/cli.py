"""Command-line surface.

Subcommands: train, eval, select, augment-preview, gradcheck, report.
Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
from dataclasses import replace

from .augment import LabeledImage, baseline1_augment, baseline2_augment
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_datasets, load_experiment
from .errors import ContractError, FormatError, SizeError
from .gradcheck import run_gradcheck
from .rng import RngStream
from .selection import selection_protocol
from .trainer import evaluate_branches, train
from ._runlock import run_lock


def _method_override(cfg, method_arg):
    if method_arg is None:
        return cfg
    if method_arg.startswith("single:"):
        return replace(cfg, method="single", single_da=method_arg.split(":", 1)[1])
    return replace(cfg, method=method_arg)


def _write_metrics(run_dir, metrics):
    with open(os.path.join(run_dir, "metrics.jsonl"), "w") as f:
        for rec in metrics.records:
            f.write(json.dumps(rec) + "\n")


def _summary(cfg, metrics):
    return {
        "method": cfg.method if cfg.method != "single" else f"single:{cfg.single_da}",
        "beta_mode": cfg.beta_mode,
        "seeds": {"init": cfg.seed_init, "augment": cfg.seed_augment,
                  "shuffle": cfg.seed_shuffle},
        "steps_run": metrics.steps_run,
        "base_steps": metrics.base_steps,
        "augmented_samples": metrics.augmented_samples,
        "da_choice_counts": metrics.da_choice_counts,
        "final_test_acc": metrics.final_test_acc,
        "best_test_acc": max(metrics.final_test_acc) if metrics.final_test_acc else None,
        "beta_start": metrics.beta_start,
        "beta_final": metrics.records[-1]["beta"] if metrics.records else None,
    }


def cmd_train(args) -> int:
    ec = load_experiment(args.config)
    cfg = _method_override(ec.train_cfg, args.method)
    train_set, test_set = load_datasets(ec)
    run_dir = args.out or ec.output_dir
    os.makedirs(run_dir, exist_ok=True)
    with run_lock(run_dir):
        model, _, metrics = train(cfg, train_set, test_set)
        _write_metrics(run_dir, metrics)
        save_checkpoint(model, os.path.join(run_dir, "final.mdac"))
        summary = _summary(cfg, metrics)
        with open(os.path.join(run_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2)
    print(f"run complete: {run_dir}")
    print(f"final per-branch test accuracy: {metrics.final_test_acc}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    ec = load_experiment(args.data)
    _, test_set = load_datasets(ec)
    accs = evaluate_branches(model, test_set)
    for i, a in enumerate(accs):
        print(f"branch {i}: accuracy {a:.4f}")
    print(f"best: {max(accs):.4f}")
    return 0


def cmd_select(args) -> int:
    ec = load_experiment(args.config)
    cfg = replace(ec.train_cfg, method="ours")
    dataset, test_set = load_datasets(ec)
    runs = args.runs or int(ec.protocol["runs"])
    run_dir = ec.output_dir
    os.makedirs(run_dir, exist_ok=True)
    with run_lock(run_dir):
        network, report, metrics = selection_protocol(
            cfg, dataset, runs, fraction=float(ec.protocol["split_fraction"]))
        save_checkpoint(network, os.path.join(run_dir, "selected.mdac"))
        with open(os.path.join(run_dir, "selection.json"), "w") as f:
            json.dump(report.to_json(), f, indent=2)
        _write_metrics(run_dir, metrics)
    test_acc = evaluate_branches(network, test_set)[0]
    print(f"selected branch {report.selected} "
          f"(validation means {['%.4f' % m for m in report.means]})")
    print(f"test accuracy of exported network: {test_acc:.4f}")
    return 0


def cmd_augment_preview(args) -> int:
    ec = load_experiment(args.config)
    train_set, _ = load_datasets(ec)
    os.makedirs(args.out, exist_ok=True)
    aug = ec.train_cfg.augment
    sidecar = []
    count = min(args.count, len(train_set) - 1)
    for j in range(count):
        img = LabeledImage(train_set.images[j], train_set.labels[j])
        partner = LabeledImage(train_set.images[j + 1], train_set.labels[j + 1])
        for policy, fn in (("baseline1", baseline1_augment),
                           ("baseline2", baseline2_augment)):
            out = fn(img, partner, aug, RngStream(ec.train_cfg.seed_augment,
                                                  "preview", policy, j))
            fname = f"{policy}_{j:04d}.bin"
            out.pixels.astype("<f4").tofile(os.path.join(args.out, fname))
            sidecar.append({"file": fname, "policy": policy,
                            "shape": list(out.pixels.shape),
                            "label": [float(v) for v in out.label]})
    with open(os.path.join(args.out, "preview.json"), "w") as f:
        json.dump(sidecar, f, indent=2)
    print(f"wrote {len(sidecar)} augmented samples to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(f64=args.f64)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  err={r.error:.3e}  tol={r.tolerance:.0e}  {status}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 0 if failed == 0 else 2


def cmd_report(args) -> int:
    groups: dict[str, list] = {}
    for d in args.runs:
        path = os.path.join(d, "summary.json")
        if not os.path.exists(path):
            raise FormatError(f"no summary.json in run directory {d}")
        with open(path) as f:
            s = json.load(f)
        if s.get("best_test_acc") is None:
            raise FormatError(f"{path}: run has no recorded test accuracy")
        groups.setdefault(s["method"], []).append(float(s["best_test_acc"]))
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "runs", "mean_acc", "std_acc"])
        for method in sorted(groups):
            accs = groups[method]
            std = statistics.stdev(accs) if len(accs) > 1 else 0.0
            w.writerow([method, len(accs), f"{statistics.mean(accs):.6f}",
                        f"{std:.6f}"])
    print(f"wrote {args.out} ({sum(len(v) for v in groups.values())} runs, "
          f"{len(groups)} methods)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdatrain",
                                description="multi-DA branched training toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--method", type=str, default=None,
                   help="ours | single:NAME | baseline1 | baseline2 | noda")
    t.add_argument("--out", default=None, help="override output directory")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True,
                   help="config file whose [data] section defines the test set")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("select", help="run the branch-selection protocol")
    s.add_argument("--config", required=True)
    s.add_argument("--runs", type=int, default=None)
    s.set_defaults(fn=cmd_select)

    a = sub.add_parser("augment-preview", help="dump augmented samples")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--count", type=int, default=8)
    a.set_defaults(fn=cmd_augment_preview)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--f64", action="store_true")
    g.set_defaults(fn=cmd_gradcheck)

    r = sub.add_parser("report", help="aggregate runs into a CSV table")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    # argparse's "single:NAME" values bypass the choices list
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    try:
        return args.fn(args)
    except (FormatError, ContractError, SizeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
