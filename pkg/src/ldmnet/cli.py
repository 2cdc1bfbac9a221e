"""Command-line front end.

Subcommands: train, eval, bin-search, count-states, gen-data, grad-check,
dump-defaults.  Every subcommand accepts --dry-run, which validates the
configuration and prints the resolved settings without computing.

Exit codes: 0 for success (including a reported non-convergence), 1 for
usage or configuration errors, 2 for corrupt data or checkpoints.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import tasks
from .analysis import count_states, fit_exponential
from .autodiff import finite_difference_check
from .binning import BinSpec, find_bin_count
from .checkpoint import (CheckpointError, load_checkpoint, save_checkpoint)
from .config import (ConfigError, ExperimentConfig, default_config,
                     dump_config, load_config)
from .model import LdmModel, training_graph
from .training import (EvalReport, evaluate, samples_accuracy, train_run,
                       _baseline_loss_node)
import ldmnet.autodiff as ad

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for corruption
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    return cfg


def _parse_lengths(text: str) -> list[int]:
    try:
        lengths = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad length list: {text!r}") from None
    if not lengths:
        raise ConfigError("empty length list")
    return lengths


def _report_csv(report: EvalReport) -> str:
    lines = ["length,accuracy,binned,n_bins,samples,error"]
    for r in report.rows:
        acc = "" if r.accuracy is None else repr(r.accuracy)
        nb = "" if r.n_bins is None else str(r.n_bins)
        err = r.error or ""
        lines.append(f"{r.length},{acc},{str(r.binned).lower()},{nb},"
                     f"{r.samples},{err}")
    return "\n".join(lines) + "\n"


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _dry_run(cfg: ExperimentConfig) -> int:
    sys.stdout.write("# dry run: resolved settings\n")
    sys.stdout.write(dump_config(cfg))
    sys.stdout.write(f"# resolved mem_size = {cfg.train.resolved_mem_size()}\n")
    return 0


def _resolve_bins(ckpt, cfg, cap) -> int | None:
    """Stored bin count if the checkpoint has one, else a fresh search on a
    seeded validation set."""
    if ckpt.n_bins is not None:
        return ckpt.n_bins
    tc = cfg.train
    val = tasks.generate(tc.task, (tc.val_len, tc.val_len), 200,
                         seed=[tc.seed, 5])
    unbinned = samples_accuracy(ckpt.model, val)
    return find_bin_count(ckpt.model, val, unbinned, cap=cap)


# ---------------------------------------------------------------------------
# subcommands


def cmd_dump_defaults(args) -> int:
    _write_text(args.out, dump_config(default_config()))
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.dry_run:
        return _dry_run(cfg)
    tc = cfg.train
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    os.makedirs(cfg.log_dir, exist_ok=True)
    tag = f"{tc.task}_seed{tc.seed}"
    log_path = os.path.join(cfg.log_dir, f"train_{tag}.log")
    with open(log_path, "w", encoding="utf-8") as log_file:
        def tee(line):
            print(line)
            log_file.write(line + "\n")
        result = train_run(tc, log=tee)
    ckpt_path = os.path.join(cfg.checkpoint_dir, f"{tag}.ckpt.json")
    save_checkpoint(ckpt_path, result.model, cfg, result.steps,
                    n_bins=result.n_bins)
    csv_path = args.out or os.path.join(cfg.log_dir, f"eval_{tag}.csv")
    _write_text(csv_path, _report_csv(result.report))
    status = "converged" if result.converged else "did not converge"
    print(f"{status} after {result.steps} steps "
          f"(val_accuracy={result.final_val_accuracy:.4f}, "
          f"n_bins={result.n_bins}); checkpoint {ckpt_path}; report {csv_path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    tc = cfg.train
    lengths = _parse_lengths(args.lengths) if args.lengths else list(tc.test_lengths)
    count = args.count or tc.eval_count
    if args.dry_run:
        print(f"# dry run: eval {tc.task} at lengths {lengths}, "
              f"count {count}, binned={args.binned}")
        return 0
    spec = None
    if args.binned:
        n_bins = _resolve_bins(ckpt, cfg, cap=tc.bin_search_cap)
        if n_bins is None:
            print(f"no sufficient bin count <= {tc.bin_search_cap}; "
                  "requires digital loss", file=sys.stderr)
            return 0
        spec = BinSpec.for_sigmoid(n_bins)
    report = evaluate(ckpt.model, tc.task, lengths, count,
                      binned=args.binned, spec=spec, seed=tc.seed)
    _write_text(args.out, _report_csv(report))
    return 0


def cmd_bin_search(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    tc = ckpt.config.train
    cap = args.cap or tc.bin_search_cap
    if args.dry_run:
        print(f"# dry run: bin search for {tc.task}, cap {cap}")
        return 0
    val = tasks.generate(tc.task, (tc.val_len, tc.val_len), 200,
                         seed=[tc.seed, 5])
    unbinned = samples_accuracy(ckpt.model, val)
    n_bins = find_bin_count(ckpt.model, val, unbinned, cap=cap)
    if n_bins is None:
        print(f"no sufficient bin count <= {cap} "
              f"(unbinned accuracy {unbinned:.4f}); requires digital loss")
    else:
        print(f"n_bins = {n_bins} (unbinned accuracy {unbinned:.4f})")
    return 0


def cmd_count_states(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    tc = cfg.train
    lengths = _parse_lengths(args.lengths)
    if args.dry_run:
        print(f"# dry run: count states for {tc.task} at lengths {lengths}")
        return 0
    n_bins = _resolve_bins(ckpt, cfg, cap=tc.bin_search_cap)
    if n_bins is None:
        print(f"no sufficient bin count <= {tc.bin_search_cap}; "
              "requires digital loss", file=sys.stderr)
        return 0
    spec = BinSpec.for_sigmoid(n_bins)
    rows = ["length,plateau_count,samples_used,plateaued"]
    points = []
    for length in lengths:
        res = count_states(ckpt.model, spec, length, task=tc.task,
                           seed=tc.seed, sample_cap=args.sample_cap)
        rows.append(f"{res.length},{res.count},{res.samples_used},"
                    f"{str(res.plateaued).lower()}")
        points.append((res.length, res.count))
    _write_text(args.out, "\n".join(rows) + "\n")
    if len(points) < 3:
        print("# fit skipped: need at least 3 lengths")
        return 0
    fit = fit_exponential(points)
    r2 = "" if fit.r_squared is None else repr(fit.r_squared)
    fit_csv = ("a,b,r_squared,degenerate,points\n"
               f"{fit.a!r},{fit.b!r},{r2},{str(fit.degenerate).lower()},"
               f"{len(points)}\n")
    _write_text(args.fit_out, fit_csv)
    return 0


def cmd_gen_data(args) -> int:
    if args.task not in tasks.TASK_NAMES:
        print(f"unknown task {args.task!r}; valid tasks: "
              f"{', '.join(tasks.TASK_NAMES)}", file=sys.stderr)
        return 1
    if args.dry_run:
        print(f"# dry run: {args.count} {args.task} samples, lengths "
              f"[{args.min_len}, {args.max_len}], seed {args.seed}")
        return 0
    samples = tasks.generate(args.task, (args.min_len, args.max_len),
                             args.count, seed=args.seed)
    text = "".join(tasks.render_sample(s) + "\n" for s in samples)
    _write_text(args.out, text)
    return 0


def cmd_grad_check(args) -> int:
    cfg = _load(args)
    tc = cfg.train
    if args.dry_run:
        print(f"# dry run: gradient check, task {tc.task}, "
              f"length {tc.min_len}, step {args.step}")
        return 0
    model = LdmModel.create(tasks.input_dim(tc.task), tc.hidden_units,
                            tc.state_count, tc.resolved_mem_size(),
                            seed=[tc.seed, 0])

    # central differences are meaningless when a head sits on a cell
    # boundary (the floor kink); draw data until every position is clear
    from ldmnet.model import run as run_model
    inputs = targets = mask = None
    for attempt in range(64):
        batch = tasks.generate(tc.task, (tc.min_len, tc.min_len), 2,
                               seed=[tc.seed, 1, attempt])
        candidate = tasks.collate(batch)
        positions = run_model(model, candidate[0], trajectory=True).positions
        if np.abs(positions - np.round(positions)).min() > 1e-6:
            inputs, targets, mask = candidate
            if attempt:
                print(f"# skipped {attempt} draws with a head position on "
                      "a cell boundary")
            break
    if inputs is None:
        print("could not find a batch clear of cell boundaries; "
              "gradient check not meaningful here", file=sys.stderr)
        return 1

    def build_loss():
        tape = ad.Tape()
        result, leaves = training_graph(tape, model, inputs)
        return _baseline_loss_node(result.outputs, targets.T, mask), leaves

    report = finite_difference_check(model.params(), build_loss,
                                     step=args.step, rel_tol=args.tolerance)
    verdict = "PASS" if report.ok else "FAIL"
    print(f"{verdict}: max relative error {report.max_rel_error:.3e} over "
          f"{sum(p.size for p in model.params())} parameters "
          f"({len(report.failures)} above tolerance {args.tolerance:g})")
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="ldmnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, checkpoint=False):
        p.add_argument("--dry-run", action="store_true",
                       help="validate inputs and print resolved settings")
        if config:
            p.add_argument("--config", help="config file path")
            p.add_argument("--seed", type=int, help="override the config seed")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint file path")

    p = sub.add_parser("dump-defaults", help="emit the canonical config file")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_dump_defaults)

    p = sub.add_parser("train", help="train a model per the config")
    common(p, config=True)
    p.add_argument("--out", help="evaluation report CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over lengths")
    common(p, checkpoint=True)
    p.add_argument("--lengths", help="comma-separated lengths")
    p.add_argument("--count", type=int, help="samples per length")
    p.add_argument("--binned", action="store_true",
                   help="bin activations at inference (searches a bin "
                        "count first when the checkpoint has none)")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bin-search", help="search the smallest sufficient bin count")
    common(p, checkpoint=True)
    p.add_argument("--cap", type=int, help="largest bin count to try")
    p.set_defaults(func=cmd_bin_search)

    p = sub.add_parser("count-states",
                       help="plateaued distinct-state counts per length")
    common(p, checkpoint=True)
    p.add_argument("--lengths", required=True, help="comma-separated lengths")
    p.add_argument("--sample-cap", type=int, default=2 ** 18)
    p.add_argument("--out", help="counts CSV path (default stdout)")
    p.add_argument("--fit-out", help="exponential fit CSV path (default stdout)")
    p.set_defaults(func=cmd_count_states)

    p = sub.add_parser("gen-data", help="export a dataset file")
    p.add_argument("--task", required=True)
    p.add_argument("--min-len", type=int, required=True)
    p.add_argument("--max-len", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("grad-check",
                       help="compare analytic gradients with finite differences")
    common(p, config=True)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
