"""Command-line front end.

Subcommands: pretrain, posttrain, sample, transfer, eval, ablate, plot.
Exit codes: 0 success, 2 configuration/usage error, 3 divergence, 4 I/O error.
The only environment variable read is ARC_LAB_OUT (output-directory override).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DivergenceError
from .flowcore import euler_sample
from .harness import (
    ExperimentConfig,
    ablation_table,
    config_hash,
    default_out_root,
    evaluate_run,
    load_config,
    posttrain,
    pretrain,
)
from .nets import load_checkpoint
from .pingpong import make_schedule, pingpong_sample, style_transfer
from .plotting import plot_metrics
from .seeding import derive_rng
from .toydata import LabeledBatch, read_labeled_csv, write_labeled_csv

__all__ = ["build_parser", "parse_and_dispatch", "main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arclab",
        description="Adversarial relativistic-contrastive post-training lab for rectified flows.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("pretrain", help="train the velocity net with the flow loss")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", help="run directory (default under the output root)")

    p = sub.add_parser("posttrain", help="adversarial post-training from a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--init", required=True, help="pretrained velocity checkpoint")
    p.add_argument("--variant", default="arc",
                   choices=("arc", "no_contrastive", "least_squares"))
    p.add_argument("--out")

    p = sub.add_parser("sample", help="generate samples from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sampler", default="pingpong", choices=("pingpong", "euler"))
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--prompt", type=int, required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--init-from", dest="init_from",
                   help="CSV of reference samples: start from them noised to --tau-start")
    p.add_argument("--tau-start", dest="tau_start", type=float,
                   help="noise level for --init-from (in (0, 1])")
    p.add_argument("--config", help="optional config for noise-level ranges")

    p = sub.add_parser("transfer", help="style transfer: sample from a noised reference")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--init-from", dest="init_from", required=True)
    p.add_argument("--tau-start", dest="tau_start", type=float, required=True)
    p.add_argument("--prompt", type=int, required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("eval", help="compute the full metric set for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--sampler", help="euler_N or pingpong_N (default from checkpoint role)")
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="run the full configuration table")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1, help="parallel evaluation workers")

    p = sub.add_parser("plot", help="render metric bar charts and sample scatters")
    p.add_argument("--metrics", required=True, help="metrics CSV")
    p.add_argument("--out", required=True, help="directory for SVG output")
    p.add_argument("--samples", help="sample-dump directory (default: sibling samples/)")
    return parser


def _run_dir(args, cfg, phase) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return default_out_root() / f"{phase}_{config_hash(cfg)[:8]}_s{cfg.master_seed}"


def _load_cfg_opt(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return ExperimentConfig()


def _cmd_pretrain(args):
    cfg = load_config(args.config)
    result = pretrain(cfg, _run_dir(args, cfg, "pretrain"))
    print(result.final_path)
    return 0


def _cmd_posttrain(args):
    cfg = load_config(args.config)
    result = posttrain(cfg, args.init, args.variant, _run_dir(args, cfg, f"posttrain-{args.variant}"))
    print(result.generator_path)
    return 0


def _load_references(path, n, d):
    batch = read_labeled_csv(path)
    if batch.samples.shape[1] != d:
        raise ConfigError(f"{path}: reference dimension {batch.samples.shape[1]} != model dimension {d}")
    idx = np.arange(n) % len(batch)
    return batch.samples[idx]


def _cmd_sample(args):
    cfg = _load_cfg_opt(args)
    net, _ = load_checkpoint(args.ckpt)
    if not 0 <= args.prompt < net.topology.K:
        raise ConfigError(f"--prompt must lie in [0, {net.topology.K})")
    if args.steps < 1:
        raise ConfigError("--steps must be >= 1")
    if (args.init_from is None) != (getattr(args, "tau_start", None) is None):
        raise ConfigError("--init-from and --tau-start must be given together")
    prompts = np.full(args.n, args.prompt, dtype=int)
    rng = derive_rng(args.seed, "sample", args.sampler, args.steps, args.prompt)
    if args.sampler == "euler":
        if args.init_from:
            raise ConfigError("--init-from requires the pingpong sampler")
        x_start = rng.standard_normal((args.n, net.topology.d))
        samples = euler_sample(net, x_start, prompts, args.steps,
                               grid=cfg.eval.euler_grid)
    else:
        schedule = make_schedule(args.steps, cfg.loss.gen_range(),
                                 grid=cfg.eval.schedule_grid)
        if args.init_from:
            refs = _load_references(args.init_from, args.n, net.topology.d)
            samples = style_transfer(net, schedule, prompts, refs, args.tau_start, rng)
        else:
            samples = pingpong_sample(net, schedule, prompts, rng)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.sampler}{args.steps}_p{args.prompt}_s{args.seed}.csv"
    write_labeled_csv(path, LabeledBatch(samples, prompts), label_column="prompt_id",
                      extra_columns={"seed": [args.seed] * args.n})
    print(path)
    return 0


def _cmd_transfer(args):
    args.sampler = "pingpong"
    args.init_from = args.init_from or None
    return _cmd_sample(args)


def _cmd_eval(args):
    cfg = load_config(args.config)
    _, meta = load_checkpoint(args.ckpt)
    sampler = args.sampler
    if sampler is None:
        if meta.get("role") == "generator":
            sampler = f"pingpong_{cfg.eval.steps_few}"
        else:
            sampler = f"euler_{cfg.eval.steps_full}"
    report = evaluate_run(args.ckpt, cfg, sampler, _run_dir(args, cfg, "eval"))
    print(report.to_json())
    return 0


def _cmd_ablate(args):
    cfg = load_config(args.config)
    run_dir = _run_dir(args, cfg, "ablate")
    ablation_table(cfg, run_dir, jobs=args.jobs)
    print(run_dir / "metrics.csv")
    return 0


def _cmd_plot(args):
    written = plot_metrics(args.metrics, args.out, samples_dir=args.samples)
    for path in written:
        print(path)
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "posttrain": _cmd_posttrain,
    "sample": _cmd_sample,
    "transfer": _cmd_transfer,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "plot": _cmd_plot,
}


def parse_and_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage/--help/--version itself
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"arclab: config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"arclab: divergence: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"arclab: i/o error: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
