"""End-to-end experiment driver: flow pretraining, adversarial post-training
with its ablation variants, metric evaluation, and reproducible run management.

Seed discipline: the master seed names every random stream through
`arclab.seeding.derive_rng(master, *labels)`, so phases are independent and
changing the evaluation protocol never perturbs training draws.  Runs write a
manifest before work starts and finalize it on exit, aborts included.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import statistics
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .arcloss import ArcOptimizer, LossConfig, arc_step, generator_half_step, rf_loss
from .errors import ConfigError, DivergenceError
from .evalkit import (
    MetricReport,
    MixtureModeClassifier,
    adherence_score,
    ccds,
    classifier_embedding,
    coverage,
    frechet_distance,
    identity_embedding,
    recall,
    sliced_wasserstein,
)
from .flowcore import LogitNormalSpec, LogSnrRange, euler_sample
from .nets import Topology, VelocityNet, init_from_pretrained, load_checkpoint, save_checkpoint
from .optim import AdamW
from .pingpong import make_schedule, pingpong_sample
from .seeding import derive_rng
from .toydata import LabeledBatch, balanced_eval_batch, draw_labeled_batch, ring_spec, write_labeled_csv

log = logging.getLogger("arclab")

__all__ = [
    "DataConfig", "NetConfig", "LossSettings", "TrainConfig", "EvalConfig",
    "ExperimentConfig", "load_config", "save_config", "config_hash",
    "pretrain", "posttrain", "evaluate", "ablation_table",
    "PretrainResult", "PosttrainResult", "parse_sampler", "default_out_root",
    "VARIANTS",
]

VARIANTS = ("arc", "no_contrastive", "least_squares")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class DataConfig:
    K: int = 4
    d: int = 2
    modes_per_class: int = 2
    ring_radius: float = 4.0
    mode_std: float = 0.25

    def build_spec(self):
        return ring_spec(self.K, self.d, self.modes_per_class, self.ring_radius, self.mode_std)


@dataclass(frozen=True)
class NetConfig:
    width: int = 128
    hidden: int = 6
    embed_dim: int = 16
    time_freqs: int = 16
    head_blocks: int = 4

    def topology(self, data: DataConfig) -> Topology:
        return Topology(d=data.d, K=data.K, width=self.width, hidden=self.hidden,
                        embed_dim=self.embed_dim, time_freqs=self.time_freqs,
                        head_blocks=self.head_blocks)


@dataclass(frozen=True)
class LossSettings:
    lambda_c: float = 1.0
    gen_logsnr_lo: float = -6.0
    gen_logsnr_hi: float = 2.0
    disc_mean: float = 0.0
    disc_std: float = 1.0
    disc_shift: float = 0.5
    adversarial_kind: str = "relativistic"
    derangement: bool = True

    def gen_range(self) -> LogSnrRange:
        return LogSnrRange(self.gen_logsnr_lo, self.gen_logsnr_hi)

    def loss_config(self, lambda_c=None, adversarial_kind=None) -> LossConfig:
        return LossConfig(
            lambda_c=self.lambda_c if lambda_c is None else lambda_c,
            gen_range=self.gen_range(),
            disc_spec=LogitNormalSpec(self.disc_mean, self.disc_std, self.disc_shift),
            adversarial_kind=adversarial_kind or self.adversarial_kind,
            derangement=self.derangement,
        )


@dataclass(frozen=True)
class TrainConfig:
    pretrain_iters: int = 20000
    posttrain_iters: int = 5000
    batch_size: int = 128
    pretrain_lr: float = 1e-3
    gen_lr: float = 1e-4
    disc_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    gen_adam_eps: float = 1e-8
    disc_adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    # pretraining covers the full noise range so the sampling ODE is learned
    # everywhere; post-training keeps the narrower inference-aligned window
    pretrain_logsnr_lo: float = -10.0
    pretrain_logsnr_hi: float = 10.0
    update_order: str = "gd"
    g_steps_per_d: int = 1
    log_every: int = 1000

    def __post_init__(self):
        if self.pretrain_iters < 0 or self.posttrain_iters < 0:
            raise ConfigError("iteration counts must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if min(self.pretrain_lr, self.gen_lr, self.disc_lr) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.update_order not in ("gd", "dg"):
            raise ConfigError("update_order must be 'gd' or 'dg'")
        if self.g_steps_per_d < 1:
            raise ConfigError("g_steps_per_d must be >= 1")

    def pretrain_range(self) -> LogSnrRange:
        return LogSnrRange(self.pretrain_logsnr_lo, self.pretrain_logsnr_hi)


@dataclass(frozen=True)
class EvalConfig:
    n_eval: int = 4096
    knn_k: int = 5
    ccds_group_size: int = 24
    sw_projections: int = 128
    timing_runs: int = 0
    steps_full: int = 50
    steps_few: int = 8
    steps_mid: int = 4
    steps_one: int = 1
    euler_grid: str = "uniform_t"
    schedule_grid: str = "logsnr"

    def __post_init__(self):
        if self.n_eval < 2 or self.ccds_group_size < 2:
            raise ConfigError("evaluation sample counts must be >= 2")
        if min(self.steps_full, self.steps_few, self.steps_mid, self.steps_one) < 1:
            raise ConfigError("step counts must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    net: NetConfig = NetConfig()
    loss: LossSettings = LossSettings()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    master_seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _strict_build(cls, data, sections={
            "data": DataConfig, "net": NetConfig, "loss": LossSettings,
            "train": TrainConfig, "eval": EvalConfig,
        })


def _strict_build(cls, data, sections=None):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {cls.__name__}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = (sections or {}).get(key)
        kwargs[key] = _strict_build(sub, value) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def save_config(path, cfg: ExperimentConfig):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def default_out_root(env=None) -> Path:
    import os

    value = (env or os.environ).get("ARC_LAB_OUT")
    return Path(value) if value else Path("runs")


# ---------------------------------------------------------------------------
# run management

def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


class RunManifest:
    """Mutable run record, flushed to manifest.json on every update."""

    def __init__(self, run_dir: Path, cfg: ExperimentConfig, phase: str):
        self.path = Path(run_dir) / "manifest.json"
        self.record = {
            "phase": phase,
            "config_hash": config_hash(cfg),
            "code_version": __version__,
            "master_seed": cfg.master_seed,
            "seed_streams": {},
            "checkpoints": {},
            "metrics": {},
            "status": "running",
            "started_at": _utc_now(),
            "finished_at": None,
        }
        self.flush()

    def note_stream(self, name, *labels):
        self.record["seed_streams"][name] = list(str(l) for l in labels)
        self.flush()

    def add_checkpoint(self, name, path):
        self.record["checkpoints"][name] = str(path)
        self.flush()

    def add_metrics(self, name, path):
        self.record["metrics"][name] = str(path)
        self.flush()

    def finalize(self, status):
        self.record["status"] = status
        self.record["finished_at"] = _utc_now()
        self.flush()

    def flush(self):
        with open(self.path, "w") as fh:
            json.dump(self.record, fh, indent=2)
            fh.write("\n")


def _prepare_run_dir(run_dir, cfg: ExperimentConfig, phase: str) -> RunManifest:
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "samples").mkdir(exist_ok=True)
    (run_dir / "plots").mkdir(exist_ok=True)
    save_config(run_dir / "config.json", cfg)
    return RunManifest(run_dir, cfg, phase)


# ---------------------------------------------------------------------------
# training phases

@dataclass
class PretrainResult:
    final_path: Path
    best_path: Path
    loss_first: float
    loss_final: float
    history: list = field(default_factory=list)


def pretrain(cfg: ExperimentConfig, run_dir) -> PretrainResult:
    """Train the velocity net with the flow-matching loss; writes final and
    best checkpoints.  Non-finite losses abort after writing the last good
    parameter state."""
    run_dir = Path(run_dir)
    manifest = _prepare_run_dir(run_dir, cfg, "pretrain")
    try:
        result = _pretrain_inner(cfg, run_dir, manifest)
    except BaseException as exc:
        manifest.finalize(f"aborted: {exc}")
        raise
    manifest.finalize("completed")
    return result


def _pretrain_inner(cfg, run_dir, manifest):
    spec = cfg.data.build_spec()
    topo = cfg.net.topology(cfg.data)
    seed = cfg.master_seed
    manifest.note_stream("init", "pretrain", "init")
    net = VelocityNet.init(topo, derive_rng(seed, "pretrain", "init"))
    opt = AdamW(lr=cfg.train.pretrain_lr, beta1=cfg.train.adam_beta1,
                beta2=cfg.train.adam_beta2, weight_decay=cfg.train.weight_decay)
    gen_range = cfg.train.pretrain_range()

    best_loss = np.inf
    best_params = {k: v.copy() for k, v in net.params.items()}
    loss_first = 0.0
    recent = []
    history = []
    for i in range(cfg.train.pretrain_iters):
        rng = derive_rng(seed, "pretrain", "iter", i)
        batch = draw_labeled_batch(spec, cfg.train.batch_size, rng)
        try:
            loss, grads = rf_loss(net, batch, rng, gen_range)
        except DivergenceError as exc:
            aborted = run_dir / "checkpoints" / "pretrained_lastgood.ckpt"
            save_checkpoint(aborted, net, creation_seed=f"{seed}/pretrain",
                            extra={"role": "pretrained", "aborted_at": i})
            manifest.add_checkpoint("lastgood", aborted)
            raise DivergenceError(f"pretraining diverged at iteration {i}: {exc}",
                                  {"iteration": i, "checkpoint": str(aborted)}) from exc
        if i == 0:
            loss_first = loss
        recent.append(loss)
        if len(recent) > 50:
            recent.pop(0)
        if loss < best_loss:
            best_loss = loss
            best_params = {k: v.copy() for k, v in net.params.items()}
        opt.update(net.params, grads)
        if cfg.train.log_every and i % cfg.train.log_every == 0:
            log.info("pretrain iter %d: rf_loss %.5f", i, loss)
            history.append((i, loss))

    final_path = run_dir / "checkpoints" / "pretrained_final.ckpt"
    best_path = run_dir / "checkpoints" / "pretrained_best.ckpt"
    save_checkpoint(final_path, net, creation_seed=f"{seed}/pretrain",
                    extra={"role": "pretrained"})
    save_checkpoint(best_path, VelocityNet(topo, best_params),
                    creation_seed=f"{seed}/pretrain", extra={"role": "pretrained"})
    manifest.add_checkpoint("final", final_path)
    manifest.add_checkpoint("best", best_path)
    loss_final = float(np.mean(recent)) if recent else loss_first
    return PretrainResult(final_path, best_path, loss_first, loss_final, history)


@dataclass
class PosttrainResult:
    generator_path: Path
    discriminator_path: Path
    gen_updates: int
    disc_updates: int
    history: list = field(default_factory=list)


def posttrain(cfg: ExperimentConfig, pretrained_ckpt, variant, run_dir) -> PosttrainResult:
    """Adversarial post-training from a pretrained checkpoint.

    variant: "arc" (full objective), "no_contrastive" (lambda_c = 0, the
    contrastive loss is never evaluated), or "least_squares" (least-squares
    adversarial objective, contrastive term kept).
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    run_dir = Path(run_dir)
    manifest = _prepare_run_dir(run_dir, cfg, f"posttrain:{variant}")
    try:
        result = _posttrain_inner(cfg, Path(pretrained_ckpt), variant, run_dir, manifest)
    except BaseException as exc:
        manifest.finalize(f"aborted: {exc}")
        raise
    manifest.finalize("completed")
    return result


def _variant_loss_config(cfg: ExperimentConfig, variant: str) -> LossConfig:
    if variant == "no_contrastive":
        return cfg.loss.loss_config(lambda_c=0.0)
    if variant == "least_squares":
        return cfg.loss.loss_config(adversarial_kind="least_squares")
    return cfg.loss.loss_config()


def _posttrain_inner(cfg, pretrained_ckpt, variant, run_dir, manifest):
    spec = cfg.data.build_spec()
    seed = cfg.master_seed
    pre_net, meta = load_checkpoint(pretrained_ckpt)
    if meta.get("kind") != "velocity":
        raise ConfigError(f"{pretrained_ckpt}: post-training needs a velocity checkpoint")
    manifest.note_stream("init", "posttrain", variant, "init")
    gen, disc = init_from_pretrained(pre_net, derive_rng(seed, "posttrain", variant, "init"))
    loss_cfg = _variant_loss_config(cfg, variant)
    opt = ArcOptimizer(
        gen_opt=AdamW(lr=cfg.train.gen_lr, beta1=cfg.train.adam_beta1,
                      beta2=cfg.train.adam_beta2, eps=cfg.train.gen_adam_eps,
                      weight_decay=cfg.train.weight_decay),
        disc_opt=AdamW(lr=cfg.train.disc_lr, beta1=cfg.train.adam_beta1,
                       beta2=cfg.train.adam_beta2, eps=cfg.train.disc_adam_eps,
                       weight_decay=cfg.train.weight_decay),
    )

    gen_updates = disc_updates = 0
    recent = []
    history = []
    for i in range(cfg.train.posttrain_iters):
        rng = derive_rng(seed, "posttrain", variant, "iter", i)
        batch_g = draw_labeled_batch(spec, cfg.train.batch_size, rng)
        batch_d = draw_labeled_batch(spec, cfg.train.batch_size, rng)
        try:
            for _ in range(cfg.train.g_steps_per_d - 1):
                generator_half_step(gen, disc,
                                    draw_labeled_batch(spec, cfg.train.batch_size, rng),
                                    loss_cfg, opt, rng)
                gen_updates += 1
            stats = arc_step(gen, disc, batch_g, batch_d, loss_cfg, opt, rng,
                             order=cfg.train.update_order)
        except DivergenceError as exc:
            dump = run_dir / "diagnostics.json"
            with open(dump, "w") as fh:
                json.dump({"iteration": i, "variant": variant,
                           "recent": recent[-25:], "error": str(exc)}, fh, indent=2)
            for name, net in (("gen_lastgood", gen), ("disc_lastgood", disc)):
                path = run_dir / "checkpoints" / f"{name}.ckpt"
                save_checkpoint(path, net, creation_seed=f"{seed}/posttrain/{variant}",
                                extra={"role": "generator" if name.startswith("gen") else "discriminator",
                                       "variant": variant, "aborted_at": i})
                manifest.add_checkpoint(name, path)
            raise DivergenceError(f"post-training ({variant}) diverged at iteration {i}: {exc}",
                                  {"iteration": i, "diagnostics": str(dump)}) from exc
        gen_updates += 1
        disc_updates += 1
        recent.append((stats.gen_loss, stats.disc_adv_loss, stats.disc_contrastive_loss))
        if len(recent) > 200:
            recent.pop(0)
        if cfg.train.log_every and i % cfg.train.log_every == 0:
            log.info("posttrain[%s] iter %d: gen %.5f adv %.5f contrastive %.5f",
                     variant, i, stats.gen_loss, stats.disc_adv_loss,
                     stats.disc_contrastive_loss)
            history.append((i, stats.gen_loss, stats.disc_adv_loss, stats.disc_contrastive_loss))

    gen_path = run_dir / "checkpoints" / f"{variant}_generator.ckpt"
    disc_path = run_dir / "checkpoints" / f"{variant}_discriminator.ckpt"
    save_checkpoint(gen_path, gen, creation_seed=f"{seed}/posttrain/{variant}",
                    extra={"role": "generator", "variant": variant})
    save_checkpoint(disc_path, disc, creation_seed=f"{seed}/posttrain/{variant}",
                    extra={"role": "discriminator", "variant": variant})
    manifest.add_checkpoint("generator", gen_path)
    manifest.add_checkpoint("discriminator", disc_path)
    return PosttrainResult(gen_path, disc_path, gen_updates, disc_updates, history)


# ---------------------------------------------------------------------------
# evaluation

def parse_sampler(sampler: str):
    kind, _, steps = str(sampler).partition("_")
    if kind not in ("euler", "pingpong") or not steps.isdigit() or int(steps) < 1:
        raise ConfigError(f"bad sampler spec {sampler!r}; expected euler_N or pingpong_N")
    return kind, int(steps)


def _generate(net, kind, steps, prompts, rng, cfg: ExperimentConfig):
    n = prompts.shape[0]
    d = net.topology.d
    if kind == "euler":
        x_start = rng.standard_normal((n, d))
        return euler_sample(net, x_start, prompts, steps, t_start=1.0,
                            grid=cfg.eval.euler_grid)
    schedule = make_schedule(steps, cfg.loss.gen_range(), grid=cfg.eval.schedule_grid)
    return pingpong_sample(net, schedule, prompts, rng)


def evaluate(checkpoint, cfg: ExperimentConfig, sampler, out_dir=None, label=None) -> MetricReport:
    """Generate per-class samples with the requested sampler and compute the
    full metric set; deterministic given (checkpoint, config, seed) whenever
    timing is disabled (timing_runs = 0 leaves wall_seconds_per_sample at 0.0).
    """
    checkpoint = Path(checkpoint)
    net, meta = load_checkpoint(checkpoint)
    kind, steps = parse_sampler(sampler)
    role = meta.get("role", "pretrained")
    if kind == "pingpong" and role != "generator":
        warnings.warn(f"ping-pong sampling a {role} checkpoint; proceeding")
    if kind == "euler" and role == "generator":
        warnings.warn("Euler-sampling a post-trained generator checkpoint; proceeding")

    spec = cfg.data.build_spec()
    seed = cfg.master_seed
    label = label or f"{role}@{sampler}"
    n_per = cfg.eval.n_eval // spec.K

    frozen = balanced_eval_batch(spec, cfg.eval.n_eval, derive_rng(seed, "eval", "frozen"))
    classifier = MixtureModeClassifier.fit(frozen.samples, frozen.prompts,
                                           modes_per_class=cfg.data.modes_per_class)
    holdout = balanced_eval_batch(spec, max(512, spec.K * 64),
                                  derive_rng(seed, "eval", "holdout"))
    acc = classifier.accuracy(holdout.samples, holdout.prompts)
    if acc <= 0.99:
        raise ValueError(f"adherence classifier under-trained: held-out accuracy {acc:.4f}")

    gen_blocks, sw_per_class = [], []
    for k in range(spec.K):
        prompts_k = np.full(n_per, k, dtype=int)
        rng_k = derive_rng(seed, "eval", sampler, "gen", k)
        xs = _generate(net, kind, steps, prompts_k, rng_k, cfg)
        gen_blocks.append(xs)
        real_k = frozen.samples[frozen.prompts == k][:n_per]
        sw_per_class.append(sliced_wasserstein(real_k, xs, cfg.eval.sw_projections,
                                               derive_rng(seed, "eval", "sw", k)))
    gen_samples = np.concatenate(gen_blocks, axis=0)
    gen_prompts = np.concatenate([np.full(n_per, k, dtype=int) for k in range(spec.K)])
    gen_batch = LabeledBatch(gen_samples, gen_prompts)

    groups = []
    for k in range(spec.K):
        rng_k = derive_rng(seed, "eval", sampler, "ccds", k)
        prompts_k = np.full(cfg.eval.ccds_group_size, k, dtype=int)
        groups.append(_generate(net, kind, steps, prompts_k, rng_k, cfg))

    feat = classifier_embedding(classifier)
    report = MetricReport(
        label=label,
        sampler=sampler,
        steps=steps,
        ccds=ccds([identity_embedding(g) for g in groups]),
        ccds_feat=ccds([feat(g) for g in groups]),
        recall=recall(identity_embedding(frozen.samples), identity_embedding(gen_samples),
                      cfg.eval.knn_k),
        coverage=coverage(identity_embedding(frozen.samples), identity_embedding(gen_samples),
                          cfg.eval.knn_k),
        fd=frechet_distance(identity_embedding(frozen.samples), identity_embedding(gen_samples)),
        sw=float(np.mean(sw_per_class)),
        adherence=adherence_score(gen_batch, classifier),
        wall_seconds_per_sample=_measure_wall(net, kind, steps, cfg, spec),
        seed=seed,
        config_hash=config_hash(cfg),
        checkpoint=checkpoint.stem,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "samples").mkdir(parents=True, exist_ok=True)
        _dump_real_eval(cfg, out_dir)
        tag = label.replace("@", "_")
        write_labeled_csv(out_dir / "samples" / f"{tag}.csv", gen_batch,
                          label_column="prompt_id",
                          extra_columns={"seed": [seed] * len(gen_batch)})
    return report


def _dump_real_eval(cfg: ExperimentConfig, run_dir: Path) -> Path:
    """Materialize the frozen real evaluation set once per run directory."""
    path = Path(run_dir) / "samples" / "real_eval.csv"
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        spec = cfg.data.build_spec()
        frozen = balanced_eval_batch(spec, cfg.eval.n_eval,
                                     derive_rng(cfg.master_seed, "eval", "frozen"))
        write_labeled_csv(path, frozen)
    return path


def _measure_wall(net, kind, steps, cfg, spec):
    runs = cfg.eval.timing_runs
    if runs < 3:
        return 0.0
    prompts = np.zeros(32, dtype=int)
    rng = derive_rng(cfg.master_seed, "eval", "timing")

    def once():
        _generate(net, kind, steps, prompts, rng, cfg)

    once()  # warmup
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        once()
        times.append(time.perf_counter() - t0)
    return statistics.median(times) / prompts.shape[0]


def _write_reports(run_dir: Path, reports):
    csv_path = run_dir / "metrics.csv"
    json_path = run_dir / "metrics.json"
    with open(csv_path, "w") as fh:
        fh.write(",".join(MetricReport.csv_header()) + "\n")
        for report in reports:
            fh.write(",".join(report.to_csv_row()) + "\n")
    with open(json_path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def evaluate_run(checkpoint, cfg: ExperimentConfig, sampler, run_dir) -> MetricReport:
    """CLI entry: evaluate one checkpoint into a managed run directory."""
    run_dir = Path(run_dir)
    manifest = _prepare_run_dir(run_dir, cfg, "eval")
    try:
        report = evaluate(checkpoint, cfg, sampler, out_dir=run_dir)
        csv_path, json_path = _write_reports(run_dir, [report])
        manifest.add_metrics("csv", csv_path)
        manifest.add_metrics("json", json_path)
    except BaseException as exc:
        manifest.finalize(f"aborted: {exc}")
        raise
    manifest.finalize("completed")
    return report


# ---------------------------------------------------------------------------
# ablation table

def ablation_table(cfg: ExperimentConfig, run_dir, jobs=1):
    """Train once, post-train every variant, evaluate the canonical grid of
    configurations, and emit one metrics row per configuration.

    Sub-run failures propagate after the rows that did succeed are written.
    """
    run_dir = Path(run_dir)
    manifest = _prepare_run_dir(run_dir, cfg, "ablate")
    try:
        reports = _ablation_inner(cfg, run_dir, manifest, jobs)
    except BaseException as exc:
        manifest.finalize(f"aborted: {exc}")
        raise
    manifest.finalize("completed")
    return reports


def _ablation_rows(cfg, pre_ckpt, variant_ckpts):
    e = cfg.eval
    rows = [
        (f"pretrained@euler_{e.steps_full}", pre_ckpt, f"euler_{e.steps_full}"),
        (f"pretrained@euler_{e.steps_few}", pre_ckpt, f"euler_{e.steps_few}"),
        (f"arc@pingpong_{e.steps_few}", variant_ckpts["arc"], f"pingpong_{e.steps_few}"),
        (f"arc@pingpong_{e.steps_mid}", variant_ckpts["arc"], f"pingpong_{e.steps_mid}"),
        (f"arc@pingpong_{e.steps_one}", variant_ckpts["arc"], f"pingpong_{e.steps_one}"),
        (f"no_contrastive@pingpong_{e.steps_few}", variant_ckpts["no_contrastive"],
         f"pingpong_{e.steps_few}"),
        (f"least_squares@pingpong_{e.steps_few}", variant_ckpts["least_squares"],
         f"pingpong_{e.steps_few}"),
    ]
    return rows


def _ablation_inner(cfg, run_dir, manifest, jobs):
    pre = pretrain(cfg, run_dir / "pretrain")
    manifest.add_checkpoint("pretrained", pre.final_path)
    variant_ckpts = {}
    for variant in VARIANTS:
        result = posttrain(cfg, pre.final_path, variant, run_dir / variant)
        variant_ckpts[variant] = result.generator_path
        manifest.add_checkpoint(variant, result.generator_path)

    rows = _ablation_rows(cfg, pre.final_path, variant_ckpts)
    _dump_real_eval(cfg, run_dir)
    reports, failures = [], []

    def run_row(row):
        label, ckpt, sampler = row
        return evaluate(ckpt, cfg, sampler, out_dir=run_dir, label=label)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_row, row) for row in rows]
            for row, fut in zip(rows, futures):
                try:
                    reports.append(fut.result())
                except Exception as exc:
                    failures.append((row[0], exc))
    else:
        for row in rows:
            try:
                reports.append(run_row(row))
            except Exception as exc:
                failures.append((row[0], exc))

    csv_path, json_path = _write_reports(run_dir, reports)
    manifest.add_metrics("csv", csv_path)
    manifest.add_metrics("json", json_path)
    if failures:
        label, exc = failures[0]
        raise RuntimeError(f"{len(failures)} ablation row(s) failed; first: {label}: {exc}") from exc
    return reports
