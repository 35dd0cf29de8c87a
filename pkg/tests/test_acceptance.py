"""Acceptance gate: every criterion below prints one PASS/FAIL line.

Criteria 1-5 are exact property suites (math identities, gradient checks, loss
semantics, metric oracles, distribution checks).  Criterion 6 trains the full
pipeline at the acceptance profile on five predeclared seeds and checks the
directional orderings between the pretrained sampler, the adversarially
post-trained model, and its ablation variants.  Criterion 7 checks the few-step
wall-clock speedup; criterion 8 re-runs a pipeline and demands bit-identical
artifacts.

Run: pytest tests/test_acceptance.py -v -s
"""

import math
import shutil

import numpy as np
import pytest

import arclab.harness as harness
from arclab.arcloss import (
    LossConfig,
    PairedLogits,
    compute_LC,
    compute_LR,
    compute_LS,
    f_log_sigmoid,
    relativistic_pair_loss,
    rf_loss,
)
from arclab.evalkit import (
    ccds,
    coverage,
    frechet_from_stats,
    recall,
    sliced_wasserstein,
    timing_report,
)
from arclab.flowcore import (
    LogitNormalSpec,
    LogSnrRange,
    euler_sample,
    logsnr_to_t,
    noise,
    sample_pdisc,
    sample_pgen,
    t_to_logsnr,
)
from arclab.harness import (
    EvalConfig,
    ExperimentConfig,
    LossSettings,
    NetConfig,
    TrainConfig,
    ablation_table,
)
from arclab.nets import generator_predict, init_from_pretrained, load_checkpoint
from arclab.optim import grads_norm
from arclab.pingpong import make_schedule, pingpong_sample
from arclab.toydata import draw_labeled_batch, default_spec

from conftest import TINY_TOPO, fd_gradient_check, ks_statistic_two_sample, ks_statistic_uniform
from test_evalkit import ccds_reference, coverage_reference, recall_reference

LN2 = math.log(2.0)

# ---------------------------------------------------------------------------
# acceptance profile: desk-scale training budget for the directional criteria.
# Library defaults stay at the larger values; this profile trades absolute
# quality for a <= 30 min CPU budget across five seeds.

SEEDS = (0, 1, 2, 3, 4)
DEFAULT_SEED = 0


def acceptance_profile(seed):
    return ExperimentConfig(
        net=NetConfig(width=64, hidden=6),
        loss=LossSettings(disc_mean=0.5, disc_std=1.5, disc_shift=1.0),
        train=TrainConfig(pretrain_iters=2000, posttrain_iters=3000, batch_size=128,
                          pretrain_lr=1e-3, gen_lr=1.5e-5, disc_lr=3e-4,
                          gen_adam_eps=3e-4, log_every=0),
        eval=EvalConfig(n_eval=2048, sw_projections=64),
        master_seed=seed,
    )


def _verdict(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


# ---------------------------------------------------------------------------
# criterion 1: math identities (< 10 s)

class TestCriterion1MathIdentities:
    def test_interpolant_endpoints_exact(self):
        rng = np.random.default_rng(0)
        ok = True
        for _ in range(100):
            x0, eps = rng.standard_normal((2, 3))
            ok &= np.array_equal(noise(x0, eps, 0.0), x0)
            ok &= np.array_equal(noise(x0, eps, 1.0), eps)
        assert _verdict("criterion 1a (interpolant endpoints exact)", ok)

    def test_logsnr_round_trip(self):
        lam = np.linspace(-20.0, 20.0, 20001)
        err = np.max(np.abs(t_to_logsnr(logsnr_to_t(lam)) - lam))
        assert _verdict("criterion 1b (log-SNR round trip <= 1e-9)", err <= 1e-9,
                        f"max err {err:.3e}")

    def test_log_sigmoid_at_zero(self):
        err = abs(f_log_sigmoid(0.0) + LN2)
        assert _verdict("criterion 1c (f(0) = -ln 2 +/- 1e-12)", err <= 1e-12,
                        f"err {err:.3e}")

    def test_log_sigmoid_antisymmetry(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-50, 50, size=1000)
        err = float(np.max(np.abs(f_log_sigmoid(x) - f_log_sigmoid(-x) - x)))
        assert _verdict("criterion 1d (f(x)-f(-x)=x +/- 1e-9, 1e3 draws)", err <= 1e-9,
                        f"max err {err:.3e}")

    def test_generator_oracle_recovery(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(100):
            x0, eps = rng.standard_normal((2, 4))
            t = rng.uniform(0.05, 1.0)
            x_t = noise(x0, eps, t)
            out = generator_predict(lambda x, tt, c: eps - x0, x_t, t, 0)
            worst = max(worst, float(np.max(np.abs(out - x0))))
        assert _verdict("criterion 1e (oracle velocity recovers x0 +/- 1e-6)", worst <= 1e-6,
                        f"max err {worst:.3e}")

    def test_euler_exactness_on_linear_fields(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for steps in (1, 5, 50):
            x0, eps = rng.standard_normal((2, 3))
            out = euler_sample(lambda x, t, c: eps - x0, eps, 0, steps=steps, t_start=1.0)
            worst = max(worst, float(np.max(np.abs(out - x0))))
        assert _verdict("criterion 1f (Euler exact on linear fields +/- 1e-5)", worst <= 1e-5,
                        f"max err {worst:.3e}")


# ---------------------------------------------------------------------------
# criterion 2: gradient correctness (< 2 min)

@pytest.fixture(scope="module")
def nets():
    from arclab.nets import VelocityNet

    velocity = VelocityNet.init(TINY_TOPO, np.random.default_rng(11))
    gen, disc = init_from_pretrained(velocity, np.random.default_rng(12))
    head_rng = np.random.default_rng(13)
    for name, arr in disc.params.items():
        if name.startswith(("hw", "hb", "hg", "hbeta")) or name in ("w_out", "b_out"):
            disc.params[name] = arr + 0.3 * head_rng.standard_normal(arr.shape)
    batch = draw_labeled_batch(default_spec(), 8, np.random.default_rng(14))
    return gen, disc, batch


class TestCriterion2Gradients:
    def test_rf_loss_gradients(self, nets):
        gen, _, batch = nets
        seed, rng = 20, np.random.default_rng(21)
        _, grads = rf_loss(gen, batch, np.random.default_rng(seed), LogSnrRange(-6, 2))
        worst = fd_gradient_check(
            gen.params,
            lambda: rf_loss(gen, batch, np.random.default_rng(seed), LogSnrRange(-6, 2))[0],
            grads, rng, n_coords=200, h=1e-4)
        assert _verdict("criterion 2a (rf_loss finite differences < 1e-4)", worst < 1e-4,
                        f"worst rel err {worst:.2e}")

    def test_relativistic_loss_gradients_both_sides(self, nets):
        gen, disc, batch = nets
        cfg = LossConfig()
        seed = 22
        _, gen_grads, disc_grads = compute_LR(gen, disc, batch, cfg, np.random.default_rng(seed))

        def loss():
            return compute_LR(gen, disc, batch, cfg, np.random.default_rng(seed))[0]

        worst_g = fd_gradient_check(gen.params, loss, gen_grads,
                                    np.random.default_rng(23), n_coords=200, h=1e-4)
        worst_d = fd_gradient_check(disc.params, loss, disc_grads,
                                    np.random.default_rng(24), n_coords=200, h=1e-4)
        worst = max(worst_g, worst_d)
        assert _verdict("criterion 2b (relativistic loss FD, both parameter sets < 1e-4)",
                        worst < 1e-4, f"gen {worst_g:.2e}, disc {worst_d:.2e}")

    def test_contrastive_loss_gradients(self, nets):
        _, disc, batch = nets
        spec = LossConfig().disc_spec
        seed = 25
        _, grads = compute_LC(disc, batch, np.random.default_rng(seed), spec)
        worst = fd_gradient_check(
            disc.params,
            lambda: compute_LC(disc, batch, np.random.default_rng(seed), spec)[0],
            grads, np.random.default_rng(26), n_coords=200, h=1e-4)
        assert _verdict("criterion 2c (contrastive loss FD < 1e-4)", worst < 1e-4,
                        f"worst rel err {worst:.2e}")

    def test_least_squares_gradients_both_sides(self, nets):
        gen, disc, batch = nets
        cfg = LossConfig(adversarial_kind="least_squares")
        seed = 27
        out = compute_LS(gen, disc, batch, cfg, np.random.default_rng(seed))
        worst_g = fd_gradient_check(
            gen.params,
            lambda: compute_LS(gen, disc, batch, cfg, np.random.default_rng(seed)).gen_loss,
            out.gen_grads, np.random.default_rng(28), n_coords=200, h=1e-4)
        worst_d = fd_gradient_check(
            disc.params,
            lambda: compute_LS(gen, disc, batch, cfg, np.random.default_rng(seed)).disc_loss,
            out.disc_grads, np.random.default_rng(29), n_coords=200, h=1e-4)
        worst = max(worst_g, worst_d)
        assert _verdict("criterion 2d (least-squares loss FD, both parameter sets < 1e-4)",
                        worst < 1e-4, f"gen {worst_g:.2e}, disc {worst_d:.2e}")


# ---------------------------------------------------------------------------
# criterion 3: loss semantics

@pytest.fixture(scope="module")
def pair():
    from arclab.nets import VelocityNet

    velocity = VelocityNet.init(TINY_TOPO, np.random.default_rng(31))
    gen, disc = init_from_pretrained(velocity, np.random.default_rng(32))
    head_rng = np.random.default_rng(33)
    for name, arr in disc.params.items():
        if name.startswith("hw") or name == "w_out":
            disc.params[name] = arr + 0.3 * head_rng.standard_normal(arr.shape)
    return gen, disc


class TestCriterion3LossSemantics:
    def test_identity_permutation_constant(self, pair):
        _, disc = pair
        batch = draw_labeled_batch(default_spec(), 16, np.random.default_rng(34))
        loss, grads = compute_LC(disc, batch, np.random.default_rng(35),
                                 LossConfig().disc_spec, permutation=np.arange(16))
        exact = loss == -LN2
        norm = grads_norm(grads)
        ok = exact and norm < 1e-12
        assert _verdict("criterion 3a (identity permutation: exactly -ln 2, zero gradient)",
                        ok, f"loss {loss!r}, grad norm {norm:.2e}")

    def test_contrastive_has_no_generator_gradient(self, pair):
        gen, disc = pair
        batch = draw_labeled_batch(default_spec(), 16, np.random.default_rng(36))
        before = {k: v.copy() for k, v in gen.params.items()}
        _, grads = compute_LC(disc, batch, np.random.default_rng(37), LossConfig().disc_spec)
        untouched = all(np.array_equal(gen.params[k], before[k]) for k in before)
        disc_only = set(grads) == set(disc.params)
        assert _verdict("criterion 3b (contrastive loss touches discriminator only)",
                        untouched and disc_only)

    def test_per_pair_noise_level_instrumented(self, pair):
        gen, disc = pair
        batch = draw_labeled_batch(default_spec(), 32, np.random.default_rng(38))
        trace = {}
        compute_LR(gen, disc, batch, LossConfig(), np.random.default_rng(39), trace=trace)
        s = trace["s"]
        shared_real = np.array_equal(disc.logit(trace["xs_real"], s, batch.prompts),
                                     trace["d_real"])
        shared_gen = np.array_equal(disc.logit(trace["xs_gen"], s, batch.prompts),
                                    trace["d_gen"])
        eps_r = (trace["xs_real"] - (1 - s[:, None]) * batch.samples) / s[:, None]
        eps_g = (trace["xs_gen"] - (1 - s[:, None]) * trace["xhat0"]) / s[:, None]
        independent = float(np.min(np.abs(eps_r - eps_g))) > 1e-12
        distinct = len(np.unique(s)) == 32
        ok = shared_real and shared_gen and independent and distinct
        assert _verdict("criterion 3c (one shared s per pair, independent noise per side)", ok)

    def test_bradley_terry_equivalence(self):
        rng = np.random.default_rng(40)
        worst = 0.0
        for _ in range(1000):
            dg, dr = rng.normal(0.0, 5.0, size=2)
            bt = 1.0 / (1.0 + math.exp(-(dg - dr)))
            worst = max(worst, abs(relativistic_pair_loss(PairedLogits(dg, dr)) - math.log(bt)))
        assert _verdict("criterion 3d (Bradley-Terry equivalence, 1e3 pairs, 1e-9)",
                        worst < 1e-9, f"max err {worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 4: metric oracles (< 1 min)

class TestCriterion4MetricOracles:
    def test_ccds_matches_brute_force(self):
        rng = np.random.default_rng(41)
        groups = [rng.standard_normal((m, 5)) for m in (2, 3, 17, 24, 64)]
        ours, ref = ccds(groups), ccds_reference(groups)
        assert _verdict("criterion 4a (conditional diversity matches brute force)",
                        abs(ours - ref) < 1e-12, f"delta {abs(ours - ref):.2e}")

    def test_recall_coverage_match_brute_force(self):
        rng = np.random.default_rng(42)
        ok = True
        for trial in range(6):
            n, m = rng.integers(8, 65, size=2)
            real = rng.standard_normal((n, 3))
            gen = rng.standard_normal((m, 3)) + rng.uniform(-0.5, 0.5, size=3)
            k = int(rng.integers(1, 6))
            ok &= recall(real, gen, k) == recall_reference(real.tolist(), gen.tolist(), k)
            ok &= coverage(real, gen, k) == coverage_reference(real.tolist(), gen.tolist(), k)
        assert _verdict("criterion 4b (recall/coverage match exhaustive reference exactly)", ok)

    def test_frechet_closed_forms(self):
        d1 = frechet_from_stats(np.array([1.0, 0.0]), np.eye(2), np.zeros(2), np.eye(2))
        d2 = frechet_from_stats(np.zeros(2), 4 * np.eye(2), np.zeros(2), np.eye(2))
        err = max(abs(d1 - 1.0), abs(d2 - 2.0))
        assert _verdict("criterion 4c (Frechet diagonal closed forms +/- 1e-6)", err <= 1e-6,
                        f"max err {err:.2e}")

    def test_sliced_wasserstein_self_distance(self):
        rng = np.random.default_rng(43)
        pts = rng.standard_normal((512, 3))
        value = sliced_wasserstein(pts, pts, 64, np.random.default_rng(44))
        assert _verdict("criterion 4d (self sliced-Wasserstein < 1e-9)", value < 1e-9,
                        f"value {value:.2e}")


# ---------------------------------------------------------------------------
# criterion 5: distribution-sampling checks

class TestCriterion5Distributions:
    def test_pgen_uniform_in_logsnr(self):
        rng = np.random.default_rng(51)
        t = sample_pgen(LogSnrRange(-6.0, 2.0), rng, size=100_000)
        ks = ks_statistic_uniform(t_to_logsnr(t), -6.0, 2.0)
        assert _verdict("criterion 5a (p_gen uniform in log-SNR, KS < 0.01 at n=1e5)",
                        ks < 0.01, f"KS {ks:.4f}")

    def test_pdisc_identity_shift_matches_plain_logit_normal(self):
        rng = np.random.default_rng(52)
        ours = sample_pdisc(LogitNormalSpec(0.0, 1.0, 1.0), rng, size=100_000)
        direct = 1.0 / (1.0 + np.exp(-rng.normal(0.0, 1.0, size=100_000)))
        ks = ks_statistic_two_sample(ours, direct)
        assert _verdict("criterion 5b (p_disc shift=1 matches plain logit-normal, KS < 0.01)",
                        ks < 0.01, f"KS {ks:.4f}")


# ---------------------------------------------------------------------------
# criterion 6: end-to-end directional reproduction (five predeclared seeds)

@pytest.fixture(scope="session")
def ablation_runs(tmp_path_factory):
    runs = {}
    for seed in SEEDS:
        run_dir = tmp_path_factory.mktemp(f"accept_s{seed}")
        reports = ablation_table(acceptance_profile(seed), run_dir)
        runs[seed] = ({r.label: r for r in reports}, run_dir)
    return runs


def _row(runs, seed, label):
    return runs[seed][0][label]


def _majority(name, flags, detail=""):
    ok = sum(flags) >= 4
    print(f"{'PASS' if ok else 'FAIL'} {name}: {sum(flags)}/5 seeds {flags} {detail}")
    return ok


class TestCriterion6Directional:
    def test_a_pretrained_quality_and_step_degradation(self, ablation_runs):
        e50 = _row(ablation_runs, DEFAULT_SEED, "pretrained@euler_50")
        e8 = _row(ablation_runs, DEFAULT_SEED, "pretrained@euler_8")
        ok = e50.sw < 0.5 and e8.sw > e50.sw
        assert _verdict("criterion 6a (default seed: euler_50 sw < 0.5; euler_8 strictly worse)",
                        ok, f"sw50={e50.sw:.3f}, sw8={e8.sw:.3f}")

    def test_b_arc_recovers_few_step_quality(self, ablation_runs):
        flags = []
        for seed in SEEDS:
            e50 = _row(ablation_runs, seed, "pretrained@euler_50")
            e8 = _row(ablation_runs, seed, "pretrained@euler_8")
            a8 = _row(ablation_runs, seed, "arc@pingpong_8")
            flags.append(a8.sw < e8.sw and a8.sw <= 1.5 * e50.sw)
        assert _majority("criterion 6b (arc@8 beats pretrained euler_8, within 1.5x of euler_50)",
                         flags)

    def test_c_contrastive_adherence_pattern(self, ablation_runs):
        flags = []
        details = []
        for seed in SEEDS:
            a8 = _row(ablation_runs, seed, "arc@pingpong_8")
            nc = _row(ablation_runs, seed, "no_contrastive@pingpong_8")
            flags.append(a8.adherence > 0.8
                         and nc.adherence <= a8.adherence - 0.1
                         and nc.ccds >= a8.ccds)
            details.append(f"s{seed}: arc {a8.adherence:.3f} nc {nc.adherence:.3f}")
        assert _majority("criterion 6c (no-contrastive: adherence down >= 0.1, diversity up)",
                         flags, "; ".join(details))

    def test_d_arc_preserves_conditional_diversity(self, ablation_runs):
        flags = []
        for seed in SEEDS:
            e50 = _row(ablation_runs, seed, "pretrained@euler_50")
            a8 = _row(ablation_runs, seed, "arc@pingpong_8")
            flags.append(a8.ccds >= 0.9 * e50.ccds)
        assert _majority("criterion 6d (arc@8 conditional diversity >= 0.9x pretrained@50)",
                         flags)

    def test_e_one_step_is_worst(self, ablation_runs):
        flags = []
        for seed in SEEDS:
            a8 = _row(ablation_runs, seed, "arc@pingpong_8")
            a4 = _row(ablation_runs, seed, "arc@pingpong_4")
            a1 = _row(ablation_runs, seed, "arc@pingpong_1")
            flags.append(a1.sw > a4.sw and a1.sw > a8.sw)
        assert _majority("criterion 6e (arc one-step strictly worst)", flags)

    def test_f_least_squares_underperforms(self, ablation_runs):
        flags = []
        for seed in SEEDS:
            a8 = _row(ablation_runs, seed, "arc@pingpong_8")
            ls = _row(ablation_runs, seed, "least_squares@pingpong_8")
            flags.append(ls.sw >= a8.sw)
        assert _majority("criterion 6f (least-squares ablation not better than arc)", flags)


# ---------------------------------------------------------------------------
# criterion 7: timing

class TestCriterion7Timing:
    def test_few_step_speedup(self, ablation_runs):
        _, run_dir = ablation_runs[DEFAULT_SEED]
        ckpt = run_dir / "arc" / "checkpoints" / "arc_generator.ckpt"
        net, _ = load_checkpoint(ckpt)
        cfg = acceptance_profile(DEFAULT_SEED)
        schedule = make_schedule(8, cfg.loss.gen_range())
        prompts = np.zeros(64, dtype=int)
        rng = np.random.default_rng(70)

        def pingpong_closure():
            pingpong_sample(net, schedule, prompts, rng)

        def euler_closure():
            x = rng.standard_normal((64, net.topology.d))
            euler_sample(net, x, prompts, 50, t_start=1.0)

        report = timing_report(pingpong_closure, euler_closure, n_warmup=2, n_runs=9,
                               samples_per_call=64)
        ok = 4.0 <= report.speedup <= 10.0
        assert _verdict("criterion 7 (pingpong_8 vs euler_50 speedup in [4, 10])", ok,
                        f"speedup {report.speedup:.2f}")


# ---------------------------------------------------------------------------
# criterion 8: bit-exact reproducibility

class TestCriterion8Reproducibility:
    def test_repeat_run_bit_identical(self, tmp_path):
        cfg = ExperimentConfig(
            net=NetConfig(width=16, hidden=4, embed_dim=4, time_freqs=4),
            train=TrainConfig(pretrain_iters=150, posttrain_iters=40, batch_size=32,
                              log_every=0),
            eval=EvalConfig(n_eval=256, ccds_group_size=8, sw_projections=24,
                            knn_k=3, steps_full=10, steps_few=4, steps_mid=2,
                            steps_one=1),
            master_seed=3,
        )
        a = ablation_table(cfg, tmp_path / "a")
        b = ablation_table(cfg, tmp_path / "b")
        identical = True
        for rel in ("metrics.csv", "metrics.json", "samples/real_eval.csv",
                    "samples/arc_pingpong_4.csv", "samples/pretrained_euler_10.csv",
                    "pretrain/checkpoints/pretrained_final.ckpt",
                    "arc/checkpoints/arc_generator.ckpt",
                    "arc/checkpoints/arc_discriminator.ckpt",
                    "least_squares/checkpoints/least_squares_generator.ckpt"):
            identical &= (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        assert _verdict("criterion 8 (identical config+seed: bit-identical artifacts)",
                        identical)
        shutil.rmtree(tmp_path / "a")
        shutil.rmtree(tmp_path / "b")
