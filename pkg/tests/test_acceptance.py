"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the verdict lines are
printed even without ``-s``.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from codar import checkpoint, pipeline
from codar import tensor as T
from codar.cli import main
from codar.config import RunConfig, from_dict
from codar.corpus import CorpusSpec, generate_synthetic, split
from codar.diffusion import NoiseSchedule, forward_diffuse, recover_x0_eps, velocity_target
from codar.info import CHECK_TOL, hand_case_rows, verification_sweep
from codar.metrics import ngram_diversity
from codar.nets import DecoderConfig, DenoiserConfig, DenoiserNet
from codar.samplers import SamplerConfig, ancestral_sample, dpm_solver_sample, gaussian_denoiser
from codar.training import RecoveryConfig, TrainConfig, token_recovery_experiment, train_decoder, train_diffusion

from helpers import gradcheck, leaf
from test_tensor import PRIMITIVE_CASES

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"criterion {n}: {detail}"
    return emit


def within_trend(values, slack=0.01) -> bool:
    """Nondecreasing, allowing a single adjacent inversion no larger than ``slack``."""
    drops = [a - b for a, b in zip(values, values[1:]) if b < a]
    return len(drops) == 0 or (len(drops) == 1 and drops[0] <= slack)


# -- 1, 2: schedule algebra ------------------------------------------------------------------

def test_c01_schedule_identities(verdict):
    t0 = time.perf_counter()
    s = NoiseSchedule()
    t = np.random.default_rng(0).uniform(0, 1, 1000)
    a, sg = s.alpha_sigma(t)
    err = float(np.max(np.abs(a ** 2 + sg ** 2 - 1)))
    a0, s0 = s.alpha_sigma(0.0)
    a1, s1 = s.alpha_sigma(1.0)
    dt = time.perf_counter() - t0
    ok = err < 1e-12 and a0 == 1 and a1 == 0 and s0 == 0 and s1 == 1 and dt < 1
    verdict(1, ok, f"max|a^2+s^2-1|={err:.2e}, alpha(0)={float(a0)}, alpha(1)={float(a1)}, {dt:.3f}s")


def test_c02_round_trip(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x0 = rng.standard_normal((4, 8)).astype(np.float32)
        eps = rng.standard_normal((4, 8)).astype(np.float32)
        t = np.float32(rng.uniform(0, 1))
        x_t = forward_diffuse(x0, eps, t)
        v = velocity_target(x0, eps, t)
        x0_hat, eps_hat = recover_x0_eps(x_t, v, t)
        assert x0_hat.dtype == np.float32
        worst = max(worst, float(np.max(np.abs(x0_hat - x0))), float(np.max(np.abs(eps_hat - eps))))
    dt = time.perf_counter() - t0
    verdict(2, worst < 1e-5 and dt < 1, f"max round-trip error {worst:.2e} in float32, {dt:.3f}s")


# -- 3: autodiff ------------------------------------------------------------------------------

def test_c03_autodiff(verdict):
    t0 = time.perf_counter()
    prim = {}
    for name, (shapes, build) in PRIMITIVE_CASES.items():
        rng = np.random.default_rng(len(name))
        prim[name] = gradcheck(build, [leaf(rng, *s) for s in shapes])
    rng = np.random.default_rng(5)
    table = leaf(rng, 6, 3)
    prim["embedding"] = gradcheck(lambda ts: T.sum_(T.mul(T.embedding(ts[0], np.array([[0, 5, 0]])),
                                                            np.arange(9.0).reshape(1, 3, 3))), [table])

    cfg = DenoiserConfig(dim=4, max_len=5, d_model=16, n_layers=2, n_heads=2, d_ff=32, zero_init_output=False)
    net = DenoiserNet(cfg, seed=3).to(np.float64)
    x = T.Tensor(rng.standard_normal((2, 5, 4)), dtype=np.float64, requires_grad=True)
    target = rng.standard_normal((2, 5, 4))
    t = np.array([0.3, 0.8])
    params = net.parameters()
    picked = [params[k] for k in sorted(params)[::3]]  # a spread of weights from every layer

    def loss(ts):
        d = net(ts[0], t) - T.Tensor(target, dtype=np.float64)
        return T.mean(T.mul(d, d))

    composite = gradcheck(loss, [x] + picked, eps=1e-5)
    dt = time.perf_counter() - t0
    worst_name = max(prim, key=prim.get)
    ok = max(prim.values()) < 1e-4 and composite < 1e-3 and dt < 60
    verdict(3, ok, f"{len(prim)} primitives worst {worst_name}={prim[worst_name]:.1e} (<1e-4); "
                   f"2-layer denoiser {composite:.1e} (<1e-3) over input and {len(picked)} weights; {dt:.1f}s")


# -- 4: optimality-gap oracle -------------------------------------------------------------------

def test_c04_oracle(verdict):
    t0 = time.perf_counter()
    rows = verification_sweep(200, seed=0, Ls=(2, 3), As=(2, 3), Ks=(2, 3)) + hand_case_rows()
    worst = max(r["max_residual"] for r in rows)
    chain = all(r["gap"] >= r["TC"] - CHECK_TOL and r["TC"] >= -CHECK_TOL and r["locality_gap"] >= -CHECK_TOL
                for r in rows)
    dt = time.perf_counter() - t0
    verdict(4, worst < 1e-10 and chain and len(rows) > 200 and dt < 60,
            f"{len(rows)} joints (200 random + {len(rows) - 200} hand), max residual {worst:.1e}, "
            f"chain holds={chain}, {dt:.1f}s")


# -- 5: recovery direction ----------------------------------------------------------------------

@pytest.mark.slow
def test_c05_recovery_direction(verdict):
    t0 = time.perf_counter()
    c = generate_synthetic(CorpusSpec(kind="agreement", size=20000, L=16, n_symbols=256, group_size=4, seed=0))
    train, heldout = split(c.sequences, (0.9, 0.1), seed=0)
    rc = RecoveryConfig(sigma=0.5, seed=0, decoder=DecoderConfig(d_model=64, n_layers=2, n_heads=4, d_ff=128),
                        decoder_train=TrainConfig(steps=2500, batch_size=64, lr=2e-3),
                        linear_train=TrainConfig(steps=2000, batch_size=64, lr=1e-2, weight_decay=0.0))
    rows = token_recovery_experiment([8, 16, 32], train, heldout[:500], c.vocab_size, rc)
    dt = time.perf_counter() - t0
    table = ", ".join(f"d={r['d']}: linear {r['linear_rate']:.3f} ar {r['ar_rate']:.3f}" for r in rows)
    ok = all(r["ar_rate"] >= r["linear_rate"] for r in rows)
    ok = ok and rows[0]["ar_rate"] - rows[0]["linear_rate"] >= 0.1 and dt < 1800
    verdict(5, ok, f"{table}; {dt:.0f}s")


# -- 6: diversity exactness -----------------------------------------------------------------------

def test_c06_diversity(verdict):
    t0 = time.perf_counter()
    one = ngram_diversity([[5, 5, 5, 5, 5]])
    s = [[3, 4, 5, 6, 7], [4, 4, 6, 3, 3, 3], [9, 8, 7, 6]]
    ratio = ngram_diversity(s + s) / ngram_diversity(s)
    dt = time.perf_counter() - t0
    ok = abs(one - 1 / 24) <= 1e-12 and abs(ratio - 1 / 8) <= 1e-12 and dt < 1
    verdict(6, ok, f"repeated token {one!r} vs 1/24, duplication ratio {ratio!r} vs 1/8")


# -- 7, 9: trained desk model -----------------------------------------------------------------

DESK = {
    "seed": 0,
    "corpus": {"kind": "markov", "size": 4000, "L": 16, "n_symbols": 16, "concentration": 0.3},
    "diffusion_train": {"steps": 3000, "batch_size": 32, "lr": 1e-3},
    # a wider augmentation than the library default keeps the decoder stochastic enough
    # for temperature to matter at this scale
    "decoder_train": {"steps": 1500, "batch_size": 32, "noise_aug_sigma": 1.0},
    "n_samples": 128,
}
SAMPLER_SEED, DECODE_SEED = 5, 7


@pytest.fixture(scope="module")
def desk():
    t0 = time.perf_counter()
    cfg = from_dict(RunConfig, DESK)
    data = pipeline.load_data(cfg)
    table = pipeline.build_table(cfg, data.vocab_size)
    den, _ = train_diffusion(data.train, table, cfg.denoiser_config(),
                             pipeline.seeded(cfg.diffusion_train, cfg.seed, pipeline.SEED_DIFFUSION))
    dec, _ = train_decoder(data.train, table, cfg.decoder_config(data.vocab_size),
                           pipeline.seeded(cfg.decoder_train, cfg.seed, pipeline.SEED_DECODER))
    oracle = pipeline.oracle_lm(cfg, data)

    def run(solver, steps, temps):
        x0 = pipeline.sample_embeddings(den, SamplerConfig(solver=solver, steps=steps, seed=SAMPLER_SEED),
                                        cfg.n_samples, cfg.corpus.L, cfg.dim)
        return [pipeline.evaluate(pipeline.decode_samples(dec, x0, T_, DECODE_SEED), oracle) for T_ in temps]

    return run, time.perf_counter() - t0


@pytest.mark.slow
def test_c07_temperature_frontier(verdict, desk):
    run, train_time = desk
    t0 = time.perf_counter()
    temps = [0.0, 0.25, 0.5, 0.75, 1.0]
    res = run("dpm2", 25, temps)
    div = [r["div"] for r in res]
    ppl = [r["gen_ppl_token_weighted"] for r in res]
    dt = train_time + time.perf_counter() - t0
    ok = within_trend(div) and within_trend(ppl) and dt < 1800
    verdict(7, ok, "T " + " ".join(f"{t:g}" for t in temps) + " | Div " + " ".join(f"{v:.4f}" for v in div)
            + " | PPL " + " ".join(f"{v:.2f}" for v in ppl) + f"; {dt:.0f}s incl. training")


@pytest.mark.slow
def test_c09_few_step_direction(verdict, desk):
    run, _ = desk
    (fast,) = run("dpm2", 25, [1.0])
    (slow,) = run("ancestral", 25, [1.0])
    a, b = fast["gen_ppl_token_weighted"], slow["gen_ppl_token_weighted"]
    verdict(9, a <= 1.1 * b, f"25 steps, T=1: dpm2 PPL {a:.3f} vs ancestral {b:.3f} (ratio {a / b:.3f}, <= 1.1)")


# -- 8: solver convergence --------------------------------------------------------------------

def test_c08_solver_convergence(verdict):
    t0 = time.perf_counter()
    den = gaussian_denoiser(0.5, 0.3)
    shape = (256, 1, 1)

    def errors(solver, steps_list):
        ref = dpm_solver_sample(den, SamplerConfig(solver=solver, steps=4096, seed=1, final_denoise=False), shape)
        return [float(np.max(np.abs(dpm_solver_sample(
            den, SamplerConfig(solver=solver, steps=n, seed=1, final_denoise=False), shape) - ref)))
            for n in steps_list]

    steps = [16, 32, 64]
    e1, e2 = errors("dpm1", steps), errors("dpm2", steps)
    r1 = [a / b for a, b in zip(e1, e1[1:])]
    r2 = [a / b for a, b in zip(e2, e2[1:])]
    cfg = SamplerConfig(steps=30, seed=9)
    ddim = ancestral_sample(gaussian_denoiser(-0.3, 1.4), cfg, (5, 4, 3), eta=0.0)
    dpm1 = dpm_solver_sample(gaussian_denoiser(-0.3, 1.4), replace(cfg, solver="dpm1"), (5, 4, 3))
    gap = float(np.max(np.abs(ddim - dpm1)))
    dt = time.perf_counter() - t0
    ok = all(3 <= r <= 6 for r in r2) and all(1.5 <= r <= 3 for r in r1) and gap <= 1e-5 and dt < 60
    verdict(8, ok, f"dpm2 ratios {[round(r, 2) for r in r2]} in [3,6], dpm1 ratios {[round(r, 2) for r in r1]} "
                   f"in [1.5,3], |dpm1 - DDIM| {gap:.1e}; {dt:.1f}s")


# -- 10: determinism of every command ---------------------------------------------------------

TINY = ('{"seed": 3, "corpus": {"kind": "markov", "size": 200, "L": 8, "n_symbols": 8},'
        ' "denoiser": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32},'
        ' "decoder": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32},'
        ' "diffusion_train": {"steps": 30, "batch_size": 8}, "decoder_train": {"steps": 30, "batch_size": 8},'
        ' "linear_train": {"steps": 30, "batch_size": 8}, "n_samples": 8}')


def run_all_commands(d: Path) -> dict[str, bytes]:
    cfg = d / "cfg.json"
    cfg.write_text(TINY)
    c = ["--config", str(cfg)]
    cmds = [
        ["gen-corpus", *c, "--out", str(d / "corpus.bin")],
        ["train-diffusion", *c, "--out", str(d / "den.ckpt")],
        ["train-decoder", *c, "--out", str(d / "dec.ckpt")],
        ["train-linear", *c, "--out", str(d / "lin.ckpt")],
        ["sample", "--denoiser", str(d / "den.ckpt"), "--decoder", str(d / "dec.ckpt"),
         "--solver", "dpm2,ancestral", "--steps", "10", "--temperature", "0,1", "--out", str(d / "s.txt")],
        ["eval", *c, "--samples", str(d / "s.dpm2.10.T1.txt"), "--out", str(d / "eval.csv")],
        ["oracle", "--trials", "20", "--hand-cases", "--out", str(d / "oracle.csv")],
        ["recover", *c, "--d-list", "4,8", "--out", str(d / "recover.csv")],
    ]
    for cmd in cmds:
        assert main(cmd) == 0, cmd
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_c10_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a, b = run_all_commands(tmp_path / "a"), run_all_commands(tmp_path / "b")
    diff = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    dt = time.perf_counter() - t0
    n_out = sum(k.endswith((".ckpt", ".csv")) for k in a)
    verdict(10, not diff and n_out >= 10 and dt < 300,
            f"{len(a)} files from 8 commands ({n_out} checkpoints/CSVs) identical across reruns; "
            f"differing: {diff or 'none'}; {dt:.1f}s")


# -- 11: checkpoint format ----------------------------------------------------------------------

def test_c11_checkpoint_format(verdict, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    tensors = {"w": rng.standard_normal((3, 4)).astype(np.float32), "b": np.array([np.nan, -0.0], np.float32),
               "s": np.float32(2.5).reshape(())}
    p = tmp_path / "m.ckpt"
    checkpoint.save(p, tensors, '{"x": 1}', 2**64 - 1)
    out, text, seed = checkpoint.load(p)
    bitwise = all(out[k].shape == v.shape and out[k].tobytes() == v.tobytes() for k, v in tensors.items())
    raw = p.read_bytes()
    rejected = []
    for name, bad in [("magic", b"CODX" + raw[4:]), ("truncated data", raw[:-2]), ("version", raw[:4] + b"\x09" + raw[5:])]:
        try:
            checkpoint.loads(bad)
        except checkpoint.CheckpointError:
            rejected.append(name)
    dt = time.perf_counter() - t0
    ok = bitwise and (text, seed) == ('{"x": 1}', 2**64 - 1) and len(rejected) == 3 and dt < 1
    verdict(11, ok, f"round trip bitwise={bitwise}; rejected: {', '.join(rejected)}; {dt:.3f}s")
