"""Command-line entry points.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint, pipeline
from .config import ConfigError, RunConfig
from .config import load as load_config
from .corpus import Tokenizer, save_tokens
from .diffusion import NoiseSchedule
from .info import CHECK_TOL, OracleError, hand_case_rows, verification_sweep
from .optim import NonFiniteGradient
from .samplers import SOLVERS
from .seeding import derive_seed
from .training import RecoveryConfig, TrainingDiverged, train_decoder, train_diffusion, \
    train_linear_head, token_recovery_experiment

log = logging.getLogger("codar")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3

ORACLE_FIELDS = ["case", "seed", "L", "A", "K", "H(Y|X)", "sum_H(Yi|Xi)", "TC",
                 "locality_gap", "gap", "max_residual"]
CURVE_FIELDS = ["step", "loss", "lr"]
RECOVER_FIELDS = ["d", "linear_rate", "ar_rate", "linear_rate_clean", "ar_rate_clean"]


class VerificationFailed(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _curve_path(args) -> Path:
    return Path(args.curve) if args.curve else Path(str(args.out) + ".curve.csv")


# -- commands ----------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_data(cfg)
    save_tokens(args.out, data.corpus.sequences)
    log.info("wrote %d sequences of length %d (|V|=%d) to %s", len(data.corpus), cfg.corpus.L,
             data.vocab_size, args.out)
    return EXIT_OK


def cmd_train_diffusion(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_data(cfg)
    table = pipeline.build_table(cfg, data.vocab_size)
    tcfg = pipeline.seeded(cfg.diffusion_train, cfg.seed, pipeline.SEED_DIFFUSION)
    net, curve = train_diffusion(data.train, table, cfg.denoiser_config(), tcfg, NoiseSchedule(cfg.schedule_s))
    pipeline.save_model(args.out, net, table, cfg, "denoiser", data)
    pipeline.write_csv(_curve_path(args), CURVE_FIELDS, curve)
    return EXIT_OK


def cmd_train_decoder(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_data(cfg)
    table = pipeline.build_table(cfg, data.vocab_size)
    tcfg = pipeline.seeded(cfg.decoder_train, cfg.seed, pipeline.SEED_DECODER)
    dec, curve = train_decoder(data.train, table, cfg.decoder_config(data.vocab_size), tcfg)
    pipeline.save_model(args.out, dec, table, cfg, "decoder", data)
    pipeline.write_csv(_curve_path(args), CURVE_FIELDS, curve)
    return EXIT_OK


def cmd_train_linear(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_data(cfg)
    table = pipeline.build_table(cfg, data.vocab_size)
    tcfg = pipeline.seeded(cfg.linear_train, cfg.seed, pipeline.SEED_LINEAR)
    head, curve = train_linear_head(data.train, table, tcfg)
    pipeline.save_model(args.out, head, table, cfg, "linear", data)
    pipeline.write_csv(_curve_path(args), CURVE_FIELDS, curve)
    return EXIT_OK


def _run_id(*paths, seed: int) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    h.update(str(seed).encode())
    return h.hexdigest()[:12]


def _write_samples(path: Path, samples: list[list[int]], tok: Tokenizer):
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for s in samples:
            f.write(tok.detokenize(s, strip_special=True) + "\n")


def cmd_sample(args) -> int:
    den = pipeline.load_model(args.denoiser)
    dec = pipeline.load_model(args.decoder)
    for m, want in ((den, "denoiser"), (dec, "decoder")):
        if m.kind != want:
            raise ConfigError(f"expected a {want} checkpoint, got {m.kind!r}")
    pipeline.check_compatible(den, dec)
    cfg = den.cfg
    seed = cfg.seed if args.seed is None else args.seed
    n = args.n_samples or cfg.n_samples
    solvers = args.solver or [cfg.sampler.solver]
    steps_list = args.steps or [cfg.sampler.steps]
    temps = args.temperature if args.temperature is not None else list(cfg.temperatures)
    for s in solvers:
        if s not in SOLVERS:
            raise ConfigError(f"unknown solver {s!r}; choose from {SOLVERS}")

    data = pipeline.load_data(cfg)
    oracle = pipeline.oracle_lm(cfg, data)
    schedule = NoiseSchedule(cfg.schedule_s)
    run_id = _run_id(args.denoiser, args.decoder, seed=seed)
    out = Path(args.out)
    combos = [(s, k, T) for s in solvers for k in steps_list for T in temps]
    rows = []
    for solver in solvers:
        for steps in steps_list:
            scfg = replace(cfg.sampler, solver=solver, steps=steps, seed=derive_seed(seed, pipeline.SEED_SAMPLER))
            x0 = pipeline.sample_embeddings(den.model, scfg, n, den.meta["L"], den.meta["dim"], schedule)
            for T in temps:
                samples = pipeline.decode_samples(dec.model, x0, T, derive_seed(seed, pipeline.SEED_DECODE))
                path = out if len(combos) == 1 else out.with_name(f"{out.stem}.{solver}.{steps}.T{T:g}{out.suffix}")
                _write_samples(path, samples, den.tokenizer)
                row = {"run_id": run_id, "temperature": float(T), "solver": solver, "steps": steps,
                       **pipeline.evaluate(samples, oracle)}
                log.info("%s", row)
                rows.append(row)
    pipeline.append_metrics(args.metrics or Path(str(out) + ".metrics.csv"), rows)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_data(cfg)
    oracle = pipeline.oracle_lm(cfg, data)
    lines = Path(args.samples).read_text(encoding="utf-8").splitlines()
    samples = [pipeline.strip_special(data.tokenizer.tokenize(line)) for line in lines]
    row = {"run_id": _run_id(args.samples, seed=cfg.seed), "temperature": args.temperature,
           "solver": args.solver, "steps": args.steps, **pipeline.evaluate(samples, oracle)}
    pipeline.append_metrics(args.out, [row])
    return EXIT_OK


def cmd_oracle(args) -> int:
    Ls, As, Ks = args.L, args.A, args.K
    rows = verification_sweep(args.trials, args.seed, Ls, As, Ks, args.tol)
    if args.hand_cases:
        rows += hand_case_rows(args.tol)
    pipeline.write_csv(args.out, ORACLE_FIELDS, rows)
    bad = [r for r in rows if not r["max_residual"] < args.tol]
    if bad:
        raise VerificationFailed(f"{len(bad)} of {len(rows)} cases exceed tolerance {args.tol:g}; "
                                 f"first: {bad[0]['case']} residual {bad[0]['max_residual']:.3e}")
    log.info("%d cases verified, max residual %.3e", len(rows),
             max((r["max_residual"] for r in rows), default=0.0))
    return EXIT_OK


def cmd_recover(args) -> int:
    cfg = _run_config(args)
    data = pipeline.load_data(cfg)
    d_list = args.d_list or list(cfg.recovery.d_list)
    sigma = cfg.recovery.sigma if args.sigma is None else args.sigma
    rcfg = RecoveryConfig(sigma=sigma, seed=derive_seed(cfg.seed, pipeline.SEED_RECOVERY),
                          decoder=cfg.decoder_config(data.vocab_size),
                          decoder_train=cfg.decoder_train, linear_train=cfg.linear_train)
    rows = token_recovery_experiment(d_list, data.train, data.heldout, data.vocab_size, rcfg)
    pipeline.write_csv(args.out, RECOVER_FIELDS, rows)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="codar", description="Diffusion over embeddings with contextual AR rounding.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output path", config=True):
        if config:
            sp.add_argument("--config", help="RunConfig JSON (defaults used when omitted)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        sp.add_argument("--out", required=True, help=out_help)

    sp = sub.add_parser("gen-corpus", help="generate the configured corpus as a token file")
    common(sp, "token file")
    sp.set_defaults(func=cmd_gen_corpus)

    for name, func in (("train-diffusion", cmd_train_diffusion), ("train-decoder", cmd_train_decoder),
                       ("train-linear", cmd_train_linear)):
        sp = sub.add_parser(name, help=f"{name.split('-')[1]} training run")
        common(sp, "checkpoint path")
        sp.add_argument("--curve", help="loss curve CSV (default: <out>.curve.csv)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("sample", help="two-stage generation plus metrics")
    sp.add_argument("--denoiser", required=True)
    sp.add_argument("--decoder", required=True)
    sp.add_argument("--solver", type=lambda s: s.split(","), help="comma list of ancestral,dpm1,dpm2")
    sp.add_argument("--steps", type=_int_list, help="comma list of step budgets")
    sp.add_argument("--temperature", type=_float_list, help="comma list of decoder temperatures")
    sp.add_argument("--n-samples", type=int, default=None)
    sp.add_argument("--metrics", help="metrics CSV to append to (default: <out>.metrics.csv)")
    common(sp, "samples text file", config=False)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="score a samples file")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--temperature", type=float, default=float("nan"))
    sp.add_argument("--solver", default="")
    sp.add_argument("--steps", type=int, default=0)
    common(sp, "metrics CSV to append to")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("oracle", help="verify the optimality-gap identities on finite joints")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--L", type=_int_list, default=[2, 3])
    sp.add_argument("--A", type=_int_list, default=[2, 3])
    sp.add_argument("--K", type=_int_list, default=[2, 3])
    sp.add_argument("--tol", type=float, default=CHECK_TOL)
    sp.add_argument("--hand-cases", action="store_true", help="append the deterministic hand-built joints")
    common(sp, "verification CSV", config=False)
    sp.set_defaults(func=cmd_oracle, seed=0)

    sp = sub.add_parser("recover", help="linear vs AR token recovery across embedding sizes")
    sp.add_argument("--d-list", type=_int_list, default=None)
    sp.add_argument("--sigma", type=float, default=None)
    common(sp, "recovery CSV")
    sp.set_defaults(func=cmd_recover)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (VerificationFailed, OracleError) as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except (TrainingDiverged, NonFiniteGradient, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, pipeline.CompatibilityError, checkpoint.CheckpointError, OSError, ValueError,
            KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
