"""Glue between RunConfig, corpora, models, checkpoints and the two-stage generator."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import RunConfig, from_dict, to_dict
from .corpus import N_SPECIAL, Corpus, Tokenizer, generate_synthetic, split
from .diffusion import NoiseSchedule
from .metrics import NGramLM, generative_ppl, ngram_diversity
from .nets import (ARDecoder, DenoiserNet, EmbeddingTable, LinearHead,
                   as_sampler_fn, decode)
from .samplers import SamplerConfig, sample
from .seeding import derive_seed
from .training import TrainConfig

log = logging.getLogger(__name__)

# component indices for seed derivation from RunConfig.seed
SEED_DIFFUSION, SEED_DECODER, SEED_LINEAR, SEED_SAMPLER, SEED_DECODE, SEED_RECOVERY = range(1, 7)

METRIC_FIELDS = ["run_id", "temperature", "solver", "steps", "div", "gen_ppl_token_weighted", "n_samples"]


class CompatibilityError(ValueError):
    pass


def seeded(train: TrainConfig, master: int, component: int) -> TrainConfig:
    return replace(train, seed=derive_seed(master, component))


@dataclass
class Data:
    corpus: Corpus
    train: np.ndarray
    heldout: np.ndarray

    @property
    def tokenizer(self) -> Tokenizer:
        return self.corpus.tokenizer

    @property
    def vocab_size(self) -> int:
        return self.corpus.vocab_size


def load_data(cfg: RunConfig) -> Data:
    corpus = generate_synthetic(cfg.corpus)
    train, heldout = split(corpus.sequences, cfg.split, seed=cfg.corpus.seed)
    if len(train) == 0:
        raise ValueError("training split is empty")
    return Data(corpus, train, heldout)


def build_table(cfg: RunConfig, vocab_size: int) -> EmbeddingTable:
    return EmbeddingTable(vocab_size, cfg.dim, seed=cfg.embed_seed)


def oracle_lm(cfg: RunConfig, data: Data) -> NGramLM:
    """Fluency judge fit on the held-out split only (falls back to train if it is empty)."""
    ref = data.heldout if len(data.heldout) else data.train
    seqs = [strip_special(s) for s in ref]
    return NGramLM(data.vocab_size, cfg.oracle_order, cfg.oracle_add_k).fit([s for s in seqs if s])


def strip_special(seq) -> list[int]:
    return [int(t) for t in seq if int(t) >= N_SPECIAL]


# -- checkpoints ----------------------------------------------------------------------

def blob(cfg: RunConfig, kind: str, data: Data) -> str:
    return json.dumps({
        "kind": kind,
        "dim": cfg.dim,
        "L": cfg.corpus.L,
        "vocab_size": data.vocab_size,
        "vocab": data.tokenizer.chars,
        "run": to_dict(cfg),
    }, sort_keys=True)


def save_model(path, model, table: EmbeddingTable, cfg: RunConfig, kind: str, data: Data):
    tensors = {f"{kind}.{k}": v for k, v in model.state_dict().items()}
    tensors["embedding.table"] = table.matrix
    checkpoint.save(path, tensors, blob(cfg, kind, data), cfg.seed)


@dataclass
class LoadedModel:
    kind: str
    model: object
    table: EmbeddingTable
    cfg: RunConfig
    meta: dict
    tokenizer: Tokenizer


def load_model(path) -> LoadedModel:
    tensors, text, _ = checkpoint.load(path)
    meta = json.loads(text)
    cfg = from_dict(RunConfig, meta["run"])
    kind = meta["kind"]
    if kind == "denoiser":
        model = DenoiserNet(cfg.denoiser_config())
    elif kind == "decoder":
        model = ARDecoder(cfg.decoder_config(meta["vocab_size"]))
    elif kind == "linear":
        model = LinearHead(meta["dim"], meta["vocab_size"])
    else:
        raise checkpoint.CheckpointError(f"unknown model kind {kind!r}")
    prefix = kind + "."
    model.load_state_dict({k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
    table = EmbeddingTable.from_matrix(tensors["embedding.table"], seed=cfg.embed_seed)
    return LoadedModel(kind, model, table, cfg, meta, Tokenizer(meta["vocab"]))


def check_compatible(a: LoadedModel, b: LoadedModel):
    for key in ("dim", "L", "vocab_size", "vocab"):
        if a.meta[key] != b.meta[key]:
            raise CompatibilityError(f"checkpoints disagree on {key}: {a.meta[key]!r} vs {b.meta[key]!r}")
    if not np.array_equal(a.table.matrix, b.table.matrix):
        raise CompatibilityError("checkpoints disagree on embedding.table")


# -- two-stage generation ------------------------------------------------------------------

def sample_embeddings(denoiser: DenoiserNet, sampler: SamplerConfig, n: int, L: int, d: int,
                      schedule: NoiseSchedule = NoiseSchedule()) -> np.ndarray:
    return sample(as_sampler_fn(denoiser), sampler, (n, L, d), schedule)


def decode_samples(decoder: ARDecoder, x0_hat: np.ndarray, temperature: float, seed: int) -> list[list[int]]:
    rows = decode(decoder, x0_hat.astype(np.float32), temperature=temperature, seed=seed)
    return [strip_special(r) for r in rows]


def evaluate(samples: list[list[int]], oracle: NGramLM) -> dict:
    kept = [s for s in samples if s]
    if len(kept) < len(samples):
        log.warning("dropping %d empty samples", len(samples) - len(kept))
    return {"div": ngram_diversity(kept), "gen_ppl_token_weighted": generative_ppl(kept, oracle),
            "n_samples": len(kept)}


def append_metrics(path, rows: list[dict]):
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_FIELDS, lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in METRIC_FIELDS})


def write_csv(path, fields: list[str], rows: list[dict]):
    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fields})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v
