"""Training loops for the denoiser, the AR decoder and the linear-head baseline,
plus the token-recovery comparison between the two decoders."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .diffusion import (LossWeighting, NoiseSchedule, diffusion_loss, forward_diffuse,
                        sample_training_times, velocity_target)
from .metrics import recovery_rate
from .nets import (BOS, PAD, ARDecoder, DecoderConfig, DenoiserConfig, DenoiserNet,
                   EmbeddingTable, LinearHead, decode, embed)
from .optim import Adam, lr_at
from .seeding import derive_seed
from .tensor import no_grad

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    warmup_frac: float = 0.05
    schedule: str = "cosine"
    weight_decay: float = 0.1
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    seed: int = 0
    noise_aug_sigma: float = 0.1
    t_min: float = 1e-4
    weighting: str = "constant"
    snr_gamma: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.noise_aug_sigma < 0:
            raise ValueError("noise_aug_sigma must be >= 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


class BatchStream:
    """Seeded permutation of sequence order per epoch, consumed in contiguous batches."""

    def __init__(self, sequences: np.ndarray, batch_size: int, rng: np.random.Generator):
        if len(sequences) == 0:
            raise ValueError("empty corpus")
        self.seqs = np.asarray(sequences)
        self.bs = batch_size
        self.rng = rng
        self.order = rng.permutation(len(self.seqs))
        self.pos = 0

    def next(self) -> np.ndarray:
        idx = []
        while len(idx) < self.bs:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.seqs))
                self.pos = 0
            take = min(self.bs - len(idx), len(self.order) - self.pos)
            idx.extend(self.order[self.pos:self.pos + take])
            self.pos += take
        return self.seqs[np.array(idx)]


def _optimizer(model, cfg: TrainConfig) -> Adam:
    return Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                weight_decay=cfg.weight_decay, grad_clip_norm=cfg.grad_clip)


def _fit(model, cfg: TrainConfig, loss_fn, rng) -> list[dict]:
    opt = _optimizer(model, cfg)
    curve = []
    for step in range(cfg.steps):
        lr = lr_at(step, cfg.steps, cfg.lr, cfg.warmup_frac, cfg.schedule)
        opt.zero_grad()
        loss = loss_fn(rng)
        val = loss.item()
        if not math.isfinite(val):
            raise TrainingDiverged(step, val)
        T.backward(loss)
        opt.step(lr)
        curve.append({"step": step, "loss": val, "lr": lr})
        if step % 500 == 0:
            log.debug("step %d loss %.5f lr %.2e", step, val, lr)
    return curve


# -- diffusion ----------------------------------------------------------------------

def train_diffusion(sequences: np.ndarray, table: EmbeddingTable, model_cfg: DenoiserConfig,
                    cfg: TrainConfig, schedule: NoiseSchedule = NoiseSchedule(),
                    model: DenoiserNet | None = None):
    """Minimize the weighted v-prediction loss; returns (net, curve)."""
    rng = np.random.default_rng(cfg.seed)
    net = model or DenoiserNet(model_cfg, seed=derive_seed(cfg.seed, 1))
    stream = BatchStream(sequences, cfg.batch_size, rng)
    weighting = LossWeighting(cfg.weighting, cfg.snr_gamma)

    def loss_fn(rng):
        ids = stream.next()
        x0 = embed(ids, table).astype(np.float64)
        t = sample_training_times(rng, len(ids), cfg.t_min)
        eps = rng.standard_normal(x0.shape)
        x_t = forward_diffuse(x0, eps, t, schedule)
        v = velocity_target(x0, eps, t, schedule)
        v_hat = net(x_t.astype(np.float32), t)
        return diffusion_loss(v_hat, v.astype(np.float32), weighting, t, schedule)

    return net, _fit(net, cfg, loss_fn, rng)


# -- decoder ------------------------------------------------------------------------

def perturb(x0: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return x0
    return (x0 + sigma * rng.standard_normal(x0.shape)).astype(x0.dtype)


def teacher_inputs(ids: np.ndarray) -> np.ndarray:
    return np.concatenate([np.full((len(ids), 1), BOS), ids[:, :-1]], axis=1)


def decoder_loss(dec: ARDecoder, ids: np.ndarray, memory: np.ndarray):
    logits = dec(teacher_inputs(ids), memory)
    return T.cross_entropy(logits, ids, ignore_index=PAD if np.any(ids == PAD) else None)


def train_decoder(sequences: np.ndarray, table: EmbeddingTable, model_cfg: DecoderConfig,
                  cfg: TrainConfig, model: ARDecoder | None = None):
    """Teacher-forced cross-entropy on p(y_i | y_<i, E(y) + n), n ~ N(0, sigma^2 I)."""
    rng = np.random.default_rng(cfg.seed)
    dec = model or ARDecoder(model_cfg, seed=derive_seed(cfg.seed, 2))
    stream = BatchStream(sequences, cfg.batch_size, rng)

    def loss_fn(rng):
        ids = stream.next()
        mem = perturb(embed(ids, table), cfg.noise_aug_sigma, rng)
        return decoder_loss(dec, ids, mem)

    return dec, _fit(dec, cfg, loss_fn, rng)


def teacher_forced_accuracy(dec: ARDecoder, sequences: np.ndarray, memory: np.ndarray) -> float:
    with no_grad():
        logits = dec(teacher_inputs(sequences), memory).data
    return recovery_rate(logits.argmax(-1), sequences)


def decoder_recovery(dec: ARDecoder, sequences: np.ndarray, memory: np.ndarray,
                     batch: int = 256) -> float:
    """Free-running greedy decode; a position counts when the emitted token is right."""
    L = sequences.shape[1]
    preds = []
    for i in range(0, len(sequences), batch):
        for row in decode(dec, memory[i:i + batch], temperature=0.0, max_len=L):
            preds.append(row + [PAD] * (L - len(row)))
    return recovery_rate(np.array(preds), sequences)


# -- linear head ------------------------------------------------------------------------

def train_linear_head(sequences: np.ndarray, table: EmbeddingTable, cfg: TrainConfig,
                      sigma: float | None = None, model: LinearHead | None = None):
    """Position-wise cross-entropy on E(y) + n with the decoder's perturbation protocol."""
    sigma = cfg.noise_aug_sigma if sigma is None else sigma
    rng = np.random.default_rng(cfg.seed)
    head = model or LinearHead(table.dim, table.vocab_size, seed=derive_seed(cfg.seed, 3))
    stream = BatchStream(sequences, cfg.batch_size, rng)

    def loss_fn(rng):
        ids = stream.next()
        x = perturb(embed(ids, table), sigma, rng)
        return T.cross_entropy(head(x), ids)

    return head, _fit(head, cfg, loss_fn, rng)


def linear_recovery(head: LinearHead, sequences: np.ndarray, x: np.ndarray) -> float:
    with no_grad():
        pred = head(x).data.argmax(-1)
    return recovery_rate(pred, sequences)


# -- token recovery study ------------------------------------------------------------------

@dataclass(frozen=True)
class RecoveryConfig:
    sigma: float = 0.5
    seed: int = 0
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    decoder_train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000, batch_size=64))
    linear_train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=3000, batch_size=64,
                                                                          lr=1e-2, weight_decay=0.0))


def token_recovery_experiment(d_list, train: np.ndarray, heldout: np.ndarray, vocab_size: int,
                              cfg: RecoveryConfig) -> list[dict]:
    """For each d, train both decoders on perturbed embeddings; report held-out recovery.

    Rates are measured on perturbed held-out embeddings (the headline columns) and
    on clean ones (the ``*_clean`` columns).
    """
    d_list = [int(d) for d in d_list]
    if not d_list:
        raise ValueError("d_list is empty")
    L = train.shape[1]
    rows = []
    for k, d in enumerate(d_list):
        seed = derive_seed(cfg.seed, k)
        table = EmbeddingTable(vocab_size, d, seed=derive_seed(seed, 0))
        dcfg = replace(cfg.decoder, vocab_size=vocab_size, dim=d, max_len=max(cfg.decoder.max_len, L))
        dec, _ = train_decoder(train, table, dcfg,
                               replace(cfg.decoder_train, noise_aug_sigma=cfg.sigma, seed=derive_seed(seed, 1)))
        head, _ = train_linear_head(train, table, replace(cfg.linear_train, seed=derive_seed(seed, 2)),
                                    sigma=cfg.sigma)
        rng = np.random.default_rng(derive_seed(seed, 3))
        clean = embed(heldout, table)
        noisy = perturb(clean, cfg.sigma, rng)
        row = {
            "d": d,
            "linear_rate": linear_recovery(head, heldout, noisy),
            "ar_rate": decoder_recovery(dec, heldout, noisy),
            "linear_rate_clean": linear_recovery(head, heldout, clean),
            "ar_rate_clean": decoder_recovery(dec, heldout, clean),
        }
        log.info("recovery d=%d: %s", d, row)
        rows.append(row)
    return rows
