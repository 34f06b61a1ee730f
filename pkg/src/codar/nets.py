"""Networks: frozen embedding table, bidirectional denoiser, AR decoder, linear head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad

PAD, BOS, EOS = 0, 1, 2


class Module:
    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def to(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self


def _param(arr, dtype=np.float32) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None, zero: bool = False):
        std = 1.0 / math.sqrt(n_in) if std is None else std
        w = np.zeros((n_in, n_out)) if zero else rng.normal(0.0, std, (n_in, n_out))
        self.weight = _param(w)
        self.bias = _param(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = _param(np.ones(dim))
        self.shift = _param(np.zeros(dim))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.shift)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng):
        self.fc = Linear(dim, hidden, rng)
        self.proj = Linear(hidden, dim, rng, std=0.02)

    def __call__(self, x):
        return self.proj(T.gelu(self.fc(x)))


class Attention(Module):
    """Multi-head attention; self-attention when ``memory`` is None."""

    def __init__(self, dim: int, n_heads: int, rng, kv_dim: int | None = None):
        if dim % n_heads:
            raise ValueError(f"d_model {dim} not divisible by {n_heads} heads")
        kv_dim = dim if kv_dim is None else kv_dim
        self.n_heads = n_heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(kv_dim, dim, rng)
        self.v = Linear(kv_dim, dim, rng)
        self.out = Linear(dim, dim, rng, std=0.02)

    def _heads(self, x: Tensor) -> Tensor:
        B, L, D = x.shape
        return x.reshape(B, L, self.n_heads, D // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, memory: Tensor | None = None, mask: np.ndarray | None = None):
        src = x if memory is None else memory
        B, L, D = x.shape
        q, k, v = self._heads(self.q(x)), self._heads(self.k(src)), self._heads(self.v(src))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(D // self.n_heads))
        if mask is not None:
            scores = scores + Tensor(mask, dtype=scores.dtype)
        att = T.softmax(scores)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(B, L, D)
        return self.out(y)


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), -1e9), k=1)


# -- embedding table -------------------------------------------------------------

class EmbeddingTable:
    """Frozen random token embeddings.

    Rows are unit-normalized, then the whole table is scaled by one scalar so
    that the pooled per-coordinate standard deviation is exactly 1.
    """

    def __init__(self, vocab_size: int, dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        m = rng.standard_normal((vocab_size, dim))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        self.scale = float(1.0 / np.sqrt(m.var(axis=0).mean()))
        self.matrix = (m * self.scale).astype(np.float32)
        self.matrix.setflags(write=False)
        self.seed = seed

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, seed: int = 0) -> "EmbeddingTable":
        obj = cls.__new__(cls)
        obj.matrix = np.array(matrix, dtype=np.float32)
        obj.matrix.setflags(write=False)
        obj.scale = float("nan")
        obj.seed = seed
        return obj


def embed(tokens, table: EmbeddingTable) -> np.ndarray:
    ids = np.asarray(tokens)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("token ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        bad = ids[(ids < 0) | (ids >= table.vocab_size)][0]
        raise IndexError(f"token id {bad} out of range for vocabulary of {table.vocab_size}")
    return table.matrix[ids]


# -- denoiser --------------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserConfig:
    dim: int = 8
    max_len: int = 16
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    zero_init_output: bool = True


def timestep_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features of continuous t in [0, 1]; returns (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) * 1000.0
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    feats = np.concatenate([np.cos(ang), np.sin(ang)], axis=1)
    if dim % 2:
        feats = np.concatenate([feats, np.zeros((len(t), 1))], axis=1)
    return feats


class DenoiserBlock(Module):
    def __init__(self, cfg: DenoiserConfig, rng):
        D = cfg.d_model
        self.norm1 = LayerNorm(D)
        self.attn = Attention(D, cfg.n_heads, rng)
        self.norm2 = LayerNorm(D)
        self.mlp = MLP(D, cfg.d_ff, rng)
        self.modulation = Linear(D, 4 * D, rng, std=0.02)

    def __call__(self, h: Tensor, c: Tensor) -> Tensor:
        B, L, D = h.shape
        mod = self.modulation(c).reshape(B, 1, 4 * D)
        shift1, scale1 = mod[:, :, 0:D], mod[:, :, D:2 * D]
        shift2, scale2 = mod[:, :, 2 * D:3 * D], mod[:, :, 3 * D:]
        a = self.norm1(h)
        h = h + self.attn(a + T.mul(a, scale1) + shift1)
        m = self.norm2(h)
        return h + self.mlp(m + T.mul(m, scale2) + shift2)


class DenoiserNet(Module):
    """f(x_t, t) -> v_hat with full bidirectional self-attention."""

    def __init__(self, cfg: DenoiserConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        D = cfg.d_model
        self.inp = Linear(cfg.dim, D, rng)
        self.pos = _param(rng.normal(0.0, 0.02, (cfg.max_len, D)))
        self.time1 = Linear(D, D, rng)
        self.time2 = Linear(D, D, rng)
        self.blocks = [DenoiserBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(D)
        self.out = Linear(D, cfg.dim, rng, zero=cfg.zero_init_output)

    def __call__(self, x_t, t) -> Tensor:
        x = T._as_tensor(x_t, dtype=self.pos.dtype)
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[2] != self.cfg.dim:
            raise T.ShapeError(f"denoiser expects (B, L, {self.cfg.dim}) input, got {x_t.shape}")
        B, L, _ = x.shape
        if L > self.cfg.max_len:
            raise T.ShapeError(f"sequence length {L} exceeds max_len {self.cfg.max_len}")
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("t must lie in [0, 1]")
        if t.ndim == 0:
            t = np.full(B, float(t))
        feats = Tensor(timestep_features(t, self.cfg.d_model), dtype=self.pos.dtype)
        c = self.time2(T.gelu(self.time1(feats)))
        h = self.inp(x) + self.pos[0:L]
        for blk in self.blocks:
            h = blk(h, c)
        v = self.out(self.norm(h))
        return v.reshape(L, self.cfg.dim) if squeeze else v


def denoiser_forward(net: DenoiserNet, x_t, t) -> Tensor:
    return net(x_t, t)


def as_sampler_fn(net: DenoiserNet):
    """Wrap a network as a graph-free numpy callable for the samplers."""

    def f(x, t):
        with no_grad():
            return net(np.asarray(x, dtype=net.pos.dtype), t).data.astype(np.float64)

    return f


# -- AR decoder -------------------------------------------------------------------

@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int = 32
    dim: int = 8
    max_len: int = 16
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128


class DecoderBlock(Module):
    def __init__(self, cfg: DecoderConfig, rng):
        D = cfg.d_model
        self.norm1 = LayerNorm(D)
        self.self_attn = Attention(D, cfg.n_heads, rng)
        self.norm2 = LayerNorm(D)
        self.cross_attn = Attention(D, cfg.n_heads, rng)
        self.norm3 = LayerNorm(D)
        self.mlp = MLP(D, cfg.d_ff, rng)

    def __call__(self, h, memory, mask):
        h = h + self.self_attn(self.norm1(h), mask=mask)
        if memory is not None:
            h = h + self.cross_attn(self.norm2(h), memory=memory)
        return h + self.mlp(self.norm3(h))


class ARDecoder(Module):
    """Causal Transformer decoder cross-attending to an (L, d) embedding sequence."""

    def __init__(self, cfg: DecoderConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        D = cfg.d_model
        self.tok = _param(rng.normal(0.0, 0.02, (cfg.vocab_size, D)))
        self.pos = _param(rng.normal(0.0, 0.02, (cfg.max_len, D)))
        self.mem_in = Linear(cfg.dim, D, rng)
        self.mem_pos = _param(rng.normal(0.0, 0.02, (cfg.max_len, D)))
        self.mem_norm = LayerNorm(D)
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(D)
        self.head = Linear(D, cfg.vocab_size, rng, zero=True)

    def encode_memory(self, memory) -> Tensor:
        m = T._as_tensor(memory, dtype=self.pos.dtype)
        if m.ndim == 2:
            m = m.reshape(1, *m.shape)
        if m.ndim != 3 or m.shape[2] != self.cfg.dim:
            raise T.ShapeError(f"memory must be (B, L, {self.cfg.dim}), got {np.shape(memory)}")
        L = m.shape[1]
        if L > self.cfg.max_len:
            raise T.ShapeError(f"memory length {L} exceeds max_len {self.cfg.max_len}")
        return self.mem_norm(self.mem_in(m) + self.mem_pos[0:L])

    def __call__(self, tokens, memory=None) -> Tensor:
        """Logits (B, S, V) for inputs ``tokens`` (B, S) whose first column is BOS."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        B, S = tokens.shape
        if S > self.cfg.max_len:
            raise T.ShapeError(f"input length {S} exceeds max_len {self.cfg.max_len}")
        mem = None
        if memory is not None:
            mem = self.encode_memory(memory)
            if mem.shape[0] != B:
                raise T.ShapeError(f"batch mismatch: tokens {tokens.shape}, memory {mem.shape}")
        h = T.embedding(self.tok, tokens) + self.pos[0:S]
        mask = causal_mask(S)
        for blk in self.blocks:
            h = blk(h, mem, mask)
        return self.head(self.norm(h))


def decoder_logits(dec: ARDecoder, prefix, memory) -> np.ndarray:
    """Next-token logits given already-emitted tokens ``prefix`` (BOS implied)."""
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.ndim == 1:
        prefix = prefix[None]
    if prefix.shape[1] >= dec.cfg.max_len:
        raise ValueError(f"prefix length {prefix.shape[1]} must be < max_len {dec.cfg.max_len}")
    inp = np.concatenate([np.full((prefix.shape[0], 1), BOS), prefix], axis=1)
    with no_grad():
        logits = dec(inp, memory).data[:, -1].astype(np.float64)
    return logits


def decode(dec: ARDecoder, memory, temperature: float = 0.0, seed: int = 0,
           max_len: int | None = None) -> list[list[int]]:
    """Greedy (T=0) or tempered ancestral decoding; each row stops at EOS."""
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    memory = np.asarray(memory)
    if memory.ndim == 2:
        memory = memory[None]
    B = memory.shape[0]
    max_len = dec.cfg.max_len if max_len is None else min(max_len, dec.cfg.max_len)
    rng = np.random.default_rng(seed)
    out = np.zeros((B, 0), dtype=np.int64)
    done = np.zeros(B, bool)
    with no_grad():
        mem = dec.encode_memory(memory)
        for _ in range(max_len):
            inp = np.concatenate([np.full((B, 1), BOS), out], axis=1)
            h = T.embedding(dec.tok, inp) + dec.pos[0:inp.shape[1]]
            mask = causal_mask(inp.shape[1])
            for blk in dec.blocks:
                h = blk(h, mem, mask)
            logits = dec.head(dec.norm(h)).data[:, -1].astype(np.float64)
            nxt = sample_from_logits(logits, temperature, rng)
            nxt = np.where(done, PAD, nxt)
            out = np.concatenate([out, nxt[:, None]], axis=1)
            done |= nxt == EOS
            if done.all():
                break
    seqs = []
    for row in out:
        row = list(int(x) for x in row)
        if EOS in row:
            row = row[:row.index(EOS)]
        seqs.append(row)
    return seqs


def sample_from_logits(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> np.ndarray:
    if temperature == 0:
        return logits.argmax(axis=-1)
    if np.isinf(temperature):
        return rng.integers(0, logits.shape[-1], size=logits.shape[:-1])
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    u = rng.random(p.shape[:-1])
    idx = (np.cumsum(p, axis=-1) < u[..., None]).sum(axis=-1)
    return np.minimum(idx, logits.shape[-1] - 1)


# -- linear head ------------------------------------------------------------------

class LinearHead(Module):
    """Position-wise affine map d -> |V|."""

    def __init__(self, dim: int, vocab_size: int, seed: int = 0, zero: bool = False):
        rng = np.random.default_rng(seed)
        self.proj = Linear(dim, vocab_size, rng, std=0.0 if zero else None, zero=zero)

    @property
    def weight(self):
        return self.proj.weight

    @property
    def bias(self):
        return self.proj.bias

    def __call__(self, x) -> Tensor:
        x = T._as_tensor(x, dtype=self.proj.weight.dtype)
        if x.shape[-1] != self.proj.weight.shape[0]:
            raise T.ShapeError(f"linear head expects last dim {self.proj.weight.shape[0]}, got {x.shape}")
        return self.proj(x)


def linear_head_predict(head: LinearHead, x) -> np.ndarray:
    with no_grad():
        return head(x).data
