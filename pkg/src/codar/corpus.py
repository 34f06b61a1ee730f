"""Toy corpora with controllable sequential dependence, and a char tokenizer."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nets import BOS, EOS, PAD

N_SPECIAL = 3
_SPECIAL_NAMES = {PAD: "<pad>", BOS: "<bos>", EOS: "<eos>"}
# printable symbols for synthetic alphabets; extended with private-use code points past 94
_BASE_ALPHABET = string.ascii_lowercase + string.ascii_uppercase + string.digits + string.punctuation


class Tokenizer:
    """Character-level tokenizer with ids 0=PAD, 1=BOS, 2=EOS reserved."""

    def __init__(self, chars):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise ValueError("tokenizer alphabet has duplicate characters")
        self.chars = chars
        self.index = {c: i + N_SPECIAL for i, c in enumerate(chars)}

    @classmethod
    def from_text(cls, text: str) -> "Tokenizer":
        return cls(sorted(set(text)))

    @classmethod
    def synthetic(cls, n_symbols: int) -> "Tokenizer":
        return cls(synthetic_alphabet(n_symbols))

    @property
    def vocab_size(self) -> int:
        return len(self.chars) + N_SPECIAL

    def tokenize(self, text: str) -> list[int]:
        try:
            return [self.index[c] for c in text]
        except KeyError as e:
            raise KeyError(f"character {e.args[0]!r} not in vocabulary") from None

    def detokenize(self, ids, strip_special: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < N_SPECIAL:
                if not strip_special:
                    out.append(_SPECIAL_NAMES[i])
                continue
            out.append(self.chars[i - N_SPECIAL])
        return "".join(out)


def synthetic_alphabet(n: int) -> list[str]:
    if n <= len(_BASE_ALPHABET):
        return list(_BASE_ALPHABET[:n])
    return list(_BASE_ALPHABET) + [chr(0xE000 + i) for i in range(n - len(_BASE_ALPHABET))]


@dataclass
class CorpusSpec:
    kind: str = "markov"
    size: int = 1000
    L: int = 16
    seed: int = 0
    n_symbols: int = 16
    # markov: Dirichlet concentration of transition rows
    concentration: float = 0.3
    # agreement: positions i, i+stride, i+2*stride, ... (group_size of them) hold one token
    group_size: int = 2
    # arithmetic: operands drawn from [0, max_operand]
    max_operand: int = 49
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("markov", "agreement", "arithmetic", "textfile"):
            raise ValueError(f"unknown corpus kind {self.kind!r}")
        if self.L < 2 or self.size < 1:
            raise ValueError("corpus needs L >= 2 and size >= 1")


@dataclass
class Corpus:
    sequences: np.ndarray  # (N, L) int64
    tokenizer: Tokenizer
    meta: dict = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return self.tokenizer.vocab_size

    def __len__(self):
        return len(self.sequences)


def markov_transition_matrix(n: int, concentration: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x4D4B])
    return rng.dirichlet(np.full(n, concentration), size=n)


def generate_synthetic(spec: CorpusSpec) -> Corpus:
    if spec.kind == "markov":
        return _markov(spec)
    if spec.kind == "agreement":
        return _agreement(spec)
    if spec.kind == "arithmetic":
        return _arithmetic(spec)
    if spec.kind == "textfile":
        if spec.path is None:
            raise ValueError("textfile corpus needs a path")
        return ingest_text(spec.path, spec.L)
    raise ValueError(f"unknown corpus kind {spec.kind!r}")


def _markov(spec: CorpusSpec) -> Corpus:
    K = spec.n_symbols
    P = markov_transition_matrix(K, spec.concentration, spec.seed)
    cum = np.cumsum(P, axis=1)
    rng = np.random.default_rng([spec.seed, 1])
    seqs = np.empty((spec.size, spec.L), dtype=np.int64)
    state = rng.integers(0, K, spec.size)
    seqs[:, 0] = state
    u = rng.random((spec.size, spec.L))
    for j in range(1, spec.L):
        state = np.minimum((cum[state] < u[:, j:j + 1]).sum(axis=1), K - 1)
        seqs[:, j] = state
    return Corpus(seqs + N_SPECIAL, Tokenizer.synthetic(K), {"transition": P})


def agreement_groups(L: int, group_size: int) -> list[list[int]]:
    """Position groups tied to one token: stride = L // group_size."""
    if group_size < 1 or L % group_size:
        raise ValueError(f"L={L} must be a multiple of group_size={group_size}")
    stride = L // group_size
    return [[i + k * stride for k in range(group_size)] for i in range(stride)]


def _agreement(spec: CorpusSpec) -> Corpus:
    rng = np.random.default_rng([spec.seed, 2])
    groups = agreement_groups(spec.L, spec.group_size)
    stride = len(groups)
    free = rng.integers(0, spec.n_symbols, (spec.size, stride))
    seqs = np.tile(free, (1, spec.group_size)) + N_SPECIAL
    return Corpus(seqs.astype(np.int64), Tokenizer.synthetic(spec.n_symbols), {"groups": groups})


ARITH_CHARS = list("0123456789+=")


def _arithmetic(spec: CorpusSpec) -> Corpus:
    """BOS, then complete zero-padded "aa+bb=ccc" expressions separated by EOS, PAD tail."""
    tok = Tokenizer(ARITH_CHARS)
    w = len(str(spec.max_operand))
    width = 2 * w + 2 + len(str(2 * spec.max_operand))
    per_seq = (spec.L - 1) // (width + 1)
    if per_seq < 1:
        raise ValueError(f"L={spec.L} too short for one expression of width {width}")
    rng = np.random.default_rng([spec.seed, 3])
    seqs = np.full((spec.size, spec.L), PAD, dtype=np.int64)
    wc = len(str(2 * spec.max_operand))
    for n in range(spec.size):
        row = [BOS]
        for _ in range(per_seq):
            a, b = rng.integers(0, spec.max_operand + 1, 2)
            row += tok.tokenize(f"{a:0{w}d}+{b:0{w}d}={a + b:0{wc}d}") + [EOS]
        seqs[n, :len(row)] = row
    return Corpus(seqs, tok, {"per_sequence": per_seq})


def parse_arithmetic(seq, tok: Tokenizer) -> list[tuple[int, int, int]]:
    """Split a sequence into expressions and parse each; raises on malformed input."""
    text = []
    exprs = []
    for i in seq:
        i = int(i)
        if i in (BOS, PAD):
            continue
        if i == EOS:
            exprs.append("".join(text))
            text = []
        else:
            text.append(tok.detokenize([i]))
    if text:
        exprs.append("".join(text))
    out = []
    for e in exprs:
        lhs, c = e.split("=")
        a, b = lhs.split("+")
        out.append((int(a), int(b), int(c)))
    return out


def pack_documents(docs: list[list[int]], L: int) -> np.ndarray:
    """BOS, then each doc followed by EOS; cut into rows of L and PAD the last row."""
    stream: list[int] = [BOS]
    for d in docs:
        stream += list(d) + [EOS]
    n = max(1, -(-len(stream) // L))
    out = np.full((n, L), PAD, dtype=np.int64)
    flat = out.reshape(-1)
    flat[:len(stream)] = stream
    return out


def ingest_text(path, L: int, tokenizer: Tokenizer | None = None) -> Corpus:
    """Read UTF-8 text; each non-empty line is one document."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ValueError(f"{path}: empty text file")
    docs = [line for line in text.splitlines() if line]
    tok = tokenizer or Tokenizer.from_text("".join(docs))
    packed = pack_documents([tok.tokenize(d) for d in docs], L)
    return Corpus(packed, tok, {"path": str(path), "documents": len(docs)})


def split(sequences: np.ndarray, fractions=(0.9, 0.1), seed: int = 0):
    """Seeded disjoint (train, held-out) partition of the rows."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 2 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be two nonnegative numbers summing to 1, got {fractions}")
    n = len(sequences)
    perm = np.random.default_rng([seed, 4]).permutation(n)
    n_train = int(round(fractions[0] * n))
    return sequences[np.sort(perm[:n_train])], sequences[np.sort(perm[n_train:])]


def split_indices(n: int, fractions=(0.9, 0.1), seed: int = 0):
    idx = np.arange(n)
    return split(idx, fractions, seed)


# -- binary token format ---------------------------------------------------------

def save_tokens(path, sequences: np.ndarray):
    """u32 LE row count, u32 LE length, then row-major u32 LE ids."""
    seqs = np.asarray(sequences)
    header = np.array(seqs.shape, dtype="<u4")
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(seqs.astype("<u4").tobytes())


def load_tokens(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated token file")
    n, L = np.frombuffer(raw[:8], dtype="<u4")
    body = raw[8:]
    if len(body) != 4 * int(n) * int(L):
        raise ValueError(f"{path}: expected {n}x{L} ids, file holds {len(body) // 4}")
    return np.frombuffer(body, dtype="<u4").astype(np.int64).reshape(int(n), int(L))
