"""Exact enumeration of the entropy identities behind pointwise vs. sequence decoding.

A joint law p(x, y) over L positions is a dense array with axes
(x_1, ..., x_L, y_1, ..., y_L); evidence symbols take A values, tokens K values.
All entropies are in nats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-12
CHECK_TOL = 1e-10
MAX_CELLS = 10 ** 7


class OracleError(ArithmeticError):
    """An identity that must hold exactly did not."""


@dataclass(frozen=True)
class JointDistribution:
    table: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.table, dtype=np.float64)
        if p.ndim % 2 or p.ndim == 0:
            raise ValueError(f"joint table needs 2L axes, got {p.ndim}")
        L = p.ndim // 2
        if len(set(p.shape[:L])) != 1 or len(set(p.shape[L:])) != 1:
            raise ValueError(f"evidence axes and token axes must each share one size, got {p.shape}")
        if p.size > MAX_CELLS:
            raise ValueError(f"joint table has {p.size} cells (limit {MAX_CELLS})")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("joint table has negative or non-finite entries")
        if abs(p.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"joint mass is {p.sum():.15f}, expected 1")
        object.__setattr__(self, "table", p)

    @property
    def L(self) -> int:
        return self.table.ndim // 2

    @property
    def A(self) -> int:
        return self.table.shape[0]

    @property
    def K(self) -> int:
        return self.table.shape[self.L]

    def flat(self) -> np.ndarray:
        """(A^L, K^L) matrix p[x, y]."""
        return self.table.reshape(self.A ** self.L, self.K ** self.L)

    def marginal(self, keep_x=(), keep_y=()) -> np.ndarray:
        """Marginal over the listed evidence and token positions (axes kept in that order)."""
        keep = list(keep_x) + [self.L + j for j in keep_y]
        drop = tuple(a for a in range(2 * self.L) if a not in keep)
        m = self.table.sum(axis=drop)
        kept_sorted = sorted(keep)
        return np.moveaxis(m, [kept_sorted.index(a) for a in keep], range(len(keep))) if keep else m


def random_joint(L: int, A: int, K: int, seed: int) -> JointDistribution:
    """Dirichlet(1) draw over the full (A^L x K^L) table."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(A ** L * K ** L)).reshape((A,) * L + (K,) * L)
    p /= p.sum()
    return JointDistribution(p)


def _xlogy_neg(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """-p log q with 0 log 0 = 0."""
    out = np.zeros_like(p)
    m = p > 0
    out[m] = -p[m] * np.log(q[m])
    return out


def _cond_entropy(pxy: np.ndarray) -> float:
    """H(Y|X) for a 2-D array p[x, y]."""
    px = pxy.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(px > 0, pxy / px, 0.0)
    return float(_xlogy_neg(pxy, cond).sum())


def cond_entropy_joint(joint: JointDistribution) -> float:
    return _cond_entropy(joint.flat())


def cond_entropy_marginal(joint: JointDistribution, i: int, scope: str = "local") -> float:
    """H(Y_i | X_i) for scope="local", H(Y_i | X) for scope="full"."""
    if not 0 <= i < joint.L:
        raise IndexError(f"position {i} out of range for L={joint.L}")
    if scope == "local":
        m = joint.marginal(keep_x=[i], keep_y=[i])
    elif scope == "full":
        m = joint.marginal(keep_x=range(joint.L), keep_y=[i]).reshape(-1, joint.K)
    else:
        raise ValueError(f"scope must be 'local' or 'full', got {scope!r}")
    return _cond_entropy(m)


def _token_marginals_given_x(joint: JointDistribution) -> tuple[np.ndarray, list[np.ndarray]]:
    """p(x) over flat x and, per position, p(y_i | x) as (A^L, K)."""
    pxy = joint.flat()
    px = pxy.sum(axis=1)
    conds = []
    for i in range(joint.L):
        m = joint.marginal(keep_x=range(joint.L), keep_y=[i]).reshape(-1, joint.K)
        with np.errstate(divide="ignore", invalid="ignore"):
            conds.append(np.where(px[:, None] > 0, m / px[:, None], 0.0))
    return px, conds


def _product_of_marginals(joint: JointDistribution, conds: list[np.ndarray]) -> np.ndarray:
    """prod_i p(y_i | x) laid out as (A^L, K^L)."""
    prod = conds[0]
    for c in conds[1:]:
        prod = (prod[:, :, None] * c[:, None, :]).reshape(prod.shape[0], -1)
    return prod


def total_correlation_kl(joint: JointDistribution) -> float:
    """E_x KL(p(y|x) || prod_i p(y_i|x))."""
    pxy = joint.flat()
    px, conds = _token_marginals_given_x(joint)
    prod = _product_of_marginals(joint, conds)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(px[:, None] > 0, pxy / px[:, None], 0.0)
    m = pxy > 0
    return float((pxy[m] * (np.log(cond[m]) - np.log(prod[m]))).sum())


def total_correlation_entropy(joint: JointDistribution) -> float:
    return sum(cond_entropy_marginal(joint, i, "full") for i in range(joint.L)) - cond_entropy_joint(joint)


def conditional_total_correlation(joint: JointDistribution, tol: float = CHECK_TOL) -> float:
    kl = total_correlation_kl(joint)
    ent = total_correlation_entropy(joint)
    if abs(kl - ent) > tol:
        raise OracleError(f"TC forms disagree: KL form {kl!r}, entropy form {ent!r}")
    return kl


# -- decoders and risk ------------------------------------------------------------

@dataclass(frozen=True)
class DecoderSpec:
    """kind="sequence": table q[x_flat, y_flat]; kind="pointwise": L tables q_i[x_i, y_i]."""

    kind: str
    tables: tuple

    def __post_init__(self):
        if self.kind not in ("pointwise", "sequence"):
            raise ValueError(f"unknown decoder kind {self.kind!r}")
        for q in self.tables:
            q = np.asarray(q)
            if np.any(q < 0) or np.any(np.abs(q.sum(axis=-1) - 1.0) > MASS_TOL):
                raise ValueError("decoder conditionals must be distributions over the token axis")


def bayes_decoder(joint: JointDistribution, kind: str) -> DecoderSpec:
    """q* = p(y|x) (sequence) or q_i* = p(y_i|x_i) (pointwise); uniform where p(x)=0."""

    def normalize(m):
        tot = m.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tot > 0, m / tot, 1.0 / m.shape[1])

    if kind == "sequence":
        return DecoderSpec("sequence", (normalize(joint.flat()),))
    if kind == "pointwise":
        return DecoderSpec("pointwise", tuple(normalize(joint.marginal([i], [i])) for i in range(joint.L)))
    raise ValueError(f"unknown decoder class {kind!r}")


def random_pointwise_decoder(joint: JointDistribution, rng: np.random.Generator) -> DecoderSpec:
    return DecoderSpec("pointwise", tuple(rng.dirichlet(np.ones(joint.K), size=joint.A) for _ in range(joint.L)))


def risk(joint: JointDistribution, decoder: DecoderSpec) -> float:
    """E_{(X,Y)~p}[-log q(Y|X)] evaluated cell by cell over the joint table."""
    L, A, K = joint.L, joint.A, joint.K
    if decoder.kind == "sequence":
        return float(_xlogy_neg(joint.flat(), decoder.tables[0]).sum())
    p = joint.table
    logq = np.zeros(p.shape)
    for i, q in enumerate(decoder.tables):
        shape = [1] * (2 * L)
        shape[i], shape[L + i] = A, K
        with np.errstate(divide="ignore"):
            logq = logq + np.log(np.asarray(q)).reshape(shape)
    m = p > 0
    return float(-(p[m] * logq[m]).sum())


def bayes_risk(joint: JointDistribution, decoder_class: str, tol: float = CHECK_TOL) -> float:
    """Risk of the explicit Bayes decoder, cross-checked against the entropy formula."""
    direct = risk(joint, bayes_decoder(joint, decoder_class))
    if decoder_class == "sequence":
        formula = cond_entropy_joint(joint)
    else:
        formula = sum(cond_entropy_marginal(joint, i, "local") for i in range(joint.L))
    if abs(direct - formula) > tol:
        raise OracleError(f"{decoder_class} Bayes risk {direct!r} != entropy formula {formula!r}")
    return direct


@dataclass(frozen=True)
class GapReport:
    h_joint: float
    sum_local: float
    sum_full: float
    tc: float
    locality_gap: float
    gap: float
    residual: float

    def quantities(self) -> dict:
        return {"H(Y|X)": self.h_joint, "sum H(Y_i|X_i)": self.sum_local, "TC": self.tc,
                "locality_gap": self.locality_gap, "gap": self.gap}


def optimality_gap(joint: JointDistribution, tol: float = CHECK_TOL, check: bool = True) -> GapReport:
    """Excess Bayes risk of pointwise over sequence decoding, with every identity checked.

    The gap is taken from the risks of the explicit Bayes decoders and compared
    with the entropy formula; with ``check=False`` failures are only reported
    through ``residual``.
    """
    r_pw = risk(joint, bayes_decoder(joint, "pointwise"))
    r_seq = risk(joint, bayes_decoder(joint, "sequence"))
    gap = r_pw - r_seq
    h = cond_entropy_joint(joint)
    sum_local = sum(cond_entropy_marginal(joint, i, "local") for i in range(joint.L))
    sum_full = sum(cond_entropy_marginal(joint, i, "full") for i in range(joint.L))
    tc_kl = total_correlation_kl(joint)
    tc = sum_full - h
    locality = sum_local - sum_full
    residuals = [
        abs(r_seq - h),                       # sequence Bayes risk = H(Y|X)
        abs(r_pw - sum_local),                # pointwise Bayes risk = sum H(Y_i|X_i)
        abs(gap - (sum_local - h)),           # gap equality via both routes
        abs(tc_kl - tc),                      # TC: KL form vs entropy form
        abs(gap - (tc + locality)),           # gap = TC + locality gap
        max(0.0, tc - gap),                   # gap >= TC
        max(0.0, -tc),                        # TC >= 0
        max(0.0, -locality),                  # locality gap >= 0
    ]
    rep = GapReport(h, sum_local, sum_full, tc, locality, gap, max(residuals))
    if check and rep.residual > tol:
        raise OracleError(f"optimality-gap check failed (residual {rep.residual:.3e}): {rep.quantities()}")
    return rep


# -- reference implementation (independent loop order) ---------------------------

def cond_entropy_loops(joint: JointDistribution) -> float:
    """H(Y|X) by explicit enumeration: outer loop over y, then x; p(x) accumulated first."""
    L, A, K = joint.L, joint.A, joint.K
    p = joint.table
    px = {}
    for x in itertools.product(range(A), repeat=L):
        px[x] = sum(p[x + y] for y in itertools.product(range(K), repeat=L))
    total = 0.0
    for y in itertools.product(range(K), repeat=L):
        for x in itertools.product(range(A), repeat=L):
            pj = p[x + y]
            if pj > 0:
                total -= pj * np.log(pj / px[x])
    return float(total)


# -- hand-built joints ----------------------------------------------------------------

def deterministic_joint(L: int, A: int, K: int, mapping) -> JointDistribution:
    """Uniform over x with y = mapping(x)."""
    p = np.zeros((A,) * L + (K,) * L)
    xs = list(itertools.product(range(A), repeat=L))
    for x in xs:
        p[tuple(x) + tuple(mapping(x))] += 1.0 / len(xs)
    return JointDistribution(p)


def hand_cases() -> dict[str, JointDistribution]:
    cases = {}
    # X uninformative, Y1 = Y2 uniform bit
    p = np.zeros((2, 2, 2, 2))
    for x1, x2, y in itertools.product(range(2), range(2), range(2)):
        p[x1, x2, y, y] = 0.125
    cases["copy_uninformative"] = JointDistribution(p)
    # Y uniform on {0,1}^2 independent of X
    cases["independent_uniform"] = JointDistribution(np.full((2, 2, 2, 2), 1 / 16))
    # X1 = Y2, X2 = Y1
    cases["cross_wired"] = deterministic_joint(2, 2, 2, lambda x: (x[1], x[0]))
    # X_i = Y_i exactly
    cases["identity"] = deterministic_joint(2, 2, 2, lambda x: x)
    # conditionally independent, fully local: Y_i noisy copy of X_i
    flip = np.array([[0.8, 0.2], [0.3, 0.7]])
    p = np.einsum("a,b,ac,bd->abcd", [0.5, 0.5], [0.4, 0.6], flip, flip)
    cases["local_independent"] = JointDistribution(p)
    return cases


def verification_sweep(trials: int, seed: int = 0, Ls=(2, 3), As=(2, 3), Ks=(2, 3),
                       tol: float = CHECK_TOL) -> list[dict]:
    """Randomized checks on random joints; each row carries the max identity residual."""
    from .seeding import derive_seed

    if trials < 0:
        raise ValueError(f"trials must be >= 0, got {trials}")
    rows = []
    rng = np.random.default_rng(seed)
    for k in range(trials):
        L, A, K = int(rng.choice(Ls)), int(rng.choice(As)), int(rng.choice(Ks))
        s = derive_seed(seed, k)
        rows.append(_row(f"random:{s}", s, random_joint(L, A, K, s), tol))
    return rows


def _row(name, seed, joint, tol):
    rep = optimality_gap(joint, tol, check=False)
    return {"case": name, "seed": seed, "L": joint.L, "A": joint.A, "K": joint.K,
            "H(Y|X)": rep.h_joint, "sum_H(Yi|Xi)": rep.sum_local, "TC": rep.tc,
            "locality_gap": rep.locality_gap, "gap": rep.gap, "max_residual": rep.residual}


def hand_case_rows(tol: float = CHECK_TOL) -> list[dict]:
    return [_row(f"hand:{name}", 0, j, tol) for name, j in hand_cases().items()]
