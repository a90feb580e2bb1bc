"""Synthetic sparse linear bandit environments.

Generates sparse ground-truth parameter vectors, per-round context sets
from symmetric bounded distributions, bounded-noise rewards, and the
regret bookkeeping against the oracle arm.  A small-dimension diagnostic
estimates the compatibility constant of a Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

CONTEXT_DISTS = ("uniform-sphere", "truncated-gaussian")


@dataclass(frozen=True, eq=False)
class BanditInstance:
    """Ground-truth problem: s0-sparse theta plus the bounding constants.

    Rewards are <x, theta> + eta with eta uniform on [-sqrt(3)*sigma,
    sqrt(3)*sigma] (variance sigma^2), so |reward| <= c_r holds
    deterministically with c_r = c_x * c_theta + sqrt(3) * sigma.
    """

    d: int
    s0: int
    K: int
    theta: np.ndarray
    support: tuple[int, ...]
    theta_min: float
    c_theta: float
    c_r: float
    c_x: float
    sigma: float
    context_dist: str
    seed: int | None = None

    def __post_init__(self):
        self.theta.setflags(write=False)


def generate_instance(
    d: int,
    s0: int,
    K: int,
    theta_min: float,
    c_theta: float,
    sigma: float,
    seed,
    *,
    c_x: float = 1.0,
    context_dist: str = "uniform-sphere",
) -> BanditInstance:
    """Draw an instance with ||theta||_0 = s0 and min |theta_i| = theta_min.

    The support is uniform without replacement; nonzero magnitudes are
    drawn in [theta_min, c_theta/sqrt(s0)] with the smallest pinned to
    exactly theta_min, so ||theta||_2 <= c_theta needs no rescaling.
    Deterministic given the seed.
    """
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if not 1 <= s0 <= d:
        raise ValueError(f"invalid dimensions: need 1 <= s0 <= d, got s0={s0}, d={d}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if theta_min <= 0:
        raise ValueError("theta_min must be positive")
    if theta_min * math.sqrt(s0) > c_theta * (1 + 1e-12):
        raise ValueError(
            f"invalid dimensions: theta_min*sqrt(s0)={theta_min * math.sqrt(s0):.6g} "
            f"exceeds c_theta={c_theta:.6g}"
        )
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if context_dist not in CONTEXT_DISTS:
        raise ValueError(f"unknown context_dist {context_dist!r}")

    rng = np.random.default_rng(seed)
    support = np.sort(rng.choice(d, size=s0, replace=False))
    headroom = c_theta / math.sqrt(s0) - theta_min
    u = rng.random(s0)
    u[np.argmin(u)] = 0.0
    magnitudes = theta_min + headroom * u
    signs = rng.choice([-1.0, 1.0], size=s0)
    theta = np.zeros(d)
    theta[support] = signs * magnitudes
    norm = np.linalg.norm(theta)
    if norm > c_theta:
        theta *= c_theta / norm
    return BanditInstance(
        d=d,
        s0=s0,
        K=K,
        theta=theta,
        support=tuple(int(i) for i in support),
        theta_min=float(theta_min),
        c_theta=float(c_theta),
        c_r=c_x * c_theta + math.sqrt(3.0) * sigma,
        c_x=float(c_x),
        sigma=float(sigma),
        context_dist=context_dist,
        seed=seed if isinstance(seed, int) else None,
    )


@dataclass(frozen=True)
class ContextSet:
    """K context vectors (rows) for one round."""

    vectors: np.ndarray
    round: int = 0


def sample_contexts(
    instance: BanditInstance, rng: np.random.Generator, round_index: int = 0
) -> ContextSet:
    """Draw K context vectors with every l2 norm (hence every sub-vector
    norm) bounded by c_x.

    uniform-sphere puts each vector exactly on the radius-c_x sphere;
    truncated-gaussian draws N(0, (c_x^2/d) I) and rescales any vector
    whose norm exceeds c_x back onto the sphere.  Both are symmetric
    under negation.
    """
    K, d, c_x = instance.K, instance.d, instance.c_x
    g = rng.standard_normal((K, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    if instance.context_dist == "uniform-sphere":
        x = c_x * g / norms
    else:
        x = g * (c_x / math.sqrt(d))
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        shrink = np.minimum(1.0, c_x / norms)
        x = x * shrink
    return ContextSet(vectors=x, round=round_index)


def reward(
    instance: BanditInstance, context_vector: np.ndarray, rng: np.random.Generator
) -> float:
    """<x, theta> plus bounded uniform noise of variance sigma^2."""
    half_width = math.sqrt(3.0) * instance.sigma
    eta = rng.uniform(-half_width, half_width)
    return float(context_vector @ instance.theta + eta)


def instant_regret(
    instance: BanditInstance, contexts: ContextSet, chosen_arm: int
) -> float:
    """max_k <x_k, theta> - <x_chosen, theta>; zero iff the chosen arm is
    optimal (ties count as optimal)."""
    if not 0 <= chosen_arm < instance.K:
        raise ValueError(f"chosen_arm {chosen_arm} outside [0, {instance.K})")
    means = contexts.vectors @ instance.theta
    return float(means.max() - means[chosen_arm])


@dataclass
class RegretLedger:
    """Per-round regret records plus episode start marks."""

    per_round: list = field(default_factory=list)
    episode_marks: list = field(default_factory=list)
    _cum: float = 0.0

    def record(self, t: int, arm: int, inst_regret: float) -> None:
        if inst_regret < 0:
            raise ValueError("instantaneous regret must be >= 0")
        self._cum += inst_regret
        self.per_round.append((t, arm, inst_regret, self._cum))

    def mark_episode(self, t: int) -> None:
        self.episode_marks.append(t)

    @property
    def cumulative(self) -> float:
        return self._cum


def compatibility_constant(
    gram_matrix: np.ndarray,
    support,
    rng: np.random.Generator | None = None,
    n_starts: int = 24,
) -> float:
    """Estimate the compatibility constant phi^2(M, S).

    phi^2(M, S) = min { x_S^T M x_S / ||x_S||_1^2 } over the cone
    ||x_{S^c}||_1 <= 3 ||x_S||_1, ||x_S||_1 != 0.  Since the objective
    depends only on x_S, the cone constraint is slack and the problem
    reduces to minimizing v^T M_SS v over the l1 unit sphere in |S|
    dimensions.  Each sign orthant gives a convex simplex QP; small
    supports are enumerated exhaustively, otherwise random sign patterns
    supply the multi-start.  Diagnostic scale only (d <= 30).
    """
    M = np.asarray(gram_matrix, dtype=float)
    d = M.shape[0]
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("gram matrix must be square")
    if d > 30:
        raise ValueError("compatibility diagnostic supports d <= 30 only")
    if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max())):
        raise ValueError("gram matrix must be symmetric")
    S = sorted(int(i) for i in support)
    if len(S) == 0:
        raise ValueError("degenerate support: S must be nonempty")
    if max(S) >= d or min(S) < 0:
        raise ValueError("support indices out of range")

    m = len(S)
    M_ss = M[np.ix_(S, S)]
    if rng is None:
        rng = np.random.default_rng(0)

    if m <= 10:
        # Fix the first sign by the v -> -v symmetry.
        patterns = [
            np.concatenate(([1.0], np.array(bits, dtype=float) * 2 - 1))
            for bits in np.ndindex(*([2] * (m - 1)))
        ]
    else:
        patterns = [np.ones(m)]
        for _ in range(n_starts):
            patterns.append(rng.choice([-1.0, 1.0], size=m))

    best = float(np.diag(M_ss).min())  # vertices of the l1 sphere
    cons = {"type": "eq", "fun": lambda v: v.sum() - 1.0}
    bounds = [(0.0, 1.0)] * m
    for sigma in patterns:
        Q = M_ss * np.outer(sigma, sigma)
        starts = [np.full(m, 1.0 / m)]
        starts.append(rng.dirichlet(np.ones(m)))
        for v0 in starts:
            res = optimize.minimize(
                lambda v: v @ Q @ v,
                v0,
                jac=lambda v: 2.0 * (Q @ v),
                method="SLSQP",
                bounds=bounds,
                constraints=cons,
                options={"maxiter": 200, "ftol": 1e-12},
            )
            if res.fun < best:
                best = float(res.fun)

    lam_max = float(np.linalg.eigvalsh(M).max())
    return float(min(max(best, 0.0), lam_max * m))
