"""Differential-privacy primitives and budget arithmetic.

This module holds the noise mechanisms (Laplace sampling, the
above-noisy-threshold selection loop used for private support estimation,
Wishart matrix noise for Gram perturbation) and the budget calculators
(the epsilon/delta split between the support-estimation and Gram-tree
subsystems, per-node allocations, advanced composition).

An infinite total epsilon is the supported "privacy off" switch: all
derived noise scales collapse to zero and every mechanism runs through
its normal code path producing exactly-zero noise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from scipy import stats

# Above this sample count a direct Gram of Gaussian draws is wasteful;
# sample the identical distribution through a Bartlett decomposition.
_DIRECT_WISHART_MAX_K = 4096


class BudgetError(ValueError):
    """Invalid privacy budget (nonpositive epsilon, delta outside (0, 1))."""


def _ceil_log2(horizon: int) -> int:
    # Horizon 1 is treated like horizon 2 so the split stays defined.
    return max(1, math.ceil(math.log2(max(1, horizon))))


@dataclass(frozen=True)
class PrivacyBudget:
    """Total (epsilon, delta) and its split between the two subsystems.

    eps1/delta1 fund the support-estimation selections, eps2/delta2 the
    Gram-tree node mechanisms:

        delta1 = delta2 = delta / (2 ceil(log2 T))
        eps1   = eps2   = epsilon / (2 ceil(log2 T) ln(1/delta2))
    """

    epsilon: float
    delta: float
    eps1: float
    delta1: float
    eps2: float
    delta2: float
    horizon: int


def split_budget(epsilon: float, delta: float, horizon: int) -> PrivacyBudget:
    if not epsilon > 0:
        raise BudgetError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise BudgetError(f"delta must lie in (0, 1), got {delta}")
    if horizon < 1:
        raise BudgetError(f"horizon must be >= 1, got {horizon}")
    log_t = _ceil_log2(horizon)
    delta_share = delta / (2 * log_t)
    eps_share = epsilon / (2 * log_t * math.log(1.0 / delta_share))
    return PrivacyBudget(
        epsilon=float(epsilon),
        delta=float(delta),
        eps1=eps_share,
        delta1=delta_share,
        eps2=eps_share,
        delta2=delta_share,
        horizon=int(horizon),
    )


def laplace(scale: float, rng: np.random.Generator) -> float:
    """One draw from Laplace(scale); scale 0 degenerates to exactly 0.0.

    The zero-scale case draws nothing from the generator, so disabling
    noise does not perturb downstream random streams.
    """
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    if scale == 0.0:
        return 0.0
    return float(rng.laplace(0.0, scale))


@dataclass(frozen=True)
class SvtConfig:
    """Parameters of the noisy-threshold support selection.

    eps_prime is the per-coordinate budget, xi the threshold-noise scale
    (value noise uses 2*xi), gamma the threshold multiplier, cap the hard
    limit on the number of selected coordinates.  s_bar and s_under are
    the support-size constants 1 + 4*C_r*C_x*sqrt(s0)/phi^2 and
    1 + 4*C_r*C_x/phi^2.
    """

    eps_prime: float
    xi: float
    gamma: float
    cap: int
    s_bar: float
    s_under: float
    resample_threshold: bool = True

    @classmethod
    def from_budget(
        cls,
        budget: PrivacyBudget,
        *,
        s0: int,
        c_r: float,
        c_x: float,
        phi: float,
        c_theta: float,
        d: int,
        gamma_floor: float = 1.0,
        resample_threshold: bool = True,
    ) -> "SvtConfig":
        if phi <= 0:
            raise ValueError("phi must be positive")
        s_under = 1.0 + 4.0 * c_r * c_x / phi**2
        s_bar = 1.0 + 4.0 * c_r * c_x * math.sqrt(s0) / phi**2
        log_d1 = math.log(1.0 / budget.delta1)
        if math.isinf(budget.eps1):
            eps_prime = math.inf
            xi = 0.0
        else:
            eps_prime = budget.eps1 / math.sqrt(8.0 * s_bar * log_d1)
            xi = math.sqrt(32.0 * log_d1) / eps_prime
        # log((1-delta)/eps) is negative whenever eps > 1 - delta, so a
        # floor keeps the threshold multiplier usable.
        if xi == 0.0:
            noise_term = 0.0
        else:
            noise_term = xi * math.log((1.0 - budget.delta) / budget.epsilon)
        denom = math.sqrt(
            math.log(max(d, 2)) * math.log(max(budget.horizon, 2))
        )
        gamma = ((noise_term - c_theta) / denom - 1.0) / math.sqrt(s_bar)
        if gamma < gamma_floor:
            warnings.warn(
                f"threshold multiplier {gamma:.4g} below floor, "
                f"clamping to {gamma_floor}",
                RuntimeWarning,
                stacklevel=2,
            )
            gamma = gamma_floor
        cap = math.ceil(s0 + math.sqrt(s_bar))
        return cls(
            eps_prime=eps_prime,
            xi=xi,
            gamma=gamma,
            cap=cap,
            s_bar=s_bar,
            s_under=s_under,
            resample_threshold=resample_threshold,
        )


@dataclass(frozen=True)
class SupportEstimate:
    """Candidate set S0 and privately selected subset S1 (sorted tuples)."""

    s0_candidates: tuple[int, ...]
    s1_selected: tuple[int, ...]
    episode: int = -1
    cap_hit: bool = False

    def with_episode(self, episode: int) -> "SupportEstimate":
        return replace(self, episode=episode)


def svt_select(
    values: Mapping[int, float],
    base_threshold: float,
    config: SvtConfig,
    rng: np.random.Generator,
) -> SupportEstimate:
    """Noisy-threshold selection over candidate coordinates.

    Coordinates are visited in ascending index order.  Each visit draws
    threshold noise Lap(xi) and value noise Lap(2*xi); index i is selected
    when values[i] + value_noise exceeds base_threshold + threshold_noise.
    Selection stops as soon as the cap is reached.  With
    resample_threshold=False the threshold noise is drawn once up front
    (the classical variant) instead of per coordinate.
    """
    order = sorted(values)
    selected: list[int] = []
    cap_hit = False
    zeta = 0.0
    if not config.resample_threshold:
        zeta = laplace(config.xi, rng)
    for i in order:
        if config.resample_threshold:
            zeta = laplace(config.xi, rng)
        nu = laplace(2.0 * config.xi, rng)
        if values[i] + nu > base_threshold + zeta:
            selected.append(i)
        if len(selected) >= config.cap:
            cap_hit = True
            break
    return SupportEstimate(
        s0_candidates=tuple(order),
        s1_selected=tuple(selected),
        cap_hit=cap_hit,
    )


@dataclass(frozen=True)
class WishartParams:
    """Per-node Wishart mechanism parameters for the Gram tree.

    The noise matrix is the Gram matrix of k iid N(0, scale*I_dim) draws.
    eps_node/delta_node record the per-node budget allocation; sigma_b is
    the empirically measured standard deviation of a query-noise entry
    (filled in after a run, 0.0 until then).
    """

    dim: int
    scale: float
    k: int
    eps_node: float
    delta_node: float
    sigma_b: float = 0.0

    @classmethod
    def from_budget(
        cls,
        budget: PrivacyBudget,
        dim: int,
        *,
        s_tilde: float = 1.0,
        k_override: int | None = None,
    ) -> "WishartParams":
        log_t = _ceil_log2(budget.horizon)
        delta_node = budget.delta2 / (2 * log_t)
        d = dim - 1
        if math.isinf(budget.eps2):
            eps_node = math.inf
            k_formula = 0
        else:
            eps_node = budget.eps2 / math.sqrt(
                8.0 * log_t * math.log(2.0 / budget.delta2)
            )
            k_formula = math.ceil(
                d
                * eps_node**-2
                * math.log(8.0 * d / delta_node)
                * math.log(2.0 / delta_node)
            )
        k = k_formula if k_override is None else int(k_override)
        k = max(k, dim)
        scale = 0.0 if math.isinf(budget.epsilon) else float(s_tilde)
        return cls(
            dim=dim, scale=scale, k=k, eps_node=eps_node, delta_node=delta_node
        )


def wishart_noise(params: WishartParams, rng: np.random.Generator) -> np.ndarray:
    """Sample the PSD noise matrix sum_{j<=k} v_j v_j^T, v_j ~ N(0, scale*I).

    Large k goes through a Bartlett decomposition (identical Wishart
    distribution, O(dim^2) draws).  The result is symmetrized by mirroring
    the upper triangle so it is bitwise symmetric.
    """
    dim, k = params.dim, params.k
    if params.scale == 0.0:
        return np.zeros((dim, dim))
    if k <= _DIRECT_WISHART_MAX_K or k < dim:
        v = rng.normal(0.0, math.sqrt(params.scale), size=(k, dim))
        w = v.T @ v
    else:
        w = stats.wishart.rvs(
            df=k, scale=params.scale * np.eye(dim), random_state=rng
        )
    upper = np.triu(w)
    return upper + np.triu(w, 1).T


def compose_advanced(
    eps: float, delta: float, k: int, delta_prime: float
) -> float:
    """Advanced-composition epsilon for k-fold adaptive composition.

    Returns sqrt(2 k ln(1/delta')) * eps + k * eps * (e^eps - 1); the
    composed mechanism is (eps', k*delta + delta')-DP.  `delta` is the
    per-mechanism delta and does not enter the epsilon value.
    """
    if eps < 0 or delta < 0 or delta_prime <= 0:
        raise ValueError("eps, delta must be >= 0 and delta_prime > 0")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if math.isinf(eps):
        return math.inf
    if eps == 0.0:
        return 0.0
    return math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) * eps + k * eps * (
        math.exp(eps) - 1.0
    )
