"""Episodic private thresholded-LASSO policy and reference baselines.

The decision loop maintains a private support estimate that is refreshed
only at the dyadic episode starts L = {1, 2, 4, ...}: a LASSO fit on the
raw history is hard-thresholded at 4*lambda_t into candidates S0, then a
noisy-threshold pass selects the published support S1.  Between updates
the support is frozen.  Every round the policy queries the noisy Gram
tree (free post-processing of cached node noise), solves the restricted
ridge regression, and plays the greedy arm.

Baselines share the same machinery: the non-private variant is the
identical code path with all noise scales zero, the oracle variant pins
the true support, and the random variant ignores estimates entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dp_core import (
    PrivacyBudget,
    SupportEstimate,
    SvtConfig,
    WishartParams,
    compose_advanced,
    split_budget,
    svt_select,
)
from .environment import (
    BanditInstance,
    ContextSet,
    RegretLedger,
    instant_regret,
    reward,
    sample_contexts,
)
from .gram_tree import NoisyGramTree, extract_regression
from .sparse_regression import RegressionProblem, lasso_fit, restricted_l2_fit

BASELINE_KINDS = ("nonprivate-threshold-lasso", "random", "oracle-support")


@dataclass(frozen=True)
class EpisodeSchedule:
    """Dyadic update set L = {2^(k-1) : k = 1..floor(log2 T)+1}."""

    horizon: int
    update_set: tuple[int, ...]

    @classmethod
    def for_horizon(cls, horizon: int) -> "EpisodeSchedule":
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        n = int(math.floor(math.log2(horizon))) + 1
        return cls(
            horizon=horizon, update_set=tuple(2 ** (k - 1) for k in range(1, n + 1))
        )

    def __contains__(self, t: int) -> bool:
        return t in self.update_set


def lambda_schedule(lambda0: float, t: int, d: int) -> float:
    """Penalty schedule lambda0 * sqrt(2 ln t ln d / t).

    log(1) = 0 would zero the first episode's threshold, so t = 1 uses
    the conservative substitute lambda0 * sqrt(2 ln d).
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if d < 2:
        raise ValueError("d must be >= 2")
    if t == 1:
        return lambda0 * math.sqrt(2.0 * math.log(d))
    return lambda0 * math.sqrt(2.0 * math.log(t) * math.log(d) / t)


@dataclass(frozen=True)
class PolicyConfig:
    """Tunable policy constants; epsilon=inf disables all noise."""

    epsilon: float
    delta: float
    lambda0: float = 0.2
    phi: float = 1.0
    gamma_floor: float = 1.0
    s_tilde: float = 1.0
    wishart_k: int | None = None
    svt_resample: bool = True
    ridge: float | None = None
    lasso_tol: float = 1e-6
    lasso_max_iters: int | None = None


@dataclass
class EpisodeSnapshot:
    """What the support refresh saw at one episode start."""

    episode: int
    t: int
    lambda_t: float
    threshold: float
    values: dict
    support: SupportEstimate
    theta_lasso: np.ndarray | None
    lasso_converged: bool


@dataclass
class BudgetReport:
    """Per-run privacy spend, composed with the configured splits.

    The support side composes its svt_invocations many (eps1, delta1)
    mechanisms with slack delta/4; the tree side composes the per-record
    node mechanisms (depth+1 of them) with slack delta2/4.  The two sides
    add by basic composition.
    """

    epsilon: float
    delta: float
    svt_invocations: int
    tree_nodes_per_record: int
    eps_sparse: float
    delta_sparse: float
    eps_tree: float
    delta_tree: float
    eps_spent: float
    delta_spent: float
    within_budget: bool


@dataclass
class Trajectory:
    """Full per-round record of one simulated run."""

    kind: str
    epsilon: float
    horizon: int
    arms: np.ndarray
    rewards: np.ndarray
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    episodes: np.ndarray
    support_sizes: np.ndarray
    snapshots: list
    budget_report: BudgetReport | None
    sigma_b: float
    instance_support: tuple[int, ...]
    theta_estimates: list | None = None

    @property
    def total_regret(self) -> float:
        return float(self.cum_regret[-1]) if len(self.cum_regret) else 0.0


@dataclass
class PolicyState:
    """Mutable state of one run of the decision loop."""

    instance: BanditInstance
    config: PolicyConfig
    schedule: EpisodeSchedule
    budget: PrivacyBudget
    svt_config: SvtConfig
    tree: NoisyGramTree
    mech_rng: np.random.Generator
    design_rows: list = field(default_factory=list)
    responses: list = field(default_factory=list)
    current_support: SupportEstimate = SupportEstimate((), (), episode=0)
    theta_hat: np.ndarray | None = None
    lambda_t: float = 0.0
    t: int = 0
    episode: int = 0
    svt_invocations: int = 0
    snapshots: list = field(default_factory=list)
    support_override: tuple[int, ...] | None = None
    _warm_theta: np.ndarray | None = None

    def __post_init__(self):
        if self.theta_hat is None:
            self.theta_hat = np.zeros(self.instance.d)


def sparse_estimation(
    design: np.ndarray,
    response: np.ndarray,
    lambda_t: float,
    config: SvtConfig,
    rng: np.random.Generator,
    *,
    c_theta: float = np.inf,
    tol: float = 1e-6,
    max_iters: int | None = None,
    warm_start: np.ndarray | None = None,
) -> SupportEstimate:
    """Two-step private support estimation on the raw history.

    Fits the LASSO, keeps candidates S0 = {i : |theta_i| > 4 lambda_t},
    then runs the noisy-threshold selection over the candidate magnitudes
    against the base threshold 4 * lambda_t * gamma * sqrt(s_bar).
    """
    est, _ = _sparse_estimation_detailed(
        design,
        response,
        lambda_t,
        config,
        rng,
        c_theta=c_theta,
        tol=tol,
        max_iters=max_iters,
        warm_start=warm_start,
    )
    return est


def _sparse_estimation_detailed(
    design,
    response,
    lambda_t,
    config: SvtConfig,
    rng,
    *,
    c_theta=np.inf,
    tol=1e-6,
    max_iters=None,
    warm_start=None,
):
    problem = RegressionProblem(design, response, lam=lambda_t, radius=c_theta)
    fit = lasso_fit(problem, tol=tol, max_iters=max_iters, warm_start=warm_start)
    magnitudes = np.abs(fit.theta)
    candidates = np.flatnonzero(magnitudes > 4.0 * lambda_t)
    values = {int(i): float(magnitudes[i]) for i in candidates}
    threshold = 4.0 * lambda_t * config.gamma * math.sqrt(config.s_bar)
    est = svt_select(values, threshold, config, rng)
    return est, (fit, values, threshold)


def _refresh_support(state: PolicyState, t: int) -> None:
    state.lambda_t = lambda_schedule(state.config.lambda0, t, state.instance.d)
    state.episode += 1
    threshold = 4.0 * state.lambda_t * state.svt_config.gamma * math.sqrt(
        state.svt_config.s_bar
    )
    if not state.design_rows:
        # Cold start: no observations yet, no mechanism to run.
        est = SupportEstimate((), (), episode=state.episode)
        snap = EpisodeSnapshot(
            episode=state.episode,
            t=t,
            lambda_t=state.lambda_t,
            threshold=threshold,
            values={},
            support=est,
            theta_lasso=None,
            lasso_converged=True,
        )
    else:
        Z = np.asarray(state.design_rows)
        y = np.asarray(state.responses)
        est, (fit, values, threshold) = _sparse_estimation_detailed(
            Z,
            y,
            state.lambda_t,
            state.svt_config,
            state.mech_rng,
            c_theta=state.instance.c_theta,
            tol=state.config.lasso_tol,
            max_iters=state.config.lasso_max_iters,
            warm_start=state._warm_theta,
        )
        state.svt_invocations += 1
        state._warm_theta = fit.theta
        est = est.with_episode(state.episode)
        snap = EpisodeSnapshot(
            episode=state.episode,
            t=t,
            lambda_t=state.lambda_t,
            threshold=threshold,
            values=values,
            support=est,
            theta_lasso=fit.theta,
            lasso_converged=fit.converged,
        )
    state.current_support = est
    state.snapshots.append(snap)


def step(
    state: PolicyState, contexts: ContextSet, env_rng: np.random.Generator
) -> int:
    """Advance one round: maybe refresh the support, estimate theta from
    the tree, play the greedy arm (ties to the lowest index), observe the
    reward, and feed the history structures.  Returns the chosen arm."""
    t = state.t + 1
    if t > state.schedule.horizon:
        raise RuntimeError("stepping past the configured horizon")
    if state.support_override is not None:
        if t == 1:
            state.episode = 1
            state.current_support = SupportEstimate(
                state.support_override, state.support_override, episode=1
            )
    elif t in state.schedule:
        _refresh_support(state, t)

    support = state.current_support.s1_selected
    if support and state.t >= 1:
        gram = state.tree.query_prefix(state.t)
        restricted = extract_regression(gram, support, count=state.t)
        state.theta_hat = restricted_l2_fit(
            restricted, state.instance.c_theta, ridge=state.config.ridge
        )
    else:
        state.theta_hat = np.zeros(state.instance.d)

    arm = int(np.argmax(contexts.vectors @ state.theta_hat))
    x = contexts.vectors[arm]
    r = reward(state.instance, x, env_rng)
    state.tree.insert(x, r)
    state.design_rows.append(x)
    state.responses.append(r)
    state.t = t
    return arm


def _budget_report(state: PolicyState) -> BudgetReport:
    budget = state.budget
    k_sp = state.svt_invocations
    if k_sp > 0:
        slack_sp = budget.delta / 4.0
        eps_sp = compose_advanced(budget.eps1, budget.delta1, k_sp, slack_sp)
        delta_sp = k_sp * budget.delta1 + slack_sp
    else:
        eps_sp, delta_sp = 0.0, 0.0
    k_nodes = state.tree.depth + 1
    if state.tree.count > 0:
        params = state.tree.params
        slack_tree = budget.delta2 / 4.0
        eps_tree = compose_advanced(
            params.eps_node, params.delta_node, k_nodes, slack_tree
        )
        delta_tree = k_nodes * params.delta_node + slack_tree
    else:
        eps_tree, delta_tree = 0.0, 0.0
    eps_spent = eps_sp + eps_tree
    delta_spent = delta_sp + delta_tree
    return BudgetReport(
        epsilon=budget.epsilon,
        delta=budget.delta,
        svt_invocations=k_sp,
        tree_nodes_per_record=k_nodes,
        eps_sparse=eps_sp,
        delta_sparse=delta_sp,
        eps_tree=eps_tree,
        delta_tree=delta_tree,
        eps_spent=eps_spent,
        delta_spent=delta_spent,
        within_budget=bool(eps_spent <= budget.epsilon and delta_spent <= budget.delta),
    )


def _make_state(
    config: PolicyConfig,
    instance: BanditInstance,
    horizon: int,
    mech_rng: np.random.Generator,
    tree_seed,
    support_override=None,
) -> PolicyState:
    budget = split_budget(config.epsilon, config.delta, max(horizon, 2))
    svt_config = SvtConfig.from_budget(
        budget,
        s0=instance.s0,
        c_r=instance.c_r,
        c_x=instance.c_x,
        phi=config.phi,
        c_theta=instance.c_theta,
        d=instance.d,
        gamma_floor=config.gamma_floor,
        resample_threshold=config.svt_resample,
    )
    params = WishartParams.from_budget(
        budget,
        instance.d + 1,
        s_tilde=config.s_tilde,
        k_override=config.wishart_k,
    )
    tree = NoisyGramTree(horizon, instance.d + 1, params, seed=tree_seed)
    return PolicyState(
        instance=instance,
        config=config,
        schedule=EpisodeSchedule.for_horizon(horizon),
        budget=budget,
        svt_config=svt_config,
        tree=tree,
        mech_rng=mech_rng,
        support_override=support_override,
    )


def _seed_streams(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, mech_ss, tree_ss = ss.spawn(3)
    return np.random.default_rng(env_ss), np.random.default_rng(mech_ss), tree_ss


def run(
    config: PolicyConfig,
    instance: BanditInstance,
    horizon: int,
    seed,
    *,
    kind: str = "private",
    support_override=None,
    collect_estimates: bool = False,
) -> Trajectory:
    """Simulate the policy over the horizon; deterministic given the seed.

    The seed spawns three independent streams: environment draws
    (contexts, reward noise), mechanism draws (threshold selection), and
    the tree noise seed, so disabling noise never shifts the environment.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    env_rng, mech_rng, tree_ss = _seed_streams(seed)
    state = _make_state(
        config, instance, horizon, mech_rng, tree_ss, support_override
    )
    ledger = RegretLedger()
    arms = np.zeros(horizon, dtype=np.int64)
    rewards = np.zeros(horizon)
    inst = np.zeros(horizon)
    episodes = np.zeros(horizon, dtype=np.int64)
    sizes = np.zeros(horizon, dtype=np.int64)
    estimates = [] if collect_estimates else None
    for t in range(1, horizon + 1):
        contexts = sample_contexts(instance, env_rng, t)
        arm = step(state, contexts, env_rng)
        regr = instant_regret(instance, contexts, arm)
        ledger.record(t, arm, regr)
        if state.episode > 0 and t in state.schedule:
            ledger.mark_episode(t)
        arms[t - 1] = arm
        rewards[t - 1] = state.responses[-1]
        inst[t - 1] = regr
        episodes[t - 1] = state.episode
        sizes[t - 1] = len(state.current_support.s1_selected)
        if collect_estimates:
            estimates.append(state.theta_hat.copy())
    sigma_b = 0.0
    if state.tree.count > 0 and state.tree.params.scale > 0.0:
        sigma_b = float(np.std(state.tree.query_noise(state.tree.count)))
    return Trajectory(
        kind=kind,
        epsilon=config.epsilon,
        horizon=horizon,
        arms=arms,
        rewards=rewards,
        inst_regret=inst,
        cum_regret=np.cumsum(inst),
        episodes=episodes,
        support_sizes=sizes,
        snapshots=state.snapshots,
        budget_report=_budget_report(state),
        sigma_b=sigma_b,
        instance_support=instance.support,
        theta_estimates=estimates,
    )


def baseline_run(
    kind: str,
    instance: BanditInstance,
    horizon: int,
    seed,
    config: PolicyConfig | None = None,
) -> Trajectory:
    """Reference policies sharing the trajectory contract.

    nonprivate-threshold-lasso: the private loop with infinite budget
    (all noise zero).  oracle-support: restricted regression on the true
    support, no estimation.  random: uniform arm choice.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}")
    if config is None:
        config = PolicyConfig(epsilon=math.inf, delta=1e-3)
    noise_free = PolicyConfig(
        epsilon=math.inf,
        delta=config.delta,
        lambda0=config.lambda0,
        phi=config.phi,
        gamma_floor=config.gamma_floor,
        s_tilde=config.s_tilde,
        wishart_k=config.wishart_k,
        svt_resample=config.svt_resample,
        ridge=config.ridge,
        lasso_tol=config.lasso_tol,
        lasso_max_iters=config.lasso_max_iters,
    )
    if kind == "nonprivate-threshold-lasso":
        return run(noise_free, instance, horizon, seed, kind=kind)
    if kind == "oracle-support":
        return run(
            noise_free,
            instance,
            horizon,
            seed,
            kind=kind,
            support_override=instance.support,
        )
    # random policy
    env_rng, mech_rng, _ = _seed_streams(seed)
    ledger = RegretLedger()
    arms = np.zeros(horizon, dtype=np.int64)
    rewards = np.zeros(horizon)
    inst = np.zeros(horizon)
    for t in range(1, horizon + 1):
        contexts = sample_contexts(instance, env_rng, t)
        arm = int(mech_rng.integers(instance.K))
        r = reward(instance, contexts.vectors[arm], env_rng)
        regr = instant_regret(instance, contexts, arm)
        ledger.record(t, arm, regr)
        arms[t - 1] = arm
        rewards[t - 1] = r
        inst[t - 1] = regr
    return Trajectory(
        kind=kind,
        epsilon=math.inf,
        horizon=horizon,
        arms=arms,
        rewards=rewards,
        inst_regret=inst,
        cum_regret=np.cumsum(inst),
        episodes=np.zeros(horizon, dtype=np.int64),
        support_sizes=np.zeros(horizon, dtype=np.int64),
        snapshots=[],
        budget_report=None,
        sigma_b=0.0,
        instance_support=instance.support,
    )
