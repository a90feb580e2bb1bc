"""Experiment orchestration, metrics, privacy probes, and CSV emission.

Configuration is a flat key=value text file (# comments, blank lines
ignored).  One experiment runs R replications of the policy for each
epsilon in a sweep, plus any configured baselines, all on a shared
per-replication seed set, and writes four CSV artifacts:

  trajectory.csv  kind,epsilon,replication,t,arm,reward,inst_regret,
                  cum_regret,episode,support_size
  summary.csv     kind,epsilon,replications,mean_regret,stderr_regret
  support.csv     kind,epsilon,replication,episode,t_start,support_size,
                  contained,extra
  accuracy.csv    kind,epsilon,episode,t_start,alpha,alpha_hat,
                  violation_rate,replications

Floats are emitted with 17 significant digits; outputs are byte-identical
for identical (config, seed).  Replication r draws all randomness from
SeedSequence((base_seed, r)), shared across the epsilon sweep and the
baselines so comparisons are paired.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dp_core import SvtConfig, laplace, split_budget, svt_select
from .environment import generate_instance, CONTEXT_DISTS
from .policy import (
    BASELINE_KINDS,
    PolicyConfig,
    Trajectory,
    baseline_run,
    run,
)

ENV_OUT_DIR = "PRIVATE_LASSO_BANDIT_OUT"

CSV_FILES = ("trajectory.csv", "summary.csv", "support.csv", "accuracy.csv")


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class InsufficientTrials(RuntimeError):
    """A probe event saw fewer than 100 occurrences."""


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment parameters (see module docstring for file
    format).  epsilons may mix finite values with inf; horizon is padded
    up to a power of two at load time (t_requested records the original).
    """

    d: int = 50
    s0: int = 3
    K: int = 2
    theta_min: float = 0.45
    c_theta: float = 1.0
    c_x: float = 1.0
    sigma: float = 0.05
    context_dist: str = "uniform-sphere"
    phi: float = 1.0
    lambda0: float = 0.2
    epsilons: tuple[float, ...] = (math.inf,)
    delta: float = 1e-3
    horizon: int = 256
    t_requested: int = 256
    gamma_floor: float = 1.0
    s_tilde: float = 1e-4
    wishart_k: int | None = None
    svt_resample: bool = True
    ridge: float | None = None
    replications: int = 1
    base_seed: int = 0
    baselines: tuple[str, ...] = ()
    out_dir: str | None = None

    def policy_config(self, epsilon: float) -> PolicyConfig:
        return PolicyConfig(
            epsilon=epsilon,
            delta=self.delta,
            lambda0=self.lambda0,
            phi=self.phi,
            gamma_floor=self.gamma_floor,
            s_tilde=self.s_tilde,
            wishart_k=self.wishart_k,
            svt_resample=self.svt_resample,
            ridge=self.ridge,
        )


_CONFIG_KEYS = {
    "d": int,
    "s0": int,
    "k": int,
    "theta_min": float,
    "c_theta": float,
    "c_x": float,
    "sigma": float,
    "context_dist": str,
    "phi": float,
    "lambda0": float,
    "epsilon": str,
    "delta": float,
    "horizon": int,
    "gamma_floor": float,
    "s_tilde": float,
    "wishart_k": int,
    "svt_resample": str,
    "ridge": float,
    "replications": int,
    "base_seed": int,
    "baselines": str,
    "out_dir": str,
}


def parse_config_text(text: str) -> ExperimentConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            raw[key] = _CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc

    kwargs = {}
    for name, target in [
        ("d", "d"), ("s0", "s0"), ("k", "K"), ("theta_min", "theta_min"),
        ("c_theta", "c_theta"), ("c_x", "c_x"), ("sigma", "sigma"),
        ("context_dist", "context_dist"), ("phi", "phi"), ("lambda0", "lambda0"),
        ("delta", "delta"), ("gamma_floor", "gamma_floor"), ("s_tilde", "s_tilde"),
        ("wishart_k", "wishart_k"), ("ridge", "ridge"),
        ("replications", "replications"), ("base_seed", "base_seed"),
        ("out_dir", "out_dir"),
    ]:
        if name in raw:
            kwargs[target] = raw[name]
    if "epsilon" in raw:
        eps = []
        for tok in raw["epsilon"].split(","):
            tok = tok.strip()
            if not tok:
                continue
            try:
                eps.append(math.inf if tok.lower() == "inf" else float(tok))
            except ValueError as exc:
                raise ConfigError(f"bad epsilon value {tok!r}") from exc
        kwargs["epsilons"] = tuple(eps)
    if "svt_resample" in raw:
        tok = raw["svt_resample"].strip().lower()
        if tok not in ("true", "false", "1", "0"):
            raise ConfigError(f"svt_resample must be true/false, got {tok!r}")
        kwargs["svt_resample"] = tok in ("true", "1")
    if "baselines" in raw:
        kinds = tuple(
            tok.strip() for tok in raw["baselines"].split(",") if tok.strip()
        )
        kwargs["baselines"] = kinds
    if "horizon" in raw:
        kwargs["horizon"] = raw["horizon"]
        kwargs["t_requested"] = raw["horizon"]
    return validate_config(ExperimentConfig(**kwargs))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.d < 2:
        raise ConfigError("d must be >= 2")
    if not 1 <= cfg.s0 <= cfg.d:
        raise ConfigError("need 1 <= s0 <= d")
    if cfg.K < 1:
        raise ConfigError("k must be >= 1")
    if cfg.theta_min <= 0 or cfg.theta_min * math.sqrt(cfg.s0) > cfg.c_theta * (1 + 1e-12):
        raise ConfigError("need 0 < theta_min and theta_min*sqrt(s0) <= c_theta")
    if cfg.sigma < 0 or cfg.c_x <= 0 or cfg.phi <= 0 or cfg.lambda0 < 0:
        raise ConfigError("sigma >= 0, c_x > 0, phi > 0, lambda0 >= 0 required")
    if cfg.context_dist not in CONTEXT_DISTS:
        raise ConfigError(f"context_dist must be one of {CONTEXT_DISTS}")
    if not cfg.epsilons or any(e <= 0 for e in cfg.epsilons):
        raise ConfigError("epsilon list must be nonempty and positive")
    if not 0 < cfg.delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if cfg.horizon < 1:
        raise ConfigError("horizon must be >= 1")
    if cfg.replications < 1:
        raise ConfigError("replications must be >= 1")
    if cfg.s_tilde < 0:
        raise ConfigError("s_tilde must be >= 0")
    for kind in cfg.baselines:
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {kind!r}")
    padded = _next_pow2(cfg.horizon)
    if padded != cfg.horizon:
        cfg = replace(cfg, horizon=padded)
    return cfg


def config_to_text(cfg: ExperimentConfig) -> str:
    """Serialize back to the flat key=value format (round-trippable)."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if f.name == "epsilons":
            key, value = "epsilon", ",".join(
                "inf" if math.isinf(e) else _fmt(e) for e in value
            )
        elif f.name == "baselines":
            if not value:
                continue
            key, value = "baselines", ",".join(value)
        elif f.name == "K":
            key, value = "k", _fmt(value)
        elif f.name == "t_requested":
            continue
        else:
            key, value = f.name, _fmt(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def replication_seed(base_seed: int, rep: int) -> np.random.SeedSequence:
    """Counter-based scheme: replication r uses SeedSequence((base, r))."""
    return np.random.SeedSequence((base_seed, rep))


def accuracy_slack(
    epsilon: float, delta: float, horizon: int, s0: int, s_bar: float, s_under: float
) -> float:
    """Worst-case slack of the noisy threshold selection at budget
    (epsilon, delta): (128 s_bar / eps) ln(1/delta) ln(2 T s0^{3/2}
    s_under s_bar); 0 for infinite epsilon (no noise)."""
    if math.isinf(epsilon):
        return 0.0
    return (
        (128.0 * s_bar / epsilon)
        * math.log(1.0 / delta)
        * math.log(2.0 * horizon * s0**1.5 * s_under * s_bar)
    )


@dataclass
class AccuracyReport:
    """Threshold-accuracy aggregate over replications at one episode."""

    alpha: float
    alpha_hat: float
    violation_rate: float
    n_snapshots: int


def accuracy_report(snapshots, alpha: float) -> AccuracyReport:
    """Check threshold accuracy of the selections in the snapshots.

    For each snapshot, selected coordinates must have value >= threshold
    - alpha and unselected candidates value <= threshold + alpha;
    alpha_hat is the smallest slack that would make every snapshot pass,
    violation_rate the fraction of snapshots failing at the given alpha.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    alpha_hat = 0.0
    violations = 0
    n = 0
    for snap in snapshots:
        n += 1
        selected = set(snap.support.s1_selected)
        worst = 0.0
        for i, value in snap.values.items():
            if i in selected:
                worst = max(worst, snap.threshold - value)
            else:
                worst = max(worst, value - snap.threshold)
        alpha_hat = max(alpha_hat, worst)
        if worst > alpha:
            violations += 1
    rate = violations / n if n else 0.0
    return AccuracyReport(
        alpha=alpha, alpha_hat=alpha_hat, violation_rate=rate, n_snapshots=n
    )


# -- experiment driver ----------------------------------------------------


def _run_task(args) -> Trajectory:
    cfg, kind, epsilon, rep = args
    seed = replication_seed(cfg.base_seed, rep)
    instance_seed, run_seed = seed.spawn(2)
    instance = generate_instance(
        cfg.d,
        cfg.s0,
        cfg.K,
        cfg.theta_min,
        cfg.c_theta,
        cfg.sigma,
        instance_seed,
        c_x=cfg.c_x,
        context_dist=cfg.context_dist,
    )
    if kind == "private":
        return run(cfg.policy_config(epsilon), instance, cfg.horizon, run_seed)
    return baseline_run(
        kind, instance, cfg.horizon, run_seed, config=cfg.policy_config(math.inf)
    )


def resolve_out_dir(cfg: ExperimentConfig, out_dir=None) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    env = os.environ.get(ENV_OUT_DIR)
    if env:
        return Path(env)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return Path("out")


def run_experiment(
    cfg: ExperimentConfig, out_dir=None, jobs: int = 1
) -> dict[str, Path]:
    """Execute the configured runs and write the four CSV artifacts.

    Tasks are ordered (kind, epsilon, replication); workers only ever
    share the immutable config, and rows are written in task order, so
    output bytes do not depend on the job count.
    """
    out = resolve_out_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tasks = []
    for eps in sorted(cfg.epsilons):
        for rep in range(cfg.replications):
            tasks.append((cfg, "private", eps, rep))
    for kind in cfg.baselines:
        for rep in range(cfg.replications):
            tasks.append((cfg, kind, math.inf, rep))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        results = [_run_task(t) for t in tasks]

    paths = {name: out / name for name in CSV_FILES}
    totals: dict[tuple, list[float]] = {}
    support_rows = []
    accuracy_groups: dict[tuple, list] = {}

    with open(paths["trajectory.csv"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "kind", "epsilon", "replication", "t", "arm", "reward",
                "inst_regret", "cum_regret", "episode", "support_size",
            ]
        )
        for (task, traj) in zip(tasks, results):
            _, kind, eps, rep = task
            eps_s = _fmt(eps)
            for i in range(traj.horizon):
                writer.writerow(
                    [
                        kind, eps_s, rep, i + 1, int(traj.arms[i]),
                        _fmt(traj.rewards[i]), _fmt(traj.inst_regret[i]),
                        _fmt(traj.cum_regret[i]), int(traj.episodes[i]),
                        int(traj.support_sizes[i]),
                    ]
                )
            totals.setdefault((kind, eps), []).append(traj.total_regret)
            true_support = set(traj.instance_support)
            for snap in traj.snapshots:
                sel = set(snap.support.s1_selected)
                support_rows.append(
                    [
                        kind, eps_s, rep, snap.episode, snap.t, len(sel),
                        int(true_support <= sel), len(sel - true_support),
                    ]
                )
                accuracy_groups.setdefault((kind, eps, snap.episode, snap.t), []).append(snap)

    with open(paths["summary.csv"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "epsilon", "replications", "mean_regret", "stderr_regret"])
        for (kind, eps) in sorted(totals, key=lambda k: (k[0] != "private", k[1], k[0])):
            values = np.asarray(totals[(kind, eps)])
            stderr = (
                float(values.std(ddof=1) / math.sqrt(len(values)))
                if len(values) > 1
                else 0.0
            )
            writer.writerow(
                [kind, _fmt(eps), len(values), _fmt(values.mean()), _fmt(stderr)]
            )

    with open(paths["support.csv"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["kind", "epsilon", "replication", "episode", "t_start",
             "support_size", "contained", "extra"]
        )
        writer.writerows(support_rows)

    # One accuracy row per (kind, epsilon, episode), aggregated over reps.
    const_cfg = SvtConfig.from_budget(
        split_budget(1.0, cfg.delta, cfg.horizon),
        s0=cfg.s0,
        c_r=cfg.c_x * cfg.c_theta + math.sqrt(3.0) * cfg.sigma,
        c_x=cfg.c_x,
        phi=cfg.phi,
        c_theta=cfg.c_theta,
        d=cfg.d,
        gamma_floor=cfg.gamma_floor,
    )
    with open(paths["accuracy.csv"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["kind", "epsilon", "episode", "t_start", "alpha", "alpha_hat",
             "violation_rate", "replications"]
        )
        for (kind, eps, episode, t_start) in sorted(
            accuracy_groups, key=lambda k: (k[0] != "private", k[1], k[0], k[2])
        ):
            snaps = accuracy_groups[(kind, eps, episode, t_start)]
            alpha = accuracy_slack(
                eps, cfg.delta, cfg.horizon, cfg.s0,
                const_cfg.s_bar, const_cfg.s_under,
            )
            report = accuracy_report(snaps, alpha)
            writer.writerow(
                [
                    kind, _fmt(eps), episode, t_start, _fmt(report.alpha),
                    _fmt(report.alpha_hat), _fmt(report.violation_rate),
                    report.n_snapshots,
                ]
            )

    return paths


# -- empirical privacy probes ----------------------------------------------


def _wilson(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    margin = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - margin), min(1.0, center + margin)


@dataclass
class ProbeResult:
    mechanism: str
    eps_hat: float
    stderr: float
    target_epsilon: float
    passed: bool
    n_trials: int
    events: list = field(default_factory=list)


def _event_eps(p_count: int, q_count: int, n: int):
    """Max |log ratio| over the event and its complement, with a
    delta-method standard error and Wilson bounds."""
    stats = []
    for a, b in ((p_count, q_count), (n - p_count, n - q_count)):
        if a < 100 or b < 100:
            raise InsufficientTrials(
                f"event count below 100 ({a} vs {b} of {n} trials)"
            )
        p, q = a / n, b / n
        eps = abs(math.log(p / q))
        se = math.sqrt((1 - p) / (n * p) + (1 - q) / (n * q))
        p_lo, p_hi = _wilson(a, n)
        q_lo, q_hi = _wilson(b, n)
        hi = max(abs(math.log(p_hi / q_lo)), abs(math.log(p_lo / q_hi)))
        stats.append((eps, se, hi))
    return stats


def privacy_probe(
    mechanism: str,
    neighboring_gap: float,
    n_trials: int,
    rng: np.random.Generator,
    *,
    target_epsilon: float = 1.0,
    svt_config: SvtConfig | None = None,
) -> ProbeResult:
    """Frequency-ratio estimate of the privacy loss on neighboring inputs.

    laplace-scalar: x + Lap(gap/target_epsilon) on inputs 0 vs gap, with a
    family of threshold events; the analytic worst-case ratio is exactly
    e^eps.  svt-single-coordinate: one-candidate svt_select on value maps
    differing by the gap, with the selection event; passes when eps_hat
    <= configured eps' + 3 stderr.
    """
    if n_trials < 1000:
        raise ValueError("n_trials too small to audit anything")
    if neighboring_gap < 0:
        raise ValueError("neighboring_gap must be >= 0")

    gap = neighboring_gap
    if mechanism == "laplace-scalar":
        scale = gap / target_epsilon if gap > 0 else 1.0 / target_epsilon
        a = rng.laplace(0.0, scale, size=n_trials)
        b = gap + rng.laplace(0.0, scale, size=n_trials)
        thresholds = np.linspace(-2.0, 3.0, 11) * (gap if gap > 0 else scale)
        eps_hat, stderr, events = 0.0, 0.0, []
        for tau in thresholds:
            p_count = int((a > tau).sum())
            q_count = int((b > tau).sum())
            for eps, se, hi in _event_eps(p_count, q_count, n_trials):
                events.append((float(tau), eps, se, hi))
                if eps > eps_hat:
                    eps_hat, stderr = eps, se
        target = target_epsilon
    elif mechanism == "svt-single-coordinate":
        if svt_config is None:
            budget = split_budget(target_epsilon, 1e-3, 256)
            svt_config = SvtConfig.from_budget(
                budget, s0=1, c_r=1.0, c_x=1.0, phi=1.0, c_theta=1.0, d=2
            )
        threshold = gap / 2.0
        counts = [0, 0]
        for side, v in enumerate((0.0, gap)):
            values = {0: v}
            for _ in range(n_trials):
                est = svt_select(values, threshold, svt_config, rng)
                if est.s1_selected:
                    counts[side] += 1
        eps_hat, stderr, events = 0.0, 0.0, []
        for eps, se, hi in _event_eps(counts[0], counts[1], n_trials):
            events.append(("selected", eps, se, hi))
            if eps > eps_hat:
                eps_hat, stderr = eps, se
        target = svt_config.eps_prime
    else:
        raise ValueError(f"unknown probe mechanism {mechanism!r}")

    passed = bool(eps_hat <= target + 3.0 * stderr)
    return ProbeResult(
        mechanism=mechanism,
        eps_hat=eps_hat,
        stderr=stderr,
        target_epsilon=float(target),
        passed=passed,
        n_trials=n_trials,
        events=events,
    )
