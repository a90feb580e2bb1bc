import csv
import math

import numpy as np
import pytest

from private_lasso_bandit.cli import main as cli_main
from private_lasso_bandit.dp_core import SvtConfig, svt_select
from private_lasso_bandit.harness import (
    ConfigError,
    ExperimentConfig,
    InsufficientTrials,
    accuracy_report,
    config_to_text,
    accuracy_slack,
    load_config,
    parse_config_text,
    privacy_probe,
    replication_seed,
    run_experiment,
)
from private_lasso_bandit.policy import EpisodeSnapshot

SMALL_CONFIG = """
# toy experiment
d = 10
s0 = 2
k = 2
theta_min = 0.3
c_theta = 1.0
sigma = 0.05
lambda0 = 0.2
epsilon = 1, inf
delta = 0.001
horizon = 16
s_tilde = 0.0001
wishart_k = 12
replications = 2
base_seed = 7
baselines = random
"""


class TestConfig:
    def test_parse_full(self):
        cfg = parse_config_text(SMALL_CONFIG)
        assert cfg.d == 10 and cfg.s0 == 2 and cfg.K == 2
        assert cfg.epsilons == (1.0, math.inf)
        assert cfg.horizon == 16 and cfg.t_requested == 16
        assert cfg.baselines == ("random",)
        assert cfg.wishart_k == 12

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("nonsense = 1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config_text("d = ten\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("d = 10\nd = 12\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="key=value"):
            parse_config_text("d 10\n")

    def test_horizon_padded_to_power_of_two(self):
        cfg = parse_config_text("horizon = 100\n")
        assert cfg.horizon == 128
        assert cfg.t_requested == 100

    def test_validation_errors(self):
        with pytest.raises(ConfigError):
            parse_config_text("d = 1\n")
        with pytest.raises(ConfigError):
            parse_config_text("epsilon = -1\n")
        with pytest.raises(ConfigError):
            parse_config_text("delta = 0\n")
        with pytest.raises(ConfigError):
            parse_config_text("baselines = thompson\n")
        with pytest.raises(ConfigError):
            parse_config_text("theta_min = 0.9\ns0 = 3\nc_theta = 1.0\n")

    def test_round_trip(self):
        cfg = parse_config_text(SMALL_CONFIG)
        assert parse_config_text(config_to_text(cfg)) == cfg

    def test_replication_seed_scheme(self):
        a = replication_seed(7, 0)
        b = replication_seed(7, 0)
        c = replication_seed(7, 1)
        assert a.entropy == b.entropy
        assert a.entropy != c.entropy


class TestRunExperiment:
    def test_single_round_single_replication(self, tmp_path):
        cfg = parse_config_text("horizon = 1\nreplications = 1\nepsilon = inf\n")
        paths = run_experiment(cfg, out_dir=tmp_path)
        with open(paths["trajectory.csv"]) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 2  # header + one data row
        assert rows[0][:4] == ["kind", "epsilon", "replication", "t"]

    def test_byte_identical_reruns(self, tmp_path):
        cfg = parse_config_text(SMALL_CONFIG)
        p1 = run_experiment(cfg, out_dir=tmp_path / "a")
        p2 = run_experiment(cfg, out_dir=tmp_path / "b")
        for name in p1:
            assert p1[name].read_bytes() == p2[name].read_bytes()

    def test_jobs_do_not_change_output(self, tmp_path):
        cfg = parse_config_text(SMALL_CONFIG)
        p1 = run_experiment(cfg, out_dir=tmp_path / "serial", jobs=1)
        p2 = run_experiment(cfg, out_dir=tmp_path / "pool", jobs=2)
        for name in p1:
            assert p1[name].read_bytes() == p2[name].read_bytes()

    def test_summary_schema_and_order(self, tmp_path):
        cfg = parse_config_text(SMALL_CONFIG)
        paths = run_experiment(cfg, out_dir=tmp_path)
        with open(paths["summary.csv"]) as fh:
            rows = list(csv.DictReader(fh))
        private = [r for r in rows if r["kind"] == "private"]
        assert [r["epsilon"] for r in private] == ["1", "inf"]
        kinds = [r["kind"] for r in rows]
        assert kinds == sorted(kinds, key=lambda k: k != "private")
        for row in rows:
            assert int(row["replications"]) == 2

    def test_support_and_accuracy_schemas(self, tmp_path):
        cfg = parse_config_text(SMALL_CONFIG)
        paths = run_experiment(cfg, out_dir=tmp_path)
        with open(paths["support.csv"]) as fh:
            header = next(csv.reader(fh))
        assert header == [
            "kind", "epsilon", "replication", "episode", "t_start",
            "support_size", "contained", "extra",
        ]
        with open(paths["accuracy.csv"]) as fh:
            rows = list(csv.DictReader(fh))
        assert rows, "accuracy.csv should have per-episode rows"
        for row in rows:
            assert 0.0 <= float(row["violation_rate"]) <= 1.0

    def test_float_formatting_17_digits(self, tmp_path):
        cfg = parse_config_text("horizon = 4\nreplications = 1\nepsilon = inf\nsigma = 0.1\n")
        paths = run_experiment(cfg, out_dir=tmp_path)
        with open(paths["trajectory.csv"]) as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            value = float(row["reward"])
            assert row["reward"] == format(value, ".17g")

    def test_env_var_overrides_out_dir(self, tmp_path, monkeypatch):
        target = tmp_path / "from_env"
        monkeypatch.setenv("PRIVATE_LASSO_BANDIT_OUT", str(target))
        cfg = parse_config_text("horizon = 2\nreplications = 1\nepsilon = inf\n")
        paths = run_experiment(cfg)
        assert paths["trajectory.csv"].parent == target


def _snapshot(values, threshold, selected):
    from private_lasso_bandit.dp_core import SupportEstimate

    return EpisodeSnapshot(
        episode=1,
        t=2,
        lambda_t=0.1,
        threshold=threshold,
        values=values,
        support=SupportEstimate(tuple(sorted(values)), tuple(selected)),
        theta_lasso=None,
        lasso_converged=True,
    )


class TestAccuracyReport:
    def test_zero_noise_exact(self):
        # Noiseless selection: chosen iff value > threshold.
        snaps = [
            _snapshot({0: 0.9, 1: 0.2}, 0.5, [0]),
            _snapshot({0: 0.51, 1: 0.499}, 0.5, [0]),
        ]
        report = accuracy_report(snaps, alpha=0.0)
        assert report.alpha_hat == 0.0
        assert report.violation_rate == 0.0

    def test_infinite_alpha_vacuous(self):
        snaps = [_snapshot({0: 0.1}, 0.5, [0])]  # badly misclassified
        report = accuracy_report(snaps, alpha=math.inf)
        assert report.violation_rate == 0.0
        assert report.alpha_hat == pytest.approx(0.4)

    def test_zero_alpha_with_noise_violates(self):
        # Real noisy selections near the threshold must misclassify.
        cfg = SvtConfig(
            eps_prime=1.0, xi=0.5, gamma=1.0, cap=5, s_bar=2.0, s_under=1.5
        )
        rng = np.random.default_rng(0)
        snaps = []
        for _ in range(100):
            values = {0: 0.5, 1: 0.49}
            est = svt_select(values, 0.5, cfg, rng)
            snaps.append(_snapshot(values, 0.5, est.s1_selected))
        report = accuracy_report(snaps, alpha=0.0)
        assert report.violation_rate > 0.0

    def test_accuracy_slack(self):
        assert accuracy_slack(math.inf, 1e-3, 512, 3, 8.0, 4.0) == 0.0
        val = accuracy_slack(1.0, 1e-3, 512, 3, 8.0, 4.0)
        expected = 128 * 8.0 * math.log(1000) * math.log(2 * 512 * 3**1.5 * 4.0 * 8.0)
        assert val == pytest.approx(expected, rel=1e-12)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            accuracy_report([], alpha=-0.1)


class TestPrivacyProbe:
    def test_laplace_scalar_recovers_epsilon(self):
        rng = np.random.default_rng(0)
        res = privacy_probe("laplace-scalar", 1.0, 200_000, rng, target_epsilon=1.0)
        assert 0.85 <= res.eps_hat <= 1.15
        assert res.passed

    def test_zero_gap_indistinguishable(self):
        rng = np.random.default_rng(1)
        res = privacy_probe("laplace-scalar", 0.0, 100_000, rng, target_epsilon=1.0)
        assert res.eps_hat <= 4.0 * res.stderr + 1e-3

    def test_insufficient_trials(self):
        rng = np.random.default_rng(2)
        with pytest.raises(InsufficientTrials):
            privacy_probe("laplace-scalar", 1.0, 2000, rng, target_epsilon=3.0)

    def test_svt_single_coordinate_within_budget(self):
        rng = np.random.default_rng(3)
        res = privacy_probe("svt-single-coordinate", 1.0, 50_000, rng)
        assert res.passed

    def test_unknown_mechanism(self):
        with pytest.raises(ValueError):
            privacy_probe("gaussian", 1.0, 10_000, np.random.default_rng(0))


class TestCli:
    def test_run_and_plot(self, tmp_path):
        config_path = tmp_path / "exp.cfg"
        config_path.write_text("horizon = 8\nreplications = 1\nepsilon = inf\n")
        out = tmp_path / "out"
        assert cli_main(["run", "--config", str(config_path), "--out", str(out)]) == 0
        assert (out / "trajectory.csv").exists()
        assert cli_main(["plot", "--in", str(out)]) == 0
        assert (out / "regret.png").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("d = 1\n")
        assert cli_main(["run", "--config", str(bad)]) == 2

    def test_missing_config_exit_code(self, tmp_path):
        assert cli_main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_io_error_exit_code(self, tmp_path):
        config_path = tmp_path / "exp.cfg"
        config_path.write_text("horizon = 2\nreplications = 1\nepsilon = inf\n")
        blocker = tmp_path / "blocked"
        blocker.write_text("file, not a directory")
        out = blocker / "sub"
        assert cli_main(["run", "--config", str(config_path), "--out", str(out)]) == 3

    def test_probe_command(self, capsys):
        assert cli_main(
            ["probe", "--mechanism", "laplace-scalar", "--trials", "50000", "--seed", "1"]
        ) == 0
        out = capsys.readouterr().out
        assert "eps_hat=" in out
