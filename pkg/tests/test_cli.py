import csv
import json

import pytest
import yaml

from fogcost.cli import EXIT_INVALID, EXIT_MISSING, EXIT_OK, main
from fogcost.cost import closed_form_network_optimum
from fogcost.manifest import ExperimentManifest, ManifestError, load_manifest, profile_text
from fogcost.sweep import gain_vs_extremes


def _manifest(tmp_path, name="m.yaml", **changes):
    raw = yaml.safe_load(profile_text("desk"))
    raw.update(changes)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestManifest:
    def test_builtin_profiles(self):
        ref = load_manifest("paper")
        assert (ref.m0, ref.n0, ref.kappa, ref.tau) == (400, 112, 518, 54)
        assert len(ref.epsilon) == 6
        desk = load_manifest("desk")
        assert desk.m0 == 50 and desk.epsilon == [1e-2, 1e-3]

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ManifestError) as info:
            load_manifest(_manifest(tmp_path, bogus=1))
        assert info.value.key == "bogus"

    def test_bad_value(self, tmp_path):
        with pytest.raises(ManifestError, match="m0"):
            load_manifest(_manifest(tmp_path, m0="many"))

    def test_model_width(self, tmp_path):
        with pytest.raises(ManifestError, match="omega"):
            load_manifest(_manifest(tmp_path, omega=10))

    def test_infeasible_grid(self, tmp_path):
        with pytest.raises(ManifestError, match="gamma_grid"):
            load_manifest(_manifest(tmp_path, gamma_grid=[3]))

    def test_lambda_alias(self, tmp_path):
        assert load_manifest(_manifest(tmp_path, **{"lambda": 0.25})).lam == 0.25

    def test_defaults(self):
        assert ExperimentManifest().gammas() is None


class TestCurve:
    def test_reference_profile(self, tmp_path):
        assert main(["curve", "--manifest", "paper", "--out", str(tmp_path)]) == EXIT_OK
        files = sorted(p.name for p in tmp_path.glob("curve_eps*.csv"))
        assert files == [f"curve_eps1e-0{k}.csv" for k in range(2, 8)]
        rows = _rows(tmp_path / "curve_eps1e-05.csv")
        assert len(rows) == 400
        assert float(rows[0]["gamma"]) == 1.0 and float(rows[-1]["gamma"]) == 400.0
        assert (tmp_path / "manifest.yaml").read_text() == profile_text("paper")
        assert json.loads((tmp_path / "run.json").read_text())["command"] == "curve"

    def test_free_network_and_compute(self, tmp_path):
        path = _manifest(tmp_path, theta=0.0, mu=0.0)
        assert main(["curve", "--manifest", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
        for row in _rows(tmp_path / "o" / "curve_eps1e-02.csv"):
            assert float(row["cost_total"]) == 0.0


class TestOptimize:
    def test_network_only(self, tmp_path):
        path = tmp_path / "p.yaml"
        path.write_text(profile_text("paper").replace("mu: 1.0e-4", "mu: 0.0"))
        assert "mu: 0.0" in path.read_text()
        assert main(["optimize", "--manifest", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
        rec = json.loads((tmp_path / "o" / "optimize_eps1e-05.json").read_text())
        assert rec["numeric"]["gamma_hat"] == pytest.approx(3.88, abs=0.005)
        assert rec["relative_gap"] < 1e-6
        m = load_manifest(path)
        assert rec["closed_form"]["gamma_unclamped"] == pytest.approx(closed_form_network_optimum(m.system_config(1e-5)))

    def test_lower_clamp_flag(self, tmp_path):
        path = _manifest(tmp_path, omega=54, d=54, epsilon=[1e-2], n0=5000.0)
        assert main(["optimize", "--manifest", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
        rec = json.loads((tmp_path / "o" / "optimize_eps1e-02.json").read_text())
        assert rec["numeric"]["gamma_hat"] == 1.0
        assert rec["numeric"]["clamped"] == "lower"

    def test_sensitivity_delegation(self, tmp_path):
        path = _manifest(tmp_path, sensitivity_axis="n0", sensitivity_values=[50, 100, 200])
        assert main(["optimize", "--manifest", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
        rows = _rows(tmp_path / "o" / "sensitivity_n0.csv")
        assert len(rows) == 9
        assert main(["sensitivity", "--manifest", str(path), "--out", str(tmp_path / "s")]) == EXIT_OK
        assert (tmp_path / "s" / "sensitivity_n0.csv").read_text() == (tmp_path / "o" / "sensitivity_n0.csv").read_text()

    def test_sensitivity_needs_axis(self, tmp_path):
        assert main(["sensitivity", "--manifest", "desk", "--out", str(tmp_path)]) == EXIT_INVALID


class TestExitCodes:
    def test_invalid_manifest(self, tmp_path, capsys):
        assert main(["curve", "--manifest", str(_manifest(tmp_path, bogus=1)), "--out", str(tmp_path / "o")]) == EXIT_INVALID
        assert "bogus" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path):
        assert main(["curve", "--manifest", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "o")]) == EXIT_MISSING

    def test_missing_dataset_before_compute(self, tmp_path):
        path = _manifest(tmp_path, dataset=str(tmp_path / "absent.csv"))
        out = tmp_path / "o"
        assert main(["sweep", "--manifest", str(path), "--out", str(out)]) == EXIT_MISSING
        assert not out.exists()

    def test_reference_sweep_needs_long(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["sweep", "--manifest", "paper", "--out", str(out)]) == EXIT_INVALID
        assert "--long" in capsys.readouterr().err
        assert not out.exists()


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory, synthetic_csv):
    root = tmp_path_factory.mktemp("runs")
    path = _manifest(
        root, m0=20, n0=50.0, kappa=173.9, epsilon=[1e-2], replications=2, dataset=str(synthetic_csv),
    )
    assert main(["sweep", "--manifest", str(path), "--out", str(root / "sweep")]) == EXIT_OK
    assert main(["optimize", "--manifest", str(path), "--out", str(root / "model")]) == EXIT_OK
    assert main(["report", "--sweep", str(root / "sweep"), "--model", str(root / "model"), "--out", str(root / "report")]) == EXIT_OK
    return root, path


class TestSweepAndReport:
    def test_artifacts(self, small_runs):
        root, _ = small_runs
        names = {p.name for p in (root / "sweep").iterdir()}
        assert {"sweep_eps1e-02.csv", "summary_eps1e-02.json", "plot_eps1e-02.dat", "summary.json", "manifest.yaml", "run.json"} <= names
        assert len(_rows(root / "sweep" / "sweep_eps1e-02.csv")) == 20

    def test_report_tables(self, small_runs):
        root, _ = small_runs
        comp = _rows(root / "report" / "comparison.csv")
        assert list(comp[0]) == ["epsilon", "gamma_star", "gamma_hat", "rounds_star", "rounds_hat", "cost_star", "cost_hat", "overhead_pct"]
        assert float(comp[0]["overhead_pct"]) >= 0

    def test_gains_match_library(self, small_runs):
        root, _ = small_runs
        gains = _rows(root / "report" / "gains.csv")[0]
        summary = json.loads((root / "sweep" / "summary_eps1e-02.json").read_text())
        assert float(gains["gain_vs_decentralised_pct"]) == pytest.approx(summary["gain_vs_decentralised_pct"])
        assert float(gains["gain_vs_centralised_pct"]) == pytest.approx(summary["gain_vs_centralised_pct"])

    def test_report_refuses_mismatched_runs(self, small_runs, capsys):
        root, path = small_runs
        other = root / "model_seed9"
        assert main(["optimize", "--manifest", str(path), "--out", str(other), "--seed", "9"]) == EXIT_OK
        code = main(["report", "--sweep", str(root / "sweep"), "--model", str(other), "--out", str(root / "r2")])
        assert code == EXIT_INVALID
        assert "seed" in capsys.readouterr().err


def test_gain_helper_used_by_summary(binary_data):
    from fogcost.cost import SystemConfig
    from fogcost.data import partition_poisson
    from fogcost.dsvrg import LearnerConfig
    from fogcost.sweep import sweep_gamma

    system = SystemConfig(m0=10, n0=50, kappa=100.0, epsilon=1e-2)
    res = sweep_gamma(binary_data, partition_poisson(binary_data, 10, 50, 0), system, LearnerConfig(omega=54, tau=54))
    assert gain_vs_extremes(res) == (res.gain_vs_decentralised_pct, res.gain_vs_centralised_pct)
