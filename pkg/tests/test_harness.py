import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from waveconsensus import harness
from waveconsensus.cli import cli
from waveconsensus.errors import ConfigError

MINIMAL = json.dumps({
    "topology": {"adjacency": [[0, 1, 0], [1, 0, 1], [0, 1, 0]],
                 "leader_links": [1, 0, 0]},
    "gains": {"k1": 30.0, "k2": 10.0, "c0": 2.5},
})


class TestParseConfig:
    def test_minimal_defaults(self):
        config = harness.parse_config(MINIMAL)
        assert config.grid.nx == 201
        assert config.grid.courant == 0.9
        assert config.output.stride == 10
        assert config.disturbances.is_zero()
        assert config.horizon is None
        assert config.effective_regime() == "unperturbed"

    def test_round_trip_presets(self):
        for tid in (1, 2, 3):
            config = harness.test_preset(tid)
            assert harness.parse_config(harness.serialize_config(config)) == config

    def test_round_trip_with_horizon_and_overrides(self):
        doc = json.loads(MINIMAL)
        doc["horizon"] = 12.5
        doc["certificate"] = {"regime": "unperturbed", "rho1": 0.1, "rho2": 0.5}
        config = harness.parse_config(json.dumps(doc))
        assert config.horizon == 12.5
        assert harness.parse_config(harness.serialize_config(config)) == config

    def test_negative_horizon_names_field(self):
        doc = json.loads(MINIMAL)
        doc["horizon"] = -1.0
        with pytest.raises(ConfigError, match="horizon"):
            harness.parse_config(json.dumps(doc))

    def test_missing_gain_names_path(self):
        doc = json.loads(MINIMAL)
        del doc["gains"]["k1"]
        with pytest.raises(ConfigError, match="gains.k1"):
            harness.parse_config(json.dumps(doc))

    def test_follower_count_mismatch_names_path(self):
        doc = json.loads(MINIMAL)
        doc["initial_conditions"] = {"followers": [{}]}
        with pytest.raises(ConfigError, match="followers"):
            harness.parse_config(json.dumps(doc))

    def test_bad_profile_kind_names_path(self):
        doc = json.loads(MINIMAL)
        doc["initial_conditions"] = {
            "leader": {"displacement": {"kind": "wavelet"}}}
        with pytest.raises(ConfigError, match="displacement.kind"):
            harness.parse_config(json.dumps(doc))

    def test_invalid_json(self):
        with pytest.raises(ConfigError, match="JSON"):
            harness.parse_config("{nope")

    def test_invalid_topology_surfaces(self):
        doc = json.loads(MINIMAL)
        doc["topology"]["adjacency"] = [[0, 1, 0], [1, 0, 1], [1, 1, 0]]
        with pytest.raises(Exception, match="symmetric"):
            harness.parse_config(json.dumps(doc))


class TestPresets:
    def test_reference_setup(self, reference_matrix):
        config = harness.test_preset(1)
        topo = config.topology()
        from waveconsensus.graph import pinned_matrix

        assert np.array_equal(pinned_matrix(topo), reference_matrix)
        assert (config.gains.k1, config.gains.k2, config.gains.c0) == (30.0, 10.0, 2.5)
        assert config.leader_ic.displacement.amplitude == 10.0
        assert config.leader_ic.displacement.spatial_frequency == 2.0
        assert config.follower_ics[2].velocity.coefficients == (0.0, 3.0)
        assert config.disturbances.is_zero()

    def test_perturbed_presets_scale(self):
        c2 = harness.test_preset(2)
        c3 = harness.test_preset(3)
        assert c2.disturbances.psi0[0].amplitude == 10.0
        assert c3.disturbances.psi0[0].amplitude == 50.0
        assert c3.disturbances.f[0].temporal.amplitude == 50.0
        assert c2.effective_regime() == "perturbed"

    def test_unknown_test_id(self):
        with pytest.raises(ConfigError, match="test id"):
            harness.test_preset(9)

    def test_shipped_config_files_match_presets(self):
        root = os.path.join(os.path.dirname(__file__), "..", "configs")
        for tid in (1, 2, 3):
            with open(os.path.join(root, f"test{tid}.json"), encoding="utf-8") as fh:
                assert harness.parse_config(fh.read()) == harness.test_preset(tid)


class TestCheckGains:
    def test_reference_gains_feasible_both_regimes(self):
        res = harness.run_check_gains(harness.test_preset(1))
        assert res.exit_code == harness.EXIT_OK
        assert "[unperturbed] gain gate: PASS" in res.report
        assert "[perturbed] gain gate: PASS" in res.report

    def test_low_k1_infeasible(self):
        config = harness.parse_config(MINIMAL.replace('"k1": 30.0', '"k1": 1.0'))
        res = harness.run_check_gains(config)
        assert res.exit_code == harness.EXIT_INFEASIBLE

    def test_disconnected_graph_infeasible(self):
        doc = json.loads(MINIMAL)
        doc["topology"]["adjacency"] = [[0, 1, 0], [1, 0, 0], [0, 0, 0]]
        res = harness.run_check_gains(harness.parse_config(json.dumps(doc)))
        assert res.exit_code == harness.EXIT_INFEASIBLE
        assert "connected" in res.report


class TestCsv:
    def test_write_read_round_trip(self, tmp_path, path3_topology):
        config = harness.test_preset(1)
        config = harness.replace(config, horizon=1.0)
        series, cert = harness.run_experiment(config)
        path = tmp_path / "run.csv"
        harness.write_csv(path, series, cert)
        cols = harness.read_csv(path)
        assert cols["t"][0] == 0.0
        assert np.allclose(cols["V"], series.column("V"), rtol=0, atol=0)
        assert np.all(np.isnan(cols["iss_bound_conservative"]))
        assert np.isfinite(cols["bound_envelope"]).all()

    def test_empty_csv_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text(",".join(harness.CSV_COLUMNS) + "\n")
        with pytest.raises(ConfigError, match="no data rows"):
            harness.read_csv(path)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError, match="not a recognized"):
            harness.read_csv(path)

    def test_unsorted_time_rejected(self, tmp_path):
        path = tmp_path / "unsorted.csv"
        rows = [",".join(harness.CSV_COLUMNS)]
        for t in (0.0, 2.0, 1.0):
            rows.append(",".join([repr(t)] + ["0.0"] * 15))
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(ConfigError, match="increasing"):
            harness.read_csv(path)


class TestAnalyze:
    def test_decay_report_on_unperturbed_csv(self, tmp_path):
        config = harness.replace(harness.test_preset(1), horizon=5.0)
        series, cert = harness.run_experiment(config)
        path = tmp_path / "t1.csv"
        harness.write_csv(path, series, cert)
        res = harness.run_analyze([str(path)])
        assert res.exit_code == harness.EXIT_OK
        assert "decay fit" in res.report

    def test_missing_file_is_usage_error(self):
        res = harness.run_analyze(["/nonexistent/x.csv"])
        assert res.exit_code == harness.EXIT_USAGE

    def test_ratio_report(self, tmp_path):
        paths = []
        for scale in (1.0, 5.0):
            series = harness.analysis.TimeSeries(grid=None, gains=None,
                                                 certificate=None)
            for i in range(50):
                series.append(harness.analysis.FunctionalSample(
                    time=float(i), E=0.0, G1=0.0, G2=0.0, V=1.0, V0=1.0,
                    l2_error=scale * (1.0 + 0.01 * np.sin(i)),
                    h1_seminorm=0.0, ptwise_max_sq=0.0, boundary_err_sq=0.0))
            p = tmp_path / f"r{scale}.csv"
            harness.write_csv(p, series)
            paths.append(str(p))
        res = harness.run_analyze(paths)
        assert res.exit_code == harness.EXIT_OK
        assert "ratio" in res.report
        ratio = float(res.report.rsplit("=", 1)[1])
        assert ratio == pytest.approx(5.0, rel=1e-6)


class TestRunSimulate:
    def test_writes_csv_and_summary(self, tmp_path):
        config = harness.replace(harness.test_preset(1), horizon=2.0)
        res = harness.run_simulate(config, str(tmp_path))
        assert res.exit_code == harness.EXIT_OK
        assert os.path.exists(res.paths["csv"])


class TestCli:
    def test_usage_error_for_bad_test_id(self):
        runner = CliRunner()
        out = runner.invoke(cli, ["reproduce", "--test", "9"],
                            standalone_mode=False)
        assert out.exception is not None

    def test_main_exit_codes(self, tmp_path):
        from waveconsensus.cli import main

        cfg = tmp_path / "c.json"
        cfg.write_text(MINIMAL)
        with pytest.raises(SystemExit) as exc:
            main(["check-gains", "--config", str(cfg)])
        assert exc.value.code == harness.EXIT_OK
        with pytest.raises(SystemExit) as exc:
            main(["reproduce", "--test", "9", "--out", str(tmp_path)])
        assert exc.value.code == harness.EXIT_USAGE
        with pytest.raises(SystemExit) as exc:
            main(["analyze", str(tmp_path / "missing.csv")])
        assert exc.value.code == harness.EXIT_USAGE

    def test_env_var_out_dir(self, monkeypatch):
        monkeypatch.setenv(harness.ENV_OUT_DIR, "/tmp/somewhere")
        assert harness.default_out_dir(None) == "/tmp/somewhere"
        assert harness.default_out_dir("/explicit") == "/explicit"
