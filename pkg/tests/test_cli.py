import json

import pytest

from shelab.cli import main
from shelab.util import sha256_file


@pytest.fixture()
def sim_config(tmp_path):
    cfg = {
        "family": "nearest_neighbor", "dim": 1, "beta": 0.5,
        "epsilon": 0.25, "torus_n": 16, "sigma_kind": "linear",
        "sigma_lam": 1.0, "u0": "constant", "u0_value": 1.0,
        "dt": 1.0 / 256, "t_end": 0.25, "scheme": "splitting", "seed": 7,
        "output_times": [0.125, 0.25],
    }
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(cfg))
    return path


def run(args):
    return main([str(a) for a in args])


class TestSimulate:
    def test_outputs_and_manifest(self, sim_config, tmp_path):
        out = tmp_path / "run"
        assert run(["simulate", "--config", sim_config, "--out", out]) == 0
        for name in ("simulate_fields.csv", "simulate_stats.csv",
                     "simulate_summary.json", "simulate_final.png",
                     "simulate_manifest.json"):
            assert (out / name).exists()
        manifest = json.loads((out / "simulate_manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["config"]["beta"] == 0.5
        assert all("sha256" in o for o in manifest["outputs"])

    def test_same_seed_identical_sha256(self, sim_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["simulate", "--config", sim_config, "--out", a]) == 0
        assert run(["simulate", "--config", sim_config, "--out", b]) == 0
        assert sha256_file(a / "simulate_fields.csv") == \
            sha256_file(b / "simulate_fields.csv")

    def test_seed_flag_changes_output(self, sim_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["simulate", "--config", sim_config, "--out", a])
        run(["simulate", "--config", sim_config, "--out", b, "--seed", "8"])
        assert sha256_file(a / "simulate_fields.csv") != \
            sha256_file(b / "simulate_fields.csv")

    def test_no_figures_flag(self, sim_config, tmp_path):
        out = tmp_path / "run"
        run(["simulate", "--config", sim_config, "--out", out,
             "--no-figures"])
        assert not (out / "simulate_final.png").exists()
        assert (out / "simulate_fields.csv").exists()


class TestValidation:
    def test_missing_beta_names_key(self, sim_config, tmp_path, capsys):
        cfg = json.loads(sim_config.read_text())
        del cfg["beta"]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cfg))
        assert run(["simulate", "--config", bad, "--out", tmp_path / "o"]) == 2
        assert "beta" in capsys.readouterr().err

    def test_beta_domain_violation(self, sim_config, tmp_path):
        code = run(["simulate", "--config", sim_config,
                    "--out", tmp_path / "o", "--override", "beta=2.5"])
        assert code == 2

    def test_invalid_override_format(self, sim_config, tmp_path):
        assert run(["simulate", "--config", sim_config,
                    "--out", tmp_path / "o", "--override", "beta"]) == 2

    def test_numerical_failure_exit_code(self, sim_config, tmp_path):
        # torus far too small for the requested time: wrap mass leak
        code = run(["walk", "--config", sim_config, "--out", tmp_path / "o",
                    "--override", "t=50.0", "--override", "torus_n=9"])
        assert code == 3


class TestStudies:
    def test_llt_outputs(self, sim_config, tmp_path):
        out = tmp_path / "llt"
        code = run(["llt", "--config", sim_config, "--out", out,
                    "--override", "alpha=2.0",
                    "--override", "epsilons=[0.25,0.125]"])
        assert code == 0
        assert (out / "llt_errors.csv").exists()
        assert (out / "llt_summary.json").exists()

    def test_converge_assertion_pass_and_fail(self, sim_config, tmp_path):
        base = ["converge", "--config", sim_config,
                "--override", "epsilon_ladder=[0.25,0.125,0.0625]",
                "--override", "replicas=32",
                "--override", "sigma_lam=0.5"]
        assert run(base + ["--out", tmp_path / "ok",
                           "--override", "min_slope_fraction=0.5"]) == 0
        assert run(base + ["--out", tmp_path / "fail",
                           "--override", "min_slope_fraction=5.0"]) == 4

    def test_compare_path_assertion(self, sim_config, tmp_path):
        out = tmp_path / "cp"
        code = run(["compare-path", "--config", sim_config, "--out", out,
                    "--override", "replicas=8"])
        assert code == 0
        payload = json.loads((out / "compare_path.json").read_text())
        assert payload["violations"] == 0

    def test_compare_moment(self, sim_config, tmp_path):
        out = tmp_path / "cm"
        code = run(["compare-moment", "--config", sim_config, "--out", out,
                    "--override", "replicas=64",
                    "--override", "sigma2_kind=linear",
                    "--override", "sigma2_lam=0.5",
                    "--override", "times=[0.25]"])
        assert code == 0
        summary = json.loads((out / "compare_moment.json").read_text())
        assert summary["oracle_strict"] is True

    def test_lyapunov(self, sim_config, tmp_path):
        out = tmp_path / "ly"
        code = run(["lyapunov", "--config", sim_config, "--out", out,
                    "--override", "epsilon=1.0", "--override", "torus_n=8",
                    "--override", "dt=0.015625",
                    "--override", "lambdas=[0.0,1.0]"])
        assert code == 0
        assert (out / "lyapunov_rates.csv").exists()

    def test_kernel_and_noise_dumps(self, sim_config, tmp_path):
        assert run(["kernel", "--out", tmp_path / "k",
                    "--override", "alpha=2.0", "--override", "nu=0.5"]) == 0
        assert (tmp_path / "k" / "kernel_grid.csv").exists()
        assert run(["noise", "--config", sim_config,
                    "--out", tmp_path / "n",
                    "--override", "torus_n=63",
                    "--override", "epsilon=1.0"]) == 0
        header = (tmp_path / "n" / "noise_covariance.csv").read_text()
        assert header.startswith("offset,R")
