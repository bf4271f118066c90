import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from lagdose.cli import main
from lagdose.io import load_panel, read_fit_report, read_mc_report


def _config(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    """simulate (reference design, seed 7) then fit lag 1 on the result."""
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root, {"dgp": {"n": 100, "T": 50}})
    assert main(["simulate", "--config", cfg, "--seed", "7", "--out", str(root / "sim")]) == 0
    assert main(["fit", "--config", cfg, "--panel", str(root / "sim" / "panel.csv"), "--out", str(root / "fit")]) == 0
    return root


class TestCommands:
    def test_simulate_writes_panel(self, simulated):
        p = load_panel(simulated / "sim" / "panel.csv")
        assert (p.n, p.T) == (100, 50)

    def test_fit_self_consistency(self, simulated):
        fits = read_fit_report(simulated / "fit")
        alpha, se = fits[1].estimate[0], fits[1].se[0]
        assert abs(alpha + 1) < 3 * se
        assert set(fits) == {1, "weighted"}
        assert (simulated / "fit" / "estimates.txt").exists()

    def test_deterministic(self, simulated, tmp_path):
        cfg = _config(tmp_path, {"dgp": {"n": 100, "T": 50}})
        main(["simulate", "--config", cfg, "--seed", "7", "--out", str(tmp_path)])
        assert (tmp_path / "panel.csv").read_bytes() == (simulated / "sim" / "panel.csv").read_bytes()

    def test_suggest(self, simulated, tmp_path):
        cfg = _config(tmp_path, {"dose_bounds": [0, 3], "eval_subjects": {"start": 90}})
        code = main(["suggest", "--config", cfg, "--panel", str(simulated / "sim" / "panel.csv"), "--out", str(tmp_path)])
        assert code == 0
        rows = _rows(tmp_path / "suggestions.csv")
        assert len(rows) == 10 * 51
        doses = [float(r["suggested_dose"]) for r in rows if r["suggested_dose"]]
        assert len(doses) == 10 * 50 and 0 <= min(doses) and max(doses) <= 3

    def test_suggest_from_saved_fit(self, simulated, tmp_path):
        cfg = _config(tmp_path, {"params_from": str(simulated / "fit")})
        panel = str(simulated / "sim" / "panel.csv")
        assert main(["suggest", "--config", cfg, "--panel", panel, "--out", str(tmp_path / "a")]) == 0
        assert main(["suggest", "--panel", panel, "--out", str(tmp_path / "b")]) == 0
        # refitting gives the same rule as reading it back
        a = (tmp_path / "a" / "suggestions.csv").read_text()
        assert a == (tmp_path / "b" / "suggestions.csv").read_text()

    def test_evaluate(self, simulated, tmp_path):
        code = main(["evaluate", "--panel", str(simulated / "sim" / "panel.csv"), "--out", str(tmp_path)])
        assert code == 0
        values = {r["metric"]: r["value"] for r in _rows(tmp_path / "evaluation.csv")}
        assert float(values["suggested_advantage"]) >= float(values["observed_advantage"])
        assert values["n_subjects"] == "100" and float(values["alpha"]) < 0
        assert "suggested doses" in (tmp_path / "evaluation.txt").read_text()

    def test_mc(self, tmp_path):
        cfg = _config(tmp_path, {"dgp": {"n": 40, "T": 8}, "lags": 2, "replicates": 3, "policy_test_size": 30})
        assert main(["mc", "--config", cfg, "--out", str(tmp_path)]) == 0
        report = read_mc_report(tmp_path)
        assert report.replicates == 3 and not report.failures
        assert len(report.rows) == 9

    def test_bin_glucose(self, tmp_path):
        cfg = _config(tmp_path, {"glucose": {"simulate_days": 3}})
        assert main(["bin-glucose", "--config", cfg, "--out", str(tmp_path / "g")]) == 0
        p = load_panel(tmp_path / "g" / "panel.csv")
        assert (p.n, p.T) == (3, 47)
        # re-binning the written streams reproduces the panel
        assert main(["bin-glucose", "--panel", str(tmp_path / "g" / "streams.csv"), "--out", str(tmp_path / "h")]) == 0
        assert (tmp_path / "h" / "panel.csv").read_text() == (tmp_path / "g" / "panel.csv").read_text()
        assert not (tmp_path / "h" / "streams.csv").exists()

    def test_prints_written_paths(self, tmp_path, capsys):
        cfg = _config(tmp_path, {"dgp": {"n": 5, "T": 3}})
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
        assert capsys.readouterr().out.strip() == str(tmp_path / "o" / "panel.csv")

    def test_console_script(self, tmp_path):
        exe = shutil.which("lagdose")
        cmd = [exe] if exe else [sys.executable, "-m", "lagdose.cli"]
        out = subprocess.run([*cmd, "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and "lagdose" in out.stdout


class TestErrors:
    def test_config_error(self, tmp_path, capsys):
        cfg = _config(tmp_path, {"lag": 3})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "extra" in capsys.readouterr().err.lower()
        assert not (tmp_path / "o").exists()

    def test_missing_panel_flag(self, tmp_path):
        assert main(["fit", "--out", str(tmp_path)]) == 2

    def test_bad_seed(self, tmp_path):
        assert main(["simulate", "--seed", "-3", "--out", str(tmp_path)]) == 2

    def test_data_error(self, tmp_path, capsys):
        (tmp_path / "p.csv").write_text("subject_id,t,x,dose,outcome\na,1,0,1,\na,3,0,,1\n")
        assert main(["fit", "--panel", str(tmp_path / "p.csv"), "--out", str(tmp_path / "o")]) == 3
        err = capsys.readouterr().err
        assert "lagdose fit: error:" in err and "subject 'a'" in err
        assert not (tmp_path / "o").exists()

    def test_no_finite_maximizer(self, simulated, tmp_path, capsys):
        fit_dir = tmp_path / "fit"
        shutil.copytree(simulated / "fit", fit_dir)
        path = fit_dir / "estimates.csv"
        rows = _rows(path)
        for r in rows:
            if r["lag"] == "weighted" and r["parameter"] == "alpha":
                r["estimate"] = "0.25"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        cfg = _config(tmp_path, {"params_from": str(fit_dir)})
        out = tmp_path / "out"
        code = main(["suggest", "--config", cfg, "--panel", str(simulated / "sim" / "panel.csv"), "--out", str(out)])
        assert code == 4
        assert "no finite maximizer" in capsys.readouterr().err
        assert not out.exists()

    def test_existing_out_dir_left_clean(self, simulated, tmp_path):
        out = tmp_path / "keep"
        out.mkdir()
        (out / "old.txt").write_text("x")
        cfg = _config(tmp_path, {"params_from": str(tmp_path / "missing")})
        code = main(["suggest", "--config", cfg, "--panel", str(simulated / "sim" / "panel.csv"), "--out", str(out)])
        assert code != 0
        assert sorted(p.name for p in out.iterdir()) == ["old.txt"]

    def test_param_mismatch(self, simulated, tmp_path, capsys):
        cfg = _config(tmp_path, {"params_from": str(simulated / "fit"), "features": {"entries": []}})
        code = main(["suggest", "--config", cfg, "--panel", str(simulated / "sim" / "panel.csv"), "--out", str(tmp_path)])
        assert code == 2
        assert "config implies" in capsys.readouterr().err

    def test_singular_fit(self, tmp_path):
        n, T = 6, 4
        lines = ["subject_id,t,x,dose,outcome"]
        rng = np.random.default_rng(0)
        for i in range(n):
            for t in range(1, T + 2):
                dose = "1.5" if t <= T else ""
                outcome = repr(rng.normal()) if t > 1 else ""
                lines.append(f"s{i},{t},{rng.normal()!r},{dose},{outcome}")
        (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
        assert main(["fit", "--panel", str(tmp_path / "p.csv"), "--out", str(tmp_path / "o")]) == 4
