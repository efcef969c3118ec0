import json

import numpy as np
import pytest

from fracaffine.cli import main, parse_config, run


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, rows


BASE_MODEL = {
    "kind": "short_rate",
    "ell": 0.02,
    "u": 0.0,
    "v": 0.0,
    "measure": {"family": "fbm_mu", "H": 0.3},
}


class TestConfigParsing:
    def test_unknown_command(self):
        with pytest.raises(Exception, match="unknown command"):
            parse_config({"command": "frobnicate"})

    def test_missing_block_names_field(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"command": "simulate-fbm"})
        assert run(cfg) == 2
        assert "fbm" in capsys.readouterr().err

    def test_bad_json_exits_2(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert run(str(path)) == 2

    def test_missing_file_exits_2(self):
        assert run("/nonexistent/path.json") == 2

    def test_roundtrip_config_echo(self, tmp_path):
        out = tmp_path / "out.json"
        cfg = write_config(tmp_path, {
            "command": "price-zcb",
            "model": BASE_MODEL,
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 20},
            "maturities": [1.0],
            "output": str(out),
            "format": "json",
        })
        assert run(cfg, quiet=True) == 0
        payload = json.loads(out.read_text())
        echoed = parse_config(payload["config_echo"])
        assert echoed["command"] == "price-zcb"
        assert echoed["maturities"] == [1.0]


class TestPriceZcb:
    def test_deterministic_value(self, tmp_path):
        out = tmp_path / "prices.csv"
        cfg = write_config(tmp_path, {
            "command": "price-zcb",
            "model": BASE_MODEL,
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 20},
            "maturities": [5.0],
            "output": str(out),
        })
        assert run(cfg, quiet=True) == 0
        header, rows = read_csv(out)
        assert header == ["maturity", "price"]
        assert float(rows[0][1]) == pytest.approx(np.exp(-0.1), rel=1e-12)

    def test_seventeen_digit_floats(self, tmp_path):
        out = tmp_path / "prices.csv"
        cfg = write_config(tmp_path, {
            "command": "price-zcb",
            "model": BASE_MODEL,
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 20},
            "maturities": [5.0],
            "output": str(out),
        })
        run(cfg, quiet=True)
        _, rows = read_csv(out)
        assert float(rows[0][1]).hex() == np.exp(-0.1).hex()


class TestSimulateFbm:
    def _cfg(self, tmp_path, out, workers=1, seed=11):
        return write_config(tmp_path, {
            "command": "simulate-fbm",
            "fbm": {"H": 0.3, "w0": 0.0, "times": [0.0, 0.5, 1.0]},
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 30},
            "mc": {"n_paths": 8, "seed": seed, "workers": workers},
            "output": str(out),
        }, name=f"fbm{workers}-{seed}.json")

    def test_csv_layout(self, tmp_path):
        out = tmp_path / "fbm.csv"
        assert run(self._cfg(tmp_path, out), quiet=True) == 0
        header, rows = read_csv(out)
        assert header == ["path_id", "t", "value"]
        assert len(rows) == 8 * 3
        assert float(rows[0][2]) == 0.0

    def test_worker_determinism_bytes(self, tmp_path):
        out1 = tmp_path / "w1.csv"
        out8 = tmp_path / "w8.csv"
        run(self._cfg(tmp_path, out1, workers=1), quiet=True)
        run(self._cfg(tmp_path, out8, workers=8), quiet=True)
        assert out1.read_bytes() == out8.read_bytes()

    def test_seed_flag_changes_output(self, tmp_path):
        out1 = tmp_path / "s1.csv"
        out2 = tmp_path / "s2.csv"
        run(self._cfg(tmp_path, out1, seed=1), quiet=True)
        run(self._cfg(tmp_path, out2, seed=2), quiet=True)
        assert out1.read_bytes() != out2.read_bytes()


class TestOtherCommands:
    def test_fwd_curve(self, tmp_path):
        out = tmp_path / "fwd.csv"
        cfg = write_config(tmp_path, {
            "command": "fwd-curve",
            "model": BASE_MODEL,
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 20},
            "taus": [0.5, 1.0],
            "output": str(out),
        })
        assert run(cfg, quiet=True) == 0
        _, rows = read_csv(out)
        assert all(float(r[1]) == pytest.approx(0.02, rel=1e-12) for r in rows)

    def test_price_cap_legs(self, tmp_path):
        out = tmp_path / "cap.csv"
        cfg = write_config(tmp_path, {
            "command": "price-cap",
            "model": {**BASE_MODEL, "u": 0.2},
            "grid": {"x_min": 1e-2, "x_max": 1e2, "n": 10},
            "schedule": {"T0": 0.5, "delta": 0.5, "n": 2, "kappa": 0.02},
            "output": str(out),
        })
        assert run(cfg, quiet=True) == 0
        header, rows = read_csv(out)
        assert header == ["leg", "reset", "payment", "price"]
        legs = [float(r[3]) for r in rows[:-1]]
        total = float(rows[-1][3])
        assert total == pytest.approx(sum(legs), rel=1e-12)

    def test_stein_commands(self, tmp_path):
        sim_out = tmp_path / "stein.csv"
        cfg = write_config(tmp_path, {
            "command": "stein-sim",
            "stein": {"measure": {"family": "fbm_mu", "H": 0.3}, "v": 0.5,
                      "rho": -0.3, "s0": 1.0, "times": [0.0, 0.5, 1.0]},
            "grid": {"x_min": 1e-2, "x_max": 1e2, "n": 10},
            "mc": {"n_paths": 4, "seed": 0, "sub_steps": 2},
            "output": str(sim_out),
        }, name="ssim.json")
        assert run(cfg, quiet=True) == 0
        header, rows = read_csv(sim_out)
        assert header == ["path_id", "t", "log_price", "vol"]
        assert len(rows) == 12

        iv_out = tmp_path / "iv.json"
        cfg = write_config(tmp_path, {
            "command": "stein-iv",
            "stein": {"measure": {"family": "fbm_mu", "H": 0.3}, "v": 0.5,
                      "T": 1.0},
            "grid": {"x_min": 1e-2, "x_max": 1e2, "n": 10},
            "output": str(iv_out),
            "format": "json",
        }, name="siv.json")
        assert run(cfg, quiet=True) == 0
        payload = json.loads(iv_out.read_text())
        assert payload["mass_second_moment"] >= payload["mass_mean"] ** 2
        assert payload["mean"] == pytest.approx(payload["mass_mean"], rel=1e-12)

        cdf_out = tmp_path / "cdf.csv"
        cfg = write_config(tmp_path, {
            "command": "stein-cdf",
            "stein": {"measure": {"family": "fbm_mu", "H": 0.3}, "v": 0.5,
                      "rho": 0.0, "T": 1.0, "x_grid": [-1.0, 0.0, 1.0]},
            "grid": {"x_min": 1e-2, "x_max": 1e2, "n": 10},
            "mc": {"n_paths": 500, "seed": 0},
            "output": str(cdf_out),
        }, name="scdf.json")
        assert run(cfg, quiet=True) == 0
        _, rows = read_csv(cdf_out)
        vals = [float(r[1]) for r in rows]
        assert vals == sorted(vals)

    def test_stein_cdf_correlated_exits_3(self, tmp_path):
        cfg = write_config(tmp_path, {
            "command": "stein-cdf",
            "stein": {"measure": {"family": "fbm_mu", "H": 0.3}, "v": 0.5,
                      "rho": 0.4, "T": 1.0, "x_grid": [0.0]},
            "grid": {"x_min": 1e-2, "x_max": 1e2, "n": 10},
            "mc": {"n_paths": 100, "seed": 0},
        })
        assert run(cfg, quiet=True) == 3

    def test_affine_eval(self, tmp_path):
        out = tmp_path / "affine.json"
        cfg = write_config(tmp_path, {
            "command": "affine-eval",
            "affine": {"tau": 1.0, "u": 1.0, "v": 0.0,
                       "measure": {"family": "fbm_mu", "H": 0.3}},
            "grid": {"x_min": 1e-2, "x_max": 1e2, "n": 6},
            "output": str(out),
            "format": "json",
        })
        assert run(cfg, quiet=True) == 0
        payload = json.loads(out.read_text())
        assert len(payload["phi1"]) == 6
        assert payload["Phi0"] > 0

    def test_validate_passes(self, tmp_path):
        out = tmp_path / "report.json"
        cfg = write_config(tmp_path, {
            "command": "validate",
            "fbm": {"H": 0.3},
            "output": str(out),
            "format": "json",
        })
        assert run(cfg, quiet=True) == 0
        payload = json.loads(out.read_text())
        assert payload["passed"]
        names = {c["check"] for c in payload["checks"]}
        assert "laplace_relative_error" in names
        assert "riccati_phi_residual" in names
        assert "hjm_drift_identity_short_rate" in names


class TestOverridesAndFlags:
    def test_dotted_override(self, tmp_path):
        out = tmp_path / "out.csv"
        cfg = write_config(tmp_path, {
            "command": "price-zcb",
            "model": BASE_MODEL,
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 20},
            "maturities": [5.0],
            "output": str(out),
        })
        assert run(cfg, overrides=["model.ell=0.04"], quiet=True) == 0
        _, rows = read_csv(out)
        assert float(rows[0][1]) == pytest.approx(np.exp(-0.2), rel=1e-12)

    def test_malformed_override_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, {
            "command": "price-zcb", "model": BASE_MODEL, "maturities": [1.0],
        })
        assert run(cfg, overrides=["notakeyvalue"], quiet=True) == 2

    def test_main_flags(self, tmp_path, capsys):
        out = tmp_path / "flagged.csv"
        cfg = write_config(tmp_path, {
            "command": "price-zcb",
            "model": BASE_MODEL,
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 20},
            "maturities": [1.0],
        })
        code = main(["--config", cfg, "--out", str(out), "--quiet"])
        assert code == 0 and out.exists()
        assert capsys.readouterr().err == ""

    def test_summary_line(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "command": "price-zcb",
            "model": BASE_MODEL,
            "grid": {"x_min": 1e-4, "x_max": 1e4, "n": 20},
            "maturities": [1.0],
            "output": str(tmp_path / "o.csv"),
        })
        assert main(["--config", cfg]) == 0
        err = capsys.readouterr().err
        assert "price-zcb" in err and "wall=" in err
