import csv
import io
import json
import math

import jsonschema
import pytest

from gpconformal.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from gpconformal.experiment import (
    SCHEMA_PATH,
    ConfigError,
    derive_seed,
    emit_report,
    load_config,
    report_csv,
    report_json,
    report_markdown,
    run_experiment,
)

SMALL = {
    "problem": {"kind": "synthetic", "function": "morokoff_caflisch", "dim": 3,
                "n_samples": 40, "noise_sd": 0.01},
    "nugget": 1e-3,
    "n_boot": 50,
    "mle": {"n_restarts": 1},
}


def small_config(**overrides):
    cfg = json.loads(json.dumps(SMALL))
    cfg.update(overrides)
    return load_config(json.dumps(cfg))


def write_config(tmp_path, **overrides):
    cfg = dict(SMALL)
    cfg.update(overrides)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg, indent=2))
    return p


@pytest.fixture(scope="module")
def full_report():
    return run_experiment(small_config())


class TestConfig:
    def test_defaults(self):
        cfg = small_config()
        assert cfg.nu_grid == [0.5, 1.5, 2.5]
        assert cfg.beta_grid == [0.5, 1.0, 1.5]
        assert cfg.alpha_grid == [0.1, 0.05, 0.01]
        assert cfg.delta == 1e-6 and cfg.n_boot == 50 and cfg.upsilon == 0.1

    def test_syntax_error_has_line(self):
        with pytest.raises(ConfigError, match=r"<config>:3:"):
            load_config('{\n"problem": {},\n"seed": ,\n}')

    def test_unknown_key_line(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{\n  "problem": {"kind": "csv", "path": "x", "target": "y"},\n'
                     '  "sede": 3\n}\n')
        with pytest.raises(ConfigError, match=r"c\.json:3: unknown key 'sede'"):
            load_config(p)

    def test_invalid_value_line(self, tmp_path):
        p = write_config(tmp_path, alpha_grid=[0.1, 1.5])
        line = next(i for i, t in enumerate(p.read_text().splitlines(), 1) if "alpha_grid" in t)
        with pytest.raises(ConfigError, match=rf":{line}: every alpha"):
            load_config(p)

    @pytest.mark.parametrize("overrides", [{"nu_grid": []}, {"train_fraction": 1.0},
                                           {"methods": ["bogus"]}, {"formats": ["xml"]},
                                           {"mle": {"n_restarts": 0}}, {"loo_mode": "fast"},
                                           {"problem": {"kind": "sql"}}])
    def test_rejected(self, overrides):
        with pytest.raises(ConfigError):
            small_config(**overrides)

    def test_missing_problem(self):
        with pytest.raises(ConfigError, match="problem"):
            load_config('{"seed": 1}')

    def test_derived_seeds(self):
        assert derive_seed(0, "mle", 1.5) == derive_seed(0, "mle", 1.5)
        assert derive_seed(0, "mle", 1.5) != derive_seed(0, "mle", 2.5)
        assert derive_seed(0, "split") != derive_seed(1, "split")


class TestGrid:
    def test_credibility_only(self):
        report = run_experiment(small_config(methods=["credibility"], nu_grid=[1.5, 2.5]))
        assert len(report.records) == 2 * 3
        assert all(r.beta_power is None for r in report.records)

    def test_full_grid_cardinality(self, full_report):
        # Three beta-free families plus two GP-weighted families with three betas each.
        assert len(full_report.records) == 3 * 3 * (3 + 2 * 3)
        per_alpha = [r for r in full_report.records if r.alpha == 0.1]
        families = {r.method for r in per_alpha}
        assert families == {"credibility", "jackknife+", "jackknife-minmax", "J+GP",
                            "J-minmax-GP"}
        assert sum(r.method == "J+GP" for r in per_alpha) == 9

    def test_metadata(self, full_report):
        meta = full_report.metadata
        for key in ("loo_mode", "nugget_mode", "delta", "rng", "library_version"):
            assert key in meta
        assert meta["data"]["n_train"] == 32 and meta["data"]["n_test"] == 8

    def test_jackknife_method(self):
        report = run_experiment(small_config(methods=["jackknife"], nu_grid=[1.5],
                                             alpha_grid=[0.1]))
        assert [r.method for r in report.records] == ["jackknife"]

    def test_determinism_modulo_timestamp(self):
        cfg = small_config(nu_grid=[1.5], alpha_grid=[0.1])
        a = json.loads(report_json(run_experiment(cfg)))
        b = json.loads(report_json(run_experiment(cfg)))
        a["metadata"].pop("timestamp")
        b["metadata"].pop("timestamp")
        assert json.dumps(a) == json.dumps(b)

    def test_threads_do_not_change_numbers(self):
        a = run_experiment(small_config(nu_grid=[0.5, 1.5], alpha_grid=[0.1], threads=1))
        b = run_experiment(small_config(nu_grid=[0.5, 1.5], alpha_grid=[0.1], threads=2))
        assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]

    def test_failed_branch_is_recorded(self):
        report = run_experiment(small_config(nu_grid=[1.5, 0.7], methods=["credibility"]))
        assert [f["nu"] for f in report.failed_branches] == [0.7]
        assert "half-integer" in report.failed_branches[0]["error"]
        assert {r.nu for r in report.records} == {1.5}

    def test_csv_problem(self, tmp_path):
        rows = ["a,b,y"] + [f"{i},{(i * 7) % 11},{i + 0.5 * ((i * 7) % 11)}" for i in range(30)]
        rows[5] = "4,?,1"
        (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
        cfg = small_config(problem={"kind": "csv", "path": str(tmp_path / "d.csv"),
                                    "target": "y"}, nu_grid=[2.5], alpha_grid=[0.1])
        report = run_experiment(cfg)
        assert report.metadata["data"]["rows_dropped"] == 1
        assert report.metadata["data"]["n_train"] == 23
        assert report.metadata["data"]["standardization"] == "empirical"


class TestReports:
    def test_json_schema(self, full_report):
        schema = json.loads(SCHEMA_PATH.read_text())
        doc = json.loads(report_json(full_report))
        jsonschema.validate(doc, schema)
        assert all(len(r["bootstrap_samples"]) + r["bootstrap_skipped"] == 50
                   for r in doc["records"])

    def test_schema_rejects_garbage(self):
        schema = json.loads(SCHEMA_PATH.read_text())
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate({"records": []}, schema)

    def test_csv_round_trip(self, full_report):
        rows = list(csv.DictReader(io.StringIO(report_csv(full_report))))
        assert len(rows) == len(full_report.records)
        for row, rec in zip(rows, full_report.records):
            assert row["method"] == rec.method
            for key in ("nu", "alpha", "coverage", "avg_width", "q2", "mse", "threshold"):
                want = getattr(rec, key)
                got = float(row[key])
                assert got == want or math.isclose(got, want, rel_tol=1e-6)
            if rec.beta_power is None:
                assert row["beta_power"] == ""
            else:
                assert float(row["beta_power"]) == rec.beta_power

    def test_markdown_layout(self, full_report):
        md = report_markdown(full_report)
        assert "| J+GP | 3/2 | 0.5 |" in md
        assert md.count("| J-minmax-GP |") == 9
        assert "Cov. 99%" in md and "Pass 90%" in md

    def test_markdown_footnote_when_nothing_passes(self):
        report = run_experiment(small_config(nu_grid=[1.5], alpha_grid=[0.1, 0.01],
                                             methods=["credibility"]))
        for sel in report.selections:
            if sel["alpha"] == 0.01:
                sel["min_width"] = sel["max_spearman"] = None
        md = report_markdown(report)
        assert "no method passes the soft threshold at 99%" in md

    def test_markdown_not_computable(self):
        report = run_experiment(small_config(nu_grid=[1.5], alpha_grid=[0.1],
                                             methods=["credibility"]))
        report.records[0].spearman_median = None
        assert "n.c" in report_markdown(report)

    def test_emit_subset(self, tmp_path, full_report):
        paths = emit_report(full_report, ["csv"], tmp_path / "out")
        assert [p.name for p in paths] == ["report.csv"]
        with pytest.raises(ValueError):
            emit_report(full_report, ["xml"], tmp_path)


class TestCli:
    def test_success(self, tmp_path, capsys):
        cfg = write_config(tmp_path, nu_grid=[1.5], alpha_grid=[0.1])
        rc = main(["run", str(cfg), "--out-dir", str(tmp_path / "r"), "--format", "json,md"])
        assert rc == EXIT_OK
        assert sorted(p.name for p in (tmp_path / "r").iterdir()) == ["report.json",
                                                                      "report.md"]
        assert "report.json" in capsys.readouterr().out

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path, nu_grid=[1.5], alpha_grid=[0.1])
        main(["run", str(cfg), "--out-dir", str(tmp_path / "a"), "--seed", "7",
              "--format", "json"])
        doc = json.loads((tmp_path / "a" / "report.json").read_text())
        assert doc["metadata"]["config"]["seed"] == 7

    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "problem": {"kind": "synthetic"},\n  "seed": 1,\n}\n')
        assert main(["run", str(p)]) == EXIT_CONFIG
        assert "bad.json:4:" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["run", str(tmp_path / "none.json")]) == EXIT_CONFIG

    def test_all_branches_fail(self, tmp_path, capsys):
        cfg = write_config(tmp_path, nu_grid=[0.7])
        assert main(["run", str(cfg), "--out-dir", str(tmp_path / "r")]) == EXIT_RUNTIME
        assert "nu=0.7" in capsys.readouterr().err

    def test_bad_format_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["run", str(write_config(tmp_path)), "--format", "xml"])
        assert exc.value.code == 2
