import csv
import io

import pytest

from aiitl.cli import main
from aiitl.config import default_config, dump_config

from conftest import small_config


@pytest.fixture(scope="module")
def small_yaml(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.yaml"
    path.write_text(dump_config(small_config("maha", steps=4)))
    return path


@pytest.fixture(scope="module")
def run_dir(small_yaml, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["--quiet", "run", str(small_yaml), "--output", str(out)]) == 0
    return out


def read_csv(path):
    return list(csv.reader(io.StringIO(path.read_text())))


def test_run_writes_four_traces_and_summary(run_dir):
    names = sorted(p.stem for p in (run_dir / "traces").glob("*.json"))
    assert names == ["aiitl_maha", "full_automation", "hitl_perfect_allocation",
                     "traditional_hitl"]
    rows = read_csv(run_dir / "summary.csv")
    assert [r[0] for r in rows] == ["", "human_effort", "accuracy", "utility"]
    assert (run_dir / "config.yaml").exists() and (run_dir / "steps.csv").exists()


def test_repeated_run_identical(run_dir, small_yaml, tmp_path):
    assert main(["--quiet", "run", str(small_yaml), "--output", str(tmp_path)]) == 0
    for name in ["steps.csv", "summary.csv", "traces/aiitl_maha.json",
                 "traces/traditional_hitl.json"]:
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


def test_malformed_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("domains: [\n  - id: a\n schedule: {}\n")
    assert main(["run", str(bad)]) == 2
    assert "bad.yaml" in capsys.readouterr().err


def test_unknown_key_exit_2_with_line(tmp_path, capsys):
    text = dump_config(default_config()).replace("utility:\n", "utility:\n  gamma: 1\n", 1)
    path = tmp_path / "u.yaml"
    path.write_text(text)
    assert main(["run", str(path)]) == 2
    line = text.splitlines().index("  gamma: 1") + 1
    assert f"u.yaml:{line}:" in capsys.readouterr().err


def test_sweep_columns_defaults_and_negative(run_dir, small_yaml):
    args = ["--quiet", "sweep", str(small_yaml), "--output", str(run_dir)]
    assert main(args + ["--betas", "0.5,0.75,1.0,2.0"]) == 0
    header = read_csv(run_dir / "sweep.csv")[0]
    assert header[3:] == ["utility_at_beta_0_5", "utility_at_beta_0_75",
                          "utility_at_beta_1", "utility_at_beta_2"]
    assert main(args + ["--betas", ""]) == 0
    assert len(read_csv(run_dir / "sweep.csv")[0]) == 3 + len(small_config().utility.betas)
    assert main(args + ["--betas", "0.5,-1"]) == 2


def test_report_matches_exports(run_dir, capsys):
    assert main(["report", str(run_dir)]) == 0
    out = capsys.readouterr().out.splitlines()
    summary = {r[0]: r[1:] for r in read_csv(run_dir / "summary.csv")[1:]}
    systems = read_csv(run_dir / "summary.csv")[0][1:]
    hitl, aiitl = systems.index("traditional_hitl"), systems.index("aiitl_maha")
    effort = out[1].split()
    assert effort[-2:] == [summary["human_effort"][hitl], summary["human_effort"][aiitl]]
    assert out[3].split()[-2:] == [summary["utility"][hitl], summary["utility"][aiitl]]


def test_report_errors(tmp_path, run_dir, capsys):
    assert main(["report", str(tmp_path)]) == 2
    broken = tmp_path / "traces"
    broken.mkdir()
    (broken / "aiitl_x.json").write_text("{not json")
    assert main(["report", str(tmp_path)]) == 2
    assert "aiitl_x.json" in capsys.readouterr().err


def test_seed_override_after_subcommand(small_yaml, tmp_path):
    assert main(["run", str(small_yaml), "--quiet", "--seed-override", "3",
                 "--output", str(tmp_path)]) == 0
    assert "seed" in (tmp_path / "traces" / "aiitl_maha.json").read_text()
