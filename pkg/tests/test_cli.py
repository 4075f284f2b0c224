import json
import os

import pytest

from stopline.cli import main
from stopline.network import NetworkSpec
from stopline.scenarios import make_single_intersection, ramp_schedule


@pytest.fixture()
def scenario_file(tmp_path):
    spec = make_single_intersection(schedule_h=ramp_schedule(1.0),
                                    schedule_v=ramp_schedule(0.6))
    path = tmp_path / "single.json"
    spec.to_json(str(path))
    return str(path)


def test_validate_ok(scenario_file, capsys):
    assert main(["validate", "--scenario", scenario_file]) == 0
    out = capsys.readouterr().out
    assert "scenario ok" in out
    assert "1 intersections" in out


def test_validate_reference_name(capsys):
    assert main(["validate", "--scenario", "grid4x4"]) == 0
    assert "16 intersections" in capsys.readouterr().out


def test_validate_missing_file_fails(tmp_path, capsys):
    rc = main(["validate", "--scenario", str(tmp_path / "nope.json")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_validate_broken_scenario_fails(tmp_path, capsys):
    spec = make_single_intersection()
    data = spec.to_dict()
    data["links"][0]["saturation_rate"] = -1.0
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(data))
    rc = main(["validate", "--scenario", str(path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_run_writes_outputs_and_reports(scenario_file, tmp_path, capsys):
    out = tmp_path / "base"
    rc = main(["run", "--scenario", scenario_file, "--mode", "baseline",
               "--seeds", "1,2", "--duration", "900", "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "seed 1:" in text and "seed 2:" in text
    assert "baseline over 2 seed(s)" in text
    for seed in (1, 2):
        for name in ("vehicles.csv", "queues.csv", "weights.csv",
                     "messages.csv", "summary.json"):
            assert (out / f"seed_{seed}" / name).exists()


def test_run_rejects_bad_seeds(scenario_file, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scenario", scenario_file, "--mode", "baseline",
              "--seeds", "one,two", "--duration", "600"])
    assert exc.value.code == 2
    assert "comma-separated integers" in capsys.readouterr().err


def test_run_rejects_bad_duration(scenario_file, capsys):
    rc = main(["run", "--scenario", scenario_file, "--mode", "baseline",
               "--seeds", "1", "--duration", "100", "--warmup", "300"])
    assert rc == 1
    assert "warmup" in capsys.readouterr().err


def test_compare_pipeline(scenario_file, tmp_path, capsys):
    for mode, sub in (("baseline", "a"), ("composite", "b")):
        assert main(["run", "--scenario", scenario_file, "--mode", mode,
                     "--seeds", "1,2", "--duration", "1200",
                     "--warmup", "300", "--out", str(tmp_path / sub),
                     "--label", "single"]) == 0
    capsys.readouterr()
    out_json = tmp_path / "cmp.json"
    rc = main(["compare", "--a", str(tmp_path / "a"),
               "--b", str(tmp_path / "b"), "--out", str(out_json)])
    assert rc == 0
    shown = json.loads(capsys.readouterr().out)
    saved = json.loads(out_json.read_text())
    assert shown == saved
    assert {"improvement_pct", "p90_improvement_pct", "per_seed",
            "tier_improvement_pct"} <= set(shown)
    assert len(shown["per_seed"]) == 2


def test_compare_mismatch_fails(scenario_file, tmp_path, capsys):
    main(["run", "--scenario", scenario_file, "--mode", "baseline",
          "--seeds", "1", "--duration", "600", "--warmup", "0",
          "--out", str(tmp_path / "a"), "--label", "single"])
    main(["run", "--scenario", scenario_file, "--mode", "composite",
          "--seeds", "2", "--duration", "600", "--warmup", "0",
          "--out", str(tmp_path / "b"), "--label", "single"])
    capsys.readouterr()
    rc = main(["compare", "--a", str(tmp_path / "a"),
               "--b", str(tmp_path / "b")])
    assert rc == 1
    assert "seed" in capsys.readouterr().err


def test_compare_missing_dir_fails(tmp_path, capsys):
    rc = main(["compare", "--a", str(tmp_path / "x"),
               "--b", str(tmp_path / "y")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_run_parallel_jobs_matches_serial(scenario_file, tmp_path):
    for jobs, sub in (("1", "serial"), ("2", "par")):
        assert main(["run", "--scenario", scenario_file, "--mode",
                     "composite", "--seeds", "1,2", "--duration", "600",
                     "--warmup", "0", "--out", str(tmp_path / sub),
                     "--jobs", jobs]) == 0
    for seed in (1, 2):
        for name in ("vehicles.csv", "summary.json"):
            a = (tmp_path / "serial" / f"seed_{seed}" / name).read_bytes()
            b = (tmp_path / "par" / f"seed_{seed}" / name).read_bytes()
            assert a == b, (seed, name)
