import json
from pathlib import Path

import pytest

from corrlab.cli import (ConfigError, Output, SCENARIOS, list_scenarios, load_config, main, run,
                         sha256_file, validate_config)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def config(name, **over):
    cfg = json.loads((CONFIGS / f"{name}.json").read_text())
    cfg.update(over)
    return cfg


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def csv_hashes(root):
    return {p.name: sha256_file(p) for p in sorted(Path(root).glob("*.csv"))}


SMALL_BANDED = dict(T=200.0, realizations=3, lags={"max": 3.0, "spacing": 0.1})


def test_list(capsys):
    assert main(["list"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 7 == len(list_scenarios())
    names = [r.split()[0] for r in rows]
    assert "white_noise_green" in names and "waveguide_dispersion" in names
    assert all(desc for _, desc in list_scenarios())


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_shipped_configs_validate(name):
    assert validate_config(load_config(CONFIGS / f"{name}.json"))["scenario"] == name


def test_missing_seed(tmp_path, capsys):
    cfg = config("white_noise_green")
    del cfg["seed"]
    assert main(["validate", write(tmp_path, cfg)]) == 2
    assert "seed" in capsys.readouterr().err


@pytest.mark.parametrize("patch,field", [
    ({"scenario": "nope"}, "scenario"),
    ({"seed": "x"}, "seed"),
    ({"stations": [0]}, "stations"),
])
def test_invalid_fields_are_named(patch, field):
    with pytest.raises(ConfigError, match=field):
        validate_config(config("white_noise_green", **patch))


def test_incomplete_block_for_scenario():
    cfg = config("exact_scalar")
    del cfg["noise"]
    with pytest.raises(ConfigError, match="noise"):
        validate_config(cfg)


def test_white_noise_green_passes(tmp_path):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, config("white_noise_green")), "--strict",
                 "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    check = {c["check"]: c for c in report["checks"]}
    assert check["derivative_residual"]["value"] < 1e-10 and report["pass"]


def test_rerun_is_bit_identical(tmp_path):
    cfg = write(tmp_path, config("exact_scalar"))
    main(["run", cfg, "--out", str(tmp_path / "a")])
    main(["run", cfg, "--out", str(tmp_path / "b")])
    a, b = csv_hashes(tmp_path / "a"), csv_hashes(tmp_path / "b")
    assert a and a == b


def test_simulation_rerun_identical_per_worker_count(tmp_path):
    cfg = config("banded_noise_semiclassical", **SMALL_BANDED)
    run(cfg, tmp_path / "w1", workers=1)
    run(cfg, tmp_path / "w2", workers=2)
    run(cfg, tmp_path / "w2b", workers=2)
    assert csv_hashes(tmp_path / "w2") == csv_hashes(tmp_path / "w2b")
    assert csv_hashes(tmp_path / "w1") == csv_hashes(tmp_path / "w2")


def test_manifest_round_trip(tmp_path):
    out = tmp_path / "first"
    main(["run", write(tmp_path, config("exact_scalar")), "--out", str(out)])
    manifest = out / "manifest.json"
    m = json.loads(manifest.read_text())
    assert set(m) >= {"config", "config_sha256", "seed", "versions", "files"}
    for name, digest in m["files"].items():
        assert sha256_file(out / name) == digest
    assert main(["validate", str(manifest)]) == 0
    assert main(["run", str(manifest), "--out", str(tmp_path / "again")]) == 0
    assert csv_hashes(out) == csv_hashes(tmp_path / "again")


def test_seed_override(tmp_path, monkeypatch):
    cfg = config("banded_noise_semiclassical", **SMALL_BANDED)
    run(cfg, tmp_path / "base")
    monkeypatch.setenv("CORRLAB_SEED", "99")
    run(cfg, tmp_path / "env")
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["seed"] == 99
    assert csv_hashes(tmp_path / "base") != csv_hashes(tmp_path / "env")
    run(dict(cfg, seed=99), tmp_path / "explicit")
    assert csv_hashes(tmp_path / "env") == csv_hashes(tmp_path / "explicit")


def test_bad_seed_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CORRLAB_SEED", "abc")
    assert main(["run", write(tmp_path, config("white_noise_green")),
                 "--out", str(tmp_path / "o")]) == 2


def test_strict_exit_on_failed_check(tmp_path, capsys):
    cfg = config("white_noise_green", tolerances={"derivative_residual": 1e-30})
    path = write(tmp_path, cfg)
    assert main(["run", path, "--out", str(tmp_path / "lax")]) == 0
    assert main(["run", path, "--strict", "--out", str(tmp_path / "strict")]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_runtime_error_exit(tmp_path):
    # the schema cannot know the grid size; the station lookup fails at run time
    cfg = config("exact_scalar", stations=[0, 40])
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1


def test_writes_stay_in_output_dir(tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    cfg = write(tmp_path, config("white_noise_green"))
    main(["run", cfg, "--out", str(tmp_path / "out")])
    assert list(work.iterdir()) == []
    assert {p.name for p in (tmp_path / "out").iterdir()} == {
        "white_noise_green.csv", "report.json", "manifest.json"}


@pytest.mark.parametrize("name", ["../escape.csv", "/tmp/abs.csv", "sub/../../x.csv"])
def test_output_refuses_escape(tmp_path, name):
    with pytest.raises(ValueError, match="outside"):
        Output(tmp_path / "o").path(name)
