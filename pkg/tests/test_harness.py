import csv
import io
import json

import pytest

import ffprecode.airlink as airlink
from ffprecode import cli
from ffprecode.errors import InvalidInputError, NumericalError
from ffprecode.harness import (
    BER_COLUMNS,
    PRESETS,
    build_spec,
    compare_ledgers,
    flatten_config,
    load_config,
    run_experiment,
)

SMALL = dict(bs_antennas=32, users=8, clusters=2, trials=4, snr_start=0, snr_stop=8,
             snr_step=4, nsc=12, slots=7)


def test_presets_match_panel_dimensions():
    c = build_spec("fig2c")
    assert (c.bs_antennas, c.users, c.sizes, c.order, c.trials) == (256, 16, (32,) * 8, 64, 1000)
    d = build_spec("fig2d")
    assert (d.bs_antennas, d.users, d.sizes) == (64, 16, (32, 32))
    assert set(PRESETS) == {f"fig2{x}" for x in "abcdef"}
    for name in PRESETS:
        assert "mrt" in build_spec(name).precoders


def test_snr_grid_inclusive():
    assert build_spec(**SMALL).snr_grid == [0.0, 4.0, 8.0]
    assert build_spec(**{**SMALL, "snr_step": 0.5, "snr_stop": 1}).snr_grid == [0.0, 0.5, 1.0]


def test_empty_precoders_is_usage_error(tmp_path, capsys):
    with pytest.raises(InvalidInputError):
        build_spec(precoders=())
    path = tmp_path / "empty.yaml"
    path.write_text("precoders: []\n")
    assert cli.main(["run", "--preset", "fig2d", "--config", str(path)]) == 2
    assert "no precoders" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2


@pytest.mark.parametrize("overrides", [
    dict(cluster_sizes=(16, 8), bs_antennas=32),
    dict(bs_antennas=8, users=16, clusters=2, precoders=("pd-wf",)),
    dict(trials=0),
    dict(snr_start=5, snr_stop=0),
    dict(bs_antennas=30, clusters=4),
])
def test_invalid_specs(overrides):
    with pytest.raises(InvalidInputError):
        build_spec(**{**SMALL, **overrides})


def test_cluster_sizes_override_preset():
    spec = build_spec("fig2d", cluster_sizes=(16, 48))
    assert spec.clusters == 2 and spec.sizes == (16, 48)
    spec = build_spec("fig2d", cluster_sizes=(16, 16, 32))
    assert spec.clusters == 3


def test_config_file_and_flag_override(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(
        "system:\n  bs_antennas: 64\n  users: 8\n  clusters: 4\n"
        "run:\n  trials: 3\n  snr: {start: 0, stop: 4, step: 2}\n"
        "precoders: [central-wf, fd-wf]\n"
    )
    config = load_config(path)
    spec = build_spec(None, config, trials=7)
    assert (spec.bs_antennas, spec.users, spec.clusters) == (64, 8, 4)
    assert spec.trials == 7
    assert spec.snr_grid == [0.0, 2.0, 4.0]
    assert spec.precoders == ("central-wf", "fd-wf")


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(InvalidInputError):
        flatten_config({"system": {"antennas": 4}})
    path = tmp_path / "bad.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(InvalidInputError):
        load_config(path)


def test_compare_ledgers_fig2c_volumes():
    spec = build_spec(precoders=("pd-wf", "fd-wf"), bs_antennas=64, users=16, clusters=8,
                      nsc=1200, slots=7)
    rows = {(r["precoder"], r["payload_kind"]): r for r in compare_ledgers(spec)}
    assert all(r["match"] for r in rows.values())
    assert rows["pd-wf", "gram_partial"]["measured"] == 2_150_400
    assert rows["fd-wf", "symbol_vec"]["measured"] == 7 * 134_400


def test_compare_ledgers_single_cluster_is_silent():
    spec = build_spec(**{**SMALL, "clusters": 1, "precoders": ("pd-wf", "fd-wf")})
    rows = compare_ledgers(spec)
    assert rows and all(r["measured"] == r["closed_form"] == 0 for r in rows)


def test_compare_ledgers_requires_decentralized():
    with pytest.raises(InvalidInputError):
        compare_ledgers(build_spec(**{**SMALL, "precoders": ("mrt",)}))


def test_run_experiment_artifacts(tmp_path):
    spec = build_spec(**SMALL, out_dir=str(tmp_path))
    result = run_experiment(spec)
    assert result.ok
    rows = list(csv.DictReader(io.StringIO((tmp_path / "ber.csv").read_text())))
    assert tuple(rows[0]) == BER_COLUMNS
    assert len(rows) == len(spec.precoders) * len(spec.snr_grid)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["spec_hash"] == spec.spec_hash()
    assert manifest["seed"] == spec.seed and manifest["failures"] == []
    for p in ("pd-wf", "fd-wf"):
        assert (tmp_path / f"ledger_{p}.csv").exists()
        json.loads((tmp_path / f"ledger_{p}.json").read_text())


def test_rerun_is_byte_identical(tmp_path):
    outs = []
    for _ in range(2):
        run_experiment(build_spec(**SMALL, out_dir=str(tmp_path)))
        outs.append({f.name: f.read_bytes() for f in sorted(tmp_path.iterdir())})
    assert outs[0] == outs[1] and len(outs[0]) == 6


def test_numerical_failure_recorded(tmp_path, monkeypatch):
    def broken(H, cfg):
        raise NumericalError("injected")

    monkeypatch.setattr(airlink, "mrt_prepare", broken)
    spec = build_spec(**SMALL, out_dir=str(tmp_path))
    result = run_experiment(spec)
    assert not result.ok
    assert {f["precoder"] for f in result.failures} == {"mrt"}
    assert len(result.failures) == len(spec.snr_grid)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "ber.csv").read_text())))
    assert {r["precoder"] for r in rows} == {"central-wf", "pd-wf", "fd-wf"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "injected" in manifest["failures"][0]["error"]


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    base = ["run", "--bs-antennas", "32", "--users", "8", "--clusters", "2", "--trials", "2",
            "--snr-stop", "4", "--snr-step", "4", "--nsc", "4", "--out-dir", str(tmp_path)]
    assert cli.main(base) == 0
    assert (tmp_path / "ber.csv").exists()
    assert cli.main(base + ["--cluster-sizes", "8,8"]) == 2
    assert cli.main(["ledger", "--preset", "fig2d", "--nsc", "10"]) == 0
    assert "gram_partial" in capsys.readouterr().out
    monkeypatch.setattr(airlink, "mrt_prepare", lambda H, cfg: (_ for _ in ()).throw(NumericalError("x")))
    assert cli.main(base) == 1


def test_cli_presets_listing(capsys):
    assert cli.main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "fig2c" in out and "bs_antennas=256" in out


def test_cli_rejects_unknown_precoder():
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--precoder", "svd"])
    assert exc.value.code == 2
