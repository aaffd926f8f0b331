from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner
from sklearn.metrics import adjusted_rand_score

from gridcast.cli import load_config, main, parse_config
from gridcast.errors import ConfigError

SMALL = """\
[synth]
archetypes = residential
series_per_archetype = 3
length_hours = 1008

[paradigm]
paradigms = local
"""


def _run(tmp_path, text, *args, command="run"):
    cfg = tmp_path / "run.ini"
    cfg.write_text(text)
    result = CliRunner().invoke(main, [command, str(cfg), "--outdir", str(tmp_path / "out"), *args])
    return result


def _run_dir(tmp_path) -> Path:
    (d,) = [p for p in (tmp_path / "out").iterdir() if p.is_dir()]
    return d


def test_config_round_trip(tmp_path):
    cfg = parse_config(SMALL + "\n[model]\nkind = gbdt\nn_estimators = 12\n\n[archetype.residential]\nnoise_std = 0.01\n")
    again = parse_config(cfg.to_ini())
    assert again == cfg and again.run_id() == cfg.run_id()
    assert again.hyperparams.n_estimators == 12
    assert again.archetypes()[0].noise_std == 0.01


def test_run_id_ignores_outdir_but_not_seed():
    a = parse_config(SMALL, {"output.outdir": "/tmp/a"})
    b = parse_config(SMALL, {"output.outdir": "/tmp/b"})
    c = parse_config(SMALL, {"paradigm.seed": "3"})
    assert a.run_id() == b.run_id() != c.run_id()


@pytest.mark.parametrize(
    "text, match",
    [
        ("[nonsense]\nx = 1\n", "unknown config section"),
        ("[model]\nflavour = mild\n", "unknown key"),
        ("[model]\nkind = svm\n", "kind"),
        ("[paradigm]\nparadigms = federated\n", "paradigms"),
        ("[features]\nlags = 1, 500\n", "exceeds window"),
        ("[split]\ntrain_end = 2024-01-05T00:00:00Z\n", "all of"),
        ("[evaluation]\nwindow = val\n", "include_val"),
        ("[data]\nsource = csv\n", "load_path"),
        ("[synth]\narchetypes = commercial\n", "unknown archetypes"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_exit_codes(tmp_path):
    assert _run(tmp_path, "[model]\nkind = svm\n").exit_code == 2
    missing = f"[data]\nsource = csv\nload_path = {tmp_path / 'load.csv'}\n"
    assert _run(tmp_path, missing).exit_code == 2
    (tmp_path / "load.csv").write_text("timestamp,a\nnot-a-time,1\n")
    result = _run(tmp_path, missing, command="ingest")
    assert result.exit_code == 3 and "stage data failed" in result.output


def test_local_ridge_run_contract(tmp_path):
    result = _run(tmp_path, SMALL)
    assert result.exit_code == 0, result.output
    d = _run_dir(tmp_path)
    metrics = pd.read_csv(d / "metrics.csv")
    assert list(metrics["series_id"]) == [f"residential_{j:02d}" for j in range(3)]
    assert set(metrics["paradigm"]) == {"local"}
    assert (d / "config.ini").read_text() == SMALL
    assert parse_config((d / "config.resolved.ini").read_text()).run_id() == d.name
    manifest = (d / "manifest.txt").read_text().splitlines()
    assert manifest[0] == f"run_id\t{d.name}"
    assert any(line.startswith("evaluate\tmetrics.csv\t") for line in manifest)


def test_rerun_identical_metrics(tmp_path):
    assert _run(tmp_path, SMALL).exit_code == 0
    first = (_run_dir(tmp_path) / "metrics.csv").read_bytes()
    other = tmp_path / "again"
    other.mkdir()
    assert _run(other, SMALL).exit_code == 0
    assert (_run_dir(other) / "metrics.csv").read_bytes() == first


def test_flags_override_config(tmp_path):
    result = _run(tmp_path, SMALL, "--model", "gbdt", "--set", "model.n_estimators=5", "--paradigm", "global")
    assert result.exit_code == 0, result.output
    resolved = parse_config((_run_dir(tmp_path) / "config.resolved.ini").read_text())
    assert resolved.get("model", "kind") == "gbdt" and tuple(resolved.get("paradigm", "paradigms")) == ("global",)
    assert set(pd.read_csv(_run_dir(tmp_path) / "metrics.csv")["paradigm"]) == {"global"}


def test_bad_set_syntax(tmp_path):
    assert _run(tmp_path, SMALL, "--set", "model.kind").exit_code == 2


BENCHMARK = """\
[synth]
archetypes = residential, industrial
series_per_archetype = 10
length_hours = 17520

[split]
test_hours = 2016

[paradigm]
paradigms = clusterwise
variant = model-based
k = 2
"""


@pytest.mark.slow
def test_cluster_map_recovers_archetypes(tmp_path):
    result = _run(tmp_path, BENCHMARK)
    assert result.exit_code == 0, result.output
    d = _run_dir(tmp_path)
    cmap = pd.read_csv(d / "cluster_map.csv")
    truth = cmap["series_id"].str.split("_").str[0]
    assert len(cmap) == 20
    assert adjusted_rand_score(truth, cmap["cluster"]) == 1.0
