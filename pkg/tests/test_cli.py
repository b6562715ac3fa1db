import json
import subprocess
import sys
import time

import numpy as np
import pytest

from landprospect import pipelines
from landprospect.cli import EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_DATA, EXIT_IO, main
from landprospect.evaluation import read_table_csv
from landprospect.features import factor_stats
from landprospect.glm import glm_predict_map
from landprospect.raster import load_grid, save_grid, save_legend
from landprospect.report import PredictionReport

SMALL = """seed = 7

[scenario]
rows = 40
cols = 40
{scenario}

[mlp]
max_epochs = 300
patience = 50

[glm]
radii = [2]
epsilons = [0.1]
"""


def write_config(path, scenario="", extra=""):
    path.write_text(SMALL.format(scenario=scenario) + extra)
    return path


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """A small scenario plus the three model reports, produced through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "run.toml")
    assert main(["synth", "--config", str(cfg), "--out", str(root / "scenario")]) == 0
    for model in ("gis", "mlp", "glm"):
        assert main(["predict", model, "--config", str(cfg), "--scenario", str(root / "scenario"),
                     "--out", str(root / model)]) == 0
    return root, cfg


def _manifest(d):
    return json.loads((d / "manifest.json").read_text())


def test_synth_twice_identical(run, tmp_path):
    root, cfg = run
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert _manifest(root / "scenario")["outputs"] == _manifest(tmp_path / "again")["outputs"]
    m = _manifest(tmp_path / "again")
    assert m["seed"] == 7 and m["command"] == "synth" and len(m["config_hash"]) == 64
    assert m["config"]["scenario"]["rows"] == 40  # defaults echoed
    assert "numpy" in m["versions"] and "wall_seconds" in m["timings"]


def test_seed_override_changes_outputs(run, tmp_path):
    root, cfg = run
    assert main(["synth", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "s8")]) == 0
    assert _manifest(tmp_path / "s8")["seed"] == 8
    assert _manifest(root / "scenario")["outputs"] != _manifest(tmp_path / "s8")["outputs"]


def test_synth_default_size_is_fast(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 1\n")
    start = time.perf_counter()
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert time.perf_counter() - start < 5.0


def test_missing_seed_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[scenario]\nrows = 10\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s")]) == EXIT_CONFIG
    assert "seed" in capsys.readouterr().err


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\n[unknown]\nx = 1\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    bad.write_text("seed = 1\n[scenario]\nrows = [\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["synth", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    ok = write_config(tmp_path / "ok.toml")
    assert main(["synth", "--config", str(ok), "--threads", "0", "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_io_and_data_errors(run, tmp_path):
    root, cfg = run
    assert main(["predict", "gis", "--config", str(cfg), "--scenario", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == EXIT_DATA
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["synth", "--config", str(cfg), "--out", str(blocker / "sub")]) == EXIT_IO
    assert main(["compare", str(root / "gis"), str(root / "mlp"), str(tmp_path),
                 "--scenario", str(root / "scenario"), "--out", str(tmp_path / "c")]) == EXIT_DATA


def test_convergence_error_exit(run, tmp_path):
    root, _ = run
    cfg = write_config(tmp_path / "div.toml", extra="")
    text = cfg.read_text().replace("max_epochs = 300", "max_epochs = 300\nlearning_rate = 1e6\noutput = \"linear\"")
    cfg.write_text(text)
    assert main(["predict", "mlp", "--config", str(cfg), "--scenario", str(root / "scenario"),
                 "--out", str(tmp_path / "m")]) == EXIT_CONVERGENCE


def test_gis_identity_transitions_return_t1(tmp_path):
    cfg = write_config(tmp_path / "id.toml", scenario="transition = " + json.dumps(np.eye(8).tolist()))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert main(["predict", "gis", "--config", str(cfg), "--scenario", str(tmp_path / "s"),
                 "--out", str(tmp_path / "g")]) == 0
    b = pipelines.read_bundle(tmp_path / "s")
    pred = load_grid(tmp_path / "g" / "predicted.grid", "categorical", b.legend)
    assert np.array_equal(pred.values, b.snapshots[1].values)


def test_glm_single_cell_matches_direct(run):
    root, _ = run
    b = pipelines.read_bundle(root / "scenario")
    settings = pipelines.resolve({"glm": {"radii": [2], "epsilons": [0.1]}})
    factors = pipelines.prepare_factors(b.factors, settings["features"])
    rep = pipelines.run_glm(b.snapshots, b.factors, settings, 7)
    fit = rep.extras["search"].fits[(2, 0.1)]
    direct = glm_predict_map(fit.params, b.snapshots[1], factors, pipelines.neighborhood(settings["features"], 2),
                             factor_stats(factors), b.snapshots[2].date)
    cli = load_grid(root / "glm" / "predicted.grid", "categorical", b.legend)
    assert np.array_equal(cli.values, direct.predicted.values)


def test_reports_are_valid(run):
    root, _ = run
    b = pipelines.read_bundle(root / "scenario")
    for model in ("gis", "mlp", "glm"):
        rep = PredictionReport.read(root / model, b.legend)
        assert rep.model == model and rep.predicted.shape == b.snapshots[0].shape
        assert rep.probabilities.shape == (b.legend.k,) + rep.predicted.shape
        assert _manifest(root / model)["command"] == f"predict {model}"


def _agreement(d):
    return {r["category"]: r for r in read_table_csv(d / "table4_agreement.csv")}


def test_compare_and_permutation(run, tmp_path):
    root, cfg = run
    args = ["--scenario", str(root / "scenario"), "--config", str(cfg)]
    assert main(["compare", str(root / "gis"), str(root / "mlp"), str(root / "glm"), *args,
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["compare", str(root / "mlp"), str(root / "gis"), str(root / "glm"), *args,
                 "--out", str(tmp_path / "b")]) == 0
    a, b = _agreement(tmp_path / "a"), _agreement(tmp_path / "b")
    for cat in a:
        assert abs(float(a[cat]["row_sum"]) - 100) <= 0.01
        assert a[cat]["gis+glm"] == b[cat]["gis+glm"] and a[cat]["mlp+glm"] == b[cat]["mlp+glm"]
        assert a[cat]["gis only"] == b[cat]["gis only"] and a[cat]["all"] == b[cat]["all"]
    hist = read_table_csv(tmp_path / "a" / "table3_ordinal_residuals.csv")
    resid = {r["model"]: float(r["global_residual"]) for r in read_table_csv(tmp_path / "a" / "table2_residuals.csv")}
    for model in ("gis", "mlp", "glm"):
        assert sum(float(r[model]) for r in hist[:-1]) == pytest.approx(resid[model], abs=1e-3)
    for name in ("map_real.png", "map_gis.png", "map_agreement.png", "manifest.json"):
        assert (tmp_path / "a" / name).exists()


def test_compare_perfect_predictions(run, tmp_path):
    root, _ = run
    b = pipelines.read_bundle(root / "scenario")
    real = b.snapshots[2]
    dirs = []
    for name in ("x", "y", "z"):
        PredictionReport(name, real).write(tmp_path / name)
        dirs.append(str(tmp_path / name))
    save_grid(real, tmp_path / "real.grid")
    save_legend(b.legend, tmp_path / "legend.csv")
    assert main(["compare", *dirs, "--real", str(tmp_path / "real.grid"), "--legend", str(tmp_path / "legend.csv"),
                 "--out", str(tmp_path / "c")]) == 0
    assert float(_agreement(tmp_path / "c")["total"]["all"]) == 100.0
    assert main(["compare", *dirs, "--real", str(tmp_path / "real.grid"), "--out", str(tmp_path / "d")]) == EXIT_CONFIG


def test_calibrate_and_render(run, tmp_path):
    root, cfg = run
    assert main(["calibrate", "--config", str(cfg), "--scenario", str(root / "scenario"),
                 "--out", str(tmp_path / "cal")]) == 0
    assert (tmp_path / "cal" / "transition.csv").exists()
    assert len(list((tmp_path / "cal").glob("suitability_*.grid"))) == 8
    png = tmp_path / "r" / "map.png"
    grid = root / "scenario" / "map_1980.grid"
    assert main(["render", str(grid), "--legend", str(root / "scenario" / "legend.csv"), "--out", str(png)]) == 0
    assert png.exists() and png.with_suffix(".manifest.json").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "landprospect", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("landprospect ")
