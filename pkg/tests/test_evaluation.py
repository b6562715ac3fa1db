import hashlib

import numpy as np
import pytest
from PIL import Image

from landprospect.errors import DataError
from landprospect.evaluation import (AGREEMENT_COLORS, HISTOGRAM_BUCKETS, agreement_classes,
                                     check_stated_total, confusion_matrix, count_colors,
                                     cross_model_agreement, global_accuracy, ordinal_residual_histogram,
                                     proportional_random_baseline, read_table_csv, render_agreement,
                                     render_map, residuals_by_category, surface_percentages, write_outputs)
from landprospect.raster import Category, CategoricalRaster, Legend

from conftest import FIXTURES, random_map


def _map(values, legend):
    return CategoricalRaster(np.asarray(values), legend)


def test_surface_examples(legend):
    assert surface_percentages(_map(np.ones((3, 3), int), legend)).tolist() == [100.0] + [0.0] * 7
    half = np.ones((4, 4), int)
    half[:, 2:] = 2
    half_pct = surface_percentages(_map(half, legend))
    assert half_pct.tolist() == [50.0, 50.0] + [0.0] * 6
    with pytest.raises(DataError):
        surface_percentages(_map(np.zeros((2, 2), int), legend))


def test_surface_reproduces_reference_shares(legend):
    rows = read_table_csv(FIXTURES / "table1_surface.csv")
    stated = np.array([float(r["real"]) for r in rows])
    n = 10000
    counts = np.rint(stated * n / 100).astype(int)
    counts = np.r_[counts, n - counts.sum()]  # built-up takes the remainder
    v = np.repeat(np.arange(1, 9), counts)
    np.random.default_rng(0).shuffle(v)
    pct = surface_percentages(_map(v.reshape(100, 100), legend))
    assert np.abs(pct[:7] - stated).max() <= 100 / n
    assert abs(pct.sum() - 100) < 0.01


def test_residual_examples(legend):
    rng = np.random.default_rng(1)
    real = random_map(rng, legend, (20, 20))
    r = residuals_by_category(real, real)
    assert r.global_residual == 0 and all(v in (0.0, None) for v in r.by_category.values())
    flipped = np.where(real.values == 2, 3, real.values)
    r = residuals_by_category(real, real.replace(values=flipped))
    assert r.by_category[2] == 100.0
    assert all(v == 0.0 for c, v in r.by_category.items() if c != 2)


def test_residual_absent_category_is_undefined(legend):
    real = _map(np.ones((2, 2), int), legend)
    assert residuals_by_category(real, real).by_category[7] is None


def test_planted_error_pattern(legend):
    rng = np.random.default_rng(2)
    real = rng.integers(1, 8, 1000)
    pred = real.copy()
    planted = {c: rng.choice(np.flatnonzero(real == c), size=c * 5, replace=False) for c in range(1, 8)}
    for c, idx in planted.items():
        pred[idx] = c % 7 + 1
    R, P = _map(real.reshape(25, 40), legend), _map(pred.reshape(25, 40), legend)
    r = residuals_by_category(R, P)
    for c in range(1, 8):
        assert r.by_category[c] == pytest.approx(100 * c * 5 / (real == c).sum(), abs=1e-12)
    wrong = sum(c * 5 for c in range(1, 8))
    assert r.mispredicted == wrong and r.global_residual == pytest.approx(wrong / 10, abs=1e-12)
    assert global_accuracy(R, P) + r.global_residual == 100.0


def test_confusion_ignores_nodata(legend):
    real = _map([[1, 0], [2, 2]], legend)
    pred = _map([[1, 1], [0, 3]], legend)
    cm = confusion_matrix(real, pred)
    assert cm.total == 2 and cm.correct == 1 and cm.accuracy == 50.0


def test_baseline(legend):
    real = _map([[1, 1, 1, 2]], legend)
    assert proportional_random_baseline(real) == pytest.approx(100 * (0.75 ** 2 + 0.25 ** 2))


def test_histogram_examples(legend):
    real = np.full((10, 10), 3)
    h = ordinal_residual_histogram(_map(real, legend), _map(real, legend))
    assert all(v == 0 for v in h.counts.values()) and h.total_residual == 0
    pred = real.copy()
    pred[4, 4] = 4
    h = ordinal_residual_histogram(_map(real, legend), _map(pred, legend))
    assert h.percents["1"] == 1.0 and h.total_residual == 1.0


def test_histogram_buckets_cover_residual(legend):
    rng = np.random.default_rng(3)
    real, pred = random_map(rng, legend, (30, 30)), random_map(rng, legend, (30, 30))
    h = ordinal_residual_histogram(real, pred)
    assert list(h.counts) == list(HISTOGRAM_BUCKETS)
    assert sum(h.counts.values()) == residuals_by_category(real, pred).mispredicted
    # a distance-6 pair lands in the last ranked bucket
    h = ordinal_residual_histogram(_map([[1]], legend), _map([[7]], legend))
    assert h.counts["4 or 5"] == 1
    h = ordinal_residual_histogram(_map([[1]], legend), _map([[8]], legend))
    assert h.counts["unranked"] == 1


def test_agreement_extremes(legend):
    rng = np.random.default_rng(4)
    real = random_map(rng, legend, (10, 10), nodata_frac=0)
    dec = cross_model_agreement(real, real, real, real)
    assert dec.row_percents()["total"][0] == 100.0
    wrong = real.replace(values=real.values % 8 + 1)
    dec = cross_model_agreement(real, wrong, wrong, wrong)
    assert dec.row_percents()["total"][7] == 100.0


def test_agreement_rows_and_swap_symmetry(legend):
    rng = np.random.default_rng(5)
    real = random_map(rng, legend, (40, 40))
    preds = []
    for _ in range(3):
        v = np.where(rng.random(real.shape) < 0.6, real.values, rng.integers(1, 9, real.shape))
        preds.append(real.replace(values=np.where(real.valid, v, 0)))
    dec = cross_model_agreement(real, *preds)
    rows = dec.row_percents()
    for pct in rows.values():
        assert abs(pct.sum() - 100) <= 0.01
    # the overall row is the pixel-weighted mean of category rows
    n = dec.counts.sum(axis=1)
    weighted = sum(rows[c] * n[i] for i, c in enumerate(dec.codes) if n[i]) / n.sum()
    np.testing.assert_allclose(rows["total"], weighted, atol=1e-12)
    swapped = cross_model_agreement(real, preds[1], preds[0], preds[2])
    perm = [0, 1, 3, 2, 5, 4, 6, 7]  # A+C <-> B+C and A only <-> B only
    assert np.array_equal(swapped.counts, dec.counts[:, perm])
    assert dec.column_names()[1] == "A+B"


def _permuted_legend(legend, perm):
    cats = [None] * legend.k
    for c in legend.categories:
        new = perm[c.code]
        cats[new - 1] = Category(new, c.name, c.openness_rank, c.color)
    return Legend(tuple(cats), frozenset(perm[c] for c in legend.constant_codes))


def test_metrics_invariant_under_code_permutation(legend):
    rng = np.random.default_rng(6)
    real = random_map(rng, legend, (25, 25))
    preds = [random_map(rng, legend, (25, 25)) for _ in range(3)]
    order = rng.permutation(np.arange(1, 9))
    perm = {old: int(new) for old, new in zip(range(1, 9), order)}
    lut = np.array([0] + [perm[c] for c in range(1, 9)])
    leg2 = _permuted_legend(legend, perm)
    move = lambda m: CategoricalRaster(lut[m.values], leg2)
    real2, preds2 = move(real), [move(p) for p in preds]
    idx = [perm[c] - 1 for c in range(1, 9)]
    assert np.array_equal(surface_percentages(real2)[idx], surface_percentages(real))
    r1, r2 = residuals_by_category(real, preds[0]), residuals_by_category(real2, preds2[0])
    assert r1.global_residual == r2.global_residual
    assert all(r1.by_category[c] == r2.by_category[perm[c]] for c in range(1, 9))
    assert ordinal_residual_histogram(real, preds[0]).counts == ordinal_residual_histogram(real2, preds2[0]).counts
    d1, d2 = cross_model_agreement(real, *preds), cross_model_agreement(real2, *preds2)
    assert np.array_equal(d2.counts[idx], d1.counts)


def test_reference_table_sums():
    t4 = read_table_csv(FIXTURES / "table4_agreement.csv")
    total = [float(v) for k, v in t4[-1].items() if k != "category"]
    assert check_stated_total("agreement total", total, 100.0, 2).drift == 0
    conifer = [float(v) for k, v in t4[0].items() if k != "category"]
    chk = check_stated_total("agreement conifer", conifer, 100.0, 2)
    assert chk.drift == pytest.approx(0.08) and not chk.consistent
    t3 = read_table_csv(FIXTURES / "table3_ordinal_residuals.csv")
    parts = {m: [float(r[m]) for r in t3[:-1]] for m in ("gis", "mlp", "glm")}
    stated = {m: float(t3[-1][m]) for m in parts}
    gis = check_stated_total("gis", parts["gis"], stated["gis"])
    assert gis.computed == pytest.approx(27.1) and gis.rounding_drift and gis.consistent
    assert check_stated_total("glm", parts["glm"], stated["glm"]).drift == 0
    # the stated mlp total in the distance table differs from the global residual table
    t2 = {r["model"]: float(r["global_residual"]) for r in read_table_csv(FIXTURES / "table2_residuals.csv")}
    assert t2["mlp"] != stated["mlp"] and t2["gis"] == stated["gis"] and t2["glm"] == stated["glm"]


def test_render_small_map(legend, tmp_path):
    m = _map([[1, 2], [8, 0]], legend)
    rgb = render_map(m, tmp_path / "m.png", scale=1, legend_strip=False)
    colors = legend.colors()
    assert rgb[0, 0].tolist() == list(colors[1]) and rgb[0, 1].tolist() == list(colors[2])
    assert rgb[1, 0].tolist() == list(colors[8]) and rgb[1, 1].tolist() == [255, 255, 255]
    img = np.asarray(Image.open(tmp_path / "m.png"))
    assert np.array_equal(img, rgb)
    render_map(m, tmp_path / "a.png", scale=3)
    render_map(m, tmp_path / "b.png", scale=3)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert Image.open(tmp_path / "a.png").size[0] == 6


def test_render_without_colors_warns(tmp_path):
    plain = Legend((Category(1, "a", 1), Category(2, "b", 2)))
    with pytest.warns(UserWarning, match="default palette"):
        render_map(CategoricalRaster(np.array([[1, 2]]), plain), tmp_path / "p.png")


def test_agreement_image_counts(small_scenario, legend, tmp_path):
    real = small_scenario.snapshots[2]
    rng = np.random.default_rng(7)
    preds = [real.replace(values=np.where(real.valid & (rng.random(real.shape) < 0.3),
                                          rng.integers(1, 8, real.shape), real.values)) for _ in range(3)]
    classes = agreement_classes(real, *preds)
    rgb = render_agreement(classes, tmp_path / "agree.png", scale=2)
    dec = cross_model_agreement(real, *preds)
    assert np.array_equal(np.array(count_colors(rgb, AGREEMENT_COLORS)) // 4, dec.overall_counts)


def test_write_outputs(small_scenario, tmp_path):
    real = small_scenario.snapshots[2]
    preds = {"gis": small_scenario.snapshots[1], "mlp": real, "glm": small_scenario.snapshots[0]}
    paths = write_outputs(tmp_path, real, preds)
    assert all(p.exists() for p in paths.values())
    acc = {r["model"]: float(r["accuracy"]) for r in read_table_csv(paths["accuracy"])}
    assert acc["mlp"] == 100.0
    for r in read_table_csv(paths["agreement"]):
        assert abs(float(r["row_sum"]) - 100) <= 0.01
    digest = {k: hashlib.sha256(p.read_bytes()).hexdigest() for k, p in paths.items()}
    paths2 = write_outputs(tmp_path / "again", real, preds)
    assert digest == {k: hashlib.sha256(p.read_bytes()).hexdigest() for k, p in paths2.items()}
    with pytest.raises(DataError):
        write_outputs(tmp_path, real, {"a": real})
