import json

import numpy as np
import pytest

from landprospect import pipelines
from landprospect.errors import ConfigError
from landprospect.markov import estimate_transition
from landprospect.raster import save_legend
from landprospect.synth import FACTOR_NAMES, default_transition, resolve_spec, synth_scenario


def test_deterministic_for_seed():
    a = synth_scenario({"rows": 32, "cols": 40}, seed=5)
    b = synth_scenario({"rows": 32, "cols": 40}, seed=5)
    c = synth_scenario({"rows": 32, "cols": 40}, seed=6)
    for x, y in zip(a.snapshots, b.snapshots):
        assert np.array_equal(x.values, y.values) and x.date == y.date
    for x, y in zip(a.factors, b.factors):
        assert np.array_equal(x.values, y.values, equal_nan=True)
    assert not np.array_equal(a.snapshots[0].values, c.snapshots[0].values)


def test_shape_dates_and_factors():
    b = synth_scenario({"rows": 30, "cols": 20, "dates": [1, 4, 9, 12]}, seed=1)
    assert [m.date for m in b.snapshots] == [1, 4, 9, 12]
    assert all(m.shape == (30, 20) for m in b.snapshots)
    assert [f.name for f in b.factors] == list(FACTOR_NAMES)
    valid = b.snapshots[0].valid
    assert all(np.array_equal(f.valid, valid) for f in b.factors)
    assert not valid.all()  # elliptic study area
    full = synth_scenario({"rows": 12, "cols": 12, "perimeter": "full"}, seed=1)
    assert full.snapshots[0].valid.all()


def test_identity_transition_freezes_map(legend):
    b = synth_scenario({"rows": 40, "cols": 40, "transition": np.eye(legend.k).tolist()}, seed=2)
    for m in b.snapshots[1:]:
        assert np.array_equal(m.values, b.snapshots[0].values)


def test_transition_counts_follow_the_matrix():
    # expected i -> j tallies are n_i * P_ij; per-pixel draws keep counts within binomial spread
    for seed in range(5):
        b = synth_scenario({}, seed=seed)
        P = np.asarray(b.truth["transitions"][0])
        for a, c in zip(b.snapshots[:-1], b.snapshots[1:]):
            n = a.counts()
            observed = estimate_transition(a, c).counts
            expected = n[:, None] * P
            sd = np.sqrt(expected * (1 - P))
            assert (np.abs(observed - expected) <= 3 * sd + 1e-9).all()


def test_constant_codes_never_move(legend):
    b = synth_scenario({"rows": 48, "cols": 48}, seed=4)
    built0 = b.snapshots[0].values == 8
    for m in b.snapshots[1:]:
        assert np.array_equal(m.values == 8, built0)


def test_default_transition_is_valid(legend):
    P = default_transition(legend)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert P[7, 7] == 1.0 and (P[:7, 7] == 0).all()


@pytest.mark.parametrize("bad", [
    {"dates": [1980, 1990]},
    {"dates": [1980, 1980, 2000]},
    {"transition": [[0.0] * 8] * 8},
    {"transition": (np.eye(8) * 0.5).tolist()},
    {"transition": (np.eye(8) * 0.5 + np.full((8, 8), 0.5 / 8)).tolist()},
    {"transitions": [np.eye(8).tolist()]},
    {"initial_fractions": [1, 2]},
    {"coefficients": {"rainfall": [0] * 8}},
    {"perimeter": "hexagon"},
    {"burn_in": -1},
    {"colour": "red"},
    {"neighborhood_radius": 0},
])
def test_invalid_specs_rejected(bad):
    with pytest.raises(ConfigError):
        resolve_spec(bad)


def test_custom_legend_file(legend, tmp_path):
    save_legend(legend, tmp_path / "legend.csv")
    spec, leg = resolve_spec({"legend_file": "legend.csv"}, tmp_path)
    assert leg == legend and spec["legend_file"] == "legend.csv"


def test_bundle_round_trip(tmp_path):
    b = synth_scenario({"rows": 24, "cols": 24}, seed=8)
    paths = pipelines.write_bundle(b, tmp_path)
    back = pipelines.read_bundle(tmp_path)
    assert back.legend == b.legend and back.seed == 8
    for x, y in zip(b.snapshots, back.snapshots):
        assert np.array_equal(x.values, y.values) and x.date == y.date
    for x, y in zip(b.factors, back.factors):
        assert x.name == y.name
        np.testing.assert_array_equal(x.values, y.values)
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["neighborhood_radius"] == 2
    assert all(p.exists() for p in paths.values())
