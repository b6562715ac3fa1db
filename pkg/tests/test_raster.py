import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from landprospect.errors import AlignmentError, DataError, GridParseError
from landprospect.raster import (CategoricalRaster, Category, ContinuousRaster, Legend, ScenarioBundle,
                                 align_check, default_legend, load_grid, load_legend, save_grid,
                                 save_legend)


def test_default_legend_shape(legend):
    assert legend.k == 8
    assert legend.constant_codes == {8}
    assert legend.modelled_codes == (1, 2, 3, 4, 5, 6, 7)
    assert [legend.rank(c) for c in legend.modelled_codes] == [1, 2, 3, 4, 5, 6, 7]
    assert legend.rank(8) is None


def test_legend_rejects_gaps_and_bad_ranks():
    with pytest.raises(Exception):
        Legend((Category(1, "a", 1), Category(3, "b", 2)), frozenset())
    with pytest.raises(Exception):
        Legend((Category(1, "a", 1), Category(2, "b", 1)), frozenset())


def test_legend_csv_round_trip(tmp_path, legend):
    save_legend(legend, tmp_path / "legend.csv")
    assert load_legend(tmp_path / "legend.csv") == legend


def test_small_grid_read(tmp_path, legend):
    p = tmp_path / "m.grid"
    p.write_text("ncols 2\nnrows 2\ncellsize 18\nnodata_value -9999\n1 1\n2 -9999\n")
    m = load_grid(p, "categorical", legend)
    assert int(m.valid.sum()) == 3
    assert m.values.tolist() == [[1, 1], [2, 0]]
    assert m.cell_size == 18.0


def test_ragged_row_names_row(tmp_path):
    p = tmp_path / "bad.grid"
    p.write_text("ncols 4\nnrows 2\ncellsize 1\nnodata_value -9999\n1 2 3 4\n1 2 3\n")
    with pytest.raises(GridParseError) as ei:
        load_grid(p)
    assert ei.value.row == 1
    assert "row 1" in str(ei.value)


def test_non_legend_code_names_cell(tmp_path):
    p = tmp_path / "bad.grid"
    p.write_text("ncols 2\nnrows 1\ncellsize 1\nnodata_value -9999\n1 12\n")
    with pytest.raises(GridParseError) as ei:
        load_grid(p)
    assert (ei.value.row, ei.value.col) == (0, 1)


def test_malformed_header(tmp_path):
    p = tmp_path / "bad.grid"
    p.write_text("nrows 2\nncols 2\ncellsize 1\nnodata_value -9999\n1 1\n1 1\n")
    with pytest.raises(GridParseError):
        load_grid(p)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_categorical_round_trip(tmp_path_factory, rows, cols, seed):
    rng = np.random.default_rng(seed)
    lg = default_legend()
    v = rng.integers(0, lg.k + 1, size=(rows, cols))
    m = CategoricalRaster(v, lg, date=1989, cell_size=18.5)
    p = tmp_path_factory.mktemp("g") / "m.grid"
    save_grid(m, p)
    back = load_grid(p, "categorical", lg)
    assert np.array_equal(back.values, m.values)
    assert (back.date, back.cell_size) == (1989, 18.5)
    save_grid(back, p.with_suffix(".again"))
    assert p.read_bytes() == p.with_suffix(".again").read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_continuous_round_trip_bit_exact(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(scale=10.0 ** rng.integers(-5, 6), size=(3, 4))
    v[0, 0] = np.nan
    v[1, 1] = 3.0
    m = ContinuousRaster(v, name="elev", cell_size=0.1)
    p = tmp_path_factory.mktemp("g") / "f.grid"
    save_grid(m, p)
    back = load_grid(p, "continuous")
    assert back.name == "elev"
    np.testing.assert_array_equal(back.values, m.values)


def test_align_check(legend):
    a = CategoricalRaster(np.ones((10, 10), int), legend, cell_size=18)
    b = ContinuousRaster(np.zeros((10, 10)), cell_size=18)
    align_check([a, b])
    align_check([a])
    with pytest.raises(AlignmentError) as ei:
        align_check([a, ContinuousRaster(np.zeros((10, 11)), name="slope", cell_size=18)])
    assert ei.value.dimension == "cols"
    assert "slope" in str(ei.value)
    with pytest.raises(AlignmentError) as ei:
        align_check([a, b.replace(cell_size=20)])
    assert ei.value.dimension == "cell_size"


def test_rasters_are_immutable(legend):
    m = CategoricalRaster(np.ones((2, 2), int), legend)
    with pytest.raises(ValueError):
        m.values[0, 0] = 2


def test_bundle_requires_increasing_dates(legend):
    a = CategoricalRaster(np.ones((2, 2), int), legend, date=1990)
    with pytest.raises(DataError):
        ScenarioBundle([a, a.replace(date=1980)], [], 0)
