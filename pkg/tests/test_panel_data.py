from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passthru.panel_data import (
    DecadeWindow,
    DuplicateKeyError,
    EmptyFileError,
    EmptyWindowError,
    MalformedNumberError,
    NameCollisionError,
    NoDataError,
    NonPositiveForLogError,
    PanelDataError,
    PanelDataset,
    TransformSpec,
    UnknownColumnError,
    apply_transform,
    load_decade_csv,
    load_panel_csv,
    load_table_a2,
    median_by_window,
    panel_csv_text,
    window,
    write_panel_csv,
)


def one_country(values: dict[int, float], var: str = "x") -> PanelDataset:
    years = sorted(values)
    return PanelDataset(["AA"], years, {var: {("AA", y): v for y, v in values.items()}})


# ---------------------------------------------------------------- ingestion

def test_table_a2_fixture_values():
    ds = load_table_a2()
    assert ds.value("em10", "US", 2010) == 0.0506
    assert ds.value("kof", "AT", 1980) == 0.744
    assert len(ds.countries) == 16
    total = sum(ds.n_obs("kof") for _ in [0])
    assert total == 58


def test_load_rejects_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("country,year,cpi\n")
    with pytest.raises(EmptyFileError):
        load_panel_csv(p)
    p2 = tmp_path / "nothing.csv"
    p2.write_text("")
    with pytest.raises(EmptyFileError):
        load_panel_csv(p2)


def test_load_rejects_duplicate_key(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("country,year,cpi\nAT,1990,100\nAT,1990,101\n")
    with pytest.raises(DuplicateKeyError) as err:
        load_panel_csv(p)
    assert err.value.country == "AT"
    assert err.value.year == 1990


def test_load_rejects_malformed_number(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("country,year,cpi\nAT,1990,abc\n")
    with pytest.raises(MalformedNumberError) as err:
        load_panel_csv(p)
    assert err.value.row == 2
    assert err.value.col == "cpi"


def test_load_rejects_unknown_column(tmp_path):
    p = tmp_path / "extra.csv"
    p.write_text("country,year,cpi,mystery\nAT,1990,100,1\n")
    with pytest.raises(UnknownColumnError):
        load_panel_csv(p, schema=("cpi",))
    # open schema accepts anything
    ds = load_panel_csv(p, schema=None)
    assert ds.value("mystery", "AT", 1990) == 1.0


def test_missing_cells_are_absent(tmp_path):
    p = tmp_path / "gaps.csv"
    p.write_text("country,year,cpi,ulc\nAT,1990,100,\nAT,1991,,90\n")
    ds = load_panel_csv(p, schema=("cpi", "ulc"))
    assert ds.value("cpi", "AT", 1990) == 100.0
    assert ds.value("ulc", "AT", 1990) is None
    assert ds.value("cpi", "AT", 1991) is None


def test_round_trip_is_bit_exact(tmp_path, toy_levels):
    path = write_panel_csv(toy_levels, tmp_path / "panel.csv")
    again = load_panel_csv(path, schema=None)
    assert again == toy_levels
    # including awkward floats
    ds = one_country({1990: 0.1, 1991: 1e-17, 1992: -3.141592653589793})
    path = write_panel_csv(ds, tmp_path / "tricky.csv")
    assert load_panel_csv(path, schema=None) == ds


def test_decade_loader_requires_decade_multiples(tmp_path):
    p = tmp_path / "dec.csv"
    p.write_text("country,decade,kof\nAT,1985,0.7\n")
    with pytest.raises(MalformedNumberError):
        load_decade_csv(p, schema=("kof",))


def test_dataset_rejects_nan_cells():
    with pytest.raises(PanelDataError):
        PanelDataset(["AA"], [1990], {"x": {("AA", 1990): float("nan")}})


# ---------------------------------------------------------------- transforms

def test_log_diff_constant_series():
    ds = one_country({1990: 100.0, 1991: 100.0, 1992: 100.0})
    out = apply_transform(ds, TransformSpec.log_diff("x"), "dx")
    assert out.value("dx", "AA", 1990) is None
    assert out.value("dx", "AA", 1991) == 0.0
    assert out.value("dx", "AA", 1992) == 0.0


def test_log_diff_hand_value():
    ds = one_country({1990: 100.0, 1991: 110.0})
    out = apply_transform(ds, TransformSpec.log_diff("x"), "dx")
    assert out.value("dx", "AA", 1991) == pytest.approx(0.0953102, abs=1e-7)


def test_log_diff_rejects_non_positive():
    ds = one_country({1990: 100.0, 1991: -1.0})
    with pytest.raises(NonPositiveForLogError) as err:
        apply_transform(ds, TransformSpec.log_diff("x"), "dx")
    assert (err.value.country, err.value.year) == ("AA", 1991)


def test_lag_two_years():
    ds = one_country({1990: 1.0, 1991: 2.0, 1992: 3.0})
    out = apply_transform(ds, TransformSpec.lag("x", 2), "x_lag2")
    assert out.value("x_lag2", "AA", 1990) is None
    assert out.value("x_lag2", "AA", 1991) is None
    assert out.value("x_lag2", "AA", 1992) == 1.0


def test_lag_is_calendar_based():
    ds = one_country({1990: 1.0, 1992: 3.0})  # no 1991 row
    out = apply_transform(ds, TransformSpec.lag("x", 1), "x_lag1")
    # a positional shift would put 1.0 here; the calendar lag leaves it missing
    assert out.value("x_lag1", "AA", 1992) is None
    out2 = apply_transform(ds, TransformSpec.lag("x", 2), "x_lag2")
    assert out2.value("x_lag2", "AA", 1992) == 1.0


def test_product_is_cellwise(toy_levels):
    out = apply_transform(toy_levels, TransformSpec.product("cpi", "ulc"), "prod")
    assert out.value("prod", "AA", 1990) == 100.0 * 90.0
    assert out.value("prod", "BB", 1992) is None  # cpi missing there


def test_name_collision():
    ds = one_country({1990: 1.0})
    with pytest.raises(NameCollisionError):
        apply_transform(ds, TransformSpec.identity("x"), "x")


def test_log_diff_of_geometric_series_is_constant():
    for growth in (0.5, 0.9, 1.0, 1.07, 2.0):
        levels = {1980 + t: 100.0 * growth**t for t in range(20)}
        out = apply_transform(one_country(levels), TransformSpec.log_diff("x"), "dx")
        for year in range(1981, 2000):
            assert abs(out.value("dx", "AA", year) - math.log(growth)) <= 1e-12


# ---------------------------------------------------------------- windows

def test_window_retains_decade(toy_levels):
    w = DecadeWindow.from_label("1990s")
    sub = window(toy_levels, w)
    assert sub.years == tuple(range(1990, 1995))
    with pytest.raises(EmptyWindowError):
        window(toy_levels, DecadeWindow.from_label("2010s"))


def test_pre_window_lag_survives_at_window_start():
    ds = one_country({y: float(y) for y in range(1979, 1986)})
    lagged = apply_transform(ds, TransformSpec.lag("x", 1), "x_lag1")
    sub = window(lagged, DecadeWindow.from_start(1980))
    assert sub.value("x_lag1", "AA", 1980) == 1979.0


def test_nested_windows_equal_intersection():
    ds = one_country({y: float(y) for y in range(1980, 2000)})
    w80 = DecadeWindow.from_start(1980)
    again = window(window(ds, w80), w80)
    assert again == window(ds, w80)


def test_decade_window_validation():
    with pytest.raises(PanelDataError):
        DecadeWindow("bad", 1980, 1990)
    with pytest.raises(PanelDataError):
        DecadeWindow("bad", 1985, 1994)
    with pytest.raises(PanelDataError):
        DecadeWindow.from_label("decade of 1980")
    w = DecadeWindow.from_label(" 2010s ")
    assert (w.start_year, w.end_year) == (2010, 2019)


# ---------------------------------------------------------------- medians

def test_median_matches_decade_fixture():
    ds = load_table_a2()
    assert median_by_window(ds, "em6", DecadeWindow.from_start(1980)) == pytest.approx(0.0041, abs=1e-12)
    assert median_by_window(ds, "em10", DecadeWindow.from_start(2010)) == pytest.approx(0.0442, abs=1e-12)


def test_median_single_country():
    ds = one_country({1990: 7.0})
    assert median_by_window(ds, "x", DecadeWindow.from_start(1990)) == 7.0


def test_median_no_data():
    ds = one_country({1990: 7.0})
    with pytest.raises(NoDataError):
        median_by_window(ds, "x", DecadeWindow.from_start(2000))


@settings(max_examples=60, deadline=None)
@given(
    values=st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=9),
    scale=st.floats(min_value=0.01, max_value=50),
)
def test_median_ordering_and_scale_invariance(values, scale):
    countries = [f"C{i}" for i in range(len(values))]
    base = {"x": {(c, 1990): v for c, v in zip(countries, values)}}
    ds = PanelDataset(countries, [1990], base)
    shuffled = PanelDataset(countries[::-1], [1990], base)
    w = DecadeWindow.from_start(1990)
    m = median_by_window(ds, "x", w)
    assert median_by_window(shuffled, "x", w) == m
    scaled = PanelDataset(countries, [1990], {"x": {k: scale * v for k, v in base["x"].items()}})
    assert median_by_window(scaled, "x", w) == pytest.approx(scale * m, rel=1e-12, abs=1e-12)


def test_transform_spec_validation():
    with pytest.raises(PanelDataError):
        TransformSpec("sqrt", "x")
    with pytest.raises(PanelDataError):
        TransformSpec.lag("x", 0)
    with pytest.raises(PanelDataError):
        TransformSpec("product", "x")


def test_csv_text_matches_written_file(tmp_path, toy_levels):
    path = write_panel_csv(toy_levels, tmp_path / "a.csv")
    assert path.read_text() == panel_csv_text(toy_levels)
