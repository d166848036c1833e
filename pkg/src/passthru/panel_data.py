"""Country-year panel container, CSV ingestion, transforms, and decade windows.

The dataset is a grid of named numeric series indexed by (country, year).
Missing observations are absent cells, never NaN or sentinel values, and every
operation is a pure function returning a new dataset.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from passthru.errors import PassthruError


class PanelDataError(PassthruError):
    """Base for panel construction, ingestion, and transform failures."""


class DuplicateKeyError(PanelDataError):
    def __init__(self, country: str, year: int):
        super().__init__(f"duplicate row for ({country}, {year})")
        self.country = country
        self.year = year


class MalformedNumberError(PanelDataError):
    def __init__(self, row: int, col: str, raw: str):
        super().__init__(f"row {row}, column {col!r}: cannot parse {raw!r} as a number")
        self.row = row
        self.col = col


class EmptyFileError(PanelDataError):
    pass


class UnknownColumnError(PanelDataError):
    pass


class NonPositiveForLogError(PanelDataError):
    def __init__(self, country: str, year: int, value: float):
        super().__init__(f"log transform needs strictly positive values; ({country}, {year}) = {value}")
        self.country = country
        self.year = year


class NameCollisionError(PanelDataError):
    pass


class EmptyWindowError(PanelDataError):
    pass


class NoDataError(PanelDataError):
    pass


PANEL_SCHEMA = (
    "cpi", "core_cpi", "ulc", "earnings_h",
    "output_gap", "unemp_gap", "kof", "em6", "em10",
)
DECADE_SCHEMA = ("kof", "em6", "em10")


@dataclass(frozen=True)
class DecadeWindow:
    """An inclusive ten-year span aligned to a calendar decade."""

    label: str
    start_year: int
    end_year: int

    def __post_init__(self):
        if not self.label:
            raise PanelDataError("decade window needs a label")
        if self.end_year - self.start_year != 9:
            raise PanelDataError(f"{self.label}: decade must span exactly 10 years")
        if self.start_year % 10 != 0:
            raise PanelDataError(f"{self.label}: decade must start on a multiple of 10")

    @classmethod
    def from_start(cls, start_year: int) -> "DecadeWindow":
        return cls(f"{start_year}s", start_year, start_year + 9)

    @classmethod
    def from_label(cls, label: str) -> "DecadeWindow":
        text = label.strip()
        if not (text.endswith("s") and text[:-1].isdigit()):
            raise PanelDataError(f"cannot parse decade label {label!r} (expected e.g. '1980s')")
        return cls.from_start(int(text[:-1]))


@dataclass(frozen=True)
class TransformSpec:
    """Recipe for deriving one series from existing ones."""

    kind: str  # lag | log_diff | product | identity
    source: str
    other: str | None = None
    periods: int = 1

    def __post_init__(self):
        if self.kind not in ("lag", "log_diff", "product", "identity"):
            raise PanelDataError(f"unknown transform kind {self.kind!r}")
        if not self.source:
            raise PanelDataError("transform needs a source variable")
        if self.kind == "lag" and self.periods < 1:
            raise PanelDataError("lag order must be >= 1")
        if self.kind == "product" and not self.other:
            raise PanelDataError("product transform needs two operands")

    @classmethod
    def lag(cls, source: str, periods: int = 1) -> "TransformSpec":
        return cls("lag", source, periods=periods)

    @classmethod
    def log_diff(cls, source: str) -> "TransformSpec":
        return cls("log_diff", source)

    @classmethod
    def product(cls, a: str, b: str) -> "TransformSpec":
        return cls("product", a, other=b)

    @classmethod
    def identity(cls, source: str) -> "TransformSpec":
        return cls("identity", source)


class PanelDataset:
    """Immutable country x year grid of named numeric series.

    `series` maps variable name -> {(country, year): value}. Cells absent from
    the inner mapping are missing observations.
    """

    __slots__ = ("countries", "years", "variables", "_cells")

    def __init__(
        self,
        countries: Iterable[str],
        years: Iterable[int],
        series: Mapping[str, Mapping[tuple[str, int], float]],
    ):
        countries = tuple(str(c) for c in countries)
        if not countries:
            raise PanelDataError("dataset needs at least one country")
        if len(set(countries)) != len(countries) or any(not c for c in countries):
            raise PanelDataError("country codes must be unique and non-empty")
        years = tuple(int(y) for y in years)
        if not years:
            raise PanelDataError("dataset needs at least one year")
        if any(b <= a for a, b in zip(years, years[1:])):
            raise PanelDataError("years must be strictly increasing")

        country_set = frozenset(countries)
        year_set = frozenset(years)
        cells: dict[str, dict[tuple[str, int], float]] = {}
        for name, obs in series.items():
            name = str(name)
            if not name:
                raise PanelDataError("variable names must be non-empty")
            clean: dict[tuple[str, int], float] = {}
            for (country, year), value in obs.items():
                if country not in country_set or year not in year_set:
                    raise PanelDataError(f"{name}: cell ({country}, {year}) outside the declared grid")
                value = float(value)
                if not math.isfinite(value):
                    raise PanelDataError(
                        f"{name}: non-finite value at ({country}, {year}); leave missing cells absent"
                    )
                clean[(country, int(year))] = value
            cells[name] = clean

        self.countries = countries
        self.years = years
        self.variables = tuple(cells)
        self._cells = cells

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return (
            self.countries == other.countries
            and self.years == other.years
            and self.variables == other.variables
            and self._cells == other._cells
        )

    def __repr__(self) -> str:
        return (
            f"PanelDataset({len(self.countries)} countries, years "
            f"{self.years[0]}..{self.years[-1]}, {len(self.variables)} variables)"
        )

    def value(self, var: str, country: str, year: int) -> float | None:
        """Cell value, or None when the observation is missing."""
        return self._cells[var].get((country, year))

    def cells(self, var: str) -> Mapping[tuple[str, int], float]:
        """Read-only view of one variable's observed cells."""
        return MappingProxyType(self._cells[var])

    def n_obs(self, var: str) -> int:
        return len(self._cells[var])

    def with_series(self, name: str, obs: Mapping[tuple[str, int], float]) -> "PanelDataset":
        if name in self._cells:
            raise NameCollisionError(f"variable {name!r} already exists")
        merged = dict(self._cells)
        merged[name] = dict(obs)
        return PanelDataset(self.countries, self.years, merged)

    def complete_rows(self, variables: Iterable[str], country: str) -> list[tuple[int, list[float]]]:
        """Years of `country` where every listed variable is observed."""
        maps = [self._cells[v] for v in variables]
        rows = []
        for year in self.years:
            values = []
            for m in maps:
                v = m.get((country, year))
                if v is None:
                    break
                values.append(v)
            else:
                rows.append((year, values))
        return rows


def _load_keyed_csv(path: str | Path, schema: Iterable[str] | None, key_names: tuple[str, ...]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFileError(f"{path}: no header row") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "country" or header[1] not in key_names:
            raise UnknownColumnError(
                f"{path}: header must start with 'country,{ ' or '.join(key_names)}', got {header[:2]}"
            )
        key_col = header[1]
        var_names = header[2:]
        if len(set(var_names)) != len(var_names) or any(not v for v in var_names):
            raise UnknownColumnError(f"{path}: variable columns must be unique and non-empty")
        if schema is not None:
            unknown = [v for v in var_names if v not in tuple(schema)]
            if unknown:
                raise UnknownColumnError(f"{path}: unknown columns {unknown} (schema rejects them)")

        countries: list[str] = []
        seen = set()
        keys = set()
        cells: dict[str, dict[tuple[str, int], float]] = {v: {} for v in var_names}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedNumberError(row_no, "<row>", ",".join(row))
            country = row[0].strip()
            if not country:
                raise MalformedNumberError(row_no, "country", row[0])
            try:
                year = int(row[1].strip())
            except ValueError:
                raise MalformedNumberError(row_no, key_col, row[1]) from None
            if (country, year) in keys:
                raise DuplicateKeyError(country, year)
            keys.add((country, year))
            if country not in seen:
                seen.add(country)
                countries.append(country)
            for name, raw in zip(var_names, row[2:]):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    value = float(raw)
                except ValueError:
                    raise MalformedNumberError(row_no, name, raw) from None
                if not math.isfinite(value):
                    raise MalformedNumberError(row_no, name, raw)
                cells[name][(country, year)] = value
        if not keys:
            raise EmptyFileError(f"{path}: header but no data rows")

    years = sorted({y for _, y in keys})
    return PanelDataset(countries, years, cells), key_col


def load_panel_csv(path: str | Path, schema: Iterable[str] | None = PANEL_SCHEMA) -> PanelDataset:
    """Read a wide-format CSV keyed by country and year (or decade start).

    Header is `country,year,<var>,...`; empty cells are missing observations.
    Pass schema=None to accept arbitrary variable columns.
    """
    ds, _ = _load_keyed_csv(path, schema, ("year", "decade"))
    return ds


def load_decade_csv(path: str | Path, schema: Iterable[str] | None = DECADE_SCHEMA) -> PanelDataset:
    """Read a decade-keyed CSV (`country,decade,...`); the year axis holds decade starts."""
    ds, key_col = _load_keyed_csv(path, schema, ("decade",))
    bad = [y for y in ds.years if y % 10 != 0]
    if bad:
        raise MalformedNumberError(0, key_col, f"decades must be multiples of 10, got {bad}")
    return ds


def panel_csv_text(ds: PanelDataset, key_name: str = "year") -> str:
    """The dataset in the same wide format the loader reads.

    Floats are written with repr so a load round-trips every cell bit-exactly.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["country", key_name, *ds.variables])
    for country in ds.countries:
        for year in ds.years:
            values = [ds.value(v, country, year) for v in ds.variables]
            if all(v is None for v in values):
                continue
            writer.writerow([country, year] + [("" if v is None else repr(v)) for v in values])
    return buf.getvalue()


def write_panel_csv(ds: PanelDataset, path: str | Path, key_name: str = "year") -> Path:
    path = Path(path)
    path.write_text(panel_csv_text(ds, key_name), encoding="utf-8", newline="")
    return path


def table_a2_path() -> Path:
    """Location of the bundled decade covariate fixture."""
    return Path(str(resources.files("passthru").joinpath("fixtures/table_a2.csv")))


def load_table_a2() -> PanelDataset:
    return load_decade_csv(table_a2_path())


def apply_transform(ds: PanelDataset, t: TransformSpec, out_name: str) -> PanelDataset:
    """Add a derived series; source cells that are missing stay missing."""
    if not out_name:
        raise PanelDataError("transform output needs a name")
    if out_name in ds.variables:
        raise NameCollisionError(f"variable {out_name!r} already exists")
    for operand in (t.source, t.other) if t.other else (t.source,):
        if operand not in ds.variables:
            raise PanelDataError(f"transform operand {operand!r} not in dataset")

    src = ds.cells(t.source)
    out: dict[tuple[str, int], float] = {}
    if t.kind == "identity":
        out = dict(src)
    elif t.kind == "lag":
        for country in ds.countries:
            for year in ds.years:
                prev = src.get((country, year - t.periods))
                if prev is not None:
                    out[(country, year)] = prev
    elif t.kind == "log_diff":
        for country in ds.countries:
            for year in ds.years:
                v = src.get((country, year))
                if v is not None and v <= 0.0:
                    raise NonPositiveForLogError(country, year, v)
        for country in ds.countries:
            for year in ds.years:
                cur = src.get((country, year))
                prev = src.get((country, year - 1))
                if cur is not None and prev is not None:
                    out[(country, year)] = math.log(cur) - math.log(prev)
    else:  # product
        other = ds.cells(t.other)
        for key, a in src.items():
            b = other.get(key)
            if b is not None:
                out[key] = a * b
    return ds.with_series(out_name, out)


def window(ds: PanelDataset, w: DecadeWindow) -> PanelDataset:
    """Restrict to years inside the window; previously computed transforms keep their cells."""
    years = [y for y in ds.years if w.start_year <= y <= w.end_year]
    if not years:
        raise EmptyWindowError(f"{w.label}: no dataset years in [{w.start_year}, {w.end_year}]")
    keep = set(years)
    series = {
        name: {key: v for key, v in ds.cells(name).items() if key[1] in keep}
        for name in ds.variables
    }
    return PanelDataset(ds.countries, years, series)


def median_by_window(ds: PanelDataset, var: str, w: DecadeWindow) -> float:
    """Cross-country median of per-country mean values inside the window."""
    if var not in ds.variables:
        raise PanelDataError(f"unknown variable {var!r}")
    per_country = []
    for country in ds.countries:
        values = [
            v for y in ds.years
            if w.start_year <= y <= w.end_year and (v := ds.value(var, country, y)) is not None
        ]
        if values:
            per_country.append(sum(values) / len(values))
    if not per_country:
        raise NoDataError(f"{var}: no observations in {w.label}")
    return float(statistics.median(per_country))
