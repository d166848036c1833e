from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from passthru.panel_data import PanelDataset


@pytest.fixture
def toy_levels() -> PanelDataset:
    """Two countries, five years of index levels with one gap."""
    years = range(1990, 1995)
    cells = {
        "cpi": {
            ("AA", 1990): 100.0, ("AA", 1991): 102.0, ("AA", 1992): 105.0,
            ("AA", 1993): 105.0, ("AA", 1994): 108.0,
            ("BB", 1990): 50.0, ("BB", 1991): 51.0,
            ("BB", 1993): 53.0, ("BB", 1994): 55.0,
        },
        "ulc": {
            ("AA", y): 90.0 + 2.0 * (y - 1990) for y in years
        } | {
            ("BB", y): 70.0 + 1.5 * (y - 1990) for y in years
        },
    }
    return PanelDataset(["AA", "BB"], years, cells)


def make_panel(series: dict, countries, years) -> PanelDataset:
    return PanelDataset(countries, years, series)
