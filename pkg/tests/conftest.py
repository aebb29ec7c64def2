import numpy as np
import pytest

from inclpanel.paneldata import PanelDataset, VariableDef


def make_panel(countries, years, data, polarity=None):
    """Build a PanelDataset from {symbol: (n_countries, n_years) array-like};
    NaN entries become missing cells."""
    polarity = polarity or {}
    symbols = list(data)
    grids = [np.asarray(data[s], dtype=float) for s in symbols]
    values = np.stack(grids, axis=2)
    missing = np.isnan(values)
    values = np.where(missing, 0.0, values)
    variables = tuple(
        VariableDef(s, polarity=polarity.get(s, "as_is")) for s in symbols
    )
    return PanelDataset(tuple(countries), tuple(years), variables, values,
                        missing)


@pytest.fixture
def tiny_panel():
    return make_panel(
        ["AT", "RO"],
        [2000, 2001, 2002],
        {"GDP": [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
         "EC": [[2.0, 4.0, 6.0], [1.0, 3.0, 5.0]]},
    )
