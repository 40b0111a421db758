import numpy as np
import pytest

from mscos.supports import ArealSupport, OverlapTable

# Nine partition units with unequal areas. Coarse support B groups them as
# {A1}, {A2, A3}, {A4, A7}, {A5, A6}; support C as {A3, A4, A5, A8}, {A9}.
FIG1_AREAS = np.array([1.0, 2.0, 0.5, 1.5, 3.0, 0.25, 2.5, 0.75, 4.0])
FIG1_B = {"B1": ["A1"], "B2": ["A2", "A3"], "B3": ["A4", "A7"], "B4": ["A5", "A6"]}
FIG1_C = {"C1": ["A3", "A4", "A5", "A8"], "C2": ["A9"]}


def _support(ids, areas):
    n = len(ids)
    cents = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    return ArealSupport(ids, np.asarray(areas, float), cents, np.zeros((n, n), bool))


def _coarse(groups, fine):
    ids = list(groups)
    areas = [sum(fine.areas[fine.index(a)] for a in groups[g]) for g in ids]
    table = OverlapTable.from_rows(
        (a, g, fine.areas[fine.index(a)]) for g in ids for a in groups[g])
    return _support(ids, areas), table


@pytest.fixture
def fig1():
    A = _support([f"A{i}" for i in range(1, 10)], FIG1_AREAS)
    B, tb = _coarse(FIG1_B, A)
    C, tc = _coarse(FIG1_C, A)
    return {"A": A, "B": B, "C": C, "overlaps_B": tb, "overlaps_C": tc}
