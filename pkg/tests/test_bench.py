from fractions import Fraction

import pytest

from dic.services.bench import BENCH_HEADERS, BenchRow, format_bench, run_bench, winograd_agrees


def test_paths_agree_on_sanity_shape():
    assert winograd_agrees((1, 8, 16, 16, 8)) < 1e-10
    assert winograd_agrees((2, 3, 7, 5, 4)) < 1e-10


def test_row_formatting():
    row = BenchRow((1, 64, 16, 16, 64), direct_ms=4.0, winograd_ms=2.0, mult_ratio=Fraction(4, 9))
    assert row.speedup == 2.0
    table = format_bench([row])
    assert all(header in table for header in BENCH_HEADERS)
    assert "1x64x16x16->64" in table
    assert "4/9" in table


def test_tiny_bench_runs():
    rows = run_bench([(1, 4, 8, 8, 4)], repeats=1)
    assert len(rows) == 1
    assert rows[0].direct_ms > 0 and rows[0].winograd_ms > 0
    assert rows[0].mult_ratio == Fraction(4, 9)


@pytest.mark.bench
def test_winograd_not_slower_on_large_layers():
    rows = run_bench([(1, 64, 16, 16, 64), (1, 96, 32, 32, 96)], repeats=3)
    for row in rows:
        assert row.speedup > 0.5, row.cells()
