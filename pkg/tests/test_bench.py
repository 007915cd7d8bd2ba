import numpy as np

from gemproj.bench import (
    BenchRow,
    adjacent_fit_error,
    bench_identity_path,
    bench_ordering,
    linear_fit_r2,
    rows_to_csv,
)


def affine_row(m, d, K, a=1e-6, b=2e-9):
    t = a + b * (K * m * d)
    return BenchRow("igem", m, d, K, t, 0.0, t, 5)


def test_identity_path_has_negligible_overhead():
    means = bench_identity_path(d=50_000, warmup=2, reps=7)
    assert all(v < 1e-3 for v in means.values())


def test_ordering_holds_at_moderate_scale():
    out = bench_ordering(m=4, d=20_000, K=3, warmup=2)
    assert out["agem"].min_s < out["igem"].min_s < out["gem_exact"].min_s


def test_linear_fit_recovers_exact_affine_data():
    rows = [affine_row(m, d, K) for m in (2, 4) for d in (100, 200) for K in (1, 3)]
    a, b, r2 = linear_fit_r2(rows)
    assert abs(a - 1e-6) < 1e-12
    assert abs(b - 2e-9) < 1e-15
    assert r2 > 0.999999


def test_adjacent_fit_error_on_synthetic_data():
    rows = [affine_row(m, d, K) for m in (2, 4, 8) for d in (100, 200, 400) for K in (1, 3, 9)]
    assert adjacent_fit_error(rows, 4, 200, 3) < 1e-6
    # corner cell still has enough neighbors
    assert adjacent_fit_error(rows, 2, 100, 1) < 1e-6


def test_rows_to_csv_format():
    rows = [BenchRow("igem", 2, 100, 3, 0.001, 0.0001, 0.0009, 5)]
    text = rows_to_csv(rows)
    lines = text.strip().splitlines()
    assert lines[0] == "method,m,d_phi,K,kmd,mean_s,std_s,min_s,reps"
    assert lines[1].startswith("igem,2,100,3,600,")
