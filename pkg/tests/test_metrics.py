import numpy as np
import pytest
from hypothesis import given, strategies as st

from seal import layers as L
from seal.errors import ConfigError, NumericError, StateError
from seal.metrics import (AccuracyMatrix, FlatnessConfig, MetricReport,
                          average_accuracy, average_incremental_accuracy,
                          compute_report, flatness_H, flatness_from_accuracies,
                          forgetting_metrics, forward_transfer, objective_F)
from seal.network import forward, init_params


# -- independent brute-force oracles (plain python sums, no numpy) -----------

def oracle_aa(rows, k):
    return sum(rows[k][: k + 1]) / (k + 1)


def oracle_aia(rows, k):
    return sum(oracle_aa(rows, j) for j in range(k + 1)) / (k + 1)


def oracle_forgetting(rows, k):
    per = [max(rows[j][i] for j in range(i, k)) - rows[k][i] for i in range(k)]
    return per, sum(per) / k


def oracle_bwt(rows, k):
    return sum(rows[k][i] - rows[i][i] for i in range(k + 1)) / (k + 1)


def oracle_fwt(zero_shot, refs, k):
    return sum(zero_shot[i] - refs[i] for i in range(1, k + 1)) / k


def random_matrix(rng, tasks):
    rows = [[float(rng.uniform()) for _ in range(k + 1)] for k in range(tasks)]
    mat = AccuracyMatrix(tasks)
    for r in rows:
        mat.add_row(r)
    zs = {i: float(rng.uniform()) for i in range(1, tasks)}
    for i, v in zs.items():
        mat.record_zero_shot(i, v)
    return mat, rows, zs


def test_matches_bruteforce_oracles_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(200):
        tasks = int(rng.integers(2, 7))
        mat, rows, zs = random_matrix(rng, tasks)
        refs = [float(rng.uniform()) for _ in range(tasks)]
        for k in range(tasks):
            assert average_accuracy(mat, k) == pytest.approx(
                oracle_aa(rows, k), abs=1e-12)
            assert average_incremental_accuracy(mat, k) == pytest.approx(
                oracle_aia(rows, k), abs=1e-12)
            if k >= 1:
                per, avg, bwt = forgetting_metrics(mat, k)
                o_per, o_avg = oracle_forgetting(rows, k)
                assert np.allclose(per, o_per, atol=1e-12)
                assert avg == pytest.approx(o_avg, abs=1e-12)
                assert bwt == pytest.approx(oracle_bwt(rows, k), abs=1e-12)
                assert forward_transfer(mat, refs, k) == pytest.approx(
                    oracle_fwt(zs, refs, k), abs=1e-12)


def test_hand_examples():
    mat = AccuracyMatrix(2)
    mat.add_row([0.9])
    mat.add_row([0.85, 0.8])
    assert average_accuracy(mat, 1) == pytest.approx(0.825)
    assert average_accuracy(mat, 0) == pytest.approx(0.9)
    assert average_incremental_accuracy(mat, 1) == pytest.approx((0.9 + 0.825) / 2)
    per, avg, bwt = forgetting_metrics(mat, 1)
    assert per == (pytest.approx(0.05),)
    assert avg == pytest.approx(0.05)
    assert bwt == pytest.approx(-0.025)

    mat.record_zero_shot(1, 0.6)
    assert forward_transfer(mat, [0.0, 0.5], 1) == pytest.approx(0.1)
    assert forward_transfer(mat, [0.0, 0.0], 1) == pytest.approx(0.6)


def test_constant_matrix_collapses():
    mat = AccuracyMatrix(4)
    for k in range(4):
        mat.add_row([0.7] * (k + 1))
    assert average_accuracy(mat, 3) == pytest.approx(0.7)
    assert average_incremental_accuracy(mat, 3) == pytest.approx(0.7)
    per, avg, bwt = forgetting_metrics(mat, 3)
    assert avg == pytest.approx(0.0) and bwt == pytest.approx(0.0)


def test_improving_matrix_gives_nonpositive_forgetting():
    mat = AccuracyMatrix(3)
    mat.add_row([0.5])
    mat.add_row([0.6, 0.5])
    mat.add_row([0.7, 0.6, 0.5])
    per, avg, bwt = forgetting_metrics(mat, 2)
    assert all(f <= 0 for f in per)
    assert bwt >= 0


def test_state_errors():
    mat = AccuracyMatrix(3)
    mat.add_row([0.9])
    with pytest.raises(StateError):
        average_accuracy(mat, 1)
    with pytest.raises(StateError):
        forgetting_metrics(mat, 0)
    with pytest.raises(StateError):
        mat.add_row([0.1, 0.2, 0.3])   # wrong length for row 1
    mat.add_row([0.8, 0.7])
    with pytest.raises(StateError):
        forward_transfer(mat, [0.0, 0.5], 1)   # zero-shot never recorded
    with pytest.raises(StateError):
        mat.a(0, 1)
    with pytest.raises(ConfigError):
        mat.add_row([1.2, 0.5, 0.5])


def test_report_serialization():
    mat = AccuracyMatrix(2)
    mat.add_row([0.9])
    mat.add_row([0.85, 0.8])
    mat.record_zero_shot(1, 0.6)
    r0 = compute_report(mat, 0)
    assert r0.average_forgetting is None and r0.backward_transfer is None
    row0 = r0.csv_row()
    assert row0[0] == "0" and row0[3] == "" and len(row0) == len(MetricReport.CSV_COLUMNS)
    r1 = compute_report(mat, 1, references=[0.0, 0.5])
    assert r1.average_forgetting == pytest.approx(0.05)
    assert r1.forward_transfer == pytest.approx(0.1)
    assert all(cell != "" for cell in r1.csv_row())


def test_objective_value_and_edges():
    assert objective_F(0.9535, 3_920_000) == pytest.approx(0.13458076033296043)
    assert round(objective_F(0.9535, 3_920_000), 4) == 0.1346
    assert objective_F(1.0, 10 ** 9) == 0.0
    assert objective_F(0.4, 12345, w=0.0) == pytest.approx(0.6)
    with pytest.raises(ConfigError):
        objective_F(0.5, 0)
    with pytest.raises(ConfigError):
        objective_F(1.5, 100)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.integers(1, 10 ** 8), st.integers(1, 10 ** 8))
def test_objective_monotone(a1, a2, s1, s2):
    if a1 < a2:
        assert objective_F(a1, s1) >= objective_F(a2, s1)
    if s1 < s2 and a1 < 1.0:
        assert objective_F(a1, s1) < objective_F(a1, s2)


def test_flatness_formula_hand_example():
    assert flatness_from_accuracies(0.90, [0.88, 0.86]) == pytest.approx(
        0.9666666666666666, abs=1e-12)
    assert flatness_from_accuracies(0.5, [0.5, 0.5]) == 1.0


def small_net_and_data(seed=0, n=60):
    specs = [L.conv2d(1, 4, 3), L.batchnorm(4), L.relu(), L.pooling("max", 2, 2),
             L.pooling("global_avg"), L.flatten(), L.dense(4, 3)]
    params = init_params(specs, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(0, 1, (n, 1, 8, 8)).astype(np.float32)
    logits, _ = forward(specs, params, x, train=False)
    y = logits.argmax(axis=1)   # labels the clean net always gets right
    return specs, params, x, y.astype(np.int64)


def test_flatness_sigma_zero_is_exactly_one():
    specs, params, x, y = small_net_and_data()
    assert flatness_H(specs, params, x, y, FlatnessConfig(sigma=0.0)) == 1.0


def test_flatness_deterministic_and_bounded():
    specs, params, x, y = small_net_and_data()
    cfg = FlatnessConfig(sigma=0.3, draws=4, seed=11)
    h1 = flatness_H(specs, params, x, y, cfg)
    h2 = flatness_H(specs, params, x, y, cfg)
    assert h1 == h2
    for seed in range(5):
        h = flatness_H(specs, params, x, y, FlatnessConfig(0.3, 4, seed))
        assert h <= 1.0


def test_flatness_never_mutates_params():
    specs, params, x, y = small_net_and_data()
    before = params.copy()
    flatness_H(specs, params, x, y, FlatnessConfig(sigma=0.5, draws=3, seed=2))
    for (_, _, a), (_, _, b) in zip(params.iter_trainable(), before.iter_trainable()):
        assert np.array_equal(a, b)
    for s1, s2 in zip(params.stats, before.stats):
        for k in s1:
            assert np.array_equal(s1[k], s2[k])


def test_flatness_zero_accuracy_rejected():
    specs, params, x, y = small_net_and_data()
    wrong = (y + 1) % 3
    with pytest.raises(NumericError):
        flatness_H(specs, params, x, wrong, FlatnessConfig())
    with pytest.raises(NumericError):
        flatness_from_accuracies(0.0, [0.1])
