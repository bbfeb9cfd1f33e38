import numpy as np
import pytest

from tradeflow.ingest import StateMatrix, build_grid, classify_states, states_from_volumes
from tradeflow.learn import ForestConfig
from tradeflow.predict import (
    CalibrationSchedule,
    build_predictors,
    derive_seed,
    flow_sign_targets,
    majority_vote,
    rolling_forecast,
    vwap_change_targets,
    vwap_series,
)
from tradeflow.synth import MarketSpec, PlantedEdge, generate_market


def _grid(n_slices):
    return build_grid("2024-01-01", "2024-06-01").window(0, n_slices)


def test_predictor_row_layout():
    # two groups, 8 slices (one full day plus one), lag depth 1
    sigma = np.array(
        [
            [1, -1, 2, 1, 1, -1, 2, -1],
            [2, 2, 1, -1, 1, 1, -1, 2],
        ],
        dtype=np.int8,
    )
    grid = _grid(8)
    X, rows = build_predictors(sigma, grid, lag_depth=1)
    # slice 7 starts a new day, so its lag crosses the overnight gap
    assert rows.tolist() == [1, 2, 3, 4, 5, 6]
    # row for t=1: current states, then lagged states, then hour
    assert X[0].tolist() == [-1, 2, 1, 2, 10]
    assert X.shape[1] == 2 * 2 + 1


def test_predictor_width_formula_lag_two():
    sigma = np.random.default_rng(0).choice([-1, 1, 2], size=(3, 21)).astype(np.int8)
    X, rows = build_predictors(sigma, _grid(21), lag_depth=2)
    assert X.shape[1] == (2 + 1) * 3 + 1
    # first two slices of each day lack in-session lags
    assert 7 not in rows and 8 not in rows and 9 in rows


def test_predictor_errors():
    sigma = np.zeros((1, 3), dtype=np.int8)
    with pytest.raises(ValueError):
        build_predictors(sigma, _grid(3), lag_depth=0)
    with pytest.raises(ValueError):
        build_predictors(np.zeros((1, 1), dtype=np.int8), _grid(1), lag_depth=1)


def test_flow_sign_targets_sum_over_all_traders():
    grid = _grid(2)
    V = np.array([[1000.0, -500.0], [-400.0, -500.0]])
    G = np.abs(V)
    m = StateMatrix(
        traders=["a", "b"], grid=grid, V=V, G=G,
        sigma=states_from_volumes(V, G, 0.01), counts=np.zeros_like(V, dtype=np.int64),
    )
    assert flow_sign_targets(m).tolist() == [1, -1]


def test_vwap_series_and_targets():
    grid = _grid(3)
    from tradeflow.ingest import TradeRecord

    t0, t1 = int(grid.starts[0]), int(grid.starts[1])
    trades = [
        TradeRecord("a", t0 + 1, "X", 100.0, 10.0),
        TradeRecord("b", t0 + 2, "X", -300.0, 20.0),
        TradeRecord("a", t1 + 1, "X", 100.0, 30.0),
    ]
    vwap = vwap_series(trades, grid)
    assert vwap[0] == pytest.approx((100 * 10 + 300 * 20) / 400)
    assert vwap[1] == 30.0
    assert np.isnan(vwap[2])
    targets = vwap_change_targets(trades, grid)
    assert targets[0] == 1.0
    assert np.isnan(targets[1]) and np.isnan(targets[2])


def test_majority_vote_rules():
    assert majority_vote([1, 1, -1]) == 1
    assert majority_vote([-1, -1, 1, 0, 0]) == -1
    assert majority_vote([1, -1]) == 0
    assert majority_vote([0, 0]) == 0
    with pytest.raises(ValueError):
        majority_vote([])


def test_derive_seed_stable_and_distinct():
    assert derive_seed(3, 10, 45) == derive_seed(3, 10, 45)
    assert derive_seed(3, 10, 45) != derive_seed(3, 11, 45)
    assert derive_seed(3, 10, 45) != derive_seed(3, 10, 50)


def _planted_market(n_weekdays, seed=21):
    spec = MarketSpec(
        group_sizes=(6,) * 5,
        n_noise_traders=8,
        sync_fidelity=0.95,
        leadlag_edges=(PlantedEdge(0, 1), PlantedEdge(0, 2)),
        copy_fidelity=0.9,
        n_weekdays=n_weekdays,
        kappa=5e-4,
        seed=seed,
    )
    trades, truth = generate_market(spec)
    return trades, classify_states(trades, truth.grid)


SMALL = dict(top_n=100, min_trades=20, forest_config=ForestConfig(n_trees=25))


def test_rolling_forecast_produces_daily_records():
    trades, matrix = _planted_market(25)
    schedule = CalibrationSchedule(window_lengths=(20,))
    records, skipped = rolling_forecast(matrix, schedule, seed=1, **SMALL)
    assert len(skipped) == 20
    assert len(records) == 5 * 7
    # the second slice of each day must abstain: its feature row needs the
    # 9:00 slice whose own lag crosses the overnight gap
    by_day = {}
    for r in records:
        by_day.setdefault(matrix.grid.day_index[r.slice_index], []).append(r)
    for day, recs in by_day.items():
        assert recs[1].per_window == {20: 0}
        assert recs[1].combined == 0


def test_rolling_forecast_truncation_equivalence():
    trades, matrix = _planted_market(26)
    schedule = CalibrationSchedule(window_lengths=(20,))
    full, _ = rolling_forecast(matrix, schedule, seed=4, **SMALL)
    # truncate after day 22 and re-run: shared days must match bit-exactly
    cutoff = np.flatnonzero(matrix.grid.day_index <= 22)[-1] + 1
    trunc_m = matrix.slice_window(0, int(cutoff))
    part, _ = rolling_forecast(trunc_m, schedule, seed=4, **SMALL)
    full_by_slice = {r.slice_index: r for r in full}
    assert part  # sanity
    for r in part:
        f = full_by_slice[r.slice_index]
        assert r.per_window == f.per_window
        assert r.combined == f.combined


def test_rolling_forecast_recalibration_cadence_matches_daily():
    # the spec of the cadence: stale calibrations are reused between refreshes
    trades, matrix = _planted_market(24)
    s1 = CalibrationSchedule(window_lengths=(20,), recalibrate_every=1)
    s5 = CalibrationSchedule(window_lengths=(20,), recalibrate_every=5)
    daily, _ = rolling_forecast(matrix, s1, seed=2, **SMALL)
    sparse, _ = rolling_forecast(matrix, s5, seed=2, **SMALL)
    assert len(daily) == len(sparse)
    # first forecast day is freshly calibrated in both runs
    first_day = matrix.grid.day_index[daily[0].slice_index]
    for d, s in zip(daily, sparse):
        if matrix.grid.day_index[d.slice_index] == first_day:
            assert d.per_window == s.per_window


def test_rolling_forecast_vwap_requires_trades():
    _, matrix = _planted_market(22)
    with pytest.raises(ValueError):
        rolling_forecast(matrix, CalibrationSchedule(window_lengths=(20,)), target_kind="vwap")
    with pytest.raises(ValueError):
        rolling_forecast(matrix, CalibrationSchedule(window_lengths=(20,)), target_kind="sharpe")


def test_schedule_validation():
    with pytest.raises(ValueError):
        CalibrationSchedule(window_lengths=(50, 45))
    with pytest.raises(ValueError):
        CalibrationSchedule(window_lengths=(45,), recalibrate_every=0)
