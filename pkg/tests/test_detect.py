import datetime as dt
import itertools

import numpy as np
import pytest

from gridwatch.detect import (DecisionMaker, GradualCheck, NbhDetectorState,
                              ShDetectorState, decide, gradual_overload_check,
                              nbh_step, retrain_tick, sh_step)
from gridwatch.errors import InsufficientData, SequencingError
from gridwatch.ingest import (NBH_ATTRIBUTES, SH_ATTRIBUTES, Dataset, feature_vector)
from gridwatch.trees import Leaf, TreeModel, TreeParams

START = dt.date(2009, 1, 5)


def leaf_model(value=0.0, pe=0.5, kind="rep_tree", attributes=SH_ATTRIBUTES):
    return TreeModel(kind=kind, root=Leaf(value, 1), attributes=tuple(attributes),
                     trained_rmse=pe)


def hourly_fv(step, consumption, kind="hour"):
    date = START + dt.timedelta(days=step // 24)
    return feature_vector(date, step % 24 + 1, kind, consumption)


def slot_fv(step, consumption):
    date = START + dt.timedelta(days=step // 48)
    return feature_vector(date, step % 48 + 1, "slot", consumption)


def drive(flags, nbr_incr=2, n_window=4, mode="windowed"):
    """Feed a boolean exceed sequence through sh_step; returns alert steps."""
    state = ShDetectorState(1, leaf_model(0.0, pe=0.5), nbr_incr=nbr_incr,
                            n_window=n_window, mode=mode)
    fired = []
    for step, flag in enumerate(flags):
        fv = hourly_fv(step, 1.0 if flag else 0.2)  # 1.0 > 0.5, 0.2 <= 0.5
        if sh_step(state, fv) is not None:
            fired.append(step)
    return fired, state


def reference_alerts(flags, nbr_incr=2, n_window=4):
    """Independent window-scan reference: at every exceeding step, count the
    flags inside the trailing window (since the last alert) and fire when
    strictly more than nbr_incr; clear the history after an alert."""
    fired = []
    history = []
    for step, flag in enumerate(flags):
        history.append(flag)
        if flag and sum(history[-n_window:]) > nbr_incr:
            fired.append(step)
            history = []
    return fired


# ---------------------------------------------------------------------------
# SH detector

def test_sh_no_flag_when_within_threshold():
    state = ShDetectorState(1, leaf_model(0.5, pe=0.3))
    event = sh_step(state, hourly_fv(0, 0.7))  # 0.7 <= 0.5 + 0.3
    assert event is None
    assert state.benign_buffer and not state.suspects


def test_sh_exactly_threshold_never_flags():
    state = ShDetectorState(1, leaf_model(0.5, pe=0.3))
    for step in range(6):
        assert sh_step(state, hourly_fv(step, 0.8)) is None
    assert state.counter == 0


def test_sh_three_consecutive_increases_alert_on_third():
    fired, state = drive([True, True, True])
    assert fired == [2]
    assert state.counter == 0  # window cleared after the alert


def test_sh_alert_row_goes_to_suspects_not_benign():
    fired, state = drive([True, True, True, False])
    assert len(state.suspects) == 1
    assert len(state.benign_buffer) == 3  # two pre-alert exceedances + benign row
    assert len(state.suspects) + len(state.benign_buffer) == 4


def test_sh_windowed_matches_reference_exhaustive_length_8():
    for n in range(1, 9):
        for flags in itertools.product([False, True], repeat=n):
            assert drive(flags)[0] == reference_alerts(flags), flags


def test_sh_window_size_matters():
    # five flags spaced so a window of 4 holds at most 2 until the last step
    flags = [True, False, True, False, True, True]
    assert drive(flags, n_window=4)[0] == reference_alerts(flags, n_window=4)
    assert drive(flags, n_window=6)[0] == reference_alerts(flags, n_window=6)


def test_sh_lifetime_mode_alerts_on_fourth_exceedance():
    fired, _ = drive([True] * 6, mode="lifetime")
    assert fired == [3, 4, 5]  # counter: 0,1,2 then > 2 from the fourth on


def test_sh_out_of_order_rejected():
    state = ShDetectorState(1, leaf_model())
    sh_step(state, hourly_fv(5, 0.1))
    with pytest.raises(SequencingError):
        sh_step(state, hourly_fv(4, 0.1))


def test_sh_monotone_in_observed():
    # raising the observation at the alerting step keeps the alert
    base = [True, True, True]
    _, state_low = drive(base)
    state = ShDetectorState(1, leaf_model(0.0, pe=0.5))
    for step in range(2):
        sh_step(state, hourly_fv(step, 1.0))
    event = sh_step(state, hourly_fv(2, 5.0))  # even larger consumption
    assert event is not None


def test_sh_zero_false_alarms_on_perfect_predictions():
    state = ShDetectorState(1, leaf_model(0.5, pe=0.0))
    for step in range(48):
        assert sh_step(state, hourly_fv(step, 0.5)) is None
    assert not state.suspects and not state.alerts


def test_sh_benign_routing_conservation():
    rng = np.random.default_rng(4)
    state = ShDetectorState(1, leaf_model(0.5, pe=0.1))
    n = 200
    for step in range(n):
        sh_step(state, hourly_fv(step, float(rng.uniform(0, 1.2))))
    assert len(state.benign_buffer) + len(state.suspects) == n


# ---------------------------------------------------------------------------
# NBH detector

def test_nbh_immediate_alert():
    state = NbhDetectorState(leaf_model(240.0, pe=48.0, attributes=NBH_ATTRIBUTES))
    event = nbh_step(state, slot_fv(0, 300.0))  # 300 > 288
    assert event is not None and event.kind == "nacr"
    assert state.suspects


def test_nbh_boundary_is_strict():
    state = NbhDetectorState(leaf_model(240.0, pe=48.0, attributes=NBH_ATTRIBUTES))
    assert nbh_step(state, slot_fv(0, 288.0)) is None
    assert state.benign_buffer


def test_nbh_benign_rows_buffered():
    state = NbhDetectorState(leaf_model(240.0, pe=48.0, attributes=NBH_ATTRIBUTES))
    for step in range(10):
        nbh_step(state, slot_fv(step, 200.0))
    assert len(state.benign_buffer) == 10


def test_nbh_alert_timestamp_is_half_hour():
    state = NbhDetectorState(leaf_model(0.0, pe=0.1, attributes=NBH_ATTRIBUTES))
    event = nbh_step(state, slot_fv(3, 10.0))  # slot 4 starts at 01:30
    assert event.timestamp().isoformat() == "2009-01-05T01:30:00"


# ---------------------------------------------------------------------------
# decision fusion

def test_decide_examples():
    assert decide(False, 251, 500) is True
    assert decide(False, 250, 500) is False
    assert decide(True, 0, 500) is True


def test_decide_matches_formula_exhaustive():
    for nb_sh in range(1, 9):
        for nb_alert in range(nb_sh + 1):
            for nacr in (False, True):
                assert decide(nacr, nb_alert, nb_sh) == (nacr or nb_alert > nb_sh / 2)


def test_decide_validates_inputs():
    with pytest.raises(ValueError):
        decide(False, 0, 0)
    with pytest.raises(ValueError):
        decide(False, 5, 4)


def test_decision_maker_routes_by_confirmation():
    maker = DecisionMaker(4, confirm=lambda event: event.interval == 1)
    sample = [feature_vector(START, 1, "slot", 1.0)]
    event = maker.tick(START, 1, True, 0, samples=sample)
    assert event is not None and maker.attack_store == sample
    sample2 = [feature_vector(START, 2, "slot", 1.0)]
    event = maker.tick(START, 2, True, 0, samples=sample2)
    assert event is not None and maker.benign_store == sample2
    sample3 = [feature_vector(START, 3, "slot", 1.0)]
    assert maker.tick(START, 3, False, 1, samples=sample3) is None
    assert sample3[0] in maker.benign_store


# ---------------------------------------------------------------------------
# gradual overload

def test_gradual_constant_series_not_flagged():
    check = gradual_overload_check([5.0] * 30, pe=0.4)
    assert check.slope == pytest.approx(0.0, abs=1e-12)
    assert not check.flagged


def test_gradual_linear_series_slope_exact():
    series = [10 + 0.5 * k for k in range(30)]
    check = gradual_overload_check(series, pe=0.4)
    assert check.slope == pytest.approx(0.5, abs=1e-12)
    assert check.flagged  # drift 15 kWh >> 2 * 0.4


def test_gradual_noisy_flat_series_not_flagged():
    rng = np.random.default_rng(12)
    series = 5.0 + rng.normal(0, 0.2, 60)
    check = gradual_overload_check(series, pe=0.4)
    assert not check.flagged


def test_gradual_short_series_rejected():
    with pytest.raises(InsufficientData):
        gradual_overload_check([1.0] * 27)


def test_gradual_explicit_threshold():
    series = [1.0 + 0.01 * k for k in range(30)]
    assert gradual_overload_check(series, slope_threshold=0.02).flagged is False
    assert gradual_overload_check(series, slope_threshold=0.005).flagged is True


# ---------------------------------------------------------------------------
# retraining

def _history_dataset(weeks=8, level="SH"):
    # 2009-12-07 is a Monday; 12 weeks from there stay inside winter, so the
    # consumption distribution really is identical before and after retraining
    rows = []
    rng = np.random.default_rng(3)
    start = dt.date(2009, 12, 7)
    for d in range(weeks * 7):
        date = start + dt.timedelta(days=d)
        for hour in range(1, 25):
            base = 0.5 + 0.3 * (8 <= hour <= 22)
            rows.append(feature_vector(date, hour, "hour", base + float(rng.normal(0, 0.05))))
    return Dataset(level, 1, rows, SH_ATTRIBUTES)


def test_retrain_below_threshold_is_noop():
    state = ShDetectorState(1, leaf_model(0.5, pe=0.1))
    state.history = _history_dataset(4)
    state.benign_buffer = state.history.rows[:10]
    assert retrain_tick(state, min_rows=100) is None
    assert len(state.benign_buffer) == 10


def test_retrain_swaps_model_and_clears_buffer():
    history = _history_dataset(8)
    cut = 6 * 7 * 24
    state = ShDetectorState(1, leaf_model(0.8, pe=0.5, kind="model_tree"))
    state.history = history.replace_rows(history.rows[:cut])
    state.benign_buffer = list(history.rows[cut:])
    state.params = TreeParams(seed=1)
    old_model = state.model
    new_model = retrain_tick(state, min_rows=300, split_seed=2)
    assert new_model is not None and state.model is new_model
    assert state.model is not old_model
    assert state.pe == new_model.trained_rmse
    assert state.benign_buffer == []


def test_retrain_stable_distribution_keeps_pe_close():
    history = _history_dataset(12)
    cut = 8 * 7 * 24
    first = _history_dataset(12)

    state = ShDetectorState(1, leaf_model(0.0, pe=1.0, kind="model_tree"))
    state.history = history.replace_rows(history.rows[:cut])
    state.params = TreeParams(seed=5)

    # reference pe: train on the first 8 weeks alone
    from gridwatch.ingest import split_train_validation
    from gridwatch.trees import train_model_tree
    train, valid = split_train_validation(state.history, 2)
    reference = train_model_tree(train, TreeParams(seed=5), valid=valid)

    state.benign_buffer = list(history.rows[cut:])
    new_model = retrain_tick(state, min_rows=100, split_seed=2)
    assert abs(new_model.trained_rmse - reference.trained_rmse) <= 0.2 * reference.trained_rmse


def test_retrain_failure_keeps_old_model():
    state = ShDetectorState(1, leaf_model(0.5, pe=0.1))
    state.history = _history_dataset(4).replace_rows([])  # forces a split error
    state.benign_buffer = _history_dataset(4).rows[:50]
    old = state.model
    with pytest.raises(Exception):
        retrain_tick(state, min_rows=10)
    assert state.model is old
    assert state.benign_buffer  # untouched
