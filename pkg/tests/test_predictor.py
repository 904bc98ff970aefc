import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pipeadapt.predictor import (
    LoadSeries,
    PredictorSpec,
    load_external_predictions,
    load_trace,
    predict,
    smape,
    write_trace,
)


def test_reactive_max_uses_trailing_window():
    hist = LoadSeries(0, [3, 9, 4, 5])
    assert predict(PredictorSpec("reactive_max", window_s=2), hist) == 5.0
    assert predict(PredictorSpec("reactive_max", window_s=120), hist) == 9.0


def test_headroom_scales_peak():
    hist = LoadSeries(0, [10, 20])
    assert predict(PredictorSpec("window_max_headroom", headroom=0.1), hist) == pytest.approx(22.0)


def test_oracle_reads_future_horizon():
    future = LoadSeries(10, [1, 2, 30, 4])
    assert predict(PredictorSpec("oracle", horizon_s=2), LoadSeries(), future) == 2.0
    assert predict(PredictorSpec("oracle", horizon_s=3), LoadSeries(), future) == 30.0
    with pytest.raises(ValueError):
        predict(PredictorSpec("oracle"), LoadSeries())


def test_external_uses_latest_known_prediction():
    spec = PredictorSpec("external", external={0: 5.0, 10: 7.5})
    assert predict(spec, LoadSeries(), now=9) == 5.0
    assert predict(spec, LoadSeries(), now=10) == 7.5
    with pytest.raises(ValueError):
        PredictorSpec("external")


def test_invalid_specs():
    with pytest.raises(ValueError):
        PredictorSpec("lstm")
    with pytest.raises(ValueError):
        PredictorSpec(window_s=0)
    with pytest.raises(ValueError):
        PredictorSpec(headroom=-0.5)
    with pytest.raises(ValueError):
        predict(PredictorSpec(), LoadSeries())


def test_window_is_absolute():
    s = LoadSeries(100, [1, 2, 3, 4])
    assert s.window(101, 103) == LoadSeries(101, (2, 3))
    assert s.window(0, 101) == LoadSeries(100, (1,))
    assert len(s.window(200, 300)) == 0


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        LoadSeries(0, [1, -1])


def test_trace_round_trip(tmp_path):
    s = LoadSeries(5, [0, 3, 7])
    write_trace(s, tmp_path / "t.csv")
    assert load_trace(tmp_path / "t.csv") == s


def test_trace_errors_name_line(fixtures_dir, tmp_path):
    with pytest.raises(ValueError, match=":3"):
        load_trace(fixtures_dir / "malformed_trace.csv")
    gap = tmp_path / "gap.csv"
    gap.write_text("t_s,rps\n0,1\n2,1\n")
    with pytest.raises(ValueError, match="consecutive"):
        load_trace(gap)
    assert len(load_trace(fixtures_dir / "empty_trace.csv")) == 0


def test_external_predictions_file(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("t,predicted_rps\n0,4\n10,8.5\n")
    assert load_external_predictions(f) == {0: 4.0, 10: 8.5}


def test_smape_examples():
    assert smape([10, 10], [10, 10]) == 0.0
    assert smape([0], [0]) == 0.0
    assert smape([0], [5]) == 200.0
    assert smape([110], [90]) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        smape([1, 2], [1])


pos = st.floats(0, 1e6)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(pos, pos), min_size=1, max_size=20))
def test_smape_symmetric_and_bounded(pairs):
    p, a = [x for x, _ in pairs], [y for _, y in pairs]
    assert smape(p, a) == pytest.approx(smape(a, p))
    assert 0.0 <= smape(p, a) <= 200.0 + 1e-9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=300), st.integers(1, 300), st.integers(1, 60))
def test_oracle_never_below_true_peak(counts, now, horizon):
    trace = LoadSeries(0, counts)
    future = trace.window(now, now + horizon)
    if not len(future):
        return
    assert predict(PredictorSpec("oracle", horizon_s=horizon), trace.window(0, now), future) >= max(future.counts)
