import numpy as np
import pytest
from scipy.stats import special_ortho_group

from unitime.data import DomainData, DomainSpec, split_array
from unitime.evaluation import (
    EvaluationError, MetricReport, evaluate, fit_history, mae, mse, probe_count, repeat_baseline,
    select_instruction, separation_score,
)
from unitime.model import UniTime
from unitime.textinstr import build_vocabulary

from test_model import tiny


def test_repeat_baseline_examples():
    np.testing.assert_array_equal(repeat_baseline([1, 2, 3], 2), [3, 3])
    const = np.full(10, 4.2)
    assert mse(repeat_baseline(const[:6], 4), const[6:]) == 0.0


def test_repeat_error_grows_on_trend():
    series = np.arange(20.0)
    err = np.abs(repeat_baseline(series[:10], 10) - series[10:])
    assert np.all(np.diff(err) > 0)


def test_perfect_and_constant_predictors():
    y = np.random.default_rng(0).normal(size=(2000, 24))
    assert mse(y, y) == 0.0 and mae(y, y) == 0.0
    assert mse(np.zeros_like(y), y) == pytest.approx(1.0, abs=0.02)


def test_mse_matches_double_loop():
    rng = np.random.default_rng(1)
    p, y = rng.normal(size=(17, 9)), rng.normal(size=(17, 9))
    total = 0.0
    for i in range(17):
        for j in range(9):
            total += (p[i, j] - y[i, j]) ** 2
    assert abs(mse(p, y) - total / (17 * 9)) < 1e-12


def test_report_records_include_average():
    r = MetricReport()
    y = np.zeros((2, 4))
    r.add("D", 2, np.ones((2, 2)), y[:, :2], np.zeros((2, 2)))
    r.add("D", 4, 2 * np.ones((2, 4)), y, np.zeros((2, 4)))
    recs = r.records()
    assert [x["horizon"] for x in recs] == [2, 4, "avg"]
    assert recs[-1]["mse"] == 2.5 and recs[-1]["repeat_mse"] == 0.0


def _data(name, seed, lookback=12, horizon=6, stride=4, rows=120, instruction=None):
    rng = np.random.default_rng(seed)
    arr = rng.normal(size=(rows, 2)).cumsum(axis=0)
    spec = DomainSpec(name, instruction or f"{name} words", 2, lookback, horizon, stride)
    return DomainData(split_array(spec, arr))


def _model(instructions, seed=0):
    vocab = build_vocabulary(instructions)
    return UniTime.create(tiny(max_tokens=8, vocab_size=len(vocab)), vocab, np.random.default_rng(seed))


def test_evaluate_prefix_horizons():
    d = _data("A", 0)
    model = _model(["A words"])
    rep = evaluate(model, d, horizons=[3, 6])
    assert [r["horizon"] for r in rep.rows] == [3, 6]
    pool = d.pool("test")
    preds = model.predict(pool.batch(np.arange(len(pool))).inputs, d.spec)
    targets = pool.batch(np.arange(len(pool))).targets
    assert abs(rep.rows[0]["mse"] - mse(preds[:, :3], targets[:, :3])) < 1e-12
    with pytest.raises(EvaluationError):
        evaluate(model, d, horizons=[7])


def test_fit_history():
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(fit_history(x, 5), [[1, 1, 1, 2, 3]])
    np.testing.assert_array_equal(fit_history(x, 2), [[2, 3]])


def test_probe_count_floor_with_minimum_one():
    assert probe_count(100, 0.005) == 1
    assert probe_count(1000, 0.005) == 5


def _unseen_pool(seed=3):
    d = _data("U", seed, lookback=18, horizon=6, rows=200)
    return d.pool("test")


def test_single_candidate_selected():
    model = _model(["A words"])
    spec = DomainSpec("A", "A words", 2, 12, 6, 4)
    choice = select_instruction(model, _unseen_pool(), [spec], np.random.default_rng(0))
    assert choice.candidate == 0 and choice.domain == "A" and len(choice.losses) == 1


def test_identical_candidates_tie_break_to_first():
    model = _model(["A words"])
    a = DomainSpec("A", "A words", 2, 12, 6, 4)
    b = DomainSpec("B", "A words", 2, 12, 6, 4)
    choice = select_instruction(model, _unseen_pool(), [a, b], np.random.default_rng(0), probe_fraction=0.1)
    assert choice.losses[0] == choice.losses[1]
    assert choice.domain == "A"


def test_selection_deterministic_under_seed():
    model = _model(["A words", "B other words"])
    cands = [DomainSpec("A", "A words", 2, 12, 6, 4), DomainSpec("B", "B other words", 2, 8, 4, 4)]
    one = select_instruction(model, _unseen_pool(), cands, np.random.default_rng(5), probe_fraction=0.2)
    two = select_instruction(model, _unseen_pool(), cands, np.random.default_rng(5), probe_fraction=0.2)
    assert one.record() == two.record()
    assert np.array_equal(one.probe_indices, two.probe_indices)


def test_separation_identical_domains_is_one():
    v = np.random.default_rng(0).normal(size=(50, 6))
    assert separation_score(np.vstack([v, v]), ["a"] * 50 + ["b"] * 50) == pytest.approx(1.0, abs=1e-12)


def test_separation_rotation_invariant():
    rng = np.random.default_rng(1)
    v = np.vstack([rng.normal(size=(30, 5)), rng.normal(loc=2.0, size=(30, 5))])
    labels = ["a"] * 30 + ["b"] * 30
    q = special_ortho_group.rvs(5, random_state=2)
    s1, s2 = separation_score(v, labels), separation_score(v @ q, labels)
    assert s1 > 1.0
    assert abs(s1 - s2) < 1e-10


def test_separation_needs_two_domains():
    with pytest.raises(EvaluationError):
        separation_score(np.zeros((3, 2)), ["a"] * 3)
