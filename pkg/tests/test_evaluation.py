import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvforge import evaluation as ev
from dvforge.evaluation import RunRecord


def brute_force_auc(values, noisy):
    wins = ties = 0
    clean = [v for v, m in zip(values, noisy) if not m]
    bad = [v for v, m in zip(values, noisy) if m]
    for a in clean:
        for b in bad:
            wins += a > b
            ties += a == b
    return (wins + 0.5 * ties) / (len(clean) * len(bad))


def record(method="m", noise=0.1, seed=0, acc=0.8, auc=None):
    return RunRecord(method, noise, seed, acc, np.zeros(3), auc=auc)


class TestRoc:
    def test_perfect_separation(self):
        noisy = np.array([False, False, True, True])
        assert ev.roc_auc(np.where(noisy, 0.0, 1.0), noisy).auc == 1.0

    def test_chance_level(self):
        rng = np.random.default_rng(0)
        auc = ev.roc_auc(rng.random(10_000), rng.random(10_000) < 0.3).auc
        assert 0.45 <= auc <= 0.55

    def test_hand_case_with_tie(self):
        values = [0.9, 0.4, 0.7, 0.4, 0.2, 0.8]
        noisy = [False, False, True, True, True, False]
        # clean {0.9, 0.4, 0.8} vs noisy {0.7, 0.4, 0.2}: 7 wins, 1 tie of 9
        assert ev.roc_auc(values, noisy).auc == pytest.approx(7.5 / 9)
        assert brute_force_auc(values, noisy) == pytest.approx(7.5 / 9)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
    def test_matches_pair_count(self, pairs):
        values = [float(v) for v, _ in pairs]
        noisy = [m for _, m in pairs]
        if all(noisy) or not any(noisy):
            return
        assert ev.roc_auc(values, noisy).auc == pytest.approx(brute_force_auc(values, noisy), abs=1e-12)
        assert ev.mann_whitney_auc(values, noisy) == pytest.approx(brute_force_auc(values, noisy), abs=1e-12)

    def test_curve_endpoints(self):
        c = ev.roc_auc([0.1, 0.5, 0.3], [True, False, False])
        assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0)
        assert (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            ev.roc_auc([0.1, 0.2], [False, False])


class TestAggregate:
    def test_single_run_flagged(self):
        (row,) = ev.aggregate_runs([record(acc=0.7)])
        assert row["count"] == 1 and row["std"] == 0.0 and row["single_run"]

    def test_two_runs(self):
        (row,) = ev.aggregate_runs([record(acc=0.80), record(seed=1, acc=0.82)])
        assert row["mean"] == pytest.approx(0.81, abs=1e-5)
        assert row["std"] == pytest.approx(0.01414, abs=1e-5)

    def test_stable_ordering(self):
        recs = [record("b", 0.3), record("a", 0.3), record("b", 0.1), record("a", 0.1)]
        keys = [(r["method"], r["noise_rate"]) for r in ev.aggregate_runs(recs)]
        assert keys == [("a", 0.1), ("a", 0.3), ("b", 0.1), ("b", 0.3)]
        assert keys == [(r["method"], r["noise_rate"]) for r in ev.aggregate_runs(recs[::-1])]

    def test_fill_grid_marks_absent(self):
        rows = ev.fill_grid(ev.aggregate_runs([record("a", 0.1)]), ["a", "b"], [0.1])
        assert [(r["method"], r["absent"]) for r in rows] == [("a", False), ("b", True)]

    def test_record_json_round_trip(self):
        r = RunRecord("x", 0.3, 2, 0.75, np.array([0.1, 0.9]), 1.5, 12, np.array([True, False]), 0.5,
                      {"k": 1})
        back = RunRecord.from_json(r.to_json())
        np.testing.assert_array_equal(back.values, r.values)
        np.testing.assert_array_equal(back.noise_mask, r.noise_mask)
        assert back.extra == {"k": 1} and back.inner_fit_count == 12

    def test_accuracy_bounds(self):
        with pytest.raises(ValueError):
            record(acc=1.2)


class TestTiming:
    def test_harness_records_counts(self):
        rows = ev.timing_harness("loo", [50, 100], lambda n: n + 1)
        assert [(r.size, r.inner_fit_count) for r in rows] == [(50, 51), (100, 101)]
        assert all(r.wall_clock_s >= 0 for r in rows)


class TestPlots:
    def _curves(self):
        return [("a", ev.roc_auc([0.9, 0.1, 0.5, 0.4], [False, True, False, True]))]

    def test_svg_deterministic(self, tmp_path):
        a = ev.render_plots(tmp_path / "a", {"k": self._curves()}, {"k": ev.aggregate_runs([record()])})
        b = ev.render_plots(tmp_path / "b", {"k": self._curves()}, {"k": ev.aggregate_runs([record()])})
        assert [p.name for p in a] == [p.name for p in b]
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_diagonal_reference(self):
        assert 'class="diagonal"' in ev.roc_svg(self._curves())

    def test_empty_writes_nothing(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            written = ev.render_plots(tmp_path / "p", {"k": []}, {})
        assert written == [] and list((tmp_path / "p").iterdir()) == []
        assert "skipping" in caplog.text or "nothing" in caplog.text


class TestCsv:
    def test_scores_schema(self, tmp_path):
        ev.write_scores_csv([record(acc=0.5)], tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "method,noise_rate,seed,test_accuracy,wall_clock_s"
        assert lines[1].startswith("m,0.1,0,0.5,")
