import numpy as np
import pytest

from dvforge import cli
from dvforge import data as D
from dvforge.config import load_config
from dvforge.pipeline import METHODS, DegenerateSelection, run_method


@pytest.fixture(scope="module")
def noisy():
    ds = D.standardize(D.synthetic_task((60, 40, 80), dim=4, separation=2.0, seed=0))
    return D.inject_noise(ds, D.NoiseSpec(0.2, seed=1))


PARAMS = {
    "baseline": {},
    "loo": {},
    "tmc_shap": {"max_permutations": 3},
    "dvrl_lite": {"steps": 10, "batch_size": 30},
    "rlboost": {"total_steps": 16, "state_size": 20, "model_dim": 8, "num_heads": 2,
                "num_layers": 1, "ff_hidden_dim": 16},
}


class TestRunMethod:
    @pytest.mark.parametrize("method", METHODS)
    def test_record_shape(self, noisy, method, tmp_path):
        rec = run_method(method, noisy, PARAMS[method], seed=3, noise_rate=0.2, checkpoint_dir=tmp_path / "c")
        assert rec.method == method and rec.values.shape == (60,)
        assert 0.0 <= rec.test_accuracy <= 1.0
        assert rec.noise_mask.sum() == 12
        assert rec.auc is not None

    def test_baseline_is_full_fit(self, noisy):
        from dvforge.estimator import SubsetScorer

        rec = run_method("baseline", noisy)
        scorer = SubsetScorer(*noisy.train, *noisy.validation)
        assert rec.test_accuracy == scorer.score_on(np.arange(60), *noisy.test)
        assert rec.inner_fit_count == 1

    def test_sweep_never_below_baseline_validation(self, noisy):
        from dvforge import baselines as bl
        from dvforge.estimator import SubsetScorer

        scorer = SubsetScorer(*noisy.train, *noisy.validation)
        values = bl.loo_values(scorer)
        res = bl.threshold_sweep(values, scorer, noisy.test)
        assert res.best_val_score >= scorer.score(np.arange(60))

    def test_rlboost_checkpoint(self, noisy, tmp_path):
        run_method("rlboost", noisy, PARAMS["rlboost"], checkpoint_dir=tmp_path / "c")
        assert (tmp_path / "c" / "weights.ckpt").exists()
        assert len((tmp_path / "c" / "training_log.jsonl").read_text().splitlines()) == 1

    def test_unknown_method(self, noisy):
        with pytest.raises(ValueError):
            run_method("magic", noisy)


class TestRetries:
    def _config(self, tmp_path, retries):
        path = tmp_path / "c.toml"
        path.write_text(
            f"runs_per_cell = 1\nretries = {retries}\noutput_dir = \"out\"\n"
            "[dataset.synthetic]\nsizes = [60, 40, 80]\ndim = 4\n"
            "[[noise]]\nrate = 0.2\n[methods.dvrl_lite]\nsteps = 5\nbatch_size = 20\n"
        )
        return load_config(path)

    def test_dvrl_retried_then_succeeds(self, tmp_path, monkeypatch):
        calls = []
        real = cli.run_method

        def flaky(*args, **kw):
            calls.append(args[3])
            if len(calls) < 3:
                raise DegenerateSelection("empty")
            return real(*args, **kw)

        monkeypatch.setattr(cli, "run_method", flaky)
        records, failures = cli.execute(self._config(tmp_path, 3))
        assert len(records) == 1 and failures == []
        assert len(set(calls)) == 3  # each retry draws a fresh seed

    def test_budget_exhausted_marks_failure(self, tmp_path, monkeypatch):
        def always(*args, **kw):
            raise DegenerateSelection("empty")

        monkeypatch.setattr(cli, "run_method", always)
        records, failures = cli.execute(self._config(tmp_path, 2))
        assert records == [] and len(failures) == 1
        assert "DegenerateSelection" in failures[0]["error"]
