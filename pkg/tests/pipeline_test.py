import numpy
import pytest

from core.logic import RunConfig, TrainedModel, train, evaluate, evaluate_windows, breakdown
from core.logic.exceptions import EmptySet, InsufficientData, UsageError
from core.logic.geo import fit_bounds
from core.logic.metrics import report_lines
from core.logic.nn import HyperParams
from core.logic.split import SplitConfig, split_dataset
from core.logic.synth import ScenarioConfig, generate

from tests.conftest import make_dataset

SCENARIO = ScenarioConfig(M=8, n_sequences=6, seq_len=20, seed=3)


def quick_config(**kwargs):
    hp = HyperParams(epochs=3, lr=2e-3, lr_drop_epochs=(), M=8, W=4, V=1, train_batch=8)
    base = dict(hp=hp, seed=1, method="sequential")
    base.update(kwargs)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def scenario():
    return generate(SCENARIO)


@pytest.fixture(scope="module")
def trained(scenario):
    return train(scenario, quick_config())


class TestTrain(object):

    def test_history(self, trained):
        model, report = trained
        assert len(report.train_loss) == len(report.val_loss) == len(report.lr) == 3
        assert all(len(acc) == 2 for acc in report.val_top1)
        assert report.train_loss[-1] < report.train_loss[0]
        assert report.selected_epoch == int(numpy.argmin(report.val_loss)) + 1
        assert report.windows["train"] > 0 and report.windows["val"] > 0

    def test_report_lines_leave_out_wall_time(self, trained):
        _, report = trained
        lines = report.lines()
        assert report.wall_time > 0
        assert not any(line.startswith("wall") for line in lines)
        assert "select=best" in lines

    def test_deterministic(self, scenario, trained):
        model, report = trained
        again, again_report = train(scenario, quick_config())
        assert report.lines() == again_report.lines()
        for k in model.params.tensors:
            assert numpy.array_equal(model.params[k].data, again.params[k].data)

    def test_checkpoints_are_byte_identical(self, scenario, trained, tmp_path):
        model, _ = trained
        again, _ = train(scenario, quick_config())
        a = model.save(tmp_path / "a.bin")
        b = again.save(tmp_path / "b.bin")
        assert a.read_bytes() == b.read_bytes()

    def test_bounds_come_from_train_split_only(self, scenario, trained):
        model, _ = trained
        train_d, _, _ = split_dataset(scenario, SplitConfig(), "sequential")
        assert model.bounds == fit_bounds([s.ue_pos for s in train_d.samples])
        assert model.bounds != fit_bounds([s.ue_pos for s in scenario.samples])

    def test_bounds_on_all_data(self, scenario):
        model, _ = train(scenario, quick_config(bounds_scope="all", hp=HyperParams(
            epochs=1, lr_drop_epochs=(), M=8, W=4, V=1)))
        assert model.bounds == fit_bounds([s.ue_pos for s in scenario.samples])

    def test_final_selection(self, scenario):
        _, report = train(scenario, quick_config(select="final", hp=HyperParams(
            epochs=2, lr_drop_epochs=(), M=8, W=4, V=1)))
        assert report.selected_epoch == 2

    def test_meta(self, trained):
        model, report = trained
        assert model.meta["seed"] == 1
        assert model.meta["split_method"] == "sequential"
        assert model.meta["config_hash"] == report.config_hash
        assert model.hp.W == 4

    def test_position_features(self, scenario):
        model, _ = train(scenario, quick_config(feature_set="position", hp=HyperParams(
            epochs=1, lr_drop_epochs=(), M=8, W=4, V=1)))
        assert model.params.config.n_features == 2
        assert evaluate(model, scenario).steps == 2

    def test_codebook_mismatch(self, scenario):
        with pytest.raises(UsageError):
            train(scenario, RunConfig(hp=HyperParams(M=16)))

    def test_too_little_data(self):
        with pytest.raises(InsufficientData):
            train(make_dataset([0, 1, 2]), quick_config(hp=HyperParams(
                epochs=1, lr_drop_epochs=(), M=3, W=2, V=1)))

    def test_no_validation_windows(self):
        d = make_dataset([i % 3 for i in range(20)], M=3)
        with pytest.raises(InsufficientData):
            train(d, quick_config(hp=HyperParams(epochs=1, lr_drop_epochs=(), M=3, W=2, V=5)))

    def test_invalid_run_config(self):
        with pytest.raises(UsageError):
            RunConfig(select="last")
        with pytest.raises(UsageError):
            RunConfig(method="random")


class TestEvaluate(object):

    def test_report(self, scenario, trained):
        model, _ = trained
        _, _, test_d = split_dataset(scenario, SplitConfig(), "sequential")
        report = evaluate(model, test_d)
        assert report.steps == 2
        assert report.has_powers
        assert report.param_count == sum(t.size for t in model.params.tensors.values())
        assert all(0.0 <= curve[0] <= 1.0 for curve in report.top_k)
        assert all(pl >= 0.0 for pl in report.mean_pl_db)

    def test_loaded_model_matches(self, scenario, trained, tmp_path):
        model, _ = trained
        loaded = TrainedModel.load(model.save(tmp_path / "checkpoint.bin"))
        assert report_lines(evaluate(loaded, scenario)) == report_lines(evaluate(model, scenario))

    def test_windows_align_with_samples(self, scenario, trained):
        model, _ = trained
        windows, per_step = evaluate_windows(model, scenario)
        assert len(per_step) == 2
        assert all(len(step) == len(windows) for step in per_step)
        labels = {s.key: s.beam for s in scenario.samples}
        w = windows[5]
        assert per_step[1][5].true_beam == labels[(w.origin[0], w.origin[1] + 1)]

    def test_empty_split(self, trained):
        model, _ = trained
        with pytest.raises(EmptySet):
            evaluate(model, make_dataset([0], M=8))

    def test_breakdown(self, scenario, trained):
        model, _ = trained
        rows, resampled = breakdown(model, scenario, n_samples=10, rounds=3)
        assert {r["factor"] for r in rows} == {"height", "speed"}
        n_windows = len(evaluate_windows(model, scenario)[0])
        assert sum(r["count"] for r in rows if r["factor"] == "height") == n_windows
        assert all(r["rounds"] in (1, 3) for r in resampled)


@pytest.mark.slow
class TestLearningExperiments(object):

    def test_geometric_scenario_is_learned(self):
        d = generate(ScenarioConfig(M=32, n_sequences=200, seq_len=60, seed=0))
        model, _ = train(d, RunConfig(seed=0))
        _, _, test_d = split_dataset(d, SplitConfig(), "adjusted")
        report = evaluate(model, test_d)
        assert report.top_k[0][0] >= 0.90
        assert report.top_k[3][0] >= 0.80
        assert max(report.mean_pl_db) < 0.6

    def test_adjusted_split_beats_sequential_under_drift(self):
        d = generate(ScenarioConfig(M=16, n_sequences=120, seq_len=30, drift=True, seed=5))
        hp = HyperParams(M=16)
        top1 = {}
        for method in ("sequential", "adjusted"):
            model, _ = train(d, RunConfig(hp=hp, seed=0, method=method))
            _, _, test_d = split_dataset(d, SplitConfig(), method)
            top1[method] = evaluate(model, test_d).top_k[0][0]
        assert top1["adjusted"] > top1["sequential"]
