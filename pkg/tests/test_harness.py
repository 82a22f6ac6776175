import dataclasses
import json

import numpy as np
import pytest

from qgtlab import harness
from qgtlab.exceptions import InvalidArgumentError
from qgtlab.trainer import TrainConfig

TINY = harness.ExperimentConfig(N=12, M=6, K=2.0, S=1.0, D=1, sizes=(240, 80, 60), level=2,
                                seeds=(0,), T=40,
                                train=TrainConfig(batch_size=32, max_epochs=3, patience=2))


@pytest.fixture(scope="module")
def sweep_rows():
    return harness.run_sweep_measurements(TINY, (7, 5, 6))


class TestConfig:
    def test_smoke_divides_sizes(self):
        cfg = harness.ExperimentConfig().smoke()
        assert cfg.sizes == (119205 // 4, 14900 // 4, 14900 // 4)

    def test_defaults(self):
        cfg = harness.ExperimentConfig()
        assert (cfg.N, cfg.M, cfg.K, cfg.S, cfg.D, cfg.T) == (100, 35, 6.0, 6.0, 1, 1000)
        assert cfg.hidden_layers == (500, 500) and cfg.noise_ratio == 0.06

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(TINY.to_dict()))
        assert harness.ExperimentConfig.load(path) == TINY

    def test_unknown_field(self):
        with pytest.raises(InvalidArgumentError):
            harness.ExperimentConfig.from_dict({"bogus": 1})

    def test_hash_ignores_seeds(self):
        assert TINY.config_hash() == TINY.with_seeds(7).config_hash()
        assert TINY.config_hash() != dataclasses.replace(TINY, M=7).config_hash()

    def test_sweep_points(self):
        assert TINY.at("noise_ratio", 0.5).S == 6.0
        assert TINY.at("M", 9).M == 9
        assert TINY.at("level", 1).hidden_layers == ()
        with pytest.raises(InvalidArgumentError):
            TINY.at("K", 1)

    @pytest.mark.parametrize("bad", [dict(level=8), dict(seeds=()), dict(T=0),
                                     dict(sizes=(1, 2)), dict(M=0)])
    def test_invalid(self, bad):
        with pytest.raises(InvalidArgumentError):
            dataclasses.replace(TINY, **bad)


class TestRuns:
    def test_empty_train_split_rejected_before_training(self, monkeypatch):
        called = []
        monkeypatch.setattr(harness, "train", lambda *a, **k: called.append(1))
        with pytest.raises(InvalidArgumentError):
            harness.run_single(dataclasses.replace(TINY, sizes=(0, 80, 60)))
        assert not called

    def test_test_split_smaller_than_t(self):
        with pytest.raises(InvalidArgumentError):
            harness.run_single(dataclasses.replace(TINY, sizes=(240, 80, 39)))

    def test_run_artifacts(self, tmp_path):
        row = harness.run_single(TINY, out_dir=tmp_path)
        run_dir = tmp_path / f"{TINY.config_hash()}-seed0"
        for name in ("model.json", "history.csv", "A_relaxed.csv", "A_hat.csv", "A_true.csv",
                     "verify.json"):
            assert (run_dir / name).exists()
        A_hat = np.loadtxt(run_dir / "A_hat.csv", delimiter=",")
        A_true = np.loadtxt(run_dir / "A_true.csv", delimiter=",")
        assert A_hat.shape == A_true.shape == (6, 12)
        expected = 100 * np.count_nonzero(A_hat != A_true) / A_true.size
        assert row.structural_error == pytest.approx(expected)

    def test_sweep_order_and_values(self, sweep_rows):
        assert [r.sweep_value for r in sweep_rows] == [5, 6, 7]
        assert [r.config.M for r in sweep_rows] == [5, 6, 7]
        assert all(r.sweep_axis == "M" for r in sweep_rows)

    def test_deterministic_rerun(self, sweep_rows, tmp_path):
        again = harness.run_sweep_measurements(TINY, (5, 6, 7))
        harness.write_results_csv(sweep_rows, tmp_path / "a.csv")
        harness.write_results_csv(again, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_multi_seed_means(self):
        row = harness.run_single(dataclasses.replace(TINY, seeds=(0, 1)))
        assert len(row.runs) == 2
        assert row.f1 == pytest.approx((row.runs[0].f1 + row.runs[1].f1) / 2)


class TestOutputs:
    def test_csv_rows_and_reemit(self, sweep_rows, tmp_path):
        paths = harness.emit_outputs(sweep_rows, tmp_path / "a", "sweep")
        again = harness.emit_outputs(sweep_rows, tmp_path / "b", "sweep")
        records = harness.read_results_csv(paths["results"])
        assert len(records) == 3
        assert list(records[0]) == list(harness.RESULT_COLUMNS)
        for key in ("results", "runs", "plot"):
            with open(paths[key], "rb") as a, open(again[key], "rb") as b:
                assert a.read() == b.read(), key

    def test_csv_values_round_trip(self, sweep_rows, tmp_path):
        harness.write_results_csv(sweep_rows, tmp_path / "r.csv")
        for rec, row in zip(harness.read_results_csv(tmp_path / "r.csv"), sweep_rows):
            assert float(rec["f1"]) == row.f1
            assert float(rec["structural_error"]) == row.structural_error

    def test_plot_axes_cover_extrema(self, sweep_rows, tmp_path):
        records = [harness.result_record(r) for r in sweep_rows]
        fig = harness.plot_sweep(records, tmp_path / "p.svg")
        assert (tmp_path / "p.svg").read_text().lstrip().startswith("<?xml")
        for ax, measure in zip(fig.axes, harness.PLOT_MEASURES):
            lo, hi = ax.get_ylim()
            values = [r[measure] for r in records]
            assert lo <= min(values) and hi >= max(values)

    def test_single_row_has_no_plot(self, tmp_path):
        row = harness.run_single(TINY)
        assert "plot" not in harness.emit_outputs([row], tmp_path)

    def test_empty_rows(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            harness.emit_outputs([], tmp_path)

    def test_output_root_env(self, monkeypatch):
        monkeypatch.setenv(harness.OUTPUT_ROOT_ENV, "/tmp/somewhere")
        assert harness.output_root() == "/tmp/somewhere"
        monkeypatch.delenv(harness.OUTPUT_ROOT_ENV)
        assert harness.output_root() == "qgt-output"


def test_complexity_study_has_one_row_per_level():
    cfg = dataclasses.replace(TINY, train=TrainConfig(batch_size=64, max_epochs=1))
    rows = harness.run_complexity_study(cfg)
    assert [r.sweep_value for r in rows] == list(range(1, 8))
    assert [r.config.hidden_layers for r in rows][:2] == [(), (128,)]
