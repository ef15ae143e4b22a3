import dataclasses
from pathlib import Path

import numpy as np
import pytest

from rankcs import chanmodel, harness, pipeline, sensing


def tiny_config(**kw):
    defaults = dict(
        channel=chanmodel.ChannelConfig(n_bs=8, n_ms=8, n_clusters=2),
        l1=16, l2=16, m_bs=8, m_ms=8,
        snr_db_list=(25.0,), miss_frac_list=(0.1,), pilot_overhead_list=(1.0,),
        methods=("proposed",), n_trials=2, n_steps=2, seed=7, ber_bits=1000,
    )
    defaults.update(kw)
    return harness.ExperimentConfig(**defaults)


class TestNmse:
    def test_exact(self):
        h = np.ones((2, 2))
        assert harness.nmse(h, h) == 0.0

    def test_zero_estimate(self):
        h = np.ones((2, 2))
        assert harness.nmse(h, np.zeros((2, 2))) == pytest.approx(1.0)

    def test_double_estimate(self):
        h = np.ones((2, 2))
        assert harness.nmse(h, 2 * h) == pytest.approx(1.0)

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            harness.nmse(np.zeros((2, 2)), np.ones((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            harness.nmse(np.ones((2, 2)), np.ones((3, 2)))


class TestBer:
    def setup_method(self):
        cfg = chanmodel.ChannelConfig(n_bs=8, n_ms=8, n_clusters=2)
        dic = chanmodel.build_dictionary(cfg, 16, 16)
        self.h = chanmodel.generate_channel(cfg, dic, 0, 3).h
        self.fe = sensing.make_front_end(8, 8, 8, 8, 4)

    def test_perfect_csi_no_noise(self):
        assert harness.ber(self.h, self.h, self.fe, np.inf, 2000, 0) == 0.0

    def test_zero_estimate_is_coin_flip(self):
        b = harness.ber(self.h, np.zeros_like(self.h), self.fe, 20.0, 10_000, 1)
        assert abs(b - 0.5) <= 0.03

    def test_perfect_beats_noisy_estimate(self):
        rng = np.random.default_rng(2)
        noisy = self.h + 0.3 * np.linalg.norm(self.h) / 8 * (
            rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)))
        b_perfect = harness.ber(self.h, self.h, self.fe, 5.0, 10_000, 3)
        b_noisy = harness.ber(self.h, noisy, self.fe, 5.0, 10_000, 3)
        assert b_perfect <= b_noisy

    def test_bit_floor(self):
        with pytest.raises(ValueError):
            harness.ber(self.h, self.h, self.fe, 10.0, 999, 0)


class TestSuccessProbability:
    def row(self, nmse):
        return harness.ResultRow(trial=0, time_index=0, method="proposed", snr_db=0.0,
                                 miss_frac=0.0, pilot_overhead=1.0, n_bs=8, n_ms=8,
                                 nmse=nmse, ber=0.0, rank_true=1, rank_est=1,
                                 success=nmse <= 1e-2, iters_phase1=0, iters_phase2=0,
                                 runtime_ms=0.0)

    def test_all(self):
        assert harness.success_probability([self.row(1e-3)] * 4) == 1.0

    def test_none(self):
        assert harness.success_probability([self.row(0.5)] * 4) == 0.0

    def test_fraction(self):
        rows = [self.row(1e-3)] * 7 + [self.row(0.5)] * 3
        assert harness.success_probability(rows) == pytest.approx(0.7)

    def test_empty(self):
        with pytest.raises(ValueError):
            harness.success_probability([])


class TestRunExperiment:
    def test_row_count_single_cell(self):
        cfg = tiny_config(n_trials=1, n_steps=3)
        rows, summary, errors = harness.run_experiment(cfg)
        assert len(rows) == 3
        assert not errors
        assert len(summary) == 1
        assert summary[0]["n_rows"] == 3

    def test_deterministic_output(self, tmp_path):
        cfg = tiny_config()
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        harness.run_experiment(cfg, out_dir=dir_a)
        harness.run_experiment(cfg, out_dir=dir_b)
        rows_a = harness.parse_rows(dir_a / "results.csv")
        rows_b = harness.parse_rows(dir_b / "results.csv")
        for x, y in zip(rows_a, rows_b):
            assert dataclasses.replace(x, runtime_ms=0.0) == dataclasses.replace(y, runtime_ms=0.0)

    def test_seed_splitting_trial_prefix_stable(self):
        rows10, _, _ = harness.run_experiment(tiny_config(n_trials=2))
        rows20, _, _ = harness.run_experiment(tiny_config(n_trials=4))
        take = lambda rows: sorted(
            (dataclasses.replace(r, runtime_ms=0.0) for r in rows if r.trial < 2),
            key=lambda r: (r.trial, r.time_index))
        assert take(rows10) == take(rows20)

    def test_paired_methods_share_channels(self):
        cfg = tiny_config(methods=("proposed", "ls_baseline"))
        rows, _, _ = harness.run_experiment(cfg)
        prop = [r for r in rows if r.method == "proposed"]
        ls = [r for r in rows if r.method == "ls_baseline"]
        assert [r.rank_true for r in prop] == [r.rank_true for r in ls]

    def test_partial_failure_recorded(self, tmp_path):
        cfg = tiny_config(l1=1)  # dictionary build fails at runtime
        rows, summary, errors = harness.run_experiment(cfg, out_dir=tmp_path)
        assert rows == []
        assert len(errors) == cfg.n_trials
        assert (tmp_path / "errors.csv").exists()

    def test_overhead_one_equals_plain_run(self):
        rows_a, _, _ = harness.run_experiment(tiny_config())
        rows_b, _, _ = harness.pilot_overhead_sweep(tiny_config(pilot_overhead_list=(1.0,)))
        assert [dataclasses.replace(r, runtime_ms=0.0) for r in rows_a] == \
               [dataclasses.replace(r, runtime_ms=0.0) for r in rows_b]


class TestCsv:
    def make_rows(self):
        cfg = tiny_config(n_trials=1)
        rows, _, _ = harness.run_experiment(cfg)
        return rows

    def test_round_trip_values(self, tmp_path):
        rows = self.make_rows()
        path = tmp_path / "r.csv"
        harness.write_rows(rows, path)
        back = harness.parse_rows(path)
        assert len(back) == len(rows)
        for a, b in zip(rows, back):
            for field in harness.RESULT_FIELDS:
                va, vb = getattr(a, field), getattr(b, field)
                if isinstance(va, float):
                    assert vb == pytest.approx(va, rel=1e-8)
                else:
                    assert va == vb

    def test_format_idempotent(self, tmp_path):
        rows = self.make_rows()
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        harness.write_rows(rows, p1)
        harness.write_rows(harness.parse_rows(p1), p2)
        assert p1.read_text() == p2.read_text()

    def test_header_mandatory(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,3\n")
        with pytest.raises(ValueError):
            harness.parse_rows(path)


class TestConfigParsing:
    def write(self, tmp_path, text):
        path = tmp_path / "exp.ini"
        path.write_text(text)
        return path

    def test_full_parse(self, tmp_path):
        path = self.write(tmp_path, """
[experiment]
seed = 11
n_trials = 4
n_steps = 3
methods = proposed, ls_baseline
snr_db_list = 0, 10, 25
miss_frac_list = 0.1, 0.2
pilot_overhead_list = 1.0
l1 = 16
l2 = 16
m_bs = 8
m_ms = 8
forced_birth_times = 2

[channel]
n_bs = 8
n_ms = 8
n_clusters = 2
on_grid = true
speed_kmh = 120

[solver]
xi = 0.9
mu = auto
max_iters = 300
""")
        cfg = harness.parse_config(path)
        assert cfg.seed == 11
        assert cfg.methods == ("proposed", "ls_baseline")
        assert cfg.snr_db_list == (0.0, 10.0, 25.0)
        assert cfg.forced_birth_times == (2,)
        assert cfg.channel.n_clusters == 2
        assert cfg.channel.on_grid is True
        assert cfg.solver.xi == 0.9
        assert cfg.solver.mu is None
        assert cfg.solver.max_iters == 300

    def test_unknown_key_rejected(self, tmp_path):
        path = self.write(tmp_path, "[experiment]\nwarp_factor = 9\n")
        with pytest.raises(harness.ConfigError):
            harness.parse_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = self.write(tmp_path, "[engine]\nn = 1\n")
        with pytest.raises(harness.ConfigError):
            harness.parse_config(path)

    def test_missing_file(self):
        with pytest.raises(harness.ConfigError):
            harness.parse_config("/nonexistent/exp.ini")

    def test_invalid_method_rejected(self, tmp_path):
        path = self.write(tmp_path, "[experiment]\nmethods = sorcery\n")
        with pytest.raises(harness.ConfigError):
            harness.parse_config(path)


def test_manifest(tmp_path):
    import json
    cfg = tiny_config()
    harness.write_manifest(cfg, tmp_path / "run.json", n_rows=4, n_errors=0)
    manifest = json.loads((tmp_path / "run.json").read_text())
    assert manifest["seed"] == cfg.seed
    assert manifest["n_rows"] == 4
    assert len(manifest["config_hash"]) == 64
    assert "numpy" in manifest["versions"]
