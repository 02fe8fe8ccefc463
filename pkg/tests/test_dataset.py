"""Generator, split, and IO tests. The generator's own label statistics
are recomputed from its output and checked against the spec'd targets."""

import numpy as np
import pytest

from dreamnet import data
from dreamnet.errors import InputError, SchemaError


def small_spec(**overrides):
    base = dict(n=60, seed=7, eeg_fraction=0.25, mean_words=40, std_words=10,
                eeg_seconds=4.0, eeg_channels=3)
    base.update(overrides)
    return data.GeneratorSpec(**base)


class TestGenerate:
    def test_empty(self):
        records, recordings = data.generate(small_spec(n=0))
        assert records == [] and recordings == {}

    def test_deterministic(self):
        r1, _ = data.generate(small_spec())
        r2, _ = data.generate(small_spec())
        assert [rec.text for rec in r1] == [rec.text for rec in r2]
        assert [rec.themes for rec in r1] == [rec.themes for rec in r2]

    def test_degenerate_conditional(self):
        cond = data.default_theme_emotion_cond()
        f, a = data.THEMES.index("falling"), data.EMOTIONS.index("anxiety")
        cond[f, a] = 1.0
        spec = small_spec(n=200, theme_emotion_cond=cond, target_falling_anxiety_r=None)
        records, _ = data.generate(spec)
        for rec in records:
            if rec.themes[f]:
                assert rec.emotions[a] == 1

    def test_planted_correlation_recovered(self):
        spec = data.GeneratorSpec(n=1500, seed=3, eeg_fraction=0.0, mean_words=30,
                                  std_words=5, target_falling_anxiety_r=0.9)
        records, _ = data.generate(spec)
        f, a = data.THEMES.index("falling"), data.EMOTIONS.index("anxiety")
        x = np.array([rec.themes[f] for rec in records], dtype=float)
        y = np.array([rec.emotions[a] for rec in records], dtype=float)
        r = np.corrcoef(x, y)[0, 1]
        assert 0.8 <= r <= 1.0

    def test_keywords_present_for_active_themes(self):
        records, _ = data.generate(small_spec(n=40))
        for rec in records:
            tokens = set(rec.text.split())
            for t, active in enumerate(rec.themes):
                if active:
                    kws = set(data.THEME_KEYWORDS[data.THEMES[t]])
                    assert tokens & kws, f"no keyword for {data.THEMES[t]} in {rec.text!r}"

    def test_eeg_fraction_exact(self):
        records, recordings = data.generate(small_spec(n=80, eeg_fraction=0.25))
        with_eeg = [rec for rec in records if rec.eeg_path is not None]
        assert abs(len(with_eeg) - 20) <= 1
        assert set(recordings) == {rec.id for rec in with_eeg}

    def test_marginals_within_binomial_bounds(self):
        spec = data.GeneratorSpec(n=1500, seed=11, eeg_fraction=0.0, mean_words=25,
                                  std_words=5)
        records, _ = data.generate(spec)
        themes = np.array([rec.themes for rec in records], dtype=float)
        for t in range(12):
            p = spec.theme_marginals[t]
            sigma = np.sqrt(p * (1 - p) / len(records))
            assert abs(themes[:, t].mean() - p) <= 3 * sigma

    def test_length_targets(self):
        spec = data.GeneratorSpec(n=300, seed=5, eeg_fraction=0.0,
                                  mean_words=150, std_words=45)
        records, _ = data.generate(spec)
        lengths = np.array([len(rec.text.split()) for rec in records
                            if rec.dream_type != "sparse"], dtype=float)
        assert 120 <= lengths.mean() <= 180
        assert lengths.max() <= 300

    def test_invalid_probability_rejected(self):
        with pytest.raises(InputError):
            small_spec(theme_marginals=np.full(12, 1.5))


class TestSolveConditional:
    def test_hits_target(self):
        cond = data.solve_conditional_for_r(0.9, 0.25, 0.02)
        p_hi = 0.02 + 0.98 * cond
        pa = 0.25 * p_hi + 0.75 * 0.02
        r = 0.25 * (p_hi - pa) / np.sqrt(0.25 * 0.75 * pa * (1 - pa))
        assert abs(r - 0.9) < 1e-6

    def test_unreachable_clamps_to_one(self):
        assert data.solve_conditional_for_r(0.999, 0.25, 0.02) == 1.0


class TestSplit:
    def _records(self, n, seed=0):
        spec = small_spec(n=n, seed=seed, eeg_fraction=0.0, mean_words=25, std_words=3)
        records, _ = data.generate(spec)
        return records

    def test_exact_sizes_1500(self):
        records = self._records(1500, seed=2)
        train, val, test = data.split(records, (0.70, 0.20, 0.10), seed=0)
        assert (len(train), len(val), len(test)) == (1050, 300, 150)

    def test_exact_sizes_10(self):
        train, val, test = data.split(self._records(10), (0.7, 0.2, 0.1), seed=0)
        assert (len(train), len(val), len(test)) == (7, 2, 1)

    def test_deterministic_membership(self):
        records = self._records(200, seed=4)
        a = data.split(records, seed=9)
        b = data.split(records, seed=9)
        for part_a, part_b in zip(a, b):
            assert [r.id for r in part_a] == [r.id for r in part_b]

    def test_partition(self):
        records = self._records(101)
        train, val, test = data.split(records, seed=1)
        ids = [r.id for r in train] + [r.id for r in val] + [r.id for r in test]
        assert sorted(ids) == sorted(r.id for r in records)

    def test_stratified_within_two_percent(self):
        records = self._records(1500, seed=6)
        parts = data.split(records, (0.70, 0.20, 0.10), seed=0)
        for part, ratio in zip(parts, (0.70, 0.20, 0.10)):
            for dt in data.DREAM_TYPES:
                n_type = sum(1 for r in records if r.dream_type == dt)
                in_part = sum(1 for r in part if r.dream_type == dt)
                assert abs(in_part / n_type - ratio) <= 0.02

    def test_bad_ratios(self):
        with pytest.raises(InputError):
            data.split(self._records(10), (0.5, 0.2, 0.1))


class TestIO:
    def test_roundtrip(self, tmp_path):
        records, recordings = data.generate(small_spec(n=25))
        out = tmp_path / "ds"
        jsonl = data.save_dataset(records, recordings, out)
        loaded = data.load_records(jsonl)
        assert [r.__dict__ for r in loaded] == [r.__dict__ for r in records]
        back = data.load_recordings(loaded, out)
        assert set(back) == set(recordings)
        for rid in recordings:
            for a, b in zip(back[rid].channels, recordings[rid].channels):
                assert np.allclose(a, b, atol=1e-6)

    def test_wrong_theme_length_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = ('{"id": "d0", "text": "x", "themes": [0,0,0,0,0,0,0,0,0,0,0,0], '
                '"emotions": [0,0,0,0,0,0,0,0], "dream_type": "general"}')
        bad = ('{"id": "d1", "text": "x", "themes": [0,0,0,0,0,0,0,0,0,0,0], '
               '"emotions": [0,0,0,0,0,0,0,0], "dream_type": "general"}')
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(SchemaError, match="line 2"):
            data.load_records(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(SchemaError, match="line 1"):
            data.load_records(path)

    def test_missing_eeg_path_loads_absent(self, tmp_path):
        path = tmp_path / "ok.jsonl"
        path.write_text('{"id": "d0", "text": "x", "themes": [1,0,0,0,0,0,0,0,0,0,0,0], '
                        '"emotions": [0,1,0,0,0,0,0,0], "dream_type": "lucid"}\n')
        (rec,) = data.load_records(path)
        assert rec.eeg_path is None

    def test_key_order_fixed(self, tmp_path):
        records, recordings = data.generate(small_spec(n=3, eeg_fraction=1.0))
        path = tmp_path / "ds.jsonl"
        data.save_records(records, path)
        for line in path.read_text().splitlines():
            keys = list(__import__("json").loads(line))
            assert keys == ["id", "text", "themes", "emotions", "dream_type", "eeg_path"]
