import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgmhan.bpe import NAN_ID, encode, train_bpe
from bgmhan.data import (
    DatasetSplit,
    LoadReport,
    Profile,
    RecordError,
    SplitError,
    dumps_profiles,
    generate_synthetic,
    handle_missing,
    largest_remainder,
    latent_score,
    load_profiles,
    rule_label,
    save_profiles,
    stratified_split,
)


def write_lines(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))
    return path


def record(i, label=0, **over):
    rec = {"id": f"r{i}", "gcea": "H2 Physics A.", "gceo": "English A1.", "leadership": "Captain Chess 2019-2021 School.", "piq": "Led a drive.", "label": label}
    rec.update(over)
    return rec


def profiles_with(n_pos, n_neg):
    return [Profile(f"p{i}", "a", "b", "c", "d", int(i < n_pos)) for i in range(n_pos + n_neg)]


class TestLoad:
    def test_three_records(self, tmp_path):
        p = write_lines(tmp_path / "d.jsonl", [record(i, i % 2) for i in range(3)])
        out = load_profiles(p)
        assert [x.id for x in out] == ["r0", "r1", "r2"]
        assert [x.label for x in out] == [0, 1, 0]

    def test_missing_field_becomes_nan(self, tmp_path):
        rec = record(0)
        del rec["piq"]
        report = LoadReport()
        out = load_profiles(write_lines(tmp_path / "d.jsonl", [rec, record(1, gceo="  ")]), report)
        assert out[0].piq == "NaN" and out[1].gceo == "NaN"
        assert report.missing == [(1, "r0", "piq"), (2, "r1", "gceo")]
        assert report.n_records == 2

    def test_bad_label_reports_line(self, tmp_path):
        p = write_lines(tmp_path / "d.jsonl", [record(0), record(1, label="2"), record(2)])
        with pytest.raises(RecordError) as err:
            load_profiles(p)
        assert err.value.errors[0][0] == 2
        assert "line 2" in str(err.value)

    def test_all_errors_collected(self, tmp_path):
        p = write_lines(tmp_path / "d.jsonl", ["{not json", record(1, gcea=5), json.dumps([1, 2]), record(3)])
        with pytest.raises(RecordError) as err:
            load_profiles(p)
        assert [ln for ln, _ in err.value.errors] == [1, 2, 3]

    def test_string_labels_accepted(self, tmp_path):
        out = load_profiles(write_lines(tmp_path / "d.jsonl", [record(0, label="1"), record(1, label=0.0)]))
        assert [x.label for x in out] == [1, 0]

    def test_round_trip(self, tmp_path):
        profiles = generate_synthetic(30, seed=1, blank_fraction=0.0)
        save_profiles(profiles, tmp_path / "a.jsonl")
        loaded = load_profiles(tmp_path / "a.jsonl")
        assert loaded == profiles
        assert dumps_profiles(loaded) == (tmp_path / "a.jsonl").read_text()


class TestHandleMissing:
    def test_all_empty(self):
        p = handle_missing(Profile("x", "", " ", "\n", "", 1))
        assert (p.gcea, p.gceo, p.leadership, p.piq) == ("NaN",) * 4

    def test_periods_only_counts_as_missing(self):
        p = handle_missing(Profile("x", "...", " . \n.", "a.", "", 0))
        assert (p.gcea, p.gceo, p.leadership, p.piq) == ("NaN", "NaN", "a.", "NaN")

    def test_present_unchanged(self):
        p = Profile("x", "H2 Art B.", "", "Member Chess 2019-2020 School.", "Hi.", 0)
        q = handle_missing(p)
        assert (q.gcea, q.leadership, q.piq) == (p.gcea, p.leadership, p.piq)
        assert q.gceo == "NaN"

    def test_nan_is_one_reserved_token(self):
        profiles = [handle_missing(p) for p in generate_synthetic(40, seed=0, blank_fraction=0.2)]
        corpus = "\n".join(p.text() for p in profiles)
        assert "NaN" in corpus
        vocab = train_bpe(corpus, len(set(corpus)) + 100)
        assert encode("NaN", vocab) == [NAN_ID]


class TestLargestRemainder:
    def test_example(self):
        assert largest_remainder(30, (0.9, 0.05, 0.05)) == [27, 2, 1]
        assert largest_remainder(70, (0.9, 0.05, 0.05)) == [63, 4, 3]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 5000), st.lists(st.integers(1, 100), min_size=1, max_size=5))
    def test_bounds(self, total, raw):
        fractions = [r / sum(raw) for r in raw]
        counts = largest_remainder(total, fractions)
        assert sum(counts) == total
        assert all(abs(c - total * f) < 1 for c, f in zip(counts, fractions))


class TestSplit:
    def test_hundred_profiles(self):
        split = stratified_split(profiles_with(30, 70), seed=0)
        sizes = [len(p) for p in split.parts()]
        positives = [sum(x.label for x in p) for p in split.parts()]
        assert sizes == [90, 6, 4]
        assert abs(positives[0] - 27) <= 1
        # brute force: 30 positives -> 27/2/1, 70 negatives -> 63/4/3
        assert positives == [27, 2, 1]

    def test_same_seed_same_membership(self):
        ps = profiles_with(25, 75)
        a, b = stratified_split(ps, seed=4), stratified_split(ps, seed=4)
        assert [[x.id for x in part] for part in a.parts()] == [[x.id for x in part] for part in b.parts()]
        c = stratified_split(ps, seed=5)
        assert [x.id for x in a.train] != [x.id for x in c.train]

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(SplitError):
            stratified_split(profiles_with(10, 10), (0.8, 0.1, 0.05))

    def test_too_few_of_a_class(self):
        with pytest.raises(SplitError, match="class 1"):
            stratified_split(profiles_with(2, 40))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(40, 5000), st.floats(0.1, 0.9), st.integers(0, 2**31))
    def test_proportions_disjoint_exhaustive(self, n, ratio, seed):
        n_pos = min(max(round(n * ratio), 3), n - 3)
        ps = profiles_with(n_pos, n - n_pos)
        split = stratified_split(ps, seed=seed)
        ids = [x.id for part in split.parts() for x in part]
        assert sorted(ids) == sorted(p.id for p in ps)
        assert len(set(ids)) == len(ids)
        p = n_pos / n
        for part in split.parts():
            k = sum(x.label for x in part)
            assert abs(k - len(part) * p) <= 1


class TestGenerator:
    def test_byte_identical(self, tmp_path):
        save_profiles(generate_synthetic(50, seed=9), tmp_path / "a")
        save_profiles(generate_synthetic(50, seed=9), tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_class_quota(self):
        ps = generate_synthetic(200, seed=0, positive_fraction=0.3)
        assert sum(p.label for p in ps) == 60 and len(ps) == 200

    def test_full_signal_is_rule_recoverable(self):
        ps = generate_synthetic(300, seed=2, signal_strength=1.0, blank_fraction=0.0)
        assert all(rule_label(p) == p.label for p in ps)

    def test_rule_works_after_blanking(self):
        ps = generate_synthetic(200, seed=3, signal_strength=1.0, blank_fraction=0.3)
        assert all(rule_label(handle_missing(p)) == p.label for p in ps)

    def test_zero_signal_is_uninformative(self):
        ps = generate_synthetic(2000, seed=0, signal_strength=0.0, blank_fraction=0.0)
        agreement = np.mean([rule_label(p) == p.label for p in ps])
        base = np.mean([rule_label(p) for p in ps])
        # independent labels: agreement = base * 0.4 + (1 - base) * 0.6 in expectation
        expected = base * 0.4 + (1 - base) * 0.6
        assert abs(agreement - expected) < 0.04

    def test_scores_in_unit_interval(self):
        ps = generate_synthetic(100, seed=0, blank_fraction=0.2)
        assert all(0.0 <= latent_score(handle_missing(p)) <= 1.0 for p in ps)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            generate_synthetic(10, signal_strength=1.5)
        with pytest.raises(ValueError):
            generate_synthetic(2)

    def test_split_type(self):
        split = stratified_split(generate_synthetic(100, seed=0), seed=0)
        assert isinstance(split, DatasetSplit) and split.fractions == (0.9, 0.05, 0.05)
