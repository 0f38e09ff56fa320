import json

import numpy as np
import pytest
from scipy import stats

from headrec import data as D


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for r in rows:
            fh.write(r if isinstance(r, str) else json.dumps(r))
            fh.write("\n")
    return path


def review(user, item, rating, text="good stuff"):
    return {"reviewerID": user, "asin": item, "overall": rating, "reviewText": text}


def make_dataset(rows, domain="target"):
    return D.from_records([(u, i, r, t) for u, i, r, t in rows], domain)


class TestLoading:
    def test_three_line_fixture(self, tmp_path):
        p = write_jsonl(tmp_path / "r.jsonl", [review("u1", "a", 5), review("u1", "b", 4),
                                               review("u2", "a", 2)])
        ds = D.load_reviews(p, "target")
        assert len(ds) == 3
        assert ds.user_ids == ["u1", "u2"]
        assert ds.item_ids == ["a", "b"]
        assert [(it.user, it.item, it.rating) for it in ds.interactions] == [(0, 0, 5), (0, 1, 4), (1, 0, 2)]

    def test_malformed_line_is_skipped(self, tmp_path):
        rows = [review(f"u{k}", f"i{k}", 1 + k % 5) for k in range(9)]
        rows.insert(4, '{"reviewerID": "x", "asin": ')
        ds = D.load_reviews(write_jsonl(tmp_path / "r.jsonl", rows), "target")
        assert len(ds) == 9
        assert ds.skipped == 1

    @pytest.mark.parametrize("bad", [0, 6, 3.5, "five"])
    def test_out_of_range_rating_skipped(self, tmp_path, bad):
        rows = [review("u", "a", 4), review("u", "b", bad)]
        ds = D.load_reviews(write_jsonl(tmp_path / "r.jsonl", rows), "target")
        assert len(ds) == 1 and ds.skipped == 1

    def test_zero_valid_records(self, tmp_path):
        with pytest.raises(D.EmptyDatasetError):
            D.load_reviews(write_jsonl(tmp_path / "r.jsonl", ["not json"]), "target")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(OSError):
            D.load_reviews(tmp_path / "missing.jsonl", "target")

    def test_custom_keys(self, tmp_path):
        p = write_jsonl(tmp_path / "r.jsonl", [{"u": "x", "i": "y", "r": 3, "t": "hi"}])
        ds = D.load_reviews(p, "target", keys={"user": "u", "item": "i", "rating": "r", "text": "t"})
        assert ds.interactions[0].review == "hi"

    def test_interaction_rejects_bad_rating(self):
        with pytest.raises(D.DatasetError):
            D.Interaction(0, 0, 7, "")


class TestDegrees:
    def test_seven_reviews(self):
        rows = [("u", f"i{k}", 5, "x") for k in range(7)] + [("v", "i0", 3, "y")]
        ds = make_dataset(rows)
        assert ds.user_degree[ds.user_ids.index("u")] == 7
        assert ds.item_degree[ds.item_ids.index("i0")] == 2

    def test_split_parts_carry_train_degrees(self):
        rows = [(f"u{k % 7}", f"i{k % 11}", 1 + k % 5, "w") for k in range(100)]
        train, valid, test = D.split_dataset(make_dataset(rows))
        expect_u, expect_i = D.degree_tables(train.interactions, train.n_users, train.n_items)
        for part in (train, valid, test):
            np.testing.assert_array_equal(part.user_degree, expect_u)
            np.testing.assert_array_equal(part.item_degree, expect_i)


class TestSplit:
    ROWS = [(f"u{k % 13}", f"i{k % 17}", 1 + k % 5, f"text {k}") for k in range(100)]

    def test_sizes(self):
        parts = D.split_dataset(make_dataset(self.ROWS))
        assert [len(p) for p in parts] == [80, 10, 10]

    def test_partition_is_disjoint_and_complete(self):
        ds = make_dataset(self.ROWS)
        parts = D.split_dataset(ds)
        seen = sorted(id(it) for p in parts for it in p.interactions)
        assert seen == sorted(id(it) for it in ds.interactions)

    def test_same_seed_same_split(self):
        a = D.split_dataset(make_dataset(self.ROWS), D.SplitSpec(seed=4))
        b = D.split_dataset(make_dataset(self.ROWS), D.SplitSpec(seed=4))
        for x, y in zip(a, b):
            assert x.interactions == y.interactions

    def test_bad_fractions(self):
        with pytest.raises(D.DatasetError):
            D.SplitSpec(train=0.7, valid=0.1, test=0.1)


class TestDocuments:
    ROWS = [("u", "A", 5, "alpha one"), ("u", "B", 4, "beta two"), ("u", "C", 3, "gamma six"),
            ("w", "A", 2, "other words here")]

    def test_exclude_middle_review(self):
        ds = make_dataset(self.ROWS)
        ex = ds.interactions[1]
        ru, _ = D.aggregate_documents(ds, ex.user, ex.item, exclude=ex)
        assert ru == ["alpha", "one", "gamma", "six"]

    def test_no_exclusion(self):
        ds = make_dataset(self.ROWS)
        ru, ri = D.aggregate_documents(ds, 0, 0)
        assert ru == ["alpha", "one", "beta", "two", "gamma", "six"]
        # item A: the longer review comes first
        assert ri == ["other", "words", "here", "alpha", "one"]

    def test_truncation(self):
        ds = make_dataset(self.ROWS)
        ru, _ = D.aggregate_documents(ds, 0, 0, doc_len=3)
        assert ru == ["alpha", "one", "beta"]

    def test_user_without_reviews_is_empty(self):
        ds = make_dataset(self.ROWS)
        train = ds.with_interactions(ds.interactions[:3])
        assert D.DocumentStore(train).user_doc(1) == []

    def test_unknown_node(self):
        with pytest.raises(D.DatasetError):
            D.aggregate_documents(make_dataset(self.ROWS), 9, 0)

    def test_tokenize(self):
        assert D.tokenize("Great, GREAT value!! 10/10") == ["great", "great", "value", "10", "10"]


class TestNegativeSampling:
    def test_single_low_rating(self, rng):
        ds = make_dataset([("u", "a", 5, ""), ("u", "b", 2, ""), ("u", "c", 4, ""), ("v", "d", 5, "")])
        draws = {D.sample_negative(ds, 0, rng) for _ in range(200)}
        assert draws == {ds.item_ids.index("b")}

    def test_uniform_over_untouched(self):
        rows = [("u", "seen", 5, "")] + [("v", f"i{k}", 5, "") for k in range(10)]
        ds = make_dataset(rows)
        sampler = D.NegativeSampler(ds)
        rng = np.random.default_rng(0)
        draws = np.array([sampler.sample(0, rng) for _ in range(10_000)])
        assert ds.item_ids.index("seen") not in draws
        counts = np.bincount(draws, minlength=ds.n_items)[1:]
        assert len(counts) == 10
        assert stats.chisquare(counts).pvalue > 0.01

    def test_exhausted(self, rng):
        ds = make_dataset([("u", "a", 5, ""), ("u", "b", 4, "")])
        with pytest.raises(D.SamplingExhaustedError):
            D.sample_negative(ds, 0, rng)

    def test_positive_is_never_returned(self, rng):
        ds = make_dataset([("u", "a", 2, ""), ("u", "b", 5, ""), ("v", "c", 5, "")])
        sampler = D.NegativeSampler(ds)
        assert all(sampler.sample(0, rng, positive=0) == 2 for _ in range(50))


class TestVocabularyAndIO:
    def test_vocabulary_order(self):
        ds = make_dataset([("u", "a", 5, "b a a"), ("v", "b", 4, "c b")])
        assert D.vocabulary([ds]) == ["a", "b", "c"]

    def test_write_and_reload(self, tmp_path):
        ds = make_dataset([("u", "a", 5, "hello"), ("v", "b", 2, "bye")])
        p = tmp_path / "out.jsonl"
        D.write_records(p, ds.interactions, ds)
        back = D.load_reviews(p, "target")
        assert [(it.rating, it.review) for it in back.interactions] == [(5, "hello"), (2, "bye")]
        assert back.user_ids == ds.user_ids

    def test_partitions_share_index(self, tmp_path):
        a = write_jsonl(tmp_path / "a.jsonl", [review("u", "x", 5), review("v", "y", 4)])
        b = write_jsonl(tmp_path / "b.jsonl", [review("w", "x", 5)])
        train, other = D.load_partitions([a, b], "target")
        assert train.user_ids is other.user_ids
        assert other.interactions[0].item == 0
        assert list(other.item_degree) == [1, 1]
