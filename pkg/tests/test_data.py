import hashlib
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from cohortparity import model as clf
from cohortparity.cohorts import single_cohort
from cohortparity.data import (
    DataFormatError, Dataset, Example, FeatureMatrix, SchemaError, StratificationWarning,
    SyntheticConfig, ConfigError, featurize, generate_synthetic, group_slices, load_jsonl,
    split, split_indices, synthetic_token, token_hash, tokenize, vectorize, write_jsonl,
)
from cohortparity.trainer import TrainConfig, train


def _write(tmp_path, lines, name="d.jsonl"):
    path = tmp_path / name
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        assert tokenize("Great food!") == ["great", "food"]

    def test_empty(self):
        assert tokenize("") == []

    def test_internal_apostrophe_kept(self):
        assert tokenize("don't stop") == ["don't", "stop"]

    def test_pure_punctuation_tokens_vanish(self):
        assert tokenize("wow ... !!") == ["wow"]

    def test_deterministic(self):
        text = "The (quick) brown fox -- jumps!"
        assert tokenize(text) == tokenize(text)


class TestVectorize:
    def test_count_normalization(self):
        v = vectorize(["a", "a", "b"], 16)
        assert len(v) == 2
        assert sorted(v.values.tolist()) == pytest.approx([1 / 3, 2 / 3])
        assert v.to_dict()[token_hash("a") % 16] == pytest.approx(2 / 3)

    def test_empty(self):
        v = vectorize([], 16)
        assert len(v) == 0
        assert v.to_dense().sum() == 0.0

    def test_single_bucket(self):
        # every hash is 0 mod 1, so any sequence collapses onto index 0
        v = vectorize(["x", "y", "zz", "x"], 1)
        assert v.indices.tolist() == [0]
        assert v.values.tolist() == [1.0]

    def test_hash_is_blake2b_little_endian(self):
        digest = hashlib.blake2b("food".encode("utf-8"), digest_size=8).digest()
        assert token_hash("food") == int.from_bytes(digest, "little")

    @pytest.mark.parametrize("tokens", [["a"], ["a", "b", "c", "a"], list("abcdefghij") * 3])
    def test_weights_sum_to_one(self, tokens):
        assert vectorize(tokens, 8).values.sum() == pytest.approx(1.0, abs=1e-12)

    def test_bad_dim(self):
        with pytest.raises(ValueError):
            vectorize(["a"], 0)


class TestFeatureMatrix:
    def test_rows_matches_vectors(self):
        vecs = [vectorize(t, 32) for t in (["a"], [], ["b", "c", "b"], ["d"])]
        X = FeatureMatrix.from_vectors(vecs, 32)
        sub = X.rows(np.array([2, 1, 0]))
        assert_allclose(sub.to_dense(), np.stack([vecs[i].to_dense() for i in (2, 1, 0)]))
        assert X.row(2).to_dict() == vecs[2].to_dict()

    def test_featurize_shape(self, tiny_dataset):
        X = featurize(tiny_dataset, 64)
        assert X.n_rows == len(tiny_dataset)
        assert_allclose(X.to_dense().sum(axis=1), 1.0)


class TestLoadJsonl:
    def test_direct_field_mapping(self, tmp_path):
        path = _write(tmp_path, ['{"text":"great food","label":4,"user_id":"u1",'
                                 '"attrs":{"gender":"F"}}'])
        ds = load_jsonl(path)
        ex = ds[0]
        assert (ex.label, ex.user_id, ex.text) == (4, "u1", ("great", "food"))
        assert ds.attr_schema == {"gender": "categorical"}

    def test_empty_file(self, tmp_path):
        ds = load_jsonl(_write(tmp_path, []))
        assert len(ds) == 0
        with pytest.raises(ValueError):
            train(ds, single_cohort(0), clf.ModelConfig(F=8), TrainConfig(epochs=1))

    def test_num_classes_max_plus_one(self, tmp_path):
        lines = [json.dumps({"text": "x", "label": y, "user_id": "u"}) for y in (0, 1, 4)]
        assert load_jsonl(_write(tmp_path, lines)).num_classes == 5

    def test_num_classes_override(self, tmp_path):
        lines = [json.dumps({"text": "x", "label": 1, "user_id": "u"})]
        assert load_jsonl(_write(tmp_path, lines), num_classes=3).num_classes == 3
        with pytest.raises(SchemaError):
            load_jsonl(_write(tmp_path, lines), num_classes=1)

    def test_parse_error_carries_line(self, tmp_path):
        path = _write(tmp_path, ['{"text":"a","label":0,"user_id":"u"}', "{oops"])
        with pytest.raises(DataFormatError) as info:
            load_jsonl(path)
        assert info.value.line == 2
        assert "line 2" in str(info.value)

    @pytest.mark.parametrize("record", [
        {"text": "a", "label": "0", "user_id": "u"},
        {"text": "a", "label": 1.5, "user_id": "u"},
        {"text": "a", "user_id": "u"},
        {"text": 3, "label": 0, "user_id": "u"},
        {"text": "a", "label": 0, "user_id": ""},
    ])
    def test_malformed_records(self, tmp_path, record):
        with pytest.raises(DataFormatError):
            load_jsonl(_write(tmp_path, [json.dumps(record)]))

    def test_schema_mismatch(self, tmp_path):
        lines = [json.dumps({"text": "a", "label": 0, "user_id": "u", "attrs": {"score": 0.5}}),
                 json.dumps({"text": "a", "label": 0, "user_id": "u", "attrs": {"score": "hi"}})]
        with pytest.raises(SchemaError, match="line 2"):
            load_jsonl(_write(tmp_path, lines))

    def test_explicit_schema_rejects_unknown(self, tmp_path):
        lines = [json.dumps({"text": "a", "label": 0, "user_id": "u", "attrs": {"x": "1"}})]
        with pytest.raises(SchemaError):
            load_jsonl(_write(tmp_path, lines), schema={"y": "categorical"})

    def test_empty_text_kept(self, tmp_path):
        lines = [json.dumps({"text": "", "label": 0, "user_id": "u"}),
                 json.dumps({"text": "b", "label": 1, "user_id": "u"})]
        ds = load_jsonl(_write(tmp_path, lines))
        assert len(ds) == 2
        assert ds.empty_text_indices == [0]

    def test_round_trip(self, tmp_path, small_synthetic):
        path = tmp_path / "out.jsonl"
        write_jsonl(small_synthetic, path)
        back = load_jsonl(path)
        assert back.examples == small_synthetic.examples
        assert back.attr_schema == small_synthetic.attr_schema


class TestDataset:
    def test_label_out_of_range(self):
        with pytest.raises(SchemaError):
            Dataset((Example(("a",), 2, "u"),), 2)

    def test_user_ids_first_appearance(self, tiny_dataset):
        assert tiny_dataset.user_ids == ["u1", "u2", "u3"]


class TestSplit:
    def _dataset(self, n=100, classes=2):
        examples = tuple(Example((f"t{i}",), i % classes, f"u{i % 7}") for i in range(n))
        return Dataset(examples, classes)

    def test_sizes_per_class(self):
        ds = self._dataset()
        train_ds, test_ds = split(ds, 0.2, seed=0)
        assert (len(train_ds), len(test_ds)) == (80, 20)
        for c in (0, 1):
            assert abs(int((test_ds.labels == c).sum()) - 10) <= 1

    def test_same_seed_identical(self):
        ds = self._dataset()
        a, b = split_indices(ds, 0.3, 5), split_indices(ds, 0.3, 5)
        assert_array_equal(a[0], b[0])
        assert_array_equal(a[1], b[1])

    def test_seed_changes_permutation_not_proportions(self):
        ds = self._dataset()
        _, t1 = split_indices(ds, 0.2, 1)
        _, t2 = split_indices(ds, 0.2, 2)
        assert not np.array_equal(t1, t2)
        for c in (0, 1):
            assert (ds.labels[t1] == c).sum() == (ds.labels[t2] == c).sum()

    def test_partition(self):
        ds = self._dataset(57, 3)
        tr, te = split_indices(ds, 0.25, 9)
        assert set(tr).isdisjoint(te)
        assert sorted(set(tr) | set(te)) == list(range(57))

    def test_singleton_class_warns(self):
        examples = tuple(Example(("a",), 0, "u") for _ in range(5)) + (Example(("b",), 1, "u"),)
        with pytest.warns(StratificationWarning):
            tr, te = split_indices(Dataset(examples, 2), 0.4, 0)
        assert 5 in tr

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            split_indices(self._dataset(), frac, 0)


class TestSynthetic:
    def test_bit_reproducible(self):
        cfg = SyntheticConfig(users_per_group=2, examples_per_user=5, seed=11)
        assert generate_synthetic(cfg).examples == generate_synthetic(cfg).examples

    def test_sizes_and_attrs(self):
        cfg = SyntheticConfig(num_groups=3, users_per_group=2, examples_per_user=4,
                              group_label_noise=(0.0, 0.1, 0.2))
        ds = generate_synthetic(cfg)
        assert len(ds) == 24
        assert len(ds.user_ids) == 6
        assert {ex.attrs["group"] for ex in ds.examples} == {"g0", "g1", "g2"}
        assert ds.attr_schema["score"] == "real"

    def test_full_skew_disjoint_vocabularies(self):
        cfg = SyntheticConfig(num_groups=2, users_per_group=3, examples_per_user=20,
                              group_vocab_skew=1.0, group_label_noise=(0.1, 0.1))
        ds = generate_synthetic(cfg)
        vocab = {g: set() for g in ("g0", "g1")}
        for ex in ds.examples:
            vocab[ex.attrs["group"]].update(ex.text)
        assert vocab["g0"].isdisjoint(vocab["g1"])
        slices = group_slices(cfg.vocab_size, 2)
        assert vocab["g0"] <= {synthetic_token(i) for i in slices[0]}

    def test_scores_in_group_intervals(self):
        ds = generate_synthetic(SyntheticConfig(users_per_group=2, examples_per_user=10))
        for ex in ds.examples:
            g = int(ex.attrs["group"][1:])
            assert (g + 0.05) / 4 <= ex.attrs["score"] <= (g + 0.95) / 4

    def test_noise_rate_tracks_config(self):
        base = dict(num_groups=1, users_per_group=4, examples_per_user=500, seed=2)
        clean = generate_synthetic(SyntheticConfig(group_label_noise=(0.0,), **base))
        noisy = generate_synthetic(SyntheticConfig(group_label_noise=(0.3,), **base))
        assert all(a.text == b.text for a, b in zip(clean.examples, noisy.examples))
        assert np.mean(clean.labels != noisy.labels) == pytest.approx(0.3, abs=0.04)

    def test_noiseless_is_learnable_to_perfection(self):
        # V=40 hashes without collisions into F=512, so the generating linear rule
        # is representable exactly and full-batch training separates the data
        cfg = SyntheticConfig(num_groups=2, users_per_group=5, examples_per_user=60,
                              vocab_size=40, group_label_noise=(0.0, 0.0))
        F = 512
        assert len({token_hash(synthetic_token(i)) % F for i in range(40)}) == 40
        ds = generate_synthetic(cfg)
        params, _ = train(ds, single_cohort(len(ds)), clf.ModelConfig(F=F),
                          TrainConfig(epochs=1000, lr=3000.0, lr_decay=1.0, batch_size=len(ds)))
        correct = clf.predict(params, featurize(ds, F)) == ds.labels
        groups = np.array([ex.attrs["group"] for ex in ds.examples])
        assert correct[groups == "g0"].all()
        assert correct[groups == "g1"].all()

    @pytest.mark.parametrize("field, value", [
        ("group_label_noise", (0.1, 0.7, 0.1, 0.1)),
        ("group_label_noise", (0.1, 0.1)),
        ("group_vocab_skew", 1.5),
        ("users_per_group", 0),
    ])
    def test_invalid_config_names_field(self, field, value):
        with pytest.raises(ConfigError, match=field):
            SyntheticConfig(**{field: value}).validate()
