"""Tests for the linear stance classifier and label ingestion."""

import logging

import numpy as np
import pytest

from opinionframing.stance import (
    LABELS,
    ORIGIN_EXTERNAL,
    ORIGIN_LINEAR,
    CVResult,
    EvalReport,
    LabeledInstance,
    LinearModel,
    StanceConfig,
    StanceLabel,
    TrainingRow,
    classify,
    cross_validate,
    evaluate,
    evaluate_predictions,
    expand_weighted,
    ingest_external_labels,
    majority_baseline,
    majority_label,
    read_instances,
    read_stance_labels,
    stratified_split,
    tokenize,
    train_linear,
    write_instances,
    write_stance_labels,
)

AGREE = (1.0, 0.0, 0.0)
NEUTRAL = (0.0, 1.0, 0.0)
DISAGREE = (0.0, 0.0, 1.0)

_PHRASES = {
    "agree": "Scientists confirmed the planet is warming rapidly",
    "neutral": "The committee scheduled another hearing on the budget",
    "disagree": "Critics dismissed the warming data as flawed nonsense",
}


def _separable_instances(copies: int = 10) -> list[LabeledInstance]:
    one_hot = {"agree": AGREE, "neutral": NEUTRAL, "disagree": DISAGREE}
    instances = []
    for label in LABELS:
        for i in range(copies):
            leaning = "Left" if i % 2 == 0 else "Right"
            instances.append(
                LabeledInstance(
                    item_id=f"{label}-{i}",
                    text=_PHRASES[label],
                    label_distribution=one_hot[label],
                    outlet_leaning=leaning,
                )
            )
    return instances


# ---------------------------------------------------------------------------
# Instances and weighted expansion
# ---------------------------------------------------------------------------


class TestLabeledInstance:
    def test_distribution_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sums to"):
            LabeledInstance("i1", "text", (0.5, 0.3, 0.1))

    def test_rejects_negative_probability(self):
        with pytest.raises(ValueError, match=">= 0"):
            LabeledInstance("i1", "text", (1.2, -0.2, 0.0))

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError, match="3 entries"):
            LabeledInstance("i1", "text", (0.5, 0.5))

    def test_hard_label_tie_breaks_toward_earlier_label(self):
        assert LabeledInstance("i1", "t", (0.4, 0.4, 0.2)).hard_label == "agree"
        assert LabeledInstance("i2", "t", (0.3, 0.35, 0.35)).hard_label == "neutral"
        assert LabeledInstance("i3", "t", (0.2, 0.3, 0.5)).hard_label == "disagree"


class TestExpandWeighted:
    def test_full_distribution_becomes_three_rows(self):
        instance = LabeledInstance("i1", "some text", (0.5, 0.3, 0.2))
        rows = expand_weighted([instance])
        assert [(r.label, r.weight) for r in rows] == [
            ("agree", 0.5),
            ("neutral", 0.3),
            ("disagree", 0.2),
        ]
        assert all(r.item_id == "i1" and r.text == "some text" for r in rows)

    def test_one_hot_becomes_single_unit_row(self):
        rows = expand_weighted([LabeledInstance("i1", "t", (0.0, 1.0, 0.0))])
        assert len(rows) == 1
        assert rows[0].label == "neutral"
        assert rows[0].weight == 1.0

    def test_total_weight_equals_instance_count(self):
        rng = np.random.default_rng(7)
        instances = []
        for i in range(50):
            dist = rng.dirichlet(np.ones(3))
            dist = dist / dist.sum()
            instances.append(LabeledInstance(f"i{i}", f"text {i}", tuple(dist)))
        rows = expand_weighted(instances)
        assert sum(r.weight for r in rows) == pytest.approx(50, abs=50 * 1e-9)

    def test_training_row_validation(self):
        with pytest.raises(ValueError, match="unknown stance label"):
            TrainingRow("i1", "t", "maybe", 1.0)
        with pytest.raises(ValueError, match="non-negative"):
            TrainingRow("i1", "t", "agree", -0.5)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------


class TestTokenizer:
    def test_lowercases_and_splits_on_non_alphanumerics(self):
        assert tokenize("Über-Warming, they said!") == ["über", "warming", "they", "said"]

    def test_digit_conversion_maps_each_digit(self):
        assert tokenize("CO2 rose 19% in 2019", convert_digits=True) == [
            "co#",
            "rose",
            "##",
            "in",
            "####",
        ]

    def test_digits_kept_by_default(self):
        assert tokenize("CO2 in 2019") == ["co2", "in", "2019"]

    def test_stopword_removal(self):
        assert tokenize("the planet is warming", remove_stopwords=True) == [
            "planet",
            "warming",
        ]

    def test_bigrams_follow_ngram_order(self):
        rows = expand_weighted(_separable_instances(2))
        bigram_model = train_linear(rows, StanceConfig(ngram_order=2, max_iter=50))
        unigram_model = train_linear(rows, StanceConfig(ngram_order=1, max_iter=50))
        assert "warming rapidly" in bigram_model.vocabulary
        assert "warming rapidly" not in unigram_model.vocabulary
        assert "warming" in unigram_model.vocabulary


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TestTrainLinear:
    def test_one_hot_training_equals_unweighted(self):
        instances = _separable_instances(5)
        weighted_rows = expand_weighted(instances)
        plain_rows = [
            TrainingRow(i.item_id, i.text, i.hard_label, 1.0) for i in instances
        ]
        model_a = train_linear(weighted_rows)
        model_b = train_linear(plain_rows)
        assert model_a.vocabulary == model_b.vocabulary
        np.testing.assert_allclose(model_a.weights, model_b.weights, atol=1e-6)
        np.testing.assert_allclose(model_a.bias, model_b.bias, atol=1e-6)

    def test_separable_corpus_perfect_training_accuracy(self):
        instances = _separable_instances(10)
        model = train_linear(expand_weighted(instances))
        report = evaluate(model, instances)
        assert report.accuracy == 1.0

    def test_prediction_probabilities_sum_to_one(self):
        model = train_linear(expand_weighted(_separable_instances(3)))
        probabilities = model.predict_proba(
            ["warming data", "budget hearing", "entirely novel words", ""]
        )
        np.testing.assert_allclose(probabilities.sum(axis=1), 1.0, atol=1e-9)
        assert (probabilities >= 0).all()

    def test_single_label_data_is_an_error(self):
        rows = [TrainingRow(f"i{i}", f"text {i}", "agree", 1.0) for i in range(5)]
        with pytest.raises(ValueError, match="single stance label"):
            train_linear(rows)

    def test_zero_weight_rows_do_not_count_as_labels(self):
        rows = [
            TrainingRow("i1", "alpha", "agree", 1.0),
            TrainingRow("i2", "beta", "disagree", 0.0),
        ]
        with pytest.raises(ValueError, match="single stance label"):
            train_linear(rows)

    def test_empty_rows_error(self):
        with pytest.raises(ValueError, match="no training rows"):
            train_linear([])

    def test_training_is_deterministic(self):
        rows = expand_weighted(_separable_instances(4))
        model_a = train_linear(rows)
        model_b = train_linear(rows)
        assert np.array_equal(model_a.weights, model_b.weights)
        assert np.array_equal(model_a.bias, model_b.bias)

    def test_bias_is_centered(self):
        model = train_linear(expand_weighted(_separable_instances(4)))
        assert model.bias.sum() == pytest.approx(0.0, abs=1e-12)

    def test_l1_regularization_sparsifies_weights(self):
        instances = _separable_instances(10)
        dense = train_linear(
            expand_weighted(instances), StanceConfig(reg_type="l2", reg_strength=1.0)
        )
        sparse = train_linear(
            expand_weighted(instances), StanceConfig(reg_type="l1", reg_strength=3.0)
        )
        dense_zeros = np.mean(np.abs(dense.weights) < 1e-6)
        sparse_zeros = np.mean(np.abs(sparse.weights) < 1e-6)
        assert sparse_zeros > dense_zeros
        assert sparse_zeros > 0.3

    def test_config_validation(self):
        with pytest.raises(ValueError, match="ngram_order"):
            StanceConfig(ngram_order=3)
        with pytest.raises(ValueError, match="reg_type"):
            StanceConfig(reg_type="elastic")
        with pytest.raises(ValueError, match="reg_strength"):
            StanceConfig(reg_strength=-1.0)
        with pytest.raises(ValueError, match="max_iter"):
            StanceConfig(max_iter=0)


# ---------------------------------------------------------------------------
# Model serialization and classification
# ---------------------------------------------------------------------------


class TestModelSerialization:
    def test_json_roundtrip_gives_identical_predictions(self, tmp_path):
        model = train_linear(
            expand_weighted(_separable_instances(5)),
            StanceConfig(convert_digits=True, remove_stopwords=True),
        )
        path = tmp_path / "model.json"
        model.save(path)
        loaded = LinearModel.load(path)
        assert loaded.vocabulary == model.vocabulary
        assert loaded.config == model.config
        texts = [_PHRASES[label] for label in LABELS] + ["unseen words entirely"]
        np.testing.assert_array_equal(
            loaded.predict_proba(texts), model.predict_proba(texts)
        )
        assert loaded.predict(texts) == model.predict(texts)

    def test_rejects_mismatched_label_order(self):
        with pytest.raises(ValueError, match="labels"):
            LinearModel.from_json(
                '{"labels": ["disagree", "neutral", "agree"], "vocabulary": [],'
                ' "weights": [[], [], []], "bias": [0, 0, 0], "config": {}}'
            )


class TestClassify:
    def test_tie_breaks_toward_agree(self):
        model = LinearModel(
            vocabulary={}, weights=np.zeros((3, 0)), bias=np.zeros(3)
        )
        labels = classify(model, [("t1", "anything at all")])
        assert labels[0].label == "agree"
        assert labels[0].confidence == pytest.approx(1 / 3)
        assert labels[0].origin == ORIGIN_LINEAR

    def test_labels_carry_argmax_confidence(self):
        model = train_linear(expand_weighted(_separable_instances(10)))
        labels = classify(
            model, [(f"t{k}", _PHRASES[label]) for k, label in enumerate(LABELS)]
        )
        assert [l.label for l in labels] == list(LABELS)
        assert all(l.confidence > 1 / 3 for l in labels)

    def test_invariant_to_item_order(self):
        model = train_linear(expand_weighted(_separable_instances(5)))
        items = [(f"t{k}", _PHRASES[label]) for k, label in enumerate(LABELS)]
        forward = {l.ref: l.label for l in classify(model, items)}
        backward = {l.ref: l.label for l in classify(model, items[::-1])}
        assert forward == backward

    def test_empty_items(self):
        model = LinearModel(vocabulary={}, weights=np.zeros((3, 0)), bias=np.zeros(3))
        assert classify(model, []) == []


class TestStanceLabel:
    def test_validation(self):
        with pytest.raises(ValueError, match="unknown stance label"):
            StanceLabel("t1", "maybe", 0.5)
        with pytest.raises(ValueError, match="confidence"):
            StanceLabel("t1", "agree", 1.5)
        with pytest.raises(ValueError, match="origin"):
            StanceLabel("t1", "agree", 0.5, origin="oracle")


# ---------------------------------------------------------------------------
# Splits and cross-validation
# ---------------------------------------------------------------------------


def _mixed_instances(n_per_stratum: dict) -> list[LabeledInstance]:
    one_hot = {"agree": AGREE, "neutral": NEUTRAL, "disagree": DISAGREE}
    instances = []
    for (label, leaning), count in sorted(n_per_stratum.items()):
        for i in range(count):
            instances.append(
                LabeledInstance(
                    item_id=f"{label}-{leaning}-{i}",
                    text=f"{_PHRASES[label]} variant {i}",
                    label_distribution=one_hot[label],
                    outlet_leaning=leaning,
                )
            )
    return instances


class TestStratifiedSplit:
    STRATA = {
        ("agree", "Left"): 180,
        ("agree", "Right"): 60,
        ("neutral", "Left"): 120,
        ("neutral", "Right"): 120,
        ("disagree", "Left"): 30,
        ("disagree", "Right"): 90,
    }

    def test_sizes_and_disjoint_union(self):
        instances = _mixed_instances(self.STRATA)
        train, test = stratified_split(instances, test_size=200, seed=3)
        assert len(test) == 200
        assert len(train) == len(instances) - 200
        train_ids = {i.item_id for i in train}
        test_ids = {i.item_id for i in test}
        assert not train_ids & test_ids
        assert train_ids | test_ids == {i.item_id for i in instances}

    def test_proportional_per_stratum(self):
        instances = _mixed_instances(self.STRATA)
        _, test = stratified_split(instances, test_size=200, seed=3)
        total = len(instances)
        for (label, leaning), count in self.STRATA.items():
            in_test = sum(
                1
                for i in test
                if i.hard_label == label and i.outlet_leaning == leaning
            )
            assert abs(in_test - count * 200 / total) < 1

    def test_deterministic_given_seed(self):
        instances = _mixed_instances(self.STRATA)
        _, test_a = stratified_split(instances, test_size=200, seed=11)
        _, test_b = stratified_split(instances, test_size=200, seed=11)
        _, test_c = stratified_split(instances, test_size=200, seed=12)
        assert [i.item_id for i in test_a] == [i.item_id for i in test_b]
        assert [i.item_id for i in test_a] != [i.item_id for i in test_c]

    def test_validates_test_size(self):
        instances = _mixed_instances({("agree", "Left"): 5, ("neutral", "Left"): 5})
        with pytest.raises(ValueError, match="test_size"):
            stratified_split(instances, test_size=0)
        with pytest.raises(ValueError, match="test_size"):
            stratified_split(instances, test_size=10)


class TestCrossValidate:
    def test_separable_corpus_scores_perfectly(self):
        result = cross_validate(_separable_instances(10), n_folds=5, seed=0)
        assert isinstance(result, CVResult)
        assert len(result.fold_accuracies) == 5
        assert result.mean_accuracy == 1.0

    def test_validates_fold_count(self):
        with pytest.raises(ValueError, match="n_folds"):
            cross_validate(_separable_instances(2), n_folds=1)
        with pytest.raises(ValueError, match="folds"):
            cross_validate(_separable_instances(1)[:3], n_folds=5)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class TestEvaluate:
    def test_hand_computed_scores(self):
        true_labels = ["agree", "agree", "neutral", "disagree"]
        predicted = ["agree", "neutral", "neutral", "agree"]
        report = evaluate_predictions(true_labels, predicted)
        assert report.accuracy == pytest.approx(0.5)
        assert report.per_class["agree"].precision == pytest.approx(0.5)
        assert report.per_class["agree"].recall == pytest.approx(0.5)
        assert report.per_class["agree"].f1 == pytest.approx(0.5)
        assert report.per_class["neutral"].f1 == pytest.approx(2 / 3)
        assert report.per_class["disagree"].f1 == 0.0
        assert report.macro_f1 == pytest.approx((0.5 + 2 / 3 + 0.0) / 3)
        assert report.confusion == ((1, 1, 0), (0, 1, 0), (1, 0, 0))
        assert report.n == 4

    def test_majority_baseline_scores_constant_prediction(self):
        train = _mixed_instances(
            {("neutral", "Left"): 6, ("agree", "Left"): 3, ("disagree", "Left"): 2}
        )
        test = _mixed_instances(
            {("neutral", "Right"): 5, ("agree", "Right"): 3, ("disagree", "Right"): 2}
        )
        report = majority_baseline(train, test)
        assert report.accuracy == pytest.approx(0.5)
        assert report.per_class["agree"].f1 == 0.0
        assert report.per_class["disagree"].f1 == 0.0
        # Macro-F1 still averages over all three stances.
        assert report.macro_f1 == pytest.approx(report.per_class["neutral"].f1 / 3)

    def test_majority_label_tie_breaks_toward_earlier(self):
        assert majority_label(["disagree", "agree"]) == "agree"
        assert majority_label(["neutral", "disagree", "neutral"]) == "neutral"
        with pytest.raises(ValueError, match="empty"):
            majority_label([])

    def test_rejects_length_mismatch_and_unknown_labels(self):
        with pytest.raises(ValueError, match="predictions"):
            evaluate_predictions(["agree"], [])
        with pytest.raises(ValueError, match="unknown stance label"):
            evaluate_predictions(["agree"], ["maybe"])


# ---------------------------------------------------------------------------
# Label ingestion and files
# ---------------------------------------------------------------------------


class TestIngestExternalLabels:
    HEADER = "ref,label,confidence"

    def test_accepts_known_reference(self):
        labels, diagnostics = ingest_external_labels(
            [self.HEADER, "t17,agree,0.93"], known_refs={"t17"}
        )
        assert diagnostics == []
        assert labels == [StanceLabel("t17", "agree", 0.93, ORIGIN_EXTERNAL)]

    def test_unknown_label_is_a_hard_error(self):
        with pytest.raises(ValueError, match="maybe"):
            ingest_external_labels([self.HEADER, "t17,maybe,0.5"])

    def test_unknown_reference_rejected_with_diagnostic(self, caplog):
        with caplog.at_level(logging.WARNING):
            labels, diagnostics = ingest_external_labels(
                [self.HEADER, "t17,agree,0.9", "t99,neutral,0.8"],
                known_refs={"t17"},
            )
        assert [l.ref for l in labels] == ["t17"]
        assert len(diagnostics) == 1
        assert "t99" in diagnostics[0]
        assert "t99" in caplog.text

    def test_duplicate_reference_last_writer_wins(self, caplog):
        with caplog.at_level(logging.WARNING):
            labels, diagnostics = ingest_external_labels(
                [self.HEADER, "t1,agree,0.9", "t1,disagree,0.7"]
            )
        assert labels == [StanceLabel("t1", "disagree", 0.7, ORIGIN_EXTERNAL)]
        assert any("duplicate" in d for d in diagnostics)
        assert "duplicate" in caplog.text

    def test_without_known_refs_everything_is_accepted(self):
        labels, diagnostics = ingest_external_labels(
            [self.HEADER, "anything,neutral,0.5"]
        )
        assert diagnostics == []
        assert labels[0].ref == "anything"

    def test_malformed_rows_are_hard_errors(self):
        with pytest.raises(ValueError, match="missing columns"):
            ingest_external_labels(["ref,label", "t1,agree"])
        with pytest.raises(ValueError, match="not a number"):
            ingest_external_labels([self.HEADER, "t1,agree,high"])
        with pytest.raises(ValueError, match="empty tuple reference"):
            ingest_external_labels([self.HEADER, ",agree,0.5"])

    def test_comment_lines_are_skipped(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text(
            "# produced by an external classifier\n"
            f"{self.HEADER}\nt1,agree,0.75\n",
            encoding="utf-8",
        )
        labels, _ = ingest_external_labels(path)
        assert labels == [StanceLabel("t1", "agree", 0.75, ORIGIN_EXTERNAL)]


class TestLabelFiles:
    def test_roundtrip(self, tmp_path):
        labels = [
            StanceLabel("t1", "agree", 0.9321478, ORIGIN_LINEAR),
            StanceLabel("t2", "disagree", 1.0, ORIGIN_EXTERNAL),
        ]
        path = tmp_path / "labels.csv"
        write_stance_labels(path, labels)
        assert read_stance_labels(path) == labels

    def test_instance_roundtrip_preserves_awkward_text(self, tmp_path):
        instances = [
            LabeledInstance('i1', 'He said, "warming is real,"\nreally.', (0.25, 0.5, 0.25), "Left"),
            LabeledInstance("i2", "plain text", AGREE, "Right"),
        ]
        path = tmp_path / "instances.csv"
        write_instances(path, instances)
        assert read_instances(path) == instances
