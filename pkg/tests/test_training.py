from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturenet.model import ModelSpec, RecurrentSpec, build_model, tiny_extractor
from gesturenet.synth import GESTURE_CLASS_COUNTS
from gesturenet.training import (
    LabeledClip,
    TrainConfig,
    TrainingError,
    make_splits,
    predict,
    round_half_up,
    stratified_train_counts,
    subseed,
    train,
    upsample_balance,
)


def _corpus(counts):
    clips = []
    for label, n in enumerate(counts):
        clips.extend(LabeledClip(f"c{label}_{i}", label) for i in range(n))
    return clips


# -- splits -----------------------------------------------------------------------------


def test_511_clip_profile_split_arithmetic():
    train_counts = stratified_train_counts(GESTURE_CLASS_COUNTS, 0.8)
    assert train_counts == [120, 81, 77, 94, 38]
    assert sum(train_counts) == 410
    assert sum(GESTURE_CLASS_COUNTS) - sum(train_counts) == 101


def test_511_clip_profile_splits_are_partitions():
    corpus = _corpus(GESTURE_CLASS_COUNTS)
    for train_set, test_set in make_splits(corpus, 3, 0.8, seed=0):
        assert Counter(c.label for c in train_set) == Counter(dict(enumerate([120, 81, 77, 94, 38])))
        assert not set(train_set) & set(test_set)
        assert sorted(train_set + test_set, key=lambda c: c.ref) == sorted(corpus, key=lambda c: c.ref)


def test_ten_clip_corpus():
    train_set, test_set = make_splits(_corpus([5, 5]), 1, 0.8, seed=0)[0]
    assert Counter(c.label for c in train_set) == {0: 4, 1: 4}
    assert Counter(c.label for c in test_set) == {0: 1, 1: 1}


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 37.6, 80.8)] == [1, 2, 3, 38, 81]


def test_split_keeps_one_test_clip_for_tiny_classes():
    assert stratified_train_counts([2, 3, 4], 0.8) == [1, 2, 3]


def test_singleton_class_rejected():
    with pytest.raises(ValueError, match="class 1"):
        make_splits(_corpus([4, 1]), 3)


def test_splits_reproducible_and_distinct():
    corpus = _corpus([20, 20])
    a = make_splits(corpus, 3, 0.8, seed=5)
    b = make_splits(corpus, 3, 0.8, seed=5)
    assert a == b
    assert a[0][1] != a[1][1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=2, max_size=5), st.integers(0, 2**31))
def test_splits_are_stratified_partitions(counts, seed):
    corpus = _corpus(counts)
    for train_set, test_set in make_splits(corpus, 2, 0.8, seed):
        assert len(train_set) + len(test_set) == len(corpus)
        assert set(train_set).isdisjoint(test_set)
        per_class = Counter(c.label for c in train_set)
        assert [per_class[k] for k in range(len(counts))] == stratified_train_counts(counts)
        assert {c.label for c in test_set} == set(range(len(counts)))


# -- balance ----------------------------------------------------------------------------


def test_identification_balance_counts():
    train_counts = stratified_train_counts([1186, 1209])
    assert train_counts == [949, 967]
    balanced = upsample_balance(_corpus(train_counts), seed=0)
    assert Counter(c.label for c in balanced) == {0: 967, 1: 967}


def test_balanced_input_unchanged():
    corpus = _corpus([4, 4, 4])
    assert Counter(upsample_balance(corpus)) == Counter(corpus)


def test_singleton_repeated():
    corpus = _corpus([3, 1])
    balanced = upsample_balance(corpus)
    assert Counter(balanced)[LabeledClip("c1_0", 1)] == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=2, max_size=5), st.integers(0, 2**31))
def test_balance_equalises_and_repeats_cyclically(counts, seed):
    corpus = _corpus(counts)
    balanced = upsample_balance(corpus, seed)
    multiplicity = Counter(c.label for c in balanced)
    assert set(multiplicity.values()) == {max(counts)}
    per_clip = Counter(balanced)
    for label, n in enumerate(counts):
        reps = [per_clip[c] for c in corpus if c.label == label]
        assert max(reps) - min(reps) <= 1
    majority = counts.index(max(counts))
    assert all(per_clip[c] == 1 for c in corpus if c.label == majority)


# -- the loop ---------------------------------------------------------------------------


def _toy_model(seed=0, n_classes=2):
    spec = ModelSpec(
        extractor=tiny_extractor(4),
        recurrent=RecurrentSpec(kind="lstm", reduction_dim=6, lstm_widths=(4, 5)),
        n_classes=n_classes,
        input_size=(8, 8),
    )
    return build_model(spec, seed)


def _constant_colour_hook(requests=None):
    def hook(ref, rng=None):
        if requests is not None:
            requests.append(ref)
        value = 1.0 if ref.startswith("c1") else -1.0
        frames = np.full((2, 3, 8, 8), value, np.float32)
        return frames, -frames

    return hook


def test_zero_learning_rate_leaves_parameters_unchanged():
    model = _toy_model()
    before = model.store.to_bytes()
    train(model, _corpus([1, 1]), TrainConfig(epochs=3, lr=0.0), _constant_colour_hook())
    assert model.store.to_bytes() == before


def test_separable_toy_task_converges():
    model = _toy_model()
    result = train(model, _corpus([1, 1]), TrainConfig(epochs=50, lr=1e-2), _constant_colour_hook())
    losses = [e.mean_train_loss for e in result.epochs]
    assert len(losses) == 50
    assert losses[-1] < 0.05
    assert all(b <= a for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize("task,epochs", [("identification", 25), ("classification", 7)])
def test_default_epoch_counts(task, epochs):
    cfg = TrainConfig(task=task)
    assert cfg.effective_epochs == epochs
    assert (cfg.lr, cfg.batch_size, cfg.optimizer, cfg.splits, cfg.train_fraction) == (1e-5, 1, "adam", 3, 0.8)


def test_logs_one_entry_per_epoch():
    model = _toy_model(n_classes=5)
    result = train(model, _corpus([1, 1, 1, 1, 1]), TrainConfig(task="classification"), _constant_colour_hook())
    assert [e.epoch for e in result.epochs] == list(range(7))


def test_training_is_bitwise_reproducible():
    outputs = []
    for _ in range(2):
        model = _toy_model(seed=3)
        result = train(model, _corpus([2, 3]), TrainConfig(epochs=3, lr=1e-3, seed=9), _constant_colour_hook())
        outputs.append((model.store.to_bytes(), [e.mean_train_loss for e in result.epochs]))
    assert outputs[0] == outputs[1]


def test_train_loop_never_touches_test_clips():
    corpus = _corpus([6, 6])
    train_set, test_set = make_splits(corpus, 1, 0.8, seed=2)[0]
    requests = []
    train(_toy_model(), train_set, TrainConfig(epochs=2, lr=1e-3), _constant_colour_hook(requests))
    assert set(requests) <= {c.ref for c in train_set}
    assert not set(requests) & {c.ref for c in test_set}


def test_fresh_sampling_rng_every_visit():
    draws = []

    def hook(ref, rng):
        draws.append(float(rng.random()))
        return _constant_colour_hook()(ref)

    train(_toy_model(), _corpus([2, 2]), TrainConfig(epochs=2, lr=0.0), hook)
    assert len(set(draws)) == len(draws) == 8


def test_non_finite_loss_names_clip_and_epoch():
    def hook(ref, rng):
        frames = np.full((2, 3, 8, 8), np.nan, np.float32)
        return frames, frames

    with pytest.raises(TrainingError, match=r"c\d_0.*epoch 0"):
        train(_toy_model(), _corpus([1, 1]), TrainConfig(epochs=1), hook)


def test_task_class_mismatch_rejected():
    with pytest.raises(ValueError, match="classes"):
        train(_toy_model(n_classes=2), _corpus([1] * 5), TrainConfig(task="classification"), _constant_colour_hook())


def test_predict_returns_probabilities():
    preds = predict(_toy_model(), _corpus([2, 2]), _constant_colour_hook())
    assert preds.scores.shape == (4, 2)
    np.testing.assert_allclose(preds.scores.sum(axis=1), 1.0, atol=1e-12)


def test_subseeds_are_named_and_independent():
    assert subseed(0, "split", 0) == subseed(0, "split", 0)
    assert len({subseed(0, "split", 0), subseed(0, "shuffle", 0), subseed(1, "split", 0), subseed(0, "split", 1)}) == 4
