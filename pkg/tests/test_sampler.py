import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routegrad.netgraph import ConfigError
from routegrad.sampler import ClassAwareSampler, ShuffleSampler, init_sampler, make_sampler, next_batch


def test_small_imbalanced_init():
    labels = np.array([0, 0, 1, 2])
    s = init_sampler(labels, seed=0)
    assert {c: len(v) for c, v in s.per_class.items()} == {0: 2, 1: 1, 2: 1}
    assert sorted(s.class_list.tolist()) == [0, 1, 2]


def test_first_batch_covers_each_class_once():
    labels = np.array([0, 0, 1, 2])
    idx = next_batch(init_sampler(labels, seed=5), 3)
    assert sorted(labels[idx].tolist()) == [0, 1, 2]


def test_deterministic_for_seed():
    labels = np.random.default_rng(0).integers(0, 7, 300)
    a, b = ClassAwareSampler(labels, 11), ClassAwareSampler(labels, 11)
    for _ in range(20):
        assert np.array_equal(a.next_batch(17), b.next_batch(17))


def test_skewed_401_classes():
    counts = np.arange(1, 402)
    labels = np.repeat(np.arange(401), counts)
    s = init_sampler(labels, seed=1)
    assert len(s.per_class) == 401
    assert all(len(s.per_class[c]) == counts[c] for c in range(401))
    drawn = labels[next_batch(s, 401 * 3)]
    assert np.all(np.bincount(drawn, minlength=401) == 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_balance_over_whole_passes(n_classes, k, seed):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(n_classes), rng.integers(0, n_classes, 50)])
    sampler = ClassAwareSampler(labels, seed)
    sizes = rng.integers(1, 9, 20)
    drawn = [sampler.next_batch(int(b)) for b in sizes]
    flat = np.concatenate(drawn)
    total = n_classes * k
    # pad up to the next multiple of C, then the first C*k draws must be balanced
    while len(flat) < total:
        flat = np.concatenate([flat, sampler.next_batch(total - len(flat))])
    counts = np.bincount(labels[flat[:total]], minlength=n_classes)
    assert np.all(counts == k)


def test_no_repeat_within_class_pass():
    labels = np.repeat(np.arange(5), [3, 4, 5, 6, 7])
    s = init_sampler(labels, seed=2)
    seen = {c: [] for c in range(5)}
    for i in next_batch(s, 5 * 10 * 7):
        seen[int(labels[i])].append(int(i))
    for c, draws in seen.items():
        size = len(s.per_class[c])
        for start in range(0, len(draws) - size + 1, size):
            chunk = draws[start:start + size]
            assert len(set(chunk)) == size


def test_empty_class_rejected():
    with pytest.raises(ConfigError, match=r"\[1\]"):
        init_sampler(np.array([0, 2, 2]), seed=0)
    with pytest.raises(ConfigError):
        init_sampler(np.array([0, 1]), seed=0, num_classes=3)


def test_shuffle_sampler_epochs_are_permutations():
    s = ShuffleSampler(np.zeros(10), seed=3)
    draws = np.concatenate([s.next_batch(4) for _ in range(5)])
    assert sorted(draws[:10].tolist()) == list(range(10))
    assert sorted(draws[10:20].tolist()) == list(range(10))


def test_shuffle_sampler_is_imbalanced_on_skewed_data():
    labels = np.repeat(np.arange(4), [100, 30, 10, 5])
    s = make_sampler("shuffle", labels, 0)
    counts = np.bincount(labels[s.next_batch(145)], minlength=4)
    assert counts.std() / counts.mean() > 0
    balanced = make_sampler("class_aware", labels, 0)
    assert np.bincount(labels[balanced.next_batch(40)], minlength=4).std() == 0


def test_unknown_mode():
    with pytest.raises(ConfigError):
        make_sampler("weighted", [0, 1], 0)
