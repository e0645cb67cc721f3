import numpy as np
import pytest

from services.datasets import (
    PartitionKind,
    PartitionScheme,
    generate_synthetic,
    load_dataset_csv,
    partition_data,
    split_holdout,
)
from services.learning import Dataset, TrainConfig, evaluate, init_model, local_train
from utils.errors import InvalidArgument


def indexed_dataset(n_samples: int, n_classes: int, seed: int = 0) -> Dataset:
    """Feature 0 is the sample index, so partitions can be traced back."""
    labels = np.random.default_rng(seed).permutation(np.arange(n_samples) % n_classes)
    features = np.column_stack([np.arange(n_samples, dtype=float), np.zeros(n_samples)])
    return Dataset(features, labels, n_classes)


def train_and_score(data: Dataset, seed: int) -> float:
    train, test = split_holdout(data, 0.25, seed)
    model = init_model(seed, (data.n_features, data.n_classes))
    model = model + local_train(model, train, TrainConfig(epochs=10, learning_rate=0.5, batch_size=32, seed=seed))
    return evaluate(model, test)


def test_synthetic_is_seeded():
    first = generate_synthetic(5, 200, 4, 3, 2.0)
    second = generate_synthetic(5, 200, 4, 3, 2.0)
    np.testing.assert_array_equal(first.features, second.features)
    np.testing.assert_array_equal(first.labels, second.labels)


def test_synthetic_classes_are_balanced():
    data = generate_synthetic(0, 103, 4, 10, 2.0)
    counts = np.bincount(data.labels, minlength=10)
    assert counts.max() - counts.min() <= 1
    assert data.n_features == 4


def test_synthetic_errors():
    with pytest.raises(InvalidArgument):
        generate_synthetic(0, 100, 4, 1, 2.0)
    with pytest.raises(InvalidArgument):
        generate_synthetic(0, 5, 4, 10, 2.0)


def test_large_separation_is_learnable():
    assert train_and_score(generate_synthetic(1, 2000, 8, 4, 10.0), seed=1) > 0.95


def test_zero_separation_is_chance_level():
    scores = [train_and_score(generate_synthetic(seed, 2000, 8, 4, 0.0), seed) for seed in range(3)]
    assert abs(np.mean(scores) - 0.25) < 0.08


def test_csv_loader(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f0,f1,label\n0.5,1.5,0\n-1.0,2.0,2\n3.0,0.0,1\n")
    data = load_dataset_csv(path)
    assert len(data) == 3
    assert data.n_classes == 3
    np.testing.assert_array_equal(data.labels, [0, 2, 1])
    np.testing.assert_array_equal(data.features[1], [-1.0, 2.0])


def test_csv_loader_rejects_non_integer_labels(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("f0,label\n0.5,1.5\n")
    with pytest.raises(InvalidArgument):
        load_dataset_csv(path)


def test_csv_loader_rejects_bad_header(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,y,label\n0.5,1.5,0\n")
    with pytest.raises(InvalidArgument):
        load_dataset_csv(path)


def test_holdout_split_is_disjoint():
    data = indexed_dataset(100, 4)
    train, test = split_holdout(data, 0.2, seed=3)
    assert len(train) == 80
    assert len(test) == 20
    assert not set(train.features[:, 0]) & set(test.features[:, 0])


def test_single_node_gets_everything():
    data = indexed_dataset(50, 5)
    parts = partition_data(data, 1, PartitionScheme(), seed=0)
    assert len(parts) == 1
    assert parts[0] is data


@pytest.mark.parametrize("scheme", [
    PartitionScheme(PartitionKind.DIRICHLET, alpha=0.1),
    PartitionScheme(PartitionKind.DIRICHLET, alpha=10.0),
    PartitionScheme(PartitionKind.SHARDS, shards_per_node=2),
])
def test_partitions_are_disjoint_and_cover_the_data(scheme):
    data = indexed_dataset(500, 10)
    parts = partition_data(data, 20, scheme, seed=4)
    assert len(parts) == 20
    assert all(len(p) >= 1 for p in parts)
    ids = np.concatenate([p.features[:, 0] for p in parts])
    assert len(ids) == len(data)
    assert set(ids) == set(range(500))
    for part in parts:
        np.testing.assert_array_equal(part.labels, data.labels[part.features[:, 0].astype(int)])


def test_partition_is_seeded():
    data = indexed_dataset(300, 5)
    first = partition_data(data, 7, PartitionScheme(), seed=9)
    second = partition_data(data, 7, PartitionScheme(), seed=9)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.features, b.features)


@pytest.mark.parametrize("seed", range(3))
def test_large_alpha_approaches_global_proportions(seed):
    data = generate_synthetic(seed, 5000, 2, 5, 1.0)
    parts = partition_data(data, 10, PartitionScheme(PartitionKind.DIRICHLET, alpha=1000.0), seed=seed)
    global_share = np.bincount(data.labels, minlength=5) / len(data)
    for part in parts:
        share = np.bincount(part.labels, minlength=5) / len(part)
        assert 0.5 * np.abs(share - global_share).sum() < 0.1


def test_small_alpha_is_skewed():
    data = generate_synthetic(0, 5000, 2, 5, 1.0)
    parts = partition_data(data, 10, PartitionScheme(PartitionKind.DIRICHLET, alpha=0.05), seed=0)
    sizes = [len(p) for p in parts]
    assert max(sizes) > 2 * min(sizes)


def test_shards_limit_labels_per_node():
    data = indexed_dataset(1000, 10)
    parts = partition_data(data, 5, PartitionScheme(PartitionKind.SHARDS, shards_per_node=2), seed=1)
    for part in parts:
        assert len(np.unique(part.labels)) <= 2
        assert len(part) == 200


def test_more_nodes_than_samples():
    with pytest.raises(InvalidArgument):
        partition_data(indexed_dataset(5, 2), 6, PartitionScheme(), seed=0)
    with pytest.raises(InvalidArgument):
        partition_data(indexed_dataset(5, 2), 0, PartitionScheme(), seed=0)
