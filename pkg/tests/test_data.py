import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from deepi2i.data import (ClassVocabulary, DatasetError, LabeledBatch, batches, hflip, load_dataset, materialize,
                          per_class_split, subsample, synth_toy_dataset)


@given(counts=st.lists(st.integers(1, 60), min_size=1, max_size=6), seed=st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_per_class_split_properties(counts, seed):
    labels = np.repeat(np.arange(len(counts)), counts)
    train, test = per_class_split(labels, len(counts), seed)
    assert not set(train) & set(test)
    assert sorted(np.concatenate([train, test])) == list(range(len(labels)))
    for c, n in enumerate(counts):
        n_test = int((labels[test] == c).sum())
        assert abs(n_test - 0.1 * n) <= 1
        if n >= 2:
            assert n_test >= 1 and (labels[train] == c).sum() >= 1
    again = per_class_split(labels, len(counts), seed)
    assert np.array_equal(train, again[0]) and np.array_equal(test, again[1])


def test_synthetic_dataset_contract():
    ds = synth_toy_dataset(8, 200, 32, seed=7)
    assert ds.images.shape == (1600, 3, 32, 32)
    assert ds.images.min() >= -1 and ds.images.max() <= 1
    means = np.stack([ds.images[ds.labels == c].mean(axis=0).ravel() for c in range(8)])
    dists = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert (dists[~np.eye(8, dtype=bool)] > 0).all()
    again = synth_toy_dataset(8, 200, 32, seed=7)
    assert again.images.tobytes() == ds.images.tobytes()
    assert ds.class_counts("train") == [180] * 8 and ds.class_counts("test") == [20] * 8


def test_synthetic_source_and_target_classes_are_disjoint():
    tgt = synth_toy_dataset(8, 2, 32, family_offset=0)
    src = synth_toy_dataset(16, 2, 32, family_offset=8)
    assert not set(tgt.vocab.names) & set(src.vocab.names)


@pytest.mark.parametrize("kw", [dict(num_classes=1), dict(resolution=8), dict(per_class=0)])
def test_synthetic_dataset_errors(kw):
    args = dict(num_classes=4, per_class=5, resolution=32)
    args.update(kw)
    with pytest.raises(DatasetError):
        synth_toy_dataset(**args)


def test_subsample(toy4):
    assert subsample(toy4, 1.0) is toy4
    half = subsample(toy4, 0.5, seed=3)
    assert np.array_equal(half.test_idx, toy4.test_idx)
    assert set(half.train_idx) <= set(toy4.train_idx)
    assert half.class_counts("train") == [9] * 4
    assert np.array_equal(half.train_idx, subsample(toy4, 0.5, seed=3).train_idx)
    with pytest.raises(DatasetError):
        subsample(toy4, 0.01)
    with pytest.raises(DatasetError):
        subsample(toy4, 0.0)


def test_batches_epoch_structure():
    ds = synth_toy_dataset(8, 200, 16, seed=0, split_seed=0)
    ds.train_idx = np.arange(1600)
    train = list(batches(ds, "train", 32, seed=1))
    assert len(train) == 50
    ds.train_idx = np.arange(1599)
    assert len(list(batches(ds, "train", 32, seed=1))) == 49
    evaluation = list(batches(ds, "train", 32, training=False))
    assert len(evaluation) == 50 and len(evaluation[-1]) == 31
    a = [b.images for b in batches(ds, "train", 32, seed=5)]
    b = [b.images for b in batches(ds, "train", 32, seed=5)]
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    with pytest.raises(DatasetError):
        list(batches(ds, "validation", 32))


def test_flip_augmentation():
    img = np.arange(2 * 3 * 4 * 4, dtype=np.float32).reshape(2, 3, 4, 4)
    assert np.array_equal(hflip(img), img[..., ::-1])
    assert np.array_equal(hflip(hflip(img)), img)


def test_augmented_batches_contain_flipped_originals(toy4):
    plain = next(batches(toy4, "train", 16, seed=2))
    aug = next(batches(toy4, "train", 16, seed=2, augment=True))
    assert torch.equal(plain.labels, aug.labels)
    for p, a in zip(plain.images, aug.images):
        assert torch.equal(p, a) or torch.equal(torch.flip(p, dims=[-1]), a)


def test_labeled_batch_validation():
    with pytest.raises(DatasetError):
        LabeledBatch(torch.full((1, 3, 4, 4), 1.5), torch.tensor([0]))
    with pytest.raises(DatasetError):
        LabeledBatch(torch.zeros(2, 3, 4, 4), torch.tensor([0]))


def test_vocabulary():
    v = ClassVocabulary(["cat", "dog"])
    assert v.index("dog") == 1 and v.name(0) == "cat" and len(v) == 2
    with pytest.raises(DatasetError, match="cat, dog"):
        v.index("fox")
    with pytest.raises(DatasetError):
        ClassVocabulary(["a", "a"])


def test_folder_round_trip_and_skips(tmp_path, toy4, caplog):
    root = materialize(toy4, tmp_path / "ds")
    (root / toy4.vocab.name(0) / "broken.png").write_bytes(b"not an image")
    ds = load_dataset(root, 32, split_seed=0)
    assert "broken.png" in caplog.text
    assert ds.vocab.names == sorted(toy4.vocab.names)
    assert ds.skipped == 1
    assert len(ds.labels) == len(toy4.labels)
    assert ds.images.min() >= -1 and ds.images.max() <= 1
    # 8-bit quantisation is the only loss
    order = [toy4.vocab.index(n) for n in ds.vocab.names]
    a = ds.images[ds.labels == 0][0]
    b = toy4.images[toy4.labels == order[0]][0]
    assert np.abs(a - b).max() <= 1 / 127.5 + 1e-6
    again = load_dataset(root, 32, split_seed=0)
    assert np.array_equal(again.train_idx, ds.train_idx) and again.vocab == ds.vocab


def test_folder_with_single_class_of_ten(tmp_path):
    d = tmp_path / "one" / "only"
    d.mkdir(parents=True)
    for i in range(10):
        Image.fromarray(np.full((40, 30, 3), i * 20, dtype=np.uint8)).save(d / f"{i}.png")
    ds = load_dataset(tmp_path / "one", 16)
    assert ds.images.shape == (10, 3, 16, 16)
    assert len(ds.train_idx) == 9 and len(ds.test_idx) == 1


def test_empty_class_directory_named_in_error(tmp_path):
    (tmp_path / "r" / "empty").mkdir(parents=True)
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(tmp_path / "r", 16)
