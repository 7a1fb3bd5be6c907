import numpy as np
import pytest

import evc_unseen as evc

TINY = {
    "train.total_epochs": 4,
    "train.classifier_start_epoch": 2,
    "train.steps_per_epoch": 2,
    "train.batch_size": 4,
    "train.crop_frames": 32,
    "arch.hidden": 8,
    "arch.style_dim": 4,
    "arch.latent_dim": 4,
    "arch.pitch_dim": 4,
    "arch.mapping_hidden": 8,
    "arch.generator_blocks": 1,
    "pretrain.pitch.steps": 5,
    "pretrain.content.steps": 5,
}


@pytest.fixture(scope="module")
def catalog():
    return evc.build_catalog(["spkA", "spkB", "spkC"], ["neutral", "happy", "sad"], ["spkC"])


@pytest.fixture(scope="module")
def corpus(catalog):
    return evc.generate_corpus(catalog, per_cell=6, seed=3)


def test_catalog(catalog):
    assert len(catalog.seen_pairs) == 7
    assert catalog.unseen_pairs == [(2, 1), (2, 2)]
    assert catalog.is_seen(2, 0) and not catalog.is_seen(2, 1)
    with pytest.raises(evc.EvcError, match="spkA"):
        catalog.speaker_index("nobody")


def test_vdp_and_fpm(catalog):
    targets = evc.sample_vdp_targets(catalog, 9000, seed=1)
    assert targets.shape == (9000, 2)
    counts = np.zeros((3, 3))
    np.add.at(counts, (targets[:, 0], targets[:, 1]), 1)
    assert np.abs(counts / 9000 - 1 / 9).max() < 0.02
    mask = evc.fpm_mask(catalog, targets)
    expected = np.array([catalog.is_seen(int(s), int(e)) for s, e in targets])
    assert (mask == expected).all()
    assert evc.sample_vdp_targets(catalog, 5, seed=1).tolist() == targets[:5].tolist()


def test_anneal():
    assert evc.anneal_weight(50) == 5.0
    assert evc.anneal_weight(100) == 2.5
    assert evc.anneal_weight(150) == 0.0
    assert evc.anneal_weight(120, enabled=False) == 5.0


def test_corpus(corpus):
    assert len(corpus) == 42
    x = corpus.features(0)
    assert x.dtype == np.float32 and x.ndim == 2
    assert len(corpus.split_indices("train")) + len(corpus.split_indices("test")) == 42
    again = evc.generate_corpus(corpus.catalog, per_cell=6, seed=3)
    assert again.hash == corpus.hash


def test_config_errors():
    with pytest.raises(evc.EvcError, match="warp"):
        evc.resolve_config({"train.warp": 1})
    with pytest.raises(evc.EvcError, match="classifier_start_epoch"):
        evc.resolve_config({**TINY, "train.classifier_start_epoch": 9})
    assert evc.resolve_config(TINY, "no-vdp")["train.vdp"] is False


def test_train_convert_resume(corpus, tmp_path):
    full = evc.train(corpus, TINY, run_dir=str(tmp_path / "full"))
    assert full["step"] == 8 and len(full["history"]) == 8
    assert "g/total" in full["history"][0]
    evc.train(corpus, TINY, run_dir=str(tmp_path / "split"), stop_after=5)
    resumed = evc.train(corpus, TINY, run_dir=str(tmp_path / "split"), resume=True)
    assert resumed["history"] == full["history"][5:]
    assert resumed["generator_hash"] == full["generator_hash"]

    src = corpus.features(0)
    out = evc.convert(full["checkpoint"], src, "spkC", "happy", seed=4)
    assert out.shape == src.shape and np.isfinite(out).all()
    assert np.array_equal(out, evc.convert(full["checkpoint"], src, "spkC", "happy", seed=4))
    with pytest.raises(evc.EvcError, match="neutral"):
        evc.convert(full["checkpoint"], src, "spkC", "angry")
