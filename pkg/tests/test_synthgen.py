from __future__ import annotations

import filecmp
import math

import numpy as np
import pytest

from sasv.core import DataError, TrialLabel, check_protocol_ids
from sasv.synthgen import (DATASET_FILES, SPLIT_NAMES, SynthConfig, _split_sizes,
                           describe, gaussians, generate, write_dataset)

SMALL = SynthConfig(n_speakers=10, utts_per_speaker=4, spoofs_per_speaker=3,
                    sv_dim=8, cm_dim=6, seed=5)


def test_split_sizes():
    assert _split_sizes(30) == (18, 6, 6)
    assert _split_sizes(10) == (6, 2, 2)
    assert _split_sizes(6) == (2, 2, 2)


def test_config_validation():
    with pytest.raises(DataError, match="at least 6"):
        SynthConfig(n_speakers=5)
    with pytest.raises(DataError, match="counts"):
        SynthConfig(utts_per_speaker=0)
    with pytest.raises(DataError, match="sv_dim"):
        SynthConfig(sv_dim=1)
    with pytest.raises(DataError, match="non-negative"):
        SynthConfig(cm_noise=-0.1)
    with pytest.raises(DataError, match="spoof_sv_offset"):
        SynthConfig(spoof_sv_offset=-1.0)


def test_gaussians_are_deterministic_standard_normals():
    rng1 = np.random.Generator(np.random.PCG64(1))
    rng2 = np.random.Generator(np.random.PCG64(1))
    a = gaussians(rng1, 20001)  # odd length exercises the trim
    b = gaussians(rng2, 20001)
    assert np.array_equal(a, b)
    assert a.shape == (20001,)
    assert abs(float(a.mean())) < 0.02
    assert abs(float(a.var()) - 1.0) < 0.03
    # Box-Muller over PCG64 uniforms, nothing degenerate
    assert np.all(np.isfinite(a))


def test_generated_dataset_shape():
    ds = generate(SMALL)
    assert set(ds.protocols) == set(SPLIT_NAMES)
    train_spk, dev_spk, eval_spk = (ds.split_speakers[s] for s in SPLIT_NAMES)
    assert (len(train_spk), len(dev_spk), len(eval_spk)) == (6, 2, 2)
    # splits are disjoint speaker sets
    assert not (set(train_spk) & set(dev_spk))
    assert not (set(train_spk) & set(eval_spk))
    assert not (set(dev_spk) & set(eval_spk))

    for split in SPLIT_NAMES:
        protocol = ds.protocols[split]
        counts = protocol.counts()
        n_spk = len(ds.split_speakers[split])
        assert counts[TrialLabel.TARGET] == n_spk * SMALL.utts_per_speaker
        assert counts[TrialLabel.NONTARGET] == n_spk * SMALL.utts_per_speaker
        assert counts[TrialLabel.SPOOF] == n_spk * SMALL.spoofs_per_speaker
        check_protocol_ids(protocol, ds.sv_store, ds.cm_store)
        # nontarget impostors come from inside the split, never across
        allowed = set(ds.split_speakers[split])
        for t in protocol.trials:
            assert t.enroll_id.split("_")[0] in allowed
            assert t.test_id.split("_")[0] in allowed


def test_embedding_dimensions_and_ids():
    ds = generate(SMALL)
    assert ds.sv_store.dimension == SMALL.sv_dim
    assert ds.cm_store.dimension == SMALL.cm_dim
    assert "S001_E000" in ds.sv_store       # enrollment
    assert "S001_U001" in ds.sv_store       # bonafide utterance
    assert "S001_A001" in ds.sv_store       # spoof attack
    # CM embeddings exist for test utterances but not for enrollments
    assert "S001_U001" in ds.cm_store
    assert "S001_E000" not in ds.cm_store


def test_geometry_separates_cm_but_not_sv():
    ds = generate(SynthConfig(seed=2))
    info = describe(ds)
    assert info["seed"] == 2
    for split in SPLIT_NAMES:
        stats = info["splits"][split]
        # speaker structure: same-speaker cosines far above cross-speaker ones
        assert stats["mean_target_sv_cosine"] > 0.8
        assert abs(stats["mean_nontarget_sv_cosine"]) < 0.5
        # CM clusters sit at roughly +/- separation/2 along the hidden axis
        assert abs(stats["mean_bona_cm_projection"] - 2.0) < 0.3
        assert abs(stats["mean_spoof_cm_projection"] + 2.0) < 0.3


def test_spoofs_attack_their_victim():
    cfg = SynthConfig(seed=3, spoof_sv_offset=0.0)
    ds = generate(cfg)
    from sasv.core import cosine

    spoof_cos = []
    nontarget_cos = []
    for t in ds.protocols["eval"].trials:
        c = cosine(ds.sv_store.vector(t.enroll_id), ds.sv_store.vector(t.test_id))
        if t.label is TrialLabel.SPOOF:
            spoof_cos.append(c)
        elif t.label is TrialLabel.NONTARGET:
            nontarget_cos.append(c)
    # with zero offset a spoof mimics the victim in SV space
    assert float(np.mean(spoof_cos)) > 0.8
    assert float(np.mean(spoof_cos)) > float(np.mean(nontarget_cos)) + 0.3


def test_generation_is_deterministic_on_disk(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    paths1 = write_dataset(generate(SMALL), str(out1))
    paths2 = write_dataset(generate(SMALL), str(out2))
    assert set(paths1) == set(DATASET_FILES)
    for key in paths1:
        assert filecmp.cmp(paths1[key], paths2[key], shallow=False), key


def test_different_seeds_differ(tmp_path):
    ds1 = generate(SMALL)
    ds2 = generate(SynthConfig(n_speakers=10, utts_per_speaker=4,
                               spoofs_per_speaker=3, sv_dim=8, cm_dim=6, seed=6))
    v1 = ds1.sv_store.vector("S001_E000")
    v2 = ds2.sv_store.vector("S001_E000")
    assert not np.array_equal(v1, v2)


def test_written_dataset_loads_back(tmp_path):
    from sasv.core import load_embeddings, load_protocol

    ds = generate(SMALL)
    paths = write_dataset(ds, str(tmp_path / "out"))
    sv = load_embeddings(paths["sv_emb"], "sv")
    cm = load_embeddings(paths["cm_emb"], "cm")
    for utt_id, vec in ds.sv_store.items():
        assert np.array_equal(sv.vector(utt_id), vec)
    assert len(cm) == len(ds.cm_store)
    for split in SPLIT_NAMES:
        assert load_protocol(paths[split]).trials == ds.protocols[split].trials


def test_sv_embeddings_live_on_the_unit_sphere():
    ds = generate(SMALL)
    for _, vec in ds.sv_store.items():
        assert math.isclose(float(np.linalg.norm(vec)), 1.0, abs_tol=1e-12)
    # CM embeddings are cluster points, not directions: no normalization
    norms = [float(np.linalg.norm(v)) for _, v in ds.cm_store.items()]
    assert max(norms) - min(norms) > 0.1
