"""Dataset loading, validation, synthetic generation, splits."""

import json
from pathlib import Path

import numpy as np
import pytest

from melink.data import (dataset_hash, load_dataset, split_dataset,
                         synth_generate)
from melink.errors import DataError

FIXTURES = Path(__file__).parent / "fixtures"


def write_dataset(tmp_path, entities, samples):
    (tmp_path / "entities.jsonl").write_text(
        "\n".join(json.dumps(e) for e in entities) + "\n")
    (tmp_path / "samples.jsonl").write_text(
        "\n".join(json.dumps(s) for s in samples) + "\n" if samples else "")
    return tmp_path


GOOD_ENTITY = {"entity_id": "e1", "name": "alpha", "description_text": "an entity"}
GOOD_SAMPLE = {"sample_id": "s1", "text": "alpha here", "mention": {"surface": "alpha"},
               "gold_entity_id": "e1",
               "objects": [{"object_vec": [1.0, 2.0], "face_vec": [0.5]}]}


class TestLoader:
    def test_committed_fixture_counts(self):
        samples, index, stats = load_dataset(FIXTURES / "dataset50")
        assert stats.n_samples == 50
        assert stats.n_entities == 30
        assert stats.n_mentions == 50
        assert stats.dims == {"d": 16, "d_obj": 24, "d_face": 16}
        assert stats.mean_text_len == pytest.approx(10.76)

    def test_empty_samples_file_is_valid(self, tmp_path):
        write_dataset(tmp_path, [GOOD_ENTITY], [])
        samples, index, stats = load_dataset(tmp_path)
        assert samples == [] and stats.n_samples == 0 and len(index) == 1

    def test_bad_gold_id_names_sample(self, tmp_path):
        bad = dict(GOOD_SAMPLE, gold_entity_id="nope")
        write_dataset(tmp_path, [GOOD_ENTITY], [bad])
        with pytest.raises(DataError, match=r"line 1.*gold_entity_id.*'s1'"):
            load_dataset(tmp_path)

    def test_object_dim_mismatch_has_line_number(self, tmp_path):
        s2 = dict(GOOD_SAMPLE, sample_id="s2",
                  objects=[{"object_vec": [1.0, 2.0, 3.0]}])
        write_dataset(tmp_path, [GOOD_ENTITY], [GOOD_SAMPLE, s2])
        with pytest.raises(DataError, match="line 2"):
            load_dataset(tmp_path)

    def test_entity_without_description_rejected(self, tmp_path):
        write_dataset(tmp_path, [{"entity_id": "e1", "name": "x"}], [])
        with pytest.raises(DataError, match="description"):
            load_dataset(tmp_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            load_dataset(tmp_path)

    def test_duplicate_sample_id(self, tmp_path):
        write_dataset(tmp_path, [GOOD_ENTITY], [GOOD_SAMPLE, GOOD_SAMPLE])
        with pytest.raises(DataError, match="duplicate sample_id"):
            load_dataset(tmp_path)


class TestSynth:
    def test_same_seed_byte_identical(self, tmp_path):
        a = synth_generate(5, 8, 0.1, 2, seed=9, out_dir=tmp_path / "a",
                           d=8, d_obj=12, d_face=8)
        b = synth_generate(5, 8, 0.1, 2, seed=9, out_dir=tmp_path / "b",
                           d=8, d_obj=12, d_face=8)
        for name in ["entities.jsonl", "samples.jsonl"]:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = synth_generate(5, 8, 0.1, 2, seed=9, out_dir=tmp_path / "a",
                           d=8, d_obj=12, d_face=8)
        b = synth_generate(5, 8, 0.1, 2, seed=10, out_dir=tmp_path / "b",
                           d=8, d_obj=12, d_face=8)
        assert (a / "samples.jsonl").read_bytes() != (b / "samples.jsonl").read_bytes()

    def test_output_validates(self, tmp_path):
        out = synth_generate(6, 10, 0.2, 3, seed=1, out_dir=tmp_path,
                             d=8, d_obj=12, d_face=8)
        samples, index, stats = load_dataset(out)
        assert stats.n_samples == 10 and stats.n_entities == 6
        assert all(len(s.objects) == 4 for s in samples)
        assert all(s.anps for s in samples)

    def test_noiseless_is_linearly_separable(self, tmp_path):
        # with zero noise and no distractors, the single object vector is an
        # exact linear image of the gold entity vector, so a least-squares
        # probe recovers every gold entity
        out = synth_generate(20, 30, 0.0, 0, seed=4, out_dir=tmp_path,
                             d=12, d_obj=18, d_face=12)
        samples, index, _ = load_dataset(out)
        ents = {eid: np.asarray(index.entities[eid].description_vec)
                for eid in index.entities}
        objs = np.stack([s.objects[0].object_vec for s in samples])
        targets = np.stack([ents[s.gold_entity_id] for s in samples])
        probe, *_ = np.linalg.lstsq(objs.astype(np.float64),
                                    targets.astype(np.float64), rcond=None)
        recovered = objs @ probe
        names = sorted(ents)
        bank = np.stack([ents[e] for e in names])
        for row, sample in zip(recovered, samples):
            sims = bank @ row / (np.linalg.norm(row) + 1e-12)
            assert names[int(np.argmax(sims))] == sample.gold_entity_id

    def test_fuzzy_retrieval_finds_gold(self, tmp_path):
        from melink.retrieval import retrieve_candidates
        out = synth_generate(40, 25, 0.1, 1, seed=5, out_dir=tmp_path,
                             d=8, d_obj=12, d_face=8)
        samples, index, _ = load_dataset(out)
        for s in samples:
            cs = retrieve_candidates(index, s.mention.surface, 16)
            assert s.gold_entity_id in cs.ids()

    def test_too_few_entities(self, tmp_path):
        with pytest.raises(DataError):
            synth_generate(1, 5, 0.1, 0, seed=0, out_dir=tmp_path)


class TestSplits:
    def test_deterministic_and_disjoint(self):
        samples, _, _ = load_dataset(FIXTURES / "dataset50")
        tr1, dv1, te1 = split_dataset(samples, seed=7)
        tr2, dv2, te2 = split_dataset(samples, seed=7)
        ids = lambda part: [s.sample_id for s in part]
        assert ids(tr1) == ids(tr2) and ids(dv1) == ids(dv2) and ids(te1) == ids(te2)
        all_ids = ids(tr1) + ids(dv1) + ids(te1)
        assert sorted(all_ids) == sorted(s.sample_id for s in samples)
        assert len(tr1) == 40 and len(dv1) == 5 and len(te1) == 5

    def test_custom_fractions(self):
        samples, _, _ = load_dataset(FIXTURES / "dataset50")
        tr, dv, te = split_dataset(samples, seed=7, train_frac=0.6, dev_frac=0.4)
        assert (len(tr), len(dv), len(te)) == (30, 20, 0)


def test_dataset_hash_tracks_content(tmp_path):
    write_dataset(tmp_path, [GOOD_ENTITY], [GOOD_SAMPLE])
    h1 = dataset_hash(tmp_path)
    write_dataset(tmp_path, [GOOD_ENTITY], [dict(GOOD_SAMPLE, text="changed")])
    assert dataset_hash(tmp_path) != h1
