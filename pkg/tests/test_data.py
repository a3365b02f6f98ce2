"""Synthetic dataset tests: split soundness, long-tail statistics,
determinism, episode sampling, query pools, and disk round-trips."""

import numpy as np
import pytest

from osfa.boxes import iou
from osfa.data import (
    DataError,
    appearance_counts,
    class_occurrences,
    crop_instance,
    load_dataset,
    query_pool,
    sample_episode,
    save_dataset,
)
from osfa.synth import (
    GenConfig,
    GenerationError,
    generate_dataset,
    generate_styles,
    zipf_class_draws,
    zipf_probs,
)
from osfa.tensor import Rng

SMALL_GEN = GenConfig(n_seen=4, n_unseen=2, train_pages=12, test_pages=8, seed=5)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(SMALL_GEN)


class TestGeneration:
    def test_split_soundness_exhaustive(self, dataset):
        unseen = {c for c in dataset.classes if dataset.classes[c].split == "unseen"}
        for page in dataset.pages["train"]:
            for inst in page.instances:
                assert inst.class_id not in unseen

    def test_unseen_instances_only_in_test(self):
        ds = generate_dataset(GenConfig(n_seen=2, n_unseen=1, train_pages=4, test_pages=10, seed=3))
        unseen = set(ds.class_ids("unseen"))
        train_classes = {i.class_id for p in ds.pages["train"] for i in p.instances}
        assert not (train_classes & unseen)

    def test_counts_match_recount_and_draw_log(self, dataset):
        for split in ("train", "test"):
            recount = appearance_counts(dataset, split)
            assert recount == dataset.counts[split]
            assert sorted(dataset.draw_log[split]) == sorted(
                cid for cid, n in recount.items() for _ in range(n))

    def test_counts_sum_to_instances(self, dataset):
        for split in ("train", "test"):
            total = sum(len(p.instances) for p in dataset.pages[split])
            assert sum(dataset.counts[split].values()) == total

    def test_pose_ranges(self, dataset):
        for split in ("train", "test"):
            for page in dataset.pages[split]:
                for inst in page.instances:
                    assert -25.0 <= inst.rotation <= 25.0
                    assert 0.6 <= inst.scale <= 1.4

    def test_boxes_in_bounds_and_overlap_bounded(self, dataset):
        size = SMALL_GEN.page_size
        for page in dataset.pages["train"]:
            boxes = [i.box for i in page.instances]
            assert 1 <= len(boxes) <= 6
            for b in boxes:
                assert 0 <= b[0] < b[2] <= size
                assert 0 <= b[1] < b[3] <= size
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    assert iou(boxes[i], boxes[j]) <= SMALL_GEN.max_overlap_iou + 1e-9

    def test_same_seed_identical_pages(self):
        a = generate_dataset(SMALL_GEN)
        b = generate_dataset(SMALL_GEN)
        for split in ("train", "test"):
            for pa, pb in zip(a.pages[split], b.pages[split]):
                assert np.array_equal(pa.image, pb.image)
                assert pa.instances == pb.instances

    def test_different_seed_differs(self):
        a = generate_dataset(SMALL_GEN)
        b = generate_dataset(GenConfig(**{**SMALL_GEN.__dict__, "seed": 6}))
        assert not np.array_equal(a.pages["train"][0].image, b.pages["train"][0].image)

    def test_style_margin_enforced(self):
        styles = generate_styles(Rng(0), 12, margin=0.3)
        for i in range(12):
            for j in range(i + 1, 12):
                d = np.linalg.norm(styles[i].normalized() - styles[j].normalized())
                assert d >= 0.3

    def test_infeasible_layout_errors_with_page(self):
        cfg = GenConfig(n_seen=2, n_unseen=1, train_pages=3, test_pages=1, seed=0,
                        face_base=300.0, page_size=128, placement_retries=3, page_retries=2)
        with pytest.raises(GenerationError, match=r"page \d+"):
            generate_dataset(cfg)

    def test_validation(self):
        with pytest.raises(GenerationError):
            GenConfig(n_seen=0).validate()
        with pytest.raises(GenerationError):
            GenConfig(train_pages=0).validate()


class TestZipf:
    def test_probs_normalized_and_monotone(self):
        p = zipf_probs(20, 1.0)
        assert p.sum() == pytest.approx(1.0)
        assert (np.diff(p) < 0).all()

    def test_rank_frequency_slope(self):
        """[DERIVED] regression over the generator's own draw log:
        s=1.0, 20 classes, 1e4 draws, log-log slope in [-1.15, -0.85]."""
        draws = zipf_class_draws(Rng(123), list(range(20)), 1.0, 10_000)
        counts = np.bincount(draws, minlength=20)
        freqs = np.sort(counts)[::-1].astype(np.float64)
        ranks = np.arange(1, 21, dtype=np.float64)
        slope = np.polyfit(np.log(ranks), np.log(freqs), 1)[0]
        assert -1.15 <= slope <= -0.85

    def test_draws_deterministic(self):
        a = zipf_class_draws(Rng(9), [3, 1, 4], 1.0, 50)
        b = zipf_class_draws(Rng(9), [3, 1, 4], 1.0, 50)
        assert a == b


class TestEpisodes:
    def test_train_episodes_only_seen(self, dataset):
        rng = Rng(1)
        seen = set(dataset.class_ids("seen"))
        for _ in range(60):
            ep = sample_episode(dataset, "train", rng)
            assert ep.query_class in seen
            assert len(ep.gt_boxes) >= 1
            gt_set = {tuple(b) for b in ep.gt_boxes}
            want = {tuple(i.box) for i in ep.target.instances if i.class_id == ep.query_class}
            assert gt_set == want

    def test_distinct_query_and_target_when_possible(self, dataset):
        rng = Rng(2)
        occ = class_occurrences(dataset, "train")
        for _ in range(60):
            ep = sample_episode(dataset, "train", rng)
            if len(occ[ep.query_class]) >= 2:
                assert not ep.same_instance

    def test_single_occurrence_class_coincides(self):
        ds = generate_dataset(GenConfig(n_seen=2, n_unseen=1, train_pages=1, test_pages=1,
                                        seed=11, min_instances=1, max_instances=1))
        rng = Rng(0)
        ep = sample_episode(ds, "train", rng)
        assert ep.same_instance

    def test_class_frequency_uniform_over_classes(self):
        # 10 equally-present classes, 1e4 samples: each in [0.07, 0.13]
        ds = generate_dataset(GenConfig(n_seen=10, n_unseen=1, train_pages=60, test_pages=1,
                                        seed=21, zipf_s=0.0))
        present = [c for c, n in appearance_counts(ds, "train").items() if n > 0]
        assert len(present) == 10
        rng = Rng(5)
        counts = {c: 0 for c in present}
        n = 10_000
        for _ in range(n):
            counts[sample_episode(ds, "train", rng).query_class] += 1
        for c in present:
            assert 0.07 <= counts[c] / n <= 0.13

    def test_crop_matches_box(self, dataset):
        page = dataset.pages["train"][0]
        inst = page.instances[0]
        crop = crop_instance(page, inst.box)
        assert crop.shape[0] >= 2 and crop.shape[1] >= 2
        assert crop.dtype == np.uint8

    def test_unknown_split_rejected(self, dataset):
        with pytest.raises(DataError):
            appearance_counts(dataset, "validation")


class TestQueryPool:
    def test_same_seed_same_pool(self, dataset):
        a = query_pool(dataset, "test", 7)
        b = query_pool(dataset, "test", 7)
        assert sorted(a) == sorted(b)
        for cid in a:
            assert np.array_equal(a[cid].patch, b[cid].patch)
            assert (a[cid].page_index, a[cid].instance_index) == \
                   (b[cid].page_index, b[cid].instance_index)

    def test_covers_every_present_class(self, dataset):
        pool = query_pool(dataset, "test", 0)
        present = {c for c, n in appearance_counts(dataset, "test").items() if n >= 1}
        assert set(pool) == present

    def test_different_seed_can_differ(self, dataset):
        pools = [query_pool(dataset, "test", s) for s in range(6)]
        picks = {tuple((p[c].page_index, p[c].instance_index) for c in sorted(p)) for p in pools}
        assert len(picks) > 1


class TestDiskIO:
    def test_round_trip(self, dataset, tmp_path):
        save_dataset(dataset, tmp_path)
        loaded = load_dataset(tmp_path)
        assert sorted(loaded.classes) == sorted(dataset.classes)
        for cid in loaded.classes:
            assert loaded.classes[cid].split == dataset.classes[cid].split
        for split in ("train", "test"):
            assert len(loaded.pages[split]) == len(dataset.pages[split])
            for pa, pb in zip(dataset.pages[split], loaded.pages[split]):
                assert np.array_equal(pa.image, pb.image)
                assert len(pa.instances) == len(pb.instances)
                for ia, ib in zip(pa.instances, pb.instances):
                    assert ia.class_id == ib.class_id
                    np.testing.assert_allclose(ia.box, ib.box)
            assert loaded.counts[split] == dataset.counts[split]

    def test_sidecar_schema(self, dataset, tmp_path):
        import json
        save_dataset(dataset, tmp_path)
        payload = json.loads((tmp_path / "train.json").read_text())
        assert set(payload) == {"pages", "classes"}
        page = payload["pages"][0]
        assert set(page) == {"id", "file", "instances"}
        inst = page["instances"][0]
        assert set(inst) == {"class_id", "xmin", "ymin", "xmax", "ymax"}
        cls = payload["classes"][0]
        assert set(cls) == {"class_id", "split"}
        assert all(c["split"] in ("seen", "unseen") for c in payload["classes"])

    def test_save_twice_byte_identical(self, dataset, tmp_path):
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        save_dataset(dataset, d1)
        save_dataset(dataset, d2)
        files1 = sorted(p.name for p in d1.iterdir())
        assert files1 == sorted(p.name for p in d2.iterdir())
        for name in files1:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_missing_sidecar_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)
