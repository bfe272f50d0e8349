"""Tests for sketch-to-latent regression, retrieval, and rank evaluation.

Oracles: retrieval ordering is replayed with an independent brute-force
sort; the random-constant evaluator baseline is checked against its
analytic 1/category-size success rate by Monte Carlo; self-retrieval
and exact-latent hits follow from the metric definitions.
"""

import json
import math

import numpy as np
import pytest

from drivedesk.codec import LATENT_DIM, LatentCode
from drivedesk.errors import (
    EmptyCategory,
    InvalidModel,
    InvalidParams,
    TrainingDiverged,
    UndefinedSimilarity,
)
from drivedesk.imaging import FEATURE_DIM, FeatureVec, GrayImage, feature_descriptor
from drivedesk.nn import init_layers
from drivedesk.retrieval import (
    REGRESSOR_LAYERS,
    EvalReport,
    FeatureEntry,
    FeatureIndex,
    RegressorConfig,
    RetrievalEntry,
    RetrievalResult,
    SketchRegressor,
    load_feature_index,
    percentile_rank_eval,
    predict_latent,
    retrieve_by_feature,
    retrieve_by_latent,
    save_eval_report,
    save_feature_index,
    sketch_input,
    train_regressor,
)
from drivedesk.shapegen import CATEGORIES


def pattern_sketch(slot: int, size: int = 64) -> GrayImage:
    """Deterministic distinct binary pattern: a filled block whose position
    and width encode the slot."""
    px = np.zeros((size, size), dtype=np.uint8)
    row = 4 + 3 * (slot % 16)
    col = 4 + 3 * (slot // 2 % 16)
    px[row : row + 6 + slot % 5, col : col + 8 + slot % 7] = 255
    return GrayImage(px)


def random_code(rng) -> LatentCode:
    return LatentCode(rng.normal(0.0, 0.3, LATENT_DIM))


def zero_regressor() -> SketchRegressor:
    weights, biases = init_layers(REGRESSOR_LAYERS, np.random.default_rng(0))
    return SketchRegressor([np.zeros_like(w) for w in weights], [np.zeros_like(b) for b in biases])


@pytest.fixture(scope="module")
def small_library():
    """8 shapes over 2 categories with distinct sketches and codes."""
    rng = np.random.default_rng(42)
    pairs = []
    table = {}
    for j in range(8):
        cat = "E" if j < 4 else "N"
        sid = f"{cat}-{j:04d}"
        code = random_code(rng)
        pairs.append((pattern_sketch(j), cat, code))
        table[sid] = code
    return pairs, table


@pytest.fixture(scope="module")
def trained(small_library):
    pairs, _ = small_library
    cfg = RegressorConfig(steps=1200, batch_size=16, seed=0, val_fraction=0.0)
    return train_regressor(pairs, cfg)


class TestSketchInput:
    def test_dimension_and_range(self):
        row = sketch_input(pattern_sketch(3), "FS")
        assert row.shape == (1028,)
        assert row.min() >= 0.0 and row.max() <= 1.0

    def test_onehot_slot(self):
        for i, cat in enumerate(CATEGORIES):
            row = sketch_input(pattern_sketch(0), cat)
            hot = row[1024:]
            assert hot[i] == 1.0 and hot.sum() == 1.0

    def test_unknown_category(self):
        with pytest.raises(InvalidParams):
            sketch_input(pattern_sketch(0), "SUV")


class TestRegressorConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(InvalidParams):
            RegressorConfig(lr=0.0)
        with pytest.raises(InvalidParams):
            RegressorConfig(steps=0)
        with pytest.raises(InvalidParams):
            RegressorConfig(val_fraction=1.0)


class TestSketchRegressor:
    def test_rejects_wrong_shapes(self):
        weights, biases = init_layers((1028, 128, 16), np.random.default_rng(0))
        with pytest.raises(InvalidModel):
            SketchRegressor(weights, biases)

    def test_rejects_non_finite(self):
        weights, biases = init_layers(REGRESSOR_LAYERS, np.random.default_rng(0))
        weights[0][0, 0] = np.nan
        with pytest.raises(InvalidModel):
            SketchRegressor(weights, biases)


class TestTrainRegressor:
    def test_memorizes_small_library(self, small_library, trained):
        pairs, _ = small_library
        final = float(np.mean(trained.loss_history[-50:]))
        assert final < 1e-3
        assert math.isfinite(trained.validation_l2)

    def test_training_sketches_rank_first(self, small_library, trained):
        pairs, table = small_library
        hits = 0
        for (sketch, cat, _), sid in zip(pairs, table):
            z_hat = predict_latent(trained, sketch, cat)
            top = retrieve_by_latent(z_hat, cat, 1, table).shape_ids[0]
            hits += top == sid
        assert hits / len(pairs) >= 0.85

    def test_deterministic(self, small_library):
        pairs, _ = small_library
        cfg = RegressorConfig(steps=60, seed=7)
        a = train_regressor(pairs, cfg)
        b = train_regressor(pairs, cfg)
        for wa, wb in zip(a.weights, b.weights):
            assert (wa == wb).all()
        assert a.loss_history == b.loss_history

    def test_validation_split_generalizes(self):
        # Three sketch variants per shape; the held-out rows are unseen
        # variants of trained shapes, so validation L2 must sit well under
        # the spread between different shapes' codes.
        rng = np.random.default_rng(9)
        pairs = []
        codes = []
        for j in range(12):
            cat = CATEGORIES[j % 2]
            code = random_code(rng)
            codes.append(code.values)
            base = pattern_sketch(j).pixels
            for variant in range(3):
                px = np.roll(base, variant, axis=1)
                pairs.append((GrayImage(px), cat, code))
        cfg = RegressorConfig(steps=1500, batch_size=24, seed=1, val_fraction=0.1)
        reg = train_regressor(pairs, cfg)
        codes = np.stack(codes)
        diffs = codes[:, None, :] - codes[None, :, :]
        inter = np.linalg.norm(diffs, axis=2)
        mean_inter = inter[np.triu_indices(len(codes), k=1)].mean()
        assert reg.validation_l2 < 0.5 * mean_inter

    def test_requires_eight_pairs(self, small_library):
        pairs, _ = small_library
        with pytest.raises(InvalidParams):
            train_regressor(pairs[:7])

    def test_requires_two_categories(self):
        rng = np.random.default_rng(0)
        pairs = [(pattern_sketch(j), "E", random_code(rng)) for j in range(8)]
        with pytest.raises(InvalidParams):
            train_regressor(pairs)

    def test_divergence_detected(self, small_library):
        pairs, _ = small_library
        cfg = RegressorConfig(lr=1e6, steps=400, seed=0)
        with pytest.raises(TrainingDiverged):
            train_regressor(pairs, cfg)


class TestPredictLatent:
    def test_blank_sketch_is_finite(self, trained):
        blank = GrayImage(np.zeros((64, 64), dtype=np.uint8))
        z = predict_latent(trained, blank, "E")
        assert np.isfinite(z.values).all()
        assert z.values.shape == (LATENT_DIM,)

    def test_deterministic(self, trained):
        s = pattern_sketch(2)
        a = predict_latent(trained, s, "N")
        b = predict_latent(trained, s, "N")
        assert (a.values == b.values).all()


class TestRetrieveByLatent:
    def test_exact_latent_is_rank_one_with_zero_distance(self, small_library):
        _, table = small_library
        sid = "E-0002"
        result = retrieve_by_latent(table[sid], "E", 3, table)
        assert result.shape_ids[0] == sid
        assert result.entries[0].score == 0.0

    def test_results_share_category(self, small_library):
        _, table = small_library
        rng = np.random.default_rng(1)
        result = retrieve_by_latent(random_code(rng), "N", 10, table)
        assert all(sid.startswith("N-") for sid in result.shape_ids)

    def test_k_beyond_category_returns_full_category(self, small_library):
        _, table = small_library
        rng = np.random.default_rng(2)
        result = retrieve_by_latent(random_code(rng), "E", 99, table)
        assert len(result.entries) == 4

    def test_matches_brute_force_ordering(self):
        rng = np.random.default_rng(3)
        table = {f"FS-{j:04d}": random_code(rng) for j in range(60)}
        z_hat = random_code(rng)
        result = retrieve_by_latent(z_hat, "FS", 60, table)
        expected = sorted(
            table, key=lambda sid: (float(np.linalg.norm(table[sid].values - z_hat.values)), sid)
        )
        assert result.shape_ids == expected
        scores = [e.score for e in result.entries]
        assert scores == sorted(scores)

    def test_exact_ties_break_lexicographically(self):
        code = LatentCode(np.full(LATENT_DIM, 0.25))
        table = {"E-bbbb": code, "E-aaaa": LatentCode(code.values.copy())}
        result = retrieve_by_latent(LatentCode(np.zeros(LATENT_DIM)), "E", 2, table)
        assert result.shape_ids == ["E-aaaa", "E-bbbb"]

    def test_stl_paths_threaded(self, small_library):
        _, table = small_library
        paths = {sid: f"/shapes/{sid}.stl" for sid in table}
        result = retrieve_by_latent(table["E-0001"], "E", 2, table, stl_paths=paths)
        assert result.entries[0].stl_path == "/shapes/E-0001.stl"

    def test_empty_category(self, small_library):
        _, table = small_library
        with pytest.raises(EmptyCategory):
            retrieve_by_latent(LatentCode(np.zeros(LATENT_DIM)), "FD", 1, table)

    def test_bad_arguments(self, small_library):
        _, table = small_library
        z = LatentCode(np.zeros(LATENT_DIM))
        with pytest.raises(InvalidParams):
            retrieve_by_latent(z, "E", 0, table)
        with pytest.raises(InvalidParams):
            retrieve_by_latent(z, "hatchback", 1, table)


class TestRetrievalResult:
    def test_rejects_non_monotone_distances(self):
        entries = [RetrievalEntry("a", 2.0), RetrievalEntry("b", 1.0)]
        with pytest.raises(InvalidParams):
            RetrievalResult(entries, mode="distance")

    def test_rejects_non_monotone_similarity(self):
        entries = [RetrievalEntry("a", 0.1), RetrievalEntry("b", 0.9)]
        with pytest.raises(InvalidParams):
            RetrievalResult(entries, mode="similarity")

    def test_rejects_unknown_mode(self):
        with pytest.raises(InvalidParams):
            RetrievalResult([], mode="rank")


@pytest.fixture()
def feature_db(tmp_path):
    """Five distinct sketches indexed with real (empty) geometry files."""
    images = {}
    entries = {}
    for j in range(5):
        sid = f"E-{j:04d}"
        img = GrayImage(
            np.where(pattern_sketch(2 * j + 1, 96).pixels > 0, 255, 0).astype(np.uint8)
        )
        stl = tmp_path / f"{sid}.stl"
        stl.write_bytes(b"solid stub")
        images[sid] = img
        entries[sid] = FeatureEntry(
            features=feature_descriptor(img), stl_path=str(stl), sketch_path=f"{sid}.pgm"
        )
    return images, FeatureIndex(entries)


class TestRetrieveByFeature:
    def test_database_image_retrieves_itself_first(self, feature_db):
        images, db = feature_db
        for sid, img in images.items():
            result = retrieve_by_feature(img, db, 3)
            assert result.shape_ids[0] == sid
            assert abs(result.entries[0].score - 1.0) <= 1e-12

    def test_k_of_three_returns_three(self, feature_db):
        images, db = feature_db
        result = retrieve_by_feature(next(iter(images.values())), db, 3)
        assert len(result.entries) == 3
        scores = [e.score for e in result.entries]
        assert scores == sorted(scores, reverse=True)

    def test_missing_geometry_promotes_next_rank(self, feature_db):
        import os

        images, db = feature_db
        query = images["E-0000"]
        before = retrieve_by_feature(query, db, 2)
        top, second = before.shape_ids[:2]
        os.unlink(db.entries[top].stl_path)
        after = retrieve_by_feature(query, db, 2)
        assert after.shape_ids[0] == second
        assert top in after.query["skipped_missing_geometry"]

    def test_db_descriptor_scaling_keeps_order(self, feature_db):
        images, db = feature_db
        query = images["E-0003"]
        baseline = retrieve_by_feature(query, db, 5).shape_ids
        scaled_entries = {
            sid: FeatureEntry(
                features=FeatureVec(e.features.values * (3.0 if sid == baseline[1] else 1.0)),
                stl_path=e.stl_path,
            )
            for sid, e in db.entries.items()
        }
        rescored = retrieve_by_feature(query, FeatureIndex(scaled_entries), 5).shape_ids
        assert rescored == baseline

    def test_zero_query_rejected(self, feature_db):
        _, db = feature_db
        blank = GrayImage(np.zeros((96, 96), dtype=np.uint8))
        with pytest.raises(UndefinedSimilarity):
            retrieve_by_feature(blank, db, 1)

    def test_empty_index_rejected(self):
        with pytest.raises(EmptyCategory):
            retrieve_by_feature(pattern_sketch(0, 96), FeatureIndex({}), 1)


class TestFeatureIndexPersistence:
    def test_round_trip_exact(self, feature_db, tmp_path):
        _, db = feature_db
        path = tmp_path / "index.json"
        save_feature_index(db, path)
        back = load_feature_index(path)
        assert set(back.entries) == set(db.entries)
        for sid in db.entries:
            assert (back.entries[sid].features.values == db.entries[sid].features.values).all()
            assert back.entries[sid].stl_path == db.entries[sid].stl_path
            assert back.entries[sid].sketch_path == db.entries[sid].sketch_path

    def test_malformed_entry_rejected(self, tmp_path):
        from drivedesk.errors import IoError

        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"E-0": {"stl_path": "x"}}))
        with pytest.raises(IoError):
            load_feature_index(path)

    def test_missing_file_rejected(self, tmp_path):
        from drivedesk.errors import IoError

        with pytest.raises(IoError):
            load_feature_index(tmp_path / "absent.json")


class TestPercentileRankEval:
    def test_exact_predictions_score_perfectly(self):
        # A zero-weight regressor predicts the zero code; make that the
        # stored code of the true shape, so retrieval is exact.
        reg = zero_regressor()
        rng = np.random.default_rng(4)
        table = {"E-true": LatentCode(np.zeros(LATENT_DIM))}
        for j in range(15):
            table[f"E-{j:04d}"] = random_code(rng)
        report = percentile_rank_eval(reg, [(pattern_sketch(0), "E", "E-true")], table)
        assert report.rank1_rate == 1.0
        assert report.success_rate == 1.0
        # 1 of 16 is percentile 6.25, so the literal 1% criterion stays 0
        # until categories hold >= 100 shapes.
        assert report.top1pct_rate == 0.0

    def test_histogram_sums_to_query_count(self, small_library, trained):
        pairs, table = small_library
        testset = [(s, c, sid) for (s, c, _), sid in zip(pairs, table)]
        report = percentile_rank_eval(trained, testset, table)
        total = sum(sum(stats["histogram"]) for stats in report.per_category.values())
        assert total == report.count == len(testset)

    def test_random_constant_matches_chance_rate(self):
        # With a constant prediction and i.i.d. random tables, the true
        # shape's rank is uniform over the 16 slots: rank-1 rate ~ 1/16.
        reg = zero_regressor()
        sketch = pattern_sketch(0)
        hits = 0
        trials = 1000
        for t in range(trials):
            rng = np.random.default_rng(10_000 + t)
            table = {f"N-{j:04d}": random_code(rng) for j in range(16)}
            report = percentile_rank_eval(reg, [(sketch, "N", "N-0007")], table)
            hits += report.rank1_rate == 1.0
        rate = hits / trials
        assert abs(rate - 1 / 16) < 0.03

    def test_success_monotone_in_threshold(self, small_library, trained):
        pairs, table = small_library
        testset = [(s, c, sid) for (s, c, _), sid in zip(pairs, table)]
        report = percentile_rank_eval(trained, testset, table)
        pcts = [p for stats in report.per_category.values() for p in stats["percentiles"]]
        rates = [np.mean([p <= th for p in pcts]) for th in (50, 25, 10, 5, 1)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_missing_ground_truth_rejected(self, small_library, trained):
        _, table = small_library
        with pytest.raises(InvalidParams):
            percentile_rank_eval(trained, [(pattern_sketch(0), "E", "E-9999")], table)

    def test_empty_testset_rejected(self, trained, small_library):
        _, table = small_library
        with pytest.raises(InvalidParams):
            percentile_rank_eval(trained, [], table)

    def test_report_serializes(self, small_library, trained, tmp_path):
        pairs, table = small_library
        testset = [(s, c, sid) for (s, c, _), sid in zip(pairs, table)]
        report = percentile_rank_eval(trained, testset, table)
        path = tmp_path / "report.json"
        save_eval_report(report, path)
        payload = json.loads(path.read_text())
        assert payload["count"] == len(testset)
        assert set(payload["per_category"]) == {"E", "N"}
        for stats in payload["per_category"].values():
            assert len(stats["histogram"]) == 100


class TestEvalReportShape:
    def test_feature_dim_constant(self):
        assert FEATURE_DIM == 288
        assert isinstance(EvalReport({}, 0.0, 0.0, 0.0, 0), EvalReport)
