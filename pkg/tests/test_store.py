import numpy as np
import pytest
from PIL import Image

from texret import store
from texret.errors import (DataError, IncompatibleSignatureError,
                           IndexCorruptionError, IndexFormatError,
                           IngestionError)
from texret.nsst import NsstConfig
from texret.signatures import extract_signature
from texret.synth import synth_class_image

CFG = NsstConfig(scales=2, directions_per_scale=(2, 4),
                 pyramid_filter_length=8)


def write_ppm(path, planes):
    arr = np.round(np.asarray(planes).transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PPM")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    for k in range(2):
        planes = synth_class_image(seed=5, class_index=k, size=512)
        write_ppm(root / f"tex{k:02d}.ppm", planes)
    return root


@pytest.fixture(scope="module")
def small_index(dataset):
    records, manifest = store.ingest_dataset(dataset)
    return store.build_index(records, manifest, scheme="scheme1", family="gg",
                             config=CFG, stride=4)


class TestIngest:
    def test_patch_counts(self, dataset):
        records, manifest = store.ingest_dataset(dataset)
        assert len(records) == 32  # 16 per source image
        assert sorted(m[0] for m in manifest.rows) == ["tex00", "tex01"]

    def test_forty_sources_yield_640_patches(self, tmp_path):
        rng = np.random.default_rng(0)
        for k in range(40):
            arr = rng.integers(0, 256, size=(512, 512, 3), dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(tmp_path / f"img{k:02d}.ppm",
                                             format="PPM")
        records, _ = store.ingest_dataset(tmp_path)
        assert len(records) == 640

    def test_patch_block_placement(self, dataset):
        records, _ = store.ingest_dataset(dataset)
        by_id = {r.patch_id: r for r in records}
        planes = store.load_query_image(dataset / "tex00.ppm")
        p05 = by_id["tex00_p05"]
        assert np.array_equal(p05.pixels, planes[:, 128:256, 128:256])

    def test_values_normalized(self, dataset):
        records, _ = store.ingest_dataset(dataset)
        assert all(r.pixels.min() >= 0.0 and r.pixels.max() <= 1.0
                   for r in records)

    def test_empty_directory(self, tmp_path):
        records, manifest = store.ingest_dataset(tmp_path)
        assert records == [] and manifest.rows == []

    def test_undecodable_file_skipped(self, tmp_path, caplog):
        (tmp_path / "junk.png").write_bytes(b"not an image")
        records, _ = store.ingest_dataset(tmp_path)
        assert records == []

    def test_small_image_skipped(self, tmp_path):
        arr = np.zeros((100, 100, 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(tmp_path / "small.png")
        records, _ = store.ingest_dataset(tmp_path)
        assert records == []

    def test_grayscale_replicated(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, size=(512, 512), dtype=np.uint8)
        Image.fromarray(arr, "L").save(tmp_path / "gray.png")
        records, _ = store.ingest_dataset(tmp_path)
        assert len(records) == 16
        assert np.array_equal(records[0].pixels[0], records[0].pixels[1])

    def test_oversize_cropped_to_top_left(self, tmp_path):
        rng = np.random.default_rng(2)
        arr = rng.integers(0, 256, size=(600, 700, 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(tmp_path / "big.ppm", format="PPM")
        records, _ = store.ingest_dataset(tmp_path)
        assert len(records) == 16
        expected = arr[:128, :128, 0].astype(np.float64) / 255.0
        assert np.array_equal(records[0].pixels[0], expected)

    def test_ingest_order_independent_of_listing(self, dataset):
        records, _ = store.ingest_dataset(dataset)
        ids = [r.patch_id for r in records]
        assert ids == sorted(ids)


class TestIndexRoundTrip:
    def test_bitwise_round_trip(self, small_index, tmp_path):
        path = tmp_path / "x.idx"
        store.save_index(small_index, path)
        loaded = store.load_index(path)
        assert loaded.scheme == small_index.scheme
        assert loaded.family == small_index.family
        assert loaded.config == small_index.config
        assert loaded.stride == small_index.stride
        assert loaded.manifest_digest == small_index.manifest_digest
        assert sorted(loaded.entries) == sorted(small_index.entries)
        for patch_id, sig in small_index.entries.items():
            other = loaded.entries[patch_id]
            assert other.marginals == sig.marginals
            for g1, g2 in zip(sig.groups, other.groups):
                assert g1.members == g2.members
                assert np.array_equal(g1.sigma, g2.sigma)

    def test_save_is_deterministic(self, small_index, tmp_path):
        p1, p2 = tmp_path / "a.idx", tmp_path / "b.idx"
        store.save_index(small_index, p1)
        store.save_index(small_index, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic(self, small_index, tmp_path):
        path = tmp_path / "x.idx"
        store.save_index(small_index, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"JUNK"
        path.write_bytes(bytes(blob))
        with pytest.raises(IndexFormatError):
            store.load_index(path)

    def test_truncated_file_reports_offset(self, small_index, tmp_path):
        path = tmp_path / "x.idx"
        store.save_index(small_index, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(IndexCorruptionError) as err:
            store.load_index(path)
        assert err.value.offset is not None

    def test_entry_size_arithmetic(self, small_index, tmp_path):
        # entry = id block + per-subband records + packed triangles
        path = tmp_path / "x.idx"
        store.save_index(small_index, path)
        m = 18  # 3 channels x (2 + 4) directions
        entry = 4 + len("tex00_p00") + m * 25 + (m * (m + 1) // 2) * 8
        header = (len(store.MAGIC) + 4 + 1 + 1 + 1 + 4 + 2 * 4 + 4 + 32 + 8)
        expected = header + len(small_index.entries) * entry
        assert path.stat().st_size == expected

    def test_scheme1_84_band_entry_size(self, tmp_path):
        cfg = NsstConfig(3, (4, 8, 16), 8)
        patch = synth_class_image(seed=3, class_index=0, size=128)
        sig = extract_signature(list(patch), "scheme1", "gg", cfg,
                                patch_id="t_p00")
        manifest = store.DatasetManifest(rows=[("t", 512, 512, 16)])
        index = store.Index(scheme="scheme1", family="gg", config=cfg, stride=1,
                            manifest_digest=manifest.digest(),
                            entries={"t_p00": sig})
        path = tmp_path / "one.idx"
        store.save_index(index, path)
        header = (len(store.MAGIC) + 4 + 1 + 1 + 1 + 4 + 3 * 4 + 4 + 32 + 8)
        entry = 4 + len("t_p00") + 84 * 25 + (84 * 85 // 2) * 8
        assert path.stat().st_size == header + entry


class TestQuery:
    def test_self_retrieval_first(self, small_index, dataset):
        planes = store.load_query_image(dataset / "tex00.ppm")
        patch = store.split_patches(planes, "tex00")[3]
        sig = extract_signature(list(patch.pixels), "scheme1", "gg", CFG,
                                stride=4, patch_id="q")
        ranked = store.query_index(small_index, sig, top_k=5)
        assert ranked[0][0] == "tex00_p03"
        assert ranked[0][1] < 1e-6

    def test_top_k_clamped_to_index_size(self, small_index):
        sig = next(iter(small_index.entries.values()))
        ranked = store.query_index(small_index, sig, top_k=10_000)
        assert len(ranked) == len(small_index.entries)

    def test_parallel_matches_serial(self, small_index):
        sig = next(iter(small_index.entries.values()))
        serial = store.query_index(small_index, sig, top_k=32, jobs=1)
        parallel = store.query_index(small_index, sig, top_k=32, jobs=4)
        assert serial == parallel

    def test_incompatible_signature_rejected(self, small_index, dataset):
        planes = store.load_query_image(dataset / "tex00.ppm")
        patch = store.split_patches(planes, "tex00")[0]
        other_cfg = NsstConfig(scales=1, directions_per_scale=(4,))
        sig = extract_signature(list(patch.pixels), "scheme1", "gg", other_cfg)
        with pytest.raises(IncompatibleSignatureError):
            store.query_index(small_index, sig, top_k=5)

    def test_pairwise_matrix_symmetric_zero_diagonal(self, small_index):
        ids, matrix = store.pairwise_jeffery(small_index)
        assert np.array_equal(matrix, matrix.T)
        assert np.all(np.diag(matrix) == 0.0)
        assert len(ids) == matrix.shape[0]

    def test_pairwise_parallel_identical(self, small_index):
        _, m1 = store.pairwise_jeffery(small_index, jobs=1)
        _, m2 = store.pairwise_jeffery(small_index, jobs=4)
        assert np.array_equal(m1, m2)


class TestQueryImage:
    def test_bad_image_rejected(self, tmp_path):
        path = tmp_path / "x.png"
        path.write_bytes(b"garbage")
        with pytest.raises(IngestionError):
            store.load_query_image(path)


class TestManifestVerification:
    def test_matching_directory_passes(self, dataset, small_index):
        store.verify_manifest(small_index, dataset)

    def test_changed_directory_detected(self, dataset, small_index, tmp_path):
        import shutil

        copy = tmp_path / "copy"
        shutil.copytree(dataset, copy)
        (copy / "extra.png").write_bytes((copy / "tex00.ppm").read_bytes())
        with pytest.raises(DataError):
            store.verify_manifest(small_index, copy)

    def test_resized_file_detected(self, dataset, small_index, tmp_path):
        import shutil

        copy = tmp_path / "copy"
        shutil.copytree(dataset, copy)
        with (copy / "tex00.ppm").open("ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(DataError):
            store.verify_manifest(small_index, copy)


class TestEvaluate:
    def test_arr_is_exact_mean_of_ratios(self, small_index):
        from texret.evaluate import evaluate_index

        report = evaluate_index(small_index, nr=16)
        total = 0.0
        for oc in report.outcomes:
            total += oc.ratio
        assert report.arr == total / len(report.outcomes)
        assert 0.0 <= report.arr <= 1.0
        for oc in report.outcomes:
            assert oc.ratio == oc.hits / report.nr

    def test_jobs_do_not_change_report(self, small_index):
        from texret.evaluate import evaluate_index, report_tsv

        r1 = evaluate_index(small_index, nr=16, jobs=1)
        r2 = evaluate_index(small_index, nr=16, jobs=3)
        assert report_tsv(r1) == report_tsv(r2)


class TestLargeRoundTrip:
    def test_640_entry_index_round_trips_bitwise(self, tmp_path):
        # synthetic parameters, realistic scale: 40 sources x 16 patches
        from texret.marginals import GgParams, MarginalModel
        from texret.signatures import (CopulaGroup, Provenance, Signature,
                                       scheme_groups, subband_order)

        cfg = NsstConfig(3, (4, 8, 16), 8)
        order = subband_order(cfg)
        members = tuple(scheme_groups("scheme1", cfg)[0])
        rng = np.random.default_rng(17)
        entries = {}
        for k in range(40):
            for p in range(16):
                marginals = [MarginalModel("gg", GgParams(
                    float(a), float(b), 0.0))
                    for a, b in zip(rng.uniform(0.2, 3.0, len(order)),
                                    rng.uniform(0.5, 3.0, len(order)))]
                a = rng.standard_normal((len(order), len(order))) * 0.05
                sigma = 0.999 * (np.eye(len(order)) + (a + a.T) / 2)
                np.fill_diagonal(sigma, 1.0)
                patch_id = f"src{k:02d}_p{p:02d}"
                entries[patch_id] = Signature(
                    scheme="scheme1", family="gg", config=cfg,
                    marginals=marginals,
                    groups=[CopulaGroup(members=members, sigma=sigma)],
                    provenance=Provenance(patch_id=patch_id))
        index = store.Index(scheme="scheme1", family="gg", config=cfg,
                            stride=1, manifest_digest=b"\x00" * 32,
                            entries=entries)
        path = tmp_path / "big.idx"
        store.save_index(index, path)
        loaded = store.load_index(path)
        assert len(loaded.entries) == 640
        for patch_id, sig in entries.items():
            other = loaded.entries[patch_id]
            assert other.marginals == sig.marginals
            assert np.array_equal(other.groups[0].sigma, sig.groups[0].sigma)
