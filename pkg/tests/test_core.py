"""Domain types, CSV IO, manifests and patch banks."""
import numpy as np
import pytest

from mitodet.config import PipelineConfig, apply_overrides
from mitodet.core import (Detection, HpfImage, PatchRecord, Point,
                          LABEL_BACKGROUND, LABEL_MITOSIS, SET_BG_RAND,
                          SET_FG_LAB, SET_FG_WSI)
from mitodet.dataio import (ArrayRegionSource, load_manifest, parse_annotation_csv,
                            parse_detections, patch_bank_load, patch_bank_save,
                            read_region_mirrored, save_rgb, serialize_detections,
                            write_manifest)
from mitodet.errors import ConfigError, DataError


def _image(h=500, w=500, seed=0, image_id="img", case_id="c1"):
    rng = np.random.default_rng(seed)
    return HpfImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), image_id, case_id)


class TestTypes:
    def test_detection_score_bounds(self):
        Detection(Point(1, 2), 0.0)
        Detection(Point(1, 2), 1.0)
        with pytest.raises(DataError):
            Detection(Point(1, 2), 1.5)

    def test_patch_label_set_consistency(self):
        pix = np.zeros((32, 32, 3), np.uint8)
        PatchRecord(pix, LABEL_MITOSIS, SET_FG_LAB, "s", Point(0, 0))
        with pytest.raises(DataError):
            PatchRecord(pix, LABEL_BACKGROUND, SET_FG_WSI, "s", Point(0, 0))
        with pytest.raises(DataError):
            PatchRecord(pix, LABEL_MITOSIS, "FG-Bogus", "s", Point(0, 0))

    def test_patch_must_be_square_uint8(self):
        with pytest.raises(DataError):
            PatchRecord(np.zeros((32, 16, 3), np.uint8), LABEL_MITOSIS,
                        SET_FG_LAB, "s", Point(0, 0))


class TestAnnotationCsv:
    def test_parse(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("10,20\n30,40\n")
        anns = parse_annotation_csv(p, _image())
        assert [(a.point.row, a.point.col) for a in anns] == [(10, 20), (30, 40)]

    def test_empty_file_is_legal(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("")
        assert parse_annotation_csv(p, _image()) == []

    def test_out_of_bounds(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("10,9999\n")
        with pytest.raises(DataError):
            parse_annotation_csv(p, _image())

    def test_non_integer(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("10,x\n")
        with pytest.raises(DataError):
            parse_annotation_csv(p, _image())


class TestDetectionCsv:
    def test_format(self, tmp_path):
        p = tmp_path / "d.csv"
        serialize_detections([Detection(Point(5, 7), 0.5)], p)
        assert p.read_text() == "5,7,0.500000\n"

    def test_empty_roundtrip(self, tmp_path):
        p = tmp_path / "d.csv"
        serialize_detections([], p)
        assert parse_detections(p) == []

    def test_random_roundtrip_within_rounding(self, tmp_path):
        rng = np.random.default_rng(3)
        dets = [Detection(Point(int(r), int(c)), float(s))
                for r, c, s in zip(rng.integers(0, 1000, 100),
                                   rng.integers(0, 1000, 100), rng.random(100))]
        p = tmp_path / "d.csv"
        serialize_detections(dets, p)
        back = parse_detections(p)
        assert len(back) == 100
        for a, b in zip(dets, back):
            assert a.point == b.point
            assert abs(a.score - b.score) <= 1e-6

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2\n")
        with pytest.raises(DataError):
            parse_detections(p)


class TestPatchBank:
    def _records(self):
        rng = np.random.default_rng(1)
        make = lambda: rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        return [
            PatchRecord(make(), LABEL_BACKGROUND, SET_BG_RAND, "i0", Point(40, 50)),
            PatchRecord(make(), LABEL_MITOSIS, SET_FG_LAB, "i1", Point(60, 70)),
            PatchRecord(make(), LABEL_MITOSIS, SET_FG_WSI, "w0", Point(80, 90)),
        ]

    def test_lossless_roundtrip(self, tmp_path):
        records = self._records()
        patch_bank_save(records, tmp_path / "bank")
        back = patch_bank_load(tmp_path / "bank")
        assert len(back) == 3
        for a, b in zip(records, back):
            assert np.array_equal(a.pixels, b.pixels)
            assert (a.label, a.set, a.source_id, a.center) == \
                   (b.label, b.set, b.source_id, b.center)

    def test_empty_bank(self, tmp_path):
        patch_bank_save([], tmp_path / "bank")
        assert patch_bank_load(tmp_path / "bank") == []

    def test_missing_patch_file(self, tmp_path):
        patch_bank_save(self._records(), tmp_path / "bank")
        (tmp_path / "bank" / "p000001.png").unlink()
        with pytest.raises(DataError):
            patch_bank_load(tmp_path / "bank")

    def test_size_mismatch(self, tmp_path):
        records = self._records()
        patch_bank_save(records, tmp_path / "bank")
        save_rgb(np.zeros((16, 16, 3), np.uint8), tmp_path / "bank" / "p000002.png")
        with pytest.raises(DataError):
            patch_bank_load(tmp_path / "bank")


def _write_corpus(tmp_path, n_hpf=2, n_wsi=1, shuffle=False):
    entries = []
    for i in range(n_hpf):
        img = _image(200, 200, seed=i)
        save_rgb(img.pixels, tmp_path / f"im{i}.png")
        (tmp_path / f"an{i}.csv").write_text("10,10\n")
        entries.append({"case": f"c{n_hpf - i if shuffle else i}",
                        "hpf": f"im{i}.png", "annotations": f"an{i}.csv"})
    wsis = []
    for i in range(n_wsi):
        save_rgb(_image(300, 300, seed=100 + i).pixels, tmp_path / f"w{i}.png")
        wsis.append({"wsi": f"w{i}.png", "wsi_id": f"w{i}"})
    write_manifest(tmp_path / "m.yaml", "train", entries, wsis)
    return tmp_path / "m.yaml"


class TestManifest:
    def test_load_counts(self, tmp_path):
        m = load_manifest(_write_corpus(tmp_path, n_hpf=2, n_wsi=1))
        assert len(m.labeled) == 2
        assert len(m.unlabeled) == 1
        assert m.split == "train"

    def test_sorted_regardless_of_file_order(self, tmp_path):
        m = load_manifest(_write_corpus(tmp_path, n_hpf=3, shuffle=True))
        cases = [e.case_id for e in m.labeled]
        assert cases == sorted(cases)

    def test_missing_annotation_names_path(self, tmp_path):
        path = _write_corpus(tmp_path)
        (tmp_path / "an1.csv").unlink()
        with pytest.raises(DataError, match="an1.csv"):
            load_manifest(path)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.yaml"
        p.write_text("")
        with pytest.raises(DataError, match="no entries"):
            load_manifest(p)

    def test_duplicate_image_id(self, tmp_path):
        img = _image(64, 64)
        save_rgb(img.pixels, tmp_path / "im.png")
        (tmp_path / "an.csv").write_text("")
        entries = [{"case": "c", "hpf": "im.png", "annotations": "an.csv"}] * 2
        write_manifest(tmp_path / "m.yaml", "train", entries)
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(tmp_path / "m.yaml")


class TestRegionSource:
    def test_read_region_exact(self):
        src = ArrayRegionSource(_image(100, 120).pixels, "w")
        block = src.read_region(10, 20, 30, 40)
        assert block.shape == (30, 40, 3)

    def test_out_of_bounds_read_is_error(self):
        src = ArrayRegionSource(_image(100, 120).pixels, "w")
        with pytest.raises(DataError):
            src.read_region(90, 0, 20, 20)

    def test_mirrored_read_matches_np_pad(self):
        pixels = _image(50, 60).pixels
        padded = np.pad(pixels, ((8, 8), (8, 8), (0, 0)), mode="symmetric")
        got = read_region_mirrored(pixels, -8, -8, 66, 76)
        assert np.array_equal(got, padded)


class TestPipelineConfig:
    def test_defaults_validate(self):
        cfg = PipelineConfig()
        assert cfg.total_iterations == 60000
        assert cfg.batch_fg + cfg.batch_bg == cfg.batch_size

    def test_ratio_must_sum(self):
        with pytest.raises(ConfigError):
            PipelineConfig(batch_fg=3)

    def test_scaled_schedule(self):
        cfg = PipelineConfig().scaled(600)
        assert cfg.lr_schedule == ((200, 1e-4), (300, 1e-5), (100, 1e-6))
        assert cfg.hnm_iteration == 300

    def test_override_unknown_key(self):
        with pytest.raises(ConfigError, match="nonsense"):
            apply_overrides(PipelineConfig(), {"nonsense": "1"})

    def test_override_types(self):
        cfg = apply_overrides(PipelineConfig(), {
            "patch_size": "64", "score_threshold": "0.4",
            "lr_schedule": "10:1e-3,10:1e-4", "hnm_iteration": "10"})
        assert cfg.patch_size == 64
        assert cfg.score_threshold == 0.4
        assert cfg.lr_schedule == ((10, 1e-3), (10, 1e-4))
