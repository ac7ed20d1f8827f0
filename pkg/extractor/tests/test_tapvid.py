import json
import pickle

import numpy as np
import pytest

from tapextract.tapvid import ArchiveError, convert_tapvid


def make_archive(tmp_path, videos, name="archive.pkl"):
    path = tmp_path / name
    path.write_bytes(pickle.dumps(videos))
    return path


def synthetic_record(rng, t=8, n=5, h=120, w=160, normalized=True):
    video = rng.integers(0, 255, (t, h, w, 3), dtype=np.uint8)
    points = rng.random((n, t, 2))
    if not normalized:
        points = points * np.array([w, h])
    occluded = rng.random((n, t)) < 0.3
    occluded[:, 0] = False  # keep every track queryable
    return {"video": video, "points": points, "occluded": occluded}


class TestConvertTapvid:
    def test_lossless_round_trip_of_fixture(self, tmp_path):
        rng = np.random.default_rng(0)
        records = {f"clip_{i}": synthetic_record(rng) for i in range(4)}
        archive = make_archive(tmp_path, records)
        out = tmp_path / "annotations.json"
        stats = convert_tapvid(archive, out)
        assert stats.videos == 4
        assert stats.dropped_all_occluded == 0

        doc = json.loads(out.read_text())
        assert doc["format"] == "trackprobe-annotations"
        for i, video in enumerate(doc["videos"]):
            name = video["video_id"]
            src = records[name]
            h, w = src["video"].shape[1:3]
            assert video["resolution"] == [h, w]
            for n, track in enumerate(video["tracks"]):
                np.testing.assert_allclose(
                    np.asarray(track["points"]),
                    src["points"][n] * np.array([w, h]), rtol=1e-12)
                assert track["visible"] == (~src["occluded"][n]).tolist()

    def test_absolute_pixel_points_pass_through(self, tmp_path):
        rng = np.random.default_rng(1)
        rec = synthetic_record(rng, normalized=False)
        archive = make_archive(tmp_path, {"v": rec})
        out = tmp_path / "ann.json"
        convert_tapvid(archive, out)
        doc = json.loads(out.read_text())
        np.testing.assert_allclose(np.asarray(doc["videos"][0]["tracks"][0]["points"]),
                                   rec["points"][0], rtol=1e-12)

    def test_engine_reads_converted_annotations(self, tmp_path):
        read_annotations = pytest.importorskip("trackprobe.dataio").read_annotations
        rng = np.random.default_rng(2)
        archive = make_archive(tmp_path, {"v": synthetic_record(rng)})
        out = tmp_path / "ann.json"
        convert_tapvid(archive, out)
        videos = read_annotations(out)
        assert len(videos) == 1 and len(videos[0].tracks) == 5

    def test_never_visible_tracks_dropped_and_counted(self, tmp_path):
        rng = np.random.default_rng(3)
        rec = synthetic_record(rng, n=3)
        rec["occluded"][1, :] = True
        archive = make_archive(tmp_path, {"v": rec})
        stats = convert_tapvid(archive, tmp_path / "ann.json")
        assert stats.tracks == 2
        assert stats.dropped_all_occluded == 1

    def test_jpeg_frame_lists_supported(self, tmp_path):
        PIL = pytest.importorskip("PIL.Image")
        import io as _io

        rng = np.random.default_rng(4)
        rec = synthetic_record(rng, t=3, h=40, w=60)
        frames = []
        for frame in rec["video"]:
            buf = _io.BytesIO()
            PIL.fromarray(frame).save(buf, format="JPEG")
            frames.append(buf.getvalue())
        rec["video"] = frames
        rec["points"] = rec["points"][:, :3]
        rec["occluded"] = rec["occluded"][:, :3]
        archive = make_archive(tmp_path, {"v": rec})
        convert_tapvid(archive, tmp_path / "ann.json")
        doc = json.loads((tmp_path / "ann.json").read_text())
        assert doc["videos"][0]["resolution"] == [40, 60]

    def test_missing_field_named_in_error(self, tmp_path):
        archive = make_archive(tmp_path, {"v": {"video": np.zeros((1, 4, 4, 3), np.uint8),
                                                "points": np.zeros((1, 1, 2))}})
        with pytest.raises(ArchiveError, match="occluded"):
            convert_tapvid(archive, tmp_path / "ann.json")

    def test_thirty_video_archive_yields_thirty(self, tmp_path):
        rng = np.random.default_rng(5)
        records = {f"davis_{i:02d}": synthetic_record(rng, t=4, n=2, h=32, w=48)
                   for i in range(30)}
        stats = convert_tapvid(make_archive(tmp_path, records), tmp_path / "ann.json")
        assert stats.videos == 30
