import json

import numpy as np
import pytest

from condaudio.config import DatasetConfig
from condaudio.core.conditions import Event, TimestampGrid
from condaudio.core.dsp import Contour
from condaudio.dataset.codec import decode_contour, encode_contour, read_contour, write_contour
from condaudio.dataset.labels import format_strong_labels, parse_strong_labels, read_captions, read_strong_labels
from condaudio.dataset.manifest import Manifest, build_manifest, read_record_contours, split
from condaudio.dataset.synthetic import write_fixture_corpus
from condaudio.errors import ConfigMismatchError, DataError, FormatError, ParameterError

SECONDS = 2.0


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return write_fixture_corpus(tmp_path_factory.mktemp("corpus"), n_clips=10, seed=1, seconds=SECONDS)


def _config(**overrides):
    return DatasetConfig(clip_seconds=SECONDS, **overrides)


def _build(corpus, out_dir, **kwargs):
    audio_dir, labels_path, captions_path = corpus
    labels, errors = read_strong_labels(labels_path)
    captions = kwargs.pop("captions", None)
    if captions is None:
        captions = read_captions(captions_path)
    return build_manifest(labels, captions, audio_dir, _config(**kwargs), out_dir, errors)


def test_parse_single_row_and_empty():
    clips, errors = parse_strong_labels("Y1\t1.0\t2.0\tDog\n")
    assert clips == {"Y1": [Event(label="Dog", onset=1.0, offset=2.0)]} and errors == []
    assert parse_strong_labels("") == ({}, [])


def test_parse_reports_malformed_rows():
    text = (
        "segment_id\tstart_time_seconds\tend_time_seconds\tlabel\n"
        "Y1\t0.5\t1.5\tDog\n"
        "Y1\t2.0\t2.5\tSiren\n"
        "Y2\tabc\t1.0\tDog\n"
        "Y2\t3.0\t4.0\tSpeech\n"
        "Y3.wav\t0.0\t0.25\tDog\n"
    )
    clips, errors = parse_strong_labels(text)
    assert sum(len(v) for v in clips.values()) == 4
    assert [e.reason for e in errors] == ["non-numeric time"]
    assert sorted(clips) == ["Y1", "Y2", "Y3"]


def test_parse_rejects_bad_times():
    clips, errors = parse_strong_labels("Y1\t-1.0\t2.0\tDog\nY1\t3.0\t2.0\tDog\nY1\t1.0\t2.0\n")
    assert clips == {}
    assert [e.reason for e in errors] == ["negative time", "onset is not before offset", "missing segment id or label"]


def test_labels_format_round_trip():
    clips = {"Y1": [Event(label="dog", onset=0.5, offset=1.25)], "Y0": [Event(label="siren", onset=0.0, offset=2.0)]}
    parsed, errors = parse_strong_labels(format_strong_labels(clips))
    assert parsed == {k: clips[k] for k in sorted(clips)} and errors == []


def test_captions_validation(tmp_path):
    (tmp_path / "ok.json").write_text(json.dumps({"Y1.wav": "a dog"}))
    assert read_captions(tmp_path / "ok.json") == {"Y1": "a dog"}
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(DataError):
        read_captions(tmp_path / "bad.json")


def test_codec_round_trips(tmp_path, rng):
    values = rng.uniform(50, 500, 100).astype(np.float32)
    values[::7] = 0.0
    pitch = Contour(values, values != 0, 100.0)
    write_contour(tmp_path / "p.acnd", pitch, "pitch")
    back = read_contour(tmp_path / "p.acnd")
    assert np.array_equal(back.values, pitch.values) and np.array_equal(back.voiced, pitch.voiced)

    grid = TimestampGrid(rng.integers(0, 2, (3, 40)), 100.0)
    assert np.array_equal(decode_contour(encode_contour(grid, "grid")).grid, grid.grid)
    obj = rng.normal(size=(40, 8)).astype(np.float32)
    assert np.array_equal(decode_contour(encode_contour(obj, "object")), obj)
    assert (tmp_path / "p.acnd").read_bytes()[:4] == b"ACND"


def test_codec_rejects_bad_files(rng):
    data = encode_contour(Contour.dense(np.ones(10), 100.0), "energy")
    with pytest.raises(FormatError):
        decode_contour(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        decode_contour(data[:-3])
    with pytest.raises(FormatError, match="version 999"):
        decode_contour(data[:4] + (999).to_bytes(2, "little") + data[6:])
    with pytest.raises(ParameterError):
        encode_contour(np.ones(3), "loudness")


def test_fixture_corpus_is_deterministic(tmp_path, corpus):
    audio_dir, labels_path, captions_path = corpus
    again = write_fixture_corpus(tmp_path, n_clips=10, seed=1, seconds=SECONDS)
    assert sorted(p.name for p in audio_dir.iterdir()) == sorted(p.name for p in again[0].iterdir())
    for p in audio_dir.iterdir():
        assert p.read_bytes() == (again[0] / p.name).read_bytes()
    assert labels_path.read_bytes() == again[1].read_bytes()
    assert captions_path.read_bytes() == again[2].read_bytes()
    with pytest.raises(ParameterError):
        write_fixture_corpus(tmp_path, n_clips=21)


def test_build_manifest(tmp_path, corpus):
    manifest, report = _build(corpus, tmp_path / "ds")
    assert len(manifest.records) == 10 and report.included == manifest.ids()
    assert not report.excluded
    assert len(list((tmp_path / "ds" / "contours").glob("*.acnd"))) == 20
    f0, energy = read_record_contours(tmp_path / "ds", manifest.records[0], manifest.config.frame_rate)
    assert len(f0) == len(energy) == manifest.config.n_frames
    assert manifest.config.energy_max == pytest.approx(report.energy_max)
    assert manifest.config.event_set == sorted({e.label for r in manifest.records for e in r.events})
    loaded = Manifest.load(tmp_path / "ds")
    assert loaded == manifest
    lines = (tmp_path / "ds" / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    assert lines == [r.model_dump_json(by_alias=True) for r in manifest.records]
    assert all(json.loads(line)["id"] == r.id for line, r in zip(lines, manifest.records))


def test_build_is_byte_identical(tmp_path, corpus):
    _build(corpus, tmp_path / "a")
    _build(corpus, tmp_path / "b")
    for name in ("manifest.jsonl", "dataset-config.json", "build-report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_build_exclusions(tmp_path, corpus):
    manifest, report = _build(corpus, tmp_path / "empty", captions={})
    assert manifest.records == [] and len(report.excluded) == 10
    assert set(report.excluded.values()) == {"missing caption"}

    audio_dir, _, captions_path = corpus
    corrupt = tmp_path / "audio"
    corrupt.mkdir()
    for p in list(audio_dir.iterdir())[:2]:
        (corrupt / p.name).write_bytes(p.read_bytes())
    (corrupt / "Y777.wav").write_bytes(b"not a wav file")
    captions = {**read_captions(captions_path), "Y777": "noise"}
    manifest, report = build_manifest({}, captions, corrupt, _config(), tmp_path / "two")
    assert len(manifest.records) == 2
    assert report.excluded["Y777"].startswith("unreadable audio")
    assert all(v == "missing audio" for k, v in report.excluded.items() if k != "Y777")


def test_manifest_digest_mismatch(tmp_path, corpus):
    _build(corpus, tmp_path / "ds")
    path = tmp_path / "ds" / "dataset-config.json"
    stored = json.loads(path.read_text())
    stored["config"]["hop"] = 320
    path.write_text(json.dumps(stored))
    with pytest.raises(ConfigMismatchError):
        Manifest.load(tmp_path / "ds")


def test_split_partition(tmp_path, corpus):
    manifest, _ = _build(corpus, tmp_path / "ds")
    a = split(manifest, (8, 1, 1), seed=3)
    b = split(manifest, (8, 1, 1), seed=3)
    assert a.split_counts() == {"train": 8, "valid": 1, "test": 1, "unused": 0}
    assert [r.split for r in a.records] == [r.split for r in b.records]
    assert sorted(a.ids()) == sorted(manifest.ids())
    partial = split(manifest, (5, 1, 1), seed=3)
    assert partial.split_counts()["unused"] == 3
    with pytest.raises(ParameterError):
        split(manifest, (9, 1, 1), seed=3)


def test_split_test_allowlist(tmp_path, corpus):
    manifest, _ = _build(corpus, tmp_path / "ds")
    with_dog = [r.id for r in manifest.records if any(e.label == "dog" for e in r.events)]
    out = split(manifest, (0, 0, len(with_dog)), seed=0, test_allowlist={"dog"})
    assert sorted(r.id for r in out.records if r.split == "test") == sorted(with_dog)
    with pytest.raises(ParameterError):
        split(manifest, (0, 0, len(with_dog) + 1), seed=0, test_allowlist={"dog"})
