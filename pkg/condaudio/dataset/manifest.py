# condaudio/dataset/manifest.py
# Dataset construction: per-clip condition extraction, manifest assembly and
# seeded train/valid/test splits.
#
# Output directory layout:
#   manifest.jsonl        one ClipRecord per line, in id order
#   dataset-config.json   the extraction config and its digest
#   build-report.json     included ids, exclusions with reasons, label errors
#   contours/<id>.pitch.acnd, contours/<id>.energy.acnd
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from condaudio import settings
from condaudio.config import DatasetConfig, ExtractionConfig, derive_seed
from condaudio.core.audio import AudioBuffer, fit_length, read_wav
from condaudio.core.conditions import Event, EventList
from condaudio.core.dsp import Contour, estimate_f0, frame_energy, stft
from condaudio.dataset.codec import read_contour, write_contour
from condaudio.dataset.labels import LabelError, clip_id
from condaudio.errors import ConfigMismatchError, DataError, FormatError, ParameterError
from condaudio.tools.report import write_json, write_text

logger = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
DATASET_CONFIG = "dataset-config.json"
BUILD_REPORT = "build-report.json"
CONTOURS = "contours"
SPLITS = ("train", "valid", "test", "unused")


class ClipRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    audio_path: str
    caption: str
    events: List[Event] = Field(default_factory=list)
    pitch_ref: str
    energy_ref: str
    split: Optional[str] = None


class BuildReport(BaseModel):
    included: List[str] = Field(default_factory=list)
    excluded: Dict[str, str] = Field(default_factory=dict)
    label_errors: List[LabelError] = Field(default_factory=list)
    energy_max: Optional[float] = None


class Manifest(BaseModel):
    config: DatasetConfig
    records: List[ClipRecord] = Field(default_factory=list)

    @property
    def digest(self) -> str:
        return self.config.digest()

    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    def split_counts(self) -> Dict[str, int]:
        return {name: sum(r.split == name for r in self.records) for name in SPLITS}

    def save(self, out_dir: Union[str, Path]) -> None:
        out_dir = Path(out_dir)
        lines = [r.model_dump_json(by_alias=True) for r in self.records]
        write_text(out_dir / MANIFEST, "\n".join(lines))
        write_json(out_dir / DATASET_CONFIG, {"digest": self.digest, "config": self.config.model_dump()})

    @classmethod
    def load(cls, out_dir: Union[str, Path]) -> "Manifest":
        out_dir = Path(out_dir)
        try:
            stored = json.loads((out_dir / DATASET_CONFIG).read_text(encoding="utf-8"))
            config = DatasetConfig.model_validate(stored["config"])
            records = [
                ClipRecord.model_validate_json(line)
                for line in (out_dir / MANIFEST).read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
        except (OSError, ValueError, KeyError, ValidationError) as e:
            raise DataError(f"cannot load manifest from {out_dir}: {e}") from e
        if stored.get("digest") != config.digest():
            raise ConfigMismatchError(f"{out_dir}: manifest digest does not match its dataset config")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise DataError(f"{out_dir}: duplicate record ids")
        return cls(config=config, records=records)


# ----------------- extraction -----------------

def load_clip(path: Union[str, Path], config: ExtractionConfig) -> AudioBuffer:
    """Read, resample if needed and pad / centre-crop to the configured clip length."""
    return fit_length(read_wav(path, config.sample_rate), config.clip_samples)


def extract_clip(audio: AudioBuffer, config: ExtractionConfig) -> Tuple[Contour, Contour]:
    """Frame-level F0 and energy contours on the shared frame grid."""
    f0 = estimate_f0(audio, config.f_min, config.f_max, config.hop, config.window_size,
                     config.voicing_threshold, config.trough_threshold)
    energy = frame_energy(stft(audio, config.window_size, config.hop))
    return f0, energy


def _extract_file(path: Path, config: ExtractionConfig):
    try:
        return extract_clip(load_clip(path, config), config), None
    except DataError as e:
        return None, f"unreadable audio: {e}"


def extract_files(paths: Sequence[Path], config: ExtractionConfig) -> List[Tuple[Optional[Tuple[Contour, Contour]], Optional[str]]]:
    """Per-file (contours, error) in input order, up to settings.THREADS workers."""
    return Parallel(n_jobs=settings.THREADS)(delayed(_extract_file)(p, config) for p in paths)


# ----------------- build -----------------

def _exclusion(events: EventList, classes: Iterable[str], duration: float) -> Optional[str]:
    known = set(classes)
    for e in events:
        if e.label not in known:
            return f"event class {e.label!r} is not in the event set"
        if e.offset > duration + 1e-9:
            return f"event {e.label} ends at {e.offset}s, after the clip end"
    return None


def build_manifest(labels: Mapping[str, EventList], captions: Mapping[str, str], audio_dir: Union[str, Path],
                   config: DatasetConfig, out_dir: Union[str, Path],
                   label_errors: Sequence[LabelError] = ()) -> Tuple[Manifest, BuildReport]:
    audio_dir, out_dir = Path(audio_dir), Path(out_dir)
    if not audio_dir.is_dir():
        raise DataError(f"audio directory not found: {audio_dir}")
    audio = {clip_id(p.name): p for p in sorted(audio_dir.glob("*.wav"))}
    event_set = list(config.event_set) or sorted({e.label for events in labels.values() for e in events})
    report = BuildReport(label_errors=list(label_errors))

    candidates = []
    for cid in sorted(set(labels) | set(captions) | set(audio)):
        if cid not in audio:
            reason = "missing audio"
        elif cid not in captions:
            reason = "missing caption"
        else:
            reason = _exclusion(labels.get(cid, []), event_set, config.clip_seconds)
        if reason:
            report.excluded[cid] = reason
            logger.warning("excluding %s: %s", cid, reason)
        else:
            candidates.append(cid)

    extraction = config.extraction()
    results = extract_files([audio[cid] for cid in candidates], extraction)

    built: Dict[str, Tuple[Contour, Contour]] = {}
    for cid, (contours, error) in zip(candidates, results):
        if error:
            report.excluded[cid] = error
            logger.warning("excluding %s: %s", cid, error)
            continue
        if any(len(c) != config.n_frames for c in contours):
            raise DataError(f"{cid}: contour length {len(contours[0])} differs from L={config.n_frames}")
        built[cid] = contours

    energy_max = config.energy_max
    if built:
        peak = max(float(energy.values.max()) for _, energy in built.values())
        if peak > config.energy_min:
            energy_max = peak
    report.energy_max = energy_max
    final = DatasetConfig.model_validate({**config.model_dump(), "event_set": event_set, "energy_max": energy_max})

    contour_dir = out_dir / CONTOURS
    contour_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for cid, (f0, energy) in built.items():
        pitch_ref, energy_ref = f"{CONTOURS}/{cid}.pitch.acnd", f"{CONTOURS}/{cid}.energy.acnd"
        write_contour(out_dir / pitch_ref, f0, "pitch")
        write_contour(out_dir / energy_ref, energy, "energy")
        records.append(ClipRecord(id=cid, audio_path=audio[cid].name, caption=captions[cid],
                                  events=labels.get(cid, []), pitch_ref=pitch_ref, energy_ref=energy_ref))
        report.included.append(cid)

    manifest = Manifest(config=final, records=records)
    manifest.save(out_dir)
    write_json(out_dir / BUILD_REPORT, report.model_dump())
    logger.info("built %d records, excluded %d", len(records), len(report.excluded))
    return manifest, report


def read_record_contours(manifest_dir: Union[str, Path], record: ClipRecord, frame_rate: float) -> Tuple[Contour, Contour]:
    manifest_dir = Path(manifest_dir)
    f0 = read_contour(manifest_dir / record.pitch_ref, frame_rate)
    energy = read_contour(manifest_dir / record.energy_ref, frame_rate)
    if not isinstance(f0, Contour) or not isinstance(energy, Contour):
        raise FormatError(f"{record.id}: contour files hold the wrong kind")
    return f0, energy


# ----------------- split -----------------

def split(manifest: Manifest, counts: Tuple[int, int, int], seed: int,
          test_allowlist: Optional[Iterable[str]] = None) -> Manifest:
    """Seeded shuffle, then the test set (restricted to clips with an allowlisted
    class when given), train and valid; leftover records are marked "unused"."""
    n_train, n_valid, n_test = counts
    if min(counts) < 0:
        raise ParameterError("split counts must be non-negative")
    n = len(manifest.records)
    if sum(counts) > n:
        raise ParameterError(f"split counts {counts} exceed the {n} records")
    rng = np.random.default_rng(derive_seed(seed, "split"))
    order = [manifest.records[i].id for i in rng.permutation(n)]
    by_id = {r.id: r for r in manifest.records}

    allow = set(test_allowlist or ())
    eligible = [cid for cid in order if not allow or any(e.label in allow for e in by_id[cid].events)]
    if len(eligible) < n_test:
        raise ParameterError(f"only {len(eligible)} clips qualify for the test set, {n_test} requested")
    test = eligible[:n_test]
    taken = set(test)
    rest = [cid for cid in order if cid not in taken]
    assignment = {cid: "test" for cid in test}
    assignment.update({cid: "train" for cid in rest[:n_train]})
    assignment.update({cid: "valid" for cid in rest[n_train:n_train + n_valid]})
    records = [r.model_copy(update={"split": assignment.get(r.id, "unused")}) for r in manifest.records]
    out = Manifest(config=manifest.config, records=records)
    logger.info("split: %s", out.split_counts())
    return out


def write_split_report(path: Union[str, Path], manifest: Manifest) -> None:
    groups = {name: [r.id for r in manifest.records if r.split == name] for name in SPLITS}
    write_json(Path(path), {"counts": manifest.split_counts(), "ids": groups})
