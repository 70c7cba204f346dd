# condaudio/dataset/labels.py
# Strong labels: segment_id<TAB>start_time_seconds<TAB>end_time_seconds<TAB>label,
# with or without that header row. The same layout carries SED predictions.
from __future__ import annotations

import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict

from condaudio.core.conditions import Event, EventList
from condaudio.errors import DataError

logger = logging.getLogger(__name__)

COLUMNS = ["segment_id", "start_time_seconds", "end_time_seconds", "label"]


class LabelError(BaseModel):
    model_config = ConfigDict(frozen=True)

    row: str
    reason: str


def clip_id(name: str) -> str:
    """Segment ids and file names refer to the same clip: "Y1.wav" is "Y1"."""
    return name[:-4] if name.lower().endswith(".wav") else name


def parse_strong_labels(tsv_text: str) -> Tuple[Dict[str, EventList], List[LabelError]]:
    """Events grouped by clip id, plus one error entry per malformed row."""
    errors: List[LabelError] = []

    def bad_line(fields: List[str]):
        errors.append(LabelError(row="\t".join(fields), reason=f"expected 4 columns, got {len(fields)}"))

    if not tsv_text.strip():
        return {}, []
    df = pd.read_csv(io.StringIO(tsv_text), sep="\t", header=None, names=COLUMNS, dtype=str,
                     keep_default_na=False, engine="python", on_bad_lines=bad_line, skip_blank_lines=True).fillna("")
    if len(df) and [str(v).strip() for v in df.iloc[0]] == COLUMNS:
        df = df.iloc[1:]

    clips: Dict[str, EventList] = {}
    for row in df.itertuples(index=False):
        text = "\t".join(str(v) for v in row)
        segment, onset, offset, label = (str(v).strip() for v in row)
        if not segment or not label:
            errors.append(LabelError(row=text, reason="missing segment id or label"))
            continue
        try:
            onset_s, offset_s = float(onset), float(offset)
        except ValueError:
            errors.append(LabelError(row=text, reason="non-numeric time"))
            continue
        if onset_s < 0 or offset_s < 0:
            errors.append(LabelError(row=text, reason="negative time"))
            continue
        if onset_s >= offset_s:
            errors.append(LabelError(row=text, reason="onset is not before offset"))
            continue
        clips.setdefault(clip_id(segment), []).append(Event(label=label, onset=onset_s, offset=offset_s))

    if errors:
        logger.warning("%d malformed label rows", len(errors))
    return {k: sorted(v, key=lambda e: (e.onset, e.offset, e.label)) for k, v in sorted(clips.items())}, errors


def read_strong_labels(path: Union[str, Path]) -> Tuple[Dict[str, EventList], List[LabelError]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read labels {path}: {e}") from e
    return parse_strong_labels(text)


def format_strong_labels(clips: Mapping[str, EventList]) -> str:
    lines = ["\t".join(COLUMNS)]
    for segment in sorted(clips):
        for e in clips[segment]:
            lines.append(f"{segment}\t{e.onset:.3f}\t{e.offset:.3f}\t{e.label}")
    return "\n".join(lines) + "\n"


def read_captions(path: Union[str, Path]) -> Dict[str, str]:
    """Caption JSON: {clip id: caption}."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read captions {path}: {e}") from e
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise DataError(f"{path}: captions must be a JSON object of id -> text")
    return {clip_id(str(k)): v for k, v in data.items()}
