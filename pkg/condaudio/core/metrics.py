# condaudio/core/metrics.py
# Controllability metrics: event-based and clip-level F1 for timestamps,
# moments and DTW for pitch, MAE for energy.
from __future__ import annotations

import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sed_eval
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from condaudio import settings
from condaudio.core.conditions import Event, EventList
from condaudio.core.dsp import Contour, QuantizedContour
from condaudio.errors import ClipMismatchError, DataError, MetricError, ParameterError

logger = logging.getLogger(__name__)

COLLAR = 0.2
OFFSET_RATIO = 0.2
MATCHING = ("greedy", "optimal")

ClipEvents = Union[Mapping[str, EventList], Iterable[Tuple[str, EventList]]]


class ClassScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 100.0 * 2 * self.tp / denom if denom else 0.0


class EvalReport(BaseModel):
    """One row of the control-performance table; absent metrics stay None."""

    model_config = ConfigDict(frozen=True)

    eb: Optional[float] = Field(None, ge=0, le=100)
    at: Optional[float] = Field(None, ge=0, le=100)
    sigma: Optional[float] = None
    gamma: Optional[float] = None
    kappa: Optional[float] = None
    dtw: Optional[float] = Field(None, ge=0)
    mae: Optional[float] = Field(None, ge=0)
    per_class: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    def merged(self, other: "EvalReport") -> "EvalReport":
        values = self.model_dump(exclude={"per_class"})
        values.update({k: v for k, v in other.model_dump(exclude={"per_class"}).items() if v is not None})
        per_class = {name: dict(scores) for name, scores in self.per_class.items()}
        for name, scores in other.per_class.items():
            per_class.setdefault(name, {}).update(scores)
        return EvalReport(**values, per_class=per_class)


def by_clip(clips: ClipEvents) -> Dict[str, EventList]:
    """Per-clip events keyed by id; repeated ids are a data error."""
    if isinstance(clips, Mapping):
        return {str(k): list(v) for k, v in clips.items()}
    out: Dict[str, EventList] = {}
    for clip_id, events in clips:
        if clip_id in out:
            raise DataError(f"duplicate clip id: {clip_id}")
        out[clip_id] = list(events)
    return out


def align_clips(refs: Mapping, preds: Mapping) -> List[str]:
    """Sorted common clip ids; both sides must name the same clips."""
    missing = set(refs) ^ set(preds)
    if missing:
        raise ClipMismatchError(f"clip sets differ in {len(missing)} ids: {', '.join(sorted(missing)[:10])}", missing)
    return sorted(refs)


# Timestamp


def _sed_event_list(clip_id: str, events: Sequence[Event]) -> List[Dict[str, object]]:
    # sed_eval's greedy matcher walks both lists in order; onset order keeps it deterministic.
    ordered = sorted(events, key=lambda e: (e.onset, e.offset, e.label))
    return [{"filename": clip_id, "event_label": e.label, "onset": e.onset, "offset": e.offset} for e in ordered]


def _event_metrics(labels: Sequence[str], collar: float, offset_ratio: float,
                   matching: str) -> sed_eval.sound_event.EventBasedMetrics:
    return sed_eval.sound_event.EventBasedMetrics(
        event_label_list=list(labels),
        t_collar=collar,
        percentage_of_length=offset_ratio,
        event_matching_type=matching,
    )


def event_based_scores(refs: ClipEvents, preds: ClipEvents, collar: float = COLLAR,
                       offset_ratio: float = OFFSET_RATIO,
                       matching: str = "greedy") -> Tuple[float, Dict[str, ClassScore]]:
    """Event-based macro F1 in percent plus per-class counts.

    A prediction hits a reference of the same class when the onsets differ by at
    most `collar` and the offsets by at most max(collar, offset_ratio * reference
    duration). Each event takes part in at most one hit; pairs are taken greedily
    in onset order unless `matching="optimal"`."""
    if collar <= 0 or offset_ratio < 0:
        raise ParameterError("collar must be positive and offset_ratio non-negative")
    if matching not in MATCHING:
        raise ParameterError(f"unknown matching strategy: {matching!r}")
    refs, preds = by_clip(refs), by_clip(preds)
    clip_ids = align_clips(refs, preds)
    labels = sorted({e.label for events in (*refs.values(), *preds.values()) for e in events})
    if not labels:
        raise MetricError("no events in either reference or prediction")

    metrics = {m: _event_metrics(labels, collar, offset_ratio, m) for m in MATCHING}
    for clip_id in clip_ids:
        ref_list, pred_list = _sed_event_list(clip_id, refs[clip_id]), _sed_event_list(clip_id, preds[clip_id])
        for metric in metrics.values():
            metric.evaluate(reference_event_list=ref_list, estimated_event_list=pred_list)

    per_class = {}
    for name in labels:
        counts = metrics[matching].class_wise[name]
        tp, n_ref, n_sys = int(counts["Ntp"]), int(counts["Nref"]), int(counts["Nsys"])
        per_class[name] = ClassScore(tp=tp, fp=n_sys - tp, fn=n_ref - tp)
    greedy = sum(int(metrics["greedy"].class_wise[name]["Ntp"]) for name in labels)
    optimal = sum(int(metrics["optimal"].class_wise[name]["Ntp"]) for name in labels)
    if greedy != optimal:
        logger.warning("greedy matching finds %d of %d optimal pairs", greedy, optimal)
    return float(np.mean([s.f1 for s in per_class.values()])), per_class


def clip_macro_f1(refs: ClipEvents, preds: ClipEvents) -> Tuple[float, Dict[str, ClassScore]]:
    """Clip-level (tagging) macro F1 in percent: a class is present in a clip if any event carries it."""
    refs, preds = by_clip(refs), by_clip(preds)
    counts: Dict[str, Dict[str, int]] = defaultdict(lambda: {"tp": 0, "fp": 0, "fn": 0})
    for clip_id in align_clips(refs, preds):
        r = {e.label for e in refs[clip_id]}
        p = {e.label for e in preds[clip_id]}
        for name in r & p:
            counts[name]["tp"] += 1
        for name in p - r:
            counts[name]["fp"] += 1
        for name in r - p:
            counts[name]["fn"] += 1
    if not counts:
        raise MetricError("no classes in either reference or prediction")
    per_class = {name: ClassScore(**c) for name, c in sorted(counts.items())}
    return float(np.mean([s.f1 for s in per_class.values()])), per_class


# Pitch


def _voiced(contour: Union[Contour, np.ndarray]) -> np.ndarray:
    if isinstance(contour, Contour):
        return contour.values[contour.voiced].astype(np.float64)
    return np.asarray(contour, dtype=np.float64).reshape(-1)


def pitch_moments(contour: Union[Contour, np.ndarray]) -> Tuple[float, float, float]:
    """Population std, skewness and (non-excess) kurtosis over the voiced frames."""
    values = _voiced(contour)
    if values.size < 2:
        raise MetricError("insufficient voiced frames")
    sigma = float(np.std(values))
    if sigma == 0.0:
        raise MetricError("zero variance: skewness and kurtosis are undefined")
    return sigma, float(stats.skew(values, bias=True)), float(stats.kurtosis(values, fisher=False, bias=True))


def dtw(a: Union[Contour, np.ndarray], b: Union[Contour, np.ndarray], log_hz: bool = False) -> float:
    """Path-length-normalised DTW distance with |a_i - b_j| local cost.

    The path is the lexicographically smallest (total cost, length) among monotone
    paths using match, insert and delete steps. Contours contribute their voiced frames."""
    x, y = _voiced(a), _voiced(b)
    if not x.size or not y.size:
        raise MetricError("dtw needs two nonempty sequences")
    if log_hz:
        if np.any(x <= 0) or np.any(y <= 0):
            raise MetricError("log-Hz dtw needs positive values")
        x, y = np.log(x), np.log(y)
    n, m = x.size, y.size
    local = np.abs(x[:, None] - y[None, :])
    cost = np.full((n, m), np.inf)
    length = np.zeros((n, m))
    cost[0, 0], length[0, 0] = local[0, 0], 1
    # Cells on one anti-diagonal depend only on the two previous ones.
    for k in range(1, n + m - 1):
        i = np.arange(max(0, k - m + 1), min(k, n - 1) + 1)
        j = k - i
        cand_cost = np.full((3, i.size), np.inf)
        cand_len = np.full((3, i.size), np.inf)
        for row, (di, dj) in enumerate(((1, 1), (1, 0), (0, 1))):
            ok = (i >= di) & (j >= dj)
            cand_cost[row, ok] = cost[i[ok] - di, j[ok] - dj]
            cand_len[row, ok] = length[i[ok] - di, j[ok] - dj]
        best = cand_cost.min(axis=0)
        cost[i, j] = best + local[i, j]
        length[i, j] = np.where(cand_cost == best, cand_len, np.inf).min(axis=0) + 1
    return float(cost[-1, -1] / length[-1, -1])


# Energy


def _normalized(contour: Union[QuantizedContour, Contour, np.ndarray]) -> np.ndarray:
    if isinstance(contour, QuantizedContour):
        return contour.normalized()
    if isinstance(contour, Contour):
        return contour.values.astype(np.float64)
    return np.asarray(contour, dtype=np.float64).reshape(-1)


def energy_mae(gen: Union[QuantizedContour, np.ndarray], ref: Union[QuantizedContour, np.ndarray]) -> float:
    """Mean absolute frame difference on the normalised quantized scale, bin / (n_bins - 1)."""
    g, r = _normalized(gen), _normalized(ref)
    if g.shape != r.shape:
        raise MetricError(f"energy contours differ in length: {g.size} != {r.size}")
    if not g.size:
        raise MetricError("energy contours are empty")
    return float(np.mean(np.abs(g - r)))


# Corpus


def evaluate_temporal(refs: ClipEvents, preds: ClipEvents, matching: str = "greedy") -> EvalReport:
    eb, eb_classes = event_based_scores(refs, preds, matching=matching)
    at, at_classes = clip_macro_f1(refs, preds)
    per_class: Dict[str, Dict[str, float]] = defaultdict(dict)
    for name, score in eb_classes.items():
        per_class[name]["eb"] = score.f1
    for name, score in at_classes.items():
        per_class[name]["at"] = score.f1
    logger.info("temporal: Eb=%.2f At=%.2f over %d classes", eb, at, len(per_class))
    return EvalReport(eb=eb, at=at, per_class=dict(sorted(per_class.items())))


def _pooled_moments(contours: Iterable[Union[Contour, np.ndarray]]) -> Tuple[float, float, float]:
    voiced = [_voiced(c) for c in contours]
    return pitch_moments(np.concatenate(voiced) if voiced else np.zeros(0))


def evaluate_pitch(refs: Mapping[str, Contour], gens: Mapping[str, Contour], log_hz: bool = False) -> EvalReport:
    """Moments over the pooled voiced frames of the generated corpus; DTW averaged over
    the clips voiced on both sides (unvoiced clips are skipped with a warning)."""
    ids = align_clips(refs, gens)
    if not ids:
        raise MetricError("empty corpus")
    sigma, gamma, kappa = _pooled_moments(gens[i] for i in ids)
    voiced = [i for i in ids if _voiced(refs[i]).size and _voiced(gens[i]).size]
    if len(voiced) < len(ids):
        logger.warning("dtw skips %d clips without voiced frames", len(ids) - len(voiced))
    if not voiced:
        raise MetricError("no clip is voiced in both corpora")
    distances = Parallel(n_jobs=settings.THREADS)(delayed(dtw)(refs[i], gens[i], log_hz) for i in voiced)
    logger.info("pitch: %d clips, sigma=%.2f gamma=%.2f kappa=%.2f", len(ids), sigma, gamma, kappa)
    return EvalReport(sigma=sigma, gamma=gamma, kappa=kappa, dtw=float(np.mean(distances)))


def evaluate_energy(refs: Mapping[str, QuantizedContour], gens: Mapping[str, QuantizedContour]) -> EvalReport:
    ids = align_clips(refs, gens)
    if not ids:
        raise MetricError("empty corpus")
    return EvalReport(mae=float(np.mean([energy_mae(gens[i], refs[i]) for i in ids])))


def reference_row(refs: Mapping[str, Contour]) -> EvalReport:
    """Ground-truth row: moments of the reference corpus, no DTW or MAE."""
    if not refs:
        raise MetricError("empty corpus")
    sigma, gamma, kappa = _pooled_moments(refs[i] for i in sorted(refs))
    return EvalReport(sigma=sigma, gamma=gamma, kappa=kappa)
