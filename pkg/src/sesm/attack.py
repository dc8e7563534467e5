"""Bandwidth-trace attacker: layer-boundary detection and feature export.

Unshaped traces expose boundaries through the read-after-write signature: the
next layer's input loads stall on the previous layer's output stores through
memory, so the read channel goes quiet and resumes the moment the write
channel drains.  Candidates are therefore read-idle runs that end in a read
resumption right as writes stop.  On shaped traces every window carries the
same byte counts, so that detector finds nothing; the fallback attacker
profiles per-layer-configuration durations offline and enumerates sums of
profiled durations as boundary candidates, which forces recall up at the
price of a candidate explosion.

Each candidate can additionally be scored by the dissimilarity of windowed
statistics (total, median, peak, standard deviation, Haar wavelet bands)
before and after it; thresholding the score trades recall against false
positives.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

ENUMERATION_CAP = 1_000_000


@dataclass(frozen=True)
class AttackTrace:
    """Attacker-visible windowed byte counts for both channels."""

    window_cycles: int
    read_bytes: np.ndarray
    write_bytes: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_windows(self) -> int:
        return len(self.read_bytes)


def trace_from_recorder(recorder, meta: Optional[dict] = None) -> AttackTrace:
    n = recorder.n_windows
    reads = np.zeros(n, dtype=np.int64)
    writes = np.zeros(n, dtype=np.int64)
    for w in range(n):
        reads[w], writes[w] = recorder.window_bytes(w)
    return AttackTrace(recorder.window, reads, writes, meta or {})


def write_attacker_csv(path, trace: AttackTrace) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# window_cycles={trace.window_cycles}")
        for key, val in sorted(trace.meta.items()):
            fh.write(f" {key}={val}")
        fh.write("\n")
        writer = csv.writer(fh)
        writer.writerow(["window", "read_bytes", "write_bytes"])
        for w in range(trace.n_windows):
            writer.writerow([w, int(trace.read_bytes[w]), int(trace.write_bytes[w])])


def read_attacker_csv(path) -> AttackTrace:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            for token in first[1:].split():
                if "=" in token:
                    key, val = token.split("=", 1)
                    meta[key] = val
        else:
            fh.seek(0)
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append((int(row["read_bytes"]), int(row["write_bytes"])))
    reads = np.array([r for r, _ in rows], dtype=np.int64)
    writes = np.array([w for _, w in rows], dtype=np.int64)
    return AttackTrace(int(meta.get("window_cycles", 128)), reads, writes, meta)


def write_privileged_csv(path, recorder, tenant: int, layer_names: Sequence[str],
                         countable: Optional[Sequence[bool]] = None) -> None:
    """Ground truth: per-window real/fake bytes plus layer and boundary tags.

    The boundary column is 0 (none), 1 (countable layer boundary for the
    detection study), or 2 (a real transition the study does not count:
    classifier-head flank, interior of an identical run, or program end).
    """
    boundaries = recorder.boundary_windows(tenant)
    last_layer = max(boundaries) if boundaries else -1
    flags = {}
    for layer, w in boundaries.items():
        if layer == last_layer:
            flags[w] = 2  # end of the program, not a between-layer boundary
        elif countable is not None and layer < len(countable) and not countable[layer]:
            flags[w] = 2
        else:
            flags[w] = 1
    ends = ",".join(str(boundaries[layer]) for layer in sorted(boundaries))
    with open(path, "w", newline="") as fh:
        fh.write(f"# window_cycles={recorder.window} tenant={tenant}"
                 f" labels={','.join(layer_names)} ends={ends}\n")
        writer = csv.writer(fh)
        writer.writerow(["window", "tenant", "layer_id", "boundary",
                         "read_real", "read_fake", "write_real", "write_fake"])
        for w in range(recorder.n_windows):
            det = recorder.detail.get((w, tenant), [0, 0, 0, 0])
            layer = recorder.layer_tag.get((w, tenant), -1)
            writer.writerow([w, tenant, layer, flags.get(w, 0),
                             det[0], det[1], det[2], det[3]])


def read_truth_boundaries(path) -> tuple[list[int], list[int]]:
    """(all transition windows, countable boundary windows)."""
    every, countable = [], []
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.DictReader(fh)
        for row in reader:
            flag = int(row["boundary"])
            if flag:
                every.append(int(row["window"]))
            if flag == 1:
                countable.append(int(row["window"]))
    return sorted(every), sorted(countable)


# ---------------------------------------------------------------------------
# Candidate detection


@dataclass(frozen=True)
class BoundaryCandidate:
    window: int
    source: str           # "raw-pattern" | "timing-enumeration"
    score: float = 0.0

    def __post_init__(self):
        if self.score < 0:
            raise ValueError("candidate score must be non-negative")


def detect_raw_candidates(trace: AttackTrace, min_idle: int = 2) -> list[BoundaryCandidate]:
    """Read-after-write boundary pattern on an unshaped trace.

    A candidate sits where the read channel has been idle for at least
    `min_idle` windows, resumes, and the write channel drains right around
    the resumption (stores of the finished layer completing).
    """
    reads, writes = trace.read_bytes, trace.write_bytes
    n = trace.n_windows
    cands = []
    idle = 0
    for w in range(n):
        if reads[w] == 0:
            idle += 1
            continue
        if idle >= min_idle:
            wrote_during = writes[max(0, w - idle - 1): w + 1].sum() > 0
            quiet_after = writes[w + 1: w + 3].sum() == 0 or w + 1 >= n
            if wrote_during and quiet_after:
                cands.append(BoundaryCandidate(w, "raw-pattern"))
        idle = 0
    return cands


def load_timing_profiles(path) -> list[int]:
    """Offline per-layer-configuration durations, in windows."""
    with open(path) as fh:
        data = json.load(fh)
    durations = sorted({int(d) for d in data["durations_windows"] if int(d) > 0})
    return durations


def enumerate_timing_candidates(trace: AttackTrace, durations: Sequence[int],
                                tolerance: int = 2,
                                cap: int = ENUMERATION_CAP) -> tuple[list[BoundaryCandidate], int]:
    """Shaped-trace fallback: every window reachable as a sum of profiled
    layer durations is a potential boundary.  Returns (candidates, expansions);
    the enumeration stops at `cap` partial sums."""
    horizon = trace.n_windows
    reachable = np.zeros(horizon + 1, dtype=bool)
    reachable[0] = True
    expansions = 0
    frontier = [0]
    while frontier and expansions < cap:
        base = frontier.pop()
        for d in durations:
            expansions += 1
            for off in range(-tolerance, tolerance + 1):
                t = base + d + off
                if 0 < t <= horizon and not reachable[t]:
                    reachable[t] = True
                    frontier.append(t)
            if expansions >= cap:
                break
    cands = [BoundaryCandidate(int(w), "timing-enumeration")
             for w in np.nonzero(reachable[1:horizon])[0] + 1]
    return cands, expansions


# ---------------------------------------------------------------------------
# Feature scoring


def haar_bands(series: np.ndarray, levels: int = 4) -> np.ndarray:
    """Bucket-mean resample to 2^levels points, then the Haar transform: one
    approximation coefficient plus detail bands for levels 1..levels.
    Averaging buckets keeps the bands stable under phase jitter of bursty
    traffic, which point sampling would alias."""
    size = 1 << levels
    if len(series) == 0:
        return np.zeros(size)
    edges = np.linspace(0, len(series), size + 1).round().astype(int)
    cur = np.empty(size, dtype=np.float64)
    for i in range(size):
        lo, hi = edges[i], max(edges[i] + 1, edges[i + 1])
        cur[i] = series[lo:hi].mean() if lo < len(series) else series[-1]
    out = []
    for _ in range(levels):
        pairs = cur.reshape(-1, 2)
        detail = (pairs[:, 0] - pairs[:, 1]) / np.sqrt(2)
        cur = (pairs[:, 0] + pairs[:, 1]) / np.sqrt(2)
        out.append(detail)
    out.append(cur)
    return np.concatenate(out[::-1])


def window_features(trace: AttackTrace, lo: int, hi: int, levels: int = 4) -> np.ndarray:
    """Per-channel statistics + Haar bands over windows [lo, hi)."""
    feats = []
    for series in (trace.read_bytes, trace.write_bytes):
        span = series[max(0, lo):hi].astype(np.float64)
        if len(span) == 0:
            span = np.zeros(1)
        feats.extend([span.sum(), float(np.median(span)), span.max(),
                      float(span.std()), float(hi - lo)])
        feats.extend(haar_bands(span, levels))
    return np.asarray(feats, dtype=np.float64)


def _feature_distance(before: np.ndarray, after: np.ndarray) -> float:
    """Normalized distance between two feature vectors.  Each feature is
    scaled by its own magnitude, floored at a slice of the vectors' overall
    magnitude so that noise in near-zero wavelet coefficients cannot
    dominate."""
    mag = (np.abs(before) + np.abs(after)) / 2
    floor = 0.05 * max(float(mag.mean()), 1e-9)
    scale = np.maximum(mag, floor)
    return float(np.linalg.norm((before - after) / scale) / np.sqrt(len(before)))


def score_boundary(trace: AttackTrace, candidate: BoundaryCandidate, span: int = 24,
                   guard: int = 8, levels: int = 4) -> float:
    """Dissimilarity of the spans before and after the candidate window.

    A guard band is skipped on both sides so the comparison sees the bulk of
    each layer's traffic rather than the drain/refill turbulence every
    boundary produces."""
    w = candidate.window
    before = window_features(trace, w - guard - span, w - guard, levels)
    after = window_features(trace, w + guard, w + guard + span, levels)
    return _feature_distance(before, after)


def filter_candidates(trace: AttackTrace, candidates: Iterable[BoundaryCandidate],
                      threshold: float, span: int = 24,
                      guard: int = 8) -> list[BoundaryCandidate]:
    """Keep candidates whose neighbouring segments look different.

    Candidates partition the trace into per-layer segments; each boundary is
    scored by the normalized distance between the feature vectors of the
    segment it ends and the segment it starts.  Two same-shape layers yield
    near-identical segments and are dropped at any positive threshold."""
    del span, guard  # segment extents come from the candidate partition
    cands = sorted(candidates, key=lambda c: c.window)
    if not cands:
        return []
    bounds = [0] + [c.window for c in cands] + [trace.n_windows]
    out = []
    for i, cand in enumerate(cands):
        before = window_features(trace, bounds[i], bounds[i + 1])
        after = window_features(trace, bounds[i + 1], bounds[i + 2])
        score = _feature_distance(before, after)
        if score > threshold:
            out.append(BoundaryCandidate(cand.window, cand.source, score))
    return out


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class DetectionReport:
    predicted: list[int]
    truth: list[int]
    tolerance: int
    matched: int
    precision: Optional[float]
    recall: float
    false_positives: int
    enumeration_expansions: int = 0

    def as_dict(self) -> dict:
        return {
            "predicted": len(self.predicted),
            "truth": len(self.truth),
            "tolerance": self.tolerance,
            "matched": self.matched,
            "precision": self.precision if self.precision is not None else "NA",
            "recall": self.recall,
            "false_positives": self.false_positives,
            "enumeration_expansions": self.enumeration_expansions,
        }


def evaluate(predicted: Sequence[int], truth: Sequence[int], tolerance: int = 2) -> DetectionReport:
    """Greedy one-to-one matching within `tolerance` windows."""
    preds = sorted(predicted)
    remaining = sorted(truth)
    matched = 0
    for p in preds:
        for i, t in enumerate(remaining):
            if abs(p - t) <= tolerance:
                matched += 1
                remaining.pop(i)
                break
    precision = matched / len(preds) if preds else None
    recall = matched / len(truth) if truth else 0.0
    return DetectionReport(list(preds), sorted(truth), tolerance, matched,
                           precision, recall, len(preds) - matched)


def evaluate_vs_table(predicted: Sequence[int], truth_all: Sequence[int],
                      truth_countable: Sequence[int], tolerance: int = 2) -> DetectionReport:
    """Detection-table scoring: a prediction is correct when it matches any
    real transition; recall is over the countable boundaries only."""
    preds = sorted(predicted)
    remaining = sorted(truth_all)
    countable = set(truth_countable)
    matched_any = 0
    matched_countable = 0
    for p in preds:
        for i, t in enumerate(remaining):
            if abs(p - t) <= tolerance:
                matched_any += 1
                if t in countable:
                    matched_countable += 1
                remaining.pop(i)
                break
    precision = matched_any / len(preds) if preds else None
    recall = matched_countable / len(truth_countable) if truth_countable else 0.0
    return DetectionReport(list(preds), sorted(truth_countable), tolerance,
                           matched_countable, precision, recall,
                           len(preds) - matched_any)


# ---------------------------------------------------------------------------
# Feature export for the classifier study


LAYER_TYPE_BINS = ("conv-small", "conv-large", "dense", "pool", "residual")


def layer_type_bin(kind: str, out_channels: int, large_cutoff: int = 64) -> str:
    if kind == "conv":
        return "conv-large" if out_channels >= large_cutoff else "conv-small"
    if kind == "dense":
        return "dense"
    if kind == "add":
        return "residual"
    return "pool"


def export_features(path, trace: AttackTrace, segments: Sequence[tuple[int, int, str]],
                    model_name: str, shaped: bool, levels: int = 4) -> int:
    """One labeled feature row per layer segment; returns rows written.

    `segments` holds (start_window, end_window, label) from the privileged
    trace or a detected segmentation.
    """
    width = 2 * (5 + (1 << levels))
    exists = False
    try:
        with open(path) as fh:
            exists = fh.readline().startswith("model")
    except OSError:
        pass
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if not exists:
            writer.writerow(["model", "shaped", "label"] + [f"f{i}" for i in range(width)])
        rows = 0
        for lo, hi, label in segments:
            feats = window_features(trace, lo, hi, levels)
            writer.writerow([model_name, int(shaped), label] + [f"{v:.6g}" for v in feats])
            rows += 1
    return rows


def segments_from_boundaries(boundaries: dict[int, int],
                             labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """Layer segments from per-layer end windows (privileged ground truth)."""
    out = []
    start = 0
    for layer_idx in sorted(boundaries):
        end = boundaries[layer_idx] + 1
        if layer_idx < len(labels):
            out.append((start, end, labels[layer_idx]))
        start = end
    return out


def read_segments(priv_path) -> list[tuple[int, int, str]]:
    """Per-layer segments straight from a privileged trace file.

    Uses the per-layer end windows in the header: short adjacent layers may
    share a window, which the boundary column cannot represent."""
    labels: list[str] = []
    ends: list[int] = []
    with open(priv_path, newline="") as fh:
        first = fh.readline()
        for token in first[1:].split() if first.startswith("#") else ():
            if token.startswith("labels="):
                labels = token.split("=", 1)[1].split(",")
            elif token.startswith("ends="):
                ends = [int(v) for v in token.split("=", 1)[1].split(",") if v]
    boundaries = {layer: w for layer, w in enumerate(ends)}
    return segments_from_boundaries(boundaries, labels)
