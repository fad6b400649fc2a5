"""Dataset-level glue between the detector, the classifier and the records.

Stage outputs are plain record lists, so any stage can be fed either
detector proposals or ground-truth proposals.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

import numpy as np

from . import classify as cl
from .datastore import ProposalRecord, ResultRecord
from .detect import DetectorConfig, detect


def truths_of(dataset) -> dict[int, list]:
    return {e.entry_id: list(e.truths) for e in dataset}


def truth_proposals(dataset) -> list[ProposalRecord]:
    """Ground-truth bands echoed as proposals with confidence 1."""
    return [ProposalRecord(e.entry_id, t.center_freq, t.bandwidth, 1.0)
            for e in dataset for t in e.truths]


def _detect_entries(args) -> list[ProposalRecord]:
    entries, cfg = args
    out = []
    for entry_id, iq, fs in entries:
        out.extend(ProposalRecord(entry_id, p.center_freq, p.bandwidth, p.confidence)
                   for p in detect(iq, fs, cfg))
    return out


def _chunks(items: Sequence, jobs: int) -> list[Sequence]:
    size = max(1, -(-len(items) // (4 * jobs)))
    return [items[i : i + size] for i in range(0, len(items), size)]


def detect_dataset(dataset, cfg: DetectorConfig = DetectorConfig(), jobs: int = 1) -> list[ProposalRecord]:
    """Proposals for every entry, in entry order for any ``jobs``."""
    entries = [(e.entry_id, np.asarray(e.iq), e.fs) for e in dataset]
    if jobs <= 1 or len(entries) < 2:
        return _detect_entries((entries, cfg))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(_detect_entries, [(c, cfg) for c in _chunks(entries, jobs)])
        return [r for part in parts for r in part]


def _by_entry(records) -> dict[int, list]:
    out: dict[int, list] = {}
    for r in records:
        out.setdefault(int(r.entry_id), []).append(r)
    return out


def slice_features(dataset, proposals, rolloff: float) -> tuple[np.ndarray, list]:
    """Cumulant features of every proposal, plus the proposals in row order."""
    grouped = _by_entry(proposals)
    rows, kept = [], []
    for eid in sorted(grouped):
        entry = dataset[eid]
        for p in grouped[eid]:
            rows.append(cl.cumulant_features(cl.extract_slice(entry, p, rolloff)))
            kept.append(p)
    x = np.vstack(rows) if rows else np.zeros((0, len(cl.FEATURE_NAMES)))
    return x, kept


def training_set(dataset, rolloff: float) -> tuple[np.ndarray, list[str]]:
    """Features and true labels from ground-truth proposals."""
    rows, labels = [], []
    for e in dataset:
        for t in e.truths:
            rows.append(cl.cumulant_features(cl.extract_slice(e, t, rolloff)))
            labels.append(t.modulation.value)
    x = np.vstack(rows) if rows else np.zeros((0, len(cl.FEATURE_NAMES)))
    return x, labels


def train(dataset, kind: str = "centroid", rolloff: float = 0.35, **options):
    x, y = training_set(dataset, rolloff)
    if kind == "centroid":
        return cl.train_centroid(x, y, **options)
    if kind == "linear":
        return cl.train_linear(x, y, **options)
    raise cl.ClassifyError(f"unknown classifier {kind!r}")


def classify_proposals(dataset, proposals, model, rolloff: float = 0.35) -> list[ResultRecord]:
    """Attach a modulation and class scores to every proposal."""
    x, kept = slice_features(dataset, proposals, rolloff)
    scores = model.scores(x) if len(kept) else np.zeros((0, len(model.classes)))
    out = []
    for p, s in zip(kept, scores):
        k = int(np.argmax(s))
        out.append(ResultRecord(p.entry_id, p.center_freq_hz, p.bandwidth_hz, p.confidence,
                                dict(p.extra), model.classes[k],
                                {c: float(v) for c, v in zip(model.classes, s)}))
    return out
