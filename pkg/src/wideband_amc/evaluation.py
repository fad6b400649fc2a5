"""COCO-style scoring of frequency-band detections and modulation labels.

Predictions and ground truths are 1-D intervals ``[center - bw/2,
center + bw/2]``. Matching is greedy in descending confidence; average
precision uses all-point interpolation of the precision/recall curve.
Size buckets follow the COCO convention: truths outside the bucket, and
unmatched predictions outside it, are ignored rather than scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .modem import SCHEMES, ModulationScheme

#: Tolerance so IoUs that equal a threshold up to rounding still match.
IOU_EPS = 1e-12
CLASS_NAMES = tuple(s.value for s in SCHEMES)

_TP, _FP, _IGNORED = 1, 0, -1


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class MatchConfig:
    iou_thresholds: tuple[float, ...] = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
    # small < 13.75 kHz <= medium < 16.25 kHz <= large; 18.75 kHz closes the
    # nominal large range, wider truths still count as large.
    size_buckets_hz: tuple[float, ...] = (13.75e3, 16.25e3, 18.75e3)
    ar_ks: tuple[int, ...] = (4, 5, 6)
    class_agnostic: bool = True

    def __post_init__(self):
        t = np.asarray(self.iou_thresholds, dtype=float)
        if t.size == 0 or np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > 1:
            raise EvalError("iou_thresholds must be strictly increasing in (0, 1]")
        if np.any(np.diff(self.size_buckets_hz) <= 0) or len(self.size_buckets_hz) < 2:
            raise EvalError("size bucket edges must be increasing")
        if not self.ar_ks or min(self.ar_ks) < 1:
            raise EvalError("ar_ks must be positive")

    @classmethod
    def for_capture(cls, fs: float, entry_len: int, **changes) -> "MatchConfig":
        """Bucket edges from the 110 / 130 / 150 sample-count thresholds at ``fs / entry_len`` Hz each."""
        edges = tuple(n * fs / entry_len for n in (110, 130, 150))
        return cls(size_buckets_hz=edges, **changes)

    def buckets(self) -> dict[str, tuple[float, float]]:
        e = self.size_buckets_hz
        return {"small": (0.0, e[0]), "medium": (e[0], e[1]), "large": (e[1], math.inf)}


# -- record adapters -------------------------------------------------------------


def _band(obj) -> tuple[float, float]:
    center = getattr(obj, "center_freq_hz", None)
    if center is None:
        center = obj.center_freq
    bw = getattr(obj, "bandwidth_hz", None)
    if bw is None:
        bw = obj.bandwidth
    if not bw > 0:
        raise EvalError(f"non-positive bandwidth {bw}")
    return center - bw / 2, center + bw / 2


def _label(obj) -> str | None:
    m = getattr(obj, "modulation", None)
    return None if m is None else ModulationScheme.parse(m).value


@dataclass
class _Side:
    """Column arrays for the predictions or truths of one entry."""

    low: np.ndarray
    high: np.ndarray
    label: list
    confidence: np.ndarray
    snr: np.ndarray
    items: list

    @property
    def width(self) -> np.ndarray:
        return self.high - self.low

    @classmethod
    def of(cls, items, sort: bool) -> "_Side":
        items = list(items)
        bands = [_band(x) for x in items]
        conf = np.array([float(getattr(x, "confidence", 1.0)) for x in items])
        if sort and items:
            # Stable order: confidence descending, then lower center first.
            centers = np.array([(lo + hi) / 2 for lo, hi in bands])
            order = np.lexsort((centers, -conf))
            items = [items[i] for i in order]
            bands = [bands[i] for i in order]
            conf = conf[order]
        return cls(
            np.array([b[0] for b in bands], dtype=float),
            np.array([b[1] for b in bands], dtype=float),
            [_label(x) for x in items],
            conf,
            np.array([float(getattr(x, "snr", math.nan)) for x in items]),
            items,
        )


def iou_matrix(a: _Side, b: _Side) -> np.ndarray:
    inter = np.minimum(a.high[:, None], b.high[None, :]) - np.maximum(a.low[:, None], b.low[None, :])
    union = np.maximum(a.high[:, None], b.high[None, :]) - np.minimum(a.low[:, None], b.low[None, :])
    return np.where(inter > 0, inter / union, 0.0)


def _greedy(iou: np.ndarray, allowed: np.ndarray, thr: float, gt_ignore: np.ndarray,
            pred_ignore: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Match confidence-sorted predictions to truths.

    Returns per-prediction status (TP / FP / ignored) and, per truth, the
    index of its matched prediction or -1.
    """
    n_pred, n_gt = iou.shape
    status = np.full(n_pred, _FP)
    gt_match = np.full(n_gt, -1)
    for p in range(n_pred):
        cand = allowed[p] & (gt_match < 0) & (iou[p] >= thr - IOU_EPS)
        chosen = -1
        for pool in (cand & ~gt_ignore, cand & gt_ignore):
            if pool.any():
                chosen = int(np.argmax(np.where(pool, iou[p], -1.0)))
                break
        if chosen >= 0:
            gt_match[chosen] = p
            status[p] = _IGNORED if gt_ignore[chosen] else _TP
        elif pred_ignore[p]:
            status[p] = _IGNORED
    return status, gt_match


@dataclass
class MatchSet:
    matches: list = field(default_factory=list)  # (prediction, truth, iou)
    false_positives: list = field(default_factory=list)
    false_negatives: list = field(default_factory=list)


def match_detections(preds, truths, iou_thr: float, class_agnostic: bool = True) -> MatchSet:
    """Greedily match one entry's predictions to its truths at ``iou_thr``.

    Predictions are visited by descending confidence; each takes the still
    unmatched truth of highest IoU at or above the threshold (with the same
    modulation unless ``class_agnostic``).
    """
    P = _Side.of(preds, sort=True)
    T = _Side.of(truths, sort=False)
    iou = iou_matrix(P, T)
    allowed = _allowed(P, T, class_agnostic)
    status, gt_match = _greedy(iou, allowed, iou_thr, np.zeros(len(T.items), bool),
                               np.zeros(len(P.items), bool))
    out = MatchSet()
    for j, p in enumerate(gt_match):
        if p >= 0:
            out.matches.append((P.items[p], T.items[j], float(iou[p, j])))
        else:
            out.false_negatives.append(T.items[j])
    out.false_positives = [P.items[i] for i in np.flatnonzero(status == _FP)]
    return out


def _allowed(P: _Side, T: _Side, class_agnostic: bool) -> np.ndarray:
    if class_agnostic:
        return np.ones((len(P.items), len(T.items)), dtype=bool)
    return np.array([[pl == tl for tl in T.label] for pl in P.label], dtype=bool).reshape(
        len(P.items), len(T.items))


# -- precision / recall ----------------------------------------------------------


def pr_curve(confidences, is_tp, n_truth: int) -> tuple[np.ndarray, np.ndarray]:
    """Recall and precision after each prediction in descending-confidence order."""
    conf = np.asarray(confidences, dtype=float)
    tp = np.asarray(is_tp, dtype=bool)
    order = np.argsort(-conf, kind="mergesort")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_truth if n_truth else np.zeros(tp.size)
    precision = ctp / np.maximum(ctp + cfp, 1)
    return recall, precision


def average_precision(confidences, is_tp, n_truth: int) -> float:
    """All-point interpolated AP; NaN when there are no truths.

    ``AP = sum_i (r_i - r_{i-1}) * max_{j >= i} p_j`` over the ranked list.
    """
    if n_truth <= 0:
        return math.nan
    recall, precision = pr_curve(confidences, is_tp, n_truth)
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def _nanmean(values) -> float:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    return float(v.mean()) if v.size else math.nan


# -- dataset-level evaluation ----------------------------------------------------


@dataclass
class _Entry:
    preds: _Side
    truths: _Side
    iou: np.ndarray


def _group(preds, truths: Mapping[int, Sequence]) -> list[_Entry]:
    by_id: dict[int, list] = {int(k): [] for k in truths}
    for r in preds:
        eid = int(r.entry_id)
        if eid not in by_id:
            raise EvalError(f"prediction for unknown entry_id {eid}")
        by_id[eid].append(r)
    out = []
    for eid in sorted(by_id):
        P = _Side.of(by_id[eid], sort=True)
        T = _Side.of(truths[eid], sort=False)
        out.append(_Entry(P, T, iou_matrix(P, T)))
    return out


def _bucket_flags(side: _Side, bucket: tuple[float, float] | None) -> np.ndarray:
    if bucket is None:
        return np.zeros(side.low.size, dtype=bool)
    lo, hi = bucket
    w = side.width
    return (w < lo) | (w >= hi)


def _ap_at(entries: list[_Entry], thr: float, label: str | None, bucket=None,
           class_agnostic: bool = True) -> tuple[float, np.ndarray, np.ndarray]:
    confs, flags, n_gt = [], [], 0
    for e in entries:
        pk = np.array([label is None or l == label for l in e.preds.label], dtype=bool)
        tk = np.array([label is None or l == label for l in e.truths.label], dtype=bool)
        iou = e.iou[np.ix_(pk, tk)]
        P = _subset(e.preds, pk)
        T = _subset(e.truths, tk)
        gt_ignore = _bucket_flags(T, bucket)
        pred_ignore = _bucket_flags(P, bucket)
        status, _ = _greedy(iou, _allowed(P, T, class_agnostic), thr, gt_ignore, pred_ignore)
        keep = status != _IGNORED
        confs.append(P.confidence[keep])
        flags.append(status[keep] == _TP)
        n_gt += int(np.sum(~gt_ignore))
    conf = np.concatenate(confs) if confs else np.zeros(0)
    tp = np.concatenate(flags) if flags else np.zeros(0, bool)
    ap = average_precision(conf, tp, n_gt)
    recall, precision = pr_curve(conf, tp, n_gt) if n_gt else (np.zeros(0), np.zeros(0))
    return ap, recall, precision


def _subset(side: _Side, mask: np.ndarray) -> _Side:
    idx = np.flatnonzero(mask)
    return _Side(side.low[idx], side.high[idx], [side.label[i] for i in idx],
                 side.confidence[idx], side.snr[idx], [side.items[i] for i in idx])


def _labels_for(entries: list[_Entry], class_agnostic: bool) -> list[str | None]:
    if class_agnostic:
        return [None]
    return list(CLASS_NAMES)


def mean_ap(entries: list[_Entry], thr: float, cfg: MatchConfig, bucket=None) -> tuple[float, dict]:
    """AP at one threshold; per-class mean unless class-agnostic."""
    per_class = {}
    for label in _labels_for(entries, cfg.class_agnostic):
        ap, _, _ = _ap_at(entries, thr, label, bucket, cfg.class_agnostic)
        per_class[label or "all"] = ap
    return _nanmean(per_class.values()), per_class


def average_recall_entries(entries: list[_Entry], k: int, cfg: MatchConfig, bucket=None) -> float:
    if k < 1:
        raise EvalError("k must be >= 1")
    per_label = []
    for label in _labels_for(entries, cfg.class_agnostic):
        recalls = []
        for thr in cfg.iou_thresholds:
            hit, total = 0, 0
            for e in entries:
                pk = np.array([label is None or l == label for l in e.preds.label], dtype=bool)
                tk = np.array([label is None or l == label for l in e.truths.label], dtype=bool)
                pk &= np.arange(pk.size) < k  # predictions are confidence-sorted
                P, T = _subset(e.preds, pk), _subset(e.truths, tk)
                gt_ignore = _bucket_flags(T, bucket)
                _, gt_match = _greedy(e.iou[np.ix_(pk, tk)], _allowed(P, T, cfg.class_agnostic),
                                      thr, gt_ignore, _bucket_flags(P, bucket))
                hit += int(np.sum((gt_match >= 0) & ~gt_ignore))
                total += int(np.sum(~gt_ignore))
            recalls.append(hit / total if total else math.nan)
        per_label.append(_nanmean(recalls))
    return _nanmean(per_label)


def average_recall(preds, truths: Mapping[int, Sequence], k: int, cfg: MatchConfig = MatchConfig()) -> float:
    """Recall with at most ``k`` predictions per entry, averaged over IoU thresholds."""
    return average_recall_entries(_group(preds, truths), k, cfg)


def confusion(results, truths: Mapping[int, Sequence], iou_thr: float = 0.5) -> dict:
    """Confusion matrix of matched truths (rows = truth, columns = prediction).

    Matching is class-agnostic; truths left unmatched are counted in
    ``missed`` per true class.
    """
    idx = {name: i for i, name in enumerate(CLASS_NAMES)}
    matrix = np.zeros((len(CLASS_NAMES), len(CLASS_NAMES)), dtype=int)
    missed = np.zeros(len(CLASS_NAMES), dtype=int)
    for e in _group(results, truths):
        _, gt_match = _greedy(e.iou, _allowed(e.preds, e.truths, True), iou_thr,
                              np.zeros(len(e.truths.items), bool), np.zeros(len(e.preds.items), bool))
        for j, p in enumerate(gt_match):
            t = idx[e.truths.label[j]]
            if p < 0 or e.preds.label[p] is None:
                missed[t] += 1
            else:
                matrix[t, idx[e.preds.label[p]]] += 1
    return {"classes": list(CLASS_NAMES), "matrix": matrix.tolist(), "missed": missed.tolist()}


def _by_snr(entries: list[_Entry], joint: bool) -> list[dict]:
    rows: dict[float, dict] = {}
    for e in entries:
        _, gt_match = _greedy(e.iou, _allowed(e.preds, e.truths, True), 0.5,
                              np.zeros(len(e.truths.items), bool), np.zeros(len(e.preds.items), bool))
        for j, p in enumerate(gt_match):
            snr = float(e.truths.snr[j])
            if math.isnan(snr):
                continue
            row = rows.setdefault(snr, {"snr_db": snr, "truths": 0, "detected": 0, "correct": 0})
            row["truths"] += 1
            if p >= 0:
                row["detected"] += 1
                row["correct"] += int(e.preds.label[p] == e.truths.label[j])
    out = []
    for snr in sorted(rows):
        row = rows[snr]
        row["recall50"] = row["detected"] / row["truths"]
        if joint:
            row["accuracy"] = row["correct"] / row["truths"]
        else:
            del row["correct"]
        out.append(row)
    return out


def _clean(x):
    """NaN becomes None so reports stay valid JSON."""
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def map_report(preds, truths: Mapping[int, Sequence], cfg: MatchConfig = MatchConfig(),
               mode: str | None = None) -> dict:
    """Full metric report for a prediction set against ground truth.

    ``mode`` is "detection" (class-agnostic) or "joint" (per-class AP
    averaged into mAP); it defaults from ``cfg.class_agnostic``.
    """
    if mode is None:
        mode = "detection" if cfg.class_agnostic else "joint"
    if mode not in ("detection", "joint"):
        raise EvalError(f"unknown mode {mode!r}")
    joint = mode == "joint"
    if cfg.class_agnostic == joint:
        cfg = MatchConfig(cfg.iou_thresholds, cfg.size_buckets_hz, cfg.ar_ks, not joint)
    preds = list(preds)
    if joint and any(_label(p) is None for p in preds):
        raise EvalError("joint evaluation needs a modulation on every prediction")
    entries = _group(preds, truths)
    thresholds = [float(t) for t in cfg.iou_thresholds]
    per_thr, per_class_thr, curves = [], {}, {}
    for thr in thresholds:
        m, pc = mean_ap(entries, thr, cfg)
        per_thr.append(m)
        per_class_thr[thr] = pc
    for thr in (0.5, 0.75):
        _, recall, precision = _ap_at(entries, thr, None, None, True)
        curves[f"{thr:.2f}"] = {"recall": recall.tolist(), "precision": precision.tolist()}

    def at(thr: float) -> float:
        for t, v in zip(thresholds, per_thr):
            if abs(t - thr) < 1e-9:
                return v
        return mean_ap(entries, thr, cfg)[0]

    report: dict = {
        "mode": mode,
        "iou_thresholds": thresholds,
        "ap_mean": _nanmean(per_thr),
        "ap50": at(0.5),
        "ap75": at(0.75),
        "ap_by_threshold": dict(zip([f"{t:.2f}" for t in thresholds], per_thr)),
    }
    buckets = cfg.buckets()
    for name, bucket in buckets.items():
        report[f"ap_{name}"] = _nanmean(mean_ap(entries, t, cfg, bucket)[0] for t in thresholds)
    for k in cfg.ar_ks:
        report[f"ar{k}"] = average_recall_entries(entries, k, cfg)
    kmax = max(cfg.ar_ks)
    for name, bucket in buckets.items():
        report[f"ar_{name}"] = average_recall_entries(entries, kmax, cfg, bucket)
    if joint:
        report["per_class_ap"] = {
            c: _nanmean(per_class_thr[t][c] for t in thresholds) for c in CLASS_NAMES}
        conf = confusion(preds, truths)
        report["confusion"] = conf
        matched = int(np.sum(conf["matrix"]))
        correct = float(np.trace(conf["matrix"]))
        total = matched + int(np.sum(conf["missed"]))
        # End-to-end: a missed truth counts as a classification error.
        report["accuracy"] = correct / total if total else math.nan
        report["matched_accuracy"] = correct / matched if matched else math.nan
    report["pr_curves"] = curves
    report["by_snr"] = _by_snr(entries, joint)
    n_truth = sum(len(e.truths.items) for e in entries)
    widths = np.concatenate([e.truths.width for e in entries]) if entries else np.zeros(0)
    report["counts"] = {
        "entries": len(entries),
        "truths": n_truth,
        "predictions": len(preds),
        **{f"truths_{n}": int(np.sum((widths >= lo) & (widths < hi))) for n, (lo, hi) in buckets.items()},
    }
    snrs = {row["snr_db"] for row in report["by_snr"]}
    if len(snrs) == 1:
        report["snr_db"] = snrs.pop()
    return _clean(report)
