"""Synthetic wideband captures, classical band detection and modulation classification."""

from .classify import (CentroidModel, LinearModel, SignalSlice, cumulant_features, extract_slice,
                       predict, train_centroid, train_linear)
from .datastore import Dataset, ProposalRecord, ResultRecord, read_dataset, write_dataset
from .detect import DetectorConfig, Proposal, detect, iou, nms, welch_psd
from .evaluation import MatchConfig, average_precision, average_recall, map_report, match_detections
from .modem import ModulationScheme, modulate
from .synth import Entry, GenConfig, SignalSpec, generate_dataset, generate_entry

__all__ = [
    "CentroidModel", "LinearModel", "SignalSlice", "cumulant_features", "extract_slice", "predict",
    "train_centroid", "train_linear", "Dataset", "ProposalRecord", "ResultRecord", "read_dataset",
    "write_dataset", "DetectorConfig", "Proposal", "detect", "iou", "nms", "welch_psd",
    "MatchConfig", "average_precision", "average_recall", "map_report", "match_detections",
    "ModulationScheme", "modulate", "Entry", "GenConfig", "SignalSpec", "generate_dataset",
    "generate_entry",
]
