"""On-disk layout for datasets, proposals, results and reports.

A dataset directory holds three files:

``manifest.json``
    capture parameters, entry count and format version.
``entries.iq``
    one fixed-stride record per entry: ``entry_len`` complex samples stored
    as little-endian float32, interleaved I then Q.
``labels.jsonl``
    line ``k`` lists the ground-truth signals of record ``k``.

Every JSON document is written canonically: sorted keys, compact
separators, floats rounded to 9 significant digits, so serializing the
same content twice yields identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import jsonschema
import numpy as np

from . import channel as ch
from .modem import SCHEMES, ModulationScheme
from .synth import Entry, GenConfig, SignalSpec

FORMAT_VERSION = "crml23/1"
MANIFEST_NAME = "manifest.json"
IQ_NAME = "entries.iq"
LABELS_NAME = "labels.jsonl"
IQ_DTYPE = np.dtype("<f4")
FLOAT_DIGITS = 9


class DatastoreError(Exception):
    """Base class for serialization failures."""


class CorruptDatasetError(DatastoreError):
    pass


class SchemaError(DatastoreError):
    """A document violates its schema; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = f" at {path!r}" if path else ""
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{message}{where}")


# -- canonical JSON ------------------------------------------------------------


def _canonical(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise DatastoreError(f"non-finite float {x!r} cannot be serialized")
        return float(format(x, f".{FLOAT_DIGITS}g"))
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, ModulationScheme):
        return obj.value
    raise DatastoreError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Deterministic JSON text for ``obj`` (no trailing newline)."""
    return json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DatastoreError(f"cannot write {path}: {exc}") from exc


def write_json(obj, path) -> None:
    _write_text(Path(path), canonical_json(obj) + "\n")


def read_json(path):
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DatastoreError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON in {path}: {exc.msg}", line=exc.lineno) from None


def write_jsonl(records: Iterable[dict], path) -> int:
    lines = [canonical_json(r) + "\n" for r in records]
    _write_text(Path(path), "".join(lines))
    return len(lines)


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for each non-blank line."""
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DatastoreError(f"missing file {path}") from None
    with fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield number, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON line in {path}: {exc.msg}", line=number) from None


# -- schemas -------------------------------------------------------------------

_NUMBER = {"type": "number"}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["format_version", "fs_hz", "entry_len", "band_low_hz", "band_high_hz",
                 "master_seed", "entry_count"],
    "properties": {
        "format_version": {"type": "string"},
        "fs_hz": {"type": "number", "exclusiveMinimum": 0},
        "entry_len": {"type": "integer", "minimum": 1},
        "band_low_hz": _NUMBER,
        "band_high_hz": _NUMBER,
        "master_seed": {"type": "integer", "minimum": 0},
        "entry_count": {"type": "integer", "minimum": 0},
        "generator": {"type": "object"},
    },
}

_CHANNEL_SCHEMA = {
    "type": "object",
    "required": ["kind", "k_factor", "max_doppler_hz", "clock_offset_ppm"],
    "properties": {
        "kind": {"enum": [k.value for k in ch.ChannelKind]},
        "k_factor": {"type": "number", "minimum": 0},
        "max_doppler_hz": {"type": "number", "minimum": 0},
        "clock_offset_ppm": {"type": "number", "minimum": 0},
    },
}

LABEL_SCHEMA = {
    "type": "object",
    "required": ["entry_id", "signals"],
    "properties": {
        "entry_id": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "signals": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["center_freq_hz", "bandwidth_hz", "modulation", "snr_db",
                             "symbol_rate_hz", "channel"],
                "properties": {
                    "center_freq_hz": _NUMBER,
                    "bandwidth_hz": {"type": "number", "exclusiveMinimum": 0},
                    "modulation": {"enum": [s.value for s in SCHEMES]},
                    "snr_db": _NUMBER,
                    "symbol_rate_hz": {"type": "number", "exclusiveMinimum": 0},
                    "channel": _CHANNEL_SCHEMA,
                },
            },
        },
    },
}

PROPOSAL_SCHEMA = {
    "type": "object",
    "required": ["entry_id", "center_freq_hz", "bandwidth_hz", "confidence"],
    "properties": {
        "entry_id": {"type": "integer", "minimum": 0},
        "center_freq_hz": _NUMBER,
        "bandwidth_hz": {"type": "number", "exclusiveMinimum": 0},
        "confidence": _PROB,
    },
}

RESULT_SCHEMA = {
    "type": "object",
    "required": PROPOSAL_SCHEMA["required"] + ["modulation", "class_scores"],
    "properties": {
        **PROPOSAL_SCHEMA["properties"],
        "modulation": {"enum": [s.value for s in SCHEMES]},
        "class_scores": {
            "type": "object",
            "minProperties": 1,
            "propertyNames": {"enum": [s.value for s in SCHEMES]},
            "additionalProperties": _PROB,
        },
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["mode", "counts"],
    "properties": {
        "mode": {"enum": ["detection", "joint"]},
        "counts": {"type": "object"},
    },
}

GEN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "fs": {"type": "number", "exclusiveMinimum": 0},
        "entry_len": {"type": "integer", "minimum": 1},
        "band_low": _NUMBER,
        "band_high": _NUMBER,
        "sps_classes": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "rolloff": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "span_symbols": {"type": "integer", "minimum": 6},
        "p_stop": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "redraw_bandwidth": {"type": "boolean"},
        "guard_hz": {"type": "number", "minimum": 0},
        "snr_grid": {"type": "array", "items": _NUMBER, "minItems": 1},
        "snr_per_entry": {"type": "boolean"},
        "kfactor_grid": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "max_doppler": {"type": "number", "minimum": 0},
        "max_clock_ppm": {"type": "number", "minimum": 0},
        "channel_kinds": {"type": "array", "items": {"enum": [k.value for k in ch.ChannelKind]},
                          "minItems": 1},
        "path_delays": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "path_gains": {"type": "array", "items": _NUMBER, "minItems": 1},
        "modulations": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "noise_power": {"type": "number", "minimum": 0},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "entry_count": {"type": "integer", "minimum": 0},
    },
}


def validate(obj, schema: dict, line: int | None = None) -> None:
    """Raise :class:`SchemaError` naming the first offending field."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path)
        if err.validator == "required":
            missing = err.message.split("'")[1] if "'" in err.message else ""
            path = "/".join(filter(None, [path, missing]))
        raise SchemaError(err.message, path=path, line=line)


def load_gen_config(path) -> GenConfig:
    """Read a generator config JSON document (any subset of GenConfig fields)."""
    data = read_json(path)
    validate(data, GEN_CONFIG_SCHEMA)
    return GenConfig.from_dict(data)


# -- records -------------------------------------------------------------------


@dataclass
class ProposalRecord:
    entry_id: int
    center_freq_hz: float
    bandwidth_hz: float
    confidence: float
    extra: dict = field(default_factory=dict)

    _KEYS = ("entry_id", "center_freq_hz", "bandwidth_hz", "confidence")

    def to_dict(self) -> dict:
        out = dict(self.extra)
        out.update({k: getattr(self, k) for k in self._KEYS})
        return out

    @classmethod
    def from_dict(cls, data: dict, line: int | None = None) -> "ProposalRecord":
        validate(data, PROPOSAL_SCHEMA, line)
        extra = {k: v for k, v in data.items() if k not in cls._KEYS}
        return cls(int(data["entry_id"]), float(data["center_freq_hz"]),
                   float(data["bandwidth_hz"]), float(data["confidence"]), extra)

    @property
    def low(self) -> float:
        return self.center_freq_hz - self.bandwidth_hz / 2

    @property
    def high(self) -> float:
        return self.center_freq_hz + self.bandwidth_hz / 2


@dataclass
class ResultRecord(ProposalRecord):
    modulation: str = SCHEMES[0].value
    class_scores: dict = field(default_factory=dict)

    _KEYS = ProposalRecord._KEYS + ("modulation", "class_scores")

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["class_scores"] = dict(self.class_scores)
        return out

    @classmethod
    def from_dict(cls, data: dict, line: int | None = None) -> "ResultRecord":
        validate(data, RESULT_SCHEMA, line)
        total = sum(data["class_scores"].values())
        if abs(total - 1.0) > 1e-6:
            raise SchemaError(f"class scores sum to {total}, not 1", path="class_scores", line=line)
        extra = {k: v for k, v in data.items() if k not in cls._KEYS}
        return cls(int(data["entry_id"]), float(data["center_freq_hz"]),
                   float(data["bandwidth_hz"]), float(data["confidence"]), extra,
                   ModulationScheme.parse(data["modulation"]).value,
                   {k: float(v) for k, v in data["class_scores"].items()})


def write_proposals(records: Iterable[ProposalRecord], path) -> int:
    return write_jsonl((r.to_dict() for r in records), path)


def read_proposals(path) -> list[ProposalRecord]:
    return [ProposalRecord.from_dict(obj, line) for line, obj in iter_jsonl(path)]


def write_results(records: Iterable[ResultRecord], path) -> int:
    return write_jsonl((r.to_dict() for r in records), path)


def read_results(path) -> list[ResultRecord]:
    return [ResultRecord.from_dict(obj, line) for line, obj in iter_jsonl(path)]


def write_report(report: dict, path) -> None:
    validate(report, REPORT_SCHEMA)
    write_json(report, path)


def read_report(path) -> dict:
    report = read_json(path)
    validate(report, REPORT_SCHEMA)
    return report


# -- datasets ------------------------------------------------------------------


def signal_to_label(spec: SignalSpec) -> dict:
    c = spec.channel
    return {
        "center_freq_hz": spec.center_freq,
        "bandwidth_hz": spec.bandwidth,
        "modulation": spec.modulation.value,
        "snr_db": spec.snr,
        "symbol_rate_hz": spec.symbol_rate,
        "channel": {
            "kind": c.kind.value,
            "k_factor": c.k_factor,
            "max_doppler_hz": c.max_doppler,
            "clock_offset_ppm": c.clock_offset_ppm,
        },
    }


def label_to_signal(obj: dict, path_delays=(0.0,), path_gains=(0.0,)) -> SignalSpec:
    c = obj["channel"]
    kind = ch.ChannelKind(c["kind"])
    faded = kind is not ch.ChannelKind.AWGN_ONLY
    chan = ch.ChannelSpec(
        kind=kind,
        path_delays=path_delays if faded else (0.0,),
        path_gains=path_gains if faded else (0.0,),
        k_factor=float(c["k_factor"]),
        max_doppler=float(c["max_doppler_hz"]),
        clock_offset_ppm=float(c["clock_offset_ppm"]),
    )
    return SignalSpec(
        modulation=obj["modulation"],
        symbol_rate=float(obj["symbol_rate_hz"]),
        center_freq=float(obj["center_freq_hz"]),
        bandwidth=float(obj["bandwidth_hz"]),
        snr=float(obj["snr_db"]),
        channel=chan,
    )


def entry_to_label(entry: Entry) -> dict:
    return {"entry_id": entry.entry_id, "seed": entry.seed,
            "signals": [signal_to_label(s) for s in entry.truths]}


def manifest_for(cfg: GenConfig, count: int) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "fs_hz": cfg.fs,
        "entry_len": cfg.entry_len,
        "band_low_hz": cfg.band_low,
        "band_high_hz": cfg.band_high,
        "master_seed": cfg.master_seed,
        "entry_count": count,
        "generator": cfg.to_dict() | {"entry_count": count},
    }


def write_dataset(entries: Iterable[Entry], directory, cfg: GenConfig) -> dict:
    """Write a dataset directory and return a summary.

    The summary holds the entry count and a histogram of signals per entry.
    The manifest is written last, so a crashed write leaves no manifest.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatastoreError(f"cannot create {directory}: {exc}") from exc
    (directory / MANIFEST_NAME).unlink(missing_ok=True)
    count = 0
    histogram: dict[int, int] = {}
    try:
        with open(directory / IQ_NAME, "wb") as iq_fh, \
                open(directory / LABELS_NAME, "w", encoding="utf-8", newline="\n") as lab_fh:
            for entry in entries:
                if entry.iq.shape != (cfg.entry_len,):
                    raise DatastoreError(
                        f"entry {entry.entry_id} has {entry.iq.size} samples, expected {cfg.entry_len}")
                if entry.entry_id != count:
                    raise DatastoreError(f"entry ids must run 0..n-1, got {entry.entry_id} at {count}")
                iq_fh.write(np.asarray(entry.iq, dtype=np.complex128).view(np.float64)
                            .astype(IQ_DTYPE).tobytes())
                lab_fh.write(canonical_json(entry_to_label(entry)) + "\n")
                n = len(entry.truths)
                histogram[n] = histogram.get(n, 0) + 1
                count += 1
    except OSError as exc:
        raise DatastoreError(f"cannot write dataset in {directory}: {exc}") from exc
    write_json(manifest_for(cfg, count), directory / MANIFEST_NAME)
    return {"entry_count": count, "signal_count_histogram": dict(sorted(histogram.items()))}


class Dataset(Sequence[Entry]):
    """Read-only view of a dataset directory; entries load lazily by stride."""

    def __init__(self, directory):
        self.directory = Path(directory)
        manifest = read_json(self.directory / MANIFEST_NAME)
        validate(manifest, MANIFEST_SCHEMA)
        if manifest["format_version"] != FORMAT_VERSION:
            raise CorruptDatasetError(
                f"unsupported format {manifest['format_version']!r}, expected {FORMAT_VERSION!r}")
        self.manifest = manifest
        self.fs = float(manifest["fs_hz"])
        self.entry_len = int(manifest["entry_len"])
        self.stride = self.entry_len * 2 * IQ_DTYPE.itemsize
        count = int(manifest["entry_count"])
        iq_path = self.directory / IQ_NAME
        if not iq_path.exists():
            raise DatastoreError(f"missing file {iq_path}")
        size = iq_path.stat().st_size
        if size != count * self.stride:
            raise CorruptDatasetError(
                f"{iq_path} holds {size} bytes, manifest implies {count} x {self.stride}")
        gen = manifest.get("generator", {})
        delays = tuple(gen.get("path_delays", ch.TABLE_PATH_DELAYS))
        gains = tuple(gen.get("path_gains", ch.TABLE_PATH_GAINS_DB))
        self._labels: list[tuple[int, list[SignalSpec]]] = []
        for line, obj in iter_jsonl(self.directory / LABELS_NAME):
            validate(obj, LABEL_SCHEMA, line)
            if obj["entry_id"] != len(self._labels):
                raise CorruptDatasetError(f"label line {line} has entry_id {obj['entry_id']}")
            specs = [label_to_signal(s, delays, gains) for s in obj["signals"]]
            self._labels.append((int(obj.get("seed", 0)), specs))
        if len(self._labels) != count:
            raise CorruptDatasetError(
                f"labels hold {len(self._labels)} entries, manifest says {count}")
        self._iq = np.memmap(iq_path, dtype=IQ_DTYPE, mode="r") if count else np.zeros(0, IQ_DTYPE)

    def __len__(self) -> int:
        return len(self._labels)

    def __getitem__(self, k: int) -> Entry:
        if not -len(self) <= k < len(self):
            raise IndexError(k)
        k %= len(self)
        n = 2 * self.entry_len
        iq = np.array(self._iq[k * n : (k + 1) * n]).view(np.complex64)
        seed, truths = self._labels[k]
        return Entry(iq=iq, fs=self.fs, truths=list(truths), entry_id=k, seed=seed)

    def __iter__(self) -> Iterator[Entry]:
        for k in range(len(self)):
            yield self[k]

    @property
    def band(self) -> tuple[float, float]:
        return float(self.manifest["band_low_hz"]), float(self.manifest["band_high_hz"])

    @property
    def config(self) -> GenConfig:
        """The generator config recorded in the manifest."""
        return GenConfig.from_dict(self.manifest["generator"])


def read_dataset(directory) -> Dataset:
    return Dataset(directory)
