import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wideband_amc import datastore as ds
from wideband_amc.synth import GenConfig, generate_dataset


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    cfg = GenConfig(entry_count=100, master_seed=11)
    out = tmp_path_factory.mktemp("ds")
    entries = list(generate_dataset(cfg))
    summary = ds.write_dataset(entries, out, cfg)
    return out, cfg, entries, summary


def test_iq_file_stride(written):
    out, _, _, summary = written
    assert (out / ds.IQ_NAME).stat().st_size == 100 * 1200 * 2 * 4 == 960000
    assert summary["entry_count"] == 100
    assert sum(summary["signal_count_histogram"].values()) == 100


def test_round_trip_is_bit_exact_at_storage_precision(written):
    out, _, entries, _ = written
    data = ds.read_dataset(out)
    assert len(data) == 100
    for original, loaded in zip(entries, data):
        assert np.array_equal(loaded.iq, original.iq.astype(np.complex64))
        assert loaded.entry_id == original.entry_id and loaded.seed == original.seed
        assert len(loaded.truths) == len(original.truths)
        for a, b in zip(original.truths, loaded.truths):
            assert a.modulation == b.modulation
            assert b.center_freq == pytest.approx(a.center_freq, rel=1e-8)
            assert b.bandwidth == pytest.approx(a.bandwidth, rel=1e-8)
            assert b.channel.kind == a.channel.kind


def test_random_access_matches_iteration(written):
    data = ds.read_dataset(written[0])
    assert np.array_equal(data[57].iq, list(data)[57].iq)
    assert np.array_equal(data[-1].iq, data[99].iq)
    with pytest.raises(IndexError):
        data[100]


def test_manifest_records_generator(written):
    out, cfg, _, _ = written
    data = ds.read_dataset(out)
    assert data.config == cfg.replace(entry_count=100)
    assert data.manifest["format_version"] == ds.FORMAT_VERSION
    assert data.band == (cfg.band_low, cfg.band_high)


def _copy(src, dst):
    dst.mkdir()
    for f in src.iterdir():
        (dst / f.name).write_bytes(f.read_bytes())
    return dst


def test_count_mismatch_is_corrupt(written, tmp_path):
    d = _copy(written[0], tmp_path / "bad")
    manifest = json.loads((d / ds.MANIFEST_NAME).read_text())
    manifest["entry_count"] = 101
    (d / ds.MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(ds.CorruptDatasetError):
        ds.read_dataset(d)


def test_truncated_iq_is_corrupt(written, tmp_path):
    d = _copy(written[0], tmp_path / "bad")
    raw = (d / ds.IQ_NAME).read_bytes()
    (d / ds.IQ_NAME).write_bytes(raw[:-8])
    with pytest.raises(ds.CorruptDatasetError):
        ds.read_dataset(d)


def test_version_mismatch(written, tmp_path):
    d = _copy(written[0], tmp_path / "bad")
    manifest = json.loads((d / ds.MANIFEST_NAME).read_text())
    manifest["format_version"] = "other/9"
    (d / ds.MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(ds.CorruptDatasetError, match="format"):
        ds.read_dataset(d)


def test_missing_files(written, tmp_path):
    with pytest.raises(ds.DatastoreError):
        ds.read_dataset(tmp_path / "nowhere")
    d = _copy(written[0], tmp_path / "bad")
    (d / ds.IQ_NAME).unlink()
    with pytest.raises(ds.DatastoreError):
        ds.read_dataset(d)


def test_malformed_label_line_reports_line_number(written, tmp_path):
    d = _copy(written[0], tmp_path / "bad")
    lines = (d / ds.LABELS_NAME).read_text().splitlines()
    lines[6] = "{not json"
    (d / ds.LABELS_NAME).write_text("\n".join(lines) + "\n")
    with pytest.raises(ds.SchemaError) as info:
        ds.read_dataset(d)
    assert info.value.line == 7


def test_empty_dataset(tmp_path):
    cfg = GenConfig(entry_count=0)
    summary = ds.write_dataset(generate_dataset(cfg), tmp_path, cfg)
    assert summary["entry_count"] == 0
    data = ds.read_dataset(tmp_path)
    assert len(data) == 0 and list(data) == []


def test_empty_proposals_file(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text("")
    assert ds.read_proposals(path) == []


def test_confidence_out_of_range_names_field(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({"entry_id": 0, "center_freq_hz": 1.0, "bandwidth_hz": 2.0,
                                "confidence": 1.5}) + "\n")
    with pytest.raises(ds.SchemaError) as info:
        ds.read_proposals(path)
    assert "confidence" in str(info.value)
    assert info.value.line == 1


def test_missing_field_named(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({"entry_id": 0, "center_freq_hz": 1.0, "confidence": 0.5}) + "\n")
    with pytest.raises(ds.SchemaError, match="bandwidth_hz"):
        ds.read_proposals(path)


def test_proposal_round_trip_1000_records(tmp_path):
    rng = np.random.default_rng(0)
    records = [ds.ProposalRecord(int(rng.integers(0, 50)), float(rng.uniform(-4e4, 4e4)),
                                 float(rng.uniform(1e3, 2e4)), float(rng.uniform()),
                                 {"note": f"r{i}"} if i % 3 == 0 else {})
               for i in range(1000)]
    path = tmp_path / "p.jsonl"
    assert ds.write_proposals(records, path) == 1000
    first = path.read_bytes()
    loaded = ds.read_proposals(path)
    ds.write_proposals(loaded, path)
    assert path.read_bytes() == first
    for a, b in zip(records, loaded):
        assert b.entry_id == a.entry_id and b.extra == a.extra
        assert b.center_freq_hz == pytest.approx(a.center_freq_hz, rel=1e-8)
        assert b.confidence == pytest.approx(a.confidence, rel=1e-8, abs=1e-12)


def _result(scores):
    return {"entry_id": 0, "center_freq_hz": 0.0, "bandwidth_hz": 1e4, "confidence": 0.5,
            "modulation": "BPSK", "class_scores": scores}


def test_result_round_trip_keeps_unknown_fields(tmp_path):
    path = tmp_path / "r.jsonl"
    obj = _result({"BPSK": 0.75, "QPSK": 0.25}) | {"detector": "energy"}
    path.write_text(json.dumps(obj) + "\n")
    (rec,) = ds.read_results(path)
    assert rec.extra == {"detector": "energy"}
    assert rec.to_dict() == obj


def test_class_scores_must_sum_to_one(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text(json.dumps(_result({"BPSK": 0.5, "QPSK": 0.2})) + "\n")
    with pytest.raises(ds.SchemaError, match="class_scores"):
        ds.read_results(path)


def test_unknown_modulation_rejected(tmp_path):
    path = tmp_path / "r.jsonl"
    obj = _result({"BPSK": 1.0}) | {"modulation": "FSK"}
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(ds.SchemaError):
        ds.read_results(path)


def test_canonical_json_is_stable():
    a = ds.canonical_json({"b": 0.1 + 0.2, "a": [1, np.float32(0.5)], "c": np.int64(3)})
    assert a == '{"a":[1,0.5],"b":0.3,"c":3}'
    with pytest.raises(ds.DatastoreError):
        ds.canonical_json({"x": float("nan")})


@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_canonical_float_is_idempotent(x):
    once = json.loads(ds.canonical_json(x))
    assert json.loads(ds.canonical_json(once)) == once


def test_gen_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"master_seed": 3, "snr_grid": [12, 14]}))
    cfg = ds.load_gen_config(path)
    assert cfg.master_seed == 3 and cfg.snr_grid == (12.0, 14.0)
    path.write_text(json.dumps({"p_stop": 2.0}))
    with pytest.raises(ds.SchemaError, match="p_stop"):
        ds.load_gen_config(path)
    path.write_text(json.dumps({"mystery": 1}))
    with pytest.raises(ds.SchemaError):
        ds.load_gen_config(path)


def test_write_rejects_wrong_length(tmp_path):
    cfg = GenConfig(entry_count=1)
    (entry,) = generate_dataset(cfg)
    entry.iq = entry.iq[:10]
    with pytest.raises(ds.DatastoreError):
        ds.write_dataset([entry], tmp_path, cfg)
    assert not (tmp_path / ds.MANIFEST_NAME).exists()
