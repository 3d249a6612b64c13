import json
import wave

import numpy as np
import pytest

from soundcl.cli import main
from soundcl.data import read_archive, sidecar_path


def write_wav(path, samples, rate=44100):
    pcm = (np.clip(samples, -1, 1) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


@pytest.fixture(scope="module")
def wav_corpus(tmp_path_factory):
    """Three short recordings for each of the ten classes."""
    root = tmp_path_factory.mktemp("wavs")
    rng = np.random.default_rng(0)
    rows = ["filename,class,name"]
    t = np.arange(int(1.2 * 44100)) / 44100
    for label in range(10):
        freq = 300.0 + 150.0 * label
        for rec in range(3):
            tone = 0.4 * np.sin(2 * np.pi * freq * t)
            tone += 0.03 * rng.normal(size=len(t))
            name = f"c{label}r{rec}.wav"
            write_wav(root / name, tone)
            rows.append(f"{name},{label},class{label}")
    (root / "manifest.csv").write_text("\n".join(rows) + "\n")
    return root


def tiny_config_doc(out_dir):
    return {
        "dataset": {"kind": "synthetic", "recordings_per_class": 5,
                    "segments_per_recording": 2, "seed": 3},
        "strategies": ["none"],
        "seeds": [0],
        "output_dir": str(out_dir),
        "classifier_epochs": 2,
        "generator_epochs": 2,
        "batch_size": 16,
        "gmm_components_per_class": 1,
        "gmm_max_iter": 10,
    }


class TestIngest:
    def test_ingest_writes_archive_and_sidecar(self, wav_corpus, tmp_path):
        out = tmp_path / "corpus.seg"
        code = main(["ingest", "--wav-dir", str(wav_corpus),
                     "--manifest", str(wav_corpus / "manifest.csv"),
                     "--out", str(out), "--split-seed", "7"])
        assert code == 0
        segments, header = read_archive(out)
        assert header["seed"] == 7
        assert len(segments) == header["segment_count"] > 0
        assert {s.label for s in segments} == set(range(10))
        sidecar = json.loads(sidecar_path(out).read_text())
        assert set(sidecar["assignment"].values()) == {"train", "val", "test"}

    def test_missing_wav_dir_is_data_error(self, tmp_path):
        code = main(["ingest", "--wav-dir", str(tmp_path / "nope"),
                     "--manifest", str(tmp_path / "m.csv"),
                     "--out", str(tmp_path / "o.seg")])
        assert code == 3

    def test_empty_manifest_is_data_error(self, wav_corpus, tmp_path):
        manifest = tmp_path / "empty.csv"
        manifest.write_text("filename,class,name\n")
        code = main(["ingest", "--wav-dir", str(wav_corpus),
                     "--manifest", str(manifest),
                     "--out", str(tmp_path / "o.seg")])
        assert code == 3


class TestRun:
    def test_run_and_summarize(self, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(tiny_config_doc(tmp_path / "out")))
        assert main(["run", "--config", str(config_path)]) == 0
        metrics = tmp_path / "out" / "metrics.jsonl"
        assert metrics.exists()
        assert main(["summarize", "--metrics", str(metrics),
                     "--out", str(tmp_path / "report")]) == 0
        assert (tmp_path / "report" / "summary.csv").exists()

    def test_set_overrides(self, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(tiny_config_doc(tmp_path / "out")))
        code = main(["run", "--config", str(config_path),
                     "--set", "strategies=[\"none\",\"rehearsal:20\"]",
                     "--set", "classifier_epochs=1"])
        assert code == 0
        resolved = json.loads(
            (tmp_path / "out" / "config.resolved.json").read_text())
        assert resolved["strategies"] == ["none", "rehearsal:20"]
        assert resolved["classifier_epochs"] == 1

    def test_missing_config_is_config_error(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.json")]) == 2

    def test_bad_strategy_is_config_error(self, tmp_path):
        doc = tiny_config_doc(tmp_path / "out")
        doc["strategies"] = ["ewc"]
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(doc))
        assert main(["run", "--config", str(config_path)]) == 2

    def test_unreadable_archive_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.seg"
        bad.write_bytes(b"not an archive")
        doc = tiny_config_doc(tmp_path / "out")
        doc["dataset"] = {"kind": "archive", "path": str(bad)}
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(doc))
        assert main(["run", "--config", str(config_path)]) == 3

    def test_corrupted_checkpoint_is_resume_error(self, tmp_path):
        from soundcl.experiment import ExperimentConfig, run_experiment
        doc = tiny_config_doc(tmp_path / "out")
        run_experiment(ExperimentConfig.from_dict(doc), stop_after_task=2)
        ckpt = tmp_path / "out" / "cells" / "none-s0" / "task2.ckpt"
        raw = bytearray(ckpt.read_bytes())
        raw[40] ^= 0xFF
        ckpt.write_bytes(bytes(raw))
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(doc))
        assert main(["run", "--config", str(config_path)]) == 4


class TestSample:
    def test_sample_from_run_checkpoint(self, tmp_path):
        config_path = tmp_path / "config.json"
        doc = tiny_config_doc(tmp_path / "out")
        doc["strategies"] = ["genreplay:ae_gmm"]
        config_path.write_text(json.dumps(doc))
        assert main(["run", "--config", str(config_path)]) == 0
        ckpt = tmp_path / "out" / "cells" / "genreplay_ae_gmm-s0" / "task5.ckpt"
        out = tmp_path / "gen.seg"
        assert main(["sample", "--checkpoint", str(ckpt), "--n", "3",
                     "--out", str(out), "--seed", "1"]) == 0
        segments, header = read_archive(out)
        assert header["segment_count"] == 3
        assert all((s.values > 0).all() and (s.values < 1).all()
                   for s in segments)

    def test_missing_checkpoint_is_data_error(self, tmp_path):
        assert main(["sample", "--checkpoint", str(tmp_path / "no.ckpt"),
                     "--out", str(tmp_path / "g.seg")]) == 3

    def test_missing_metrics_is_data_error(self, tmp_path):
        assert main(["summarize", "--metrics", str(tmp_path / "no.jsonl"),
                     "--out", str(tmp_path / "r")]) == 3
