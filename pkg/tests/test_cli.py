import dataclasses
import json
from pathlib import Path

import pytest

from retina_attention.cli import main
from retina_attention.config import ConfigError, ExperimentConfig, example_config, parse_config, to_ini
from retina_attention.network import SpikeTrace
from retina_attention.pipeline import load_trials

FIXTURES = Path(__file__).parent / "fixtures"
ROOT = Path(__file__).parent.parent

SMALL_RUN = """
[data]
format = synthetic
synthetic_per_class = 4
synthetic_duration_us = 150000

[eval]
epochs = 50
test_fraction = 0.25

[output]
directory = {out}
"""


def write_config(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        assert parse_config(to_ini(cfg)) == cfg

    def test_partial_sections_fill_defaults(self):
        cfg = parse_config("[encoder]\ndepth = 6\n[eval]\ncodings = rate\n")
        assert cfg.encoder.depth == 6 and cfg.encoder.ds_factor == 8
        assert cfg.eval.codings == ("rate",)
        assert cfg.network == ExperimentConfig().network

    def test_optional_values(self):
        cfg = parse_config("[network]\ntail_us = 30000\noutput_theta_inc = none\n")
        assert cfg.network.tail_us == 30_000 and cfg.network.output_theta_inc is None

    @pytest.mark.parametrize("text", [
        "[encoder]\nds_factor = 3\n",
        "[encoder]\ndepth = many\n",
        "[network]\ntheta_on = 0.1\ntheta_off = 0.2\n",
        "[neuron]\ntau_m = -1\n",
        "[eval]\ncodings = rate,phase\n",
        "[training]\nepochs = 0\n",
        "[network]\nlateral_inhibition_output = maybe\n",
        "[encoder]\nwarp = 9\n",
        "[extras]\nx = 1\n",
        "[data]\nformat = aedat\n",
        "[data]\nformat = aedat\npaths = /definitely/missing\n",
    ])
    def test_invalid_sections_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_shipped_example_matches_defaults(self):
        assert (ROOT / "config.example").read_text() == example_config()
        assert parse_config(example_config()) == ExperimentConfig()

    def test_seeds_are_named(self):
        assert set(ExperimentConfig().seeds) == {"network_seed", "shuffle_seed", "split_seed"}


class TestIngest:
    def test_single_event_recording(self, tmp_path, capsys):
        code = main(["ingest", str(FIXTURES / "one_polarity.aedat"), "--out", str(tmp_path)])
        assert code == 0
        index = (tmp_path / "trials.csv").read_text().splitlines()
        assert index == ["trial_id,class,duration", "one_polarity_000,3,1000"]
        assert (tmp_path / "one_polarity_000.csv").read_text() == "t,x,y,p\n234,5,7,1\n"

    def test_class_filter(self, tmp_path):
        args = ["ingest", str(FIXTURES / "mixed_packets.aedat"), "--labels", str(FIXTURES / "labels.csv")]
        assert main(args + ["--out", str(tmp_path / "all")]) == 0
        assert main(args + ["--classes", "3,5", "--out", str(tmp_path / "some")]) == 0
        rows = (tmp_path / "some" / "trials.csv").read_text().splitlines()[1:]
        assert [r.split(",")[1] for r in rows] == ["3", "5"]
        assert len((tmp_path / "all" / "trials.csv").read_text().splitlines()) == 4

    def test_missing_file(self, tmp_path, caplog):
        missing = tmp_path / "nope.aedat"
        assert main(["ingest", str(missing), "--out", str(tmp_path)]) == 2
        assert str(missing) in caplog.text

    def test_parse_failure_reports_offset(self, tmp_path, caplog):
        code = main(["ingest", str(FIXTURES / "truncated.aedat"), "--labels", str(FIXTURES / "labels.csv"),
                     "--out", str(tmp_path)])
        assert code == 1
        assert "byte offset 114" in caplog.text

    def test_ingested_directory_feeds_csv_format(self, tmp_path):
        main(["ingest", str(FIXTURES / "one_polarity.aedat"), "--out", str(tmp_path / "trials")])
        cfg = parse_config(f"[data]\nformat = csv\npaths = {tmp_path / 'trials'}\n")
        (trial,) = load_trials(cfg.data, cfg.encoder)
        assert trial.segment.class_label == 3
        assert [tuple(e) for e in trial.segment.events] == [(234, 5, 7, 1)]


class TestRun:
    def test_synthetic_run_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, SMALL_RUN.format(out=out))
        assert main(["run", str(cfg)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "COMPLETE"
        assert manifest["stages_completed"] == ["load", "train", "infer", "decode", "classify"]
        assert manifest["seeds"] == {"network_seed": 1, "shuffle_seed": 2, "split_seed": 3}
        assert manifest["n_trials"] == 12
        assert parse_config(manifest["config"]).output.directory == str(out)
        for coding in ("rate", "latency", "rank_order"):
            report = json.loads((out / f"report_{coding}.json").read_text())
            assert report["coding"] == coding
            assert sum(map(sum, report["confusion"])) == 3
            assert len((out / f"features_{coding}.csv").read_text().splitlines()) == 13
        assert len(list((out / "traces").glob("*_intervals.csv"))) == 12

    def test_out_flag_overrides_config(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_RUN.format(out=tmp_path / "ignored"))
        assert main(["run", str(cfg), "--out", str(tmp_path / "chosen")]) == 0
        assert (tmp_path / "chosen" / "manifest.json").exists()
        assert not (tmp_path / "ignored").exists()

    def test_parallel_inference_matches_serial(self, tmp_path):
        text = SMALL_RUN.format(out=tmp_path / "serial")
        main(["run", str(write_config(tmp_path, text, "a.ini"))])
        par = text.replace(f"directory = {tmp_path / 'serial'}", f"directory = {tmp_path / 'par'}")
        main(["run", str(write_config(tmp_path, par + "\n[training]\nworkers = 2\n", "b.ini"))])
        for name in ("features_rate.csv", "report_rate.json"):
            assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()

    def test_missing_config(self, tmp_path):
        assert main(["run", str(tmp_path / "none.ini")]) == 2

    def test_invalid_config(self, tmp_path):
        assert main(["run", str(write_config(tmp_path, "[encoder]\nds_factor = 5\n"))]) == 2

    def test_stage_failure_marks_manifest_incomplete(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        text = f"[data]\nformat = csv\npaths = {empty}\n[output]\ndirectory = {tmp_path / 'out'}\n"
        assert main(["run", str(write_config(tmp_path, text))]) == 1
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["status"] == "INCOMPLETE"
        assert manifest["failed_stage"] == "load"
        assert "trials.csv" in manifest["error"]

    def test_usage_error(self):
        assert main(["frobnicate"]) == 2


class TestRaster:
    def _write(self, tmp_path, trace):
        path = tmp_path / "trace.csv"
        path.write_text(trace.to_csv())
        (tmp_path / "trace_intervals.csv").write_text(trace.intervals_csv())
        return path

    def test_empty_trace(self, tmp_path):
        path = self._write(tmp_path, SpikeTrace())
        assert main(["raster", str(path), "--out", str(tmp_path / "r")]) == 0
        for layer in ("attention", "intermediate", "output"):
            assert (tmp_path / "r" / f"raster_{layer}.csv").read_text() == "t_us,neuron_id\n"

    def test_row_counts_match_trace(self, tmp_path):
        records = [(0, "attention", 0), (1000, "intermediate", 3), (2000, "intermediate", 9), (9000, "output", 4)]
        path = self._write(tmp_path, SpikeTrace(records, [(0, 9000)], 10_000))
        assert main(["raster", str(path), "--out", str(tmp_path / "r")]) == 0
        rows = {layer: (tmp_path / "r" / f"raster_{layer}.csv").read_text().splitlines()[1:]
                for layer in ("attention", "intermediate", "output")}
        assert rows == {"attention": ["0,0"], "intermediate": ["1000,3", "2000,9"], "output": ["9000,4"]}
        assert (tmp_path / "r" / "attention_intervals.csv").read_text() == "t_on_us,t_off_us\n0,9000\n"

    def test_malformed_trace(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t_us,layer,neuron_id\nsoon,output,1\n")
        assert main(["raster", str(bad), "--out", str(tmp_path / "r")]) == 1

    def test_missing_trace(self, tmp_path):
        assert main(["raster", str(tmp_path / "gone.csv"), "--out", str(tmp_path)]) == 2


def test_example_config_command(capsys):
    assert main(["example-config"]) == 0
    assert capsys.readouterr().out == example_config()


def test_config_replace_keeps_validation():
    cfg = ExperimentConfig()
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg.training, epochs=0)


def test_config_hash_ignores_output_section():
    from retina_attention.config import config_hash

    a = parse_config("[output]\ndirectory = /tmp/a\nwrite_traces = false\n")
    b = parse_config("[output]\ndirectory = /tmp/b\n")
    c = parse_config("[training]\nnetwork_seed = 99\n")
    assert config_hash(a) == config_hash(b) != config_hash(c)
