import csv
import json

import numpy as np
import pytest
import yaml

from wisv.cli import (
    ABLATE_CSV,
    ABLATE_META,
    DATASET,
    DATASET_MANIFEST,
    EPISODES_JSONL,
    HEAD,
    PLOT_DATA,
    RESULTS,
    ROUNDS_JSONL,
    TRACES,
    TRACES_META,
    cmd_eval,
    cmd_relabel,
    cmd_trace,
    cmd_train,
    main,
)
from wisv.config import DEFAULT_CONFIG, ExperimentConfig, config_hash
from wisv.metrics import CSV_COLUMNS

SMALL_OVERRIDES = {
    "trace": {"episodes": 50},
    "train": {"epochs": 5, "hidden_dim": 16},
    "engine": {"max_tokens": 120},
    "sweep": {
        "episodes": 6,
        "k_values": [10, 16],
        "tau_values": [0.9],
        "modes": ["sd_greedy", "sd_reject", "wisv_fh", "wisv_sh"],
        "scenarios": [
            {"name": "500mbps_50ms", "rate_up_bps": 500e6, "rate_down_bps": 500e6, "rtt_s": 0.05},
            {"name": "20mbps_5ms", "rate_up_bps": 20e6, "rate_down_bps": 20e6, "rtt_s": 0.005},
        ],
    },
    "ablate": {"episodes": 20, "k": 10, "tau": 0.95, "scenarios": ["20mbps_5ms"]},
}


def write_config(tmp_path, overrides=None):
    path = tmp_path / "config.yaml"
    with open(path, "w") as fh:
        yaml.safe_dump(overrides if overrides is not None else SMALL_OVERRIDES, fh)
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """One small trace->relabel->train run shared by read-only tests."""
    out = tmp_path_factory.mktemp("small_run")
    cfg_path = write_config(out, SMALL_OVERRIDES)
    cfg = ExperimentConfig.load(cfg_path)
    cmd_trace(cfg, out)
    cmd_relabel(cfg, out)
    cmd_train(cfg, out)
    return cfg, out


class TestConfig:
    def test_defaults_validate(self):
        cfg = ExperimentConfig.load()
        assert cfg.raw == DEFAULT_CONFIG

    def test_seed_override_changes_hash(self, tmp_path):
        path = write_config(tmp_path)
        a = ExperimentConfig.load(path)
        b = ExperimentConfig.load(path, seed=999)
        assert a.hash != b.hash
        assert b.seed == 999

    def test_hash_stable(self):
        assert config_hash(DEFAULT_CONFIG) == config_hash(json.loads(json.dumps(DEFAULT_CONFIG)))

    def test_unknown_preset_rejected(self, tmp_path):
        path = write_config(tmp_path, {"compute": {"preset": "gpt-99"}})
        with pytest.raises(ValueError, match="preset"):
            ExperimentConfig.load(path)

    def test_empty_grid_rejected(self, tmp_path):
        path = write_config(tmp_path, {"sweep": {"k_values": []}})
        with pytest.raises(ValueError, match="k_values"):
            ExperimentConfig.load(path)

    def test_unknown_ablate_scenario_rejected(self, tmp_path):
        path = write_config(tmp_path, {"ablate": {"scenarios": ["6g_lab"]}})
        with pytest.raises(ValueError, match="6g_lab"):
            ExperimentConfig.load(path)


class TestTraceCommand:
    def test_outputs_and_stats(self, small_run):
        cfg, out = small_run
        meta = json.loads((out / TRACES_META).read_text())
        assert meta["episodes"] == 50
        assert meta["critical_fraction"] == pytest.approx(cfg.oracle().p_crit, abs=0.05)
        assert meta["config_hash"] == cfg.hash
        assert (out / TRACES).exists()

    def test_rerun_byte_identical(self, small_run, tmp_path):
        cfg, out = small_run
        cmd_trace(cfg, tmp_path)
        assert (tmp_path / TRACES).read_bytes() == (out / TRACES).read_bytes()


class TestRelabelCommand:
    def test_manifest_contents(self, small_run):
        cfg, out = small_run
        manifest = json.loads((out / DATASET_MANIFEST).read_text())
        assert manifest["feature_dim"] == cfg.feature_dim()
        assert 0.0 < manifest["positive_rate"] < 1.0
        assert manifest["config_hash"] == cfg.hash
        assert (out / DATASET).exists()

    def test_missing_traces_error(self, tmp_path):
        cfg = ExperimentConfig.load(write_config(tmp_path))
        with pytest.raises(FileNotFoundError, match="trace"):
            cmd_relabel(cfg, tmp_path)

    def test_empty_trace_set_error(self, tmp_path):
        overrides = json.loads(json.dumps(SMALL_OVERRIDES))
        overrides["oracle"] = {"p_match": 1.0}  # no mismatches at all
        cfg = ExperimentConfig.load(write_config(tmp_path, overrides))
        cmd_trace(cfg, tmp_path)
        with pytest.raises(ValueError, match="no mismatches"):
            cmd_relabel(cfg, tmp_path)

    def test_channel_conditioned_positive_rates(self, tmp_path_factory):
        # Relabeling against only a good channel keeps roughly the base
        # positive rate; only a poor channel strictly lowers it.
        rates = {}
        for name, rate in [("good", 900e6), ("poor", 20e6)]:
            out = tmp_path_factory.mktemp(name)
            overrides = json.loads(json.dumps(SMALL_OVERRIDES))
            overrides["trace"] = {"episodes": 150}
            overrides["labeler"] = {
                "channel": {
                    "rate_up_bps": rate, "rate_down_bps": rate, "rtt_s": 0.05,
                    "regime": "static",
                }
            }
            cfg = ExperimentConfig.load(write_config(out, overrides))
            cmd_trace(cfg, out)
            manifest = cmd_relabel(cfg, out)
            rates[name] = (manifest["positive_rate"], manifest["instances"])
        base = json.loads((out / TRACES_META).read_text())["critical_fraction"]
        (good_rate, n_good), (poor_rate, n_poor) = rates["good"], rates["poor"]
        assert good_rate == pytest.approx(base, abs=0.02)
        sem = np.sqrt(
            good_rate * (1 - good_rate) / n_good + poor_rate * (1 - poor_rate) / n_poor
        )
        assert good_rate - poor_rate > 3 * sem


class TestTrainCommand:
    def test_report_quality(self, small_run):
        cfg, out = small_run
        report = json.loads((out / "train_report.json").read_text())
        assert report["holdout_auc"] >= 0.90
        assert len(report["epoch_losses"]) == 5
        assert (out / HEAD).exists()

    def test_missing_dataset_error(self, tmp_path):
        cfg = ExperimentConfig.load(write_config(tmp_path))
        with pytest.raises(FileNotFoundError, match="dataset"):
            cmd_train(cfg, tmp_path)

    def test_params_file_hash_deterministic(self, small_run, tmp_path):
        cfg, out = small_run
        for name in (TRACES, DATASET):
            (tmp_path / name).write_bytes((out / name).read_bytes())
        cmd_train(cfg, tmp_path)
        assert (tmp_path / HEAD).read_bytes() == (out / HEAD).read_bytes()

    def test_zero_lr_warns(self, small_run, tmp_path, capsys):
        cfg, out = small_run
        raw = json.loads(json.dumps(cfg.raw))
        raw["train"]["learning_rate"] = 0.0
        cfg0 = ExperimentConfig(raw=raw)
        for name in (TRACES, DATASET):
            (tmp_path / name).write_bytes((out / name).read_bytes())
        cmd_train(cfg0, tmp_path)
        assert "learning rate is 0" in capsys.readouterr().err


class TestEvalCommand:
    def test_grid_row_count_and_files(self, small_run):
        cfg, out = small_run
        rows = cmd_eval(cfg, out)
        # 2 scenarios x 4 modes x 2 k x 1 tau
        assert len(rows) == 16
        with open(out / RESULTS) as fh:
            reader = csv.DictReader(fh)
            assert reader.fieldnames == CSV_COLUMNS
            assert len(list(reader)) == 16
        assert (out / EPISODES_JSONL).exists()
        assert (out / ROUNDS_JSONL).exists()
        plot = json.loads((out / PLOT_DATA).read_text())
        assert set(plot["panels"]) == {"500mbps_50ms", "20mbps_5ms"}
        assert plot["panels"]["500mbps_50ms"]["sd_greedy"]["k"] == [10, 16]

    def test_missing_head_error(self, tmp_path):
        cfg = ExperimentConfig.load(write_config(tmp_path))
        with pytest.raises(FileNotFoundError, match="head"):
            cmd_eval(cfg, tmp_path)

    def test_greedy_rows_rate_invariant_up_to_payload(self, small_run):
        cfg, out = small_run
        with open(out / RESULTS) as fh:
            rows = [r for r in csv.DictReader(fh) if r["mode"] == "sd_greedy" and r["k"] == "10"]
        assert len(rows) == 2
        aal = {float(r["rate_bps"]): r["aal"] for r in rows}
        assert aal[500e6] == aal[20e6]  # same verification decisions

    def test_parallel_matches_serial(self, small_run, tmp_path):
        cfg, out = small_run
        for name in (TRACES, DATASET, HEAD, HEAD + ".json"):
            (tmp_path / name).write_bytes((out / name).read_bytes())
        cmd_eval(cfg, tmp_path, jobs=2)
        assert (tmp_path / RESULTS).read_bytes() == (out / RESULTS).read_bytes()
        assert (tmp_path / ROUNDS_JSONL).read_bytes() == (out / ROUNDS_JSONL).read_bytes()

    def test_throughput_latency_token_identity(self, small_run):
        # Per row: throughput x mean latency x episodes == total accepted
        # tokens, recomputed independently from the per-episode records.
        cfg, out = small_run
        accepted = {}
        with open(out / EPISODES_JSONL) as fh:
            for line in fh:
                rec = json.loads(line)
                key = (rec["scenario"], rec["mode"], rec["k"], rec["tau"])
                accepted[key] = accepted.get(key, 0) + rec["accepted"]
        by_scenario = {s["name"]: s for s in cfg.raw["sweep"]["scenarios"]}
        episodes = cfg.raw["sweep"]["episodes"]
        checked = 0
        with open(out / RESULTS) as fh:
            for row in csv.DictReader(fh):
                scenario = next(
                    n for n, s in by_scenario.items()
                    if float(s["rate_up_bps"]) == float(row["rate_bps"])
                    and float(s["rtt_s"]) == float(row["rtt_s"])
                )
                key = (scenario, row["mode"], int(row["k"]), float(row["tau"]))
                recovered = float(row["throughput"]) * float(row["latency_s"]) * episodes
                assert recovered == pytest.approx(accepted[key], rel=1e-6)
                checked += 1
        assert checked == 16

    def test_adaptive_protocol_visible_in_round_records(self, small_run, tmp_path):
        cfg, out = small_run
        raw = json.loads(json.dumps(cfg.raw))
        raw["sweep"]["modes"] = ["wisv_adaptive"]
        raw["sweep"]["k_values"] = [10]
        raw["sweep"]["episodes"] = 3
        cfg2 = ExperimentConfig(raw=raw)
        for name in (HEAD, HEAD + ".json"):
            (tmp_path / name).write_bytes((out / name).read_bytes())
        cmd_eval(cfg2, tmp_path)
        protos = {}
        with open(tmp_path / ROUNDS_JSONL) as fh:
            for line in fh:
                rec = json.loads(line)
                protos.setdefault(rec["scenario"], set()).add(rec["proto"])
        assert protos["500mbps_50ms"] == {"FH"}  # 50 ms rtt exceeds the cutoff
        assert protos["20mbps_5ms"] == {"SH"}


class TestAblateCommand:
    def test_outputs(self, small_run, capsys):
        cfg, out = small_run
        from wisv.cli import cmd_ablate

        paired = cmd_ablate(cfg, out)
        assert set(paired["scenarios"]) == {"20mbps_5ms"}
        with open(out / ABLATE_CSV) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["variant"] for r in rows] == ["csi", "no_csi"]
        meta = json.loads((out / ABLATE_META).read_text())
        assert meta["config_hash"] == cfg.hash

    def test_rerun_reproducible(self, small_run, tmp_path):
        cfg, out = small_run
        from wisv.cli import cmd_ablate

        for name in (TRACES,):
            (tmp_path / name).write_bytes((out / name).read_bytes())
        cmd_ablate(cfg, tmp_path)
        assert (tmp_path / ABLATE_CSV).read_bytes() == (out / ABLATE_CSV).read_bytes()


class TestMainEntry:
    def test_unknown_command_exits_nonzero(self, capsys):
        with pytest.raises(SystemExit):
            main(["decode"])

    def test_error_is_machine_readable(self, tmp_path, capsys):
        code = main(["relabel", "--out", str(tmp_path), "--config",
                     str(write_config(tmp_path))])
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()[-1]
        payload = json.loads(err)
        assert "error" in payload and "trace" in payload["error"]

    def test_full_pipeline_via_main(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert main(["all", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / RESULTS).exists()

    def test_seed_flag_propagates(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "o"
        assert main(["trace", "--config", str(cfg_path), "--out", str(out), "--seed", "7"]) == 0
        meta = json.loads((out / TRACES_META).read_text())
        assert meta["config_hash"] == ExperimentConfig.load(cfg_path, seed=7).hash
