"""Experiment runner.

Subcommands mirror the pipeline stages:

    trace    collect greedy-decoding mismatch traces from the oracle
    relabel  turn traces into a link-aware training set
    train    fit the rejection head and report held-out quality
    eval     sweep modes x window sizes x channel scenarios
    ablate   compare link-aware and link-blind heads
    all      trace -> relabel -> train -> eval

Every command is a pure function of (config, seed): reruns produce
byte-identical output files. Outputs carry the configuration hash either
inline (JSON) or via a sibling ``*_meta.json`` (CSV, JSON-lines).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

import numpy as np

from .channel import N_CSI_FEATURES, generate_trace, quality
from .config import (
    SEED_CHANNEL,
    SEED_EVAL,
    SEED_RELABEL,
    SEED_TRACE,
    SEED_TRAIN,
    ExperimentConfig,
)
from .engine import run_episode
from .head import forward_batch, load_params, save_params, train
from .labeler import (
    collect_traces,
    read_traces,
    relabel,
    sample_csi_states,
    write_dataset,
    read_dataset,
    write_traces,
)
from .metrics import csv_row, summarize, write_csv

TRACES = "traces.jsonl"
TRACES_META = "traces_meta.json"
DATASET = "dataset.bin"
DATASET_MANIFEST = "dataset_manifest.json"
HEAD = "head.bin"
TRAIN_REPORT = "train_report.json"
RESULTS = "results.csv"
RESULTS_META = "results_meta.json"
EPISODES_JSONL = "episodes.jsonl"
ROUNDS_JSONL = "rounds.jsonl"
PLOT_DATA = "plot_latency_vs_k.json"
ABLATE_CSV = "ablate.csv"
ABLATE_META = "ablate_meta.json"


def _dump_json(path: Path, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


def cmd_trace(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    eng = cfg.raw["engine"]
    episodes = collect_traces(
        cfg.raw["trace"]["episodes"],
        cfg.oracle(),
        seed=SEED_TRACE,
        window=eng["window"],
        max_tokens=eng["max_tokens"],
        prefix_len=eng["prefix_len"],
    )
    write_traces(out / TRACES, episodes)
    n_mismatch = sum(len(ep) for ep in episodes)
    n_critical = sum(int(ep.base_labels.sum()) for ep in episodes if len(ep))
    stats = {
        "episodes": len(episodes),
        "mismatches": n_mismatch,
        "critical": n_critical,
        "critical_fraction": n_critical / n_mismatch if n_mismatch else 0.0,
        "mean_mismatches_per_episode": n_mismatch / len(episodes),
        "config_hash": cfg.hash,
    }
    _dump_json(out / TRACES_META, stats)
    print(
        f"trace: {stats['episodes']} episodes, {n_mismatch} mismatches, "
        f"critical fraction {stats['critical_fraction']:.4f}"
    )
    return stats


# ---------------------------------------------------------------------------
# relabel
# ---------------------------------------------------------------------------


def cmd_relabel(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    traces_path = out / TRACES
    if not traces_path.exists():
        raise FileNotFoundError(f"missing trace file {traces_path}; run 'trace' first")
    episodes = read_traces(traces_path, n_episodes=cfg.raw["trace"]["episodes"])
    if sum(len(ep) for ep in episodes) == 0:
        raise ValueError("trace set contains no mismatches; nothing to relabel")

    rcfg = cfg.relabel()
    bounds = cfg.bounds()
    relabel_channel = cfg.channel(cfg.raw["labeler"]["channel"])
    rng = np.random.default_rng([cfg.seed, SEED_RELABEL])

    feats, labels, qualities = [], [], []
    for ep in episodes:
        samples = sample_csi_states(relabel_channel, rcfg.csi_samples_per_episode, rng)
        per_sample_q = [quality(s, bounds) for s in samples]
        for inst in relabel(ep, samples, rcfg, bounds, rng):
            feats.append(inst.features)
            labels.append(inst.label)
            qualities.append(per_sample_q[inst.csi_sample_id])
    x = np.array(feats)
    y = np.array(labels, dtype=np.float64)
    q = np.array(qualities)
    write_dataset(out / DATASET, x, y)

    edges = np.linspace(0.0, 1.0, 6)
    buckets = {}
    for i in range(5):
        mask = (q >= edges[i]) & (q < edges[i + 1] if i < 4 else q <= edges[i + 1])
        key = f"q_{edges[i]:.1f}_{edges[i + 1]:.1f}"
        buckets[key] = {
            "instances": int(mask.sum()),
            "positive_rate": float(y[mask].mean()) if mask.any() else None,
        }
    manifest = {
        "instances": int(len(y)),
        "feature_dim": int(x.shape[1]),
        "positives": int(y.sum()),
        "positive_rate": float(y.mean()),
        "per_quality_bucket": buckets,
        "config_hash": cfg.hash,
    }
    _dump_json(out / DATASET_MANIFEST, manifest)
    print(
        f"relabel: {manifest['instances']} instances, dim {manifest['feature_dim']}, "
        f"positive rate {manifest['positive_rate']:.4f}"
    )
    return manifest


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC with average ranks for ties."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def cmd_train(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    dataset_path = out / DATASET
    if not dataset_path.exists():
        raise FileNotFoundError(f"missing dataset {dataset_path}; run 'relabel' first")
    x, y = read_dataset(dataset_path)
    tcfg = cfg.train()
    if tcfg.learning_rate == 0.0:
        print("warning: learning rate is 0; parameters will not move", file=sys.stderr)

    rng = np.random.default_rng([cfg.seed, SEED_TRAIN])
    order = rng.permutation(len(y))
    n_hold = int(round(cfg.raw["train"]["holdout_fraction"] * len(y)))
    hold, keep = order[:n_hold], order[n_hold:]
    params, report = train(x[keep], y[keep], tcfg)

    s_hold, p_hold = forward_batch(params, x[hold], training=False)
    hold_acc = float(np.mean((s_hold >= 0.0) == (y[hold] == 1.0)))
    hold_auc = _auc(p_hold, y[hold])
    meta = {
        "config_hash": cfg.hash,
        "train_instances": int(len(keep)),
        "holdout_instances": int(len(hold)),
        "pos_weight": report.pos_weight,
        "final_train_loss": report.epoch_losses[-1],
        "final_train_accuracy": report.final_train_accuracy,
        "holdout_accuracy": hold_acc,
        "holdout_auc": hold_auc,
    }
    save_params(out / HEAD, params, metadata=meta)
    _dump_json(out / TRAIN_REPORT, {**meta, "epoch_losses": report.epoch_losses})
    print(
        f"train: loss {meta['final_train_loss']:.4f}, "
        f"holdout acc {hold_acc:.4f}, holdout auc {hold_auc:.4f}"
    )
    return meta


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _eval_point(payload: dict) -> dict:
    """Run one (scenario, mode, k, tau) sweep point. Must stay picklable."""
    cfg = ExperimentConfig(raw=payload["raw"])
    scenario = cfg.scenario(payload["scenario"])
    mode, k, tau = payload["mode"], payload["k"], payload["tau"]
    engine_cfg = cfg.engine(mode=mode, window=k, tau=tau)
    oracle_cfg = cfg.oracle()
    system = cfg.system()
    channel_cfg = cfg.channel(scenario)
    head = load_params(payload["head_path"]) if mode.startswith("wisv") else None

    results = []
    episode_records, round_records = [], []
    base = {"scenario": scenario["name"], "mode": mode, "k": k, "tau": tau}
    for ep in range(payload["episodes"]):
        trace = generate_trace(
            channel_cfg,
            [cfg.seed, SEED_CHANNEL, payload["scenario_index"], ep],
            rounds=engine_cfg.max_tokens,
        )
        res = run_episode(
            system, engine_cfg, oracle_cfg, trace, head, seed=[SEED_EVAL, ep]
        )
        results.append(res)
        episode_records.append(
            {
                **base,
                "episode": ep,
                "rounds": res.n_rounds,
                "aal": res.aal,
                "accepted": res.accepted_total,
                "tokens": res.total_tokens,
                "latency_s": res.total_latency_s,
                "uplink_bits": res.uplink_bits,
                "downlink_bits": res.downlink_bits,
                "accepted_critical": res.accepted_critical,
                "correct": res.synthetic_correct,
            }
        )
        for r in res.rounds:
            round_records.append(
                {
                    **base,
                    "episode": ep,
                    "round": r.index,
                    "m": r.m,
                    "reject_pos": r.reject_pos,
                    "accepted": r.accepted,
                    "committed": len(r.committed),
                    "proto": r.proto,
                    "uplink_bits": r.comm.uplink_bits,
                    "downlink_bits": r.comm.downlink_bits,
                    "draft_s": r.draft_s,
                    "verify_s": r.verify_s,
                    "head_s": r.head_s,
                    "comm_s": r.comm.total_s,
                    "total_s": r.total_s,
                    "accepted_critical": r.accepted_critical,
                }
            )
    summary = summarize(results)
    row = csv_row(mode, k, tau, scenario["rate_up_bps"], scenario["rtt_s"], summary)
    return {
        "row": row,
        "summary_latency": summary.latency_mean_s,
        "episodes": episode_records,
        "rounds": round_records,
    }


def cmd_eval(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> list[dict]:
    head_path = out / HEAD
    sweep = cfg.raw["sweep"]
    needs_head = any(m.startswith("wisv") for m in sweep["modes"])
    if needs_head and not head_path.exists():
        raise FileNotFoundError(f"missing head parameters {head_path}; run 'train' first")

    payloads = []
    for s_idx, scenario in enumerate(sweep["scenarios"]):
        for mode in sweep["modes"]:
            for k in sweep["k_values"]:
                for tau in sweep["tau_values"]:
                    payloads.append(
                        {
                            "raw": cfg.raw,
                            "scenario": scenario["name"],
                            "scenario_index": s_idx,
                            "mode": mode,
                            "k": k,
                            "tau": tau,
                            "episodes": sweep["episodes"],
                            "head_path": str(head_path),
                        }
                    )

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_eval_point, payloads))
    else:
        outputs = [_eval_point(p) for p in payloads]

    rows = [o["row"] for o in outputs]
    write_csv(out / RESULTS, rows)
    with open(out / EPISODES_JSONL, "w") as ef, open(out / ROUNDS_JSONL, "w") as rf:
        for o in outputs:
            for rec in o["episodes"]:
                ef.write(json.dumps(rec, separators=(",", ":")) + "\n")
            for rec in o["rounds"]:
                rf.write(json.dumps(rec, separators=(",", ":")) + "\n")

    first_tau = sweep["tau_values"][0]
    plot: dict = {"config_hash": cfg.hash, "tau": first_tau, "panels": {}}
    for payload, o in zip(payloads, outputs):
        if payload["tau"] != first_tau:
            continue
        panel = plot["panels"].setdefault(payload["scenario"], {})
        series = panel.setdefault(payload["mode"], {"k": [], "latency_s": []})
        series["k"].append(payload["k"])
        series["latency_s"].append(o["summary_latency"])
    _dump_json(out / PLOT_DATA, plot)
    _dump_json(
        out / RESULTS_META,
        {"config_hash": cfg.hash, "rows": len(rows), "columns": list(rows[0].keys())},
    )
    print(f"eval: {len(rows)} sweep points -> {out / RESULTS}")
    return rows


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def _build_relabeled_dataset(cfg: ExperimentConfig, out: Path):
    episodes = read_traces(out / TRACES, n_episodes=cfg.raw["trace"]["episodes"])
    if sum(len(ep) for ep in episodes) == 0:
        raise ValueError("trace set contains no mismatches")
    rcfg = cfg.relabel()
    bounds = cfg.bounds()
    relabel_channel = cfg.channel(cfg.raw["labeler"]["channel"])
    rng = np.random.default_rng([cfg.seed, SEED_RELABEL])
    feats, labels = [], []
    for ep in episodes:
        samples = sample_csi_states(relabel_channel, rcfg.csi_samples_per_episode, rng)
        for inst in relabel(ep, samples, rcfg, bounds, rng):
            feats.append(inst.features)
            labels.append(inst.label)
    return episodes, np.array(feats), np.array(labels, dtype=np.float64)


def cmd_ablate(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    traces_path = out / TRACES
    if not traces_path.exists():
        raise FileNotFoundError(f"missing trace file {traces_path}; run 'trace' first")
    episodes, x_csi, y_csi = _build_relabeled_dataset(cfg, out)

    # Link-blind variant: base labels, CSI feature slot zeroed.
    feats, labels = [], []
    for ep in episodes:
        for rec in ep.records:
            feats.append(
                np.concatenate([rec.h_draft, rec.h_target, np.zeros(N_CSI_FEATURES)])
            )
            labels.append(rec.base_label)
    x_base, y_base = np.array(feats), np.array(labels, dtype=np.float64)

    tcfg = cfg.train()
    params_csi, _ = train(x_csi, y_csi, tcfg)
    params_base, _ = train(x_base, y_base, tcfg)

    abl = cfg.raw["ablate"]
    oracle_cfg = cfg.oracle()
    system = cfg.system()
    rows = []
    paired: dict = {"config_hash": cfg.hash, "scenarios": {}}
    for s_name in abl["scenarios"]:
        scenario = cfg.scenario(s_name)
        s_idx = [s["name"] for s in cfg.raw["sweep"]["scenarios"]].index(s_name)
        channel_cfg = cfg.channel(scenario)
        per_variant: dict = {}
        for variant, params, zero_csi in (
            ("csi", params_csi, False),
            ("no_csi", params_base, True),
        ):
            engine_cfg = cfg.engine(
                mode="wisv_fh", window=abl["k"], tau=abl["tau"], zero_csi_features=zero_csi
            )
            results = []
            for ep in range(abl["episodes"]):
                trace = generate_trace(
                    channel_cfg, [cfg.seed, SEED_CHANNEL, s_idx, ep], rounds=engine_cfg.max_tokens
                )
                results.append(
                    run_episode(system, engine_cfg, oracle_cfg, trace, params, seed=[SEED_EVAL, ep])
                )
            summary = summarize(results)
            row = csv_row(
                "wisv_fh", abl["k"], abl["tau"], scenario["rate_up_bps"], scenario["rtt_s"], summary
            )
            rows.append({"variant": variant, **row})
            aals = np.array([r.aal for r in results])
            per_variant[variant] = {
                "aal_mean": float(aals.mean()),
                "aal_std": float(aals.std(ddof=1)),
                "aal_sem": float(aals.std(ddof=1) / np.sqrt(len(aals))),
                "latency_mean_s": summary.latency_mean_s,
                "accuracy_proxy": summary.accuracy_proxy,
            }
        paired["scenarios"][s_name] = per_variant

    with open(out / ABLATE_CSV, "w", newline="") as fh:
        import csv as _csv

        writer = _csv.DictWriter(fh, fieldnames=["variant"] + list(rows[0].keys())[1:])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    _dump_json(out / ABLATE_META, paired)
    for s_name, pv in paired["scenarios"].items():
        print(
            f"ablate[{s_name}]: csi aal {pv['csi']['aal_mean']:.3f} "
            f"vs no-csi {pv['no_csi']['aal_mean']:.3f}"
        )
    return paired


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "trace": cmd_trace,
    "relabel": cmd_relabel,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def cmd_all(cfg: ExperimentConfig, out: Path, jobs: int = 1):
    cmd_trace(cfg, out, jobs)
    cmd_relabel(cfg, out, jobs)
    cmd_train(cfg, out, jobs)
    return cmd_eval(cfg, out, jobs)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wisv",
        description="Wireless device-edge speculative decoding simulator",
    )
    parser.add_argument("command", choices=[*COMMANDS, "all"])
    parser.add_argument("--config", type=Path, default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--out", type=Path, default=None, help="output directory override")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    args = parser.parse_args(argv)

    try:
        cfg = ExperimentConfig.load(args.config, seed=args.seed)
        out = args.out if args.out is not None else Path(cfg.raw["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "all":
            cmd_all(cfg, out, args.jobs)
        else:
            COMMANDS[args.command](cfg, out, args.jobs)
    except Exception as exc:  # noqa: BLE001 - single CLI failure surface
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
