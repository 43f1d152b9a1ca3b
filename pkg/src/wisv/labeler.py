"""Training-set construction: trace collection and cost-aware relabeling.

Stage 1 replays greedy-verification decoding against the synthetic oracle
and records every materialized mismatch (position, both hidden states,
token IDs, and the oracle's criticality latent as the base label).

Stage 2 relaxes those base labels per sampled link condition: a smoothed
importance score spreads criticality to nearby mismatches, a link-dependent
multiplier lambda(q) rises as quality drops, and each mismatch keeps its
repair label with probability b_t * sigmoid((b_smooth_t - lambda) / rho).
Relaxation is one-way: a mismatch that was not critical is never repaired.
An exact budgeted solver is included as the reference optimum the soft
policy approximates.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, CsiState, NormalizationBounds, features, quality, sample_state
from .head import sigmoid
from .oracle import EpisodeOracle, OracleConfig


@dataclass
class MismatchRecord:
    position: int
    draft_token: int
    target_token: int
    h_draft: np.ndarray
    h_target: np.ndarray
    base_label: int


@dataclass
class Episode:
    """Ordered mismatch records of one greedy decoding episode."""

    episode_id: int
    records: list[MismatchRecord] = field(default_factory=list)

    @property
    def base_labels(self) -> np.ndarray:
        return np.array([r.base_label for r in self.records], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class RelabeledInstance:
    features: np.ndarray
    label: int
    episode_id: int
    mismatch_index: int
    csi_sample_id: int


@dataclass(frozen=True)
class RelabelConfig:
    """Smoothing, policy sharpness, and link-to-multiplier map settings."""

    alpha: float = 0.5
    rho: float = 0.1
    lambda_hi: float = 0.8
    lambda_lo: float = 0.2
    b_min: int = 0
    csi_samples_per_episode: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0.0 <= self.lambda_lo <= self.lambda_hi:
            raise ValueError("need 0 <= lambda_lo <= lambda_hi")


def collect_traces(
    n_episodes: int,
    oracle_cfg: OracleConfig,
    seed: int,
    window: int = 10,
    max_tokens: int = 256,
    prefix_len: int = 64,
) -> list[Episode]:
    """Replay greedy verification and record each materialized mismatch.

    Under greedy verification every mismatch position eventually becomes the
    first rejection of some round, so recording the per-round rejection
    point captures every mismatch exactly once, in increasing position
    order.
    """
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    episodes = []
    n_positions = prefix_len + max_tokens + 2 * window + 2
    for ep in range(n_episodes):
        oracle = EpisodeOracle(oracle_cfg, seed=[seed, ep], n_positions=n_positions)
        episode = Episode(episode_id=ep)
        pos = prefix_len
        committed = 0
        while committed < max_tokens:
            block = oracle.draft(pos, window)
            view = oracle.verify_view(block)
            hits = np.nonzero(block.tokens != view.argmax[:window])[0]
            if hits.size == 0:
                pos += window + 1
                committed += window + 1
                continue
            j = int(hits[0])
            episode.records.append(
                MismatchRecord(
                    position=pos + j,
                    draft_token=int(block.tokens[j]),
                    target_token=int(view.argmax[j]),
                    h_draft=block.hiddens_draft[j].copy(),
                    h_target=view.hiddens_target[j].copy(),
                    base_label=int(block.crit[j]),
                )
            )
            pos += j + 1
            committed += j + 1
        episodes.append(episode)
    return episodes


def smooth(b: np.ndarray, alpha: float) -> np.ndarray:
    """Exponentially spread importance: max over critical k of alpha^|t-k|.

    A sequence with no critical entry smooths to all zeros.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    b = np.asarray(b)
    ones = np.nonzero(b == 1)[0]
    if ones.size == 0:
        return np.zeros(len(b), dtype=np.float64)
    t = np.arange(len(b))
    dist = np.min(np.abs(t[:, None] - ones[None, :]), axis=1)
    return alpha ** dist.astype(np.float64)


def solve_budget_exact(b: np.ndarray, b_smooth: np.ndarray, budget: int) -> np.ndarray:
    """Optimal repair actions for the budgeted objective.

    Minimizes sum (b_t - a_t) * b_smooth_t subject to sum a_t <= budget and
    a_t <= b_t. The objective separates, so the optimum repairs the
    eligible positions with the largest smoothed scores; ties break toward
    the lowest index.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    b = np.asarray(b)
    b_smooth = np.asarray(b_smooth, dtype=np.float64)
    actions = np.zeros(len(b), dtype=np.int64)
    eligible = np.nonzero(b == 1)[0]
    if eligible.size == 0 or budget == 0:
        return actions
    order = sorted(eligible, key=lambda i: (-b_smooth[i], i))
    actions[order[: min(budget, len(order))]] = 1
    return actions


def soft_policy(b_t, b_smooth_t, lam: float, rho: float):
    """Repair probability b_t * sigmoid((b_smooth_t - lambda) / rho)."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return np.asarray(b_t, dtype=np.float64) * sigmoid(
        (np.asarray(b_smooth_t, dtype=np.float64) - lam) / rho
    )


def lambda_of_csi(q: float, lambda_hi: float, lambda_lo: float) -> float:
    """Repair-threshold multiplier, decreasing linearly in channel quality."""
    if not 0.0 <= lambda_lo <= lambda_hi:
        raise ValueError("need 0 <= lambda_lo <= lambda_hi")
    return lambda_hi - (lambda_hi - lambda_lo) * q


def budget_of_csi(q: float, n_important: int, b_min: int = 0) -> int:
    """Repair budget max(b_min, round(q * n_important)); half rounds up."""
    return max(b_min, int(np.floor(q * n_important + 0.5)))


def relabel(
    episode: Episode,
    csi_samples: list[CsiState],
    cfg: RelabelConfig,
    bounds: NormalizationBounds,
    rng: np.random.Generator,
) -> list[RelabeledInstance]:
    """Sample repair actions per CSI draw and emit supervised instances.

    Every instance satisfies label <= base label (the b_t gate inside the
    soft policy never repairs a non-critical mismatch).
    """
    if len(episode) == 0:
        return []
    b = episode.base_labels
    b_smooth = smooth(b, cfg.alpha)
    out = []
    for csi_id, csi in enumerate(csi_samples):
        q = quality(csi, bounds)
        lam = lambda_of_csi(q, cfg.lambda_hi, cfg.lambda_lo)
        csi_feats = features(csi, bounds)
        pi = soft_policy(b, b_smooth, lam, cfg.rho)
        actions = (rng.random(len(b)) < pi).astype(np.int64)
        for t, rec in enumerate(episode.records):
            out.append(
                RelabeledInstance(
                    features=np.concatenate([rec.h_draft, rec.h_target, csi_feats]),
                    label=int(actions[t]),
                    episode_id=episode.episode_id,
                    mismatch_index=t,
                    csi_sample_id=csi_id,
                )
            )
    return out


def sample_csi_states(
    channel_cfg: ChannelConfig, n: int, rng: np.random.Generator
) -> list[CsiState]:
    """Draw relabeling CSI states from the configured channel regime."""
    if channel_cfg.regime == "sampled":
        return [sample_state(channel_cfg, rng) for _ in range(n)]
    if channel_cfg.regime == "two-state":
        pair = (channel_cfg.base_state(), channel_cfg.alt_state())
        return [pair[int(rng.random() < 0.5)] for _ in range(n)]
    return [channel_cfg.base_state()] * n


# ---------------------------------------------------------------------------
# File formats: JSON-lines traces, packed FP32 datasets
# ---------------------------------------------------------------------------

_DATA_MAGIC = b"WSVD"


def write_traces(path: str | Path, episodes: list[Episode]) -> None:
    """One JSON record per mismatch; episodes with no mismatch leave no lines."""
    with open(path, "w") as fh:
        for ep in episodes:
            for t, rec in enumerate(ep.records):
                line = {
                    "episode": ep.episode_id,
                    "index": t,
                    "position": rec.position,
                    "draft_token": rec.draft_token,
                    "target_token": rec.target_token,
                    "base_label": rec.base_label,
                    "h_draft": [float(v) for v in rec.h_draft],
                    "h_target": [float(v) for v in rec.h_target],
                }
                fh.write(json.dumps(line, separators=(",", ":")) + "\n")


def read_traces(path: str | Path, n_episodes: int | None = None) -> list[Episode]:
    """Rebuild episodes from a mismatch-per-line trace file."""
    by_id: dict[int, Episode] = {}
    with open(path) as fh:
        for raw in fh:
            rec = json.loads(raw)
            ep = by_id.setdefault(rec["episode"], Episode(episode_id=rec["episode"]))
            ep.records.append(
                MismatchRecord(
                    position=rec["position"],
                    draft_token=rec["draft_token"],
                    target_token=rec["target_token"],
                    h_draft=np.array(rec["h_draft"], dtype=np.float64),
                    h_target=np.array(rec["h_target"], dtype=np.float64),
                    base_label=rec["base_label"],
                )
            )
    episodes = [by_id[k] for k in sorted(by_id)]
    if n_episodes is not None:
        known = set(by_id)
        episodes = [by_id.get(i, Episode(episode_id=i)) for i in range(n_episodes)]
        if known - set(range(n_episodes)):
            raise ValueError("trace file contains more episodes than declared")
    return episodes


def write_dataset(path: str | Path, x: np.ndarray, y: np.ndarray) -> None:
    """Packed little-endian FP32 feature matrix and label vector."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with n labels")
    with open(path, "wb") as fh:
        fh.write(_DATA_MAGIC)
        fh.write(struct.pack("<II", x.shape[0], x.shape[1]))
        fh.write(x.astype("<f4").tobytes())
        fh.write(y.astype("<f4").tobytes())


def read_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != _DATA_MAGIC:
        raise ValueError(f"{path} is not a dataset file")
    n, d = struct.unpack("<II", raw[4:12])
    need = 12 + 4 * (n * d + n)
    if len(raw) != need:
        raise ValueError(f"truncated dataset: {len(raw)} bytes, expected {need}")
    flat = np.frombuffer(raw, dtype="<f4", offset=12).astype(np.float64)
    return flat[: n * d].reshape(n, d), flat[n * d :]
