"""Round-by-round device-edge decoding state machine and baselines.

Modes:

* ``sd_greedy``: accept a draft token iff it equals the target argmax;
  token-IDs-only uplink.
* ``sd_reject``: probabilistic verification with residual resampling
  (distribution-preserving); dense-probability uplink.
* ``wisv_fh`` / ``wisv_sh``: greedy mismatch localization, then the
  decision head screens every mismatch; the earliest rejected one stops
  the block. FH ships all hidden states up front; SH requests only the
  localized positions at the cost of a second round trip.
* ``wisv_adaptive``: per-round protocol choice from the measured RTT.

The verification logic is identical for FH and SH, so token streams, AAL,
and round counts match exactly between them; only the latency ledger
differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelTrace, CsiState, NormalizationBounds, features
from .compute import (
    FlopsConstants,
    HardwareProfile,
    ModelDims,
    draft_round_flops,
    exec_time,
    head_flops,
    round_latency,
    verify_round_flops,
)
from .head import HeadParams, forward_batch
from .oracle import DraftBlock, EpisodeOracle, OracleConfig, TargetView
from .wire import (
    LatencyBreakdown,
    WireConfig,
    comm_latency_fh,
    comm_latency_sh,
    feedback_bits,
    reject_uplink_bits,
    single_exchange_latency,
    token_uplink_bits,
)

MODES = ("sd_greedy", "sd_reject", "wisv_fh", "wisv_sh", "wisv_adaptive")


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "sd_greedy"
    window: int = 10
    tau: float = 0.5
    max_tokens: int = 256
    prefix_len: int = 64
    adaptive_rtt_cutoff_s: float = 0.010
    # Ablation support: feed the head zeros in the CSI slot (for heads
    # trained without link information).
    zero_csi_features: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.adaptive_rtt_cutoff_s <= 0:
            raise ValueError("adaptive rtt cutoff must be positive")
        if self.max_tokens < 1 or self.prefix_len < 0:
            raise ValueError("bad token budget or prefix length")


@dataclass(frozen=True)
class SystemModel:
    """Everything the latency ledger needs: wire, compute, and CSI scaling.

    ``head_d_in``/``head_d_j`` are the accounting dimensions used to bill
    decision-head FLOPs; they describe the deployed head, not the small
    synthetic one trained against the oracle.
    """

    wire: WireConfig
    draft_dims: ModelDims
    target_dims: ModelDims
    consts: FlopsConstants
    hw_draft: HardwareProfile
    hw_target: HardwareProfile
    bounds: NormalizationBounds
    head_d_in: int = 2048 + 4096 + 5
    head_d_j: int = 256


@dataclass
class RoundOutcome:
    """Result of one interaction round; indices are window-relative."""

    index: int
    k: int
    mismatches: list[int]
    reject_pos: int | None
    accepted: int
    committed: list[int]
    accepted_critical: int
    comm: LatencyBreakdown
    draft_s: float
    verify_s: float
    head_s: float
    proto: str | None = None
    residual_fallback: bool = False

    @property
    def m(self) -> int:
        return len(self.mismatches)

    @property
    def total_s(self) -> float:
        return round_latency(self.draft_s, self.comm, self.verify_s, self.head_s)


@dataclass
class EpisodeResult:
    rounds: list[RoundOutcome] = field(default_factory=list)

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    @property
    def tokens(self) -> list[int]:
        out: list[int] = []
        for r in self.rounds:
            out.extend(r.committed)
        return out

    @property
    def total_tokens(self) -> int:
        return sum(len(r.committed) for r in self.rounds)

    @property
    def accepted_total(self) -> int:
        return sum(r.accepted for r in self.rounds)

    @property
    def total_latency_s(self) -> float:
        return sum(r.total_s for r in self.rounds)

    @property
    def uplink_bits(self) -> int:
        return sum(r.comm.uplink_bits for r in self.rounds)

    @property
    def downlink_bits(self) -> int:
        return sum(r.comm.downlink_bits for r in self.rounds)

    @property
    def accepted_critical(self) -> int:
        return sum(r.accepted_critical for r in self.rounds)

    @property
    def synthetic_correct(self) -> bool:
        return self.accepted_critical == 0

    @property
    def aal(self) -> float:
        if not self.rounds:
            raise ValueError("episode has no rounds")
        return self.accepted_total / self.n_rounds


def localize(draft_tokens: np.ndarray, target_argmax: np.ndarray) -> list[int]:
    """Ascending window-relative indices where draft differs from argmax."""
    k = len(draft_tokens)
    return np.nonzero(np.asarray(draft_tokens) != np.asarray(target_argmax)[:k])[0].tolist()


def select_protocol(measured_rtt: float, cutoff: float = 0.010) -> str:
    """FH when the RTT strictly exceeds the cutoff, SH otherwise."""
    return "FH" if measured_rtt > cutoff else "SH"


def _compute_times(
    system: SystemModel, prefix: int, k: int, m: int
) -> tuple[float, float, float]:
    draft_s = exec_time(
        draft_round_flops(system.draft_dims, system.consts, prefix, k), system.hw_draft
    )
    verify_s = exec_time(
        verify_round_flops(system.target_dims, system.consts, prefix, k), system.hw_target
    )
    head_s = exec_time(head_flops(system.head_d_in, system.head_d_j, m), system.hw_target)
    return draft_s, verify_s, head_s


def _commit(
    block: DraftBlock, view: TargetView, mismatches: list[int], reject_pos: int | None
) -> tuple[list[int], int, int]:
    """Token commit per the shared rollback rule.

    Full accept commits all k draft tokens plus the bonus argmax; a
    rejection at j commits the j tokens before it plus the corrected
    token. Returns (committed tokens, accepted length, accepted-critical
    count).
    """
    k = len(block)
    if reject_pos is None:
        committed = [int(t) for t in block.tokens] + [int(view.argmax[k])]
        accepted_mm = mismatches
        accepted = k
    else:
        committed = [int(t) for t in block.tokens[:reject_pos]] + [int(view.argmax[reject_pos])]
        accepted_mm = [i for i in mismatches if i < reject_pos]
        accepted = reject_pos
    n_crit = int(sum(bool(view.crit[i]) for i in accepted_mm))
    return committed, accepted, n_crit


def sd_greedy_round(
    system: SystemModel,
    block: DraftBlock,
    view: TargetView,
    csi: CsiState,
    index: int = 0,
) -> RoundOutcome:
    """Strict argmax matching: the first mismatch always rejects."""
    k = len(block)
    mismatches = localize(block.tokens, view.argmax)
    reject_pos = mismatches[0] if mismatches else None
    committed, accepted, n_crit = _commit(block, view, mismatches, reject_pos)
    comm = single_exchange_latency(
        token_uplink_bits(system.wire, k), feedback_bits(system.wire), csi
    )
    draft_s, verify_s, _ = _compute_times(system, block.start, k, 0)
    return RoundOutcome(
        index=index,
        k=k,
        mismatches=mismatches,
        reject_pos=reject_pos,
        accepted=accepted,
        committed=committed,
        accepted_critical=n_crit,
        comm=comm,
        draft_s=draft_s,
        verify_s=verify_s,
        head_s=0.0,
    )


def wisv_round(
    system: SystemModel,
    block: DraftBlock,
    view: TargetView,
    params: HeadParams,
    tau: float,
    csi: CsiState,
    proto: str,
    index: int = 0,
    zero_csi_features: bool = False,
) -> RoundOutcome:
    """Head-screened verification; ``proto`` selects the payload ledger.

    The head is evaluated at every localized mismatch (SH fetches all of
    them in one request), and the earliest position whose rejection
    probability reaches tau stops the block.
    """
    if proto not in ("FH", "SH"):
        raise ValueError(f"unknown protocol {proto!r}")
    k = len(block)
    if len(view.hiddens_target) != k:
        raise ValueError("draft block and target view lengths differ")
    mismatches = localize(block.tokens, view.argmax)
    m = len(mismatches)
    reject_pos = None
    if m:
        csi_feats = features(csi, system.bounds)
        if zero_csi_features:
            csi_feats = np.zeros_like(csi_feats)
        z = np.concatenate(
            [
                block.hiddens_draft[mismatches],
                view.hiddens_target[mismatches],
                np.tile(csi_feats, (m, 1)),
            ],
            axis=1,
        )
        _, p = forward_batch(params, z, training=False)
        rejected = np.nonzero(p >= tau)[0]
        if rejected.size:
            reject_pos = mismatches[int(rejected[0])]
    committed, accepted, n_crit = _commit(block, view, mismatches, reject_pos)
    if proto == "FH":
        comm = comm_latency_fh(system.wire, k, csi)
    else:
        comm = comm_latency_sh(system.wire, k, m, csi)
    draft_s, verify_s, head_s = _compute_times(system, block.start, k, m)
    return RoundOutcome(
        index=index,
        k=k,
        mismatches=mismatches,
        reject_pos=reject_pos,
        accepted=accepted,
        committed=committed,
        accepted_critical=n_crit,
        comm=comm,
        draft_s=draft_s,
        verify_s=verify_s,
        head_s=head_s,
        proto=proto,
    )


def _sample(p: np.ndarray, rng) -> int:
    """Inverse-CDF draw from a categorical distribution."""
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(idx, len(p) - 1)


def sd_reject_round(
    system: SystemModel,
    oracle: EpisodeOracle,
    prefix: int,
    k: int,
    csi: CsiState,
    rng: np.random.Generator,
    index: int = 0,
) -> RoundOutcome:
    """Probabilistic verification over per-position distribution pairs.

    Each draft token y ~ p_draft is accepted with min(1, p_target(y) /
    p_draft(y)); a rejection emits a token from the normalized residual
    max(p_target - p_draft, 0), falling back to p_target when the residual
    is all zero. The emitted stream is distributed per the target model.
    """
    committed: list[int] = []
    reject_pos = None
    fallback = False
    for i in range(k):
        p_d, p_t = oracle.distributions(prefix + i)
        y = _sample(p_d, rng)
        ratio = p_t[y] / p_d[y]
        if rng.random() < min(1.0, ratio):
            committed.append(y)
            continue
        residual = np.maximum(p_t - p_d, 0.0)
        total = residual.sum()
        if total <= 0.0:
            residual, fallback = p_t, True
        else:
            residual = residual / total
        committed.append(_sample(residual, rng))
        reject_pos = i
        break
    if reject_pos is None:
        _, p_t = oracle.distributions(prefix + k)
        committed.append(_sample(p_t, rng))
    accepted = reject_pos if reject_pos is not None else k
    comm = single_exchange_latency(
        reject_uplink_bits(system.wire, k), feedback_bits(system.wire), csi
    )
    draft_s, verify_s, _ = _compute_times(system, prefix, k, 0)
    return RoundOutcome(
        index=index,
        k=k,
        mismatches=[reject_pos] if reject_pos is not None else [],
        reject_pos=reject_pos,
        accepted=accepted,
        committed=committed,
        accepted_critical=0,
        comm=comm,
        draft_s=draft_s,
        verify_s=verify_s,
        head_s=0.0,
        residual_fallback=fallback,
    )


def run_episode(
    system: SystemModel,
    engine_cfg: EngineConfig,
    oracle_cfg: OracleConfig,
    trace: ChannelTrace,
    head_params: HeadParams | None = None,
    seed: int | list[int] = 0,
) -> EpisodeResult:
    """Run one generation episode to its token budget.

    The committed prefix grows by accepted length + 1 each round (+window+1
    on full accept); per-round CSI comes from the channel trace, wrapping
    if the episode outlives it.
    """
    mode = engine_cfg.mode
    if mode.startswith("wisv") and head_params is None:
        raise ValueError(f"mode {mode} requires trained head parameters")
    k = engine_cfg.window
    n_positions = engine_cfg.prefix_len + engine_cfg.max_tokens + 2 * k + 2
    oracle = EpisodeOracle(
        oracle_cfg, seed=seed, n_positions=n_positions,
        with_distributions=(mode == "sd_reject"),
    )
    extra = [seed] if isinstance(seed, int) else list(seed)
    rng = np.random.default_rng([oracle_cfg.seed, *extra, 0x5A])

    result = EpisodeResult()
    prefix = engine_cfg.prefix_len
    committed = 0
    r = 0
    while committed < engine_cfg.max_tokens:
        csi = trace.at_round(r)
        if mode == "sd_greedy":
            block = oracle.draft(prefix, k)
            outcome = sd_greedy_round(system, block, oracle.verify_view(block), csi, r)
        elif mode == "sd_reject":
            outcome = sd_reject_round(system, oracle, prefix, k, csi, rng, r)
        else:
            if mode == "wisv_fh":
                proto = "FH"
            elif mode == "wisv_sh":
                proto = "SH"
            else:
                proto = select_protocol(csi.rtt, engine_cfg.adaptive_rtt_cutoff_s)
            block = oracle.draft(prefix, k)
            outcome = wisv_round(
                system, block, oracle.verify_view(block), head_params,
                engine_cfg.tau, csi, proto, r,
                zero_csi_features=engine_cfg.zero_csi_features,
            )
        result.rounds.append(outcome)
        prefix += len(outcome.committed)
        committed += len(outcome.committed)
        r += 1
    return result
