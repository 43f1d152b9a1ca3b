"""Wireless device-edge speculative decoding simulator.

Library layout mirrors the system: ``channel`` (link state), ``wire``
(payloads and serialization latency), ``compute`` (FLOPs timing),
``oracle`` (synthetic drafter/target pair), ``head`` (rejection MLP),
``labeler`` (trace collection and link-aware relabeling), ``engine``
(round state machine and baselines), ``metrics`` (aggregation), and
``cli`` (experiment pipeline).
"""

from .channel import (
    ChannelConfig,
    ChannelTrace,
    CsiState,
    NormalizationBounds,
    effective_rate,
    features,
    generate_trace,
    quality,
)
from .compute import (
    FlopsConstants,
    HardwareProfile,
    ModelDims,
    draft_round_flops,
    exec_time,
    head_flops,
    per_token_flops,
    round_latency,
    verify_round_flops,
)
from .engine import (
    EngineConfig,
    EpisodeResult,
    RoundOutcome,
    SystemModel,
    localize,
    run_episode,
    sd_greedy_round,
    sd_reject_round,
    select_protocol,
    wisv_round,
)
from .head import HeadParams, TrainConfig, assemble, bce_loss, decide, forward, train
from .labeler import (
    Episode,
    MismatchRecord,
    RelabelConfig,
    RelabeledInstance,
    budget_of_csi,
    collect_traces,
    lambda_of_csi,
    relabel,
    smooth,
    soft_policy,
    solve_budget_exact,
)
from .metrics import MetricsSummary, aal, accuracy_proxy, e2e_latency, round_count, throughput
from .oracle import DraftBlock, EpisodeOracle, OracleConfig, TargetView, calibrate_p_match
from .wire import (
    LatencyBreakdown,
    WireConfig,
    comm_latency_fh,
    comm_latency_sh,
    feedback_bits,
    fh_uplink_bits,
    hidden_bits,
    reject_uplink_bits,
    sh_bits,
)

__version__ = "0.1.0"
