"""Desk-scale simulator of split, federated, and centralized training for
automatic modulation classification over noisy analog links."""

__version__ = "0.1.0"

from .airlink import ChannelRealization, LinkBudget, draw_fading, noise_std_for_target_snr, snr_db, transmit
from .dataset import (
    ConstellationImage,
    Dataset,
    build_dataset,
    load_dataset,
    normalize_dataset,
    render_constellation,
    save_dataset,
)
from .latency import LatencyBreakdown, LatencyConfig, comm_latency, rate, round_latency, sweep_ratio
from .metrics import Cdf, pcc, value_cdf
from .modem import IqFrame, ModemConfig, empirical_snr, generate_frame, modulate
from .nn import BlockNet, SplitModel, cross_entropy, sgd_step, softmax, split_at, weighted_average
from .trainers import (
    RoundRecord,
    TrainConfig,
    evaluate,
    partition_clients,
    train,
    train_centamc,
    train_fedeamc,
    train_splitamc,
)
