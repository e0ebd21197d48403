"""Closed-form per-round latency model and the compute/communication ratio
sweep.

Per round and method: uplink and downlink times are payload_elems *
bits_per_param / rate, client compute is the unit computing time tau_comp
scaled by the client's compute share (the split method's cut fraction; 1
for federated training; 0 for centralized training, whose server is
assumed infinitely fast). Server time is 0 throughout.
"""

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

METHODS = ("splitamc", "fedeamc", "centamc")

SWEEP_COLUMNS = ("method", "ratio", "t_ul", "t_dl", "t_client", "total")


@dataclass(frozen=True)
class LatencyConfig:
    bandwidth_hz: float
    gamma_ul_db: float
    payload_ul: int
    payload_dl: int
    gamma_dl_db: float | None = None  # None: R_DL = dl_rate_factor * R_UL
    dl_rate_factor: float = 10.0
    bits_per_param: float = 32.0
    tau_comp_s: float = 1e-3
    compute_share: float = 1.0  # lambda in [0, 1], cut-dependent for splitamc

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if self.bits_per_param <= 0:
            raise ValueError("bits per parameter must be positive")
        if self.tau_comp_s < 0:
            raise ValueError("tau_comp must be >= 0")
        if not 0.0 <= self.compute_share <= 1.0:
            raise ValueError("compute share must lie in [0, 1]")
        if self.payload_ul < 0 or self.payload_dl < 0:
            raise ValueError("payload element counts must be >= 0")

    def rate_ul(self) -> float:
        return rate(self.bandwidth_hz, self.gamma_ul_db)

    def rate_dl(self) -> float:
        if self.gamma_dl_db is not None:
            return rate(self.bandwidth_hz, self.gamma_dl_db)
        return self.dl_rate_factor * self.rate_ul()


@dataclass(frozen=True)
class LatencyBreakdown:
    t_ul: float
    t_dl: float
    t_client: float
    t_server: float

    @property
    def total(self) -> float:
        return self.t_ul + self.t_dl + self.t_client + self.t_server


def rate(bandwidth_hz: float, gamma_db: float) -> float:
    """Shannon rate BW * log2(1 + snr), with the SNR given in dB."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return bandwidth_hz * math.log2(1.0 + 10.0 ** (gamma_db / 10.0))


def comm_latency(num_params: int, bits_per_param: float, rate_bps: float) -> float:
    """Seconds to move num_params * bits_per_param bits at rate_bps."""
    if rate_bps <= 0:
        raise ValueError("rate must be positive")
    return num_params * bits_per_param / rate_bps


def round_latency(method: str, cfg: LatencyConfig) -> LatencyBreakdown:
    """Single-round latency of one method under the summary-table semantics."""
    if method not in METHODS:
        raise ValueError(f"unknown method: {method!r}")
    t_ul = comm_latency(cfg.payload_ul, cfg.bits_per_param, cfg.rate_ul())
    t_dl = comm_latency(cfg.payload_dl, cfg.bits_per_param, cfg.rate_dl())
    if method == "splitamc":
        t_client = cfg.compute_share * cfg.tau_comp_s
    elif method == "fedeamc":
        t_client = cfg.tau_comp_s
    else:  # centamc trains server-side only
        t_client = 0.0
    return LatencyBreakdown(t_ul=t_ul, t_dl=t_dl, t_client=t_client, t_server=0.0)


def parse_ratio(ratio) -> float:
    """tau_comp : tau_comm ratio, accepted as a number or an 'a:b' string."""
    if isinstance(ratio, str):
        comp, _, comm = ratio.partition(":")
        value = float(comp) / float(comm) if comm else float(comp)
    else:
        value = float(ratio)
    if value <= 0:
        raise ValueError(f"ratio must be positive, got {ratio!r}")
    return value


def sweep_ratio(entries, ratios, rounds: int) -> list[dict]:
    """Total K-round latency per (label, method, cfg) entry and ratio.

    For each ratio the unit computing time is set to ratio * tau_comm with
    tau_comm = 1/R_UL, so the ratio directly scales per-round client compute
    against the per-bit communication time.
    """
    rows = []
    for ratio in ratios:
        rho = parse_ratio(ratio)
        for label, method, cfg in entries:
            tau_comm = 1.0 / cfg.rate_ul()
            breakdown = round_latency(method, replace(cfg, tau_comp_s=rho * tau_comm))
            rows.append(
                {
                    "method": label,
                    "ratio": rho,
                    "t_ul": rounds * breakdown.t_ul,
                    "t_dl": rounds * breakdown.t_dl,
                    "t_client": rounds * breakdown.t_client,
                    "total": rounds * breakdown.total,
                }
            )
    return rows


def payloads_from_plan(plan, method: str, cut: int = 1, batch_size: int = 1):
    """(uplink, downlink) element counts per round, derived from the model.

    splitamc moves the cut-layer activation up and its gradient down;
    fedeamc moves the full parameter vector both ways; centamc moves raw
    pixels up and nothing down. batch_size=1 gives the per-sample counts
    used by the analytic ratio sweep; pass the training batch size to match
    the per-round counts logged by the trainers.
    """
    from . import nn

    if method == "splitamc":
        n = batch_size * nn.smashed_elems(plan, cut)
        return n, n
    if method == "fedeamc":
        p = nn.param_count(plan)
        return p, p
    if method == "centamc":
        grid = plan[0].in_shape[1]
        return batch_size * grid * grid, 0
    raise ValueError(f"unknown method: {method!r}")


def write_sweep_csv(rows, path) -> None:
    with open(Path(path), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["method"]]
                + [repr(float(row[k])) for k in SWEEP_COLUMNS[1:]]
            )
