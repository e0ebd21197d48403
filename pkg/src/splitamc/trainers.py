"""The three training protocols over constellation-image data.

splitamc: round-robin split training. Each round one client computes the
cut-layer activation for a batch, sends it uplink through the analog link,
the server finishes the forward pass, updates its segment, and returns the
cut-layer gradient downlink; the client chains that gradient (scaled by the
round's fading coefficient) through its segment, updates it, and hands the
segment to the next client error-free.

fedeamc: per round the server broadcasts the full model, every client runs
local SGD steps on its shard, uploads its model through the link, and the
server takes a dataset-size-weighted average.

centamc: clients upload their (noisy) pixels once; the server then trains
the unsplit model with plain SGD on the pooled data.

Batch sampling, initialization, channel draws and evaluation each use an
independent derived RNG stream, so noiseless runs of different protocols on
the same seed see identical batches, and mid-training evaluations never
perturb the training trajectory.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import airlink, metrics, nn
from .seeding import TAG_BATCH, TAG_CHANNEL, TAG_EVAL, TAG_INIT, TAG_SHARD, rng_from

METHODS = ("splitamc", "fedeamc", "centamc")
INFERENCE_MODES = ("local_full_model", "remote_smashed")


class NonFiniteLossError(RuntimeError):
    """Training hit a non-finite loss; carries the partial record log."""

    def __init__(self, round_index: int, records):
        super().__init__(f"non-finite loss at round {round_index}")
        self.round_index = round_index
        self.records = records


@dataclass(frozen=True)
class TrainConfig:
    method: str
    link: airlink.LinkBudget
    num_clients: int = 2
    batch_size: int = 32
    rounds: int = 2000
    eta: float = 0.004
    cut: int = 1
    local_steps: int = 1
    eval_every: int = 0  # 0: no periodic evaluation
    seed: int = 0
    inference_mode: str = "local_full_model"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method: {self.method!r}")
        if self.num_clients < 1 or self.batch_size < 1 or self.rounds < 1:
            raise ValueError("num_clients, batch_size and rounds must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if self.inference_mode not in INFERENCE_MODES:
            raise ValueError(f"unknown inference mode: {self.inference_mode!r}")


@dataclass
class RoundRecord:
    round: int
    active_client: int  # -1 when all clients act in the round
    loss: float
    ul_payload_elems: int
    dl_payload_elems: int
    h_realization: float
    eval_accuracy: float | None = None


RECORD_COLUMNS = (
    "round", "active_client", "loss", "ul_payload_elems",
    "dl_payload_elems", "h_realization", "eval_accuracy",
)


def write_records_csv(records, path) -> None:
    """Round records as CSV; floats use repr so parses round-trip exactly."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.round,
                    r.active_client,
                    repr(float(r.loss)),
                    r.ul_payload_elems,
                    r.dl_payload_elems,
                    repr(float(r.h_realization)),
                    "" if r.eval_accuracy is None else repr(float(r.eval_accuracy)),
                ]
            )


def partition_clients(pixels: np.ndarray, labels: np.ndarray, num_clients: int, seed: int):
    """Balanced IID shards: a seeded shuffle cut into equal contiguous slices.

    A remainder of len(pixels) mod num_clients is dropped so shard sizes are
    equal. Pooling the shards back in client order reproduces the (shuffled)
    dataset, which keeps single-client runs comparable across protocols.
    """
    n = len(pixels)
    per = n // num_clients
    if per == 0:
        raise ValueError("fewer samples than clients")
    order = rng_from(seed, TAG_SHARD).permutation(n)
    return [
        (pixels[order[m * per : (m + 1) * per]], labels[order[m * per : (m + 1) * per]])
        for m in range(num_clients)
    ]


def pool_shards(shards):
    return (
        np.concatenate([px for px, _ in shards]),
        np.concatenate([lb for _, lb in shards]),
    )


def _as_inputs(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64)[:, None, :, :]


def _client_arrays(cfg: TrainConfig, client_data):
    if len(client_data) != cfg.num_clients:
        raise ValueError(
            f"got {len(client_data)} client shards for num_clients={cfg.num_clients}"
        )
    return [(_as_inputs(px), np.asarray(lb, dtype=np.int64)) for px, lb in client_data]


def _check_finite(loss: float, k: int, records):
    if not math.isfinite(loss):
        raise NonFiniteLossError(k, records)


def _full_sgd_step(net: nn.BlockNet, x, y, eta: float) -> float:
    logits, caches = net.forward_logits(x)
    probs = nn.softmax(logits)
    loss = nn.cross_entropy(probs, y)
    grad_logits = nn.cross_entropy_grad_logits(probs, y)
    _, grad = net.backward_range(grad_logits, caches, 0, len(net.layers))
    net.apply_gradient(grad, eta)
    return loss


def _maybe_eval(cfg: TrainConfig, model, test_data, k: int) -> float | None:
    if cfg.eval_every <= 0 or test_data is None or (k + 1) % cfg.eval_every != 0:
        return None
    return evaluate(
        model, test_data, cfg.inference_mode, cfg.link,
        rng_from(cfg.seed, TAG_EVAL, k), batch_size=cfg.batch_size,
    )


def _build_net(cfg: TrainConfig, grid: int) -> nn.BlockNet:
    return nn.BlockNet(grid, seed=rng_from(cfg.seed, TAG_INIT).integers(0, 2**63))


def train_splitamc(cfg: TrainConfig, client_data, test_data=None):
    """Round-robin split training; returns (SplitModel, round records)."""
    if cfg.method != "splitamc":
        raise ValueError("config method must be 'splitamc'")
    data = _client_arrays(cfg, client_data)
    grid = data[0][0].shape[-1]
    model = nn.SplitModel(_build_net(cfg, grid), cfg.cut)
    smashed = nn.smashed_elems(model.net.plan, cfg.cut)
    m_clients = cfg.num_clients
    lowers = [model.get_lower() for _ in range(m_clients)]
    batch_rngs = [rng_from(cfg.seed, TAG_BATCH, m) for m in range(m_clients)]
    chan_rng = rng_from(cfg.seed, TAG_CHANNEL)

    records: list[RoundRecord] = []
    for k in range(cfg.rounds):
        m = k % m_clients
        model.set_lower(lowers[m])
        x_all, lb_all = data[m]
        idx = batch_rngs[m].integers(0, len(x_all), size=cfg.batch_size)
        x, y = x_all[idx], nn.one_hot(lb_all[idx])

        s = model.forward_lower(x)
        s_bar, real_ul = airlink.transmit(s, cfg.link, "UL", chan_rng)
        probs = model.forward_upper(s_bar)
        loss = nn.cross_entropy(probs, y)
        _check_finite(loss, k, records)

        g_ws, g_sbar = model.backward_upper(y)
        model.apply_gradients(None, g_ws, cfg.eta)
        g_sbar_rx, _ = airlink.transmit(g_sbar, cfg.link, "DL", chan_rng)
        g_wc = model.backward_lower(real_ul.h * g_sbar_rx)
        model.apply_gradients(g_wc, None, cfg.eta)

        lowers[m] = model.get_lower()
        lowers[(m + 1) % m_clients] = lowers[m].copy()  # segment hand-off

        records.append(
            RoundRecord(
                round=k, active_client=m, loss=loss,
                ul_payload_elems=cfg.batch_size * smashed,
                dl_payload_elems=cfg.batch_size * smashed,
                h_realization=real_ul.h,
                eval_accuracy=_maybe_eval(cfg, model, test_data, k),
            )
        )
    return model, records


def train_fedeamc(cfg: TrainConfig, client_data, test_data=None):
    """Federated averaging rounds; returns (BlockNet, round records)."""
    if cfg.method != "fedeamc":
        raise ValueError("config method must be 'fedeamc'")
    data = _client_arrays(cfg, client_data)
    grid = data[0][0].shape[-1]
    net = _build_net(cfg, grid)
    n_params = net.theta.size
    sizes = [len(px) for px, _ in data]
    batch_rngs = [rng_from(cfg.seed, TAG_BATCH, m) for m in range(cfg.num_clients)]
    chan_rng = rng_from(cfg.seed, TAG_CHANNEL)

    w_global = net.get_params()
    records: list[RoundRecord] = []
    for k in range(cfg.rounds):
        uploads, h_vals, losses = [], [], []
        for m in range(cfg.num_clients):
            w_rx, _ = airlink.transmit(w_global, cfg.link, "DL", chan_rng)
            net.set_params(w_rx)
            x_all, lb_all = data[m]
            for _ in range(cfg.local_steps):
                idx = batch_rngs[m].integers(0, len(x_all), size=cfg.batch_size)
                loss = _full_sgd_step(net, x_all[idx], nn.one_hot(lb_all[idx]), cfg.eta)
                _check_finite(loss, k, records)
                losses.append(loss)
            w_up, real = airlink.transmit(net.get_params(), cfg.link, "UL", chan_rng)
            uploads.append(w_up)
            h_vals.append(real.h)
        w_global = nn.weighted_average(uploads, sizes)
        net.set_params(w_global)
        records.append(
            RoundRecord(
                round=k, active_client=-1, loss=float(np.mean(losses)),
                ul_payload_elems=n_params, dl_payload_elems=n_params,
                h_realization=float(np.mean(h_vals)),
                eval_accuracy=_maybe_eval(cfg, net, test_data, k),
            )
        )
    return net, records


def train_centamc(cfg: TrainConfig, client_data, test_data=None):
    """Upload-once centralized training; returns (BlockNet, round records)."""
    if cfg.method != "centamc":
        raise ValueError("config method must be 'centamc'")
    data = _client_arrays(cfg, client_data)
    grid = data[0][0].shape[-1]
    net = _build_net(cfg, grid)
    chan_rng = rng_from(cfg.seed, TAG_CHANNEL)

    received, upload_hs, uploaded_elems = [], [], 0
    for px, _ in data:
        noisy, real = airlink.transmit(px, cfg.link, "UL", chan_rng)
        received.append(noisy)
        upload_hs.append(real.h)
        uploaded_elems += px.size
    pooled_x = np.concatenate(received)
    pooled_lb = np.concatenate([lb for _, lb in data])

    batch_rng = rng_from(cfg.seed, TAG_BATCH, 0)
    records: list[RoundRecord] = []
    for k in range(cfg.rounds):
        idx = batch_rng.integers(0, len(pooled_x), size=cfg.batch_size)
        loss = _full_sgd_step(net, pooled_x[idx], nn.one_hot(pooled_lb[idx]), cfg.eta)
        _check_finite(loss, k, records)
        records.append(
            RoundRecord(
                round=k, active_client=-1, loss=loss,
                ul_payload_elems=uploaded_elems if k == 0 else 0,
                dl_payload_elems=0,
                h_realization=float(np.mean(upload_hs)) if k == 0 else 1.0,
                eval_accuracy=_maybe_eval(cfg, net, test_data, k),
            )
        )
    return net, records


def train(cfg: TrainConfig, client_data, test_data=None):
    fn = {"splitamc": train_splitamc, "fedeamc": train_fedeamc, "centamc": train_centamc}
    return fn[cfg.method](cfg, client_data, test_data)


def evaluate(model, test_data, mode: str, link, rng, batch_size: int = 64) -> float:
    """Correct-classification probability (percent) on (pixels, labels).

    local_full_model runs the full network client-side without a channel;
    remote_smashed sends each batch's cut-layer activation uplink through
    the link before the server-side segment.
    """
    if mode not in INFERENCE_MODES:
        raise ValueError(f"unknown inference mode: {mode!r}")
    pixels, labels = test_data
    if len(pixels) == 0:
        raise ValueError("empty test set")
    x_all = _as_inputs(pixels)
    labels = np.asarray(labels, dtype=np.int64)
    net = model.net if isinstance(model, nn.SplitModel) else model
    correct = 0
    for lo in range(0, len(x_all), batch_size):
        x = x_all[lo : lo + batch_size]
        if mode == "local_full_model":
            probs = net.predict_proba(x)
        else:
            if not isinstance(model, nn.SplitModel):
                raise ValueError("remote_smashed inference needs a split model")
            s = model.forward_lower(x)
            s_bar, _ = airlink.transmit(s, link, "UL", rng)
            probs = model.forward_upper(s_bar)
        correct += int((probs.argmax(axis=1) == labels[lo : lo + batch_size]).sum())
    return metrics.pcc(correct, len(x_all))
