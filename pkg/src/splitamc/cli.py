"""Experiment orchestration CLI.

Subcommands: gen-data, train, latency, compare. All take a JSON config
file, optional `--set dotted.key=value` overrides, and write everything
under `--out DIR`. Exit codes: 0 ok, 2 invalid config, 3 I/O failure,
4 missing dataset, 5 training aborted on a non-finite loss.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import airlink, config, dataset, latency, metrics, modem, nn, trainers
from .seeding import TAG_COMPARE, TAG_DATA, TAG_TEST, derive_seed, rng_from

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING_DATASET = 4
EXIT_NONFINITE_LOSS = 5


class MissingDatasetError(FileNotFoundError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# config plumbing


def _resolved_config(args) -> dict:
    cfg = config.load_config(args.config)
    if args.set:
        cfg = config.apply_overrides(cfg, args.set)
    return cfg


def _link_budget(cfg: dict) -> airlink.LinkBudget:
    lk = cfg["link"]
    common = dict(
        fading_mode=lk["fading_mode"],
        ul_noisy=lk["ul_noisy"],
        dl_noisy=lk["dl_noisy"],
    )
    if lk["snr_db"] is not None:
        return airlink.LinkBudget.for_snr(
            lk["snr_db"], lk["transmit_power_w"], lk["distance_m"], lk["pathloss_alpha"], **common
        )
    if lk["noise_variance_w"] is None:
        raise config.ConfigError("config key 'link.snr_db' or 'link.noise_variance_w' required")
    return airlink.LinkBudget(
        lk["transmit_power_w"], lk["distance_m"], lk["pathloss_alpha"],
        lk["noise_variance_w"], **common,
    )


def _train_config(cfg: dict, link: airlink.LinkBudget, **overrides) -> trainers.TrainConfig:
    tr = cfg["train"]
    kwargs = dict(
        method=tr["method"],
        link=link,
        num_clients=int(tr["num_clients"]),
        batch_size=int(tr["batch_size"]),
        rounds=int(tr["rounds"]),
        eta=tr["eta"],
        cut=int(tr["cut"]),
        local_steps=int(tr["local_steps"]),
        eval_every=int(tr["eval_every"]),
        seed=int(cfg["seed"]),
        inference_mode=tr["inference_mode"],
    )
    kwargs.update(overrides)
    return trainers.TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# datasets


def data_dir(out: Path, gamma_db: float) -> Path:
    return out / "data" / f"gdata_{gamma_db:g}dB"


def _dataset_gammas(cfg: dict) -> list[float]:
    gammas = {float(cfg["dataset"]["gamma_data_db"])}
    gammas.update(float(g) for g in cfg["compare"]["gamma_data_db"])
    return sorted(gammas)


def _build_pair(cfg: dict, gamma_db: float):
    ds_cfg = cfg["dataset"]
    milli = int(round(gamma_db * 1000))
    base = modem.ModemConfig(
        scheme="qpsk",
        num_symbols=int(ds_cfg["samples_per_frame"]),
        gamma_data_db=gamma_db,
        f0t=ds_cfg["f0t"],
        phase_jitter_std=ds_cfg["phase_jitter_std"],
        fading=ds_cfg["fading"],
    )
    pair = {}
    for split, frames, master in (
        ("train", int(ds_cfg["frames_per_class"]), derive_seed(cfg["seed"], TAG_DATA, milli)),
        ("test", int(ds_cfg["test_frames_per_class"]), derive_seed(cfg["seed"], TAG_DATA, milli, TAG_TEST)),
    ):
        ds = dataset.build_dataset(
            base, frames, int(ds_cfg["grid"]), master, half_range=ds_cfg["half_range"]
        )
        if ds_cfg["normalize"]:
            ds = dataset.normalize_dataset(
                ds, ds_cfg["normalize_mean"], ds_cfg["normalize_variance"]
            )
        pair[split] = ds
    return pair


def _load_pair(out: Path, gamma_db: float):
    root = data_dir(out, gamma_db)
    if not (root / "train" / "manifest.json").is_file():
        raise MissingDatasetError(
            f"no dataset for gamma_data = {gamma_db:g} dB under {root}; run gen-data first"
        )
    return {
        "train": dataset.load_dataset(root / "train"),
        "test": dataset.load_dataset(root / "test"),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out)
    for gamma in _dataset_gammas(cfg):
        pair = _build_pair(cfg, gamma)
        for split, ds in pair.items():
            dataset.save_dataset(ds, data_dir(out, gamma) / split)
        print(f"wrote dataset for gamma_data = {gamma:g} dB -> {data_dir(out, gamma)}")
    config.dump_config(cfg, out / "data" / "config.json")
    return EXIT_OK


def _run_training(cfg: dict, pair, link, tcfg: trainers.TrainConfig):
    train_ds, test_ds = pair["train"], pair["test"]
    shards = trainers.partition_clients(
        train_ds.pixels, train_ds.labels, tcfg.num_clients, tcfg.seed
    )
    test_data = (test_ds.pixels, test_ds.labels)
    model, records = trainers.train(tcfg, shards, test_data)
    return model, records, test_data


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out)
    link = _link_budget(cfg)
    tcfg = _train_config(cfg, link)
    pair = _load_pair(out, float(cfg["dataset"]["gamma_data_db"]))
    run_dir = out / f"run_{tcfg.method}"
    run_dir.mkdir(parents=True, exist_ok=True)
    config.dump_config(cfg, run_dir / "config.json")

    try:
        model, records, test_data = _run_training(cfg, pair, link, tcfg)
    except trainers.NonFiniteLossError as exc:
        trainers.write_records_csv(exc.records, run_dir / "records.csv")
        diagnostic = {"aborted": True, "non_finite_loss_round": exc.round_index}
        (run_dir / "summary.json").write_text(json.dumps(diagnostic, indent=2) + "\n")
        print(f"error: non-finite loss at round {exc.round_index}", file=sys.stderr)
        return EXIT_NONFINITE_LOSS

    trainers.write_records_csv(records, run_dir / "records.csv")
    metrics.export_learning_curve(
        records, run_dir / "learning_curve.csv", svg_path=run_dir / "learning_curve.svg"
    )

    net = model.net if isinstance(model, nn.SplitModel) else model
    nn.save_model(
        net, run_dir / "model.ckpt",
        cut=tcfg.cut if tcfg.method == "splitamc" else None, steps=tcfg.rounds,
    )

    eval_rng = rng_from(tcfg.seed, TAG_COMPARE, 0xF1AA1)
    pcc_local = trainers.evaluate(model, test_data, "local_full_model", link, eval_rng)
    pcc_remote = None
    if isinstance(model, nn.SplitModel):
        pcc_remote = trainers.evaluate(model, test_data, "remote_smashed", link, eval_rng)

    summary = {
        "method": tcfg.method,
        "seed": tcfg.seed,
        "rounds": tcfg.rounds,
        "aggregation_count": tcfg.rounds if tcfg.method == "fedeamc" else None,
        "final_loss": records[-1].loss,
        "pcc": {"local_full_model": pcc_local, "remote_smashed": pcc_remote},
        "round_latency": _round_latency_summary(cfg, tcfg, net.plan),
        "config": cfg,
    }
    if isinstance(model, nn.SplitModel):
        summary["scale_separation"] = _scale_report(model, test_data, run_dir)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"run complete: {run_dir} (P_cc local = {pcc_local:.1f}%)")
    return EXIT_OK


def _round_latency_summary(cfg: dict, tcfg: trainers.TrainConfig, plan) -> dict:
    ul, dl = latency.payloads_from_plan(plan, tcfg.method, tcfg.cut, tcfg.batch_size)
    lcfg = _latency_config(cfg, plan, tcfg.method, tcfg.cut, payloads=(ul, dl))
    breakdown = latency.round_latency(tcfg.method, lcfg)
    return {
        "t_ul": breakdown.t_ul,
        "t_dl": breakdown.t_dl,
        "t_client": breakdown.t_client,
        "total": breakdown.total,
        "payload_ul_elems": ul,
        "payload_dl_elems": dl,
    }


def _latency_config(cfg, plan, method, cut, payloads) -> latency.LatencyConfig:
    lt = cfg["latency"]
    share = nn.compute_share(plan, cut) if method == "splitamc" else 1.0
    return latency.LatencyConfig(
        bandwidth_hz=lt["bandwidth_hz"],
        gamma_ul_db=lt["gamma_ul_db"],
        gamma_dl_db=lt["gamma_dl_db"],
        dl_rate_factor=lt["dl_rate_factor"],
        bits_per_param=lt["bits_per_param"],
        tau_comp_s=lt["tau_comp_s"],
        compute_share=share,
        payload_ul=payloads[0],
        payload_dl=payloads[1],
    )


def _scale_report(model: nn.SplitModel, test_data, run_dir: Path) -> dict:
    x = trainers._as_inputs(test_data[0][:64])
    smashed = model.forward_lower(x)
    report = metrics.scale_separation(smashed, model.get_lower())
    metrics.write_cdf_csv(metrics.value_cdf(smashed), run_dir / "cdf_smashed.csv")
    metrics.write_cdf_csv(metrics.value_cdf(model.get_lower()), run_dir / "cdf_weights.csv")
    return report


def cmd_latency(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out)
    lt = cfg["latency"]
    plan = nn.layer_plan(int(cfg["dataset"]["grid"]))
    cuts = [int(c) for c in lt["cuts"]]

    # One uplink/downlink payload is shared by all split-method rows (the
    # cut moves the compute split, not the modeled activation size); counts
    # are per sample.
    ref_payload = latency.payloads_from_plan(plan, "splitamc", cuts[0], batch_size=1)
    entries = []
    for cut in cuts:
        label = f"splitamc_cut{cut}" if len(cuts) > 1 else "splitamc"
        entries.append(
            (label, "splitamc", _latency_config(cfg, plan, "splitamc", cut, ref_payload))
        )
    for method in ("fedeamc", "centamc"):
        payloads = latency.payloads_from_plan(plan, method, batch_size=1)
        entries.append((method, method, _latency_config(cfg, plan, method, 1, payloads)))

    rounds = int(lt["rounds"] if lt["rounds"] is not None else cfg["train"]["rounds"])
    rows = latency.sweep_ratio(entries, lt["ratios"], rounds)
    out.mkdir(parents=True, exist_ok=True)
    latency.write_sweep_csv(rows, out / "latency_sweep.csv")
    config.dump_config(cfg, out / "latency_config.json")
    print(f"wrote {len(rows)} sweep rows -> {out / 'latency_sweep.csv'}")
    return EXIT_OK


def _compare_cell(cfg: dict, out_str: str, method: str, gamma: float, snr_db: float,
                  fading: str, seed: int) -> float:
    out = Path(out_str)
    pair = _load_pair(out, gamma)
    lk = cfg["link"]
    link = airlink.LinkBudget.for_snr(
        snr_db, lk["transmit_power_w"], lk["distance_m"], lk["pathloss_alpha"],
        fading_mode=fading, ul_noisy=lk["ul_noisy"], dl_noisy=lk["dl_noisy"],
    )
    tcfg = _train_config(cfg, link, method=method, seed=seed, eval_every=0)
    model, _, test_data = _run_training(cfg, pair, link, tcfg)
    return trainers.evaluate(
        model, test_data, "local_full_model", link, rng_from(seed, TAG_COMPARE)
    )


def cmd_compare(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out)
    cp = cfg["compare"]
    for gamma in cp["gamma_data_db"]:
        _load_pair(out, float(gamma))  # fail fast on missing datasets

    cells = []
    for mi, method in enumerate(cp["methods"]):
        for gi, gamma in enumerate(cp["gamma_data_db"]):
            for si, snr in enumerate(cp["channel_snr_db"]):
                for fi, fading in enumerate(cp["fading_modes"]):
                    seeds = [
                        derive_seed(cfg["seed"], TAG_COMPARE, mi, gi, si, fi, s)
                        for s in range(int(cp["seeds"]))
                    ]
                    cells.append((method, float(gamma), float(snr), fading, seeds))

    tasks = [
        (cfg, str(out), method, gamma, snr, fading, seed)
        for method, gamma, snr, fading, seeds in cells
        for seed in seeds
    ]
    workers = int(os.environ.get("SPLITAMC_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_compare_cell_star, tasks))
    else:
        results = [_compare_cell_star(t) for t in tasks]

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["method", "gamma_data_db", "channel_snr_db", "fading_mode",
             "n_seeds", "pcc_mean", "pcc_std"]
        )
        pos = 0
        for method, gamma, snr, fading, seeds in cells:
            vals = np.array(results[pos : pos + len(seeds)])
            pos += len(seeds)
            writer.writerow(
                [method, _fmt(gamma), _fmt(snr), fading, len(seeds),
                 _fmt(vals.mean()), _fmt(vals.std())]
            )
    config.dump_config(cfg, out / "compare_config.json")
    print(f"wrote {len(cells)} comparison cells -> {out / 'compare.csv'}")
    return EXIT_OK


def _compare_cell_star(task):
    return _compare_cell(*task)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitamc",
        description="Split/federated/centralized modulation-classification experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
        ("gen-data", cmd_gen_data, "generate constellation-image datasets"),
        ("train", cmd_train, "run one training protocol"),
        ("latency", cmd_latency, "analytic latency ratio sweep"),
        ("compare", cmd_compare, "P_cc grid over methods, SNRs and fading"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("config", help="path to the JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config value by dotted path (JSON-parsed)",
        )
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except MissingDatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATASET
    except dataset.DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATASET
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
