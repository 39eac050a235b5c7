"""End-to-end experiment orchestration and artifact writing.

Everything an experiment run produces goes through this module so that the
pipeline is identical whether it is driven from the command line, a demo
script, or a test. All randomness derives from the config seed through named
streams; runs with equal configs produce byte-identical artifacts.

Artifacts written into the output directory:
    config-echo.json   fully resolved configuration that produced the run
    contracts.json     solved menu, per-level diagnostics, verification report
    partition.csv      per-client sample count, skew, quality, level, contract
    rounds.csv         per-round test loss/accuracy and admission counts
    ledger.csv         per-upload admission trail (async runs only)
    settlement.json    reward and energy books per client plus publisher totals
    model.bin          final global model checkpoint
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import baselines, nn
from .config import ExperimentConfig
from .contracts import (AccuracyCurveParams, ContractMenu, MarketModel,
                        QualityParams, data_quality, local_epochs,
                        quality_level, solve_contract, verify_contract)
from .datasets import (ClientDataset, Dataset, PartitionSpec, emd, flip_labels,
                       load_idx_pair, partition, split_holdout, synthetic_pair,
                       uniform_benchmark)
from .errors import ConfigurationError
from .seeds import (STREAM_DATA, STREAM_DELAY, STREAM_FLIP, STREAM_HOLDOUT,
                    STREAM_INIT, STREAM_PARTITION, child_seed)
from .simulation import (AsyncSimulation, ClientState, TimingParams,
                         settle_rewards, write_ledger_csv,
                         write_round_summary_csv)

BASELINE_ALGORITHMS = ("fedavg", "fedprox", "local-sgd")

_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class ClientProfile:
    """Static per-client descriptors fixed before any training happens."""

    client_id: int
    d_k: int
    emd: float
    theta: float
    level: int
    malicious: bool
    effort: float | None = None
    reward: float | None = None
    tau: int | None = None
    tau_clamped: bool | None = None


@dataclass(frozen=True)
class Prepared:
    """Everything a run needs, assembled deterministically from one config."""

    cfg: ExperimentConfig
    market: MarketModel
    quality: QualityParams
    curve: AccuracyCurveParams
    timing: TimingParams
    pool: Dataset
    val: Dataset
    test: Dataset
    client_data: list[ClientDataset]
    profiles: list[ClientProfile]
    menu: ContractMenu | None


def _resolve_mnist_path(explicit: str | None, default_name: str, field: str) -> str:
    if explicit is not None:
        if os.path.exists(explicit):
            return explicit
        raise ConfigurationError(f"dataset.{field}: file not found: {explicit}")
    root = os.environ.get("MNIST_DIR")
    if not root:
        raise ConfigurationError(
            f"dataset.{field} not set and MNIST_DIR is not in the environment")
    for name in (default_name, default_name + ".gz"):
        cand = os.path.join(root, name)
        if os.path.exists(cand):
            return cand
    raise ConfigurationError(
        f"dataset.{field}: neither {default_name} nor {default_name}.gz found "
        f"under MNIST_DIR={root}")


def _truncate(ds: Dataset, count: int | None) -> Dataset:
    if count is None or count >= len(ds):
        return ds
    if count < 1:
        raise ConfigurationError(f"subset size must be >= 1, got {count}")
    return Dataset(ds.features[:count], ds.labels[:count], ds.num_classes)


def build_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Materialize (train pool, test set) for a config."""
    dc = cfg.dataset
    if dc.kind == "synthetic":
        return synthetic_pair(dc.classes, dc.dim, dc.train_count, dc.test_count,
                              dc.spread, seed=child_seed(cfg.seed, STREAM_DATA))
    paths = {
        field: _resolve_mnist_path(getattr(dc, field), name, field)
        for field, name in _MNIST_FILES.items()
    }
    train = load_idx_pair(paths["train_images"], paths["train_labels"], num_classes=10)
    test = load_idx_pair(paths["test_images"], paths["test_labels"], num_classes=10)
    return _truncate(train, dc.subset), _truncate(test, dc.test_subset)


def select_attackers(profiles: list[ClientProfile], count: int) -> set[int]:
    """Pick `count` clients to corrupt, spread across quality levels.

    Selection walks the levels from highest to lowest, taking one client per
    level per pass (largest d_k first within a level), so attackers land in
    every stratum instead of clustering at the bottom. Deterministic.
    """
    if count == 0:
        return set()
    if count > len(profiles):
        raise ConfigurationError(
            f"cannot mark {count} attackers among {len(profiles)} clients")
    queues: dict[int, list[int]] = {}
    for p in sorted(profiles, key=lambda p: (-p.level, -p.d_k, p.client_id)):
        queues.setdefault(p.level, []).append(p.client_id)
    order: list[int] = []
    levels = sorted(queues, reverse=True)
    while len(order) < len(profiles):
        for lv in levels:
            if queues[lv]:
                order.append(queues[lv].pop(0))
    return set(order[:count])


def prepare(cfg: ExperimentConfig, solve_menu: bool = True) -> Prepared:
    """Build data, partition, quality levels, attackers, and (optionally) the menu."""
    market = cfg.market.to_market()
    qp = cfg.quality.to_params()
    acp = cfg.curve.to_params()
    timing = cfg.to_timing()

    train, test = build_dataset(cfg)
    val, pool = split_holdout(train, cfg.partition.val_fraction,
                              seed=child_seed(cfg.seed, STREAM_HOLDOUT))
    spec = PartitionSpec(
        num_clients=cfg.partition.num_clients,
        zipf_exponent=cfg.partition.zipf_exponent,
        dirichlet_alpha=cfg.partition.dirichlet_alpha,
        max_classes_per_client=cfg.partition.max_classes_per_client,
        seed=child_seed(cfg.seed, STREAM_PARTITION))
    clients = partition(pool, spec)

    benchmark = uniform_benchmark(pool.num_classes)
    base: list[ClientProfile] = []
    for cd in clients:
        skew = emd(cd.label_hist, benchmark)
        theta = data_quality(cd.d_k, skew, qp)
        base.append(ClientProfile(cd.client_id, cd.d_k, skew, theta,
                                  quality_level(theta, market), malicious=False))

    attackers = select_attackers(base, cfg.attack.count)
    # quality and level are assessed on the data as declared, before any
    # corruption: a label flipper looks exactly like an honest client upstream
    client_data = [
        flip_labels(cd, cfg.attack.flip_fraction,
                    seed=child_seed(cfg.seed, STREAM_FLIP, cd.client_id))
        if cd.client_id in attackers else cd
        for cd in clients
    ]

    menu = solve_contract(market, acp) if solve_menu else None
    profiles = []
    for p in base:
        if menu is not None:
            entry = menu.entry(p.level)
            tau = local_epochs(entry.effort, p.d_k)
            profiles.append(ClientProfile(
                p.client_id, p.d_k, p.emd, p.theta, p.level,
                malicious=p.client_id in attackers,
                effort=entry.effort, reward=entry.reward, tau=tau,
                tau_clamped=entry.effort < p.d_k))
        else:
            profiles.append(ClientProfile(
                p.client_id, p.d_k, p.emd, p.theta, p.level,
                malicious=p.client_id in attackers))

    return Prepared(cfg, market, qp, acp, timing, pool, val, test,
                    client_data, profiles, menu)


def make_client_states(prep: Prepared) -> list[ClientState]:
    if prep.menu is None:
        raise ConfigurationError("client states need a solved contract menu")
    states = []
    for cd, p in zip(prep.client_data, prep.profiles):
        rng = np.random.default_rng(
            child_seed(prep.cfg.seed, STREAM_DELAY, p.client_id))
        delay = float(rng.uniform(prep.timing.delay_lo, prep.timing.delay_hi))
        states.append(ClientState(
            client_id=p.client_id, level=p.level, theta=p.theta, data=cd,
            tau=p.tau, tau_clamped=p.tau_clamped, effort=p.effort,
            reward_rate=p.reward, per_epoch_delay=delay, malicious=p.malicious))
    return states


def _init_model(cfg: ExperimentConfig, input_dim: int, num_classes: int) -> nn.Model:
    dims = (input_dim, cfg.training.hidden1, cfg.training.hidden2, num_classes)
    return nn.init_model(dims, seed=child_seed(cfg.seed, STREAM_INIT))


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_config_echo(cfg: ExperimentConfig, out_dir) -> None:
    _dump_json(cfg.to_dict(), os.path.join(out_dir, "config-echo.json"))


def write_partition_csv(profiles: list[ClientProfile], path) -> None:
    full = profiles and profiles[0].effort is not None
    with open(path, "w") as fh:
        if full:
            fh.write("client_id,d_k,emd,theta,level,tau,tau_clamped,"
                     "effort,reward,malicious\n")
            for p in profiles:
                fh.write(f"{p.client_id},{p.d_k},{p.emd!r},{p.theta!r},{p.level},"
                         f"{p.tau},{int(p.tau_clamped)},{p.effort!r},{p.reward!r},"
                         f"{int(p.malicious)}\n")
        else:
            fh.write("client_id,d_k,emd,theta,level,malicious\n")
            for p in profiles:
                fh.write(f"{p.client_id},{p.d_k},{p.emd!r},{p.theta!r},{p.level},"
                         f"{int(p.malicious)}\n")


def _report_dict(menu: ContractMenu, market: MarketModel) -> dict:
    rep = verify_contract(menu, market)
    return {
        "ok": rep.ok,
        "ir": [float(v) for v in rep.ir],
        "binding_ir": list(rep.binding_ir),
        "binding_ic_down": [list(pair) for pair in rep.binding_ic_down],
        "violations": list(rep.violations),
    }


def write_contracts_json(menu: ContractMenu, market: MarketModel, path) -> None:
    _dump_json({"menu": menu.to_dict(), "verification": _report_dict(menu, market)},
               path)


def run_async_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Full pipeline: prepare, simulate, settle, and (optionally) write artifacts.

    Returns the settlement dict extended with a `history` list of
    (round, test_loss, test_accuracy, admitted_count) rows.
    """
    prep = prepare(cfg, solve_menu=True)
    states = make_client_states(prep)
    model = _init_model(cfg, prep.pool.features.shape[1], prep.pool.num_classes)
    sim = AsyncSimulation(
        model, states, prep.market, prep.timing, a=cfg.gate.a,
        epsilon=cfg.gate.epsilon, phi=cfg.gate.phi, val_data=prep.val,
        test_data=prep.test, master_seed=cfg.seed, lr=cfg.training.lr,
        batch_size=cfg.training.batch_size)
    ledgers = sim.run(cfg.rounds)
    result = settle_rewards(ledgers, sim.clients, prep.menu, prep.market)
    result["history"] = [
        (lg.round, lg.test_loss, lg.test_accuracy, lg.admitted_count)
        for lg in ledgers
    ]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_config_echo(cfg, out_dir)
        write_contracts_json(prep.menu, prep.market,
                             os.path.join(out_dir, "contracts.json"))
        write_partition_csv(prep.profiles, os.path.join(out_dir, "partition.csv"))
        write_round_summary_csv(ledgers, os.path.join(out_dir, "rounds.csv"))
        write_ledger_csv(ledgers, os.path.join(out_dir, "ledger.csv"))
        settlement = {k: v for k, v in result.items() if k != "history"}
        _dump_json(settlement, os.path.join(out_dir, "settlement.json"))
        nn.save_model(sim.model, os.path.join(out_dir, "model.bin"))
    return result


def run_baseline_experiment(cfg: ExperimentConfig, algorithm: str,
                            out_dir=None) -> dict:
    """Run a synchronous baseline on the same population as the async pipeline.

    Baselines share the partition, attacker set, and model init with the
    async run for the same config, so score differences come from the
    algorithm alone. They train cfg.baseline.local_epochs per round with no
    admission gate.
    """
    if algorithm not in BASELINE_ALGORITHMS:
        raise ConfigurationError(
            f"unknown baseline {algorithm!r}; choose from {BASELINE_ALGORITHMS}")
    prep = prepare(cfg, solve_menu=False)
    model = _init_model(cfg, prep.pool.features.shape[1], prep.pool.num_classes)
    epochs = cfg.baseline.local_epochs
    if algorithm == "local-sgd":
        final, history = baselines.local_sgd_run(
            model, prep.pool, cfg.rounds, epochs, cfg.training.lr,
            cfg.training.batch_size, cfg.seed, prep.test)
    elif algorithm == "fedprox":
        final, history = baselines.run_fedprox(
            model, prep.client_data, cfg.rounds, epochs, cfg.training.lr,
            cfg.training.batch_size, cfg.seed, prep.test, mu=cfg.baseline.prox_mu)
    else:
        final, history = baselines.run_fedavg(
            model, prep.client_data, cfg.rounds, epochs, cfg.training.lr,
            cfg.training.batch_size, cfg.seed, prep.test)
    last = history[-1]
    result = {
        "algorithm": algorithm,
        "rounds": cfg.rounds,
        "final_test_loss": last[1],
        "final_test_accuracy": last[2],
        "history": history,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_config_echo(cfg, out_dir)
        write_partition_csv(prep.profiles, os.path.join(out_dir, "partition.csv"))
        with open(os.path.join(out_dir, "rounds.csv"), "w") as fh:
            fh.write("round,test_loss,test_accuracy,participants\n")
            for r, loss, acc, n in history:
                fh.write(f"{r},{loss!r},{acc!r},{n}\n")
        _dump_json({k: v for k, v in result.items() if k != "history"},
                   os.path.join(out_dir, "summary.json"))
        nn.save_model(final, os.path.join(out_dir, "model.bin"))
    return result


def partition_report(cfg: ExperimentConfig, out_path=None) -> list[ClientProfile]:
    """Describe the partition a config would produce, without training."""
    prep = prepare(cfg, solve_menu=False)
    if out_path is not None:
        write_partition_csv(prep.profiles, out_path)
    return prep.profiles
