"""Asynchronous training loop with staleness-aware, quality-gated admission.

Two clocks run side by side. The simulated clock drives scheduling: each
client's training cycle occupies tau * per_epoch_delay simulated seconds
(communication is folded into the per-epoch delay, so it adds no simulated
time of its own), and the server aggregates once per delta_t window. The
analytic clock never advances anything; it prices each cycle at
tau * c * d / f seconds and tau * xi * c * d * f^2 + E_com energy units for
the settlement books.

Round t covers the window (t * delta_t, (t + 1) * delta_t]. Clients whose
cycles finish inside the window form the upload set. Each upload is scored
by q = (global validation loss at its base round - its final-epoch training
loss) * theta * (staleness + 1)^(-epsilon), filtered per level by a
mean/median spread rule, and the survivors' deltas are applied to the
current global model with weights proportional to q. Every uploader, kept
or filtered, receives the fresh global model and starts a new cycle, so a
rejected client is never stranded on a stale base.

Execution is single-threaded and clients are always visited in ascending
client id, which makes every artifact byte-reproducible for a given seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .contracts import ContractMenu, MarketModel
from .datasets import ClientDataset, Dataset
from .errors import ConfigurationError
from .seeds import STREAM_TRAIN, child_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimingParams:
    """Cost constants plus the simulated-delay distribution."""

    c: float = 5.0
    f: float = 1.0
    xi: float = 2.0
    t_com: float = 10.0
    e_com: float = 20.0
    delay_lo: float = 0.5
    delay_hi: float = 2.0
    delta_t: float = 1.0

    def __post_init__(self):
        if self.c <= 0 or self.f <= 0 or self.xi <= 0:
            raise ConfigurationError("c, f, xi must be positive")
        if not 0 < self.delay_lo <= self.delay_hi:
            raise ConfigurationError(
                f"need 0 < delay_lo <= delay_hi, got ({self.delay_lo}, {self.delay_hi})")
        if self.delta_t <= 0:
            raise ConfigurationError(f"delta_t must be positive, got {self.delta_t}")

    @classmethod
    def from_market(cls, market: MarketModel, delay_lo: float = 0.5,
                    delay_hi: float = 2.0, delta_t: float = 1.0) -> "TimingParams":
        return cls(c=market.c, f=market.f, xi=market.xi, t_com=market.t_com,
                   e_com=market.e_com, delay_lo=delay_lo, delay_hi=delay_hi,
                   delta_t=delta_t)


@dataclass
class ClientState:
    """Mutable per-client bookkeeping carried across rounds."""

    client_id: int
    level: int
    theta: float
    data: ClientDataset
    tau: int
    tau_clamped: bool
    effort: float
    reward_rate: float
    per_epoch_delay: float
    malicious: bool = False
    received_round: int = 0
    busy_until: float = 0.0
    pending_delta: np.ndarray | None = None
    pending_loss: float = math.nan
    cumulative_energy: float = 0.0
    rewards_earned: float = 0.0
    rewards_withheld: float = 0.0
    admitted_count: int = 0
    rejected_count: int = 0


@dataclass(frozen=True)
class RoundCosts:
    sim_seconds: float
    analytic_compute_seconds: float
    energy: float


@dataclass(frozen=True)
class UploadRecord:
    client_id: int
    level: int
    staleness: int
    m: float
    q: float
    sim_time: float
    admitted: bool = False
    alpha: float = 0.0


@dataclass(frozen=True)
class LevelStats:
    count: int
    mean: float
    median: float
    std: float
    threshold: float
    tight_branch: bool


@dataclass(frozen=True)
class AccessDecision:
    admitted: tuple[int, ...]
    alphas: dict
    removed_by_filter: tuple[int, ...]
    removed_nonpositive: tuple[int, ...]
    level_stats: dict
    no_op: bool


@dataclass(frozen=True)
class RoundLedger:
    round: int
    time_end: float
    uploads: tuple[UploadRecord, ...]
    level_stats: dict
    admitted_count: int
    no_op: bool
    val_loss: float
    test_loss: float
    test_accuracy: float


def round_costs(client: ClientState, tp: TimingParams) -> RoundCosts:
    """Price one full training cycle for a client.

    Simulated wall time is tau * per_epoch_delay (communication adds no
    simulated seconds). The analytic books record tau * c * d / f compute
    seconds and tau * xi * c * d * f^2 + E_com energy units.
    """
    d = client.data.d_k
    sim = client.tau * client.per_epoch_delay
    analytic = client.tau * tp.c * d / tp.f
    energy = client.tau * tp.xi * tp.c * d * tp.f ** 2 + tp.e_com
    return RoundCosts(sim, analytic, energy)


def loss_reduction(base_loss: float, new_loss: float) -> float:
    """Improvement over the base model's loss; negative when training hurt."""
    return base_loss - new_loss


def access_indicator(m: float, theta: float, staleness: int, epsilon: float) -> float:
    """Contribution score: loss reduction scaled by quality and staleness decay."""
    if staleness < 0:
        raise ConfigurationError(f"staleness must be >= 0, got {staleness}")
    if not 0 < theta <= 1:
        raise ConfigurationError(f"theta must be in (0, 1], got {theta}")
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be >= 0, got {epsilon}")
    return m * theta * (staleness + 1) ** (-epsilon)


def access_control(entries: list[tuple[int, int, float]], a: float,
                   phi: float) -> AccessDecision:
    """Filter upload scores level by level, then weight the survivors.

    entries: (client_id, level, q) triples for one round's uploads.

    Within each level the filter compares the mean and median of the level's
    scores. A gap above `a` signals contamination, so anything below
    mean - std is removed; otherwise only extreme outliers below
    mean - phi * std are removed. Statistics use the population std. After
    the per-level pass, survivors with q <= 0 are dropped as well, since a
    nonpositive score would turn aggregation weights meaningless. Weights
    are q / sum(q) over all remaining uploads, across levels. If nothing
    survives the round is a no-op.
    """
    if a < 0 or phi < 0:
        raise ConfigurationError("a and phi must be nonnegative")
    by_level: dict[int, list[tuple[int, float]]] = {}
    for cid, level, q in entries:
        by_level.setdefault(level, []).append((cid, q))

    level_stats = {}
    survivors: list[tuple[int, float]] = []
    removed_filter: list[int] = []
    for level in sorted(by_level):
        rows = by_level[level]
        qs = np.array([q for _, q in rows])
        mean = float(qs.mean())
        median = float(np.median(qs))
        std = float(qs.std())  # population std
        tight = abs(mean - median) > a
        threshold = mean - std if tight else mean - phi * std
        level_stats[level] = LevelStats(len(rows), mean, median, std, threshold, tight)
        for cid, q in rows:
            if q < threshold:
                removed_filter.append(cid)
            else:
                survivors.append((cid, q))

    removed_nonpositive = [cid for cid, q in survivors if q <= 0]
    kept = [(cid, q) for cid, q in survivors if q > 0]
    total = sum(q for _, q in kept)
    if not kept or total <= 0:
        if entries:
            logger.warning("access control removed every upload; round is a no-op")
        return AccessDecision((), {}, tuple(sorted(removed_filter)),
                              tuple(sorted(removed_nonpositive)), level_stats, True)
    alphas = {cid: q / total for cid, q in sorted(kept)}
    return AccessDecision(tuple(sorted(cid for cid, _ in kept)), alphas,
                          tuple(sorted(removed_filter)),
                          tuple(sorted(removed_nonpositive)), level_stats, False)


class AsyncSimulation:
    """Periodic-aggregation simulator over a fixed client population.

    Args:
        model: initial global model.
        clients: per-client states (ids must be unique; any order).
        market: cost constants shared with the contract solver.
        timing: simulated-delay distribution and aggregation period.
        a, epsilon, phi: access-control spread gate, staleness decay, and
            outlier width.
        val_data: held-out split scored after every aggregation; its loss
            history is the reference for upload scores.
        test_data: reporting split for the per-round summary.
        master_seed: seeds each client's per-round shuffle stream.
        lr, batch_size: local SGD settings handed to every client.
    """

    def __init__(self, model: nn.Model, clients: list[ClientState],
                 market: MarketModel, timing: TimingParams, a: float,
                 epsilon: float, phi: float, val_data: Dataset,
                 test_data: Dataset, master_seed: int, lr: float,
                 batch_size: int):
        ids = [c.client_id for c in clients]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("client ids must be unique")
        self.model = model
        self.clients = sorted(clients, key=lambda c: c.client_id)
        self.market = market
        self.timing = timing
        self.a = a
        self.epsilon = epsilon
        self.phi = phi
        self.val_data = val_data
        self.test_data = test_data
        self.master_seed = master_seed
        self.lr = lr
        self.batch_size = batch_size
        self.t = 0
        self.ledgers: list[RoundLedger] = []
        self.val_losses = [nn.evaluate(model, val_data)[0]]
        self._test_loss, self._test_acc = nn.evaluate(model, test_data)
        # every client starts a cycle on the initial model at sim time 0
        for client in self.clients:
            self._start_cycle(client, round_idx=0, start_time=0.0)

    def _start_cycle(self, client: ClientState, round_idx: int, start_time: float):
        seed = child_seed(self.master_seed, STREAM_TRAIN, client.client_id, round_idx)
        trained, epoch_losses = nn.train_epochs_tracked(
            self.model, client.data, client.tau, self.lr, self.batch_size, seed)
        client.pending_delta = trained.params - self.model.params
        client.pending_loss = float(epoch_losses[-1])
        client.received_round = round_idx
        client.busy_until = start_time + round_costs(client, self.timing).sim_seconds

    def run_round(self) -> RoundLedger:
        """Process one aggregation window and return its ledger entry."""
        t = self.t
        dt = self.timing.delta_t
        window_lo, window_hi = t * dt, (t + 1) * dt
        uploaders = [c for c in self.clients if window_lo < c.busy_until <= window_hi]

        records = []
        entries = []
        for c in uploaders:
            staleness = t - c.received_round
            m = loss_reduction(self.val_losses[c.received_round], c.pending_loss)
            q = access_indicator(m, c.theta, staleness, self.epsilon)
            records.append(UploadRecord(c.client_id, c.level, staleness, m, q,
                                        sim_time=c.busy_until))
            entries.append((c.client_id, c.level, q))

        decision = access_control(entries, self.a, self.phi)
        if decision.admitted:
            by_id = {c.client_id: c for c in uploaders}
            deltas = [by_id[cid].pending_delta for cid in decision.admitted]
            weights = [decision.alphas[cid] for cid in decision.admitted]
            self.model = nn.aggregate(self.model, deltas, weights)
            val_loss = nn.evaluate(self.model, self.val_data)[0]
            self._test_loss, self._test_acc = nn.evaluate(self.model, self.test_data)
        else:
            val_loss = self.val_losses[-1]
        self.val_losses.append(val_loss)

        admitted_set = set(decision.admitted)
        records = [
            UploadRecord(r.client_id, r.level, r.staleness, r.m, r.q, r.sim_time,
                         admitted=r.client_id in admitted_set,
                         alpha=decision.alphas.get(r.client_id, 0.0))
            for r in records
        ]
        for c in uploaders:
            c.cumulative_energy += round_costs(c, self.timing).energy
            if c.client_id in admitted_set:
                c.rewards_earned += c.reward_rate
                c.admitted_count += 1
            else:
                c.rewards_withheld += c.reward_rate
                c.rejected_count += 1
            self._start_cycle(c, round_idx=t + 1, start_time=window_hi)

        ledger = RoundLedger(
            round=t,
            time_end=window_hi,
            uploads=tuple(records),
            level_stats=decision.level_stats,
            admitted_count=len(decision.admitted),
            no_op=not decision.admitted,
            val_loss=val_loss,
            test_loss=self._test_loss,
            test_accuracy=self._test_acc,
        )
        self.ledgers.append(ledger)
        self.t += 1
        return ledger

    def run(self, rounds: int) -> list[RoundLedger]:
        if rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {rounds}")
        for _ in range(rounds):
            self.run_round()
        return self.ledgers


def settle_rewards(ledgers: list[RoundLedger], clients: list[ClientState],
                   menu: ContractMenu, market: MarketModel) -> dict:
    """Summarize who earned what across a finished run.

    Per client: paid and withheld reward totals, energy spent on completed
    cycles, and the realized utility rewards_earned - energy. The publisher
    block totals payments per level. Only completed (uploaded) cycles are
    priced; a cycle still in flight when the horizon ends costs nothing.
    """
    from .contracts import client_utility  # local import to avoid cycle at module load

    per_client = []
    for c in sorted(clients, key=lambda s: s.client_id):
        per_client.append({
            "client_id": c.client_id,
            "level": c.level,
            "theta": c.theta,
            "d_k": c.data.d_k,
            "tau": c.tau,
            "tau_clamped": c.tau_clamped,
            "malicious": c.malicious,
            "uploads": c.admitted_count + c.rejected_count,
            "admitted": c.admitted_count,
            "rejected": c.rejected_count,
            "reward_rate": c.reward_rate,
            "rewards_earned": c.rewards_earned,
            "rewards_withheld": c.rewards_withheld,
            "energy_spent": c.cumulative_energy,
            "realized_utility": c.rewards_earned - c.cumulative_energy,
            "contract_utility": client_utility(c.level, menu, market, c.tau, c.data.d_k),
        })
    paid_by_level: dict[int, float] = {}
    for row in per_client:
        paid_by_level[row["level"]] = paid_by_level.get(row["level"], 0.0) \
            + row["rewards_earned"]
    final = ledgers[-1] if ledgers else None
    return {
        "clients": per_client,
        "publisher": {
            "total_paid": sum(r["rewards_earned"] for r in per_client),
            "total_withheld": sum(r["rewards_withheld"] for r in per_client),
            "paid_by_level": {str(k): v for k, v in sorted(paid_by_level.items())},
            "rounds": len(ledgers),
            "final_test_accuracy": final.test_accuracy if final else None,
            "final_test_loss": final.test_loss if final else None,
        },
    }


def write_round_summary_csv(ledgers: list[RoundLedger], path) -> None:
    """One row per round: round, test_loss, test_accuracy, admitted_count."""
    with open(path, "w") as fh:
        fh.write("round,test_loss,test_accuracy,admitted_count\n")
        for lg in ledgers:
            fh.write(f"{lg.round},{lg.test_loss!r},{lg.test_accuracy!r},"
                     f"{lg.admitted_count}\n")


def write_ledger_csv(ledgers: list[RoundLedger], path) -> None:
    """One row per upload: full admission trail for audit and tests."""
    with open(path, "w") as fh:
        fh.write("round,sim_time,client_id,level,staleness,m,q,admitted,alpha\n")
        for lg in ledgers:
            for r in lg.uploads:
                fh.write(f"{lg.round},{r.sim_time!r},{r.client_id},{r.level},"
                         f"{r.staleness},{r.m!r},{r.q!r},{int(r.admitted)},"
                         f"{r.alpha!r}\n")
