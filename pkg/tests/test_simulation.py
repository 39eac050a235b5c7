import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from common import make_client, make_dataset
from contractfl import nn, simulation
from contractfl.contracts import MarketModel
from contractfl.errors import ConfigurationError
from contractfl.seeds import STREAM_TRAIN, child_seed
from contractfl.simulation import (AccessDecision, AsyncSimulation, ClientState,
                                   TimingParams, access_control,
                                   access_indicator, round_costs)

MARKET = MarketModel.uniform()


def easy_client(cid, n=6, flip=False, seed=0):
    """1-d two-blob client data; trivially separable unless flipped."""
    rng = np.random.default_rng(seed + cid)
    y = np.arange(n) % 2
    x = np.where(y == 0, 0.1, 0.9)[:, None] + rng.uniform(-0.05, 0.05, (n, 1))
    if flip:
        y = rng.integers(0, 2, size=n)  # labels carry no signal
    return make_client(cid, np.clip(x, 0, 1), y, 2)


def state(cid, data, delay, tau=2, level=5, theta=0.5, reward=100.0):
    return ClientState(client_id=cid, level=level, theta=theta, data=data,
                       tau=tau, tau_clamped=False, effort=float(tau * data.d_k),
                       reward_rate=reward, per_epoch_delay=delay)


def eval_sets(seed=1):
    rng = np.random.default_rng(seed)
    y = np.arange(40) % 2
    x = np.where(y == 0, 0.1, 0.9)[:, None] + rng.uniform(-0.05, 0.05, (40, 1))
    val = make_dataset(np.clip(x, 0, 1), y, 2)
    y2 = np.arange(30) % 2
    x2 = np.where(y2 == 0, 0.1, 0.9)[:, None] + rng.uniform(-0.05, 0.05, (30, 1))
    test = make_dataset(np.clip(x2, 0, 1), y2, 2)
    return val, test


def make_sim(states, rounds_seed=7, a=0.5, epsilon=2.0, phi=3.0, delta_t=1.0,
             lr=0.5, batch_size=2):
    val, test = eval_sets()
    model = nn.init_model((1, 4, 4, 2), seed=3)
    timing = TimingParams(delta_t=delta_t)
    return AsyncSimulation(model, states, MARKET, timing, a=a, epsilon=epsilon,
                           phi=phi, val_data=val, test_data=test,
                           master_seed=rounds_seed, lr=lr, batch_size=batch_size)


# ---------------------------------------------------------------------------
# Cost bookkeeping
# ---------------------------------------------------------------------------

def test_round_costs_hand_computed():
    c = state(0, easy_client(0, n=100), delay=1.5, tau=4)
    tp = TimingParams(c=5.0, f=1.0, xi=2.0, t_com=10.0, e_com=20.0)
    costs = round_costs(c, tp)
    assert costs.sim_seconds == 6.0  # 4 epochs * 1.5 s
    assert costs.analytic_compute_seconds == 2000.0  # 4 * 5 * 100 / 1
    assert costs.energy == 4020.0  # 4 * 2 * 5 * 100 * 1 + 20


def test_round_costs_three_epoch_example():
    c = state(0, easy_client(0, n=100), delay=1.0, tau=3)
    costs = round_costs(c, TimingParams())
    assert costs.energy == 3020.0
    assert costs.analytic_compute_seconds == 1500.0


# ---------------------------------------------------------------------------
# Admission scoring
# ---------------------------------------------------------------------------

def test_access_indicator_hand_computed():
    assert abs(access_indicator(0.5, 0.8, 1, 2.0) - 0.1) < 1e-15
    assert access_indicator(0.5, 0.8, 0, 2.0) == 0.5 * 0.8
    assert access_indicator(-0.3, 1.0, 0, 2.0) == -0.3  # negative passes through
    assert access_indicator(1.0, 1.0, 3, 0.0) == 1.0  # no staleness decay


def test_access_indicator_validation():
    with pytest.raises(ConfigurationError):
        access_indicator(0.5, 0.8, -1, 2.0)
    with pytest.raises(ConfigurationError):
        access_indicator(0.5, 1.2, 0, 2.0)
    with pytest.raises(ConfigurationError):
        access_indicator(0.5, 0.8, 0, -2.0)


def test_access_control_tight_branch_worked_example():
    entries = [(0, 3, 2.0), (1, 3, 1.9), (2, 3, 2.1), (3, 3, -1.0)]
    decision = access_control(entries, a=0.5, phi=3.0)
    stats = decision.level_stats[3]
    assert stats.tight_branch  # |1.25 - 1.95| = 0.7 > 0.5
    assert abs(stats.mean - 1.25) < 1e-12
    assert abs(stats.median - 1.95) < 1e-12
    assert abs(stats.std - 1.3009611831257687) < 1e-12  # population std
    assert abs(stats.threshold - (-0.050961183125768745)) < 1e-12
    assert decision.removed_by_filter == (3,)
    assert decision.admitted == (0, 1, 2)
    assert abs(decision.alphas[0] - 2.0 / 6.0) < 1e-12
    assert abs(decision.alphas[1] - 1.9 / 6.0) < 1e-12
    assert abs(decision.alphas[2] - 2.1 / 6.0) < 1e-12
    assert abs(sum(decision.alphas.values()) - 1.0) < 1e-12


def test_access_control_loose_branch_keeps_everything():
    entries = [(0, 1, 2.0), (1, 1, 2.1), (2, 1, 1.9)]
    decision = access_control(entries, a=0.5, phi=3.0)
    stats = decision.level_stats[1]
    assert not stats.tight_branch  # mean == median == 2.0
    assert abs(stats.threshold - (2.0 - 3.0 * stats.std)) < 1e-12
    assert decision.admitted == (0, 1, 2)
    assert decision.removed_by_filter == ()


def test_access_control_drops_nonpositive_survivors():
    # wide phi lets a negative score through the spread filter; the
    # nonpositive guard still keeps it out of the weights
    entries = [(7, 2, 0.5), (9, 2, -0.2)]
    decision = access_control(entries, a=10.0, phi=3.0)
    assert decision.removed_by_filter == ()
    assert decision.removed_nonpositive == (9,)
    assert decision.admitted == (7,)
    assert decision.alphas == {7: 1.0}


def test_access_control_all_removed_is_noop():
    decision = access_control([(0, 1, -0.5), (1, 1, -0.7)], a=0.5, phi=3.0)
    assert decision.no_op
    assert decision.admitted == ()
    assert decision.alphas == {}


def test_access_control_empty_round():
    decision = access_control([], a=0.5, phi=3.0)
    assert decision.no_op
    assert decision.level_stats == {}


def test_access_control_single_upload():
    decision = access_control([(4, 6, 0.42)], a=0.5, phi=3.0)
    assert decision.admitted == (4,)
    assert decision.alphas == {4: 1.0}
    assert not decision.no_op


def test_access_control_levels_filtered_independently():
    # the bad upload is an outlier only within its own level
    entries = [(0, 1, 5.0), (1, 1, 5.1), (2, 1, 4.9), (3, 1, 0.1),
               (10, 9, 0.2), (11, 9, 0.25)]
    decision = access_control(entries, a=0.5, phi=3.0)
    assert 3 in decision.removed_by_filter
    assert 10 in decision.admitted and 11 in decision.admitted


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 10),
                          st.floats(-5, 5, allow_nan=False, width=32)),
                min_size=1, max_size=30))
def test_access_control_invariants(rows):
    entries = [(cid, level, float(q)) for cid, (level, q) in enumerate(rows)]
    decision = access_control(entries, a=0.5, phi=3.0)
    ids = {cid for cid, _, _ in entries}
    assert set(decision.admitted) <= ids
    if decision.no_op:
        assert decision.alphas == {}
    else:
        assert abs(sum(decision.alphas.values()) - 1.0) < 1e-9
        assert all(a > 0 for a in decision.alphas.values())
        assert set(decision.alphas) == set(decision.admitted)
    # every admitted upload cleared both the spread filter and the sign guard
    by_id = dict((cid, q) for cid, _, q in entries)
    for cid in decision.admitted:
        assert by_id[cid] > 0


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

def test_window_scheduling_and_staleness():
    a = state(0, easy_client(0), delay=0.45, tau=2)  # busy at 0.9
    b = state(1, easy_client(1), delay=0.75, tau=2)  # busy at 1.5
    sim = make_sim([a, b])
    first = sim.run_round()
    assert [r.client_id for r in first.uploads] == [0]
    assert first.uploads[0].staleness == 0
    assert first.uploads[0].sim_time == 0.9

    second = sim.run_round()
    ids = {r.client_id: r for r in second.uploads}
    assert set(ids) == {0, 1}
    # A restarted at 1.0 and finished at 1.9; B still carries its round-0 base
    assert ids[0].staleness == 0
    assert ids[1].staleness == 1
    assert ids[0].sim_time == 1.9
    assert ids[1].sim_time == 1.5


def test_window_boundary_is_inclusive():
    c = state(0, easy_client(0), delay=0.5, tau=2)  # busy_until exactly 1.0
    sim = make_sim([c])
    ledger = sim.run_round()
    assert [r.client_id for r in ledger.uploads] == [0]


def test_slow_clients_make_noop_rounds():
    c = state(0, easy_client(0), delay=30.0, tau=2)  # busy at 60
    sim = make_sim([c])
    before = sim.model.params.copy()
    ledgers = sim.run(3)
    assert all(lg.no_op for lg in ledgers)
    assert all(not lg.uploads for lg in ledgers)
    assert np.array_equal(sim.model.params, before)  # bitwise unchanged
    assert len({lg.val_loss for lg in ledgers}) == 1  # carried forward
    assert ledgers[0].test_loss == ledgers[2].test_loss


def test_stale_upload_scored_against_its_base_round():
    a = state(0, easy_client(0), delay=0.45, tau=2)
    b = state(1, easy_client(1), delay=0.75, tau=2)
    sim = make_sim([b, a])  # order must not matter
    init = nn.init_model((1, 4, 4, 2), seed=3)
    val, _ = eval_sets()
    val0 = nn.evaluate(init, val)[0]
    # replay B's first cycle: trained on the round-0 model with its own stream
    seed = child_seed(7, STREAM_TRAIN, 1, 0)
    _, losses = nn.train_epochs_tracked(init, b.data, 2, 0.5, 2, seed)
    sim.run_round()
    second = sim.run_round()
    rec = {r.client_id: r for r in second.uploads}[1]
    assert rec.m == val0 - float(losses[-1])  # exact, not approximate
    assert rec.staleness == 1


def test_client_ids_must_be_unique():
    a = state(0, easy_client(0), delay=0.5)
    b = state(0, easy_client(1), delay=0.5)
    with pytest.raises(ConfigurationError):
        make_sim([a, b])


# ---------------------------------------------------------------------------
# Admission, payment, refresh
# ---------------------------------------------------------------------------

def test_poor_upload_rejected_paid_nothing_and_refreshed():
    good1 = state(0, easy_client(0, n=8), delay=0.4, tau=2, level=5)
    good2 = state(1, easy_client(1, n=8), delay=0.5, tau=2, level=5)
    bad = state(2, easy_client(2, n=8, flip=True), delay=0.45, tau=2, level=5)
    sim = make_sim([good1, good2, bad], a=0.05)
    ledger = sim.run_round()
    assert ledger.admitted_count == 2
    rec = {r.client_id: r for r in ledger.uploads}
    assert rec[0].admitted and rec[1].admitted
    assert not rec[2].admitted
    assert rec[2].alpha == 0.0
    # the reject was paid nothing but billed for its wasted cycle
    assert bad.rewards_earned == 0.0
    assert bad.rewards_withheld == bad.reward_rate
    assert bad.rejected_count == 1
    assert bad.cumulative_energy == round_costs(bad, sim.timing).energy
    # and was handed the fresh model: new base round, new cycle in flight
    assert bad.received_round == 1
    assert bad.busy_until == 1.0 + 2 * 0.45
    assert bad.pending_delta is not None
    # the admitted clients were paid their contract rate
    assert good1.rewards_earned == good1.reward_rate
    assert good1.admitted_count == 1


def test_admitted_weights_match_scores():
    good1 = state(0, easy_client(0, n=8), delay=0.4, tau=2)
    good2 = state(1, easy_client(1, n=8), delay=0.5, tau=2)
    sim = make_sim([good1, good2])
    ledger = sim.run_round()
    recs = {r.client_id: r for r in ledger.uploads}
    if ledger.admitted_count == 2:
        total = recs[0].q + recs[1].q
        assert abs(recs[0].alpha - recs[0].q / total) < 1e-12
        assert abs(recs[0].alpha + recs[1].alpha - 1.0) < 1e-12


def test_aggregation_applies_weighted_deltas():
    cl = state(0, easy_client(0, n=8), delay=0.4, tau=2)
    sim = make_sim([cl])
    init_params = sim.model.params.copy()
    seed = child_seed(7, STREAM_TRAIN, 0, 0)
    model0 = nn.Model((1, 4, 4, 2), init_params)
    trained, _ = nn.train_epochs_tracked(model0, cl.data, 2, 0.5, 2, seed)
    ledger = sim.run_round()
    assert ledger.admitted_count == 1
    # single admitted upload with alpha 1: the delta is applied whole
    assert np.allclose(sim.model.params,
                       init_params + (trained.params - init_params),
                       rtol=0, atol=1e-12)


def test_full_run_deterministic():
    def build():
        return [state(i, easy_client(i, n=6 + 2 * i), delay=0.3 + 0.2 * i, tau=2)
                for i in range(4)]
    sim1 = make_sim(build())
    sim2 = make_sim(build())
    l1 = sim1.run(5)
    l2 = sim2.run(5)
    assert np.array_equal(sim1.model.params, sim2.model.params)
    assert [lg.val_loss for lg in l1] == [lg.val_loss for lg in l2]
    assert [r for lg in l1 for r in lg.uploads] \
        == [r for lg in l2 for r in lg.uploads]


def test_run_validation():
    sim = make_sim([state(0, easy_client(0), delay=0.5)])
    with pytest.raises(ConfigurationError):
        sim.run(0)


# ---------------------------------------------------------------------------
# Settlement and artifacts
# ---------------------------------------------------------------------------

def _finished_sim():
    states = [state(i, easy_client(i, n=8), delay=0.3 + 0.15 * i, tau=2,
                    level=5 if i < 2 else 7, reward=100.0 + i)
              for i in range(3)]
    sim = make_sim(states)
    ledgers = sim.run(4)
    return sim, ledgers


def test_settle_rewards_books_balance():
    from contractfl.contracts import solve_contract
    sim, ledgers = _finished_sim()
    menu = solve_contract(MARKET)
    result = simulation.settle_rewards(ledgers, sim.clients, menu, MARKET)
    rows = result["clients"]
    assert [r["client_id"] for r in rows] == [0, 1, 2]
    for row, c in zip(rows, sim.clients):
        assert row["rewards_earned"] == c.rewards_earned
        assert row["uploads"] == c.admitted_count + c.rejected_count
        assert abs(row["realized_utility"]
                   - (c.rewards_earned - c.cumulative_energy)) < 1e-9
    pub = result["publisher"]
    assert abs(pub["total_paid"] - sum(r["rewards_earned"] for r in rows)) < 1e-9
    assert abs(sum(pub["paid_by_level"].values()) - pub["total_paid"]) < 1e-9
    assert pub["rounds"] == 4
    assert pub["final_test_accuracy"] == ledgers[-1].test_accuracy


def test_round_summary_csv_schema(tmp_path):
    sim, ledgers = _finished_sim()
    path = tmp_path / "rounds.csv"
    simulation.write_round_summary_csv(ledgers, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "round,test_loss,test_accuracy,admitted_count"
    assert len(lines) == 1 + len(ledgers)
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[1]) == ledgers[0].test_loss  # repr round-trips exactly
    assert float(first[2]) == ledgers[0].test_accuracy


def test_ledger_csv_schema(tmp_path):
    sim, ledgers = _finished_sim()
    path = tmp_path / "ledger.csv"
    simulation.write_ledger_csv(ledgers, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "round,sim_time,client_id,level,staleness,m,q,admitted,alpha"
    n_uploads = sum(len(lg.uploads) for lg in ledgers)
    assert len(lines) == 1 + n_uploads
    for line in lines[1:]:
        parts = line.split(",")
        assert len(parts) == 9
        assert parts[7] in ("0", "1")


def test_timing_params_validation():
    with pytest.raises(ConfigurationError):
        TimingParams(delta_t=0.0)
    with pytest.raises(ConfigurationError):
        TimingParams(delay_lo=2.0, delay_hi=0.5)
    with pytest.raises(ConfigurationError):
        TimingParams(c=-1.0)
