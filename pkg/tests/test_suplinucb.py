import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from truthful_ssa.core import make_instance
from truthful_ssa.suplinucb import (DESIGNATED_EXPLORE, FORCED_EXPLOIT, GLOBAL_EXPLOIT, RULES,
                                    SupLinUCB, base_linucb_scores, calibrated_alpha,
                                    index_set_bound, stage_count)


def test_stage_count():
    assert stage_count(3) == 2
    assert stage_count(2) == 1
    assert stage_count(10**6) == 14
    with pytest.raises(ValueError):
        stage_count(1)


def test_calibrated_alpha():
    assert calibrated_alpha(7, 10**5, 0.05) == pytest.approx(math.sqrt(0.5 * math.log(2 * 7e5 / 0.05)))


def test_fresh_stage_scores():
    sup = SupLinUCB([0.5, 0.5, 0.5], d=2, T=100, alpha=0.8)
    est, w, ucb = sup.stage_scores(np.array([0.6, 0.8]), 2)
    assert np.all(est == 0) and np.allclose(w, 0.8) and np.allclose(ucb, 0.8)
    sup0 = SupLinUCB([0.5, 0.5], d=2, T=100, alpha=0.0)
    est, w, ucb = sup0.stage_scores(np.array([0.6, 0.8]), 1)
    assert np.array_equal(ucb, est)


def test_fresh_round_explores_designated_and_records_one_round():
    sup = SupLinUCB([0.5, 0.5], d=2, T=100, alpha=1.0)
    e1 = np.array([1.0, 0.0])
    dec = sup.step(1, e1, 1)
    # round 1 designates agent 1 + (1 mod 2) = 2
    assert (dec.agent, dec.rule, dec.stage) == (1, "designated-explore", 1)
    est, w, _ = sup.stage_scores(e1, 1)
    assert est[1] == pytest.approx(0.5) and w[1] == pytest.approx(1 / math.sqrt(2))
    assert est[0] == 0.0 and w[0] == 1.0
    assert sup.index_set_sizes.tolist() == [[0] * sup.S, [1] + [0] * (sup.S - 1)]


def _set_stage(sup, i, s, est, width):
    """Pin agent i's stage-s estimator on the 1-d context x = (1)."""
    k = i * sup.S + s - 1
    sup.learners.theta[k, 0] = est
    sup.learners.A_inv[k, 0, 0] = (width / sup.alpha) ** 2


def test_all_learned_goes_global_exploit():
    sup = SupLinUCB([0.5, 1.0, 1.0], d=1, T=100, alpha=1.0)
    for i, e in enumerate((0.8, 0.3, 0.3)):
        _set_stage(sup, i, 1, e, 0.0625)  # below 1/sqrt(T) = 0.1
    dec = sup.step(1, np.array([1.0]), 0)
    assert dec.rule == "global-exploit" and dec.stage == 1
    assert dec.agent == 0  # values 0.43125 vs 0.3625 twice
    _set_stage(sup, 0, 1, 0.3, 0.0625)
    sup.bids[0] = 1.0
    assert sup.step(2, np.array([1.0]), 0).agent == 0  # exact three-way tie


@pytest.mark.parametrize("margin, survives", [(2.0**-10, False), (0.0, True)])
def test_screen_threshold(margin, survives):
    sup = SupLinUCB([1.0, 1.0], d=1, T=100, alpha=1.0)
    # stage 1 threshold 1/2: both widths in (1/sqrt(T), 1/2], so the screen runs
    _set_stage(sup, 0, 1, 0.5, 0.375)              # value 0.875
    _set_stage(sup, 1, 1, -0.375 - margin, 0.25)   # value 0.875 - 2**0 - margin
    dec = sup.step(1, np.array([1.0]), 0)          # designated agent 2 is not wide enough
    assert bool(sup._alive[1]) is survives
    assert sup.descents[0] == 1
    assert dec.stage == 2
    if not survives:
        assert (dec.agent, dec.rule) == (0, "forced-exploit")


def test_screen_with_spec_values():
    sup = SupLinUCB([1.0, 1.0], d=1, T=100, alpha=1.0)
    _set_stage(sup, 0, 1, 0.5, 0.4)
    _set_stage(sup, 1, 1, 0.9 - 1.0 - 1e-6 - 0.3, 0.3)
    sup.step(1, np.array([1.0]), 0)
    assert not sup._alive[1]


def _sup_run(inst, alpha=1.0, T=None):
    sup = SupLinUCB(inst.bids, inst.d, T or inst.T, alpha=alpha)
    return sup, sup.run(inst.contexts, inst.tape.outcomes)


@given(st.integers(0, 10**6), st.integers(2, 4))
def test_learning_locality(seed, n):
    inst = make_instance(seed, n=n, d=2, T=250)
    sup = SupLinUCB(inst.bids, inst.d, inst.T, alpha=1.0)
    for t in range(1, inst.T + 1):
        before = sup.learners.snapshot()
        dec = sup.step(t, inst.contexts[t - 1], inst.tape.oracle(t))
        after = sup.learners.snapshot()
        changed = [k for k in range(sup.n * sup.S)
                   if after["A"][k].tobytes() != before["A"][k].tobytes()]
        if dec.rule == "designated-explore":
            assert changed == [dec.agent * sup.S + dec.stage - 1]
            assert dec.agent == t % n
        else:
            assert changed == []
            assert np.array_equal(after["counts"], before["counts"])


@given(st.integers(0, 10**6))
def test_width_trigger_and_disjoint_index_sets(seed):
    inst = make_instance(seed, n=3, d=4, T=1500)
    sup, tr = _sup_run(inst)
    explore = tr.tags == DESIGNATED_EXPLORE
    assert np.all(tr.widths[explore] > 0.5 ** tr.stages[explore])
    sizes = sup.index_set_sizes
    total = 0
    for i in range(inst.n):
        for s in range(1, sup.S + 1):
            rounds = tr.index_set(i, s)
            assert rounds.size == sizes[i, s - 1]
            assert np.all((rounds % inst.n) == i)  # designated rounds only
            total += rounds.size
    assert total == explore.sum()


def test_run_matches_from_scratch_estimators():
    inst = make_instance(4, n=3, d=4, T=2000)
    sup, tr = _sup_run(inst, alpha=1.3)
    probes = inst.corpus.points[::17]
    for i in range(inst.n):
        for s in range(1, sup.S + 1):
            rounds = tr.index_set(i, s)
            for x in probes:
                est, w, _ = sup.stage_scores(x, s)
                ref_est, ref_w = base_linucb_scores(rounds, inst.contexts,
                                                    inst.tape.outcomes[i], x, 1.3)
                assert abs(est[i] - ref_est) <= 1e-8
                assert abs(w[i] - ref_w) <= 1e-8


def test_step_matches_run(small_instance):
    inst = small_instance
    _, tr = _sup_run(inst)
    sup = SupLinUCB(inst.bids, inst.d, inst.T, alpha=1.0)
    steps = [sup.step(t, inst.contexts[t - 1], inst.tape.oracle(t)) for t in range(1, inst.T + 1)]
    assert [d.agent for d in steps] == tr.allocated.tolist()
    assert [d.rule for d in steps] == [RULES[k] for k in tr.tags]
    assert [d.stage for d in steps] == tr.stages.tolist()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_index_set_and_forced_exploit_bounds(seed):
    inst = make_instance(seed, n=7, d=4, T=20_000)
    sup = SupLinUCB(inst.bids, inst.d, inst.T)  # calibrated alpha
    tr = sup.run(inst.contexts, inst.tape.outcomes)
    sizes = sup.index_set_sizes
    for i in range(inst.n):
        for s in range(1, sup.S + 1):
            assert sizes[i, s - 1] <= index_set_bound(sizes[i, s - 1], s, sup.alpha, inst.d)
    for s in range(1, sup.S + 1):
        forced = np.count_nonzero((tr.tags == FORCED_EXPLOIT) & (tr.stages == s))
        assert forced <= (inst.n - 1) * sizes[:, s - 1].sum() + inst.n


def test_best_agent_survives_screens_calibrated():
    kappa = 0.05
    inst = make_instance(8, n=5, d=4, T=20_000)
    sup = SupLinUCB(inst.bids, inst.d, inst.T, kappa=kappa)
    tr = sup.run(inst.contexts, inst.tape.outcomes)
    best = np.argmax(inst.expected_values(), axis=1)
    kept = (tr.masks >> best) & 1
    assert kept.mean() >= 1 - kappa


def test_rule_bookkeeping(small_instance):
    inst = small_instance
    sup, tr = _sup_run(inst)
    diag = sup.diagnostics()
    assert diag["stages"] == stage_count(inst.T)
    assert sum(map(sum, diag["rule_counts"].values())) == inst.T
    assert set(np.unique(tr.tags)) <= {DESIGNATED_EXPLORE, GLOBAL_EXPLOIT, FORCED_EXPLOIT}


def test_rejects_too_many_agents():
    with pytest.raises(ValueError):
        SupLinUCB(np.full(63, 0.5), d=2, T=100)
