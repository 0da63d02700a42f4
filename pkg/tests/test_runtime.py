import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from approxint.anytime import AnytimeModel, classify_full
from approxint.energy import CapacitorState, EnergyTrace, synth_trace
from approxint.runtime import (
    CheckpointState,
    CornerWorkload,
    LivelockError,
    RunLog,
    RuntimeConfig,
    StrategyConfig,
    SvmWorkload,
    check_livelock,
    checkpoint_step,
    greedy_step,
    greedy_units,
    run,
    smart_gate,
)
from approxint.corners import CornerCosts, scene

CAP = CapacitorState()
B = CAP.usable_budget
AWAKE = CAP.with_energy(CAP.energy_on)   # wakes at t = 0 with one usable budget


def svm_workload(n=20, c=3, items=10, cost=10.0, overhead=200.0, output=50.0, seed=0, lut=None):
    rng = np.random.default_rng(seed)
    model = AnytimeModel(rng.standard_normal((c, n)), np.zeros(c), rng.permutation(n),
                         np.full(n, cost), lut)
    X = rng.standard_normal((items, n))
    y = np.array([classify_full(model, x).label for x in X])
    return SvmWorkload(model, X, y, overhead, output)


def quiet_config(period=60.0, cap=AWAKE):
    return RuntimeConfig(capacitor=cap, efficiency=1.0, idle_uw=0.0, period_s=period)


# -- configuration ---------------------------------------------------------------------------


def test_strategy_parsing():
    assert StrategyConfig.parse("greedy").kind == "greedy"
    s = StrategyConfig.parse("smart:0.8")
    assert s.accuracy_floor == 0.8 and s.label == "smart:0.8"
    assert StrategyConfig.parse("checkpoint:20").interval == 20
    assert StrategyConfig.parse("checkpoint").label == "checkpoint:10"
    assert StrategyConfig.parse("checkpoint").write_cost == pytest.approx(20.48)
    for bad in ("smart", "smart:0", "smart:1.5", "greedy:3", "bogus", "checkpoint:0"):
        with pytest.raises(ValueError):
            StrategyConfig.parse(bad)
    with pytest.raises(ValueError):
        StrategyConfig("checkpoint", checkpoint_bytes=0)


# -- primitives ---------------------------------------------------------------------------------


def test_greedy_step_examples():
    assert greedy_step(50.0, 10.0, 50.0) == "emit"
    assert greedy_step(1e9, 10.0, 50.0) == "advance"
    assert greedy_step(1e9, None, 50.0) == "emit"


@given(costs=st.lists(st.floats(0.0, 500.0), min_size=1, max_size=60),
       remaining=st.floats(0.0, 5000.0), output=st.floats(0.0, 200.0))
def test_greedy_units_matches_stepping_and_never_overspends(costs, remaining, output):
    costs = np.array(costs)
    k, left = 0, remaining
    while greedy_step(left, costs[k] if k < len(costs) else None, output) == "advance":
        left -= costs[k]
        k += 1
    closed = greedy_units(remaining, costs, output)
    assert closed == k or abs(np.cumsum(costs)[max(closed, k) - 1] - (remaining - output)) < 1e-6
    if remaining >= output:
        assert costs[:closed].sum() + output <= remaining + 1e-6


def test_smart_gate_examples():
    lut = np.linspace(0.2, 1.0, 21)
    lut[-1] = 1.0
    costs = np.full(20, 10.0)
    p_needed = int(np.flatnonzero(lut >= 0.6)[0])
    ok = smart_gate(1e6, lut, 0.6, costs, 200, 50)
    assert ok.proceed and ok.min_units == p_needed == 10
    need = 200 + 10 * 10 + 50
    assert smart_gate(need, lut, 0.6, costs, 200, 50).proceed
    assert not smart_gate(need - 1, lut, 0.6, costs, 200, 50).proceed
    assert smart_gate(1e6, np.append(np.full(20, 0.3), 1.0), 0.5, costs, 0, 0).min_units == 20


def test_checkpoint_step_actions():
    s = StrategyConfig("checkpoint", interval=2)
    costs = np.full(4, 10.0)
    st_ = CheckpointState(item=0, n_units=4, interval=2)
    assert checkpoint_step(st_, 1e6, costs, s, 50.0)[0] == "write"
    st_.committed = 0
    assert checkpoint_step(st_, 1e6, costs, s, 50.0) == ("work", 10.0)
    assert checkpoint_step(st_, 5.0, costs, s, 50.0)[0] == "die"
    st_.pos = 2
    assert checkpoint_step(st_, 1e6, costs, s, 50.0)[0] == "write"
    st_.needs_restore = True
    assert checkpoint_step(st_, 1e6, costs, s, 50.0)[0] == "restore"
    st_.needs_restore, st_.pos, st_.committed = False, 4, 2
    assert checkpoint_step(st_, 1e6, costs, s, 50.0) == ("emit", 50.0)


def test_livelock_detection():
    s = StrategyConfig("checkpoint", interval=50)
    with pytest.raises(LivelockError):
        check_livelock(np.full(100, 100.0), s, B, 200, 50)
    check_livelock(np.full(100, 100.0), StrategyConfig("checkpoint", interval=10), B, 200, 50)
    w = svm_workload(n=100, cost=100.0, items=1)
    tr = synth_trace("constant", 1000, power=100)
    with pytest.raises(LivelockError):
        run(tr, w, s, quiet_config())


# -- runs ----------------------------------------------------------------------------------------


def test_continuous_outputs_everything_at_full_knob():
    w = svm_workload(items=10)
    tr = synth_trace("constant", 600, power=0.0)
    lg = run(tr, w, StrategyConfig("continuous"))
    outs = lg.outputs()
    assert [o["item"] for o in outs] == list(range(10))
    assert all(o["knob"] == 20 and o["cycle_emitted"] == o["cycle_started"] for o in outs)
    assert [o["result"] for o in outs] == [o["truth"] for o in outs]


@pytest.mark.parametrize("k", [0, 1, 7, 19, 20])
def test_greedy_exact_budget_gives_knob_k(k):
    unit, output = 37.5, 50.0
    overhead = B - output - k * unit
    w = svm_workload(n=20, items=1, cost=unit, overhead=overhead, output=output)
    tr = synth_trace("constant", 10, power=0.0)
    lg = run(tr, w, StrategyConfig("greedy"), quiet_config())
    (out,) = lg.outputs()
    assert out["knob"] == k and out["cycle_emitted"] == 0


def segment_oracle(budget, n, unit, k, overhead, write, read, output):
    """Cycle in which a checkpointed item completes, computed per segment."""
    cycle, left, done = 0, budget - overhead - write, 0
    while True:
        seg = min(k, n - done)
        tail = output if done + seg == n else write
        if seg * unit + tail <= left + 1e-9:
            left -= seg * unit + tail
            done += seg
            if done == n:
                return cycle
        else:
            cycle += 1
            left = budget - read


def test_checkpoint_cycle_count_matches_oracle():
    n, unit = 80, 100.0
    s = StrategyConfig("checkpoint", interval=10)
    w = svm_workload(n=n, items=1, cost=unit)
    tr = synth_trace("constant", 5000, power=100.0)
    lg = run(tr, w, s, quiet_config(period=10_000))
    (out,) = lg.outputs()
    expected = segment_oracle(B, n, unit, 10, 200, s.write_cost, s.read_cost, 50)
    assert expected == 2
    assert out["cycle_emitted"] == expected and out["cycle_started"] == 0
    assert out["result"] == out["truth"]
    # work between the last checkpoint and the death is redone after restoring
    ranges = [(e["unit_start"], e["unit_end"]) for e in lg.of("work")]
    executed = [u for a, b in ranges for u in range(a, b)]
    assert len(executed) > n
    assert sorted(set(u for u in executed if executed.count(u) > 1)) == [60, 61, 62]
    restored = [e["unit"] for e in lg.of("checkpoint_restored")]
    assert restored == [30, 60]


def test_checkpoint_ample_budget_finishes_in_cycle_zero():
    w = svm_workload(n=20, items=1, cost=10.0)
    lg = run(synth_trace("constant", 100, power=0.0), w, StrategyConfig("checkpoint"), quiet_config())
    (out,) = lg.outputs()
    assert out["cycle_emitted"] == 0 and out["result"] == out["truth"]
    assert lg.energy.consumed["checkpoint_write"] > 0


def test_checkpoint_drops_busy_arrivals():
    w = svm_workload(n=80, items=5, cost=100.0)
    lg = run(synth_trace("constant", 300, power=100.0), w, StrategyConfig("checkpoint"),
             quiet_config(period=20))
    reasons = [e["reason"] for e in lg.of("item_dropped")]
    assert "busy" in reasons


def saturating_trace(items, period=60.0, seed=0):
    """After each arrival a burst fills the capacitor, then a dark gap of random length.

    With a fixed idle draw the budget at every arrival depends only on the gap,
    never on what earlier items consumed.
    """
    bursts = np.random.default_rng(seed).uniform(5.0, 55.0, size=items)
    starts = period * np.arange(items)
    times = np.append(np.column_stack([starts, starts + bursts]).ravel(), items * period)
    power = np.append(np.tile([3000.0, 0.0], items), 0.0)
    return EnergyTrace(times, power, name="saturating")


def test_smart_drops_superset_of_lower_floor():
    lut = np.concatenate([np.linspace(0.2, 0.95, 20), [1.0]])
    w = svm_workload(n=20, items=300, cost=250.0, lut=lut)
    tr = saturating_trace(300)
    cfg = RuntimeConfig(idle_uw=50.0, period_s=60)
    drops = {}
    for a in (0.6, 0.8):
        lg = run(tr, w, StrategyConfig("smart", accuracy_floor=a), cfg)
        drops[a] = {e["item"] for e in lg.of("item_dropped")}
        floor = w.model.min_features_for(a)
        assert all(o["knob"] >= floor for o in lg.outputs())
        assert not lg.of("death")
    assert drops[0.8] >= drops[0.6]
    assert len(drops[0.8]) > len(drops[0.6]) > 1


def test_smart_unreachable_floor_drops_everything(caplog):
    lut = np.concatenate([np.full(20, 0.5), [1.0]])
    w = svm_workload(n=20, items=5, lut=lut)
    lg = run(synth_trace("constant", 300, power=200.0), w,
             StrategyConfig("smart", accuracy_floor=1.0), quiet_config())
    assert len(lg.outputs()) == 5     # LUT reaches 1.0 at p = n
    w2 = svm_workload(n=20, items=5)
    with pytest.raises(ValueError):
        run(synth_trace("constant", 300, power=200.0), w2, StrategyConfig("smart", accuracy_floor=0.5))


def test_corner_workload_runs_and_matches_reference():
    w = CornerWorkload.from_scenes(6, seed=1, costs=CornerCosts(iteration_uj=0.5))
    tr = synth_trace("constant", 6 * 30, power=0.0)
    ref = run(tr, w, StrategyConfig("continuous"), quiet_config(period=30))
    ck = run(tr, w, StrategyConfig("checkpoint", interval=512), quiet_config(period=30))
    assert [o["result"] for o in ck.outputs()] == [o["result"] for o in ref.outputs()[:len(ck.outputs())]]
    with pytest.raises(ValueError):
        CornerWorkload([scene("cross"), scene("cross", size=32)])


@given(seed=st.integers(0, 500), strategy=st.sampled_from(["greedy", "smart:0.7", "checkpoint:5"]))
def test_runlog_invariants(seed, strategy):
    lut = np.concatenate([np.linspace(0.3, 0.99, 20), [1.0]])
    w = svm_workload(n=20, items=60, cost=60.0, lut=lut, seed=seed)
    tr = synth_trace("random-walk", 60 * 60, mean=40, sigma=20, step=30, seed=seed)
    lg = run(tr, w, StrategyConfig.parse(strategy), RuntimeConfig(period_s=60))
    times = [e["t"] for e in lg.events]
    assert times == sorted(times)
    started = {e["item"] for e in lg.of("item_started")}
    items = [o["item"] for o in lg.outputs()]
    assert len(items) == len(set(items)) and set(items) <= started
    assert lg.energy.conserves()
    if strategy != "checkpoint:5":
        assert all(o["cycle_emitted"] == o["cycle_started"] for o in lg.outputs())
        assert lg.energy.consumed["checkpoint_write"] == 0 == lg.energy.consumed["checkpoint_read"]
        # nothing (in particular no death) separates an item's start from its output
        for i, e in enumerate(lg.events):
            if e["event"] == "output":
                prev = lg.events[i - 1]
                assert prev["event"] == "item_started" and prev["item"] == e["item"]


def test_greedy_never_dies_before_output():
    rng = np.random.default_rng(0)
    model = AnytimeModel(rng.standard_normal((3, 30)), np.zeros(3), np.arange(30),
                         rng.lognormal(3, 1.5, size=30))
    w = SvmWorkload(model, rng.standard_normal((200, 30)))
    tr = synth_trace("random-walk", 200 * 60, mean=30, sigma=20, step=20, seed=2)
    lg = run(tr, w, StrategyConfig("greedy"), RuntimeConfig(period_s=60))
    assert len(lg.of("item_started")) == len(lg.outputs()) > 0


def test_runlog_jsonl_round_trip(tmp_path):
    w = svm_workload(items=5)
    lg = run(synth_trace("constant", 300, power=100.0), w, StrategyConfig("checkpoint"), quiet_config())
    path = tmp_path / "log.jsonl"
    lg.save(path)
    back = RunLog.load(path)
    assert back.meta == lg.meta and back.events == lg.events
    assert back.energy.as_dict() == lg.energy.as_dict()
    path.write_text('{"event": "wake"}\n')
    with pytest.raises(ValueError, match="header"):
        RunLog.load(path)


def test_run_is_deterministic():
    w = CornerWorkload.from_scenes(20, seed=3)
    tr = synth_trace("random-walk", 20 * 30, mean=60, sigma=30, step=10, seed=1)
    a = run(tr, w, StrategyConfig("greedy"), RuntimeConfig(period_s=30), seed=5)
    b = run(tr, w, StrategyConfig("greedy"), RuntimeConfig(period_s=30), seed=5)
    assert a.to_lines() == b.to_lines()
