import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import buffers_from, rel_rms
from sdrx.blockfilter import OverlapSave
from sdrx.channel import AdcConfig, SampleBuffer
from sdrx.pipeline import (
    Chain,
    OverlapEvents,
    PipelineConfig,
    PipelineFault,
    RunResult,
    Stage,
    iter_pipeline,
    run_pipeline,
    throughput_report,
)
from sdrx.signal import convolve_direct

ADC = AdcConfig(buffer_len=512, quantize=False)


def bufs(n, seed=0):
    r = np.random.default_rng(seed)
    return [SampleBuffer(r.standard_normal(512), i, ADC) for i in range(n)]


def toy_chain(delays=None, log=None):
    """Running-sum chain: a sequential carry plus a parallel stage with optional delays."""

    def carry(item, acc):
        x = item["buffer"].values()
        item["sum"] = acc + np.cumsum(x)
        return item, item["sum"][-1]

    def work(item):
        seq = item["buffer"].seq
        if delays:
            time.sleep(delays.get(seq, 0.0))
        item["out"] = np.sin(item["sum"])
        item["seq"] = seq
        if log is not None:
            log.append(seq)
        return item

    return Chain("toy", [Stage("carry", carry, sequential=True, cold=lambda: 0.0), Stage("work", work)])


def outputs(items):
    return np.concatenate([it["out"] for it in items])


@pytest.mark.parametrize("streams", [1, 2, 3, 5, 8])
def test_matches_serial(streams):
    b = bufs(12)
    ref = toy_chain().run_serial(b)
    run = run_pipeline(iter(b), toy_chain(), PipelineConfig(num_streams=streams))
    assert [it["seq"] for it in run.items] == list(range(12))
    np.testing.assert_array_equal(outputs(run.items), outputs(ref))


def test_out_of_order_completion_still_ordered():
    log = []
    b = bufs(6)
    # seq 1 is slow, so seq 2 finishes its parallel stage first
    chain = toy_chain(delays={1: 0.3}, log=log)
    run = run_pipeline(iter(b), chain, PipelineConfig(num_streams=5, max_active=5))
    assert log.index(2) < log.index(1)
    assert [it["seq"] for it in run.items] == list(range(6))
    np.testing.assert_array_equal(outputs(run.items), outputs(toy_chain().run_serial(b)))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 6), st.lists(st.floats(0, 0.01), min_size=8, max_size=8))
def test_determinism_under_random_delays(streams, delays):
    b = bufs(8, seed=3)
    run = run_pipeline(iter(b), toy_chain(dict(enumerate(delays))), PipelineConfig(num_streams=streams))
    np.testing.assert_array_equal(outputs(run.items), outputs(toy_chain().run_serial(b)))


def test_gap_faults():
    b = bufs(4)
    del b[2]
    with pytest.raises(PipelineFault, match="gap"):
        run_pipeline(iter(b), toy_chain(), PipelineConfig(num_streams=2))


def test_stage_failure_faults_and_drains():
    def boom(item):
        if item["buffer"].seq == 3:
            raise RuntimeError("bad block")
        return item

    chain = Chain("f", [Stage("carry", lambda it, s: (it, s), sequential=True), Stage("boom", boom)])
    got = []
    t0 = time.perf_counter()
    with pytest.raises(PipelineFault, match="bad block"):
        for it in iter_pipeline(iter(bufs(20)), chain, PipelineConfig(num_streams=3)):
            got.append(it["buffer"].seq)
    assert time.perf_counter() - t0 < 10
    assert got == [0, 1, 2][: len(got)]
    # no lane threads left behind
    time.sleep(0.2)
    assert not [t for t in threading.enumerate() if t.name.startswith("lane")]


def test_cold_start_state():
    seen = {}

    def carry(item, tail):
        seen[item["buffer"].seq] = tail
        return item, item["buffer"].values()[-4:]

    chain = Chain("c", [Stage("carry", carry, sequential=True, cold=lambda: np.zeros(4))])
    b = bufs(3)
    run_pipeline(iter(b), chain, PipelineConfig(num_streams=2))
    np.testing.assert_array_equal(seen[0], np.zeros(4))
    np.testing.assert_array_equal(seen[2], b[1].values()[-4:])


class TestEvents:
    def test_signal_then_wait(self):
        ev = OverlapEvents()
        ev.signal("k", 0, "p")
        assert ev.wait("k", 0) == "p"

    def test_wait_minus_one_is_cold(self):
        assert OverlapEvents().wait("k", -1, cold=lambda: "cold") == "cold"

    def test_double_signal(self):
        ev = OverlapEvents()
        ev.signal("k", 0, 1)
        with pytest.raises(PipelineFault):
            ev.signal("k", 0, 2)

    def test_consumed_once(self):
        ev = OverlapEvents()
        ev.signal("k", 0, 1)
        ev.wait("k", 0)
        with pytest.raises(PipelineFault):
            ev.wait("k", 0)
        with pytest.raises(PipelineFault):
            ev.signal("k", 0, 1)

    def test_wait_blocks_until_signal(self):
        ev = OverlapEvents()
        out = []
        t = threading.Thread(target=lambda: out.append(ev.wait("k", 5)))
        t.start()
        time.sleep(0.05)
        assert not out
        ev.signal("k", 5, "late")
        t.join(1)
        assert out == ["late"]

    def test_poison_wakes_waiters(self):
        ev = OverlapEvents()
        err = []

        def waiter():
            try:
                ev.wait("k", 1)
            except PipelineFault as exc:
                err.append(exc)

        t = threading.Thread(target=waiter)
        t.start()
        ev.poison(RuntimeError("x"))
        t.join(1)
        assert err


def test_overlap_save_chain_matches_direct():
    r = np.random.default_rng(11)
    h = r.standard_normal(503)
    x = r.standard_normal(16 * 2048)
    ols = OverlapSave(h)

    def stage(item, tail):
        y, tail = ols.process(item["buffer"].values(), tail)
        item["y"] = y
        return item, tail

    chain = Chain("ols", [Stage("ols", stage, sequential=True, cold=lambda: np.zeros(512))])
    run = run_pipeline(iter(buffers_from(x, 2048)), chain, PipelineConfig(num_streams=5))
    y = np.concatenate([it["y"] for it in run.items])
    ref = convolve_direct(x, h)[: len(x)]
    assert rel_rms(y[512:], ref[512:]) < 1e-9


class TestReport:
    def test_empty(self):
        rep = throughput_report(RunResult([], 0, 0, 0.0, 4e9))
        assert rep.samples_per_s == 0 and rep.realtime_factor == 0 and rep.buffers == 0

    def test_arithmetic(self):
        rep = throughput_report(RunResult([None] * 10, 10, 10 * 65536, 2.0, 4e9, {"a": 1.0, "b": 3.0}))
        assert rep.samples_per_s == pytest.approx(10 * 65536 / 2.0)
        assert rep.buffers_per_s == pytest.approx(5.0)
        assert rep.realtime_factor == pytest.approx(10 * 65536 / 2.0 / 4e9)
        assert rep.stage_share == {"a": 0.25, "b": 0.75}

    def test_run_counts_samples(self):
        run = run_pipeline(iter(bufs(4)), toy_chain(), PipelineConfig(num_streams=2))
        assert run.samples == 4 * 512 and run.sample_rate == 4e9
        assert set(run.stage_time) == {"carry", "work"}


def test_config_invariants():
    with pytest.raises(ValueError):
        PipelineConfig(num_streams=0)
    assert PipelineConfig(num_streams=3).depth == 6
