"""LSM simulation harness: schedule shape, stall behaviour, determinism.

The module-scoped runs use a shrunk configuration (smaller memtable,
shorter schedule, lighter backlog) that still reproduces the baseline
stall pathology in about a second of wall time.
"""
import pytest

from ioplane.harness import checks
from ioplane.harness.lsm import (
    BASELINE,
    PAIO,
    LsmSimConfig,
    run_lsm_experiment,
)

MIB = 1 << 20


def short_config() -> LsmSimConfig:
    return LsmSimConfig(
        seed=3,
        base_memtable_bytes=32 * MIB,
        initial_valley_s=20.0,
        cycles=1,
        peak_len_s=40.0,
        valley_len_s=10.0,
        initial_backlog=24,
        client_threads=4,
        compaction_threads=3,
    )


@pytest.fixture(scope="module")
def baseline():
    return run_lsm_experiment(short_config(), BASELINE)


@pytest.fixture(scope="module")
def paio():
    return run_lsm_experiment(short_config(), PAIO)


# -- schedule ---------------------------------------------------------------


def test_rate_schedule_shape():
    cfg = short_config()
    assert cfg.duration_s == 70.0
    assert cfg.rate_at(0.0) == cfg.valley_ops
    assert cfg.rate_at(19.9) == cfg.valley_ops
    assert cfg.rate_at(20.0) == cfg.peak_ops
    assert cfg.rate_at(59.9) == cfg.peak_ops
    assert cfg.rate_at(60.0) == cfg.valley_ops
    assert cfg.peak_ops == pytest.approx(20_000 / 25)
    assert cfg.valley_ops == pytest.approx(5_000 / 25)


def test_default_schedule_length():
    cfg = LsmSimConfig()
    assert cfg.duration_s == 300.0 + 2 * 110.0
    # second cycle's peak
    assert cfg.rate_at(300.0 + 110.0 + 1.0) == cfg.peak_ops


def test_config_validation():
    with pytest.raises(ValueError):
        LsmSimConfig(flush_threads=2)
    with pytest.raises(ValueError):
        LsmSimConfig(get_fraction=1.5)
    with pytest.raises(ValueError):
        LsmSimConfig(high_level_p=-0.1)
    with pytest.raises(ValueError):
        LsmSimConfig(cycles=0)
    with pytest.raises(ValueError):
        LsmSimConfig(scale=-1.0)
    with pytest.raises(ValueError):
        LsmSimConfig(l0_file_quota=0)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        run_lsm_experiment(short_config(), "turbo")


# -- baseline pathology -----------------------------------------------------


def test_baseline_stalls(baseline):
    assert baseline.stall_time_ns > 0
    names = [name for _, name, _ in baseline.events]
    assert names.count("stall_begin") >= 1
    assert names.count("stall_begin") == names.count("stall_end")
    # stalls push the tail latency three orders of magnitude past the median
    assert baseline.p(0.99) > 100 * baseline.p(0.50)


def test_baseline_stall_invariant(baseline):
    outcome = checks.check_lsm_stall_invariant(baseline)
    assert outcome.passed, outcome.detail


def test_flush_event_bookkeeping(baseline):
    names = [name for _, name, _ in baseline.events]
    assert names.count("flush_done") == baseline.flush_count
    assert names.count("freeze") == names.count("immutable_clear")
    assert baseline.flush_count > 0
    assert baseline.low_compactions > 0
    assert baseline.high_compactions > 0


# -- controlled run ---------------------------------------------------------


def test_paio_removes_stalls(baseline, paio):
    assert paio.stall_time_ns == 0
    assert paio.p(0.99) <= baseline.p(0.99) * checks.P99_RATIO
    outcome = checks.check_lsm_stall_invariant(paio)
    assert outcome.passed


def test_paio_keeps_throughput(baseline, paio):
    # both modes complete the whole client schedule
    assert len(paio.ops) == len(baseline.ops)
    drift = abs(paio.mean_ops_per_s - baseline.mean_ops_per_s)
    assert drift <= baseline.mean_ops_per_s * checks.THROUGHPUT_BAND


def test_improvement_checks_pass(baseline, paio):
    outcomes = checks.check_lsm_improvement(baseline, paio)
    assert len(outcomes) == 2
    for outcome in outcomes:
        assert outcome.passed, outcome.line()


# -- result surface ---------------------------------------------------------


def test_makespan_at_least_schedule(baseline, paio):
    cfg = short_config()
    assert baseline.makespan_s >= cfg.duration_s
    assert paio.makespan_s >= cfg.duration_s


def test_csv_rows_shape(baseline):
    rows = baseline.csv_rows()
    metrics = {metric for _, metric, _, _ in rows}
    assert {"throughput", "stall", "latency_p50_ms", "latency_p99_ms",
            "mean_kops"} <= metrics
    stall_values = [value for _, metric, _, value in rows if metric == "stall"]
    assert set(stall_values) == {0.0, 1.0}
    tail = [(metric, series) for _, metric, series, _ in rows[-3:]]
    assert tail == [("latency_p50_ms", BASELINE), ("latency_p99_ms", BASELINE),
                    ("mean_kops", BASELINE)]


def test_runs_are_deterministic(baseline):
    again = run_lsm_experiment(short_config(), BASELINE)
    assert again.csv_rows() == baseline.csv_rows()
    assert again.events == baseline.events
    assert again.stall_time_ns == baseline.stall_time_ns
