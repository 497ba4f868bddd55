"""Tenant fairness harness: the three modes on a fast two-tenant setup.

alpha (6 MiB/s demand after scaling, 120 MiB total) arrives at t=0,
beta (10 MiB/s, 100 MiB) at t=5.  Small enough that all three modes
finish in well under a second of wall time.
"""
import pytest

from ioplane.harness import checks
from ioplane.harness.tenants import (
    BASELINE,
    MODES,
    PAIO,
    STATIC,
    TenantSimConfig,
    TenantSpec,
    run_tenant_experiment,
)

MIB = 1 << 20


def short_config() -> TenantSimConfig:
    return TenantSimConfig(
        seed=7,
        base_max_bandwidth_bps=500 * MIB,
        base_disk_bps=600 * MIB,
        tenants=(
            TenantSpec("alpha", 150 * MIB, 1500 * MIB, 2, 0.0),
            TenantSpec("beta", 250 * MIB, 1250 * MIB, 2, 5.0),
        ),
    )


@pytest.fixture(scope="module")
def runs():
    cfg = short_config()
    return {mode: run_tenant_experiment(cfg, mode) for mode in MODES}


# -- config surface ---------------------------------------------------------


def test_demand_scaling():
    cfg = short_config()
    assert cfg.demands() == {"alpha": 6 * MIB, "beta": 10 * MIB}
    assert cfg.max_bandwidth_bps == 20 * MIB
    alpha = cfg.tenants[0]
    assert cfg.total_bytes(alpha) == 2 * int(1500 * MIB / 25)


def test_config_validation():
    spec = TenantSpec("t", MIB, MIB, 1, 0.0)
    with pytest.raises(ValueError):
        TenantSimConfig(tenants=())
    with pytest.raises(ValueError):
        TenantSimConfig(tenants=tuple(
            TenantSpec(f"t{i}", MIB, MIB, 1, 0.0) for i in range(5)))
    with pytest.raises(ValueError):
        TenantSimConfig(tenants=(spec, spec))
    with pytest.raises(ValueError):
        TenantSimConfig(tenants=(TenantSpec("t", 0, MIB, 1, 0.0),))
    with pytest.raises(ValueError):
        TenantSimConfig(tenants=(TenantSpec("t", MIB, MIB, 1, -1.0),))
    with pytest.raises(ValueError):
        TenantSimConfig(scale=0)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        run_tenant_experiment(short_config(), "anarchy")


# -- common behaviour -------------------------------------------------------


def test_arrival_schedule_honoured(runs):
    for mode in MODES:
        assert runs[mode].arrivals_s == {"alpha": 0.0, "beta": 5.0}


def test_everyone_finishes(runs):
    for mode in MODES:
        assert set(runs[mode].completions_s) == {"alpha", "beta"}


def test_events_are_ordered(runs):
    for mode in MODES:
        events = runs[mode].events
        assert [t for t, _, _ in events] == sorted(t for t, _, _ in events)
        kinds = [kind for _, kind, _ in events]
        assert kinds.count("arrival") == 2
        assert kinds.count("departure") == 2
        # epoch_count - 1 interior markers per tenant
        assert kinds.count("epoch") == 2


# -- per-mode behaviour -----------------------------------------------------


def test_baseline_ignores_demands(runs):
    # unthrottled processor sharing beats every limited mode
    base = runs[BASELINE]
    for mode in (STATIC, PAIO):
        limited = runs[mode]
        for name in ("alpha", "beta"):
            assert base.completions_s[name] < limited.completions_s[name]
    assert base.rate_history == []


def test_static_pins_each_tenant_to_demand(runs):
    cfg = short_config()
    static = runs[STATIC]
    assert static.rate_history == []
    for spec in cfg.tenants:
        floor = cfg.total_bytes(spec) / cfg.demand_bps(spec)
        span = static.active_span_s(spec.name)
        assert span == pytest.approx(floor, rel=0.05)
        # never meaningfully above its own limit
        assert static.mean_bandwidth_bps(spec.name) <= cfg.demand_bps(spec) * 1.05


def test_paio_fairness_checks(runs):
    for outcome in checks.check_tenant_fairness(runs[PAIO]):
        assert outcome.passed, outcome.line()


def test_paio_phase_structure(runs):
    outcome = checks.check_tenant_phases(runs[PAIO])
    assert outcome.passed, outcome.line()


def test_paio_reallocates_surplus(runs):
    # the control loop must have stepped and handed out rates
    history = runs[PAIO].rate_history
    assert history
    assert all(set(entry) <= {"alpha", "beta"} for entry in history)
    outcome = checks.check_tenant_static_contrast(runs[STATIC], runs[PAIO])
    assert outcome.passed, outcome.line()


# -- result surface ---------------------------------------------------------


def test_sampled_sums_aggregate(runs):
    result = runs[PAIO]
    per_tenant = sum(delta for _, _, delta in result.bandwidth_samples)
    summed = sum(bps for _, bps in result.sampled_sums_bps())
    assert summed == pytest.approx(per_tenant)


def test_csv_rows_shape(runs):
    rows = runs[PAIO].csv_rows()
    metrics = {metric for _, metric, _, _ in rows}
    assert {"bandwidth_mibs", "arrival", "departure", "completion_s"} <= metrics
    completions = {series: value for _, metric, series, value in rows
                   if metric == "completion_s"}
    assert completions == runs[PAIO].completions_s


def test_runs_are_deterministic(runs):
    cfg = short_config()
    again = run_tenant_experiment(cfg, PAIO)
    assert again.csv_rows() == runs[PAIO].csv_rows()
    assert again.rate_history == runs[PAIO].rate_history
