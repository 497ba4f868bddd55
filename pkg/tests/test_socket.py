"""Stage agent and control server talking over a real UNIX socket.

These run on the real clock with generous timeouts; they exercise the
handshake, remote rule application, remote collection, and the teardown
paths that simulated-clock tests cannot reach.
"""

import time

import pytest

from ioplane.control import (
    ControlServer,
    FairShareConfig,
    FairSharePolicy,
    LinkError,
    StageRegistry,
)
from ioplane.rules import CreateChannel, CreateObject, HousekeepingRule
from ioplane.stage import Stage, StageConfig
from ioplane.types import Context, RuleError

MIB = 1 << 20


def wait_for(predicate, timeout_s=10.0, interval_s=0.01):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval_s)
    return False


@pytest.fixture
def endpoint(tmp_path):
    return str(tmp_path / "control.sock")


def test_stage_attaches_and_follows_rules(endpoint):
    registry = StageRegistry()
    server = ControlServer(endpoint, registry)
    stage = Stage(StageConfig(name="kvs", control_endpoint=endpoint, workflow_count=4))
    stage.start()
    try:
        assert wait_for(lambda: registry.links()), "stage never attached"
        link = registry.links()[0]
        assert link.info.name == "kvs"
        assert link.info.instance_id == stage.info.instance_id
        assert link.info.pid == stage.info.pid
        assert link.info.workflow_count == 4

        link.apply(HousekeepingRule(0, CreateChannel(1)))
        link.apply(HousekeepingRule(0, CreateObject(1, 1, "drl", {"rate": 1000, "refill_period_us": 10_000})))
        from ioplane.rules import DifferentiationRule, SetDefaultChannel

        link.apply(DifferentiationRule(0, SetDefaultChannel(1)))
        # The stage enforces through the remotely installed topology.
        assert stage.enforce(Context(0, request_size=10)).wait_ns == 0
        result = stage.enforce(Context(0, request_size=10))
        assert result.wait_ns > 0

        rows = link.collect()
        assert sum(r.ops for r in rows) == 2
        assert sum(r.bytes_enforced for r in rows) == 20
        # Collection resets the window.
        assert sum(r.ops for r in link.collect()) == 0
    finally:
        stage.close()
        server.close()
        registry.close()


def test_remote_rule_rejection_keeps_link_alive(endpoint):
    registry = StageRegistry()
    server = ControlServer(endpoint, registry)
    stage = Stage(StageConfig(name="kvs", control_endpoint=endpoint))
    stage.start()
    try:
        assert wait_for(lambda: registry.links())
        link = registry.links()[0]
        link.apply(HousekeepingRule(0, CreateChannel(1)))
        with pytest.raises(RuleError, match="already exists"):
            link.apply(HousekeepingRule(0, CreateChannel(1)))
        assert link.alive
        link.apply(HousekeepingRule(0, CreateChannel(2)))
    finally:
        stage.close()
        server.close()
        registry.close()


def test_stage_departure_fails_the_link(endpoint):
    registry = StageRegistry()
    server = ControlServer(endpoint, registry)
    stage = Stage(StageConfig(name="kvs", control_endpoint=endpoint))
    stage.start()
    try:
        assert wait_for(lambda: registry.links())
        link = registry.links()[0]
        stage.close()
        with pytest.raises(LinkError):
            for _ in range(10):
                link.collect()
                time.sleep(0.05)
        assert not link.alive
    finally:
        stage.close()
        server.close()
        registry.close()


def test_policy_configures_attaching_stage(endpoint):
    cfg = FairShareConfig(
        max_bandwidth_bps=100 * MIB, demands_bps={"tenant1": 40 * MIB}
    )
    registry = StageRegistry()
    server = ControlServer(endpoint, registry, policy=FairSharePolicy(cfg))
    stage = Stage(StageConfig(name="tenant1", control_endpoint=endpoint))
    stage.start()
    try:
        assert wait_for(lambda: registry.links())
        # setup() ran server-side before registration: the stage routes
        # through the policy's channel without local configuration.
        result = stage.enforce(Context(0, request_size=1))
        assert result.channel_id == FairSharePolicy.CH_MAIN
        assert result.object_id == FairSharePolicy.OBJ_DRL
    finally:
        stage.close()
        server.close()
        registry.close()


def test_unknown_stage_is_turned_away_by_policy(endpoint):
    cfg = FairShareConfig(demands_bps={"tenant1": 40 * MIB})
    registry = StageRegistry()
    server = ControlServer(endpoint, registry, policy=FairSharePolicy(cfg))
    stage = Stage(StageConfig(name="impostor", control_endpoint=endpoint, connect_retry_ms=100))
    stage.start()
    try:
        time.sleep(1.0)
        assert registry.links() == []
    finally:
        stage.close()
        server.close()
        registry.close()


def test_stage_reconnects_after_server_restart(endpoint):
    registry = StageRegistry()
    server = ControlServer(endpoint, registry)
    stage = Stage(StageConfig(name="kvs", control_endpoint=endpoint, connect_retry_ms=50))
    stage.start()
    try:
        assert wait_for(lambda: registry.links())
        server.close()
        registry.close()
        registry2 = StageRegistry()
        server2 = ControlServer(endpoint, registry2)
        try:
            assert wait_for(lambda: registry2.links()), "stage never re-attached"
            assert registry2.links()[0].info.instance_id == stage.info.instance_id
        finally:
            server2.close()
            registry2.close()
    finally:
        stage.close()
        server.close()
