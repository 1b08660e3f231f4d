"""
Scenarios
=========

Each scenario kind wires one or more dataplanes, drives them and records
into a MetricsCollector. Scenario files may bring their own templates and
rules; kinds that need a particular topology fall back to built-in
defaults when the file has none.

    forward    run the configured templates, rules and source as-is
    churn      one chain per request, torn down after its reply
    startup    full build vs cached activation across heap sizes
    chain      throughput per chain length, copying vs zero-copy reference
    kv         memcached endpoint: capacity probe, then latency at fractions of it
    kv_multi   one kv chain per client, spread over worker cores
    tenants    N customers, each with its own firewall(+monitor) chain
    ping       ICMP echo latency
    mma        copier-only throughput in Gb/s
    restore    terminate_restore cost vs a plain copy+zero of the same bytes
    scale      activation latency drift over thousands of activations
    fairness   busy-time share of CPU-hog FWPs on one core
    calibrate  per-message service time of the bundled apps, chosen quantum

Usage:
    from app.bench.scenarios import run_scenario

    report = run_scenario(load_config("scenarios/churn.toml"))
    report.print_summary()
"""

import logging
import time
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.chains import ChainState, ChainTemplate, StageSpec
from app.gateway import MATCH_ALL, FlowAction, FlowPattern, PingSource, SyntheticSource
from app.mma import MmaEngine, MmaGroup
from app.msgpool import MessagePool, PoolExhausted
from app.scheduler import SchedulerStats, calibrate_quantum
from .config import ScenarioConfig, SourceSchema
from .dataplane import Dataplane, make_source
from .exceptions import BenchError, RuntimeFault
from .metrics import MetricsCollector, MetricsReport

logger = logging.getLogger(__name__)

Audit = Dict[str, Any]
ScenarioFn = Callable[[ScenarioConfig, MetricsCollector], Audit]
Rule = Tuple[FlowPattern, int, FlowAction, str]

MiB = 1 << 20
KV_PORT = 11211

SCENARIOS: Dict[str, Tuple[ScenarioFn, str]] = {}

# package -> module name used in fault reports
MODULES = {
    "msgpool": "msgpool",
    "mma": "mma",
    "fwp": "fwp_runtime",
    "chains": "chain_manager",
    "scheduler": "scheduler",
    "gateway": "gateway",
    "apps": "apps",
    "bench": "bench_cli",
}


def scenario(kind: str, description: str) -> Callable[[ScenarioFn], ScenarioFn]:
    def decorator(fn: ScenarioFn) -> ScenarioFn:
        SCENARIOS[kind] = (fn, description)
        return fn
    return decorator


def list_scenarios() -> List[Tuple[str, str]]:
    """(kind, description) for every registered scenario."""
    return [(kind, description) for kind, (_, description) in SCENARIOS.items()]


def run_scenario(config: ScenarioConfig) -> MetricsReport:
    """
    Execute a validated scenario and build its report.

    Raises:
        RuntimeFault: The scenario aborted; `module` names where
    """
    section = config.scenario
    kind = section.kind.value
    fn, _ = SCENARIOS[kind]
    metrics = MetricsCollector(section.name, kind=kind, seed=section.seed, execution=section.execution)
    metrics.note("latencies are in-host service time: Net-In admission to Net-Out emission")

    logger.info(f"Running scenario '{section.name}' ({kind}, seed {section.seed}, {section.execution})")
    started = time.perf_counter()
    try:
        audit = fn(config, metrics)
    except BenchError:
        raise
    except Exception as exc:
        module = failing_module(exc)
        logger.error(f"Scenario '{section.name}' failed in {module}: {exc!r}", exc_info=True)
        raise RuntimeFault(module, f"{type(exc).__name__}: {exc}") from exc
    elapsed = time.perf_counter() - started

    if not audit.get("ok", False):
        logger.error(f"Conservation audit failed: {audit}")
    return metrics.report(elapsed, audit)


def failing_module(exc: BaseException) -> str:
    """Dataplane module of the innermost frame that raised `exc`."""
    module = MODULES["bench"]
    tb = exc.__traceback__
    while tb is not None:
        parts = tb.tb_frame.f_globals.get("__name__", "").split(".")
        if len(parts) > 1 and parts[0] == "app" and parts[1] in MODULES:
            module = MODULES[parts[1]]
        tb = tb.tb_next
    return module


# ────────────────────────────────
# Helpers
# ────────────────────────────────

def chain(
    name: str,
    apps: Sequence[str],
    workers: int = 1,
    configs: Optional[Sequence[Dict[str, Any]]] = None,
    first_core: int = 0,
    **sizes: int,
) -> ChainTemplate:
    """Straight-path template; stage i runs on worker (first_core + i) % workers."""
    configs = configs or [{} for _ in apps]
    stages = tuple(
        StageSpec(app, (first_core + i) % workers, dict(cfg)) for i, (app, cfg) in enumerate(zip(apps, configs))
    )
    return ChainTemplate(name, stages, **sizes)


def _workers(config: ScenarioConfig) -> int:
    return len(config.cores.workers)


def _dataplane(
    config: ScenarioConfig,
    templates: Sequence[ChainTemplate] = (),
    rules: Sequence[Rule] = (),
    source=None,
    **overrides: Any,
) -> Dataplane:
    """Dataplane from the file's templates and rules, or from the given defaults when it has none."""
    dataplane = Dataplane.from_config(config, source=source, **overrides)
    if not config.templates:
        prebuild = config.params.get("prebuild")
        for template in templates:
            dataplane.load_template(template, prebuild)
        for pattern, priority, action, template_id in rules:
            dataplane.add_rule(pattern, priority, action, template_id)
    return dataplane


def _source(schema: SourceSchema, seed: int, **updates: Any):
    return make_source(schema.model_copy(update=updates), seed)


def drive(dataplane: Dataplane, config: ScenarioConfig, duration: Optional[float] = None) -> float:
    """
    Run the dataplane for the scenario duration (or until its source is
    exhausted), stop admission and drain.

    Returns:
        Elapsed wall time in seconds
    """
    duration = config.scenario.duration_s if duration is None else duration
    started = time.perf_counter()
    if config.scenario.execution != "threaded":
        dataplane.run_for(duration)
        return time.perf_counter() - started

    dataplane.start()
    try:
        deadline = started + duration
        while time.perf_counter() < deadline and not dataplane.source_done:
            time.sleep(0.005)
        dataplane.admitting = False
        if not dataplane.wait_idle(timeout=max(5.0, duration)):
            logger.warning("dataplane still busy at stop")
    finally:
        dataplane.stop()
    return time.perf_counter() - started


def _scheduler_totals(dataplane: Dataplane) -> Dict[str, int]:
    totals = SchedulerStats().to_dict()
    for core in dataplane.schedulers.cores:
        for name, value in dataplane.schedulers[core].stats.to_dict().items():
            totals[name] += value
    return totals


def app_counters(dataplane: Dataplane) -> Dict[str, int]:
    """Arena counters of every active FWP, summed per application."""
    totals: Dict[str, int] = {}
    for instance in list(dataplane.manager.active.values()):
        for fwp in instance.fwps:
            stats = getattr(fwp.app, "stats", None)
            if stats is None:
                continue
            for name, value in stats(fwp).items():
                key = f"{fwp.type_name}.{name}"
                totals[key] = totals.get(key, 0) + value
    return totals


def collect(dataplane: Dataplane, metrics: MetricsCollector, elapsed: float, label: str = "") -> None:
    """Record service latency, throughput and every context's counters."""
    prefix = f"{label}." if label else ""
    metrics.record_many(f"{prefix}service", dataplane.net_out.latencies, scale=1e6)

    out = dataplane.net_out.stats
    if elapsed > 0:
        metrics.rate(f"{prefix}msgs_per_s", out.emitted / elapsed)
        metrics.rate(f"{prefix}bytes_per_s", out.bytes_emitted / elapsed)
    metrics.set_counters(dataplane.net_in.stats.to_dict(), prefix=f"{prefix}net_in.")
    metrics.set_counters(out.to_dict(), prefix=f"{prefix}net_out.")
    metrics.set_counters(dataplane.mma.stats.to_dict(), prefix=f"{prefix}mma.")
    metrics.set_counters(_scheduler_totals(dataplane), prefix=f"{prefix}sched.")
    metrics.set_counters(app_counters(dataplane), prefix=f"{prefix}app.")

    cache = dataplane.manager.cache.stats
    metrics.set_counters(
        {
            "hits": cache.hits,
            "misses": cache.misses,
            "builds": cache.builds,
            "restores": cache.restores,
            "rebuilt": cache.rebuilt,
        },
        prefix=f"{prefix}cache.",
    )
    metrics.result(f"{prefix}cache_hit_ratio", round(cache.hit_ratio, 4))
    metrics.record_many(f"{prefix}activate", cache.activate_us)
    metrics.record_many(f"{prefix}restore", cache.restore_us)


def run(dataplane: Dataplane, config: ScenarioConfig, metrics: MetricsCollector, label: str = "") -> Audit:
    """Drive, collect and audit one dataplane, then release it."""
    try:
        elapsed = drive(dataplane, config)
        collect(dataplane, metrics, elapsed, label)
        return dataplane.audit()
    finally:
        dataplane.close()


def merge_audits(audits: Sequence[Audit]) -> Audit:
    """One audit over several dataplanes."""
    keys = ("admitted", "emitted", "in_flight", "consumed", "discarded")
    balance = {k: sum(a.get("balance", {}).get(k, 0) for a in audits) for k in keys}
    return {
        "ok": all(a.get("ok", False) for a in audits),
        "runs": len(audits),
        "pools": sum(a.get("pools", 0) for a in audits),
        "failures": [f for a in audits for f in a.get("failures", [])],
        "lost_wakeups": [w for a in audits for w in a.get("lost_wakeups", [])],
        "balance": balance,
        "balanced": all(a.get("balanced", False) for a in audits),
    }


def pool_audit(pools: Sequence[MessagePool], produced: int, consumed: int) -> Audit:
    failures = []
    for pool in pools:
        result = pool.audit()
        if not result.ok:
            failures.append({"pool": pool.name, "missing": list(result.missing), "duplicated": list(result.duplicated)})
    balanced = produced == consumed
    return {
        "ok": not failures and balanced,
        "pools": len(pools),
        "failures": failures,
        "lost_wakeups": [],
        "balance": {"admitted": produced, "emitted": consumed, "in_flight": 0, "consumed": 0, "discarded": 0},
        "balanced": balanced,
    }


def _median(values: Sequence[float]) -> float:
    return float(np.median(values)) if len(values) else 0.0


def _settle(dataplane: Dataplane, instance) -> None:
    """Step until a terminating instance is back in the cache."""
    for _ in range(10_000):
        if instance.state == ChainState.CACHED:
            return
        dataplane.step()
    raise RuntimeFault("chain_manager", f"instance {instance.instance_id} never finished teardown")


# ────────────────────────────────
# Traffic scenarios
# ────────────────────────────────

@scenario("forward", "Run the configured templates, rules and source as-is")
def forward(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    dataplane = _dataplane(
        config,
        [chain("fwd", ["fwd"], _workers(config))],
        [(MATCH_ALL, 0, FlowAction.SHARED, "fwd")],
    )
    return run(dataplane, config, metrics)


@scenario("churn", "Per-request chains: activate, reply, terminate and restore for every request")
def churn(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    source = _source(
        config.source,
        config.scenario.seed,
        per_request=True,
        rate_pps=config.source.rate_pps or params.get("rate_pps", 1000.0),
    )
    dataplane = _dataplane(
        config,
        [chain("req", ["fwd"], _workers(config), [{"terminate_after": 1}])],
        [(MATCH_ALL, 0, FlowAction.PER_FLOW, "req")],
        source=source,
    )
    audit = run(dataplane, config, metrics)

    target = float(params.get("target_p90_us", 200.0))
    p90 = metrics.summary("service").p90
    metrics.result("service_p90_us", round(p90, 2))
    metrics.result("target_p90_us", target)
    metrics.result("p90_within_target", bool(metrics.summary("service").count and p90 <= target))
    return audit


@scenario("ping", "ICMP echo through a ping responder chain")
def ping(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    source = None
    if config.source.kind != "ping":
        source = PingSource(rate_pps=config.params.get("rate_pps", 1000.0), size=config.source.size, total=config.source.total)
    dataplane = _dataplane(
        config,
        [chain("ping", ["ping"], _workers(config))],
        [(FlowPattern.parse(proto=1), 0, FlowAction.SHARED, "ping")],
        source=source,
    )
    audit = run(dataplane, config, metrics)
    summary = metrics.summary("service")
    metrics.result("rtt_p50_us", round(summary.p50, 2))
    metrics.result("rtt_p99_us", round(summary.p99, 2))
    return audit


@scenario("tenants", "N customers each behind their own firewall (or firewall + monitor) chain")
def tenants(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    counts = params.get("tenants", [1, 4, 16])
    mixed = params.get("chains", "mixed") == "mixed"
    workers = _workers(config)
    audits = []

    for n in counts:
        source = SyntheticSource(
            rate_pps=config.source.rate_pps or params.get("rate_pps", 10_000.0),
            size=config.source.size,
            flows=n,
            total=config.source.total,
            seed=config.scenario.seed,
        )
        dataplane = Dataplane.from_config(config, source=source, cache_low=0, cache_high=1)
        for i in range(n):
            port = source.flow_tuple(i)[1]
            apps = ["firewall", "monitor"] if mixed and i % 2 else ["firewall"]
            configs = [{"allow": [{"src_port": port}]}] + [{}] * (len(apps) - 1)
            template = chain(f"tenant{i}", apps, workers, configs, first_core=i)
            dataplane.load_template(template, prebuild=1)
            dataplane.add_rule(FlowPattern.parse(src_port=port), 10, FlowAction.SHARED, template.template_id)
        audits.append(run(dataplane, config, metrics, label=f"n{n}"))

        summary = metrics.summary(f"n{n}.service")
        metrics.result(f"n{n}_p50_us", round(summary.p50, 2))
        metrics.result(f"n{n}_p99_us", round(summary.p99, 2))
    return merge_audits(audits)


# ────────────────────────────────
# Key-value
# ────────────────────────────────

def _kv_schema(config: ScenarioConfig) -> SourceSchema:
    if config.source.kind == "kv":
        return config.source
    return SourceSchema(kind="kv", warm=1000)


def _kv_rule(action: FlowAction) -> Rule:
    return FlowPattern.parse(dst_port=KV_PORT, proto=17), 0, action, "kv"


@scenario("kv", "memcached endpoint: capacity probe, then latency at fractions of capacity")
def kv(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    schema = _kv_schema(config)
    seed = config.scenario.seed
    template = chain("kv", ["kv"], _workers(config))
    audits = []

    if not params.get("probe", True):
        dataplane = _dataplane(config, [template], [_kv_rule(FlowAction.SHARED)], source=_source(schema, seed))
        return run(dataplane, config, metrics)

    requests = int(params.get("probe_requests", 20_000))
    dataplane = _dataplane(
        config, [template], [_kv_rule(FlowAction.SHARED)],
        source=_source(schema, seed, rate_pps=0.0, total=requests), record_latency=False,
    )
    try:
        elapsed = drive(dataplane, config, duration=float("inf"))
        capacity = dataplane.net_out.stats.emitted / elapsed if elapsed > 0 else 0.0
        audits.append(dataplane.audit())
    finally:
        dataplane.close()
    metrics.result("capacity_rps", round(capacity, 1))
    logger.info(f"kv capacity probe: {capacity:,.0f} req/s")

    for fraction in params.get("loads", [0.1, 0.5]):
        label = f"load{int(fraction * 100)}"
        dataplane = _dataplane(
            config, [template], [_kv_rule(FlowAction.SHARED)],
            source=_source(schema, seed, rate_pps=max(1.0, capacity * fraction), total=None),
        )
        audits.append(run(dataplane, config, metrics, label=label))
        metrics.result(f"{label}_p99_us", round(metrics.summary(f"{label}.service").p99, 2))
        metrics.result(f"{label}_drops", dataplane.net_in.stats.dropped_overrun)

    loads = params.get("loads", [0.1, 0.5])
    if len(loads) >= 2:
        low, high = (f"load{int(f * 100)}" for f in (min(loads), max(loads)))
        p99_low = metrics.summary(f"{low}.service").p99
        p99_high = metrics.summary(f"{high}.service").p99
        ratio = p99_high / p99_low if p99_low else 0.0
        metrics.result("p99_ratio", round(ratio, 3))
        metrics.result("p99_flat", bool(p99_low and ratio <= params.get("max_p99_ratio", 5.0)))
    return merge_audits(audits)


@scenario("kv_multi", "One kv chain per client, activated on first request and spread over cores")
def kv_multi(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    schema = _kv_schema(config)
    if schema.clients == 1:
        schema = schema.model_copy(update={"clients": int(config.params.get("clients", 8))})
    dataplane = _dataplane(
        config,
        [chain("kv", ["kv"], _workers(config))],
        [_kv_rule(FlowAction.PER_FLOW)],
        source=_source(schema, config.scenario.seed),
        spread=True,
    )
    cores = set()
    try:
        elapsed = drive(dataplane, config)
        for instance in dataplane.manager.active.values():
            cores.update(instance.cores)
        collect(dataplane, metrics, elapsed)
        audit = dataplane.audit()
    finally:
        dataplane.close()
    metrics.result("clients", schema.clients)
    metrics.result("cores_used", sorted(cores))
    return audit


# ────────────────────────────────
# Chain overhead
# ────────────────────────────────

@scenario("chain", "Throughput per chain length, MMA copying vs a zero-copy reference")
def chain_overhead(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    lengths = params.get("lengths", [1, 2, 3, 4, 5, 6])
    sizes = params.get("sizes", [64, 1024])
    messages = int(params.get("messages", 20_000))
    min_ratio = float(params.get("min_copy_ratio", 0.8))
    workers = _workers(config)
    audits = []

    for size in sizes:
        copy_rates = []
        for length in lengths:
            rates = {}
            for mode, copy_payload in (("copy", True), ("ref", False)):
                source = SyntheticSource(size=size, total=messages, seed=config.scenario.seed)
                dataplane = Dataplane.from_config(
                    config, source=source, copy_payload=copy_payload, record_latency=False, cache_low=0, cache_high=1,
                )
                template = chain(f"len{length}", ["fwd"] * length, workers)
                dataplane.load_template(template, prebuild=1)
                dataplane.add_rule(MATCH_ALL, 0, FlowAction.SHARED, template.template_id)
                try:
                    elapsed = drive(dataplane, config)
                    rates[mode] = dataplane.net_out.stats.emitted / elapsed if elapsed > 0 else 0.0
                    audits.append(dataplane.audit())
                finally:
                    dataplane.close()
                metrics.rate(f"L{length}_{size}B_{mode}", rates[mode])

            ratio = rates["copy"] / rates["ref"] if rates["ref"] else 0.0
            metrics.result(f"copy_ratio_L{length}_{size}B", round(ratio, 3))
            if size >= 1024 and length <= 3:
                metrics.result(f"copy_ok_L{length}_{size}B", ratio >= min_ratio)
            copy_rates.append(rates["copy"])

        monotone = all(a >= b for a, b in zip(copy_rates, copy_rates[1:]))
        metrics.result(f"monotone_{size}B", monotone)
    return merge_audits(audits)


# ────────────────────────────────
# Control-plane costs
# ────────────────────────────────

@scenario("startup", "Full build vs cached activation latency across heap-arena sizes")
def startup(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    heaps = params.get("heap_sizes", [1 * MiB, 8 * MiB])
    iterations = int(params.get("iterations", 200))
    apps = params.get("apps", ["fwd"])
    audits = []
    activate_medians = []

    for heap in heaps:
        label = f"{heap // MiB}MiB" if heap >= MiB else f"{heap}B"
        dataplane = Dataplane(workers=_workers(config), cache_low=0, cache_high=1, record_latency=False)
        template = chain(f"start{label}", apps, _workers(config), heap_size=heap)
        manager = dataplane.manager
        manager.load_template(template)
        try:
            for _ in range(iterations):
                manager.build_cached(template.template_id, 1)
                instance = manager.activate(template.template_id)
                dataplane.step()
                manager.terminate_restore(instance)
                _settle(dataplane, instance)
                manager.reclaim(template.template_id, 1)
            audits.append(dataplane.audit())
        finally:
            dataplane.close()

        stats = manager.cache.stats
        metrics.record_many(f"build_{label}", stats.build_us)
        metrics.record_many(f"activate_{label}", stats.activate_us)
        build, activate = _median(stats.build_us), _median(stats.activate_us)
        activate_medians.append(activate)
        metrics.result(f"build_p50_{label}_us", round(build, 2))
        metrics.result(f"activate_p50_{label}_us", round(activate, 2))
        metrics.result(f"speedup_{label}", round(build / activate, 1) if activate else 0.0)
        metrics.result(f"speedup_ok_{label}", bool(activate and build / activate >= params.get("min_speedup", 10)))

    if len(activate_medians) >= 2 and activate_medians[0]:
        spread = abs(activate_medians[-1] - activate_medians[0]) / activate_medians[0]
        metrics.result("activate_heap_spread", round(spread, 3))
        metrics.result("activate_heap_independent", spread < params.get("max_heap_spread", 0.2))
    return merge_audits(audits)


@scenario("restore", "terminate_restore cost vs a plain copy + zero of the same byte count")
def restore(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    iterations = int(params.get("iterations", 1000))
    verify = bool(params.get("verify", True))
    workers = _workers(config)
    if config.templates:
        template = config.templates[0].to_template()
    else:
        template = chain("restore", ["kv"], workers, heap_size=int(params.get("heap_size", 1 * MiB)))

    dataplane = Dataplane(workers=workers, cache_low=0, cache_high=1, record_latency=False)
    manager = dataplane.manager
    manager.load_template(template)
    manager.build_cached(template.template_id, 1)
    probe_kv = verify and template.stages[0].app == "kv"
    leaks = 0
    wall_us: List[float] = []
    plain_us: List[float] = []

    try:
        for _ in range(iterations):
            instance = manager.activate(template.template_id)
            dataplane.step()
            head = instance.head
            if probe_kv:
                if head.app.execute(head, b"get secret\r\n") != b"END\r\n":
                    leaks += 1
                head.app.execute(head, b"set secret 0 0 6\r\nhunter\r\n")

            started = time.perf_counter()
            done = manager.terminate_restore(instance)
            while not done:
                dataplane.mma.sweep()
                manager.service()
                done = instance.state == ChainState.CACHED
            wall_us.append((time.perf_counter() - started) * 1e6)

            written = manager.cache.stats.restore_bytes[-1]
            image = min(instance.image.nbytes, written)
            src = np.ones(image, dtype=np.uint8)
            dst = np.empty(written, dtype=np.uint8)
            started = time.perf_counter()
            dst[:image] = src
            dst[image:].fill(0)
            plain_us.append((time.perf_counter() - started) * 1e6)
        audit = dataplane.audit()
    finally:
        dataplane.close()

    metrics.record_many("terminate_restore", wall_us)
    metrics.record_many("restore", manager.cache.stats.restore_us)
    metrics.record_many("plain_copy_zero", plain_us)
    ratio = _median(wall_us) / _median(plain_us) if _median(plain_us) else 0.0
    metrics.result("restore_bytes", int(manager.cache.stats.restore_bytes[-1]) if manager.cache.stats.restore_bytes else 0)
    metrics.result("restore_vs_plain", round(ratio, 3))
    metrics.result("restore_ok", bool(ratio and ratio <= params.get("max_ratio", 3.0)))
    if probe_kv:
        metrics.result("residual_reads", leaks)
        metrics.count("confidentiality_trials", iterations)
    return audit


@scenario("scale", "Activation latency over thousands of incremental activations")
def scale(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    chains = int(params.get("chains", 2000))
    settle_every = int(params.get("settle_every", 64))
    template = chain(
        "scale", ["fwd"], _workers(config),
        slot_count=int(params.get("slot_count", 32)),
        slot_size=int(params.get("slot_size", 256)),
        heap_size=int(params.get("heap_size", 16 << 10)),
    )
    dataplane = Dataplane(workers=_workers(config), cache_low=0, cache_high=chains, record_latency=False)
    manager = dataplane.manager
    try:
        dataplane.load_template(template, prebuild=chains)
        for i in range(chains):
            manager.activate(template.template_id)
            if (i + 1) % settle_every == 0:
                dataplane.step()
        dataplane.step()
        audit = dataplane.audit()
    finally:
        dataplane.close()

    samples = np.asarray(manager.cache.stats.activate_us)
    metrics.record_many("activate", samples)
    median = float(np.median(samples))
    decile = max(1, len(samples) // 10)
    first, last = float(np.median(samples[:decile])), float(np.median(samples[-decile:]))
    metrics.result("chains", chains)
    metrics.result("std_over_median", round(float(samples.std()) / median, 3))
    metrics.result("last_over_first_decile", round(last / first, 3))
    metrics.result("no_drift", bool(samples.std() <= 0.1 * median and last <= 1.5 * first))
    return audit


# ────────────────────────────────
# Copier & scheduler
# ────────────────────────────────

@scenario("mma", "Copier-only throughput of fixed-size messages")
def mma(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    size = int(params.get("size", 1024))
    messages = int(params.get("messages", 200_000))
    slot_count = int(params.get("slot_count", 1024))
    engines = len(config.cores.mma)
    payload = np.random.default_rng(config.scenario.seed).integers(0, 256, size, dtype=np.uint8).tobytes()
    audits = []
    gbps: Dict[str, float] = {}

    for mode, copy_payload in (("copy", True), ("ref", False)):
        copier = MmaGroup(engines, copy_payload=copy_payload) if engines > 1 else MmaEngine(copy_payload=copy_payload)
        pairs = []
        for i in range(engines):
            src = MessagePool(slot_count, size, name=f"{mode}.src{i}")
            src.reserve(slot_count)
            dst = MessagePool(slot_count, size, name=f"{mode}.dst{i}")
            copier.attach_pool(src)
            copier.attach_pool(dst)
            copier.register_channel(src.pool_id, dst.pool_id)
            pairs.append((src, dst))

        sent = received = stalled = 0
        busy = 0.0
        while received < messages:
            for src, _ in pairs:
                while sent < messages:
                    try:
                        handle = src.alloc(size)
                    except PoolExhausted:
                        break
                    src.write(handle, payload)
                    src.fwp_send(handle)
                    sent += 1
                src.flush_on_block()

            started = time.perf_counter()
            moved = copier.sweep()
            busy += time.perf_counter() - started

            for _, dst in pairs:
                while (handle := dst.fwp_recv()) is not None:
                    dst.free(handle)
                    received += 1
            stalled = 0 if moved else stalled + 1
            if stalled > 1000:
                raise RuntimeFault("mma", f"copier stalled after {received} messages")

        gbps[mode] = received * size * 8 / busy / 1e9 if busy > 0 else 0.0
        metrics.rate(f"{mode}_gbps", gbps[mode])
        metrics.rate(f"{mode}_msgs_per_s", received / busy if busy > 0 else 0.0)
        metrics.set_counters(copier.stats.to_dict(), prefix=f"{mode}.")
        audits.append(pool_audit([p for pair in pairs for p in pair], sent, received))

    metrics.result("copy_vs_ref", round(gbps["copy"] / gbps["ref"], 3) if gbps["ref"] else 0.0)
    return merge_audits(audits)


@scenario("fairness", "Busy-time share of CPU-hog FWPs sharing one core")
def fairness(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    hogs = int(params.get("hogs", 3))
    spin_us = int(params.get("spin_us", 20))
    source = SyntheticSource(size=64, flows=hogs, seed=config.scenario.seed)
    dataplane = Dataplane.from_config(
        config, source=source, cache_low=0, cache_high=hogs, record_latency=False,
    )
    template = ChainTemplate("hog", (StageSpec("hog", 0, {"spin_us": spin_us}),))
    dataplane.load_template(template, prebuild=hogs)
    dataplane.add_rule(MATCH_ALL, 0, FlowAction.PER_FLOW, "hog")
    core = dataplane.schedulers.cores[0]

    try:
        elapsed = drive(dataplane, config)
        busy: Dict[str, float] = {}
        for record in dataplane.schedulers[core].dispatch_log:
            busy[record.fwp_id] = busy.get(record.fwp_id, 0.0) + (record.end - record.start)
        collect(dataplane, metrics, elapsed)
        audit = dataplane.audit()
    finally:
        dataplane.close()

    total = sum(busy.values())
    fair = 1.0 / hogs
    shares = {fwp_id: value / total for fwp_id, value in sorted(busy.items())} if total else {}
    deviation = max((abs(s - fair) / fair for s in shares.values()), default=0.0)
    metrics.result("shares", {k: round(v, 4) for k, v in shares.items()})
    metrics.result("max_share_deviation", round(deviation, 4))
    metrics.result("fair", bool(len(shares) == hogs and deviation <= params.get("tolerance", 0.1)))
    return audit


@scenario("calibrate", "Per-message service time of the bundled apps and the quantum that covers it")
def calibrate(config: ScenarioConfig, metrics: MetricsCollector) -> Audit:
    params = config.params
    apps = list(params.get("apps", ["firewall", "monitor", "fwd"]))
    configs = [{"default": "allow"} if app == "firewall" else {} for app in apps]
    dataplane = _dataplane(
        config,
        [chain("calibrate", apps, _workers(config), configs)],
        [(MATCH_ALL, 0, FlowAction.SHARED, "calibrate")],
        cache_low=0,
        cache_high=1,
    )
    for instance in dataplane.manager.cache.instances():
        for fwp in instance.fwps:
            fwp.service_times = []

    samples: Dict[str, List[float]] = {}
    try:
        elapsed = drive(dataplane, config)
        for instance in dataplane.manager.active.values():
            for fwp in instance.fwps:
                samples.setdefault(fwp.type_name, []).extend(t * 1e6 for t in fwp.service_times or ())
        collect(dataplane, metrics, elapsed)
        audit = dataplane.audit()
    finally:
        dataplane.close()

    percentile = float(params.get("percentile", 95.0))
    for app, values in sorted(samples.items()):
        metrics.record_many(f"callback.{app}", values)
    every = [value for values in samples.values() for value in values]
    quantum = calibrate_quantum(every, percentile)
    metrics.result("percentile", percentile)
    metrics.result("callbacks", len(every))
    metrics.result("quantum_us", quantum)
    logger.info(f"Calibrated quantum: {quantum} us over {len(every)} callbacks")
    return audit
