"""
Bench harness tests: scenario files, metrics, the CLI and a full run
"""

import csv
import json
import textwrap
from pathlib import Path

import pytest

from app.bench import (
    ConfigError,
    LatencySummary,
    MetricsCollector,
    RuntimeFault,
    load_config,
    parse_config,
    run_scenario,
)
from app.bench.cli import main
from app.bench.scenarios import failing_module
from app.msgpool import MessagePool

pytestmark = pytest.mark.bench

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

SMOKE_TOML = textwrap.dedent("""
    [scenario]
    name = "smoke"
    kind = "forward"
    duration_s = 2.0
    seed = 3

    [[templates]]
    name = "fwd"
    slot_count = 64
    slot_size = 256
    heap_size = 16384
    stages = [{ app = "fwd" }]

    [[rules]]
    template = "fwd"
    dst_port = 9000

    [source]
    kind = "synthetic"
    total = 50
    flows = 4

    [params]
    cache_low = 1
    cache_high = 2
""")


def base(**sections):
    data = {
        "scenario": {"name": "t", "kind": "forward"},
        "templates": [{"name": "fwd", "stages": [{"app": "fwd"}]}],
        "rules": [{"template": "fwd"}],
    }
    data.update(sections)
    return data


@pytest.fixture
def smoke_file(tmp_path):
    path = tmp_path / "smoke.toml"
    path.write_text(SMOKE_TOML)
    return path


# ────────────────────────────────
# Scenario files
# ────────────────────────────────

def test_minimal_config_defaults():
    config = parse_config({"scenario": {"name": "t", "kind": "churn"}})
    assert config.scenario.execution == "step"
    assert config.source.kind == "synthetic"
    assert config.cores.workers == [3]
    assert config.templates == []


@pytest.mark.parametrize("data, message", [
    (
        base(templates=[{"name": "t", "stages": [{"app": "fwd"}, {"app": "nope"}]}], rules=[]),
        "templates.0.stages.1.app: unknown app 'nope'",
    ),
    (base(rules=[{"template": "missing"}]), "rules.0.template: unknown template 'missing'"),
    (base(cores={"net_in": 0, "net_out": 0}), "cores: core assignments overlap"),
    (
        base(templates=[{"name": "fwd", "slot_count": 12, "stages": [{"app": "fwd"}]}]),
        "templates.0.slot_count: slot_count must be a power of two",
    ),
    (
        base(templates=[{"name": "fwd", "stages": [{"app": "fwd", "core": 1}]}]),
        "templates.0.stages.0.core: worker 1 but only 1 worker cores",
    ),
    (base(scenario={"name": "t", "kind": "warp"}), "scenario.kind"),
    (base(scenario={"name": "t", "kind": "forward", "colour": "red"}), "scenario.colour"),
    (base(source={"kind": "pcap"}), "pcap source needs 'path'"),
    (base(rules=[{"template": "fwd", "dst_addr": "not-an-address"}]), "bad match field"),
])
def test_validation_errors_name_the_field(data, message):
    with pytest.raises(ConfigError) as exc:
        parse_config(data)
    assert message in exc.value.detail
    assert exc.value.exit_code == 2


def test_load_config_applies_overrides(smoke_file):
    config = load_config(smoke_file, seed=9, duration=0.5)
    assert config.scenario.seed == 9
    assert config.scenario.duration_s == 0.5
    assert config.rules[0].pattern().dst_port == 9000
    assert config.templates[0].to_template().slot_count == 64


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="no such file"):
        load_config(tmp_path / "absent.toml")

    broken = tmp_path / "broken.toml"
    broken.write_text("[scenario\nname = 1")
    with pytest.raises(ConfigError):
        load_config(broken)


# ────────────────────────────────
# Metrics
# ────────────────────────────────

def test_latency_summary():
    summary = LatencySummary.of(range(1, 101))
    assert summary.count == 100
    assert (summary.min, summary.max) == (1.0, 100.0)
    assert summary.p50 == pytest.approx(50.5)
    assert summary.p99 == pytest.approx(99.01)
    assert LatencySummary.of([]).count == 0


def test_report_exports(tmp_path):
    metrics = MetricsCollector("unit", kind="forward", seed=1)
    metrics.record_many("service", [0.000001, 0.000002], scale=1e6)
    metrics.record("service", 3.0)
    metrics.count("admitted", 2)
    metrics.count("admitted")
    metrics.rate("msgs_per_s", 10.0)
    report = metrics.report(elapsed_s=1.0, audit={"ok": True})

    assert report.latency_us["service"].count == 3
    assert report.counters == {"admitted": 3}

    report.export_json(str(tmp_path / "out" / "unit.json"))
    data = json.loads((tmp_path / "out" / "unit.json").read_text())
    assert data["kind"] == "forward"
    assert "samples" not in data
    assert data["latency_us"]["service"]["max"] == pytest.approx(3.0)

    (path,) = report.export_csv(str(tmp_path / "csv"))
    assert path.endswith("unit_service.csv")
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["index", "service_us"]
    assert [row[1] for row in rows[1:]] == ["1.000", "2.000", "3.000"]


# ────────────────────────────────
# Errors
# ────────────────────────────────

def test_failing_module_names_the_raising_package():
    with pytest.raises(Exception) as exc:
        MessagePool(3, 256)
    assert failing_module(exc.value) == "msgpool"

    try:
        raise KeyError("local")
    except KeyError as error:
        assert failing_module(error) == "bench_cli"


def test_runtime_fault_carries_module():
    fault = RuntimeFault("mma", "stalled")
    assert fault.detail == "[mma] stalled"
    assert fault.module == "mma"
    assert fault.exit_code == 3


# ────────────────────────────────
# Runs
# ────────────────────────────────

def test_forward_scenario_end_to_end(smoke_file):
    report = run_scenario(load_config(smoke_file))

    assert report.audit["ok"]
    assert report.audit["balanced"]
    assert report.counters["net_in.admitted"] == 50
    assert report.counters["net_out.emitted"] == 50
    assert report.latency_us["service"].count == 50


def test_calibrate_scenario_picks_a_legal_quantum():
    config = parse_config({
        "scenario": {"name": "cal", "kind": "calibrate", "seed": 2},
        "source": {"kind": "synthetic", "total": 100, "flows": 4},
    })
    report = run_scenario(config)

    assert report.audit["ok"]
    assert report.results["callbacks"] == 300
    assert 10 <= report.results["quantum_us"] <= 10_000
    assert set(report.latency_us) >= {"callback.firewall", "callback.monitor", "callback.fwd"}
    assert report.latency_us["callback.fwd"].count == 100


def test_cli_validate(smoke_file, capsys):
    assert main(["validate", str(smoke_file)]) == 0
    assert "OK: smoke (forward), 1 templates, 1 rules" in capsys.readouterr().out


def test_cli_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[scenario]\nname = "x"\nkind = "warp"\n')
    assert main(["validate", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for kind in ("forward", "churn", "kv", "fairness", "restore"):
        assert kind in out


def test_cli_run_writes_reports(smoke_file, tmp_path):
    report_path = tmp_path / "report.json"
    csv_dir = tmp_path / "csv"

    assert main(["run", str(smoke_file), "--out", str(report_path), "--csv", str(csv_dir)]) == 0

    report = json.loads(report_path.read_text())
    assert report["audit"]["ok"]
    assert report["scenario"] == "smoke"
    assert (csv_dir / "smoke_service.csv").exists()


@pytest.mark.parametrize("path", sorted(SCENARIO_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_scenarios_validate(path):
    config = load_config(path)
    assert config.scenario.kind.value == path.stem
