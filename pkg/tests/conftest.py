"""
Pytest configuration and shared fixtures
"""

import pytest

import app.apps  # noqa: F401  (registers the bundled applications)
from app.bench import Dataplane
from app.gateway import MATCH_ALL, FlowAction, SyntheticSource
from app.msgpool import MessagePool
from tests.helpers import ManualClock


@pytest.fixture
def clock():
    """Deterministic clock for schedulers, FWPs and the gateway"""
    return ManualClock()


@pytest.fixture
def pool():
    """Small pool with 8 slots of 256 bytes"""
    return MessagePool(8, 256, name="test")


@pytest.fixture
def pool_pair():
    """Upstream and downstream pools of equal shape"""
    return MessagePool(8, 256, name="up"), MessagePool(8, 256, name="down")


@pytest.fixture
def dataplane_factory():
    """Step-mode dataplanes with small caches; the first template gets a match-all rule"""
    built = []

    def _make(*templates, source=None, action=FlowAction.SHARED, **options):
        options.setdefault("cache_low", 1)
        options.setdefault("cache_high", 2)
        dataplane = Dataplane(source=source, **options)
        for template in templates:
            dataplane.load_template(template)
        if templates:
            dataplane.add_rule(MATCH_ALL, 0, action, templates[0].template_id)
        built.append(dataplane)
        return dataplane

    yield _make
    for dataplane in built:
        dataplane.close()


@pytest.fixture
def synthetic():
    """Unpaced synthetic sources"""
    def _make(total: int = 100, **kwargs):
        return SyntheticSource(total=total, **kwargs)
    return _make
