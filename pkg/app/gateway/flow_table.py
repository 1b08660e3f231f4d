"""
Flow Table
==========

Priority-ordered match-action rules plus the exact-match map of flows that
already have a chain.
"""

import bisect
import itertools
from typing import Dict, Iterator, List, Optional, Tuple

from app.chains import ChainInstance
from .models import FlowAction, FlowKey, FlowPattern, FlowRule


class FlowTable:
    """
    Rules sorted by descending priority; equal priorities keep insertion order.

    Attributes:
        rules: Priority-ordered rules
        active: FlowKey -> (instance, rule) for flows bound to a chain
        shared: rule id -> the long-lived instance of a SharedChain rule
    """

    def __init__(self):
        self.rules: List[FlowRule] = []
        self._order: List[Tuple[int, int]] = []
        self._ids = itertools.count()
        self.active: Dict[FlowKey, Tuple[ChainInstance, FlowRule]] = {}
        self.shared: Dict[int, ChainInstance] = {}

    def add_rule(self, pattern: FlowPattern, priority: int, action: FlowAction, template_id: str) -> int:
        rule = FlowRule(next(self._ids), pattern, priority, FlowAction(action), template_id)
        sort_key = (-priority, rule.rule_id)
        index = bisect.bisect_right(self._order, sort_key)
        self._order.insert(index, sort_key)
        self.rules.insert(index, rule)
        return rule.rule_id

    def match(self, key: FlowKey) -> Optional[FlowRule]:
        for rule in self.rules:
            if rule.pattern.matches(key):
                return rule
        return None

    def lookup(self, key: FlowKey) -> Optional[ChainInstance]:
        entry = self.active.get(key)
        return entry[0] if entry else None

    def bind(self, key: FlowKey, instance: ChainInstance, rule: FlowRule) -> None:
        self.active[key] = (instance, rule)

    def unbind(self, key: FlowKey) -> None:
        self.active.pop(key, None)

    def unbind_instance(self, instance: ChainInstance) -> int:
        keys = [k for k, (inst, _) in self.active.items() if inst is instance]
        for key in keys:
            del self.active[key]
        for rule_id in [r for r, inst in self.shared.items() if inst is instance]:
            del self.shared[rule_id]
        return len(keys)

    def per_flow(self) -> Iterator[Tuple[FlowKey, ChainInstance]]:
        for key, (instance, rule) in list(self.active.items()):
            if rule.action == FlowAction.PER_FLOW:
                yield key, instance

    def __len__(self) -> int:
        return len(self.active)
