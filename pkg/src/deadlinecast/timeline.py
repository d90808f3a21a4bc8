"""Slotted reservation state: per-edge, per-slot allocated rates.

The timeline tracks the aggregate rate booked on every directed edge for
every future slot, plus the per-request schedules that make up that
aggregate. Slots at or before ``t_now`` never hold allocation; advancing the
clock dispatches (and drops) the rates of the slot that just began.

Storage is sparse (dict of slot -> rate per edge): as-late-as-possible
placement concentrates load near deadlines, leaving most of the horizon
empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .graph import Edge, ForwardingTree

# Tolerance for all rate/volume comparisons and completion checks.
EPS = 1e-9

# Below this, a residue is treated as exactly zero and dropped from storage.
_DUST = 1e-12


@dataclass
class AllocationSchedule:
    """Per-slot rates assigned to one request over its forwarding tree."""

    request_id: int
    tree: ForwardingTree
    rates: dict[int, float] = field(default_factory=dict)

    def total(self) -> float:
        return sum(self.rates.values())

    def slots(self) -> list[int]:
        return sorted(self.rates)


class Timeline:
    def __init__(self, capacity: float = 1.0, start_slot: int = 0) -> None:
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.t_now = start_slot
        self._alloc: dict[Edge, dict[int, float]] = {}
        self._schedules: dict[int, AllocationSchedule] = {}

    # -- read side ---------------------------------------------------------

    def allocated(self, edge: Edge, slot: int) -> float:
        """Aggregate rate booked on ``edge`` at ``slot``."""
        slots = self._alloc.get(edge)
        return slots.get(slot, 0.0) if slots else 0.0

    def load_in_window(self, edge: Edge, first_slot: int, last_slot: int) -> float:
        """Total booked rate on ``edge`` over slots [first_slot, last_slot]."""
        slots = self._alloc.get(edge)
        if not slots:
            return 0.0
        return sum(rate for slot, rate in slots.items() if first_slot <= slot <= last_slot)

    def available_on_tree(self, tree: ForwardingTree, slot: int) -> float:
        """Spare rate usable by one transfer across every edge of its tree."""
        worst = 0.0
        for e in tree.edge_list:
            slots = self._alloc.get(e)
            if slots:
                used = slots.get(slot, 0.0)
                if used > worst:
                    worst = used
        return max(0.0, self.capacity - worst)

    def schedule(self, request_id: int) -> AllocationSchedule | None:
        return self._schedules.get(request_id)

    def schedules(self) -> Iterator[AllocationSchedule]:
        return iter(self._schedules.values())

    @property
    def horizon(self) -> int:
        """Latest slot holding any allocation (``t_now`` when idle)."""
        latest = self.t_now
        for sched in self._schedules.values():
            if sched.rates:
                last = max(sched.rates)
                if last > latest:
                    latest = last
        return latest

    # -- mutations ---------------------------------------------------------

    def reserve(self, request_id: int, tree: ForwardingTree, slot: int, rate: float) -> None:
        """Book ``rate`` for a request on every edge of its tree at ``slot``.

        Rates at or below the tolerance are ignored. Booking past available
        capacity is a programming error, not a recoverable condition.
        """
        if slot <= self.t_now:
            raise ValueError(f"cannot reserve at slot {slot}: current slot is {self.t_now}")
        if rate < 0:
            raise ValueError(f"negative rate {rate}")
        if rate <= EPS:
            return
        if rate > self.available_on_tree(tree, slot) + EPS:
            raise RuntimeError(
                f"oversubscription: request {request_id} wants {rate} at slot {slot}, "
                f"only {self.available_on_tree(tree, slot)} available"
            )
        sched = self._schedules.get(request_id)
        if sched is None:
            sched = AllocationSchedule(request_id=request_id, tree=tree)
            self._schedules[request_id] = sched
        elif sched.tree is not tree and sched.tree != tree:
            raise RuntimeError(f"request {request_id} already bound to a different tree")
        for e in tree.edge_list:
            slots = self._alloc.setdefault(e, {})
            slots[slot] = slots.get(slot, 0.0) + rate
        sched.rates[slot] = sched.rates.get(slot, 0.0) + rate

    def release(self, request_id: int, slot: int, rate: float | None = None) -> float:
        """Remove allocation of one request at ``slot``; returns the amount.

        ``rate=None`` releases the whole slot. Releasing an empty slot is a
        no-op. Residues at or below the tolerance are folded into the release
        so no dust lingers in storage.
        """
        sched = self._schedules.get(request_id)
        if sched is None or slot not in sched.rates:
            return 0.0
        have = sched.rates[slot]
        take = have if rate is None else min(rate, have)
        if take <= 0:
            return 0.0
        if have - take <= EPS:
            take = have
            del sched.rates[slot]
        else:
            sched.rates[slot] = have - take
        for e in sched.tree.edge_list:
            slots = self._alloc[e]
            left = slots[slot] - take
            if left <= _DUST:
                del slots[slot]
            else:
                slots[slot] = left
        if not sched.rates:
            del self._schedules[request_id]
        return take

    def move(self, request_id: int, from_slot: int, to_slot: int, rate: float) -> float:
        """Shift part of a request's allocation between two future slots.

        Mutates the schedule in place (the AllocationSchedule object held by
        callers stays valid) and returns the amount actually moved.
        """
        sched = self._schedules.get(request_id)
        if sched is None or from_slot not in sched.rates:
            return 0.0
        if to_slot <= self.t_now:
            raise ValueError(f"cannot move into slot {to_slot}: current slot is {self.t_now}")
        have = sched.rates[from_slot]
        take = min(rate, have)
        if take <= EPS:
            return 0.0
        if have - take <= EPS:
            take = have
        if take > self.available_on_tree(sched.tree, to_slot) + EPS:
            raise RuntimeError(
                f"oversubscription: moving {take} of request {request_id} into slot {to_slot}"
            )
        if take == have:
            del sched.rates[from_slot]
        else:
            sched.rates[from_slot] = have - take
        sched.rates[to_slot] = sched.rates.get(to_slot, 0.0) + take
        for e in sched.tree.edge_list:
            slots = self._alloc[e]
            left = slots[from_slot] - take
            if left <= _DUST:
                del slots[from_slot]
            else:
                slots[from_slot] = left
            slots[to_slot] = slots.get(to_slot, 0.0) + take
        return take

    def advance_slot(self) -> tuple[dict[int, float], list[int]]:
        """Begin the next slot: returns (dispatched rates, retired requests).

        The new current slot's per-request rates are removed from the
        reservation state; requests whose schedules become empty are retired.
        """
        self.t_now += 1
        slot = self.t_now
        dispatched: dict[int, float] = {}
        retired: list[int] = []
        for rid in sorted(self._schedules):
            sched = self._schedules[rid]
            rate = sched.rates.pop(slot, 0.0)
            if rate > 0.0:
                dispatched[rid] = rate
                for e in sched.tree.edge_list:
                    slots = self._alloc[e]
                    left = slots.get(slot, 0.0) - rate
                    if left <= _DUST:
                        slots.pop(slot, None)
                    else:
                        slots[slot] = left
            if not sched.rates:
                retired.append(rid)
                del self._schedules[rid]
        return dispatched, retired

    # -- diagnostics -------------------------------------------------------

    def audit(self) -> list[str]:
        """Cross-check aggregate state against per-request schedules.

        Returns human-readable violation strings; empty means consistent.
        """
        problems: list[str] = []
        rebuilt: dict[Edge, dict[int, float]] = {}
        for sched in self._schedules.values():
            for slot, rate in sched.rates.items():
                if slot <= self.t_now:
                    problems.append(
                        f"request {sched.request_id} holds slot {slot} <= t_now {self.t_now}"
                    )
                if rate < -EPS:
                    problems.append(f"request {sched.request_id} negative rate at slot {slot}")
                for e in sched.tree.edge_list:
                    slots = rebuilt.setdefault(e, {})
                    slots[slot] = slots.get(slot, 0.0) + rate
        edges = set(rebuilt) | set(e for e, slots in self._alloc.items() if slots)
        for e in sorted(edges):
            expected = rebuilt.get(e, {})
            stored = self._alloc.get(e, {})
            for slot in sorted(set(expected) | set(stored)):
                want = expected.get(slot, 0.0)
                have = stored.get(slot, 0.0)
                if abs(want - have) > EPS:
                    problems.append(
                        f"edge {e} slot {slot}: aggregate {have:.12f} != schedules {want:.12f}"
                    )
                if have > self.capacity + EPS:
                    problems.append(
                        f"edge {e} slot {slot}: allocation {have:.12f} exceeds "
                        f"capacity {self.capacity}"
                    )
                if slot <= self.t_now and have > EPS:
                    problems.append(f"edge {e} slot {slot}: allocation in the past")
        return problems

    def dump(self) -> str:
        """Render the slot-by-edge allocation matrix as plain text."""
        edges = sorted(e for e, slots in self._alloc.items() if slots)
        lines = [f"t_now={self.t_now} capacity={self.capacity:.6f}"]
        header = ["slot"] + [str(e) for e in edges]
        lines.append("  ".join(header))
        for slot in range(self.t_now + 1, self.horizon + 1):
            row = [str(slot)]
            for e in edges:
                row.append(f"{self.allocated(e, slot):.6f}")
            lines.append("  ".join(row))
        return "\n".join(lines) + "\n"
