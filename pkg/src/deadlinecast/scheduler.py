"""Deadline-aware transfer scheduling over forwarding trees.

One logical control loop per network: every timeslot it (1) pulls future
allocations into the slot that is about to begin wherever the trees have
spare capacity, (2) re-pushes everything else as late as feasibility allows,
(3) dispatches the new current slot's rates, and (4) runs admission control
for the slot's arrivals. Admission sums the spare capacity of the selected
tree over the request's window and accepts only if the whole volume fits;
accepted requests are placed as late as possible and are never evicted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .graph import ForwardingTree, Topology, select_tree
from .timeline import EPS, Timeline

PENDING = "pending"
ADMITTED = "admitted"
REJECTED = "rejected"
COMPLETED = "completed"

# Safety bound for the re-push fixpoint loop; convergence is expected in a
# handful of passes, and moves below EPS are never performed.
MAX_REPUSH_PASSES = 100


@dataclass
class TransferRequest:
    """A point-to-multipoint transfer: deliver ``volume`` from ``source`` to
    every destination by the end of slot ``deadline``."""

    id: int
    source: str
    destinations: frozenset[str]
    volume: float
    deadline: int
    arrival_slot: int
    state: str = PENDING
    residual: float = -1.0
    tree: ForwardingTree | None = None
    completed_slot: int | None = None

    def __post_init__(self) -> None:
        self.destinations = frozenset(self.destinations)
        if not self.destinations:
            raise ValueError(f"request {self.id}: no destinations")
        if self.source in self.destinations:
            raise ValueError(f"request {self.id}: source is a destination")
        if self.volume <= 0:
            raise ValueError(f"request {self.id}: volume must be positive")
        if self.deadline < self.arrival_slot + 1:
            raise ValueError(
                f"request {self.id}: deadline {self.deadline} leaves no usable slot "
                f"after arrival {self.arrival_slot}"
            )
        if self.residual < 0:
            self.residual = self.volume


@dataclass
class AdmissionDecision:
    request_id: int
    accepted: bool
    tree: ForwardingTree | None = None
    reason: str | None = None
    available: float | None = None
    volume: float = 0.0


@dataclass
class TickReport:
    """What happened during one timeslot."""

    slot: int
    dispatched: dict[int, float]
    admitted: list[AdmissionDecision]
    rejected: list[AdmissionDecision]
    completed: list[int]

    def records(self) -> list[dict]:
        """Flatten into (event, slot, request, value) records."""
        recs = []
        for rid in sorted(self.dispatched):
            recs.append(
                {"event": "dispatch", "slot": self.slot, "request": rid,
                 "value": self.dispatched[rid]}
            )
        for dec in self.admitted:
            recs.append(
                {"event": "admit", "slot": self.slot, "request": dec.request_id,
                 "value": dec.volume}
            )
        for dec in self.rejected:
            recs.append(
                {"event": "reject", "slot": self.slot, "request": dec.request_id,
                 "value": dec.volume}
            )
        for rid in self.completed:
            recs.append({"event": "complete", "slot": self.slot, "request": rid, "value": 0.0})
        return recs


@dataclass
class SchedulerState:
    topology: Topology
    timeline: Timeline
    requests: dict[int, TransferRequest] = field(default_factory=dict)
    active: dict[int, TransferRequest] = field(default_factory=dict)
    offered_volume: float = 0.0
    admitted_volume: float = 0.0
    rejected_volume: float = 0.0
    admitted_count: int = 0
    rejected_count: int = 0

    @classmethod
    def create(cls, topology: Topology, start_slot: int = 0) -> "SchedulerState":
        return cls(topology=topology, timeline=Timeline(topology.capacity, start_slot))

    def audit(self) -> list[str]:
        """Timeline consistency plus per-request schedule invariants."""
        problems = self.timeline.audit()
        for rid, req in self.active.items():
            if req.state != ADMITTED:
                problems.append(f"active request {rid} in state {req.state}")
            sched = self.timeline.schedule(rid)
            if sched is None:
                problems.append(f"active request {rid} has no schedule")
                continue
            total = sched.total()
            if abs(total - req.residual) > EPS * max(1, len(sched.rates)):
                problems.append(
                    f"request {rid}: schedule total {total:.12f} != residual "
                    f"{req.residual:.12f}"
                )
            for slot in sched.rates:
                if slot > req.deadline:
                    problems.append(f"request {rid}: allocation at slot {slot} past deadline")
        for sched in self.timeline.schedules():
            if sched.request_id not in self.active:
                problems.append(f"schedule for non-active request {sched.request_id}")
        return problems


def window_available(tree: ForwardingTree, deadline: int, timeline: Timeline) -> float:
    """Total rate the tree can still carry over slots (t_now, deadline]."""
    return sum(
        timeline.available_on_tree(tree, t)
        for t in range(timeline.t_now + 1, deadline + 1)
    )


def admit(request: TransferRequest, state: SchedulerState) -> AdmissionDecision:
    """All-or-nothing admission on the request's selected tree.

    The check considers only the single tree chosen at arrival; a rejection
    does not imply no tree could have carried the request.
    """
    if request.state != PENDING:
        raise ValueError(f"request {request.id} is {request.state}, not pending")
    state.requests[request.id] = request
    state.offered_volume += request.volume
    if request.deadline <= state.timeline.t_now:
        request.state = REJECTED
        state.rejected_count += 1
        state.rejected_volume += request.volume
        return AdmissionDecision(
            request_id=request.id, accepted=False, reason="expired", volume=request.volume
        )
    tree = select_tree(state.topology, request, state.timeline)
    available = window_available(tree, request.deadline, state.timeline)
    if available >= request.volume - EPS:
        allocate_alap(request, tree, state)
        request.tree = tree
        request.state = ADMITTED
        state.active[request.id] = request
        state.admitted_count += 1
        state.admitted_volume += request.volume
        return AdmissionDecision(
            request_id=request.id, accepted=True, tree=tree,
            available=available, volume=request.volume,
        )
    request.state = REJECTED
    state.rejected_count += 1
    state.rejected_volume += request.volume
    return AdmissionDecision(
        request_id=request.id, accepted=False, tree=tree,
        reason="insufficient capacity", available=available, volume=request.volume,
    )


def allocate_alap(request: TransferRequest, tree: ForwardingTree, state: SchedulerState) -> None:
    """Place the request's volume as late as possible before its deadline.

    Walks from the deadline backwards, booking whatever the tree has spare
    in each slot. Admission already verified the window can hold the volume.
    """
    timeline = state.timeline
    remaining = request.residual
    for slot in range(request.deadline, timeline.t_now, -1):
        if remaining <= EPS:
            break
        grab = min(remaining, timeline.available_on_tree(tree, slot))
        if grab > EPS:
            timeline.reserve(request.id, tree, slot, grab)
            remaining -= grab
    assert remaining <= EPS, f"request {request.id}: {remaining} volume left unplaced"


def _adjustment_order(state: SchedulerState) -> list[TransferRequest]:
    # Urgent (earliest-deadline) requests claim freed capacity first.
    return sorted(state.active.values(), key=lambda r: (r.deadline, r.id))


def pull_back(state: SchedulerState) -> None:
    """Fill the slot about to begin with the nearest future allocations.

    For each active request in adjustment order, volume moves from its
    earliest future slots into ``t_now + 1`` until the tree saturates there.
    Moving traffic earlier can never break a deadline.
    """
    timeline = state.timeline
    target = timeline.t_now + 1
    for req in _adjustment_order(state):
        sched = timeline.schedule(req.id)
        if sched is None:
            continue
        for slot in sorted(s for s in sched.rates if s > target):
            spare = timeline.available_on_tree(req.tree, target)
            if spare <= EPS:
                break
            timeline.move(req.id, slot, target, min(spare, sched.rates[slot]))


def repush_alap(state: SchedulerState) -> None:
    """Restore the as-late-as-possible shape after pull-back.

    Scans allocations from ``t_now + 2`` upward and slides each toward its
    request's deadline wherever the tree has spare capacity, repeating until
    a full pass moves nothing.
    """
    timeline = state.timeline
    first = timeline.t_now + 2
    for _ in range(MAX_REPUSH_PASSES):
        moved = False
        by_slot: dict[int, list[TransferRequest]] = {}
        for req in _adjustment_order(state):
            sched = timeline.schedule(req.id)
            if sched is None:
                continue
            for s in sched.rates:
                # allocation already sitting at its deadline cannot move
                if first <= s < req.deadline:
                    by_slot.setdefault(s, []).append(req)
        for slot in sorted(by_slot):
            for req in by_slot[slot]:
                sched = timeline.schedule(req.id)
                if sched is None:
                    continue
                for target in range(req.deadline, slot, -1):
                    left = sched.rates.get(slot, 0.0)
                    if left <= EPS:
                        break
                    grab = min(timeline.available_on_tree(req.tree, target), left)
                    if grab > EPS:
                        timeline.move(req.id, slot, target, grab)
                        moved = True
        if not moved:
            return
    raise RuntimeError(f"re-push did not reach a fixpoint in {MAX_REPUSH_PASSES} passes")


def tick(state: SchedulerState, new_requests: list[TransferRequest] | tuple = ()) -> TickReport:
    """Run one timeslot: adjust, dispatch, then admit the slot's arrivals."""
    pull_back(state)
    repush_alap(state)
    dispatched, retired = state.timeline.advance_slot()
    slot = state.timeline.t_now
    for rid, rate in dispatched.items():
        req = state.requests[rid]
        req.residual = max(0.0, req.residual - rate)
    completed: list[int] = []
    for rid in retired:
        req = state.requests[rid]
        assert req.residual <= EPS * max(1, slot - req.arrival_slot), (
            f"request {rid} retired with residual {req.residual}"
        )
        req.residual = 0.0
        req.state = COMPLETED
        req.completed_slot = slot
        del state.active[rid]
        completed.append(rid)
    admitted: list[AdmissionDecision] = []
    rejected: list[AdmissionDecision] = []
    for req in new_requests:
        decision = admit(req, state)
        (admitted if decision.accepted else rejected).append(decision)
    return TickReport(
        slot=slot, dispatched=dispatched, admitted=admitted,
        rejected=rejected, completed=completed,
    )
