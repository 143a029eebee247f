"""Interaction state machines: compilation, execution and export.

States come from policies in order. A one-off policy owns one state per
direction it must see (await-forward, then await-backward when
bidirectional). A transient or periodic policy owns a single "active" state
that loops on its own matches and leaves when the next policy matches (or,
for transient policies, when a limit is hit). Completing the last policy
returns to the first policy's entry state, so interactions recur.

Execution is staged: :func:`evaluate` computes the outcome and the state
changes it *would* cause without touching the runtime; :func:`commit`
applies them. The engine commits only when the packet is accepted
globally, so a dropped packet never changes any machine.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import CompileError
from .matcher import (
    Admit,
    Direction,
    Outcome,
    RateBucket,
    TransientCounters,
    Within,
    match_outcome,
    rate_admit,
    transient_within,
)
from .model import PolicyKind, validate_profile

FSM_SCHEMA_VERSION = 1


class Guard(enum.Enum):
    NEXT_MATCH = "next-match"  # the awaited / next policy matched
    SECOND_DIRECTION = "second-direction"  # backward half of a bidirectional one-off
    WITHIN = "within"  # self-loop of an active transient/periodic policy
    EXPIRY = "expiry"  # transient limit reached before this packet


class Role(enum.Enum):
    AWAIT = "await"
    ACTIVE = "active"


@dataclass(frozen=True)
class StateDesc:
    index: int
    policy: int
    direction: Direction
    kind: PolicyKind
    role: Role


@dataclass(frozen=True)
class Transition:
    src: int
    dst: int
    policy: int
    direction: Direction
    guard: Guard

    @property
    def edge(self):
        return (self.src, self.dst)


@dataclass(frozen=True)
class InteractionFsm:
    interaction: object
    states: tuple
    transitions: tuple
    entry: tuple  # entry state per policy

    @property
    def policies(self):
        return self.interaction.policies

    def __post_init__(self):
        out = {s.index: [] for s in self.states}
        expiry = {}
        for t in self.transitions:
            if t.guard is Guard.EXPIRY:
                if t.policy == self.states[t.src].policy and t.direction is Direction.BOTH:
                    expiry.setdefault(t.src, t.dst)
            else:
                out[t.src].append(t)
        object.__setattr__(self, "_out", {k: tuple(v) for k, v in out.items()})
        object.__setattr__(self, "_expiry", expiry)

    def outgoing(self, state):
        """Non-expiry transitions of ``state`` in evaluation order."""
        return self._out[state]

    def expiry_target(self, state):
        return self._expiry.get(state)


def _check_interaction(inter):
    if not inter.policies:
        raise CompileError(f"interaction {inter.name!r} has no policies")
    names = [p.name for p in inter.policies]
    if len(set(names)) != len(names):
        raise CompileError(f"interaction {inter.name!r} has duplicate policy names")
    for p in inter.policies:
        stats = p.stats
        if p.kind is PolicyKind.PERIODIC and (stats is None or stats.rate is None):
            raise CompileError(f"periodic policy {p.name!r} has no rate")
        if p.kind is PolicyKind.TRANSIENT and (stats is None or (stats.max_packets is None and stats.max_duration is None)):
            raise CompileError(f"transient policy {p.name!r} has no limit")


def compile_interaction(inter):
    """Build the state machine of one interaction (deterministic)."""
    _check_interaction(inter)
    pols = inter.policies
    n = len(pols)
    states = []
    entry = []
    for i, p in enumerate(pols):
        entry.append(len(states))
        if p.kind is PolicyKind.ONE_OFF:
            states.append(StateDesc(len(states), i, Direction.FORWARD, p.kind, Role.AWAIT))
            if p.bidirectional:
                states.append(StateDesc(len(states), i, Direction.BACKWARD, p.kind, Role.AWAIT))
        else:
            d = Direction.BOTH if p.bidirectional else Direction.FORWARD
            states.append(StateDesc(len(states), i, d, p.kind, Role.ACTIVE))

    def after(i):
        return entry[(i + 1) % n]

    def start_target(j):
        """State reached when policy j's first packet is accepted."""
        p = pols[j]
        if p.kind is PolicyKind.ONE_OFF:
            return entry[j] + 1 if p.bidirectional else after(j)
        return entry[j]

    def start_direction(j):
        p = pols[j]
        if p.kind is PolicyKind.ONE_OFF or not p.bidirectional:
            return Direction.FORWARD
        return Direction.BOTH

    base = []
    for s in states:
        i, p = s.policy, pols[s.policy]
        if s.role is Role.AWAIT:
            if s.direction is Direction.FORWARD:
                base.append(Transition(s.index, start_target(i), i, Direction.FORWARD, Guard.NEXT_MATCH))
            else:
                base.append(Transition(s.index, after(i), i, Direction.BACKWARD, Guard.SECOND_DIRECTION))
            continue
        j = (i + 1) % n
        if j != i:
            base.append(Transition(s.index, start_target(j), j, start_direction(j), Guard.NEXT_MATCH))
        base.append(Transition(s.index, s.index, i, s.direction, Guard.WITHIN))
        if p.kind is PolicyKind.TRANSIENT:
            base.append(Transition(s.index, after(i), i, Direction.BOTH, Guard.EXPIRY))

    # An expiring packet is re-evaluated in the expiry target; spell out the
    # edges that re-evaluation can take so the exported machine is complete.
    shortcuts = []
    for t in base:
        if t.guard is not Guard.EXPIRY or t.dst == t.src:
            continue
        for u in base:
            if u.src == t.dst and u.dst != u.src and u.guard is not Guard.EXPIRY:
                shortcuts.append(Transition(t.src, u.dst, u.policy, u.direction, Guard.EXPIRY))
    transitions = []
    for t in base:
        transitions.append(t)
        if t.guard is Guard.EXPIRY:
            transitions.extend(s for s in shortcuts if s.src == t.src)
    return InteractionFsm(inter, tuple(states), tuple(transitions), tuple(entry))


def compile_profile(profile):
    diags = validate_profile(profile)
    if diags:
        raise CompileError("; ".join(str(d) for d in diags))
    return [compile_interaction(i) for i in profile.interactions]


# ---------------------------------------------------------------------------
# Runtime


class StepKind(enum.Enum):
    MATCH_ACCEPT = "match-accept"
    NO_MATCH = "no-match"


@dataclass
class FsmRuntime:
    fsm: InteractionFsm
    current: int = 0
    buckets: dict = field(default_factory=dict)  # policy index -> RateBucket
    counters: dict = field(default_factory=dict)  # state index -> TransientCounters

    def __post_init__(self):
        for i, p in enumerate(self.fsm.policies):
            if p.kind is PolicyKind.PERIODIC and i not in self.buckets:
                self.buckets[i] = RateBucket.for_rate(p.stats.rate)
        for s in self.fsm.states:
            if s.kind is PolicyKind.TRANSIENT and s.index not in self.counters:
                self.counters[s.index] = TransientCounters()

    @property
    def name(self):
        return self.fsm.interaction.name

    def digest(self):
        """Hashable snapshot of all mutable state."""
        return (
            self.current,
            tuple(sorted((i, b.snapshot()) for i, b in self.buckets.items())),
            tuple(sorted((s, (c.packets_matched, c.started_at)) for s, c in self.counters.items())),
        )


@dataclass
class StepResult:
    kind: StepKind
    state_before: int
    state_after: int
    policy: Optional[int] = None
    direction: Optional[Direction] = None
    reason: Optional[str] = None  # for NO_MATCH: RATE_EXCEEDED / UNRESOLVED_NAME / None
    buckets: dict = field(default_factory=dict)  # staged bucket replacements
    counters: dict = field(default_factory=dict)  # staged counter replacements

    @property
    def accepted(self):
        return self.kind is StepKind.MATCH_ACCEPT


def _enter(fsm, state, ts, counters, own_packet):
    desc = fsm.states[state]
    if desc.kind is PolicyKind.TRANSIENT and desc.role is Role.ACTIVE:
        counters[state] = TransientCounters(1 if own_packet else 0, ts)


def evaluate(rt, pkt, env, effort=None):
    """Decide ``pkt`` against the runtime's current state without mutating it."""
    fsm = rt.fsm
    ts = pkt.ts
    before = rt.current
    state = before
    counters = {}
    desc = fsm.states[state]
    if desc.role is Role.ACTIVE and desc.kind is PolicyKind.TRANSIENT:
        policy = fsm.policies[desc.policy]
        if transient_within(policy, rt.counters[state], ts) is Within.EXPIRED:
            state = fsm.expiry_target(state)
            _enter(fsm, state, ts, counters, own_packet=False)
    reason = reason_policy = None
    for t in fsm.outgoing(state):
        policy = fsm.policies[t.policy]
        outcome = match_outcome(policy, pkt, t.direction, env, effort)
        if outcome is Outcome.UNRESOLVED:
            if reason is None:
                reason, reason_policy = "UNRESOLVED_NAME", t.policy
            continue
        if outcome is not Outcome.MATCH:
            continue
        buckets = {}
        if policy.kind is PolicyKind.PERIODIC:
            bucket = rt.buckets[t.policy].copy()
            if rate_admit(bucket, ts) is Admit.EXCEED:
                reason, reason_policy = "RATE_EXCEEDED", t.policy
                continue
            buckets[t.policy] = bucket
        staged = dict(counters)
        if t.guard is Guard.WITHIN:
            if policy.kind is PolicyKind.TRANSIENT:
                c = staged.get(t.src, rt.counters[t.src]).copy()
                c.packets_matched += 1
                if c.started_at is None:
                    c.started_at = ts
                staged[t.src] = c
        else:
            own = t.dst == fsm.entry[t.policy] and fsm.states[t.dst].role is Role.ACTIVE
            _enter(fsm, t.dst, ts, staged, own_packet=own)
        return StepResult(StepKind.MATCH_ACCEPT, before, t.dst, t.policy, t.direction, None, buckets, staged)
    return StepResult(StepKind.NO_MATCH, before, before, reason_policy, reason=reason)


def commit(rt, result):
    if not result.accepted:
        return
    rt.current = result.state_after
    rt.buckets.update(result.buckets)
    rt.counters.update(result.counters)


def step(rt, pkt, env, effort=None):
    """Evaluate and immediately commit (single-machine convenience)."""
    result = evaluate(rt, pkt, env, effort)
    commit(rt, result)
    return result


# ---------------------------------------------------------------------------
# Export


def fsm_to_dict(fsm):
    pols = fsm.policies
    return {
        "v": FSM_SCHEMA_VERSION,
        "interaction": fsm.interaction.name,
        "initial": 0,
        "states": [
            {"id": s.index, "policy": pols[s.policy].name, "kind": s.kind.value, "role": s.role.value,
             "direction": s.direction.value}
            for s in fsm.states
        ],
        "transitions": [
            {"from": t.src, "to": t.dst, "policy": pols[t.policy].name, "direction": t.direction.value,
             "guard": t.guard.value}
            for t in fsm.transitions
        ],
    }


def fsm_to_json(fsm):
    return json.dumps(fsm_to_dict(fsm), indent=2)


def _dot_id(text):
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def fsm_to_dot(fsm):
    pols = fsm.policies
    lines = [f"digraph {_dot_id(fsm.interaction.name)} {{", "  rankdir=LR;", "  node [shape=circle];"]
    for s in fsm.states:
        label = f"{s.index}\\n{pols[s.policy].name}"
        shape = ', shape=doublecircle' if s.index == 0 else ""
        lines.append(f'  s{s.index} [label="{label}"{shape}];')
    short = {Direction.FORWARD: "fwd", Direction.BACKWARD: "bwd", Direction.BOTH: "any"}
    for t in fsm.transitions:
        label = f"{pols[t.policy].name}, {short[t.direction]}: {t.guard.value}"
        lines.append(f"  s{t.src} -> s{t.dst} [label={_dot_id(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
