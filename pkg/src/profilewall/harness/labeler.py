"""Reference interpreter used to label traces.

This is intentionally a second implementation of the firewall semantics.
It never builds a state machine. Instead each interaction keeps a "phase"
that names the policy it is working on and what it waits for, and moves
along the policy list directly. It has its own DNS store and its own
token-bucket arithmetic. The only code shared with the engine is the
profile model and the per-packet match predicates.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from ..engine import EngineConfig
from ..matcher import Direction, MatchEnv, match_policy
from ..model import PolicyKind
from ..packets.layers import Dns
from .labeled import LabeledTrace

ACCEPT = "ACCEPT"
DROP = "DROP"

# phases
AWAIT_FWD = "await-forward"
AWAIT_BWD = "await-backward"
ACTIVE = "active"


class _Names:
    """Name -> set of addresses, learned from accepted responses."""

    def __init__(self):
        self.table = {}

    @staticmethod
    def _norm(name):
        return name.lower().rstrip(".")

    def lookup(self, name):
        name = self._norm(name)
        if name.startswith("*."):
            tail = name[1:]
            found = set()
            for key, addrs in self.table.items():
                if key.endswith(tail):
                    found.update(addrs)
            return frozenset(found)
        return frozenset(self.table.get(name, ()))

    def learn(self, msg):
        addrs = {}
        cnames = {}
        for rec in list(msg.answers) + list(msg.additional):
            owner = self._norm(rec.name)
            if rec.rtype in ("A", "AAAA"):
                try:
                    addrs.setdefault(owner, set()).add(str(ipaddress.ip_address(rec.value)))
                except ValueError:
                    pass
            elif rec.rtype == "CNAME":
                cnames.setdefault(owner, set()).add(self._norm(rec.value))
        for owner in set(addrs) | set(cnames):
            # breadth-first walk of the alias graph inside this message
            seen = {owner}
            frontier = [owner]
            result = set()
            while frontier:
                cur = frontier.pop()
                result |= addrs.get(cur, set())
                for nxt in cnames.get(cur, ()):
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
            if result:
                self.table.setdefault(owner, set()).update(result)


class _Bucket:
    """Token bucket oracle: full at first use, refilled continuously, capped."""

    def __init__(self, rate):
        self.cap = rate.capacity
        self.per_ns = Fraction(rate.packets_per_second) / 1_000_000_000
        self.level = None
        self.stamp = None

    def clone(self):
        b = _Bucket.__new__(_Bucket)
        b.cap, b.per_ns, b.level, b.stamp = self.cap, self.per_ns, self.level, self.stamp
        return b

    def take(self, ts):
        if self.stamp is None:
            self.level = Fraction(self.cap)
        else:
            self.level = min(Fraction(self.cap), self.level + self.per_ns * (ts - self.stamp))
        self.stamp = ts
        if self.level >= 1:
            self.level -= 1
            return True
        return False


@dataclass
class _Walker:
    """Progress of one interaction of one device."""

    policies: tuple
    phase: str
    at: int  # index of the policy the phase refers to
    count: int = 0  # transient: packets seen in this activation
    since: Optional[int] = None  # transient: activation time
    buckets: dict = None

    def clone(self):
        return _Walker(self.policies, self.phase, self.at, self.count, self.since,
                       {k: b.clone() for k, b in self.buckets.items()})

    def arrive(self, j, ts):
        """Move to policy ``j`` without having seen any of its packets."""
        p = self.policies[j]
        self.at = j
        if p.kind is PolicyKind.ONE_OFF:
            self.phase = AWAIT_FWD
        else:
            self.phase = ACTIVE
            self.count, self.since = 0, ts

    def first_packet(self, j, ts):
        """Policy ``j`` has just accepted its opening packet."""
        p = self.policies[j]
        n = len(self.policies)
        if p.kind is PolicyKind.ONE_OFF:
            if p.bidirectional:
                self.at, self.phase = j, AWAIT_BWD
            else:
                self.arrive((j + 1) % n, ts)
        else:
            self.at, self.phase = j, ACTIVE
            self.count, self.since = 1, ts


def _expired(policy, count, since, ts):
    s = policy.stats
    if s.max_packets is not None and count >= s.max_packets:
        return True
    if s.max_duration is not None and since is not None:
        return ts - since > s.max_duration_ns
    return False


def _matches(policy, pkt, env, directions):
    return any(match_policy(policy, pkt, d, env) for d in directions)


def _advance(w, pkt, env):
    """Try to accept ``pkt`` in walker ``w`` (mutated in place). Returns True on accept."""
    ts = pkt.ts
    n = len(w.policies)
    cur = w.policies[w.at]
    if w.phase == ACTIVE and cur.kind is PolicyKind.TRANSIENT and _expired(cur, w.count, w.since, ts):
        w.arrive((w.at + 1) % n, ts)
        cur = w.policies[w.at]
    fwd = (Direction.FORWARD,)
    if w.phase == AWAIT_FWD:
        if match_policy(cur, pkt, Direction.FORWARD, env):
            w.first_packet(w.at, ts)
            return True
        return False
    if w.phase == AWAIT_BWD:
        if match_policy(cur, pkt, Direction.BACKWARD, env):
            w.arrive((w.at + 1) % n, ts)
            return True
        return False
    # active periodic / transient policy
    j = (w.at + 1) % n
    if j != w.at:
        nxt = w.policies[j]
        dirs = (Direction.FORWARD, Direction.BACKWARD) if nxt.kind is not PolicyKind.ONE_OFF and nxt.bidirectional else fwd
        if _matches(nxt, pkt, env, dirs):
            if nxt.kind is not PolicyKind.PERIODIC or w.buckets[j].take(ts):
                w.first_packet(j, ts)
                return True
    dirs = (Direction.FORWARD, Direction.BACKWARD) if cur.bidirectional else fwd
    if _matches(cur, pkt, env, dirs):
        if cur.kind is PolicyKind.PERIODIC:
            return w.buckets[w.at].take(ts)
        w.count += 1
        if w.since is None:
            w.since = ts
        return True
    return False


class _Device:
    def __init__(self, profile, config, profiled, names):
        self.profile = profile
        info = profile.device_info
        self.keys = {info.mac.lower()} | {str(ipaddress.ip_address(a)) for a in info.addresses}
        self.env = MatchEnv(info, config.lan_prefixes, config.gateway_addrs, profiled, names)
        self.walkers = []
        for inter in profile.interactions:
            pols = inter.policies
            buckets = {i: _Bucket(p.stats.rate) for i, p in enumerate(pols) if p.kind is PolicyKind.PERIODIC}
            w = _Walker(pols, AWAIT_FWD, 0, buckets=buckets)
            if pols[0].kind is not PolicyKind.ONE_OFF:
                w.phase = ACTIVE
            self.walkers.append(w)


def _packet_keys(pkt):
    keys = {pkt.eth.src, pkt.eth.dst}
    if pkt.ip is not None:
        keys |= {pkt.ip.src, pkt.ip.dst}
    if pkt.arp is not None:
        keys |= {pkt.arp.sender_hw, pkt.arp.target_hw, pkt.arp.sender_ip, pkt.arp.target_ip}
    out = set()
    for k in keys:
        try:
            out.add(str(ipaddress.ip_address(k)))
        except ValueError:
            out.add(k.lower())
    return out


def label_trace(trace, profiles, config=None, edit_log=None):
    """Label every packet of ``trace`` with the verdict the semantics demand.

    ``edit_log`` is carried along into the result; it does not influence the
    labels, since an edited packet can still be legitimate by accident and an
    unedited one can be stranded by an earlier drop.
    """
    config = config or EngineConfig()
    names = _Names()
    profiled = frozenset(str(ipaddress.ip_address(a)) for p in profiles for a in p.device_info.addresses)
    devices = [_Device(p, config, profiled, names) for p in profiles]
    expected = []
    for pkt in trace:
        keys = _packet_keys(pkt)
        involved = [d for d in devices if d.keys & keys]
        if not involved:
            decision = config.default_unprofiled
        else:
            pending = []
            decision = ACCEPT
            for dev in involved:
                trial = [(i, w.clone()) for i, w in enumerate(dev.walkers)]
                ok = [(i, w) for i, w in trial if _advance(w, pkt, dev.env)]
                if not ok:
                    decision = DROP
                    break
                pending.append((dev, ok))
            if decision == ACCEPT:
                for dev, ok in pending:
                    for i, w in ok:
                        dev.walkers[i] = w
        if decision == ACCEPT and isinstance(pkt.app, Dns) and pkt.app.is_response:
            names.learn(pkt.app)
        expected.append(decision)
    return LabeledTrace(trace, expected, edit_log, tuple(p.device_info.name for p in profiles))
