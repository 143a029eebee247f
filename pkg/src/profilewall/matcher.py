"""Packet-vs-policy matching, direction inversion and the rate/stat primitives.

Matching is pure. The stateful pieces (:class:`RateBucket`,
:class:`TransientCounters`) are small mutable records owned by one FSM
runtime; the functions that update them are deterministic in the sequence
of timestamps they are fed.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Optional

from . import protocols as P
from .errors import ClockRegression
from .model import (
    ArpMatch,
    CoapMatch,
    DhcpMatch,
    DnsMatch,
    HttpMatch,
    IcmpMatch,
    IgmpMatch,
    IpMatch,
    LinkMatch,
    MatchSpec,
    PolicyKind,
    SsdpMatch,
    TransportMatch,
    endpoint_kind,
    parse_network,
)
from .packets.layers import Coap, Dhcp, Dns, Http, Igmp, Ssdp

NS_PER_SECOND = 1_000_000_000
BROADCAST_MAC = "ff:ff:ff:ff:ff:ff"


class Direction(enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    BOTH = "both"


class Outcome(enum.Enum):
    MATCH = "match"
    NO_MATCH = "no-match"
    UNRESOLVED = "unresolved"  # only a domain endpoint with no known address failed


class Admit(enum.Enum):
    ADMIT = "admit"
    EXCEED = "exceed"


class Within(enum.Enum):
    WITHIN = "within"
    EXPIRED = "expired"


@dataclass
class Effort:
    """What kind of work a decision needed (for the bench categories)."""

    app_compare: bool = False
    dns_lookup: bool = False

    @property
    def category(self):
        if self.app_compare and self.dns_lookup:
            return "D"
        if self.dns_lookup:
            return "C"
        if self.app_compare:
            return "B"
        return "A"


class _EmptyDns:
    def lookup(self, name):
        return frozenset()


@dataclass(frozen=True)
class MatchEnv:
    device: object  # DeviceInfo of the profile being evaluated
    lan_prefixes: tuple = ()
    gateway_addrs: frozenset = frozenset()
    profiled_addrs: frozenset = frozenset()
    dns: object = field(default_factory=_EmptyDns)
    now: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lan_prefixes", tuple(ipaddress.ip_network(p, strict=False) for p in self.lan_prefixes))
        object.__setattr__(self, "gateway_addrs", frozenset(canonical_ip(a) for a in self.gateway_addrs))
        object.__setattr__(self, "profiled_addrs", frozenset(canonical_ip(a) for a in self.profiled_addrs))
        object.__setattr__(self, "_self_addrs", frozenset(canonical_ip(a) for a in self.device.addresses))

    def is_local(self, addr):
        ip = _ip(addr)
        return ip is not None and any(ip.version == n.version and ip in n for n in self.lan_prefixes)

    def is_phone(self, addr):
        ip = _ip(addr)
        if ip is None or ip.is_multicast or addr in self.gateway_addrs or addr in self.profiled_addrs:
            return False
        for net in self.lan_prefixes:
            if ip.version == net.version and ip in net:
                if net.version == 4 and net.prefixlen < 31:
                    return ip not in (net.network_address, net.broadcast_address)
                return True
        return False


@lru_cache(maxsize=65536)
def _ip(addr):
    try:
        return ipaddress.ip_address(addr)
    except ValueError:
        return None


@lru_cache(maxsize=4096)
def canonical_ip(addr):
    ip = _ip(addr)
    return str(ip) if ip is not None else addr


@lru_cache(maxsize=4096)
def _network(value):
    return parse_network(value)


@lru_cache(maxsize=4096)
def _endpoint_kind(value):
    return endpoint_kind(value)


def normalize_name(name):
    return name.rstrip(".").lower()


def name_matches(pattern, name):
    """Case-insensitive domain comparison; a leading ``*.`` matches any subdomain."""
    pattern = normalize_name(pattern)
    name = normalize_name(name)
    if pattern.startswith("*."):
        return name.endswith(pattern[1:])
    return pattern == name


class _Check:
    """Accumulates soft failures (unresolved names) during one match."""

    __slots__ = ("unresolved", "effort")

    def __init__(self, effort):
        self.unresolved = False
        self.effort = effort

    def endpoint(self, expr, addr, env):
        """Hard result of an IP endpoint test; unresolved names are recorded."""
        if expr is None or expr == "any":
            return True
        if addr is None:
            return False
        if expr == "self":
            return addr in env._self_addrs
        if expr == "local":
            return env.is_local(addr)
        if expr == "gateway":
            return addr in env.gateway_addrs
        if expr == "phone":
            return env.is_phone(addr)
        kind = _endpoint_kind(expr)
        if kind == "address":
            ip = _ip(addr)
            net = _network(expr)
            return ip is not None and ip.version == net.version and ip in net
        if kind == "domain":
            if self.effort is not None:
                self.effort.dns_lookup = True
            known = env.dns.lookup(expr)
            if not known:
                self.unresolved = True
                return True  # soft failure, reported as UNRESOLVED if nothing else fails
            return addr in known
        return False

    def app(self):
        if self.effort is not None:
            self.effort.app_compare = True


def _mac_ok(expr, mac, env):
    if expr is None or expr == "any":
        return True
    if expr == "self":
        return mac == env.device.mac
    if expr == "broadcast":
        return mac == BROADCAST_MAC
    return mac == expr


def match_spec(ms, pkt, env, effort=None):
    """Evaluate every present block of ``ms`` against ``pkt``; absent blocks are wildcards."""
    chk = _Check(effort)
    link = ms.link
    if link is not None:
        if not (_mac_ok(link.src_mac, pkt.eth.src, env) and _mac_ok(link.dst_mac, pkt.eth.dst, env)):
            return Outcome.NO_MATCH
        if link.eth_type is not None and pkt.eth.ethertype != link.eth_type:
            return Outcome.NO_MATCH
    if ms.arp is not None:
        a, pa = ms.arp, pkt.arp
        if pa is None:
            return Outcome.NO_MATCH
        if a.operation is not None and P.ARP_OPS.get(a.operation) != pa.operation:
            return Outcome.NO_MATCH
        if not (_mac_ok(a.sender_hw, pa.sender_hw, env) and _mac_ok(a.target_hw, pa.target_hw, env)):
            return Outcome.NO_MATCH
        if not (chk.endpoint(a.sender_ip, pa.sender_ip, env) and chk.endpoint(a.target_ip, pa.target_ip, env)):
            return Outcome.NO_MATCH
    if ms.ip is not None:
        ip = pkt.ip
        if ip is None or (ms.ip.version is not None and ip.version != ms.ip.version):
            return Outcome.NO_MATCH
        if not (chk.endpoint(ms.ip.src, ip.src, env) and chk.endpoint(ms.ip.dst, ip.dst, env)):
            return Outcome.NO_MATCH
    if ms.icmp is not None:
        ic = pkt.icmp
        if ic is None:
            return Outcome.NO_MATCH
        if ms.icmp.type_name is not None:
            table = P.ICMP6_TYPES if pkt.ip.version == 6 else P.ICMP4_TYPES
            if table.get(ms.icmp.type_name) != ic.type:
                return Outcome.NO_MATCH
    if ms.transport is not None:
        t, pt = ms.transport, pkt.transport
        if pt is None or pt.protocol != t.protocol:
            return Outcome.NO_MATCH
        if t.src_port is not None and pt.src_port not in t.src_port:
            return Outcome.NO_MATCH
        if t.dst_port is not None and pt.dst_port not in t.dst_port:
            return Outcome.NO_MATCH
    if ms.app is not None and not _app_ok(ms.app, pkt.app, chk, env):
        return Outcome.NO_MATCH
    return Outcome.UNRESOLVED if chk.unresolved else Outcome.MATCH


def _app_ok(m, app, chk, env):
    if app is None or app.protocol != m.protocol:
        return False
    if isinstance(m, DnsMatch):
        if not isinstance(app, Dns):
            return False
        if m.qr is not None and app.qr != m.qr:
            return False
        if m.qtype is not None or m.domain_name is not None:
            chk.app()
            if not app.questions:
                return False
            if m.qtype is not None and app.qtype != m.qtype:
                return False
            if m.domain_name is not None and not name_matches(m.domain_name, app.qname):
                return False
        return True
    if isinstance(m, DhcpMatch):
        if not isinstance(app, Dhcp):
            return False
        if m.message_type is None:
            return True
        chk.app()
        return P.DHCP_TYPES.get(m.message_type) == app.message_type
    if isinstance(m, HttpMatch):
        if not isinstance(app, Http) or app.is_response != m.response:
            return False
        if m.response:
            return True
        chk.app()
        if m.method is not None and app.method != m.method:
            return False
        return m.uri_prefix is None or app.uri.startswith(m.uri_prefix)
    if isinstance(m, SsdpMatch):
        if not isinstance(app, Ssdp) or app.is_response != m.response:
            return False
        chk.app()
        if not m.response and m.method is not None and app.method != m.method:
            return False
        return m.st is None or app.st == m.st
    if isinstance(m, CoapMatch):
        if not isinstance(app, Coap) or app.is_response != m.response:
            return False
        if m.response:
            return True
        chk.app()
        if m.type is not None and P.COAP_TYPES.get(m.type) != app.type:
            return False
        if m.method is not None and P.COAP_METHODS.get(m.method) != app.code:
            return False
        return m.uri_path is None or app.uri_path == m.uri_path.strip("/")
    if isinstance(m, IgmpMatch):
        if not isinstance(app, Igmp):
            return False
        chk.app()
        if m.type_name is not None and P.IGMP_TYPES.get(m.type_name) != app.type:
            return False
        return chk.endpoint(m.group, app.group, env)
    return False


def spec_for(policy, direction):
    return invert_direction(policy.match) if direction is Direction.BACKWARD else policy.match


def match_outcome(policy, pkt, direction, env, effort=None):
    """Like :func:`match_policy` but distinguishes unresolved domain names.

    ``Direction.BOTH`` tries forward first, then backward.
    """
    if direction is Direction.BOTH:
        fwd = match_spec(policy.match, pkt, env, effort)
        if fwd is Outcome.MATCH:
            return fwd
        bwd = match_spec(invert_direction(policy.match), pkt, env, effort)
        if bwd is Outcome.MATCH:
            return bwd
        return Outcome.UNRESOLVED if Outcome.UNRESOLVED in (fwd, bwd) else Outcome.NO_MATCH
    return match_spec(spec_for(policy, direction), pkt, env, effort)


def match_policy(policy, pkt, direction, env):
    """True iff ``pkt`` matches ``policy`` in ``direction`` (pure)."""
    return match_outcome(policy, pkt, direction, env) is Outcome.MATCH


# ---------------------------------------------------------------------------
# Direction inversion

_ICMP_SWAP = {"echo-request": "echo-reply", "echo-reply": "echo-request",
              "timestamp-request": "timestamp-reply", "timestamp-reply": "timestamp-request"}
_DHCP_SWAP = {"discover": "offer", "offer": "discover", "request": "ack", "ack": "request"}
_QR_SWAP = {"query": "response", "response": "query"}
_ARP_SWAP = {"request": "reply", "reply": "request"}


@lru_cache(maxsize=4096)
def invert_direction(ms):
    """Swap every source/destination pair and flip request/response markers.

    The mapping is an involution: ``invert_direction(invert_direction(ms)) == ms``.
    """
    link = arp = ip = icmp = transport = app = None
    if ms.link is not None:
        link = LinkMatch(ms.link.dst_mac, ms.link.src_mac, ms.link.eth_type)
    if ms.arp is not None:
        a = ms.arp
        arp = ArpMatch(_ARP_SWAP.get(a.operation, a.operation), a.target_hw, a.target_ip, a.sender_hw, a.sender_ip)
    if ms.ip is not None:
        ip = IpMatch(ms.ip.version, ms.ip.dst, ms.ip.src)
    if ms.icmp is not None:
        icmp = IcmpMatch(_ICMP_SWAP.get(ms.icmp.type_name, ms.icmp.type_name))
    if ms.transport is not None:
        t = ms.transport
        transport = TransportMatch(t.protocol, t.dst_port, t.src_port)
    if ms.app is not None:
        a = ms.app
        if isinstance(a, DnsMatch):
            app = replace(a, qr=_QR_SWAP.get(a.qr, a.qr))
        elif isinstance(a, DhcpMatch):
            app = DhcpMatch(_DHCP_SWAP.get(a.message_type, a.message_type))
        elif isinstance(a, (HttpMatch, SsdpMatch, CoapMatch)):
            app = replace(a, response=not a.response)
        else:
            app = a
    return MatchSpec(link, arp, ip, icmp, transport, app)


# ---------------------------------------------------------------------------
# Rate limiting and transient limits


@dataclass
class RateBucket:
    """Token bucket with exact arithmetic; time is integer nanoseconds."""

    capacity: int
    fill_rate: Fraction  # tokens per second
    tokens: Fraction = None
    last_refill: Optional[int] = None

    def __post_init__(self):
        self.fill_rate = Fraction(self.fill_rate)
        if self.tokens is None:
            self.tokens = Fraction(self.capacity)

    @classmethod
    def for_rate(cls, rate, anchor=None):
        return cls(rate.capacity, rate.packets_per_second, Fraction(rate.capacity), anchor)

    def snapshot(self):
        return (self.capacity, self.fill_rate, self.tokens, self.last_refill)

    def copy(self):
        return RateBucket(self.capacity, self.fill_rate, self.tokens, self.last_refill)


def refill(bucket, ts):
    if bucket.last_refill is None:
        bucket.last_refill = ts
        return
    if ts < bucket.last_refill:
        raise ClockRegression(f"timestamp {ts} precedes last refill {bucket.last_refill}")
    if ts > bucket.last_refill:
        gained = bucket.fill_rate * (ts - bucket.last_refill) / NS_PER_SECOND
        bucket.tokens = min(Fraction(bucket.capacity), bucket.tokens + gained)
        bucket.last_refill = ts


def rate_admit(bucket, ts):
    """Refill up to ``ts`` then take one token if available."""
    refill(bucket, ts)
    if bucket.tokens >= 1:
        bucket.tokens -= 1
        return Admit.ADMIT
    return Admit.EXCEED


@dataclass
class TransientCounters:
    packets_matched: int = 0
    started_at: Optional[int] = None

    def copy(self):
        return TransientCounters(self.packets_matched, self.started_at)


def transient_within(policy, c, ts):
    """EXPIRED once either limit is reached (packet count) or exceeded (duration)."""
    assert policy.kind is PolicyKind.TRANSIENT
    stats = policy.stats
    if stats.max_packets is not None and c.packets_matched >= stats.max_packets:
        return Within.EXPIRED
    limit = stats.max_duration_ns
    if limit is not None and c.started_at is not None and ts - c.started_at > limit:
        return Within.EXPIRED
    return Within.WITHIN
