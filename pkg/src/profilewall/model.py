"""In-memory device profiles: device info, interactions, policies and match specs.

All types are frozen dataclasses. The model is deliberately lenient about
field *contents* (addresses are kept as strings, enumerations as names) so
that :func:`validate_profile` can report every problem at once instead of
failing on the first bad value.
"""

from __future__ import annotations

import enum
import ipaddress
import re
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Optional, Union

from . import protocols as P


class PolicyKind(enum.Enum):
    ONE_OFF = "one-off"
    TRANSIENT = "transient"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class DeviceInfo:
    name: str
    mac: str
    ipv4: Optional[str] = None
    ipv6: Optional[str] = None

    @property
    def addresses(self):
        return tuple(a for a in (self.ipv4, self.ipv6) if a)


@dataclass(frozen=True)
class PortRange:
    lo: int
    hi: int

    @classmethod
    def single(cls, port):
        return cls(port, port)

    def __contains__(self, port):
        return self.lo <= port <= self.hi

    def __str__(self):
        return str(self.lo) if self.lo == self.hi else f"{self.lo}-{self.hi}"


@dataclass(frozen=True)
class LinkMatch:
    src_mac: Optional[str] = None
    dst_mac: Optional[str] = None
    eth_type: Optional[int] = None


@dataclass(frozen=True)
class ArpMatch:
    operation: Optional[str] = None
    sender_hw: Optional[str] = None
    sender_ip: Optional[str] = None
    target_hw: Optional[str] = None
    target_ip: Optional[str] = None


@dataclass(frozen=True)
class IpMatch:
    version: Optional[int] = None
    src: Optional[str] = None
    dst: Optional[str] = None


@dataclass(frozen=True)
class IcmpMatch:
    type_name: Optional[str] = None


@dataclass(frozen=True)
class TransportMatch:
    protocol: str
    src_port: Optional[PortRange] = None
    dst_port: Optional[PortRange] = None


@dataclass(frozen=True)
class DnsMatch:
    protocol: str = "dns"  # "dns" or "mdns"
    qr: Optional[str] = None
    qtype: Optional[str] = None
    domain_name: Optional[str] = None


@dataclass(frozen=True)
class DhcpMatch:
    message_type: Optional[str] = None
    protocol = "dhcp"


@dataclass(frozen=True)
class HttpMatch:
    method: Optional[str] = None
    uri_prefix: Optional[str] = None
    response: bool = False
    protocol = "http"


@dataclass(frozen=True)
class SsdpMatch:
    method: Optional[str] = None
    st: Optional[str] = None
    response: bool = False
    protocol = "ssdp"


@dataclass(frozen=True)
class CoapMatch:
    type: Optional[str] = None
    method: Optional[str] = None
    uri_path: Optional[str] = None
    response: bool = False
    protocol = "coap"


@dataclass(frozen=True)
class IgmpMatch:
    type_name: Optional[str] = None
    group: Optional[str] = None
    protocol = "igmp"


AppMatch = Union[DnsMatch, DhcpMatch, HttpMatch, SsdpMatch, CoapMatch, IgmpMatch]


@dataclass(frozen=True)
class MatchSpec:
    link: Optional[LinkMatch] = None
    arp: Optional[ArpMatch] = None
    ip: Optional[IpMatch] = None
    icmp: Optional[IcmpMatch] = None
    transport: Optional[TransportMatch] = None
    app: Optional[AppMatch] = None

    def blocks(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self) if getattr(self, f.name) is not None]


@dataclass(frozen=True)
class Rate:
    packets_per_second: Fraction
    burst: Optional[int] = None

    @property
    def capacity(self):
        """Bucket size in packets: the burst, or ceil(rate) when unset."""
        if self.burst is not None:
            return self.burst
        return -(-self.packets_per_second.numerator // self.packets_per_second.denominator)


@dataclass(frozen=True)
class Stats:
    rate: Optional[Rate] = None
    max_packets: Optional[int] = None
    max_duration: Optional[float] = None  # seconds

    def is_empty(self):
        return self.rate is None and self.max_packets is None and self.max_duration is None

    @property
    def max_duration_ns(self):
        if self.max_duration is None:
            return None
        return round(self.max_duration * 1000) * 1_000_000


@dataclass(frozen=True)
class Policy:
    name: str
    kind: PolicyKind
    match: MatchSpec
    bidirectional: bool = False
    stats: Optional[Stats] = None


@dataclass(frozen=True)
class Interaction:
    name: str
    policies: tuple


@dataclass(frozen=True)
class Profile:
    device_info: DeviceInfo
    interactions: tuple = ()
    patterns: dict = field(default_factory=dict, compare=False, repr=False)

    def interaction(self, name):
        for i in self.interactions:
            if i.name == name:
                return i
        raise KeyError(name)

    @property
    def policy_count(self):
        return sum(len(i.policies) for i in self.interactions)


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


# ---------------------------------------------------------------------------
# Validation

_MAC_RE = re.compile(r"^[0-9a-f]{2}(:[0-9a-f]{2}){5}$")
_LABEL_RE = re.compile(r"^(\*|_?[a-z0-9]([a-z0-9_-]*[a-z0-9])?)$", re.IGNORECASE)
_MAC_SYMBOLS = ("self", "any", "broadcast")


def is_mac(value):
    return isinstance(value, str) and bool(_MAC_RE.match(value.lower()))


def is_domain_name(value):
    if not isinstance(value, str) or not value or len(value) > 253:
        return False
    labels = value.rstrip(".").split(".")
    if len(labels) < 2:
        return False
    return all(_LABEL_RE.match(label) for label in labels)


def parse_network(value):
    """Literal address or CIDR network, or None if ``value`` is neither."""
    try:
        return ipaddress.ip_network(value, strict=False)
    except (ValueError, TypeError):
        return None


def endpoint_kind(value):
    """Classify an endpoint expression: 'symbol', 'address', 'domain' or None."""
    if value in P.SYMBOLS:
        return "symbol"
    if parse_network(value) is not None:
        return "address"
    if is_domain_name(value):
        return "domain"
    return None


def validate_profile(profile):
    """Return one :class:`Diagnostic` per violated invariant, in a stable order."""
    out = []
    _check_device(profile.device_info, out)
    seen = set()
    for inter in profile.interactions:
        ipath = f"interactions.{inter.name}"
        if inter.name in seen:
            out.append(Diagnostic(ipath, "duplicate interaction name"))
        seen.add(inter.name)
        if not inter.policies:
            out.append(Diagnostic(ipath, "interaction has no policies"))
        pnames = set()
        for pol in inter.policies:
            ppath = f"{ipath}.{pol.name}"
            if pol.name in pnames:
                out.append(Diagnostic(ppath, "duplicate policy name"))
            pnames.add(pol.name)
            _check_policy(pol, ppath, out)
    return out


def _check_device(dev, out):
    if not dev.name:
        out.append(Diagnostic("device-info.name", "device name is required"))
    if not is_mac(dev.mac):
        out.append(Diagnostic("device-info.mac", f"not a 6-octet MAC address: {dev.mac!r}"))
    if not dev.ipv4 and not dev.ipv6:
        out.append(Diagnostic("device-info", "at least one of ipv4/ipv6 is required"))
    for attr, version in (("ipv4", 4), ("ipv6", 6)):
        value = getattr(dev, attr)
        if value is None:
            continue
        try:
            addr = ipaddress.ip_address(value)
        except ValueError:
            addr = None
        if addr is None or addr.version != version:
            out.append(Diagnostic(f"device-info.{attr}", f"not an IPv{version} address: {value!r}"))


def _check_policy(pol, path, out):
    stats = pol.stats if pol.stats is not None and not pol.stats.is_empty() else None
    spath = f"{path}.stats"
    if pol.kind is PolicyKind.TRANSIENT:
        if stats is None or (stats.max_packets is None and stats.max_duration is None):
            out.append(Diagnostic(spath, "transient policy requires max_duration or max_packets"))
        elif stats.rate is not None:
            out.append(Diagnostic(spath, "transient policy cannot also carry a rate"))
    elif pol.kind is PolicyKind.PERIODIC:
        if stats is None or stats.rate is None:
            out.append(Diagnostic(spath, "periodic policy requires a rate"))
        elif stats.max_packets is not None or stats.max_duration is not None:
            out.append(Diagnostic(spath, "periodic policy cannot also carry packet-count/duration"))
    elif stats is not None:
        out.append(Diagnostic(spath, "one-off policy cannot carry stats"))
    if pol.stats is not None:
        _check_stats(pol.stats, spath, out)
    _check_match(pol.match, f"{path}.protocols", out)


def _check_stats(stats, path, out):
    if stats.is_empty():
        return
    if stats.rate is not None:
        if stats.rate.packets_per_second <= 0:
            out.append(Diagnostic(f"{path}.rate", "rate must be positive"))
        if stats.rate.burst is not None and stats.rate.burst <= 0:
            out.append(Diagnostic(f"{path}.rate", "burst must be a positive packet count"))
    if stats.max_packets is not None and stats.max_packets <= 0:
        out.append(Diagnostic(f"{path}.packet-count", "packet-count must be positive"))
    if stats.max_duration is not None and stats.max_duration <= 0:
        out.append(Diagnostic(f"{path}.duration", "duration must be positive"))


def _check_endpoint(value, path, out, version=None):
    if value is None:
        return
    kind = endpoint_kind(value)
    if kind is None:
        out.append(Diagnostic(path, f"not an address, domain name or referent: {value!r}"))
    elif kind == "address" and version is not None and parse_network(value).version != version:
        out.append(Diagnostic(path, f"address {value!r} is not IPv{version}"))


def _check_mac(value, path, out):
    if value is not None and value not in _MAC_SYMBOLS and not is_mac(value):
        out.append(Diagnostic(path, f"not a MAC address: {value!r}"))


def _check_enum(value, allowed, path, out):
    if value is not None and value not in allowed:
        out.append(Diagnostic(path, f"unknown value {value!r} (expected one of {', '.join(sorted(allowed))})"))


def _check_match(ms, path, out):
    if not ms.blocks():
        out.append(Diagnostic(path, "match spec needs at least one protocol block"))
        return
    if ms.link is not None:
        _check_mac(ms.link.src_mac, f"{path}.ethernet.src-mac", out)
        _check_mac(ms.link.dst_mac, f"{path}.ethernet.dst-mac", out)
    if ms.arp is not None:
        a = ms.arp
        _check_enum(a.operation, P.ARP_OPS, f"{path}.arp.type", out)
        _check_mac(a.sender_hw, f"{path}.arp.sender-mac", out)
        _check_mac(a.target_hw, f"{path}.arp.target-mac", out)
        _check_endpoint(a.sender_ip, f"{path}.arp.sender-ip", out, 4)
        _check_endpoint(a.target_ip, f"{path}.arp.target-ip", out, 4)
        if ms.ip is not None or ms.transport is not None or ms.app is not None or ms.icmp is not None:
            out.append(Diagnostic(f"{path}.arp", "arp cannot be combined with IP-level blocks"))
    if ms.ip is not None:
        ip = ms.ip
        if ip.version not in (None, 4, 6):
            out.append(Diagnostic(f"{path}.ip", f"unknown IP version {ip.version!r}"))
        _check_endpoint(ip.src, f"{path}.ipv{ip.version or ''}.src", out, ip.version)
        _check_endpoint(ip.dst, f"{path}.ipv{ip.version or ''}.dst", out, ip.version)
    if ms.icmp is not None:
        _check_enum(ms.icmp.type_name, P.ICMP_TYPE_NAMES, f"{path}.icmp.type", out)
        if ms.transport is not None or ms.app is not None:
            out.append(Diagnostic(f"{path}.icmp", "icmp cannot be combined with transport/application blocks"))
    if ms.transport is not None:
        t = ms.transport
        if t.protocol not in ("tcp", "udp"):
            out.append(Diagnostic(f"{path}.transport", f"unknown transport {t.protocol!r}"))
        for name in ("src_port", "dst_port"):
            pr = getattr(t, name)
            if pr is not None and not (0 <= pr.lo <= pr.hi <= 65535):
                out.append(Diagnostic(f"{path}.{t.protocol}.{name.replace('_', '-')}", f"bad port {pr}"))
    app = ms.app
    if app is None:
        return
    apath = f"{path}.{app.protocol}"
    if isinstance(app, IgmpMatch):
        if ms.transport is not None:
            out.append(Diagnostic(apath, "igmp rides directly on IP, not on tcp/udp"))
        _check_enum(app.type_name, P.IGMP_TYPES, f"{apath}.type", out)
        if app.group is not None:
            net = parse_network(app.group)
            if net is None or not net.is_multicast:
                out.append(Diagnostic(f"{apath}.group", f"not a multicast group: {app.group!r}"))
        return
    if ms.transport is None:
        out.append(Diagnostic(apath, "application block requires a transport block"))
    elif ms.transport.protocol != P.APP_TRANSPORT[app.protocol]:
        out.append(Diagnostic(apath, f"{app.protocol} runs over {P.APP_TRANSPORT[app.protocol]}, not {ms.transport.protocol}"))
    if isinstance(app, DnsMatch):
        _check_enum(app.protocol, ("dns", "mdns"), apath, out)
        _check_enum(app.qr, ("query", "response"), f"{apath}.qr", out)
        _check_enum(app.qtype, P.DNS_TYPES, f"{apath}.qtype", out)
        if app.domain_name is not None and not (is_domain_name(app.domain_name) or app.domain_name.endswith(".local")):
            out.append(Diagnostic(f"{apath}.domain-name", f"not a domain name: {app.domain_name!r}"))
    elif isinstance(app, DhcpMatch):
        _check_enum(app.message_type, P.DHCP_TYPES, f"{apath}.type", out)
    elif isinstance(app, HttpMatch):
        _check_enum(app.method, P.HTTP_METHODS, f"{apath}.method", out)
    elif isinstance(app, SsdpMatch):
        _check_enum(app.method, P.SSDP_METHODS, f"{apath}.method", out)
    elif isinstance(app, CoapMatch):
        _check_enum(app.type, P.COAP_TYPES, f"{apath}.type", out)
        _check_enum(app.method, P.COAP_METHODS, f"{apath}.method", out)
