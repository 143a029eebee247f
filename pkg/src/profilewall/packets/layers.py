"""Parsed layer records. Every record is a frozen dataclass of plain values."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional


@dataclass(frozen=True)
class Ethernet:
    src: str
    dst: str
    ethertype: int


@dataclass(frozen=True)
class Arp:
    operation: int
    sender_hw: str
    sender_ip: str
    target_hw: str
    target_ip: str


@dataclass(frozen=True)
class Ip:
    version: int
    src: str
    dst: str
    protocol: int
    ttl: int = 64
    tos: int = 0  # IPv4 TOS / IPv6 traffic class
    ident: int = 0
    flags_frag: int = 0  # IPv4 flags + fragment offset
    flow: int = 0  # IPv6 flow label
    options: bytes = b""
    remainder: bytes = b""  # payload the dissector could not attribute to a layer

    @property
    def is_fragment(self):
        return self.version == 4 and (self.flags_frag & 0x3FFF) != 0


@dataclass(frozen=True)
class Icmp:
    type: int
    code: int = 0
    rest: bytes = b""  # bytes after the checksum (id/seq, echo data, ...)


@dataclass(frozen=True)
class Igmp:
    type: int
    group: str = "0.0.0.0"
    max_resp: int = 0
    extra: bytes = b""  # bytes after the 8-byte header; for v3 reports, the record block
    protocol = "igmp"


@dataclass(frozen=True)
class Transport:
    protocol: str  # "tcp" or "udp"
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    flags: int = 0
    window: int = 65535
    options: bytes = b""
    payload: bytes = b""  # opaque when no application layer was recognised


@dataclass(frozen=True)
class DnsQuestion:
    name: str
    qtype: str  # symbolic type name, or "TYPE<n>"
    qclass: int = 1


@dataclass(frozen=True)
class DnsRecord:
    name: str
    rtype: str  # symbolic type name, or "TYPE<n>"
    value: str  # textual rdata (address, name, "prio weight port target", or hex)
    ttl: int = 0
    rclass: int = 1


@dataclass(frozen=True)
class Dns:
    protocol: str  # "dns" or "mdns"
    id: int = 0
    qr: str = "query"  # "query" or "response"
    flags: int = 0  # header flag bits other than QR
    questions: tuple = ()
    answers: tuple = ()
    authority: tuple = ()
    additional: tuple = ()

    @property
    def is_response(self):
        return self.qr == "response"

    @property
    def qname(self):
        return self.questions[0].name if self.questions else None

    @property
    def qtype(self):
        return self.questions[0].qtype if self.questions else None


@dataclass(frozen=True)
class Dhcp:
    op: int
    xid: int
    chaddr: str
    message_type: Optional[int] = None
    ciaddr: str = "0.0.0.0"
    yiaddr: str = "0.0.0.0"
    siaddr: str = "0.0.0.0"
    giaddr: str = "0.0.0.0"
    secs: int = 0
    bflags: int = 0
    legacy: bytes = b""  # sname+file area, only kept when non-zero
    options: bytes = b""  # raw options other than message type (53), pad and end
    cookie: bool = True
    padding: bytes = b""  # bytes after the end option
    protocol = "dhcp"


@dataclass(frozen=True)
class Http:
    method: Optional[str]  # None for responses
    uri: Optional[str]
    version: str = "HTTP/1.1"
    status: Optional[int] = None
    reason: str = ""
    headers: tuple = ()  # ((name, value), ...)
    body: bytes = b""
    protocol = "http"

    @property
    def is_response(self):
        return self.method is None


@dataclass(frozen=True)
class Ssdp:
    method: Optional[str]  # M-SEARCH / NOTIFY; None for a response
    uri: Optional[str] = "*"
    version: str = "HTTP/1.1"
    status: Optional[int] = None
    reason: str = ""
    headers: tuple = ()
    body: bytes = b""
    protocol = "ssdp"

    @property
    def is_response(self):
        return self.method is None

    @property
    def st(self):
        wanted = ("nt",) if self.method == "NOTIFY" else ("st",)
        for name, value in self.headers:
            if name.lower() in wanted:
                return value
        return None


@dataclass(frozen=True)
class Coap:
    type: int
    code: int  # class << 5 | detail
    message_id: int
    token: bytes = b""
    options: tuple = ()  # ((number, bytes), ...) sorted by number
    payload: bytes = b""
    protocol = "coap"

    @property
    def method(self):
        return self.code if 1 <= self.code <= 31 and self.code >> 5 == 0 else None

    @property
    def is_response(self):
        return self.code >> 5 >= 2

    @property
    def uri_path(self):
        parts = [v.decode("utf-8", "replace") for n, v in self.options if n == 11]
        return "/".join(parts)


LAYER_ORDER = ("arp", "ip", "icmp", "transport", "app")


def layer_fields(layer):
    """Field values of a layer record as a dict (used for equality checks)."""
    return {f.name: getattr(layer, f.name) for f in fields(layer)}
