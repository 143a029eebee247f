"""Convenience constructors for synthetic packets used by fixtures and attack generators."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Optional

from .. import protocols as P
from .codec import Packet
from .layers import Arp, Coap, Dhcp, Dns, DnsQuestion, DnsRecord, Ethernet, Http, Icmp, Igmp, Ip, Ssdp, Transport

BROADCAST = "ff:ff:ff:ff:ff:ff"

TCP_FIN, TCP_SYN, TCP_RST, TCP_PSH, TCP_ACK = 0x01, 0x02, 0x04, 0x08, 0x10


@dataclass(frozen=True)
class Host:
    mac: str
    ip: str
    ipv6: Optional[str] = None


def _ip(src, dst, proto, v6=False):
    s, d = (src.ipv6, dst.ipv6) if v6 else (src.ip, dst.ip)
    version = ipaddress.ip_address(s).version
    return Ip(version, s, d, proto)


def frame(ts, src, dst, eth_dst=None, **layers):
    ethertype = P.ETH_ARP if "arp" in layers else (P.ETH_IPV6 if layers["ip"].version == 6 else P.ETH_IPV4)
    return Packet(ts, Ethernet(src.mac, eth_dst or dst.mac, ethertype), **layers)


def tcp(ts, src, dst, sport, dport, flags=TCP_ACK | TCP_PSH, payload=b"", seq=0, app=None, v6=False):
    tr = Transport("tcp", sport, dport, seq, 0, flags, 65535, b"", b"" if app is not None else payload)
    return frame(ts, src, dst, ip=_ip(src, dst, P.IPPROTO_TCP, v6), transport=tr, app=app)


def udp(ts, src, dst, sport, dport, payload=b"", app=None, v6=False, eth_dst=None, dst_ip=None):
    ip = _ip(src, dst, P.IPPROTO_UDP, v6)
    if dst_ip is not None:
        ip = Ip(ip.version, ip.src, dst_ip, ip.protocol)
    tr = Transport("udp", sport, dport, payload=b"" if app is not None else payload)
    return frame(ts, src, dst, eth_dst=eth_dst, ip=ip, transport=tr, app=app)


def arp(ts, src, dst, operation="request"):
    op = P.ARP_OPS[operation]
    target_hw = "00:00:00:00:00:00" if op == 1 else dst.mac
    eth_dst = BROADCAST if op == 1 else dst.mac
    return frame(ts, src, dst, eth_dst=eth_dst, arp=Arp(op, src.mac, src.ip, target_hw, dst.ip))


def icmp_echo(ts, src, dst, reply=False, ident=1, seq=1):
    v6 = ":" in src.ip
    if v6:
        t = P.ICMP6_TYPES["echo-reply" if reply else "echo-request"]
        proto = P.IPPROTO_ICMPV6
    else:
        t = P.ICMP4_TYPES["echo-reply" if reply else "echo-request"]
        proto = P.IPPROTO_ICMP
    rest = ident.to_bytes(2, "big") + seq.to_bytes(2, "big") + b"ping"
    return frame(ts, src, dst, ip=_ip(src, dst, proto), icmp=Icmp(t, 0, rest))


def dns_query(ts, src, dst, name, qtype="A", ident=1, sport=40000, mdns=False):
    protocol = "mdns" if mdns else "dns"
    port = 5353 if mdns else 53
    msg = Dns(protocol, ident, "query", 0x0100 if not mdns else 0, (DnsQuestion(name, qtype),))
    if mdns:
        return udp(ts, src, dst, 5353, 5353, app=msg, eth_dst="01:00:5e:00:00:fb", dst_ip="224.0.0.251")
    return udp(ts, src, dst, sport, port, app=msg)


def dns_response(ts, src, dst, name, answers, qtype="A", ident=1, dport=40000, mdns=False):
    """``answers`` is a list of ``(name, rtype, value)`` triples."""
    protocol = "mdns" if mdns else "dns"
    records = tuple(DnsRecord(n, t, v, 300) for n, t, v in answers)
    msg = Dns(protocol, ident, "response", 0x0180 if not mdns else 0x0400, (DnsQuestion(name, qtype),), records)
    if mdns:
        return udp(ts, src, dst, 5353, 5353, app=msg, eth_dst="01:00:5e:00:00:fb", dst_ip="224.0.0.251")
    return udp(ts, src, dst, 53, dport, app=msg)


def http_request(ts, src, dst, method="GET", uri="/", sport=40000, dport=80):
    msg = Http(method, uri, "HTTP/1.1", None, "", (("Host", dst.ip),))
    return tcp(ts, src, dst, sport, dport, app=msg)


def http_response(ts, src, dst, status=200, sport=80, dport=40000, body=b""):
    msg = Http(None, None, "HTTP/1.1", status, "OK", (("Content-Length", str(len(body))),), body)
    return tcp(ts, src, dst, sport, dport, app=msg)


def ssdp(ts, src, dst=None, method="M-SEARCH", st="ssdp:all", sport=40000):
    if method is None:
        msg = Ssdp(None, None, "HTTP/1.1", 200, "OK", (("ST", st), ("USN", "uuid:1")))
        return udp(ts, src, dst, 1900, sport, app=msg)
    key = "NT" if method == "NOTIFY" else "ST"
    msg = Ssdp(method, "*", "HTTP/1.1", None, "", (("HOST", "239.255.255.250:1900"), (key, st)))
    return udp(ts, src, dst or src, sport, 1900, app=msg, eth_dst="01:00:5e:7f:ff:fa", dst_ip="239.255.255.250")


def coap(ts, src, dst, method="GET", uri="status", ctype="CON", mid=1, sport=40000, response=False):
    options = tuple((P.COAP_OPT_URI_PATH, seg.encode()) for seg in uri.strip("/").split("/") if seg)
    if response:
        msg = Coap(P.COAP_TYPES["ACK"], 0x45, mid, b"\x01", (), b"ok")
        return udp(ts, src, dst, 5683, sport, app=msg)
    msg = Coap(P.COAP_TYPES[ctype], P.COAP_METHODS[method], mid, b"\x01", options)
    return udp(ts, src, dst, sport, 5683, app=msg)


def dhcp(ts, src, dst, message_type="discover", xid=0x1234):
    mt = P.DHCP_TYPES[message_type]
    client = message_type in ("discover", "request", "decline", "release", "inform")
    msg = Dhcp(1 if client else 2, xid, src.mac if client else dst.mac, mt)
    if client:
        return udp(ts, src, dst, 68, 67, app=msg)
    return udp(ts, src, dst, 67, 68, app=msg)


def igmp(ts, src, group, type_name="membership-report"):
    octets = ipaddress.ip_address(group).packed
    mac = "01:00:5e:%02x:%02x:%02x" % (octets[1] & 0x7F, octets[2], octets[3])
    msg = Igmp(P.IGMP_TYPES[type_name], group)
    ip = Ip(4, src.ip, group, P.IPPROTO_IGMP, ttl=1)
    return Packet(ts, Ethernet(src.mac, mac, P.ETH_IPV4), ip=ip, app=msg)
