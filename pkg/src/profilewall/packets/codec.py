"""Byte-level dissection and synthesis of Ethernet frames.

``dissect`` is total: anything past a valid Ethernet header that cannot be
understood is kept as opaque bytes on the deepest layer that did parse.
``serialize`` is its inverse on parsed fields and computes all checksums.
"""

from __future__ import annotations

import ipaddress
import socket
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

from .. import protocols as P
from ..errors import FormatError
from .layers import (
    Arp,
    Coap,
    Dhcp,
    Dns,
    DnsQuestion,
    DnsRecord,
    Ethernet,
    Http,
    Icmp,
    Igmp,
    Ip,
    Ssdp,
    Transport,
)

LINKTYPE_ETHERNET = 1
ETH_HEADER_LEN = 14
DHCP_COOKIE = b"\x63\x82\x53\x63"

_ParseErrors = (struct.error, ValueError, IndexError, UnicodeDecodeError, KeyError, OverflowError)


@dataclass(frozen=True)
class Packet:
    """A timestamped frame. ``raw`` is the wire form and is excluded from ``==``."""

    ts: int  # nanoseconds since the epoch
    eth: Ethernet
    arp: Optional[Arp] = None
    ip: Optional[Ip] = None
    icmp: Optional[Icmp] = None
    transport: Optional[Transport] = None
    app: object = None
    trailer: bytes = b""  # bytes after the deepest structured layer (padding, unknown ethertype)
    raw: bytes = field(default=b"", compare=False, repr=False)
    iface: Optional[str] = None

    def __post_init__(self):
        if not self.raw:
            object.__setattr__(self, "raw", serialize(self))

    @property
    def seconds(self):
        return self.ts / 1e9

    @property
    def layers(self):
        return tuple(layer for layer in (self.arp, self.ip, self.icmp, self.transport, self.app) if layer is not None)

    @property
    def highest(self):
        """Name of the highest parsed layer: 'app', 'transport', 'icmp', 'ip', 'arp' or 'eth'."""
        for name in ("app", "transport", "icmp", "ip", "arp"):
            if getattr(self, name) is not None:
                return name
        return "eth"

    def rebuilt(self, **changes):
        """Copy with some layers replaced and ``raw`` re-synthesized from fields."""
        return replace(self, raw=b"", **changes)


# ---------------------------------------------------------------------------
# helpers


def mac_str(b):
    return ":".join(f"{x:02x}" for x in b)


def mac_bytes(s):
    return bytes(int(x, 16) for x in s.split(":"))


def ip4_str(b):
    return socket.inet_ntop(socket.AF_INET, b)


def ip6_str(b):
    return socket.inet_ntop(socket.AF_INET6, b)


def ip_bytes(s):
    return ipaddress.ip_address(s).packed


def checksum(data):
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _pseudo_header(ip, length, proto):
    if ip.version == 4:
        return ip_bytes(ip.src) + ip_bytes(ip.dst) + struct.pack("!BBH", 0, proto, length)
    return ip_bytes(ip.src) + ip_bytes(ip.dst) + struct.pack("!IxxxB", length, proto)


# ---------------------------------------------------------------------------
# dissection


def dissect(raw, linktype=LINKTYPE_ETHERNET, ts=0, iface=None):
    """Parse a frame as deeply as possible. Only a short Ethernet header is an error."""
    if linktype != LINKTYPE_ETHERNET:
        raise FormatError(f"unsupported linktype {linktype} (only Ethernet is handled)")
    raw = bytes(raw)
    if len(raw) < ETH_HEADER_LEN:
        raise FormatError(f"truncated Ethernet header ({len(raw)} bytes)")
    dst, src, ethertype = raw[0:6], raw[6:12], struct.unpack("!H", raw[12:14])[0]
    eth = Ethernet(mac_str(src), mac_str(dst), ethertype)
    body = raw[ETH_HEADER_LEN:]
    parts = {}
    trailer = body
    try:
        if ethertype == P.ETH_ARP:
            parts["arp"], trailer = _dissect_arp(body)
        elif ethertype in (P.ETH_IPV4, P.ETH_IPV6):
            parts, trailer = _dissect_ip(body, ethertype)
    except _ParseErrors:
        parts, trailer = {}, body
    return Packet(ts=ts, eth=eth, trailer=trailer, raw=raw, iface=iface, **parts)


def _dissect_arp(body):
    htype, ptype, hlen, plen, op = struct.unpack("!HHBBH", body[:8])
    if htype != 1 or ptype != P.ETH_IPV4 or hlen != 6 or plen != 4 or len(body) < 28:
        raise ValueError("unsupported ARP")
    arp = Arp(op, mac_str(body[8:14]), ip4_str(body[14:18]), mac_str(body[18:24]), ip4_str(body[24:28]))
    return arp, body[28:]


def _dissect_ip(body, ethertype):
    if ethertype == P.ETH_IPV4:
        vihl, tos, total, ident, ff, ttl, proto = struct.unpack("!BBHHHBB", body[:10])
        ihl = (vihl & 0xF) * 4
        if vihl >> 4 != 4 or ihl < 20 or total < ihl or len(body) < total:
            raise ValueError("bad IPv4 header")
        ip = Ip(4, ip4_str(body[12:16]), ip4_str(body[16:20]), proto, ttl, tos, ident, ff, 0, body[20:ihl])
        payload, trailer = body[ihl:total], body[total:]
    else:
        vtcfl, plen, nxt, hlim = struct.unpack("!IHBB", body[:8])
        if vtcfl >> 28 != 6 or len(body) < 40 + plen:
            raise ValueError("bad IPv6 header")
        ip = Ip(6, ip6_str(body[8:24]), ip6_str(body[24:40]), nxt, hlim, (vtcfl >> 20) & 0xFF, 0, 0, vtcfl & 0xFFFFF)
        payload, trailer = body[40:40 + plen], body[40 + plen:]
    parts = {"ip": ip}
    if ip.is_fragment:
        parts["ip"] = replace(ip, remainder=payload)
        return parts, trailer
    try:
        upper = _dissect_upper(ip, payload)
    except _ParseErrors:
        upper = None
    if upper is None:
        parts["ip"] = replace(ip, remainder=payload)
    else:
        parts.update(upper)
    return parts, trailer


def _dissect_upper(ip, payload):
    proto = ip.protocol
    if (proto == P.IPPROTO_ICMP and ip.version == 4) or (proto == P.IPPROTO_ICMPV6 and ip.version == 6):
        t, c = struct.unpack("!BB", payload[:2])
        if len(payload) < 4:
            return None
        return {"icmp": Icmp(t, c, payload[4:])}
    if proto == P.IPPROTO_IGMP and ip.version == 4:
        return {"app": _dissect_igmp(payload)}
    if proto == P.IPPROTO_TCP:
        sport, dport, seq, ack, off, flags, window = struct.unpack("!HHIIBBH", payload[:16])
        hlen = (off >> 4) * 4
        if hlen < 20 or len(payload) < hlen:
            return None
        data = payload[hlen:]
        tr = Transport("tcp", sport, dport, seq, ack, flags, window, payload[20:hlen], data)
        return _with_app(tr, _classify_tcp(tr, data))
    if proto == P.IPPROTO_UDP:
        sport, dport, ulen = struct.unpack("!HHH", payload[:6])
        if ulen < 8 or ulen > len(payload):
            return None
        data = payload[8:ulen]
        tr = Transport("udp", sport, dport, payload=data)
        return _with_app(tr, _classify_udp(tr, data))
    return None


def _with_app(tr, app):
    if app is None:
        return {"transport": tr}
    return {"transport": replace(tr, payload=b""), "app": app}


def udp_app_name(sport, dport):
    return P.UDP_APP_PORTS.get(dport) or P.UDP_APP_PORTS.get(sport)


def _classify_udp(tr, data):
    name = udp_app_name(tr.src_port, tr.dst_port)
    if name is None or not data:
        return None
    try:
        if name in ("dns", "mdns"):
            return _dissect_dns(data, name)
        if name == "dhcp":
            return _dissect_dhcp(data)
        if name == "coap":
            return _dissect_coap(data)
        if name == "ssdp":
            return _dissect_httpish(data, Ssdp, P.SSDP_METHODS)
    except _ParseErrors:
        return None
    return None


def _looks_like_http(data):
    head = data[:8]
    return head.startswith(b"HTTP/") or any(head.startswith(m.encode() + b" ") for m in P.HTTP_METHODS)


def _classify_tcp(tr, data):
    if not data:
        return None
    if 80 in (tr.src_port, tr.dst_port) or _looks_like_http(data):
        try:
            return _dissect_httpish(data, Http, P.HTTP_METHODS)
        except _ParseErrors:
            return None
    return None


def _dissect_igmp(payload):
    if len(payload) < 8:
        raise ValueError("short IGMP")
    t, max_resp = payload[0], payload[1]
    if t == 0x22:
        extra = payload[4:]
        nrec = struct.unpack("!H", extra[2:4])[0]
        group = ip4_str(extra[8:12]) if nrec and len(extra) >= 12 else "0.0.0.0"
        return Igmp(t, group, max_resp, extra)
    return Igmp(t, ip4_str(payload[4:8]), max_resp, payload[8:])


# -- DNS ---------------------------------------------------------------------


def _read_name(msg, off, depth=0):
    labels = []
    jumped = False
    end = off
    hops = 0
    while True:
        length = msg[off]
        if length & 0xC0 == 0xC0:
            ptr = ((length & 0x3F) << 8) | msg[off + 1]
            if not jumped:
                end = off + 2
            jumped = True
            hops += 1
            if hops > 32 or ptr >= len(msg):
                raise ValueError("DNS pointer loop")
            off = ptr
            continue
        if length & 0xC0:
            raise ValueError("bad label type")
        off += 1
        if length == 0:
            break
        label = msg[off:off + length]
        if len(label) != length:
            raise ValueError("truncated label")
        labels.append(label.decode("utf-8"))
        off += length
    if not jumped:
        end = off
    return ".".join(labels), end


def _type_name(n):
    return P.DNS_TYPE_NAMES.get(n, f"TYPE{n}")


def _type_num(name):
    if name in P.DNS_TYPES:
        return P.DNS_TYPES[name]
    if name.startswith("TYPE"):
        return int(name[4:])
    raise ValueError(f"unknown DNS type {name!r}")


def _decode_rdata(msg, off, rdlen, rtype):
    rdata = msg[off:off + rdlen]
    if len(rdata) != rdlen:
        raise ValueError("truncated rdata")
    if rtype == "A" and rdlen == 4:
        return ip4_str(rdata)
    if rtype == "AAAA" and rdlen == 16:
        return ip6_str(rdata)
    if rtype in ("CNAME", "PTR", "NS"):
        return _read_name(msg, off)[0]
    if rtype == "MX":
        return f"{struct.unpack('!H', rdata[:2])[0]} {_read_name(msg, off + 2)[0]}"
    if rtype == "SRV":
        prio, weight, port = struct.unpack("!HHH", rdata[:6])
        return f"{prio} {weight} {port} {_read_name(msg, off + 6)[0]}"
    return rdata.hex()


def _dissect_dns(data, protocol):
    ident, flags, qd, an, ns, ar = struct.unpack("!HHHHHH", data[:12])
    off = 12
    questions = []
    for _ in range(qd):
        name, off = _read_name(data, off)
        qtype, qclass = struct.unpack("!HH", data[off:off + 4])
        off += 4
        questions.append(DnsQuestion(name, _type_name(qtype), qclass))
    sections = []
    for count in (an, ns, ar):
        records = []
        for _ in range(count):
            name, off = _read_name(data, off)
            rtype, rclass, ttl, rdlen = struct.unpack("!HHIH", data[off:off + 10])
            off += 10
            tname = _type_name(rtype)
            records.append(DnsRecord(name, tname, _decode_rdata(data, off, rdlen, tname), ttl, rclass))
            off += rdlen
        sections.append(tuple(records))
    if off != len(data):
        raise ValueError("trailing bytes after DNS message")
    qr = "response" if flags & 0x8000 else "query"
    return Dns(protocol, ident, qr, flags & 0x7FFF, tuple(questions), *sections)


def _encode_name(name):
    out = b""
    if name:
        for label in name.split("."):
            raw = label.encode("utf-8")
            if not 0 < len(raw) < 64:
                raise ValueError(f"bad DNS label in {name!r}")
            out += bytes([len(raw)]) + raw
    return out + b"\x00"


def _encode_rdata(rtype, value):
    if rtype == "A":
        return ipaddress.IPv4Address(value).packed
    if rtype == "AAAA":
        return ipaddress.IPv6Address(value).packed
    if rtype in ("CNAME", "PTR", "NS"):
        return _encode_name(value)
    if rtype == "MX":
        pref, host = value.split(" ", 1)
        return struct.pack("!H", int(pref)) + _encode_name(host)
    if rtype == "SRV":
        prio, weight, port, host = value.split(" ", 3)
        return struct.pack("!HHH", int(prio), int(weight), int(port)) + _encode_name(host)
    return bytes.fromhex(value)


def _serialize_dns(d):
    flags = (0x8000 if d.qr == "response" else 0) | (d.flags & 0x7FFF)
    out = struct.pack("!HHHHHH", d.id, flags, len(d.questions), len(d.answers), len(d.authority), len(d.additional))
    for q in d.questions:
        out += _encode_name(q.name) + struct.pack("!HH", _type_num(q.qtype), q.qclass)
    for section in (d.answers, d.authority, d.additional):
        for r in section:
            rdata = _encode_rdata(r.rtype, r.value)
            out += _encode_name(r.name) + struct.pack("!HHIH", _type_num(r.rtype), r.rclass, r.ttl, len(rdata)) + rdata
    return out


# -- DHCP --------------------------------------------------------------------


def _dissect_dhcp(data):
    if len(data) < 236:
        raise ValueError("short BOOTP")
    op, htype, hlen, hops, xid, secs, bflags = struct.unpack("!BBBBIHH", data[:12])
    if htype != 1 or hlen != 6 or op not in (1, 2):
        raise ValueError("unsupported BOOTP hardware")
    ci, yi, si, gi = (ip4_str(data[i:i + 4]) for i in (12, 16, 20, 24))
    chaddr = mac_str(data[28:34])
    if any(data[34:44]):
        raise ValueError("chaddr padding not zero")
    legacy = data[44:236] if any(data[44:236]) else b""
    opts = data[236:]
    msg_type = None
    other = b""
    cookie = opts[:4] == DHCP_COOKIE
    if cookie:
        i = 4
        ended = False
        while i < len(opts):
            code = opts[i]
            if code == 0:
                raise ValueError("pad option")  # not reproducible; keep opaque
            if code == 255:
                ended = True
                i += 1
                break
            length = opts[i + 1]
            value = opts[i + 2:i + 2 + length]
            if len(value) != length:
                raise ValueError("truncated option")
            if code == 53 and length == 1 and msg_type is None:
                msg_type = value[0]
            else:
                other += opts[i:i + 2 + length]
            i += 2 + length
        if not ended:
            raise ValueError("unterminated options")
        padding = opts[i:]
    elif opts:
        raise ValueError("options without magic cookie")
    else:
        padding = b""
    return Dhcp(op, xid, chaddr, msg_type, ci, yi, si, gi, secs, bflags, legacy, other, cookie, padding)


def _serialize_dhcp(d):
    out = struct.pack("!BBBBIHH", d.op, 1, 6, 0, d.xid, d.secs, d.bflags)
    out += b"".join(ip_bytes(a) for a in (d.ciaddr, d.yiaddr, d.siaddr, d.giaddr))
    out += mac_bytes(d.chaddr) + bytes(10)
    out += d.legacy if d.legacy else bytes(192)
    if d.cookie:
        out += DHCP_COOKIE
        if d.message_type is not None:
            out += bytes([53, 1, d.message_type])
        out += d.options + b"\xff" + d.padding
    return out


# -- HTTP / SSDP -------------------------------------------------------------


def _dissect_httpish(data, cls, methods):
    head, sep, body = data.partition(b"\r\n\r\n")
    if not sep:
        raise ValueError("incomplete header block")
    lines = head.decode("ascii").split("\r\n")
    start = lines[0].split(" ", 2)
    if len(start) != 3:
        raise ValueError("bad start line")
    headers = []
    for line in lines[1:]:
        name, colon, value = line.partition(":")
        if not colon or not name or name != name.strip():
            raise ValueError("bad header line")
        headers.append((name, value.strip()))
    headers = tuple(headers)
    if start[0].startswith("HTTP/"):
        status = int(start[1])
        if str(status) != start[1]:
            raise ValueError("bad status")
        return cls(None, None, start[0], status, start[2], headers, body)
    if start[0] not in methods or not start[2].startswith("HTTP/"):
        raise ValueError("unknown method")
    return cls(start[0], start[1], start[2], None, "", headers, body)


def _serialize_httpish(h):
    if h.method is None:
        line = f"{h.version} {h.status} {h.reason}"
    else:
        line = f"{h.method} {h.uri} {h.version}"
    lines = [line] + [f"{k}: {v}" if v else f"{k}:" for k, v in h.headers]
    return ("\r\n".join(lines) + "\r\n\r\n").encode("ascii") + h.body


# -- CoAP --------------------------------------------------------------------


def _dissect_coap(data):
    b0, code, mid = struct.unpack("!BBH", data[:4])
    if b0 >> 6 != 1:
        raise ValueError("CoAP version")
    tkl = b0 & 0xF
    if tkl > 8:
        raise ValueError("token length")
    token = data[4:4 + tkl]
    if len(token) != tkl:
        raise ValueError("short token")
    off = 4 + tkl
    number = 0
    options = []
    payload = b""
    while off < len(data):
        if data[off] == 0xFF:
            payload = data[off + 1:]
            if not payload:
                raise ValueError("payload marker without payload")
            break
        delta, length = data[off] >> 4, data[off] & 0xF
        off += 1
        delta, off = _coap_ext(data, off, delta)
        length, off = _coap_ext(data, off, length)
        number += delta
        value = data[off:off + length]
        if len(value) != length:
            raise ValueError("short option")
        options.append((number, value))
        off += length
    return Coap((b0 >> 4) & 3, code, mid, token, tuple(options), payload)


def _coap_ext(data, off, nibble):
    if nibble == 13:
        return data[off] + 13, off + 1
    if nibble == 14:
        return struct.unpack("!H", data[off:off + 2])[0] + 269, off + 2
    if nibble == 15:
        raise ValueError("reserved option nibble")
    return nibble, off


def _coap_nibble(n):
    if n < 13:
        return n, b""
    if n < 269:
        return 13, bytes([n - 13])
    return 14, struct.pack("!H", n - 269)


def _serialize_coap(c):
    out = struct.pack("!BBH", 0x40 | (c.type << 4) | len(c.token), c.code, c.message_id) + c.token
    prev = 0
    for number, value in sorted(c.options, key=lambda o: o[0]):
        dn, dext = _coap_nibble(number - prev)
        ln, lext = _coap_nibble(len(value))
        out += bytes([(dn << 4) | ln]) + dext + lext + value
        prev = number
    if c.payload:
        out += b"\xff" + c.payload
    return out


# ---------------------------------------------------------------------------
# serialization


def serialize_app(app):
    if isinstance(app, Dns):
        return _serialize_dns(app)
    if isinstance(app, Dhcp):
        return _serialize_dhcp(app)
    if isinstance(app, (Http, Ssdp)):
        return _serialize_httpish(app)
    if isinstance(app, Coap):
        return _serialize_coap(app)
    raise TypeError(f"not an application layer over TCP/UDP: {app!r}")


def _serialize_igmp(g):
    if g.type == 0x22:
        extra = g.extra
        if len(extra) >= 12:
            extra = extra[:8] + ip_bytes(g.group) + extra[12:]
        body = bytes([g.type, g.max_resp]) + b"\x00\x00" + extra
    else:
        body = bytes([g.type, g.max_resp]) + b"\x00\x00" + ip_bytes(g.group) + g.extra
    csum = checksum(body)
    return body[:2] + struct.pack("!H", csum) + body[4:]


def _serialize_ip_payload(pkt):
    ip = pkt.ip
    if pkt.icmp is not None:
        ic = pkt.icmp
        body = struct.pack("!BBH", ic.type, ic.code, 0) + ic.rest
        pseudo = _pseudo_header(ip, len(body), P.IPPROTO_ICMPV6) if ip.version == 6 else b""
        return body[:2] + struct.pack("!H", checksum(pseudo + body)) + body[4:]
    if pkt.transport is not None:
        tr = pkt.transport
        data = serialize_app(pkt.app) if pkt.app is not None else tr.payload
        if tr.protocol == "tcp":
            hlen = 20 + len(tr.options)
            seg = struct.pack("!HHIIBBHHH", tr.src_port, tr.dst_port, tr.seq, tr.ack, (hlen // 4) << 4,
                              tr.flags, tr.window, 0, 0) + tr.options + data
            csum = checksum(_pseudo_header(ip, len(seg), P.IPPROTO_TCP) + seg)
            return seg[:16] + struct.pack("!H", csum) + seg[18:]
        seg = struct.pack("!HHHH", tr.src_port, tr.dst_port, 8 + len(data), 0) + data
        csum = checksum(_pseudo_header(ip, len(seg), P.IPPROTO_UDP) + seg) or 0xFFFF
        return seg[:6] + struct.pack("!H", csum) + seg[8:]
    if pkt.app is not None:
        return _serialize_igmp(pkt.app)
    return ip.remainder


def serialize(pkt):
    """Wire bytes for ``pkt`` computed from its fields (checksums recomputed)."""
    e = pkt.eth
    out = mac_bytes(e.dst) + mac_bytes(e.src) + struct.pack("!H", e.ethertype)
    if pkt.arp is not None:
        a = pkt.arp
        out += struct.pack("!HHBBH", 1, P.ETH_IPV4, 6, 4, a.operation)
        out += mac_bytes(a.sender_hw) + ip_bytes(a.sender_ip) + mac_bytes(a.target_hw) + ip_bytes(a.target_ip)
    elif pkt.ip is not None:
        ip = pkt.ip
        payload = _serialize_ip_payload(pkt)
        if ip.version == 4:
            ihl = 20 + len(ip.options)
            hdr = struct.pack("!BBHHHBBH", 0x40 | (ihl // 4), ip.tos, ihl + len(payload), ip.ident,
                              ip.flags_frag, ip.ttl, ip.protocol, 0)
            hdr += ip_bytes(ip.src) + ip_bytes(ip.dst) + ip.options
            hdr = hdr[:10] + struct.pack("!H", checksum(hdr)) + hdr[12:]
        else:
            hdr = struct.pack("!IHBB", (6 << 28) | (ip.tos << 20) | ip.flow, len(payload), ip.protocol, ip.ttl)
            hdr += ip_bytes(ip.src) + ip_bytes(ip.dst)
        out += hdr + payload
    return out + pkt.trailer


def to_bytes(pkt):
    """Wire form of ``pkt``: the retained raw bytes (identical to the input for dissected packets)."""
    return pkt.raw
