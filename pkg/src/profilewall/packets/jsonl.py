"""JSON-lines packet traces: one packet per line, fields named after profile keys.

Reading always goes through bytes: fields are synthesized into a frame and
the frame is dissected again, so a packet read from JSONL is exactly what
the dissector would produce for those bytes.
"""

from __future__ import annotations

import json
from decimal import Decimal, InvalidOperation

from .. import protocols as P
from ..errors import FormatError
from .codec import LINKTYPE_ETHERNET, Packet, dissect
from .layers import Arp, Coap, Dhcp, Dns, DnsQuestion, DnsRecord, Ethernet, Http, Icmp, Igmp, Ip, Ssdp, Transport
from .pcap import Trace, check_monotone

SCHEMA_VERSION = 1


def seconds_to_ns(value):
    try:
        return int(Decimal(str(value)) * 1_000_000_000)
    except InvalidOperation:
        raise ValueError(f"bad timestamp {value!r}") from None


def ns_to_seconds(ns):
    sec, frac = divmod(ns, 1_000_000_000)
    if frac == 0:
        return sec
    return f"{sec}.{frac:09d}".rstrip("0")


def _hex(b):
    return b.hex()


def _unhex(s):
    return bytes.fromhex(s) if s else b""


# ---------------------------------------------------------------------------
# Packet -> dict


def packet_to_dict(pkt, with_raw=False):
    d = {"v": SCHEMA_VERSION, "ts": ns_to_seconds(pkt.ts)}
    if pkt.iface:
        d["iface"] = pkt.iface
    d["eth"] = {"src": pkt.eth.src, "dst": pkt.eth.dst, "type": pkt.eth.ethertype}
    if pkt.arp is not None:
        a = pkt.arp
        d["arp"] = {"op": P.ARP_OP_NAMES.get(a.operation, a.operation), "sender-mac": a.sender_hw,
                    "sender-ip": a.sender_ip, "target-mac": a.target_hw, "target-ip": a.target_ip}
    if pkt.ip is not None:
        ip = pkt.ip
        d["ip"] = _compact({"version": ip.version, "src": ip.src, "dst": ip.dst, "proto": ip.protocol,
                            "ttl": ip.ttl, "tos": ip.tos, "id": ip.ident, "frag": ip.flags_frag,
                            "flow": ip.flow, "options": _hex(ip.options), "remainder": _hex(ip.remainder)},
                           keep=("version", "src", "dst", "proto", "ttl"))
    if pkt.icmp is not None:
        ic = pkt.icmp
        names = P.ICMP6_NAMES if pkt.ip.version == 6 else P.ICMP4_NAMES
        d["icmp"] = _compact({"type": names.get(ic.type, ic.type), "code": ic.code, "rest": _hex(ic.rest)}, keep=("type",))
    if pkt.transport is not None:
        t = pkt.transport
        body = {"src": t.src_port, "dst": t.dst_port}
        if t.protocol == "tcp":
            body.update({"seq": t.seq, "ack": t.ack, "flags": t.flags, "window": t.window, "options": _hex(t.options)})
        body["payload"] = _hex(t.payload)
        d[t.protocol] = _compact(body, keep=("src", "dst"))
    if pkt.app is not None:
        d[pkt.app.protocol] = app_to_dict(pkt.app)
    if pkt.trailer:
        d["trailer"] = _hex(pkt.trailer)
    if with_raw:
        d["raw"] = _hex(pkt.raw)
    return d


def _compact(d, keep=()):
    return {k: v for k, v in d.items() if k in keep or v not in (0, "", None, ())}


def app_to_dict(app):
    if isinstance(app, Dns):
        out = {"id": app.id, "qr": app.qr, "flags": app.flags}
        if len(app.questions) == 1 and app.questions[0].qclass == 1:
            out["qtype"] = app.qtype
            out["domain-name"] = app.qname
        else:
            out["questions"] = [{"name": q.name, "type": q.qtype, "class": q.qclass} for q in app.questions]
        for section in ("answers", "authority", "additional"):
            records = getattr(app, section)
            if records:
                out[section] = [{"name": r.name, "type": r.rtype, "value": r.value, "ttl": r.ttl, "class": r.rclass}
                                for r in records]
        return out
    if isinstance(app, Dhcp):
        return _compact({
            "op": app.op, "xid": app.xid, "chaddr": app.chaddr,
            "type": P.DHCP_TYPE_NAMES.get(app.message_type, app.message_type),
            "ciaddr": app.ciaddr, "yiaddr": app.yiaddr, "siaddr": app.siaddr, "giaddr": app.giaddr,
            "secs": app.secs, "bflags": app.bflags, "legacy": _hex(app.legacy), "options": _hex(app.options),
            "cookie": app.cookie, "padding": _hex(app.padding),
        }, keep=("op", "xid", "chaddr", "cookie"))
    if isinstance(app, (Http, Ssdp)):
        return {"method": app.method, "uri": app.uri, "version": app.version, "status": app.status,
                "reason": app.reason, "headers": [list(h) for h in app.headers], "body": _hex(app.body)}
    if isinstance(app, Coap):
        return {"type": P.COAP_TYPE_NAMES[app.type], "code": P.COAP_METHOD_NAMES.get(app.code, app.code),
                "mid": app.message_id, "token": _hex(app.token),
                "options": [[n, _hex(v)] for n, v in app.options], "payload": _hex(app.payload)}
    if isinstance(app, Igmp):
        return _compact({"type": P.IGMP_NAMES.get(app.type, app.type), "group": app.group,
                         "max-resp": app.max_resp, "extra": _hex(app.extra)}, keep=("type", "group"))
    raise TypeError(app)


# ---------------------------------------------------------------------------
# dict -> Packet


def _named(value, table, what):
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if value in table:
        return table[value]
    raise ValueError(f"unknown {what} {value!r}")


def _int(v):
    if isinstance(v, bool):
        raise ValueError(f"expected integer, got {v!r}")
    if isinstance(v, Decimal):
        if v != v.to_integral_value():
            raise ValueError(f"expected integer, got {v}")
        return int(v)
    return int(v)


def dns_from_dict(body, protocol):
    if "questions" in body:
        questions = tuple(DnsQuestion(q["name"], q.get("type", "A"), _int(q.get("class", 1))) for q in body["questions"])
    elif "domain-name" in body:
        questions = (DnsQuestion(body["domain-name"].rstrip("."), body.get("qtype", "A")),)
    else:
        questions = ()
    sections = []
    for section in ("answers", "authority", "additional"):
        sections.append(tuple(
            DnsRecord(r["name"], r.get("type", "A"), str(r["value"]), _int(r.get("ttl", 0)), _int(r.get("class", 1)))
            for r in body.get(section, ())
        ))
    qr = body.get("qr", "response" if sections[0] else "query")
    if qr not in ("query", "response"):
        raise ValueError(f"bad qr {qr!r}")
    return Dns(protocol, _int(body.get("id", 0)), qr, _int(body.get("flags", 0)), questions, *sections)


def app_from_dict(name, body):
    if name in ("dns", "mdns"):
        return dns_from_dict(body, name)
    if name == "dhcp":
        mt = body.get("type")
        return Dhcp(
            _int(body.get("op", 1)), _int(body.get("xid", 0)), body.get("chaddr", "00:00:00:00:00:00"),
            None if mt is None else _named(mt, P.DHCP_TYPES, "DHCP type"),
            body.get("ciaddr", "0.0.0.0"), body.get("yiaddr", "0.0.0.0"), body.get("siaddr", "0.0.0.0"),
            body.get("giaddr", "0.0.0.0"), _int(body.get("secs", 0)), _int(body.get("bflags", 0)),
            _unhex(body.get("legacy")), _unhex(body.get("options")), bool(body.get("cookie", True)),
            _unhex(body.get("padding")),
        )
    if name in ("http", "ssdp"):
        cls = Http if name == "http" else Ssdp
        status = body.get("status")
        default_uri = "/" if name == "http" else "*"
        method = body.get("method")
        return cls(method, body.get("uri", default_uri) if method else None, body.get("version", "HTTP/1.1"),
                   None if status is None else _int(status), body.get("reason", ""),
                   tuple(tuple(h) for h in body.get("headers", ())), _unhex(body.get("body")))
    if name == "coap":
        options = [(_int(n), _unhex(v)) for n, v in body.get("options", ())]
        if "uri" in body:
            options = [o for o in options if o[0] != P.COAP_OPT_URI_PATH]
            options += [(P.COAP_OPT_URI_PATH, seg.encode()) for seg in body["uri"].strip("/").split("/") if seg]
        return Coap(_named(body.get("type", "CON"), P.COAP_TYPES, "CoAP type"),
                    _named(body.get("code", 0), P.COAP_METHODS, "CoAP code"), _int(body.get("mid", 0)),
                    _unhex(body.get("token")), tuple(sorted(options, key=lambda o: o[0])), _unhex(body.get("payload")))
    if name == "igmp":
        return Igmp(_named(body["type"], P.IGMP_TYPES, "IGMP type"), body.get("group", "0.0.0.0"),
                    _int(body.get("max-resp", 0)), _unhex(body.get("extra")))
    raise ValueError(name)


def packet_from_dict(d):
    """Build a canonical :class:`Packet` from a JSONL object."""
    if d.get("v", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {d.get('v')!r}")
    ts = seconds_to_ns(d.get("ts", 0))
    iface = d.get("iface")
    if "raw" in d:
        return dissect(_unhex(d["raw"]), LINKTYPE_ETHERNET, ts, iface)
    eth = d.get("eth") or {}
    src_mac = eth.get("src", "00:00:00:00:00:00")
    dst_mac = eth.get("dst", "ff:ff:ff:ff:ff:ff")
    parts = {}
    apps = [k for k in P.APP_PROTOCOLS if k in d]
    if len(apps) > 1:
        raise ValueError(f"more than one application layer: {apps}")
    app = app_from_dict(apps[0], d[apps[0]]) if apps else None
    ethertype = eth.get("type")
    if "arp" in d:
        a = d["arp"]
        parts["arp"] = Arp(_named(a.get("op", "request"), P.ARP_OPS, "ARP op"), a["sender-mac"], a["sender-ip"],
                           a.get("target-mac", "00:00:00:00:00:00"), a["target-ip"])
        ethertype = ethertype or P.ETH_ARP
    elif "ip" in d:
        ipd = d["ip"]
        version = _int(ipd.get("version", 6 if ":" in ipd["src"] else 4))
        proto = ipd.get("proto")
        upper = {}
        if "icmp" in d:
            ic = d["icmp"]
            table = P.ICMP6_TYPES if version == 6 else P.ICMP4_TYPES
            upper["icmp"] = Icmp(_named(ic["type"], table, "ICMP type"), _int(ic.get("code", 0)), _unhex(ic.get("rest")))
            proto = proto or (P.IPPROTO_ICMPV6 if version == 6 else P.IPPROTO_ICMP)
        elif "tcp" in d or "udp" in d:
            tname = "tcp" if "tcp" in d else "udp"
            t = d[tname]
            upper["transport"] = Transport(
                tname, _int(t["src"]), _int(t["dst"]), _int(t.get("seq", 0)), _int(t.get("ack", 0)),
                _int(t.get("flags", 0x18 if app is not None else 0)), _int(t.get("window", 65535)),
                _unhex(t.get("options")), _unhex(t.get("payload")) if app is None else b"",
            )
            if app is not None:
                upper["app"] = app
            proto = proto or (P.IPPROTO_TCP if tname == "tcp" else P.IPPROTO_UDP)
        elif app is not None:
            upper["app"] = app
            proto = proto or P.IPPROTO_IGMP
        parts["ip"] = Ip(version, ipd["src"], ipd["dst"], _int(proto if proto is not None else 0xFD),
                         _int(ipd.get("ttl", 64)), _int(ipd.get("tos", 0)), _int(ipd.get("id", 0)),
                         _int(ipd.get("frag", 0)), _int(ipd.get("flow", 0)), _unhex(ipd.get("options")),
                         _unhex(ipd.get("remainder")))
        parts.update(upper)
        ethertype = ethertype or (P.ETH_IPV6 if version == 6 else P.ETH_IPV4)
    synthesized = Packet(ts, Ethernet(src_mac, dst_mac, _int(ethertype or 0x88B5)),
                         trailer=_unhex(d.get("trailer")), iface=iface, **parts)
    return dissect(synthesized.raw, LINKTYPE_ETHERNET, ts, iface)


def read_jsonl(text):
    """Parse JSON-lines text into a :class:`Trace`; blank lines and ``#`` comments are skipped."""
    packets = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line, parse_float=Decimal)
            if not isinstance(obj, dict):
                raise ValueError("expected a JSON object")
            pkt = packet_from_dict(obj)
        except (ValueError, KeyError, TypeError, FormatError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if packets and pkt.ts < packets[-1].ts:
            raise FormatError(f"line {lineno}: timestamps must be non-decreasing")
        packets.append(pkt)
    check_monotone(packets)
    return Trace(tuple(packets))


def write_jsonl(trace, with_raw=False):
    return "".join(json.dumps(packet_to_dict(p, with_raw)) + "\n" for p in trace.packets)
