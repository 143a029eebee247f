"""Deterministic trace fuzzing.

An edit picks one field of a packet's highest parsed layer and gives it a
different, still well-formed value. Ports and addresses are drawn from
ranges the bundled profiles never use, so an edited packet no longer matches
the policy its original matched. The packet is then re-serialized and
dissected again, so the fuzzed trace holds only canonical packets.
"""

from __future__ import annotations

import json
import math
import random
import string
from dataclasses import dataclass, field, replace

from .. import protocols as P
from ..packets import Trace
from ..packets.codec import dissect
from ..packets.layers import Coap, Dhcp, Dns, DnsQuestion, Http, Igmp, Ssdp

FUZZ_PORTS = range(20000, 30000)
_QTYPES = ("A", "AAAA", "CNAME", "MX", "TXT", "PTR", "SRV")
_ICMP4 = (0, 3, 8, 11, 13, 14)
_ICMP6 = (1, 3, 128, 129, 135, 136)
_HTTP_METHODS = ("GET", "POST", "PUT", "DELETE", "HEAD")


@dataclass(frozen=True)
class Edit:
    idx: int
    layer: str
    field: str
    old: object
    new: object

    def to_dict(self):
        return {"idx": self.idx, "layer": self.layer, "field": self.field, "old": self.old, "new": self.new}

    @classmethod
    def from_dict(cls, d):
        return cls(d["idx"], d["layer"], d["field"], d["old"], d["new"])


@dataclass
class EditLog:
    seed: int
    edit_fraction: float
    edits: list = field(default_factory=list)

    @property
    def indices(self):
        return {e.idx for e in self.edits}

    def to_dict(self):
        return {"seed": self.seed, "edit_fraction": self.edit_fraction, "edits": [e.to_dict() for e in self.edits]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["seed"], d["edit_fraction"], [Edit.from_dict(e) for e in d.get("edits", [])])

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def edit_count(n, edit_fraction):
    """``ceil(n * fraction)``, but at least one edit on a non-empty trace."""
    if not 0 <= edit_fraction <= 1:
        raise ValueError(f"edit_fraction must be within [0, 1], got {edit_fraction}")
    if n == 0:
        return 0
    return max(1, min(n, math.ceil(n * edit_fraction)))


def _other(rng, choices, current):
    pool = [c for c in choices if c != current]
    return rng.choice(pool)


def _fuzz_port(rng, current):
    port = rng.choice(FUZZ_PORTS)
    return port if port != current else port + 1


def _random_label(rng, k=8):
    return "fz" + "".join(rng.choice(string.ascii_lowercase + string.digits) for _ in range(k))


def _off_lan_ip(rng):
    return f"172.31.{rng.randrange(256)}.{rng.randrange(1, 255)}"


def _mutate_dns(rng, app):
    if not app.questions:
        return "id", app.id, (app.id + 1) & 0xFFFF, replace(app, id=(app.id + 1) & 0xFFFF)
    q = app.questions[0]
    if rng.random() < 0.5:
        labels = q.name.split(".")
        new_name = ".".join([_random_label(rng)] + labels[1:])
        nq = DnsQuestion(new_name, q.qtype, q.qclass)
        return "qname", q.name, new_name, replace(app, questions=(nq,) + app.questions[1:])
    new_type = _other(rng, _QTYPES, q.qtype)
    nq = DnsQuestion(q.name, new_type, q.qclass)
    return "qtype", q.qtype, new_type, replace(app, questions=(nq,) + app.questions[1:])


def _mutate_app(rng, app):
    """Return ``(field, old, new, app')`` for one field of an application message."""
    if isinstance(app, Dns):
        return _mutate_dns(rng, app)
    if isinstance(app, Dhcp):
        names = sorted(P.DHCP_TYPES)
        old = P.DHCP_TYPE_NAMES.get(app.message_type)
        new = _other(rng, names, old)
        return "message_type", old, new, replace(app, message_type=P.DHCP_TYPES[new])
    if isinstance(app, Http):
        if app.method is None:
            # A response becomes a request: the start line is the field.
            return "start-line", f"{app.status}", "GET /", replace(app, method="GET", uri="/", status=None, reason="")
        if rng.random() < 0.5:
            new = _other(rng, _HTTP_METHODS, app.method)
            return "method", app.method, new, replace(app, method=new)
        new = "/" + _random_label(rng)
        return "uri", app.uri, new, replace(app, uri=new)
    if isinstance(app, Ssdp):
        if app.method is None:
            return "start-line", f"{app.status}", "M-SEARCH *", replace(app, method="M-SEARCH", uri="*", status=None,
                                                                        reason="")
        # the method is what SSDP policies pin; search targets are often left open
        new = _other(rng, P.SSDP_METHODS, app.method)
        return "method", app.method, new, replace(app, method=new)
    if isinstance(app, Coap):
        if app.is_response:
            return "code", app.code, P.COAP_METHODS["GET"], replace(app, code=P.COAP_METHODS["GET"])
        new = _other(rng, sorted(P.COAP_METHODS.values()), app.code)
        return "code", app.code, new, replace(app, code=new)
    if isinstance(app, Igmp):
        if rng.random() < 0.5:
            old = P.IGMP_NAMES.get(app.type, app.type)
            new = _other(rng, ("membership-query", "membership-report", "leave-group"), old)
            return "type", old, new, replace(app, type=P.IGMP_TYPES[new])
        new = f"239.{rng.randrange(1, 255)}.{rng.randrange(256)}.{rng.randrange(1, 255)}"
        return "group", app.group, new, replace(app, group=new)
    raise TypeError(f"no mutation for {type(app).__name__}")


def service_port_field(tr):
    """The port a policy is likely to pin: the lower one (servers sit on low ports)."""
    return "dst_port" if tr.dst_port <= tr.src_port else "src_port"


def mutate_packet(pkt, rng):
    """Return ``(packet', layer, field, old, new)`` with one field of the highest layer changed.

    ``layer`` is ``eth``, ``arp``, ``ip``, ``icmp``, ``transport``, or the
    application protocol name.
    """
    layer = pkt.highest
    if layer == "app":
        layer = pkt.app.protocol  # logged by protocol name: "dns", "http", ...
        fld, old, new, app = _mutate_app(rng, pkt.app)
        changed = pkt.rebuilt(app=app)
    elif layer == "transport":
        tr = pkt.transport
        fld = service_port_field(tr)
        old = getattr(tr, fld)
        new = _fuzz_port(rng, old)
        changed = pkt.rebuilt(transport=replace(tr, **{fld: new}))
    elif layer == "icmp":
        table = _ICMP6 if pkt.ip.version == 6 else _ICMP4
        fld, old = "type", pkt.icmp.type
        new = _other(rng, table, old)
        changed = pkt.rebuilt(icmp=replace(pkt.icmp, type=new))
    elif layer == "ip":
        fld, old = "dst", pkt.ip.dst
        new = _off_lan_ip(rng) if pkt.ip.version == 4 else "2001:db8::f" + str(rng.randrange(100, 999))
        changed = pkt.rebuilt(ip=replace(pkt.ip, dst=new))
    elif layer == "arp":
        fld, old = "operation", P.ARP_OP_NAMES.get(pkt.arp.operation, pkt.arp.operation)
        new = "reply" if old == "request" else "request"
        changed = pkt.rebuilt(arp=replace(pkt.arp, operation=P.ARP_OPS[new]))
    else:
        fld, old = "ethertype", pkt.eth.ethertype
        new = 0x88B5  # local experimental ethertype
        changed = pkt.rebuilt(eth=replace(pkt.eth, ethertype=new))
    canonical = dissect(changed.raw, ts=changed.ts, iface=changed.iface)
    return canonical, layer, fld, old, new


def fuzz_trace(trace, seed, edit_fraction=0.3):
    """Edit :func:`edit_count` distinct packets of ``trace``; fully determined by ``seed``."""
    rng = random.Random(seed)
    packets = list(trace)
    k = edit_count(len(packets), edit_fraction)
    chosen = sorted(rng.sample(range(len(packets)), k))
    log = EditLog(seed, edit_fraction)
    for idx in chosen:
        new_pkt, layer, fld, old, new = mutate_packet(packets[idx], rng)
        packets[idx] = new_pkt
        log.edits.append(Edit(idx, layer, fld, old, new))
    return Trace(tuple(packets), trace.linktype), log
