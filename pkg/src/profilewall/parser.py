"""Profile source parsing: YAML with anchors, ``!include`` and value overrides.

The surface syntax is documented in ``docs/profile-format.md``. In short::

    device-info: {name: plug, mac: "50:c7:bf:00:00:01", ipv4: 192.168.1.10}
    patterns:
      dns-p:
        dns: {qtype: A, domain-name: ~}        # ~ marks a placeholder
    interactions:
      cloud:
        dns-query:
          protocols: !include
            ref: patterns.dns-p                 # or other.yaml:patterns.dns-p
            dns.domain-name: my.server.com
          bidirectional: true

Includes are resolved after the YAML tree is built, so they can point at
nodes defined later in the file, and resolution order does not matter.
"""

from __future__ import annotations

import copy
import re
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path

import yaml

from . import protocols as P
from .errors import ProfileSyntaxError, ResolutionError, ValidationError
from .model import (
    ArpMatch,
    CoapMatch,
    DeviceInfo,
    DhcpMatch,
    Diagnostic,
    DnsMatch,
    HttpMatch,
    IcmpMatch,
    IgmpMatch,
    Interaction,
    IpMatch,
    LinkMatch,
    MatchSpec,
    Policy,
    PolicyKind,
    PortRange,
    Profile,
    Rate,
    SsdpMatch,
    Stats,
    TransportMatch,
    validate_profile,
)

INCLUDE_TAG = "!include"
REF_KEY = "ref"


class IncludeRef:
    """An unresolved ``!include`` node."""

    def __init__(self, target, overrides=None, source=None, line=None):
        self.target = target
        self.overrides = dict(overrides or {})
        self.source = source
        self.line = line

    def split_target(self, current):
        """Return ``(document name, dotted path)``; unqualified targets stay in ``current``."""
        if ":" in self.target:
            doc, path = self.target.rsplit(":", 1)
            return doc.strip(), path.strip()
        return current, self.target.strip()

    def __repr__(self):
        return f"IncludeRef({self.target!r}, {self.overrides!r})"


# ---------------------------------------------------------------------------
# YAML loading


class _Loader(yaml.SafeLoader):
    """SafeLoader with YAML 1.2 style scalars and strict mappings."""


# Drop YAML 1.1 oddities: base-60 ints (MAC addresses!), yes/no booleans, timestamps.
_Loader.yaml_implicit_resolvers = {}
for _first, _resolvers in yaml.SafeLoader.yaml_implicit_resolvers.items():
    keep = [
        (tag, rx)
        for tag, rx in _resolvers
        if tag not in ("tag:yaml.org,2002:int", "tag:yaml.org,2002:float",
                       "tag:yaml.org,2002:bool", "tag:yaml.org,2002:timestamp")
    ]
    if keep:
        _Loader.yaml_implicit_resolvers[_first] = keep
_Loader.add_implicit_resolver("tag:yaml.org,2002:bool", re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"), list("tTfF"))
_Loader.add_implicit_resolver("tag:yaml.org,2002:int", re.compile(r"^(?:[-+]?[0-9]+|0x[0-9a-fA-F]+)$"), list("-+0123456789"))
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^(?:[-+]?(?:\.[0-9]+|[0-9]+(?:\.[0-9]*)?)(?:[eE][-+]?[0-9]+)?)$"),
    list("-+.0123456789"),
)


def _construct_mapping(loader, node, deep=False):
    if isinstance(node, yaml.MappingNode):
        loader.flatten_mapping(node)
    seen = {}
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in seen:
            mark = key_node.start_mark
            raise ProfileSyntaxError(
                f"duplicate key {key!r} (first defined on line {seen[key] + 1})",
                mark.line + 1, mark.column + 1, loader.name,
            )
        seen[key] = key_node.start_mark.line
    return yaml.SafeLoader.construct_mapping(loader, node, deep=deep)


def _construct_include(loader, node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.ScalarNode):
        return IncludeRef(loader.construct_scalar(node), source=loader.name, line=line)
    if isinstance(node, yaml.MappingNode):
        body = _construct_mapping(loader, node, deep=True)
        if REF_KEY not in body:
            raise ProfileSyntaxError(f"{INCLUDE_TAG} mapping needs a '{REF_KEY}' key", line,
                                     node.start_mark.column + 1, loader.name)
        target = body.pop(REF_KEY)
        return IncludeRef(str(target), _flatten_overrides(body), loader.name, line)
    raise ProfileSyntaxError(f"{INCLUDE_TAG} must be a scalar or a mapping", line,
                             node.start_mark.column + 1, loader.name)


def _flatten_overrides(body, prefix=""):
    flat = {}
    for key, value in body.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten_overrides(value, path + "."))
        else:
            flat[path] = value
    return flat


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(INCLUDE_TAG, _construct_include)


def load_yaml(source, name="<profile>"):
    """Parse YAML text into plain Python objects plus :class:`IncludeRef` nodes."""
    loader = _Loader(source)
    loader.name = name
    try:
        return loader.get_single_data()
    except ProfileSyntaxError:
        raise
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ProfileSyntaxError(exc.problem or str(exc), line, col, name) from None
    except yaml.YAMLError as exc:
        raise ProfileSyntaxError(str(exc), source=name) from None
    finally:
        loader.dispose()


# ---------------------------------------------------------------------------
# File access


class DirectoryLoader:
    """Fetch included documents from files below ``root``."""

    def __init__(self, root):
        self.root = Path(root)
        self.loaded = []

    def __call__(self, name):
        path = self.root / name
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ResolutionError(f"cannot read included file {name!r}: {exc.strerror}") from None
        self.loaded.append(name)
        return text


class DictLoader:
    """In-memory loader; records which names were requested."""

    def __init__(self, files):
        self.files = dict(files)
        self.loaded = []

    def __call__(self, name):
        if name not in self.files:
            raise ResolutionError(f"included file {name!r} not found")
        self.loaded.append(name)
        return self.files[name]


# ---------------------------------------------------------------------------
# Include resolution


def _walk(tree, dotted, doc):
    node = tree
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ResolutionError(f"dangling reference {dotted!r} in {doc}")
        node = node[part]
    return node


class DocumentSet:
    """Lazily loaded set of YAML documents addressed by name."""

    def __init__(self, root_name, root_tree, loader=None):
        self.docs = {root_name: root_tree}
        self.loader = loader

    def get(self, name):
        if name not in self.docs:
            if self.loader is None:
                raise ResolutionError(f"no loader available for included file {name!r}")
            self.docs[name] = load_yaml(self.loader(name), name)
        return self.docs[name]


def resolve_include(ref, context, current=None, _stack=()):
    """Return a fully inlined deep copy of the fragment ``ref`` points at."""
    current = current or next(iter(context.docs))
    doc_name, path = ref.split_target(current)
    key = (doc_name, path)
    if key in _stack:
        chain = " -> ".join(f"{d}:{p}" for d, p in _stack + (key,))
        raise ResolutionError(f"include cycle: {chain}")
    fragment = _walk(context.get(doc_name), path, doc_name)
    if isinstance(fragment, IncludeRef):
        fragment = resolve_include(fragment, context, doc_name, _stack + (key,))
    elif not isinstance(fragment, dict):
        raise ResolutionError(f"include target {ref.target!r} is not a mapping")
    resolved = _resolve_node(fragment, context, doc_name, _stack + (key,))
    for opath, value in ref.overrides.items():
        _apply_override(resolved, opath, value, ref)
    return resolved


def _apply_override(tree, dotted, value, ref):
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ResolutionError(f"override path {dotted!r} does not exist in {ref.target!r}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ResolutionError(f"override path {dotted!r} does not exist in {ref.target!r}")
    node[parts[-1]] = copy.deepcopy(value)


def _resolve_node(node, context, doc_name, stack=()):
    if isinstance(node, IncludeRef):
        return resolve_include(node, context, doc_name, stack)
    if isinstance(node, dict):
        return {k: _resolve_node(v, context, doc_name, stack) for k, v in node.items()}
    if isinstance(node, list):
        return [_resolve_node(v, context, doc_name, stack) for v in node]
    return node


def resolve_tree(tree, name="<profile>", loader=None):
    """Inline every include of a root document."""
    context = DocumentSet(name, tree, loader)
    return _resolve_node(tree, context, name)


# ---------------------------------------------------------------------------
# Tree -> Profile


class _Builder:
    def __init__(self):
        self.diags = []

    def err(self, path, msg):
        self.diags.append(Diagnostic(path, msg))

    def mapping(self, node, path, allowed=None):
        if not isinstance(node, dict):
            self.err(path, f"expected a mapping, got {type(node).__name__}")
            return {}
        if allowed is not None:
            for key in node:
                if key not in allowed:
                    self.err(f"{path}.{key}", "unknown key")
        return node

    def scalar(self, node, key, path, kind=str):
        value = node.get(key)
        if value is None:
            if key in node:
                self.err(f"{path}.{key}", "unfilled placeholder")
            return None
        if kind is str:
            if isinstance(value, bool) or isinstance(value, (dict, list)):
                self.err(f"{path}.{key}", f"expected a string, got {value!r}")
                return None
            return str(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.err(f"{path}.{key}", f"expected an integer, got {value!r}")
                return None
            return value
        if kind is bool:
            if not isinstance(value, bool):
                self.err(f"{path}.{key}", f"expected true/false, got {value!r}")
                return None
            return value
        raise TypeError(kind)

    # -- sections ---------------------------------------------------------

    def profile(self, tree):
        root = self.mapping(tree, "<root>", {"device-info", "patterns", "interactions"})
        if "device-info" not in root:
            self.err("device-info", "missing section")
        device = self.device(root.get("device-info", {}))
        interactions = []
        inter_tree = root.get("interactions") or {}
        for name, body in self.mapping(inter_tree, "interactions").items():
            interactions.append(self.interaction(str(name), body))
        patterns = root.get("patterns") or {}
        return Profile(device, tuple(interactions), patterns if isinstance(patterns, dict) else {})

    def device(self, node):
        path = "device-info"
        node = self.mapping(node, path, {"name", "mac", "ipv4", "ipv6"})
        mac = self.scalar(node, "mac", path)
        return DeviceInfo(
            name=self.scalar(node, "name", path) or "",
            mac=mac.lower() if mac else "",
            ipv4=self.scalar(node, "ipv4", path),
            ipv6=self.scalar(node, "ipv6", path),
        )

    def interaction(self, name, body):
        path = f"interactions.{name}"
        policies = []
        for pname, pbody in self.mapping(body, path).items():
            policies.append(self.policy(str(pname), pbody, f"{path}.{pname}"))
        return Interaction(name, tuple(policies))

    def policy(self, name, node, path):
        node = self.mapping(node, path, {"protocols", "bidirectional", "stats"})
        bidir = bool(self.scalar(node, "bidirectional", path, bool)) if "bidirectional" in node else False
        stats = self.stats(node["stats"], f"{path}.stats") if node.get("stats") is not None else None
        if stats is None or stats.is_empty():
            kind = PolicyKind.ONE_OFF
        elif stats.rate is not None:
            kind = PolicyKind.PERIODIC
        else:
            kind = PolicyKind.TRANSIENT
        if "protocols" not in node:
            self.err(path, "policy needs a 'protocols' section")
        match = self.match(node.get("protocols") or {}, f"{path}.protocols")
        return Policy(name, kind, match, bidir, stats)

    def stats(self, node, path):
        node = self.mapping(node, path, {"rate", "packet-count", "duration"})
        rate = None
        if node.get("rate") is not None:
            rate = parse_rate(node["rate"])
            if rate is None:
                self.err(f"{path}.rate", f"cannot parse rate {node['rate']!r} (expected 'N/second [burst M packets]')")
        count = self.scalar(node, "packet-count", path, int) if "packet-count" in node else None
        duration = None
        if node.get("duration") is not None:
            duration = parse_duration(node["duration"])
            if duration is None:
                self.err(f"{path}.duration", f"cannot parse duration {node['duration']!r}")
        return Stats(rate, count, duration)

    def match(self, node, path):
        node = self.mapping(node, path, set(_LAYER_KEYS))
        blocks = {}
        ip_version = None
        for key, body in node.items():
            if key not in _LAYER_KEYS:
                continue
            kpath = f"{path}.{key}"
            body = self.mapping(body if body is not None else {}, kpath, _LAYER_KEYS[key])
            if key == "ethernet":
                et = body.get("type")
                if isinstance(et, str):
                    et = P.ETH_TYPE_NAMES.get(et.lower(), et)
                if et is not None and not isinstance(et, int):
                    self.err(f"{kpath}.type", f"unknown ether type {et!r}")
                    et = None
                blocks["link"] = LinkMatch(self._mac(body, "src-mac", kpath), self._mac(body, "dst-mac", kpath), et)
            elif key == "arp":
                blocks["arp"] = ArpMatch(
                    self.scalar(body, "type", kpath),
                    self._mac(body, "sender-mac", kpath),
                    self.scalar(body, "sender-ip", kpath),
                    self._mac(body, "target-mac", kpath),
                    self.scalar(body, "target-ip", kpath),
                )
            elif key in ("ipv4", "ipv6"):
                ip_version = int(key[-1])
                self._set(blocks, "ip", IpMatch(ip_version, self.scalar(body, "src", kpath),
                                                self.scalar(body, "dst", kpath)), kpath)
            elif key in ("icmp", "icmpv6"):
                blocks["icmp"] = IcmpMatch(self.scalar(body, "type", kpath))
                implied = 6 if key == "icmpv6" else 4
                if ip_version not in (None, implied) or ("ip" in blocks and blocks["ip"].version != implied):
                    self.err(kpath, f"{key} contradicts the IP version")
                ip_version = implied
            elif key in ("tcp", "udp"):
                self._set(blocks, "transport", TransportMatch(key, self._port(body, "src-port", kpath),
                                                              self._port(body, "dst-port", kpath)), kpath)
            else:
                self._set(blocks, "app", self.app(key, body, kpath), kpath)
        if "icmp" in blocks and "ip" not in blocks:
            blocks["ip"] = IpMatch(ip_version)
        app = blocks.get("app")
        if app is not None and "transport" not in blocks:
            if isinstance(app, IgmpMatch):
                blocks.setdefault("ip", IpMatch(4))
            else:
                blocks["transport"] = TransportMatch(P.APP_TRANSPORT[app.protocol])
        return MatchSpec(**blocks)

    def _set(self, blocks, slot, value, path):
        if slot in blocks:
            self.err(path, f"only one {slot} block allowed per policy")
            return
        blocks[slot] = value

    def _mac(self, body, key, path):
        value = self.scalar(body, key, path)
        return value.lower() if value else value

    def _port(self, body, key, path):
        value = body.get(key)
        if value is None:
            return None
        if isinstance(value, int) and not isinstance(value, bool):
            return PortRange.single(value)
        m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", str(value))
        if m:
            return PortRange(int(m.group(1)), int(m.group(2)))
        self.err(f"{path}.{key}", f"bad port {value!r}")
        return None

    def app(self, key, body, path):
        s = lambda k: self.scalar(body, k, path)  # noqa: E731
        response = bool(self.scalar(body, "response", path, bool)) if "response" in body else False
        if key in ("dns", "mdns"):
            name = s("domain-name")
            qtype = s("qtype")
            return DnsMatch(key, s("qr"), qtype.upper() if qtype else None, name)
        if key == "dhcp":
            return DhcpMatch(s("type"))
        if key == "http":
            method = s("method")
            return HttpMatch(method.upper() if method else None, s("uri"), response)
        if key == "ssdp":
            method = s("method")
            return SsdpMatch(method.upper() if method else None, s("st"), response)
        if key == "coap":
            uri = s("uri")
            return CoapMatch(s("type"), s("method"), uri.strip("/") if uri else None, response)
        if key == "igmp":
            return IgmpMatch(s("type"), s("group"))
        raise AssertionError(key)


_LAYER_KEYS = {
    "ethernet": {"src-mac", "dst-mac", "type"},
    "arp": {"type", "sender-mac", "sender-ip", "target-mac", "target-ip"},
    "ipv4": {"src", "dst"},
    "ipv6": {"src", "dst"},
    "icmp": {"type"},
    "icmpv6": {"type"},
    "tcp": {"src-port", "dst-port"},
    "udp": {"src-port", "dst-port"},
    "dns": {"qr", "qtype", "domain-name"},
    "mdns": {"qr", "qtype", "domain-name"},
    "dhcp": {"type"},
    "http": {"method", "uri", "response"},
    "ssdp": {"method", "st", "response"},
    "coap": {"type", "method", "uri", "response"},
    "igmp": {"type", "group"},
}

_RATE_RE = re.compile(
    r"^\s*(?P<n>\d+(?:\.\d+)?)\s*(?:packets?\s*)?/\s*(?P<unit>second|sec|s|minute|min|m|hour|h)\s*"
    r"(?:,?\s*burst\s+(?P<burst>\d+)(?:\s*packets?)?)?\s*$",
    re.IGNORECASE,
)
_UNIT_SECONDS = {"second": 1, "sec": 1, "s": 1, "minute": 60, "min": 60, "m": 60, "hour": 3600, "h": 3600}


def parse_rate(value):
    """Parse ``"10/second burst 100 packets"`` (or a bare number of pps)."""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return Rate(Fraction(str(value))) if value > 0 else None
    m = _RATE_RE.match(str(value))
    if not m:
        return None
    pps = Fraction(m.group("n")) / _UNIT_SECONDS[m.group("unit").lower()]
    burst = int(m.group("burst")) if m.group("burst") else None
    return Rate(pps, burst)


def format_rate(rate):
    n = rate.packets_per_second
    text = str(n.numerator) if n.denominator == 1 else str(Decimal(n.numerator) / Decimal(n.denominator))
    text += "/second"
    if rate.burst is not None:
        text += f" burst {rate.burst} packets"
    return text


def parse_duration(value):
    """Seconds as a float, from a number or a string like ``2.5s`` / ``500ms``."""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(ms|s|sec|seconds?)?\s*", str(value))
    if not m:
        return None
    try:
        number = Decimal(m.group(1))
    except InvalidOperation:
        return None
    if m.group(2) == "ms":
        number /= 1000
    return float(number)


# ---------------------------------------------------------------------------
# Public entry points


def build_profile(tree):
    """Convert an include-free tree into ``(Profile, diagnostics)``."""
    builder = _Builder()
    profile = builder.profile(tree if tree is not None else {})
    return profile, builder.diags


def parse_profile(source, loader=None, name="<profile>"):
    """Parse profile text into a validated :class:`Profile`.

    ``loader`` maps an include file name to its text; it is only called for
    files reachable from ``source`` through ``!include`` targets.
    """
    tree = load_yaml(source, name)
    resolved = resolve_tree(tree, name, loader)
    profile, diags = build_profile(resolved)
    diags += [d for d in validate_profile(profile) if d not in diags]
    if diags:
        raise ValidationError(diags)
    return profile


def load_profile(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ResolutionError(f"cannot read profile {str(path)!r}: {exc.strerror}") from None
    return parse_profile(text, DirectoryLoader(path.parent), path.name)


# ---------------------------------------------------------------------------
# Canonical serialization


def profile_to_tree(profile):
    dev = profile.device_info
    info = {"name": dev.name, "mac": dev.mac}
    if dev.ipv4:
        info["ipv4"] = dev.ipv4
    if dev.ipv6:
        info["ipv6"] = dev.ipv6
    interactions = {}
    for inter in profile.interactions:
        body = {}
        for pol in inter.policies:
            pbody = {"protocols": match_to_tree(pol.match)}
            if pol.bidirectional:
                pbody["bidirectional"] = True
            if pol.stats is not None and not pol.stats.is_empty():
                st = {}
                if pol.stats.rate is not None:
                    st["rate"] = format_rate(pol.stats.rate)
                if pol.stats.max_packets is not None:
                    st["packet-count"] = pol.stats.max_packets
                if pol.stats.max_duration is not None:
                    st["duration"] = pol.stats.max_duration
                pbody["stats"] = st
            body[pol.name] = pbody
        interactions[inter.name] = body
    return {"device-info": info, "interactions": interactions}


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None and v is not False}


def match_to_tree(ms):
    out = {}
    if ms.link is not None:
        out["ethernet"] = _drop_none({"src-mac": ms.link.src_mac, "dst-mac": ms.link.dst_mac, "type": ms.link.eth_type})
    if ms.arp is not None:
        a = ms.arp
        out["arp"] = _drop_none({"type": a.operation, "sender-mac": a.sender_hw, "sender-ip": a.sender_ip,
                                 "target-mac": a.target_hw, "target-ip": a.target_ip})
    icmp_key = "icmp"
    if ms.ip is not None:
        ip = ms.ip
        if ms.icmp is not None:
            icmp_key = "icmpv6" if ip.version == 6 else "icmp"
        if ip.version is not None and (ip.src is not None or ip.dst is not None or ms.icmp is None):
            out[f"ipv{ip.version}"] = _drop_none({"src": ip.src, "dst": ip.dst})
    if ms.icmp is not None:
        out[icmp_key] = _drop_none({"type": ms.icmp.type_name})
    if ms.transport is not None:
        t = ms.transport
        out[t.protocol] = _drop_none({
            "src-port": _port_out(t.src_port),
            "dst-port": _port_out(t.dst_port),
        })
    app = ms.app
    if isinstance(app, DnsMatch):
        out[app.protocol] = _drop_none({"qr": app.qr, "qtype": app.qtype, "domain-name": app.domain_name})
    elif isinstance(app, DhcpMatch):
        out["dhcp"] = _drop_none({"type": app.message_type})
    elif isinstance(app, HttpMatch):
        out["http"] = _drop_none({"method": app.method, "uri": app.uri_prefix, "response": app.response})
    elif isinstance(app, SsdpMatch):
        out["ssdp"] = _drop_none({"method": app.method, "st": app.st, "response": app.response})
    elif isinstance(app, CoapMatch):
        out["coap"] = _drop_none({"type": app.type, "method": app.method, "uri": app.uri_path, "response": app.response})
    elif isinstance(app, IgmpMatch):
        out["igmp"] = _drop_none({"type": app.type_name, "group": app.group})
    return out


def _port_out(pr):
    if pr is None:
        return None
    return pr.lo if pr.lo == pr.hi else str(pr)


class _Dumper(yaml.SafeDumper):
    pass


def _str_representer(dumper, value):
    # quote anything a YAML 1.1 reader might reinterpret (MACs, ports, "yes")
    style = "'" if re.fullmatch(r"[0-9a-fA-F:.]+|yes|no|on|off|y|n|~|null", value) else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", value, style=style)


_Dumper.add_representer(str, _str_representer)


def dump_profile(profile):
    """Serialize to canonical YAML (includes inlined, key order preserved)."""
    return yaml.dump(profile_to_tree(profile), Dumper=_Dumper, sort_keys=False, default_flow_style=False)
