"""The firewall core: per-device interaction machines, the DNS table and verdicts."""

from __future__ import annotations

import dataclasses
import enum
import ipaddress
import json
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import ClockRegression, DuplicateDevice, FormatError, ValidationError
from .fsm import FsmRuntime, commit, compile_interaction, evaluate
from .matcher import Direction, Effort, MatchEnv, Outcome, canonical_ip, match_outcome, normalize_name
from .model import validate_profile
from .packets.jsonl import ns_to_seconds
from .packets.layers import Dns

LOG_SCHEMA_VERSION = 1

ACCEPT = "ACCEPT"
DROP = "DROP"
REASONS = ("MATCHED", "DEFAULT_ACCEPT", "NO_POLICY_MATCH", "RATE_EXCEEDED", "WRONG_STATE", "UNRESOLVED_NAME",
           "CLOCK_REGRESSION")


class ClockMode(enum.Enum):
    REPLAY = "replay"
    LIVE = "live"


# ---------------------------------------------------------------------------
# DNS table


@dataclass
class DnsEntry:
    addresses: frozenset
    inserted_at: int


class DnsTable:
    """Domain name -> addresses learned from accepted DNS/mDNS responses."""

    def __init__(self, max_age=None):
        self.entries = {}
        self.max_age = max_age  # nanoseconds; None = never expire
        self.now = 0

    def insert(self, name, addresses, ts):
        name = normalize_name(name)
        entry = self.entries.get(name)
        merged = frozenset(addresses) | (entry.addresses if entry else frozenset())
        self.entries[name] = DnsEntry(merged, entry.inserted_at if entry else ts)

    def _live(self, entry):
        return self.max_age is None or self.now - entry.inserted_at <= self.max_age

    def lookup(self, name):
        name = normalize_name(name)
        if name.startswith("*."):
            suffix = name[1:]
            out = set()
            for key, entry in self.entries.items():
                if key.endswith(suffix) and self._live(entry):
                    out |= entry.addresses
            return frozenset(out)
        entry = self.entries.get(name)
        if entry is None or not self._live(entry):
            return frozenset()
        return entry.addresses

    def observe(self, msg, ts):
        """Learn A/AAAA answers of a response, following CNAME chains inside the message."""
        if not isinstance(msg, Dns) or not msg.is_response:
            return
        direct = {}
        alias = {}
        for rec in msg.answers + msg.additional:
            owner = normalize_name(rec.name)
            if rec.rtype in ("A", "AAAA"):
                try:
                    addr = str(ipaddress.ip_address(rec.value))
                except ValueError:
                    continue
                direct.setdefault(owner, set()).add(addr)
            elif rec.rtype == "CNAME":
                alias.setdefault(owner, set()).add(normalize_name(rec.value))

        def resolve(name, seen):
            out = set(direct.get(name, ()))
            for target in alias.get(name, ()):
                if target not in seen:
                    out |= resolve(target, seen | {target})
            return out

        for name in sorted(set(direct) | set(alias)):
            addrs = resolve(name, frozenset({name}))
            if addrs:
                self.insert(name, addrs, ts)

    def snapshot(self):
        return tuple(sorted((k, tuple(sorted(v.addresses)), v.inserted_at) for k, v in self.entries.items()))


# ---------------------------------------------------------------------------
# Configuration and verdicts


DEFAULT_LAN = ("192.168.0.0/16", "10.0.0.0/8", "172.16.0.0/12", "fe80::/10", "fc00::/7")


@dataclass(frozen=True)
class EngineConfig:
    lan_prefixes: tuple = DEFAULT_LAN
    gateway_addrs: tuple = ()
    default_unprofiled: str = ACCEPT
    clock_mode: ClockMode = ClockMode.REPLAY
    dns_max_age: Optional[float] = None  # seconds, LIVE mode only

    def __post_init__(self):
        nets = []
        for p in self.lan_prefixes:
            try:
                nets.append(str(ipaddress.ip_network(p, strict=False)))
            except ValueError:
                raise FormatError(f"bad LAN prefix {p!r}") from None
        object.__setattr__(self, "lan_prefixes", tuple(nets))
        gws = []
        for g in self.gateway_addrs:
            try:
                gws.append(str(ipaddress.ip_address(g)))
            except ValueError:
                raise FormatError(f"bad gateway address {g!r}") from None
        object.__setattr__(self, "gateway_addrs", tuple(gws))
        if self.default_unprofiled not in (ACCEPT, DROP):
            raise FormatError(f"default-unprofiled must be ACCEPT or DROP, not {self.default_unprofiled!r}")
        if not isinstance(self.clock_mode, ClockMode):
            try:
                object.__setattr__(self, "clock_mode", ClockMode(str(self.clock_mode).lower()))
            except ValueError:
                raise FormatError(f"clock-mode must be replay or live, not {self.clock_mode!r}") from None

    @classmethod
    def from_dict(cls, d):
        known = {"lan-prefixes", "gateway-addrs", "default-unprofiled", "clock-mode", "dns-max-age"}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = {}
        if "lan-prefixes" in d:
            kwargs["lan_prefixes"] = tuple(d["lan-prefixes"])
        if "gateway-addrs" in d:
            kwargs["gateway_addrs"] = tuple(d["gateway-addrs"])
        if "default-unprofiled" in d:
            kwargs["default_unprofiled"] = str(d["default-unprofiled"]).upper()
        if "clock-mode" in d:
            kwargs["clock_mode"] = d["clock-mode"]
        if d.get("dns-max-age") is not None:
            kwargs["dns_max_age"] = float(d["dns-max-age"])
        return cls(**kwargs)

    def to_dict(self):
        return {"lan-prefixes": list(self.lan_prefixes), "gateway-addrs": list(self.gateway_addrs),
                "default-unprofiled": self.default_unprofiled, "clock-mode": self.clock_mode.value,
                "dns-max-age": self.dns_max_age}


@dataclass(frozen=True)
class Verdict:
    decision: str
    device: str
    reason: str
    interaction: Optional[str] = None
    policy: Optional[str] = None
    state_before: Optional[int] = None
    state_after: Optional[int] = None

    @property
    def accepted(self):
        return self.decision == ACCEPT

    def to_dict(self, idx, ts):
        return {"v": LOG_SCHEMA_VERSION, "idx": idx, "ts": ns_to_seconds(ts), "decision": self.decision, "device": self.device,
                "interaction": self.interaction, "policy": self.policy, "state_before": self.state_before,
                "state_after": self.state_after, "reason": self.reason}


def verdict_log(verdicts, packets):
    """Verdicts as JSON lines (no timing fields, so logs are reproducible)."""
    return "".join(json.dumps(v.to_dict(i, p.ts), sort_keys=True) + "\n"
                   for i, (v, p) in enumerate(zip(verdicts, packets)))


# ---------------------------------------------------------------------------
# Engine


@dataclass
class DeviceRuntime:
    profile: object
    runtimes: list
    env: MatchEnv = None

    @property
    def name(self):
        return self.profile.device_info.name


def _percentile_summary(samples_ns):
    if not samples_ns:
        return {"mean": 0.0, "p2_5": 0.0, "p97_5": 0.0}
    us = [s / 1000 for s in samples_ns]
    if len(us) == 1:
        return {"mean": us[0], "p2_5": us[0], "p97_5": us[0]}
    cuts = statistics.quantiles(us, n=40, method="inclusive")
    return {"mean": statistics.fmean(us), "p2_5": cuts[0], "p97_5": cuts[-1]}


@dataclass
class ReplayReport:
    verdicts: list = field(default_factory=list)
    latencies_ns: list = field(default_factory=list)
    categories: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def accepted(self):
        return sum(v.accepted for v in self.verdicts)

    @property
    def dropped(self):
        return len(self.verdicts) - self.accepted

    def per_reason(self):
        out = {}
        for v in self.verdicts:
            out[v.reason] = out.get(v.reason, 0) + 1
        return dict(sorted(out.items()))

    def per_device(self):
        out = {}
        for v in self.verdicts:
            c = out.setdefault(v.device, {"accepted": 0, "dropped": 0})
            c["accepted" if v.accepted else "dropped"] += 1
        return dict(sorted(out.items()))

    def category_counts(self):
        counts = {k: 0 for k in "ABCD"}
        for c in self.categories:
            counts[c] += 1
        return counts

    def summary(self):
        return {
            "v": LOG_SCHEMA_VERSION,
            "packets": len(self.verdicts),
            "accepted": self.accepted,
            "dropped": self.dropped,
            "per_reason": self.per_reason(),
            "per_device": self.per_device(),
            "latency_us": _percentile_summary(self.latencies_ns),
            "categories": self.category_counts(),
            "diagnostics": list(self.diagnostics),
        }


class Engine:
    def __init__(self, config=None):
        self.config = config or EngineConfig()
        max_age = None
        if self.config.clock_mode is ClockMode.LIVE and self.config.dns_max_age is not None:
            max_age = int(self.config.dns_max_age * 1e9)
        self.dns = DnsTable(max_age)
        self.devices = []
        self._by_addr = {}  # MAC or canonical IP -> DeviceRuntime
        self.last_ts = None

    # -- registration -----------------------------------------------------

    def register_profile(self, profile):
        diags = validate_profile(profile)
        if diags:
            raise ValidationError(diags)
        dev = profile.device_info
        keys = [dev.mac.lower()] + [canonical_ip(a) for a in dev.addresses]
        for k in keys:
            if k in self._by_addr:
                raise DuplicateDevice(f"{dev.name}: address {k} already belongs to {self._by_addr[k].name}")
        if any(d.name == dev.name for d in self.devices):
            raise DuplicateDevice(f"device name {dev.name!r} already registered")
        runtimes = [FsmRuntime(compile_interaction(i)) for i in profile.interactions]
        drt = DeviceRuntime(profile, runtimes)
        self.devices.append(drt)
        for k in keys:
            self._by_addr[k] = drt
        self._rebuild_envs()
        return drt

    def _rebuild_envs(self):
        profiled = frozenset(canonical_ip(d) for drt in self.devices for d in drt.profile.device_info.addresses)
        for drt in self.devices:
            drt.env = MatchEnv(drt.profile.device_info, self.config.lan_prefixes, self.config.gateway_addrs,
                               profiled, self.dns)

    # -- per packet -------------------------------------------------------

    def involved(self, pkt):
        keys = [pkt.eth.src, pkt.eth.dst]
        if pkt.ip is not None:
            keys += [pkt.ip.src, pkt.ip.dst]
        if pkt.arp is not None:
            keys += [pkt.arp.sender_hw, pkt.arp.target_hw, pkt.arp.sender_ip, pkt.arp.target_ip]
        hit = {id(d) for d in (self._by_addr.get(k) for k in keys) if d is not None}
        return [d for d in self.devices if id(d) in hit]

    def _clock(self, pkt):
        if self.last_ts is not None and pkt.ts < self.last_ts:
            if self.config.clock_mode is ClockMode.REPLAY:
                raise ClockRegression(f"packet at {pkt.ts} ns precedes previous packet at {self.last_ts} ns")
            pkt = dataclasses.replace(pkt, ts=self.last_ts)
        self.last_ts = pkt.ts
        self.dns.now = pkt.ts
        return pkt

    def _wrong_state(self, drt, pkt):
        """Classify a packet no current state accepts: a policy elsewhere in the
        profile would take it (WRONG_STATE) or would once its name resolves."""
        unresolved = None
        hit = None
        for rt in drt.runtimes:
            for p in rt.fsm.policies:
                d = Direction.BOTH if p.bidirectional else Direction.FORWARD
                outcome = match_outcome(p, pkt, d, drt.env)
                if outcome is Outcome.UNRESOLVED and unresolved is None:
                    unresolved = ("UNRESOLVED_NAME", rt.name, p.name)
                elif outcome is Outcome.MATCH and hit is None:
                    hit = ("WRONG_STATE", rt.name, p.name)
        return unresolved or hit

    def process_packet(self, pkt, effort=None):
        pkt = self._clock(pkt)
        devices = self.involved(pkt)
        if not devices:
            decision = self.config.default_unprofiled
            verdict = Verdict(decision, "unprofiled", "DEFAULT_ACCEPT" if decision == ACCEPT else "NO_POLICY_MATCH")
        else:
            verdict = self._decide(devices, pkt, effort)
        if verdict.accepted and isinstance(pkt.app, Dns) and pkt.app.is_response:
            self.dns_observe(pkt)
        return verdict

    def _decide(self, devices, pkt, effort):
        staged = []
        first = None
        for drt in devices:
            accepted = []
            reason = reason_at = None
            for rt in drt.runtimes:
                r = evaluate(rt, pkt, drt.env, effort)
                if r.accepted:
                    accepted.append((rt, r))
                elif (r.reason == "RATE_EXCEEDED" and reason != r.reason) or (r.reason and reason is None):
                    reason, reason_at = r.reason, (rt, r)
            if not accepted:
                interaction = policy = None
                if reason is not None:
                    rt, r = reason_at
                    interaction, policy = rt.name, rt.fsm.policies[r.policy].name
                    state = rt.current
                else:
                    hit = self._wrong_state(drt, pkt)
                    reason = "NO_POLICY_MATCH"
                    state = None
                    if hit:
                        reason, interaction, policy = hit
                        state = next(rt.current for rt in drt.runtimes if rt.name == interaction)
                return Verdict(DROP, drt.name, reason, interaction, policy, state, state)
            staged.extend(accepted)
            if first is None:
                first = (drt, accepted[0])
        for rt, r in staged:
            commit(rt, r)
        drt, (rt, r) = first
        return Verdict(ACCEPT, drt.name, "MATCHED", rt.name, rt.fsm.policies[r.policy].name,
                       r.state_before, r.state_after)

    def dns_observe(self, pkt):
        self.dns.observe(pkt.app, pkt.ts)

    # -- whole traces -----------------------------------------------------

    def run_replay(self, trace, timing=True):
        report = ReplayReport()
        clock = time.perf_counter_ns
        for idx, pkt in enumerate(trace):
            effort = Effort()
            start = clock() if timing else 0
            try:
                verdict = self.process_packet(pkt, effort)
            except ClockRegression as exc:
                verdict = Verdict(DROP, "unprofiled", "CLOCK_REGRESSION")
                report.diagnostics.append({"idx": idx, "error": str(exc)})
            if timing:
                report.latencies_ns.append(clock() - start)
            report.verdicts.append(verdict)
            report.categories.append(effort.category)
        return report

    def state_digest(self):
        """Everything a dropped packet must not change, in comparable form."""
        devices = tuple((d.name, tuple(rt.digest() for rt in d.runtimes)) for d in self.devices)
        return devices, self.dns.snapshot()
