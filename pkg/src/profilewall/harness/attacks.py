"""Attack traces with their expected verdicts.

A1  HTTPS flood from the phone against the bridge's rate-limited policy.
A2  TCP 9999 flood against the plug's 20 packets/s policy.
A3  TCP 9999 control packets without the ARP exchange that must precede them.
A4  HTTPS from the cloud address before the plug has resolved the cloud name.

Expectations come from construction, not from the engine: the flood
scenarios run a standalone token-bucket simulation, the gating scenarios
drop everything unless the prelude is included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

from ..errors import BadParams
from ..packets import Trace
from ..packets import build as B
from .labeled import LabeledTrace
from .scenarios import CLOUD, CLOUD_NAME, HUE, PHONE, PLUG, SECOND, T0, dns_exchange

SCENARIOS = ("A1", "A2", "A3", "A4")


@dataclass(frozen=True)
class AttackParams:
    pps: float = 1000.0  # flood packet rate (A1, A2)
    duration: float = 1.0  # seconds of flooding (A1, A2)
    rate: float = 10.0  # policy refill rate, packets/s (A1, A2)
    burst: int = 100  # policy bucket capacity (A1, A2)
    count: int = 5  # gated packets (A3, A4)
    spacing: float = 0.1  # seconds between gated packets (A3, A4)
    prelude: bool = False  # A3: prepend the ARP pair; A4: prepend the DNS exchange
    start: int = T0

    def check(self, scenario):
        if scenario not in SCENARIOS:
            raise BadParams(f"unknown attack scenario {scenario!r} (expected one of {', '.join(SCENARIOS)})")
        if scenario in ("A1", "A2"):
            if not self.pps > 0 or not math.isfinite(self.pps):
                raise BadParams(f"pps must be a positive number, got {self.pps}")
            if not self.duration > 0 or not math.isfinite(self.duration):
                raise BadParams(f"duration must be positive, got {self.duration}")
            if not self.rate > 0:
                raise BadParams(f"rate must be positive, got {self.rate}")
            if self.burst < 1:
                raise BadParams(f"burst must be at least 1, got {self.burst}")
            if round(self.pps * self.duration) < 1:
                raise BadParams("pps * duration must give at least one packet")
        else:
            if self.count < 1:
                raise BadParams(f"count must be at least 1, got {self.count}")
            if self.spacing < 0:
                raise BadParams(f"spacing must be non-negative, got {self.spacing}")


A1_DEFAULTS = AttackParams()
A2_DEFAULTS = AttackParams(rate=20.0, burst=20)


def flood_times(start, pps, duration):
    """``round(pps*duration)`` timestamps spread evenly over the closed window [start, start+duration]."""
    n = round(pps * duration)
    span = Fraction(duration) * SECOND
    if n == 1:
        return [start]
    return [start + round(span * k / (n - 1)) for k in range(n)]


def token_bucket_oracle(times, rate, capacity):
    """Admit decisions for arrivals at ``times`` (ns) against a bucket full at the first arrival."""
    tokens = Fraction(capacity)
    last = None
    out = []
    for t in times:
        if last is not None:
            tokens = min(Fraction(capacity), tokens + Fraction(rate) * (t - last) / SECOND)
        last = t
        if tokens >= 1:
            tokens -= 1
            out.append(True)
        else:
            out.append(False)
    return out


def _flood(params, victim, port, sport=50123):
    times = flood_times(params.start, params.pps, params.duration)
    pkts = [B.tcp(t, PHONE, victim, sport, port, seq=k) for k, t in enumerate(times)]
    admitted = token_bucket_oracle(times, Fraction(params.rate).limit_denominator(10**6), params.burst)
    expected = ["ACCEPT" if ok else "DROP" for ok in admitted]
    return pkts, expected


def gen_attack(scenario, params=None):
    """Build the trace for ``scenario`` and the verdict expected for every packet."""
    if params is None:
        params = A2_DEFAULTS if scenario == "A2" else A1_DEFAULTS
    params.check(scenario)
    if scenario == "A1":
        pkts, expected = _flood(params, HUE, 443)
        profiles = ("hue-bridge.yaml",)
        note = f"{len(pkts)} HTTPS packets from the phone in {params.duration} s"
    elif scenario == "A2":
        pkts, expected = _flood(params, PLUG, 9999)
        profiles = ("variants/tplink-hs110-rate.yaml",)
        note = f"{len(pkts)} TCP 9999 packets from the phone in {params.duration} s"
    elif scenario == "A3":
        pkts, expected = [], []
        ts = params.start
        if params.prelude:
            pkts += [B.arp(ts, PHONE, PLUG, "request"), B.arp(ts + 1_000_000, PLUG, PHONE, "reply")]
            expected += ["ACCEPT", "ACCEPT"]
            ts += 10_000_000
        step = round(Fraction(params.spacing) * SECOND)
        for k in range(params.count):
            pkts.append(B.tcp(ts + k * step, PHONE, PLUG, 50200, 9999, seq=k))
            expected.append("ACCEPT" if params.prelude else "DROP")
        profiles = ("tplink-hs110.yaml",)
        note = "TCP 9999 control " + ("after" if params.prelude else "without") + " the ARP exchange"
    else:
        pkts, expected = [], []
        ts = params.start
        if params.prelude:
            pkts += dns_exchange(ts, PLUG, CLOUD_NAME, CLOUD.ip, ident=7)
            expected += ["ACCEPT", "ACCEPT"]
            ts += 20_000_000
        step = round(Fraction(params.spacing) * SECOND)
        for k in range(params.count):
            pkts.append(B.tcp(ts + k * step, CLOUD, PLUG, 443, 50300, seq=k))
            expected.append("ACCEPT" if params.prelude else "DROP")
        profiles = ("tplink-hs110.yaml",)
        note = "HTTPS from the cloud address " + ("after" if params.prelude else "without") + " a DNS resolution"
    return LabeledTrace(Trace(tuple(pkts)), expected, profiles=profiles, scenario=scenario, note=note)


def with_params(scenario, **overrides):
    base = A2_DEFAULTS if scenario == "A2" else A1_DEFAULTS
    return gen_attack(scenario, replace(base, **overrides))
