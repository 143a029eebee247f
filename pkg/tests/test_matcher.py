import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profilewall.errors import ClockRegression
from profilewall.harness.attacks import token_bucket_oracle
from profilewall.harness.scenarios import CLOUD, GATEWAY, HOME_CONFIG, PHONE, PLUG, SECOND
from profilewall.matcher import (
    Admit,
    Direction,
    Effort,
    MatchEnv,
    Outcome,
    RateBucket,
    TransientCounters,
    Within,
    invert_direction,
    match_outcome,
    match_policy,
    name_matches,
    rate_admit,
    transient_within,
)
from profilewall.model import ArpMatch, DnsMatch, IpMatch, MatchSpec, PortRange, TransportMatch
from profilewall.packets import build as B
from profilewall.parser import parse_profile

DEVICE = """device-info:
  name: plug
  mac: "50:c7:bf:12:34:56"
  ipv4: 192.168.1.150
interactions:
  i:
"""


def policies(body):
    """Parse the indented policy block ``body`` into the plug's only interaction."""
    src = DEVICE + "".join("    " + line + "\n" for line in body.strip("\n").splitlines())
    return parse_profile(src).interactions[0].policies


def policy(body):
    return policies(body)[0]


class Dns:
    def __init__(self, table=None):
        self.table = {k: frozenset(v) for k, v in (table or {}).items()}

    def lookup(self, name):
        return self.table.get(name, frozenset())


def env(dns=None, profiled=(PLUG.ip,)):
    plug = parse_profile(DEVICE + "    p: {protocols: {arp: {}}}\n").device_info
    return MatchEnv(plug, HOME_CONFIG.lan_prefixes, HOME_CONFIG.gateway_addrs, frozenset(profiled), dns or Dns())


TCP_9999 = """
ctl:
  protocols:
    ipv4: {src: phone, dst: self}
    tcp: {dst-port: 9999}
"""


def test_tcp_9999_from_phone_forward():
    pkt = B.tcp(0, PHONE, PLUG, 50200, 9999)
    assert match_policy(policy(TCP_9999), pkt, Direction.FORWARD, env())


def test_tcp_9999_answer_matches_backward():
    pkt = B.tcp(0, PLUG, PHONE, 9999, 50200)
    p = policy(TCP_9999)
    assert match_policy(p, pkt, Direction.BACKWARD, env())
    assert not match_policy(p, pkt, Direction.FORWARD, env())


def test_phone_excludes_gateway_and_profiled_devices():
    p = policy(TCP_9999)
    assert not match_policy(p, B.tcp(0, GATEWAY, PLUG, 1, 9999), Direction.FORWARD, env())
    other = B.Host("02:00:00:00:00:77", "192.168.1.160")
    assert match_policy(p, B.tcp(0, other, PLUG, 1, 9999), Direction.FORWARD, env())
    assert not match_policy(p, B.tcp(0, other, PLUG, 1, 9999), Direction.FORWARD, env(profiled=(PLUG.ip, other.ip)))


CLOUD_HTTPS = """
https:
  protocols:
    ipv4: {src: self, dst: cloud.example.com}
    tcp: {dst-port: 443}
"""


def test_unresolved_domain_is_not_a_match():
    pkt = B.tcp(0, PLUG, CLOUD, 50300, 443)
    p = policy(CLOUD_HTTPS)
    assert not match_policy(p, pkt, Direction.FORWARD, env())
    assert match_outcome(p, pkt, Direction.FORWARD, env()) is Outcome.UNRESOLVED


def test_resolved_domain_matches_and_records_lookup():
    pkt = B.tcp(0, PLUG, CLOUD, 50300, 443)
    effort = Effort()
    e = env(Dns({"cloud.example.com": {CLOUD.ip}}))
    assert match_outcome(policy(CLOUD_HTTPS), pkt, Direction.FORWARD, e, effort) is Outcome.MATCH
    assert effort.category == "C"


def test_resolved_to_other_address_is_plain_no_match():
    pkt = B.tcp(0, PLUG, CLOUD, 50300, 443)
    e = env(Dns({"cloud.example.com": {"198.51.100.1"}}))
    assert match_outcome(policy(CLOUD_HTTPS), pkt, Direction.FORWARD, e) is Outcome.NO_MATCH


def test_effort_categories():
    dns = policy("""
q:
  protocols:
    ipv4: {src: self, dst: gateway}
    dns: {qr: query, domain-name: x.example}
""")
    e = Effort()
    match_outcome(dns, B.dns_query(0, PLUG, GATEWAY, "x.example"), Direction.FORWARD, env(), e)
    assert e.category == "B"
    e = Effort()
    match_outcome(policy(TCP_9999), B.tcp(0, PHONE, PLUG, 1, 9999), Direction.FORWARD, env(), e)
    assert e.category == "A"


def test_name_matching():
    assert name_matches("*.tplinkcloud.com", "devs.tplinkcloud.com")
    assert not name_matches("*.tplinkcloud.com", "tplinkcloud.com")
    assert name_matches("My.Server.com.", "my.server.com")


def test_invert_arp_request():
    ms = MatchSpec(arp=ArpMatch("request", sender_ip="192.168.1.222", target_ip="192.168.1.150"))
    inv = invert_direction(ms)
    assert inv.arp == ArpMatch("reply", sender_ip="192.168.1.150", target_ip="192.168.1.222")


def test_invert_dns_query():
    ms = MatchSpec(app=DnsMatch("dns", "query", "A", "my.server.com"))
    assert invert_direction(ms).app == DnsMatch("dns", "response", "A", "my.server.com")


def test_invert_swaps_addresses_and_ports():
    ms = MatchSpec(ip=IpMatch(4, "self", "gateway"), transport=TransportMatch("udp", None, PortRange.single(53)))
    inv = invert_direction(ms)
    assert inv.ip == IpMatch(4, "gateway", "self")
    assert inv.transport == TransportMatch("udp", PortRange.single(53), None)


endpoints = st.sampled_from([None, "self", "phone", "gateway", "local", "a.example", "10.0.0.0/8", "192.168.1.9"])
port_ranges = st.one_of(st.none(), st.integers(1, 65535).map(PortRange.single))


@st.composite
def specs(draw):
    kind = draw(st.sampled_from(["arp", "tcp", "dns"]))
    if kind == "arp":
        return MatchSpec(arp=ArpMatch(draw(st.sampled_from([None, "request", "reply"])),
                                      sender_ip=draw(endpoints), target_ip=draw(endpoints)))
    ip = IpMatch(4, draw(endpoints), draw(endpoints))
    if kind == "tcp":
        return MatchSpec(ip=ip, transport=TransportMatch("tcp", draw(port_ranges), draw(port_ranges)))
    return MatchSpec(ip=ip, transport=TransportMatch("udp", None, PortRange.single(53)),
                     app=DnsMatch("dns", draw(st.sampled_from([None, "query", "response"])), "A", draw(endpoints)))


@given(specs())
def test_invert_is_an_involution(ms):
    assert invert_direction(invert_direction(ms)) == ms


HOSTS = [PHONE, PLUG, GATEWAY, CLOUD]


@settings(max_examples=200)
@given(st.sampled_from(HOSTS), st.sampled_from(HOSTS), st.integers(1, 65535), st.integers(1, 65535),
       st.integers(1, 65535), st.sampled_from(["self", "phone", "gateway", "local", "cloud.example.com"]))
def test_forward_on_packet_equals_backward_on_swapped_packet(a, b, sport, dport, pol_port, src):
    p = policy(f"""
x:
  protocols:
    ipv4: {{src: {src}, dst: self}}
    tcp: {{dst-port: {pol_port}}}
""")
    e = env(Dns({"cloud.example.com": {CLOUD.ip}}))
    pkt = B.tcp(0, a, b, sport, dport)
    swapped = B.tcp(0, b, a, dport, sport)
    assert match_policy(p, pkt, Direction.FORWARD, e) == match_policy(p, swapped, Direction.BACKWARD, e)


@given(st.sets(st.sampled_from(["203.0.113.10", "203.0.113.11", "198.51.100.1"])),
       st.sets(st.sampled_from(["203.0.113.10", "203.0.113.11", "198.51.100.1"])))
def test_dns_knowledge_is_monotone(before, extra):
    p = policy(CLOUD_HTTPS)
    pkt = B.tcp(0, PLUG, CLOUD, 50300, 443)
    small = match_policy(p, pkt, Direction.FORWARD, env(Dns({"cloud.example.com": before})))
    large = match_policy(p, pkt, Direction.FORWARD, env(Dns({"cloud.example.com": before | extra})))
    assert not small or large


# -- rate limiting -------------------------------------------------------------


def test_flood_admits_burst_plus_refill():
    bucket = RateBucket(100, Fraction(10))
    times = [round(SECOND * k / 999) for k in range(1000)]
    admitted = [rate_admit(bucket, t) for t in times]
    assert admitted.count(Admit.ADMIT) == 110
    first_exceed = admitted.index(Admit.EXCEED)
    # the bucket regains one token while the first hundred packets go through
    assert first_exceed == 101
    assert admitted[-1] is Admit.ADMIT  # the closed window ends exactly on a refill


def test_steady_rate_at_the_limit_is_admitted():
    bucket = RateBucket(20, Fraction(20))
    assert all(rate_admit(bucket, k * 50_000_000) is Admit.ADMIT for k in range(400))


def test_single_packet_after_idle():
    bucket = RateBucket(5, Fraction(1))
    for _ in range(5):
        rate_admit(bucket, 0)
    assert rate_admit(bucket, 0) is Admit.EXCEED
    assert rate_admit(bucket, 3600 * SECOND) is Admit.ADMIT
    assert bucket.tokens == 4


def test_clock_regression():
    bucket = RateBucket(5, Fraction(1))
    rate_admit(bucket, 10)
    with pytest.raises(ClockRegression):
        rate_admit(bucket, 9)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 2 * SECOND), min_size=1, max_size=80).map(sorted),
       st.integers(1, 50), st.integers(1, 20))
def test_token_bucket_bound(times, rate, cap):
    bucket = RateBucket(cap, Fraction(rate))
    got = [rate_admit(bucket, t) is Admit.ADMIT for t in times]
    for i in range(len(times)):
        for j in range(i, len(times)):
            window = Fraction(times[j] - times[i], SECOND)
            assert sum(got[i:j + 1]) <= cap + math.ceil(rate * window)
    assert got == token_bucket_oracle(times, rate, cap)


# -- transient limits ----------------------------------------------------------


def transient(stats):
    return policy(f"""
t:
  protocols: {{tcp: {{dst-port: 80}}}}
  stats: {stats}
""")


def test_count_limit_reached():
    assert transient_within(transient("{packet-count: 5}"), TransientCounters(5, 0), 0) is Within.EXPIRED
    assert transient_within(transient("{packet-count: 5}"), TransientCounters(4, 0), 0) is Within.WITHIN


def test_duration_limit():
    p = transient("{duration: 2 seconds}")
    assert transient_within(p, TransientCounters(1, 10 * SECOND), 11_900_000_000) is Within.WITHIN
    assert transient_within(p, TransientCounters(1, 10 * SECOND), 12 * SECOND) is Within.WITHIN
    assert transient_within(p, TransientCounters(1, 10 * SECOND), 12 * SECOND + 1) is Within.EXPIRED


def test_either_limit_expires():
    p = transient("{packet-count: 10, duration: 2 seconds}")
    assert transient_within(p, TransientCounters(3, 10 * SECOND), 13 * SECOND) is Within.EXPIRED
    assert transient_within(p, TransientCounters(10, 10 * SECOND), 10 * SECOND) is Within.EXPIRED
