import random

import pytest

from profilewall.engine import ACCEPT, DROP, DnsTable, Engine, EngineConfig, verdict_log
from profilewall.errors import ClockRegression, DuplicateDevice
from profilewall.harness import gen_attack
from profilewall.harness.attacks import with_params
from profilewall.harness.scenarios import CLOUD, CLOUD_NAME, GATEWAY, HOME_CONFIG, HUE, MS, PHONE, PLUG, dns_exchange
from profilewall.packets import Trace
from profilewall.packets import build as B
from profilewall.packets.layers import Dns, DnsQuestion, DnsRecord
from profilewall.parser import parse_profile

from conftest import decisions, engine_with, profile

MINIMAL = B.Host("00:11:22:33:44:55", "192.168.1.100")
SERVER = B.Host(GATEWAY.mac, "203.0.113.99")


def test_plug_registration_creates_one_runtime_per_interaction():
    e = engine_with("tplink-hs110.yaml")
    assert len(e.devices[0].runtimes) == 13


def test_duplicate_registration():
    e = engine_with("tplink-hs110.yaml")
    with pytest.raises(DuplicateDevice):
        e.register_profile(profile("tplink-hs110.yaml"))
    with pytest.raises(DuplicateDevice):
        e.register_profile(profile("variants/tplink-hs110-rate.yaml"))


def test_profile_without_interactions_drops_everything():
    p = parse_profile('device-info: {name: mute, mac: "02:00:00:00:00:99", ipv4: 192.168.1.99}\n')
    e = Engine(HOME_CONFIG)
    e.register_profile(p)
    mute = B.Host("02:00:00:00:00:99", "192.168.1.99")
    v = e.process_packet(B.tcp(0, PHONE, mute, 1, 2))
    assert (v.decision, v.reason, v.device) == (DROP, "NO_POLICY_MATCH", "mute")


def test_a3_needs_the_arp_exchange():
    lt = gen_attack("A3")
    ok = with_params("A3", prelude=True)
    report = engine_with("tplink-hs110.yaml").run_replay(ok.trace)
    assert decisions(report) == [ACCEPT] * 7
    report = engine_with("tplink-hs110.yaml").run_replay(lt.trace)
    assert decisions(report) == [DROP] * 5
    assert {v.reason for v in report.verdicts} == {"WRONG_STATE"}
    assert {v.interaction for v in report.verdicts} == {"local-control"}


def test_a4_without_dns_is_unresolved():
    report = engine_with("tplink-hs110.yaml").run_replay(gen_attack("A4").trace)
    assert [(v.decision, v.reason) for v in report.verdicts] == [(DROP, "UNRESOLVED_NAME")] * 5


def test_unprofiled_traffic_uses_default():
    pkt = B.tcp(0, PHONE, GATEWAY, 1, 80)
    v = engine_with("tplink-hs110.yaml").process_packet(pkt)
    assert (v.decision, v.reason, v.device) == (ACCEPT, "DEFAULT_ACCEPT", "unprofiled")
    strict = EngineConfig(HOME_CONFIG.lan_prefixes, HOME_CONFIG.gateway_addrs, default_unprofiled=DROP)
    v = engine_with("tplink-hs110.yaml", config=strict).process_packet(pkt)
    assert (v.decision, v.reason) == (DROP, "NO_POLICY_MATCH")


def dns_response(*records, qr="response"):
    return Dns("dns", 1, qr, 0, (DnsQuestion("x", "A"),), tuple(DnsRecord(n, t, v, 60) for n, t, v in records))


def test_dns_observe_insert_then_lookup():
    t = DnsTable()
    t.observe(dns_response(("cloud.tplink.com", "A", "1.2.3.4")), 0)
    assert t.lookup("cloud.tplink.com") == {"1.2.3.4"}
    assert t.lookup("Cloud.TPLink.com.") == {"1.2.3.4"}


def test_dns_observe_follows_cname_chain():
    t = DnsTable()
    t.observe(dns_response(("x", "CNAME", "y"), ("y", "A", "5.6.7.8")), 0)
    assert "5.6.7.8" in t.lookup("x") and t.lookup("y") == {"5.6.7.8"}


def test_dns_query_changes_nothing():
    t = DnsTable()
    t.observe(dns_response(("x", "A", "1.1.1.1"), qr="query"), 0)
    assert t.entries == {}


def test_dns_wildcard_lookup_and_accumulation():
    t = DnsTable()
    t.observe(dns_response(("a.example.com", "A", "1.1.1.1")), 0)
    t.observe(dns_response(("a.example.com", "A", "1.1.1.2"), ("b.example.com", "AAAA", "2001:db8::1")), 5)
    assert t.lookup("a.example.com") == {"1.1.1.1", "1.1.1.2"}
    assert t.lookup("*.example.com") == {"1.1.1.1", "1.1.1.2", "2001:db8::1"}
    assert t.entries["a.example.com"].inserted_at == 0


def test_empty_trace():
    report = engine_with("tplink-hs110.yaml").run_replay(Trace(()))
    assert report.verdicts == [] and report.summary()["accepted"] == 0 and report.summary()["dropped"] == 0


def test_clock_regression_is_a_diagnostic_not_an_abort():
    pkts = [B.tcp(10 * MS, PHONE, GATEWAY, 1, 80), B.tcp(5 * MS, PHONE, GATEWAY, 1, 80),
            B.tcp(20 * MS, PHONE, GATEWAY, 1, 80)]
    e = engine_with("tplink-hs110.yaml")
    report = e.run_replay(Trace(tuple(pkts)))  # Trace itself does not enforce ordering
    assert [v.reason for v in report.verdicts] == ["DEFAULT_ACCEPT", "CLOCK_REGRESSION", "DEFAULT_ACCEPT"]
    assert report.diagnostics[0]["idx"] == 1
    with pytest.raises(ClockRegression):
        e.process_packet(pkts[1])


def test_live_mode_clamps_time():
    cfg = EngineConfig(HOME_CONFIG.lan_prefixes, HOME_CONFIG.gateway_addrs, clock_mode="live")
    e = engine_with("tplink-hs110.yaml", config=cfg)
    e.process_packet(B.tcp(10 * MS, PHONE, GATEWAY, 1, 80))
    assert e.process_packet(B.tcp(5 * MS, PHONE, GATEWAY, 1, 80)).accepted


def fig3_happy_path(t=0):
    pkts = dns_exchange(t, MINIMAL, "my.server.com", SERVER.ip, ident=3)
    pkts += [B.tcp(t + 10 * MS, MINIMAL, SERVER, 50000, 443, flags=B.TCP_SYN),
             B.tcp(t + 20 * MS, SERVER, MINIMAL, 443, 50000, flags=B.TCP_SYN | B.TCP_ACK)]
    return pkts


def test_fig3_happy_path_is_accepted():
    e = engine_with("fig3-minimal.yaml")
    report = e.run_replay(Trace(fig3_happy_path() + fig3_happy_path(100 * MS)))
    assert decisions(report) == [ACCEPT] * 8
    assert [v.policy for v in report.verdicts[:4]] == ["dns-server", "dns-server", "https-server", "https-server"]
    assert e.dns.lookup("my.server.com") == {SERVER.ip}


def test_https_before_dns_is_unresolved():
    report = engine_with("fig3-minimal.yaml").run_replay(Trace([B.tcp(0, MINIMAL, SERVER, 50000, 443)]))
    assert report.verdicts[0].reason == "UNRESOLVED_NAME"


def test_dns_gating_predicate_on_random_orderings():
    rng = random.Random(7)
    pool = fig3_happy_path() + [B.tcp(0, MINIMAL, SERVER, 50001, 443)] * 3
    for _ in range(200):
        order = rng.sample(pool, len(pool))
        trace = Trace([p.rebuilt(ts=k * MS) for k, p in enumerate(order)])
        report = engine_with("fig3-minimal.yaml").run_replay(trace)
        resolved = False
        for pkt, v in zip(trace, report.verdicts):
            if v.accepted and isinstance(pkt.app, Dns) and pkt.app.is_response:
                resolved = True
            if v.accepted and pkt.transport and 443 in (pkt.transport.dst_port, pkt.transport.src_port):
                assert resolved


PAIR = """device-info: {{name: {name}, mac: "{mac}", ipv4: {ip}}}
interactions:
  talk:
    send: {{protocols: {{ipv4: {{src: self, dst: {peer}}}, tcp: {{dst-port: 7000}}}}}}
    again: {{protocols: {{ipv4: {{src: self, dst: {peer}}}, tcp: {{dst-port: 7001}}}}}}
"""


def test_global_drop_rolls_back_accepting_device():
    sender = parse_profile(PAIR.format(name="sender", mac=PLUG.mac, ip=PLUG.ip, peer=HUE.ip))
    mute = parse_profile(f'device-info: {{name: hue, mac: "{HUE.mac}", ipv4: {HUE.ip}}}\n')
    e = Engine(HOME_CONFIG)
    e.register_profile(sender)
    e.register_profile(mute)
    before = e.state_digest()
    v = e.process_packet(B.tcp(0, PLUG, HUE, 1, 7000))
    assert (v.decision, v.device) == (DROP, "hue")
    assert e.state_digest() == before


def test_both_devices_must_accept_and_both_advance():
    sender = parse_profile(PAIR.format(name="sender", mac=PLUG.mac, ip=PLUG.ip, peer=HUE.ip))
    receiver = parse_profile("""device-info: {name: receiver, mac: "00:17:88:12:34:56", ipv4: 192.168.1.141}
interactions:
  listen:
    hear: {protocols: {ipv4: {dst: self}, tcp: {dst-port: 7000}}}
""")
    e = Engine(HOME_CONFIG)
    e.register_profile(sender)
    e.register_profile(receiver)
    assert e.process_packet(B.tcp(0, PLUG, HUE, 1, 7000)).accepted
    assert [rt.current for d in e.devices for rt in d.runtimes] == [1, 0]
    # the receiver has no policy for port 7001
    assert not e.process_packet(B.tcp(1, PLUG, HUE, 1, 7001)).accepted
    assert [rt.current for d in e.devices for rt in d.runtimes] == [1, 0]


def test_multi_match_advances_every_accepting_runtime():
    p = parse_profile("""device-info: {name: d, mac: "50:c7:bf:12:34:56", ipv4: 192.168.1.150}
interactions:
  one:
    a: {protocols: {ipv4: {src: phone, dst: self}, tcp: {dst-port: 1}}}
    b: {protocols: {ipv4: {src: phone, dst: self}, tcp: {dst-port: 2}}}
  two:
    a: {protocols: {ipv4: {src: phone, dst: self}, tcp: {dst-port: 1}}}
    c: {protocols: {ipv4: {src: phone, dst: self}, tcp: {dst-port: 3}}}
""")
    e = Engine(HOME_CONFIG)
    e.register_profile(p)
    assert e.process_packet(B.tcp(0, PHONE, PLUG, 9, 1)).accepted
    assert [rt.current for rt in e.devices[0].runtimes] == [1, 1]


def test_verdict_log_has_no_timing_and_is_stable():
    trace = gen_attack("A1").trace
    logs = [verdict_log(engine_with("hue-bridge.yaml").run_replay(trace).verdicts, trace.packets) for _ in range(2)]
    assert logs[0] == logs[1]
    first = logs[0].splitlines()[0]
    assert '"reason": "MATCHED"' in first and "latency" not in first


def test_summary_percentiles_and_categories():
    report = engine_with("hue-bridge.yaml").run_replay(gen_attack("A1").trace)
    s = report.summary()
    assert s["per_reason"] == {"MATCHED": 110, "RATE_EXCEEDED": 890}
    assert s["latency_us"]["p2_5"] <= s["latency_us"]["p97_5"]
    assert sum(s["categories"].values()) == 1000 and s["categories"]["A"] == 1000


def test_config_round_trip_and_errors():
    cfg = EngineConfig.from_dict({"lan-prefixes": ["10.0.0.0/8"], "gateway-addrs": ["10.0.0.1"],
                                  "default-unprofiled": "drop", "clock-mode": "LIVE", "dns-max-age": 30})
    assert EngineConfig.from_dict(cfg.to_dict()) == cfg
    from profilewall.errors import FormatError

    with pytest.raises(FormatError):
        EngineConfig.from_dict({"lan": []})
    with pytest.raises(FormatError):
        EngineConfig(("not-a-net",))


def test_live_mode_dns_max_age():
    cfg = EngineConfig(HOME_CONFIG.lan_prefixes, HOME_CONFIG.gateway_addrs, clock_mode="live", dns_max_age=1)
    e = engine_with("tplink-hs110.yaml", config=cfg)
    for pkt in dns_exchange(0, PLUG, CLOUD_NAME, CLOUD.ip, ident=1):
        assert e.process_packet(pkt).accepted
    assert e.dns.lookup(CLOUD_NAME) == {CLOUD.ip}
    e.process_packet(B.tcp(5 * 10**9, PHONE, GATEWAY, 1, 80))
    assert e.dns.lookup(CLOUD_NAME) == frozenset()
