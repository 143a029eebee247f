"""Acceptance criteria 1-10, one test each.

Every criterion prints a single PASS/FAIL line: in the pytest terminal
summary, or directly when this file is run as a script.
"""

import ipaddress
import random
import statistics
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import PROFILES, engine_with  # noqa: E402
from test_fsm import FIG5  # noqa: E402

from profilewall.engine import Engine, verdict_log  # noqa: E402
from profilewall.errors import FormatError  # noqa: E402
from profilewall.fsm import compile_interaction  # noqa: E402
from profilewall.harness import BASE_FIXTURES, FIXTURES, HOME_CONFIG, gen_attack, labeled_fuzz  # noqa: E402
from profilewall.harness.attacks import A2_DEFAULTS, token_bucket_oracle, with_params  # noqa: E402
from profilewall.harness.scenarios import ACL_CAM, ACL_CLOUD, GATEWAY, MS, PHONE, PLUG, T0  # noqa: E402
from profilewall.packets import Trace, dissect, read_pcap  # noqa: E402
from profilewall.packets import build as B  # noqa: E402
from profilewall.packets.layers import layer_fields  # noqa: E402
from profilewall.parser import load_profile, parse_profile  # noqa: E402

RESULTS = {}


def _engine(profiles):
    e = Engine(HOME_CONFIG)
    for p in profiles:
        e.register_profile(p)
    return e


def _decisions(report):
    return [v.decision for v in report.verdicts]


def criterion_1():
    start = time.perf_counter()
    total = disagree = dropped = 0
    for name in BASE_FIXTURES:
        profiles = FIXTURES[name].load_profiles()
        for seed in range(5):
            lt = labeled_fuzz(name, seed, 0.3, min_packets=420)
            got = _decisions(_engine(profiles).run_replay(lt.trace, timing=False))
            total += len(lt)
            dropped += len(lt.expected_drops)
            disagree += sum(a != b for a, b in zip(got, lt.expected))
    secs = time.perf_counter() - start
    ok = total >= 10_000 and disagree == 0 and secs < 60
    return ok, (f"{total} packets over {len(BASE_FIXTURES)} fixtures x 5 seeds, {dropped} expected drops, "
                f"{disagree} disagreements, {secs:.1f} s")


def criterion_2():
    lt = gen_attack("A1")
    report = engine_with("hue-bridge.yaml").run_replay(lt.trace, timing=False)
    oracle = token_bucket_oracle([p.ts for p in lt.trace], 10, 100)
    accepted = report.accepted
    drops_rate = all(v.reason == "RATE_EXCEEDED" for v in report.verdicts if not v.accepted)
    ok = accepted == 110 == sum(oracle) and [v.accepted for v in report.verdicts] == oracle and drops_rate
    return ok, f"{accepted} accepted (oracle {sum(oracle)}), {report.dropped} dropped, all RATE_EXCEEDED: {drops_rate}"


def criterion_3():
    lt = gen_attack("A2")
    report = engine_with("variants/tplink-hs110-rate.yaml").run_replay(lt.trace, timing=False)
    got = [v.accepted for v in report.verdicts]
    oracle = token_bucket_oracle([p.ts for p in lt.trace], A2_DEFAULTS.rate, A2_DEFAULTS.burst)
    first_drop = got.index(False)
    steady = Trace([B.tcp(T0 + k * 50 * MS, PHONE, PLUG, 50123, 9999, seq=k) for k in range(200)])
    steady_ok = engine_with("variants/tplink-hs110-rate.yaml").run_replay(steady, timing=False).accepted
    ok = got == oracle and first_drop == A2_DEFAULTS.burst and all(got[:first_drop]) and steady_ok == 200
    return ok, (f"flood: {sum(got)}/1000 accepted, first drop at packet {first_drop} (burst {A2_DEFAULTS.burst}); "
                f"steady 20 pps: {steady_ok}/200 accepted")


def criterion_4():
    bare = engine_with("tplink-hs110.yaml").run_replay(gen_attack("A3").trace, timing=False)
    full = engine_with("tplink-hs110.yaml").run_replay(with_params("A3", prelude=True).trace, timing=False)
    tcp_ok = sum(v.accepted for v in full.verdicts[2:])
    ok = bare.dropped == 5 == len(bare.verdicts) and full.accepted == 7
    return ok, f"without ARP pair {bare.dropped}/5 dropped; with it {tcp_ok}/5 TCP accepted (+2 ARP)"


def criterion_5():
    bare = engine_with("tplink-hs110.yaml").run_replay(gen_attack("A4").trace, timing=False)
    full = engine_with("tplink-hs110.yaml").run_replay(with_params("A4", prelude=True).trace, timing=False)
    ok = bare.dropped == len(bare.verdicts) == 5 and full.accepted == len(full.verdicts) == 7
    reasons = sorted({v.reason for v in bare.verdicts})
    return ok, f"without DNS {bare.dropped}/5 dropped ({', '.join(reasons)}); with it {full.accepted}/7 accepted"


def criterion_6():
    m = compile_interaction(parse_profile(FIG5).interactions[0])
    edges = {t.edge for t in m.transitions}
    want = {(0, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 0), (3, 1)}
    ok = len(m.states) == 4 and edges == want
    return ok, f"{len(m.states)} states, edge set {sorted(edges)}"


def criterion_7():
    checked = 0
    for name, fx in FIXTURES.items():
        profiles = fx.load_profiles()
        for lt in (labeled_fuzz(name, 0, min_packets=300), labeled_fuzz(name, 1, min_packets=300)):
            trace = lt.trace
            logs = []
            for _ in range(2):
                e = _engine(profiles)
                logs.append(verdict_log(e.run_replay(trace, timing=False).verdicts, trace.packets))
            if logs[0] != logs[1]:
                return False, f"{name}: verdict logs differ between identical runs"
            for cut in (len(trace) // 3, 2 * len(trace) // 3, len(trace)):
                prefix = Trace(trace.packets[:cut])
                full = _engine(profiles)
                verdicts = full.run_replay(prefix, timing=False).verdicts
                kept = Trace([p for p, v in zip(prefix, verdicts) if v.accepted])
                only = _engine(profiles)
                only.run_replay(kept, timing=False)
                if full.state_digest() != only.state_digest():
                    return False, f"{name}: state after {cut} packets differs from accepted-only replay"
                checked += 1
    return True, f"{len(FIXTURES)} fixtures x 2 fuzzed traces: logs byte-identical, {checked} prefix states match"


# -- criterion 8: stateless ACL oracle written from the ACL entries directly --

CAM = ACL_CAM.ip
GW = GATEWAY.ip
LAN = ipaddress.ip_network("192.168.1.0/24")
CLOUD_NET = ipaddress.ip_network("198.51.100.0/24")


def acl_oracle(pkt):
    macs = {pkt.eth.src, pkt.eth.dst}
    if pkt.arp is not None:
        a = pkt.arp
        if ACL_CAM.mac not in macs | {a.sender_hw, a.target_hw} and CAM not in (a.sender_ip, a.target_ip):
            return "ACCEPT"
        return "ACCEPT" if CAM in (a.sender_ip, a.target_ip) else "DROP"
    s, d = pkt.ip.src, pkt.ip.dst
    if ACL_CAM.mac not in macs and CAM not in (s, d):
        return "ACCEPT"
    sa, da = ipaddress.ip_address(s), ipaddress.ip_address(d)
    t = pkt.transport
    allowed = False
    if t is not None and t.protocol == "udp":
        allowed = ((s == CAM and d == GW and t.dst_port == 53) or (s == GW and d == CAM and t.src_port == 53)
                   or (s == CAM and t.dst_port == 123) or (d == CAM and t.src_port == 123))
    elif t is not None and t.protocol == "tcp":
        allowed = ((s == CAM and da in CLOUD_NET and t.dst_port == 443)
                   or (sa in CLOUD_NET and d == CAM and t.src_port == 443)
                   or (sa in LAN and d == CAM and t.dst_port == 554)
                   or (s == CAM and da in LAN and t.src_port == 554))
    elif pkt.icmp is not None:
        allowed = (s == GW and d == CAM and pkt.icmp.type == 8) or (s == CAM and d == GW and pkt.icmp.type == 0)
    return "ACCEPT" if allowed else "DROP"


def random_acl_packets(n, seed=2024):
    rng = random.Random(seed)
    peers = [GATEWAY, PHONE, ACL_CLOUD, B.Host("02:00:00:00:00:50", "192.168.1.50"),
             B.Host(GATEWAY.mac, "198.51.100.200"), B.Host(GATEWAY.mac, "203.0.113.77")]
    ports = [53, 123, 443, 554, 80, 8080, 1900, 5683]
    pkts = []
    for k in range(n):
        ts = T0 + k * MS
        peer = rng.choice(peers)
        src, dst = (ACL_CAM, peer) if rng.random() < 0.5 else (peer, ACL_CAM)
        if rng.random() < 0.08:
            src, dst = PHONE, GATEWAY  # not involving the camera at all
        kind = rng.choice(["tcp", "tcp", "udp", "udp", "icmp", "arp"])

        def port():
            return rng.choice(ports) if rng.random() < 0.6 else rng.randrange(1024, 65536)

        if kind == "tcp":
            pkts.append(B.tcp(ts, src, dst, port(), port()))
        elif kind == "udp":
            pkts.append(B.udp(ts, src, dst, port(), port()))
        elif kind == "icmp":
            pkts.append(B.icmp_echo(ts, src, dst, reply=rng.random() < 0.5))
        else:
            pkts.append(B.arp(ts, src, dst, rng.choice(["request", "reply"])))
    return Trace(pkts)


def criterion_8():
    cam = load_profile(PROFILES / "acl-only.yaml")
    stateless = all(len(i.policies) == 1 and i.policies[0].stats is None for i in cam.interactions)
    trace = random_acl_packets(1000)
    got = _decisions(_engine([cam]).run_replay(trace, timing=False))
    want = [acl_oracle(p) for p in trace]
    diff = sum(a != b for a, b in zip(got, want))
    ok = stateless and diff == 0 and 0 < want.count("DROP") < len(want)
    return ok, f"1000 random packets: {want.count('ACCEPT')} accept / {want.count('DROP')} drop, {diff} differences"


def criterion_9():
    fx = FIXTURES["mixed-home"]
    trace = fx.trace(30_000)
    report = _engine(fx.load_profiles()).run_replay(trace)
    us = [n / 1000 for n in report.latencies_ns]
    mean = statistics.fmean(us)
    p975 = statistics.quantiles(us, n=40, method="inclusive")[-1]
    ok = len(trace) >= 30_000 and report.dropped == 0 and mean < 1000 and p975 < 1000
    cats = report.category_counts()
    return ok, (f"{len(trace)} packets: mean {mean:.1f} us, p97.5 {p975:.1f} us; "
                f"categories A/B/C/D = {cats['A']}/{cats['B']}/{cats['C']}/{cats['D']}")


def criterion_10():
    n = bad = 0
    for fx in FIXTURES.values():
        for pkt in fx.trace(200):
            again = dissect(pkt.raw, ts=pkt.ts)
            n += 1
            if again != pkt or again.raw != pkt.raw or [layer_fields(x) for x in again.layers] != [
                    layer_fields(x) for x in pkt.layers]:
                bad += 1
    rng = random.Random(10)
    prefixes = [b"", bytes.fromhex("ffffffffffff020000000001" "0800"), bytes.fromhex("ffffffffffff020000000001" "86dd"),
                bytes.fromhex("ffffffffffff020000000001" "0806")]
    crashes = 0
    for _ in range(10_000):
        head = rng.choice(prefixes)
        blob = head + rng.randbytes(rng.randrange(max(0, 14 - len(head)), 300))
        try:
            dissect(blob)
        except Exception:
            crashes += 1
    pcap_crashes = 0
    for _ in range(1000):
        try:
            read_pcap(rng.randbytes(rng.randrange(0, 200)))
        except FormatError:
            pass
        except Exception:
            pcap_crashes += 1
    ok = bad == 0 and crashes == 0 and pcap_crashes == 0
    return ok, (f"{n} fixture packets round-trip ({bad} mismatches); 10000 random blobs, {crashes} crashes; "
                f"1000 random pcap files, {pcap_crashes} non-FormatError failures")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8,
            criterion_9, criterion_10]
TITLES = ["fuzz-oracle agreement", "A1 rate flood", "A2 rate flood and boundary", "A3 missing ARP pair",
          "A4 missing DNS resolution", "FSM golden", "determinism and atomicity", "ACL-only equivalence",
          "decision latency", "packet-io round trip and totality"]


def line(k, ok, detail):
    return f"criterion {k:2d} [{'PASS' if ok else 'FAIL'}] {TITLES[k - 1]}: {detail}"


@pytest.mark.parametrize("k", range(1, 11))
def test_criterion(k):
    ok, detail = CRITERIA[k - 1]()
    RESULTS[k] = line(k, ok, detail)
    print(RESULTS[k])
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for k, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        failed += not ok
        print(line(k, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
