"""Example home network and happy-path traces for the bundled profiles.

Each fixture replays one interaction (or a small mix) over and over, the
way the device would behave when nothing is wrong. Every packet of a
fixture trace is accepted by the engine; fuzzing then turns some of them
into traffic the profile does not allow.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..engine import EngineConfig
from ..packets import Trace
from ..packets import build as B
from ..packets.build import TCP_ACK, TCP_FIN, TCP_PSH, TCP_SYN, Host
from ..parser import load_profile

GATEWAY = Host("c0:56:27:00:00:01", "192.168.1.1")
PHONE = Host("3c:28:6d:aa:bb:cc", "192.168.1.222")
PLUG = Host("50:c7:bf:12:34:56", "192.168.1.150")
HUE = Host("00:17:88:12:34:56", "192.168.1.141")
ACL_CAM = Host("00:11:22:aa:bb:01", "192.168.1.160")
UNBOUND = Host(PLUG.mac, "0.0.0.0")  # the plug before it has a lease
# Internet hosts are reached through the gateway, so they carry its MAC.
CLOUD = Host(GATEWAY.mac, "203.0.113.10")
FIRMWARE = Host(GATEWAY.mac, "203.0.113.20")
API = Host(GATEWAY.mac, "203.0.113.30")
NTP_POOL = Host(GATEWAY.mac, "203.0.113.40")
NTP_NIST = Host(GATEWAY.mac, "203.0.113.41")
ACL_CLOUD = Host(GATEWAY.mac, "198.51.100.7")

CLOUD_NAME = "devs.tplinkcloud.com"

HOME_CONFIG = EngineConfig(lan_prefixes=("192.168.1.0/24",), gateway_addrs=(GATEWAY.ip,))

MS = 1_000_000
SECOND = 1_000_000_000
T0 = 1_700_000_000 * SECOND


def default_profiles_dir():
    """The ``profiles/`` directory next to the package sources, if present."""
    here = Path(__file__).resolve()
    for parent in here.parents:
        cand = parent / "profiles"
        if (cand / "tplink-hs110.yaml").is_file():
            return cand
    raise FileNotFoundError("cannot locate the bundled profiles/ directory")


def dns_exchange(ts, client, name, answer_ip, ident, sport=40000):
    """Query from ``client`` to the gateway and its A-record answer 5 ms later."""
    q = B.dns_query(ts, client, GATEWAY, name, ident=ident, sport=sport)
    r = B.dns_response(ts + 5 * MS, GATEWAY, client, name, [(name, "A", answer_ip)], ident=ident, dport=sport)
    return [q, r]


class _Clock:
    def __init__(self, start):
        self.now = start

    def tick(self, ms):
        self.now += int(ms * MS)
        return self.now


# ---------------------------------------------------------------------------
# one cycle of each interaction; ``c`` is a running clock, ``n`` the cycle number


def cycle_dhcp_lease(c, n):
    xid = 0x1000 + n
    return [
        B.udp(c.tick(0), UNBOUND, GATEWAY, 68, 67, app=_dhcp_msg("discover", xid), eth_dst=B.BROADCAST,
              dst_ip="255.255.255.255"),
        B.dhcp(c.tick(3), GATEWAY, PLUG, "offer", xid),
        B.udp(c.tick(2), UNBOUND, GATEWAY, 68, 67, app=_dhcp_msg("request", xid), eth_dst=B.BROADCAST,
              dst_ip="255.255.255.255"),
        B.dhcp(c.tick(3), GATEWAY, PLUG, "ack", xid),
    ]


def _dhcp_msg(kind, xid):
    from ..packets.layers import Dhcp
    from .. import protocols as P

    return Dhcp(1, xid, PLUG.mac, P.DHCP_TYPES[kind])


def cycle_local_control(c, n, exchanges=10, gap_ms=120):
    out = [B.arp(c.tick(0), PHONE, PLUG, "request"), B.arp(c.tick(1), PLUG, PHONE, "reply")]
    sport = 50000 + n % 1000
    for k in range(exchanges):
        out.append(B.tcp(c.tick(gap_ms), PHONE, PLUG, sport, 9999, seq=k))
        out.append(B.tcp(c.tick(4), PLUG, PHONE, 9999, sport, seq=k))
    return out


def cycle_cloud_connection(c, n, exchanges=12, gap_ms=150):
    out = dns_exchange(c.tick(0), PLUG, CLOUD_NAME, CLOUD.ip, ident=n)
    c.tick(5)
    sport = 41000 + n % 1000
    for k in range(exchanges):
        out.append(B.tcp(c.tick(gap_ms), PLUG, CLOUD, sport, 443, seq=k))
        out.append(B.tcp(c.tick(30), CLOUD, PLUG, 443, sport, seq=k))
    return out


def cycle_firmware_check(c, n):
    sport = 42000 + n % 1000
    name = "download.tplinkcloud.com"
    out = dns_exchange(c.tick(0), PLUG, name, FIRMWARE.ip, ident=n)
    c.tick(5)
    out += [
        B.tcp(c.tick(10), PLUG, FIRMWARE, sport, 80, flags=TCP_SYN),
        B.tcp(c.tick(20), FIRMWARE, PLUG, 80, sport, flags=TCP_SYN | TCP_ACK),
        B.tcp(c.tick(1), PLUG, FIRMWARE, sport, 80, flags=TCP_ACK),
        B.http_request(c.tick(1), PLUG, FIRMWARE, "GET", f"/firmware/hs110?rev={n}", sport=sport),
        B.http_response(c.tick(40), FIRMWARE, PLUG, 200, dport=sport, body=b"no update"),
    ]
    for src, dst, sp, dp in ((PLUG, FIRMWARE, sport, 80), (FIRMWARE, PLUG, 80, sport),
                             (FIRMWARE, PLUG, 80, sport), (PLUG, FIRMWARE, sport, 80)):
        out.append(B.tcp(c.tick(5), src, dst, sp, dp, flags=TCP_FIN | TCP_ACK))
    return out


def cycle_cloud_bootstrap(c, n, https_packets=24, report_packets=8):
    out = dns_exchange(c.tick(0), PLUG, "api.tplinkcloud.com", API.ip, ident=n)
    c.tick(5)
    sport = 43000 + n % 1000
    for k in range(https_packets):
        src, dst, sp, dp = (PLUG, API, sport, 443) if k % 2 == 0 else (API, PLUG, 443, sport)
        out.append(B.tcp(c.tick(40), src, dst, sp, dp, seq=k))
    out += dns_exchange(c.tick(50), PLUG, "time.nist.gov", NTP_NIST.ip, ident=n + 1, sport=40001)
    c.tick(5)
    out.append(B.udp(c.tick(10), PLUG, NTP_NIST, 44000, 123, payload=b"\x1b" + bytes(47)))
    out.append(B.udp(c.tick(30), NTP_NIST, PLUG, 123, 44000, payload=b"\x1c" + bytes(47)))
    for k in range(report_packets):
        src, dst, sp, dp = (PLUG, API, sport + 1, 443) if k % 2 == 0 else (API, PLUG, 443, sport + 1)
        out.append(B.tcp(c.tick(60), src, dst, sp, dp, seq=k, flags=TCP_ACK | TCP_PSH))
    return out


def cycle_hue_app(c, n, packets=40, gap_ms=150):
    sport = 45000 + n % 1000
    out = []
    for k in range(packets):
        src, dst, sp, dp = (PHONE, HUE, sport, 443) if k % 2 == 0 else (HUE, PHONE, 443, sport)
        out.append(B.tcp(c.tick(gap_ms), src, dst, sp, dp, seq=k))
    return out


def cycle_housekeeping(c, n):
    """ARP, ICMP, IGMP, SSDP and NTP chatter of the plug."""
    out = [
        B.arp(c.tick(0), PLUG, GATEWAY, "request"),
        B.arp(c.tick(1), GATEWAY, PLUG, "reply"),
        B.arp(c.tick(200), GATEWAY, PLUG, "request"),
        B.arp(c.tick(1), PLUG, GATEWAY, "reply"),
        B.icmp_echo(c.tick(100), GATEWAY, PLUG, ident=n, seq=1),
        B.icmp_echo(c.tick(1), PLUG, GATEWAY, reply=True, ident=n, seq=1),
        B.igmp(c.tick(50), PLUG, "239.255.255.250", "membership-report"),
        B.ssdp(c.tick(50), PLUG, None, method="NOTIFY", st="urn:schemas-upnp-org:device:basic:1"),
        B.udp(c.tick(300), PLUG, PHONE, 9999, 50500, payload=b'{"system":{}}'),
        B.igmp(c.tick(50), PLUG, "239.255.255.250", "leave-group"),
    ]
    out += dns_exchange(c.tick(100), PLUG, "pool.ntp.org", NTP_POOL.ip, ident=n)
    c.tick(5)
    out.append(B.udp(c.tick(10), PLUG, NTP_POOL, 44100, 123, payload=b"\x1b" + bytes(47)))
    out.append(B.udp(c.tick(30), NTP_POOL, PLUG, 123, 44100, payload=b"\x1c" + bytes(47)))
    # DHCP lease renewal is unicast to the gateway.
    out.append(B.dhcp(c.tick(100), PLUG, GATEWAY, "request", 0x2000 + n))
    out.append(B.dhcp(c.tick(3), GATEWAY, PLUG, "ack", 0x2000 + n))
    return out


def cycle_app_session(c, n, burst=6):
    sport = 46000 + n % 1000
    out = [
        B.udp(c.tick(0), PHONE, PLUG, 51000, 9999, payload=b'{"system":{"get_sysinfo":{}}}'),
        B.udp(c.tick(5), PLUG, PHONE, 9999, 51000, payload=b'{"system":{"get_sysinfo":{"err_code":0}}}'),
    ]
    # The plug's local-control machine also watches TCP 9999; start it first
    # with the ARP exchange so both interactions accept the burst.
    out += [B.arp(c.tick(5), PHONE, PLUG, "request"), B.arp(c.tick(1), PLUG, PHONE, "reply")]
    for k in range(burst):
        src, dst, sp, dp = (PHONE, PLUG, sport, 9999) if k % 2 == 0 else (PLUG, PHONE, 9999, sport)
        out.append(B.tcp(c.tick(60), src, dst, sp, dp, seq=k))
    return out


def cycle_acl(c, n):
    return [
        B.dns_query(c.tick(0), ACL_CAM, GATEWAY, "cam.example.net", ident=n),
        B.dns_response(c.tick(5), GATEWAY, ACL_CAM, "cam.example.net", [("cam.example.net", "A", ACL_CLOUD.ip)],
                       ident=n),
        B.tcp(c.tick(10), ACL_CAM, ACL_CLOUD, 47000, 443),
        B.tcp(c.tick(20), ACL_CLOUD, ACL_CAM, 443, 47000),
        B.tcp(c.tick(30), PHONE, ACL_CAM, 52000, 554),
        B.tcp(c.tick(3), ACL_CAM, PHONE, 554, 52000),
        B.udp(c.tick(40), ACL_CAM, NTP_POOL, 44200, 123),
        B.icmp_echo(c.tick(50), GATEWAY, ACL_CAM),
        B.icmp_echo(c.tick(1), ACL_CAM, GATEWAY, reply=True),
    ]


@dataclass(frozen=True)
class Fixture:
    name: str
    profiles: tuple  # profile file names under the profiles directory
    cycle: object  # (clock, n) -> list of packets
    gap_ms: int  # idle time between cycles
    description: str

    def load_profiles(self, profiles_dir=None):
        root = Path(profiles_dir) if profiles_dir else default_profiles_dir()
        return [load_profile(root / name) for name in self.profiles]

    def trace(self, min_packets=400, start=T0):
        """Repeat the cycle until the trace holds at least ``min_packets`` packets."""
        c = _Clock(start)
        pkts = []
        n = 0
        while len(pkts) < min_packets:
            pkts.extend(self.cycle(c, n))
            c.tick(self.gap_ms)
            n += 1
        return Trace(tuple(pkts))


FIXTURES = {
    f.name: f
    for f in (
        Fixture("dhcp-lease", ("tplink-hs110.yaml",), cycle_dhcp_lease, 500,
                "four one-off policies in sequence, unidirectional"),
        Fixture("local-control", ("tplink-hs110.yaml",), cycle_local_control, 400,
                "bidirectional one-off ARP gating a bidirectional periodic TCP policy"),
        Fixture("cloud-connection", ("tplink-hs110.yaml",), cycle_cloud_connection, 300,
                "DNS exchange gating periodic HTTPS to the resolved address"),
        Fixture("firmware-check", ("tplink-hs110.yaml",), cycle_firmware_check, 6000,
                "transient TCP phases around an HTTP request and response"),
        Fixture("cloud-bootstrap", ("tplink-hs110.yaml",), cycle_cloud_bootstrap, 1000,
                "two transient HTTPS phases separated by a DNS and NTP exchange"),
        Fixture("housekeeping", ("tplink-hs110.yaml",), cycle_housekeeping, 700,
                "ARP, ICMP, IGMP, SSDP, NTP and DHCP renewal across several interactions"),
        Fixture("app-session", ("tplink-hs110.yaml",), cycle_app_session, 500,
                "UDP probe and answer followed by a transient TCP burst"),
        Fixture("hue-app", ("hue-bridge.yaml",), cycle_hue_app, 2000,
                "single bidirectional periodic policy"),
        Fixture("mixed-home", ("tplink-hs110.yaml", "hue-bridge.yaml", "acl-only.yaml"), None, 0,
                "all plug, bridge and camera cycles interleaved"),
    )
}


def _mixed_cycle(c, n):
    kinds = (cycle_local_control, cycle_cloud_connection, cycle_housekeeping, cycle_hue_app, cycle_acl,
             cycle_firmware_check, cycle_cloud_bootstrap)
    out = kinds[n % len(kinds)](c, n)
    c.tick(6000 if kinds[n % len(kinds)] is cycle_firmware_check else 500)
    return out


FIXTURES["mixed-home"] = Fixture("mixed-home", FIXTURES["mixed-home"].profiles, _mixed_cycle, 0,
                                 FIXTURES["mixed-home"].description)

BASE_FIXTURES = ("dhcp-lease", "local-control", "cloud-connection", "firmware-check", "cloud-bootstrap")
