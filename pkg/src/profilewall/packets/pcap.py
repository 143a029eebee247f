"""Classic libpcap files: both byte orders, micro- and nanosecond timestamps."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..errors import FormatError
from .codec import LINKTYPE_ETHERNET, dissect

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D


@dataclass(frozen=True)
class Trace:
    packets: tuple = ()
    linktype: int = LINKTYPE_ETHERNET

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(self.packets))

    def __len__(self):
        return len(self.packets)

    def __iter__(self):
        return iter(self.packets)

    def __getitem__(self, idx):
        return self.packets[idx]


def check_monotone(packets, where=lambda i: f"packet {i}"):
    prev = None
    for i, pkt in enumerate(packets):
        if prev is not None and pkt.ts < prev:
            raise FormatError(f"{where(i)}: timestamps must be non-decreasing")
        prev = pkt.ts


def read_pcap(data):
    """Parse a classic pcap capture into a :class:`Trace`."""
    data = bytes(data)
    if len(data) < 24:
        raise FormatError("truncated pcap global header")
    for endian in ("<", ">"):
        magic = struct.unpack(endian + "I", data[:4])[0]
        if magic in (MAGIC_US, MAGIC_NS):
            break
    else:
        raise FormatError(f"bad pcap magic 0x{data[:4].hex()}")
    frac_scale = 1000 if magic == MAGIC_US else 1
    linktype = struct.unpack(endian + "I", data[20:24])[0] & 0x0FFFFFFF
    if linktype != LINKTYPE_ETHERNET:
        raise FormatError(f"unsupported linktype {linktype} (only Ethernet is handled)")
    rec = struct.Struct(endian + "IIII")
    packets = []
    off = 24
    while off < len(data):
        if off + 16 > len(data):
            raise FormatError(f"truncated record header at offset {off}")
        sec, frac, incl, _orig = rec.unpack_from(data, off)
        off += 16
        if off + incl > len(data):
            raise FormatError(f"truncated record body at offset {off}")
        ts = sec * 1_000_000_000 + frac * frac_scale
        packets.append(dissect(data[off:off + incl], linktype, ts))
        off += incl
    check_monotone(packets)
    return Trace(tuple(packets), linktype)


def write_pcap(trace, nanosecond=True):
    """Serialize a trace as a little-endian pcap (nanosecond magic by default)."""
    magic = MAGIC_NS if nanosecond else MAGIC_US
    out = [struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 262144, trace.linktype)]
    for pkt in trace.packets:
        sec, ns = divmod(pkt.ts, 1_000_000_000)
        frac = ns if nanosecond else ns // 1000
        out.append(struct.pack("<IIII", sec, frac, len(pkt.raw), len(pkt.raw)))
        out.append(pkt.raw)
    return b"".join(out)
