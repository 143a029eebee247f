"""Packet dissection, synthesis and trace file formats."""

from .codec import LINKTYPE_ETHERNET, Packet, dissect, serialize
from .jsonl import packet_from_dict, packet_to_dict, read_jsonl, write_jsonl
from .pcap import Trace, read_pcap, write_pcap

__all__ = [
    "LINKTYPE_ETHERNET", "Packet", "Trace", "dissect", "serialize", "packet_from_dict", "packet_to_dict",
    "read_jsonl", "write_jsonl", "read_pcap", "write_pcap", "load_trace", "save_trace",
]


def load_trace(path):
    """Read a ``.pcap`` or ``.jsonl`` trace, chosen by file extension."""
    from pathlib import Path

    path = Path(path)
    if path.suffix in (".jsonl", ".json", ".ndjson"):
        return read_jsonl(path.read_text(encoding="utf-8"))
    return read_pcap(path.read_bytes())


def save_trace(trace, path, with_raw=False):
    from pathlib import Path

    path = Path(path)
    if path.suffix in (".jsonl", ".json", ".ndjson"):
        path.write_text(write_jsonl(trace, with_raw), encoding="utf-8")
    else:
        path.write_bytes(write_pcap(trace))
