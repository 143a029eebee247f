"""A trace bundled with the verdict expected for each packet.

On disk this is the trace file (pcap or JSONL) plus a JSON sidecar named
``<trace>.labels.json`` holding ``{v, expected, edits, ...}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import FormatError
from ..packets import load_trace, save_trace
from .fuzz import EditLog

SIDECAR_VERSION = 1


def sidecar_path(trace_path):
    p = Path(trace_path)
    return p.with_name(p.name + ".labels.json")


@dataclass
class LabeledTrace:
    trace: object
    expected: list
    edits: Optional[EditLog] = None
    profiles: tuple = ()  # profile file names the labels assume
    scenario: Optional[str] = None
    note: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.expected) != len(self.trace):
            raise ValueError(f"{len(self.expected)} labels for {len(self.trace)} packets")

    @property
    def packets(self):
        return self.trace.packets

    def __len__(self):
        return len(self.trace)

    @property
    def expected_drops(self):
        return [i for i, e in enumerate(self.expected) if e == "DROP"]

    def sidecar(self):
        return {
            "v": SIDECAR_VERSION,
            "expected": list(self.expected),
            "edits": [e.to_dict() for e in self.edits.edits] if self.edits else [],
            "seed": self.edits.seed if self.edits else None,
            "edit_fraction": self.edits.edit_fraction if self.edits else None,
            "profiles": list(self.profiles),
            "scenario": self.scenario,
            "note": self.note,
            **self.extra,
        }

    def save(self, trace_path, with_raw=False):
        save_trace(self.trace, trace_path, with_raw)
        side = sidecar_path(trace_path)
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return side


def read_sidecar(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict) or not isinstance(data.get("expected"), list):
        raise FormatError(f"{path}: sidecar must be an object with an 'expected' list")
    bad = [x for x in data["expected"] if x not in ("ACCEPT", "DROP")]
    if bad:
        raise FormatError(f"{path}: expected labels must be ACCEPT or DROP, found {bad[0]!r}")
    return data


def load_labeled(trace_path, sidecar=None):
    trace = load_trace(trace_path)
    data = read_sidecar(sidecar or sidecar_path(trace_path))
    edits = None
    if data.get("seed") is not None:
        edits = EditLog.from_dict({"seed": data["seed"], "edit_fraction": data.get("edit_fraction"),
                                   "edits": data.get("edits", [])})
    return LabeledTrace(trace, data["expected"], edits, tuple(data.get("profiles") or ()), data.get("scenario"),
                        data.get("note", ""))
