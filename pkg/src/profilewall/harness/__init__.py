"""Test harness: happy-path fixtures, fuzzing, an independent labeler and attack traces."""

from .attacks import SCENARIOS, AttackParams, flood_times, gen_attack, token_bucket_oracle
from .fuzz import Edit, EditLog, fuzz_trace, mutate_packet
from .labeled import LabeledTrace, load_labeled, sidecar_path
from .labeler import label_trace
from .scenarios import BASE_FIXTURES, FIXTURES, HOME_CONFIG, default_profiles_dir


def labeled_fuzz(fixture, seed, edit_fraction=0.3, min_packets=400, profiles_dir=None):
    """Fuzz a fixture's happy-path trace and label the result."""
    fx = FIXTURES[fixture]
    profiles = fx.load_profiles(profiles_dir)
    trace, log = fuzz_trace(fx.trace(min_packets), seed, edit_fraction)
    lt = label_trace(trace, profiles, HOME_CONFIG, log)
    lt.profiles = fx.profiles
    lt.scenario = f"fuzz:{fixture}"
    return lt


__all__ = [
    "SCENARIOS", "AttackParams", "flood_times", "gen_attack", "token_bucket_oracle", "Edit", "EditLog",
    "fuzz_trace", "mutate_packet", "LabeledTrace", "load_labeled", "sidecar_path", "label_trace",
    "BASE_FIXTURES", "FIXTURES", "HOME_CONFIG", "default_profiles_dir", "labeled_fuzz",
]
