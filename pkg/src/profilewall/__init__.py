"""Profile-driven stateful firewall for smart-home device traffic."""

__version__ = "0.1.0"
