"""Exception hierarchy shared by all profilewall modules."""


class ProfilewallError(Exception):
    """Base class for every error raised by this package."""


class ProfileSyntaxError(ProfilewallError):
    """Malformed profile source. Carries the 1-based line/column when known."""

    def __init__(self, message, line=None, column=None, source=None):
        self.line = line
        self.column = column
        self.source = source
        where = ""
        if line is not None:
            where = f"{source or '<profile>'}:{line}:{column}: "
        super().__init__(where + message)


class ResolutionError(ProfilewallError):
    """Dangling reference, include cycle, or missing file."""


class ValidationError(ProfilewallError):
    """A parsed profile violates one or more invariants."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "\n".join(f"  {d}" for d in self.diagnostics)
        super().__init__(f"{len(self.diagnostics)} profile error(s):\n{lines}")


class FormatError(ProfilewallError):
    """Unreadable packet trace (bad magic, truncation, bad JSONL line...)."""


class ClockRegression(ProfilewallError):
    """A timestamp went backwards where monotone time is required."""


class CompileError(ProfilewallError):
    """An interaction cannot be turned into a state machine."""


class DuplicateDevice(ProfilewallError):
    """A device MAC/IP or name is already registered with the engine."""


class BadParams(ProfilewallError):
    """Attack-generator parameters are inconsistent."""
