"""Exception hierarchy shared by the pipeline stages."""


class PramanaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PramanaError):
    """Invalid configuration. ``violations`` lists every problem found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ManifestError(PramanaError):
    """Malformed manifest row or file."""


class AdapterError(PramanaError):
    """An external transcriber or embedding provider misbehaved."""


class AdapterUnavailable(AdapterError):
    """The adapter cannot be reached or spawned at all (fatal for a batch)."""
