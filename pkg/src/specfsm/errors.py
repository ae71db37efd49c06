"""Exception hierarchy shared by the pipeline stages."""

from __future__ import annotations


class SpecFsmError(Exception):
    """Base class for every error raised by this package."""


# preprocessing
class EmptyAfterClean(SpecFsmError):
    pass


class NoSectionsFound(SpecFsmError):
    pass


# fsm model
class PseudoState(SpecFsmError):
    def __init__(self, name: str):
        super().__init__(f"pseudo-state not allowed as an FSM state: {name!r}")
        self.name = name


class AmbiguousSubstate(SpecFsmError):
    def __init__(self, candidate: str, matches: list[str]):
        super().__init__(
            f"{candidate!r} abbreviates several catalog states: {', '.join(matches)}"
        )
        self.candidate = candidate
        self.matches = matches


class SchemaError(SpecFsmError):
    """A JSON artifact does not follow the expected schema."""


# prompting / extraction
class EmptyCatalog(SpecFsmError):
    pass


# providers
class ProviderError(SpecFsmError):
    """Base for provider failures; carries the exchange record of the failed call."""

    def __init__(self, message: str, exchange=None):
        super().__init__(message)
        self.exchange = exchange


class ProviderUnavailable(ProviderError):
    pass


class AuthFailure(ProviderError):
    pass


class Timeout(ProviderError):
    pass


class FixtureMiss(ProviderError):
    def __init__(self, sha: str, path: str, exchange=None):
        super().__init__(f"no replay fixture for prompt hash {sha} (expected {path})", exchange)
        self.sha = sha
        self.path = path


class ConfigError(SpecFsmError):
    pass
