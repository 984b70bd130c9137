"""Exception types raised across the package."""


class AmpLocoError(Exception):
    pass


class NonFiniteState(AmpLocoError, FloatingPointError):
    """Integration produced NaN/inf; the step was unstable."""


class InvalidSpec(AmpLocoError, ValueError):
    pass


class Unreachable(AmpLocoError, ValueError):
    """Foot target outside the reachable annulus of a two-link leg."""


class InfeasibleThrust(AmpLocoError, ValueError):
    pass


class EmptyDataset(AmpLocoError, ValueError):
    pass


class SchemaMismatch(AmpLocoError, ValueError):
    pass


class CorruptFile(AmpLocoError, ValueError):
    pass


class RankDeficient(AmpLocoError, ValueError):
    pass


class DimensionMismatch(AmpLocoError, ValueError):
    pass


class EmptyBatch(AmpLocoError, ValueError):
    pass


class InsufficientSamples(AmpLocoError, ValueError):
    pass


class SteppedDoneEnv(AmpLocoError, RuntimeError):
    pass


class CheckpointMismatch(AmpLocoError, ValueError):
    pass


class ConfigError(AmpLocoError, ValueError):
    """Invalid run configuration; ``line`` is 1-based when known."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = ""
        if field is not None:
            where += f"{field}: "
        if line is not None:
            where = f"line {line}: " + where
        super().__init__(where + message)
