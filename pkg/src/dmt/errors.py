"""Exception hierarchy. Every error the toolkit raises derives from DmtError
so the CLI can catch one type and exit with a single diagnostic line."""


class DmtError(Exception):
    pass


class CorpusError(DmtError):
    pass


class ConfigError(DmtError):
    pass


class VocabError(DmtError):
    pass


class ShapeError(DmtError):
    pass


class CheckpointError(DmtError):
    pass


class FingerprintError(DmtError):
    pass


class DivergenceError(DmtError):
    pass


class ScoringError(DmtError):
    pass


class ExperimentError(DmtError):
    pass
