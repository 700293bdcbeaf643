"""Exception hierarchy shared by every module of the package."""


class ExportScoreError(ValueError):
    """Base class for all errors raised by exportscore."""

    #: short machine-readable tag, echoed by the command-line interface
    code = "error"


class SchemaError(ExportScoreError):
    code = "schema"


class DuplicateKeyError(ExportScoreError):
    code = "duplicate_key"


class ParseError(ExportScoreError):
    code = "parse"


class ParameterError(ExportScoreError):
    code = "parameter"


class IncompleteTimelineError(ExportScoreError):
    code = "incomplete_timeline"


class DegenerateOutcomeError(ExportScoreError):
    code = "degenerate_outcome"


class MissingDataError(ExportScoreError):
    code = "missing_data"


class UndefinedMetricError(ExportScoreError):
    code = "undefined_metric"


class AlignmentError(ExportScoreError):
    code = "alignment"


class CollinearityError(ExportScoreError):
    code = "collinearity"


class GeneratorSpecError(ExportScoreError):
    code = "generator_spec"


class ConfigError(ExportScoreError):
    code = "config"
