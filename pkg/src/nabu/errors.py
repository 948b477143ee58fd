"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
error classes to distinct process exit statuses.
"""


class NabuError(Exception):
    exit_code = 1


class MalformedTriple(NabuError):
    exit_code = 10

    def __init__(self, line, reason="expected 3 non-empty fields", path=None):
        self.line = line
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"malformed triple at {where}: {reason}")


class EmptyGraph(NabuError):
    exit_code = 11


class UnknownLanguage(NabuError):
    exit_code = 12


class ShapeMismatch(NabuError, ValueError):
    exit_code = 20


class MaskedAllError(NabuError):
    exit_code = 21


class NonFiniteGradient(NabuError):
    exit_code = 22


class IdOutOfRange(NabuError, IndexError):
    exit_code = 23


class CorpusTooSmall(NabuError):
    exit_code = 30


class MissingLanguageData(NabuError):
    exit_code = 40


class ConfigError(NabuError):
    exit_code = 41


class ConfigHashMismatch(NabuError):
    exit_code = 50


class CorruptCheckpoint(NabuError):
    exit_code = 51


class LengthMismatch(NabuError, ValueError):
    exit_code = 60


class GenerationRefused(NabuError):
    exit_code = 70


class ManifestMismatch(NabuError):
    exit_code = 80
