"""Exception hierarchy shared across the package.

Every error class carries a distinct process exit code so CLI failures are
machine-distinguishable. Codes start at 10; argparse owns 2.
"""

from __future__ import annotations


class BxrlError(Exception):
    """Base class for all package errors."""

    exit_code = 9


class InvalidConfig(BxrlError):
    exit_code = 10


class IoError(BxrlError):
    exit_code = 11


class ParseError(BxrlError):
    exit_code = 12


class SpecMismatch(BxrlError):
    exit_code = 13


class EmptyDataset(BxrlError):
    exit_code = 14


class ShapeError(BxrlError):
    exit_code = 15


class NonScalarLoss(BxrlError):
    exit_code = 16


class DivergenceError(BxrlError):
    exit_code = 17


class DimMismatch(BxrlError):
    exit_code = 18


class InvalidLambda(BxrlError):
    exit_code = 19


class EmptyTokens(BxrlError):
    exit_code = 20


class ConvergenceError(BxrlError):
    exit_code = 21


class TooFewNodes(BxrlError):
    exit_code = 22


class DegenerateEmbedding(BxrlError):
    exit_code = 23


class UnknownToken(BxrlError):
    exit_code = 24


class InvalidWindow(BxrlError):
    exit_code = 25


class EmptySegments(BxrlError):
    exit_code = 26


class InvalidDistribution(BxrlError):
    exit_code = 27


class SingleCluster(BxrlError):
    exit_code = 28


class CoincidentCentroids(BxrlError):
    exit_code = 29


class LengthMismatch(BxrlError):
    exit_code = 30


class UnsupportedVersion(BxrlError):
    exit_code = 31


class StaleArtifact(BxrlError):
    exit_code = 32


class NotFittedError(BxrlError):
    exit_code = 33
