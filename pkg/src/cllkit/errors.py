"""Exception and warning types shared across the package."""

from __future__ import annotations


class CllkitError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CllkitError, ValueError):
    """An argument violates a documented precondition."""


class InvalidDistribution(InvalidArgument):
    """A token distribution fails its normalization or range invariants."""


class UnsupportedToken(CllkitError, KeyError):
    """Token id falls outside the reported support of a truncated distribution.

    The provider should be re-queried with a wider support, or the record
    skipped by caller policy.
    """


class EmptySequence(InvalidArgument):
    """An operation that needs at least one record received none."""


class DivergentDrift(CllkitError, ArithmeticError):
    """Shift distribution places mass where the reference has exact zero
    probability; the expected drift is -inf."""


class DegenerateVariance(InvalidArgument):
    """A variance needed as a denominator is zero or undefined."""


class SupportMismatch(InvalidArgument):
    """Two distributions cannot be combined because their supports are
    incompatible (different vocabularies or disjoint truncated supports)."""


class ProviderUnavailable(CllkitError):
    """Transport-level failure talking to a remote provider; retryable."""


class ProtocolError(CllkitError):
    """A remote provider returned a payload that violates the wire contract."""


class AnalysisOverrun(CllkitError):
    """Analysis generation never produced the boundary marker within the
    configured cap; the item should be skipped with a diagnostic."""


class InvalidState(CllkitError):
    """Operation called on a session that cannot accept it (e.g. stepping a
    finished decode session)."""


class TokenizationError(InvalidArgument):
    """Text contains units unknown to the tokenizer."""


class ApproximateVariance(Warning):
    """Emitted when a variance is estimated from a truncated support."""
