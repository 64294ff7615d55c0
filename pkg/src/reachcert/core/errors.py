"""
Exception hierarchy shared by every ReachCert module.
"""


class ReachCertError(Exception):
    """Base class for all ReachCert errors."""


class ContractViolationError(ReachCertError, ValueError):
    """A precondition (dimension, range, horizon) was not met by the caller."""


class ConfigError(ReachCertError):
    """Configuration file could not be parsed or failed validation."""


class BudgetExceededError(ReachCertError):
    """A covering or enumeration would exceed its configured budget."""


class EmptyInputError(ContractViolationError):
    """An operation that needs at least one sample received none."""


class NoBoundaryPointsError(ReachCertError):
    """The global certificate has no boundary-flagged nominal points."""


class CertificatePolicyMismatchError(ReachCertError):
    """A certificate was consulted for a policy it was not built for."""


class MPPIFailureError(ReachCertError):
    """Every sampled MPPI rollout produced a non-finite cost."""


class MissingCertificateError(ReachCertError):
    """A method that needs a certificate was run without one."""


class CertificateFormatError(ReachCertError):
    """A certificate file has an unknown version or inconsistent contents."""
