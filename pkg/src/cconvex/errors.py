"""Exception hierarchy shared by all cconvex modules.

Every failure mode that callers are expected to catch has its own class so
that tests can assert on the exact condition rather than on message text.
"""

from __future__ import annotations


class CConvexError(Exception):
    """Base class for all package-specific failures."""


class BadConfig(CConvexError, ValueError):
    """Malformed configuration, expression, or argument combination."""


# --- cost evaluation -------------------------------------------------------

class DiagonalSingularity(CConvexError):
    """Point pair closer to the diagonal than the configured margin."""


class DomainViolation(CConvexError):
    """Point outside the declared source or target domain."""


class NumericalInstability(CConvexError):
    """Cross-validation between derivative paths exceeded tolerance."""


class TwistViolation(CConvexError):
    """Two distinct targets produced (numerically) the same covector."""


class NondegeneracyViolation(CConvexError):
    """Mixed second-derivative matrix numerically singular."""


# --- c-exponential / frames ------------------------------------------------

class CExpDivergence(CConvexError):
    """Newton solve for the c-exponential failed to converge."""


class OutOfDomain(CConvexError):
    """A solved point left the declared domain."""


class SingularFrame(CConvexError):
    """Dual frame system is singular (nondegeneracy fails at the anchor)."""


class ChartDegenerate(CConvexError):
    """Valley chart Jacobian singular at the expansion point."""


# --- classification --------------------------------------------------------

class InconclusiveClassification(CConvexError):
    """Minimization restarts disagree; verdict withheld."""


# --- potentials / transport -------------------------------------------------

class SolverStall(CConvexError):
    """Dual ascent stopped making progress above tolerance."""

    def __init__(self, message: str, worst_residual: float | None = None):
        super().__init__(message)
        self.worst_residual = worst_residual


class NotDifferentiable(CConvexError):
    """More than one active branch at the queried point."""


class EmptyContact(CConvexError):
    """Anchor point itself fails the supporting-function membership test."""


class HypothesisUnmet(CConvexError):
    """A geometric precondition (interiority, membership) does not hold."""


class DegenerateHull(CConvexError):
    """Chart image affinely degenerate below the requested operation."""


# --- property checks --------------------------------------------------------

class MaxPrincipleViolation(CConvexError):
    """Interior maximum above endpoint values on a c-segment."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class ConvexityViolation(CConvexError):
    """Chart midpoint left the sublevel set."""


class NotALocalMin(CConvexError):
    """Candidate point is not a touching local minimum."""


# --- construction harness ----------------------------------------------------

class NonpositiveF(CConvexError):
    """Slice minimum non-positive: the slice meets the contact set."""


class UnstableEstimate(CConvexError):
    """Monte Carlo confidence interval too wide for the requested check."""


class BarrierViolation(CConvexError):
    """Supporting-function barrier exceeded the potential on the boundary."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness
