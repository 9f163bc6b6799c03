"""Exception types shared by all gllab modules."""


class GLLabError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(GLLabError, ValueError):
    """A point lies outside the domain of a function, or domains disagree."""


class SmoothnessError(GLLabError, ValueError):
    """A derivative was requested at a point where the data is not that smooth."""


class ConstructionError(GLLabError, ValueError):
    """Malformed input to a constructor (breakpoints, pieces, radii)."""


class ParameterError(GLLabError, ValueError):
    """A numeric parameter is outside its admissible range."""


class GluingError(GLLabError, ValueError):
    """Two warping functions cannot be glued smoothly."""


class AxisError(GLLabError, ValueError):
    """A curve or jet touches the rotation axis where it must not."""


class GeometryError(GLLabError, ValueError):
    """A geometric sub-construction (e.g. an axis cap) has no solution."""


class SolverError(GLLabError, RuntimeError):
    """A numerical solver or root finder did not converge."""


class OracleError(GLLabError, RuntimeError):
    """The finite-difference curvature oracle cannot produce a value."""


class InfeasibleError(GLLabError, ValueError):
    """A chain of constant selections has no admissible solution.

    ``constraint`` names the inequality that failed so callers (and the CLI)
    can report it verbatim.
    """

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        msg = f"infeasible: {constraint}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class WarpingError(GLLabError, ValueError):
    """A warping function is not positive where it must be."""


class SingularMetricError(GLLabError, ArithmeticError):
    """A metric matrix cannot be inverted."""
