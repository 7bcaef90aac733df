"""Exception and warning types shared across the package."""


class Aimd1dError(Exception):
    """Base class for all package-specific failures."""


class UnresolvedGaussian(Aimd1dError):
    """Pseudocharge width too small for the grid to resolve.

    Raised when sigma < 3 * grid spacing; the smeared cores would alias
    and forces from the analytic gradient become meaningless.
    """

    def __init__(self, sigma, spacing):
        self.sigma = sigma
        self.spacing = spacing
        super().__init__(
            f"pseudocharge width sigma={sigma:g} under-resolved on grid "
            f"spacing h={spacing:g} (need sigma >= 3h)"
        )


class EigensolveFailure(Aimd1dError):
    """Dense symmetric eigensolver did not return a usable spectrum."""


class NotConverged(Aimd1dError):
    """Self-consistency loop hit its iteration cap above tolerance."""

    def __init__(self, iterations, residual, tol):
        self.iterations = iterations
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"SCF not converged after {iterations} iterations: "
            f"residual {residual:.3e} > tol {tol:.3e}"
        )


class NonFinite(Aimd1dError):
    """A propagated quantity left the representable range (nan or inf)."""

    def __init__(self, step, what="state"):
        self.step = step
        self.what = what
        super().__init__(f"non-finite {what} at step {step}")


class NotAtEquilibrium(Aimd1dError):
    """Finite-difference curvature requested away from a force-free geometry."""

    def __init__(self, max_force):
        self.max_force = max_force
        super().__init__(
            f"residual force {max_force:.3e} too large for curvature "
            "differencing; relax the geometry first"
        )


class UnstableK(Aimd1dError):
    """Linearized SCF error-contraction operator has a non-positive mode.

    Frequency corrections divide by this operator, so a zero or negative
    eigenvalue on the physically reachable (charge-neutral) subspace makes
    the perturbative analysis meaningless.
    """

    def __init__(self, lambda_min):
        self.lambda_min = lambda_min
        super().__init__(
            f"error-contraction operator has lambda_min={lambda_min:.3e} <= 0 "
            "on the neutral subspace"
        )


class SingularGram(Aimd1dError):
    """Displacement covariance is numerically rank zero; no fit possible."""


class GridMismatch(Aimd1dError):
    """Two series to be compared do not share a time or space grid."""


class ConstraintDivergence(Aimd1dError):
    """Orthonormality projection iteration failed to settle."""

    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"constraint iteration stuck at residual {residual:.3e} "
            f"after {iterations} sweeps"
        )


class OddAtomCount(Aimd1dError):
    """Alternating-velocity launch needs an even number of atoms."""

    def __init__(self, n_atoms):
        self.n_atoms = n_atoms
        super().__init__(
            f"alternating pattern undefined for {n_atoms} atoms (odd count)"
        )


class Escaped(Aimd1dError):
    """Anharmonic orbit left the metastable well."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"orbit escaped the well at t={t:g}")


class ConfigError(Aimd1dError):
    """Malformed or inconsistent run configuration."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"field '{field}': "
        super().__init__(prefix + message)


class ResonanceWarning(UserWarning):
    """Density oscillator frequency uncomfortably close to a phonon band."""


class LargeStepWarning(UserWarning):
    """Time step large enough that the explicit update is near its limit."""
