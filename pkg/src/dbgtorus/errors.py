"""Exception types raised across the package."""


class DBGError(Exception):
    """Base class; ``code`` is the machine-readable tag written by the CLI."""

    code = "error"


class NormalizationFailed(DBGError):
    code = "normalization_failed"


class SingularityFailure(DBGError):
    code = "singularity_failure"


class CapTooLarge(DBGError):
    code = "cap_too_large"


class StepRejected(DBGError):
    code = "step_rejected"


class EnergyOutOfRange(DBGError):
    code = "energy_out_of_range"


class OutsideCap(DBGError):
    code = "outside_cap"


class ChordTooShallow(DBGError):
    code = "chord_too_shallow"


class DegenerateCovector(DBGError):
    code = "degenerate_covector"


class TangentRay(DBGError):
    code = "tangent_ray"


class MissesBall(DBGError):
    code = "misses_ball"


class BranchConflict(DBGError):
    code = "branch_conflict"
