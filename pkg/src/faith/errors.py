"""Exception types shared across the toolkit."""


class VolumeFormatError(ValueError):
    """Raw volume file or its sidecar metadata is missing or malformed."""


class BorderSeedError(ValueError):
    """One or more seed positions cannot yield a complete environment."""

    def __init__(self, positions, env_size):
        self.positions = [tuple(int(c) for c in p) for p in positions]
        self.env_size = int(env_size)
        listing = ", ".join(str(p) for p in self.positions)
        super().__init__(
            f"{len(self.positions)} seed(s) too close to the volume border for a "
            f"complete {self.env_size}^3 environment: {listing}"
        )


class ProjectionError(RuntimeError):
    """Polytope projection hit its iteration cap before reaching feasibility."""

    def __init__(self, message, last_iterate=None, violation=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.violation = violation


class SolverError(RuntimeError):
    """Training iteration failed (cap exceeded or non-finite iterates)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics) if diagnostics else {}


class DegeneratePathError(ValueError):
    """Regularization path is undefined because features carry no target signal."""


class JobCancelled(RuntimeError):
    """Segmentation job was cancelled cooperatively at a slab boundary."""
