"""Exception types shared across the package."""


class GeowarpError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(GeowarpError, ValueError):
    """Array shape or dimension mismatch."""


class ContractError(GeowarpError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(GeowarpError, ValueError):
    """A point lies outside the domain of a manifold or curve."""


class ConnectivityError(GeowarpError, ValueError):
    """A neighborhood graph is disconnected."""

    def __init__(self, component_sizes):
        self.component_sizes = list(component_sizes)
        super().__init__(
            f"k-NN graph is disconnected; component sizes: {self.component_sizes}"
        )


class TrainingDivergedError(GeowarpError, RuntimeError):
    """Loss or gradients became non-finite during training."""


class NondeterminismError(GeowarpError, RuntimeError):
    """An operation requiring a deterministic map was called in train mode."""


class ConditioningError(GeowarpError, RuntimeError):
    """A linear system is numerically singular or not positive definite."""


class SchemaVersionError(GeowarpError, ValueError):
    """A checkpoint file has an unsupported schema version."""


class OffManifoldEndpointError(GeowarpError, ValueError):
    """A geodesic endpoint scores above the on-manifold threshold."""


class InsufficientDataError(GeowarpError, ValueError):
    """Too few points remain for a statistic to be meaningful."""


class UndefinedCorrelationError(GeowarpError, ValueError):
    """Pearson correlation of a zero-variance vector is undefined."""


class DegenerateJacobianError(GeowarpError, RuntimeError):
    """Jacobian rank fell below the requested intrinsic dimension."""
