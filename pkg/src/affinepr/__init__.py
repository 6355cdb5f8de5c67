"""Generalized affine phase retrieval: y_j = ||M_j^* x + b_j||^2.

Build ensembles that reach the minimal measurement counts, recover signals
from their measurements, and test injectivity with collisions, margins and
rank-2 lifted certificates.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Ensemble,
    Field,
    FieldMismatch,
    MeasurementPair,
    lift_measurement,
    realify_pair,
    validate_ensemble,
)
from .forward import gram, jacobian, jacobian_rank, margin, measure, polarization_gap  # noqa: E402
from .constructions import (  # noqa: E402
    OffsetError,
    default_spanning_offsets,
    min_measurements,
    perturbed_ensemble,
    random_ensemble,
    tight_count,
    tight_ensemble,
)
from .recovery import (  # noqa: E402
    InconsistentMeasurements,
    InconsistentMeasurementsWarning,
    SingularOffsetsError,
    block_recover,
    lsq_recover,
    tight_recover,
)
from .injectivity import (  # noqa: E402
    CertificateInvalid,
    CollisionWitness,
    DeficiencyError,
    InjectivityReport,
    SearchOptions,
    certificate_from_collision,
    collision_from_certificate,
    collision_search,
    deficiency_collision,
    injectivity_report,
    verify_certificate,
)
from .serialization import deserialize_ensemble, serialize_ensemble  # noqa: E402
