"""Checkpoint merging and rank-1 trajectory extrapolation (Extra-Merge)."""

__version__ = "0.1.0"

from .checkpoint_store import (  # noqa: E402
    CheckpointManifest,
    CheckpointRecord,
    read_checkpoint,
    stream_chunks,
    write_checkpoint,
    write_run,
)
from .extra_merge import (  # noqa: E402
    LineSearchConfig,
    LineSearchResult,
    adaptive_stride,
    line_search,
    run_extra_merge,
)
from .merge_engine import (  # noqa: E402
    MergeSchedule,
    ema_weights,
    sliding_pma,
    uniform_weights,
    weighted_average,
)
from .subspace_pca import (  # noqa: E402
    analyze_subspace,
    evr_spectrum,
    gram_pca,
    interpolation_scan,
    orient,
    project,
    top_direction,
)
