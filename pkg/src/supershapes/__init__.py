"""Evolve superformula surfaces and viewing angles against image scorers."""

from .geometry import (
    InvalidParamsError,
    InvalidResolutionError,
    SuperformulaParams,
    TriangleMesh,
    UNIT_SPHERE_PARAMS,
    export_obj,
    radius2d,
    save_obj,
    surface_point,
    tessellate,
)
from .render import (
    ImageBuffer,
    RenderConfig,
    RenderResult,
    ViewAngles,
    camera_matrix,
    encode_png,
    render,
    save_png,
)
from .scoring import (
    BrightnessScorer,
    CoverageTargetScorer,
    DimensionMismatchError,
    Fitness,
    NoveltyArchive,
    RemoteScorer,
    ScoreRequest,
    Scorer,
    SilhouetteFractionScorer,
    SilhouetteIoUScorer,
    archive_update,
    behavior_descriptor,
    check_health,
    novelty,
    remote_score,
    score,
)
from .evolve import (
    GAConfig,
    GENE_NAMES,
    GenerationRecord,
    Genome,
    default_gene_bounds,
    genome_mesh,
    init_population,
    load_checkpoint,
    make_evaluator,
    mutate,
    render_genome,
    roulette_select,
    run_evolution,
    run_novelty_search,
    step_generation,
    weighted_choice,
)

__version__ = "0.1.0"
