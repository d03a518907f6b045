"""Genetic algorithm over 15-gene shape+view genomes, plus a novelty-search mode.

A genome concatenates two superformula parameter sets and the three view
angles.  Each generation is evaluated (render then score), the best genomes
are copied through unchanged (elitism), roulette-wheel selection keeps a
survivor share, and mutated copies of roulette-selected parents fill the rest.
Every random draw flows through one seeded generator in a fixed order, so a
whole run is a pure function of its config; checkpoints serialize the
generator state verbatim for bit-exact resume.

Gene order (fixed, also the checkpoint order):
    r1.m, r1.a, r1.b, r1.n1, r1.n2, r1.n3,
    r2.m, r2.a, r2.b, r2.n1, r2.n2, r2.n3,
    elevation, azimuth, rotation
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, IO, Sequence

import numpy as np

from .geometry import SuperformulaParams, TriangleMesh, tessellate
from .render import ImageBuffer, RenderConfig, ViewAngles, render
from .scoring import (
    Fitness,
    NoveltyArchive,
    Scorer,
    archive_update,
    behavior_descriptor,
    novelty,
    score,
)

__all__ = [
    "GENE_NAMES",
    "N_GENES",
    "Genome",
    "GAConfig",
    "GenerationRecord",
    "EvolutionState",
    "InvalidConfigError",
    "EmptyPopulationError",
    "default_gene_bounds",
    "init_population",
    "weighted_choice",
    "shifted_weights",
    "roulette_select",
    "mutate",
    "step_generation",
    "run_evolution",
    "run_novelty_search",
    "genome_mesh",
    "render_genome",
    "make_evaluator",
    "rng_state_digest",
    "record_to_dict",
    "write_checkpoint_line",
    "load_checkpoint",
    "resume_state",
]

GENE_NAMES = (
    "r1.m", "r1.a", "r1.b", "r1.n1", "r1.n2", "r1.n3",
    "r2.m", "r2.a", "r2.b", "r2.n1", "r2.n2", "r2.n3",
    "elevation", "azimuth", "rotation",
)
N_GENES = 15


class InvalidConfigError(ValueError):
    """GA configuration violates its invariants."""


class EmptyPopulationError(ValueError):
    """Selection was asked to draw from an empty population."""


def default_gene_bounds() -> np.ndarray:
    """Per-gene [lo, hi] covering a wide shape variety without singular regions.

    a, b, n1 are floored at 0.1 so divisors and the outer exponent stay far
    from infinities at trig zeros; angles span one full turn.
    """

    pi = math.pi
    shape = [
        (0.0, 20.0),   # m
        (0.1, 5.0),    # a
        (0.1, 5.0),    # b
        (0.1, 20.0),   # n1
        (0.0, 20.0),   # n2
        (0.0, 20.0),   # n3
    ]
    angles = [(-pi, pi)] * 3
    return np.array(shape + shape + angles, dtype=np.float64)


@dataclass(frozen=True)
class Genome:
    """One individual: two superformula instances plus the view angles."""

    r1: SuperformulaParams
    r2: SuperformulaParams
    view: ViewAngles

    def as_array(self) -> np.ndarray:
        return np.array(
            self.r1.as_tuple() + self.r2.as_tuple() + self.view.as_tuple(),
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, genes: Sequence[float]) -> "Genome":
        arr = np.asarray(genes, dtype=np.float64)
        if arr.shape != (N_GENES,):
            raise ValueError(f"genome needs exactly {N_GENES} genes, got shape {arr.shape}")
        return cls(
            r1=SuperformulaParams(*arr[0:6]),
            r2=SuperformulaParams(*arr[6:12]),
            view=ViewAngles(elevation=arr[12], azimuth=arr[13], rotation=arr[14]),
        )


@dataclass
class GAConfig:
    population_size: int = 40
    mutation_rate: float = 0.1
    selection_rate: float = 0.5
    generations: int = 30
    rng_seed: int = 0
    gene_bounds: np.ndarray = field(default_factory=default_gene_bounds)
    elitism: int = 1

    def __post_init__(self) -> None:
        self.gene_bounds = np.asarray(self.gene_bounds, dtype=np.float64)

    def validate(self) -> None:
        if self.population_size < 2:
            raise InvalidConfigError("population_size must be >= 2")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise InvalidConfigError("mutation_rate must be in [0, 1]")
        if not 0.0 < self.selection_rate <= 1.0:
            raise InvalidConfigError("selection_rate must be in (0, 1]")
        if self.selection_rate * self.population_size < 1.0:
            raise InvalidConfigError("selection_rate * population_size must be >= 1")
        if self.generations < 0:
            raise InvalidConfigError("generations must be >= 0")
        if self.elitism < 0:
            raise InvalidConfigError("elitism must be >= 0")
        if self.elitism + self.survivor_count > self.population_size:
            raise InvalidConfigError(
                "elitism plus the survivor share exceeds the population size"
            )
        if self.gene_bounds.shape != (N_GENES, 2):
            raise InvalidConfigError(f"gene_bounds must have shape ({N_GENES}, 2)")
        if not np.all(np.isfinite(self.gene_bounds)):
            raise InvalidConfigError("gene_bounds must be finite")
        if np.any(self.gene_bounds[:, 0] > self.gene_bounds[:, 1]):
            raise InvalidConfigError("gene_bounds lows must not exceed highs")

    @property
    def survivor_count(self) -> int:
        return math.ceil(self.selection_rate * self.population_size)

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "mutation_rate": self.mutation_rate,
            "selection_rate": self.selection_rate,
            "generations": self.generations,
            "rng_seed": self.rng_seed,
            "elitism": self.elitism,
            "gene_bounds": self.gene_bounds.tolist(),
        }


@dataclass
class GenerationRecord:
    index: int
    scored: list
    best: tuple
    rng_state_digest: str
    best_index: int = 0


@dataclass
class EvolutionState:
    """Mutable loop state: current population, generation index, RNG, archive."""

    population: list
    generation: int
    rng: np.random.Generator
    archive: NoveltyArchive | None = None


def init_population(config: GAConfig, rng: np.random.Generator | None = None) -> list:
    """Draw population_size genomes uniformly within the gene bounds.

    Genes are drawn genome by genome in gene order from the provided
    generator (or a fresh one seeded with config.rng_seed), so the result is
    a pure function of the seed.
    """

    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    lo, hi = config.gene_bounds[:, 0], config.gene_bounds[:, 1]
    return [Genome.from_array(rng.uniform(lo, hi)) for _ in range(config.population_size)]


def weighted_choice(weights, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample `count` indices with replacement, proportional to weights."""

    w = np.asarray(weights, dtype=np.float64)
    if len(w) == 0:
        raise EmptyPopulationError("cannot select from an empty population")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with a positive sum")
    return rng.choice(len(w), size=count, replace=True, p=w / w.sum())


def _effective_raws(scored) -> np.ndarray:
    """Raw fitnesses with failures mapped to (minimum valid raw) - 1.

    When nothing scored validly, everyone gets the same weight and selection
    degrades to uniform rather than aborting the run.
    """

    raws = np.array(
        [fit.raw if fit.valid else np.nan for _, fit in scored], dtype=np.float64
    )
    invalid = np.isnan(raws)
    if invalid.all():
        return np.zeros(len(raws))
    raws[invalid] = raws[~invalid].min() - 1.0
    return raws


def shifted_weights(raws) -> np.ndarray:
    """Roulette weights: w_i = raw_i - min + eps, eps = 1e-6 * (max - min + 1).

    The shift keeps every weight positive for arbitrarily negative scores;
    equal raws collapse to equal weights, i.e. uniform selection.
    """

    raws = np.asarray(raws, dtype=np.float64)
    low, high = raws.min(), raws.max()
    eps = 1e-6 * (high - low + 1.0)
    return raws - low + eps


def roulette_select(scored, count: int, rng: np.random.Generator) -> list:
    """Fitness-proportionate selection with replacement over shifted weights."""

    if not scored:
        raise EmptyPopulationError("cannot select from an empty population")
    if count < 1:
        return []
    weights = shifted_weights(_effective_raws(scored))
    picks = weighted_choice(weights, count, rng)
    return [scored[i][0] for i in picks]


def mutate(genome: Genome, config: GAConfig, rng: np.random.Generator) -> Genome:
    """Gaussian per-gene mutation, clamped to the gene bounds.

    Each gene flips independently with probability mutation_rate and, when it
    does, receives noise with sigma = 10% of its range.  The mask and the
    noise are drawn for all 15 genes on every call so the generator stream
    does not depend on which genes happened to mutate.
    """

    lo, hi = config.gene_bounds[:, 0], config.gene_bounds[:, 1]
    genes = genome.as_array()
    mask = rng.random(N_GENES) < config.mutation_rate
    noise = rng.normal(0.0, 1.0, N_GENES) * 0.1 * (hi - lo)
    mutated = np.clip(np.where(mask, genes + noise, genes), lo, hi)
    return Genome.from_array(mutated)


def rng_state_digest(rng: np.random.Generator) -> str:
    state = rng.bit_generator.state
    blob = json.dumps(state, sort_keys=True, default=int).encode()
    return hashlib.sha256(blob).hexdigest()


def _breed(scored, config: GAConfig, rng: np.random.Generator) -> list:
    """Next population: elites, then roulette survivors, then mutated offspring.

    RNG order per generation is fixed: survivor draw, parent draw, then one
    mask+noise draw per offspring.
    """

    eff = _effective_raws(scored)
    elite_order = np.argsort(-eff, kind="stable")
    elites = [scored[i][0] for i in elite_order[: config.elitism]]
    n_survivors = config.survivor_count
    n_offspring = config.population_size - len(elites) - n_survivors
    survivors = roulette_select(scored, n_survivors, rng)
    parents = roulette_select(scored, n_offspring, rng)
    offspring = [mutate(p, config, rng) for p in parents]
    return elites + survivors + offspring


def step_generation(
    state: EvolutionState,
    evaluate_population: Callable[[list], list],
    config: GAConfig,
) -> GenerationRecord:
    """Evaluate the current population, record it, and breed the next one.

    The record's RNG digest is taken after evaluation and before breeding;
    a checkpoint written from it resumes by re-running the breeding step.
    """

    population = state.population
    if len(population) != config.population_size:
        raise InvalidConfigError(
            f"population size drifted: {len(population)} != {config.population_size}"
        )
    fitnesses = evaluate_population(population)
    scored = list(zip(population, fitnesses))
    eff = _effective_raws(scored)
    best_index = int(np.argmax(eff))
    record = GenerationRecord(
        index=state.generation,
        scored=scored,
        best=scored[best_index],
        rng_state_digest=rng_state_digest(state.rng),
        best_index=best_index,
    )
    state.population = _breed(scored, config, state.rng)
    state.generation += 1
    return record


def _wrap_evaluator(evaluate: Callable[[Genome], Fitness]) -> Callable[[list], list]:
    def evaluate_population(population: list) -> list:
        results = []
        for genome in population:
            try:
                fit = evaluate(genome)
            except Exception:
                fit = Fitness.invalid()
            results.append(fit)
        return results

    return evaluate_population


def _run_loop(
    state: EvolutionState,
    evaluate_population: Callable[[list], list],
    config: GAConfig,
    checkpoint: IO[str] | None,
    on_generation: Callable[[GenerationRecord], None] | None,
) -> list:
    """Shared loop body: `generations` evaluated generations (at least one)."""

    records = []
    remaining = max(1, config.generations) - state.generation
    for _ in range(remaining):
        record = step_generation(state, evaluate_population, config)
        if checkpoint is not None:
            write_checkpoint_line(checkpoint, record, config, state)
        if on_generation is not None:
            on_generation(record)
        records.append(record)
    return records


def run_evolution(
    config: GAConfig,
    evaluate: Callable[[Genome], Fitness],
    *,
    checkpoint: IO[str] | None = None,
    on_generation: Callable[[GenerationRecord], None] | None = None,
    state: EvolutionState | None = None,
) -> GenerationRecord:
    """Run the objective-driven GA; returns the last generation's record.

    `evaluate` maps a genome to a Fitness (render + score); evaluator
    exceptions become invalid fitnesses and never abort the run.  With
    generations=0 the initial population is still evaluated once.  Passing
    a `state` (from resume_state) continues a checkpointed run on the same
    generator stream.
    """

    config.validate()
    if state is None:
        rng = np.random.default_rng(config.rng_seed)
        state = EvolutionState(init_population(config, rng), 0, rng)
    records = _run_loop(state, _wrap_evaluator(evaluate), config, checkpoint, on_generation)
    return records[-1] if records else None


def run_novelty_search(
    config: GAConfig,
    render_fn: Callable[[Genome], ImageBuffer] | None = None,
    *,
    archive: NoveltyArchive | None = None,
    render_config: RenderConfig = RenderConfig(),
    resolution_theta: int = 64,
    resolution_phi: int = 64,
    checkpoint: IO[str] | None = None,
    on_generation: Callable[[GenerationRecord], None] | None = None,
    state: EvolutionState | None = None,
) -> tuple:
    """Novelty-search variant: fitness is archive novelty of the rendered view.

    Runs the same generational loop with fitness = mean k-nearest-neighbor
    distance of each individual's behavior descriptor against the archive
    plus the current population; every evaluated descriptor is then offered
    to the archive.  Returns (archive, records).
    """

    config.validate()
    if render_fn is None:
        render_fn = lambda g: render_genome(g, render_config, resolution_theta, resolution_phi)
    if state is None:
        rng = np.random.default_rng(config.rng_seed)
        state = EvolutionState(init_population(config, rng), 0, rng)
    if state.archive is None:
        state.archive = archive if archive is not None else NoveltyArchive()
    archive = state.archive

    def evaluate_population(population: list) -> list:
        descriptors = []
        for genome in population:
            try:
                descriptors.append(behavior_descriptor(render_fn(genome)))
            except Exception:
                descriptors.append(None)
        candidates = [d for d in descriptors if d is not None]
        novelties = [
            None if d is None else novelty(archive, candidates, d) for d in descriptors
        ]
        for d, nov in zip(descriptors, novelties):
            if d is not None:
                archive_update(archive, d, nov)
        return [
            Fitness.invalid() if nov is None else Fitness(raw=nov) for nov in novelties
        ]

    records = _run_loop(state, evaluate_population, config, checkpoint, on_generation)
    return archive, records


# ----------------------------------------------------------------------
# Render pipeline glue
# ----------------------------------------------------------------------

def genome_mesh(
    genome: Genome, resolution_theta: int = 64, resolution_phi: int = 64
) -> TriangleMesh:
    return tessellate(genome.r1, genome.r2, resolution_theta, resolution_phi)


def render_genome(
    genome: Genome,
    config: RenderConfig = RenderConfig(),
    resolution_theta: int = 64,
    resolution_phi: int = 64,
) -> ImageBuffer:
    mesh = genome_mesh(genome, resolution_theta, resolution_phi)
    return render(mesh, genome.view, config).image


def make_evaluator(
    scorer: Scorer,
    render_config: RenderConfig = RenderConfig(),
    resolution_theta: int = 64,
    resolution_phi: int = 64,
) -> Callable[[Genome], Fitness]:
    """Genome -> Fitness: tessellate, render under the genome's view, score."""

    def evaluate(genome: Genome) -> Fitness:
        image = render_genome(genome, render_config, resolution_theta, resolution_phi)
        return score(scorer, image)

    return evaluate


# ----------------------------------------------------------------------
# Checkpointing
# ----------------------------------------------------------------------

def record_to_dict(
    record: GenerationRecord, config: GAConfig, state: EvolutionState
) -> dict:
    """JSON form of one generation: genes, fitness, verbatim RNG state.

    Written right after the step that bred the next population, so the entry
    carries both the scored generation and everything resume needs to pick
    up at the next evaluation: the bred population and the post-breeding
    generator state.
    """

    entry = {
        "generation": record.index,
        "config": config.to_dict(),
        "genomes": [genome.as_array().tolist() for genome, _ in record.scored],
        "fitness": [{"raw": fit.raw, "valid": fit.valid} for _, fit in record.scored],
        "best_index": record.best_index,
        "next_population": [g.as_array().tolist() for g in state.population],
        "rng_state": state.rng.bit_generator.state,
        "rng_state_digest": record.rng_state_digest,
    }
    if state.archive is not None:
        entry["archive"] = [d.tolist() for d in state.archive.descriptors]
        entry["archive_config"] = {
            "dim": state.archive.dim,
            "k": state.archive.k,
            "add_threshold": state.archive.add_threshold,
        }
    return entry


def write_checkpoint_line(
    sink: IO[str], record: GenerationRecord, config: GAConfig, state: EvolutionState
) -> None:
    sink.write(json.dumps(record_to_dict(record, config, state), default=int))
    sink.write("\n")
    sink.flush()


def load_checkpoint(path) -> list:
    """All checkpoint entries of a JSON-lines stream, in order."""

    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def resume_state(entry: dict, config: GAConfig) -> EvolutionState:
    """Rebuild loop state from a checkpoint entry.

    Restores the already-bred next population and the verbatim generator
    state, so the continuation consumes the identical random stream an
    uninterrupted run would have.
    """

    rng = np.random.default_rng()
    rng.bit_generator.state = entry["rng_state"]
    population = [Genome.from_array(genes) for genes in entry["next_population"]]
    archive = None
    if "archive" in entry:
        cfg = entry.get(
            "archive_config", {"dim": 256, "k": 15, "add_threshold": 0.03}
        )
        archive = NoveltyArchive(
            dim=cfg["dim"], k=cfg["k"], add_threshold=cfg["add_threshold"]
        )
        archive.descriptors = [np.asarray(d, dtype=np.float64) for d in entry["archive"]]
    return EvolutionState(
        population=population,
        generation=entry["generation"] + 1,
        rng=rng,
        archive=archive,
    )
