"""Expected generation time with and without early abortion.

Every attempt draws a fresh seed.  A truly complete attempt costs a full run
whether the detector accepts it (TP) or wrongly rejects it (FN); a rejected
complete attempt is discarded and the loop continues.  An incomplete attempt
costs only the prefix up to the critical timestep when any object is caught
as absent (TN), otherwise a full run (FP).  The loop ends on the first TP.

Baseline: run to completion and check afterwards, so the expected cost is
``unit_time / p_complete``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, ParameterError
from .gating import DetectorProfile

# Critical timesteps at which intermediate generation state is recorded.
CT_GRID: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 18, 20, 25, 40)

# Simulations per independent substream; fixed so results do not depend on thread count.
CHUNK_SIZE = 10_000


@dataclass(frozen=True)
class CostModelParams:
    p_complete: float
    profile: DetectorProfile
    num_objects: int = 1
    critical_timestep: int = 25
    total_steps: int = 50
    unit_time: float = 1.0
    check_overhead: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.p_complete <= 1.0:
            raise ParameterError(f"p_complete must lie in (0, 1], got {self.p_complete}")
        if self.num_objects < 1:
            raise ParameterError(f"num_objects must be >= 1, got {self.num_objects}")
        if self.total_steps < 1:
            raise ParameterError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.critical_timestep <= self.total_steps:
            raise ParameterError(
                f"critical_timestep must lie in [0, {self.total_steps}], got {self.critical_timestep}"
            )
        if self.unit_time <= 0:
            raise ParameterError(f"unit_time must be > 0, got {self.unit_time}")
        if self.check_overhead < 0:
            raise ParameterError(f"check_overhead must be >= 0, got {self.check_overhead}")

    @property
    def abort_time(self) -> float:
        return self.critical_timestep / self.total_steps * self.unit_time

    @property
    def baseline_time(self) -> float:
        return self.unit_time / self.p_complete


@dataclass(frozen=True)
class SimulationResult:
    time_saved_fraction: float
    mean_time_with_head: float
    mean_time_baseline: float
    num_simulations: int
    std_error: float


@dataclass(frozen=True)
class CompletionProfile:
    """Probability of a complete generation keyed by requested object count."""

    p_by_count: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for k, p in self.p_by_count.items():
            if k < 1 or not 0.0 < p <= 1.0:
                raise ParameterError(f"invalid completion entry {k}: {p}")

    def __getitem__(self, k: int) -> float:
        return self.p_by_count[k]


# Published four-object completion rates of two Stable Diffusion versions.
SD14_FOUR_OBJECTS = CompletionProfile({4: 0.2696})
SD2_FOUR_OBJECTS = CompletionProfile({4: 0.3061})


def _acceptance_probability(params: CostModelParams) -> float:
    return params.p_complete * params.profile.recall**params.num_objects


def expected_total_time(params: CostModelParams) -> float:
    """Expected time until the first accepted complete attempt."""
    s = _acceptance_probability(params)
    if s <= 0:
        raise DivergenceError("p_complete * recall**k is zero: no attempt is ever accepted")
    p, u = params.p_complete, params.unit_time
    caught = 1.0 - (1.0 - params.profile.tn_rate) ** params.num_objects
    cycle = p * u + (1.0 - p) * (caught * params.abort_time + (1.0 - caught) * u)
    return (cycle + params.check_overhead) / s


def expected_time_saved_closed_form(params: CostModelParams) -> float:
    return 1.0 - expected_total_time(params) / params.baseline_time


def expected_time_saved_mixture(
    base: CostModelParams,
    completion: CompletionProfile,
    weights: Mapping[int, float] | None = None,
) -> float:
    """Saving over a workload mixing object counts.

    Expected times are averaged with ``weights`` (uniform over the profile's
    counts by default) before taking the ratio, so counts with long baselines
    weigh in proportionally.
    """
    weights = weights or {k: 1.0 for k in completion.p_by_count}
    if not weights or any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
        raise ParameterError("mixture weights must be non-negative with a positive sum")
    head = baseline = 0.0
    for k, w in weights.items():
        params = replace(base, num_objects=k, p_complete=completion[k])
        head += w * expected_total_time(params)
        baseline += w * params.baseline_time
    return 1.0 - head / baseline


def _simulate_chunk(params: CostModelParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-simulation total time for ``n`` independent runs of the restart loop."""
    p, k = params.p_complete, params.num_objects
    recall, tn = params.profile.recall, params.profile.tn_rate
    full, short = params.unit_time, params.abort_time
    totals = np.zeros(n)
    active = np.arange(n)
    while active.size:
        m = active.size
        complete = rng.random(m) < p
        draws = rng.random((m, k))
        accepted = complete & (draws < recall).all(axis=1)
        caught = ~complete & (draws < tn).any(axis=1)
        totals[active] += np.where(caught, short, full) + params.check_overhead
        active = active[~accepted]
    return totals


def _as_seed_sequence(rng_stream) -> np.random.SeedSequence:
    if isinstance(rng_stream, np.random.SeedSequence):
        return rng_stream
    if isinstance(rng_stream, np.random.Generator):
        return np.random.SeedSequence(int(rng_stream.integers(2**63)))
    return np.random.SeedSequence(rng_stream)


def simulate_time_saved(
    params: CostModelParams,
    num_simulations: int,
    rng_stream: int | np.random.SeedSequence | np.random.Generator = 0,
    threads: int = 1,
) -> SimulationResult:
    """Monte Carlo estimate of the fraction of time saved.

    Simulations are split into fixed-size chunks, each with its own child
    seed, so the result is bit-identical for any ``threads``.
    """
    if num_simulations < 1:
        raise ParameterError(f"num_simulations must be >= 1, got {num_simulations}")
    if threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    if _acceptance_probability(params) <= 0:
        raise DivergenceError("p_complete * recall**k is zero: simulation would never terminate")

    sizes = [CHUNK_SIZE] * (num_simulations // CHUNK_SIZE)
    if num_simulations % CHUNK_SIZE:
        sizes.append(num_simulations % CHUNK_SIZE)
    children = _as_seed_sequence(rng_stream).spawn(len(sizes))

    def run(i: int) -> np.ndarray:
        return _simulate_chunk(params, sizes[i], np.random.default_rng(children[i]))

    if threads == 1:
        parts = [run(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    totals = np.concatenate(parts)

    baseline = params.baseline_time
    mean = float(totals.mean())
    std_error = float(totals.std(ddof=1) / math.sqrt(num_simulations) / baseline) if num_simulations > 1 else math.nan
    return SimulationResult(
        time_saved_fraction=1.0 - mean / baseline,
        mean_time_with_head=mean,
        mean_time_baseline=baseline,
        num_simulations=num_simulations,
        std_error=std_error,
    )


def sweep_critical_timestep(
    base: CostModelParams,
    ct_grid: Sequence[int] = CT_GRID,
    profiles: Mapping[int, DetectorProfile] | None = None,
) -> list[tuple[int, float]]:
    """Closed-form saving at each critical timestep.

    ``profiles`` optionally pairs a timestep with its own detector profile;
    timesteps without an entry use ``base.profile``.
    """
    out = []
    for ct in ct_grid:
        profile = (profiles or {}).get(ct, base.profile)
        params = replace(base, critical_timestep=ct, profile=profile)
        out.append((ct, expected_time_saved_closed_form(params)))
    return out
