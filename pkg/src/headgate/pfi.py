"""Predicted-final-image projection on toy latent vectors.

The scheduler is deterministic DDIM (eta = 0) over a cumulative-alpha table
``alpha_bar[0..T]`` with ``alpha_bar[0] == 1``.  Noise estimates are supplied
by the caller; nothing here runs a denoising network.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DecoderError, OrderingError, ParameterError, ScheduleError

DEFAULT_TOTAL_STEPS = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        ab = np.asarray(self.alpha_bar, dtype=float)
        if ab.ndim != 1 or ab.size < 2:
            raise ScheduleError("alpha_bar needs at least two entries (t = 0 and t = 1)")
        if ab[0] != 1.0:
            raise ScheduleError(f"alpha_bar[0] must equal 1, got {ab[0]}")
        if np.any(ab <= 0) or np.any(ab > 1) or not np.all(np.isfinite(ab)):
            raise ScheduleError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0):
            raise ScheduleError("alpha_bar must be strictly decreasing in t")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def total_steps(self) -> int:
        return self.alpha_bar.size - 1

    @classmethod
    def linear_beta(
        cls,
        total_steps: int = DEFAULT_TOTAL_STEPS,
        beta_start: float = DEFAULT_BETA_START,
        beta_end: float = DEFAULT_BETA_END,
        scale: bool = True,
    ) -> NoiseSchedule:
        """Linear beta schedule.

        With ``scale`` the endpoints are given for a 1000-step process and
        stretched by ``1000 / total_steps`` so that a short schedule reaches
        the same terminal noise level.
        """
        if total_steps < 1:
            raise ScheduleError(f"total_steps must be >= 1, got {total_steps}")
        factor = 1000.0 / total_steps if scale else 1.0
        betas = np.linspace(beta_start * factor, beta_end * factor, total_steps)
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ScheduleError("betas must lie in (0, 1)")
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> NoiseSchedule:
        """Build from ``{"alpha_bar": [...]}`` or linear-beta keys
        (``total_steps``, ``beta_start``, ``beta_end``, ``scale``)."""
        if "alpha_bar" in cfg:
            return cls(np.asarray(cfg["alpha_bar"], dtype=float))
        unknown = set(cfg) - {"total_steps", "beta_start", "beta_end", "scale"}
        if unknown:
            raise ScheduleError(f"unknown schedule keys: {sorted(unknown)}")
        return cls.linear_beta(
            total_steps=int(cfg.get("total_steps", DEFAULT_TOTAL_STEPS)),
            beta_start=float(cfg.get("beta_start", DEFAULT_BETA_START)),
            beta_end=float(cfg.get("beta_end", DEFAULT_BETA_END)),
            scale=bool(cfg.get("scale", True)),
        )

    def noise_amplification(self, t: int) -> float:
        """Factor by which an error in the noise estimate is scaled in the x0 estimate."""
        ab = self.alpha_bar[t]
        return float(np.sqrt((1.0 - ab) / ab))


@dataclass(frozen=True)
class LatentState:
    z: np.ndarray
    t: int

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or z.size < 1:
            raise ParameterError("latent must be a non-empty vector")
        if self.t < 0:
            raise ParameterError(f"timestep must be >= 0, got {self.t}")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class LinearDecoder:
    """Toy decoder ``x = W z``; ``W=None`` is the identity."""

    matrix: np.ndarray | None = None

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.matrix is None:
            return z.copy()
        w = np.asarray(self.matrix, dtype=float)
        if w.ndim != 2 or w.shape[1] != z.shape[-1]:
            raise DecoderError(f"decoder shape {w.shape} incompatible with latent dim {z.shape[-1]}")
        return w @ z


@dataclass(frozen=True)
class PfiResult:
    predicted_final_latent: np.ndarray
    decoded: np.ndarray
    source_timestep: int


def _validate(state: LatentState, epsilon: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    eps = np.asarray(epsilon, dtype=float)
    if eps.shape != state.z.shape:
        raise ParameterError(f"noise shape {eps.shape} does not match latent shape {state.z.shape}")
    if state.t > schedule.total_steps:
        raise ParameterError(f"timestep {state.t} exceeds schedule length {schedule.total_steps}")
    return eps


def predict_x0(state: LatentState, epsilon: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Invert the forward noising at ``state.t`` given the noise estimate."""
    eps = _validate(state, epsilon, schedule)
    if state.t == 0:
        return state.z.copy()
    ab = schedule.alpha_bar[state.t]
    if ab <= 0:
        raise ScheduleError(f"alpha_bar[{state.t}] must be positive")
    return (state.z - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def scheduler_update(
    state: LatentState, epsilon: np.ndarray, t_next: int, schedule: NoiseSchedule
) -> LatentState:
    """Deterministic DDIM step from ``state.t`` to an earlier ``t_next``."""
    if not 0 <= t_next < state.t:
        raise OrderingError(f"t_next must satisfy 0 <= t_next < {state.t}, got {t_next}")
    eps = _validate(state, epsilon, schedule)
    x0 = predict_x0(state, eps, schedule)
    if t_next == 0:
        return LatentState(x0, 0)
    ab_next = schedule.alpha_bar[t_next]
    return LatentState(np.sqrt(ab_next) * x0 + np.sqrt(1.0 - ab_next) * eps, t_next)


def project_pfi(
    state: LatentState,
    epsilon: np.ndarray,
    schedule: NoiseSchedule,
    decoder: LinearDecoder | None = None,
) -> PfiResult:
    decoder = decoder or LinearDecoder()
    if state.t == 0:
        z0 = predict_x0(state, epsilon, schedule)
    else:
        z0 = scheduler_update(state, epsilon, 0, schedule).z
    return PfiResult(predicted_final_latent=z0, decoded=decoder(z0), source_timestep=state.t)


def noise_latent(z0: np.ndarray, epsilon: np.ndarray, t: int, schedule: NoiseSchedule) -> LatentState:
    """Forward-noise a clean latent to timestep ``t``."""
    ab = schedule.alpha_bar[t]
    return LatentState(np.sqrt(ab) * np.asarray(z0, float) + np.sqrt(1.0 - ab) * np.asarray(epsilon, float), t)


def relative_error(estimate: np.ndarray, target: np.ndarray) -> float:
    denom = np.linalg.norm(target)
    diff = np.linalg.norm(np.asarray(estimate) - np.asarray(target))
    return float(diff / denom) if denom > 0 else float(diff)


def reconstruction_errors(
    schedule: NoiseSchedule,
    timesteps: Sequence[int],
    dim: int,
    sigma: float,
    trials: int,
    rng: np.random.Generator,
    decoder: LinearDecoder | None = None,
) -> dict[int, float]:
    """Mean relative PFI error per timestep when the noise estimate is off by N(0, sigma^2).

    The same clean latents and perturbations are reused at every timestep, so
    the curve inherits the exact monotonicity of the amplification factor.
    """
    if dim < 1 or trials < 1:
        raise ParameterError("dim and trials must be >= 1")
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    decoder = decoder or LinearDecoder()
    z0 = rng.standard_normal((trials, dim))
    eps = rng.standard_normal((trials, dim))
    perturb = sigma * rng.standard_normal((trials, dim))
    out: dict[int, float] = {}
    for t in timesteps:
        if not 0 <= t <= schedule.total_steps:
            raise ParameterError(f"timestep {t} outside [0, {schedule.total_steps}]")
        errs = []
        for i in range(trials):
            state = noise_latent(z0[i], eps[i], t, schedule)
            res = project_pfi(state, eps[i] + perturb[i], schedule, decoder)
            errs.append(relative_error(res.decoded, decoder(z0[i])))
        out[int(t)] = float(np.mean(errs))
    return out
