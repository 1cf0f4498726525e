"""Post-processing operators for released data and their bias behavior.

Post-processing never weakens the privacy guarantee, but it can move
expectations.  Lower clipping introduces a positive bias with closed
form ``E[max(l, x + eta)] = x + (scale/2) * exp((l - x)/scale)`` for
``l < x``; stochastic rounding and the uniform-shift sum projection are
expectation-preserving.  The temperature clip subtracts a boundary
correction ``T / (clipped + 1 - l)`` before re-clipping, trading a
little accuracy for a flatter bias profile near the boundary.

Pipelines are declared as ordered lists of steps.  Cell steps apply to
every released value; the sum projection applies to the problem's
output vector after evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, InvalidParameterError
from .mechanisms import PrivacySpec, RngStream

_PROJECT_PASSES = 4


def clip_lower(z, level: float):
    """max(level, z), elementwise on arrays."""
    if np.isscalar(z):
        return level if z < level else z
    return np.maximum(np.asarray(z, dtype=np.float64), level)


def expected_clipped(x: float, level: float, scale: float) -> float:
    """Expectation of max(level, x + Laplace(0, scale)) for level < x."""
    if not (scale > 0):
        raise InvalidParameterError(f"scale must be positive, got {scale}")
    if not (level < x):
        raise DomainError(f"expected_clipped requires level < x, got level={level}, x={x}")
    return x + 0.5 * scale * math.exp((level - x) / scale)


def stochastic_round(z, rng: RngStream):
    """Unbiased rounding to a straddling integer.

    Returns floor(z) with probability 1 - (z - floor(z)) and
    floor(z) + 1 otherwise, so the expectation equals z.
    """
    arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
    u = rng.generator().random(arr.size)
    out = kernels.stochastic_round_from_uniform(arr.ravel(), u).reshape(arr.shape)
    if np.ndim(z) == 0:
        return int(out[0])
    return out


def project_sum(z, target: float) -> np.ndarray:
    """Euclidean projection onto the hyperplane sum(y) = target.

    The unique minimizer of ||y - z||^2 subject to the sum constraint is
    the uniform shift z + (target - sum(z))/n.  A couple of refinement
    passes drive the floating-point residual to a fixed point, making
    the operator exactly idempotent.
    """
    out = np.array(z, dtype=np.float64, copy=True)
    if out.ndim != 1 or out.size < 1:
        raise InvalidParameterError("project_sum expects a nonempty 1-D vector")
    n = out.size
    for _ in range(_PROJECT_PASSES):
        shift = (target - out.sum()) / n
        if shift == 0.0:
            break
        shifted = out + shift
        if np.array_equal(shifted, out):
            break
        out = shifted
    return out


def temperature_clip(x_tilde, level: float, temperature: float):
    """Clip from below, then pull values near the boundary back down.

    Steps: clipped = max(level, x); corrected = clipped -
    T / (clipped + 1 - level); result = max(corrected, level).
    T = 0 reduces to plain clipping; the result is always >= level.
    """
    if not (temperature >= 0):
        raise InvalidParameterError(f"temperature must be >= 0, got {temperature}")
    clipped = clip_lower(x_tilde, level)
    corrected = clipped - temperature / (clipped + 1.0 - level)
    return clip_lower(corrected, level)


def temperature_scores(
    domain,
    spec: PrivacySpec,
    grid,
    m: int = 10_000,
    rng: RngStream = None,
    level: float = 0.0,
) -> tuple[list[float], np.ndarray]:
    """Bias-spread score of every candidate temperature.

    For each candidate T the expected post-processed value E[x_T] is
    estimated with m Monte Carlo draws per domain point (common random
    numbers across candidates), and the score is
    ``max_x |E[x_T] - x| - min_x |E[x_T] - x|`` over the domain.
    Returns the ascending grid and its scores.
    """
    domain = np.asarray(domain, dtype=np.float64)
    if domain.ndim != 1 or domain.size == 0:
        raise InvalidParameterError("domain must be a nonempty 1-D vector")
    if np.any(domain < level):
        raise InvalidParameterError("domain values must be >= the clip level")
    if rng is None:
        raise InvalidParameterError("temperature tuning requires an rng stream")
    grid = sorted(float(t) for t in np.atleast_1d(grid))
    if len(grid) == 0:
        raise InvalidParameterError("grid must be nonempty")
    if m < 1:
        raise InvalidParameterError("m must be positive")

    deviations = np.empty((len(grid), domain.size))
    for j, x in enumerate(domain):
        u = rng.substream(j).random(m)
        clipped = np.maximum(x + kernels.laplace_from_uniform(u, spec.scale), level)
        inv = 1.0 / (clipped + 1.0 - level)
        for gi, t in enumerate(grid):
            est = np.maximum(clipped - t * inv, level).mean()
            deviations[gi, j] = abs(est - x)
    return grid, deviations.max(axis=1) - deviations.min(axis=1)


def tune_temperature(
    domain,
    spec: PrivacySpec,
    grid=None,
    m: int = 10_000,
    rng: RngStream = None,
    level: float = 0.0,
) -> tuple[float, float]:
    """Grid search for the temperature with the flattest bias profile.

    Scores come from :func:`temperature_scores`; the returned pair is
    the score-minimizing (T, score), with ties broken toward smaller T.

    The search reads the true domain values, so the chosen T is not
    itself privacy-preserving; reports must label it accordingly.
    """
    if grid is None:
        grid = np.geomspace(1e-2 * spec.scale, 1e2 * spec.scale, 25)
    grid, scores = temperature_scores(domain, spec, grid, m=m, rng=rng, level=level)
    best = int(np.argmin(scores))  # first minimum: smallest T on ties
    return grid[best], float(scores[best])


# --------------------------------------------------------------------------
# Pipeline steps


@dataclass(frozen=True)
class ClipLower:
    level: float = 0.0
    stage = "cells"

    def apply_block(self, values, gen):
        return np.maximum(values, self.level)


@dataclass(frozen=True)
class StochasticRound:
    stage = "cells"

    def apply_block(self, values, gen):
        u = gen.random(values.size)
        return kernels.stochastic_round_from_uniform(
            np.ascontiguousarray(values.ravel()), u
        ).reshape(values.shape)


@dataclass(frozen=True)
class TemperatureClip:
    level: float = 0.0
    temperature: float = 0.0
    stage = "cells"

    def __post_init__(self):
        if not (self.temperature >= 0):
            raise InvalidParameterError("temperature must be >= 0")

    def apply_block(self, values, gen):
        return temperature_clip(values, self.level, self.temperature)


@dataclass(frozen=True)
class ProjectSum:
    target: float = 1.0
    stage = "outputs"

    def apply_outputs(self, outputs):
        n = outputs.shape[-1]
        shift = (self.target - outputs.sum(axis=-1)) / n
        return outputs + shift[..., None]


PostStep = Union[ClipLower, StochasticRound, TemperatureClip, ProjectSum]


def pipeline_to_json(steps) -> list:
    doc = []
    for step in steps:
        if isinstance(step, ClipLower):
            doc.append({"clip_lower": step.level})
        elif isinstance(step, StochasticRound):
            doc.append("stochastic_round")
        elif isinstance(step, TemperatureClip):
            doc.append(
                {"temperature_clip": {"level": step.level, "temperature": step.temperature}}
            )
        elif isinstance(step, ProjectSum):
            doc.append({"project_sum": step.target})
        else:
            raise ConfigError(f"unknown pipeline step: {step!r}")
    return doc


def pipeline_from_json(doc) -> tuple[PostStep, ...]:
    """Parse the config form, e.g. [{"clip_lower": 0}, "stochastic_round"]."""
    steps: list[PostStep] = []
    for entry in doc:
        if entry == "stochastic_round":
            steps.append(StochasticRound())
        elif isinstance(entry, dict) and len(entry) == 1:
            (name, arg), = entry.items()
            if name == "clip_lower":
                steps.append(ClipLower(float(arg)))
            elif name == "project_sum":
                steps.append(ProjectSum(float(arg)))
            elif name == "temperature_clip":
                steps.append(
                    TemperatureClip(float(arg["level"]), float(arg["temperature"]))
                )
            else:
                raise ConfigError(f"unknown pipeline step name: {name!r}")
        else:
            raise ConfigError(f"unknown pipeline step: {entry!r}")
    return tuple(steps)
