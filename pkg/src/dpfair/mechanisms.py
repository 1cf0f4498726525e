"""Laplace mechanism, privacy accounting, and reproducible random streams.

A query with L1 global sensitivity ``sensitivity`` released with privacy
loss ``epsilon`` receives i.i.d. additive noise drawn from
Laplace(0, scale) with ``scale = sensitivity / epsilon``.  Sequential
composition is additive: running mechanisms with budgets e_1, ..., e_k
on the same data consumes ``sum(e_i)`` in total.

Randomness is organized as value-like streams: an :class:`RngStream` is
a (master_seed, stream_id) key, and every operation derives a fresh
generator from the key it is given.  Calling the same operation twice
with the same stream therefore reproduces the same output; independent
draws need distinct stream ids (or the internal per-block substreams
used by the Monte Carlo estimators).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidParameterError

#: Relative slack used when validating budget shares and round trips.
BUDGET_TOL = 1e-12


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy loss, L1 sensitivity, and the derived Laplace scale."""

    epsilon: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.sensitivity > 0):
            raise InvalidParameterError(
                f"sensitivity must be positive, got {self.sensitivity}"
            )

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (master_seed, stream_id).

    Identical keys produce identical sample sequences; distinct
    stream ids produce statistically independent streams.  ``path``
    addresses nested substreams below a stream (Monte Carlo estimators
    key one substream per sample block, so sharded runs reduce to the
    same result for any shard count).
    """

    master_seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.master_seed, (int, np.integer)) or isinstance(
            self.master_seed, bool
        ):
            raise InvalidParameterError("master_seed must be an integer")
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidParameterError("master_seed must fit in 64 unsigned bits")
        if not isinstance(self.stream_id, (int, np.integer)) or int(self.stream_id) < 0:
            raise InvalidParameterError("stream_id must be a nonnegative integer")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return self.substream()

    def substream(self, *path: int) -> np.random.Generator:
        """Generator for the child stream at ``path`` below this one."""
        ss = np.random.SeedSequence(
            entropy=int(self.master_seed),
            spawn_key=(int(self.stream_id), *self.path, *[int(p) for p in path]),
        )
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *path: int) -> "RngStream":
        """Stream value addressing the substream at ``path``."""
        return RngStream(
            self.master_seed, self.stream_id, (*self.path, *[int(p) for p in path])
        )


@dataclass
class Dataset:
    """Entity-by-attribute count matrix.

    ``raw`` data hold the true nonnegative integral counts; a released
    dataset is real-valued with no sign guarantee.
    """

    entity_ids: list[str]
    values: np.ndarray
    attribute_names: list[str]
    raw: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidParameterError("values must be a 2-D matrix")
        n, k = self.values.shape
        if n < 1 or k < 1:
            raise InvalidParameterError("dataset needs at least one entity and attribute")
        if len(self.entity_ids) != n:
            raise InvalidParameterError("entity_ids length must match the row count")
        if len(set(self.entity_ids)) != n:
            raise InvalidParameterError("entity_ids must be unique")
        if len(self.attribute_names) != k:
            raise InvalidParameterError("attribute_names length must match the column count")
        if len(set(self.attribute_names)) != k:
            raise InvalidParameterError("attribute_names must be unique")
        if self.raw:
            if np.any(self.values < 0):
                raise InvalidParameterError("raw datasets must be nonnegative")
            if np.any(self.values != np.floor(self.values)):
                raise InvalidParameterError("raw datasets must hold integral counts")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def attribute_index(self, name: str) -> int:
        try:
            return self.attribute_names.index(name)
        except ValueError:
            raise InvalidParameterError(
                f"unknown attribute {name!r}; have {self.attribute_names}"
            ) from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.attribute_index(name)]


def sample_laplace(scale: float, rng: RngStream, size: int | None = None):
    """Draw from Laplace(0, scale) by inverse CDF on fresh uniforms.

    Returns a scalar when ``size`` is None, else a 1-D array of
    independent draws from the stream.
    """
    if not (scale > 0):
        raise InvalidParameterError(f"scale must be positive, got {scale}")
    gen = rng.generator()
    u = gen.random(1 if size is None else int(size))
    draws = kernels.laplace_from_uniform(u, float(scale))
    if size is None:
        return float(draws[0])
    return draws


def release(data: Dataset, spec: PrivacySpec, rng: RngStream) -> Dataset:
    """Release ``data`` through the Laplace mechanism.

    Every cell receives an independent Laplace(0, spec.scale) draw; the
    output is deterministic given ``rng`` and carries no sign or
    integrality guarantee.
    """
    if not data.raw:
        raise InvalidParameterError("release expects a raw dataset")
    gen = rng.generator()
    u = gen.random(data.values.size)
    noise = kernels.laplace_from_uniform(u, spec.scale).reshape(data.values.shape)
    return Dataset(
        entity_ids=list(data.entity_ids),
        values=data.values + noise,
        attribute_names=list(data.attribute_names),
        raw=False,
    )


def compose_budgets(parts: list[float]) -> float:
    """Total privacy loss of sequential mechanisms with the given budgets."""
    if len(parts) == 0:
        raise InvalidParameterError("budget list must be nonempty")
    for p in parts:
        if not (p > 0):
            raise InvalidParameterError(f"budgets must be positive, got {p}")
    return float(sum(parts))


def split_budget(epsilon: float, shares: list[float]) -> list[float]:
    """Split a total budget into parts proportional to ``shares``.

    Shares must be positive and sum to 1; the parts compose back to
    ``epsilon`` within ``BUDGET_TOL``.
    """
    if not (epsilon > 0):
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")
    if len(shares) == 0:
        raise InvalidParameterError("shares must be nonempty")
    for s in shares:
        if not (s > 0):
            raise InvalidParameterError(f"shares must be positive, got {s}")
    total = sum(shares)
    if abs(total - 1.0) > BUDGET_TOL:
        raise InvalidParameterError(f"shares must sum to 1, got {total!r}")
    return [epsilon * s for s in shares]
