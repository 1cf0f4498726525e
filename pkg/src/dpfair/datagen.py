"""CSV ingestion and synthetic dataset generators.

Two CSV schemas are understood:

* allotment data: header ``district_id,count[,weight]`` — one count
  attribute plus an optional expenditure weight (default 1);
* minority-language data: header ``county_id,x_s,x_sp,x_spe`` — the
  number of minority-language speakers, those with limited English
  proficiency, and those additionally below a 5th-grade education.

Rows with missing or NULL fields are dropped with a logged warning;
malformed numeric fields raise :class:`DataError` with the line number.
The synthetic generators emit raw datasets (nonnegative integer counts)
so the full test suite runs without external data.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .mechanisms import Dataset, RngStream

logger = logging.getLogger("dpfair")

_MISSING = {"", "null", "none", "na", "nan"}


def _is_missing(value: str) -> bool:
    return value is None or value.strip().lower() in _MISSING


def _parse_number(value: str, line: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"malformed numeric field {column}={value!r}", line=line) from None


def load_allotment_csv(
    path, filter_min_count: float | None = None
) -> tuple[Dataset, np.ndarray]:
    """Load ``district_id,count[,weight]`` rows into a Dataset plus weights.

    ``filter_min_count`` drops districts below the given count (the
    usual ingestion filter keeps districts with at least 1 student).
    """
    ids: list[str] = []
    counts: list[float] = []
    weights: list[float] = []
    dropped = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["district_id", "count"]:
            raise DataError(f"expected header district_id,count[,weight], got {header}")
        has_weight = len(header) >= 3 and header[2].strip() == "weight"
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2 or any(_is_missing(c) for c in row[: 3 if has_weight else 2]):
                dropped += 1
                continue
            count = _parse_number(row[1], line, "count")
            if count < 0 or count != int(count):
                raise DataError(
                    f"raw counts must be nonnegative integers, got {row[1]!r}", line=line
                )
            weight = _parse_number(row[2], line, "weight") if has_weight else 1.0
            if filter_min_count is not None and count < filter_min_count:
                dropped += 1
                continue
            ids.append(row[0].strip())
            counts.append(count)
            weights.append(weight)
    if dropped:
        logger.warning("load_allotment_csv: dropped %d row(s) from %s", dropped, path)
    if not ids:
        raise DataError(f"no usable rows in {path}")
    data = Dataset(ids, np.array(counts)[:, None], ["count"], raw=True)
    return data, np.asarray(weights, dtype=np.float64)


def load_minority_csv(path, filter_min_lep: float | None = None) -> Dataset:
    """Load ``county_id,x_s,x_sp,x_spe`` rows into a Dataset.

    ``filter_min_lep`` drops counties whose limited-English count is
    below the given value (the usual filter keeps counties with at
    least one such person, making the education ratio well defined).
    """
    ids: list[str] = []
    rows: list[list[float]] = []
    dropped = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["county_id", "x_s", "x_sp", "x_spe"]
        if header is None or [h.strip() for h in header[:4]] != expected:
            raise DataError(f"expected header {','.join(expected)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 4 or any(_is_missing(c) for c in row[:4]):
                dropped += 1
                continue
            values = [_parse_number(row[j], line, expected[j]) for j in (1, 2, 3)]
            for v, col in zip(values, expected[1:]):
                if v < 0 or v != int(v):
                    raise DataError(
                        f"raw counts must be nonnegative integers, got {col}={v!r}",
                        line=line,
                    )
            if filter_min_lep is not None and values[1] < filter_min_lep:
                dropped += 1
                continue
            ids.append(row[0].strip())
            rows.append(values)
    if dropped:
        logger.warning("load_minority_csv: dropped %d row(s) from %s", dropped, path)
    if not ids:
        raise DataError(f"no usable rows in {path}")
    return Dataset(ids, np.array(rows), ["x_s", "x_sp", "x_spe"], raw=True)


def write_dataset_csv(data: Dataset, path, weights=None) -> None:
    """Write a dataset back out in its loader-compatible schema."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if data.attribute_names == ["count"]:
            if weights is None:
                writer.writerow(["district_id", "count"])
                for eid, row in zip(data.entity_ids, data.values):
                    writer.writerow([eid, repr(float(row[0]))])
            else:
                writer.writerow(["district_id", "count", "weight"])
                for eid, row, w in zip(data.entity_ids, data.values, weights):
                    writer.writerow([eid, repr(float(row[0])), repr(float(w))])
        else:
            writer.writerow(["county_id", *data.attribute_names])
            for eid, row in zip(data.entity_ids, data.values):
                writer.writerow([eid, *[repr(float(v)) for v in row]])


# --------------------------------------------------------------------------
# Synthetic generators


def power_law_counts(
    n: int, exponent: float = 1.5, minimum: int = 10, maximum: int = 100_000,
    rng: RngStream | None = None,
) -> Dataset:
    """Truncated power-law counts: heavy-tailed sizes like real districts."""
    if n < 1 or minimum < 0 or maximum <= minimum or exponent <= 1:
        raise ConfigError("power_law_counts needs n>=1, 0<=min<max, exponent>1")
    gen = (rng or RngStream(0)).generator()
    u = gen.random(n)
    lo = float(minimum) ** (1.0 - exponent)
    hi = float(maximum) ** (1.0 - exponent)
    counts = np.floor((lo + u * (hi - lo)) ** (1.0 / (1.0 - exponent)))
    counts = np.clip(counts, minimum, maximum)
    ids = [f"d{j:05d}" for j in range(n)]
    return Dataset(ids, counts[:, None], ["count"], raw=True)


def linear_ramp(n: int) -> Dataset:
    """Counts 1..n: the small-count regime near a clipping boundary."""
    if n < 1:
        raise ConfigError("linear_ramp needs n >= 1")
    counts = np.arange(1, n + 1, dtype=np.float64)
    ids = [f"d{j:05d}" for j in range(n)]
    return Dataset(ids, counts[:, None], ["count"], raw=True)


def minority_counties(n: int, rng: RngStream | None = None) -> Dataset:
    """Synthetic county triples (x_s, x_sp, x_spe) straddling the
    qualification thresholds of the language-assistance rule."""
    if n < 1:
        raise ConfigError("minority_counties needs n >= 1")
    gen = (rng or RngStream(0)).generator()
    u = gen.random(n)
    speakers = np.floor(10 ** (2.0 + 3.5 * u))  # 1e2 .. ~3e5, log-uniform
    ratio = gen.normal(0.05, 0.02, n).clip(0.001, 0.25)
    lep = np.floor(speakers * ratio).clip(0)
    edu_ratio = gen.normal(0.0131, 0.006, n).clip(0.0, 0.08)
    low_edu = np.floor(lep * edu_ratio).clip(0)
    values = np.column_stack([speakers, lep, low_edu])
    ids = [f"c{j:05d}" for j in range(n)]
    return Dataset(ids, values, ["x_s", "x_sp", "x_spe"], raw=True)


def synthetic_from_spec(spec: dict) -> Dataset:
    """Build a dataset from a config block like
    {"generator": "power_law", "n": 1000, "seed": 7, ...}."""
    if not isinstance(spec, dict) or "generator" not in spec:
        raise ConfigError(f"synthetic spec needs a 'generator' field, got {spec!r}")
    kind = spec["generator"]
    n = int(spec.get("n", 100))
    seed = int(spec.get("seed", 0))
    if kind == "power_law":
        return power_law_counts(
            n,
            exponent=float(spec.get("exponent", 1.5)),
            minimum=int(spec.get("min", 10)),
            maximum=int(spec.get("max", 100_000)),
            rng=RngStream(seed),
        )
    if kind == "linear_ramp":
        return linear_ramp(n)
    if kind == "minority":
        return minority_counties(n, rng=RngStream(seed))
    raise ConfigError(f"unknown synthetic generator {kind!r}")
