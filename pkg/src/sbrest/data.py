"""Domain types, CSV ingestion, and deterministic preprocessing rules.

Input files are plain CSVs:

* ``observations.csv`` — columns id, country, year, source_type, definition,
  sbr, total_births, stillbirth_count, log_se, nmr, live_births (the last
  five may be empty).
* ``covariates.csv`` — long format with columns covariate, country, year, value.
* ``regions.csv`` — country, region.
* ``income_groups.csv`` — country, income_group (High or LowMiddle).

Rows that fail validation are never dropped silently: ingestion returns the
accepted observations together with a rejection report carrying the row
number, offending column, and reason.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class SourceType(enum.Enum):
    Administrative = 0
    HMIS = 1
    PopulationStudy = 2
    Survey = 3


class Definition(enum.Enum):
    Ge28Weeks = "Ge28Weeks"
    Ge24Weeks = "Ge24Weeks"
    Ge22Weeks = "Ge22Weeks"
    Ge1000g = "Ge1000g"
    Ge500g = "Ge500g"


class IncomeGroup(enum.Enum):
    High = "High"
    LowMiddle = "LowMiddle"


# published SBRs are rounded to one decimal; this absorbs that rounding
CONSISTENCY_TOLERANCE = 0.5

DEFAULT_WINDOW = (2000, 2019)

OBSERVATION_COLUMNS = (
    "id", "country", "year", "source_type", "definition", "sbr",
    "total_births", "stillbirth_count", "log_se", "nmr", "live_births",
)


class SchemaError(ValueError):
    """A required column is missing from an input file."""


class ExclusionSignal(Exception):
    """The observation must be excluded upstream rather than processed."""


@dataclass
class Observation:
    """One stillbirth-rate datapoint."""

    id: int
    country: str
    year: int
    source_type: SourceType
    definition: Definition
    sbr: float                      # stillbirths per 1000 total births
    total_births: float | None = None
    stillbirth_count: float | None = None
    log_se: float | None = None     # sd of log(sbr); absent for some sources
    nmr: float | None = None        # neonatal deaths per 1000 live births
    live_births: float | None = None

    def validate(self, window=DEFAULT_WINDOW):
        """Raise ValueError naming the offending column on the first violation."""
        if not self.sbr > 0:
            raise ValueError(f"sbr: must be positive, got {self.sbr}")
        if not window[0] <= self.year <= window[1]:
            raise ValueError(
                f"year: {self.year} outside estimation window {window[0]}-{window[1]}"
            )
        if self.total_births is not None and self.stillbirth_count is not None:
            implied = 1000.0 * self.stillbirth_count / self.total_births
            if abs(self.sbr - implied) > CONSISTENCY_TOLERANCE:
                raise ValueError(
                    f"sbr: inconsistent with counts "
                    f"(reported {self.sbr}, implied {implied:.2f})"
                )

    @property
    def needs_se_imputation(self) -> bool:
        return self.log_se is None


@dataclass
class Rejection:
    row: int
    column: str
    reason: str


@dataclass
class RejectionReport:
    rejections: list = field(default_factory=list)

    def add(self, row, column, reason):
        self.rejections.append(Rejection(row, column, reason))

    def __len__(self):
        return len(self.rejections)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["row", "column", "reason"])
            for r in self.rejections:
                w.writerow([r.row, r.column, r.reason])


@dataclass(frozen=True)
class CountryIndex:
    """Ordered countries with their region and income-group assignments."""

    countries: tuple
    region_of: dict
    income_group_of: dict

    def __post_init__(self):
        missing = [c for c in self.countries if c not in self.region_of]
        if missing:
            raise ValueError(f"countries without a region: {missing}")
        missing = [c for c in self.countries if c not in self.income_group_of]
        if missing:
            raise ValueError(f"countries without an income group: {missing}")

    @property
    def regions(self) -> tuple:
        return tuple(sorted({self.region_of[c] for c in self.countries}))

    def country_idx(self, country: str) -> int:
        return self.countries.index(country)

    def region_idx_array(self) -> np.ndarray:
        regions = self.regions
        return np.array([regions.index(self.region_of[c]) for c in self.countries])


@dataclass(frozen=True)
class CovariateMatrix:
    """Standardized covariates X[k, c, t] plus the recorded transform."""

    names: tuple
    values: np.ndarray   # (K, C, T), mean 0 / sd 1 over all (c, t) cells
    raw_sd: np.ndarray   # per-covariate sd before standardization
    raw_mean: np.ndarray
    log_transformed: tuple  # per-covariate bool


@dataclass
class RawStillbirthBreakdown:
    """Stillbirth counts by gestational-age/birthweight category."""

    counts: dict  # category -> count; may include an "Unknown" category

    def __post_init__(self):
        for cat, n in self.counts.items():
            if n < 0:
                raise ValueError(f"negative count for category {cat!r}")


UNKNOWN = "Unknown"
MAX_UNKNOWN_FRACTION = 0.5


def redistribute_unknowns(breakdown: RawStillbirthBreakdown) -> RawStillbirthBreakdown:
    """Spread the Unknown category proportionally over the known categories.

    Counts stay fractional (no re-rounding) so the total is preserved exactly.
    Raises :class:`ExclusionSignal` when more than half of the stillbirths
    have unknown category, which excludes the observation upstream.
    """
    counts = dict(breakdown.counts)
    unknown = counts.pop(UNKNOWN, 0.0)
    known_total = sum(counts.values())
    total = known_total + unknown
    if total == 0 or known_total == 0:
        raise ExclusionSignal("all stillbirths have unknown category")
    if unknown / total > MAX_UNKNOWN_FRACTION:
        raise ExclusionSignal(
            f"unknown-category fraction {unknown / total:.2f} exceeds "
            f"{MAX_UNKNOWN_FRACTION}"
        )
    factor = total / known_total
    out = {cat: n * factor for cat, n in counts.items()}
    out[UNKNOWN] = 0.0
    return RawStillbirthBreakdown(out)


def _parse_optional(value: str):
    if value is None or value.strip() == "":
        return None
    return float(value)


def ingest_observations(path, schema_config=None, window=DEFAULT_WINDOW):
    """Read and validate an observations CSV.

    ``schema_config`` maps canonical column names to the file's column names;
    omitted entries default to the canonical name. Returns
    ``(observations, rejection_report)``; accepted + rejected = input rows.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    schema = {c: c for c in OBSERVATION_COLUMNS}
    if schema_config:
        schema.update(schema_config)

    observations = []
    report = RejectionReport()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        required = ["id", "country", "year", "source_type", "definition", "sbr"]
        missing = [schema[c] for c in required if schema[c] not in header]
        if missing:
            raise SchemaError(f"missing required columns in {path.name}: {missing}")
        for rownum, row in enumerate(reader, start=2):
            try:
                obs = Observation(
                    id=int(row[schema["id"]]),
                    country=row[schema["country"]].strip(),
                    year=int(row[schema["year"]]),
                    source_type=SourceType[row[schema["source_type"]].strip()],
                    definition=Definition[row[schema["definition"]].strip()],
                    sbr=float(row[schema["sbr"]]),
                    total_births=_parse_optional(row.get(schema["total_births"])),
                    stillbirth_count=_parse_optional(row.get(schema["stillbirth_count"])),
                    log_se=_parse_optional(row.get(schema["log_se"])),
                    nmr=_parse_optional(row.get(schema["nmr"])),
                    live_births=_parse_optional(row.get(schema["live_births"])),
                )
                obs.validate(window)
            except KeyError as e:
                report.add(rownum, str(e), f"unknown enum value {e}")
                continue
            except ValueError as e:
                msg = str(e)
                column = msg.split(":", 1)[0] if ": " in msg else "<row>"
                report.add(rownum, column, msg)
                continue
            observations.append(obs)
    return observations, report


def ingest_country_index(regions_path, income_groups_path) -> CountryIndex:
    region_of = {}
    with open(regions_path, newline="") as f:
        for row in csv.DictReader(f):
            region_of[row["country"].strip()] = row["region"].strip()
    income_of = {}
    with open(income_groups_path, newline="") as f:
        for row in csv.DictReader(f):
            income_of[row["country"].strip()] = IncomeGroup(row["income_group"].strip())
    return CountryIndex(
        countries=tuple(sorted(region_of)), region_of=region_of, income_group_of=income_of
    )


def ingest_covariates(path, countries, years):
    """Read a long-format covariate CSV into a dense (K, C, T) raw array."""
    countries = list(countries)
    years = list(years)
    cidx = {c: i for i, c in enumerate(countries)}
    tidx = {y: i for i, y in enumerate(years)}
    values = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for col in ("covariate", "country", "year", "value"):
            if col not in (reader.fieldnames or []):
                raise SchemaError(f"missing column {col!r} in covariates file")
        for row in reader:
            name = row["covariate"].strip()
            country = row["country"].strip()
            year = int(row["year"])
            if country not in cidx or year not in tidx:
                continue
            arr = values.setdefault(name, np.full((len(countries), len(years)), np.nan))
            arr[cidx[country], tidx[year]] = float(row["value"])
    names = tuple(sorted(values))
    raw = np.stack([values[n] for n in names]) if names else np.empty((0, len(countries), len(years)))
    for k, name in enumerate(names):
        if np.isnan(raw[k]).any():
            c, t = np.argwhere(np.isnan(raw[k]))[0]
            raise ValueError(
                f"covariate {name!r} missing for country {countries[c]}, year {years[t]}"
            )
    return names, raw


def standardize_covariates(raw: np.ndarray, names, transform_spec=None) -> CovariateMatrix:
    """Log-transform flagged covariates, then center/scale to unit sd.

    Standardization is over all (country, year) cells. The pre-standardization
    mean and sd are recorded so the transformed input can be recovered.
    """
    raw = np.asarray(raw, dtype=float)
    names = tuple(names)
    flags = tuple(bool((transform_spec or {}).get(n, False)) for n in names)
    transformed = raw.copy()
    for k, (name, log_flag) in enumerate(zip(names, flags)):
        if log_flag:
            if np.any(raw[k] <= 0):
                c, t = np.argwhere(raw[k] <= 0)[0]
                raise ValueError(
                    f"covariate {name!r} has non-positive value at cell "
                    f"(country {c}, year {t}); cannot log-transform"
                )
            transformed[k] = np.log(raw[k])
    means = transformed.reshape(len(names), -1).mean(axis=1)
    sds = transformed.reshape(len(names), -1).std(axis=1, ddof=1)
    for k, name in enumerate(names):
        if sds[k] == 0 or not np.isfinite(sds[k]):
            raise ValueError(f"covariate {name!r} is constant; cannot standardize")
    values = (transformed - means[:, None, None]) / sds[:, None, None]
    return CovariateMatrix(
        names=names, values=values, raw_sd=sds, raw_mean=means, log_transformed=flags
    )
