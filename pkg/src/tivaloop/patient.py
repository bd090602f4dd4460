"""Patient demographics, covariate PK derivation, and the built-in 13-patient cohort.

Units are fixed package-wide: time in minutes, volumes in liters, clearances
in l/min, rate constants in 1/min, infusion in mg/min, concentrations in
µg/ml (numerically equal to mg/l).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

SEX_MALE = "male"
SEX_FEMALE = "female"

# Clearance covariate modes. The published cl2 intercept (0.018) gives a
# negative fast-peripheral clearance for every adult age; "corrected" restores
# the age-centered intercept (2.562 = 1.29 + 0.024*53, the same centering that
# reproduces the printed v2 intercept 39.623 = 18.9 + 0.391*53).
MODE_CORRECTED = "corrected"
MODE_PAPER_LITERAL = "paper-literal"
PARAM_MODES = (MODE_CORRECTED, MODE_PAPER_LITERAL)

KE0_PROPOFOL = 0.456  # effect-site equilibration, 1/min

_V1 = 4.27     # central volume, l
_V3 = 238.0    # slow peripheral volume, l
_V2_INTERCEPT = 39.623
_V2_AGE_SLOPE = -0.391
_CL2_AGE_SLOPE = -0.024
_CL2_INTERCEPT = {MODE_CORRECTED: 2.562, MODE_PAPER_LITERAL: 0.018}
_CL3 = 0.836   # l/min, covariate-independent


class ParameterError(ValueError):
    """Demographics produce a nonphysical model parameter."""


class NonphysicalParameterWarning(UserWarning):
    """A derived parameter is nonpositive (paper-literal mode only)."""


@dataclass(frozen=True)
class Demographics:
    """Covariates feeding the PK derivation."""

    age: int          # years
    height: float     # cm
    weight: float     # kg
    sex: str          # "male" or "female"

    def __post_init__(self):
        if self.age < 0:
            raise ValueError(f"age must be >= 0, got {self.age}")
        if self.height <= 0 or self.weight <= 0:
            raise ValueError("height and weight must be strictly positive")
        if self.sex not in (SEX_MALE, SEX_FEMALE):
            raise ValueError(f"sex must be {SEX_MALE!r} or {SEX_FEMALE!r}, got {self.sex!r}")


@dataclass(frozen=True)
class HillParams:
    """Sigmoid concentration-to-BIS parameters for one patient."""

    ec50: float   # effect-site concentration at half-maximal effect, µg/ml
    e0: float     # awake baseline BIS
    emax: float   # maximal BIS depression
    gamma: float  # sigmoid slope

    def __post_init__(self):
        if self.ec50 <= 0:
            raise ValueError(f"ec50 must be > 0, got {self.ec50}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.e0 <= 100:
            raise ValueError(f"e0 must be in (0, 100], got {self.e0}")


@dataclass(frozen=True)
class PatientRecord:
    """One virtual patient: demographics plus measured Hill parameters."""

    id: int
    demographics: Demographics
    hill: HillParams


@dataclass(frozen=True)
class PkParams:
    """Derived three-compartment parameters plus effect-site constant."""

    v1: float
    v2: float
    v3: float      # liters
    cl1: float
    cl2: float
    cl3: float     # l/min
    k10: float
    k12: float
    k13: float
    k21: float
    k31: float     # 1/min
    ke0: float     # 1/min


def lean_body_mass(d: Demographics) -> float:
    """Sex-specific lean body mass in kg (James formula).

    Raises ParameterError when the quadratic term dominates (degenerate
    weight/height combinations).
    """
    lbm = _lbm_formula(d.weight, d.height, d.sex)
    if lbm <= 0:
        raise ParameterError(
            f"lean body mass nonpositive ({lbm:.3f} kg) for "
            f"weight={d.weight} kg, height={d.height} cm"
        )
    return lbm


def _lbm_formula(weight: float, height: float, sex: str) -> float:
    ratio_sq = (weight / height) ** 2
    if sex == SEX_MALE:
        return 1.1 * weight - 128.0 * ratio_sq
    return 1.07 * weight - 148.0 * ratio_sq


def compartment_volumes(d: Demographics) -> tuple[float, float, float]:
    """(v1, v2, v3) in liters; only v2 depends on covariates (age)."""
    v2 = _V2_INTERCEPT + _V2_AGE_SLOPE * d.age
    if v2 <= 0:
        raise ParameterError(f"v2 nonpositive ({v2:.3f} l) at age {d.age}")
    return (_V1, v2, _V3)


def clearances(d: Demographics, mode: str = MODE_CORRECTED) -> tuple[float, float, float]:
    """(cl1, cl2, cl3) in l/min.

    In corrected mode a nonpositive clearance raises ParameterError; in
    paper-literal mode it only emits NonphysicalParameterWarning so the
    published coefficients can still be inspected as printed.
    """
    if mode not in PARAM_MODES:
        raise ValueError(f"unknown parameter mode {mode!r}; expected one of {PARAM_MODES}")
    lbm = lean_body_mass(d)
    cl1 = 0.0456 * d.weight + 0.0264 * d.height - 0.0681 * lbm - 2.271
    cl2 = _CL2_INTERCEPT[mode] + _CL2_AGE_SLOPE * d.age
    cl3 = _CL3
    bad = [name for name, v in (("cl1", cl1), ("cl2", cl2), ("cl3", cl3)) if v <= 0]
    if bad:
        msg = ", ".join(f"{name} = {v:.4f} l/min" for name, v in
                        (("cl1", cl1), ("cl2", cl2), ("cl3", cl3)) if name in bad)
        if mode == MODE_CORRECTED:
            raise ParameterError(f"nonpositive clearance in corrected mode: {msg}")
        warnings.warn(f"nonpositive clearance in paper-literal mode: {msg}",
                      NonphysicalParameterWarning, stacklevel=2)
    return (cl1, cl2, cl3)


def derive_pk(d: Demographics, mode: str = MODE_CORRECTED) -> PkParams:
    """Full covariate PK derivation.

    Rate constants use the standard mapping (outbound constants over the
    source compartment volume): k10 = cl1/v1, k12 = cl2/v1, k13 = cl3/v1,
    k21 = cl2/v2, k31 = cl3/v3, so k12*v1 == k21*v2 and k13*v1 == k31*v3
    hold exactly. Deterministic and pure.
    """
    v1, v2, v3 = compartment_volumes(d)
    cl1, cl2, cl3 = clearances(d, mode)
    return PkParams(
        v1=v1, v2=v2, v3=v3,
        cl1=cl1, cl2=cl2, cl3=cl3,
        k10=cl1 / v1, k12=cl2 / v1, k13=cl3 / v1,
        k21=cl2 / v2, k31=cl3 / v3,
        ke0=KE0_PROPOFOL,
    )


# Cohort rows: (id, age, height cm, weight kg, sex, ec50, e0, emax, gamma).
# Row 13 is the nominal patient, stored verbatim (not recomputed as a mean).
_COHORT_ROWS = (
    (1, 40, 163.0, 54.0, SEX_FEMALE, 6.33, 98.8, 94.1, 2.24),
    (2, 36, 163.0, 50.0, SEX_FEMALE, 6.76, 98.6, 86.0, 4.29),
    (3, 28, 164.0, 52.0, SEX_FEMALE, 8.44, 91.2, 80.7, 4.10),
    (4, 50, 163.0, 83.0, SEX_FEMALE, 6.44, 95.9, 102.0, 2.18),
    (5, 28, 164.0, 60.0, SEX_MALE, 4.93, 94.7, 85.3, 2.46),
    (6, 43, 163.0, 59.0, SEX_FEMALE, 12.1, 90.2, 147.0, 2.42),
    (7, 37, 187.0, 75.0, SEX_MALE, 8.02, 92.0, 104.0, 2.10),
    (8, 38, 174.0, 80.0, SEX_FEMALE, 6.56, 95.5, 76.4, 4.12),
    (9, 41, 170.0, 70.0, SEX_FEMALE, 6.15, 89.2, 63.8, 6.89),
    (10, 37, 167.0, 58.0, SEX_FEMALE, 13.7, 83.1, 151.0, 1.65),
    (11, 42, 179.0, 78.0, SEX_MALE, 4.82, 91.8, 77.9, 1.85),
    (12, 34, 172.0, 58.0, SEX_FEMALE, 4.95, 96.2, 90.8, 1.84),
    (13, 38, 169.0, 65.0, SEX_FEMALE, 7.42, 93.1, 96.6, 3.00),
)

NOMINAL_PATIENT_ID = 13
MOST_SENSITIVE_PATIENT_ID = 9  # steepest Hill slope, hardest to regulate

_COHORT_HEADER = ("id", "age", "height_cm", "weight_kg", "sex",
                  "ec50", "e0", "emax", "gamma")


def _record_from_row(row) -> PatientRecord:
    pid, age, height, weight, sex, ec50, e0, emax, gamma = row
    return PatientRecord(
        id=pid,
        demographics=Demographics(age=age, height=height, weight=weight, sex=sex),
        hill=HillParams(ec50=ec50, e0=e0, emax=emax, gamma=gamma),
    )


def builtin_cohort() -> list[PatientRecord]:
    """The 13 built-in patients (ids 1-12 measured, 13 nominal)."""
    return [_record_from_row(r) for r in _COHORT_ROWS]


def get_patient(patient_id: int) -> PatientRecord:
    for row in _COHORT_ROWS:
        if row[0] == patient_id:
            return _record_from_row(row)
    raise KeyError(f"no built-in patient with id {patient_id} (valid: 1-13)")


def write_cohort(path, records: list[PatientRecord]) -> None:
    """Export patients as delimited text with a header row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_COHORT_HEADER)
        for rec in records:
            d, h = rec.demographics, rec.hill
            w.writerow([rec.id, d.age, _fmt(d.height), _fmt(d.weight), d.sex,
                        _fmt(h.ec50), _fmt(h.e0), _fmt(h.emax), _fmt(h.gamma)])


def read_cohort(path) -> list[PatientRecord]:
    """Load patients from the delimited format written by write_cohort."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(s.strip() for s in header) != _COHORT_HEADER:
            raise ValueError(
                f"bad cohort header in {path}: expected {','.join(_COHORT_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(_COHORT_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(_COHORT_HEADER)} fields")
            pid, age, height, weight, sex, ec50, e0, emax, gamma = (c.strip() for c in row)
            records.append(PatientRecord(
                id=int(pid),
                demographics=Demographics(age=int(age), height=float(height),
                                          weight=float(weight), sex=_parse_sex(sex)),
                hill=HillParams(ec50=float(ec50), e0=float(e0),
                                emax=float(emax), gamma=float(gamma)),
            ))
    if not records:
        raise ValueError(f"no patient rows in {path}")
    return records


def _parse_sex(token: str) -> str:
    t = token.lower()
    if t in ("m", "male"):
        return SEX_MALE
    if t in ("f", "female"):
        return SEX_FEMALE
    raise ValueError(f"unrecognized sex {token!r}")


def _fmt(x: float) -> str:
    return repr(float(x))
