"""Closed-loop orchestration: plant at the fine grid, controller at 1 s ticks.

Per controller tick the plant is advanced under the previously commanded
infusion (zero-order hold), the Hill sensor output is disturbed, noised, and
clamped, and the controller produces the next infusion and adapts. Traces are
sampled at the controller period and carry the full effective configuration.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import _kernels
from .controller import ControllerConfig, init_params
from .patient import MODE_CORRECTED, PatientRecord
from .pkpd import SCHEME_RK4, PkModel, StepScheme
from .scenario import ScenarioSpec

TRACE_COLUMNS = (
    "time_min", "infusion_mg_min", "x1", "x2", "x3", "ce",
    "bis_clean", "bis_disturbed", "bis_measured",
    "e", "r", "j", "u_raw", "a1", "a2", "a3", "b1", "b2", "b3",
)

STATUS_OK = "ok"
STATUS_DIVERGED = "diverged"


@dataclass
class SimTrace:
    """Uniformly sampled closed-loop record plus effective configuration."""

    meta: dict
    t: np.ndarray             # minutes
    u: np.ndarray             # delivered infusion, ZOH on [t_n, t_{n+1})
    u_raw: np.ndarray         # pre-saturation controller output
    x: np.ndarray             # (n, 4): plasma, fast, slow, effect site
    bis_clean: np.ndarray     # unclamped Hill output
    bis_disturbed: np.ndarray  # clean + surgical disturbance
    bis_measured: np.ndarray  # disturbed + noise, clamped to [0, 100]
    e: np.ndarray
    r: np.ndarray
    j: np.ndarray
    alpha: np.ndarray         # (n, 6): a1 a2 a3 b1 b2 b3 as used at each tick
    status: str = STATUS_OK
    diverged_tick: int | None = None

    @property
    def ce(self) -> np.ndarray:
        return self.x[:, 3]

    @property
    def patient_id(self) -> int:
        return int(self.meta["patient_id"])

    @property
    def target_bis(self) -> float:
        return float(self.meta["target_bis"])

    @property
    def induction_end(self) -> float:
        return float(self.meta["induction_end_min"])

    @property
    def sample_period(self) -> float:
        return float(self.meta["sample_period_min"])

    def to_csv(self, path) -> None:
        """Delimited text: '#' header block with the effective config, then rows."""
        with open(path, "w", newline="") as fh:
            fh.write("# tivaloop trace v1\n")
            for key, val in self.meta.items():
                fh.write(f"# {key} = {_meta_str(val)}\n")
            fh.write(f"# status = {self.status}\n")
            if self.diverged_tick is not None:
                fh.write(f"# diverged_tick = {self.diverged_tick}\n")
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for i in range(len(self.t)):
                w.writerow([
                    repr(float(self.t[i])), repr(float(self.u[i])),
                    repr(float(self.x[i, 0])), repr(float(self.x[i, 1])),
                    repr(float(self.x[i, 2])), repr(float(self.x[i, 3])),
                    repr(float(self.bis_clean[i])), repr(float(self.bis_disturbed[i])),
                    repr(float(self.bis_measured[i])),
                    repr(float(self.e[i])), repr(float(self.r[i])), repr(float(self.j[i])),
                    repr(float(self.u_raw[i])),
                    repr(float(self.alpha[i, 0])), repr(float(self.alpha[i, 1])),
                    repr(float(self.alpha[i, 2])), repr(float(self.alpha[i, 3])),
                    repr(float(self.alpha[i, 4])), repr(float(self.alpha[i, 5])),
                ])

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        meta: dict = {}
        rows = []
        header = None
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    body = line[1:].strip()
                    if "=" in body:
                        key, _, val = body.partition("=")
                        meta[key.strip()] = _meta_parse(val.strip())
                    continue
                cells = next(csv.reader([line]))
                if header is None:
                    header = tuple(cells)
                    if header != TRACE_COLUMNS:
                        raise ValueError(f"{path}: unexpected trace columns {header}")
                    continue
                rows.append([float(c) for c in cells])
        if header is None or not rows:
            raise ValueError(f"{path}: no trace data")
        data = np.asarray(rows)
        status = str(meta.pop("status", STATUS_OK))
        diverged_tick = meta.pop("diverged_tick", None)
        return cls(
            meta=meta,
            t=data[:, 0], u=data[:, 1],
            x=np.ascontiguousarray(data[:, 2:6]),
            bis_clean=data[:, 6], bis_disturbed=data[:, 7], bis_measured=data[:, 8],
            e=data[:, 9], r=data[:, 10], j=data[:, 11], u_raw=data[:, 12],
            alpha=np.ascontiguousarray(data[:, 13:19]),
            status=status,
            diverged_tick=None if diverged_tick is None else int(diverged_tick),
        )


def _meta_str(val) -> str:
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _meta_parse(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def derive_seeds(run_seed: int) -> tuple[int, int]:
    """Deterministic (parameter-init seed, noise seed) pair for one run."""
    children = np.random.SeedSequence(run_seed).spawn(2)
    return (int(children[0].generate_state(1, np.uint64)[0]),
            int(children[1].generate_state(1, np.uint64)[0]))


def patient_seed(master_seed: int, patient_id: int) -> int:
    """Per-patient run seed: independent streams, reproducible from the master."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(patient_id,))
    return int(ss.generate_state(1, np.uint64)[0])


def run(patient: PatientRecord, scenario: ScenarioSpec, cfg: ControllerConfig,
        *, param_mode: str = MODE_CORRECTED, scheme: StepScheme | None = None,
        seed: int | None = None, controller_enabled: bool = True,
        coast: float = 0.0) -> SimTrace:
    """One closed-loop run of one patient under one scenario.

    seed defaults to cfg.seed and drives both the consequent initialization
    and the noise stream (via independent derived streams). coast appends a
    no-infusion tail of the given length (minutes) after the horizon. On
    controller divergence the returned trace is truncated at the failing tick
    and carries status "diverged".
    """
    scheme = scheme or StepScheme()
    period = cfg.sample_period
    n_ticks = _even_ticks(scenario.horizon, period, "horizon")
    n_coast = _even_ticks(coast, period, "coast") if coast else 0
    n_total = n_ticks + n_coast
    n_ctrl = n_ticks if controller_enabled else 0
    n_sub = _even_ticks(period, scheme.dt, "sample period")

    model = PkModel.from_patient(patient, param_mode)
    if scheme.method == SCHEME_RK4:
        ad = np.zeros((4, 4))
        bd = np.zeros(4)
        use_rk4 = 1
    else:
        ad, bd = model.discrete(scheme.dt)
        use_rk4 = 0

    run_seed = cfg.seed if seed is None else seed
    alpha_seed, noise_seed = derive_seeds(run_seed)
    alpha = init_params(alpha_seed).alpha.copy()

    t = np.arange(n_total + 1) * period
    disturbance = np.asarray(scenario.disturbance(t), dtype=float)
    if scenario.noise is not None:
        noise = scenario.noise.stream(n_total + 1, period, seed=noise_seed)
    else:
        noise = np.zeros(n_total + 1)

    xs = np.zeros((n_total + 1, 4))
    us = np.zeros(n_total + 1)
    uraws = np.zeros(n_total + 1)
    es = np.zeros(n_total + 1)
    rs = np.zeros(n_total + 1)
    js = np.zeros(n_total + 1)
    bis_clean = np.zeros(n_total + 1)
    bis_dist = np.zeros(n_total + 1)
    bis_meas = np.zeros(n_total + 1)
    alphas = np.zeros((n_total + 1, 6))

    sign = -1.0 if cfg.sign_mode == "paper" else 1.0
    diverged = _kernels.closed_loop(
        ad, bd, model.a, model.b, use_rk4, n_sub, scheme.dt,
        n_ctrl, n_total,
        model.hill.e0, model.hill.emax, model.hill.ec50, model.hill.gamma,
        alpha,
        cfg.eta, cfg.k, cfg.k_u, cfg.em, cfg.u_min, cfg.u_max,
        period, scenario.target_bis,
        sign, cfg.antiwindup, cfg.dead_zone, cfg.closing_threshold,
        cfg.closing_band,
        disturbance, noise,
        xs, us, uraws, es, rs, js, bis_clean, bis_dist, bis_meas, alphas,
    )

    meta = _build_meta(patient, scenario, cfg, param_mode, scheme, run_seed,
                       controller_enabled, coast)
    if diverged >= 0:
        end = diverged + 1
        return SimTrace(meta=meta, t=t[:end], u=us[:end], u_raw=uraws[:end],
                        x=xs[:end], bis_clean=bis_clean[:end],
                        bis_disturbed=bis_dist[:end], bis_measured=bis_meas[:end],
                        e=es[:end], r=rs[:end], j=js[:end], alpha=alphas[:end],
                        status=STATUS_DIVERGED, diverged_tick=int(diverged))
    return SimTrace(meta=meta, t=t, u=us, u_raw=uraws, x=xs,
                    bis_clean=bis_clean, bis_disturbed=bis_dist,
                    bis_measured=bis_meas, e=es, r=rs, j=js, alpha=alphas)


def _even_ticks(span: float, step: float, what: str) -> int:
    n = int(round(span / step))
    if n < 0 or abs(n * step - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"{what} {span} is not an integer multiple of {step}")
    return n


def _build_meta(patient, scenario, cfg, param_mode, scheme, run_seed,
                controller_enabled, coast) -> dict:
    d, h = patient.demographics, patient.hill
    return {
        "version": __version__,
        "patient_id": patient.id,
        "age_years": d.age,
        "height_cm": d.height,
        "weight_kg": d.weight,
        "sex": d.sex,
        "ec50": h.ec50,
        "e0": h.e0,
        "emax": h.emax,
        "gamma": h.gamma,
        "scenario": scenario.name,
        "horizon_min": scenario.horizon,
        "target_bis": scenario.target_bis,
        "induction_end_min": scenario.induction_end,
        "n_events": len(scenario.events),
        "events": ";".join(
            f"{ev.label}:{ev.shape}@{ev.start}+{ev.duration}x{ev.amplitude}"
            for ev in scenario.events),
        "noise_std": 0.0 if scenario.noise is None else scenario.noise.std,
        "noise_cutoff_per_min": 0.0 if scenario.noise is None else scenario.noise.cutoff,
        "eta": cfg.eta,
        "k": cfg.k,
        "k_u": cfg.k_u,
        "em": cfg.em,
        "u_min": cfg.u_min,
        "u_max": cfg.u_max,
        "sample_period_min": cfg.sample_period,
        "sign_mode": cfg.sign_mode,
        "antiwindup": cfg.antiwindup,
        "dead_zone": cfg.dead_zone,
        "closing_threshold": cfg.closing_threshold,
        "closing_band": cfg.closing_band,
        "param_mode": param_mode,
        "scheme": scheme.method,
        "plant_dt_min": scheme.dt,
        "seed": run_seed,
        "controller_enabled": controller_enabled,
        "coast_min": coast,
    }


@dataclass
class CohortResult:
    """Traces and per-patient reports for one scenario over many patients."""

    traces: list
    reports: list            # metrics.MetricsReport per successful run
    summary: "object"        # metrics.CohortSummary
    failures: list = field(default_factory=list)  # (patient_id, message)


def _run_one(args):
    patient, scenario, cfg, param_mode, scheme, seed, coast = args
    return run(patient, scenario, cfg, param_mode=param_mode, scheme=scheme,
               seed=seed, coast=coast)


def run_cohort(patients, scenario: ScenarioSpec, cfg: ControllerConfig,
               *, master_seed: int = 0, param_mode: str = MODE_CORRECTED,
               scheme: StepScheme | None = None, jobs: int = 1,
               coast: float = 0.0) -> CohortResult:
    """Run every patient under an identical scenario with derived seeds.

    Individual divergences are recorded in failures and do not abort the
    cohort. Results are ordered by the input patient list, so parallel and
    serial execution produce identical output.
    """
    from . import metrics

    if not patients:
        raise ValueError("patient list is empty")
    scheme = scheme or StepScheme()
    jobs = max(1, int(jobs))
    tasks = [(p, scenario, cfg, param_mode, scheme,
              patient_seed(master_seed, p.id), coast) for p in patients]
    if jobs == 1 or len(tasks) == 1:
        traces = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            traces = list(pool.map(_run_one, tasks))
    for trace in traces:
        trace.meta["master_seed"] = master_seed

    reports = []
    failures = []
    for trace in traces:
        if trace.status == STATUS_OK:
            reports.append(metrics.compute_report(trace))
        else:
            failures.append((trace.patient_id,
                             f"diverged at tick {trace.diverged_tick}"))
    summary = metrics.summarize_cohort(reports) if reports else None
    return CohortResult(traces=traces, reports=reports, summary=summary,
                        failures=failures)
