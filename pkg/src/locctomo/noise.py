"""Finite-statistics measurement channel and convergence studies.

Local homodyne estimation is simulated honestly: the quadrature at local
oscillator phase theta of a zero-mean Gaussian mode has variance

    sigma^2(theta) = n + Re(m e^{-2 i theta}),

so N/3 samples are drawn at each of theta in {0, pi/4, pi/2} and the three
variance estimates are inverted for (n, Re m, Im m).  Conditioned-ensemble
moments use an analytic 1/sqrt(N) perturbation instead of shot-by-shot
simulation of the parity-sorted subensembles; this is a documented
simplification that reproduces the estimator scaling the protocol faces.

Determinism: every stream is derived from the master seed with
numpy SeedSequence spawn keys, so identical configurations reproduce
bit-identical outputs.  Trials of a sweep use spawn key (grid index,
trial index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channels import (
    ExactChannel,
    LocalEstimate,
    ParityStats,
    VacuumStats,
    exact_parity_stats,
    exact_vacuum_stats,
    swap_covariance,
)
from .conditioning import SubensembleMoments
from .errors import InvalidInputError
from .states import (
    LocalCovariance,
    LocalSymplectic,
    TwoModeCovariance,
    apply_local_symplectic,
)

#: sentinel sample count meaning "no noise"
EXACT = 0

MODE_ANALYTIC = "analytic-perturbation"
MODE_QUADRATURE = "quadrature-sampling"

#: absolute scale floor of conditioned-moment noise (vacuum unit)
SCALE_FLOOR = 0.5


@dataclass(frozen=True)
class NoisyChannelConfig:
    samples_local: int = 100_000
    samples_parity: int = 100_000
    samples_vacuum: int = 100_000
    seed: int = 0
    mode: str = MODE_QUADRATURE
    noise_scale: float = 1.0  # the constant c in c * scale / sqrt(N)

    def __post_init__(self):
        for name in ("samples_local", "samples_parity", "samples_vacuum"):
            n = getattr(self, name)
            if n != EXACT and n < 10:
                raise InvalidInputError(f"{name} must be >= 10 (or 0 for exact)")
        if self.mode not in (MODE_ANALYTIC, MODE_QUADRATURE):
            raise InvalidInputError(f"unknown noise mode {self.mode!r}")


@dataclass(frozen=True)
class LocalCovarianceEstimate:
    cov: LocalCovariance
    se_n: float
    se_m: float
    physical_warning: bool


def quadrature_variance(local: LocalCovariance, theta: float) -> float:
    """Variance of the homodyne quadrature at LO phase theta."""
    return local.n + (local.m * np.exp(-2j * theta)).real


def estimate_local_covariance(
    local: LocalCovariance, n_samples: int, rng: np.random.Generator
) -> LocalCovarianceEstimate:
    """Estimate (n, m) from simulated homodyne records.

    Draws n_samples/3 zero-mean Gaussian quadrature samples at each of the
    three LO phases 0, pi/4, pi/2 and inverts the measured variances.  The
    estimator is consistent; standard errors follow from the chi-squared
    variance of a sample second moment, var(v) = 2 v^2 / k.
    """
    if n_samples == EXACT:
        return LocalCovarianceEstimate(local, 0.0, 0.0, False)
    if n_samples < 10:
        raise InvalidInputError("need at least 10 samples")
    k = max(n_samples // 3, 1)
    v_hat = []
    se = []
    for theta in (0.0, math.pi / 4, math.pi / 2):
        sigma2 = quadrature_variance(local, theta)
        x = rng.standard_normal(k) * math.sqrt(sigma2)
        v = float(np.mean(x * x))
        v_hat.append(v)
        se.append(v * math.sqrt(2.0 / k))
    n_est = 0.5 * (v_hat[0] + v_hat[2])
    re_m = 0.5 * (v_hat[0] - v_hat[2])
    im_m = v_hat[1] - n_est
    se_n = 0.5 * math.hypot(se[0], se[2])
    se_m = max(se_n, math.hypot(se[1], se_n))
    return LocalCovarianceEstimate(
        LocalCovariance(n_est, complex(re_m, im_m)),
        se_n,
        se_m,
        physical_warning=n_est < 0.5,
    )


def perturb_value(value, n_samples: int, rng: np.random.Generator, c: float = 1.0):
    """Add zero-mean Gaussian noise of sd c * max(|value|, 1/2) / sqrt(N)
    to each real component; returns (noisy value, standard error)."""
    if n_samples == EXACT:
        return value, 0.0
    scale = max(abs(value), SCALE_FLOOR)
    se = c * scale / math.sqrt(n_samples)
    if isinstance(value, complex):
        return value + complex(rng.normal(0.0, se), rng.normal(0.0, se)), se
    return value + rng.normal(0.0, se), se


def perturb_conditioned_moments(
    moments: SubensembleMoments, n_samples: int, rng: np.random.Generator, c: float = 1.0
) -> tuple[SubensembleMoments, float, float]:
    """Noisy version of a conditioned subensemble's (number, anomalous)."""
    number, se_number = perturb_value(float(moments.number), n_samples, rng, c)
    anomalous, se_anomalous = perturb_value(complex(moments.anomalous), n_samples, rng, c)
    return SubensembleMoments(number, anomalous), se_number, se_anomalous


class NoisyChannel:
    """Finite-statistics channel over a hidden truth.

    The hidden truth itself is never mutated by noise; transform requests
    recompute the exact transformed truth and every fetch re-perturbs with
    a fresh deterministic substream.
    """

    def __init__(self, truth: TwoModeCovariance, config: NoisyChannelConfig):
        self._truth = truth
        self.config = config
        self._fetch_count = 0

    @property
    def truth(self) -> TwoModeCovariance:
        return self._truth

    def _rng(self) -> np.random.Generator:
        rng = np.random.default_rng(
            np.random.SeedSequence(self.config.seed, spawn_key=(self._fetch_count,))
        )
        self._fetch_count += 1
        return rng

    def local_covariances(self) -> tuple[LocalEstimate, LocalEstimate]:
        cfg = self.config
        rng = self._rng()
        out = []
        for local in (self._truth.mode1(), self._truth.mode2()):
            if cfg.mode == MODE_QUADRATURE:
                est = estimate_local_covariance(local, cfg.samples_local, rng)
                out.append(LocalEstimate(est.cov, est.se_n, est.se_m, est.physical_warning))
            else:
                n, se_n = perturb_value(local.n, cfg.samples_local, rng, cfg.noise_scale)
                m, se_m = perturb_value(complex(local.m), cfg.samples_local, rng, cfg.noise_scale)
                out.append(LocalEstimate(LocalCovariance(n, m), se_n, se_m, n < 0.5))
        return out[0], out[1]

    def parity_stats(self) -> ParityStats:
        cfg = self.config
        rng = self._rng()
        exact = exact_parity_stats(self._truth)
        even, se_n_e, se_a_e = perturb_conditioned_moments(
            exact.even, cfg.samples_parity, rng, cfg.noise_scale
        )
        odd, se_n_o, se_a_o = perturb_conditioned_moments(
            exact.odd, cfg.samples_parity, rng, cfg.noise_scale
        )
        return ParityStats(
            even, odd, exact.p_even, exact.p_odd,
            se_number=math.hypot(se_n_e, se_n_o),
            se_anomalous=math.hypot(se_a_e, se_a_o),
        )

    def vacuum_stats(self) -> VacuumStats:
        cfg = self.config
        rng = self._rng()
        exact = exact_vacuum_stats(self._truth)
        number, se_number = perturb_value(exact.number, cfg.samples_vacuum, rng, cfg.noise_scale)
        anomalous, se_anomalous = perturb_value(
            complex(exact.anomalous), cfg.samples_vacuum, rng, cfg.noise_scale
        )
        return VacuumStats(number, anomalous, exact.probability, se_number, se_anomalous)

    def apply_transform(self, transform: LocalSymplectic) -> None:
        self._truth = apply_local_symplectic(self._truth, transform)

    def swap_modes(self) -> None:
        self._truth = swap_covariance(self._truth)


def make_channel(truth: TwoModeCovariance, n_samples: int, seed: int,
                 noise_scale: float = 1.0, mode: str = MODE_QUADRATURE):
    """ExactChannel for the sentinel sample count, NoisyChannel otherwise."""
    if n_samples == EXACT:
        return ExactChannel(truth)
    cfg = NoisyChannelConfig(
        samples_local=n_samples, samples_parity=n_samples, samples_vacuum=n_samples,
        seed=seed, mode=mode, noise_scale=noise_scale,
    )
    return NoisyChannel(truth, cfg)


# ---------------------------------------------------------------------------
# convergence sweep
# ---------------------------------------------------------------------------

MOMENT_NAMES = ("n1", "n2", "m1", "m2", "ms", "mc")


def reconstruction_errors(recovered: TwoModeCovariance, truth: TwoModeCovariance) -> dict:
    """Per-moment relative errors with a vacuum-unit floor on the scale.

    The protocol determines the correlation pair only up to a joint sign
    (physically a local pi rotation), so the error is gauge-aware: the
    better of the two sign assignments is reported.
    """
    def errs(rec):
        out = {}
        for name in MOMENT_NAMES:
            a, b = getattr(rec, name), getattr(truth, name)
            out[name] = abs(a - b) / max(abs(b), SCALE_FLOOR)
        return out

    flipped = TwoModeCovariance(
        recovered.n1, recovered.n2, recovered.m1, recovered.m2,
        -recovered.ms, -recovered.mc,
    )
    e1, e2 = errs(recovered), errs(flipped)
    return e1 if max(e1.values()) <= max(e2.values()) else e2


@dataclass(frozen=True)
class SweepRow:
    n_samples: int
    trial: int
    errors: dict
    status: str

    @property
    def err_max(self) -> float:
        return max(self.errors.values()) if self.errors else float("nan")


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    medians: dict  # n_samples -> (median, q1, q3) of err_max
    failure_rates: dict  # n_samples -> fraction
    slope: float | None  # least-squares slope of log10(median) vs log10(N)

    def csv_lines(self):
        yield "N,trial," + ",".join(f"err_{n}" for n in MOMENT_NAMES) + ",err_max,status"
        for row in self.rows:
            errs = [f"{row.errors.get(n, float('nan')):.17g}" for n in MOMENT_NAMES]
            err_max = f"{row.err_max:.17g}"
            yield f"{row.n_samples},{row.trial}," + ",".join(errs) + f",{err_max},{row.status}"


def convergence_sweep(
    truth: TwoModeCovariance,
    n_grid,
    trials: int,
    seed: int,
    protocol_config=None,
    noise_scale: float = 1.0,
) -> SweepResult:
    """Run the protocol over the noisy channel across a sample-count grid.

    Failed reconstructions are counted per grid point, not fatal.  The
    log-log slope of the median error is fit by least squares over the
    noisy (N > 0) grid points.
    """
    from .reconstruct import ProtocolConfig, run_protocol

    config = protocol_config or ProtocolConfig()
    rows = []
    medians = {}
    failure_rates = {}
    for gi, n_samples in enumerate(n_grid):
        errs = []
        failures = 0
        for trial in range(trials):
            # stated splitting rule: trial stream = SeedSequence(master,
            # spawn_key=(grid index, trial index))
            trial_seed = int(
                np.random.SeedSequence(seed, spawn_key=(gi, trial)).generate_state(1)[0]
            )
            channel = make_channel(truth, int(n_samples), trial_seed, noise_scale)
            report = run_protocol(channel, config)
            if report.status in ("exact-success", "noisy-success") and report.recovered:
                errors = reconstruction_errors(report.recovered, truth)
                rows.append(SweepRow(int(n_samples), trial, errors, report.status))
                errs.append(max(errors.values()))
            else:
                failures += 1
                rows.append(SweepRow(int(n_samples), trial, {}, report.status))
        failure_rates[int(n_samples)] = failures / max(trials, 1)
        if errs:
            q1, med, q3 = np.percentile(errs, [25, 50, 75])
            medians[int(n_samples)] = (float(med), float(q1), float(q3))
    noisy_points = [
        (math.log10(n), math.log10(medians[n][0]))
        for n in medians
        if n > 0 and medians[n][0] > 0
    ]
    slope = None
    if len(noisy_points) >= 2:
        xs = np.array([p[0] for p in noisy_points])
        ys = np.array([p[1] for p in noisy_points])
        slope = float(np.polyfit(xs, ys, 1)[0])
    return SweepResult(tuple(rows), medians, failure_rates, slope)
