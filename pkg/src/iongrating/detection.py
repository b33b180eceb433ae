"""Detection-chain analytics: loss ledgers, calibration, state detection.

Covers dB loss bookkeeping with quadrature uncertainties, the ratio-method
efficiency calibration, analytic and Monte Carlo state-detection fidelity,
adaptive-bin readout timing, and thermal-motion Rabi dynamics.  All Monte
Carlo routines use a counter-based generator with an explicit seed.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_laguerre
from scipy.stats import poisson

__all__ = [
    "DetectionConfig", "LedgerEntry", "LossLedger", "RabiModel",
    "adaptive_timing", "bright_fidelity_analytic", "dark_fidelity_mc",
    "histogram_sim", "load_ledger", "measured_loss_ledger",
    "emission_loss_ledger", "improved_loss_ledger", "ratio_method",
    "rabi_thermal", "save_histogram", "save_ledger",
]


# ---------------------------------------------------------------------------
# Loss ledger

@dataclass
class LedgerEntry:
    label: str
    db: float
    sigma_db: float = 0.0
    group: str = ""


@dataclass
class LossLedger:
    entries: list = field(default_factory=list)

    def add(self, label: str, db: float, sigma_db: float = 0.0,
            group: str = "") -> None:
        self.entries.append(LedgerEntry(label, db, sigma_db, group))

    def total(self) -> tuple:
        """(sum of entries in dB, quadrature-combined uncertainty in dB)."""
        db = sum(e.db for e in self.entries)
        sigma = float(np.sqrt(sum(e.sigma_db**2 for e in self.entries)))
        return float(db), sigma

    def fraction(self) -> float:
        """Linear power fraction corresponding to the total."""
        return 10.0 ** (self.total()[0] / 10.0)


def measured_loss_ledger() -> LossLedger:
    """Detection-efficiency budget measured on the ion (count-ratio path)."""
    ledger = LossLedger()
    ledger.add("count ratio, integrated to free-space", -27.34, 0.04)
    ledger.add("free-space detection efficiency", -20.34, 0.1)
    return ledger


def emission_loss_ledger() -> LossLedger:
    """Budget assembled from the emission-profile calculation."""
    ledger = LossLedger()
    ledger.add("grating input to detector", -8.5, 0.7)
    ledger.add("detector quantum efficiency (PMT)", -5.5)
    ledger.add("collection from emission profile", -33.9)
    return ledger


def improved_loss_ledger() -> LossLedger:
    """Budget with the known hardware improvements applied."""
    ledger = LossLedger()
    ledger.add("grating input to detector", -5.0)
    ledger.add("detector quantum efficiency (SPAD)", -1.6)
    ledger.add("collection, design-matched fabrication", -21.5)
    return ledger


def save_ledger(ledger: LossLedger, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "db", "sigma_db", "group"])
        for e in ledger.entries:
            writer.writerow([e.label, repr(e.db), repr(e.sigma_db), e.group])


def load_ledger(path) -> LossLedger:
    ledger = LossLedger()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label", "db", "sigma_db", "group"]:
            raise ValueError(f"{path}: unrecognized ledger header {header}")
        for row in reader:
            if len(row) != 4:
                raise ValueError(f"{path}: malformed row {row}")
            ledger.add(row[0], float(row[1]), float(row[2]), row[3])
    return ledger


# ---------------------------------------------------------------------------
# Calibration

def ratio_method(eff_free: float, sigma_free: float,
                 ratio: float, sigma_ratio: float) -> tuple:
    """Integrated-path efficiency from the free-space calibration.

    Multiplies the free-space detection efficiency by the count ratio
    between the integrated and free-space paths; relative uncertainties
    combine in quadrature.
    """
    if eff_free <= 0 or ratio <= 0:
        raise ValueError("efficiency and ratio must be positive")
    value = eff_free * ratio
    rel = np.hypot(sigma_free / eff_free, sigma_ratio / ratio)
    return float(value), float(value * rel)


# ---------------------------------------------------------------------------
# State detection

@dataclass
class DetectionConfig:
    bright_rate: float = 297.0       # counts/s from the bright state
    dark_rate: float = 8.1           # counts/s background (scatter 4.3,
    #                                  detector 3.0, other 0.8)
    window: float = 0.008            # s
    threshold: int = 1               # counts: bright iff counts >= this
    bins: int = 10                   # adaptive-readout time bins
    d_lifetime: float = 0.39         # s, metastable dark-state lifetime
    shelving_failure: float = 0.005  # probability the shelf pulse fails

    def __post_init__(self):
        if self.bright_rate < 0 or self.dark_rate < 0:
            raise ValueError("count rates must be nonnegative")
        if self.window <= 0:
            raise ValueError("detection window must be positive")
        if self.threshold < 1:
            raise ValueError("threshold must be at least one count")
        if self.bins < 1:
            raise ValueError("need at least one time bin")
        if not 0.0 <= self.shelving_failure <= 1.0:
            raise ValueError("shelving failure is a probability")
        if self.d_lifetime <= 0:
            raise ValueError("dark-state lifetime must be positive")

    @property
    def poisson_mean(self) -> float:
        return self.bright_rate * self.window

    @property
    def signal_to_background(self) -> float:
        return self.bright_rate / self.dark_rate


def bright_fidelity_analytic(config: DetectionConfig) -> float:
    """P(at least ``threshold`` counts) for a bright ion, Poisson model."""
    return float(poisson.sf(config.threshold - 1, config.poisson_mean))


def _dark_counts(config: DetectionConfig, trials: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Counts collected from a nominally dark (shelved) ion."""
    shelf_failed = rng.random(trials) < config.shelving_failure
    t_decay = rng.exponential(config.d_lifetime, trials)
    bright_time = np.clip(config.window - t_decay, 0.0, None)
    bright_time[shelf_failed] = config.window
    counts = rng.poisson(config.dark_rate * config.window, trials)
    counts += rng.poisson(config.bright_rate * bright_time)
    return counts


def dark_fidelity_mc(config: DetectionConfig, trials: int = 10**6,
                     seed: int = 0) -> tuple:
    """Monte Carlo dark-state fidelity with its binomial uncertainty.

    Error channels: the shelving pulse fails (ion starts bright) or the
    shelved state decays during the window, scattering at the bright rate
    from the decay instant; background counts accrue regardless.
    """
    if trials < 10**4:
        raise ValueError("need at least 1e4 trials for a stable estimate")
    rng = np.random.Generator(np.random.Philox(seed))
    counts = _dark_counts(config, trials, rng)
    p = float(np.mean(counts < config.threshold))
    sigma = float(np.sqrt(max(p * (1.0 - p), 1e-300) / trials))
    return p, sigma


def histogram_sim(config: DetectionConfig, state: str, trials: int = 10**5,
                  seed: int = 0, background_in_bright: bool = False
                  ) -> np.ndarray:
    """Simulated photon-count histogram; index = counts, value = trials."""
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.Generator(np.random.Philox(seed))
    if state == "bright":
        counts = rng.poisson(config.poisson_mean, trials)
        if background_in_bright:
            counts += rng.poisson(config.dark_rate * config.window, trials)
    elif state == "dark":
        counts = _dark_counts(config, trials, rng)
    else:
        raise ValueError(f"unknown state {state!r}")
    return np.bincount(counts)


def adaptive_timing(config: DetectionConfig, trials: int = 10**6,
                    seed: int = 0, convention: str = "censored-zero"
                    ) -> tuple:
    """Mean adaptive readout times (bright, bright/dark mixed), seconds.

    The window is split into equal bins; a bright trial is classified at
    the end of the first bin containing a count.  Trials with no count in
    any bin contribute zero time under the default ``censored-zero``
    convention, or the full window under ``full-window``.  Dark trials
    always consume the full window, so the mixed mean is the average of
    the bright mean and the window.
    """
    if config.bins < 2:
        raise ValueError("adaptive readout needs at least two bins")
    if convention not in ("censored-zero", "full-window"):
        raise ValueError(f"unknown timing convention {convention!r}")
    rng = np.random.Generator(np.random.Philox(seed))
    bin_width = config.window / config.bins
    p_count = 1.0 - np.exp(-config.bright_rate * bin_width)
    if p_count <= 0.0:
        first = np.full(trials, config.bins + 1)
    else:
        first = rng.geometric(p_count, trials)
    detected = first <= config.bins
    times = np.where(detected, first * bin_width,
                     0.0 if convention == "censored-zero" else config.window)
    bright_mean = float(np.mean(times))
    mixed_mean = 0.5 * (bright_mean + config.window)
    return bright_mean, mixed_mean


# ---------------------------------------------------------------------------
# Thermal Rabi model

@dataclass
class RabiModel:
    omega0: float                 # bare Rabi frequency, rad/s
    eta_ld: float = 0.0           # Lamb-Dicke parameter
    n_bar: float = 0.0            # thermal mean occupation
    n_cutoff: int | None = None   # Fock-state truncation

    def __post_init__(self):
        if self.eta_ld < 0 or self.n_bar < 0:
            raise ValueError("eta and n-bar must be nonnegative")
        if self.n_cutoff is None:
            # thermal tail: keep >0.999 of the weight
            self.n_cutoff = max(20, int(np.ceil(10 * (self.n_bar + 1))))

    def weights(self) -> np.ndarray:
        n = np.arange(self.n_cutoff + 1)
        w = (self.n_bar / (self.n_bar + 1.0)) ** n / (self.n_bar + 1.0)
        if w.sum() <= 0.999:
            raise ValueError(
                f"cutoff {self.n_cutoff} keeps only {w.sum():.4f} of the "
                f"thermal weight; raise n_cutoff")
        return w


def rabi_thermal(t, model: RabiModel):
    """Ground-state population under carrier Rabi driving of a thermal ion.

    P(t) = sum_n p_n cos^2(Omega_n t / 2) with carrier frequencies
    Omega_n = Omega0 exp(-eta^2/2) L_n(eta^2); thermal weights are
    renormalized over the truncated Fock basis so P(0) = 1.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    w = model.weights()
    w = w / w.sum()
    n = np.arange(model.n_cutoff + 1)
    eta_sq = model.eta_ld**2
    omega_n = model.omega0 * np.exp(-eta_sq / 2.0) * eval_laguerre(n, eta_sq)
    t_flat = t.reshape(-1)
    phases = 0.5 * omega_n[:, None] * t_flat[None, :]
    p = (w[:, None] * np.cos(phases) ** 2).sum(axis=0)
    return p.reshape(t.shape) if t.ndim else float(p[0])


def save_histogram(hist: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["count", "frequency"])
        for k, v in enumerate(np.asarray(hist)):
            writer.writerow([k, int(v)])
