"""Chip layer stack, grating aperture, emitter pose, and derived geometry.

Provides the slab-mode effective index (multilayer transfer matrix) and the
solid-angle fraction subtended by the grating aperture as seen from the ion,
including refraction through the oxide cladding.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.optimize import brentq

from . import constants


class NoGuidedModeError(ValueError):
    """The requested slab structure supports no guided mode."""


@dataclass(frozen=True)
class Layer:
    name: str
    thickness: float        # m
    refractive_index: float

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError(f"layer {self.name!r}: thickness must be > 0")
        if self.refractive_index < 1:
            raise ValueError(f"layer {self.name!r}: index must be >= 1")


@dataclass(frozen=True)
class LayerStack:
    """Vertical cross-section of the chip around the grating.

    ``layers`` are ordered bottom to top and describe the finite inner
    layers; semi-infinite claddings of index ``cladding_index`` bound the
    stack on both sides.  ``guiding`` names the layers that form the grating
    waveguide (the two grating layers plus the spacer between them).
    """
    layers: tuple[Layer, ...]
    design_wavelength: float = constants.DESIGN_WAVELENGTH
    cladding_index: float = constants.N_SIO2
    guiding: tuple[str, ...] = ()

    def __post_init__(self):
        if self.design_wavelength <= 0:
            raise ValueError("design wavelength must be > 0")
        names = [l.name for l in self.layers]
        for g in self.guiding:
            if g not in names:
                raise ValueError(f"guiding layer {g!r} not in stack")

    @property
    def guiding_layers(self) -> tuple[Layer, ...]:
        return tuple(l for l in self.layers if l.name in self.guiding)

    def index_profile(self):
        """(indices, thicknesses) of the inner layers, bottom to top."""
        return (np.array([l.refractive_index for l in self.layers]),
                np.array([l.thickness for l in self.layers]))


def default_stack() -> LayerStack:
    """The bilayer silicon nitride grating stack used throughout."""
    return LayerStack(
        layers=(
            Layer("lower_nitride", 100e-9, constants.N_SIN),
            Layer("spacer_oxide", 90e-9, constants.N_SIO2),
            Layer("upper_nitride", 100e-9, constants.N_SIN),
        ),
        design_wavelength=constants.DESIGN_WAVELENGTH,
        cladding_index=constants.N_SIO2,
        guiding=("lower_nitride", "spacer_oxide", "upper_nitride"),
    )


@dataclass(frozen=True)
class GratingFootprint:
    """Grating aperture: starts at x=0, centered on y=0."""
    x_extent: float = 30e-6
    y_extent: float = 30e-6

    def __post_init__(self):
        if self.x_extent < 0 or self.y_extent < 0:
            raise ValueError("footprint extents must be >= 0")

    @property
    def area(self) -> float:
        return self.x_extent * self.y_extent


@dataclass(frozen=True)
class IonPose:
    """Emitter position relative to the grating plane.

    The ion sits ``height_above_surface`` of vacuum above the chip surface;
    ``cladding_thickness`` of oxide separates the surface from the grating.
    """
    x_ion: float = 28e-6
    y_ion: float = 0.0
    height_above_surface: float = 50e-6
    cladding_thickness: float = 5e-6

    def __post_init__(self):
        if self.height_above_surface <= 0:
            raise ValueError("height_above_surface must be > 0")
        if self.cladding_thickness < 0:
            raise ValueError("cladding_thickness must be >= 0")

    @property
    def z_ion(self) -> float:
        """Total standoff from the grating plane."""
        return self.height_above_surface + self.cladding_thickness


# ---------------------------------------------------------------------------
# Slab-mode effective index (multilayer transfer matrix)

def _dispersion(beta: float, k0: float, ns, ds, cladding_index: float,
                polarization: str) -> float:
    """Guided-mode dispersion function; zero at a guided mode.

    Launches a decaying field in the bottom cladding and propagates
    (field, scaled derivative) through the inner layers; the return value is
    the mismatch against a decaying field in the top cladding.
    """
    tm = polarization == "TM"
    gamma = np.sqrt(complex(beta**2 - (k0 * cladding_index) ** 2))
    g = gamma / cladding_index**2 if tm else gamma
    u, v = 1.0 + 0j, g
    for n, d in zip(ns, ds):
        k = np.sqrt(complex((k0 * n) ** 2 - beta**2))
        q = k / n**2 if tm else k
        c = np.cos(k * d)
        s_over_q = d if abs(q) < 1e-30 else np.sin(k * d) / q
        u, v = c * u + s_over_q * v, -q * np.sin(k * d) * u + c * v
    return (v + g * u).real


def effective_index(stack: LayerStack, wavelength: float | None = None,
                    polarization: str = "TE", tol: float = 1e-10) -> float:
    """Fundamental slab-mode effective index of the stack.

    Scans the dispersion function between the cladding and peak core index
    and bisects the highest-index sign change (the fundamental mode).

    Raises NoGuidedModeError if no guided mode exists.
    """
    if polarization not in ("TE", "TM"):
        raise ValueError("polarization must be 'TE' or 'TM'")
    lam = stack.design_wavelength if wavelength is None else wavelength
    k0 = 2 * np.pi / lam
    ns, ds = stack.index_profile()
    n_max = float(ns.max(initial=stack.cladding_index))
    if n_max <= stack.cladding_index:
        raise NoGuidedModeError("no index contrast above cladding")

    lo = k0 * stack.cladding_index * (1 + 1e-9)
    hi = k0 * n_max * (1 - 1e-9)
    grid = np.linspace(hi, lo, 2048)
    f = [_dispersion(b, k0, ns, ds, stack.cladding_index, polarization)
         for b in grid]
    for i in range(len(grid) - 1):
        if f[i] == 0.0:
            return grid[i] / k0
        if f[i] * f[i + 1] < 0:
            a, b = grid[i + 1], grid[i]
            beta = brentq(
                _dispersion, a, b,
                args=(k0, ns, ds, stack.cladding_index, polarization),
                xtol=tol * k0)
            return beta / k0
    raise NoGuidedModeError(
        f"no guided {polarization} mode (contrast too low or layers too thin)")


def wavelength_in_medium(wavelength: float, n_medium: float) -> float:
    """Optical wavelength inside a medium of index ``n_medium``."""
    if n_medium < 1:
        raise ValueError("n_medium must be >= 1")
    return wavelength / n_medium


# ---------------------------------------------------------------------------
# Solid angle through the refracting cladding

def _horizontal_reach(theta: float, pose: IonPose, n_clad: float) -> float:
    """Horizontal distance from ion nadir where a ray at vacuum polar angle
    ``theta`` lands on the grating plane, after refracting into the cladding."""
    s = np.sin(theta) / n_clad
    return (pose.height_above_surface * np.tan(theta)
            + pose.cladding_thickness * s / np.sqrt(1.0 - s * s))


def vacuum_angle_for_point(rho: float, pose: IonPose, n_clad: float) -> float:
    """Vacuum polar angle of the ray reaching horizontal distance ``rho``."""
    if rho <= 0:
        return 0.0
    hi = np.pi / 2 - 1e-9
    return brentq(lambda t: _horizontal_reach(t, pose, n_clad) - rho,
                  0.0, hi, xtol=1e-14)


class ApertureProjection:
    """Refraction-aware mapping between the grating plane and ion-frame
    emission directions.

    Tabulates the vacuum polar angle theta(rho) and the direction-space
    density dOmega/dA on a dense grid once, then evaluates by monotone
    interpolation.  With zero cladding the density reduces to the familiar
    z dA / r^3 projection.
    """

    def __init__(self, pose: IonPose, n_cladding: float = constants.N_SIO2,
                 theta_max: float = np.pi / 2 - 1e-6, n_grid: int = 6000):
        from scipy.interpolate import PchipInterpolator

        self.pose = pose
        self.n_cladding = n_cladding
        theta = np.linspace(0.0, theta_max, n_grid)
        s = np.sin(theta) / n_cladding
        rho = (pose.height_above_surface * np.tan(theta)
               + pose.cladding_thickness * s / np.sqrt(1.0 - s * s))
        drho = (pose.height_above_surface / np.cos(theta) ** 2
                + pose.cladding_thickness * (np.cos(theta) / n_cladding)
                / (1.0 - s * s) ** 1.5)
        zeff = pose.height_above_surface + pose.cladding_thickness / n_cladding
        weight = np.empty_like(rho)
        weight[0] = 1.0 / zeff**2
        weight[1:] = np.sin(theta[1:]) / (rho[1:] * drho[1:])
        self.rho_max = rho[-1]
        self._theta = PchipInterpolator(rho, theta, extrapolate=False)
        self._weight = PchipInterpolator(rho, weight, extrapolate=False)

    def vacuum_angle(self, rho):
        """Vacuum polar angle of the ray reaching horizontal distance rho."""
        return np.nan_to_num(self._theta(rho), nan=np.pi / 2)

    def weight(self, rho):
        """dOmega/dA on the grating plane at horizontal distance rho."""
        return np.nan_to_num(self._weight(rho), nan=0.0)


def solid_angle_fraction(footprint: GratingFootprint, pose: IonPose,
                         n_cladding: float = constants.N_SIO2,
                         tol: float = 1e-5) -> float:
    """Fraction of total emission solid angle subtended by the footprint.

    Integrates the direction-space measure over the aperture, accounting for
    refraction at the vacuum/cladding interface (the grating appears closer
    than its physical standoff).
    """
    if footprint.area == 0:
        return 0.0
    proj = ApertureProjection(pose, n_cladding)

    def integrand(y, x):
        rho = np.hypot(x - pose.x_ion, y - pose.y_ion)
        return proj.weight(rho)

    omega, _ = integrate.dblquad(
        integrand, 0.0, footprint.x_extent,
        -footprint.y_extent / 2, footprint.y_extent / 2,
        epsabs=tol * 4 * np.pi, epsrel=1e-7)
    return omega / (4 * np.pi)
