"""Ion-grating coupling efficiency from fields or intensity profiles.

Two routes to the coupling efficiency eta:

* the mode-overlap formula eta = (1/16) w0^2 |p . E_g*(r0)|^2 with the
  dipole moment scaled to emit unit power and the grating field normalized
  to unit power, and
* the intensity shortcut eta = lambda^2 I_max / (4 pi s^2) applied to the
  brightest pixel of the combined (equal-weight, unit-total-power) TE/TM
  intensity profile.

With the sigma-dominant projection (2/3 branching times 1/2 per
polarization mode, applied as a squared projection) the two routes agree
identically: (1/16) w0^2 p0^2 * 2 c mu0 = 3 lambda^2 / (8 pi), and
summing 1/3 of that over both modes reproduces the 1/(4 pi) prefactor.
"""

from dataclasses import dataclass, field

import numpy as np

from .constants import C0, DESIGN_WAVELENGTH, MU0
from .propagation import FieldGrid

__all__ = [
    "SIGMA_MODE_PROJECTION_SQ", "CollectionMap", "CouplingResult",
    "CrosstalkReport", "collection_map", "combine_intensity_profiles",
    "coupling_at_point", "coupling_field_overlap", "crosstalk_metrics",
    "dipole_moment_scale", "efficiency_from_intensity",
    "field_amplitude_from_intensity",
]

# squared projection of a sigma-emission dipole onto one waveguide mode:
# 2/3 branching into sigma times 1/2 into either linear polarization
SIGMA_MODE_PROJECTION_SQ = (2.0 / 3.0) * (1.0 / 2.0)


@dataclass
class CouplingResult:
    eta: float
    method: str              # "field-overlap" or "intensity-formula"
    polarization: str        # "TE", "TM", or "TE+TM"
    position: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"coupling efficiency {self.eta} outside [0, 1]")


@dataclass
class CollectionMap:
    x: np.ndarray            # ion x offsets, m
    y: np.ndarray
    eta: np.ndarray          # (ny, nx) total coupling efficiency
    eta_te: np.ndarray
    eta_tm: np.ndarray
    z: float
    peak: tuple = field(default=None)  # (x, y) of the map maximum

    def __post_init__(self):
        if np.any(self.eta < 0):
            raise ValueError("collection map must be nonnegative")
        j, i = np.unravel_index(np.argmax(self.eta), self.eta.shape)
        self.peak = (float(self.x[i]), float(self.y[j]))


@dataclass
class CrosstalkReport:
    power_ratio: float       # total TM / total TE
    suppression_db: float    # TM vs TE at the TE maximum
    offset: float            # |TE argmax - TM argmax|, m


def dipole_moment_scale(wavelength: float = DESIGN_WAVELENGTH) -> float:
    """Dipole moment p0 emitting unit power, sqrt(3 lambda^4/(4 pi^3 c^3 mu0))."""
    return np.sqrt(3.0 * wavelength**4 / (4.0 * np.pi**3 * C0**3 * MU0))


def coupling_field_overlap(p, e_g, wavelength: float = DESIGN_WAVELENGTH,
                           omega0: float | None = None) -> float:
    """Mode-overlap coupling efficiency (1/16) w0^2 |p . E_g*|^2.

    ``p`` is the dipole polarization vector in A m s / sqrt(W) (its
    magnitude p0 for unit emitted power), ``e_g`` the unit-power-normalized
    grating field at the ion in V/(m sqrt(W)); both may be complex
    3-vectors or scalars.
    """
    if omega0 is None:
        omega0 = 2.0 * np.pi * C0 / wavelength
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    e_g = np.atleast_1d(np.asarray(e_g, dtype=complex))
    if p.shape != e_g.shape:
        raise ValueError("dipole and field vectors must share a shape")
    proj = np.sum(p * np.conj(e_g))
    return float(omega0**2 / 16.0 * np.abs(proj) ** 2)


def field_amplitude_from_intensity(i_g):
    """Unit-power field magnitude E_g = sqrt(2 c mu0) sqrt(I_g).

    ``i_g`` is the intensity per unit area normalized to unit power
    (1/m^2); the result is in V/(m sqrt(W)).
    """
    return np.sqrt(2.0 * C0 * MU0) * np.sqrt(np.asarray(i_g, dtype=float))


def efficiency_from_intensity(i_max: float, pixel_size: float,
                              wavelength: float = DESIGN_WAVELENGTH) -> float:
    """Intensity-shortcut efficiency lambda^2 I_max / (4 pi s^2).

    ``i_max`` is the unit-less brightest-pixel value of a combined profile
    whose pixel values sum to one.
    """
    if i_max < 0:
        raise ValueError("intensity must be nonnegative")
    if i_max > 1.0 + 1e-12:
        raise ValueError("brightest pixel exceeds the total power; the "
                         "profile is not normalized")
    eta = wavelength**2 / (4.0 * np.pi) * i_max / pixel_size**2
    if eta > 1.0:
        raise ValueError(f"unphysical efficiency {eta:.3g}; check the "
                         f"profile normalization and pixel size")
    return float(eta)


def combine_intensity_profiles(field_te: FieldGrid,
                               field_tm: FieldGrid,
                               weights=(0.5, 0.5)) -> np.ndarray:
    """Unit-total-power combination of per-mode intensity profiles.

    Each field's |E|^2 is normalized to unit total and the two are summed
    with the given weights (default equal weight).  Returns the unit-less
    per-pixel profile used by :func:`efficiency_from_intensity`.
    """
    _check_grids_match(field_te, field_tm)
    if abs(sum(weights) - 1.0) > 1e-12:
        raise ValueError("combination weights must sum to one")
    out = np.zeros(field_te.data.shape, dtype=float)
    for w, f in zip(weights, (field_te, field_tm)):
        intensity = np.abs(f.data) ** 2
        total = intensity.sum()
        if total <= 0.0:
            raise ValueError(f"{f.polarization} field carries no power")
        out += w * intensity / total
    return out


def _check_grids_match(a: FieldGrid, b: FieldGrid) -> None:
    if (a.data.shape != b.data.shape or a.pixel_size != b.pixel_size
            or a.x0 != b.x0 or a.y0 != b.y0):
        raise ValueError("TE and TM grids do not share a raster")


def _mode_eta(fieldgrid: FieldGrid, j: int, i: int, projection_sq: float,
              wavelength: float) -> float:
    # Eq. 3 with the scalar per-mode field: |p . E*|^2 =
    # p0^2 * projection_sq * 2 c mu0 * I_density
    i_density = np.abs(fieldgrid.data[j, i]) ** 2
    omega0 = 2.0 * np.pi * C0 / wavelength
    p0 = dipole_moment_scale(wavelength)
    return float(omega0**2 / 16.0 * p0**2 * projection_sq
                 * 2.0 * C0 * MU0 * i_density)


def coupling_at_point(field_te: FieldGrid, field_tm: FieldGrid,
                      x: float, y: float,
                      projection_sq=(SIGMA_MODE_PROJECTION_SQ,
                                     SIGMA_MODE_PROJECTION_SQ),
                      wavelength: float | None = None) -> CouplingResult:
    """Field-overlap coupling for an ion at (x, y) on the field plane."""
    _check_grids_match(field_te, field_tm)
    if not (field_te.normalized and field_tm.normalized):
        raise ValueError("fields must be normalized to unit power")
    if wavelength is None:
        wavelength = field_te.wavelength
    i = int(round((x - field_te.x0) / field_te.pixel_size))
    j = int(round((y - field_te.y0) / field_te.pixel_size))
    ny, nx = field_te.data.shape
    if not (0 <= i < nx and 0 <= j < ny):
        raise ValueError(f"ion position ({x * 1e6:.2f}, {y * 1e6:.2f}) um "
                         f"outside the field grid")
    eta = (_mode_eta(field_te, j, i, projection_sq[0], wavelength)
           + _mode_eta(field_tm, j, i, projection_sq[1], wavelength))
    return CouplingResult(eta, "field-overlap", "TE+TM", (x, y))


def collection_map(field_te: FieldGrid, field_tm: FieldGrid,
                   x_extent, y_extent, step: float,
                   projection_sq=(SIGMA_MODE_PROJECTION_SQ,
                                  SIGMA_MODE_PROJECTION_SQ),
                   wavelength: float | None = None) -> CollectionMap:
    """Raster the ion position over the plane and map the coupling.

    ``x_extent`` and ``y_extent`` are (min, max) offsets in meters; the
    raster must stay inside the field grids.
    """
    _check_grids_match(field_te, field_tm)
    if not (field_te.normalized and field_tm.normalized):
        raise ValueError("fields must be normalized to unit power")
    if wavelength is None:
        wavelength = field_te.wavelength
    xs = np.arange(x_extent[0], x_extent[1] + step / 2, step)
    ys = np.arange(y_extent[0], y_extent[1] + step / 2, step)
    gx, gy = field_te.x, field_te.y
    if (xs[0] < gx[0] or xs[-1] > gx[-1] or ys[0] < gy[0]
            or ys[-1] > gy[-1]):
        raise ValueError("raster extent exceeds the field grid")
    s = field_te.pixel_size
    ii = np.rint((xs - field_te.x0) / s).astype(int)
    jj = np.rint((ys - field_te.y0) / s).astype(int)
    omega0 = 2.0 * np.pi * C0 / wavelength
    scale = (omega0**2 / 16.0 * dipole_moment_scale(wavelength) ** 2
             * 2.0 * C0 * MU0)
    i_te = np.abs(field_te.data[np.ix_(jj, ii)]) ** 2
    i_tm = np.abs(field_tm.data[np.ix_(jj, ii)]) ** 2
    eta_te = scale * projection_sq[0] * i_te
    eta_tm = scale * projection_sq[1] * i_tm
    return CollectionMap(xs, ys, eta_te + eta_tm, eta_te, eta_tm,
                         z=field_te.z)


def crosstalk_metrics(te_map: np.ndarray, tm_map: np.ndarray,
                      x=None, y=None, pixel_size: float = 1.0
                      ) -> CrosstalkReport:
    """TM-into-TE crosstalk figures from two per-mode maps on one grid.

    Suppression is 10 log10(TM/TE) evaluated at the TE maximum (negative
    when TM sits below TE there); the offset is the distance between the
    two maxima.
    """
    te = np.asarray(te_map, dtype=float)
    tm = np.asarray(tm_map, dtype=float)
    if te.shape != tm.shape:
        raise ValueError("maps do not share a grid")
    te_total = te.sum()
    if te_total <= 0.0:
        raise ValueError("TE map carries no power")
    ratio = float(tm.sum() / te_total)
    j_te = np.unravel_index(np.argmax(te), te.shape)
    j_tm = np.unravel_index(np.argmax(tm), tm.shape)
    at_te_max = tm[j_te] / te[j_te]
    suppression = float(10.0 * np.log10(at_te_max)) if at_te_max > 0 \
        else -np.inf
    if x is not None and y is not None:
        x = np.asarray(x)
        y = np.asarray(y)
        dx = x[j_te[1]] - x[j_tm[1]]
        dy = y[j_te[0]] - y[j_tm[0]]
    else:
        dx = pixel_size * (j_te[1] - j_tm[1])
        dy = pixel_size * (j_te[0] - j_tm[0])
    return CrosstalkReport(ratio, suppression, float(np.hypot(dx, dy)))
