"""Scalar beam synthesis and angular-spectrum propagation.

The emitted beam is modeled as two decoupled scalar fields (one per
polarization) on a uniform (x, y) grid.  ``synthesize_near_field`` builds
the field at the grating plane from the per-tooth design solution with a
local-plane-wave model; ``angular_spectrum_propagate`` moves a sampled
field between parallel planes exactly (within the scalar approximation),
attenuating evanescent components.  The cladding traversal uses the
cladding index for its thickness, then vacuum above.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import DESIGN_WAVELENGTH, N_SIO2

__all__ = [
    "FieldGrid", "PaddingError", "angular_spectrum_propagate",
    "beam_cross_section", "gaussian_field", "load_field",
    "propagate_to_height", "synthesize_near_field", "save_field",
]


class PaddingError(Exception):
    """Field energy too close to the grid edge for an alias-free transform."""


@dataclass
class FieldGrid:
    """Complex scalar field samples on a uniform (x, y) grid.

    ``data[j, i]`` is the sample at ``(x0 + i * pixel_size,
    y0 + j * pixel_size)``.  ``z`` is the plane height above the grating
    plane.  ``intensity_only`` marks measured |E|^2 data with no phase,
    usable for intensity bookkeeping but not for propagation or overlaps.
    """
    data: np.ndarray
    pixel_size: float
    z: float = 0.0
    polarization: str = "TE"
    x0: float = 0.0
    y0: float = 0.0
    wavelength: float = DESIGN_WAVELENGTH
    normalized: bool = False
    intensity_only: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError("field data must be a 2-D array")
        if self.pixel_size <= 0:
            raise ValueError("pixel size must be positive")

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.pixel_size * np.arange(self.data.shape[1])

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.pixel_size * np.arange(self.data.shape[0])

    def power(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2) * self.pixel_size**2)

    def normalize(self) -> "FieldGrid":
        """Scaled copy with unit power (sum |E|^2 s^2 = 1)."""
        p = self.power()
        if p <= 0.0:
            raise ValueError("cannot normalize an all-zero field")
        return replace(self, data=self.data / np.sqrt(p), normalized=True)


# ---------------------------------------------------------------------------
# Near-field synthesis

def synthesize_near_field(teeth, footprint, stack,
                          wavelength: float = DESIGN_WAVELENGTH,
                          polarization: str = "TE",
                          shape=(512, 512),
                          pixel_size: float = 0.1e-6) -> FieldGrid:
    """Local-plane-wave near field of a tooth-by-tooth design.

    Each tooth radiates its drained power fraction uniformly over its
    pitch and the footprint width, with phase equal to the accumulated
    emitted-wavefront phase plus the local tilt ``k n sin(theta) x`` and
    the transverse curvature correction sampled from ``curve_tooth``.  The
    plane-wave tilt uses the cladding index since the grating plane sits
    at the bottom of the cladding.
    """
    if not teeth:
        raise ValueError("cannot synthesize a field from an empty design")
    for t in teeth:
        if not np.isfinite(t.angle):
            raise ValueError(f"tooth at x={t.x * 1e6:.3f} um has no angle")

    ny, nx = shape
    n_clad = stack.cladding_index
    k0 = 2 * np.pi / wavelength
    grid = np.zeros((ny, nx), dtype=complex)
    # center the grid on the footprint
    x0 = footprint.x_extent / 2 - nx * pixel_size / 2
    y0 = -ny * pixel_size / 2
    x = x0 + pixel_size * np.arange(nx)
    y = y0 + pixel_size * np.arange(ny)
    in_width = np.abs(y) <= footprint.y_extent / 2

    # per-tooth drained power and emitted-wavefront phase accumulator
    residual = 1.0
    phase_acc = 0.0
    for t in teeth:
        frac = 1.0 - np.exp(-(t.kappa + t.alpha) * t.pitch)
        share = t.kappa / (t.kappa + t.alpha) if t.kappa + t.alpha else 0.0
        drained = residual * frac * share
        residual *= 1.0 - frac
        kx = k0 * n_clad * np.sin(t.angle)
        # local slab index consistent with this tooth's grating equation
        n_slab = n_clad * np.sin(t.angle) + wavelength / t.pitch
        if drained > 0.0:
            amp = np.sqrt(drained / t.pitch)
            if t.curvature:
                ys = np.array([s[0] for s in t.curvature])
                us = np.array([s[1] for s in t.curvature])
                u = np.interp(y, ys, us)
            else:
                u = np.zeros_like(y)
            for j in np.nonzero(in_width)[0]:
                lo, hi = t.x + u[j], t.x + u[j] + t.pitch
                cols = (x >= lo) & (x < hi)
                if not np.any(cols):
                    continue
                phase = (phase_acc + kx * (x[cols] - lo)
                         + k0 * n_slab * u[j])
                grid[j, cols] = amp * np.exp(1j * phase)
        phase_acc += kx * t.pitch

    result = FieldGrid(grid, pixel_size, z=0.0, polarization=polarization,
                       x0=x0, y0=y0, wavelength=wavelength)
    return result.normalize()


# ---------------------------------------------------------------------------
# Angular-spectrum propagation

def _edge_energy_fraction(data: np.ndarray, band: int = 2) -> float:
    p = np.abs(data) ** 2
    total = p.sum()
    if total == 0.0:
        return 0.0
    interior = p[band:-band, band:-band].sum()
    return float(1.0 - interior / total)


def angular_spectrum_propagate(fieldgrid: FieldGrid, dz: float,
                               medium_index: float = 1.0) -> FieldGrid:
    """Propagate the sampled field by ``dz`` through a uniform medium.

    Exact scalar plane-wave decomposition: each spatial frequency advances
    by exp(i kz dz) with kz = sqrt((k0 n)^2 - kx^2 - ky^2).  Evanescent
    components are attenuated (never amplified, regardless of the sign of
    ``dz``).  Raises PaddingError when more than 1% of the energy sits
    within two pixels of the grid edge.
    """
    if fieldgrid.intensity_only:
        raise ValueError("intensity-only fields carry no phase and cannot "
                         "be propagated")
    s = fieldgrid.pixel_size
    lam_m = fieldgrid.wavelength / medium_index
    if s > lam_m / 2:
        raise ValueError(f"pixel size {s * 1e9:.0f} nm undersamples the "
                         f"medium wavelength {lam_m * 1e9:.0f} nm")
    if dz == 0.0:
        return replace(fieldgrid, data=fieldgrid.data.copy())
    if _edge_energy_fraction(fieldgrid.data) > 0.01:
        raise PaddingError("more than 1% of the field energy lies within "
                           "2 pixels of the grid edge; pad the grid")

    ny, nx = fieldgrid.data.shape
    k = 2 * np.pi * medium_index / fieldgrid.wavelength
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=s)
    ky = 2 * np.pi * np.fft.fftfreq(ny, d=s)
    kz_sq = k**2 - kx[None, :] ** 2 - ky[:, None] ** 2
    prop = kz_sq >= 0.0
    kz = np.sqrt(np.abs(kz_sq))
    transfer = np.where(prop, np.exp(1j * kz * dz),
                        np.exp(-kz * abs(dz)))
    spec = np.fft.fft2(fieldgrid.data)
    out = np.fft.ifft2(spec * transfer)
    return replace(fieldgrid, data=out, z=fieldgrid.z + dz)


def propagate_to_height(fieldgrid: FieldGrid, z_target: float,
                        cladding_thickness: float,
                        n_cladding: float = N_SIO2) -> FieldGrid:
    """Propagate from the grating plane to ``z_target`` above it,
    traversing the cladding first and vacuum afterwards."""
    if z_target < fieldgrid.z:
        raise ValueError("target plane below the current plane")
    out = fieldgrid
    in_clad = min(max(cladding_thickness - out.z, 0.0), z_target - out.z)
    if in_clad > 0.0:
        out = angular_spectrum_propagate(out, in_clad, n_cladding)
    remaining = z_target - out.z
    if remaining > 0.0:
        out = angular_spectrum_propagate(out, remaining, 1.0)
    return out


# ---------------------------------------------------------------------------
# Beam profiles

def beam_cross_section(fieldgrid: FieldGrid):
    """Normalized intensity profile of a field plane.

    Returns ``(intensity, i_max, (row, col))`` where the intensity grid
    satisfies sum(I) * s^2 = 1 and ``i_max`` is the brightest pixel value.
    """
    if fieldgrid.intensity_only:
        intensity = np.abs(fieldgrid.data).astype(float)
    else:
        intensity = np.abs(fieldgrid.data) ** 2
    total = intensity.sum() * fieldgrid.pixel_size**2
    if total <= 0.0:
        raise ValueError("zero field has no cross section")
    intensity = intensity / total
    idx = np.unravel_index(np.argmax(intensity), intensity.shape)
    return intensity, float(intensity[idx]), (int(idx[0]), int(idx[1]))


def gaussian_field(waist: float, shape=(512, 512),
                   pixel_size: float = 0.1e-6,
                   wavelength: float = DESIGN_WAVELENGTH,
                   polarization: str = "TE") -> FieldGrid:
    """Unit-power fundamental Gaussian at its waist, centered on the grid."""
    ny, nx = shape
    x0, y0 = -nx * pixel_size / 2, -ny * pixel_size / 2
    x = x0 + pixel_size * np.arange(nx)
    y = y0 + pixel_size * np.arange(ny)
    r2 = x[None, :] ** 2 + y[:, None] ** 2
    data = np.exp(-r2 / waist**2).astype(complex)
    grid = FieldGrid(data, pixel_size, z=0.0, polarization=polarization,
                     x0=x0, y0=y0, wavelength=wavelength)
    return grid.normalize()


# ---------------------------------------------------------------------------
# Field I/O

_HEADER_KEYS = ("pixel_size", "z", "polarization", "x0", "y0",
                "wavelength", "normalized", "intensity_only")


def save_field(fieldgrid: FieldGrid, path) -> None:
    """Lossless CSV export: header lines, then real and imaginary parts.

    Intensity-only fields write a single ``# intensity`` matrix instead of
    the real/imaginary pair.
    """
    with open(path, "w") as fh:
        fh.write("# field grid v1\n")
        for key in _HEADER_KEYS:
            value = getattr(fieldgrid, key)
            if isinstance(value, bool):
                value = int(value)
            elif isinstance(value, float):
                value = repr(value)
            fh.write(f"# {key} = {value}\n")
        if fieldgrid.intensity_only:
            sections = (("intensity", np.abs(fieldgrid.data).astype(float)),)
        else:
            sections = (("real", fieldgrid.data.real),
                        ("imag", fieldgrid.data.imag))
        for name, block in sections:
            fh.write(f"# {name}\n")
            np.savetxt(fh, block, delimiter=",", fmt="%.17g")


def load_field(path) -> FieldGrid:
    """Inverse of :func:`save_field`; raises ValueError naming the first
    malformed line."""
    header = {}
    blocks = {}
    current = None
    with open(path) as fh:
        lines = fh.readlines()
    if not lines or lines[0].strip() != "# field grid v1":
        raise ValueError(f"{path}: line 1 is not a field-grid signature")
    for ln, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body in ("real", "imag", "intensity"):
                current = body
                blocks[current] = []
                continue
            if "=" not in body:
                raise ValueError(f"{path}: malformed header at line {ln}")
            key, _, value = body.partition("=")
            header[key.strip()] = value.strip()
            continue
        if current is None:
            raise ValueError(f"{path}: data before a section tag at "
                             f"line {ln}")
        try:
            blocks[current].append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise ValueError(f"{path}: bad matrix row at line {ln}") from exc

    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"{path}: header missing {missing}")
    intensity_only = bool(int(header["intensity_only"]))
    if intensity_only:
        if "intensity" not in blocks:
            raise ValueError(f"{path}: intensity-only file lacks an "
                             f"intensity block")
        data = np.asarray(blocks["intensity"], dtype=float)
    else:
        if "real" not in blocks or "imag" not in blocks:
            raise ValueError(f"{path}: expected real and imag blocks")
        re = np.asarray(blocks["real"], dtype=float)
        im = np.asarray(blocks["imag"], dtype=float)
        if re.shape != im.shape:
            raise ValueError(f"{path}: real {re.shape} and imag {im.shape} "
                             f"dimensions differ")
        data = re + 1j * im
    return FieldGrid(
        data, float(header["pixel_size"]), z=float(header["z"]),
        polarization=header["polarization"], x0=float(header["x0"]),
        y0=float(header["y0"]), wavelength=float(header["wavelength"]),
        normalized=bool(int(header["normalized"])),
        intensity_only=intensity_only)
