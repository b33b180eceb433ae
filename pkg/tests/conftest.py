"""Shared fixtures: a footprint-spanning focused design field."""

import numpy as np
import pytest

from iongrating import dipole, propagation
from iongrating.designer import (ToothSpec, curve_tooth, diffraction_angle_at,
                                 fit_kappa, slab_phase_map)
from iongrating.geometry import GratingFootprint, IonPose, default_stack
from iongrating.library import UnitCellParams, pitch_for_angle

WAVELENGTH = 422e-9


@pytest.fixture(scope="session")
def focused_design():
    """Near field of a design aimed at the nominal ion position."""
    stack = default_stack()
    pose = IonPose()
    footprint = GratingFootprint()
    x, prof = dipole.ion_intensity_profile(dipole.QuantizationAxis.z(),
                                           footprint, pose, 512)
    ansatz, _ = fit_kappa(prof, x, alpha=0.0, kappa_max=0.6e6)
    teeth, xx = [], 0.0
    while xx < footprint.x_extent:
        angle = diffraction_angle_at(xx, pose, stack)
        pitch = pitch_for_angle(angle, 0.5, 0.5, stack, WAVELENGTH)
        k = max(float(ansatz(np.array([xx]))[0]), 0.0)
        teeth.append(ToothSpec(
            x=xx, pitch=pitch,
            params=UnitCellParams(pitch, 0.5, 0.5, 0.06e-6, 0.0),
            angle=angle, kappa=k, alpha=0.05e6))
        xx += pitch
    phase = slab_phase_map(0.0, 1.733, mode="collimated")
    focus = (pose.x_ion, 0.0, pose.height_above_surface)
    for t in teeth:
        curve_tooth(t, focus, phase, stack, pose,
                    y_samples=np.linspace(-15e-6, 15e-6, 31))
    return propagation.synthesize_near_field(teeth, footprint, stack)
