"""Synthetic ellipsoid phantoms: a desk-scale stand-in for a CT cohort."""

from dataclasses import dataclass, field

import numpy as np

from .volume import ImageVolume, LabelVolume, Spacing


@dataclass
class OrganSpec:
    organ: int
    radii: tuple  # ellipsoid semi-axes in mm
    intensity_mean: float  # HU inside the organ
    intensity_noise: float = 10.0
    center: tuple | None = None  # mm; random placement when None


@dataclass
class PhantomSpec:
    dims: tuple = (96, 96, 48)
    spacing: tuple = (2.0, 2.0, 4.0)
    organs: list = field(default_factory=list)
    background_mean: float = -100.0
    background_noise: float = 10.0
    max_tries: int = 200


# Intensity palette: distinct, well separated means inside a soft-tissue
# window, plus plausible radii ranges (mm) per organ id.
ORGAN_PALETTE = {
    1: ((22, 18, 16), 120.0),
    2: ((18, 15, 14), 40.0),
    3: ((14, 12, 12), 60.0),
    4: ((10, 8, 8), -40.0),
    5: ((6, 6, 14), 90.0),
    6: ((30, 24, 20), 160.0),
    7: ((20, 16, 14), 10.0),
    8: ((8, 8, 18), 220.0),
    9: ((7, 7, 16), 190.0),
    10: ((8, 6, 6), -70.0),
    11: ((18, 8, 8), 140.0),
    12: ((6, 5, 5), -10.0),
    13: ((6, 5, 5), 75.0),
}


def _ellipsoid_mask(dims, spacing, center, radii):
    grids = [((np.arange(n) + 0.5) * s - c) / r
             for n, s, c, r in zip(dims, spacing, center, radii)]
    gx, gy, gz = np.meshgrid(*grids, indexing="ij")
    return gx * gx + gy * gy + gz * gz <= 1.0


def gen_phantom(spec, rng):
    """Place non-overlapping ellipsoids; returns (ImageVolume, LabelVolume)."""
    dims = tuple(spec.dims)
    spacing = Spacing(*spec.spacing)
    extent = [n * s for n, s in zip(dims, spacing)]
    labels = np.zeros(dims, dtype=np.uint8)
    means = np.full(dims, spec.background_mean, dtype=np.float32)
    noise_std = np.full(dims, spec.background_noise, dtype=np.float32)
    for org in spec.organs:
        placed = False
        for _ in range(spec.max_tries):
            if org.center is not None:
                center = org.center
            else:
                center = tuple(rng.uniform(r, e - r)
                               for r, e in zip(org.radii, extent))
            mask = _ellipsoid_mask(dims, spacing, center, org.radii)
            if not (mask & (labels != 0)).any():
                labels[mask] = org.organ
                means[mask] = org.intensity_mean
                noise_std[mask] = org.intensity_noise
                placed = True
                break
            if org.center is not None:
                break
        if not placed:
            raise RuntimeError(
                f"could not place organ {org.organ} without overlap "
                f"after {spec.max_tries} tries")
    image = means + noise_std * rng.standard_normal(dims).astype(np.float32)
    return ImageVolume(image, spacing), LabelVolume(labels, spacing)


def make_cohort_specs(n_cases, rng, dims=(96, 96, 48), spacing=(2.0, 2.0, 4.0),
                      organ_ids=(1, 2, 6, 7, 8), min_organs=3, max_organs=5):
    """Per-case PhantomSpecs drawing 3-5 organs from a fixed palette."""
    specs = []
    for _ in range(n_cases):
        k = int(rng.integers(min_organs, max_organs + 1))
        k = min(k, len(organ_ids))
        chosen = sorted(rng.choice(list(organ_ids), size=k, replace=False))
        organs = []
        for oid in chosen:
            base_radii, mean = ORGAN_PALETTE[int(oid)]
            radii = tuple(r * rng.uniform(0.8, 1.2) for r in base_radii)
            organs.append(OrganSpec(int(oid), radii, mean))
        specs.append(PhantomSpec(dims=dims, spacing=spacing, organs=organs))
    return specs
