"""Synthetic scene generation from the linear mixture model.

Scenes are the test bed for everything downstream: a smooth random
fraction field is drawn per endmember, projected to feasibility per
pixel, and rendered as m = Ef + n with i.i.d. zero-mean Gaussian noise.
The default endmember library is seven smooth analytic reflectance
curves sampled on 41 bands spanning 400..2400 nm (5 nm nominal width
each). The curves are shaped so that classes stay separable after
resampling to a visible/NIR target grid, and their pairwise spectral
angles are checked at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from specgt import seeds
from specgt.cube_io import EndmemberLibrary, FractionMap, SpectralCube
from specgt.errors import DataValidationError
from specgt.unmixing import _project_batch, sam

# Pixels whose projected fraction vector sums below this get lifted onto
# their dominant endmember, so no rendered spectrum can have zero norm.
_MIN_PIXEL_SUM = 0.05

DEFAULT_NAMES = (
    "Brown Soil",
    "Light Soil",
    "Rock",
    "Tall Tree/Shrub",
    "Dwarf Shrub",
    "Herbaceous",
    "Dense Shrub/Burned Area",
)


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene."""

    rows: int
    cols: int
    endmembers: EndmemberLibrary
    smoothness: float = 8.0  # Gaussian correlation length, pixels
    noise_sigma: float = 0.0  # reflectance units
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DataValidationError("scene dimensions must be positive")
        if not isinstance(self.endmembers, EndmemberLibrary):
            raise DataValidationError("endmembers must be an EndmemberLibrary")
        if self.smoothness < 0:
            raise DataValidationError("smoothness must be >= 0")
        if self.noise_sigma < 0:
            raise DataValidationError("noise_sigma must be >= 0")


def _sig(x, center, width):
    return 1.0 / (1.0 + np.exp(-(x - center) / width))


def _bump(x, center, width):
    return np.exp(-0.5 * ((x - center) / width) ** 2)


def _default_curves(w: np.ndarray) -> np.ndarray:
    """The seven reference spectra, one column each, on wavelength grid w.

    Each class pairs a muted broadband baseline with one strong SWIR
    absorption or reflection feature plus a distinctive visible/NIR
    feature. The SWIR features keep the full mixing matrix well
    conditioned (cond about 11 on the 41-band grid), which is what
    bounds the iteration count of projected gradient descent. The
    visible/NIR features are staggered across 430..910 nm so the
    classes stay apart after resampling to a sensor whose coverage
    stops near 910 nm: on the 11-band grid the library keeps cond
    near 21 and all pairwise angles above 0.36 rad.
    """
    brown_soil = (
        0.5 * (0.10 + 0.20 * _sig(w, 1100, 250))
        + 0.38 * _bump(w, 2210, 95)
        + 0.22 * _sig(w, 585, 60) * _bump(w, 680, 190)
    )
    light_soil = (
        0.5 * (0.26 + 0.14 * _sig(w, 750, 140))
        + 0.38 * _bump(w, 1700, 95)
        + 0.16 * _bump(w, 500, 60)
    )
    rock = (
        0.5 * (0.20 - 0.05 * _sig(w, 1500, 400))
        + 0.38 * _bump(w, 1990, 90)
        + 0.22 * _bump(w, 430, 50)
    )
    tall_tree = (
        0.5 * (0.22 + 0.05 * _bump(w, 550, 40))
        + 0.38 * _sig(w, 725, 16) * _bump(w, 1060, 380)
        - 0.15 * _bump(w, 1450, 90)
        - 0.12 * _bump(w, 1940, 100)
    )
    dwarf_shrub = (
        0.5 * (0.11 + 0.07 * _sig(w, 1500, 300))
        + 0.20 * _sig(w, 830, 75) * _bump(w, 1100, 500)
        + 0.14 * _bump(w, 558, 25)
        + 0.38 * _bump(w, 1255, 90)
    )
    herbaceous = (
        0.5 * (0.08 + 0.17 * _sig(w, 705, 55))
        + 0.16 * _bump(w, 605, 45)
        + 0.38 * _bump(w, 980, 85)
    )
    burned = (
        0.5 * (0.07 - 0.03 * _sig(w, 1300, 350))
        + 0.24 * _bump(w, 595, 35)
        + 0.17 * _bump(w, 890, 70)
    )
    return np.stack(
        [brown_soil, light_soil, rock, tall_tree, dwarf_shrub, herbaceous, burned],
        axis=1,
    )


def make_default_endmembers() -> EndmemberLibrary:
    """Seven-class library on 41 bands spanning 400..2400 nm.

    Pairwise spectral angles of at least 0.1 rad are enforced here, not
    just assumed, so unmixing stays identifiable no matter how the curve
    constants evolve.
    """
    centers = np.linspace(400.0, 2400.0, 41)
    spectra = _default_curves(centers)
    lib = EndmemberLibrary(
        DEFAULT_NAMES, centers, spectra, band_widths=np.full(41, 5.0)
    )
    min_angle = np.inf
    for i in range(lib.d):
        for j in range(i + 1, lib.d):
            min_angle = min(min_angle, sam(spectra[:, i], spectra[:, j]))
    if min_angle < 0.1:
        msg = f"default endmembers too similar: min pairwise angle {min_angle:.4f}"
        raise DataValidationError(msg)
    return lib


def generate_fraction_field(spec: SceneSpec) -> FractionMap:
    """Smooth random feasible fraction field, deterministic given the seed.

    One Gaussian field per endmember is smoothed to the requested
    correlation length, rescaled to a fixed mean/spread, and projected to
    the feasible set pixel by pixel. Pixels whose projection lands near
    the origin are lifted onto their dominant endmember so that every
    rendered spectrum keeps a usable norm.
    """
    d = spec.endmembers.d
    rng = seeds.stream(spec.seed, seeds.SCENE_FIELD)
    raw = rng.standard_normal((d, spec.rows, spec.cols))
    if spec.smoothness > 0:
        for k in range(d):
            raw[k] = ndimage.gaussian_filter(raw[k], spec.smoothness, mode="reflect")
    for k in range(d):
        std = raw[k].std()
        if std > 0:
            raw[k] = raw[k] / std
    # Center so the expected pixel sum sits near the simplex face, which
    # gives a healthy mix of interior and face pixels after projection.
    # The spread is deliberately generous relative to the mean so that
    # most pixels have one clearly dominant endmember, with genuine
    # mixtures concentrated along region boundaries.
    mu = 1.15 / d
    amp = 2.6 / d
    shifted = mu + amp * raw
    flat = shifted.reshape(d, -1).T  # (pixels, d)
    proj = _project_batch(flat)
    sums = proj.sum(axis=1)
    low = sums < _MIN_PIXEL_SUM
    if np.any(low):
        dominant = np.argmax(flat[low], axis=1)
        proj[low, dominant] += _MIN_PIXEL_SUM - sums[low]
    fractions = proj.T.reshape(d, spec.rows, spec.cols).transpose(1, 2, 0)
    return FractionMap(np.ascontiguousarray(fractions), names=spec.endmembers.names)


def render_scene(
    fm: FractionMap, E: EndmemberLibrary, noise_sigma: float, seed: int
) -> SpectralCube:
    """Render m = Ef + n per pixel; band metadata comes from the library."""
    if fm.d != E.d:
        msg = f"fraction map has {fm.d} endmembers but the library has {E.d}"
        raise DataValidationError(msg)
    if noise_sigma < 0:
        raise DataValidationError("noise_sigma must be >= 0")
    values = np.einsum("ld,rcd->rcl", E.spectra, fm.fractions, optimize=False)
    if noise_sigma > 0:
        rng = seeds.stream(seed, seeds.SCENE_NOISE)
        values = values + noise_sigma * rng.standard_normal(values.shape)
    return SpectralCube(values, E.band_centers, E.widths_or_spacing())
