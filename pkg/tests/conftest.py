import numpy as np
import pytest

from esfem.geometry import SurfaceSpec, level_set


def random_surface_points(rng, n, spec=None, t=0.0, theta_margin=0.0):
    """Points on Gamma(t) from spherical parameters, with their parameters."""
    spec = spec or SurfaceSpec()
    theta = rng.uniform(theta_margin, np.pi - theta_margin, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    x = np.stack([np.sqrt(spec.a(t)) * np.sin(theta) * np.cos(phi),
                  np.sin(theta) * np.sin(phi), np.cos(theta)], axis=1)
    assert np.abs(level_set(spec, x, t)).max() < 1e-14
    return x, theta, phi


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
