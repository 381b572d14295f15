"""Short-range interaction potentials and their admissibility check.

Shipped families are smooth, bounded, even in q and decay at least
exponentially, so they satisfy the short-range tail condition
|V(q)| <= C <q>^(-n-eps) for every n.  A synthetic family with an arbitrary
radial profile exists for validator tests; long-range families are
deliberately not provided.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import Grid


@dataclass(frozen=True)
class Potential:
    """Interaction potential: a named family plus parameters.

    ``profile`` maps |q| (any ndarray) to V; all shipped families are radial.
    ``exponential_decay`` marks families whose tail beats every power law.
    """

    family: str
    params: dict = dc_field(default_factory=dict)
    profile: callable = None
    exponential_decay: bool = True
    max_dim: int = 3

    def evaluate(self, points) -> np.ndarray:
        """V at positions of shape (..., dim) or scalars/1-D arrays in 1-D."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim <= 1:
            r = np.abs(pts)
        else:
            r = np.sqrt(np.sum(pts**2, axis=-1))
        return self.profile(r)

    def on_grid(self, grid: Grid) -> np.ndarray:
        if grid.dim > self.max_dim:
            raise ValueError(
                f"{self.family} potential supports dim <= {self.max_dim}"
            )
        return self.profile(grid.radius())


def zero_potential() -> Potential:
    return Potential(family="zero", profile=lambda r: np.zeros_like(np.asarray(r, dtype=float)))


def gaussian_well(depth: float, width: float) -> Potential:
    if depth <= 0 or width <= 0:
        raise ValueError("gaussian well requires positive depth and width")
    return Potential(
        family="gaussian_well",
        params={"depth": depth, "width": width},
        profile=lambda r: -depth * np.exp(-(np.asarray(r, dtype=float) ** 2) / width**2),
    )


def spherical_gaussian_well(depth: float, width: float) -> Potential:
    """Radial Gaussian well, the 3-D counterpart of :func:`gaussian_well`."""
    base = gaussian_well(depth, width)
    return Potential(
        family="spherical_gaussian_well",
        params=base.params,
        profile=base.profile,
    )


def poschl_teller(lam: float) -> Potential:
    """V(q) = -lam(lam+1)/2 * sech(q)^2, one dimensional.

    For integer lam the bound spectrum is E_m = -(lam - m)^2 / 2.
    """
    if lam <= 0:
        raise ValueError("poschl_teller requires lam > 0")
    depth = lam * (lam + 1) / 2.0
    return Potential(
        family="poschl_teller",
        params={"lam": lam},
        profile=lambda r: -depth / np.cosh(np.asarray(r, dtype=float)) ** 2,
        max_dim=1,
    )


def synthetic_potential(profile, family: str = "custom") -> Potential:
    """Wrap an arbitrary radial profile; tail exponent gets fitted numerically."""
    return Potential(family=family, profile=profile, exponential_decay=False)


_FAMILIES = {
    "zero": lambda params: zero_potential(),
    "gaussian_well": lambda params: gaussian_well(params["depth"], params["width"]),
    "spherical_gaussian_well": lambda params: spherical_gaussian_well(
        params["depth"], params["width"]
    ),
    "poschl_teller": lambda params: poschl_teller(params["lam"]),
}


def from_spec(family: str, params: dict) -> Potential:
    if family not in _FAMILIES:
        raise ValueError(
            f"unknown potential family {family!r}; known: {sorted(_FAMILIES)}"
        )
    return _FAMILIES[family](params)


@dataclass(frozen=True)
class AdmissibilityReport:
    family: str
    required_exponent: float
    fitted_exponent: float
    bounded: bool
    max_abs: float
    passed: bool
    epsilon: float = 0.1


def validate_short_range(
    potential: Potential, n: int, grid: Grid, shell_fraction: float = 0.5
) -> AdmissibilityReport:
    """Check the short-range tail condition |V| <= C <q>^(-n-eps) numerically.

    The tail exponent is fitted from log|V| against log<q> over the outer
    shell |q| >= shell_fraction * L.  Exponentially decaying families pass by
    construction with exponent infinity.  A failed fit is reported, not
    raised.
    """
    if n < 2:
        raise ValueError("short-range order n must be >= 2")
    eps = 0.1
    vals = potential.on_grid(grid)
    max_abs = float(np.max(np.abs(vals)))
    bounded = bool(np.isfinite(max_abs))

    if potential.exponential_decay:
        exponent = np.inf
    else:
        r = grid.radius()
        shell = r >= shell_fraction * grid.half_extent
        v_shell = np.abs(vals[shell])
        r_shell = r[shell]
        keep = v_shell > 1e-300
        if not np.any(keep):
            exponent = np.inf
        else:
            logq = np.log(np.sqrt(1.0 + r_shell[keep] ** 2))
            logv = np.log(v_shell[keep])
            slope = np.polyfit(logq, logv, 1)[0]
            exponent = float(-slope)

    passed = bounded and exponent >= n + eps
    return AdmissibilityReport(
        family=potential.family,
        required_exponent=n + eps,
        fitted_exponent=exponent,
        bounded=bounded,
        max_abs=max_abs,
        passed=passed,
        epsilon=eps,
    )
