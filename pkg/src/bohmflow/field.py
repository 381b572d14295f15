"""Uniform periodic grids, complex fields, and spectral primitives.

Positions live on a box [-L, L)^d with n points per axis; the dual lattice
carries the discrete Fourier frequencies in (-pi/dx, pi/dx], with the
continuum normalization (2*pi)^(-d/2) * integral(exp(-i k q) psi dq) so that
Parseval holds in the quadrature sense.  All operations here are pure; fields
are treated as immutable values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

_BFLD_MAGIC = b"BFLD"
_BFLD_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic spatial lattice and its dual momentum lattice."""

    dim: int
    half_extent: float
    points: int

    @property
    def dx(self) -> float:
        return 2.0 * self.half_extent / self.points

    @property
    def dk(self) -> float:
        return np.pi / self.half_extent

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points**self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def k_cell_volume(self) -> float:
        return self.dk**self.dim

    def axis_coordinates(self) -> np.ndarray:
        """Node positions q_j = -L + j*dx along one axis."""
        return -self.half_extent + self.dx * np.arange(self.points)

    def k_axis(self) -> np.ndarray:
        """Dual lattice in FFT order, Nyquist frequency at +pi/dx."""
        m = np.fft.fftfreq(self.points, d=1.0 / self.points)
        m[self.points // 2] = self.points // 2
        return self.dk * m

    def k_order(self) -> np.ndarray:
        """Permutation that sorts the FFT-ordered dual lattice ascending.

        Note fftshift does not work here: the Nyquist entry lives at +pi/dx.
        """
        return np.argsort(self.k_axis())

    def k_axis_sorted(self) -> np.ndarray:
        return self.k_axis()[self.k_order()]

    def position_meshes(self) -> tuple:
        q = self.axis_coordinates()
        return np.meshgrid(*([q] * self.dim), indexing="ij", sparse=True)

    def k_meshes(self) -> tuple:
        k = self.k_axis()
        return np.meshgrid(*([k] * self.dim), indexing="ij", sparse=True)

    def k_squared(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for km in self.k_meshes():
            out = out + km**2
        return out

    def radius(self) -> np.ndarray:
        """Euclidean |q| at every node."""
        out = np.zeros(self.shape)
        for qm in self.position_meshes():
            out = out + qm**2
        return np.sqrt(out)


def make_grid(dim: int, half_extent: float, points: int) -> Grid:
    """Build a Grid, rejecting invalid geometry."""
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if half_extent <= 0:
        raise ValueError(f"half_extent must be positive, got {half_extent}")
    if points % 2 != 0 or points < 16:
        raise ValueError(f"points must be even and >= 16, got {points}")
    return Grid(dim=dim, half_extent=float(half_extent), points=int(points))


@dataclass(frozen=True)
class WaveFunction:
    """Complex field on a Grid at a fixed time."""

    grid: Grid
    values: np.ndarray
    t: float = 0.0
    label: str = "psi"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != self.grid.shape:
            raise ValueError(
                f"values shape {vals.shape} does not match grid shape {self.grid.shape}"
            )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def replace(self, values=None, t=None, label=None) -> "WaveFunction":
        return WaveFunction(
            grid=self.grid,
            values=self.values if values is None else values,
            t=self.t if t is None else t,
            label=self.label if label is None else label,
        )


@dataclass(frozen=True)
class Density:
    """Nonnegative weights on a Grid; mass is the quadrature integral."""

    grid: Grid
    weights: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.grid.shape:
            raise ValueError("weights shape does not match grid")
        if np.any(w < 0):
            raise ValueError("density weights must be nonnegative")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum() * self.grid.cell_volume)

    @classmethod
    def from_wavefunction(cls, psi: WaveFunction) -> "Density":
        return cls(grid=psi.grid, weights=np.abs(psi.values) ** 2)


def _boundary_phase(grid: Grid) -> np.ndarray:
    """Product over axes of exp(i k L), accounting for q starting at -L."""
    phase = np.exp(1j * grid.k_axis() * grid.half_extent)
    out = phase
    for _ in range(grid.dim - 1):
        out = np.multiply.outer(out, phase)
    return out


def fourier(psi) -> np.ndarray:
    """Continuum-normalized forward transform; returns values in FFT order."""
    grid, values = _grid_values(psi)
    scale = (grid.dx / np.sqrt(2.0 * np.pi)) ** grid.dim
    return scale * np.fft.fftn(values) * _boundary_phase(grid)


def inverse_fourier(grid: Grid, psi_hat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fourier`, back to position space."""
    scale = (np.sqrt(2.0 * np.pi) / grid.dx) ** grid.dim
    return scale * np.fft.ifftn(psi_hat * np.conj(_boundary_phase(grid)))


def gradient(psi) -> tuple:
    """Spectral gradient, one complex field per axis."""
    grid, values = _grid_values(psi)
    hat = np.fft.fftn(values)
    k = grid.k_axis()
    out = []
    for axis in range(grid.dim):
        shape = [1] * grid.dim
        shape[axis] = grid.points
        out.append(np.fft.ifftn(1j * k.reshape(shape) * hat))
    return tuple(out)


def laplacian(psi) -> np.ndarray:
    grid, values = _grid_values(psi)
    return np.fft.ifftn(-grid.k_squared() * np.fft.fftn(values))


def l2_norm(psi) -> float:
    grid, values = _grid_values(psi)
    return float(np.sqrt(np.sum(np.abs(values) ** 2) * grid.cell_volume))


def momentum_norm(grid: Grid, psi_hat: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(psi_hat) ** 2) * grid.k_cell_volume))


def inner_product(phi, psi) -> complex:
    grid, pv = _grid_values(phi)
    _, sv = _grid_values(psi)
    return complex(np.sum(np.conj(pv) * sv) * grid.cell_volume)


def weighted_norm(psi, s: float) -> float:
    """L2 norm of <q>^s * psi with <q> = sqrt(1 + |q|^2)."""
    if s < 0:
        raise ValueError("weight exponent s must be nonnegative")
    grid, values = _grid_values(psi)
    q2 = np.zeros(grid.shape)
    for qm in grid.position_meshes():
        q2 = q2 + qm**2
    w = (1.0 + q2) ** (s / 2.0)
    return float(np.sqrt(np.sum((w * np.abs(values)) ** 2) * grid.cell_volume))


def sample_density(psi, count: int, rng) -> np.ndarray:
    """Draw positions from the piecewise-constant density proportional to |psi|^2.

    A cell is chosen categorically by its weight and the position is jittered
    uniformly inside the node-centered cell [q_j - dx/2, q_j + dx/2); the
    centered convention keeps the sample mean unbiased, which the downstream
    velocity statistics rely on.  Deterministic for a given seeded generator.
    Returns an array of shape (count, dim).
    """
    if count <= 0:
        raise ValueError(f"sample count must be positive, got {count}")
    grid, values = _grid_values(psi)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    weights = np.abs(values) ** 2
    total = weights.sum()
    if total <= 0:
        raise ValueError("cannot sample from a zero field")
    flat_idx = rng.choice(grid.size, size=count, p=(weights / total).ravel())
    multi = np.unravel_index(flat_idx, grid.shape)
    q = grid.axis_coordinates()
    points = np.stack([q[idx] for idx in multi], axis=-1)
    points = points + rng.uniform(-0.5 * grid.dx, 0.5 * grid.dx, size=(count, grid.dim))
    return points


def _grid_values(psi):
    if isinstance(psi, WaveFunction):
        return psi.grid, psi.values
    raise TypeError(f"expected WaveFunction, got {type(psi).__name__}")


def save_field(path, psi: WaveFunction) -> None:
    """Write the binary field container.

    Layout (little endian): magic "BFLD", version u32, dim u32, n u32,
    L f64, time f64, label length u32, UTF-8 label, then node values
    row-major as interleaved (re, im) float64 pairs.
    """
    label_bytes = psi.label.encode("utf-8")
    header = struct.pack(
        "<4sIIIddI",
        _BFLD_MAGIC,
        _BFLD_VERSION,
        psi.grid.dim,
        psi.grid.points,
        psi.grid.half_extent,
        psi.t,
        len(label_bytes),
    )
    interleaved = np.empty(psi.grid.size * 2, dtype="<f8")
    flat = psi.values.ravel()
    interleaved[0::2] = flat.real
    interleaved[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(label_bytes)
        fh.write(interleaved.tobytes())


def load_field(path) -> WaveFunction:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIIIddI"))
        magic, version, dim, n, half_extent, t, label_len = struct.unpack(
            "<4sIIIddI", header
        )
        if magic != _BFLD_MAGIC:
            raise ValueError(f"not a field container: bad magic {magic!r}")
        if version != _BFLD_VERSION:
            raise ValueError(f"unsupported field container version {version}")
        label = fh.read(label_len).decode("utf-8")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    grid = make_grid(dim, half_extent, n)
    if raw.size != 2 * grid.size:
        raise ValueError("field container payload size does not match header")
    values = (raw[0::2] + 1j * raw[1::2]).reshape(grid.shape)
    return WaveFunction(grid=grid, values=values, t=t, label=label)
