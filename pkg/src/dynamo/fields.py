"""Truncated Fourier representation of periodic vector fields in 3-D.

A field is stored as a dense complex coefficient array over the cubic mode
lattice ``|k_i| <= N`` with the synthesis convention

    f(x) = sum_k  coeff(k) * exp(i k . x / scale),

so a field with ``scale = s`` is (2 pi s)-periodic along each axis.  The
``kind`` tag records whether the field represents a real-valued function
(coefficients Hermitian under k -> -k) or a genuinely complex one.

Everything downstream (cell solves, modal operators, time stepping, band
synthesis, gluing) is built from the primitives in this module: curl,
exact dealiased cross products, inverse Laplacian, means, norms, pointwise
evaluation, and the snapshot file format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ConfigError, InvalidScale, InvalidTruncation, NotMeanFree

# Safety factor applied wherever a grid-sampled sup norm feeds a smallness
# threshold; the grid maximum itself is only a lower bound on the true sup.
GRAD_SAFETY = 1.05

_KINDS = ("real", "complex")


@dataclass(frozen=True, eq=False)
class AbcParams:
    """Amplitudes of the three-mode Beltrami flow used throughout."""

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0

    def w1inf(self) -> float:
        """Closed-form sup norm of the flow and of its Jacobian."""
        a, b, c = abs(self.a), abs(self.b), abs(self.c)
        return max(a + c, a + b, b + c)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Dense coefficient block over the cubic lattice, shape (2N+1,)*3 + (3,).

    Index ``i`` along each mode axis corresponds to wavenumber ``i - N``.
    Instances are immutable; every operation returns a new field.
    """

    coeffs: np.ndarray
    kind: str = "real"
    scale: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 4 or c.shape[3] != 3:
            raise InvalidTruncation(f"expected (2N+1, 2N+1, 2N+1, 3) coefficients, got {c.shape}")
        n = c.shape[0]
        if c.shape[0] != c.shape[1] or c.shape[1] != c.shape[2] or n % 2 != 1:
            raise InvalidTruncation(f"mode lattice must be cubic with odd side, got {c.shape[:3]}")
        if self.kind not in _KINDS:
            raise ConfigError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise InvalidScale(f"scale must be positive and finite, got {self.scale}")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def truncation(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    def coeff(self, k) -> np.ndarray:
        """Coefficient 3-vector at integer mode k (zero outside the lattice)."""
        k = np.asarray(k, dtype=int)
        n = self.truncation
        if np.any(np.abs(k) > n):
            return np.zeros(3, dtype=np.complex128)
        return self.coeffs[k[0] + n, k[1] + n, k[2] + n].copy()

    def l2(self) -> float:
        """Root mean square over one cell: sqrt of the Parseval sum."""
        return float(np.linalg.norm(self.coeffs))

    def cell_l2(self) -> float:
        """True L^2 norm over one periodicity cell of volume (2 pi scale)^3."""
        return self.l2() * (2.0 * np.pi * self.scale) ** 1.5

    def conjugate(self) -> "SpectralField":
        c = np.conj(self.coeffs[::-1, ::-1, ::-1])
        return SpectralField(c, kind=self.kind, scale=self.scale)

    def _binary_check(self, other: "SpectralField"):
        if not isinstance(other, SpectralField):
            raise TypeError("expected a SpectralField")
        if other.scale != self.scale:
            raise InvalidScale("fields have different periodicity scales")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._binary_check(other)
        n = max(self.truncation, other.truncation)
        c = _embed(self.coeffs, n) + _embed(other.coeffs, n)
        kind = "real" if self.kind == other.kind == "real" else "complex"
        return SpectralField(c, kind=kind, scale=self.scale)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self + (-1.0) * other

    def __mul__(self, z) -> "SpectralField":
        z = complex(z)
        kind = self.kind if z.imag == 0.0 else "complex"
        return SpectralField(self.coeffs * z, kind=kind, scale=self.scale)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self * (-1.0)


def mode_range(n: int) -> np.ndarray:
    return np.arange(-n, n + 1)


def _embed(coeffs: np.ndarray, n_out: int) -> np.ndarray:
    """Zero-pad or validate a coefficient block to truncation n_out."""
    n_in = (coeffs.shape[0] - 1) // 2
    if n_out < n_in:
        raise InvalidTruncation("cannot embed into a smaller lattice")
    if n_out == n_in:
        return coeffs.copy()
    out = np.zeros((2 * n_out + 1,) * 3 + (3,), dtype=np.complex128)
    lo, hi = n_out - n_in, n_out + n_in + 1
    out[lo:hi, lo:hi, lo:hi] = coeffs
    return out


def resize(f: SpectralField, n_out: int) -> SpectralField:
    """Zero-pad (or truncate) a field to truncation radius n_out."""
    n_in = f.truncation
    if n_out >= n_in:
        return SpectralField(_embed(f.coeffs, n_out), kind=f.kind, scale=f.scale)
    lo, hi = n_in - n_out, n_in + n_out + 1
    return SpectralField(f.coeffs[lo:hi, lo:hi, lo:hi], kind=f.kind, scale=f.scale)


def zero_field(n: int, kind: str = "real", scale: float = 1.0) -> SpectralField:
    return SpectralField(np.zeros((2 * n + 1,) * 3 + (3,), dtype=np.complex128), kind=kind, scale=scale)


def const_field(v, n: int = 0, scale: float = 1.0) -> SpectralField:
    v = np.asarray(v, dtype=np.complex128)
    kind = "real" if np.allclose(v.imag, 0.0) else "complex"
    c = np.zeros((2 * n + 1,) * 3 + (3,), dtype=np.complex128)
    c[n, n, n] = v
    return SpectralField(c, kind=kind, scale=scale)


def wavevectors(n: int, scale: float = 1.0) -> np.ndarray:
    """Physical wavevector grid, shape (2n+1, 2n+1, 2n+1, 3)."""
    r = mode_range(n).astype(float) / scale
    k1, k2, k3 = np.meshgrid(r, r, r, indexing="ij")
    return np.stack([k1, k2, k3], axis=-1)


def make_abc(params: AbcParams, n: int = 1) -> SpectralField:
    """Three-mode Beltrami flow with amplitudes (a, b, c).

    Real-space components are (a sin x3 + c cos x2, b sin x1 + a cos x3,
    c sin x2 + b cos x1); the Fourier support is exactly the six unit modes.
    """
    if n < 1:
        raise InvalidTruncation("the flow needs truncation radius >= 1")
    a, b, c = params.as_tuple()
    f = zero_field(n)
    coeffs = np.array(f.coeffs)

    def put(k, v):
        coeffs[k[0] + n, k[1] + n, k[2] + n] = v

    # a sin x3 e1 + a cos x3 e2  (modes (0,0,+-1))
    put((0, 0, 1), [-0.5j * a, 0.5 * a, 0.0])
    put((0, 0, -1), [0.5j * a, 0.5 * a, 0.0])
    # b sin x1 e2 + b cos x1 e3  (modes (+-1,0,0))
    put((1, 0, 0), [0.0, -0.5j * b, 0.5 * b])
    put((-1, 0, 0), [0.0, 0.5j * b, 0.5 * b])
    # c cos x2 e1 + c sin x2 e3  (modes (0,+-1,0))
    put((0, 1, 0), [0.5 * c, 0.0, -0.5j * c])
    put((0, -1, 0), [0.5 * c, 0.0, 0.5j * c])
    return SpectralField(coeffs, kind="real", scale=1.0)


def mean_vector(f: SpectralField) -> np.ndarray:
    return f.coeff((0, 0, 0))


def is_hermitian(f: SpectralField, tol: float = 1e-12) -> bool:
    """Whether coefficients satisfy the real-field symmetry c(-k) = conj c(k)."""
    c = f.coeffs
    defect = np.max(np.abs(c - np.conj(c[::-1, ::-1, ::-1])))
    return bool(defect <= tol * max(1.0, np.max(np.abs(c))))


def hermitize(f: SpectralField) -> SpectralField:
    """Project onto the real-field symmetry class and tag kind='real'."""
    c = 0.5 * (f.coeffs + np.conj(f.coeffs[::-1, ::-1, ::-1]))
    return SpectralField(c, kind="real", scale=f.scale)


def curl(f: SpectralField) -> SpectralField:
    kv = wavevectors(f.truncation, f.scale)
    return SpectralField(np.cross(1j * kv, f.coeffs), kind=f.kind, scale=f.scale)


def laplacian(f: SpectralField) -> SpectralField:
    kv = wavevectors(f.truncation, f.scale)
    k2 = np.sum(kv * kv, axis=-1, keepdims=True)
    return SpectralField(-k2 * f.coeffs, kind=f.kind, scale=f.scale)


def inv_laplacian(f: SpectralField, mean_tol: float = 1e-12) -> SpectralField:
    """Unique mean-free solution of Lap(g) = f; requires mean-free input."""
    m = np.linalg.norm(mean_vector(f))
    if m > mean_tol * max(1.0, f.l2()):
        raise NotMeanFree(f"input has mean of relative size {m:.3e}")
    n = f.truncation
    kv = wavevectors(n, f.scale)
    k2 = np.sum(kv * kv, axis=-1, keepdims=True)
    k2[n, n, n, 0] = 1.0  # the k = 0 row is zeroed below
    c = f.coeffs / (-k2)
    c[n, n, n] = 0.0
    return SpectralField(c, kind=f.kind, scale=f.scale)


def divergence_coeffs(f: SpectralField, shift=None) -> np.ndarray:
    """Scalar coefficients of (div + i shift .) f, shape (2N+1,)*3."""
    kv = wavevectors(f.truncation, f.scale)
    if shift is not None:
        kv = kv + np.asarray(shift, dtype=float)
    return np.sum(1j * kv * f.coeffs, axis=-1)


def divergence_rel(f: SpectralField, shift=None) -> float:
    """Max modal divergence magnitude relative to the field's l2 norm."""
    d = np.max(np.abs(divergence_coeffs(f, shift)))
    return float(d / max(f.l2(), 1e-300))


def leray_project(f: SpectralField, shift=None) -> SpectralField:
    """Remove the (possibly shifted) compressible part mode by mode."""
    kv = wavevectors(f.truncation, f.scale)
    if shift is not None:
        kv = kv + np.asarray(shift, dtype=float)
    k2 = np.sum(kv * kv, axis=-1, keepdims=True)
    safe = np.where(k2 > 0.0, k2, 1.0)
    kdotc = np.sum(kv * f.coeffs, axis=-1, keepdims=True)
    c = f.coeffs - kv * kdotc / safe
    c = np.where(k2 > 0.0, c, f.coeffs)
    return SpectralField(c, kind=f.kind, scale=f.scale)


def vector_potential(f: SpectralField) -> SpectralField:
    """A periodic potential with curl(potential) = f, for div-free mean-free f."""
    return -1.0 * inv_laplacian(curl(f))


# ---------------------------------------------------------------------------
# products and grids

def _to_grid(coeffs: np.ndarray, m: int) -> np.ndarray:
    """Synthesize coefficients on an m^3 uniform grid (complex values)."""
    n = (coeffs.shape[0] - 1) // 2
    if m < 2 * n + 1:
        raise InvalidTruncation(f"grid of {m} points cannot hold modes up to {n}")
    spec = np.zeros((m, m, m, 3), dtype=np.complex128)
    idx = mode_range(n) % m
    spec[np.ix_(idx, idx, idx)] = coeffs
    return sfft.ifftn(spec, axes=(0, 1, 2)) * m**3


def _from_grid(grid: np.ndarray, n_out: int) -> np.ndarray:
    m = grid.shape[0]
    spec = sfft.fftn(grid, axes=(0, 1, 2)) / m**3
    out = np.zeros((2 * n_out + 1,) * 3 + (3,), dtype=np.complex128)
    n_take = min(n_out, (m - 1) // 2)
    idx_src = mode_range(n_take) % m
    lo, hi = n_out - n_take, n_out + n_take + 1
    out[lo:hi, lo:hi, lo:hi] = spec[np.ix_(idx_src, idx_src, idx_src)]
    return out


def synthesize_grid(f: SpectralField, m: int) -> np.ndarray:
    """Pointwise values on the uniform m^3 grid x = 2 pi scale * i / m."""
    return _to_grid(f.coeffs, m)


def grid_points(f: SpectralField, m: int) -> np.ndarray:
    x = 2.0 * np.pi * f.scale * np.arange(m) / m
    x1, x2, x3 = np.meshgrid(x, x, x, indexing="ij")
    return np.stack([x1, x2, x3], axis=-1)


def cross(f: SpectralField, g: SpectralField, cap: int | None = None) -> SpectralField:
    """Pointwise cross product f x g, dealiased exactly by zero padding.

    The physical-space product is formed on a grid large enough to hold all
    N_f + N_g output modes, so no aliasing error enters; the result is then
    truncated to ``cap`` (default N_f + N_g, i.e. exact).
    """
    f._binary_check(g)
    full = f.truncation + g.truncation
    n_out = full if cap is None else cap
    m = sfft.next_fast_len(2 * full + 1, real=False)
    fg = _to_grid(f.coeffs, m)
    gg = _to_grid(g.coeffs, m)
    prod = np.cross(fg, gg)
    out = _from_grid(prod, n_out)
    kind = "real" if f.kind == g.kind == "real" else "complex"
    return SpectralField(out, kind=kind, scale=f.scale)


def convolve_oracle(f: SpectralField, g: SpectralField) -> SpectralField:
    """Direct double-sum convolution of the cross product (slow reference)."""
    f._binary_check(g)
    nf, ng = f.truncation, g.truncation
    n_out = nf + ng
    out = np.zeros((2 * n_out + 1,) * 3 + (3,), dtype=np.complex128)
    rng_f = mode_range(nf)
    rng_g = mode_range(ng)
    for i1 in rng_f:
        for i2 in rng_f:
            for i3 in rng_f:
                cf = f.coeffs[i1 + nf, i2 + nf, i3 + nf]
                if not np.any(cf):
                    continue
                for j1 in rng_g:
                    for j2 in rng_g:
                        for j3 in rng_g:
                            cg = g.coeffs[j1 + ng, j2 + ng, j3 + ng]
                            out[i1 + j1 + n_out, i2 + j2 + n_out, i3 + j3 + n_out] += np.cross(cf, cg)
    return SpectralField(out, kind="complex", scale=f.scale)


# ---------------------------------------------------------------------------
# norms

@dataclass(frozen=True)
class FieldNorms:
    l2: float
    sup_grad_estimate: float


def _oversampled_m(n: int, oversample: int) -> int:
    m = max(oversample * (2 * n + 1), 8)
    return m + (-m) % 4  # multiples of 4 put the quarter-period extrema on grid


def jacobian_grid(f: SpectralField, m: int) -> np.ndarray:
    """Pointwise Jacobian J[..., i, l] = d_l f_i on the m^3 grid."""
    kv = wavevectors(f.truncation, f.scale)
    cols = [_to_grid(1j * kv[..., l:l + 1] * f.coeffs, m) for l in range(3)]
    return np.stack(cols, axis=-1)


def sup_grad(f: SpectralField, oversample: int = 4, ord: str = "inf") -> float:
    """Grid maximum of a pointwise Jacobian norm (a lower bound on the sup).

    ord='inf' uses the max absolute row sum (the natural companion of the
    componentwise sup norm); ord='2' uses the spectral norm, which is the
    right constant for quadratic-form energy estimates.
    """
    m = _oversampled_m(f.truncation, oversample)
    jac = jacobian_grid(f, m)
    if ord == "inf":
        pointwise = np.max(np.sum(np.abs(jac), axis=-1), axis=-1)
    elif ord == "2":
        pointwise = np.linalg.norm(jac.real.reshape(-1, 3, 3), ord=2, axis=(1, 2))
    else:
        raise ConfigError(f"unsupported Jacobian norm {ord!r}")
    return float(np.max(pointwise))


def sup_value(f: SpectralField, oversample: int = 4) -> float:
    """Grid maximum of the pointwise Euclidean magnitude |f(x)|."""
    m = _oversampled_m(f.truncation, oversample)
    vals = _to_grid(f.coeffs, m)
    if f.kind == "real":
        vals = vals.real
    return float(np.max(np.linalg.norm(vals, axis=-1)))


def norms(f: SpectralField, oversample: int = 4) -> FieldNorms:
    """Parseval l2 plus an oversampled-grid estimate of sup |grad f|.

    The gradient figure is a grid maximum, hence a lower bound on the true
    sup; callers that feed it into smallness thresholds should multiply by
    GRAD_SAFETY.
    """
    return FieldNorms(l2=f.l2(), sup_grad_estimate=sup_grad(f, oversample))


def rescale_flow(f: SpectralField, zeta: float, n: int) -> SpectralField:
    """Amplitude-and-period rescaling x -> zeta^{n/2}, preserving sup |grad|.

    The new field is zeta^{n/2} f(x / zeta^{n/2}): coefficients shrink by
    zeta^{n/2} while the periodicity scale grows by the same factor.
    """
    if not (0.0 < zeta < 1.0):
        raise InvalidScale(f"zeta must lie in (0, 1), got {zeta}")
    if n < 0 or n != int(n):
        raise InvalidScale(f"scale index must be a nonnegative integer, got {n}")
    fac = zeta ** (n / 2.0)
    return SpectralField(f.coeffs * fac, kind=f.kind, scale=f.scale * fac)


# ---------------------------------------------------------------------------
# pointwise evaluation at arbitrary points

def _flat_modes(f: SpectralField) -> tuple[np.ndarray, np.ndarray]:
    n = f.truncation
    kv = wavevectors(n, f.scale).reshape(-1, 3)
    cf = f.coeffs.reshape(-1, 3)
    keep = np.any(cf != 0.0, axis=1)
    return kv[keep], cf[keep]


def eval_at_points(f: SpectralField, points: np.ndarray) -> np.ndarray:
    """Values of f at arbitrary points, shape (P, 3) complex."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kv, cf = _flat_modes(f)
    if kv.shape[0] == 0:
        return np.zeros((pts.shape[0], 3), dtype=np.complex128)
    phases = np.exp(1j * (pts @ kv.T))
    return phases @ cf


def eval_jacobian_at_points(f: SpectralField, points: np.ndarray) -> np.ndarray:
    """Jacobians J[p, i, l] = d_l f_i at arbitrary points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kv, cf = _flat_modes(f)
    out = np.zeros((pts.shape[0], 3, 3), dtype=np.complex128)
    if kv.shape[0] == 0:
        return out
    phases = np.exp(1j * (pts @ kv.T))
    for l in range(3):
        out[:, :, l] = phases @ (1j * kv[:, l:l + 1] * cf)
    return out


def eval_hessian_at_points(f: SpectralField, points: np.ndarray) -> np.ndarray:
    """Second derivatives H[p, i, l, m] = d_l d_m f_i at arbitrary points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    kv, cf = _flat_modes(f)
    out = np.zeros((pts.shape[0], 3, 3, 3), dtype=np.complex128)
    if kv.shape[0] == 0:
        return out
    phases = np.exp(1j * (pts @ kv.T))
    for l in range(3):
        for m in range(3):
            out[:, :, l, m] = phases @ (-kv[:, l:l + 1] * kv[:, m:m + 1] * cf)
    return out


# ---------------------------------------------------------------------------
# snapshot file format

_MAGIC = "spectral-field 1"


def save_field(f: SpectralField, path) -> None:
    """Write the self-describing snapshot: text header, then raw payload.

    The payload is little-endian float64 (re, im) pairs, component-major and
    then lexicographic in k; the scale is stored as a hex float so that a
    load/save round trip is bit exact.
    """
    header = "\n".join(
        [
            _MAGIC,
            f"N {f.truncation}",
            f"kind {f.kind}",
            f"scale {float(f.scale).hex()}",
            "components 3",
            "data",
            "",
        ]
    )
    payload = np.ascontiguousarray(np.moveaxis(f.coeffs, -1, 0)).astype("<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"data\n"
    split = blob.find(marker)
    if split < 0 or not blob.startswith(_MAGIC.encode("ascii")):
        raise ConfigError(f"{path}: not a spectral-field snapshot")
    head = blob[:split].decode("ascii").splitlines()
    fields = dict(line.split(None, 1) for line in head[1:] if line.strip())
    n = int(fields["N"])
    kind = fields["kind"]
    scale = float.fromhex(fields["scale"])
    comps = int(fields["components"])
    if comps != 3:
        raise ConfigError(f"{path}: expected 3 components, found {comps}")
    raw = np.frombuffer(blob[split + len(marker):], dtype="<c16")
    side = 2 * n + 1
    expect = 3 * side**3
    if raw.size != expect:
        raise ConfigError(f"{path}: payload holds {raw.size} values, expected {expect}")
    coeffs = np.moveaxis(raw.reshape(3, side, side, side), 0, -1)
    return SpectralField(coeffs, kind=kind, scale=scale)


# ---------------------------------------------------------------------------
# random fields (tests, probes)

def random_real_field(
    n: int,
    rng: np.random.Generator,
    mean_free: bool = True,
    div_free: bool = False,
    scale: float = 1.0,
    amplitude: float = 1.0,
) -> SpectralField:
    """Random real-kind field with unit-order coefficients, for probes."""
    shape = (2 * n + 1,) * 3 + (3,)
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    f = hermitize(SpectralField(raw * amplitude, kind="complex", scale=scale))
    c = np.array(f.coeffs)
    if mean_free:
        c[n, n, n] = 0.0
    f = SpectralField(c, kind="real", scale=scale)
    if div_free:
        f = leray_project(f)
    return f


def random_complex_field(
    n: int,
    rng: np.random.Generator,
    scale: float = 1.0,
    amplitude: float = 1.0,
) -> SpectralField:
    shape = (2 * n + 1,) * 3 + (3,)
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return SpectralField(raw * amplitude, kind="complex", scale=scale)
