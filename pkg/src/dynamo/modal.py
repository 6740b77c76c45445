"""Wavevector-shifted advection-diffusion operator and its spectral analysis.

For a periodic, divergence-free, mean-free flow U, a shift vector j, and a
diffusivity eps, the operator acting on periodic fields H is

    L H = (grad + i j) x (U x H) + eps (grad + i j)^2 H,

the generator obtained by factoring a plane-wave phase exp(i j . x) out of
the induction equation.  At j = 0, eps = 1 the operator has the
three-dimensional kernel spanned by v + S(v) with S the cell corrector
(see the alpha module); for small |j| its leading eigenvalues move linearly
with |j| at rates given by the alpha matrix.

This module provides a matrix-free apply, dense Galerkin assembly on the
cubic mode lattice, dense and shift-invert Krylov eigensolvers, contour
(Riesz) projectors with certified idempotency, first-order perturbation
checks, continuation of an eigenpair in eps, and the quantitative projector
comparison bound used to certify rank stability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla
from scipy.optimize import linear_sum_assignment

from . import fields as df
from .errors import (
    BoundInapplicable,
    ConfigError,
    ContourTouchesSpectrum,
    EigsFailed,
    SolverFailure,
    TooLarge,
    UndefinedDirection,
)

DENSE_CAP = 8000  # largest flat dimension for which dense paths are allowed


@dataclass(frozen=True, eq=False)
class ModalOperatorSpec:
    """Parameters (U, j, eps, N) of one truncated operator."""

    flow: df.SpectralField
    j: np.ndarray
    eps: float
    truncation: int

    def __post_init__(self):
        j = np.asarray(self.j, dtype=float).reshape(3)
        object.__setattr__(self, "j", j)
        if not (self.eps > 0.0 and math.isfinite(self.eps)):
            raise ConfigError(f"diffusivity must be positive, got {self.eps}")
        if self.truncation < self.flow.truncation:
            raise ConfigError("operator truncation cannot be smaller than the flow's support")
        if self.flow.scale != 1.0:
            raise ConfigError("modal analysis expects a flow on the unit-scale lattice")
        if np.linalg.norm(df.mean_vector(self.flow)) > 1e-12 * max(1.0, self.flow.l2()):
            raise ConfigError("flow must be mean-free")
        if df.divergence_rel(self.flow) > 1e-10:
            raise ConfigError("flow must be divergence-free")

    @property
    def dim(self) -> int:
        return 3 * (2 * self.truncation + 1) ** 3

    def shifted_wavevectors(self) -> np.ndarray:
        return df.wavevectors(self.truncation) + self.j


def field_to_vec(f: df.SpectralField) -> np.ndarray:
    return f.coeffs.reshape(-1).copy()


def vec_to_field(x: np.ndarray, n: int, kind: str = "complex") -> df.SpectralField:
    side = 2 * n + 1
    return df.SpectralField(np.asarray(x, dtype=np.complex128).reshape(side, side, side, 3), kind=kind)


def apply_modal(spec: ModalOperatorSpec, h: df.SpectralField) -> df.SpectralField:
    """Matrix-free application of L via one dealiased product."""
    if h.truncation != spec.truncation:
        h = df.resize(h, spec.truncation)
    kappa = spec.shifted_wavevectors()
    w = df.cross(spec.flow, h, cap=spec.truncation)
    adv = np.cross(1j * kappa, w.coeffs)
    k2 = np.sum(kappa * kappa, axis=-1, keepdims=True)
    diff = -spec.eps * k2 * h.coeffs
    return df.SpectralField(adv + diff, kind="complex")


def _cross_matrix(w: np.ndarray) -> np.ndarray:
    """Matrix [w]_x with [w]_x h = w x h, batched over leading axes."""
    out = np.zeros(w.shape[:-1] + (3, 3), dtype=np.complex128)
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def _advection_blocks(flow: df.SpectralField, n: int, left: np.ndarray, out: np.ndarray) -> None:
    """Accumulate blocks left(k) . [U(d)]_x at (row k, col k - d) into out."""
    side = 2 * n + 1
    nu = flow.truncation
    idx = np.arange(side)
    for d1 in df.mode_range(nu):
        for d2 in df.mode_range(nu):
            for d3 in df.mode_range(nu):
                ud = flow.coeff((d1, d2, d3))
                if not np.any(ud):
                    continue
                fu = _cross_matrix(ud)
                r1 = idx[max(0, d1): side + min(0, d1)]
                r2 = idx[max(0, d2): side + min(0, d2)]
                r3 = idx[max(0, d3): side + min(0, d3)]
                rr = ((r1[:, None, None] * side + r2[None, :, None]) * side + r3[None, None, :]).reshape(-1)
                cc = (((r1 - d1)[:, None, None] * side + (r2 - d2)[None, :, None]) * side + (r3 - d3)[None, None, :]).reshape(-1)
                blocks = left.reshape(-1, 3, 3)[rr] @ fu
                rows = (3 * rr)[:, None, None] + np.arange(3)[None, :, None]
                cols = (3 * cc)[:, None, None] + np.arange(3)[None, None, :]
                out[rows, cols] += blocks


def assemble_dense(spec: ModalOperatorSpec) -> np.ndarray:
    """Dense Galerkin matrix of L on the flattened coefficient vector."""
    if spec.dim > DENSE_CAP:
        raise TooLarge(f"dense assembly of dimension {spec.dim} exceeds the cap {DENSE_CAP}")
    n = spec.truncation
    kappa = spec.shifted_wavevectors()
    a = np.zeros((spec.dim, spec.dim), dtype=np.complex128)
    k2 = np.sum(kappa * kappa, axis=-1).reshape(-1)
    diag = np.repeat(-spec.eps * k2, 3)
    a[np.arange(spec.dim), np.arange(spec.dim)] = diag
    _advection_blocks(spec.flow, n, _cross_matrix(1j * kappa), a)
    return a


def assemble_unshifted(flow: df.SpectralField, n: int) -> np.ndarray:
    """Dense matrix of the j = 0, eps = 1 operator (curl of U x . plus Laplacian)."""
    return assemble_dense(ModalOperatorSpec(flow, np.zeros(3), 1.0, n))


def assemble_slope_generator(flow: df.SpectralField, j_direction: np.ndarray, n: int) -> np.ndarray:
    """Dense matrix of the linear-in-|j| term: i jhat x (U x .) + 2 i jhat . grad.

    The derivative part acts as -2 (jhat . k) on the mode k, so the full
    eps = 1 operator decomposes as L(j) = L(0) + |j| L1 - |j|^2.
    """
    jhat = _unit(j_direction)
    dim = 3 * (2 * n + 1) ** 3
    if dim > DENSE_CAP:
        raise TooLarge(f"dense assembly of dimension {dim} exceeds the cap {DENSE_CAP}")
    a = np.zeros((dim, dim), dtype=np.complex128)
    kv = df.wavevectors(n)
    diag = np.repeat(-2.0 * np.sum(kv * jhat, axis=-1).reshape(-1), 3).astype(np.complex128)
    a[np.arange(dim), np.arange(dim)] = diag
    left = np.broadcast_to(_cross_matrix(1j * jhat), (2 * n + 1,) * 3 + (3, 3)).copy()
    _advection_blocks(flow, n, left, a)
    return a


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise UndefinedDirection("the zero wavevector has no direction")
    return v / nv


# ---------------------------------------------------------------------------
# eigenpairs

@dataclass(frozen=True, eq=False)
class EigPair:
    """One computed eigenpair with its a-posteriori diagnostics."""

    p: complex
    field: df.SpectralField
    residual: float
    modal_div_residual: float


def eig_order(values: np.ndarray) -> np.ndarray:
    """Descending real part, ties broken by descending imaginary part."""
    return np.lexsort((-values.imag, -values.real))


def fix_phase(f: df.SpectralField) -> df.SpectralField:
    """Unit l2 norm with the anchor component rotated to be real positive.

    The anchor is the largest-modulus component of the mean vector, falling
    back to the globally largest coefficient for mean-free eigenvectors.
    """
    nrm = f.l2()
    if nrm == 0.0:
        return f
    m = df.mean_vector(f)
    anchor = m[np.argmax(np.abs(m))]
    if np.abs(anchor) < 1e-9 * nrm:
        flat = f.coeffs.reshape(-1)
        anchor = flat[np.argmax(np.abs(flat))]
    return f * (np.abs(anchor) / (anchor * nrm))


def eig_residual(spec: ModalOperatorSpec, p: complex, h: df.SpectralField) -> float:
    r = apply_modal(spec, h) - p * h
    return r.l2() / max(h.l2(), 1e-300)


def _make_pair(spec: ModalOperatorSpec, p: complex, h: df.SpectralField) -> EigPair:
    h = fix_phase(h)
    return EigPair(
        p=complex(p),
        field=h,
        residual=eig_residual(spec, p, h),
        modal_div_residual=df.divergence_rel(h, shift=spec.j),
    )


def leading_eigs(
    spec: ModalOperatorSpec,
    count: int = 6,
    method: str = "dense",
    sigma: complex | None = None,
    seed: int = 0,
) -> list[EigPair]:
    """Eigenpairs ordered by descending real part.

    method='dense' assembles the full matrix (sizes up to DENSE_CAP);
    method='krylov' runs shift-invert Arnoldi about ``sigma`` (default a
    point just right of the expected leading eigenvalue) with dense LU
    inner solves below the cap and preconditioned GMRES above it.
    """
    if method == "dense":
        a = assemble_dense(spec)
        vals, vecs = la.eig(a)
        order = eig_order(vals)[:count]
        return [_make_pair(spec, vals[i], vec_to_field(vecs[:, i], spec.truncation)) for i in order]
    if method != "krylov":
        raise ConfigError(f"unknown eigensolver method {method!r}")

    if sigma is None:
        sigma = 0.1 * spec.eps
    dim = spec.dim
    linop = spla.LinearOperator(
        (dim, dim),
        matvec=lambda x: field_to_vec(apply_modal(spec, vec_to_field(x, spec.truncation))),
        dtype=np.complex128,
    )
    if dim <= DENSE_CAP:
        lu = la.lu_factor(assemble_dense(spec) - sigma * np.eye(dim))
        opinv = spla.LinearOperator((dim, dim), matvec=lambda b: la.lu_solve(lu, b), dtype=np.complex128)
    else:
        kappa = spec.shifted_wavevectors()
        dvals = np.repeat((-spec.eps * np.sum(kappa**2, axis=-1)).reshape(-1), 3) - sigma
        precond = spla.LinearOperator((dim, dim), matvec=lambda b: b / dvals, dtype=np.complex128)

        def solve(b):
            x, info = spla.gmres(
                spla.LinearOperator((dim, dim), matvec=lambda y: linop @ y - sigma * y, dtype=np.complex128),
                b, M=precond, rtol=1e-10, atol=0.0, maxiter=400,
            )
            if info != 0:
                raise EigsFailed(f"inner shift-invert solve stalled (gmres info {info})")
            return x

        opinv = spla.LinearOperator((dim, dim), matvec=solve, dtype=np.complex128)

    v0 = np.random.default_rng(seed).standard_normal(dim) + 0.0j
    try:
        vals, vecs = spla.eigs(linop, k=count, sigma=sigma, OPinv=opinv, which="LM", v0=v0)
    except spla.ArpackNoConvergence as exc:  # pragma: no cover - rare
        raise EigsFailed(f"Arnoldi iteration did not converge: {exc}") from exc
    order = eig_order(vals)
    return [_make_pair(spec, vals[i], vec_to_field(vecs[:, i], spec.truncation)) for i in order]


def kernel_basis(flow: df.SpectralField, n: int, tol: float = 1e-12) -> list[df.SpectralField]:
    """Basis v + S(v) of the kernel of the j = 0, eps = 1 operator."""
    from . import alpha  # local import; alpha builds on this module

    basis = []
    for axis in range(3):
        v = np.zeros(3)
        v[axis] = 1.0
        sol = alpha.solve_cell_problem(flow, v, method="direct", tol=tol, truncation=n)
        basis.append(df.const_field(v) + sol.field)
    return basis


# ---------------------------------------------------------------------------
# contour projectors

@dataclass(frozen=True)
class Contour:
    """A circle in the spectral plane, discretized by the trapezoid rule."""

    center: complex
    radius: float
    nodes: int = 16

    def __post_init__(self):
        if not (self.radius > 0.0 and math.isfinite(self.radius)):
            raise ConfigError(f"contour radius must be positive, got {self.radius}")
        if self.nodes < 8:
            raise ConfigError("contour quadrature needs at least 8 nodes")

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        theta = 2.0 * np.pi * np.arange(self.nodes) / self.nodes
        return self.center + self.radius * np.exp(1j * theta), np.exp(1j * theta)


def _contour_sum(a: np.ndarray, contour: Contour, block: np.ndarray) -> np.ndarray:
    """Quadrature of the resolvent integral applied to a block of vectors."""
    dim = a.shape[0]
    mus, phases = contour.points()
    acc = np.zeros_like(block)
    eye = np.eye(dim)
    for mu, ph in zip(mus, phases):
        m = mu * eye - a
        anorm = np.linalg.norm(m, 1)
        lu, piv = la.lu_factor(m)
        rcond = la.lapack.zgecon(lu, anorm)[0]
        if rcond < 1e-14:
            raise ContourTouchesSpectrum(f"resolvent nearly singular at node {mu:.6g} (rcond {rcond:.2e})")
        acc += ph * la.lu_solve((lu, piv), block)
    return acc * (contour.radius / contour.nodes)


class RieszProjector:
    """Spectral projector onto the eigenvalues enclosed by a circle.

    Construction doubles the quadrature node count until the idempotency
    defect measured on random probes drops below ``target_defect``; the
    achieved defect and a probe-based rank estimate are kept as attributes.
    """

    def __init__(
        self,
        spec: ModalOperatorSpec,
        contour: Contour,
        probes: int = 8,
        target_defect: float = 1e-8,
        max_nodes: int = 256,
        seed: int = 7,
    ):
        self.spec = spec
        self._matrix = assemble_dense(spec)
        rng = np.random.default_rng(seed)
        block = rng.standard_normal((spec.dim, probes)) + 1j * rng.standard_normal((spec.dim, probes))
        block /= np.linalg.norm(block, axis=0, keepdims=True)
        nodes = contour.nodes
        while True:
            trial = Contour(contour.center, contour.radius, nodes)
            once = _contour_sum(self._matrix, trial, block)
            twice = _contour_sum(self._matrix, trial, once)
            defect = float(np.max(np.linalg.norm(twice - once, axis=0)))
            if defect <= target_defect or nodes >= max_nodes:
                break
            nodes *= 2
        if defect > target_defect:
            raise SolverFailure(
                f"projector idempotency stalled at {defect:.2e} with {nodes} nodes"
            )
        self.contour = Contour(contour.center, contour.radius, nodes)
        self.idempotency_defect = defect
        sv = la.svdvals(once)
        self.rank_estimate = int(np.sum(sv > 1e-6 * max(sv[0], 1e-300)))

    def apply_block(self, block: np.ndarray) -> np.ndarray:
        return _contour_sum(self._matrix, self.contour, block)

    def apply(self, f: df.SpectralField) -> df.SpectralField:
        x = field_to_vec(df.resize(f, self.spec.truncation))
        return vec_to_field(self.apply_block(x[:, None])[:, 0], self.spec.truncation)


def riesz_projector(
    spec: ModalOperatorSpec,
    contour: Contour,
    probes: int = 8,
    target_defect: float = 1e-8,
) -> RieszProjector:
    return RieszProjector(spec, contour, probes=probes, target_defect=target_defect)


@dataclass(frozen=True)
class ProjectorComparison:
    """Quantitative comparison of spectral projectors of two operators.

    ``bound`` is radius * M / (1 - M) * sup ||R0||, the contour-length form
    of the perturbation estimate; ``measured`` is the exact 2-norm distance
    of the dense quadrature projectors.
    """

    smallness: float
    sup_resolvent: float
    bound: float
    measured: float
    rank0: int
    rank1: int


def _two_norm(mat: np.ndarray, iters: int = 60, tol: float = 1e-10, seed: int = 11) -> float:
    """Operator 2-norm by power iteration on mat^H mat (deterministic start)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(mat.shape[1]) + 1j * rng.standard_normal(mat.shape[1])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        y = mat @ x
        x = mat.conj().T @ y
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        new = math.sqrt(nx)
        x /= nx
        if abs(new - sigma) <= tol * max(new, 1e-300):
            sigma = new
            break
        sigma = new
    return float(sigma)


def projector_distance_bound(
    spec0: ModalOperatorSpec,
    spec1: ModalOperatorSpec,
    contour: Contour,
) -> ProjectorComparison:
    a0 = assemble_dense(spec0)
    a1 = assemble_dense(spec1)
    if a0.shape != a1.shape:
        raise ConfigError("operators must share one truncation for comparison")
    delta = a1 - a0
    dim = a0.shape[0]
    eye = np.eye(dim)
    mus, phases = contour.points()
    smallness = 0.0
    sup_r0 = 0.0
    p0 = np.zeros_like(a0)
    p1 = np.zeros_like(a0)
    for mu, ph in zip(mus, phases):
        r0 = la.solve(mu * eye - a0, eye)
        r1 = la.solve(mu * eye - a1, eye)
        smallness = max(smallness, _two_norm(delta @ r0))
        sup_r0 = max(sup_r0, _two_norm(r0))
        p0 += ph * r0
        p1 += ph * r1
    p0 *= contour.radius / contour.nodes
    p1 *= contour.radius / contour.nodes
    if smallness >= 1.0:
        raise BoundInapplicable(f"perturbation is not contractive on the contour (M = {smallness:.3f})")
    bound = contour.radius * smallness / (1.0 - smallness) * sup_r0
    measured = _two_norm(p0 - p1)
    return ProjectorComparison(
        smallness=float(smallness),
        sup_resolvent=float(sup_r0),
        bound=float(bound),
        measured=measured,
        rank0=int(round(np.trace(p0).real)),
        rank1=int(round(np.trace(p1).real)),
    )


# ---------------------------------------------------------------------------
# first-order perturbation check

@dataclass(frozen=True)
class FirstOrderReport:
    """Measured leading eigenvalues against linear-in-|j| predictions."""

    j_direction: np.ndarray
    magnitudes: np.ndarray
    predictions: np.ndarray          # slopes mu_l, descending real part
    eigenvalues: np.ndarray          # (len(magnitudes), 3), matched to predictions
    remainders: np.ndarray           # |p_l - mu_l |j||, same shape
    slope: float                     # log-log slope of the worst remainder
    per_branch_slopes: np.ndarray


def first_order_check(
    flow: df.SpectralField,
    j_direction,
    magnitudes,
    truncation: int,
    tol: float = 1e-12,
) -> FirstOrderReport:
    """Compare leading eigenvalues of L(|j| jhat, 1) with the alpha-matrix rates.

    The predictions are computed from cell solves at the same truncation, so
    the remainders isolate the genuinely quadratic part of the eigenvalue
    curves rather than truncation mismatch.
    """
    from . import alpha

    jhat = _unit(j_direction)
    mags = np.asarray(magnitudes, dtype=float)
    if np.any(mags <= 0.0) or np.any(np.diff(mags) >= 0.0):
        raise ConfigError("magnitudes must be positive and strictly decreasing")
    am = alpha.alpha_matrix(flow, jhat, truncation=truncation, tol=tol)
    mu = am.eigenvalues
    eigs = np.zeros((len(mags), 3), dtype=np.complex128)
    rem = np.zeros((len(mags), 3))
    for i, m in enumerate(mags):
        spec = ModalOperatorSpec(flow, m * jhat, 1.0, truncation)
        top = leading_eigs(spec, count=3, method="dense")
        ps = np.array([t.p for t in top])
        # assign branches against the shift-corrected model mu|j| - |j|^2;
        # matching on the bare linear term is ambiguous once |j|^2
        # dominates the eigenvalue spacing
        cost = np.abs(ps[:, None] - (m * mu[None, :] - m * m))
        rows, cols = linear_sum_assignment(cost)
        matched = np.empty(3, dtype=np.complex128)
        matched[cols] = ps[rows]
        eigs[i] = matched
        rem[i] = np.abs(matched - m * mu)
    worst = np.max(rem, axis=1)
    slope = float(np.polyfit(np.log(mags), np.log(np.maximum(worst, 1e-300)), 1)[0])
    branch = np.array(
        [np.polyfit(np.log(mags), np.log(np.maximum(rem[:, l], 1e-300)), 1)[0] for l in range(3)]
    )
    return FirstOrderReport(
        j_direction=jhat,
        magnitudes=mags,
        predictions=mu,
        eigenvalues=eigs,
        remainders=rem,
        slope=slope,
        per_branch_slopes=branch,
    )


# ---------------------------------------------------------------------------
# continuation in the diffusivity

@dataclass(frozen=True)
class ContinuationResult:
    """Path of eigenpairs from eps = start down to the achieved window edge."""

    path: list[tuple[float, EigPair]]
    achieved_eps: float
    window: float                    # 1 - achieved_eps when started at 1
    stalled: bool
    floor: float                     # the Re p threshold that was enforced


def continue_in_eps(
    flow: df.SpectralField,
    j,
    start: EigPair,
    target_eps: float,
    truncation: int,
    start_eps: float = 1.0,
    d_eps: float = 0.05,
    min_step: float = 1e-4,
    contour_nodes: int = 16,
    residual_tol: float = 1e-7,
) -> ContinuationResult:
    """Follow a simple eigenpair of L(j, eps) as eps decreases.

    Each step applies the circle projector of the trial operator, centered
    at the current eigenvalue with radius half the initial spectral gap, to
    the current eigenvector.  A collapsing projection, a bad residual, or a
    real part falling under half the starting one halves the step; the run
    returns the largest achieved window rather than raising.
    """
    j = np.asarray(j, dtype=float).reshape(3)
    if not 0.0 < target_eps <= start_eps:
        raise ConfigError("need 0 < target_eps <= start_eps")
    spec0 = ModalOperatorSpec(flow, j, start_eps, truncation)
    a0 = assemble_dense(spec0)
    vals = la.eigvals(a0)
    gaps = np.abs(vals - start.p)
    gap = float(np.min(gaps[gaps > 1e-10]))
    radius = 0.5 * gap
    floor = 0.5 * start.p.real

    eps = start_eps
    current = start
    path = [(eps, start)]
    step = d_eps
    while eps > target_eps + 1e-12:
        step = min(step, eps - target_eps)
        if step < min_step:
            return ContinuationResult(path, eps, start_eps - eps, True, floor)
        trial_eps = eps - step
        spec = ModalOperatorSpec(flow, j, trial_eps, truncation)
        contour = Contour(complex(current.p), radius, contour_nodes)
        try:
            a = assemble_dense(spec)
            x = field_to_vec(current.field)
            y = _contour_sum(a, contour, x[:, None])[:, 0]
        except ContourTouchesSpectrum:
            step *= 0.5
            continue
        ratio = np.linalg.norm(y) / max(np.linalg.norm(x), 1e-300)
        if ratio < 0.05:
            step *= 0.5
            continue
        h = fix_phase(vec_to_field(y, truncation))
        hv = field_to_vec(h)
        p_new = complex(np.vdot(hv, a @ hv) / np.vdot(hv, hv))
        pair = _make_pair(spec, p_new, h)
        if pair.residual > residual_tol or p_new.real < floor:
            step *= 0.5
            continue
        eps = trial_eps
        current = pair
        path.append((eps, pair))
        step = d_eps
    return ContinuationResult(path, eps, start_eps - eps, False, floor)


@dataclass(frozen=True)
class LipschitzEstimate:
    """Divided-difference bound for the eps-dependence of projected vectors."""

    constant: float
    constant_half_step: float
    step: float
    rel_change: float


def eps_lipschitz(
    flow: df.SpectralField,
    j,
    reference: df.SpectralField,
    contour: Contour,
    eps_lo: float,
    eps_hi: float,
    truncation: int,
    step: float,
) -> LipschitzEstimate:
    """Estimate sup ||d/d eps of P(eps) H_ref|| over [eps_lo, eps_hi].

    The same fixed contour is used at every eps, matching the construction
    whose Lipschitz continuity the estimate is meant to quantify.
    """
    x = field_to_vec(df.resize(reference, truncation))[:, None]

    def path_constant(h: float) -> float:
        eps_grid = np.arange(eps_lo, eps_hi + 1e-12, h)
        imgs = []
        for e in eps_grid:
            a = assemble_dense(ModalOperatorSpec(flow, j, float(e), truncation))
            imgs.append(_contour_sum(a, contour, x)[:, 0])
        diffs = [np.linalg.norm(b - a) / h for a, b in zip(imgs, imgs[1:])]
        return float(max(diffs))

    c1 = path_constant(step)
    c2 = path_constant(step / 2.0)
    rel = abs(c1 - c2) / max(c1, 1e-300)
    return LipschitzEstimate(constant=c1, constant_half_step=c2, step=step, rel_change=rel)
