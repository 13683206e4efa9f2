"""Fully constrained per-pixel unmixing by projected gradient descent.

The model is m = Ef + n with f required to lie in the feasible set
{f >= 0, sum(f) <= 1}. The default objective is the spectral angle between
m and Ef; a squared-error mode is available as a degeneracy-free
cross-check (the angle is invariant under positive scaling of f, the
squared error is not).

Batch evaluation notes. ``unmix_image`` and ``unmix_pixel`` share one
batched core. Every tensor contraction in that core goes through
``np.einsum(..., optimize=False)`` and every reduction runs along the last
axis, so the arithmetic performed for one pixel depends only on that
pixel's data and never on how many other pixels share the batch. That is
what makes the image path bit-identical to a sequential per-pixel loop,
which is asserted in the tests. BLAS-backed matmul is deliberately avoided
here because its accumulation order can change with operand shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from specgt.cube_io import EndmemberLibrary, FractionMap, SpectralCube
from specgt.errors import DataValidationError, NumericalError, SingularPointError

OBJECTIVE_SAM = "spectral-angle"
OBJECTIVE_EUCLIDEAN = "euclidean"
LINE_SEARCH_GOLDEN = "golden-section"
LINE_SEARCH_BACKTRACKING = "backtracking"
INIT_UNIFORM = "uniform-interior"
INIT_LSTSQ = "projected-least-squares"

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0
# Guard on sin(angle) below which the angle gradient is treated as zero:
# the angle surface has a cone point at exact alignment, and any iterate
# this close to it is already at the global minimum for our purposes.
_SIN_GUARD = 1e-12


@dataclass(frozen=True)
class UnmixOptions:
    """Solver configuration.

    ``coarse_points`` and ``golden_iters`` tune the line search (number of
    bracketing samples on [0, alpha_max], then fixed golden-section
    refinements). They trade accuracy for speed and do not change any
    contract; the defaults comfortably beat a 1000-point grid scan.
    """

    objective: str = OBJECTIVE_SAM
    max_iters: int = 500
    grad_tol: float = 1e-8
    obj_tol: float = 1e-10
    line_search: str = LINE_SEARCH_GOLDEN
    init: str = INIT_UNIFORM
    epsilon_norm: float = 1e-12
    coarse_points: int = 24
    golden_iters: int = 34

    def __post_init__(self):
        if self.objective not in (OBJECTIVE_SAM, OBJECTIVE_EUCLIDEAN):
            raise DataValidationError(f"unknown objective '{self.objective}'")
        if self.line_search not in (LINE_SEARCH_GOLDEN, LINE_SEARCH_BACKTRACKING):
            raise DataValidationError(f"unknown line search '{self.line_search}'")
        if self.init not in (INIT_UNIFORM, INIT_LSTSQ):
            raise DataValidationError(f"unknown init '{self.init}'")
        if self.max_iters < 1:
            raise DataValidationError("max_iters must be >= 1")
        if self.grad_tol <= 0 or self.obj_tol <= 0 or self.epsilon_norm <= 0:
            raise DataValidationError("tolerances must be positive")
        if self.coarse_points < 2 or self.golden_iters < 1:
            raise DataValidationError("line-search controls must be positive")


DEFAULT_OPTIONS = UnmixOptions()


@dataclass(frozen=True)
class UnmixResult:
    """Outcome for one pixel."""

    fractions: np.ndarray  # (d,)
    converged: bool
    iterations: int
    objective: float
    trace: tuple | None = None  # objective per iterate, when requested


@dataclass(frozen=True)
class UnmixReport:
    """Aggregate convergence statistics for an image run."""

    pixels: int
    mean_iterations: float
    non_converged: int


def _as_matrix(E) -> np.ndarray:
    """Accept an EndmemberLibrary or a plain (bands, d) array."""
    if isinstance(E, EndmemberLibrary):
        return E.spectra
    arr = np.asarray(E, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DataValidationError(f"endmember matrix must be 2-d, got {arr.ndim}-d")
    return arr


# ---------------------------------------------------------------------------
# Spectral angle


def sam(a, b) -> float:
    """Spectral angle between two spectra, in radians.

    arccos of the cosine similarity, with the cosine clamped to [-1, 1] so
    round-off cannot push it outside the arccos domain. Symmetric, and
    invariant to positive rescaling of either argument.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DataValidationError(f"spectra lengths differ: {a.size} vs {b.size}")
    na = np.sqrt(np.einsum("l,l->", a, a))
    nb = np.sqrt(np.einsum("l,l->", b, b))
    if na <= 0.0 or nb <= 0.0:
        raise SingularPointError("sam undefined for zero-norm spectra")
    c = np.einsum("l,l->", a, b) / (na * nb)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# Feasible-set projection


def _clamp_sum(P: np.ndarray) -> np.ndarray:
    """Force every row sum of a nonnegative array to <= 1, in place.

    Moves values by round-off only. Division by the row sum almost always
    lands within budget in one pass; if rounding keeps a sum a few ulps
    above 1, the excess is subtracted from the largest entry, which
    strictly decreases the float sum and so must terminate.
    """
    s = P.sum(axis=-1)
    bad = s > 1.0
    tries = 0
    while np.any(bad):
        if tries < 8:
            P[bad] = P[bad] / s[bad][:, None]
        else:
            idx = np.nonzero(bad)[0]
            j = np.argmax(P[idx], axis=-1)
            P[idx, j] = np.maximum(P[idx, j] - (s[idx] - 1.0), 0.0)
        s = P.sum(axis=-1)
        bad = s > 1.0
        tries += 1
    return P


def _project_batch(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto {f >= 0, sum f <= 1}.

    Clip negatives; rows whose clipped sum is within budget are done.
    The rest are projected onto the unit simplex by the sorting rule, then
    clamped so the returned sums never exceed 1 even in the last bit.
    All steps operate row-wise, keeping per-row results independent of the
    batch composition.
    """
    V = np.asarray(V, dtype=np.float64)
    W = np.maximum(V, 0.0)
    sums = W.sum(axis=-1)
    over = sums > 1.0
    if np.any(over):
        X = V[over]
        d = X.shape[-1]
        U = -np.sort(-X, axis=-1)
        css = np.cumsum(U, axis=-1)
        j = np.arange(1, d + 1, dtype=np.float64)
        cond = U > (css - 1.0) / j
        rho = cond.sum(axis=-1)  # >= 1 always
        theta = (np.take_along_axis(css, rho[:, None] - 1, axis=-1)[:, 0] - 1.0) / rho
        P = np.maximum(X - theta[:, None], 0.0)
        W[over] = _clamp_sum(P)
    return W


def project_feasible(v) -> np.ndarray:
    """Euclidean projection onto {f >= 0, sum f <= 1}.

    Accepts a single vector or any (..., d) stack; the projection is
    applied row by row. Idempotent, and the output is feasible exactly
    (no tolerance needed).
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataValidationError("cannot project non-finite values")
    if v.ndim == 1:
        return _project_batch(v[None, :])[0]
    shape = v.shape
    flat = v.reshape(-1, shape[-1])
    return _project_batch(flat).reshape(shape)


# ---------------------------------------------------------------------------
# Objective and gradient (batched cores + public single-pixel wrappers)


def _mix(E: np.ndarray, F: np.ndarray) -> np.ndarray:
    return np.einsum("ld,nd->nl", E, F, optimize=False)


def _row_norm(X: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("nl,nl->n", X, X, optimize=False))


def _objective_batch(F, M, E, opts, m_norm=None) -> np.ndarray:
    """Objective per row; +inf marks rows where the angle is undefined."""
    Y = _mix(E, F)
    if opts.objective == OBJECTIVE_EUCLIDEAN:
        R = Y - M
        return np.einsum("nl,nl->n", R, R, optimize=False)
    if m_norm is None:
        m_norm = _row_norm(M)
    y_norm = _row_norm(Y)
    ok = y_norm > opts.epsilon_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.einsum("nl,nl->n", M, Y, optimize=False) / (m_norm * y_norm)
    ang = np.arccos(np.clip(c, -1.0, 1.0))
    return np.where(ok, ang, np.inf)


def _gradient_batch(F, M, E, opts, m_norm=None) -> np.ndarray:
    Y = _mix(E, F)
    if opts.objective == OBJECTIVE_EUCLIDEAN:
        return 2.0 * np.einsum("ld,nl->nd", E, Y - M, optimize=False)
    if m_norm is None:
        m_norm = _row_norm(M)
    y_norm = _row_norm(Y)
    if np.any(y_norm <= opts.epsilon_norm):
        raise SingularPointError(
            "angle gradient undefined where the mixed spectrum has zero norm"
        )
    c = np.clip(
        np.einsum("nl,nl->n", M, Y, optimize=False) / (m_norm * y_norm), -1.0, 1.0
    )
    sin = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    safe = sin > _SIN_GUARD
    inv_sin = np.where(safe, 1.0 / np.where(safe, sin, 1.0), 0.0)
    dY = (
        M / (m_norm * y_norm)[:, None] - (c / (y_norm * y_norm))[:, None] * Y
    ) * (-inv_sin)[:, None]
    return np.einsum("ld,nl->nd", E, dY, optimize=False)


def objective(f, m, E, opts: UnmixOptions = DEFAULT_OPTIONS) -> float:
    """Unmixing objective at f: spectral angle sam(m, Ef) or ||m - Ef||^2."""
    Emat = _as_matrix(E)
    f = np.asarray(f, dtype=np.float64).reshape(1, -1)
    m = np.asarray(m, dtype=np.float64).reshape(1, -1)
    _check_problem_shapes(f, m, Emat)
    if opts.objective == OBJECTIVE_SAM:
        if _row_norm(m)[0] <= opts.epsilon_norm:
            raise SingularPointError("zero-norm measured spectrum")
        val = _objective_batch(f, m, Emat, opts)[0]
        if not np.isfinite(val):
            raise SingularPointError(
                "||Ef|| is below epsilon_norm, the angle is undefined here"
            )
        return float(val)
    return float(_objective_batch(f, m, Emat, opts)[0])


def gradient(f, m, E, opts: UnmixOptions = DEFAULT_OPTIONS) -> np.ndarray:
    """Analytic gradient of the chosen objective with respect to f."""
    Emat = _as_matrix(E)
    f = np.asarray(f, dtype=np.float64).reshape(1, -1)
    m = np.asarray(m, dtype=np.float64).reshape(1, -1)
    _check_problem_shapes(f, m, Emat)
    if opts.objective == OBJECTIVE_SAM and _row_norm(m)[0] <= opts.epsilon_norm:
        raise SingularPointError("zero-norm measured spectrum")
    return _gradient_batch(f, m, Emat, opts)[0]


def _check_problem_shapes(F, M, E) -> None:
    if F.shape[-1] != E.shape[1]:
        msg = f"f has {F.shape[-1]} entries but E has {E.shape[1]} endmembers"
        raise DataValidationError(msg)
    if M.shape[-1] != E.shape[0]:
        msg = f"m has {M.shape[-1]} bands but E has {E.shape[0]}"
        raise DataValidationError(msg)


# ---------------------------------------------------------------------------
# Line search


def _phi_batch(alpha, F, G, M, E, opts, m_norm):
    """phi(alpha) = objective(project(f - alpha g)) for each row."""
    cand = _project_batch(F - alpha[:, None] * G)
    return _objective_batch(cand, M, E, opts, m_norm)


# Geometric ladder depth for the near-zero scan: alpha_max * 2^-1 .. 2^-40.
# Any descent valley too narrow for the deepest rung carries an objective
# improvement far below obj_tol, so missing it only stops the iteration at
# the point where it would have stopped anyway.
_LADDER = 40


def _golden_refine(lo, hi, F, G, M, E, opts, m_norm, best_alpha, best_phi):
    """Golden-section refinement of a per-row bracket, tracking the best
    actually-evaluated point so the caller's descent guarantee holds."""
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1 = _phi_batch(x1, F, G, M, E, opts, m_norm)
    f2 = _phi_batch(x2, F, G, M, E, opts, m_norm)
    for probe, val in ((x1, f1), (x2, f2)):
        better = val < best_phi
        best_phi = np.where(better, val, best_phi)
        best_alpha = np.where(better, probe, best_alpha)
    for _ in range(opts.golden_iters):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x1n = hi - _INVPHI * (hi - lo)
        x2n = lo + _INVPHI * (hi - lo)
        # On the "left" branch the new probe is x1, otherwise it is x2;
        # the surviving interior point inherits its already-known value.
        probe = np.where(left, x1n, x2n)
        fp = _phi_batch(probe, F, G, M, E, opts, m_norm)
        f1_old, f2_old = f1, f2
        f1 = np.where(left, fp, f2_old)
        f2 = np.where(left, f1_old, fp)
        x1, x2 = x1n, x2n
        better = fp < best_phi
        best_phi = np.where(better, fp, best_phi)
        best_alpha = np.where(better, probe, best_alpha)
    return best_alpha, best_phi


def _line_search_batch(F, G, M, E, opts, m_norm, phi0) -> np.ndarray:
    """Per-row step length approximately minimizing phi on [0, alpha_max].

    Two probe families cover the interval at all scales, with
    alpha_max = 1/||g|| doubled while the linear scan keeps bottoming out
    at its right edge:

    * a linear scan of ``coarse_points`` samples (broad valleys);
    * a geometric ladder alpha_max * 2^-j, j = 1.._LADDER (the descent
      valley of phi starts at 0+, and near convergence it can be orders
      of magnitude narrower than the linear spacing).

    The neighbourhoods of the best sample of each family are refined by
    golden section, and the best objective value seen anywhere (including
    alpha = 0) decides the returned step, so the result never increases
    the objective.
    """
    n = F.shape[0]
    gnorm = _row_norm(G)
    alive = gnorm > 0.0
    alpha_max = np.where(alive, 1.0 / np.where(alive, gnorm, 1.0), 0.0)

    best_alpha = np.zeros(n)
    best_phi = phi0.copy()

    K = opts.coarse_points
    ks = np.arange(1, K + 1, dtype=np.float64) / K
    edge = alive.copy()
    coarse_alpha = np.zeros((n, K))
    coarse_phi = np.full((n, K), np.inf)
    for _ in range(64):
        if not np.any(edge):
            break
        idx = np.nonzero(edge)[0]
        A = alpha_max[idx, None] * ks[None, :]
        P = np.stack(
            [
                _phi_batch(A[:, j], F[idx], G[idx], M[idx], E, opts, m_norm[idx])
                for j in range(K)
            ],
            axis=1,
        )
        coarse_alpha[idx] = A
        coarse_phi[idx] = P
        arg = np.argmin(P, axis=1)
        hit_edge = arg == K - 1
        improved = P[np.arange(len(idx)), arg] < best_phi[idx]
        upd = idx[improved]
        best_phi[upd] = P[improved, arg[improved]]
        best_alpha[upd] = A[improved, arg[improved]]
        again = idx[hit_edge]
        alpha_max[again] = alpha_max[again] * 2.0
        keep = np.zeros(n, dtype=bool)
        keep[again] = True
        edge = keep

    # Refinement 1: around the best linear sample (its two neighbours).
    arg = np.argmin(coarse_phi, axis=1)
    step = coarse_alpha[:, 0] if K >= 1 else alpha_max
    lo = np.maximum(coarse_alpha[np.arange(n), arg] - step, 0.0)
    hi = np.minimum(coarse_alpha[np.arange(n), arg] + step, alpha_max)
    lo = np.where(alive, lo, 0.0)
    hi = np.where(alive, hi, 0.0)
    best_alpha, best_phi = _golden_refine(
        lo, hi, F, G, M, E, opts, m_norm, best_alpha, best_phi
    )

    # Refinement 2: geometric ladder toward zero, then its neighbourhood.
    rungs = alpha_max[:, None] * (0.5 ** np.arange(1, _LADDER + 1))[None, :]
    lad_phi = np.stack(
        [
            _phi_batch(rungs[:, j], F, G, M, E, opts, m_norm)
            for j in range(_LADDER)
        ],
        axis=1,
    )
    larg = np.argmin(lad_phi, axis=1)
    lval = lad_phi[np.arange(n), larg]
    lbest = rungs[np.arange(n), larg]
    better = lval < best_phi
    best_phi = np.where(better, lval, best_phi)
    best_alpha = np.where(better, lbest, best_alpha)
    lo2 = np.where(alive, lbest * 0.5, 0.0)
    hi2 = np.where(alive, np.minimum(lbest * 2.0, alpha_max), 0.0)
    best_alpha, best_phi = _golden_refine(
        lo2, hi2, F, G, M, E, opts, m_norm, best_alpha, best_phi
    )
    return np.where(alive, best_alpha, 0.0)


def _backtracking_batch(F, G, M, E, opts, m_norm, phi0) -> np.ndarray:
    """Halve alpha from 1/||g|| until the objective strictly decreases."""
    n = F.shape[0]
    gnorm = _row_norm(G)
    alive = gnorm > 0.0
    alpha = np.where(alive, 1.0 / np.where(alive, gnorm, 1.0), 0.0)
    out = np.zeros(n)
    active = alive.copy()
    for _ in range(80):
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        val = _phi_batch(alpha[idx], F[idx], G[idx], M[idx], E, opts, m_norm[idx])
        good = val < phi0[idx]
        out[idx[good]] = alpha[idx[good]]
        active[idx[good]] = False
        alpha[idx[~good]] = alpha[idx[~good]] * 0.5
    return out


def line_search(f, g, m, E, opts: UnmixOptions = DEFAULT_OPTIONS) -> float:
    """Step length for one pixel; see the batched implementations."""
    Emat = _as_matrix(E)
    F = np.asarray(f, dtype=np.float64).reshape(1, -1)
    G = np.asarray(g, dtype=np.float64).reshape(1, -1)
    M = np.asarray(m, dtype=np.float64).reshape(1, -1)
    _check_problem_shapes(F, M, Emat)
    m_norm = _row_norm(M)
    phi0 = _objective_batch(F, M, Emat, opts, m_norm)
    if opts.line_search == LINE_SEARCH_BACKTRACKING:
        return float(_backtracking_batch(F, G, M, Emat, opts, m_norm, phi0)[0])
    return float(_line_search_batch(F, G, M, Emat, opts, m_norm, phi0)[0])


# ---------------------------------------------------------------------------
# The PGD driver


def _initial_point(M, E, opts) -> np.ndarray:
    n, d = M.shape[0], E.shape[1]
    if opts.init == INIT_UNIFORM:
        return np.full((n, d), 1.0 / (2.0 * d))
    pinv = np.linalg.pinv(E)  # (d, bands), deterministic for fixed E
    F0 = _project_batch(np.einsum("dl,nl->nd", pinv, M, optimize=False))
    # The projected least-squares point can collapse to ||Ef|| ~ 0 (for
    # example when the unconstrained solution is entirely negative); those
    # rows fall back to the uniform interior point.
    y_norm = _row_norm(_mix(E, F0))
    bad = y_norm <= opts.epsilon_norm
    if np.any(bad):
        F0[bad] = 1.0 / (2.0 * d)
    return F0


def _unmix_batch(M, E, opts, keep_trace=False):
    """Projected gradient descent on every row of M at once.

    Returns (F, converged, iterations, objective, traces). Rows that meet
    a stopping rule are frozen and removed from the active set, so their
    results are exactly what a solo run would produce.
    """
    n, d = M.shape[0], E.shape[1]
    m_norm = _row_norm(M)
    if np.any(m_norm <= opts.epsilon_norm):
        first = int(np.nonzero(m_norm <= opts.epsilon_norm)[0][0])
        raise SingularPointError(f"zero-norm pixel spectrum at flat index {first}")

    F = _initial_point(M, E, opts)
    obj = _objective_batch(F, M, E, opts, m_norm)
    if opts.objective == OBJECTIVE_SAM and not np.all(np.isfinite(obj)):
        raise SingularPointError("angle undefined at the initial point")

    converged = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=np.int64)
    traces = [[float(v)] for v in obj] if keep_trace else None

    active = np.arange(n)
    search = (
        _backtracking_batch
        if opts.line_search == LINE_SEARCH_BACKTRACKING
        else _line_search_batch
    )
    for _ in range(opts.max_iters):
        if active.size == 0:
            break
        Fa, Ma, mna, obja = F[active], M[active], m_norm[active], obj[active]
        G = _gradient_batch(Fa, Ma, E, opts, mna)
        gmap = _row_norm(Fa - _project_batch(Fa - G))
        flat = gmap < opts.grad_tol
        if np.any(flat):
            converged[active[flat]] = True
            keep = ~flat
            active = active[keep]
            if active.size == 0:
                break
            Fa, Ma, mna, obja, G = Fa[keep], Ma[keep], mna[keep], obja[keep], G[keep]
        alpha = search(Fa, G, Ma, E, opts, mna, obja)
        Fn = _project_batch(Fa - alpha[:, None] * G)
        objn = _objective_batch(Fn, Ma, E, opts, mna)
        F[active] = Fn
        obj[active] = objn
        iterations[active] += 1
        if keep_trace:
            for row, v in zip(active, objn):
                traces[int(row)].append(float(v))
        done = np.abs(obja - objn) < opts.obj_tol
        converged[active[done]] = True
        active = active[~done]

    if opts.objective == OBJECTIVE_SAM:
        # Scale disambiguation: the angle cannot distinguish f from c*f,
        # so move the minimizer onto the unit-sum face (always feasible
        # when the sum is positive), then clamp the last-bit overshoot.
        s = F.sum(axis=-1)
        pos = s > 0.0
        if np.any(pos):
            F[pos] = F[pos] / s[pos][:, None]
            _clamp_sum(F)
        obj = _objective_batch(F, M, E, opts, m_norm)

    out_traces = None
    if keep_trace:
        out_traces = [tuple(t) for t in traces]
    return F, converged, iterations, obj, out_traces


def unmix_pixel(
    m, E, opts: UnmixOptions = DEFAULT_OPTIONS, keep_trace: bool = False
) -> UnmixResult:
    """Solve the constrained problem for a single spectrum.

    In spectral-angle mode the minimizer is rescaled onto the unit-sum
    face (the angle cannot tell f from c*f, and unit-sum fractions are
    comparable across pixels). The euclidean mode returns the minimizer
    as found.
    """
    Emat = _as_matrix(E)
    M = np.asarray(m, dtype=np.float64).reshape(1, -1)
    if M.shape[1] != Emat.shape[0]:
        msg = f"pixel has {M.shape[1]} bands but E has {Emat.shape[0]}"
        raise DataValidationError(msg)
    F, conv, iters, obj, traces = _unmix_batch(M, Emat, opts, keep_trace)
    return UnmixResult(
        fractions=F[0],
        converged=bool(conv[0]),
        iterations=int(iters[0]),
        objective=float(obj[0]),
        trace=traces[0] if traces is not None else None,
    )


_CHUNK = 8192


def _unmix_cube_values(values, Emat, opts, workers: int = 1):
    rows, cols, bands = values.shape
    flat = values.reshape(-1, bands)
    n = flat.shape[0]
    F = np.zeros((n, Emat.shape[1]))
    conv = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=np.int64)

    def solve(start: int) -> None:
        stop = min(start + _CHUNK, n)
        Fc, cc, ic, _, _ = _unmix_batch(flat[start:stop], Emat, opts)
        F[start:stop] = Fc
        conv[start:stop] = cc
        iters[start:stop] = ic

    starts = range(0, n, _CHUNK)
    if workers > 1:
        # Chunks write to disjoint slices, so threading them cannot
        # change a single byte of the result.
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(solve, starts))
    else:
        for start in starts:
            solve(start)
    return F.reshape(rows, cols, -1), conv, iters


def unmix_image(
    cube: SpectralCube,
    E: EndmemberLibrary,
    opts: UnmixOptions = DEFAULT_OPTIONS,
    workers: int = 1,
) -> FractionMap:
    """Per-pixel unmixing of a whole cube; see :func:`unmix_pixel`.

    Pixels are processed in fixed-size batches purely for speed; results
    are bit-identical to a sequential per-pixel loop.
    """
    fm, _ = unmix_image_report(cube, E, opts, workers)
    return fm


def unmix_image_report(
    cube: SpectralCube,
    E: EndmemberLibrary,
    opts: UnmixOptions = DEFAULT_OPTIONS,
    workers: int = 1,
):
    """Like :func:`unmix_image` but also returns convergence statistics."""
    if workers < 1:
        raise DataValidationError("workers must be >= 1")
    if not isinstance(E, EndmemberLibrary):
        raise DataValidationError("unmix_image needs an EndmemberLibrary")
    if cube.bands != E.bands or not np.array_equal(cube.band_centers, E.band_centers):
        msg = (
            f"cube band grid ({cube.bands} bands) does not match the "
            f"endmember grid ({E.bands} bands)"
        )
        raise DataValidationError(msg)
    F, conv, iters = _unmix_cube_values(cube.values, E.spectra, opts, workers)
    fm = FractionMap(F, names=E.names)
    report = UnmixReport(
        pixels=int(conv.size),
        mean_iterations=float(iters.mean()) if iters.size else 0.0,
        non_converged=int(np.count_nonzero(~conv)),
    )
    return fm, report


# ---------------------------------------------------------------------------
# Brute-force oracle (test use only; exhaustive, so d is capped)


def _compositions(d: int, K: int) -> np.ndarray:
    """All nonnegative integer d-tuples with sum <= K, lexicographic."""
    if d == 1:
        return np.arange(K + 1, dtype=np.int32)[:, None]
    parts = []
    for k in range(K + 1):
        rest = _compositions(d - 1, K - k)
        col = np.full((rest.shape[0], 1), k, dtype=np.int32)
        parts.append(np.concatenate([col, rest], axis=1))
    return np.concatenate(parts, axis=0)


def brute_force_unmix(
    m, E, grid_step: float, opts: UnmixOptions = DEFAULT_OPTIONS
) -> np.ndarray:
    """Feasible grid point of minimal objective, ties to the first point
    in lexicographic grid order. Exhaustive, refuses d > 4."""
    Emat = _as_matrix(E)
    d = Emat.shape[1]
    if d > 4:
        raise DataValidationError(f"brute force refuses d={d} (limit 4)")
    if grid_step <= 0 or grid_step > 1:
        raise DataValidationError("grid_step must be in (0, 1]")
    M = np.asarray(m, dtype=np.float64).reshape(1, -1)
    if M.shape[1] != Emat.shape[0]:
        raise DataValidationError("band count mismatch")
    K = int(np.floor(1.0 / grid_step + 1e-12))
    combos = _compositions(d, K).astype(np.float64) * grid_step

    best_val = np.inf
    best_row = None
    for start in range(0, combos.shape[0], 200_000):
        block = combos[start:start + 200_000]
        if opts.objective == OBJECTIVE_EUCLIDEAN:
            R = block @ Emat.T - M
            vals = np.einsum("nl,nl->n", R, R)
        else:
            Y = block @ Emat.T
            yn = np.sqrt(np.einsum("nl,nl->n", Y, Y))
            mn = float(np.linalg.norm(M))
            with np.errstate(divide="ignore", invalid="ignore"):
                c = (Y @ M[0]) / (yn * mn)
            vals = np.where(yn > 0, np.arccos(np.clip(c, -1.0, 1.0)), np.inf)
        arg = int(np.argmin(vals))
        if vals[arg] < best_val:
            best_val = float(vals[arg])
            best_row = block[arg].copy()
    if best_row is None or not np.isfinite(best_val):
        raise NumericalError("no feasible grid point had a defined objective")
    return best_row
