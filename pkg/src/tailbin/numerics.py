"""Deterministic random streams, heavy-tailed sampling, quantiles, and a
cone-constrained concave maximizer.

Random streams use a splitmix64-style counter construction so that any
pipeline keyed by (base_seed, stream_index) is bit-identical across runs
and thread schedules. The mixing constants are fixed here and documented
so the sequence is reproducible by an independent implementation:

    state_k  = state_0 + k * 0x9E3779B97F4A7C15          (mod 2**64)
    output_k = mix(state_k)

    mix(v):  v ^= v >> 30;  v *= 0xBF58476D1CE4E5B9      (mod 2**64)
             v ^= v >> 27;  v *= 0x94D049BB133111EB      (mod 2**64)
             return v ^ (v >> 31)

A stream's initial state is the (stream_index + 1)-th output of the same
sequence started at base_seed, which gives distinct well-separated states
for distinct indices under one base seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .errors import EmptyDataError, InfeasibleInitError, InvalidParameterError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

_GOLDEN_U64 = np.uint64(_GOLDEN)
_MIX_A_U64 = np.uint64(_MIX_A)
_MIX_B_U64 = np.uint64(_MIX_B)

#: Central-difference step scale: cube root of machine epsilon.
FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)


def _mix64_int(v: int) -> int:
    """Scalar splitmix64 finalizer on Python ints (explicit 64-bit wrap)."""
    v &= _MASK64
    v = ((v ^ (v >> 30)) * _MIX_A) & _MASK64
    v = ((v ^ (v >> 27)) * _MIX_B) & _MASK64
    return v ^ (v >> 31)


def _mix64_array(v: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps mod 2**64, matching _mix64_int.
    v = (v ^ (v >> np.uint64(30))) * _MIX_A_U64
    v = (v ^ (v >> np.uint64(27))) * _MIX_B_U64
    return v ^ (v >> np.uint64(31))


@dataclass
class RngStream:
    """A deterministic 64-bit draw sequence owned by one consumer at a time.

    state advances by the golden-ratio increment per draw; outputs are the
    mixed counters, so n draws can be produced as one vectorized batch
    without changing the sequence.
    """

    state: int
    origin: tuple[int, int] = field(default=(0, 0))

    def draw_u64(self, n: int) -> np.ndarray:
        """Return the next n raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise InvalidParameterError("draw count must be non-negative")
        idx = np.arange(1, n + 1, dtype=np.uint64)
        out = _mix64_array(np.uint64(self.state) + _GOLDEN_U64 * idx)
        self.state = (self.state + _GOLDEN * n) & _MASK64
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles strictly inside (0, 1): (high 53 bits + 1/2) * 2**-53."""
        hi = (self.draw_u64(n) >> np.uint64(11)).astype(np.float64)
        return (hi + 0.5) * (2.0 ** -53)

    def normals(self, n: int) -> np.ndarray:
        """n standard normal draws via Box-Muller on uniform pairs."""
        m = (n + 1) // 2
        u1 = self.uniforms(m)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([r * np.cos(2.0 * np.pi * u2),
                              r * np.sin(2.0 * np.pi * u2)])
        return out[:n]

    def gammas(self, shape, n: int) -> np.ndarray:
        """n Gamma(shape, scale=1) draws; any shape > 0, scalar or per-draw.

        Marsaglia-Tsang squeeze for shape >= 1; shapes below 1 run the
        squeeze at shape + 1 and are boosted down by u**(1/shape) in one
        batch afterwards, so the draw order stays deterministic.
        """
        shape_arr = np.broadcast_to(np.asarray(shape, dtype=float), (n,))
        if np.any(shape_arr <= 0.0):
            raise InvalidParameterError("gamma shape must be positive")
        boost = shape_arr < 1.0
        eff = np.where(boost, shape_arr + 1.0, shape_arr)
        d = eff - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        out = np.empty(n, dtype=float)
        pending = np.arange(n)
        for _ in range(1000):
            m = pending.size
            if m == 0:
                break
            dp, cp = d[pending], c[pending]
            x = self.normals(m)
            v = (1.0 + cp * x) ** 3
            u = self.uniforms(m)
            ok = v > 0.0
            with np.errstate(invalid="ignore", divide="ignore"):
                accept = ok & (
                    np.log(u) < 0.5 * x * x + dp * (1.0 - v + np.log(np.where(ok, v, 1.0)))
                )
            out[pending[accept]] = dp[accept] * v[accept]
            pending = pending[~accept]
        if pending.size:  # not reachable in practice; acceptance rate > 95%
            out[pending] = d[pending]
        if np.any(boost):
            u = self.uniforms(int(np.sum(boost)))
            out[boost] *= u ** (1.0 / shape_arr[boost])
            # The boost can underflow for very small shapes; keep draws positive.
            out[boost] = np.maximum(out[boost], np.finfo(float).tiny)
        return out


def make_rng_stream(base_seed: int, stream_index: int) -> RngStream:
    """Derive an independent stream from (base_seed, stream_index).

    The returned stream's initial state is the (stream_index + 1)-th
    splitmix64 output of the sequence seeded at base_seed (see the module
    docstring for the exact constants). Distinct indices map to distinct
    states because the finalizer is a bijection of distinct counters.
    """
    if stream_index < 0:
        raise InvalidParameterError("stream_index must be non-negative")
    state = base_seed & _MASK64
    out = 0
    for _ in range(stream_index + 1):
        state = (state + _GOLDEN) & _MASK64
        out = _mix64_int(state)
    return RngStream(state=out, origin=(base_seed & _MASK64, stream_index))


def sample_abs_t(stream: RngStream, df, size: int | None = None):
    """Draw |T| with T Student-t at df degrees of freedom (fractional ok).

    Generated as |N(0,1)| / sqrt(chi2(df)/df) with the chi-square built
    from a gamma draw, so any df > 0 is valid. df may be a scalar or an
    array giving one df per draw. Returns a scalar when size is None and
    df is scalar, else an array of length size (or len(df)).
    """
    df_arr = np.asarray(df, dtype=float)
    if np.any(~np.isfinite(df_arr)) or np.any(df_arr <= 0.0):
        raise InvalidParameterError("df must be a positive finite real")
    if df_arr.ndim > 0:
        n = df_arr.size if size is None else int(size)
        if n != df_arr.size:
            raise InvalidParameterError("size must match the length of df")
    else:
        n = 1 if size is None else int(size)
    z = stream.normals(n)
    chi2 = 2.0 * stream.gammas(df_arr / 2.0 if df_arr.ndim else float(df_arr) / 2.0, n)
    out = np.abs(z) / np.sqrt(chi2 / df_arr)
    out = np.maximum(out, np.finfo(float).tiny)
    return float(out[0]) if (size is None and df_arr.ndim == 0) else out


def cdf_abs_t(df: float, v) -> np.ndarray | float:
    """P(|T| <= v) for Student-t T, via the regularized incomplete beta."""
    if not (df > 0.0) or not math.isfinite(df):
        raise InvalidParameterError("df must be a positive finite real")
    v_arr = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        x = df / (df + v_arr * v_arr)
    out = np.where(v_arr > 0.0, 1.0 - betainc(df / 2.0, 0.5, x), 0.0)
    return float(out) if np.isscalar(v) or out.ndim == 0 else out


def pdf_abs_t(df: float, v) -> np.ndarray | float:
    """Density of |T| at v >= 0: twice the Student-t density."""
    from scipy.special import gammaln

    v_arr = np.asarray(v, dtype=float)
    logc = gammaln((df + 1.0) / 2.0) - gammaln(df / 2.0) - 0.5 * math.log(df * math.pi)
    out = np.where(
        v_arr >= 0.0,
        2.0 * np.exp(logc - (df + 1.0) / 2.0 * np.log1p(v_arr * v_arr / df)),
        0.0,
    )
    return float(out) if np.isscalar(v) or out.ndim == 0 else out


def quantile_abs_t(df: float, p: float) -> float:
    """Return q with P(|T| <= q) = p, i.e. the t quantile at (1+p)/2.

    Computed by bisection on the incomplete-beta CDF; the bracket is grown
    by doubling, then bisected until the interval is below 1e-10 or at
    float resolution for very large quantiles.
    """
    if not (df > 0.0) or not math.isfinite(df):
        raise InvalidParameterError("df must be a positive finite real")
    if not (0.0 <= p < 1.0):
        raise InvalidParameterError("p must lie in [0, 1)")
    if p == 0.0:
        return 0.0

    def cdf(q: float) -> float:
        return 1.0 - float(betainc(df / 2.0, 0.5, df / (df + q * q)))

    lo, hi = 0.0, 1.0
    for _ in range(2100):
        if cdf(hi) >= p:
            break
        lo = hi
        hi *= 2.0
    for _ in range(500):
        if hi - lo <= 1e-10 or (hi - lo) <= 4.0 * np.finfo(float).eps * max(lo, 1.0):
            break
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def empirical_quantile(values, p: float) -> float:
    """Type-7 linear-interpolation quantile (index h = (n-1)p + 1, 1-based)."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise EmptyDataError("empirical_quantile needs a non-empty sequence")
    if not (0.0 <= p <= 1.0):
        raise InvalidParameterError("p must lie in [0, 1]")
    return float(np.quantile(arr, p, method="linear"))


@dataclass
class ConeConstraint:
    """Open half-space intersection {theta : row . theta > 0 for each row}.

    Feasibility at iterates is checked against a small positive slack so
    the optimizer never sits exactly on the boundary where log terms blow up.
    """

    rows: np.ndarray
    slack: float = 1e-8

    def __post_init__(self) -> None:
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.slack <= 0.0:
            raise InvalidParameterError("cone slack must be positive")

    def margins(self, theta: np.ndarray) -> np.ndarray:
        return self.rows @ np.asarray(theta, dtype=float)

    def feasible(self, theta: np.ndarray) -> bool:
        if self.rows.size == 0:
            return True
        return bool(np.min(self.margins(theta)) >= self.slack)


@dataclass
class OptimResult:
    argmax: np.ndarray
    hessian_at_opt: np.ndarray
    objective: float
    iterations: int
    converged: bool


def maximize_concave(
    fgh,
    init,
    cone: ConeConstraint | None = None,
    grad_tol: float = 1e-9,
    rel_obj_tol: float = 1e-12,
    max_iter: int = 200,
) -> OptimResult:
    """Damped Newton ascent for a concave objective with optional cone.

    Parameters
    ----------
    fgh : callable
        theta -> (objective, gradient, hessian). The hessian should be
        negative definite on the feasible region; when a trial hessian is
        not, the step falls back to the normalized gradient.
    init : array-like
        Starting point; must satisfy the cone (with slack) if one is given.
    cone : ConeConstraint, optional
        Trial steps violating the slack are rejected by halving.

    Convergence is declared when the gradient sup-norm falls to grad_tol
    or the relative objective change falls to rel_obj_tol. A run that
    exhausts max_iter returns converged=False rather than raising.
    """
    theta = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    if cone is not None and not cone.feasible(theta):
        raise InfeasibleInitError("starting point violates the cone constraint")

    f, g, hess = fgh(theta)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    hess = np.atleast_2d(np.asarray(hess, dtype=float))
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        if np.max(np.abs(g)) <= grad_tol:
            converged = True
            break
        direction = _ascent_direction(g, hess)
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + step * direction
            if cone is None or cone.feasible(cand):
                fc, gc, hc = fgh(cand)
                if math.isfinite(fc) and fc >= f:
                    rel = abs(fc - f) / max(1.0, abs(f))
                    theta = cand
                    f = fc
                    g = np.atleast_1d(np.asarray(gc, dtype=float))
                    hess = np.atleast_2d(np.asarray(hc, dtype=float))
                    accepted = True
                    if rel <= rel_obj_tol:
                        converged = True
                    break
            step *= 0.5
        if not accepted:
            converged = bool(np.max(np.abs(g)) <= grad_tol)
            break
        if converged:
            break
    if not converged:
        converged = bool(np.max(np.abs(g)) <= grad_tol)
    return OptimResult(argmax=theta, hessian_at_opt=hess, objective=float(f),
                       iterations=iterations, converged=converged)


def _ascent_direction(g: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Newton direction solve(-H, g); normalized gradient if -H is not SPD."""
    try:
        chol = np.linalg.cholesky(-hess)
        y = np.linalg.solve(chol, g)
        return np.linalg.solve(chol.T, y)
    except np.linalg.LinAlgError:
        norm = float(np.linalg.norm(g))
        return g / max(1.0, norm)


def finite_diff_grad(f, theta, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    The default per-coordinate step is FD_STEP * max(|theta_j|, 1), the
    usual optimum for central differences.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = np.empty_like(theta)
    for j in range(theta.size):
        hj = h if h is not None else FD_STEP * max(abs(theta[j]), 1.0)
        up = theta.copy()
        dn = theta.copy()
        up[j] += hj
        dn[j] -= hj
        out[j] = (f(up) - f(dn)) / (2.0 * hj)
    return out
