"""Standard symplectic structure on R^4, Hamiltonian and Reeb fields on level sets.

Sign convention (fixed once, enforced by tests): with coordinates
``(x1, y1, x2, y2)``,

    X_G = (-dG/dy1, dG/dx1, -dG/dy2, dG/dx2),

so that ``lambda_0(X_G) = <grad G, x> / 2`` and ``omega_0(X_G, .) = -dG``.
The Reeb field of ``lambda_0`` restricted to ``{G = 1}`` is then
``R = X_G / (<grad G, x> / 2)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DegeneratePointError, PreconditionError
from .geometry import Body, TrigPolynomial, radial_function, sphere_grid

# omega_0 = dx1^dy1 + dx2^dy2 as the matrix of (u, w) -> u^T OMEGA w
OMEGA = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
    ]
)

# lambda_0 = 1/2 sum (x_i dy_i - y_i dx_i): covector components LIOUVILLE @ x
LIOUVILLE = np.array(
    [
        [0.0, -0.5, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -0.5],
        [0.0, 0.0, 0.5, 0.0],
    ]
)

LEVEL_TOL = 1e-8


def liouville_form(x):
    """Covector(s) of lambda_0 at ``x``."""
    return np.asarray(x, dtype=float) @ LIOUVILLE.T


def liouville_vector(x):
    """Liouville field ``Y = x / 2``; its time-s flow is ``x -> exp(s/2) x``."""
    return 0.5 * np.asarray(x, dtype=float)


def exterior_derivative_matrix(linear_form: np.ndarray) -> np.ndarray:
    """Matrix of ``d lambda`` for a linear 1-form ``lambda_i = sum_j L_ij x_j``."""
    return linear_form.T - linear_form


def interior_product(vector, form=OMEGA):
    """Covector ``omega(Y, .)``."""
    return np.asarray(vector) @ form


def lambda0(x, v):
    return np.sum(liouville_form(x) * np.asarray(v, dtype=float), axis=-1)


def _symplectic_gradient(grads: np.ndarray) -> np.ndarray:
    g = np.atleast_2d(grads)
    return np.column_stack([-g[:, 1], g[:, 0], -g[:, 3], g[:, 2]])


def _jx(mat: np.ndarray) -> np.ndarray:
    """Apply the X_G permutation to the rows of a stack of 4x4 matrices."""
    out = np.empty_like(mat)
    out[:, 0] = -mat[:, 1]
    out[:, 1] = mat[:, 0]
    out[:, 2] = -mat[:, 3]
    out[:, 3] = mat[:, 2]
    return out


def _squeeze(x, arr):
    return arr[0] if np.ndim(x) == 1 else arr


def hamiltonian_field(body: Body, x):
    x = np.asarray(x, dtype=float)
    grads = np.atleast_2d(body.evaluate(x)[1])
    return _squeeze(x, _symplectic_gradient(grads))


def _on_level(body: Body, x):
    x = np.asarray(x, dtype=float)
    vals, grads, hess = body.evaluate(np.atleast_2d(x))
    if np.any(np.abs(vals - 1.0) > LEVEL_TOL):
        raise PreconditionError("point is not on the level set G = 1")
    half = 0.5 * np.sum(grads * np.atleast_2d(x), axis=1)
    scale = 1e-12 * np.linalg.norm(grads, axis=1) * np.linalg.norm(np.atleast_2d(x), axis=1)
    if np.any(half <= scale):
        raise DegeneratePointError("level set is not transverse to the Liouville field here")
    return vals, grads, hess, half


def reeb_field(body: Body, x):
    x = np.asarray(x, dtype=float)
    _, grads, _, half = _on_level(body, x)
    return _squeeze(x, _symplectic_gradient(grads) / half[:, None])


def reeb_jacobian(body: Body, x):
    """Exact Jacobian of ``X_G / s`` with ``s = <grad G, x>/2``."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    _, grads, hess, half = _on_level(body, x)
    xg = _symplectic_gradient(grads)
    dxg = _jx(hess)
    ds = 0.5 * (np.einsum("nij,nj->ni", hess, pts) + grads)
    jac = dxg / half[:, None, None] - xg[:, :, None] * ds[:, None, :] / (half**2)[:, None, None]
    return _squeeze(x, jac)


def project_to_level(body: Body, x):
    """Rescale point(s) onto ``{G = 1}``: exact for homogeneous bodies, one ray-Newton step otherwise."""
    x = np.array(x, dtype=float)
    pts = np.atleast_2d(x)
    vals, grads, _ = body.evaluate(pts)
    if body.degree > 0:
        pts = pts * (vals ** (-1.0 / body.degree))[:, None]
    else:
        slope = np.sum(grads * pts, axis=1)
        pts = pts * (1.0 - (vals - 1.0) / slope)[:, None]
    return _squeeze(x, pts)


# --------------------------------------------------------------------------
# graphs over a base hypersurface
# --------------------------------------------------------------------------


def graph_pushforward(base: Body, f: TrigPolynomial, m):
    """``psi_f(m) = exp(f(m)/2) m``: the Liouville flow for time ``f(m)``."""
    m = np.asarray(m, dtype=float)
    vals = np.atleast_1d(base.evaluate(np.atleast_2d(m))[0])
    if np.any(np.abs(vals - 1.0) > LEVEL_TOL):
        raise PreconditionError("point is not on the base hypersurface")
    return np.exp(0.5 * f(m))[..., None] * m if m.ndim > 1 else np.exp(0.5 * f(m)) * m


def pushforward_differential(f: TrigPolynomial, m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``d psi_f(m) v = exp(f/2) (v + (df(v)/2) m)`` for stacks of points and vectors."""
    e = np.exp(0.5 * f(m))[:, None]
    df_v = np.sum(f.gradient(m) * v, axis=1)[:, None]
    return e * (v + 0.5 * df_v * m)


def _fd_differential(f: TrigPolynomial, m, v, step):
    plus = np.exp(0.5 * f(m + step * v))[:, None] * (m + step * v)
    minus = np.exp(0.5 * f(m - step * v))[:, None] * (m - step * v)
    return (plus - minus) / (2.0 * step)


def random_boundary_points(body: Body, n: int, rng: np.random.Generator) -> np.ndarray:
    dirs = rng.normal(size=(n, 4))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return radial_function(body, dirs)[:, None] * dirs


def random_tangent_vectors(body: Body, pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    grads = body.evaluate(pts)[1]
    nrm = grads / np.linalg.norm(grads, axis=1, keepdims=True)
    v = np.empty(pts.shape)
    todo = np.arange(len(pts))
    while len(todo):
        w = rng.normal(size=(len(todo), pts.shape[1]))
        w -= np.sum(w * nrm[todo], axis=1, keepdims=True) * nrm[todo]
        size = np.linalg.norm(w, axis=1)
        # a draw (nearly) along the normal has no usable tangent part; redraw it
        ok = size > 1e-8
        v[todo[ok]] = w[ok] / size[ok, None]
        todo = todo[~ok]
    return v


def verify_graph_form_relation(
    base: Body, f: TrigPolynomial, samples: int = 1000, fd_step: float | None = None, seed: int = 0
) -> float:
    """Max relative residual of ``psi_f^*(lambda_0|_S) = exp(f) lambda_0|_Sigma``.

    The differential of ``psi_f`` is exact unless ``fd_step`` is given, in
    which case a central difference with that step is used instead.  Residuals
    are relative to ``exp(f) |m| |v| / 2``, the size scale of the right side.
    """
    rng = np.random.default_rng(seed)
    m = random_boundary_points(base, samples, rng)
    v = random_tangent_vectors(base, m, rng)
    image = graph_pushforward(base, f, m)
    dpsi = _fd_differential(f, m, v, fd_step) if fd_step else pushforward_differential(f, m, v)
    lhs = lambda0(image, dpsi)
    ef = np.exp(f(m))
    rhs = ef * lambda0(m, v)
    scale = 0.5 * ef * np.linalg.norm(m, axis=1) * np.linalg.norm(v, axis=1)
    return float(np.max(np.abs(lhs - rhs) / scale))


def contract_residuals(body: Body, samples: int = 10000, seed: int = 0) -> dict:
    """Max |lambda_0(R) - 1|, max |dG(R)| and min transversality on random boundary points."""
    rng = np.random.default_rng(seed)
    pts = random_boundary_points(body, samples, rng)
    pts = project_to_level(body, pts)
    r = reeb_field(body, pts)
    grads = body.evaluate(pts)[1]
    return {
        "alpha_of_R": float(np.max(np.abs(lambda0(pts, r) - 1.0))),
        "dG_of_R": float(np.max(np.abs(np.sum(grads * r, axis=1)))),
        "min_transversality": float(np.min(np.sum(grads * pts, axis=1))),
    }


def grid_points(body: Body, n: int) -> np.ndarray:
    dirs = sphere_grid(n)
    return radial_function(body, dirs)[:, None] * dirs
