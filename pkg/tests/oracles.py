"""Independent brute-force oracles used to validate the fast paths."""

import numpy as np
from scipy.optimize import minimize

from nimslam.geometry import so3_exp


def brute_force_similarity_rmse(src, dst, n_starts=8, seed=0):
    """Least-squares similarity alignment by direct numerical optimization.

    Parameterizes (axis-angle, translation, log-scale) and minimizes the
    mean squared residual with multiple restarts; independent of the
    closed-form solver it is used to check.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def residual_rmse(params):
        w = params[:3]
        t = params[3:6]
        s = np.exp(params[6])
        rot = so3_exp(w)
        aligned = s * src @ rot.T + t
        return float(np.sqrt(np.mean(np.sum((aligned - dst) ** 2, axis=1))))

    def objective(params):
        return residual_rmse(params) ** 2

    best = np.inf
    # deterministic starts: identity plus random rotations/scales
    starts = [np.zeros(7)]
    mu_shift = dst.mean(axis=0) - src.mean(axis=0)
    base = np.concatenate([np.zeros(3), mu_shift, [0.0]])
    starts.append(base)
    for _ in range(n_starts - 2):
        s0 = base + np.concatenate([
            rng.uniform(-1.5, 1.5, 3), rng.normal(0, 0.5, 3), rng.normal(0, 0.4, 1)
        ])
        starts.append(s0)
    for s0 in starts:
        res = minimize(objective, s0, method="Nelder-Mead",
                       options={"maxiter": 6000, "xatol": 1e-12, "fatol": 1e-16})
        res = minimize(objective, res.x, method="Powell",
                       options={"maxiter": 4000, "xtol": 1e-13, "ftol": 1e-15})
        best = min(best, residual_rmse(res.x))
    return best


def point_to_triangle_oracle(points, triangles):
    """Point-to-mesh distance via constrained optimization over barycentrics.

    Independent of the closed-form closest-point routine it validates: for
    each (point, triangle) pair, minimize |p - (a + u·ab + v·ac)| subject to
    u, v >= 0, u + v <= 1 with SLSQP, then take the min over triangles.
    """
    from scipy.optimize import minimize as _minimize

    out = np.empty(len(points))
    for i, p in enumerate(points):
        best = np.inf
        for tri in triangles:
            a, b, c = tri
            ab, ac = b - a, c - a

            def dist2(x):
                q = a + x[0] * ab + x[1] * ac
                return float(((p - q) ** 2).sum())

            res = _minimize(
                dist2, np.array([1 / 3, 1 / 3]), method="SLSQP",
                bounds=[(0, 1), (0, 1)],
                constraints=[{"type": "ineq", "fun": lambda x: 1 - x[0] - x[1]}],
                options={"maxiter": 200, "ftol": 1e-16},
            )
            best = min(best, np.sqrt(dist2(res.x)))
        out[i] = best
    return out


def exhaustive_nearest_distances(queries, targets):
    """O(N*M) nearest-neighbor distances, the check for the KD-tree path."""
    queries = np.asarray(queries)
    targets = np.asarray(targets)
    out = np.empty(len(queries))
    for i, q in enumerate(queries):
        out[i] = np.sqrt(((targets - q) ** 2).sum(axis=1).min())
    return out
