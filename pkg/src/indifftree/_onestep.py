"""Batched damped-Newton solvers for the two one-step problems.

Both problems are smooth strictly convex programs over a single node's
children, solved simultaneously for a batch of nodes (arrays shaped
(m, k) over m nodes with k children each, increments (m, k, d)):

* entropic tilt — minimize sum_i q_i (log(q_i / p_i) + cost_i) over
  strictly positive martingale kernels q; the optimizer is the
  exponential tilt q_i ∝ p_i exp(-cost_i + lam . ds_i) and the dual
  root-finding problem is solved by Newton on lam.

* exponential hedge — minimize (1/a) log sum_i q_i exp(a (cont_i -
  theta . ds_i)) over holdings theta, by Newton on theta.

All exponentials run through log-sum-exp with max shifts.  Singular
Newton systems fall back to pseudo-inverse steps, which keeps the
iterates in the row space of the increments, so rank-deficient nodes
return the minimal-norm multiplier / holdings.  Rows where a damped
step makes no progress (the tilted covariance can collapse to a lower
rank while the softmax saturates en route) switch to Levenberg
ridge steps, bending toward steepest descent until progress resumes;
both objectives are smooth and convex, so this always recovers.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import NewtonConvergenceError, NoArbitrageViolated
from .tolerances import NEWTON_MAX_ITER

_MAX_HALVINGS = 60


@dataclass
class BatchResult:
    q: np.ndarray          # (m, k) optimal kernels / final softmax weights
    multiplier: np.ndarray  # (m, d) lam or theta
    value: np.ndarray      # (m,) optimal objective value
    iterations: np.ndarray  # (m,)
    residual: np.ndarray   # (m,) final constraint / scaled-gradient norm
    degenerate: np.ndarray  # (m,) bool, increments rank deficient


def _softmax_rows(logits):
    mx = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - mx)
    z = w.sum(axis=1, keepdims=True)
    return w / z, (np.log(z[:, 0]) + mx[:, 0])


def _tilted_moments(q, ds):
    mean = np.einsum("mk,mkd->md", q, ds)
    cov = np.einsum("mk,mki,mkj->mij", q, ds, ds) - mean[:, :, None] * mean[:, None, :]
    return mean, cov


def _pinv_step(cov, grad, mu=None):
    """- pinv(cov + mu I) @ grad, batched; stays in the increment row space.

    ``mu`` is a per-row ridge (Levenberg damping); zero rows take the
    plain pseudo-inverse step.
    """
    d = cov.shape[-1]
    if mu is not None and np.any(mu > 0):
        cov = cov + mu[:, None, None] * np.eye(d)
    if d == 1:
        c = cov[:, 0, 0]
        out = np.zeros_like(grad)
        ok = c > 0
        out[ok, 0] = -grad[ok, 0] / c[ok]
        return out
    return -np.einsum("mij,mj->mi", np.linalg.pinv(cov, hermitian=True), grad)


def _is_degenerate(ds):
    """Rows whose increments do not span the full asset space."""
    m, k, d = ds.shape
    if d == 1:
        return np.all(ds[:, :, 0] == 0.0, axis=1)
    sv = np.linalg.svd(ds, compute_uv=False)
    scale = np.maximum(sv[:, 0], 1e-300)
    return sv[:, -1] <= 1e-12 * scale


def _feasible_martingale_kernel_exists(ds_row):
    """LP feasibility: strictly positive kernel with zero increment mean."""
    k, d = ds_row.shape
    scale = max(1.0, float(np.abs(ds_row).max()))
    c = np.zeros(k + 1)
    c[-1] = -1.0
    a_eq = np.zeros((d + 1, k + 1))
    a_eq[:d, :k] = (ds_row / scale).T
    a_eq[d, :k] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    a_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(k), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (k + 1), method="highs")
    return bool(res.success and res.x[-1] > 1e-11)


def _residual_scale(ds):
    return np.maximum(1.0, np.abs(ds).max(axis=(1, 2)))


def entropic_projection_batch(logp, ds, cost, *, newton_tol=1e-12,
                              max_iter=NEWTON_MAX_ITER, lam0=None) -> BatchResult:
    """Solve the entropic tilt problem for a batch of nodes.

    Parameters
    ----------
    logp : (m, k) log reference probabilities.
    ds : (m, k, d) price increments to the children.
    cost : (m, k) continuation costs added inside the relative entropy.
    newton_tol : absolute tolerance on the tilted increment mean
        (scaled by max(1, |ds|_inf) per row).
    lam0 : optional (m, d) warm start for the multiplier.

    Returns the optimal kernels, multipliers lam, and the value
    -log sum_i p_i exp(-cost_i + lam . ds_i).
    """
    logp = np.asarray(logp, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    ds = np.asarray(ds, dtype=np.float64)
    m, k, d = ds.shape
    a = logp - cost
    lam = np.zeros((m, d)) if lam0 is None else np.array(lam0, dtype=np.float64)
    tol_row = newton_tol * _residual_scale(ds)

    logits = a + np.einsum("mkd,md->mk", ds, lam)
    q, lse = _softmax_rows(logits)
    mean, cov = _tilted_moments(q, ds)
    resid = np.abs(mean).max(axis=1)
    iters = np.zeros(m, dtype=np.int64)
    stalled = np.zeros(m, dtype=bool)
    scale2 = _residual_scale(ds) ** 2
    mu = np.zeros(m)  # Levenberg ridge, in curvature units

    for _ in range(max_iter):
        active = (resid > tol_row) & ~stalled
        if not active.any():
            break
        idx = np.flatnonzero(active)
        step = _pinv_step(cov[idx], mean[idx], mu[idx])
        scale = np.ones(idx.size)
        pend = np.ones(idx.size, dtype=bool)
        new_lam = lam[idx].copy()
        new_resid = resid[idx].copy()
        new_q = q[idx].copy()
        new_lse = lse[idx].copy()
        for _h in range(_MAX_HALVINGS):
            if not pend.any():
                break
            trial = lam[idx[pend]] + scale[pend, None] * step[pend]
            t_logits = a[idx[pend]] + np.einsum("mkd,md->mk", ds[idx[pend]], trial)
            t_q, t_lse = _softmax_rows(t_logits)
            t_mean = np.einsum("mk,mkd->md", t_q, ds[idx[pend]])
            t_resid = np.abs(t_mean).max(axis=1)
            # descend the dual objective; residual breaks ties inside the
            # float-noise envelope of lse, so iterates can polish the
            # root without ever jumping to a saturated region
            slack = 32 * np.finfo(np.float64).eps * np.maximum(
                1.0, np.abs(lse[idx[pend]]))
            better = (t_lse < lse[idx[pend]]) | (
                (t_lse <= lse[idx[pend]] + slack) & (t_resid < resid[idx[pend]]))
            sub = np.flatnonzero(pend)
            acc = sub[better]
            new_lam[acc] = trial[better]
            new_resid[acc] = t_resid[better]
            new_q[acc] = t_q[better]
            new_lse[acc] = t_lse[better]
            pend[acc] = False
            scale[pend] *= 0.5
        ok = ~pend
        mu[idx[ok]] *= 0.25
        # rows no damping scale helped: raise the ridge and try again,
        # giving up only deep in the steepest-descent regime
        hard = idx[pend]
        mu[hard] = np.where(mu[hard] == 0.0, 1e-8 * scale2[hard], mu[hard] * 10.0)
        stalled[hard[mu[hard] > 1e8 * scale2[hard]]] = True
        lam[idx] = new_lam
        q[idx] = new_q
        lse[idx] = new_lse
        mean[idx], cov[idx] = _tilted_moments(q[idx], ds[idx])
        resid[idx] = np.abs(mean[idx]).max(axis=1)
        iters[idx] += 1

    bad = resid > np.maximum(tol_row, 1e-10 * _residual_scale(ds))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        if not _feasible_martingale_kernel_exists(ds[row]):
            raise NoArbitrageViolated(
                "no strictly positive martingale kernel exists for a node "
                f"(batch row {row})")
        raise NewtonConvergenceError(
            f"entropic projection stalled at residual {resid[row]:.3e} "
            f"(batch row {row})")
    return BatchResult(q, lam, -lse, iters, resid, _is_degenerate(ds))


def exp_min_batch(logq, ds, cont, alpha, *, newton_tol=1e-12,
                  max_iter=NEWTON_MAX_ITER, theta0=None) -> BatchResult:
    """Minimize (1/a) log sum_i q_i exp(a (cont_i - theta . ds_i)) per row.

    Stationarity is measured by the softmax-tilted increment mean (the
    gradient divided by alpha), scaled like the entropic solver, so the
    achieved hedge accuracy is uniform in alpha.  Damping accepts a step
    when the objective decreases, with residual decrease as a fallback
    acceptance near the floor.
    """
    logq = np.asarray(logq, dtype=np.float64)
    cont = np.asarray(cont, dtype=np.float64)
    ds = np.asarray(ds, dtype=np.float64)
    alpha = float(alpha)
    m, k, d = ds.shape
    b = logq + alpha * cont
    theta = np.zeros((m, d)) if theta0 is None else np.array(theta0, dtype=np.float64)
    tol_row = newton_tol * _residual_scale(ds)

    def evaluate(th, rows=slice(None)):
        logits = b[rows] - alpha * np.einsum("mkd,md->mk", ds[rows], th)
        w, lse = _softmax_rows(logits)
        mean = np.einsum("mk,mkd->md", w, ds[rows])
        return w, lse, mean, np.abs(mean).max(axis=1)

    q, lse, mean, resid = evaluate(theta)
    iters = np.zeros(m, dtype=np.int64)
    stalled = np.zeros(m, dtype=bool)
    scale2 = _residual_scale(ds) ** 2
    mu = np.zeros(m)

    for _ in range(max_iter):
        active = (resid > tol_row) & ~stalled
        if not active.any():
            break
        idx = np.flatnonzero(active)
        _, cov = _tilted_moments(q[idx], ds[idx])
        step = _pinv_step(cov, -mean[idx], mu[idx]) / alpha
        scale = np.ones(idx.size)
        pend = np.ones(idx.size, dtype=bool)
        new_theta = theta[idx].copy()
        new_state = (q[idx].copy(), lse[idx].copy(), mean[idx].copy(), resid[idx].copy())
        for _h in range(_MAX_HALVINGS):
            if not pend.any():
                break
            rows = idx[pend]
            trial = theta[rows] + scale[pend, None] * step[pend]
            t_q, t_lse, t_mean, t_resid = evaluate(trial, rows)
            slack = 32 * np.finfo(np.float64).eps * np.maximum(1.0, np.abs(lse[rows]))
            better = (t_lse < lse[rows]) | (
                (t_lse <= lse[rows] + slack) & (t_resid < resid[rows]))
            sub = np.flatnonzero(pend)
            acc = sub[better]
            new_theta[acc] = trial[better]
            new_state[0][acc] = t_q[better]
            new_state[1][acc] = t_lse[better]
            new_state[2][acc] = t_mean[better]
            new_state[3][acc] = t_resid[better]
            pend[acc] = False
            scale[pend] *= 0.5
        mu[idx[~pend]] *= 0.25
        hard = idx[pend]
        mu[hard] = np.where(mu[hard] == 0.0, 1e-8 * scale2[hard], mu[hard] * 10.0)
        stalled[hard[mu[hard] > 1e8 * scale2[hard]]] = True
        theta[idx] = new_theta
        q[idx], lse[idx], mean[idx], resid[idx] = new_state
        iters[idx] += 1

    # the objective is flat to machine precision near the optimum once
    # softmax weights concentrate; accept any stalled row whose residual
    # is small relative to the curvature floor, otherwise give up loudly
    bad = resid > np.maximum(tol_row, 1e-8 * _residual_scale(ds))
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NewtonConvergenceError(
            f"exponential hedge Newton stalled at residual {resid[row]:.3e} "
            f"(batch row {row}, alpha={alpha})")
    return BatchResult(q, theta, lse / alpha, iters, resid, _is_degenerate(ds))


def gkw_batch(q, ds, v):
    """One-step orthogonal projection of child values on the increments.

    Returns (mean, psi, dl): the kernel mean of v, the least-squares
    hedge solving  E_q[ds ds^T] psi = E_q[(v - mean) ds]  (pseudo-inverse
    on rank-deficient increments, hence minimal-norm), and the residuals
    dl_i = v_i - mean - psi . ds_i with E_q[dl ds] = 0.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    ds = np.asarray(ds, dtype=np.float64)
    mean = np.einsum("mk,mk->m", q, v)
    centered = v - mean[:, None]
    rhs = np.einsum("mk,mk,mkd->md", q, centered, ds)
    m2 = np.einsum("mk,mki,mkj->mij", q, ds, ds)
    d = ds.shape[2]
    if d == 1:
        c = m2[:, 0, 0]
        psi = np.zeros((ds.shape[0], 1))
        ok = c > 0
        psi[ok, 0] = rhs[ok, 0] / c[ok]
    else:
        psi = np.einsum("mij,mj->mi", np.linalg.pinv(m2, hermitian=True), rhs)
    dl = centered - np.einsum("mkd,md->mk", ds, psi)
    return mean, psi, dl
