"""Estimating function g_n, its derivative matrix, and the solvers.

g_n(beta) = sum_i X_i' A_i^{1/2} R_i^{-1} A_i^{-1/2} (y_i - mu_i(beta)),

with A_i = diag(mu'(x_ij' beta)) and R_i the working correlation supplied
by a provider.  With the independence provider this collapses to
sum_i X_i' (y_i - mu_i(beta)).  For the identity link the equation is
affine in beta and admits the closed form implemented by `solve_linear`;
`fit_two_step` implements the sequential pseudo-likelihood recipe that
re-estimates the correlation from working-independence residuals as data
accrue.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import corr as corrmod
from .errors import (
    ContractError,
    NumericalError,
    RankDeficiencyError,
    SolverFailureError,
)
from .model import ClusterSeries, LinkSpec, get_link, moment_arrays


@dataclass
class EstimatingContext:
    """Data + link + working correlation, with cached per-step matrices.

    ``corr=None`` means working independence.  The realized correlation
    sequence and its inverses are cached on first use; all shipped
    providers are beta-free so the cache is valid for every beta.
    """

    data: ClusterSeries
    link: LinkSpec
    corr: Optional[corrmod.CorrProvider] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def corr_matrices(self) -> np.ndarray:
        if "seq" not in self._cache:
            if self.corr is None:
                n, m = self.data.n, self.data.m
                self._cache["seq"] = np.broadcast_to(np.eye(m), (n, m, m))
            else:
                self._cache["seq"] = self.corr.realize(self.data, self.link)
        return self._cache["seq"]

    def corr_inverses(self) -> np.ndarray:
        if "inv" not in self._cache:
            seq = self.corr_matrices()
            if self.corr is None:
                self._cache["inv"] = seq
            else:
                self._cache["inv"] = np.linalg.inv(seq)
        return self._cache["inv"]

    def with_data(self, data: ClusterSeries) -> "EstimatingContext":
        return EstimatingContext(data=data, link=self.link, corr=self.corr)


def _check_beta(ctx, beta):
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (ctx.data.p,):
        raise ContractError(f"beta has shape {beta.shape}, expected ({ctx.data.p},)")
    if not np.all(np.isfinite(beta)):
        raise ContractError("beta must be finite")
    return beta


def eval_g(ctx: EstimatingContext, beta) -> np.ndarray:
    """Evaluate the estimating function at beta."""
    beta = _check_beta(ctx, beta)
    Xs, ys = ctx.data.Xs, ctx.data.ys
    _, a, eps = moment_arrays(Xs, ys, beta, ctx.link)
    rinv = ctx.corr_inverses()
    w = np.einsum("nab,nb->na", rinv, eps)
    xa = Xs * np.sqrt(a)[:, :, None]
    return np.einsum("nmp,nm->p", xa, w)


def eval_jacobian(ctx: EstimatingContext, beta, mode: str = "analytic") -> np.ndarray:
    """Derivative matrix D_n(beta) = -d g_n / d beta'.

    The analytic mode differentiates through the mean and variance terms
    while holding the (beta-free) correlation matrices fixed; for the
    identity link it reduces to sum_i X_i' R_i^{-1} X_i exactly.  The
    finite-difference mode central-differences `eval_g` and also covers
    hypothetical beta-dependent providers.
    """
    beta = _check_beta(ctx, beta)
    if mode == "finite_diff":
        p = beta.size
        out = np.empty((p, p))
        for l in range(p):
            h = 1e-6 * max(1.0, abs(beta[l]))
            bp = beta.copy()
            bm = beta.copy()
            bp[l] += h
            bm[l] -= h
            out[:, l] = -(eval_g(ctx, bp) - eval_g(ctx, bm)) / (2.0 * h)
        return out
    if mode != "analytic":
        raise ContractError(f"unknown jacobian mode {mode!r}")

    Xs, ys = ctx.data.Xs, ctx.data.ys
    mu, a, eps = moment_arrays(Xs, ys, beta, ctx.link)
    rinv = ctx.corr_inverses()
    sqrt_a = np.sqrt(a)
    xa = Xs * sqrt_a[:, :, None]
    rinv_xa = np.einsum("nab,nbk->nak", rinv, xa)
    d_mat = np.einsum("nmp,nmk->pk", xa, rinv_xa)
    if ctx.link.kind == "identity":
        return d_mat

    # curvature terms: with D_l = diag(d * X[:, l]), d = mu''/(2 mu'), the
    # correction to column l is X' (D_l B - B D_l) r where B = A^{1/2} R^{-1} A^{-1/2}
    r = ys - mu
    d = ctx.link.d2(Xs @ beta) / (2.0 * a)
    w = sqrt_a * np.einsum("nab,nb->na", rinv, eps)  # B r
    corr1 = np.einsum("nmp,nm,nmk->pk", Xs, d * w, Xs)
    m2 = (d * r)[:, :, None] * Xs
    bm2 = sqrt_a[:, :, None] * np.einsum(
        "nab,nbk->nak", rinv, m2 / sqrt_a[:, :, None]
    )
    corr2 = np.einsum("nmp,nmk->pk", Xs, bm2)
    return d_mat - corr1 + corr2


@dataclass
class SolveReport:
    """Outcome of a Newton solve; `trace` lists (beta, ||g||_inf) per iterate."""

    beta_hat: np.ndarray
    iterations: int
    final_residual_norm: float
    converged: bool
    trace: list


def _rank_checked_solve(mat, rhs, what):
    w = np.linalg.eigvalsh(mat)
    lam_min, lam_max = float(w[0]), float(w[-1])
    if lam_min <= max(0.0, lam_max * mat.shape[0] * np.finfo(np.float64).eps):
        raise RankDeficiencyError(
            f"{what} is rank deficient (lambda_min={lam_min!r})", lambda_min=lam_min
        )
    return np.linalg.solve(mat, rhs)


def solve_linear(ctx: EstimatingContext) -> np.ndarray:
    """Closed-form root for the identity link:
    (sum X' R^{-1} X)^{-1} sum X' R^{-1} y."""
    if ctx.link.kind != "identity":
        raise ContractError(
            f"solve_linear requires the identity link, got {ctx.link.kind!r}"
        )
    Xs, ys = ctx.data.Xs, ctx.data.ys
    rinv = ctx.corr_inverses()
    rinv_x = np.einsum("nab,nbk->nak", rinv, Xs)
    k_mat = np.einsum("nmp,nmk->pk", Xs, rinv_x)
    rhs = np.einsum("nak,na->k", rinv_x, ys)
    return _rank_checked_solve(k_mat, rhs, "normal matrix")


def solve_newton(
    ctx: EstimatingContext,
    beta_init=None,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> SolveReport:
    """Damped Newton iteration for g_n(beta) = 0.

    Steps are halved (up to 20 times) whenever the residual norm fails to
    decrease; a singular derivative matrix raises SolverFailureError with
    the trace collected so far.  Exceeding ``max_iter`` returns a
    non-converged report rather than raising.
    """
    if beta_init is None:
        beta = working_independence_estimate(ctx.data, ctx.link)
    else:
        beta = _check_beta(ctx, np.asarray(beta_init, dtype=np.float64)).copy()
    g = eval_g(ctx, beta)
    norm = float(np.max(np.abs(g)))
    trace = [(beta.copy(), norm)]
    iterations = 0
    for _ in range(max_iter):
        if norm <= tol:
            break
        d_mat = eval_jacobian(ctx, beta)
        try:
            step = np.linalg.solve(d_mat, g)
        except np.linalg.LinAlgError:
            raise SolverFailureError(
                "singular derivative matrix in Newton iteration", trace=trace
            ) from None
        if not np.all(np.isfinite(step)):
            raise SolverFailureError(
                "non-finite Newton step (ill-conditioned derivative)", trace=trace
            )
        t = 1.0
        accepted = False
        for _halving in range(21):
            cand = beta + t * step
            try:
                g_new = eval_g(ctx, cand)
            except NumericalError:
                t *= 0.5
                continue
            norm_new = float(np.max(np.abs(g_new)))
            if norm_new < norm or norm_new <= tol:
                beta, g, norm = cand, g_new, norm_new
                accepted = True
                break
            t *= 0.5
        iterations += 1
        trace.append((beta.copy(), norm))
        if not accepted:
            return SolveReport(
                beta_hat=beta,
                iterations=iterations,
                final_residual_norm=norm,
                converged=False,
                trace=trace,
            )
    converged = norm <= tol
    if converged:
        # a root with a singular derivative is an identifiability failure
        # (zero-information designs reach here with g identically 0)
        cond = np.linalg.cond(eval_jacobian(ctx, beta))
        if not np.isfinite(cond) or cond > 1e14:
            raise SolverFailureError(
                "derivative matrix is singular at the solution", trace=trace
            )
    return SolveReport(
        beta_hat=beta,
        iterations=iterations,
        final_residual_norm=norm,
        converged=converged,
        trace=trace,
    )


def working_independence_estimate(data: ClusterSeries, link: LinkSpec) -> np.ndarray:
    """Initial estimate from the independence working structure."""
    ctx = EstimatingContext(data=data, link=link, corr=None)
    if link.kind == "identity":
        return solve_linear(ctx)
    report = solve_newton(ctx, beta_init=np.zeros(data.p))
    if not report.converged:
        raise SolverFailureError(
            "working-independence initialisation did not converge",
            trace=report.trace,
        )
    return report.beta_hat


@dataclass
class TwoStepResult:
    beta: np.ndarray
    corr_trace: list      # matrices formed after observing 1..n-1 steps
    corr_seq: np.ndarray  # (n, m, m) matrices actually used per step


def fit_two_step(
    data: ClusterSeries,
    link: Optional[LinkSpec] = None,
    warmup_steps: int = 2,
    floor: float = 1e-6,
) -> TwoStepResult:
    """Sequential pseudo-likelihood estimator (identity link).

    For each step i the correlation plug-in is the average of residual
    outer products from steps 1..i-1, with residuals taken at the
    working-independence estimate computed on those same steps; the first
    two steps (and any step where the average is necessarily singular,
    i.e. fewer residuals than the cluster size) use the identity.  The
    final estimate solves the weighted closed form with those per-step
    matrices.

    Running sums make the whole procedure a single O(n) pass: with
    b = beta_ind(i-1), sum_l (y_l - X_l b)(y_l - X_l b)' expands into
    moment tensors accumulated once per step.
    """
    if link is None:
        link = get_link("identity")
    if link.kind != "identity":
        raise ContractError("fit_two_step requires the identity link")
    n, m, p = data.n, data.m, data.p
    if n < 3:
        raise ContractError(f"two-step procedure needs n >= 3, got {n}")

    Xs, ys = data.Xs, data.ys
    sxx = np.zeros((p, p))
    sxy = np.zeros(p)
    syy = np.zeros((m, m))
    t1 = np.zeros((m, m, p))
    t2 = np.zeros((m, p, m, p))
    k_mat = np.zeros((p, p))
    rhs = np.zeros(p)
    seq = np.empty((n, m, m))
    eye = np.eye(m)
    guard = max(int(warmup_steps), m)

    for i in range(n):
        count = i
        if count < guard:
            r_mat = eye
        else:
            try:
                b = np.linalg.solve(sxx, sxy)
            except np.linalg.LinAlgError:
                b = None
            if b is None or not np.all(np.isfinite(b)):
                r_mat = eye
            else:
                c1 = np.einsum("ack,k->ac", t1, b)
                r_mat = (syy - c1 - c1.T + np.einsum("akcj,k,j->ac", t2, b, b)) / count
                r_mat = corrmod.regularized_empirical(r_mat, count, floor)
        seq[i] = r_mat

        x_i, y_i = Xs[i], ys[i]
        rinv_x = np.linalg.solve(r_mat, x_i)
        k_mat += x_i.T @ rinv_x
        rhs += rinv_x.T @ y_i

        sxx += x_i.T @ x_i
        sxy += x_i.T @ y_i
        syy += np.outer(y_i, y_i)
        t1 += np.einsum("a,ck->ack", y_i, x_i)
        t2 += np.einsum("ak,cj->akcj", x_i, x_i)

    beta = _rank_checked_solve(k_mat, rhs, "two-step normal matrix")
    return TwoStepResult(beta=beta, corr_trace=[seq[i] for i in range(1, n)], corr_seq=seq)


@dataclass
class FitResult:
    """Estimate plus inference bundle produced by `fit`."""

    beta_hat: np.ndarray
    method: str
    link_kind: str
    corr_kind: str
    se: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    h_mat: Optional[np.ndarray] = None
    m_mat: Optional[np.ndarray] = None
    cis: Optional[np.ndarray] = None  # (p, 2) per-component intervals
    level: float = 0.95
    converged: bool = True
    iterations: int = 0
    final_residual_norm: float = 0.0
    trace: Optional[list] = None
    corr_trace: Optional[list] = None
    diagnostics: Optional[dict] = None


def fit(
    ctx: EstimatingContext,
    method: str = "newton",
    level: float = 0.95,
    beta_init=None,
    tol: float = 1e-8,
    max_iter: int = 50,
    with_inference: bool = True,
) -> FitResult:
    """Dispatch to a solver and attach the sandwich-based inference bundle.

    ``method`` is one of {"newton", "linear", "two_step"}; the latter two
    require the identity link.  An unresolved empirical provider gets its
    plug-in beta from the working-independence estimate.  ``two_step``
    builds its own correlation sequence and ignores ``ctx.corr``.
    """
    from . import inference  # local import avoids a cycle at module load

    if not (0.0 < level < 1.0):
        raise ContractError(f"level must be in (0, 1), got {level}")
    corr_kind = ctx.corr.kind if ctx.corr is not None else "independence"
    corr_trace = None
    trace = None
    converged, iterations, res_norm = True, 0, 0.0

    if method == "two_step":
        ts = fit_two_step(ctx.data, ctx.link)
        beta = ts.beta
        corr_trace = ts.corr_trace
        corr_kind = "two_step_empirical"
        infer_ctx = EstimatingContext(
            data=ctx.data, link=ctx.link, corr=corrmod.SequenceCorr(ts.corr_seq)
        )
    else:
        infer_ctx = ctx
        if isinstance(ctx.corr, corrmod.EmpiricalRunningCorr) and ctx.corr.plugin_beta is None:
            plugin = working_independence_estimate(ctx.data, ctx.link)
            infer_ctx = EstimatingContext(
                data=ctx.data, link=ctx.link, corr=ctx.corr.with_plugin(plugin)
            )
        if method == "linear":
            beta = solve_linear(infer_ctx)
        elif method == "newton":
            report = solve_newton(infer_ctx, beta_init=beta_init, tol=tol, max_iter=max_iter)
            beta = report.beta_hat
            converged = report.converged
            iterations = report.iterations
            res_norm = report.final_residual_norm
            trace = report.trace
        else:
            raise ContractError(f"unknown fit method {method!r}")

    result = FitResult(
        beta_hat=beta,
        method=method,
        link_kind=ctx.link.kind,
        corr_kind=corr_kind,
        level=level,
        converged=converged,
        iterations=iterations,
        final_residual_norm=res_norm,
        trace=trace,
        corr_trace=corr_trace,
    )
    if with_inference:
        est = inference.sandwich(infer_ctx, beta)
        result.se = est.se
        result.psi = est.psi
        result.h_mat = est.h_mat
        result.m_mat = est.m_mat
        result.cis = inference.component_intervals(est, beta, level)
    return result
