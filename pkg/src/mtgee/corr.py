"""Working correlation structures for the estimating function.

A provider supplies, for every step i, the m x m surrogate matrix used to
weight that step's standardized residuals.  Fixed patterns (independence,
compound symmetry, AR(1)) are constant over time; the running empirical
provider averages outer products of standardized residuals from steps
strictly before i, so the matrix emitted at step i is determined by the
past alone.

Degenerate empirical averages (fewer residuals folded in than the cluster
size, hence rank-deficient) fall back to the identity; near-singular
averages are eigenvalue-floored by :func:`spd_project` instead of being
rejected, keeping sequential procedures total.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CorrelationDegeneracyError
from .model import ClusterSeries, LinkSpec, moment_arrays

FIXED_KINDS = ("independence", "compound_symmetry", "ar1")


def build_fixed_corr(kind: str, alpha: float, m: int) -> np.ndarray:
    """Build a fixed-pattern m x m correlation matrix.

    Parameters
    ----------
    kind : {"independence", "compound_symmetry", "ar1"}
    alpha : float
        Off-diagonal parameter; ignored for independence.  Admissible
        ranges (forced by positive definiteness): compound symmetry needs
        alpha in (-1/(m-1), 1), AR(1) needs alpha in (-1, 1).
    m : int
        Cluster size, m >= 1.
    """
    if m < 1:
        raise ContractError(f"cluster size must be >= 1, got {m}")
    if kind == "independence":
        return np.eye(m)
    alpha = float(alpha)
    if kind == "compound_symmetry":
        lo = -1.0 / (m - 1) if m > 1 else -1.0
        if not (lo < alpha < 1.0):
            raise ContractError(
                f"compound symmetry needs alpha in ({lo:g}, 1) for m={m}, got {alpha}"
            )
        mat = np.full((m, m), alpha)
        np.fill_diagonal(mat, 1.0)
        return mat
    if kind == "ar1":
        if not (-1.0 < alpha < 1.0):
            raise ContractError(f"ar1 needs alpha in (-1, 1), got {alpha}")
        idx = np.arange(m)
        return alpha ** np.abs(idx[:, None] - idx[None, :])
    raise ContractError(f"unknown fixed correlation kind {kind!r}")


def spd_project(mat: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Clip eigenvalues below at ``floor``, reassemble, rescale to unit diagonal.

    Idempotent on symmetric matrices whose smallest eigenvalue already
    meets the floor (returned unchanged).  Asymmetric input is a contract
    violation.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ContractError(f"spd_project expects a square matrix, got {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > 1e-8 * scale:
        raise ContractError("spd_project requires symmetric input")
    w, v = np.linalg.eigh(mat)
    if w[0] >= floor:
        return mat
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    d = np.sqrt(np.diag(out))
    out = out / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return 0.5 * (out + out.T)


def regularized_empirical(mat: np.ndarray, count: int, floor: float = 1e-6) -> np.ndarray:
    """Floor an empirical average of ``count`` residual outer products.

    Beyond the absolute ``floor``, eigenvalues are floored at
    min(1/2, m/(2*count)) of the largest one: an average of count outer
    products sits at the hard edge of near-singularity while count is
    comparable to m, and inverting it would hand a handful of early steps
    weights that dominate the whole estimating equation.  The relative
    floor caps any step's condition number at 2*count/m and decays to
    nothing as data accrue, so the sequence converges to the plain
    empirical average.
    """
    mat = 0.5 * (mat + mat.T)
    lam_max = float(np.linalg.eigvalsh(mat)[-1])
    rel = min(0.5, mat.shape[0] / (2.0 * max(count, 1)))
    return spd_project(mat, max(floor, rel * lam_max))


def _check_spd(mat, what, eig_bounds=None):
    mat = np.asarray(mat, dtype=np.float64)
    if np.max(np.abs(mat - mat.T)) > 1e-10 * max(1.0, np.max(np.abs(mat))):
        raise CorrelationDegeneracyError(f"{what} is not symmetric")
    w = np.linalg.eigvalsh(mat)
    if w[0] <= 0.0:
        raise CorrelationDegeneracyError(
            f"{what} is not positive definite (lambda_min={w[0]!r})",
            eigenvalue=float(w[0]),
        )
    if eig_bounds is not None:
        lo, hi = eig_bounds
        if w[0] < lo or w[-1] > hi:
            raise CorrelationDegeneracyError(
                f"{what} eigenvalues [{w[0]:g}, {w[-1]:g}] violate bounds [{lo:g}, {hi:g}]",
                eigenvalue=float(w[0] if w[0] < lo else w[-1]),
            )
    return mat


@dataclass(frozen=True)
class EmpiricalCorrState:
    """Running sum of standardized-residual outer products."""

    count: int
    sum_outer: np.ndarray

    @classmethod
    def empty(cls, m: int) -> "EmpiricalCorrState":
        return cls(count=0, sum_outer=np.zeros((m, m)))

    def mean(self) -> np.ndarray:
        """Raw average sum_outer / count (no warmup or flooring applied)."""
        if self.count == 0:
            raise ContractError("empirical correlation state is empty")
        return self.sum_outer / self.count


def empirical_update(state: EmpiricalCorrState, eps_std) -> EmpiricalCorrState:
    """Fold one standardized residual vector into the running average."""
    eps = np.asarray(eps_std, dtype=np.float64)
    if eps.shape != (state.sum_outer.shape[0],):
        raise ContractError(
            f"residual has shape {eps.shape}, state expects ({state.sum_outer.shape[0]},)"
        )
    return EmpiricalCorrState(
        count=state.count + 1,
        sum_outer=state.sum_outer + np.outer(eps, eps),
    )


class CorrProvider:
    """Base class: one m x m surrogate matrix per time step."""

    kind = "abstract"

    @property
    def m(self) -> int:
        raise NotImplementedError

    def emit(self, step_index: int) -> np.ndarray:
        raise NotImplementedError

    def realize(self, data: ClusterSeries, link: LinkSpec) -> np.ndarray:
        """Materialize the per-step matrices as an (n, m, m) array."""
        raise NotImplementedError


class FixedCorr(CorrProvider):
    """Constant matrix at every step (fixed pattern or user-supplied)."""

    def __init__(self, kind, matrix, alpha=None, eig_bounds=None):
        self.kind = kind
        self.alpha = alpha
        self.matrix = np.array(
            _check_spd(matrix, f"{kind} correlation", eig_bounds), dtype=np.float64
        )
        self.matrix.flags.writeable = False

    @property
    def m(self):
        return self.matrix.shape[0]

    def emit(self, step_index: int) -> np.ndarray:
        return self.matrix

    def realize(self, data, link):
        if data.m != self.m:
            raise ContractError(
                f"provider cluster size {self.m} != data cluster size {data.m}"
            )
        return np.broadcast_to(self.matrix, (data.n, self.m, self.m))


class SequenceCorr(CorrProvider):
    """Explicit per-step matrix sequence (e.g. the two-step procedure's trace)."""

    kind = "sequence"

    def __init__(self, matrices):
        mats = np.asarray(matrices, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ContractError(f"sequence provider expects (n, m, m), got {mats.shape}")
        self.matrices = mats

    @property
    def m(self):
        return self.matrices.shape[1]

    def emit(self, step_index):
        return self.matrices[step_index]

    def realize(self, data, link):
        if data.n != self.matrices.shape[0] or data.m != self.m:
            raise ContractError("sequence provider does not match data dimensions")
        return self.matrices


class EmpiricalRunningCorr(CorrProvider):
    """Running average of standardized-residual outer products.

    The matrix emitted at step i averages residuals from steps < i only.
    While fewer than ``warmup_steps`` residuals have been folded in, the
    identity is emitted; the same applies while the average is necessarily
    rank-deficient (count < m), since an average of count outer products
    has rank at most count.  Past that point the average is conditioned
    through :func:`regularized_empirical`, whose eigenvalue floor decays
    with the count.

    Residuals are standardized at a single plug-in value of the regression
    parameter (``plugin_beta``); ``fit`` resolves it to the
    working-independence estimate when left unset.
    """

    kind = "empirical_running"

    def __init__(self, m, plugin_beta=None, warmup_steps=2, floor=1e-6):
        if m < 1:
            raise ContractError("cluster size must be >= 1")
        self._m = int(m)
        self.plugin_beta = (
            None if plugin_beta is None else np.asarray(plugin_beta, dtype=np.float64)
        )
        self.warmup_steps = int(warmup_steps)
        self.floor = float(floor)
        self.state = EmpiricalCorrState.empty(self._m)

    @property
    def m(self):
        return self._m

    def _guarded(self, state):
        if state.count < max(self.warmup_steps, self._m):
            return np.eye(self._m)
        return regularized_empirical(state.mean(), state.count, self.floor)

    def update(self, eps_std):
        self.state = empirical_update(self.state, eps_std)

    def emit(self, step_index=None):
        return self._guarded(self.state)

    def with_plugin(self, beta) -> "EmpiricalRunningCorr":
        out = EmpiricalRunningCorr(
            self._m, plugin_beta=beta, warmup_steps=self.warmup_steps, floor=self.floor
        )
        out.state = self.state
        return out

    def realize(self, data, link):
        if data.m != self._m:
            raise ContractError(
                f"provider cluster size {self._m} != data cluster size {data.m}"
            )
        if self.plugin_beta is None:
            raise ContractError(
                "empirical provider needs plugin_beta (fit() resolves it to the "
                "working-independence estimate)"
            )
        _, _, eps = moment_arrays(data.Xs, data.ys, self.plugin_beta, link)
        out = np.empty((data.n, self._m, self._m))
        state = EmpiricalCorrState.empty(self._m)
        for i in range(data.n):
            out[i] = self._guarded(state)
            state = empirical_update(state, eps[i])
        return out


def independence(m: int) -> FixedCorr:
    return FixedCorr("independence", build_fixed_corr("independence", 0.0, m))


def compound_symmetry(alpha: float, m: int) -> FixedCorr:
    return FixedCorr(
        "compound_symmetry", build_fixed_corr("compound_symmetry", alpha, m), alpha=alpha
    )


def ar1(alpha: float, m: int) -> FixedCorr:
    return FixedCorr("ar1", build_fixed_corr("ar1", alpha, m), alpha=alpha)


def pseudo_fixed(matrix, eig_bounds=None) -> FixedCorr:
    """Wrap a user-supplied constant matrix (validated SPD, optional eigen bounds)."""
    return FixedCorr("pseudo_fixed", matrix, eig_bounds=eig_bounds)


def empirical_running(m, plugin_beta=None, warmup_steps=2, floor=1e-6) -> EmpiricalRunningCorr:
    return EmpiricalRunningCorr(
        m, plugin_beta=plugin_beta, warmup_steps=warmup_steps, floor=floor
    )


def emit_corr(provider: CorrProvider, step_index: int, beta=None) -> np.ndarray:
    """Matrix the provider would use at ``step_index``.

    For the running empirical provider only data folded in so far (which
    the caller must restrict to steps < step_index) influences the result;
    beta is accepted for signature compatibility with beta-dependent
    providers but every shipped provider is beta-free.
    """
    del beta
    return provider.emit(step_index)
