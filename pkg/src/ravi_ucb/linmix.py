"""Linear mixture MDPs: least-squares mixing weights and elliptical bonuses.

The learner never reads ``LinearMixtureMdp.theta``; it only evaluates the
value-weighted features phi_V(x, a) = sum_y psi(x, a, y) V(y).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalError
from .mdp import MEASURE_TOL, TabularMdp
from .planner import EpochModel


@dataclass(frozen=True, eq=False)
class LinearMixtureMdp:
    """P(y|x,a) = sum_i theta_i psi_i(x,a,y); ``psi`` has shape (d, X, A, X)."""

    base: TabularMdp
    psi: np.ndarray
    theta: np.ndarray
    bound_B: float

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        theta = np.array(self.theta, dtype=float)
        X, A = self.base.n_states, self.base.n_actions
        if psi.ndim != 4 or psi.shape[1:] != (X, A, X):
            raise InputError(f"psi shape {psi.shape} != (d, {X}, {A}, {X})")
        if theta.shape != (psi.shape[0],):
            raise InputError(f"theta shape {theta.shape} != ({psi.shape[0]},)")
        mixed = np.einsum("i,ixay->xay", theta, psi)
        if mixed.min() < -MEASURE_TOL or np.abs(mixed.sum(axis=2) - 1).max() > MEASURE_TOL:
            raise InputError("sum_i theta_i psi_i is not a transition kernel")
        if np.abs(mixed - self.base.transition).max() > MEASURE_TOL:
            raise InputError("base transition disagrees with sum_i theta_i psi_i")
        if np.linalg.norm(theta) > self.bound_B + 1e-12:
            raise InputError(f"||theta||_2 = {np.linalg.norm(theta):.6g} exceeds B")
        cert = feature_bound_certificate(psi)
        if cert > self.bound_B + 1e-12:
            raise InputError(f"feature bound certificate {cert:.6g} exceeds B = {self.bound_B}")
        psi.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bound_B", float(self.bound_B))

    @property
    def d(self) -> int:
        return self.psi.shape[0]

    def to_dict(self) -> dict:
        return {**self.base.to_dict(), "d": self.d, "psi": self.psi.tolist(),
                "theta": self.theta.tolist(), "B": self.bound_B}

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearMixtureMdp":
        missing = [k for k in ("d", "psi", "theta", "B") if k not in doc]
        if missing:
            raise InputError(f"mixture document is missing keys: {', '.join(missing)}")
        psi = np.asarray(doc["psi"], dtype=float)
        theta = np.asarray(doc["theta"], dtype=float)
        if psi.shape[0] != doc["d"]:
            raise InputError("d disagrees with psi")
        base_doc = dict(doc)
        base_doc.setdefault("transition", np.einsum("i,ixay->xay", theta, psi).tolist())
        return cls(base=TabularMdp.from_dict(base_doc), psi=psi, theta=theta,
                   bound_B=doc["B"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LinearMixtureMdp":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def feature_bound_certificate(psi: np.ndarray) -> float:
    """Upper bound on ||phi_V(x,a)||_2 / H over all V in [0, H]^X.

    Coordinate i satisfies |phi_V,i| <= H sum_y |psi_i(x,a,y)|; this is never
    looser than the row-wise bound H sum_y ||psi(x,a,y)||_2 (Minkowski).
    """
    per_coord = np.abs(psi).sum(axis=3)          # (d, X, A)
    return float(np.sqrt((per_coord ** 2).sum(axis=0)).max())


def build_convex_mixture_env(kernels, theta, reward, gamma, nu0) -> LinearMixtureMdp:
    """Mixture of d stochastic kernels with simplex weights; records B = sqrt(d)."""
    psi = np.asarray(kernels, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if psi.ndim != 4:
        raise InputError("kernels must be a list of (X, A, X) tensors")
    if psi.min() < 0 or np.abs(psi.sum(axis=3) - 1).max() > 1e-12:
        raise InputError("every kernel must be row-stochastic")
    if theta.shape != (psi.shape[0],) or theta.min() < 0 or abs(theta.sum() - 1) > 1e-12:
        raise InputError("theta must lie on the probability simplex")
    transition = np.einsum("i,ixay->xay", theta, psi)
    base = TabularMdp(reward=reward, transition=transition, discount=gamma, init_dist=nu0)
    return LinearMixtureMdp(base=base, psi=psi, theta=theta, bound_B=math.sqrt(psi.shape[0]))


def _features(psi: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ixay,y->xai", psi, v)


def phi_of_value(mdp: LinearMixtureMdp, v) -> np.ndarray:
    """Feature table phi_V with shape (X, A, d)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.base.n_states,):
        raise InputError(f"value shape {v.shape} != ({mdp.base.n_states},)")
    if v.min() < 0 or v.max() > mdp.base.horizon:
        raise InputError("value function must lie in [0, H]")
    return _features(mdp.psi, v)


@dataclass
class DesignState:
    lambda_mat: np.ndarray
    b_vec: np.ndarray
    reg_lambda: float

    @classmethod
    def fresh(cls, d: int, reg_lambda: float = 1.0) -> "DesignState":
        if not reg_lambda > 0:
            raise InputError("reg_lambda must be positive")
        return cls(lambda_mat=reg_lambda * np.eye(d), b_vec=np.zeros(d),
                   reg_lambda=float(reg_lambda))

    @property
    def d(self) -> int:
        return self.b_vec.shape[0]

    def to_dict(self) -> dict:
        return {"Lambda": self.lambda_mat.tolist(), "b": self.b_vec.tolist()}


def record_transition_lin(design: DesignState, phi_xa, v_next: float) -> DesignState:
    phi_xa = np.asarray(phi_xa, dtype=float)
    if phi_xa.shape != (design.d,):
        raise InputError(f"feature length {phi_xa.shape} != ({design.d},)")
    design.lambda_mat += np.outer(phi_xa, phi_xa)
    design.b_vec += phi_xa * v_next
    return design


def _cholesky(lambda_mat: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(lambda_mat, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"design matrix is not positive definite: {exc}") from exc


def least_squares_theta(design: DesignState) -> np.ndarray:
    """Ridge estimate theta_hat = Lambda^{-1} b via Cholesky."""
    chol = _cholesky(design.lambda_mat)
    theta_hat = linalg.cho_solve((chol, True), design.b_vec)
    residual = np.linalg.norm(design.lambda_mat @ theta_hat - design.b_vec)
    if residual > 1e-9 * (1 + np.linalg.norm(design.b_vec)):
        raise NumericalError(f"least-squares residual {residual:.3e} too large")
    return theta_hat


def estimated_backup_values(theta_hat, features) -> np.ndarray:
    """(P_hat V)(x,a) = <phi_V(x,a), theta_hat>; not clipped."""
    return np.asarray(features) @ np.asarray(theta_hat)


def feature_norms(features, chol: np.ndarray) -> np.ndarray:
    """||phi(x,a)||_{Lambda^{-1}} given the lower Cholesky factor of Lambda."""
    features = np.asarray(features)
    flat = features.reshape(-1, features.shape[-1])
    white = linalg.solve_triangular(chol, flat.T, lower=True)
    return np.sqrt((white ** 2).sum(axis=0)).reshape(features.shape[:-1])


def elliptical_bonus(features, design: DesignState, beta: float,
                     cap: float = math.inf) -> np.ndarray:
    """beta * ||phi(x,a)||_{Lambda^{-1}}, clamped above at ``cap``."""
    if beta < 0:
        raise InputError("beta must be nonnegative")
    return np.minimum(beta * feature_norms(features, _cholesky(design.lambda_mat)), cap)


def linmix_beta(d: int, T: int, B: float, horizon: float, reg_lambda: float,
                delta: float) -> float:
    """beta = H sqrt(2 ((d/2) log(1 + T B^2 H^2 / (lambda d)) + log(1/delta))) + sqrt(lambda) B."""
    if not 0 < delta < 1:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    if min(d, T) < 1 or B <= 0 or horizon <= 0 or reg_lambda <= 0:
        raise InputError("d, T, B, H and lambda must be positive")
    log_det = 0.5 * d * math.log1p(T * B ** 2 * horizon ** 2 / (reg_lambda * d))
    return horizon * math.sqrt(2.0 * (log_det + math.log(1.0 / delta))) + math.sqrt(reg_lambda) * B


class LeastSquaresEstimator:
    """Linear-mixture backend.

    Each epoch freezes Lambda_{T_k}, b_{T_k}; transitions inside the epoch
    accumulate phi_k(x_t, a_t) and V_k(x_{t+1}) for the next refresh.
    """

    def __init__(self, psi, beta: float, horizon: float, reg_lambda: float = 1.0):
        self.psi = np.asarray(psi, dtype=float)
        self.beta = float(beta)
        self.horizon = float(horizon)
        self.design = DesignState.fresh(self.psi.shape[0], reg_lambda)
        self._phi = None
        self._v = None

    def begin_epoch(self, v) -> EpochModel:
        v = np.asarray(v, dtype=float)
        if v.min() < 0 or v.max() > self.horizon:
            raise InputError("value function must lie in [0, H]")
        design = self.design
        chol = _cholesky(design.lambda_mat)
        theta_hat = linalg.cho_solve((chol, True), design.b_vec)
        phi = _features(self.psi, v)
        norms = feature_norms(phi, chol)
        self._phi = phi
        self._v = v.tolist()
        return EpochModel(
            estimated_pv=estimated_backup_values(theta_hat, phi),
            bonus=np.minimum(self.beta * norms, self.horizon),
            summary={"theta_hat": theta_hat, "feature_norms": norms,
                     "Lambda": design.lambda_mat.copy(), "b": design.b_vec.copy(),
                     "phi": phi},
        )

    def record(self, x: int, a: int, x_next: int) -> None:
        phi = self._phi[x, a]
        self.design.lambda_mat += np.outer(phi, phi)
        self.design.b_vec += phi * self._v[x_next]
