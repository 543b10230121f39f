"""
➡️ But : Modèles de covariance spatiale et facteur de Cholesky utilisé par les corrections.

- Matérn stationnaire : évaluation (formes fermées ν ∈ {1/2, 3/2, 5/2}, Bessel sinon),
  assemblage, maximum de vraisemblance sur des répliques indépendantes dans le temps
  (σ² profilé analytiquement, ν sur une petite grille).
- Non stationnaire : convolution de noyaux à A nœuds, σ(s), Σ(s) et portée mélangés par
  des poids gaussiens normalisés ; vraisemblance locale par nœud (paires pondérées).
- build_factor : Cholesky avec jitter croissant (×10) jusqu'à un plafond, puis échec.

🔹 Les distances : euclidiennes (carré unité) ou grand cercle en km (lon/lat).
"""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize, special

from app.core.config import settings
from app.core.errors import DataError, NumericalError
from app.core.logs import log_event
from app.features.covariance.schemas import (
    CovarianceModel,
    CovFactor,
    MaternFit,
    MaternParams,
    Metric,
    NonstatParams,
    half_min_knot_distance,
)
from app.utils.geometry import pairwise_distances
from app.utils.parallel import ordered_map

LOGGER = logging.getLogger(__name__)


# -----------------------------
# Matérn
# -----------------------------
def matern_corr(h, params: MaternParams):
    """C(h) = 2^{1−ν}/Γ(ν) (√(2ν) h/ρ)^ν K_ν(√(2ν) h/ρ) ; C(0) = 1, sans nugget."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise DataError("Distance négative.")
    nu, rho = params.nu, params.rho
    if nu == 0.5:
        out = np.exp(-h / rho)
    elif nu == 1.5:
        r = np.sqrt(3.0) * h / rho
        out = (1.0 + r) * np.exp(-r)
    elif nu == 2.5:
        r = np.sqrt(5.0) * h / rho
        out = (1.0 + r + r**2 / 3.0) * np.exp(-r)
    else:
        r = np.sqrt(2.0 * nu) * h / rho
        with np.errstate(invalid="ignore", over="ignore"):
            out = 2.0 ** (1.0 - nu) / special.gamma(nu) * r**nu * special.kv(nu, r)
        out = np.where(r == 0, 1.0, out)
        out = np.nan_to_num(out, nan=0.0)
    return out[()] if np.ndim(out) == 0 else out


def matern_cov_matrix(
    coords: np.ndarray, params: MaternParams, metric: Optional[Metric] = None
) -> np.ndarray:
    d = pairwise_distances(coords, metric=metric or params.metric)
    corr = matern_corr(d, params)
    return params.sigma2 * ((1.0 - params.nugget) * corr + params.nugget * np.eye(len(d)))


def _replicate_matrix(residuals) -> np.ndarray:
    values = np.asarray(getattr(residuals, "values", residuals), dtype=float)
    n, T = values.shape
    if n < 2:
        raise DataError("Au moins 2 sites sont nécessaires pour ajuster une covariance.")
    if T < settings.MIN_REPLICATES:
        raise DataError(f"insufficient replicates ({T} < {settings.MIN_REPLICATES})")
    return values


def _check_distances(d: np.ndarray) -> None:
    off = d[np.triu_indices(len(d), 1)]
    if off.size == 0 or np.any(off <= 0) or not np.all(np.isfinite(off)):
        raise DataError("Matrice de distances dégénérée (sites confondus ou non finis).")


def _profile_loglik(log_rho: float, tau: float, nu: float, d: np.ndarray, S: np.ndarray, T: int):
    """Log-vraisemblance avec σ² profilé : −T/2 [n log σ̂² + log|R| + n + n log 2π]."""
    n = len(d)
    params = MaternParams(sigma2=1.0, rho=float(np.exp(log_rho)), nu=nu, nugget=0.0)
    R = (1.0 - tau) * matern_corr(d, params) + tau * np.eye(n)
    try:
        c = linalg.cho_factor(R, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return -np.inf, np.nan
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    sigma2 = np.trace(linalg.cho_solve(c, S, check_finite=False)) / n
    if not sigma2 > 0:
        return -np.inf, np.nan
    ll = -0.5 * T * (n * np.log(sigma2) + logdet + n + n * np.log(2.0 * np.pi))
    return float(ll), float(sigma2)


def fit_matern(
    residuals,
    coords: np.ndarray,
    metric: Metric = "euclidean",
    nu_grid: Optional[Sequence[float]] = None,
    threads: Optional[int] = None,
) -> MaternFit:
    """Maximum de vraisemblance gaussien sur les colonnes (jours) vues comme répliques i.i.d."""
    Y = _replicate_matrix(residuals)
    Y = Y - Y.mean(axis=1, keepdims=True)
    n, T = Y.shape
    S = Y @ Y.T / T
    d = pairwise_distances(coords, metric=metric)
    _check_distances(d)

    off = d[np.triu_indices(n, 1)]
    log_bounds = (np.log(off.min() / 100.0), np.log(off.max() * 10.0))
    start = np.array([np.log(np.median(off) / 3.0), 0.1])
    tau_max = 0.999

    def _fit_nu(nu: float):
        def objective(theta):
            ll, _ = _profile_loglik(theta[0], theta[1], nu, d, S, T)
            return -ll / T if np.isfinite(ll) else 1e12

        best = None
        for tau0 in (start[1], 0.5):
            res = optimize.minimize(
                objective,
                np.array([start[0], tau0]),
                method="L-BFGS-B",
                bounds=[log_bounds, (0.0, tau_max)],
            )
            if best is None or res.fun < best.fun:
                best = res
        return best

    grid = list(nu_grid or settings.MATERN_NU_GRID)
    results = ordered_map(_fit_nu, grid, threads)

    by_nu = {}
    best_idx = None
    for i, (nu, res) in enumerate(zip(grid, results)):
        if res is None or not np.isfinite(res.fun) or res.fun >= 1e12:
            continue
        by_nu[str(nu)] = float(-res.fun * T)
        if best_idx is None or res.fun < results[best_idx].fun:
            best_idx = i
    if best_idx is None:
        raise NumericalError("Ajustement Matérn non convergent pour tous les ν de la grille.")

    nu, res = grid[best_idx], results[best_idx]
    log_rho, tau = float(res.x[0]), float(res.x[1])
    ll, sigma2 = _profile_loglik(log_rho, tau, nu, d, S, T)
    rho = float(np.exp(log_rho))

    rho_se = _rho_standard_error(log_rho, tau, nu, d, S, T, tau_max)
    at_bound = np.isclose(log_rho, log_bounds, atol=1e-3).any()
    range_identified = bool(tau < 0.95 and not at_bound)
    if not range_identified:
        log_event(LOGGER, "matern_range_unidentified", level=logging.WARNING, nugget=tau, rho=rho)

    params = MaternParams(
        sigma2=sigma2, rho=rho, nu=nu, nugget=min(max(tau, 0.0), tau_max), metric=metric
    )
    log_event(LOGGER, "matern_fit", nu=nu, rho=rho, sigma2=sigma2, nugget=tau, loglik=ll)
    return MaternFit(
        params=params,
        loglik=ll,
        rho_se=rho_se,
        range_identified=range_identified,
        loglik_by_nu=by_nu,
        n_replicates=T,
    )


def _rho_standard_error(log_rho, tau, nu, d, S, T, tau_max) -> Optional[float]:
    """SE de ρ par Hessien numérique (différences centrées) sur (ρ, τ)."""
    rho = np.exp(log_rho)
    free_tau = 1e-4 < tau < tau_max - 1e-4

    def ll(r, t):
        return _profile_loglik(np.log(r), t, nu, d, S, T)[0]

    hr = 1e-3 * rho
    if not free_tau:
        f0, fp, fm = ll(rho, tau), ll(rho + hr, tau), ll(rho - hr, tau)
        d2 = (fp - 2 * f0 + fm) / hr**2
        return float(np.sqrt(-1.0 / d2)) if np.isfinite(d2) and d2 < 0 else None

    ht = 1e-4
    f = ll(rho, tau)
    h_rr = (ll(rho + hr, tau) - 2 * f + ll(rho - hr, tau)) / hr**2
    h_tt = (ll(rho, tau + ht) - 2 * f + ll(rho, tau - ht)) / ht**2
    h_rt = (
        ll(rho + hr, tau + ht) - ll(rho + hr, tau - ht)
        - ll(rho - hr, tau + ht) + ll(rho - hr, tau - ht)
    ) / (4 * hr * ht)
    H = -np.array([[h_rr, h_rt], [h_rt, h_tt]])
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return None
    return float(np.sqrt(cov[0, 0])) if np.isfinite(cov[0, 0]) and cov[0, 0] > 0 else None


# -----------------------------
# Non stationnaire
# -----------------------------
def place_knots(coords: np.ndarray) -> np.ndarray:
    """Grille 2×2 aux quarts de la boîte englobante des sites."""
    coords = np.asarray(coords, dtype=float)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    if np.any(hi - lo <= 0):
        raise DataError("Boîte englobante dégénérée : impossible de placer les nœuds.")
    fx = lo[0] + (hi[0] - lo[0]) * np.array([0.25, 0.75])
    fy = lo[1] + (hi[1] - lo[1]) * np.array([0.25, 0.75])
    return np.array([[x, y] for y in fy for x in fx])


def weight_at(s: np.ndarray, knots: np.ndarray, lambda_sigma: float) -> np.ndarray:
    """w_a(s) ∝ exp(−‖s − b_a‖² / (2λ_σ)), normalisés ; s peut être (2,) ou (n, 2)."""
    if lambda_sigma <= 0:
        raise DataError("lambda_sigma doit être > 0.")
    s = np.asarray(s, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    knots = np.asarray(knots, dtype=float).reshape(-1, 2)
    d2 = ((s[:, None, :] - knots[None, :, :]) ** 2).sum(-1)
    logw = -d2 / (2.0 * lambda_sigma)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def _local_parameters(coords: np.ndarray, params: NonstatParams):
    """σ(s) et noyau effectif K(s) = r(s)² Σ(s) en chaque point."""
    w = weight_at(coords, params.knot_array(), params.lambda_sigma)
    sigma = w @ np.asarray(params.sigma_at_knot)
    r = w @ np.asarray(params.range_at_knot)
    aniso = np.einsum("na,aij->nij", w, params.anisotropy_matrices())
    return sigma, (r**2)[:, None, None] * aniso


def _kernel_convolution(sig_a, K_a, sig_b, K_b, diff) -> np.ndarray:
    """C = σσ' |K|^{1/4}|K'|^{1/4} / |K̄|^{1/2} · exp(−√Q), Q = dᵀ K̄⁻¹ d (2×2 analytique)."""

    def det2(M):
        return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]

    Kbar = 0.5 * (K_a + K_b)
    det_bar = det2(Kbar)
    if np.any(det_bar <= 0):
        raise NumericalError("Matrice de noyau moyenne singulière.")
    dx, dy = diff[..., 0], diff[..., 1]
    Q = (Kbar[..., 1, 1] * dx**2 - 2 * Kbar[..., 0, 1] * dx * dy + Kbar[..., 0, 0] * dy**2)
    Q = np.maximum(Q / det_bar, 0.0)
    pref = det2(K_a) ** 0.25 * det2(K_b) ** 0.25 / np.sqrt(det_bar)
    return sig_a * sig_b * pref * np.exp(-np.sqrt(Q))


def nonstat_cov(s, s_prime, params: NonstatParams) -> float:
    pts = np.vstack([np.asarray(s, dtype=float), np.asarray(s_prime, dtype=float)])
    sigma, K = _local_parameters(pts, params)
    return float(_kernel_convolution(sigma[0], K[0], sigma[1], K[1], pts[0] - pts[1]))


def nonstat_cov_matrix(coords: np.ndarray, params: NonstatParams) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    sigma, K = _local_parameters(coords, params)
    diff = coords[:, None, :] - coords[None, :, :]
    C = _kernel_convolution(
        sigma[:, None], K[:, None], sigma[None, :], K[None, :], diff
    )
    return 0.5 * (C + C.T)


def _local_window_fit(args):
    a, coords, S, T, w_a, knot, lambda_sigma = args
    keep = np.flatnonzero(w_a >= settings.LOCAL_WEIGHT_FLOOR)
    if keep.size < settings.MIN_WINDOW_SITES:
        raise DataError(
            f"Fenêtre locale du nœud {a} avec {keep.size} sites (< {settings.MIN_WINDOW_SITES})."
        )
    iu, ju = np.triu_indices(keep.size, 1)
    i, j = keep[iu], keep[ju]
    pair_w = w_a[i] * w_a[j]
    diff = coords[i] - coords[j]
    s_ii, s_jj, s_ij = S[i, i], S[j, j], S[i, j]

    dist = np.sqrt((diff**2).sum(-1))
    if np.any(dist <= 0):
        raise DataError(f"Sites confondus dans la fenêtre du nœud {a}.")
    var0 = float(np.average(np.diag(S)[keep], weights=w_a[keep]))
    start = np.array([0.5 * np.log(var0), np.log(np.median(dist)), 0.1, 0.0])
    bounds = [
        (start[0] - 4.0, start[0] + 4.0),
        (np.log(dist.min() / 20.0), np.log(dist.max() * 10.0)),
        (-2.0, 2.0),
        (-np.pi / 2, np.pi / 2),
    ]

    def negloglik(theta):
        log_sigma, log_r, eta, angle = theta
        sig2 = np.exp(2 * log_sigma)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        K = np.exp(2 * log_r) * rot @ np.diag([np.exp(eta), np.exp(-eta)]) @ rot.T
        Kinv = np.linalg.inv(K)
        Q = np.einsum("pi,ij,pj->p", diff, Kinv, diff)
        cov = sig2 * np.exp(-np.sqrt(np.maximum(Q, 0.0)))
        det = sig2**2 - cov**2
        if np.any(det <= 0):
            return 1e12
        quad = (sig2 * (s_ii + s_jj) - 2.0 * cov * s_ij) / det
        ll = -0.5 * T * (np.log(det) + quad + 2.0 * np.log(2.0 * np.pi))
        return float(-np.sum(pair_w * ll) / (T * pair_w.sum()))

    res = optimize.minimize(negloglik, start, method="L-BFGS-B", bounds=bounds)
    if not np.isfinite(res.fun) or res.fun >= 1e12:
        raise NumericalError(f"Vraisemblance locale non convergente au nœud {a}.")
    log_sigma, log_r, eta, angle = res.x
    log_event(
        LOGGER, "nonstat_knot_fit", knot=a, window_sites=int(keep.size),
        sigma=float(np.exp(log_sigma)), range=float(np.exp(log_r)),
    )
    return float(np.exp(log_sigma)), float(np.exp(log_r)), float(eta), float(angle)


def fit_nonstat(
    residuals,
    coords: np.ndarray,
    knots: Optional[np.ndarray] = None,
    threads: Optional[int] = None,
) -> NonstatParams:
    """Vraisemblance locale : pour chaque nœud, paires de sites pondérées par w_a(s_i)·w_a(s_j)."""
    Y = _replicate_matrix(residuals)
    Y = Y - Y.mean(axis=1, keepdims=True)
    T = Y.shape[1]
    S = Y @ Y.T / T
    coords = np.asarray(coords, dtype=float)
    knots = place_knots(coords) if knots is None else np.asarray(knots, dtype=float)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    if np.any(knots < lo) or np.any(knots > hi):
        raise DataError("Nœuds hors de la boîte englobante des sites.")
    lambda_sigma = half_min_knot_distance(knots)
    W = weight_at(coords, knots, lambda_sigma)

    tasks = [(a, coords, S, T, W[:, a], knots[a], lambda_sigma) for a in range(len(knots))]
    fits = ordered_map(_local_window_fit, tasks, threads)
    return NonstatParams(
        knots=[tuple(k) for k in knots.tolist()],
        sigma_at_knot=[f[0] for f in fits],
        range_at_knot=[f[1] for f in fits],
        # det Σ(b_a) = 1 : l'échelle du noyau est portée par range_at_knot
        kernel_log_eigs=[(f[2], -f[2]) for f in fits],
        kernel_angles=[f[3] for f in fits],
        lambda_sigma=lambda_sigma,
    )


# -----------------------------
# Assemblage + facteur
# -----------------------------
def covariance_matrix(model: CovarianceModel, coords: np.ndarray) -> np.ndarray:
    if isinstance(model, MaternParams):
        return matern_cov_matrix(coords, model)
    return nonstat_cov_matrix(coords, model)


def cholesky_with_jitter(sigma: np.ndarray, label: str = "") -> tuple[np.ndarray, float]:
    """Cholesky inférieure ; jitter 1e-10·moyenne(diag), ×10 jusqu'à 1e-4·moyenne(diag)."""
    sigma = 0.5 * (sigma + sigma.T)
    scale = float(np.mean(np.diag(sigma)))
    if not scale > 0:
        raise NumericalError(f"Diagonale de covariance non positive {label}".strip())
    rel = 0.0
    while True:
        try:
            lower = linalg.cholesky(
                sigma + rel * scale * np.eye(len(sigma)), lower=True, check_finite=True
            )
            if np.all(np.diag(lower) > 0):
                break
        except linalg.LinAlgError:
            pass
        rel = settings.JITTER_START if rel == 0.0 else rel * 10.0
        if rel > settings.JITTER_MAX * (1 + 1e-9):
            raise NumericalError(
                f"Matrice non SPD même avec jitter {settings.JITTER_MAX:g}·moyenne(diag) {label}"
                .strip(),
                code="NOT_SPD",
            )
    jitter = rel * scale
    if rel > 0:
        log_event(LOGGER, "cholesky_jitter", jitter=jitter, relative=rel, n=len(sigma), label=label)
    return lower, jitter


def build_factor(
    model: CovarianceModel, coords: np.ndarray, site_ids: Optional[Sequence[int]] = None
) -> CovFactor:
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    ids = tuple(range(len(coords))) if site_ids is None else tuple(site_ids)
    lower, jitter = cholesky_with_jitter(covariance_matrix(model, coords), label=model.kind)
    return CovFactor(lower=lower, site_ids=ids, jitter=jitter)


def factor_from_matrix(sigma: np.ndarray, site_ids: Optional[Sequence[int]] = None) -> CovFactor:
    ids = tuple(range(len(sigma))) if site_ids is None else tuple(site_ids)
    lower, jitter = cholesky_with_jitter(np.asarray(sigma, dtype=float))
    return CovFactor(lower=lower, site_ids=ids, jitter=jitter)
