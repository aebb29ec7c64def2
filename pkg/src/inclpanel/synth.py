"""Synthetic panels with known data-generating processes.

These are the ground-truth oracles for the PCA and GMM paths: covariates can
be drawn independent or with a planted factor structure, and the dependent
variable follows a dynamic equation with country effects, year effects, and
an idiosyncratic error.

Reproducibility contract: uniforms come from PCG64 (a named, portable,
seedable generator) and normal deviates are produced by the Marsaglia polar
transform, which touches only arithmetic, ln, and sqrt. The draw order is
fixed: factor loadings, country effects, year effects, factors, covariate
noise, idiosyncratic errors, missing mask. Same seed, same panel, bit for
bit on a given platform.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidSpec
from .paneldata import PanelDataset, VariableDef

BURN_IN = 50


def rng_for_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def draw_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via the Marsaglia polar method on PCG64 uniforms."""
    n = int(np.prod(shape)) if shape else 1
    out = np.empty(0)
    while out.size < n:
        need = max(n - out.size, 2)
        u = 2.0 * rng.random(need) - 1.0
        v = 2.0 * rng.random(need) - 1.0
        s = u * u + v * v
        ok = (s > 0.0) & (s < 1.0)
        factor = np.sqrt(-2.0 * np.log(s[ok]) / s[ok])
        pair = np.empty(2 * int(ok.sum()))
        pair[0::2] = u[ok] * factor
        pair[1::2] = v[ok] * factor
        out = np.concatenate([out, pair])
    return out[:n].reshape(shape)


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of the simulated dynamic panel.

    Covariates are named ``X1..Xp`` with p = len(beta) + len(gamma) +
    n_extra_covariates; ``beta`` coefficients attach to the leading block,
    ``gamma`` to the next, and the extras enter the dependent equation with
    coefficient zero (useful as pure index indicators).
    """

    n_countries: int = 32
    n_years: int = 22
    rho: float = 0.8
    beta: tuple[float, ...] = ()
    gamma: tuple[float, ...] = ()
    sigma_mu: float = 1.0
    sigma_t: float = 0.2
    sigma_eps: float = 1.0
    covariate_mode: str = "independent_normal"
    k_factors: int = 3
    loadings_scale: float = 2.0
    covariate_noise: float = 1.0
    n_extra_covariates: int = 0
    endogeneity: bool = False
    endogeneity_scale: float = 0.5
    missing_rate: float = 0.0
    seed: int = 0
    start_year: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(self.beta))
        object.__setattr__(self, "gamma", tuple(self.gamma))
        if abs(self.rho) >= 1.0:
            raise InvalidSpec(f"stationarity requires |rho| < 1, got {self.rho}")
        for name in ("sigma_mu", "sigma_t", "sigma_eps", "covariate_noise"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be non-negative")
        if self.covariate_mode not in ("independent_normal", "factor_structure"):
            raise InvalidSpec(f"unknown covariate mode {self.covariate_mode!r}")
        if self.covariate_mode == "factor_structure" and self.k_factors < 1:
            raise InvalidSpec("factor_structure needs k_factors >= 1")
        if not 0.0 <= self.missing_rate < 1.0:
            raise InvalidSpec("missing_rate must be in [0, 1)")
        if self.n_countries < 1 or self.n_years < 2:
            raise InvalidSpec("need at least 1 country and 2 years")

    @property
    def n_covariates(self) -> int:
        return len(self.beta) + len(self.gamma) + self.n_extra_covariates

    @classmethod
    def from_json(cls, path) -> "DgpSpec":
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise InvalidSpec(f"unknown DGP keys: {sorted(unknown)}")
        for key in ("beta", "gamma"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


def simulate_panel(spec: DgpSpec) -> tuple[PanelDataset, dict]:
    """Generate one panel plus the truth record of every parameter used."""
    rng = rng_for_seed(spec.seed)
    nc, t_keep, p = spec.n_countries, spec.n_years, spec.n_covariates
    t_all = t_keep + BURN_IN

    if spec.covariate_mode == "factor_structure":
        loadings = spec.loadings_scale * draw_normals(rng, (p, spec.k_factors))
    else:
        loadings = None
    mu_i = spec.sigma_mu * draw_normals(rng, (nc,))
    mu_t = spec.sigma_t * draw_normals(rng, (t_all,))
    if loadings is not None:
        factors = draw_normals(rng, (nc, t_all, spec.k_factors))
        x = factors @ loadings.T + spec.covariate_noise * draw_normals(
            rng, (nc, t_all, p)
        )
    else:
        x = draw_normals(rng, (nc, t_all, p)) if p else np.zeros((nc, t_all, 0))
    eps = spec.sigma_eps * draw_normals(rng, (nc, t_all))

    if spec.endogeneity and p:
        x = x.copy()
        x[:, :, 0] = x[:, :, 0] + spec.endogeneity_scale * eps

    coefs = np.array(list(spec.beta) + list(spec.gamma) + [0.0] *
                     spec.n_extra_covariates)
    y = np.zeros((nc, t_all))
    level = np.zeros(nc)
    for t in range(t_all):
        xb = x[:, t, :] @ coefs if p else 0.0
        level = spec.rho * level + xb + mu_i + mu_t[t] + eps[:, t]
        y[:, t] = level

    y = y[:, BURN_IN:]
    x = x[:, BURN_IN:, :]
    values = np.concatenate([y[:, :, None], x], axis=2)
    missing = np.zeros_like(values, dtype=bool)
    if spec.missing_rate > 0.0:
        missing = rng.random(values.shape) < spec.missing_rate
        values = np.where(missing, 0.0, values)

    countries = tuple(f"C{i:03d}" for i in range(1, nc + 1))
    years = tuple(range(spec.start_year, spec.start_year + t_keep))
    variables = (VariableDef("Y", "simulated dependent"),) + tuple(
        VariableDef(f"X{j + 1}", "simulated covariate") for j in range(p)
    )
    ds = PanelDataset(countries, years, variables, values, missing)

    truth = {
        "spec": {k: (list(v) if isinstance(v, tuple) else v)
                 for k, v in asdict(spec).items()},
        "coefficients": {f"X{j + 1}": float(coefs[j]) for j in range(p)},
        "rho": spec.rho,
        "factor_loadings": None if loadings is None else loadings.tolist(),
        "country_effects": {c: float(m) for c, m in zip(countries, mu_i)},
        "year_effects": {str(yr): float(m)
                         for yr, m in zip(years, mu_t[BURN_IN:])},
        "burn_in": BURN_IN,
    }
    return ds, truth
