"""Exact sampling of the reference Gaussian field and Gibbsian estimators.

The grid restriction of the harmonic covariance is circulant over the space
torus and the time circle, so a Fourier filter applied to white noise draws
the reference field exactly (Dirichlet boxes filter sine modes in space).
The perturbed measure reweights by exp(-S) with

    S = dt * sum_slices [ sum_j V(phi_j) + sum_j h . phi_j ]
        - (J/2) * dt * sum_boundary pairs sum_slices phi_l . xi_l',

estimated either by self-normalized importance sampling (primary; the Gibbs
weight is bounded by 1 for h = 0) or by a covariance-preserving
autocorrelation MCMC with Metropolis correction (fallback for strong
anharmonicity).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.fft

from .covariance import CovarianceKernel
from .grid import FieldGrid
from .lattice import Boundary, Lattice

DEFAULT_BATCHES = 50
MAX_CHUNK = 16384
ESS_WARN_THRESHOLD = 100.0


# -- results ------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    stderr: float
    n_samples: int
    seed: int
    ess: float

    def compatible(self, other: "EstimatorResult", n_sigma: float = 4.0) -> bool:
        gap = abs(self.mean - other.mean)
        return gap <= n_sigma * math.hypot(self.stderr, other.stderr)


def merge_results(results) -> EstimatorResult:
    """Merge independently seeded streams by sample-count weighting.

    Associative and order independent: the merged mean and variance depend
    only on the multiset of inputs.
    """
    results = sorted(results, key=lambda r: (r.seed, r.n_samples))
    n = sum(r.n_samples for r in results)
    mean = sum(r.n_samples * r.mean for r in results) / n
    var = sum((r.n_samples * r.stderr) ** 2 for r in results) / n ** 2
    ess = sum(r.ess for r in results)
    return EstimatorResult(mean=mean, stderr=math.sqrt(var), n_samples=n,
                           seed=results[0].seed, ess=ess)


# -- boundary conditions -------------------------------------------------------


class BoundaryKind(Enum):
    PERIODIC = "periodic"
    ZERO = "zero"
    TEMPERED = "tempered"


@dataclass(frozen=True)
class BoundaryCondition:
    """Periodic, zero, or tempered (fixed outside trajectories) boundary.

    For the tempered kind, ``xi`` maps outside-site coordinates to trajectory
    arrays of shape (n_slices, d).
    """

    kind: BoundaryKind
    xi: dict | None = None

    def lattice_boundary(self) -> Boundary:
        return Boundary.PERIODIC if self.kind is BoundaryKind.PERIODIC else Boundary.DIRICHLET


def periodic_bc() -> BoundaryCondition:
    return BoundaryCondition(kind=BoundaryKind.PERIODIC)


def zero_bc() -> BoundaryCondition:
    return BoundaryCondition(kind=BoundaryKind.ZERO)


def tempered_bc(xi: dict) -> BoundaryCondition:
    return BoundaryCondition(kind=BoundaryKind.TEMPERED, xi=dict(xi))


def tempered_weighted_sum(xi: dict, rho: float, beta_hat: float) -> float:
    """Finite check of the tempered-configuration norm sum_l e^{-rho|l|} ||xi_l||.

    The trajectory norm is the L2 norm over one time period.  rho must stay
    below sqrt(a) for the boundary series of the perturbed measure to make
    sense; callers supply rho (default a/4-scale choices live upstream).
    """
    if rho <= 0:
        raise ValueError("temperedness weight rho must be positive")
    total = 0.0
    for coords, traj in xi.items():
        traj = np.asarray(traj, dtype=float)
        n_slices = traj.shape[0]
        norm = math.sqrt(beta_hat / n_slices * float(np.sum(traj ** 2)))
        total += math.exp(-rho * float(np.sum(np.abs(coords)))) * norm
    if not math.isfinite(total):
        raise ValueError("tempered norm sum is not finite")
    return total


# -- exact Gaussian sampling ---------------------------------------------------


@dataclass(frozen=True)
class FieldConfiguration:
    """One trajectory field: values[site..., slice, component]."""

    values: np.ndarray
    beta_hat: float

    @property
    def n_slices(self) -> int:
        return self.values.shape[-2]

    @property
    def delta_tau(self) -> float:
        return self.beta_hat / self.n_slices


class GaussianFieldSampler:
    """Draws mean-zero fields whose covariance is the grid kernel, exactly.

    Periodic boxes: phi = F^-1( sqrt(lambda) F xi ) with F the space-time FFT
    and lambda the (nonnegative) circulant spectrum.  Dirichlet boxes use the
    orthonormal sine transform in space and the FFT in time.  Deterministic
    given the generator state; components are independent.
    """

    def __init__(self, kernel: CovarianceKernel, n_slices: int, d: int = 1):
        self.kernel = kernel
        self.n_slices = int(n_slices)
        self.d = int(d)
        if self.n_slices < 2:
            raise ValueError("need at least two time slices")
        self.lattice = kernel.lattice
        self._sqrt_eig = np.sqrt(kernel.grid_eigenvalues(self.n_slices))[..., None]
        self._space_axes = tuple(range(self.lattice.nu))
        self._st_axes = tuple(range(self.lattice.nu + 1))

    @property
    def shape(self) -> tuple:
        return self.lattice.dims + (self.n_slices, self.d)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n independent fields, shape (n, *dims, n_slices, d)."""
        z = rng.standard_normal((n,) + self.shape)
        axes = tuple(a + 1 for a in self._st_axes)
        if self.kernel.boundary is Boundary.PERIODIC:
            zh = np.fft.fftn(z, axes=axes)
            zh *= self._sqrt_eig
            return np.fft.ifftn(zh, axes=axes).real
        time_axis = self.lattice.nu + 1
        zh = np.fft.fft(z, axis=time_axis)
        zh *= self._sqrt_eig
        y = np.fft.ifft(zh, axis=time_axis).real
        return scipy.fft.dstn(y, type=1, norm="ortho",
                              axes=tuple(a + 1 for a in self._space_axes))

    def apply_covariance(self, c: np.ndarray) -> np.ndarray:
        """Apply the grid covariance operator to a field-shaped vector."""
        lam = self._sqrt_eig ** 2
        if self.kernel.boundary is Boundary.PERIODIC:
            ch = np.fft.fftn(c, axes=self._st_axes)
            return np.fft.ifftn(lam * ch, axes=self._st_axes).real
        time_axis = self.lattice.nu
        y = scipy.fft.dstn(c, type=1, norm="ortho", axes=self._space_axes)
        yh = np.fft.fft(y, axis=time_axis)
        y = np.fft.ifft(lam * yh, axis=time_axis).real
        return scipy.fft.dstn(y, type=1, norm="ortho", axes=self._space_axes)


def sample_gaussian_field(kernel: CovarianceKernel, n_slices: int, seed: int,
                          d: int = 1) -> FieldConfiguration:
    """One exact draw from the reference Gaussian on the grid."""
    sampler = GaussianFieldSampler(kernel, n_slices, d)
    rng = np.random.default_rng(seed)
    return FieldConfiguration(values=sampler.sample(rng, 1)[0],
                              beta_hat=kernel.beta_hat)


# -- the Gibbs ensemble --------------------------------------------------------


@dataclass(frozen=True)
class Ensemble:
    """A finite-volume Gibbs ensemble at fixed grid resolution.

    Bundles the box, the reference kernel matching the boundary condition,
    the anharmonic amplitudes, the rescaled field, and the discretization.
    """

    lattice: Lattice
    a: float
    J: float
    beta_hat: float
    n_slices: int
    b_m: float
    delta_m: float
    d: int = 1
    h_hat: tuple = ()
    bc: BoundaryCondition = field(default_factory=periodic_bc)

    def __post_init__(self):
        if self.bc.lattice_boundary() is not self.lattice.boundary:
            raise ValueError("lattice boundary and boundary-condition kind disagree")
        if self.h_hat and len(self.h_hat) != self.d:
            raise ValueError("h_hat must have d components")

    @cached_property
    def kernel(self) -> CovarianceKernel:
        return CovarianceKernel(self.lattice, self.a, self.J, self.beta_hat)

    @cached_property
    def grid(self) -> FieldGrid:
        return FieldGrid(self.lattice, self.beta_hat, self.n_slices)

    @cached_property
    def sampler(self) -> GaussianFieldSampler:
        return GaussianFieldSampler(self.kernel, self.n_slices, self.d)

    @cached_property
    def _boundary_coupling(self) -> np.ndarray | None:
        """(J/2) sum of outside trajectories adjacent to each inside site."""
        if self.bc.kind is not BoundaryKind.TEMPERED:
            return None
        if not self.bc.xi:
            raise ValueError("tempered boundary condition needs xi trajectories")
        c = np.zeros(self.lattice.dims + (self.n_slices, self.d))
        flat = c.reshape(self.lattice.n_sites, self.n_slices, self.d)
        for inside, outside in self.lattice.boundary_pairs():
            traj = self.bc.xi.get(tuple(outside))
            if traj is None:
                continue
            flat[inside] += 0.5 * self.J * np.asarray(traj, dtype=float)
        return c

    def potential_density(self, phi: np.ndarray) -> np.ndarray:
        """V at each grid point: b_m exp(-delta_m |phi|^2 / 2), summed over nothing."""
        sq = np.sum(phi ** 2, axis=-1)
        return self.b_m * np.exp(-0.5 * self.delta_m * sq)

    def action(self, phi: np.ndarray) -> np.ndarray:
        """Grid action S for a batch of fields (leading batch axis)."""
        dt = self.grid.delta_tau
        dens = self.potential_density(phi)
        s = dt * dens.sum(axis=tuple(range(1, dens.ndim)))
        if self.h_hat and any(x != 0.0 for x in self.h_hat):
            h = np.asarray(self.h_hat, dtype=float)
            proj = np.tensordot(phi, h, axes=([-1], [0]))
            s = s + dt * proj.sum(axis=tuple(range(1, proj.ndim)))
        coupling = self._boundary_coupling
        if coupling is not None:
            s = s - dt * np.sum(phi * coupling, axis=tuple(range(1, phi.ndim)))
        return s

    def phi_product(self, factors):
        """Observable: product of field values phi[site, tau, component].

        ``factors`` is an iterable of (site coords or index, tau, component).
        """
        idx = []
        for site, tau, comp in factors:
            si = site if np.isscalar(site) else self.lattice.site_index(site)
            idx.append((int(si), self.grid.slice_of(tau), int(comp)))

        def observable(phi: np.ndarray) -> np.ndarray:
            flat = phi.reshape(phi.shape[0], self.lattice.n_sites, self.n_slices, self.d)
            out = np.ones(phi.shape[0])
            for si, sl, comp in idx:
                out = out * flat[:, si, sl, comp]
            return out

        return observable

    def mean_displacement(self, direction=None):
        """Observable: box average of the field along a unit direction."""
        e = np.zeros(self.d)
        if direction is None:
            e[0] = 1.0
        else:
            e = np.asarray(direction, dtype=float)
            e = e / np.linalg.norm(e)

        def observable(phi: np.ndarray) -> np.ndarray:
            proj = np.tensordot(phi, e, axes=([-1], [0]))
            return proj.mean(axis=tuple(range(1, proj.ndim)))

        return observable


# -- action fixed on one configuration -----------------------------------------


def action_integral(phi: FieldConfiguration, ensemble: Ensemble) -> float:
    """Grid action of a single field configuration under the ensemble."""
    return float(ensemble.action(phi.values[None, ...])[0])


# -- estimators ----------------------------------------------------------------


def _batched_chunks(total: int, n_batches: int):
    if total % n_batches != 0:
        raise ValueError(f"sample count must be a multiple of {n_batches} batches")
    per = total // n_batches
    for _ in range(n_batches):
        yield per


def _warn_small_ess(ess: float):
    if ess < ESS_WARN_THRESHOLD:
        warnings.warn(f"effective sample size {ess:.1f} < {ESS_WARN_THRESHOLD:.0f}; "
                      "estimates unreliable", RuntimeWarning, stacklevel=3)


def reweight_expectation(ensemble: Ensemble, observable, n_samples: int, seed: int,
                         n_batches: int = DEFAULT_BATCHES) -> EstimatorResult:
    """Self-normalized importance sampling from the reference Gaussian.

    The estimate is E[A e^-S] / E[e^-S]; the standard error comes from batch
    means over ``n_batches`` batches.
    """
    rng = np.random.default_rng(seed)
    sw = swa = sww = 0.0
    batch_w = np.zeros(n_batches)
    batch_wa = np.zeros(n_batches)
    for b, per in enumerate(_batched_chunks(n_samples, n_batches)):
        done = 0
        while done < per:
            take = min(MAX_CHUNK, per - done)
            phi = ensemble.sampler.sample(rng, take)
            w = np.exp(-ensemble.action(phi))
            av = np.asarray(observable(phi), dtype=float)
            batch_w[b] += w.sum()
            batch_wa[b] += (w * av).sum()
            sww += (w ** 2).sum()
            done += take
    sw = batch_w.sum()
    swa = batch_wa.sum()
    mean = swa / sw
    ratios = batch_wa / batch_w
    stderr = float(np.std(ratios, ddof=1) / math.sqrt(n_batches))
    ess = float(sw ** 2 / sww)
    _warn_small_ess(ess)
    return EstimatorResult(mean=float(mean), stderr=stderr, n_samples=n_samples,
                           seed=seed, ess=ess)


def integrated_autocorrelation_time(trace: np.ndarray) -> float:
    """Initial-positive-sequence estimate of the integrated autocorrelation."""
    x = np.asarray(trace, dtype=float)
    n = len(x)
    x = x - x.mean()
    nfft = int(2 ** math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f))[:n].real / n
    if acov[0] <= 0:
        return 0.5
    rho = acov / acov[0]
    tau = 0.5
    for m in range(0, n // 2 - 1):
        pair = rho[2 * m + 1] + rho[2 * m + 2] if 2 * m + 2 < n else 0.0
        if pair <= 0.0:
            break
        tau += pair
    return tau


def pcn_expectation(ensemble: Ensemble, observable, n_samples: int, seed: int,
                    rho_prop: float = 0.9, burn_in: int | None = None) -> EstimatorResult:
    """Markov chain estimate with the covariance-preserving mixing proposal.

    Proposal phi' = rho phi + sqrt(1 - rho^2) xi with xi a fresh reference
    draw leaves the Gaussian invariant; the Metropolis correction acts on
    exp(-S) alone.  Error bars use the integrated autocorrelation time.
    """
    if not (0.0 <= rho_prop < 1.0):
        raise ValueError("mixing parameter must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    if burn_in is None:
        burn_in = max(200, n_samples // 10)
    mix = math.sqrt(1.0 - rho_prop ** 2)
    phi = ensemble.sampler.sample(rng, 1)
    s = float(ensemble.action(phi)[0])
    trace = np.empty(n_samples)
    for step in range(burn_in + n_samples):
        prop = rho_prop * phi + mix * ensemble.sampler.sample(rng, 1)
        s_prop = float(ensemble.action(prop)[0])
        if math.log(rng.uniform()) < s - s_prop:
            phi, s = prop, s_prop
        if step >= burn_in:
            trace[step - burn_in] = observable(phi)[0]
    tau = integrated_autocorrelation_time(trace)
    var = float(np.var(trace, ddof=1))
    ess = n_samples / (2.0 * tau)
    _warn_small_ess(ess)
    return EstimatorResult(mean=float(trace.mean()),
                           stderr=math.sqrt(var * 2.0 * tau / n_samples),
                           n_samples=n_samples, seed=seed, ess=ess)


def expectation(ensemble: Ensemble, observable, n_samples: int, seed: int,
                backend: str = "reweight", **kwargs) -> EstimatorResult:
    """Gibbs expectation of a bounded-evaluation observable."""
    if backend == "reweight":
        return reweight_expectation(ensemble, observable, n_samples, seed, **kwargs)
    if backend == "mcmc":
        return pcn_expectation(ensemble, observable, n_samples, seed, **kwargs)
    raise ValueError(f"unknown backend {backend!r}")


def truncated_two_point(ensemble: Ensemble, p1, p2, n_samples: int, seed: int,
                        n_batches: int = DEFAULT_BATCHES) -> EstimatorResult:
    """Connected two-point function with jackknife error over batches."""
    obs_a = ensemble.phi_product([p1])
    obs_b = ensemble.phi_product([p2])
    rng = np.random.default_rng(seed)
    cols = np.zeros((n_batches, 4))  # w, wa, wb, wab
    for b, per in enumerate(_batched_chunks(n_samples, n_batches)):
        done = 0
        while done < per:
            take = min(MAX_CHUNK, per - done)
            phi = ensemble.sampler.sample(rng, take)
            w = np.exp(-ensemble.action(phi))
            av, bv = obs_a(phi), obs_b(phi)
            cols[b] += (w.sum(), (w * av).sum(), (w * bv).sum(), (w * av * bv).sum())
            done += take
    total = cols.sum(axis=0)

    def connected(c):
        return c[3] / c[0] - (c[1] / c[0]) * (c[2] / c[0])

    k_full = connected(total)
    leave_one = np.array([connected(total - cols[b]) for b in range(n_batches)])
    stderr = math.sqrt((n_batches - 1) / n_batches *
                       float(np.sum((leave_one - leave_one.mean()) ** 2)))
    ess = float(total[0] ** 2 / np.sum(cols[:, 0] ** 2) * n_batches)
    return EstimatorResult(mean=float(k_full), stderr=stderr,
                           n_samples=n_samples, seed=seed, ess=ess)


def two_point_table(ensemble: Ensemble, time_lag: int, n_samples: int, seed: int,
                    n_batches: int = DEFAULT_BATCHES):
    """Translation-averaged connected correlations for all site displacements.

    Returns (K, K_err) arrays indexed by the displacement in FFT order; uses
    the space-time autocorrelation of each sample, so every site and time
    origin contributes.  Periodic boxes only.
    """
    if ensemble.lattice.boundary is not Boundary.PERIODIC:
        raise ValueError("translation averaging needs a periodic box")
    if ensemble.d != 1:
        raise ValueError("translation-averaged tables are single-component")
    rng = np.random.default_rng(seed)
    nu = ensemble.lattice.nu
    shape = ensemble.lattice.dims
    norm = ensemble.lattice.n_sites * ensemble.n_slices
    batch = np.zeros((n_batches, 3) + shape)  # w, w*R(dx), w*mean (broadcast)
    for b, per in enumerate(_batched_chunks(n_samples, n_batches)):
        done = 0
        while done < per:
            take = min(MAX_CHUNK, per - done)
            phi = ensemble.sampler.sample(rng, take)[..., 0]
            w = np.exp(-ensemble.action(phi[..., None]))
            axes = tuple(range(1, nu + 2))
            f = np.fft.fftn(phi, axes=axes)
            corr = np.fft.ifftn(f * np.conj(f), axes=axes).real / norm
            r = corr[..., time_lag]
            m = phi.mean(axis=axes)
            batch[b, 0] += w.sum()
            batch[b, 1] += np.tensordot(w, r, axes=(0, 0))
            batch[b, 2] += (w * m).sum()
            done += take
    total = batch.sum(axis=0)

    def connected(c):
        return c[1] / c[0] - (c[2] / c[0]) ** 2

    k_full = connected(total)
    leave = np.stack([connected(total - batch[b]) for b in range(n_batches)])
    k_err = np.sqrt((n_batches - 1) / n_batches *
                    np.sum((leave - leave.mean(axis=0)) ** 2, axis=0))
    return k_full, k_err


@dataclass(frozen=True)
class ClusteringFit:
    rate: float
    intercept: float
    residuals: np.ndarray
    distances: np.ndarray
    values: np.ndarray
    errors: np.ndarray | None
    reference_rate: float


def fit_exponential_decay(distances, values, errors=None):
    """Weighted least-squares fit of log|K| = intercept - rate * distance."""
    d = np.asarray(distances, dtype=float)
    k = np.asarray(values, dtype=float)
    logs = np.log(np.abs(k))
    if errors is not None:
        sig = np.asarray(errors, dtype=float) / np.abs(k)
        wts = 1.0 / sig ** 2
    else:
        wts = np.ones_like(logs)
    a = np.vstack([np.ones_like(d), -d]).T
    w = np.sqrt(wts)
    coef, *_ = np.linalg.lstsq(a * w[:, None], logs * w, rcond=None)
    fit = a @ coef
    return float(coef[1]), float(coef[0]), logs - fit


def clustering_fit(ensemble: Ensemble, max_dist: int, n_samples: int, seed: int,
                   time_lag: int = 0) -> ClusteringFit:
    """Fit the spatial decay rate of the connected two-point function.

    Refuses to fit whenever any correlation estimate along the fit range is
    within two standard errors of zero.  The reference rate is the fit of the
    exact harmonic kernel over the same distances; sqrt(a) is the idealized
    decay constant quoted alongside it.
    """
    if min(ensemble.lattice.dims) < 4 * max_dist:
        raise ValueError("need box side >= 4 * max_dist for a clean fit window")
    k_grid, e_grid = two_point_table(ensemble, time_lag, n_samples, seed)
    dists = np.arange(1, max_dist + 1)
    k = np.array([k_grid[(d,) + (0,) * (ensemble.lattice.nu - 1)] for d in dists])
    e = np.array([e_grid[(d,) + (0,) * (ensemble.lattice.nu - 1)] for d in dists])
    if np.any(np.abs(k) <= 2.0 * e):
        raise RuntimeError("two-point estimates are consistent with zero; "
                           "cannot fit a decay rate")
    rate, intercept, residuals = fit_exponential_decay(dists, k, e)
    tau = time_lag * ensemble.grid.delta_tau
    g = np.array([ensemble.kernel.closed((d,) + (0,) * (ensemble.lattice.nu - 1),
                                         (0,) * ensemble.lattice.nu, tau)
                  for d in dists])
    ref_rate, _, _ = fit_exponential_decay(dists, g)
    return ClusteringFit(rate=rate, intercept=intercept, residuals=residuals,
                         distances=dists, values=k, errors=e,
                         reference_rate=ref_rate)


# -- order parameter -------------------------------------------------------------


def order_parameter(make_ensemble, alpha: float, h_values, lattice_sizes,
                    n_samples: int, seed: int):
    """Mean displacement per site (in unrescaled units) over an (h, N) scan.

    ``make_ensemble(n, h)`` builds the ensemble at box side n and bare field
    magnitude h.  Rows report sigma = alpha * <box mean of x . e> so the
    double-limit diagnostic (largest box, smallest field) is the last row of
    the returned list.
    """
    rows = []
    for i_n, n in enumerate(lattice_sizes):
        for i_h, h in enumerate(h_values):
            ens = make_ensemble(n, h)
            res = expectation(ens, ens.mean_displacement(), n_samples,
                              seed + 7919 * i_n + 101 * i_h)
            rows.append({
                "n": n, "h": h,
                "sigma": alpha * res.mean,
                "stderr": abs(alpha) * res.stderr,
                "ess": res.ess,
            })
    return rows


# -- uniqueness gap ---------------------------------------------------------------


def _tilt_vector(ensemble: Ensemble) -> np.ndarray:
    c = ensemble._boundary_coupling
    if c is None:
        return np.zeros(ensemble.lattice.dims + (ensemble.n_slices, ensemble.d))
    return c


def boundary_mean_shift(ensemble: Ensemble) -> np.ndarray:
    """Exact harmonic response of the field mean to the boundary trajectories.

    Under the Gaussian reference, tilting by exp(+ c . phi dt) shifts the mean
    to C (c dt); the anharmonic correction on top of it is estimated by Monte
    Carlo in ``uniqueness_gap``.
    """
    c = _tilt_vector(ensemble) * ensemble.grid.delta_tau
    return ensemble.sampler.apply_covariance(c)


def gap_estimate(ens_xi: Ensemble, ens_eta: Ensemble, site, tau: float,
                 n_samples: int, seed: int, component: int = 0,
                 n_batches: int = DEFAULT_BATCHES):
    """Difference of <phi_site(tau)> under two boundary conditions.

    Both expectations are computed on common reference draws after exactly
    absorbing the linear boundary tilt into a Gaussian mean shift, so the
    harmonic part of the gap carries no Monte Carlo noise at all.
    """
    si = ens_xi.lattice.site_index(site) if not np.isscalar(site) else int(site)
    sl = ens_xi.grid.slice_of(tau)
    shift_xi = boundary_mean_shift(ens_xi)
    shift_eta = boundary_mean_shift(ens_eta)
    flat_xi = shift_xi.reshape(ens_xi.lattice.n_sites, ens_xi.n_slices, ens_xi.d)
    flat_eta = shift_eta.reshape(*flat_xi.shape)
    exact = float(flat_xi[si, sl, component] - flat_eta[si, sl, component])

    rng = np.random.default_rng(seed)
    cols = np.zeros((n_batches, 4))  # w_xi, w_xi * phi0, w_eta, w_eta * phi0
    dt = ens_xi.grid.delta_tau
    for b, per in enumerate(_batched_chunks(n_samples, n_batches)):
        done = 0
        while done < per:
            take = min(MAX_CHUNK, per - done)
            psi = ens_xi.sampler.sample(rng, take)
            sum_axes = tuple(range(1, psi.ndim - 1))
            w_xi = np.exp(-dt * ens_xi.potential_density(psi + shift_xi).sum(axis=sum_axes))
            w_eta = np.exp(-dt * ens_eta.potential_density(psi + shift_eta).sum(axis=sum_axes))
            phi0 = psi.reshape(take, -1, ens_xi.n_slices, ens_xi.d)[:, si, sl, component]
            cols[b] += (w_xi.sum(), (w_xi * phi0).sum(),
                        w_eta.sum(), (w_eta * phi0).sum())
            done += take
    total = cols.sum(axis=0)

    def correction(c):
        return c[1] / c[0] - c[3] / c[2]

    corr = correction(total)
    leave = np.array([correction(total - cols[b]) for b in range(n_batches)])
    stderr = math.sqrt((n_batches - 1) / n_batches *
                       float(np.sum((leave - leave.mean()) ** 2)))
    return exact + corr, stderr, exact


def uniqueness_gap(make_ensemble_pair, site_of, tau: float, lattice_sizes,
                   n_samples: int, seed: int):
    """Scan the boundary-condition gap of <phi(site, tau)> over growing boxes.

    ``make_ensemble_pair(n)`` returns the two tempered ensembles; ``site_of(n)``
    picks the probe site.  Rows report the gap, its error, the exact harmonic
    part, and the probe's distance to the boundary.
    """
    rows = []
    for n in lattice_sizes:
        ens_xi, ens_eta = make_ensemble_pair(n)
        site = site_of(n)
        gap, err, harmonic = gap_estimate(ens_xi, ens_eta, site, tau,
                                          n_samples, seed + n)
        coords = site if not np.isscalar(site) else ens_xi.lattice.site_coords(site)
        dist = 1 + min(min(c, dim - 1 - c) for c, dim in zip(coords, ens_xi.lattice.dims))
        rows.append({"n": n, "gap": gap, "stderr": err,
                     "harmonic_part": harmonic, "dist_to_boundary": dist})
    return rows


# -- doubled measure --------------------------------------------------------------


def doubled_measure_correlation(ensemble: Ensemble, p1, p2, y_field: np.ndarray,
                                n_samples: int, seed: int,
                                n_batches: int = DEFAULT_BATCHES) -> EstimatorResult:
    """<x(p1) x(p2)> under the doubled-potential auxiliary measure.

    The auxiliary weight replaces the one-site potential by
    b_m [e^{-d (x+y)^2/4} + e^{-d (x-y)^2/4}] at fixed trajectories y; the
    reference Gaussian keeps zero boundary values.  Estimates should not
    degrade as y grows.
    """
    if ensemble.bc.kind is BoundaryKind.PERIODIC:
        raise ValueError("the auxiliary measure is defined over zero boundary values")
    obs = ensemble.phi_product([p1, p2])
    rng = np.random.default_rng(seed)
    dt = ensemble.grid.delta_tau
    y = np.asarray(y_field, dtype=float)
    cols = np.zeros((n_batches, 2))
    sww = 0.0
    for b, per in enumerate(_batched_chunks(n_samples, n_batches)):
        done = 0
        while done < per:
            take = min(MAX_CHUNK, per - done)
            x = ensemble.sampler.sample(rng, take)
            sq_plus = np.sum((x + y) ** 2, axis=-1)
            sq_minus = np.sum((x - y) ** 2, axis=-1)
            v = ensemble.b_m * (np.exp(-0.25 * ensemble.delta_m * sq_plus) +
                                np.exp(-0.25 * ensemble.delta_m * sq_minus))
            w = np.exp(-dt * v.sum(axis=tuple(range(1, v.ndim))))
            cols[b] += (w.sum(), (w * obs(x)).sum())
            sww += (w ** 2).sum()
            done += take
    total = cols.sum(axis=0)
    mean = total[1] / total[0]
    ratios = cols[:, 1] / cols[:, 0]
    stderr = float(np.std(ratios, ddof=1) / math.sqrt(n_batches))
    ess = float(total[0] ** 2 / sww)
    _warn_small_ess(ess)
    return EstimatorResult(mean=float(mean), stderr=stderr, n_samples=n_samples,
                           seed=seed, ess=ess)
