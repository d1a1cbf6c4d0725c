"""Energy-stable time stepping for the H^-1 gradient flow ``c_t = Delta mu``.

One step of size ``dt`` minimizes over mean-preserving ``c+`` the strictly
convex functional

    1/(2 dt) |c+ - c|^2_{H^-1} + 1/2 (L c+, c+) + theta/2 |grad c+|^2
        + sum phi(c+) - d (c, c+)

whose optimality condition is ``c+ = c + dt Delta_h mu+`` with
``mu+ = theta (-Delta_h) c+ + L_h c+ + phi'(c+) - d c``.  The convex part is
implicit and the concave part ``-(d/2) c^2`` explicit, so the discrete
energy can only decrease.  ``fully_implicit`` uses ``-d c+`` instead.

Newton's method on the mean-constrained (bordered) system keeps iterates
strictly inside (a, b) by step halving, then enforces an Armijo decrease.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft
import scipy.linalg as la

from .diagnostics import energy
from .errors import ConvergenceError, StepRejected, ValidationError
from .operators import (
    CouplingMatrix,
    Grid,
    State,
    _neumann_eigenvalues,
    neumann_laplacian,
    neumann_pinv_matrix,
    nonlocal_matrix,
)
from .potential import Potential

__all__ = [
    "NewtonConfig",
    "SchemeConfig",
    "StepReport",
    "Stepper",
    "Trajectory",
    "run",
    "mollify_initial",
    "smooth_field",
    "random_initial",
    "kappa",
]

SPLITTINGS = ("convex_split", "fully_implicit")


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    backtrack_factor: float = 0.5
    feasibility_margin: float | None = None  # default 1e-9 (b - a)


@dataclass
class SchemeConfig:
    dt: float
    theta_reg: float = 0.0
    splitting: str = "convex_split"
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def validate(self, potential: Potential | None = None) -> None:
        problems = []
        if not self.dt > 0:
            problems.append(f"dt must be positive, got {self.dt}")
        if not self.theta_reg >= 0:
            problems.append(f"theta_reg must be nonnegative, got {self.theta_reg}")
        if self.splitting not in SPLITTINGS:
            problems.append(f"splitting must be one of {SPLITTINGS}, got {self.splitting!r}")
        nw = self.newton
        if not nw.tol > 0:
            problems.append("newton.tol must be positive")
        if not (isinstance(nw.max_iter, int) and nw.max_iter >= 1):
            problems.append("newton.max_iter must be a positive integer")
        if not 0 < nw.backtrack_factor < 1:
            problems.append("newton.backtrack_factor must lie in (0, 1)")
        if potential is not None and nw.feasibility_margin is not None:
            width = potential.b - potential.a
            if not 0 < nw.feasibility_margin < width / 4:
                problems.append(f"newton.feasibility_margin must lie in (0, {width / 4})")
        if problems:
            raise ValidationError(problems)

    def margin(self, potential: Potential) -> float:
        if self.newton.feasibility_margin is not None:
            return self.newton.feasibility_margin
        return 1e-9 * (potential.b - potential.a)


@dataclass
class StepReport:
    newton_iters: int
    residual: float
    energy_before: float
    energy_after: float
    mu: np.ndarray
    mass_drift: float
    grad_mu_sq: float
    dt: float


def kappa(t):
    """Time weight ``(t / (1 + t))^(1/2)`` used on reported time series."""
    t = np.asarray(t, dtype=float)
    return np.sqrt(t / (1.0 + t))


class Stepper:
    """Precomputed matrices for stepping one (grid, coupling, potential) setup."""

    def __init__(self, coupling: CouplingMatrix, potential: Potential, cfg: SchemeConfig):
        cfg.validate(potential)
        self.coupling = coupling
        self.grid: Grid = coupling.grid
        self.potential = potential
        self.cfg = cfg
        self.L = nonlocal_matrix(coupling)
        self.A_sparse = neumann_laplacian(self.grid)
        self.A = self.A_sparse.toarray()
        self.Ainv = neumann_pinv_matrix(self.grid)
        self.static = self.L + cfg.theta_reg * self.A if cfg.theta_reg > 0 else self.L
        self.margin = cfg.margin(potential)
        self.d = potential.d
        self._B = {}

    # -- helpers -------------------------------------------------------
    def _B_for(self, dt: float) -> np.ndarray:
        B = self._B.get(dt)
        if B is None:
            B = self.Ainv / dt + self.static
            if len(self._B) > 8:
                self._B.clear()
            self._B[dt] = B
        return B

    def chemical_potential(self, c: np.ndarray, c_explicit: np.ndarray | None = None) -> np.ndarray:
        """``theta (-Delta_h) c + L_h c + phi'(c) - d c_explicit`` (``c_explicit`` defaults to c)."""
        ce = c if c_explicit is None else c_explicit
        w = c - c[0]
        return self.static @ w + self.potential.phi_prime(c) - self.d * ce

    def grad_sq(self, mu: np.ndarray) -> float:
        """``||grad_h mu||^2 = (A mu, mu)_h``."""
        return float(np.dot(self.A_sparse @ mu, mu) * self.grid.volume)

    def energy(self, c: np.ndarray) -> float:
        return energy(c, self.coupling, self.potential, self.cfg.theta_reg).total

    def _objective(self, x, c, dt):
        dx = x - c
        pot = self.potential
        val = 0.5 * dx @ (self.Ainv @ dx) / dt + 0.5 * (x - x[0]) @ (self.static @ (x - x[0]))
        val += float(np.sum(pot.phi(x)))
        if self.cfg.splitting == "convex_split":
            val -= self.d * float(np.dot(c, x))
        else:
            val -= 0.5 * self.d * float(np.dot(x, x))
        return val

    def _gradient(self, x, c, dt):
        dx = x - c
        g = self.Ainv @ dx / dt + self.static @ (x - x[0]) + self.potential.phi_prime(x)
        return g - self.d * (c if self.cfg.splitting == "convex_split" else x)

    # -- one step --------------------------------------------------------
    def step(self, state: State, dt: float | None = None) -> tuple[State, StepReport]:
        dt = self.cfg.dt if dt is None else float(dt)
        pot = self.potential
        nw = self.cfg.newton
        c = np.asarray(state.c, dtype=float).ravel()
        lo, hi = pot.a + self.margin, pot.b - self.margin
        if np.any((c <= lo) | (c >= hi)):
            raise ValidationError("state is not strictly inside the feasible interval")
        B = self._B_for(dt)
        N = c.size
        x = c.copy()
        E_before = self.energy(c)
        iters = 0
        res = np.inf
        sigma = max(np.trace(B) / N, 1.0) / N
        fully = self.cfg.splitting == "fully_implicit"
        while True:
            g = self._gradient(x, c, dt)
            r = g - g.mean()
            scale = 1.0 + np.max(np.abs(pot.phi_prime(x))) + np.max(np.abs(self.Ainv @ (x - c))) / dt
            res = float(np.max(np.abs(r)))
            if res <= nw.tol * scale:
                break
            if iters >= nw.max_iter:
                raise StepRejected(f"Newton did not converge in {nw.max_iter} iterations", residual=res)
            diag = pot.phi_second(x) - (self.d if fully else 0.0)
            H = B.copy()
            H[np.diag_indices(N)] += diag + 0.0
            H += sigma
            try:
                ch = la.cho_factor(H, check_finite=False)
                z1 = la.cho_solve(ch, g, check_finite=False)
                z2 = la.cho_solve(ch, np.ones(N), check_finite=False)
            except la.LinAlgError:
                z1 = la.solve(H, g, assume_a="sym")
                z2 = la.solve(H, np.ones(N), assume_a="sym")
            delta = -(z1 - (z1.sum() / z2.sum()) * z2)
            delta -= delta.mean()
            # feasibility backtracking
            t = 1.0
            for _ in range(200):
                xn = x + t * delta
                if np.all((xn > lo) & (xn < hi)):
                    break
                t *= nw.backtrack_factor
            else:
                raise StepRejected("no feasible Newton update", residual=res)
            # Armijo decrease of the step functional
            f0 = self._objective(x, c, dt)
            slope = float(np.dot(g, delta))
            for _ in range(60):
                xn = x + t * delta
                fn = self._objective(xn, c, dt)
                if fn <= f0 + 1e-4 * t * slope + 1e-14 * (1 + abs(f0)):
                    break
                t *= nw.backtrack_factor
            else:
                raise StepRejected("line search failed", residual=res)
            x = xn - (xn.mean() - c.mean())
            iters += 1
        mu = self.chemical_potential(x, None if fully else c)
        E_after = self.energy(x)
        new_state = State(x, state.m, state.t + dt)
        report = StepReport(
            newton_iters=iters,
            residual=res,
            energy_before=E_before,
            energy_after=E_after,
            mu=mu,
            mass_drift=float(abs(x.mean() - c.mean())),
            grad_mu_sq=self.grad_sq(mu),
            dt=dt,
        )
        return new_state, report


@dataclass
class Trajectory:
    """Per-step samples of one run."""

    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    max_c: list = field(default_factory=list)
    min_c: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    grad_mu_sq: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    states: list = field(default_factory=list)
    halvings: int = 0
    final: State | None = None

    def record(self, t, E, c, iters, gmu, diss):
        self.times.append(float(t))
        self.energies.append(float(E))
        self.masses.append(float(np.mean(c)))
        self.max_c.append(float(np.max(c)))
        self.min_c.append(float(np.min(c)))
        self.newton_iters.append(int(iters))
        self.grad_mu_sq.append(float(gmu))
        self.dissipation.append(float(diss))

    def rows(self):
        return zip(self.times, self.masses, self.energies, self.dissipation, self.max_c, self.min_c,
                   self.newton_iters)


def run(initial: State, stepper: Stepper, T_final: float, sinks: Sequence[Callable] = (),
        store_every: int = 0, max_halvings: int = 20) -> Trajectory:
    """March ``initial`` to ``T_final``.

    Every accepted step is recorded; ``sinks`` are called as
    ``sink(trajectory, state, step_index)`` after each record.  A rejected
    step is retried as two half steps, recursively up to ``max_halvings``
    levels, after which :class:`ConvergenceError` is raised.
    """
    pot = stepper.potential
    c0 = np.asarray(initial.c, dtype=float).ravel()
    if np.any((c0 <= pot.a) | (c0 >= pot.b)):
        raise ValidationError("initial energy is infinite: values must lie strictly inside (a, b)")
    traj = Trajectory()
    mu0 = stepper.chemical_potential(c0)
    g_prev = stepper.grad_sq(mu0)
    diss = 0.0
    state = State(c0.copy(), initial.m, initial.t)
    traj.record(state.t, stepper.energy(c0), c0, 0, g_prev, diss)
    if store_every:
        traj.states.append(state)
    for sink in sinks:
        sink(traj, state, 0)
    dt = stepper.cfg.dt
    t0 = initial.t
    n_steps = int(math.ceil((T_final - 1e-12 * max(dt, T_final)) / dt)) if T_final > 0 else 0
    k = 0

    def advance(st, h, depth):
        nonlocal diss, g_prev, k
        try:
            new, rep = stepper.step(st, h)
        except StepRejected as exc:
            if depth >= max_halvings:
                raise ConvergenceError(f"step rejected after {max_halvings} halvings at t={st.t}",
                                       residual=exc.residual) from exc
            traj.halvings += 1
            mid = advance(st, 0.5 * h, depth + 1)
            return advance(mid, 0.5 * h, depth + 1)
        diss += 0.5 * h * (g_prev + rep.grad_mu_sq)
        g_prev = rep.grad_mu_sq
        k += 1
        traj.record(new.t, rep.energy_after, new.c, rep.newton_iters, rep.grad_mu_sq, diss)
        if store_every and k % store_every == 0:
            traj.states.append(new)
        for sink in sinks:
            sink(traj, new, k)
        return new

    for n in range(n_steps):
        target = min(t0 + (n + 1) * dt, t0 + T_final)
        h = target - state.t
        state = advance(state, h, 0)
        state.t = target
        traj.times[-1] = target
    traj.final = state
    return traj


def smooth_field(state: State, grid: Grid, eps: float) -> State:
    """Gaussian smoothing of width ``eps``; bounds and the mean are preserved.

    Implemented as the discrete heat semigroup ``exp(-eps^2/2 (-Delta_h))``,
    diagonal in the cosine basis.
    """
    c = np.asarray(state.c, dtype=float).ravel()
    if eps <= 0:
        return State(c.copy(), state.m, state.t)
    lam = _neumann_eigenvalues(grid)
    chat = scipy.fft.dctn(c.reshape(grid.cells), type=2, norm="ortho")
    out = scipy.fft.idctn(chat * np.exp(-0.5 * eps**2 * lam), type=2, norm="ortho").ravel()
    out += state.m - out.mean()
    return State(out, state.m, state.t)


def mollify_initial(state: State, grid: Grid, theta_reg: float) -> State:
    """Smoothing of width ``max(theta^(1/4) diam / 10, h)``; identity for ``theta = 0``."""
    if theta_reg <= 0:
        return State(np.asarray(state.c, dtype=float).ravel().copy(), state.m, state.t)
    eps = max(theta_reg**0.25 * grid.diam / 10.0, float(grid.h.min()))
    return smooth_field(state, grid, eps)


def random_initial(grid: Grid, m: float, amplitude: float, seed: int = 0) -> State:
    """``m`` plus mean-zero uniform noise in [-amplitude, amplitude] (Philox stream)."""
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.uniform(-amplitude, amplitude, size=grid.N)
    c = m + (noise - noise.mean())
    c += m - c.mean()
    return State(c, m, 0.0)
