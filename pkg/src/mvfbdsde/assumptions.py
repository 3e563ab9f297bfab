"""Sampling-based certification of the coefficient conditions.

"Pass" means no violation was found over a structured sample sweep that always
includes axis-aligned deterministic displacements, random zero-mean
displacements, and mean shifts, at several scales.  Compared ensembles share
atoms (common random numbers), so the monotonicity functional is evaluated on
an explicit coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .measure import EmpiricalLaw, wasserstein2
from .model import (
    CoefficientSet,
    Dimensions,
    Quad,
    eval_system,
    pairing,
    quad_law,
)
from .paths import TimeGrid

VIOLATION_TOL = 1e-9


@dataclass
class Witness:
    """Worst-case sample for one checked inequality."""

    kind: str
    margin: float
    t: float
    scale: float
    detail: str = ""
    base: Quad | None = None
    displacement: Quad | None = None


@dataclass
class AssumptionReport:
    estimated_C: float | None = None
    estimated_gamma: float | None = None
    monotonicity_margin: float | None = None
    alpha1_margin: float | None = None
    passes: dict[str, bool] = field(default_factory=dict)
    witnesses: list[Witness] = field(default_factory=list)
    samples_used: int = 0

    @property
    def ok(self) -> bool:
        return all(self.passes.values())

    def text(self) -> str:
        lines = []
        for key, value in sorted(self.passes.items()):
            lines.append(f"{key}: {'pass' if value else 'FAIL'}")
        if self.estimated_C is not None:
            lines.append(f"C_hat = {self.estimated_C:.6g}")
        if self.estimated_gamma is not None:
            lines.append(f"gamma_hat = {self.estimated_gamma:.6g}")
        if self.monotonicity_margin is not None:
            lines.append(f"monotonicity_margin = {self.monotonicity_margin:.6g}")
        if self.alpha1_margin is not None:
            lines.append(f"terminal_margin = {self.alpha1_margin:.6g}")
        lines.append(f"samples_used = {self.samples_used}")
        for w in self.witnesses[:4]:
            lines.append(
                f"witness[{w.kind}] margin={w.margin:.6g} t={w.t:.3g} "
                f"scale={w.scale:.3g} {w.detail}"
            )
        return "\n".join(lines)

    def kv(self) -> dict[str, str]:
        out = {f"pass.{k}": str(v).lower() for k, v in self.passes.items()}
        for key in ("estimated_C", "estimated_gamma", "monotonicity_margin",
                    "alpha1_margin"):
            val = getattr(self, key)
            if val is not None:
                out[key] = format(float(val), ".17g")
        out["samples_used"] = str(self.samples_used)
        return out


@dataclass
class PairSampler:
    """Structured generator of coupled ensemble pairs (v1, v2 = v1 + dv)."""

    dims: Dimensions
    atoms: int = 64
    seed: int = 0
    t_max: float = 1.0
    scales: tuple[float, ...] = (0.25, 1.0, 3.0)

    def _random_quad(self, rng: np.random.Generator, scale: float) -> Quad:
        m, d = self.atoms, self.dims.d
        return Quad(
            scale * rng.standard_normal((m, d)),
            scale * rng.standard_normal((m, d)),
            scale * rng.standard_normal((m, d, self.dims.d_b)),
            scale * rng.standard_normal((m, d, self.dims.d_w)),
        )

    def _axes(self) -> list[tuple[str, tuple]]:
        axes: list[tuple[str, tuple]] = []
        for i in range(self.dims.d):
            axes.append(("y", (i,)))
            axes.append(("Y", (i,)))
        for i in range(self.dims.d):
            for j in range(self.dims.d_b):
                axes.append(("z", (i, j)))
            for j in range(self.dims.d_w):
                axes.append(("Z", (i, j)))
        return axes

    def pairs(self, n_pairs: int) -> Iterator[tuple[float, Quad, Quad, str, float]]:
        """Yields (t, v1, v2, kind, scale); v2 shares v1's atoms."""
        rng = np.random.default_rng(self.seed)
        axes = self._axes()
        kinds = ("axis", "random", "deterministic", "mean_shift", "decoupled")
        for idx in range(n_pairs):
            kind = kinds[idx % len(kinds)]
            scale = self.scales[(idx // len(kinds)) % len(self.scales)]
            t = float(rng.uniform(0.0, self.t_max))
            base = self._random_quad(rng, scale)
            if kind == "axis":
                block, pos = axes[idx % len(axes)]
                dv = Quad.zeros(self.atoms, self.dims)
                getattr(dv, block)[(slice(None), *pos)] = scale * float(
                    rng.choice([-1.0, 1.0])
                ) * float(rng.uniform(0.5, 2.0))
            elif kind == "deterministic":
                shift = self._random_quad(rng, scale)
                dv = Quad(
                    np.broadcast_to(shift.y[:1], shift.y.shape).copy(),
                    np.broadcast_to(shift.Y[:1], shift.Y.shape).copy(),
                    np.broadcast_to(shift.z[:1], shift.z.shape).copy(),
                    np.broadcast_to(shift.Z[:1], shift.Z.shape).copy(),
                )
            elif kind == "random":
                dv = self._random_quad(rng, scale)
                dv = Quad(
                    dv.y - dv.y.mean(axis=0),
                    dv.Y - dv.Y.mean(axis=0),
                    dv.z - dv.z.mean(axis=0),
                    dv.Z - dv.Z.mean(axis=0),
                )
            elif kind == "mean_shift":
                rho = float(rng.uniform(0.3, 1.7))
                shift = self._random_quad(rng, scale)
                dv = Quad(
                    (rho - 1.0) * base.y + shift.y[:1],
                    (rho - 1.0) * base.Y + shift.Y[:1],
                    (rho - 1.0) * base.z + shift.z[:1],
                    (rho - 1.0) * base.Z + shift.Z[:1],
                )
            else:  # decoupled: an independent cloud
                other = self._random_quad(rng, scale)
                dv = Quad(
                    other.y - base.y,
                    other.Y - base.Y,
                    other.z - base.z,
                    other.Z - base.Z,
                )
            v2 = Quad(base.y + dv.y, base.Y + dv.Y, base.z + dv.z, base.Z + dv.Z)
            yield t, base, v2, kind, scale


def _quad_add(a: Quad, b: Quad, factor: float = 1.0) -> Quad:
    return Quad(
        a.y + factor * b.y, a.Y + factor * b.Y, a.z + factor * b.z, a.Z + factor * b.Z
    )


def _sq_norms(dv: Quad) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return (
        np.sum(dv.y**2, axis=1),
        np.sum(dv.Y**2, axis=1),
        np.sum(dv.z**2, axis=(1, 2)),
        np.sum(dv.Z**2, axis=(1, 2)),
    )


def _w2_between(v1: Quad, v2: Quad) -> float:
    a = EmpiricalLaw.from_samples(v1.flat())
    b = EmpiricalLaw.from_samples(v2.flat())
    if a.dim == 1:
        return wasserstein2(a, b, "exact_1d")
    return wasserstein2(a, b, "assignment")


@dataclass
class LipschitzEstimate:
    c_hat: float
    gamma_hat: float
    violations: list[Witness]
    gamma_ok: bool = True
    samples_used: int = 0

    def __iter__(self):  # allows tuple-style unpacking
        return iter((self.c_hat, self.gamma_hat, self.violations))


def estimate_lipschitz(
    coeffs: CoefficientSet,
    sampler: PairSampler,
    n_pairs: int = 2000,
) -> LipschitzEstimate:
    """Empirical Lipschitz constants of the coefficient maps.

    C_hat is the largest observed ratio for the drift pair (f, F) jointly and
    for the terminal map; gamma_hat is the smallest weight that closes the
    squared bounds for the two noise maps once the C_hat part is subtracted.
    A sample needing gamma >= 1/2 is recorded as a violation.
    """
    eps = 1e-12
    c_hat = 0.0
    samples = []
    for t, v1, v2, kind, scale in sampler.pairs(n_pairs):
        if np.allclose(v1.flat(), v2.flat()):
            continue
        law1, law2 = quad_law(v1), quad_law(v2)
        w2 = _w2_between(v1, v2)
        law_y1 = EmpiricalLaw.from_samples(v1.y)
        law_y2 = EmpiricalLaw.from_samples(v2.y)
        w2y = wasserstein2(
            law_y1, law_y2, "exact_1d" if v1.y.shape[1] == 1 else "assignment"
        )
        # point and measure arguments are independent in the bound: probe the
        # coupled displacement, the point-only one, and the measure-only one
        combos = (
            ((v1, law1, law_y1), (v2, law2, law_y2), w2, w2y, kind),
            ((v1, law1, law_y1), (v2, law1, law_y1), 0.0, 0.0, kind + "/points"),
            ((v1, law1, law_y1), (v1, law2, law_y2), w2, w2y, kind + "/laws"),
        )
        for (va, la, lya), (vb, lb, lyb), dist, dist_y, tag in combos:
            a1 = eval_system(coeffs, t, va, la)
            a2 = eval_system(coeffs, t, vb, lb)
            dv = Quad(vb.y - va.y, vb.Y - va.Y, vb.z - va.z, vb.Z - va.Z)
            ny, n_big_y, nz, n_big_z = _sq_norms(dv)
            dv_norm = np.sqrt(ny + n_big_y + nz + n_big_z)
            df = a2[0] - a1[0]
            d_big_f = a2[2] - a1[2]
            num = np.sqrt(np.sum(df**2, axis=1) + np.sum(d_big_f**2, axis=1))
            den = dv_norm + dist
            mask = den > eps
            if np.any(mask):
                c_hat = max(c_hat, float(np.max(num[mask] / den[mask])))
            h1 = coeffs.h(va.y, lya)
            h2 = coeffs.h(vb.y, lyb)
            den_h = np.sqrt(ny) + dist_y
            num_h = np.linalg.norm(h2 - h1, axis=1)
            mask = den_h > eps
            if np.any(mask):
                c_hat = max(c_hat, float(np.max(num_h[mask] / den_h[mask])))
            samples.append((t, tag, scale, a1, a2, dv, ny, n_big_y, nz, n_big_z, dist))

    if not samples:
        raise ValueError("degenerate sampler: no distinct pairs produced")
    gamma_hat = 0.0
    violations: list[Witness] = []
    for t, kind, scale, a1, a2, dv, ny, n_big_y, nz, n_big_z, w2 in samples:
        d_big_g = np.sum((a2[3] - a1[3]) ** 2, axis=(1, 2))  # backward noise G
        dg = np.sum((a2[1] - a1[1]) ** 2, axis=(1, 2))  # forward noise g
        block_for_g_cap = ny + n_big_y + nz  # (y, Y, z) carries the C part of G
        block_for_small = ny + n_big_y + n_big_z  # (y, Y, Z) carries the C part of g
        for lhs, c_block, gamma_block, label in (
            (d_big_g, block_for_g_cap, n_big_z + w2**2, "G"),
            (dg, block_for_small, nz + w2**2, "g"),
        ):
            excess = lhs - c_hat * c_block
            mask = gamma_block > eps
            if np.any(mask):
                need = np.max(np.clip(excess[mask], 0.0, None) / gamma_block[mask])
                gamma_hat = max(gamma_hat, float(need))
                if need >= 0.5:
                    violations.append(
                        Witness(
                            kind=f"lipschitz_{label}",
                            margin=float(need),
                            t=t,
                            scale=scale,
                            detail=f"{kind} displacement needs gamma={need:.4g}",
                        )
                    )
    return LipschitzEstimate(
        c_hat=c_hat,
        gamma_hat=gamma_hat,
        violations=violations,
        gamma_ok=gamma_hat < 0.5,
        samples_used=len(samples),
    )


def _monotonicity_margins(
    coeffs: CoefficientSet,
    t: float,
    v1: Quad,
    v2: Quad,
    theta1: float,
    theta2: float,
    alpha1: float,
    direction: str,
) -> tuple[float, float, float]:
    """(coupling margin, terminal margin, displacement scale^2) at one pair."""
    law1, law2 = quad_law(v1), quad_law(v2)
    a1 = eval_system(coeffs, t, v1, law1)
    a2 = eval_system(coeffs, t, v2, law2)
    dv = Quad(v1.y - v2.y, v1.Y - v2.Y, v1.z - v2.z, v1.Z - v2.Z)
    # pairing uses (F, f, G, g) order against (y, Y, z, Z)
    da = (a1[2] - a2[2], a1[0] - a2[0], a1[3] - a2[3], a1[1] - a2[1])
    functional = float(np.mean(pairing(da, dv)))
    ny, n_big_y, nz, n_big_z = (float(np.mean(s)) for s in _sq_norms(dv))
    quad_scale = ny + n_big_y + nz + n_big_z
    theta_quad = theta1 * (ny + nz) + theta2 * (n_big_y + n_big_z)
    law_y1 = EmpiricalLaw.from_samples(v1.y)
    law_y2 = EmpiricalLaw.from_samples(v2.y)
    dh = coeffs.h(v1.y, law_y1) - coeffs.h(v2.y, law_y2)
    h_pair = float(np.mean(np.sum(dh * dv.y, axis=1)))
    if direction == "A2":
        margin = functional + theta_quad
        margin_h = alpha1 * ny - h_pair
    else:  # A2_prime: functional >= +theta quad, terminal pairing <= -alpha1
        margin = theta_quad - functional
        margin_h = h_pair + alpha1 * ny
    return margin, margin_h, quad_scale


def check_monotonicity(
    coeffs: CoefficientSet,
    theta1: float,
    theta2: float,
    alpha1: float,
    direction: str = "A2",
    sampler: PairSampler | None = None,
    n_pairs: int = 10000,
    local_search: bool = False,
) -> AssumptionReport:
    """Sign check of the coupling functional against the damped quadratic.

    ``A2`` demands E[(dA, dv)] <= -theta1 E[|dy|^2 + |dz|^2]
    - theta2 E[|dY|^2 + |dZ|^2] together with the terminal lower bound on
    alpha1; ``A2_prime`` reverses both inequalities.  Margins are suprema over
    the sampled pairs; positive margin beyond tolerance is a violation.
    """
    if direction not in ("A2", "A2_prime"):
        raise ValueError(f"bad direction {direction!r}")
    if theta1 < 0 or theta2 < 0:
        raise ValueError("theta1, theta2 must be nonnegative")
    if theta1 + theta2 <= 0:
        raise ValueError("need theta1 + theta2 > 0")
    if alpha1 + theta2 <= 0:
        raise ValueError("need alpha1 + theta2 > 0")
    sampler = sampler or PairSampler(coeffs.dims)
    worst: Witness | None = None
    worst_h: Witness | None = None
    margin_sup = -np.inf
    margin_h_sup = -np.inf
    used = 0
    for t, v1, v2, kind, scale in sampler.pairs(n_pairs):
        used += 1
        margin, margin_h, qscale = _monotonicity_margins(
            coeffs, t, v1, v2, theta1, theta2, alpha1, direction
        )
        if margin > margin_sup:
            margin_sup = margin
            worst = Witness(
                kind=f"{direction}_coupling",
                margin=margin,
                t=t,
                scale=scale,
                detail=kind,
                base=v1,
                displacement=v2,
            )
        if margin_h > margin_h_sup:
            margin_h_sup = margin_h
            worst_h = Witness(
                kind=f"{direction}_terminal",
                margin=margin_h,
                t=t,
                scale=scale,
                detail=kind,
                base=v1,
                displacement=v2,
            )

    if local_search and worst is not None:
        rng = np.random.default_rng(sampler.seed + 1)
        v1, v2 = worst.base, worst.displacement
        step = worst.scale
        for _ in range(150):
            cand2 = _quad_add(
                v2,
                Quad(
                    step * rng.standard_normal(v2.y.shape),
                    step * rng.standard_normal(v2.Y.shape),
                    step * rng.standard_normal(v2.z.shape),
                    step * rng.standard_normal(v2.Z.shape),
                ),
            )
            margin, _, _ = _monotonicity_margins(
                coeffs, worst.t, v1, cand2, theta1, theta2, alpha1, direction
            )
            if margin > worst.margin:
                worst = Witness(
                    kind=worst.kind, margin=margin, t=worst.t, scale=worst.scale,
                    detail=worst.detail + "+local", base=v1, displacement=cand2,
                )
                v2 = cand2
            else:
                step *= 0.8
        margin_sup = max(margin_sup, worst.margin)

    tol = VIOLATION_TOL * (1.0 + margin_sup if np.isfinite(margin_sup) else 1.0)
    ok_coupling = margin_sup <= tol
    ok_terminal = margin_h_sup <= tol
    report = AssumptionReport(
        monotonicity_margin=float(margin_sup),
        alpha1_margin=float(margin_h_sup),
        passes={
            f"{direction}.coupling": bool(ok_coupling),
            f"{direction}.terminal": bool(ok_terminal),
        },
        witnesses=[w for w in (worst, worst_h) if w is not None],
        samples_used=used,
    )
    return report


@dataclass
class IntegrabilityReport:
    ok: bool
    offending_nodes: list[int] = field(default_factory=list)
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def check_integrability(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    probe_law: EmpiricalLaw | None = None,
) -> IntegrabilityReport:
    """Finiteness and square-summability of t -> A(t, v, law) at fixed probes."""
    dims = coeffs.dims
    probes = [Quad.zeros(1, dims)]
    ones = Quad.zeros(1, dims)
    ones.y[:] = 1.0
    ones.Y[:] = -1.0
    ones.z[:] = 0.5
    ones.Z[:] = -0.5
    probes.append(ones)
    offending: list[int] = []
    message = ""
    total = 0.0
    for k, t in enumerate(grid.nodes):
        for probe in probes:
            law = probe_law or quad_law(probe)
            try:
                f, g, big_f, big_g = eval_system(coeffs, float(t), probe, law)
            except Exception as exc:  # non-finite or misshapen
                offending.append(k)
                message = message or str(exc)
                break
            total += (
                float(np.sum(f**2) + np.sum(g**2) + np.sum(big_f**2) + np.sum(big_g**2))
                * grid.dt
            )
    try:
        probe_y = np.ones((1, dims.d))
        h_val = coeffs.h(probe_y, EmpiricalLaw.from_samples(probe_y))
        if not np.all(np.isfinite(h_val)):
            offending.append(grid.steps)
            message = message or "terminal map non-finite"
    except Exception as exc:
        offending.append(grid.steps)
        message = message or str(exc)
    ok = bool(not offending and np.isfinite(total))
    return IntegrabilityReport(ok=ok, offending_nodes=sorted(set(offending)), message=message)


def check_control_assumptions(problem, sampler: PairSampler | None = None) -> AssumptionReport:
    """Control-side certification: noise-derivative caps, first-moment
    derivative caps, and the sign-dispatched coupling condition.

    ``problem`` is a control problem exposing paper-form dynamics, the declared
    gamma/theta/alpha constants, and the terminal coefficient c.  The coupling
    condition is checked on the canonicalized coefficient map at frozen probe
    controls; c = 0 is rejected.
    """
    if problem.c == 0:
        raise ValueError("A6 requires c != 0")
    dims = problem.dims
    sampler = sampler or PairSampler(dims, seed=11)
    gamma = problem.gamma
    report = AssumptionReport(samples_used=0)
    report.passes["gamma_below_cap"] = bool(0.0 < gamma < 1.0 / 6.0)

    rng = np.random.default_rng(101)
    h_fd = 1e-5
    max_dz_sq = 0.0
    max_d_big_z_sq = 0.0
    u_mid = problem.control_box_center()
    for _ in range(40):
        v = Quad(
            rng.standard_normal((4, dims.d)),
            rng.standard_normal((4, dims.d)),
            rng.standard_normal((4, dims.d, dims.d_b)),
            rng.standard_normal((4, dims.d, dims.d_w)),
        )
        law = quad_law(v)
        u = np.broadcast_to(u_mid, (4, problem.d_u)).copy()
        t = float(rng.uniform(0.0, problem.grid.horizon))
        for which in ("g", "G"):
            fn = problem.paper_noise(which)
            base_val = fn(t, v, u, law)
            dir_z = rng.standard_normal(v.z.shape)
            dir_z /= np.sqrt(np.sum(dir_z**2, axis=(1, 2)))[:, None, None] + 1e-300
            dir_big = rng.standard_normal(v.Z.shape)
            dir_big /= np.sqrt(np.sum(dir_big**2, axis=(1, 2)))[:, None, None] + 1e-300
            step = h_fd * (1.0 + float(np.max(np.abs(v.z))))
            vz = Quad(v.y, v.Y, v.z + step * dir_z, v.Z)
            dz_val = (fn(t, vz, u, law) - base_val) / step
            max_dz_sq = max(max_dz_sq, float(np.max(np.sum(dz_val**2, axis=(1, 2)))))
            v_big = Quad(v.y, v.Y, v.z, v.Z + step * dir_big)
            d_big_val = (fn(t, v_big, u, law) - base_val) / step
            max_d_big_z_sq = max(
                max_d_big_z_sq, float(np.max(np.sum(d_big_val**2, axis=(1, 2))))
            )
    report.passes["noise_z_derivative"] = bool(max_dz_sq < gamma)
    report.passes["noise_Z_derivative"] = bool(max_d_big_z_sq < gamma)
    report.estimated_gamma = max(max_dz_sq, max_d_big_z_sq)

    # first-moment derivative caps on the measure argument of the noise maps
    lcap = gamma / 3.0
    max_l = 0.0
    for which in ("g", "G"):
        for block in ("z", "Z"):
            val = problem.noise_mean_derivative_sq(which, block)
            max_l = max(max_l, val)
    report.passes["lderivative_caps"] = bool(max_l < lcap)

    direction = "A2" if problem.c > 0 else "A2_prime"
    mono = check_monotonicity(
        problem.canonical_set(u_mid),
        problem.theta1,
        problem.theta2,
        problem.alpha1,
        direction=direction,
        sampler=sampler,
        n_pairs=2000,
    )
    report.passes.update({f"A6.{k}": v for k, v in mono.passes.items()})
    report.monotonicity_margin = mono.monotonicity_margin
    report.alpha1_margin = mono.alpha1_margin
    report.witnesses.extend(mono.witnesses)
    report.samples_used = mono.samples_used
    return report
