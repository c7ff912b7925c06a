//! Steady-state analysis of the highway plant: equilibrium solvers, the
//! response map u ↦ ℓ(u), the reduced cost φ̃, and viability diagnostics for
//! the standing assumptions of the seeking controllers (unique stable
//! equilibrium, convexity, strong convexity).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::PlantVariant;
use crate::error::{Error, Result};
use crate::plant::{density_rhs, mean_velocity, HighwayParams, PlantState};

/// Measured congestion cost (ρ − ρ_ref)².
pub fn performance_index(rho: f64, rho_ref: f64) -> f64 {
    let d = rho - rho_ref;
    d * d
}

/// Rectangle of admissible dynamic-driver states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaBox {
    pub q_el: (f64, f64),
    pub rho: (f64, f64),
}

impl ThetaBox {
    pub fn contains(&self, q_el: f64, rho: f64) -> bool {
        q_el >= self.q_el.0 && q_el <= self.q_el.1 && rho >= self.rho.0 && rho <= self.rho.1
    }
}

/// Express-lane throughput v̄(ρ)·ρ.
fn flow_rate(rho: f64, p: &HighwayParams) -> f64 {
    mean_velocity(rho, p) * rho
}

/// d(v̄ρ)/dρ.
fn flow_rate_slope(rho: f64, p: &HighwayParams) -> f64 {
    let s = 4.0 / (p.rho_jam - p.rho_crit);
    let c = 0.5 * (p.rho_jam + p.rho_crit);
    let e = (s * (rho - c)).exp();
    let vbar_prime = -(p.v_free - p.v_jam) * s * e / ((1.0 + e) * (1.0 + e));
    mean_velocity(rho, p) + rho * vbar_prime
}

/// Sign-change brackets of `f` over `[lo, hi]` scanned at `n` subintervals.
fn scan_brackets(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let mut brackets = Vec::new();
    let dx = (hi - lo) / n as f64;
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..=n {
        let b = if i == n { hi } else { lo + i as f64 * dx };
        let fb = f(b);
        if fa == 0.0 {
            brackets.push((a, a));
        } else if fa * fb < 0.0 {
            brackets.push((a, b));
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        brackets.push((a, a));
    }
    brackets
}

fn bisect(f: impl Fn(f64) -> f64, bracket: (f64, f64), width: f64) -> f64 {
    let (mut a, mut b) = bracket;
    if a == b {
        return a;
    }
    let mut fa = f(a);
    while b - a > width {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// Largest local slope of the settle field, used to pick a stable RK4 step.
fn max_abs_slope(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let dx = (hi - lo) / n as f64;
    let mut worst = 0.0_f64;
    for i in 0..n {
        let a = lo + i as f64 * dx;
        let slope = (f(a + dx) - f(a)) / dx;
        worst = worst.max(slope.abs());
    }
    worst
}

struct Settle {
    state: Vec<f64>,
    converged: bool,
}

/// Fixed-step RK4 relaxation of `rhs` until the field is quiescent or the
/// horizon cap is hit. `rate_scale` is an upper bound on the field's
/// stiffness and sets both the step and the quiescence threshold.
fn settle(
    rhs: impl Fn(&[f64], &mut [f64]),
    x0: &[f64],
    rate_scale: f64,
    t_cap: f64,
    escape: impl Fn(&[f64]) -> bool,
) -> Settle {
    let n = x0.len();
    let h = (1.0 / rate_scale.max(1e-12)).min(t_cap / 64.0);
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut t = 0.0;
    while t < t_cap {
        rhs(&x, &mut k1);
        let quiescent = (0..n).all(|i| {
            k1[i].abs() <= 1e-10 * rate_scale.max(1.0) * x[i].abs().max(1.0)
        });
        if quiescent {
            return Settle { state: x, converged: true };
        }
        for i in 0..n {
            stage[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(&stage, &mut k2);
        for i in 0..n {
            stage[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(&stage, &mut k3);
        for i in 0..n {
            stage[i] = x[i] + h * k3[i];
        }
        rhs(&stage, &mut k4);
        for i in 0..n {
            x[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) || escape(&x) {
            return Settle { state: x, converged: false };
        }
        t += h;
    }
    Settle { state: x, converged: false }
}

/// Unique stable density equilibrium of the static-driver plant over
/// `rho_box`, by bisection cross-checked against forward relaxation.
pub fn solve_equilibrium_static(
    u: f64,
    params: &HighwayParams,
    rho_box: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = rho_box;
    if !(lo < hi) {
        return Err(Error::config(format!("empty density box [{lo}, {hi}]")));
    }
    let g = |rho: f64| density_rhs(rho, u, params);
    let brackets = scan_brackets(g, lo, hi, 512);
    match brackets.len() {
        0 => {
            return Err(Error::Equilibrium {
                u,
                what: format!("no equilibrium: density rate has no root in [{lo}, {hi}]"),
            })
        }
        1 => {}
        n => {
            return Err(Error::Equilibrium {
                u,
                what: format!("{n} equilibria in [{lo}, {hi}], expected a unique one"),
            })
        }
    }
    let root = bisect(g, brackets[0], 1e-10);

    let rate_scale = max_abs_slope(g, lo, hi, 128).max(1e-6) / params.eps0;
    let relax = settle(
        |x, dx| dx[0] = g(x[0]) / params.eps0,
        &[0.5 * (lo + hi)],
        rate_scale,
        50.0 / params.eps0,
        |x| x[0] < lo - (hi - lo) || x[0] > hi + (hi - lo),
    );
    let agree = relax.converged && (relax.state[0] - root).abs() <= 1e-3 * root.abs().max(1.0);
    if !agree {
        return Err(Error::Equilibrium {
            u,
            what: format!(
                "forward relaxation ({}converged, rho={:.6}) disagrees with bisection root {root:.6}",
                if relax.converged { "" } else { "not " },
                relax.state[0]
            ),
        });
    }
    Ok(root)
}

/// Density roots of v̄(ρ)ρ = q_el over `rho_box`: (total, asymptotically stable).
pub fn count_density_roots(
    q_el: f64,
    params: &HighwayParams,
    rho_box: (f64, f64),
) -> (usize, usize) {
    let g = |rho: f64| q_el - flow_rate(rho, params);
    let brackets = scan_brackets(g, rho_box.0, rho_box.1, 512);
    let stable = brackets
        .iter()
        .filter(|br| {
            let root = bisect(g, **br, 1e-8);
            flow_rate_slope(root, params) > 0.0
        })
        .count();
    (brackets.len(), stable)
}

fn dynamic_field(q_el: f64, rho: f64, u: f64, p: &HighwayParams) -> [f64; 2] {
    let psi = -((q_el - 0.5 * p.q_demand) + p.a_tilde * u);
    [
        p.k_m * psi / p.eps0,
        (p.k_rho / (p.l * p.eps0)) * (q_el - flow_rate(rho, p)),
    ]
}

fn dynamic_jacobian(rho: f64, p: &HighwayParams) -> [[f64; 2]; 2] {
    [
        [-p.k_m / p.eps0, 0.0],
        [p.k_rho / (p.l * p.eps0), -(p.k_rho / (p.l * p.eps0)) * flow_rate_slope(rho, p)],
    ]
}

fn norm2(v: &[f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Stable equilibrium of the dynamic-driver plant inside `theta_box`:
/// forward relaxation to locate the attractor, then a damped Newton polish
/// on the interior field; falls back to the relaxed point when Newton
/// stalls, provided the field there is already below the residual target.
pub fn solve_equilibrium_dynamic(
    u: f64,
    params: &HighwayParams,
    theta_box: &ThetaBox,
) -> Result<PlantState> {
    let p = params;
    let (q_lo, q_hi) = theta_box.q_el;
    let (r_lo, r_hi) = theta_box.rho;
    if !(q_lo < q_hi && r_lo < r_hi) {
        return Err(Error::config(format!(
            "empty state box [{q_lo}, {q_hi}] x [{r_lo}, {r_hi}]"
        )));
    }

    // The driver-response component decouples: its interior rest point is
    // q* = Q/2 - ã·u regardless of ρ.
    let q_star = 0.5 * p.q_demand - p.a_tilde * u;
    if q_star < q_lo - 1e-9 || q_star > q_hi + 1e-9 {
        return Err(Error::Equilibrium {
            u,
            what: format!(
                "no equilibrium: rest inflow {q_star:.3} falls outside [{q_lo}, {q_hi}]"
            ),
        });
    }
    let (roots, stable) = count_density_roots(q_star, p, (r_lo, r_hi));
    if roots == 0 {
        return Err(Error::Equilibrium {
            u,
            what: format!(
                "no equilibrium: throughput never matches rest inflow {q_star:.3} over [{r_lo}, {r_hi}]"
            ),
        });
    }
    if stable == 0 {
        return Err(Error::Equilibrium {
            u,
            what: format!("{roots} equilibria over [{r_lo}, {r_hi}] but none is stable"),
        });
    }

    // Seed from the uncongested side; the congested branch repels upward and
    // relaxation started there would escape the box.
    let seed = [
        0.5 * (q_lo + q_hi),
        r_lo + 0.25 * (r_hi - r_lo),
    ];
    let rate_scale = (p.k_m / p.eps0).max(
        (p.k_rho / p.l) * max_abs_slope(|r| flow_rate(r, p), r_lo, r_hi, 128) / p.eps0,
    );
    let relax = settle(
        |x, dx| {
            let f = dynamic_field(x[0], x[1], u, p);
            dx.copy_from_slice(&f);
        },
        &seed,
        rate_scale,
        50.0 / p.eps0,
        |x| {
            let margin_q = q_hi - q_lo;
            let margin_r = r_hi - r_lo;
            x[0] < q_lo - margin_q
                || x[0] > q_hi + margin_q
                || x[1] < r_lo - margin_r
                || x[1] > r_hi + margin_r
        },
    );
    if !relax.converged {
        return Err(Error::Equilibrium {
            u,
            what: "forward relaxation did not reach a rest point".to_string(),
        });
    }

    let mut q = relax.state[0];
    let mut rho = relax.state[1];
    let mut f = dynamic_field(q, rho, u, p);
    let target = 1e-8;
    for _ in 0..100 {
        if norm2(&f) <= target {
            break;
        }
        let jac = dynamic_jacobian(rho, p);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let dq = (-f[0] * jac[1][1] + f[1] * jac[0][1]) / det;
        let drho = (-f[1] * jac[0][0] + f[0] * jac[1][0]) / det;
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-8 {
            let qn = q + step * dq;
            let rn = rho + step * drho;
            let fn_ = dynamic_field(qn, rn, u, p);
            if norm2(&fn_) < norm2(&f) {
                q = qn;
                rho = rn;
                f = fn_;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm2(&f) > target {
        // Newton stalled; accept the relaxed point only if it already meets
        // the residual target on its own.
        let fr = dynamic_field(relax.state[0], relax.state[1], u, p);
        if norm2(&fr) > target {
            return Err(Error::Equilibrium {
                u,
                what: format!("residual {:.3e} above target {target:.1e}", norm2(&fr)),
            });
        }
        q = relax.state[0];
        rho = relax.state[1];
    }
    if !theta_box.contains(q, rho) {
        return Err(Error::Equilibrium {
            u,
            what: format!("rest point ({q:.3}, {rho:.3}) escapes the state box"),
        });
    }
    Ok(PlantState { rho, q_el: Some(q) })
}

/// What `build_response_map` tabulates and the viability report consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub variant: PlantVariant,
    pub u_box: (f64, f64),
    pub n_grid: usize,
    pub rho_box: (f64, f64),
    pub theta_box: ThetaBox,
    pub rho_ref: f64,
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 3 {
            return Err(Error::config(format!(
                "response map needs at least 3 grid points, got {}",
                self.n_grid
            )));
        }
        if !(self.u_box.0 < self.u_box.1) {
            return Err(Error::config(format!(
                "empty incentive box [{}, {}]",
                self.u_box.0, self.u_box.1
            )));
        }
        Ok(())
    }
}

/// Steady-state response of the plant over a grid of incentives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseMap {
    pub u_grid: Vec<f64>,
    /// Equilibrium per grid point; `None` where no stable equilibrium exists.
    pub ell_values: Vec<Option<PlantState>>,
    /// Reduced cost φ̃(u); NaN at poisoned points.
    pub phi_tilde: Vec<f64>,
    pub u_star: f64,
    pub phi_star: f64,
    /// Worst-case curvature of φ̃ from second differences, clipped at zero.
    pub kappa_est: f64,
    pub unique_equilibrium: Vec<bool>,
    /// (grid index, reason) for every poisoned point.
    pub failures: Vec<(usize, String)>,
}

/// Equilibrium + reduced cost at a single incentive.
pub fn reduced_cost(u: f64, params: &HighwayParams, cfg: &MapConfig) -> Result<(PlantState, f64)> {
    let theta = match cfg.variant {
        PlantVariant::Static => PlantState::static_driver(solve_equilibrium_static(
            u,
            params,
            cfg.rho_box,
        )?),
        PlantVariant::Dynamic => solve_equilibrium_dynamic(u, params, &cfg.theta_box)?,
    };
    let phi = performance_index(theta.rho, cfg.rho_ref);
    Ok((theta, phi))
}

fn golden_section(
    mut a: f64,
    mut b: f64,
    mut eval: impl FnMut(f64) -> Option<f64>,
) -> Option<(f64, f64)> {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    for _ in 0..80 {
        if (b - a).abs() < 1e-10 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = eval(d)?;
        }
    }
    let u = 0.5 * (a + b);
    let f = eval(u)?;
    Some((u, f))
}

/// Tabulates ℓ and φ̃ over a uniform incentive grid, refines the minimizer by
/// golden section inside its bracketing cell, and estimates the worst-case
/// curvature. Per-point solver failures poison the point, not the map.
pub fn build_response_map(params: &HighwayParams, cfg: &MapConfig) -> Result<ResponseMap> {
    cfg.validate()?;
    params.validate()?;
    let n = cfg.n_grid;
    let (u_lo, u_hi) = cfg.u_box;
    let du = (u_hi - u_lo) / (n - 1) as f64;
    let u_grid: Vec<f64> = (0..n).map(|i| u_lo + i as f64 * du).collect();

    let points: Vec<std::result::Result<(PlantState, f64), String>> = u_grid
        .par_iter()
        .map(|&u| reduced_cost(u, params, cfg).map_err(|e| e.to_string()))
        .collect();

    let mut ell_values = Vec::with_capacity(n);
    let mut phi_tilde = Vec::with_capacity(n);
    let mut unique_equilibrium = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (i, point) in points.into_iter().enumerate() {
        match point {
            Ok((theta, phi)) => {
                let unique = match cfg.variant {
                    // The static solver rejects multi-root boxes outright.
                    PlantVariant::Static => true,
                    PlantVariant::Dynamic => {
                        let q_star = theta.q_el.unwrap_or(f64::NAN);
                        count_density_roots(q_star, params, cfg.theta_box.rho).1 == 1
                    }
                };
                ell_values.push(Some(theta));
                phi_tilde.push(phi);
                unique_equilibrium.push(unique);
            }
            Err(reason) => {
                ell_values.push(None);
                phi_tilde.push(f64::NAN);
                unique_equilibrium.push(false);
                failures.push((i, reason));
            }
        }
    }

    let argmin = phi_tilde
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i);
    let (u_star, phi_star) = match argmin {
        None => (f64::NAN, f64::NAN),
        Some(i) => {
            let lo = if i > 0 && phi_tilde[i - 1].is_finite() { u_grid[i - 1] } else { u_grid[i] };
            let hi = if i + 1 < n && phi_tilde[i + 1].is_finite() {
                u_grid[i + 1]
            } else {
                u_grid[i]
            };
            if lo < hi {
                golden_section(lo, hi, |u| {
                    reduced_cost(u, params, cfg).ok().map(|(_, phi)| phi)
                })
                .unwrap_or((u_grid[i], phi_tilde[i]))
            } else {
                (u_grid[i], phi_tilde[i])
            }
        }
    };

    let mut kappa = f64::INFINITY;
    let mut any_interior = false;
    for i in 1..n - 1 {
        let (l, m, r) = (phi_tilde[i - 1], phi_tilde[i], phi_tilde[i + 1]);
        if l.is_finite() && m.is_finite() && r.is_finite() {
            any_interior = true;
            kappa = kappa.min((l - 2.0 * m + r) / (du * du));
        }
    }
    let kappa_est = if any_interior { kappa.max(0.0) } else { f64::NAN };

    Ok(ResponseMap {
        u_grid,
        ell_values,
        phi_tilde,
        u_star,
        phi_star,
        kappa_est,
        unique_equilibrium,
        failures,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViabilityReport {
    /// Unique stable equilibrium at every grid incentive, with every basin
    /// seed relaxing onto it.
    pub a1_unique_stable: Verdict,
    /// Strict convexity of φ̃ over the whole incentive box.
    pub a2_convex: Verdict,
    /// Positive worst-case curvature.
    pub a3_strong_convexity: Verdict,
    pub kappa_est: f64,
    /// Largest slope change of the φ̃ gradient between neighboring cells.
    pub grad_lipschitz_est: f64,
    pub u_star: f64,
    pub phi_star: f64,
}

impl ViabilityReport {
    pub fn all_hold(&self) -> bool {
        self.a1_unique_stable.holds && self.a2_convex.holds && self.a3_strong_convexity.holds
    }
}

const BASIN_SEED_FRACTIONS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const BASIN_SEED_CORNERS: [(f64, f64); 5] =
    [(0.1, 0.1), (0.9, 0.1), (0.5, 0.5), (0.1, 0.9), (0.9, 0.9)];

fn basin_converges_static(
    u: f64,
    target: f64,
    params: &HighwayParams,
    rho_box: (f64, f64),
) -> bool {
    let (lo, hi) = rho_box;
    let g = |rho: f64| density_rhs(rho, u, params);
    let rate_scale = max_abs_slope(g, lo, hi, 128).max(1e-6) / params.eps0;
    BASIN_SEED_FRACTIONS.iter().all(|frac| {
        let seed = lo + frac * (hi - lo);
        let relax = settle(
            |x, dx| dx[0] = g(x[0]) / params.eps0,
            &[seed],
            rate_scale,
            50.0 / params.eps0,
            |x| x[0] < lo - (hi - lo) || x[0] > hi + (hi - lo),
        );
        relax.converged && (relax.state[0] - target).abs() <= 1e-3 * target.abs().max(1.0)
    })
}

fn basin_converges_dynamic(
    u: f64,
    target: &PlantState,
    params: &HighwayParams,
    theta_box: &ThetaBox,
) -> bool {
    let (q_lo, q_hi) = theta_box.q_el;
    let (r_lo, r_hi) = theta_box.rho;
    let target_q = target.q_el.unwrap_or(f64::NAN);
    let rate_scale = (params.k_m / params.eps0).max(
        (params.k_rho / params.l) * max_abs_slope(|r| flow_rate(r, params), r_lo, r_hi, 128)
            / params.eps0,
    );
    BASIN_SEED_CORNERS.iter().all(|(fq, fr)| {
        let seed = [q_lo + fq * (q_hi - q_lo), r_lo + fr * (r_hi - r_lo)];
        let relax = settle(
            |x, dx| {
                let f = dynamic_field(x[0], x[1], u, params);
                dx.copy_from_slice(&f);
            },
            &seed,
            rate_scale,
            50.0 / params.eps0,
            |x| {
                x[0] < q_lo - (q_hi - q_lo)
                    || x[0] > q_hi + (q_hi - q_lo)
                    || x[1] < r_lo - (r_hi - r_lo)
                    || x[1] > r_hi + (r_hi - r_lo)
            },
        );
        relax.converged
            && (relax.state[0] - target_q).abs() <= 1e-3 * target_q.abs().max(1.0)
            && (relax.state[1] - target.rho).abs() <= 1e-3 * target.rho.abs().max(1.0)
    })
}

/// Checks the standing assumptions against a tabulated response map.
pub fn viability_report(
    map: &ResponseMap,
    params: &HighwayParams,
    cfg: &MapConfig,
) -> ViabilityReport {
    let n = map.u_grid.len();

    let mut a1_holds = map.failures.is_empty() && map.unique_equilibrium.iter().all(|&b| b);
    let mut a1_detail = if map.failures.is_empty() {
        String::new()
    } else {
        let (i, reason) = &map.failures[0];
        format!(
            "{} of {} grid points have no stable equilibrium (first at u={:.3}: {})",
            map.failures.len(),
            n,
            map.u_grid[*i],
            reason
        )
    };
    if a1_holds {
        let bad_basin: Vec<f64> = map
            .u_grid
            .par_iter()
            .zip(map.ell_values.par_iter())
            .filter_map(|(&u, ell)| {
                let theta = ell.as_ref()?;
                let ok = match cfg.variant {
                    PlantVariant::Static => {
                        basin_converges_static(u, theta.rho, params, cfg.rho_box)
                    }
                    PlantVariant::Dynamic => {
                        basin_converges_dynamic(u, theta, params, &cfg.theta_box)
                    }
                };
                if ok {
                    None
                } else {
                    Some(u)
                }
            })
            .collect();
        if !bad_basin.is_empty() {
            a1_holds = false;
            a1_detail = format!(
                "basin seeds fail to reach the equilibrium at {} grid points (first u={:.3})",
                bad_basin.len(),
                bad_basin[0]
            );
        }
    } else if a1_detail.is_empty() {
        a1_detail = "equilibrium is not unique at some grid points".to_string();
    }
    if a1_holds {
        a1_detail = format!("unique stable equilibrium at all {n} grid points, basins agree");
    }

    let du = map.u_grid[1] - map.u_grid[0];
    let mut worst_second = f64::INFINITY;
    let mut worst_u = f64::NAN;
    let mut interior = 0usize;
    for i in 1..n - 1 {
        let (l, m, r) = (map.phi_tilde[i - 1], map.phi_tilde[i], map.phi_tilde[i + 1]);
        if l.is_finite() && m.is_finite() && r.is_finite() {
            interior += 1;
            let second = (l - 2.0 * m + r) / (du * du);
            if second < worst_second {
                worst_second = second;
                worst_u = map.u_grid[i];
            }
        }
    }
    let a2_holds = interior > 0 && map.failures.is_empty() && worst_second > 0.0;
    let a2_detail = if interior == 0 {
        "no interior grid points with finite cost".to_string()
    } else if !map.failures.is_empty() {
        format!("cost undefined at {} grid points", map.failures.len())
    } else if worst_second > 0.0 {
        format!("second differences positive, tightest {worst_second:.4} at u={worst_u:.3}")
    } else {
        format!("second difference {worst_second:.4} at u={worst_u:.3} breaks convexity")
    };

    let a3_holds = map.kappa_est.is_finite() && map.kappa_est > 0.0;
    let a3_detail = format!("worst-case curvature estimate {:.6}", map.kappa_est);

    let mut grad_lip = 0.0_f64;
    for i in 1..n - 2 {
        let pts = [
            map.phi_tilde[i - 1],
            map.phi_tilde[i],
            map.phi_tilde[i + 1],
            map.phi_tilde[i + 2],
        ];
        if pts.iter().all(|v| v.is_finite()) {
            let g0 = (pts[2] - pts[0]) / (2.0 * du);
            let g1 = (pts[3] - pts[1]) / (2.0 * du);
            grad_lip = grad_lip.max(((g1 - g0) / du).abs());
        }
    }

    ViabilityReport {
        a1_unique_stable: Verdict { holds: a1_holds, detail: a1_detail },
        a2_convex: Verdict { holds: a2_holds, detail: a2_detail },
        a3_strong_convexity: Verdict { holds: a3_holds, detail: a3_detail },
        kappa_est: map.kappa_est,
        grad_lipschitz_est: grad_lip,
        u_star: map.u_star,
        phi_star: map.phi_star,
    }
}

/// κ estimate after rescaling both axes to unit boxes, for comparing maps
/// with different incentive ranges and cost magnitudes.
pub fn normalized_kappa(map: &ResponseMap) -> f64 {
    let finite: Vec<(f64, f64)> = map
        .u_grid
        .iter()
        .zip(&map.phi_tilde)
        .filter(|(_, p)| p.is_finite())
        .map(|(u, p)| (*u, *p))
        .collect();
    if finite.len() < 3 {
        return f64::NAN;
    }
    let u_span = finite.last().unwrap().0 - finite[0].0;
    let phi_max = finite.iter().map(|(_, p)| *p).fold(f64::NEG_INFINITY, f64::max);
    let phi_min = finite.iter().map(|(_, p)| *p).fold(f64::INFINITY, f64::min);
    let phi_span = (phi_max - phi_min).max(1e-300);
    let mut kappa = f64::INFINITY;
    for w in finite.windows(3) {
        let du = (w[1].0 - w[0].0) / u_span;
        let du2 = (w[2].0 - w[1].0) / u_span;
        // Windows straddling a poisoned gap are unevenly spaced; skip them.
        if (du2 - du).abs() > 1e-9 * du.abs() {
            continue;
        }
        let second =
            ((w[0].1 - 2.0 * w[1].1 + w[2].1) / phi_span) / (du * du);
        kappa = kappa.min(second);
    }
    if kappa.is_finite() {
        kappa.max(0.0)
    } else {
        f64::NAN
    }
}
