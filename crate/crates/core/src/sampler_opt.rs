//! Sampling distribution that approximately minimizes expected wall-clock
//! time to a target loss.
//!
//! The surrogate objective (with the bound constant alpha divided out) is
//!
//! ```text
//! J(q) = (sum_i q_i T_i) * (sum_i a_i / q_i + b),
//!     T_i = K t_i / f_tot + tau_i,  a_i = p_i^2 G_i^2 / K,  b = beta/alpha
//! ```
//!
//! over the simplex with `q_i >= q_floor`. `J` is not convex, but fixing the
//! expected round time `M = sum_i q_i T_i` leaves a convex slice problem
//! (minimize `sum a_i / q_i` under two linear equalities), solved here through
//! its stationarity conditions `q_i = sqrt(a_i / (lambda + mu T_i))`. The
//! outer problem is a linear scan over `M` on `[min T, max T]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::types::{FleetConfig, SamplingDistribution, DEFAULT_Q_FLOOR};
use crate::wireless::TimeParams;

/// Default number of M-grid intervals when no step is given.
pub const DEFAULT_GRID_INTERVALS: usize = 1000;

const ROOT_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptInstance {
    pub p: Vec<f64>,
    pub g: Vec<f64>,
    /// Effective per-client round time `K t_i / f_tot + tau_i`.
    pub t_eff: Vec<f64>,
    pub k: usize,
    pub beta_over_alpha: f64,
    pub q_floor: f64,
    /// M-grid step; `None` means `(M_max - M_min) / 1000`.
    #[serde(default)]
    pub eps0: Option<f64>,
}

impl OptInstance {
    pub fn from_fleet(fleet: &FleetConfig, g: &[f64], beta_over_alpha: f64) -> Self {
        let n = fleet.n();
        OptInstance {
            p: fleet.p(),
            g: g.to_vec(),
            t_eff: TimeParams::from_fleet(fleet).effective_times(),
            k: fleet.k,
            beta_over_alpha,
            q_floor: DEFAULT_Q_FLOOR.min(0.5 / n as f64),
            eps0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.p.len();
        if n == 0 || self.g.len() != n || self.t_eff.len() != n {
            return Err(Error::InvalidParameter(
                "p, g and t_eff must be nonempty and aligned".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if self.t_eff.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("T_eff must be positive".into()));
        }
        if self.p.iter().chain(&self.g).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("p and g must be nonnegative".into()));
        }
        if !(self.q_floor > 0.0) || self.q_floor * n as f64 >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "q_floor {} infeasible for {n} clients",
                self.q_floor
            )));
        }
        if let Some(e) = self.eps0 {
            if !(e > 0.0) {
                return Err(Error::InvalidParameter("eps0 must be positive".into()));
            }
        }
        if !self.beta_over_alpha.is_finite() {
            return Err(Error::InvalidParameter("beta/alpha must be finite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    /// `p_i^2 G_i^2 / K`.
    pub fn variance_weights(&self) -> Vec<f64> {
        let k = self.k as f64;
        self.p
            .iter()
            .zip(&self.g)
            .map(|(p, g)| p * p * g * g / k)
            .collect()
    }

    /// `[M_min, M_max] = [min T_eff, max T_eff]`.
    pub fn m_range(&self) -> (f64, f64) {
        let lo = self.t_eff.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.t_eff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Range of `sum q_i T_i` reachable with every `q_i >= q_floor`.
    pub fn feasible_m_range(&self) -> (f64, f64) {
        let (lo, hi) = self.m_range();
        let n = self.n() as f64;
        let base = self.q_floor * self.t_eff.iter().sum::<f64>();
        let free = 1.0 - n * self.q_floor;
        (base + free * lo, base + free * hi)
    }

    pub fn grid_step(&self) -> f64 {
        let (lo, hi) = self.m_range();
        self.eps0
            .unwrap_or((hi - lo) / DEFAULT_GRID_INTERVALS as f64)
    }

    fn clamped_beta(&self) -> f64 {
        self.beta_over_alpha.max(0.0)
    }
}

/// `(sum q_i T_i) (sum a_i / q_i + beta/alpha)`; negative beta/alpha counts
/// as zero.
pub fn objective_p3(q: &[f64], inst: &OptInstance) -> f64 {
    let m: f64 = q.iter().zip(&inst.t_eff).map(|(q, t)| q * t).sum();
    m * (variance_sum(q, inst) + inst.clamped_beta())
}

/// `sum_i p_i^2 G_i^2 / (K q_i)`.
pub fn variance_sum(q: &[f64], inst: &OptInstance) -> f64 {
    inst.variance_weights()
        .iter()
        .zip(q)
        .map(|(a, q)| if *a == 0.0 { 0.0 } else { a / q })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub q: Vec<f64>,
    pub m: f64,
    pub objective: f64,
    pub lambda: f64,
    pub mu: f64,
    pub kkt_residual: f64,
}

/// Stationarity map for fixed multipliers.
struct Slice<'a> {
    a: Vec<f64>,
    t: &'a [f64],
    floor: f64,
}

impl Slice<'_> {
    /// Fills `q` and returns `(sum q, d sum q / d lambda)` for
    /// `lambda = -mu T* + s`. Denominators are formed as `s + mu (T_i - T*)`
    /// to avoid cancellation when `|mu|` is large.
    fn eval(&self, s: f64, mu: f64, t_star: f64, q: &mut [f64]) -> (f64, f64) {
        let mut sum = 0.0;
        let mut deriv = 0.0;
        for ((qi, &ai), &ti) in q.iter_mut().zip(&self.a).zip(self.t) {
            let d = s + mu * (ti - t_star);
            if !(d > 0.0) {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            let v = (ai / d).sqrt();
            if v <= self.floor {
                *qi = self.floor;
            } else {
                *qi = v;
                deriv -= 0.5 * v / d;
            }
            sum += *qi;
        }
        (sum, deriv)
    }

    /// The `T*` at which `lambda + mu T_i` first vanishes.
    fn pole_time(&self, mu: f64) -> f64 {
        let (lo, hi) = self
            .t
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        if mu >= 0.0 {
            lo
        } else {
            hi
        }
    }

    /// Solves `sum q = 1` at fixed mu and returns the offset `s` of lambda
    /// from its pole.
    fn normalize(&self, mu: f64, q: &mut [f64], scale: f64) -> f64 {
        let t_star = self.pole_time(mu);
        let f = |s: f64, q: &mut [f64]| {
            let (sum, d) = self.eval(s, mu, t_star, q);
            (sum - 1.0, d)
        };
        // Bracket s: f(lo) > 0 >= f(hi).
        let mut hi = scale.max(f64::MIN_POSITIVE);
        for _ in 0..2000 {
            if !(f(hi, q).0 > 0.0) || !(hi * 2.0).is_finite() {
                break;
            }
            hi *= 2.0;
        }
        let mut lo = hi;
        loop {
            lo *= 0.5;
            if f(lo, q).0 > 0.0 || lo < f64::MIN_POSITIVE {
                break;
            }
            hi = lo;
        }
        let mut s = hi;
        for _ in 0..ROOT_ITERS {
            let (r, d) = f(s, q);
            if r.abs() <= 1e-15 {
                break;
            }
            if r > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = if d < 0.0 { s - r / d } else { f64::NAN };
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        f(s, q);
        s
    }
}

/// Minimizes `sum a_i / q_i` subject to `sum q_i = 1`, `sum q_i T_i = m` and
/// `q_i >= q_floor`.
pub fn solve_inner(m: f64, inst: &OptInstance) -> Result<InnerSolution> {
    inst.validate()?;
    let n = inst.n();
    let (f_lo, f_hi) = inst.feasible_m_range();
    let (t_min, t_max) = inst.m_range();
    let tol_m = 1e-12 * t_max;
    if m < f_lo - tol_m || m > f_hi + tol_m {
        return Err(Error::InfeasibleSlice {
            m,
            lo: f_lo,
            hi: f_hi,
        });
    }
    let mut a = inst.variance_weights();
    let a_max = a.iter().cloned().fold(0.0, f64::max);
    // Zero-weight clients would make the slice degenerate; give them a
    // negligible weight so they sit at the floor unless mass must go there.
    let a_min = if a_max > 0.0 { a_max * 1e-24 } else { 1.0 };
    for ai in &mut a {
        *ai = ai.max(a_min);
    }
    let slice = Slice {
        a,
        t: &inst.t_eff,
        floor: inst.q_floor,
    };
    let lambda_scale = slice.a.iter().map(|v| v.sqrt()).sum::<f64>().powi(2);
    let mut q = vec![0.0; n];

    let homogeneous = t_max - t_min <= 1e-12 * t_max;
    // `offset` is lambda measured from its pole `-mu T*`.
    let (offset, mu) = if n == 1 {
        q[0] = 1.0;
        (slice.a[0], 0.0)
    } else if homogeneous {
        (slice.normalize(0.0, &mut q, lambda_scale), 0.0)
    } else {
        let h = |mu: f64, q: &mut [f64]| -> f64 {
            slice.normalize(mu, q, lambda_scale);
            let mq: f64 = q.iter().zip(&inst.t_eff).map(|(q, t)| q * t).sum();
            mq - m
        };
        let mu_scale = lambda_scale / t_max;
        let h0 = h(0.0, &mut q);
        let (mut lo, mut hi, mut h_lo, mut h_hi);
        if h0 > 0.0 {
            // Need larger mu (h is nonincreasing in mu).
            lo = 0.0;
            h_lo = h0;
            hi = mu_scale;
            h_hi = h(hi, &mut q);
            let mut steps = 0;
            while h_hi > 0.0 && steps < 1000 && (hi * 2.0).is_finite() {
                lo = hi;
                h_lo = h_hi;
                hi *= 2.0;
                h_hi = h(hi, &mut q);
                steps += 1;
            }
        } else {
            hi = 0.0;
            h_hi = h0;
            lo = -mu_scale;
            h_lo = h(lo, &mut q);
            let mut steps = 0;
            while h_lo < 0.0 && steps < 1000 && (lo * 2.0).is_finite() {
                hi = lo;
                h_hi = h_lo;
                lo *= 2.0;
                h_lo = h(lo, &mut q);
                steps += 1;
            }
        }
        if h_lo < 0.0 || h_hi > 0.0 {
            return Err(Error::InfeasibleSlice {
                m,
                lo: f_lo,
                hi: f_hi,
            });
        }
        // Illinois-modified regula falsi on mu.
        let mut mu = if h_lo == 0.0 { lo } else { hi };
        let mut side = 0i8;
        for _ in 0..ROOT_ITERS {
            if h_lo == 0.0 || h_hi == 0.0 {
                break;
            }
            mu = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
            if !(mu > lo && mu < hi) {
                mu = 0.5 * (lo + hi);
            }
            let r = h(mu, &mut q);
            if r.abs() <= 1e-14 * t_max || hi - lo <= 1e-15 * hi.abs().max(lo.abs()) {
                break;
            }
            if r > 0.0 {
                lo = mu;
                h_lo = r;
                if side == 1 {
                    h_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = mu;
                h_hi = r;
                if side == -1 {
                    h_lo *= 0.5;
                }
                side = -1;
            }
        }
        (slice.normalize(mu, &mut q, lambda_scale), mu)
    };
    let t_star = slice.pole_time(mu);

    let sum: f64 = q.iter().sum();
    let mq: f64 = q.iter().zip(&inst.t_eff).map(|(q, t)| q * t).sum();
    let mut kkt: f64 = (sum - 1.0).abs();
    if !homogeneous && n > 1 {
        kkt = kkt.max((mq - m).abs() / t_max);
    }
    for ((&qi, &ai), &ti) in q.iter().zip(&slice.a).zip(&inst.t_eff) {
        let d = offset + mu * (ti - t_star);
        if n == 1 {
            break;
        }
        if qi > inst.q_floor {
            kkt = kkt.max((1.0 - ai / (qi * qi * d)).abs());
        } else {
            kkt = kkt.max(((ai / (qi * qi) - d) / d).max(0.0));
        }
    }
    Ok(InnerSolution {
        objective: objective_p3(&q, inst),
        q,
        m: mq,
        lambda: offset - mu * t_star,
        mu,
        kkt_residual: kkt,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub q_star: SamplingDistribution,
    pub m_star: f64,
    /// Surrogate objective divided by alpha.
    pub objective: f64,
    pub kkt_residual: f64,
    /// Number of M values solved.
    pub grid_size: usize,
}

/// The M values scanned by [`optimize`]: `M_min, M_min + eps0, ...`, closed
/// with `M_max`.
pub fn m_grid(inst: &OptInstance) -> Vec<f64> {
    let (lo, hi) = inst.m_range();
    let step = inst.grid_step();
    if !(hi > lo) || !(step > 0.0) {
        return vec![lo];
    }
    let steps = ((hi - lo) / step).ceil() as usize;
    (0..=steps).map(|j| (lo + j as f64 * step).min(hi)).collect()
}

/// Linear search over M with a convex solve per slice. Negative beta/alpha
/// is treated as zero. Ties in the objective go to the smaller M.
pub fn optimize(inst: &OptInstance, mode: ExecMode) -> Result<OptimizerResult> {
    inst.validate()?;
    let grid = m_grid(inst);
    let (f_lo, f_hi) = inst.feasible_m_range();
    let slices: Vec<Result<InnerSolution>> = exec::map(mode, &grid, |&m| {
        // Grid ends sit just outside the floored range; pull them in.
        solve_inner(m.clamp(f_lo, f_hi), inst)
    });
    let mut best: Option<InnerSolution> = None;
    let mut solved = 0;
    for s in slices {
        let s = match s {
            Ok(s) => s,
            Err(Error::InfeasibleSlice { .. }) => continue,
            Err(e) => return Err(e),
        };
        solved += 1;
        if best.as_ref().is_none_or(|b| s.objective < b.objective) {
            best = Some(s);
        }
    }
    let best = best.ok_or(Error::InfeasibleSlice {
        m: f64::NAN,
        lo: f_lo,
        hi: f_hi,
    })?;
    // Renormalize away the last ulps so the distribution validates.
    let total: f64 = best.q.iter().sum();
    let q: Vec<f64> = best.q.iter().map(|v| (v / total).max(inst.q_floor)).collect();
    Ok(OptimizerResult {
        q_star: SamplingDistribution::new(q, inst.q_floor)?,
        m_star: best.m,
        objective: best.objective,
        kkt_residual: best.kkt_residual,
        grid_size: solved,
    })
}

/// `q_i ∝ p_i G_i / sqrt(T_i)`, the exact minimizer when beta/alpha = 0.
pub fn closed_form_q(inst: &OptInstance) -> Result<SamplingDistribution> {
    inst.validate()?;
    let w: Vec<f64> = inst
        .p
        .iter()
        .zip(&inst.g)
        .zip(&inst.t_eff)
        .map(|((p, g), t)| p * g / t.sqrt())
        .collect();
    SamplingDistribution::from_weights(&w, inst.q_floor)
}

/// `(sum_i T_i^(1/2) p_i G_i)^2 / K`: the minimum of the objective when
/// beta/alpha = 0.
pub fn cauchy_schwarz_floor(inst: &OptInstance) -> f64 {
    inst.p
        .iter()
        .zip(&inst.g)
        .zip(&inst.t_eff)
        .map(|((p, g), t)| t.sqrt() * p * g)
        .sum::<f64>()
        .powi(2)
        / inst.k as f64
}

/// Rounds implied by the bound at precision `eps_over_alpha`, before
/// rounding up.
pub fn predicted_rounds_raw(q: &[f64], inst: &OptInstance, eps_over_alpha: f64) -> f64 {
    (variance_sum(q, inst) + inst.clamped_beta()) / eps_over_alpha
}

pub fn predicted_rounds(q: &[f64], inst: &OptInstance, eps_over_alpha: f64) -> u64 {
    assert!(eps_over_alpha > 0.0);
    predicted_rounds_raw(q, inst, eps_over_alpha).ceil() as u64
}

/// Pairs `(i, j)` where client `i` is at least as fast and at least as
/// important as `j` (`T_i <= T_j`, `p_i G_i >= p_j G_j`) yet gets a smaller
/// probability.
pub fn check_monotonicity(q: &[f64], inst: &OptInstance) -> Vec<(usize, usize)> {
    let n = inst.n();
    let importance: Vec<f64> = inst.p.iter().zip(&inst.g).map(|(p, g)| p * g).collect();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j
                && inst.t_eff[i] <= inst.t_eff[j]
                && importance[i] >= importance[j]
                && q[i] < q[j] - 1e-9
            {
                out.push((i, j));
            }
        }
    }
    out
}

/// Serialized optimizer output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub q_star: Vec<f64>,
    pub m_star: f64,
    pub objective: f64,
    pub grid_size: usize,
    pub kkt_residual: f64,
    pub monotonicity_violations: Vec<(usize, usize)>,
}

impl OptimizerReport {
    pub fn new(result: &OptimizerResult, inst: &OptInstance) -> Self {
        OptimizerReport {
            q_star: result.q_star.as_slice().to_vec(),
            m_star: result.m_star,
            objective: result.objective,
            grid_size: result.grid_size,
            kkt_residual: result.kkt_residual,
            monotonicity_violations: check_monotonicity(result.q_star.as_slice(), inst),
        }
    }
}
