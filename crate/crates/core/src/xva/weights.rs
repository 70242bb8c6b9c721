//! Deterministic weights of the adjustment integrals.
//!
//! Every adjustment is a sum over grid intervals `[s_j, s_{j+1}]` of a
//! pathwise quantity taken at `s_j` times a deterministic weight. The weights
//! integrate discounting, survival, hazard and spread terms exactly over each
//! interval: all curves are piecewise constant, so on each sub-piece between
//! curve pillars the integrand is `c · exp(−k u)`.

use crate::error::Result;
use crate::termstructures::{survival_probability, RecoverySchedule, TermCurve, TIME_EPS};

use super::config::SurvivalMode;
use super::stats::{Estimate, RunningStats};

/// Pointwise default and survival densities at grid nodes (undiscounted).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalWeights {
    /// Density of counterparty default (first, in first-to-default mode).
    pub w_cva: Vec<f64>,
    /// Density of bank default (first, in first-to-default mode).
    pub w_dva: Vec<f64>,
    /// Joint survival `Q^C Q^B`, used by FVA and ColVA in every mode.
    pub w_joint: Vec<f64>,
}

pub fn survival_weights(
    bank_hazard: &TermCurve,
    cpty_hazard: &TermCurve,
    grid: &[f64],
    mode: SurvivalMode,
) -> Result<SurvivalWeights> {
    let mut out = SurvivalWeights {
        w_cva: Vec::with_capacity(grid.len()),
        w_dva: Vec::with_capacity(grid.len()),
        w_joint: Vec::with_capacity(grid.len()),
    };
    for &s in grid {
        let qc = survival_probability(cpty_hazard, 0.0, s)?;
        let qb = survival_probability(bank_hazard, 0.0, s)?;
        let (lc, lb) = (cpty_hazard.rate(s), bank_hazard.rate(s));
        match mode {
            SurvivalMode::FirstToDefault => {
                out.w_cva.push(qc * qb * lc);
                out.w_dva.push(qc * qb * lb);
            }
            SurvivalMode::Unilateral => {
                out.w_cva.push(qc * lc);
                out.w_dva.push(qb * lb);
            }
        }
        out.w_joint.push(qc * qb);
    }
    Ok(out)
}

/// `∫_0^h exp(−k u) du`, stable for small `k h`.
fn exp_integral(k: f64, h: f64) -> f64 {
    let x = k * h;
    if x.abs() < 1e-6 {
        h * (1.0 - 0.5 * x + x * x / 6.0)
    } else {
        -(-x).exp_m1() / k
    }
}

/// Exact integration of `coef(u) · exp(−Σ w_c ∫_0^u c)` where `coef` is
/// piecewise constant between the registered breakpoints.
#[derive(Debug, Clone)]
pub(crate) struct ExpIntegrator {
    breaks: Vec<f64>,
}

impl ExpIntegrator {
    pub(crate) fn new(curves: &[&TermCurve], recoveries: &[&RecoverySchedule]) -> Self {
        let mut breaks: Vec<f64> = curves
            .iter()
            .flat_map(|c| c.pillar_times().iter().copied())
            .chain(recoveries.iter().flat_map(|r| r.breakpoints_within(0.0, f64::INFINITY)))
            .collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        ExpIntegrator { breaks }
    }

    pub(crate) fn integrate(&self, a: f64, b: f64, terms: &[(&TermCurve, f64)], coef: impl Fn(f64) -> f64) -> f64 {
        if b - a <= TIME_EPS {
            return 0.0;
        }
        let lo = self.breaks.partition_point(|&t| t <= a + TIME_EPS);
        let hi = self.breaks.partition_point(|&t| t < b - TIME_EPS);
        let mut total = 0.0;
        let mut u0 = a;
        for u1 in self.breaks[lo..hi].iter().copied().chain(std::iter::once(b)) {
            let mid = 0.5 * (u0 + u1);
            let c = coef(mid);
            if c != 0.0 {
                let level: f64 = terms.iter().map(|(curve, w)| w * curve.integral_to(u0)).sum();
                let k: f64 = terms.iter().map(|(curve, w)| w * curve.rate(mid)).sum();
                total += c * (-level).exp() * exp_integral(k, u1 - u0);
            }
            u0 = u1;
        }
        total
    }
}

/// Curves with multipliers whose integrals form an exponent.
type Terms<'a, 'b> = &'a [(&'b TermCurve, f64)];

/// Curves that drive one netting set's weights.
#[derive(Debug, Clone, Copy)]
pub struct WeightCurves<'a> {
    pub funding: &'a TermCurve,
    pub marking: &'a TermCurve,
    pub cpty_hazard: &'a TermCurve,
    pub cpty_recovery: &'a RecoverySchedule,
    pub bank_hazard: &'a TermCurve,
    pub bank_recovery: &'a RecoverySchedule,
    /// Remuneration curve per CSA.
    pub csa_curves: &'a [&'a TermCurve],
    /// Funding-spread rate for positive / negative funding positions.
    pub borrow: &'a TermCurve,
    pub lend: &'a TermCurve,
}

/// Index into [`NettingSetWeights`] funding-rate tables.
pub const BORROW: usize = 0;
pub const LEND: usize = 1;

/// Per-interval weights for one netting set; entry `j` covers `[s_j, s_{j+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NettingSetWeights {
    /// `∫ p^F Q^C Q^B (r^C − r^sys)` per CSA.
    pub colva: Vec<Vec<f64>>,
    /// `∫ p^F Q^C Q^B (r − r^sys) e^{∫_{s_j}^s r^sys}` for r = borrow / lend:
    /// applied to curve-marked values, which accrue at the marking rate.
    pub fva_carry: [Vec<f64>; 2],
    /// Same without accrual: applied to margins and fixed exposure profiles.
    pub fva_flat: [Vec<f64>; 2],
    /// `∫ p^F (1 − R^C) w_cva`.
    pub cva: Vec<f64>,
    /// `∫ p^F (1 − R^B) w_dva`; zero when DVA is excluded.
    pub dva: Vec<f64>,
    /// Counterparty survival at each node.
    pub cpty_survival: Vec<f64>,
}

impl NettingSetWeights {
    pub fn build(grid: &[f64], curves: &WeightCurves, mode: SurvivalMode, include_dva: bool) -> Self {
        let mut all: Vec<&TermCurve> = vec![
            curves.funding,
            curves.marking,
            curves.cpty_hazard,
            curves.bank_hazard,
            curves.borrow,
            curves.lend,
        ];
        all.extend(curves.csa_curves.iter().copied());
        let integ = ExpIntegrator::new(&all, &[curves.cpty_recovery, curves.bank_recovery]);

        let (rf, sys, lc, lb) = (curves.funding, curves.marking, curves.cpty_hazard, curves.bank_hazard);
        let joint = [(rf, 1.0), (lc, 1.0), (lb, 1.0)];
        let carry = [(rf, 1.0), (lc, 1.0), (lb, 1.0), (sys, -1.0)];
        let (cva_terms, dva_terms): (Terms, Terms) = match mode {
            SurvivalMode::FirstToDefault => (&joint, &joint),
            SurvivalMode::Unilateral => (&[(rf, 1.0), (lc, 1.0)], &[(rf, 1.0), (lb, 1.0)]),
        };

        let n = grid.len().saturating_sub(1);
        let mut w = NettingSetWeights {
            colva: vec![Vec::with_capacity(n); curves.csa_curves.len()],
            fva_carry: [Vec::with_capacity(n), Vec::with_capacity(n)],
            fva_flat: [Vec::with_capacity(n), Vec::with_capacity(n)],
            cva: Vec::with_capacity(n),
            dva: Vec::with_capacity(n),
            cpty_survival: grid.iter().map(|&s| (-lc.integral_to(s)).exp()).collect(),
        };
        for seg in grid.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            for (c, rc) in curves.csa_curves.iter().enumerate() {
                w.colva[c].push(integ.integrate(a, b, &joint, |u| rc.rate(u) - sys.rate(u)));
            }
            let accrual_base = (-sys.integral_to(a)).exp();
            for (side, rate) in [(BORROW, curves.borrow), (LEND, curves.lend)] {
                let spread = |u: f64| rate.rate(u) - sys.rate(u);
                w.fva_carry[side].push(accrual_base * integ.integrate(a, b, &carry, spread));
                w.fva_flat[side].push(integ.integrate(a, b, &joint, spread));
            }
            w.cva.push(integ.integrate(a, b, cva_terms, |u| {
                (1.0 - curves.cpty_recovery.at(u)) * lc.rate(u)
            }));
            w.dva.push(if include_dva {
                integ.integrate(a, b, dva_terms, |u| (1.0 - curves.bank_recovery.at(u)) * lb.rate(u))
            } else {
                0.0
            });
        }
        w
    }

    pub fn n_intervals(&self) -> usize {
        self.cva.len()
    }

    /// Pathwise ColVA given each CSA's margin along the path.
    pub fn colva_path(&self, margins: &[&[f64]]) -> f64 {
        let mut acc = 0.0;
        for (w, m) in self.colva.iter().zip(margins) {
            for j in 0..w.len() {
                acc += m[j] * w[j];
            }
        }
        acc
    }

    /// Pathwise FVA contribution of interval `j` on funding side `side`.
    #[inline]
    pub fn fva_step(&self, j: usize, side: usize, v_marked: f64, unmarked_minus_margin: f64) -> f64 {
        v_marked * self.fva_carry[side][j] + unmarked_minus_margin * self.fva_flat[side][j]
    }

    /// Pathwise FVA where each interval's side follows the sign of `f`.
    pub fn fva_path(&self, v_marked: &[f64], v: &[f64], m: &[f64]) -> f64 {
        (0..self.n_intervals())
            .map(|j| {
                let f = v[j] - m[j];
                let side = if f > 0.0 { BORROW } else { LEND };
                self.fva_step(j, side, v_marked[j], v[j] - v_marked[j] - m[j])
            })
            .sum()
    }

    /// Pathwise CVA and DVA; DVA is returned as a nonnegative benefit.
    pub fn cva_dva_path(&self, v: &[f64], m: &[f64]) -> (f64, f64) {
        let (mut cva, mut dva) = (0.0, 0.0);
        for j in 0..self.n_intervals() {
            let f = v[j] - m[j];
            cva += f.max(0.0) * self.cva[j];
            dva += (-f).max(0.0) * self.dva[j];
        }
        (cva, dva)
    }
}

/// Estimates over the paths of `[path][time]` grids for one netting set.
fn over_paths(n_paths: usize, n_times: usize, f: impl Fn(std::ops::Range<usize>) -> f64) -> Estimate {
    let mut s = RunningStats::default();
    for p in 0..n_paths {
        s.push(f(p * n_times..(p + 1) * n_times));
    }
    s.estimate()
}

/// ColVA of one netting set from its CSA margin grids.
pub fn compute_colva(margins: &[Vec<f64>], n_paths: usize, n_times: usize, w: &NettingSetWeights) -> Estimate {
    over_paths(n_paths, n_times, |r| {
        let rows: Vec<&[f64]> = margins.iter().map(|m| &m[r.clone()]).collect();
        w.colva_path(&rows)
    })
}

/// FVA of one netting set. With equal borrow and lend curves in `w` this is
/// the symmetric adjustment.
pub fn compute_fva(
    v_marked: &[f64],
    v: &[f64],
    m: &[f64],
    n_paths: usize,
    n_times: usize,
    w: &NettingSetWeights,
) -> Estimate {
    over_paths(n_paths, n_times, |r| w.fva_path(&v_marked[r.clone()], &v[r.clone()], &m[r]))
}

/// CVA and DVA (as a benefit) of one netting set.
pub fn compute_cva_dva(v: &[f64], m: &[f64], n_paths: usize, n_times: usize, w: &NettingSetWeights) -> (Estimate, Estimate) {
    let cva = over_paths(n_paths, n_times, |r| w.cva_dva_path(&v[r.clone()], &m[r]).0);
    let dva = over_paths(n_paths, n_times, |r| w.cva_dva_path(&v[r.clone()], &m[r]).1);
    (cva, dva)
}
