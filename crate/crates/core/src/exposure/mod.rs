//! Risk-factor simulation and mark-to-future valuation.
//!
//! Underlyings follow correlated geometric Brownian motion. Every path draws
//! from its own ChaCha stream (`seed`, stream = global path index), so any
//! contiguous range of paths can be generated independently and the result
//! never depends on how paths are split across workers.

mod deals;

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use deals::{black, normal_cdf, Deal, DealKind, DealKindTag, DealSpec, OptionType};

use crate::error::{Result, XvaError};
use crate::termstructures::{TermCurve, TIME_EPS};

/// Grid nodes closer than this are merged (events win over uniform nodes).
const GRID_MERGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Underlying {
    pub id: String,
    pub spot: f64,
    pub volatility: f64,
    pub drift: TermCurve,
}

#[derive(Debug, Clone)]
pub struct RiskFactorModel {
    underlyings: Vec<Underlying>,
    correlation: Vec<Vec<f64>>,
    cholesky: Vec<Vec<f64>>,
}

impl RiskFactorModel {
    pub fn new(underlyings: Vec<Underlying>, correlation: Vec<Vec<f64>>) -> Result<Self> {
        let n = underlyings.len();
        let mut seen = HashSet::new();
        for u in &underlyings {
            if !seen.insert(u.id.as_str()) {
                return Err(XvaError::invalid("underlying", u.id.clone(), "duplicate id"));
            }
            if !(u.spot > 0.0) || !u.spot.is_finite() {
                return Err(XvaError::invalid("underlying", u.id.clone(), "spot must be positive"));
            }
            if !(u.volatility >= 0.0) || !u.volatility.is_finite() {
                return Err(XvaError::invalid("underlying", u.id.clone(), "volatility must be nonnegative"));
            }
        }
        // an omitted matrix means independent factors
        let correlation = if correlation.is_empty() {
            (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
        } else {
            correlation
        };
        let cholesky = cholesky_psd(&correlation, n)?;
        Ok(RiskFactorModel {
            underlyings,
            correlation,
            cholesky,
        })
    }

    pub fn empty() -> Self {
        RiskFactorModel {
            underlyings: Vec::new(),
            correlation: Vec::new(),
            cholesky: Vec::new(),
        }
    }

    pub fn underlyings(&self) -> &[Underlying] {
        &self.underlyings
    }

    pub fn correlation(&self) -> &[Vec<f64>] {
        &self.correlation
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.underlyings.iter().position(|u| u.id == id)
    }
}

/// Lower-triangular factor of a correlation matrix. Semidefinite matrices are
/// accepted: a pivot that is zero up to rounding yields a zero column.
#[allow(clippy::needless_range_loop)]
fn cholesky_psd(c: &[Vec<f64>], n: usize) -> Result<Vec<Vec<f64>>> {
    const TOL: f64 = 1e-10;
    let bad = |reason: String| Err(XvaError::invalid("correlation", "", reason));
    if c.len() != n || c.iter().any(|row| row.len() != n) {
        return bad(format!("expected a {n}x{n} matrix"));
    }
    for i in 0..n {
        if (c[i][i] - 1.0).abs() > TOL {
            return bad(format!("diagonal entry {i} is not 1"));
        }
        for j in 0..i {
            if (c[i][j] - c[j][i]).abs() > TOL || c[i][j].abs() > 1.0 + TOL || !c[i][j].is_finite() {
                return bad(format!("entry ({i},{j}) not symmetric or outside [-1, 1]"));
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = c[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -TOL {
            return bad("matrix is not positive semidefinite".into());
        }
        let pivot = d.max(0.0).sqrt();
        l[j][j] = pivot;
        for i in j + 1..n {
            let off = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if pivot <= TOL.sqrt() {
                if off.abs() > 1e-7 {
                    return bad("matrix is not positive semidefinite".into());
                }
                l[i][j] = 0.0;
            } else {
                l[i][j] = off / pivot;
            }
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform nodes every `step` up to `horizon`, with `events` inserted.
    pub fn uniform_with_events(step: f64, horizon: f64, events: &[f64]) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(XvaError::Config(format!("grid step must be positive, got {step}")));
        }
        let horizon = events.iter().copied().fold(horizon.max(0.0), f64::max);
        let mut nodes: Vec<(f64, bool)> = Vec::new();
        let mut k = 0u64;
        loop {
            let t = k as f64 * step;
            if t > horizon + GRID_MERGE_EPS {
                break;
            }
            nodes.push((t, false));
            k += 1;
        }
        nodes.push((horizon, true));
        nodes.extend(events.iter().filter(|&&e| e > 0.0).map(|&e| (e, true)));
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times: Vec<f64> = Vec::with_capacity(nodes.len());
        let mut last_is_event = false;
        for (t, is_event) in nodes {
            match times.last_mut() {
                Some(prev) if (t - *prev).abs() <= GRID_MERGE_EPS => {
                    if is_event && !last_is_event && *prev != 0.0 {
                        *prev = t;
                        last_is_event = true;
                    }
                }
                _ => {
                    times.push(t);
                    last_is_event = is_event;
                }
            }
        }
        Ok(TimeGrid { times })
    }

    /// Grid covering every deal maturity and cash-flow date.
    pub fn for_deals<'a>(step: f64, deals: impl IntoIterator<Item = &'a Deal>) -> Result<Self> {
        let events: Vec<f64> = deals.into_iter().flat_map(|d| d.event_times()).collect();
        Self::uniform_with_events(step, 0.0, &events)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(XvaError::Config("grid must start at 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(XvaError::Config("grid times must increase".into()));
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

/// Simulated spot levels, stored `[underlying][path][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    n_times: usize,
    n_paths: usize,
    path_offset: usize,
    levels: Vec<f64>,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path_offset(&self) -> usize {
        self.path_offset
    }

    /// Levels of one underlying along one (block-local) path.
    pub fn path(&self, underlying: usize, path: usize) -> &[f64] {
        let start = (underlying * self.n_paths + path) * self.n_times;
        &self.levels[start..start + self.n_times]
    }
}

pub fn simulate(model: &RiskFactorModel, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathSet> {
    if n_paths == 0 {
        return Err(XvaError::Config("n_paths must be at least 1".into()));
    }
    Ok(simulate_range(model, grid, seed, 0..n_paths))
}

/// Simulates the global paths `range`; the output is identical to the
/// corresponding slice of a single full simulation.
pub fn simulate_range(model: &RiskFactorModel, grid: &TimeGrid, seed: u64, range: Range<usize>) -> PathSet {
    let times = grid.times();
    let n_times = times.len();
    let n_u = model.underlyings.len();
    let n_paths = range.len();
    let mut levels = vec![0.0; n_u * n_paths * n_times];
    if n_u == 0 || n_times == 0 {
        return PathSet {
            n_times,
            n_paths,
            path_offset: range.start,
            levels,
        };
    }

    // deterministic per-step increments
    let steps: Vec<Vec<(f64, f64)>> = model
        .underlyings
        .iter()
        .map(|u| {
            times
                .windows(2)
                .map(|w| {
                    let dt = w[1] - w[0];
                    let mu = u.drift.integral_to(w[1]) - u.drift.integral_to(w[0]);
                    (mu - 0.5 * u.volatility * u.volatility * dt, u.volatility * dt.sqrt())
                })
                .collect()
        })
        .collect();

    let mut z = vec![0.0; n_u];
    let mut log_s = vec![0.0; n_u];
    let path_offset = range.start;
    for (local, global) in range.enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(global as u64);
        for (u, und) in model.underlyings.iter().enumerate() {
            log_s[u] = und.spot.ln();
            levels[(u * n_paths + local) * n_times] = und.spot;
        }
        for j in 1..n_times {
            for zu in z.iter_mut() {
                *zu = rng.sample(StandardNormal);
            }
            for u in 0..n_u {
                let row = &model.cholesky[u];
                let shock: f64 = (0..=u).map(|k| row[k] * z[k]).sum();
                let (drift, vol) = steps[u][j - 1];
                log_s[u] += drift + vol * shock;
                levels[(u * n_paths + local) * n_times + j] = log_s[u].exp();
            }
        }
    }
    PathSet {
        n_times,
        n_paths,
        path_offset,
        levels,
    }
}

#[derive(Debug, Clone)]
pub struct Portfolio {
    pub model: RiskFactorModel,
    pub deals: Vec<Deal>,
}

impl Portfolio {
    pub fn new(model: RiskFactorModel, deals: Vec<Deal>) -> Result<Self> {
        let mut ids = HashSet::new();
        for d in &deals {
            d.validate()?;
            if !ids.insert(d.id.as_str()) {
                return Err(XvaError::invalid("deal", d.id.clone(), "duplicate id"));
            }
            if let Some(u) = d.underlying() {
                if model.index_of(u).is_none() {
                    return Err(XvaError::invalid(
                        "deal",
                        d.id.clone(),
                        format!("unknown underlying '{u}'"),
                    ));
                }
            }
        }
        Ok(Portfolio { model, deals })
    }

    pub fn index_of(&self, deal_id: &str) -> Option<usize> {
        self.deals.iter().position(|d| d.id == deal_id)
    }

    pub fn max_maturity(&self) -> f64 {
        self.deals.iter().map(|d| d.maturity).fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Portfolio {
            model: self.model.clone(),
            deals: self.deals.iter().map(|d| d.scaled(k)).collect(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.deals.iter().all(|d| d.underlying().is_none())
    }
}

/// Per-node coefficients that make marking a path a few flops per deal.
#[derive(Debug, Clone)]
enum MarkRule {
    /// Same value on every path.
    Fixed(Vec<f64>),
    /// `a[j]·S − b[j]`.
    Linear { underlying: usize, a: Vec<f64>, b: Vec<f64> },
    /// `scale[j]·black(S·fwd[j], K, sd[j])`.
    Option {
        underlying: usize,
        strike: f64,
        option: OptionType,
        scale: Vec<f64>,
        fwd: Vec<f64>,
        sd: Vec<f64>,
    },
}

/// Valuation of a set of deals on a grid under one marking curve.
#[derive(Debug, Clone)]
pub struct MarkingPlan {
    deal_ids: Vec<String>,
    curve_marked: Vec<bool>,
    rules: Vec<MarkRule>,
    n_times: usize,
    marking_curve_id: String,
}

impl MarkingPlan {
    pub fn new(portfolio: &Portfolio, grid: &TimeGrid, curve: &TermCurve) -> Result<Self> {
        let all: Vec<usize> = (0..portfolio.deals.len()).collect();
        Self::for_deals(portfolio, &all, grid, curve)
    }

    pub fn for_deals(portfolio: &Portfolio, deals: &[usize], grid: &TimeGrid, curve: &TermCurve) -> Result<Self> {
        let times = grid.times();
        let mut rules = Vec::with_capacity(deals.len());
        let mut deal_ids = Vec::with_capacity(deals.len());
        let mut curve_marked = Vec::with_capacity(deals.len());
        let p = |s: f64, t: f64| (-(curve.integral_to(t) - curve.integral_to(s))).exp();
        for &k in deals {
            let deal = &portfolio.deals[k];
            curve.require_horizon(deal.maturity)?;
            let alive = |s: f64| s < deal.maturity - TIME_EPS;
            let rule = match &deal.kind {
                DealKind::DeterministicExposure { profile } => MarkRule::Fixed(
                    times
                        .iter()
                        .map(|&s| {
                            if alive(s) {
                                deal.notional * deals::interpolate_profile(profile, s)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                ),
                DealKind::InterestFlowStrip { .. } => {
                    let flows = deal.cash_flows();
                    MarkRule::Fixed(
                        times
                            .iter()
                            .map(|&s| {
                                flows
                                    .iter()
                                    .filter(|f| f.0 > s + TIME_EPS)
                                    .map(|&(t, c)| c * p(s, t))
                                    .sum()
                            })
                            .collect(),
                    )
                }
                DealKind::FxForward { underlying, strike } => {
                    let u = underlying_index(portfolio, deal, underlying)?;
                    let drift = &portfolio.model.underlyings[u].drift;
                    drift.require_horizon(deal.maturity)?;
                    let mut a = Vec::with_capacity(times.len());
                    let mut b = Vec::with_capacity(times.len());
                    for &s in times {
                        if alive(s) {
                            let df = p(s, deal.maturity);
                            let growth = (drift.integral_to(deal.maturity) - drift.integral_to(s)).exp();
                            a.push(deal.notional * df * growth);
                            b.push(deal.notional * df * strike);
                        } else {
                            a.push(0.0);
                            b.push(0.0);
                        }
                    }
                    MarkRule::Linear { underlying: u, a, b }
                }
                DealKind::EuropeanOption {
                    underlying,
                    strike,
                    option,
                } => {
                    let u = underlying_index(portfolio, deal, underlying)?;
                    let und = &portfolio.model.underlyings[u];
                    und.drift.require_horizon(deal.maturity)?;
                    let n = times.len();
                    let (mut scale, mut fwd, mut sd) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
                    for &s in times {
                        if alive(s) {
                            scale.push(deal.notional * p(s, deal.maturity));
                            fwd.push((und.drift.integral_to(deal.maturity) - und.drift.integral_to(s)).exp());
                            sd.push(und.volatility * (deal.maturity - s).sqrt());
                        } else {
                            scale.push(0.0);
                            fwd.push(0.0);
                            sd.push(0.0);
                        }
                    }
                    MarkRule::Option {
                        underlying: u,
                        strike: *strike,
                        option: *option,
                        scale,
                        fwd,
                        sd,
                    }
                }
            };
            rules.push(rule);
            deal_ids.push(deal.id.clone());
            curve_marked.push(deal.is_curve_marked());
        }
        Ok(MarkingPlan {
            deal_ids,
            curve_marked,
            rules,
            n_times: times.len(),
            marking_curve_id: curve.id().to_string(),
        })
    }

    pub fn deal_ids(&self) -> &[String] {
        &self.deal_ids
    }

    pub fn mark(&self, paths: &PathSet) -> ScenarioCube {
        let n_paths = paths.n_paths;
        let nt = self.n_times;
        let mut values = vec![0.0; self.rules.len() * n_paths * nt];
        for (d, rule) in self.rules.iter().enumerate() {
            let block = &mut values[d * n_paths * nt..(d + 1) * n_paths * nt];
            match rule {
                MarkRule::Fixed(v) => {
                    for row in block.chunks_mut(nt) {
                        row.copy_from_slice(v);
                    }
                }
                MarkRule::Linear { underlying, a, b } => {
                    for (path, row) in block.chunks_mut(nt).enumerate() {
                        let s = paths.path(*underlying, path);
                        for j in 0..nt {
                            row[j] = a[j] * s[j] - b[j];
                        }
                    }
                }
                MarkRule::Option {
                    underlying,
                    strike,
                    option,
                    scale,
                    fwd,
                    sd,
                } => {
                    for (path, row) in block.chunks_mut(nt).enumerate() {
                        let s = paths.path(*underlying, path);
                        for j in 0..nt {
                            row[j] = if scale[j] == 0.0 {
                                0.0
                            } else {
                                scale[j] * black(s[j] * fwd[j], *strike, sd[j], *option)
                            };
                        }
                    }
                }
            }
        }
        ScenarioCube {
            deal_ids: self.deal_ids.clone(),
            curve_marked: self.curve_marked.clone(),
            n_paths,
            n_times: nt,
            path_offset: paths.path_offset,
            marking_curve_id: self.marking_curve_id.clone(),
            values,
        }
    }
}

fn underlying_index(portfolio: &Portfolio, deal: &Deal, id: &str) -> Result<usize> {
    portfolio
        .model
        .index_of(id)
        .ok_or_else(|| XvaError::invalid("deal", deal.id.clone(), format!("unknown underlying '{id}'")))
}

/// Deal values `V_s` under one marking curve, stored `[deal][path][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCube {
    deal_ids: Vec<String>,
    curve_marked: Vec<bool>,
    n_paths: usize,
    n_times: usize,
    path_offset: usize,
    marking_curve_id: String,
    values: Vec<f64>,
}

impl ScenarioCube {
    pub fn deal_ids(&self) -> &[String] {
        &self.deal_ids
    }

    pub fn deal_index(&self, id: &str) -> Option<usize> {
        self.deal_ids.iter().position(|d| d == id)
    }

    /// Whether deal `deal` was discounted on the marking curve (as opposed
    /// to a fixed exposure profile).
    pub fn is_curve_marked(&self, deal: usize) -> bool {
        self.curve_marked[deal]
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn path_offset(&self) -> usize {
        self.path_offset
    }

    pub fn marking_curve_id(&self) -> &str {
        &self.marking_curve_id
    }

    pub fn path(&self, deal: usize, path: usize) -> &[f64] {
        let start = (deal * self.n_paths + path) * self.n_times;
        &self.values[start..start + self.n_times]
    }

    pub fn value(&self, deal: usize, path: usize, time: usize) -> f64 {
        self.path(deal, path)[time]
    }
}

/// Marks every deal of `portfolio` on the simulated paths.
pub fn mark_to_future(portfolio: &Portfolio, grid: &TimeGrid, paths: &PathSet, curve: &TermCurve) -> Result<ScenarioCube> {
    Ok(MarkingPlan::new(portfolio, grid, curve)?.mark(paths))
}

/// Time-0 value of each deal, priced directly off spot.
pub fn price_today(portfolio: &Portfolio, curve: &TermCurve) -> Result<Vec<f64>> {
    let grid = TimeGrid::from_times(vec![0.0])?;
    let paths = simulate_range(&portfolio.model, &grid, 0, 0..1);
    let cube = mark_to_future(portfolio, &grid, &paths, curve)?;
    Ok((0..portfolio.deals.len()).map(|d| cube.value(d, 0, 0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriftSpec {
    Flat(f64),
    Pillars(Vec<[f64; 2]>),
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec::Flat(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderlyingSpec {
    pub id: String,
    pub spot: f64,
    pub volatility: f64,
    #[serde(default)]
    pub drift: DriftSpec,
}

/// On-disk portfolio layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioFile {
    #[serde(default)]
    pub underlyings: Vec<UnderlyingSpec>,
    #[serde(default)]
    pub correlation: Vec<Vec<f64>>,
    pub deals: Vec<DealSpec>,
}

impl PortfolioFile {
    pub fn into_portfolio(self) -> Result<Portfolio> {
        let underlyings = self
            .underlyings
            .into_iter()
            .map(|u| {
                let pillars: Vec<(f64, f64)> = match &u.drift {
                    DriftSpec::Flat(r) => vec![(0.0, *r)],
                    DriftSpec::Pillars(p) => p.iter().map(|x| (x[0], x[1])).collect(),
                };
                Ok(Underlying {
                    drift: TermCurve::new(format!("{}_drift", u.id), &pillars)?,
                    id: u.id,
                    spot: u.spot,
                    volatility: u.volatility,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = RiskFactorModel::new(underlyings, self.correlation)?;
        let deals = self.deals.into_iter().map(DealSpec::into_deal).collect::<Result<Vec<_>>>()?;
        Portfolio::new(model, deals)
    }
}

impl From<&Portfolio> for PortfolioFile {
    fn from(p: &Portfolio) -> Self {
        PortfolioFile {
            underlyings: p
                .model
                .underlyings
                .iter()
                .map(|u| UnderlyingSpec {
                    id: u.id.clone(),
                    spot: u.spot,
                    volatility: u.volatility,
                    drift: match u.drift.pillars().as_slice() {
                        [(_, r)] => DriftSpec::Flat(*r),
                        many => DriftSpec::Pillars(many.iter().map(|&(t, r)| [t, r]).collect()),
                    },
                })
                .collect(),
            correlation: p.model.correlation.clone(),
            deals: p.deals.iter().map(DealSpec::from).collect(),
        }
    }
}

/// Deal index by id, for callers resolving hierarchy references.
pub fn deal_lookup(portfolio: &Portfolio) -> HashMap<&str, usize> {
    portfolio.deals.iter().enumerate().map(|(k, d)| (d.id.as_str(), k)).collect()
}
