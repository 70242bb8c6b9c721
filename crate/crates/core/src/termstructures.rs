//! Deterministic term structures.
//!
//! Every curve stores piecewise-constant instantaneous rates: the rate of a
//! pillar applies from its time up to the next pillar (right-continuous) and
//! the last rate extends flat to the curve horizon. Integrals of such curves
//! are exact finite sums, so discount factors and survival probabilities
//! carry no quadrature error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XvaError};

/// Tolerance used when comparing pillar times.
pub const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TermCurve {
    id: String,
    times: Vec<f64>,
    rates: Vec<f64>,
    /// `cum[k]` = integral of the rate from 0 to `times[k]`.
    cum: Vec<f64>,
    horizon: f64,
}

impl TermCurve {
    /// Builds a curve from `(time, rate)` pillars. The first pillar must sit at
    /// time 0 and times must be strictly increasing.
    pub fn new(id: impl Into<String>, pillars: &[(f64, f64)]) -> Result<Self> {
        let id = id.into();
        if pillars.is_empty() {
            return Err(XvaError::invalid("curve", id, "no pillars"));
        }
        if pillars[0].0.abs() > TIME_EPS {
            return Err(XvaError::invalid("curve", id, "first pillar must be at time 0"));
        }
        let mut times = Vec::with_capacity(pillars.len());
        let mut rates = Vec::with_capacity(pillars.len());
        for (k, &(t, r)) in pillars.iter().enumerate() {
            if !t.is_finite() || !r.is_finite() {
                return Err(XvaError::invalid("curve", id, format!("non-finite pillar {k}")));
            }
            if k > 0 && t <= times[k - 1] {
                return Err(XvaError::invalid(
                    "curve",
                    id,
                    format!("pillar times not strictly increasing at index {k}"),
                ));
            }
            times.push(if k == 0 { 0.0 } else { t });
            rates.push(r);
        }
        let mut cum = Vec::with_capacity(times.len());
        cum.push(0.0);
        for k in 1..times.len() {
            cum.push(cum[k - 1] + rates[k - 1] * (times[k] - times[k - 1]));
        }
        Ok(TermCurve {
            id,
            times,
            rates,
            cum,
            horizon: f64::INFINITY,
        })
    }

    /// A hazard-rate curve: as [`TermCurve::new`] but every rate must be nonnegative.
    pub fn hazard(id: impl Into<String>, pillars: &[(f64, f64)]) -> Result<Self> {
        let curve = Self::new(id, pillars)?;
        if let Some(k) = curve.rates.iter().position(|&r| r < 0.0) {
            return Err(XvaError::invalid(
                "hazard curve",
                curve.id,
                format!("negative hazard rate at pillar {k}"),
            ));
        }
        Ok(curve)
    }

    pub fn flat(id: impl Into<String>, rate: f64) -> Result<Self> {
        Self::new(id, &[(0.0, rate)])
    }

    /// Restricts the times the curve may be evaluated at. Curves are
    /// unbounded unless a horizon is set.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(XvaError::invalid("curve", self.id, "horizon must be positive"));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn pillars(&self) -> Vec<(f64, f64)> {
        self.times.iter().copied().zip(self.rates.iter().copied()).collect()
    }

    /// Same rates and horizon, whatever the ids.
    pub fn same_rates(&self, other: &TermCurve) -> bool {
        self.times == other.times && self.rates == other.rates && self.horizon == other.horizon
    }

    pub fn pillar_times(&self) -> &[f64] {
        &self.times
    }

    pub fn is_nonnegative(&self) -> bool {
        self.rates.iter().all(|&r| r >= 0.0)
    }

    /// Errors unless the curve can be evaluated up to `time`.
    pub fn require_horizon(&self, time: f64) -> Result<()> {
        if time > self.horizon + TIME_EPS {
            return Err(XvaError::Horizon {
                entity: "curve",
                id: self.id.clone(),
                horizon: self.horizon,
                required: time,
            });
        }
        Ok(())
    }

    fn segment(&self, s: f64) -> usize {
        // last pillar with time <= s
        self.times.partition_point(|&t| t <= s).saturating_sub(1)
    }

    /// Instantaneous rate at `s` (right-continuous at pillars).
    pub fn rate(&self, s: f64) -> f64 {
        self.rates[self.segment(s)]
    }

    /// Integral of the instantaneous rate from 0 to `s`.
    pub fn integral_to(&self, s: f64) -> f64 {
        let k = self.segment(s);
        self.cum[k] + self.rates[k] * (s - self.times[k])
    }

    /// Integral of the instantaneous rate over `[t, s]`.
    pub fn integral(&self, t: f64, s: f64) -> Result<f64> {
        if t < 0.0 || s < t {
            return Err(XvaError::Domain(format!(
                "curve '{}' integrated over [{t}, {s}]",
                self.id
            )));
        }
        self.require_horizon(s)?;
        Ok(self.integral_to(s) - self.integral_to(t))
    }

    /// Pillar times strictly inside `(a, b)`.
    pub fn breakpoints_within(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.times
            .iter()
            .copied()
            .filter(move |&t| t > a + TIME_EPS && t < b - TIME_EPS)
    }
}

/// `exp(-∫_t^s r(u) du)` for a rate curve.
pub fn discount_factor(curve: &TermCurve, t: f64, s: f64) -> Result<f64> {
    Ok((-curve.integral(t, s)?).exp())
}

/// `exp(-∫_t^s λ(u) du)` for a hazard curve.
pub fn survival_probability(hazard: &TermCurve, t: f64, s: f64) -> Result<f64> {
    if !hazard.is_nonnegative() {
        return Err(XvaError::invalid(
            "hazard curve",
            hazard.id(),
            "negative hazard rate",
        ));
    }
    discount_factor(hazard, t, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineOp {
    Add,
    Subtract,
}

/// Pointwise sum or difference of two curves on the union of their pillars.
pub fn curve_combine(a: &TermCurve, b: &TermCurve, op: CombineOp) -> TermCurve {
    let mut times: Vec<f64> = a.times.iter().chain(b.times.iter()).copied().collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|x, y| (*x - *y).abs() <= TIME_EPS);
    let sign = match op {
        CombineOp::Add => 1.0,
        CombineOp::Subtract => -1.0,
    };
    let pillars: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| (t, a.rate(t) + sign * b.rate(t)))
        .collect();
    let symbol = if sign > 0.0 { '+' } else { '-' };
    let mut out = TermCurve::new(format!("{}{symbol}{}", a.id, b.id), &pillars)
        .expect("union of valid pillar sets is valid");
    out.horizon = a.horizon.min(b.horizon);
    out
}

/// Recovery fraction, constant or stepped in time.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoverySchedule {
    steps: Vec<(f64, f64)>,
}

impl RecoverySchedule {
    pub fn constant(value: f64) -> Result<Self> {
        Self::stepped(&[(0.0, value)])
    }

    /// Steps are `(from_time, recovery)`; the first must start at 0.
    pub fn stepped(steps: &[(f64, f64)]) -> Result<Self> {
        if steps.is_empty() || steps[0].0.abs() > TIME_EPS {
            return Err(XvaError::invalid("recovery", "", "steps must start at time 0"));
        }
        for (k, &(t, r)) in steps.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(XvaError::invalid(
                    "recovery",
                    "",
                    format!("recovery {r} outside [0, 1]"),
                ));
            }
            if k > 0 && t <= steps[k - 1].0 {
                return Err(XvaError::invalid("recovery", "", "step times not increasing"));
            }
        }
        Ok(RecoverySchedule {
            steps: steps.to_vec(),
        })
    }

    pub fn at(&self, s: f64) -> f64 {
        let k = self.steps.partition_point(|&(t, _)| t <= s).saturating_sub(1);
        self.steps[k].1
    }

    pub fn breakpoints_within(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.steps
            .iter()
            .map(|&(t, _)| t)
            .filter(move |&t| t > a + TIME_EPS && t < b - TIME_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Discount,
    Hazard,
    Funding,
    Collateral,
    Liquidity,
}

/// On-disk representation of a single curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveDocument {
    pub id: String,
    pub kind: CurveKind,
    pub pillars: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl CurveDocument {
    pub fn from_curve(curve: &TermCurve, kind: CurveKind) -> Self {
        CurveDocument {
            id: curve.id().to_string(),
            kind,
            pillars: curve.pillars().into_iter().map(|(t, r)| [t, r]).collect(),
            recovery: None,
            horizon: curve.horizon().is_finite().then_some(curve.horizon()),
        }
    }

    pub fn to_curve(&self) -> Result<TermCurve> {
        let pillars: Vec<(f64, f64)> = self.pillars.iter().map(|p| (p[0], p[1])).collect();
        let curve = match self.kind {
            CurveKind::Hazard => TermCurve::hazard(self.id.clone(), &pillars)?,
            _ => TermCurve::new(self.id.clone(), &pillars)?,
        };
        match self.horizon {
            Some(h) => curve.with_horizon(h),
            None => Ok(curve),
        }
    }

    pub fn recovery_schedule(&self) -> Result<Option<RecoverySchedule>> {
        self.recovery.map(RecoverySchedule::constant).transpose()
    }
}

/// Curves loaded from documents, addressed by id.
#[derive(Debug, Clone, Default)]
pub struct CurveSet {
    docs: BTreeMap<String, CurveDocument>,
}

impl CurveSet {
    pub fn from_documents(docs: impl IntoIterator<Item = CurveDocument>) -> Result<Self> {
        let mut set = CurveSet::default();
        for doc in docs {
            set.insert(doc)?;
        }
        Ok(set)
    }

    /// Adds a document after validating it; duplicate ids are rejected.
    pub fn insert(&mut self, doc: CurveDocument) -> Result<()> {
        doc.to_curve()?;
        doc.recovery_schedule()?;
        if self.docs.contains_key(&doc.id) {
            return Err(XvaError::invalid("curve", doc.id, "duplicate id"));
        }
        self.docs.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn curve(&self, id: &str) -> Result<TermCurve> {
        self.document(id)?.to_curve()
    }

    pub fn document(&self, id: &str) -> Result<&CurveDocument> {
        self.docs.get(id).ok_or_else(|| XvaError::missing("curve", id))
    }

    /// Adds an in-memory curve under its own id.
    pub fn insert_curve(&mut self, curve: &TermCurve, kind: CurveKind) -> Result<()> {
        self.insert(CurveDocument::from_curve(curve, kind))
    }

    pub fn with_curve(mut self, curve: &TermCurve, kind: CurveKind) -> Result<Self> {
        self.insert_curve(curve, kind)?;
        Ok(self)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.docs.contains_key(id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &CurveDocument> {
        self.docs.values()
    }

    /// The unique curve of `kind`, if there is exactly one.
    pub fn single_of_kind(&self, kind: CurveKind) -> Option<&CurveDocument> {
        let mut it = self.docs.values().filter(|d| d.kind == kind);
        match (it.next(), it.next()) {
            (Some(d), None) => Some(d),
            _ => None,
        }
    }
}
