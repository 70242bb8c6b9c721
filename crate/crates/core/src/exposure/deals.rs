use serde::{Deserialize, Serialize};

use crate::error::{Result, XvaError};
use crate::termstructures::TIME_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionType {
    #[default]
    Call,
    Put,
}

impl OptionType {
    fn omega(self) -> f64 {
        match self {
            OptionType::Call => 1.0,
            OptionType::Put => -1.0,
        }
    }
}

/// Product-specific terms. The sign of [`Deal::notional`] sets the direction
/// (negative = short / pay).
#[derive(Debug, Clone, PartialEq)]
pub enum DealKind {
    /// Value `notional · profile(s)`, fixed in advance and independent of any
    /// curve or path.
    DeterministicExposure { profile: Vec<(f64, f64)> },
    FxForward { underlying: String, strike: f64 },
    EuropeanOption {
        underlying: String,
        strike: f64,
        option: OptionType,
    },
    /// Fixed coupons `notional · rate / frequency` on a schedule rolled back
    /// from maturity, plus the notional at maturity when `principal` is set.
    InterestFlowStrip {
        rate: f64,
        frequency: f64,
        principal: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deal {
    pub id: String,
    pub notional: f64,
    pub maturity: f64,
    pub kind: DealKind,
    pub netting_set_id: Option<String>,
    pub csa_id: Option<String>,
}

impl Deal {
    pub fn deterministic(id: &str, notional: f64, maturity: f64, profile: &[(f64, f64)]) -> Self {
        Deal {
            id: id.to_string(),
            notional,
            maturity,
            kind: DealKind::DeterministicExposure {
                profile: profile.to_vec(),
            },
            netting_set_id: None,
            csa_id: None,
        }
    }

    pub fn flow_strip(id: &str, notional: f64, rate: f64, maturity: f64, frequency: f64, principal: bool) -> Self {
        Deal {
            id: id.to_string(),
            notional,
            maturity,
            kind: DealKind::InterestFlowStrip {
                rate,
                frequency,
                principal,
            },
            netting_set_id: None,
            csa_id: None,
        }
    }

    pub fn fx_forward(id: &str, underlying: &str, notional: f64, strike: f64, maturity: f64) -> Self {
        Deal {
            id: id.to_string(),
            notional,
            maturity,
            kind: DealKind::FxForward {
                underlying: underlying.to_string(),
                strike,
            },
            netting_set_id: None,
            csa_id: None,
        }
    }

    pub fn option(id: &str, underlying: &str, option: OptionType, notional: f64, strike: f64, maturity: f64) -> Self {
        Deal {
            id: id.to_string(),
            notional,
            maturity,
            kind: DealKind::EuropeanOption {
                underlying: underlying.to_string(),
                strike,
                option,
            },
            netting_set_id: None,
            csa_id: None,
        }
    }

    pub fn in_netting_set(mut self, ns: &str) -> Self {
        self.netting_set_id = Some(ns.to_string());
        self
    }

    pub fn in_csa(mut self, csa: &str) -> Self {
        self.csa_id = Some(csa.to_string());
        self
    }

    pub fn scaled(&self, k: f64) -> Self {
        Deal {
            notional: self.notional * k,
            ..self.clone()
        }
    }

    /// False only for fixed exposure profiles, whose values do not depend
    /// on the marking curve.
    pub fn is_curve_marked(&self) -> bool {
        !matches!(self.kind, DealKind::DeterministicExposure { .. })
    }

    pub fn underlying(&self) -> Option<&str> {
        match &self.kind {
            DealKind::FxForward { underlying, .. } | DealKind::EuropeanOption { underlying, .. } => {
                Some(underlying)
            }
            _ => None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(XvaError::invalid("deal", self.id.clone(), reason));
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            return bad("maturity must be positive");
        }
        if self.notional == 0.0 || !self.notional.is_finite() {
            return bad("notional must be nonzero");
        }
        match &self.kind {
            DealKind::DeterministicExposure { profile } => {
                if profile.is_empty() {
                    return bad("empty profile");
                }
                if profile.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("profile times not increasing");
                }
                if profile.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                    return bad("non-finite profile point");
                }
            }
            DealKind::FxForward { strike, .. } => {
                if !strike.is_finite() {
                    return bad("non-finite strike");
                }
            }
            DealKind::EuropeanOption { strike, .. } => {
                if !(*strike > 0.0) {
                    return bad("option strike must be positive");
                }
            }
            DealKind::InterestFlowStrip { rate, frequency, .. } => {
                if !rate.is_finite() || !(*frequency > 0.0) {
                    return bad("flow strip needs finite rate and positive frequency");
                }
            }
        }
        Ok(())
    }

    /// Cash-flow dates and amounts of a flow strip; empty for other kinds.
    pub fn cash_flows(&self) -> Vec<(f64, f64)> {
        let DealKind::InterestFlowStrip {
            rate,
            frequency,
            principal,
        } = self.kind
        else {
            return Vec::new();
        };
        let period = 1.0 / frequency;
        let coupon = self.notional * rate * period;
        let mut flows = Vec::new();
        let mut k = 0usize;
        loop {
            let t = self.maturity - k as f64 * period;
            if t <= TIME_EPS {
                break;
            }
            flows.push((t, coupon));
            k += 1;
        }
        flows.reverse();
        if principal {
            flows.last_mut().expect("maturity is positive").1 += self.notional;
        }
        flows.retain(|f| f.1 != 0.0);
        flows
    }

    /// Times the exposure grid must contain for this deal.
    pub fn event_times(&self) -> Vec<f64> {
        let mut ev = vec![self.maturity];
        ev.extend(self.cash_flows().into_iter().map(|f| f.0));
        ev
    }
}

/// Linear interpolation with flat extrapolation.
pub(crate) fn interpolate_profile(profile: &[(f64, f64)], s: f64) -> f64 {
    let k = profile.partition_point(|p| p.0 <= s);
    if k == 0 {
        return profile[0].1;
    }
    if k == profile.len() {
        return profile[k - 1].1;
    }
    let (t0, v0) = profile[k - 1];
    let (t1, v1) = profile[k];
    v0 + (v1 - v0) * (s - t0) / (t1 - t0)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Undiscounted Black price on a forward.
pub fn black(forward: f64, strike: f64, stdev: f64, option: OptionType) -> f64 {
    let w = option.omega();
    if stdev <= 0.0 || forward <= 0.0 {
        return (w * (forward - strike)).max(0.0);
    }
    let d1 = ((forward / strike).ln() + 0.5 * stdev * stdev) / stdev;
    let d2 = d1 - stdev;
    w * (forward * normal_cdf(w * d1) - strike * normal_cdf(w * d2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DealKindTag {
    DeterministicExposure,
    FxForward,
    EuropeanOption,
    InterestFlowStrip,
}

/// On-disk deal layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DealSpec {
    pub id: String,
    pub kind: DealKindTag,
    pub notional: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    pub maturity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub underlying: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_type: Option<OptionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csa_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub netting_set_id: Option<String>,
}

impl DealSpec {
    pub fn into_deal(self) -> Result<Deal> {
        let need = |what: &str| XvaError::invalid("deal", self.id.clone(), format!("missing {what}"));
        let kind = match self.kind {
            DealKindTag::DeterministicExposure => DealKind::DeterministicExposure {
                profile: self
                    .profile
                    .as_ref()
                    .ok_or_else(|| need("profile"))?
                    .iter()
                    .map(|p| (p[0], p[1]))
                    .collect(),
            },
            DealKindTag::FxForward => DealKind::FxForward {
                underlying: self.underlying.clone().ok_or_else(|| need("underlying"))?,
                strike: self.strike.ok_or_else(|| need("strike"))?,
            },
            DealKindTag::EuropeanOption => DealKind::EuropeanOption {
                underlying: self.underlying.clone().ok_or_else(|| need("underlying"))?,
                strike: self.strike.ok_or_else(|| need("strike"))?,
                option: self.option_type.unwrap_or_default(),
            },
            DealKindTag::InterestFlowStrip => DealKind::InterestFlowStrip {
                rate: self.strike.ok_or_else(|| need("strike (coupon rate)"))?,
                frequency: self.frequency.unwrap_or(1.0),
                principal: self.principal.unwrap_or(false),
            },
        };
        let deal = Deal {
            id: self.id,
            notional: self.notional,
            maturity: self.maturity,
            kind,
            netting_set_id: self.netting_set_id,
            csa_id: self.csa_id,
        };
        deal.validate()?;
        Ok(deal)
    }
}

impl From<&Deal> for DealSpec {
    fn from(d: &Deal) -> Self {
        let mut spec = DealSpec {
            id: d.id.clone(),
            kind: DealKindTag::DeterministicExposure,
            notional: d.notional,
            strike: None,
            maturity: d.maturity,
            underlying: None,
            profile: None,
            option_type: None,
            frequency: None,
            principal: None,
            csa_id: d.csa_id.clone(),
            netting_set_id: d.netting_set_id.clone(),
        };
        match &d.kind {
            DealKind::DeterministicExposure { profile } => {
                spec.profile = Some(profile.iter().map(|&(t, v)| [t, v]).collect());
            }
            DealKind::FxForward { underlying, strike } => {
                spec.kind = DealKindTag::FxForward;
                spec.underlying = Some(underlying.clone());
                spec.strike = Some(*strike);
            }
            DealKind::EuropeanOption {
                underlying,
                strike,
                option,
            } => {
                spec.kind = DealKindTag::EuropeanOption;
                spec.underlying = Some(underlying.clone());
                spec.strike = Some(*strike);
                spec.option_type = Some(*option);
            }
            DealKind::InterestFlowStrip {
                rate,
                frequency,
                principal,
            } => {
                spec.kind = DealKindTag::InterestFlowStrip;
                spec.strike = Some(*rate);
                spec.frequency = Some(*frequency);
                spec.principal = Some(*principal);
            }
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_schedule() {
        let d = Deal::flow_strip("s", 100.0, 0.05, 2.0, 2.0, true);
        let flows = d.cash_flows();
        assert_eq!(flows.len(), 4);
        assert!((flows[0].0 - 0.5).abs() < 1e-15);
        assert!((flows[0].1 - 2.5).abs() < 1e-15);
        assert!((flows[3].1 - 102.5).abs() < 1e-12);

        // zero coupon: only the principal survives
        let zc = Deal::flow_strip("z", 100.0, 0.0, 5.0, 1.0, true);
        assert_eq!(zc.cash_flows(), vec![(5.0, 100.0)]);
    }

    #[test]
    fn profile_interpolation() {
        let p = [(0.0, 100.0), (2.0, 50.0)];
        assert_eq!(interpolate_profile(&p, 1.0), 75.0);
        assert_eq!(interpolate_profile(&p, 3.0), 50.0);
        assert_eq!(interpolate_profile(&[(1.0, 7.0)], 0.0), 7.0);
    }

    #[test]
    fn black_parity_and_limits() {
        let (f, k, sd) = (105.0, 100.0, 0.25);
        let c = black(f, k, sd, OptionType::Call);
        let p = black(f, k, sd, OptionType::Put);
        assert!((c - p - (f - k)).abs() < 1e-12);
        assert_eq!(black(f, k, 0.0, OptionType::Call), 5.0);
        assert_eq!(black(f, k, 0.0, OptionType::Put), 0.0);
        // a textbook value: F=K=100, sd=0.2 -> 100·(2N(0.1)−1)
        let atm = black(100.0, 100.0, 0.2, OptionType::Call);
        assert!((atm - 7.965567455405804).abs() < 1e-10);
    }

    #[test]
    fn spec_round_trip() {
        let deals = [
            Deal::deterministic("d", 1.0, 5.0, &[(0.0, 100.0)]).in_netting_set("ns"),
            Deal::fx_forward("f", "EURUSD", -2.0, 1.1, 3.0).in_csa("c1"),
            Deal::option("o", "SPX", OptionType::Put, 3.0, 90.0, 2.0),
            Deal::flow_strip("s", 100.0, 0.03, 4.0, 2.0, false),
        ];
        for d in deals {
            let json = serde_json::to_string(&DealSpec::from(&d)).unwrap();
            let back: DealSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back.into_deal().unwrap(), d);
        }
    }

    #[test]
    fn invalid_deals() {
        assert!(Deal::deterministic("d", 0.0, 1.0, &[(0.0, 1.0)]).validate().is_err());
        assert!(Deal::deterministic("d", 1.0, -1.0, &[(0.0, 1.0)]).validate().is_err());
        let spec = r#"{"id":"x","kind":"fx_forward","notional":1,"maturity":1}"#;
        let spec: DealSpec = serde_json::from_str(spec).unwrap();
        let err = spec.into_deal().unwrap_err().to_string();
        assert!(err.contains("'x'"), "{err}");
    }
}
