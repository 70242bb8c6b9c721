//! Bond issuance ledger and funds-transfer-pricing (FTP) estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XvaError};
use crate::termstructures::{RecoverySchedule, TermCurve, TIME_EPS};

/// Maximum trapezoid step used by [`financial_area_balance`].
pub const BALANCE_MAX_STEP: f64 = 1.0 / 52.0;

/// A bond issued by the bank. The yield at issue is the sum of its recorded
/// decomposition, so the decomposition identity holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondIssuance {
    pub issue_time: f64,
    pub maturity: f64,
    pub notional: f64,
    pub ois: f64,
    pub cds: f64,
    pub liquidity: f64,
}

impl BondIssuance {
    pub fn yield_at_issue(&self) -> f64 {
        self.ois + self.cds + self.liquidity
    }

    /// Outstanding at `t`: issued on or before `t` and not yet matured.
    pub fn is_outstanding(&self, t: f64) -> bool {
        self.issue_time <= t + TIME_EPS && t < self.maturity - TIME_EPS
    }

    fn validate(&self, index: usize) -> Result<()> {
        let id = format!("bond[{index}]");
        let fields = [
            self.issue_time,
            self.maturity,
            self.notional,
            self.ois,
            self.cds,
            self.liquidity,
        ];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(XvaError::invalid("bond", id, "non-finite field"));
        }
        if self.issue_time >= self.maturity {
            return Err(XvaError::invalid("bond", id, "issue_time must precede maturity"));
        }
        if self.notional <= 0.0 {
            return Err(XvaError::invalid("bond", id, "notional must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IssuanceLedger {
    bonds: Vec<BondIssuance>,
    current_cds: f64,
    bank_hazard: TermCurve,
    bank_recovery: RecoverySchedule,
}

/// Notional-weighted averages over bonds outstanding at a date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerAverages {
    pub total_notional: f64,
    pub ois: f64,
    pub cds: f64,
    pub liquidity: f64,
    pub bond_yield: f64,
}

impl IssuanceLedger {
    /// Builds a ledger whose bank hazard is implied flat from today's CDS:
    /// `λ = CDS / (1 − R)`.
    pub fn new(bonds: Vec<BondIssuance>, current_cds: f64, bank_recovery: f64) -> Result<Self> {
        if !current_cds.is_finite() || current_cds < 0.0 {
            return Err(XvaError::invalid("ledger", "", "current_cds must be finite and nonnegative"));
        }
        let recovery = RecoverySchedule::constant(bank_recovery)?;
        let hazard = if current_cds == 0.0 {
            0.0
        } else if bank_recovery >= 1.0 {
            return Err(XvaError::invalid(
                "ledger",
                "",
                "positive CDS is incompatible with full recovery",
            ));
        } else {
            current_cds / (1.0 - bank_recovery)
        };
        let hazard = TermCurve::hazard("bank_hazard", &[(0.0, hazard)])?;
        Self::with_bank_credit(bonds, current_cds, hazard, recovery)
    }

    pub fn with_bank_credit(
        bonds: Vec<BondIssuance>,
        current_cds: f64,
        bank_hazard: TermCurve,
        bank_recovery: RecoverySchedule,
    ) -> Result<Self> {
        for (k, b) in bonds.iter().enumerate() {
            b.validate(k)?;
        }
        if !bank_hazard.is_nonnegative() {
            return Err(XvaError::invalid("hazard curve", bank_hazard.id(), "negative hazard rate"));
        }
        Ok(IssuanceLedger {
            bonds,
            current_cds,
            bank_hazard,
            bank_recovery,
        })
    }

    pub fn bonds(&self) -> &[BondIssuance] {
        &self.bonds
    }

    pub fn current_cds(&self) -> f64 {
        self.current_cds
    }

    pub fn bank_hazard(&self) -> &TermCurve {
        &self.bank_hazard
    }

    pub fn bank_recovery(&self) -> &RecoverySchedule {
        &self.bank_recovery
    }

    /// Scales every bond notional by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        let bonds = self
            .bonds
            .iter()
            .map(|b| BondIssuance {
                notional: b.notional * k,
                ..b.clone()
            })
            .collect();
        Self::with_bank_credit(bonds, self.current_cds, self.bank_hazard.clone(), self.bank_recovery.clone())
    }

    /// Outstanding bonds at `t` with their weights `F_i / F_t`.
    pub fn weights(&self, t: f64) -> Result<Vec<(&BondIssuance, f64)>> {
        let live: Vec<&BondIssuance> = self.bonds.iter().filter(|b| b.is_outstanding(t)).collect();
        let total: f64 = live.iter().map(|b| b.notional).sum();
        if live.is_empty() || total <= 0.0 {
            return Err(XvaError::Domain(format!("no bonds outstanding at t={t}")));
        }
        Ok(live.into_iter().map(|b| (b, b.notional / total)).collect())
    }

    pub fn averages(&self, t: f64) -> Result<LedgerAverages> {
        let weights = self.weights(t)?;
        let mut avg = LedgerAverages {
            total_notional: weights.iter().map(|(b, _)| b.notional).sum(),
            ois: 0.0,
            cds: 0.0,
            liquidity: 0.0,
            bond_yield: 0.0,
        };
        for (b, w) in weights {
            avg.ois += w * b.ois;
            avg.cds += w * b.cds;
            avg.liquidity += w * b.liquidity;
            avg.bond_yield += w * b.yield_at_issue();
        }
        Ok(avg)
    }

    /// Latest maturity among bonds outstanding at `t`.
    pub fn last_maturity(&self, t: f64) -> Result<f64> {
        Ok(self
            .weights(t)?
            .iter()
            .map(|(b, _)| b.maturity)
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Which form of the accounting estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FtpForm {
    /// `OIS̄ + l̄ + (CDS̄ − CDS_t)`: exact zero-balance rate with a defaultable bank.
    Exact,
    /// `OIS̄ + l̄`: drops the CDS drift, valid while today's CDS sits at its average.
    #[default]
    Approximate,
}

/// FTP rate that makes the Financial area break even when the bank can default.
pub fn ftp_accounting(ledger: &IssuanceLedger, t: f64, form: FtpForm) -> Result<TermCurve> {
    let avg = ledger.averages(t)?;
    let mut rate = avg.ois + avg.liquidity;
    if form == FtpForm::Exact {
        rate += avg.cds - ledger.current_cds;
    }
    let id = match form {
        FtpForm::Exact => "ftp_accounting_exact",
        FtpForm::Approximate => "ftp_accounting",
    };
    TermCurve::flat(id, rate)
}

/// FTP rate that makes the Financial area break even when the bank is default free:
/// the notional-weighted average issued-bond yield.
pub fn ftp_management(ledger: &IssuanceLedger, t: f64) -> Result<TermCurve> {
    TermCurve::flat("ftp_management", ledger.averages(t)?.bond_yield)
}

/// Internal-bond income minus issued-bond cost, discounted at `risk_free`,
/// over `[t, T]` with `T` the latest outstanding maturity. With
/// `defaultable_bank` the integrand carries bank survival and the recovery
/// saving `(1 − R)λ`; otherwise both drop out.
pub fn financial_area_balance(
    ledger: &IssuanceLedger,
    ftp: &TermCurve,
    risk_free: &TermCurve,
    t: f64,
    defaultable_bank: bool,
) -> Result<f64> {
    let weights = ledger.weights(t)?;
    let horizon = ledger.last_maturity(t)?;
    ftp.require_horizon(horizon)?;
    risk_free.require_horizon(horizon)?;
    let hazard = ledger.bank_hazard();
    if defaultable_bank {
        hazard.require_horizon(horizon)?;
    }
    let recovery = ledger.bank_recovery();

    let mut knots: Vec<f64> = vec![t, horizon];
    knots.extend(ftp.breakpoints_within(t, horizon));
    knots.extend(risk_free.breakpoints_within(t, horizon));
    if defaultable_bank {
        knots.extend(hazard.breakpoints_within(t, horizon));
        knots.extend(recovery.breakpoints_within(t, horizon));
    }
    knots.extend(weights.iter().map(|(b, _)| b.maturity).filter(|&m| m > t && m < horizon));
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);

    // F_{i,t} are fixed at t, so the bond sum collapses to one average yield.
    let total: f64 = weights.iter().map(|(b, _)| b.notional).sum();
    let avg_yield: f64 = weights.iter().map(|(b, w)| w * b.yield_at_issue()).sum();

    let log_df = |s: f64| -> f64 {
        let mut x = risk_free.integral_to(s) - risk_free.integral_to(t);
        if defaultable_bank {
            x += hazard.integral_to(s) - hazard.integral_to(t);
        }
        x
    };

    let mut acc = 0.0;
    for seg in knots.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b - a <= TIME_EPS {
            continue;
        }
        // rates are constant strictly inside a segment
        let mid = 0.5 * (a + b);
        let mut spread = ftp.rate(mid) - avg_yield;
        if defaultable_bank {
            spread += (1.0 - recovery.at(mid)) * hazard.rate(mid);
        }
        let n = ((b - a) / BALANCE_MAX_STEP).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut sum = 0.5 * ((-log_df(a)).exp() + (-log_df(b)).exp());
        for k in 1..n {
            sum += (-log_df(a + k as f64 * h)).exp();
        }
        acc += spread * sum * h;
    }
    Ok(total * acc)
}

/// On-disk ledger layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerFile {
    pub current_cds: f64,
    pub bank_recovery: f64,
    pub bonds: Vec<BondIssuance>,
}

impl LedgerFile {
    pub fn into_ledger(self) -> Result<IssuanceLedger> {
        IssuanceLedger::new(self.bonds, self.current_cds, self.bank_recovery)
    }
}
