//! Variation margin per CSA and funding positions `F = V − M` per netting set
//! and for the legal entity.
//!
//! Sign convention: `M > 0` is collateral held by the bank.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XvaError};
use crate::exposure::{Portfolio, ScenarioCube};
use crate::termstructures::{CurveSet, RecoverySchedule, TermCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsaMode {
    BilateralFull,
    /// Only the counterparty posts: the bank holds `max(V, 0)`.
    UnilateralCounterpartyPosts,
    /// Only the bank posts: the bank holds `min(V, 0)`.
    UnilateralBankPosts,
    Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsaTerms {
    pub id: String,
    pub mode: CsaMode,
    pub threshold_bank: f64,
    pub threshold_cpty: f64,
    pub remuneration_curve: TermCurve,
    /// Carried for reporting; cash collateral is always treated as reusable.
    pub rehypothecable: bool,
    pub deal_ids: Vec<String>,
}

impl CsaTerms {
    pub fn new(id: &str, mode: CsaMode, remuneration_curve: TermCurve, deal_ids: &[&str]) -> Self {
        CsaTerms {
            id: id.to_string(),
            mode,
            threshold_bank: 0.0,
            threshold_cpty: 0.0,
            remuneration_curve,
            rehypothecable: true,
            deal_ids: deal_ids.iter().map(|d| d.to_string()).collect(),
        }
    }

    pub fn with_thresholds(mut self, bank: f64, cpty: f64) -> Self {
        self.threshold_bank = bank;
        self.threshold_cpty = cpty;
        self
    }

    /// Margin held against a CSA-netted value `v`.
    pub fn margin(&self, v: f64) -> f64 {
        match self.mode {
            CsaMode::BilateralFull => v,
            CsaMode::UnilateralCounterpartyPosts => v.max(0.0),
            CsaMode::UnilateralBankPosts => v.min(0.0),
            CsaMode::Threshold => (v - self.threshold_cpty).max(0.0) + (v + self.threshold_bank).min(0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold_bank >= 0.0 && self.threshold_cpty >= 0.0)
            || !self.threshold_bank.is_finite()
            || !self.threshold_cpty.is_finite()
        {
            return Err(XvaError::invalid("csa", self.id.clone(), "thresholds must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NettingSet {
    pub id: String,
    pub counterparty_hazard: TermCurve,
    pub counterparty_recovery: RecoverySchedule,
    pub csas: Vec<CsaTerms>,
    pub uncovered_deal_ids: Vec<String>,
}

impl NettingSet {
    pub fn deal_ids(&self) -> impl Iterator<Item = &str> {
        self.csas
            .iter()
            .flat_map(|c| c.deal_ids.iter())
            .chain(self.uncovered_deal_ids.iter())
            .map(String::as_str)
    }
}

/// All netting sets of the legal entity, checked against a portfolio.
#[derive(Debug, Clone)]
pub struct NettingHierarchy {
    netting_sets: Vec<NettingSet>,
    /// Portfolio deal indices per netting set (all deals) and per CSA.
    ns_deals: Vec<Vec<usize>>,
    csa_deals: Vec<Vec<Vec<usize>>>,
}

impl NettingHierarchy {
    pub fn new(netting_sets: Vec<NettingSet>, portfolio: &Portfolio) -> Result<Self> {
        let index: HashMap<&str, usize> =
            portfolio.deals.iter().enumerate().map(|(k, d)| (d.id.as_str(), k)).collect();
        let mut owner: Vec<Option<&str>> = vec![None; portfolio.deals.len()];
        let mut ns_ids = std::collections::HashSet::new();
        let mut csa_ids = std::collections::HashSet::new();
        let mut ns_deals = Vec::new();
        let mut csa_deals = Vec::new();

        for ns in &netting_sets {
            if !ns_ids.insert(ns.id.as_str()) {
                return Err(XvaError::invalid("netting set", ns.id.clone(), "duplicate id"));
            }
            if !ns.counterparty_hazard.is_nonnegative() {
                return Err(XvaError::invalid("netting set", ns.id.clone(), "negative counterparty hazard"));
            }
            let mut claim = |deal_id: &str, csa: Option<&CsaTerms>| -> Result<usize> {
                let k = *index.get(deal_id).ok_or_else(|| {
                    XvaError::invalid("netting set", ns.id.clone(), format!("unknown deal '{deal_id}'"))
                })?;
                if let Some(other) = owner[k] {
                    return Err(XvaError::invalid(
                        "deal",
                        deal_id,
                        format!("assigned twice (netting set '{other}' and '{}')", ns.id),
                    ));
                }
                owner[k] = Some(ns.id.as_str());
                let deal = &portfolio.deals[k];
                if let Some(declared) = &deal.netting_set_id {
                    if declared != &ns.id {
                        return Err(XvaError::invalid(
                            "deal",
                            deal_id,
                            format!("declares netting set '{declared}' but hierarchy puts it in '{}'", ns.id),
                        ));
                    }
                }
                let placed = csa.map(|c| c.id.as_str());
                if deal.csa_id.is_some() && deal.csa_id.as_deref() != placed {
                    return Err(XvaError::invalid(
                        "deal",
                        deal_id,
                        format!("declares CSA '{}' but hierarchy disagrees", deal.csa_id.as_deref().unwrap_or("")),
                    ));
                }
                Ok(k)
            };

            let mut all = Vec::new();
            let mut per_csa = Vec::new();
            for csa in &ns.csas {
                csa.validate()?;
                if !csa_ids.insert(csa.id.as_str()) {
                    return Err(XvaError::invalid("csa", csa.id.clone(), "duplicate id"));
                }
                let mut ks = Vec::new();
                for d in &csa.deal_ids {
                    let k = claim(d, Some(csa))?;
                    ks.push(k);
                    all.push(k);
                }
                per_csa.push(ks);
            }
            for d in &ns.uncovered_deal_ids {
                all.push(claim(d, None)?);
            }
            ns_deals.push(all);
            csa_deals.push(per_csa);
        }
        if let Some(k) = owner.iter().position(Option::is_none) {
            return Err(XvaError::invalid(
                "deal",
                portfolio.deals[k].id.clone(),
                "not assigned to any netting set",
            ));
        }
        Ok(NettingHierarchy {
            netting_sets,
            ns_deals,
            csa_deals,
        })
    }

    pub fn netting_sets(&self) -> &[NettingSet] {
        &self.netting_sets
    }

    /// Portfolio indices of every deal in netting set `ns`.
    pub fn netting_set_deals(&self, ns: usize) -> &[usize] {
        &self.ns_deals[ns]
    }

    /// Portfolio indices of the deals under CSA `csa` of netting set `ns`.
    pub fn csa_deals(&self, ns: usize, csa: usize) -> &[usize] {
        &self.csa_deals[ns][csa]
    }

    pub fn map_csas(&self, f: impl Fn(&CsaTerms) -> CsaTerms) -> Self {
        let mut out = self.clone();
        for ns in &mut out.netting_sets {
            for c in &mut ns.csas {
                *c = f(c);
            }
        }
        out
    }

    pub fn map_netting_sets(&self, f: impl Fn(&NettingSet) -> NettingSet) -> Self {
        let mut out = self.clone();
        for ns in &mut out.netting_sets {
            *ns = f(ns);
        }
        out
    }
}

/// Margin `M[path][time]` of one CSA, computed on the CSA-netted value.
pub fn margin_paths(cube: &ScenarioCube, csa: &CsaTerms) -> Result<Vec<f64>> {
    let idx = csa
        .deal_ids
        .iter()
        .map(|d| {
            cube.deal_index(d)
                .ok_or_else(|| XvaError::invalid("csa", csa.id.clone(), format!("deal '{d}' missing from cube")))
        })
        .collect::<Result<Vec<_>>>()?;
    let nt = cube.n_times();
    let mut out = vec![0.0; cube.n_paths() * nt];
    for (p, row) in out.chunks_mut(nt).enumerate() {
        for &d in &idx {
            for (acc, v) in row.iter_mut().zip(cube.path(d, p)) {
                *acc += v;
            }
        }
        for m in row.iter_mut() {
            *m = csa.margin(*m);
        }
    }
    Ok(out)
}

/// `V`, `M` and `F = V − M` on `[path][time]` for each netting set and the legal entity.
#[derive(Debug, Clone, PartialEq)]
pub struct FundingPositions {
    pub n_paths: usize,
    pub n_times: usize,
    pub v_ns: Vec<Vec<f64>>,
    /// Part of `v_ns` coming from curve-marked deals.
    pub v_marked_ns: Vec<Vec<f64>>,
    pub m_ns: Vec<Vec<f64>>,
    pub f_ns: Vec<Vec<f64>>,
    pub v_le: Vec<f64>,
    pub m_le: Vec<f64>,
    pub f_le: Vec<f64>,
}

/// Funding positions with every CSA margined off the same cube.
pub fn funding_positions(cube: &ScenarioCube, hierarchy: &NettingHierarchy) -> Result<FundingPositions> {
    let margins = hierarchy
        .netting_sets()
        .iter()
        .map(|ns| ns.csas.iter().map(|c| margin_paths(cube, c)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    funding_positions_with_margins(cube, hierarchy, &margins)
}

/// Funding positions given precomputed CSA margins `margins[ns][csa]`.
pub fn funding_positions_with_margins(
    cube: &ScenarioCube,
    hierarchy: &NettingHierarchy,
    margins: &[Vec<Vec<f64>>],
) -> Result<FundingPositions> {
    let n_paths = cube.n_paths();
    let nt = cube.n_times();
    let size = n_paths * nt;
    let mut out = FundingPositions {
        n_paths,
        n_times: nt,
        v_ns: Vec::new(),
        v_marked_ns: Vec::new(),
        m_ns: Vec::new(),
        f_ns: Vec::new(),
        v_le: vec![0.0; size],
        m_le: vec![0.0; size],
        f_le: vec![0.0; size],
    };
    for (n, ns) in hierarchy.netting_sets().iter().enumerate() {
        let mut v = vec![0.0; size];
        let mut vm = vec![0.0; size];
        for id in ns.deal_ids() {
            let d = cube
                .deal_index(id)
                .ok_or_else(|| XvaError::invalid("netting set", ns.id.clone(), format!("deal '{id}' missing from cube")))?;
            let marked = cube.is_curve_marked(d);
            for p in 0..n_paths {
                let row = cube.path(d, p);
                for (acc, x) in v[p * nt..(p + 1) * nt].iter_mut().zip(row) {
                    *acc += x;
                }
                if marked {
                    for (acc, x) in vm[p * nt..(p + 1) * nt].iter_mut().zip(row) {
                        *acc += x;
                    }
                }
            }
        }
        let mut m = vec![0.0; size];
        for cm in &margins[n] {
            for (acc, x) in m.iter_mut().zip(cm) {
                *acc += x;
            }
        }
        let f: Vec<f64> = v.iter().zip(&m).map(|(a, b)| a - b).collect();
        for k in 0..size {
            out.v_le[k] += v[k];
            out.m_le[k] += m[k];
            out.f_le[k] += f[k];
        }
        out.v_ns.push(v);
        out.v_marked_ns.push(vm);
        out.m_ns.push(m);
        out.f_ns.push(f);
    }
    Ok(out)
}

/// Expected positive exposure per time node of a `[path][time]` grid.
pub fn expected_positive_exposure(values: &[f64], n_paths: usize, n_times: usize) -> Vec<f64> {
    let mut epe = vec![0.0; n_times];
    for row in values.chunks(n_times).take(n_paths) {
        for (e, v) in epe.iter_mut().zip(row) {
            *e += v.max(0.0);
        }
    }
    epe.iter_mut().for_each(|e| *e /= n_paths as f64);
    epe
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsaSpec {
    pub id: String,
    pub mode: CsaMode,
    #[serde(default)]
    pub threshold_bank: f64,
    #[serde(default)]
    pub threshold_cpty: f64,
    pub remuneration_curve_id: String,
    #[serde(default = "default_true")]
    pub rehypothecable: bool,
    pub deal_ids: Vec<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NettingSetSpec {
    pub id: String,
    pub hazard_pillars: Vec<[f64; 2]>,
    pub recovery: f64,
    #[serde(default)]
    pub csas: Vec<CsaSpec>,
    #[serde(default)]
    pub uncovered_deal_ids: Vec<String>,
}

/// On-disk hierarchy layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub netting_sets: Vec<NettingSetSpec>,
}

impl HierarchyFile {
    pub fn into_hierarchy(self, curves: &CurveSet, portfolio: &Portfolio) -> Result<NettingHierarchy> {
        let mut sets = Vec::new();
        for ns in self.netting_sets {
            let pillars: Vec<(f64, f64)> = ns.hazard_pillars.iter().map(|p| (p[0], p[1])).collect();
            let hazard = TermCurve::hazard(format!("{}_hazard", ns.id), &pillars)?;
            let recovery = RecoverySchedule::constant(ns.recovery)
                .map_err(|_| XvaError::invalid("netting set", ns.id.clone(), "recovery outside [0, 1]"))?;
            let csas = ns
                .csas
                .into_iter()
                .map(|c| {
                    Ok(CsaTerms {
                        remuneration_curve: curves.curve(&c.remuneration_curve_id)?,
                        id: c.id,
                        mode: c.mode,
                        threshold_bank: c.threshold_bank,
                        threshold_cpty: c.threshold_cpty,
                        rehypothecable: c.rehypothecable,
                        deal_ids: c.deal_ids,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(NettingSet {
                id: ns.id,
                counterparty_hazard: hazard,
                counterparty_recovery: recovery,
                csas,
                uncovered_deal_ids: ns.uncovered_deal_ids,
            });
        }
        NettingHierarchy::new(sets, portfolio)
    }

    /// Serializable form of a hierarchy; CSA curves are referenced by id and
    /// recovery is taken at time 0.
    pub fn from_hierarchy(h: &NettingHierarchy) -> Self {
        HierarchyFile {
            netting_sets: h
                .netting_sets()
                .iter()
                .map(|ns| NettingSetSpec {
                    id: ns.id.clone(),
                    hazard_pillars: ns.counterparty_hazard.pillars().into_iter().map(|(t, r)| [t, r]).collect(),
                    recovery: ns.counterparty_recovery.at(0.0),
                    csas: ns
                        .csas
                        .iter()
                        .map(|c| CsaSpec {
                            id: c.id.clone(),
                            mode: c.mode,
                            threshold_bank: c.threshold_bank,
                            threshold_cpty: c.threshold_cpty,
                            remuneration_curve_id: c.remuneration_curve.id().to_string(),
                            rehypothecable: c.rehypothecable,
                            deal_ids: c.deal_ids.clone(),
                        })
                        .collect(),
                    uncovered_deal_ids: ns.uncovered_deal_ids.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::{mark_to_future, simulate, Deal, RiskFactorModel, TimeGrid};
    use proptest::prelude::*;

    fn ois() -> TermCurve {
        TermCurve::flat("ois", 0.01).unwrap()
    }

    fn csa(mode: CsaMode) -> CsaTerms {
        CsaTerms::new("c", mode, ois(), &[])
    }

    #[test]
    fn margin_modes() {
        let full = csa(CsaMode::BilateralFull);
        assert_eq!(full.margin(10.0), 10.0);
        assert_eq!(full.margin(-4.0), -4.0);
        let cp = csa(CsaMode::UnilateralCounterpartyPosts);
        assert_eq!((cp.margin(10.0), cp.margin(-4.0)), (10.0, 0.0));
        let bp = csa(CsaMode::UnilateralBankPosts);
        assert_eq!((bp.margin(10.0), bp.margin(-4.0)), (0.0, -4.0));
        let thr = csa(CsaMode::Threshold).with_thresholds(5.0, 3.0);
        assert_eq!(thr.margin(10.0), 7.0);
        assert_eq!(thr.margin(-4.0), 0.0);
    }

    #[test]
    fn threshold_brute_force() {
        // sign-case oracle: posting starts once |V| crosses the relevant threshold
        let thr = csa(CsaMode::Threshold).with_thresholds(5.0, 3.0);
        for k in -200..=200 {
            let v = k as f64 * 0.1;
            let expected = if v > 3.0 {
                v - 3.0
            } else if v < -5.0 {
                v + 5.0
            } else {
                0.0
            };
            assert!((thr.margin(v) - expected).abs() < 1e-12);
        }
    }

    fn setup() -> (Portfolio, TimeGrid, ScenarioCube) {
        let pf = Portfolio::new(
            RiskFactorModel::empty(),
            vec![
                Deal::deterministic("a", 1.0, 2.0, &[(0.0, 10.0)]),
                Deal::deterministic("b", 1.0, 2.0, &[(0.0, -4.0)]),
                Deal::deterministic("c", 1.0, 2.0, &[(0.0, 3.0)]),
            ],
        )
        .unwrap();
        let g = TimeGrid::for_deals(0.5, &pf.deals).unwrap();
        let paths = simulate(&pf.model, &g, 2, 0).unwrap();
        let cube = mark_to_future(&pf, &g, &paths, &ois()).unwrap();
        (pf, g, cube)
    }

    fn ns(id: &str, csas: Vec<CsaTerms>, uncovered: &[&str]) -> NettingSet {
        NettingSet {
            id: id.into(),
            counterparty_hazard: TermCurve::hazard("h", &[(0.0, 0.01)]).unwrap(),
            counterparty_recovery: RecoverySchedule::constant(0.4).unwrap(),
            csas,
            uncovered_deal_ids: uncovered.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn positions_examples() {
        let (pf, _, cube) = setup();
        let full = NettingHierarchy::new(
            vec![ns("n1", vec![CsaTerms::new("c1", CsaMode::BilateralFull, ois(), &["a", "b", "c"])], &[])],
            &pf,
        )
        .unwrap();
        let pos = funding_positions(&cube, &full).unwrap();
        assert!(pos.f_ns[0].iter().all(|&f| f == 0.0));
        assert!(pos.f_le.iter().all(|&f| f == 0.0));

        let split = NettingHierarchy::new(vec![ns("n1", vec![], &["a"]), ns("n2", vec![], &["b"]), ns("n3", vec![], &["c"])], &pf).unwrap();
        let pos = funding_positions(&cube, &split).unwrap();
        assert_eq!(pos.f_ns[0][0], 10.0);
        assert_eq!(pos.f_ns[1][0], -4.0);
        assert_eq!(pos.f_le[0], 9.0);
        // uncovered deal only: F = V
        assert_eq!(pos.f_ns[0], pos.v_ns[0]);

        let epe = expected_positive_exposure(&pos.f_ns[1], pos.n_paths, pos.n_times);
        assert!(epe.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn hierarchy_validation() {
        let (pf, _, _) = setup();
        let dup = NettingHierarchy::new(vec![ns("n1", vec![], &["a", "b", "c"]), ns("n2", vec![], &["a"])], &pf);
        assert!(dup.unwrap_err().to_string().contains("'a'"));
        let orphan = NettingHierarchy::new(vec![ns("n1", vec![], &["a", "b"])], &pf);
        assert!(orphan.unwrap_err().to_string().contains("'c'"));
        let unknown = NettingHierarchy::new(vec![ns("n1", vec![], &["a", "b", "c", "zz"])], &pf);
        assert!(unknown.unwrap_err().to_string().contains("zz"));
        let two_csas = NettingHierarchy::new(
            vec![ns(
                "n1",
                vec![
                    CsaTerms::new("c1", CsaMode::BilateralFull, ois(), &["a"]),
                    CsaTerms::new("c2", CsaMode::BilateralFull, ois(), &["a"]),
                ],
                &["b", "c"],
            )],
            &pf,
        );
        assert!(two_csas.is_err());
    }

    #[test]
    fn hierarchy_file_round_trip() {
        let (pf, _, _) = setup();
        let json = r#"{"netting_sets":[{"id":"n1","hazard_pillars":[[0,0.02]],"recovery":0.4,
            "csas":[{"id":"c1","mode":"threshold","threshold_bank":1,"threshold_cpty":2,
                     "remuneration_curve_id":"ois","deal_ids":["a"]}],
            "uncovered_deal_ids":["b","c"]}]}"#;
        let file: HierarchyFile = serde_json::from_str(json).unwrap();
        let curves = CurveSet::from_documents([crate::termstructures::CurveDocument::from_curve(
            &ois(),
            crate::termstructures::CurveKind::Collateral,
        )])
        .unwrap();
        let h = file.clone().into_hierarchy(&curves, &pf).unwrap();
        assert_eq!(h.netting_sets()[0].csas[0].threshold_cpty, 2.0);
        assert_eq!(HierarchyFile::from_hierarchy(&h), file);

        let missing_curve = json.replace("\"ois\"", "\"nope\"");
        let file: HierarchyFile = serde_json::from_str(&missing_curve).unwrap();
        assert!(file.into_hierarchy(&curves, &pf).unwrap_err().to_string().contains("nope"));
    }

    proptest! {
        #[test]
        fn zero_thresholds_equal_full(v in -1e6f64..1e6) {
            let thr = csa(CsaMode::Threshold).with_thresholds(0.0, 0.0);
            prop_assert_eq!(thr.margin(v), v);
        }

        #[test]
        fn funding_identity(vals in prop::collection::vec(-50.0f64..50.0, 3), thr in 0.0f64..20.0) {
            let pf = Portfolio::new(
                RiskFactorModel::empty(),
                vals.iter().enumerate().map(|(k, &v)| Deal::deterministic(&format!("d{k}"), 1.0, 1.0, &[(0.0, v)])).collect(),
            ).unwrap();
            let g = TimeGrid::for_deals(0.5, &pf.deals).unwrap();
            let paths = simulate(&pf.model, &g, 1, 0).unwrap();
            let cube = mark_to_future(&pf, &g, &paths, &ois()).unwrap();
            let h = NettingHierarchy::new(vec![
                ns("n1", vec![CsaTerms::new("c1", CsaMode::Threshold, ois(), &["d0", "d1"]).with_thresholds(thr, thr)], &[]),
                ns("n2", vec![CsaTerms::new("c2", CsaMode::BilateralFull, ois(), &["d2"])], &[]),
            ], &pf).unwrap();
            let pos = funding_positions(&cube, &h).unwrap();
            for k in 0..pos.f_le.len() {
                for n in 0..2 {
                    prop_assert!((pos.f_ns[n][k] - (pos.v_ns[n][k] - pos.m_ns[n][k])).abs() < 1e-12);
                }
                prop_assert!((pos.f_le[k] - (pos.v_le[k] - pos.m_le[k])).abs() < 1e-12);
                // full CSA leaves nothing to fund
                prop_assert_eq!(pos.f_ns[1][k], 0.0);
            }
        }
    }
}
