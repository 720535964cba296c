//! Metrics and statistics: success rate, switching-time quantiles, the
//! experience-curve fit `y = k x^n` with `b = 2^n`, Kruskal-Wallis with tie
//! correction, Bonferroni-adjusted pairwise tests and the NCC regression.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::backends::GsiKind;
use crate::domain::{GraspType, TrialRecord};
use crate::error::{Error, Result};
use crate::log::{SessionLog, LOG_SCHEMA_VERSION};

/// Fraction of trials whose final grasp matched the target.
pub fn ssr<'a>(trials: impl IntoIterator<Item = &'a TrialRecord>) -> Result<f64> {
    let (mut n, mut correct) = (0usize, 0usize);
    for t in trials {
        n += 1;
        correct += usize::from(t.correct);
    }
    if n == 0 {
        return Err(Error::InvalidArgument("success rate of zero trials".into()));
    }
    Ok(correct as f64 / n as f64)
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
        })
    }
}

// ---------------------------------------------------------------------------
// Experience curve

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperienceFit {
    pub k: f64,
    pub n: f64,
    /// Learning efficiency, `2^n`.
    pub b: f64,
    pub le_percent: f64,
    /// Coefficient of determination of the log-log fit.
    pub r_squared: f64,
    pub n_points: usize,
}

/// Least-squares fit of `ln y = ln k + n ln x`.
pub fn fit_experience_curve(points: &[(f64, f64)]) -> Result<ExperienceFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "experience curve needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points
        .iter()
        .find(|(x, y)| !(x.is_finite() && y.is_finite() && *x > 0.0 && *y > 0.0))
    {
        return Err(Error::InvalidArgument(format!(
            "experience curve point ({x}, {y}) is not positive"
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "experience curve needs at least two distinct x values".into(),
        ));
    }
    let n = sxy / sxx;
    let ln_k = my - n * mx;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = logs.iter().map(|p| (p.1 - ln_k - n * p.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    let b = 2f64.powf(n);
    Ok(ExperienceFit {
        k: ln_k.exp(),
        n,
        b,
        le_percent: 100.0 * b,
        r_squared,
        n_points: points.len(),
    })
}

// ---------------------------------------------------------------------------
// Kruskal-Wallis

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KwResult {
    pub h_statistic: f64,
    pub degrees_freedom: usize,
    /// Chi-square approximation, or the exact permutation value when requested.
    pub p_value: f64,
    pub tie_correction_applied: bool,
    pub exact: bool,
}

/// Ranks of `values` (1-based), ties receiving the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

struct Pooled {
    ranks: Vec<f64>,
    sizes: Vec<usize>,
    /// `1 - sum(t^3 - t) / (N^3 - N)`.
    tie_factor: f64,
}

fn pool<G: AsRef<[f64]>>(groups: &[G]) -> Result<Pooled> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Kruskal-Wallis needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    let mut values = Vec::new();
    let mut sizes = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.is_empty() {
            return Err(Error::InvalidArgument(format!("group {i} is empty")));
        }
        if let Some(v) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("group {i} contains {v}")));
        }
        values.extend_from_slice(g);
        sizes.push(g.len());
    }
    if values.len() < 3 {
        return Err(Error::InvalidArgument(
            "Kruskal-Wallis needs at least 3 observations".into(),
        ));
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let n = values.len() as f64;
    Ok(Pooled {
        ranks: midranks(&values),
        sizes,
        tie_factor: 1.0 - ties / (n * n * n - n),
    })
}

/// Uncorrected H for ranks laid out group after group.
fn h_uncorrected(ranks: &[f64], sizes: &[usize]) -> f64 {
    let n = ranks.len() as f64;
    let mut sum = 0.0;
    let mut start = 0;
    for &size in sizes {
        let r: f64 = ranks[start..start + size].iter().sum();
        sum += r * r / size as f64;
        start += size;
    }
    12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)
}

/// Kruskal-Wallis H with mid-ranks and tie correction; p from the chi-square
/// distribution with `k - 1` degrees of freedom.
pub fn kruskal_wallis<G: AsRef<[f64]>>(groups: &[G]) -> Result<KwResult> {
    let pooled = pool(groups)?;
    let df = groups.len() - 1;
    if pooled.tie_factor <= 0.0 {
        return Ok(KwResult {
            h_statistic: 0.0,
            degrees_freedom: df,
            p_value: 1.0,
            tie_correction_applied: true,
            exact: false,
        });
    }
    let h = (h_uncorrected(&pooled.ranks, &pooled.sizes) / pooled.tie_factor).max(0.0);
    let chi = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    Ok(KwResult {
        h_statistic: h,
        degrees_freedom: df,
        p_value: chi.sf(h).clamp(0.0, 1.0),
        tie_correction_applied: pooled.tie_factor < 1.0,
        exact: false,
    })
}

/// Largest pooled sample for which the exact permutation p-value is offered.
pub const EXACT_MAX_N: usize = 12;

/// Kruskal-Wallis with the p-value taken from the exact permutation
/// distribution of H over all assignments of the pooled ranks to groups.
pub fn kruskal_wallis_exact<G: AsRef<[f64]>>(groups: &[G]) -> Result<KwResult> {
    let mut result = kruskal_wallis(groups)?;
    let pooled = pool(groups)?;
    if pooled.ranks.len() > EXACT_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "exact permutation p limited to N <= {EXACT_MAX_N}, got {}",
            pooled.ranks.len()
        )));
    }
    if pooled.tie_factor <= 0.0 {
        result.exact = true;
        return Ok(result);
    }
    let observed = h_uncorrected(&pooled.ranks, &pooled.sizes);
    let (mut at_least, mut total) = (0u64, 0u64);
    permutation_h(&pooled.ranks, &pooled.sizes, |h| {
        total += 1;
        if h >= observed - 1e-9 {
            at_least += 1;
        }
    });
    result.p_value = at_least as f64 / total as f64;
    result.exact = true;
    Ok(result)
}

/// Calls `visit` with the uncorrected H of every distinct assignment of
/// `ranks` to groups of the given sizes.
fn permutation_h(ranks: &[f64], sizes: &[usize], mut visit: impl FnMut(f64)) {
    fn go(
        i: usize,
        ranks: &[f64],
        sizes: &[usize],
        left: &mut [usize],
        sums: &mut [f64],
        visit: &mut dyn FnMut(f64),
    ) {
        if i == ranks.len() {
            let n = ranks.len() as f64;
            let s: f64 = sums.iter().zip(sizes).map(|(r, &m)| r * r / m as f64).sum();
            visit(12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0));
            return;
        }
        for g in 0..sizes.len() {
            if left[g] == 0 {
                continue;
            }
            left[g] -= 1;
            sums[g] += ranks[i];
            go(i + 1, ranks, sizes, left, sums, visit);
            sums[g] -= ranks[i];
            left[g] += 1;
        }
    }
    let mut left = sizes.to_vec();
    let mut sums = vec![0.0; sizes.len()];
    go(0, ranks, sizes, &mut left, &mut sums, &mut visit);
}

// ---------------------------------------------------------------------------
// Multiple comparisons

/// `min(1, m p)` for each p-value.
pub fn bonferroni_adjust(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p_values.len() {
        return Err(Error::InvalidArgument(format!(
            "{} p-values but only {m} comparisons",
            p_values.len()
        )));
    }
    p_values
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok((m as f64 * p).min(1.0))
            } else {
                Err(Error::InvalidArgument(format!(
                    "p-value {p} outside [0, 1]"
                )))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    pub h_statistic: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub comparisons: usize,
    pub method: String,
    pub results: Vec<PairwiseResult>,
}

impl PairwiseMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<&PairwiseResult> {
        self.results
            .iter()
            .find(|r| (r.a == a && r.b == b) || (r.a == b && r.b == a))
    }
}

/// Two-group Kruskal-Wallis for every pair, Bonferroni-adjusted over the pairs.
pub fn pairwise_tests<G: AsRef<[f64]>>(groups: &[(String, G)]) -> Result<PairwiseMatrix> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise tests need at least 2 groups".into(),
        ));
    }
    let mut raw = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let kw = kruskal_wallis(&[groups[i].1.as_ref(), groups[j].1.as_ref()])?;
            raw.push((i, j, kw));
        }
    }
    let m = raw.len();
    let adjusted = bonferroni_adjust(&raw.iter().map(|r| r.2.p_value).collect::<Vec<_>>(), m)?;
    Ok(PairwiseMatrix {
        comparisons: m,
        method: "two-group Kruskal-Wallis, Bonferroni adjusted".into(),
        results: raw
            .into_iter()
            .zip(adjusted)
            .map(|((i, j, kw), p_adjusted)| PairwiseResult {
                a: groups[i].0.clone(),
                b: groups[j].0.clone(),
                h_statistic: kw.h_statistic,
                p_value: kw.p_value,
                p_adjusted,
            })
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Regression through the origin

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OriginFit {
    pub slope: f64,
    /// Uncentered coefficient of determination, `1 - SS_res / sum(y^2)`.
    pub r_squared: f64,
    pub rmse: f64,
    pub max_abs_residual: f64,
    pub n_points: usize,
}

/// Least-squares `y = s x`: `s = sum(xy) / sum(x^2)`.
pub fn fit_line_through_origin(points: &[(f64, f64)]) -> Result<OriginFit> {
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    if points.is_empty() || sxx == 0.0 || !sxx.is_finite() {
        return Err(Error::InvalidArgument(
            "line through the origin needs a non-zero x".into(),
        ));
    }
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = sxy / sxx;
    let residuals: Vec<f64> = points.iter().map(|&(x, y)| y - slope * x).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let syy: f64 = points.iter().map(|p| p.1 * p.1).sum();
    Ok(OriginFit {
        slope,
        r_squared: if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy },
        rmse: (ss_res / points.len() as f64).sqrt(),
        max_abs_residual: residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
        n_points: points.len(),
    })
}

// ---------------------------------------------------------------------------
// Session summaries

/// Per-set statistic the experience curve is fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeAnchor {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryOptions {
    pub le_anchor: LeAnchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub n_trials: usize,
    /// Trials with a switching time.
    pub n_timed: usize,
    pub st: Option<Quartiles>,
    pub ssr: f64,
}

impl StratumSummary {
    fn of(trials: &[&TrialRecord]) -> Option<Self> {
        if trials.is_empty() {
            return None;
        }
        let st: Vec<f64> = trials.iter().filter_map(|t| t.st_seconds).collect();
        Some(Self {
            n_trials: trials.len(),
            n_timed: st.len(),
            st: Quartiles::of(&st),
            ssr: ssr(trials.iter().copied()).expect("non-empty"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub set_index: u32,
    pub st: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NccPoint {
    pub ncc: u32,
    pub n: usize,
    pub median_st: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NccSummary {
    pub points: Vec<NccPoint>,
    /// Median ST against NCC, through the origin.
    pub fit: Option<OriginFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsiSummary {
    pub gsi: GsiKind,
    pub overall: StratumSummary,
    pub experience_curve: Vec<CurvePoint>,
    pub le: Option<ExperienceFit>,
    pub per_grasp: BTreeMap<GraspType, StratumSummary>,
    /// Kruskal-Wallis across grasp-type groups of ST.
    pub grasp_kw: Option<KwResult>,
    pub per_subject: BTreeMap<String, StratumSummary>,
    pub ncc: Option<NccSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub n_logs: usize,
    pub n_trials: usize,
    pub options: SummaryOptions,
    pub per_gsi: Vec<GsiSummary>,
    /// Pairwise comparison of ST between interfaces.
    pub pairwise: Option<PairwiseMatrix>,
    pub notes: Vec<String>,
}

impl SummaryReport {
    pub fn gsi(&self, kind: GsiKind) -> Option<&GsiSummary> {
        self.per_gsi.iter().find(|g| g.gsi == kind)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Flat tables keyed by file stem: `gsi`, `grasp`, `subject`, `pairwise`,
    /// `ncc` and `curve`.
    pub fn csv_tables(&self) -> Result<Vec<(&'static str, String)>> {
        #[derive(Serialize)]
        struct Row<'a> {
            gsi: &'a str,
            stratum: String,
            n_trials: usize,
            n_timed: usize,
            st_q1: Option<f64>,
            st_median: Option<f64>,
            st_q3: Option<f64>,
            ssr: f64,
        }
        fn row<'a>(gsi: &'a str, stratum: String, s: &StratumSummary) -> Row<'a> {
            Row {
                gsi,
                stratum,
                n_trials: s.n_trials,
                n_timed: s.n_timed,
                st_q1: s.st.map(|q| q.q1),
                st_median: s.st.map(|q| q.median),
                st_q3: s.st.map(|q| q.q3),
                ssr: s.ssr,
            }
        }
        #[derive(Serialize)]
        struct LeRow<'a> {
            gsi: &'a str,
            k: Option<f64>,
            n: Option<f64>,
            b: Option<f64>,
            le_percent: Option<f64>,
            r_squared: Option<f64>,
        }
        #[derive(Serialize)]
        struct NccRow<'a> {
            gsi: &'a str,
            ncc: u32,
            n: usize,
            median_st: f64,
        }
        #[derive(Serialize)]
        struct CurveRow<'a> {
            gsi: &'a str,
            set_index: u32,
            st: f64,
        }

        fn table<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }

        let mut gsi_rows = Vec::new();
        let mut grasp_rows = Vec::new();
        let mut subject_rows = Vec::new();
        let mut le_rows = Vec::new();
        let mut ncc_rows = Vec::new();
        let mut curve_rows = Vec::new();
        for g in &self.per_gsi {
            let name = g.gsi.as_str();
            gsi_rows.push(row(name, "all".into(), &g.overall));
            for (grasp, s) in &g.per_grasp {
                grasp_rows.push(row(name, grasp.to_string(), s));
            }
            for (subject, s) in &g.per_subject {
                subject_rows.push(row(name, subject.clone(), s));
            }
            le_rows.push(LeRow {
                gsi: name,
                k: g.le.map(|f| f.k),
                n: g.le.map(|f| f.n),
                b: g.le.map(|f| f.b),
                le_percent: g.le.map(|f| f.le_percent),
                r_squared: g.le.map(|f| f.r_squared),
            });
            for p in g.ncc.iter().flat_map(|n| &n.points) {
                ncc_rows.push(NccRow {
                    gsi: name,
                    ncc: p.ncc,
                    n: p.n,
                    median_st: p.median_st,
                });
            }
            for c in &g.experience_curve {
                curve_rows.push(CurveRow {
                    gsi: name,
                    set_index: c.set_index,
                    st: c.st,
                });
            }
        }
        let pairwise = self.pairwise.iter().flat_map(|m| &m.results);
        Ok(vec![
            ("gsi", table(gsi_rows)?),
            ("grasp", table(grasp_rows)?),
            ("subject", table(subject_rows)?),
            ("le", table(le_rows)?),
            ("pairwise", table(pairwise)?),
            ("ncc", table(ncc_rows)?),
            ("curve", table(curve_rows)?),
        ])
    }
}

/// Aggregates scored trials of the given logs, per interface.
pub fn summarize(logs: &[SessionLog], options: &SummaryOptions) -> Result<SummaryReport> {
    let mut notes = Vec::new();
    let mut by_gsi: BTreeMap<usize, Vec<(&str, &TrialRecord)>> = BTreeMap::new();
    for log in logs {
        if log.header.schema_version != LOG_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "log of subject {} has schema {}, expected {LOG_SCHEMA_VERSION}",
                log.header.subject_id, log.header.schema_version
            )));
        }
        let idx = GsiKind::ALL
            .iter()
            .position(|&k| k == log.header.gsi_kind)
            .expect("every kind is listed");
        by_gsi.entry(idx).or_default().extend(
            log.trials()
                .filter(|t| t.scored)
                .map(|t| (log.header.subject_id.as_str(), t)),
        );
    }

    let mut per_gsi = Vec::new();
    let mut st_groups = Vec::new();
    for (idx, entries) in &by_gsi {
        let kind = GsiKind::ALL[*idx];
        let trials: Vec<&TrialRecord> = entries.iter().map(|e| e.1).collect();
        let Some(overall) = StratumSummary::of(&trials) else {
            notes.push(format!("{kind}: no scored trials"));
            continue;
        };

        let mut per_grasp = BTreeMap::new();
        let mut grasp_groups = Vec::new();
        for grasp in GraspType::ALL {
            let stratum: Vec<&TrialRecord> = trials
                .iter()
                .copied()
                .filter(|t| t.target_grasp == grasp)
                .collect();
            match StratumSummary::of(&stratum) {
                Some(s) => {
                    per_grasp.insert(grasp, s);
                    let st: Vec<f64> = stratum.iter().filter_map(|t| t.st_seconds).collect();
                    if !st.is_empty() {
                        grasp_groups.push(st);
                    }
                }
                None => notes.push(format!(
                    "{kind}: no trials for grasp {grasp}, stratum omitted"
                )),
            }
        }
        let grasp_kw = kruskal_wallis(&grasp_groups).ok();

        let mut subjects: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
        for &(s, t) in entries {
            subjects.entry(s).or_default().push(t);
        }
        let per_subject = subjects
            .into_iter()
            .filter_map(|(s, ts)| StratumSummary::of(&ts).map(|sum| (s.to_string(), sum)))
            .collect();

        let mut by_set: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for t in &trials {
            if let Some(st) = t.st_seconds {
                by_set.entry(t.set_index).or_default().push(st);
            }
        }
        let experience_curve: Vec<CurvePoint> = by_set
            .iter()
            .map(|(&set_index, v)| CurvePoint {
                set_index,
                st: match options.le_anchor {
                    LeAnchor::Mean => v.iter().sum::<f64>() / v.len() as f64,
                    LeAnchor::Median => median(v).expect("non-empty"),
                },
            })
            .collect();
        let curve_points: Vec<(f64, f64)> = experience_curve
            .iter()
            .map(|c| (f64::from(c.set_index), c.st))
            .collect();
        let le = match fit_experience_curve(&curve_points) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("{kind}: no experience curve ({e})"));
                None
            }
        };

        let ncc = (kind == GsiKind::Fsm).then(|| {
            let mut by_ncc: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            for t in &trials {
                if let (Some(n), Some(st)) = (t.ncc_required, t.st_seconds) {
                    by_ncc.entry(n).or_default().push(st);
                }
            }
            let points: Vec<NccPoint> = by_ncc
                .iter()
                .map(|(&ncc, v)| NccPoint {
                    ncc,
                    n: v.len(),
                    median_st: median(v).expect("non-empty"),
                })
                .collect();
            let xy: Vec<(f64, f64)> = points
                .iter()
                .map(|p| (f64::from(p.ncc), p.median_st))
                .collect();
            NccSummary {
                fit: fit_line_through_origin(&xy).ok(),
                points,
            }
        });

        st_groups.push((
            kind.as_str().to_string(),
            trials
                .iter()
                .filter_map(|t| t.st_seconds)
                .collect::<Vec<f64>>(),
        ));
        per_gsi.push(GsiSummary {
            gsi: kind,
            overall,
            experience_curve,
            le,
            per_grasp,
            grasp_kw,
            per_subject,
            ncc,
        });
    }

    st_groups.retain(|(_, v)| !v.is_empty());
    let pairwise = if st_groups.len() >= 2 {
        pairwise_tests(&st_groups).ok()
    } else {
        None
    };
    Ok(SummaryReport {
        n_logs: logs.len(),
        n_trials: by_gsi.values().map(Vec::len).sum(),
        options: *options,
        per_gsi,
        pairwise,
        notes,
    })
}
