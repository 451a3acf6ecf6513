//! Fault bookkeeping, APFD and TRC metrics, and method-comparison reports.
//!
//! A fault is a suite input whose predicted label disagrees with its
//! ground-truth label. APFD summarizes how early an ordering surfaces all
//! faults; TRC measures the fault yield within a selection budget relative
//! to the best achievable at that budget. Metric arithmetic runs in f64;
//! ranks are exact integers well inside its mantissa.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prioritize::RankedSuite;
use crate::round_half_away;

/// Per-input fault flags plus suite totals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaultVector {
    is_fault: Vec<bool>,
    fault_count: usize,
}

impl FaultVector {
    pub fn new(is_fault: Vec<bool>) -> Self {
        let fault_count = is_fault.iter().filter(|&&f| f).count();
        FaultVector {
            is_fault,
            fault_count,
        }
    }

    /// Marks every index where prediction and label disagree.
    pub fn from_labels(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} predictions but {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        Ok(FaultVector::new(
            predictions
                .iter()
                .zip(labels)
                .map(|(p, l)| p != l)
                .collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.is_fault.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_fault.is_empty()
    }

    pub fn fault_count(&self) -> usize {
        self.fault_count
    }

    pub fn is_fault(&self, index: usize) -> bool {
        self.is_fault[index]
    }
}

fn check_ordering(ordering: &RankedSuite, faults: &FaultVector) -> Result<()> {
    if ordering.len() != faults.len() {
        return Err(Error::Consistency(format!(
            "ordering covers {} inputs, fault vector {}",
            ordering.len(),
            faults.len()
        )));
    }
    let mut seen = vec![false; faults.len()];
    for &i in &ordering.ordering {
        if i >= faults.len() || seen[i] {
            return Err(Error::Consistency(format!(
                "ordering is not a permutation (index {i})"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Average Percentage of Fault Detection:
/// `1 - sum(rank_of_fault) / (n * m) + 1 / (2n)` with 1-based ranks.
/// Bounded by `[m / 2n, 1 - m / 2n]`; undefined when the suite has no
/// faults.
pub fn apfd(ordering: &RankedSuite, faults: &FaultVector) -> Result<f64> {
    check_ordering(ordering, faults)?;
    let n = faults.len();
    let m = faults.fault_count();
    if m == 0 {
        return Err(Error::NotApplicable("no faults in suite"));
    }
    let mut rank_sum = 0u64;
    for (position, &index) in ordering.ordering.iter().enumerate() {
        if faults.is_fault(index) {
            rank_sum += position as u64 + 1;
        }
    }
    Ok(1.0 - rank_sum as f64 / (n as f64 * m as f64) + 1.0 / (2.0 * n as f64))
}

/// Test Relative Coverage at an absolute budget:
/// `faults_in_first_budget / min(budget, total_faults)`.
pub fn trc(ordering: &RankedSuite, faults: &FaultVector, budget: usize) -> Result<f64> {
    check_ordering(ordering, faults)?;
    if budget == 0 || budget > faults.len() {
        return Err(Error::Parameter(format!(
            "budget {budget} outside [1, {}]",
            faults.len()
        )));
    }
    let m = faults.fault_count();
    if m == 0 {
        return Err(Error::NotApplicable("no faults in suite"));
    }
    let selected_faults = ordering.ordering[..budget]
        .iter()
        .filter(|&&i| faults.is_fault(i))
        .count();
    Ok(selected_faults as f64 / budget.min(m) as f64)
}

/// TRC over a grid of budget fractions in (0, 1]. Fractions convert to
/// counts by round-half-away-from-zero, clamped to at least one input.
pub fn trc_curve(
    ordering: &RankedSuite,
    faults: &FaultVector,
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("budget grid"));
    }
    for &fraction in grid {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "budget fraction {fraction} outside (0, 1]"
            )));
        }
    }
    let n = faults.len();
    let mut curve = Vec::with_capacity(grid.len());
    for &fraction in grid {
        let budget = round_half_away(fraction * n as f64).clamp(1, n);
        curve.push((fraction, trc(ordering, faults, budget)?));
    }
    Ok(curve)
}

/// Provenance recorded with every report.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub fault_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_rate: Option<f32>,
    pub model_hash: String,
    pub seed: u64,
    pub suite_size: usize,
}

/// One method's row in a report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodEval {
    /// Absent when the suite had no faults.
    pub apfd: Option<f64>,
    pub method: String,
    pub trc: Vec<(f64, f64)>,
}

/// A deterministic comparison of prioritization methods over one suite:
/// methods sorted by tag, JSON keys sorted (fields are declared
/// alphabetically), so serializing the same report twice yields identical
/// bytes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub grid: Vec<f64>,
    pub metadata: ReportMetadata,
    pub methods: Vec<MethodEval>,
}

/// Evaluates every ranking against the shared fault vector.
pub fn compare(
    methods: &[RankedSuite],
    faults: &FaultVector,
    grid: &[f64],
    metadata: ReportMetadata,
) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::EmptyInput("method list"));
    }
    for ranking in methods {
        if ranking.len() != faults.len() {
            return Err(Error::Consistency(format!(
                "method '{}' ranks {} inputs, suite has {}",
                ranking.method_tag,
                ranking.len(),
                faults.len()
            )));
        }
    }
    let mut evals = Vec::with_capacity(methods.len());
    for ranking in methods {
        let apfd_value = match apfd(ranking, faults) {
            Ok(v) => Some(v),
            Err(Error::NotApplicable(_)) => None,
            Err(e) => return Err(e),
        };
        // no faults: apfd is already None, the curve stays empty
        let trc_values = if faults.fault_count() == 0 {
            Vec::new()
        } else {
            trc_curve(ranking, faults, grid)?
        };
        evals.push(MethodEval {
            method: ranking.method_tag.clone(),
            apfd: apfd_value,
            trc: trc_values,
        });
    }
    evals.sort_by(|a, b| a.method.cmp(&b.method));
    let metadata = ReportMetadata {
        suite_size: faults.len(),
        fault_count: faults.fault_count(),
        ..metadata
    };
    Ok(EvalReport {
        methods: evals,
        grid: grid.to_vec(),
        metadata,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: "<report>".into(),
            detail: e.to_string(),
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e.to_string()))
    }

    /// CSV with one row per method: `method,apfd,trc@<f>...`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("method,apfd");
        for f in &self.grid {
            out.push_str(&format!(",trc@{f}"));
        }
        out.push('\n');
        for m in &self.methods {
            out.push_str(&m.method);
            out.push(',');
            if let Some(a) = m.apfd {
                out.push_str(&a.to_string());
            }
            for &(_, v) in &m.trc {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Plot-ready TSV: one row per budget fraction, one column per method.
    pub fn write_trc_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("fraction");
        for m in &self.methods {
            out.push('\t');
            out.push_str(&m.method);
        }
        out.push('\n');
        for (row, &fraction) in self.grid.iter().enumerate() {
            out.push_str(&fraction.to_string());
            for m in &self.methods {
                out.push('\t');
                if let Some((_, v)) = m.trc.get(row) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn ranked(order: Vec<usize>) -> RankedSuite {
        // scores consistent with the requested order
        let n = order.len();
        let mut scores = vec![0.0f32; n];
        for (pos, &i) in order.iter().enumerate() {
            scores[i] = (n - pos) as f32;
        }
        RankedSuite::from_scores(scores, vec![0; n], "test").unwrap()
    }

    fn faults_at(n: usize, at: &[usize]) -> FaultVector {
        let mut flags = vec![false; n];
        for &i in at {
            flags[i] = true;
        }
        FaultVector::new(flags)
    }

    #[test]
    fn apfd_ideal_and_worst_hand_values() {
        // n = 4, m = 2: faults first -> 0.75, faults last -> 0.25
        let faults = faults_at(4, &[0, 1]);
        assert!((apfd(&ranked(vec![0, 1, 2, 3]), &faults).unwrap() - 0.75).abs() < 1e-12);
        assert!((apfd(&ranked(vec![2, 3, 0, 1]), &faults).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn apfd_without_faults_is_not_applicable() {
        let faults = faults_at(4, &[]);
        assert!(matches!(
            apfd(&ranked(vec![0, 1, 2, 3]), &faults),
            Err(Error::NotApplicable(_))
        ));
    }

    #[test]
    fn random_orderings_average_one_half() {
        let n = 200;
        let faults = faults_at(n, &(0..50).collect::<Vec<_>>());
        let mut sum = 0.0f64;
        let seeds = 1000;
        for seed in 0..seeds {
            let mut rng = RngStream::new(seed, 0);
            let order = rng.permutation(n);
            sum += apfd(&ranked(order), &faults).unwrap();
        }
        let mean = sum / seeds as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn exhaustive_small_suites_respect_bounds_and_extremes() {
        // all permutations for n <= 6 here; the acceptance suite pushes to 7
        for n in 2..=6usize {
            for m in 1..n {
                let faults = faults_at(n, &(0..m).collect::<Vec<_>>());
                let lo = m as f64 / (2.0 * n as f64);
                let hi = 1.0 - lo;
                let mut best = f64::MIN;
                let mut worst = f64::MAX;
                permute(n, &mut |perm| {
                    let v = apfd(&ranked(perm.to_vec()), &faults).unwrap();
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "n={n} m={m} v={v}");
                    best = best.max(v);
                    worst = worst.min(v);
                });
                assert!((best - hi).abs() < 1e-12);
                assert!((worst - lo).abs() < 1e-12);
            }
        }
    }

    fn permute(n: usize, f: &mut impl FnMut(&[usize])) {
        let mut items: Vec<usize> = (0..n).collect();
        heap_permute(&mut items, n, f);
    }

    fn heap_permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == 1 {
            f(items);
            return;
        }
        for i in 0..k {
            heap_permute(items, k - 1, f);
            if k.is_multiple_of(2) {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }

    #[test]
    fn swapping_a_fault_earlier_never_hurts() {
        let n = 8;
        let faults = faults_at(n, &[2, 5, 7]);
        let mut rng = RngStream::new(3, 0);
        for _ in 0..50 {
            let order = rng.permutation(n);
            let base = apfd(&ranked(order.clone()), &faults).unwrap();
            // swap a fault with any non-fault ahead of it
            for pos in 0..n {
                if !faults.is_fault(order[pos]) {
                    continue;
                }
                for earlier in 0..pos {
                    if faults.is_fault(order[earlier]) {
                        continue;
                    }
                    let mut swapped = order.clone();
                    swapped.swap(earlier, pos);
                    let v = apfd(&ranked(swapped), &faults).unwrap();
                    assert!(v >= base - 1e-12);
                }
            }
        }
    }

    #[test]
    fn trc_hand_values() {
        // budget saturates min(budget, m)
        let n = 40;
        let faults = faults_at(n, &(0..20).collect::<Vec<_>>());
        // ordering that puts 5 faults in the first 10
        let mut order: Vec<usize> = Vec::new();
        order.extend(0..5); // 5 faults
        order.extend(20..25); // 5 passes
        order.extend(5..20); // remaining faults
        order.extend(25..40);
        let r = ranked(order);
        assert!((trc(&r, &faults, 10).unwrap() - 0.5).abs() < 1e-12);
        // full budget always reaches 1
        assert!((trc(&r, &faults, n).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_ordering_has_unit_trc_everywhere() {
        let n = 30;
        let faults = faults_at(n, &(0..7).collect::<Vec<_>>());
        let ideal = ranked((0..n).collect());
        for budget in 1..=n {
            assert!((trc(&ideal, &faults, budget).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_matches_single_budget_calls() {
        let n = 50;
        let faults = faults_at(n, &[1, 5, 9, 22, 30, 44]);
        let mut rng = RngStream::new(9, 0);
        let r = ranked(rng.permutation(n));
        let grid = [0.02, 0.1, 0.25, 0.5, 1.0];
        let curve = trc_curve(&r, &faults, &grid).unwrap();
        for &(fraction, value) in &curve {
            let budget = crate::round_half_away(fraction * n as f64).clamp(1, n);
            assert_eq!(value, trc(&r, &faults, budget).unwrap());
        }
        // trivial grid
        let trivial = trc_curve(&r, &faults, &[1.0]).unwrap();
        assert_eq!(trivial, vec![(1.0, 1.0)]);
    }

    #[test]
    fn trc_is_monotone_in_budget() {
        let n = 36;
        let faults = faults_at(n, &[0, 3, 5, 11, 35]);
        let mut rng = RngStream::new(12, 0);
        let r = ranked(rng.permutation(n));
        let mut selected_faults_prev = 0usize;
        for budget in 1..=n {
            let count = r.ordering[..budget]
                .iter()
                .filter(|&&i| faults.is_fault(i))
                .count();
            assert!(count >= selected_faults_prev);
            selected_faults_prev = count;
            let v = trc(&r, &faults, budget).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn identical_orderings_report_identical_apfd() {
        let n = 20;
        let faults = faults_at(n, &[2, 4, 8]);
        let mut rng = RngStream::new(7, 0);
        let order = rng.permutation(n);
        let mut a = ranked(order.clone());
        a.method_tag = "alpha".into();
        let mut b = ranked(order);
        b.method_tag = "beta".into();
        let report = compare(
            &[a, b],
            &faults,
            &[0.1, 0.5, 1.0],
            ReportMetadata::default(),
        )
        .unwrap();
        assert_eq!(report.methods[0].apfd, report.methods[1].apfd);
    }

    #[test]
    fn reports_serialize_byte_identically() {
        let n = 15;
        let faults = faults_at(n, &[1, 2, 3]);
        let mut rng = RngStream::new(5, 0);
        let r = ranked(rng.permutation(n));
        let meta = ReportMetadata {
            seed: 42,
            model_hash: "abc123".into(),
            mask_rate: Some(0.05),
            feature_layer: Some(3),
            suite_size: 0,
            fault_count: 0,
        };
        let a = compare(std::slice::from_ref(&r), &faults, &[0.2, 1.0], meta.clone()).unwrap();
        let b = compare(std::slice::from_ref(&r), &faults, &[0.2, 1.0], meta).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn report_rows_stay_inside_apfd_bounds() {
        let n = 25;
        let faults = faults_at(n, &(0..10).collect::<Vec<_>>());
        let mut rng = RngStream::new(6, 0);
        let rankings: Vec<RankedSuite> = (0..5)
            .map(|i| {
                let mut r = ranked(rng.permutation(n));
                r.method_tag = format!("m{i}");
                r
            })
            .collect();
        let report = compare(&rankings, &faults, &[0.5, 1.0], ReportMetadata::default()).unwrap();
        let lo = 10.0 / (2.0 * n as f64);
        for m in &report.methods {
            let v = m.apfd.unwrap();
            assert!(v >= lo - 1e-12 && v <= 1.0 - lo + 1e-12);
        }
        assert_eq!(report.metadata.suite_size, n);
        assert_eq!(report.metadata.fault_count, 10);
    }

    #[test]
    fn suite_size_mismatch_is_a_consistency_error() {
        let faults = faults_at(10, &[0]);
        let r = ranked((0..8).collect());
        assert!(matches!(
            compare(&[r], &faults, &[1.0], ReportMetadata::default()),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn csv_and_tsv_have_method_rows_and_grid_columns() {
        let dir = tempfile::tempdir().unwrap();
        let n = 12;
        let faults = faults_at(n, &[0, 5]);
        let mut a = ranked((0..n).collect());
        a.method_tag = "gini".into();
        let mut b = ranked((0..n).rev().collect());
        b.method_tag = "fast-gini".into();
        let report = compare(&[a, b], &faults, &[0.25, 1.0], ReportMetadata::default()).unwrap();
        let csv_path = dir.path().join("report.csv");
        report.write_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("method,apfd,trc@0.25,trc@1\n"));
        assert_eq!(text.lines().count(), 3);
        // methods sorted by tag
        assert!(text.lines().nth(1).unwrap().starts_with("fast-gini,"));

        let tsv_path = dir.path().join("curves.tsv");
        report.write_trc_tsv(&tsv_path).unwrap();
        let text = std::fs::read_to_string(&tsv_path).unwrap();
        assert!(text.starts_with("fraction\tfast-gini\tgini\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
