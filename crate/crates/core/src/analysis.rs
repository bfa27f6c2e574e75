//! Measured quantities from outcome histograms: class probabilities, regime
//! thresholds, peak and plateau statistics, and the two-parameter branching fit
//! `P_false(τ) = 1 - (1 - R_false) e^{-κτ}`.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadget::OutcomeClass;
use crate::schedule::{Device, ScheduleTable};

pub const GAMMA_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_FIT_TAUS: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
pub const DEFAULT_FIT_S_STAR: f64 = 0.57;

/// One measured point: class counts for a (device, J_t, s*, τ) setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub device: String,
    pub j_t: f64,
    pub s_star: f64,
    pub gamma_star: f64,
    pub tau_us: f64,
    /// Start, TrueMin, FalseMin, Other.
    pub counts: [u64; 4],
    pub shots: u64,
    /// Position in the sweep that produced the record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Most frequent raw configurations, as bit strings with counts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top: Vec<(String, u64)>,
}

impl ExperimentRecord {
    pub fn new(device: impl Into<String>, j_t: f64, s_star: f64, gamma_star: f64, tau_us: f64, counts: [u64; 4]) -> Result<Self> {
        let record = ExperimentRecord {
            device: device.into(),
            j_t,
            s_star,
            gamma_star,
            tau_us,
            counts,
            shots: counts.iter().sum(),
            point: None,
            seed: None,
            top: Vec::new(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Analysis("record has zero shots".into()));
        }
        let sum: u64 = self.counts.iter().sum();
        if sum != self.shots {
            return Err(Error::Analysis(format!("counts sum to {sum}, shots = {}", self.shots)));
        }
        for (what, v) in [("j_t", self.j_t), ("s_star", self.s_star), ("gamma_star", self.gamma_star), ("tau_us", self.tau_us)] {
            if !v.is_finite() {
                return Err(Error::out_of_range(what, v, "finite"));
            }
        }
        Ok(())
    }

    /// Recomputes Γ(s*) on `schedule` and compares with the stored Γ*.
    pub fn check_gamma(&self, schedule: &ScheduleTable) -> Result<()> {
        let expected = schedule.gamma(self.s_star)?;
        if (expected - self.gamma_star).abs() > GAMMA_TOLERANCE {
            return Err(Error::Analysis(format!(
                "gamma_star {} disagrees with schedule {} (Γ({}) = {expected})",
                self.gamma_star,
                schedule.label(),
                self.s_star
            )));
        }
        Ok(())
    }

    pub fn probability(&self, class: OutcomeClass) -> f64 {
        self.counts[class.index()] as f64 / self.shots as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p: [f64; 4],
    pub se: [f64; 4],
}

pub fn class_probabilities(record: &ExperimentRecord) -> Result<ClassProbabilities> {
    record.validate()?;
    let n = record.shots as f64;
    let p = record.counts.map(|c| c as f64 / n);
    let se = p.map(|q| (q * (1.0 - q) / n).sqrt());
    Ok(ClassProbabilities { p, se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingFit {
    pub r_false: f64,
    /// Slow rate into the false minimum (1/µs).
    pub kappa: f64,
    pub covariance: [[f64; 2]; 2],
    pub rss: f64,
    pub n_points: usize,
    /// False when the data cannot pin down κ (flat curve or a saturated branching ratio).
    pub kappa_identifiable: bool,
}

impl BranchingFit {
    pub fn sigma_r(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn sigma_kappa(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }
}

pub fn branching_model(r_false: f64, kappa: f64, tau: f64) -> f64 {
    1.0 - (1.0 - r_false) * (-kappa * tau).exp()
}

fn residuals(points: &[(f64, f64)], r: f64, k: f64) -> (f64, Matrix2<f64>, Vector2<f64>) {
    let mut rss = 0.0;
    let mut jtj = Matrix2::zeros();
    let mut jtr = Vector2::zeros();
    for &(tau, p) in points {
        let e = (-k * tau).exp();
        let res = 1.0 - (1.0 - r) * e - p;
        let j = Vector2::new(e, (1.0 - r) * tau * e);
        rss += res * res;
        jtj += j * j.transpose();
        jtr += j * res;
    }
    (rss, jtj, jtr)
}

fn clamp_params(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(v[0].clamp(0.0, 1.0), v[1].max(0.0))
}

/// Projected Levenberg–Marquardt from one starting point.
fn levenberg_marquardt(points: &[(f64, f64)], start: Vector2<f64>) -> (Vector2<f64>, f64) {
    let mut x = clamp_params(start);
    let (mut rss, mut jtj, mut jtr) = residuals(points, x[0], x[1]);
    let mut lambda = 1e-3;
    for _ in 0..1000 {
        let mut damped = jtj;
        for i in 0..2 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(inv) = damped.try_inverse() else {
            lambda *= 10.0;
            continue;
        };
        let trial = clamp_params(x - inv * jtr);
        let (trial_rss, trial_jtj, trial_jtr) = residuals(points, trial[0], trial[1]);
        if trial_rss < rss {
            let step = (trial - x).norm();
            let gain = rss - trial_rss;
            x = trial;
            rss = trial_rss;
            jtj = trial_jtj;
            jtr = trial_jtr;
            lambda = (lambda * 0.3).max(1e-15);
            if step <= 1e-15 * (1.0 + x.norm()) || gain <= 1e-30 + 1e-15 * rss {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
    }
    (x, rss)
}

/// Least-squares fit of the branching model with `R_false ∈ [0, 1]`, `κ ≥ 0`.
///
/// Starts from a fixed grid of guesses and keeps the best optimum. The
/// covariance is `(JᵀJ)⁻¹ RSS / (n - 2)` at that optimum.
pub fn branching_fit(points: &[(f64, f64)]) -> Result<BranchingFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    for &(tau, p) in points {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::out_of_range("tau", tau, "[0, inf)"));
        }
        if !p.is_finite() {
            return Err(Error::out_of_range("P_false", p, "finite"));
        }
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let distinct = sorted.windows(2).filter(|w| w[1].0 != w[0].0).count() + 1;
    if distinct < 2 {
        return Err(Error::Fit("need at least 2 distinct hold times".into()));
    }
    let n = sorted.len();
    let dof = (n - 2) as f64;

    let p_min = sorted.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let p_max = sorted.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if p_max - p_min <= 1e-12 {
        let level = sorted.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let r = level.clamp(0.0, 1.0);
        let rss: f64 = sorted.iter().map(|p| (p.1 - r).powi(2)).sum();
        return Ok(BranchingFit {
            r_false: r,
            kappa: 0.0,
            covariance: [[rss / dof / n as f64, 0.0], [0.0, f64::INFINITY]],
            rss,
            n_points: n,
            kappa_identifiable: false,
        });
    }

    let tau_max = sorted[n - 1].0.max(1e-12);
    let mut best: Option<(Vector2<f64>, f64)> = None;
    for r0 in [0.05, 0.3, 0.6, 0.9] {
        for k0 in [0.01, 0.1, 1.0, 10.0] {
            let (x, rss) = levenberg_marquardt(&sorted, Vector2::new(r0, k0 / tau_max));
            if best.as_ref().is_none_or(|b| rss < b.1) {
                best = Some((x, rss));
            }
        }
    }
    let (x, rss) = best.expect("grid is non-empty");
    let (_, jtj, _) = residuals(&sorted, x[0], x[1]);
    let scale = rss / dof;
    let (covariance, identifiable) = match jtj.try_inverse() {
        Some(inv) if jtj.determinant() > 1e-14 * jtj[(0, 0)] * jtj[(1, 1)] => {
            let c = inv * scale;
            let off = 0.5 * (c[(0, 1)] + c[(1, 0)]);
            ([[c[(0, 0)].max(0.0), off], [off, c[(1, 1)].max(0.0)]], true)
        }
        _ => {
            let var_r = if jtj[(0, 0)] > 0.0 { scale / jtj[(0, 0)] } else { f64::INFINITY };
            ([[var_r, 0.0], [0.0, f64::INFINITY]], false)
        }
    };
    Ok(BranchingFit {
        r_false: x[0],
        kappa: x[1],
        covariance,
        rss,
        n_points: n,
        kappa_identifiable: identifiable,
    })
}

/// Per-Γ* class probabilities of a one-dimensional sweep, ascending in Γ*.
/// Records sharing a Γ* value are pooled.
fn sweep_curve(records: &[ExperimentRecord], class: OutcomeClass) -> Result<Vec<(f64, f64)>> {
    let first = records.first().ok_or_else(|| Error::Analysis("empty sweep".into()))?;
    for r in records {
        r.validate()?;
        if r.device != first.device || r.j_t != first.j_t || r.tau_us != first.tau_us {
            return Err(Error::Analysis(
                "sweep mixes devices, J_t values or hold times".into(),
            ));
        }
    }
    let mut pooled: Vec<(f64, u64, u64)> = Vec::new();
    let mut sorted: Vec<&ExperimentRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.gamma_star.total_cmp(&b.gamma_star));
    for r in sorted {
        match pooled.last_mut() {
            Some(last) if last.0 == r.gamma_star => {
                last.1 += r.counts[class.index()];
                last.2 += r.shots;
            }
            _ => pooled.push((r.gamma_star, r.counts[class.index()], r.shots)),
        }
    }
    Ok(pooled.into_iter().map(|(g, c, n)| (g, c as f64 / n as f64)).collect())
}

/// Largest measured `P_TrueMin` and its Γ*; ties go to the larger Γ*.
pub fn peak_true_min(records: &[ExperimentRecord]) -> Result<(f64, f64)> {
    let curve = sweep_curve(records, OutcomeClass::TrueMin)?;
    if curve.len() < 3 {
        return Err(Error::Analysis(format!("need at least 3 Γ* values, got {}", curve.len())));
    }
    let mut best = curve[0];
    for &(g, p) in &curve[1..] {
        if p >= best.1 {
            best = (g, p);
        }
    }
    Ok(best)
}

pub fn default_plateau_gamma_max(device: Device) -> f64 {
    match device {
        Device::LowNoise => 0.1,
        Device::HighNoise => 0.05,
    }
}

/// Largest `P_FalseMin` among points with `Γ* ≤ gamma_max`.
pub fn plateau_false_min(records: &[ExperimentRecord], gamma_max: f64) -> Result<f64> {
    let curve = sweep_curve(records, OutcomeClass::FalseMin)?;
    curve
        .iter()
        .filter(|(g, _)| *g <= gamma_max)
        .map(|&(_, p)| p)
        .reduce(f64::max)
        .ok_or_else(|| Error::Analysis(format!("no points with Γ* ≤ {gamma_max}")))
}

/// Γ* where `P_Start` first falls below 0.5 scanning upward from the smallest Γ*,
/// interpolated linearly between the bracketing points.
pub fn exit_threshold(records: &[ExperimentRecord]) -> Result<f64> {
    let curve = sweep_curve(records, OutcomeClass::Start)?;
    crossing_below(&curve, 0.5)
        .ok_or_else(|| Error::Analysis("P_Start never drops below 0.5 in the sweep".into()))
}

fn crossing_below(curve: &[(f64, f64)], level: f64) -> Option<f64> {
    for w in curve.windows(2) {
        let ((g0, p0), (g1, p1)) = (w[0], w[1]);
        if p0 >= level && p1 < level {
            return Some(g0 + (g1 - g0) * (p0 - level) / (p0 - p1));
        }
    }
    None
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    device: String,
    #[serde(rename = "J_t")]
    j_t: f64,
    s_star: f64,
    gamma_star: f64,
    tau_us: f64,
    n_start: u64,
    n_true: u64,
    n_false: u64,
    n_other: u64,
    shots: u64,
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(CsvRow {
            device: r.device.clone(),
            j_t: r.j_t,
            s_star: r.s_star,
            gamma_star: r.gamma_star,
            tau_us: r.tau_us,
            n_start: r.counts[0],
            n_true: r.counts[1],
            n_false: r.counts[2],
            n_other: r.counts[3],
            shots: r.shots,
        })?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        let row: CsvRow = row?;
        let record = ExperimentRecord {
            device: row.device,
            j_t: row.j_t,
            s_star: row.s_star,
            gamma_star: row.gamma_star,
            tau_us: row.tau_us,
            counts: [row.n_start, row.n_true, row.n_false, row.n_other],
            shots: row.shots,
            point: None,
            seed: None,
            top: Vec::new(),
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records_jsonl<W: Write>(records: &[ExperimentRecord], mut writer: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_records_jsonl<R: BufRead>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: ExperimentRecord = serde_json::from_str(trimmed)?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// Reads records from a `.csv` or JSON-lines file, chosen by extension.
/// Lines starting with `#` are treated as comments in both formats.
pub fn load_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| [l, "\n"])
        .collect();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_records_csv(body.as_bytes())
    } else {
        read_records_jsonl(body.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(points: &[(f64, [u64; 4])]) -> Vec<ExperimentRecord> {
        points
            .iter()
            .map(|&(g, c)| ExperimentRecord::new("low", 1.0, 0.5, g, 5.0, c).unwrap())
            .collect()
    }

    #[test]
    fn probabilities_and_errors() {
        let r = ExperimentRecord::new("low", 1.0, 0.6, 0.1, 5.0, [500, 300, 150, 50]).unwrap();
        let cp = class_probabilities(&r).unwrap();
        assert_eq!(cp.p, [0.5, 0.3, 0.15, 0.05]);
        let r = ExperimentRecord::new("low", 1.0, 0.6, 0.1, 5.0, [5000, 5000, 0, 0]).unwrap();
        assert_eq!(class_probabilities(&r).unwrap().se[0], 0.005);
        let r = ExperimentRecord::new("low", 1.0, 0.6, 0.1, 5.0, [10, 0, 0, 0]).unwrap();
        let cp = class_probabilities(&r).unwrap();
        assert_eq!(cp.p, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(cp.se[0], 0.0);
    }

    #[test]
    fn record_validation() {
        assert!(ExperimentRecord::new("low", 1.0, 0.6, 0.1, 5.0, [0, 0, 0, 0]).is_err());
        let mut r = ExperimentRecord::new("low", 1.0, 0.6, 0.1, 5.0, [1, 2, 3, 4]).unwrap();
        r.shots = 11;
        assert!(r.validate().is_err());
    }

    #[test]
    fn gamma_check_uses_schedule() {
        let sched = ScheduleTable::synthetic(Device::LowNoise);
        let g = sched.gamma(0.6).unwrap();
        let ok = ExperimentRecord::new("low", 1.0, 0.6, g, 5.0, [1, 0, 0, 0]).unwrap();
        assert!(ok.check_gamma(&sched).is_ok());
        let bad = ExperimentRecord::new("low", 1.0, 0.6, g + 2e-6, 5.0, [1, 0, 0, 0]).unwrap();
        assert!(bad.check_gamma(&sched).is_err());
    }

    #[test]
    fn exact_fit_recovery() {
        let pts: Vec<(f64, f64)> = DEFAULT_FIT_TAUS.iter().map(|&t| (t, branching_model(0.3, 0.05, t))).collect();
        let fit = branching_fit(&pts).unwrap();
        assert!((fit.r_false - 0.3).abs() < 1e-6, "{fit:?}");
        assert!((fit.kappa - 0.05).abs() < 1e-6, "{fit:?}");
        assert!(fit.rss <= 1e-10);
        assert!(fit.kappa_identifiable);
    }

    #[test]
    fn fit_is_order_invariant() {
        let pts: Vec<(f64, f64)> = DEFAULT_FIT_TAUS
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, branching_model(0.4, 0.02, t) + 0.01 * ((i as f64) * 1.7).sin()))
            .collect();
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(branching_fit(&pts).unwrap(), branching_fit(&rev).unwrap());
    }

    #[test]
    fn saturated_curve_is_flagged() {
        let pts: Vec<(f64, f64)> = DEFAULT_FIT_TAUS.iter().map(|&t| (t, 1.0)).collect();
        let fit = branching_fit(&pts).unwrap();
        assert_eq!(fit.r_false, 1.0);
        assert!(!fit.kappa_identifiable);
    }

    #[test]
    fn fit_preconditions() {
        assert!(branching_fit(&[(1.0, 0.2), (2.0, 0.3)]).is_err());
        assert!(branching_fit(&[(5.0, 0.2), (5.0, 0.3), (5.0, 0.25)]).is_err());
    }

    #[test]
    fn peak_prefers_larger_gamma_on_ties() {
        let s = sweep(&[(0.1, [9, 1, 0, 0]), (0.2, [5, 5, 0, 0]), (0.3, [5, 5, 0, 0]), (0.4, [0, 2, 8, 0])]);
        assert_eq!(peak_true_min(&s).unwrap(), (0.3, 0.5));
        let s = sweep(&[(0.1, [9, 1, 0, 0]), (0.2, [5, 5, 0, 0])]);
        assert!(peak_true_min(&s).is_err());
        assert!(peak_true_min(&[]).is_err());
    }

    #[test]
    fn plateau_respects_cutoff() {
        let s = sweep(&[(0.05, [8, 0, 2, 0]), (0.08, [8, 0, 2, 0]), (0.2, [1, 0, 9, 0])]);
        assert!((plateau_false_min(&s, 0.1).unwrap() - 0.2).abs() < 1e-15);
        assert!(plateau_false_min(&s, 0.01).is_err());
    }

    #[test]
    fn exit_threshold_interpolates() {
        let s = sweep(&[(0.1, [10, 0, 0, 0]), (0.2, [10, 0, 0, 0]), (0.3, [0, 10, 0, 0]), (0.4, [0, 0, 10, 0])]);
        assert!((exit_threshold(&s).unwrap() - 0.25).abs() < 1e-12);
        let s = sweep(&[(0.1, [10, 0, 0, 0]), (0.2, [10, 0, 0, 0])]);
        assert!(exit_threshold(&s).is_err());
    }

    #[test]
    fn mixed_sweeps_are_rejected() {
        let mut s = sweep(&[(0.1, [1, 0, 0, 0]), (0.2, [1, 0, 0, 0]), (0.3, [1, 0, 0, 0])]);
        s[1].tau_us = 100.0;
        assert!(peak_true_min(&s).is_err());
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let mut s = sweep(&[(0.1, [1, 2, 3, 4]), (0.2, [4, 3, 2, 1])]);
        s[0].seed = Some(7);
        s[0].top = vec![("0101".into(), 3)];
        let mut buf = Vec::new();
        write_records_jsonl(&s, &mut buf).unwrap();
        assert_eq!(read_records_jsonl(buf.as_slice()).unwrap(), s);
        let mut buf = Vec::new();
        write_records_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("device,J_t,s_star,gamma_star,tau_us,n_start,n_true,n_false,n_other,shots"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back[1], s[1]);
        assert_eq!(back[0].counts, s[0].counts);
    }
}
