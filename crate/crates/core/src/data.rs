//! Subject time series: synthetic generation, file I/O, normalization and
//! functional-network-connectivity features.
//!
//! File layout on disk:
//! - one CSV per subject, `R` rows × `T` columns, no header, `.` decimals;
//! - a manifest with one `subject_id,path[,label][,split]` record per line,
//!   `path` relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{MimError, Result};
use crate::rng::{stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One subject: `R × T` region time series with optional label (0 = HC, 1 = SZ).
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectSeries {
    pub subject_id: String,
    pub series: Tensor,
    pub label: Option<u8>,
    pub split: Option<Split>,
}

impl SubjectSeries {
    pub fn new(subject_id: impl Into<String>, series: Tensor) -> Self {
        Self {
            subject_id: subject_id.into(),
            series,
            label: None,
            split: None,
        }
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    pub fn regions(&self) -> usize {
        self.series.rows()
    }

    pub fn timepoints(&self) -> usize {
        self.series.cols()
    }

    pub fn check_finite(&self) -> Result<()> {
        for r in 0..self.regions() {
            if self.series.row(r).iter().any(|v| !v.is_finite()) {
                return Err(MimError::NonFiniteRegion {
                    subject: self.subject_id.clone(),
                    region: r,
                });
            }
        }
        Ok(())
    }
}

/// Checks that all subjects share one `(R, T)` shape and have distinct ids.
pub fn check_homogeneous(subjects: &[SubjectSeries]) -> Result<(usize, usize)> {
    let first = subjects
        .first()
        .ok_or_else(|| MimError::Batch("empty dataset".into()))?;
    let expected = (first.regions(), first.timepoints());
    let mut seen = HashSet::new();
    for s in subjects {
        let found = (s.regions(), s.timepoints());
        if found != expected {
            return Err(MimError::Heterogeneous {
                subject: s.subject_id.clone(),
                expected,
                found,
            });
        }
        if !seen.insert(s.subject_id.as_str()) {
            return Err(MimError::DuplicateSubject(s.subject_id.clone()));
        }
    }
    Ok(expected)
}

// ---- synthetic generator -------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub regions: usize,
    pub timepoints: usize,
    /// Total subjects. Labeled pools alternate classes 0, 1, 0, ...
    pub subjects: usize,
    /// `false` draws an unlabeled pre-training pool with a random coupling
    /// matrix per subject.
    pub labeled: bool,
    /// Spectral radius of every coupling matrix; must be < 1.
    pub rho: f64,
    /// Side of the off-diagonal coupling block that differs between classes.
    pub block_size: usize,
    /// Magnitude of the class-1 block perturbation.
    pub block_strength: f64,
    /// Std of the per-subject coupling jitter (relative to the base scale).
    pub subject_jitter: f64,
    pub noise_std: f64,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            regions: 16,
            timepoints: 160,
            subjects: 311,
            labeled: true,
            rho: 0.9,
            block_size: 4,
            block_strength: 0.6,
            subject_jitter: 0.3,
            noise_std: 1.0,
            burn_in: 50,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(MimError::Unstable(self.rho));
        }
        if self.regions < 2 || self.timepoints == 0 || self.subjects == 0 {
            return Err(MimError::Config("synthetic data needs ≥2 regions, ≥1 timepoint, ≥1 subject".into()));
        }
        if 2 * self.block_size > self.regions {
            return Err(MimError::Config(format!(
                "block size {} needs 2·block ≤ regions ({})",
                self.block_size, self.regions
            )));
        }
        if self.noise_std < 0.0 || self.subject_jitter < 0.0 {
            return Err(MimError::Config("noise and jitter must be non-negative".into()));
        }
        Ok(())
    }
}

fn gaussian_matrix(r: usize, rng: &mut Rng) -> DMatrix<f64> {
    let scale = 1.0 / (r as f64).sqrt();
    DMatrix::from_fn(r, r, |_, _| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn with_radius(mut a: DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let r = spectral_radius(&a);
    if r > 0.0 {
        a *= rho / r;
    }
    a
}

/// Fixed class-difference pattern: regions `block..2·block` drive regions
/// `0..block`.
fn block_pattern(r: usize, block: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(r, r);
    if block == 0 {
        return p;
    }
    for i in 0..block {
        for j in block..2 * block {
            p[(i, j)] = 1.0 / block as f64;
        }
    }
    p
}

/// Simulates `x_t = A·x_{t−1} + ε_t` from `x_0 = 0`, discarding `burn_in` steps.
pub fn simulate_var(a: &DMatrix<f64>, timepoints: usize, burn_in: usize, noise_std: f64, rng: &mut Rng) -> Tensor {
    let r = a.nrows();
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let mut x = nalgebra::DVector::<f64>::zeros(r);
    let mut out = vec![0.0; r * timepoints];
    for t in 0..burn_in + timepoints {
        let eps = nalgebra::DVector::from_fn(r, |_, _| if noise_std > 0.0 { noise.sample(rng) } else { 0.0 });
        x = a * &x + eps;
        if t >= burn_in {
            let col = t - burn_in;
            for i in 0..r {
                out[i * timepoints + col] = x[i];
            }
        }
    }
    Tensor::new(vec![r, timepoints], out).expect("shape matches buffer")
}

/// Draws a seeded synthetic cohort of vector-autoregressive subjects.
///
/// Labeled pools share one base coupling matrix; class 1 adds a fixed
/// off-diagonal block perturbation, and every subject gets its own small
/// jitter. Unlabeled pools draw an independent coupling matrix per subject.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SubjectSeries>> {
    cfg.validate()?;
    let r = cfg.regions;
    let base = with_radius(gaussian_matrix(r, &mut stream(cfg.seed, "synth/base")), cfg.rho);
    let pattern = block_pattern(r, cfg.block_size);
    let mut couplings = stream(cfg.seed, "synth/coupling");
    let mut noise = stream(cfg.seed, "synth/noise");
    let width = (cfg.subjects.max(1) - 1).to_string().len().max(3);
    let mut out = Vec::with_capacity(cfg.subjects);
    for s in 0..cfg.subjects {
        let (a, label) = if cfg.labeled {
            let label = (s % 2) as u8;
            let mut a = base.clone() + gaussian_matrix(r, &mut couplings) * (cfg.subject_jitter * cfg.rho);
            if label == 1 {
                a += &pattern * cfg.block_strength;
            }
            (a, Some(label))
        } else {
            (gaussian_matrix(r, &mut couplings), None)
        };
        let a = if spectral_radius(&a) > cfg.rho || !cfg.labeled {
            with_radius(a, cfg.rho)
        } else {
            a
        };
        let series = simulate_var(&a, cfg.timepoints, cfg.burn_in, cfg.noise_std, &mut noise);
        let prefix = if cfg.labeled { "sub" } else { "pre" };
        out.push(SubjectSeries {
            subject_id: format!("{prefix}{s:0width$}"),
            series,
            label,
            split: None,
        });
    }
    Ok(out)
}

// ---- normalization and features ------------------------------------------

fn mean_std(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-region standardization to mean 0, population std 1.
pub fn zscore(subject: &SubjectSeries) -> Result<SubjectSeries> {
    let (r, t) = (subject.regions(), subject.timepoints());
    let mut data = Vec::with_capacity(r * t);
    for i in 0..r {
        let row = subject.series.row(i);
        let (mean, std) = mean_std(row);
        if std <= 0.0 || !std.is_finite() {
            return Err(MimError::ZeroVariance {
                subject: subject.subject_id.clone(),
                region: i,
            });
        }
        data.extend(row.iter().map(|x| (x - mean) / std));
    }
    Ok(SubjectSeries {
        series: Tensor::new(vec![r, t], data)?,
        ..subject.clone()
    })
}

pub fn zscore_all(subjects: &[SubjectSeries]) -> Result<Vec<SubjectSeries>> {
    subjects.iter().map(zscore).collect()
}

/// Pearson correlations of all region pairs `i < j`, row-major upper triangle.
pub fn fnc_features(subject: &SubjectSeries) -> Result<Vec<f64>> {
    let z = zscore(subject)?;
    let (r, t) = (z.regions(), z.timepoints());
    let mut out = Vec::with_capacity(r * (r - 1) / 2);
    for i in 0..r {
        for j in i + 1..r {
            let dot: f64 = z.series.row(i).iter().zip(z.series.row(j)).map(|(a, b)| a * b).sum();
            out.push(dot / t as f64);
        }
    }
    Ok(out)
}

// ---- files -----------------------------------------------------------------

fn write_series_csv(path: &Path, series: &Tensor) -> Result<()> {
    let mut text = String::with_capacity(series.numel() * 20);
    for i in 0..series.rows() {
        let row: Vec<String> = series.row(i).iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_series_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| MimError::NonNumeric {
                path: path.to_path_buf(),
                line: ln + 1,
                cell: cell.to_string(),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(MimError::RaggedRow {
                    path: path.to_path_buf(),
                    line: ln + 1,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MimError::Shape {
            shape: vec![0],
            reason: format!("{} holds no rows", path.display()),
        });
    }
    Tensor::from_rows(&rows)
}

/// Writes one CSV per subject plus `manifest.csv`; returns the manifest path.
pub fn save_dataset(subjects: &[SubjectSeries], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("subjects"))?;
    let mut manifest = String::new();
    for s in subjects {
        let rel = format!("subjects/{}.csv", s.subject_id);
        write_series_csv(&dir.join(&rel), &s.series)?;
        manifest.push_str(&s.subject_id);
        manifest.push(',');
        manifest.push_str(&rel);
        match (s.label, s.split) {
            (Some(l), Some(sp)) => manifest.push_str(&format!(",{l},{sp}")),
            (Some(l), None) => manifest.push_str(&format!(",{l}")),
            (None, Some(sp)) => manifest.push_str(&format!(",,{sp}")),
            (None, None) => {}
        }
        manifest.push('\n');
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Reads a manifest and every subject file it references.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SubjectSeries>> {
    let text = fs::read_to_string(manifest_path).map_err(|source| MimError::File {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |reason: String| MimError::Manifest { line: ln + 1, reason };
        if fields.len() < 2 || fields.len() > 4 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(bad(format!("expected subject_id,path[,label][,split], got {line:?}")));
        }
        let id = fields[0].to_string();
        let mut label = None;
        let mut split = None;
        for f in &fields[2..] {
            match *f {
                "" => {}
                "0" => label = Some(0),
                "1" => label = Some(1),
                other => split = Some(other.parse::<Split>().map_err(bad)?),
            }
        }
        if !seen.insert(id.clone()) {
            return Err(MimError::DuplicateSubject(id));
        }
        let path = root.join(fields[1]);
        if !path.is_file() {
            return Err(MimError::MissingFile { subject: id, path });
        }
        let series = read_series_csv(&path)?;
        out.push(SubjectSeries {
            subject_id: id,
            series,
            label,
            split,
        });
    }
    check_homogeneous(&out)?;
    for s in &out {
        s.check_finite()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(rows: &[Vec<f64>]) -> SubjectSeries {
        SubjectSeries::new("s", Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn zscore_hand_values() {
        let z = zscore(&subject(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 3.0]])).unwrap();
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in z.series.row(0).iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_is_idempotent() {
        let z = zscore(&subject(&[vec![0.3, -2.0, 1.0, 4.0], vec![1.0, 0.0, 0.5, 0.2]])).unwrap();
        let zz = zscore(&z).unwrap();
        assert!(z.series.max_abs_diff(&zz.series) < 1e-12);
    }

    #[test]
    fn zscore_constant_row_names_region() {
        match zscore(&subject(&[vec![1.0, 2.0], vec![5.0, 5.0]])) {
            Err(MimError::ZeroVariance { region, .. }) => assert_eq!(region, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fnc_extreme_correlations() {
        let a = vec![0.1, 0.5, -0.3, 2.0];
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let f = fnc_features(&subject(&[a.clone(), a, neg])).unwrap();
        assert_eq!(f.len(), 3);
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!((f[1] + 1.0).abs() < 1e-12);
        assert!((f[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_gives_zero_series() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            subjects: 2,
            ..Default::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        assert!(data.iter().all(|s| s.series.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn unstable_rho_is_rejected() {
        let cfg = SynthConfig {
            rho: 1.2,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(MimError::Unstable(_))));
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig {
            subjects: 4,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let unl = SynthConfig {
            labeled: false,
            ..cfg
        };
        let d = generate_synthetic(&unl).unwrap();
        assert!(d.iter().all(|s| s.label.is_none()));
    }

    #[test]
    fn heterogeneous_shapes_are_rejected() {
        let a = subject(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let mut b = subject(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 1.0]]);
        b.subject_id = "t".into();
        assert!(matches!(check_homogeneous(&[a, b]), Err(MimError::Heterogeneous { .. })));
    }
}
