//! Optical-depth fits of absorption spectra.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::sim::transmission;
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const MAX_BACKTRACKS: usize = 60;

/// One probe detuning and the transmission measured there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    #[serde(rename = "delta_mhz")]
    pub delta: f64,
    pub transmission: f64,
    #[serde(default)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetuningScan {
    rows: Vec<ScanRow>,
}

impl DetuningScan {
    pub fn new(rows: Vec<ScanRow>) -> Result<Self> {
        if rows.len() < 3 {
            return Err(Error::FitFailed(format!("scan needs at least 3 rows, got {}", rows.len())));
        }
        for (i, r) in rows.iter().enumerate() {
            if !r.delta.is_finite() {
                return Err(Error::FitFailed(format!("row {i}: detuning {} is not finite", r.delta)));
            }
            if !(r.transmission > 0.0 && r.transmission <= 1.5) {
                return Err(Error::FitFailed(format!(
                    "row {i}: transmission {} outside (0, 1.5]",
                    r.transmission
                )));
            }
            if let Some(s) = r.sigma {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::FitFailed(format!("row {i}: sigma {s} must be positive")));
                }
            }
        }
        Ok(Self { rows })
    }

    /// Reads `delta_mhz,transmission[,sigma]` with a header line.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)?;
        let rows = reader.deserialize().collect::<std::result::Result<Vec<ScanRow>, _>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[ScanRow] {
        &self.rows
    }

    fn weight(row: &ScanRow) -> f64 {
        row.sigma.map_or(1.0, |s| 1.0 / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdFitResult {
    pub od: f64,
    pub od_sigma: f64,
    pub gamma_used: f64,
    /// Standard error of γ when it was fitted.
    pub gamma_sigma: Option<f64>,
    /// Root-mean-square of the unweighted residuals.
    pub residual_rms: f64,
    pub iterations: usize,
}

fn lorentz(delta: f64, gamma: f64) -> f64 {
    let hw2 = 0.25 * gamma * gamma;
    hw2 / (delta * delta + hw2)
}

fn weighted_sse(scan: &DetuningScan, od: f64, gamma: f64) -> f64 {
    scan.rows
        .iter()
        .map(|r| {
            let res = (r.transmission - transmission(od, r.delta, gamma)) * DetuningScan::weight(r);
            res * res
        })
        .sum()
}

fn residual_rms(scan: &DetuningScan, od: f64, gamma: f64) -> f64 {
    let sse: f64 = scan
        .rows
        .iter()
        .map(|r| (r.transmission - transmission(od, r.delta, gamma)).powi(2))
        .sum();
    (sse / scan.rows.len() as f64).sqrt()
}

/// Scale of the parameter covariance: 1 with known sigmas, otherwise the
/// residual variance.
fn covariance_scale(scan: &DetuningScan, sse: f64, params: usize) -> f64 {
    if scan.rows.iter().all(|r| r.sigma.is_some()) {
        1.0
    } else {
        let dof = scan.rows.len().saturating_sub(params).max(1);
        sse / dof as f64
    }
}

/// Starting point `−ln(T_min)·(Δ_min² + γ²/4)/(γ²/4)` from the deepest point.
fn initial_od(scan: &DetuningScan, gamma: f64) -> f64 {
    let deepest = scan
        .rows
        .iter()
        .min_by(|a, b| a.transmission.total_cmp(&b.transmission))
        .expect("scan has rows");
    (-deepest.transmission.ln() / lorentz(deepest.delta, gamma)).max(0.0)
}

/// Least-squares optical depth at fixed linewidth `gamma` (MHz), by
/// Gauss-Newton with backtracking.
pub fn fit_od(scan: &DetuningScan, gamma: f64) -> Result<OdFitResult> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::FitFailed(format!("gamma must be positive, got {gamma}")));
    }
    if scan.rows.iter().all(|r| r.transmission >= 1.0) {
        warn!("no absorption in scan; optical depth is 0");
        return Ok(finish_1d(scan, 0.0, gamma, 0));
    }
    let mut od = initial_od(scan, gamma);
    let mut sse = weighted_sse(scan, od, gamma);
    for iteration in 1..=MAX_ITERATIONS {
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for r in &scan.rows {
            let w = DetuningScan::weight(r);
            let m = transmission(od, r.delta, gamma);
            let j = -lorentz(r.delta, gamma) * m * w;
            jtj += j * j;
            jtr += j * (r.transmission - m) * w;
        }
        if !(jtj > 0.0) {
            return Ok(finish_1d(scan, od, gamma, iteration));
        }
        let step = jtr / jtj;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = (od + t * step).max(0.0);
            let trial_sse = weighted_sse(scan, trial, gamma);
            if trial_sse <= sse {
                accepted = Some((trial, trial_sse));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_sse)) = accepted else {
            // No decrease along the Gauss-Newton direction: at a minimum up to
            // rounding.
            return Ok(finish_1d(scan, od, gamma, iteration));
        };
        let moved = (next - od).abs();
        od = next;
        sse = next_sse;
        if moved <= 1e-12 * (1.0 + od) {
            return Ok(finish_1d(scan, od, gamma, iteration));
        }
    }
    Err(Error::FitFailed(format!("no convergence in {MAX_ITERATIONS} iterations")))
}

fn finish_1d(scan: &DetuningScan, od: f64, gamma: f64, iterations: usize) -> OdFitResult {
    let sse = weighted_sse(scan, od, gamma);
    let jtj: f64 = scan
        .rows
        .iter()
        .map(|r| {
            let j = lorentz(r.delta, gamma) * transmission(od, r.delta, gamma) * DetuningScan::weight(r);
            j * j
        })
        .sum();
    let od_sigma = if jtj > 0.0 {
        (covariance_scale(scan, sse, 1) / jtj).sqrt()
    } else {
        0.0
    };
    OdFitResult {
        od,
        od_sigma,
        gamma_used: gamma,
        gamma_sigma: None,
        residual_rms: residual_rms(scan, od, gamma),
        iterations,
    }
}

/// Fits optical depth and linewidth together, starting from `gamma_guess`.
pub fn fit_od_and_gamma(scan: &DetuningScan, gamma_guess: f64) -> Result<OdFitResult> {
    if !(gamma_guess > 0.0 && gamma_guess.is_finite()) {
        return Err(Error::FitFailed(format!("gamma must be positive, got {gamma_guess}")));
    }
    if scan.rows.iter().all(|r| r.transmission >= 1.0) {
        warn!("no absorption in scan; optical depth is 0");
        return Ok(finish_1d(scan, 0.0, gamma_guess, 0));
    }
    // Refine the optical depth first so the joint iteration starts close.
    let mut od = fit_od(scan, gamma_guess)?.od;
    let mut gamma = gamma_guess;
    let mut sse = weighted_sse(scan, od, gamma);
    for iteration in 1..=MAX_ITERATIONS {
        let mut a = [[0.0; 2]; 2];
        let mut g = [0.0; 2];
        for r in &scan.rows {
            let w = DetuningScan::weight(r);
            let (j, res) = joint_jacobian(r, od, gamma, w);
            for p in 0..2 {
                g[p] += j[p] * res;
                for q in 0..2 {
                    a[p][q] += j[p] * j[q];
                }
            }
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        if !(det.abs() > 0.0) {
            return Err(Error::FitFailed("singular Jacobian in joint fit".into()));
        }
        let step = [
            (a[1][1] * g[0] - a[0][1] * g[1]) / det,
            (a[0][0] * g[1] - a[1][0] * g[0]) / det,
        ];
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial_od = (od + t * step[0]).max(0.0);
            let trial_gamma = gamma + t * step[1];
            if trial_gamma > 0.0 {
                let trial_sse = weighted_sse(scan, trial_od, trial_gamma);
                if trial_sse <= sse {
                    accepted = Some((trial_od, trial_gamma, trial_sse));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next_od, next_gamma, next_sse)) = accepted else {
            return Ok(finish_2d(scan, od, gamma, iteration));
        };
        let moved = ((next_od - od) / (1.0 + od)).abs().max(((next_gamma - gamma) / gamma).abs());
        od = next_od;
        gamma = next_gamma;
        sse = next_sse;
        if moved <= 1e-12 {
            return Ok(finish_2d(scan, od, gamma, iteration));
        }
    }
    Err(Error::FitFailed(format!("no convergence in {MAX_ITERATIONS} iterations")))
}

/// Weighted Jacobian of the model with respect to (od, γ) and the weighted
/// residual.
fn joint_jacobian(r: &ScanRow, od: f64, gamma: f64, w: f64) -> ([f64; 2], f64) {
    let hw2 = 0.25 * gamma * gamma;
    let denom = r.delta * r.delta + hw2;
    let l = hw2 / denom;
    let dl_dgamma = 0.5 * gamma * r.delta * r.delta / (denom * denom);
    let m = (-od * l).exp();
    ([-l * m * w, -od * dl_dgamma * m * w], (r.transmission - m) * w)
}

fn finish_2d(scan: &DetuningScan, od: f64, gamma: f64, iterations: usize) -> OdFitResult {
    let sse = weighted_sse(scan, od, gamma);
    let mut a = [[0.0; 2]; 2];
    for r in &scan.rows {
        let (j, _) = joint_jacobian(r, od, gamma, DetuningScan::weight(r));
        for p in 0..2 {
            for q in 0..2 {
                a[p][q] += j[p] * j[q];
            }
        }
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = covariance_scale(scan, sse, 2);
    let (od_var, gamma_var) = if det.abs() > 0.0 {
        (scale * a[1][1] / det, scale * a[0][0] / det)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    OdFitResult {
        od,
        od_sigma: od_var.max(0.0).sqrt(),
        gamma_used: gamma,
        gamma_sigma: Some(gamma_var.max(0.0).sqrt()),
        residual_rms: residual_rms(scan, od, gamma),
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(od: f64, gamma: f64, noise: f64, seed: u64) -> DetuningScan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..41)
            .map(|i| {
                let delta = 30.0 + 5.0 * i as f64;
                let g: f64 = StandardNormal.sample(&mut rng);
                ScanRow {
                    delta,
                    transmission: transmission(od, delta, gamma) * (1.0 + noise * g),
                    sigma: None,
                }
            })
            .collect();
        DetuningScan::new(rows).unwrap()
    }

    #[test]
    fn noiseless_recovery() {
        for od in [1.0, 100.0, 535.0, 970.0] {
            let fit = fit_od(&synthetic(od, 5.75, 0.0, 0), 5.75).unwrap();
            assert!(((fit.od - od) / od).abs() < 1e-6, "{od}: {fit:?}");
            assert!(fit.residual_rms < 1e-12, "{fit:?}");
            assert_eq!(fit.gamma_used, 5.75);
        }
    }

    #[test]
    fn flat_scan_gives_zero() {
        let rows = (0..5)
            .map(|i| ScanRow {
                delta: i as f64 * 10.0,
                transmission: 1.0,
                sigma: None,
            })
            .collect();
        let fit = fit_od(&DetuningScan::new(rows).unwrap(), 5.75).unwrap();
        assert_eq!(fit.od, 0.0);
    }

    #[test]
    fn noisy_recovery_median_within_three_percent() {
        for od in [100.0, 535.0, 970.0] {
            let mut fits: Vec<f64> = (0..20)
                .map(|seed| fit_od(&synthetic(od, 5.75, 0.01, seed), 5.75).unwrap().od)
                .collect();
            fits.sort_by(f64::total_cmp);
            let median = 0.5 * (fits[9] + fits[10]);
            assert!(((median - od) / od).abs() < 0.03, "{od}: {median}");
        }
    }

    #[test]
    fn sigma_matches_the_spread_of_refits() {
        // Homoscedastic noise, where the linearized covariance is exact to
        // first order.
        let od = 535.0;
        let fits: Vec<OdFitResult> = (0..200)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let rows = synthetic(od, 5.75, 0.0, 0)
                    .rows()
                    .iter()
                    .map(|r| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        ScanRow {
                            transmission: r.transmission + 0.0005 * g,
                            ..*r
                        }
                    })
                    .collect();
                fit_od(&DetuningScan::new(rows).unwrap(), 5.75).unwrap()
            })
            .collect();
        let mean = fits.iter().map(|f| f.od).sum::<f64>() / fits.len() as f64;
        let spread = (fits.iter().map(|f| (f.od - mean).powi(2)).sum::<f64>() / fits.len() as f64).sqrt();
        let reported = fits.iter().map(|f| f.od_sigma).sum::<f64>() / fits.len() as f64;
        assert!((reported / spread - 1.0).abs() < 0.2, "{reported} vs {spread}");
    }

    #[test]
    fn known_sigmas_weight_the_fit() {
        let mut scan = synthetic(300.0, 5.75, 0.0, 0).rows().to_vec();
        for r in &mut scan {
            r.sigma = Some(0.001);
        }
        scan[0].transmission *= 1.5;
        scan[0].sigma = Some(1e3);
        let fit = fit_od(&DetuningScan::new(scan).unwrap(), 5.75).unwrap();
        assert!((fit.od - 300.0).abs() / 300.0 < 1e-6, "{fit:?}");
    }

    #[test]
    fn joint_fit_recovers_both_parameters() {
        let rows = (0..61)
            .map(|i| {
                let delta = -30.0 + i as f64;
                ScanRow {
                    delta,
                    transmission: transmission(4.0, delta, 6.0),
                    sigma: None,
                }
            })
            .collect();
        let fit = fit_od_and_gamma(&DetuningScan::new(rows).unwrap(), 5.0).unwrap();
        assert!((fit.od - 4.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.gamma_used - 6.0).abs() < 1e-6, "{fit:?}");
        assert!(fit.gamma_sigma.is_some());
    }

    #[test]
    fn rejects_invalid_input() {
        let row = |t| ScanRow {
            delta: 1.0,
            transmission: t,
            sigma: None,
        };
        assert!(DetuningScan::new(vec![row(0.5), row(0.5)]).is_err());
        assert!(DetuningScan::new(vec![row(0.5), row(0.0), row(0.5)]).is_err());
        assert!(DetuningScan::new(vec![row(0.5), row(1.6), row(0.5)]).is_err());
        let scan = DetuningScan::new(vec![row(0.5), row(0.6), row(0.7)]).unwrap();
        assert!(fit_od(&scan, 0.0).is_err());
    }

    #[test]
    fn reads_csv_with_and_without_sigma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.csv");
        std::fs::write(&path, "delta_mhz,transmission,sigma\n30,0.5,0.01\n40, 0.6 ,0.01\n50,0.7,0.01\n").unwrap();
        let scan = DetuningScan::read_csv(&path).unwrap();
        assert_eq!(scan.rows()[1].transmission, 0.6);
        assert_eq!(scan.rows()[1].sigma, Some(0.01));
        std::fs::write(&path, "delta_mhz,transmission\n30,0.5\n40,0.6\n50,0.7\n").unwrap();
        let scan = DetuningScan::read_csv(&path).unwrap();
        assert_eq!(scan.rows()[2].sigma, None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn detuning_and_linewidth_scale_together(od in 1.0f64..1000.0, alpha in 0.1f64..10.0) {
            let base = synthetic(od, 5.75, 0.0, 0);
            let scaled: Vec<ScanRow> = base
                .rows()
                .iter()
                .map(|r| ScanRow { delta: alpha * r.delta, ..*r })
                .collect();
            let a = fit_od(&base, 5.75).unwrap().od;
            let b = fit_od(&DetuningScan::new(scaled).unwrap(), alpha * 5.75).unwrap().od;
            prop_assert!((a - b).abs() <= 1e-6 * od, "{} vs {}", a, b);
        }
    }
}
