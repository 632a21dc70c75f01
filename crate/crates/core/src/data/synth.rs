//! Synthetic cohort generator.
//!
//! Stands in for CNN feature extraction at desk scale: each archetype is a
//! unit-variance Gaussian blob in feature space, archetype 0 is tumor-like,
//! and each patient mixes tumor and non-tumor patches according to a drawn
//! tumor fraction `f` which doubles as the ground-truth risk.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::cohort::{Cohort, PatchCoord, PatientBag, SurvivalLabel};
use crate::error::{Error, Result};

/// Separation between archetype means, in units of the within-blob standard
/// deviation. Keeps blobs at least six standard deviations apart.
const ARCHETYPE_SPACING: f64 = 8.0;

/// Baseline time scale in days for a patient at the middle of the tumor
/// fraction range.
const BASE_TIME_DAYS: f64 = 1000.0;

const MIN_TIME_DAYS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub patches_per_patient: usize,
    pub feature_dim: usize,
    pub n_archetypes: usize,
    /// Uniform range the per-patient tumor fraction is drawn from.
    pub tumor_fraction_range: (f64, f64),
    /// Approximate fraction of patients censored by the independent uniform
    /// censoring process.
    pub censor_target: f64,
    /// Exponent `b` in hazard proportional to `exp(b * f)`.
    pub hazard_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 50,
            patches_per_patient: 100,
            feature_dim: 16,
            n_archetypes: 4,
            tumor_fraction_range: (0.0, 1.0),
            censor_target: 0.3,
            hazard_scale: 2.0,
            seed: 0,
        }
    }
}

/// Generator output: the cohort plus everything a test needs to grade a
/// model against the generating process.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    /// Ground-truth risk per patient (the tumor fraction `f`).
    pub ground_truth_risk: Vec<f64>,
    /// Number of tumor-archetype patches per patient. Tumor patches occupy
    /// the leading rows of each bag.
    pub tumor_patch_counts: Vec<usize>,
    /// Archetype means, one row per archetype.
    pub archetype_means: Array2<f64>,
}

/// Box-Muller standard normal sampler over a seeded uniform RNG.
struct NormalSampler {
    spare: Option<f64>,
}

impl NormalSampler {
    fn new() -> Self {
        Self { spare: None }
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = loop {
            let u = rng.gen::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        let u2: f64 = rng.gen();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

fn archetype_means(n_archetypes: usize, d: usize) -> Array2<f64> {
    let mut means = Array2::zeros((n_archetypes, d));
    for a in 0..n_archetypes {
        means[[a, a % d]] = ARCHETYPE_SPACING * (1 + a / d) as f64;
    }
    means
}

/// Solve `(1 - exp(-x)) / x = target` for x > 0 by bisection. The left side
/// is the probability that a uniform(0, x/rate) censor time precedes an
/// exponential(rate) event time.
fn censor_horizon_factor(target: f64) -> f64 {
    let frac = |x: f64| (1.0 - (-x).exp()) / x;
    let (mut lo, mut hi) = (1e-9, 1e9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_synthetic_cohort(config: &SyntheticConfig) -> Result<SyntheticCohort> {
    let SyntheticConfig {
        n_patients,
        patches_per_patient,
        feature_dim: d,
        n_archetypes,
        tumor_fraction_range: (lo, hi),
        censor_target,
        hazard_scale,
        seed,
    } = *config;

    if n_patients < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_patients must be at least 2, got {n_patients}"
        )));
    }
    if patches_per_patient == 0 {
        return Err(Error::InvalidArgument(
            "patches_per_patient must be positive".into(),
        ));
    }
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature_dim must be at least 2, got {d}"
        )));
    }
    if n_archetypes < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_archetypes must be at least 2, got {n_archetypes}"
        )));
    }
    if n_archetypes > 255 {
        return Err(Error::InvalidArgument(format!(
            "n_archetypes must be at most 255, got {n_archetypes}"
        )));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 || hi > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "tumor_fraction_range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
        )));
    }
    if !(0.0..1.0).contains(&censor_target) {
        return Err(Error::InvalidArgument(format!(
            "censor_target must lie in [0, 1), got {censor_target}"
        )));
    }
    if !hazard_scale.is_finite() || hazard_scale <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "hazard_scale must be positive, got {hazard_scale}"
        )));
    }

    let means = archetype_means(n_archetypes, d);
    let mid = 0.5 * (lo + hi);
    // Uniform censoring horizon tuned so that a mid-range patient is censored
    // with roughly the target probability.
    let censor_horizon = if censor_target > 0.0 {
        censor_horizon_factor(censor_target) * BASE_TIME_DAYS
    } else {
        f64::INFINITY
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = NormalSampler::new();
    let id_width = (n_patients.saturating_sub(1)).to_string().len().max(4);

    let mut patients = Vec::with_capacity(n_patients);
    let mut ground_truth = Vec::with_capacity(n_patients);
    let mut tumor_counts = Vec::with_capacity(n_patients);

    for p in 0..n_patients {
        let f = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let m = patches_per_patient;
        let n_tumor = ((f * m as f64).ceil() as usize).min(m);

        let mut features = Array2::<f32>::zeros((m, d));
        let mut coords = Vec::with_capacity(m);
        for i in 0..m {
            let archetype = if i < n_tumor {
                0
            } else if n_archetypes == 2 {
                1
            } else {
                rng.gen_range(1..n_archetypes)
            };
            for j in 0..d {
                let value = means[[archetype, j]] + normal.sample(&mut rng);
                features[[i, j]] = value as f32;
            }
            coords.push(PatchCoord {
                slide_index: 0,
                x: (i % 10) as u32 * 500,
                y: (i / 10) as u32 * 500,
            });
        }

        let rate = (hazard_scale * (f - mid)).exp() / BASE_TIME_DAYS;
        let u: f64 = rng.gen();
        let event_time = (-(1.0 - u).ln() / rate).max(MIN_TIME_DAYS);
        let (time_days, event) = if censor_horizon.is_finite() {
            let censor_time = (rng.gen::<f64>() * censor_horizon).max(MIN_TIME_DAYS);
            if event_time <= censor_time {
                (event_time, true)
            } else {
                (censor_time, false)
            }
        } else {
            (event_time, true)
        };

        let patient_id = format!("synth-{p:0id_width$}");
        patients.push(PatientBag::new(
            patient_id,
            features,
            coords,
            SurvivalLabel { time_days, event },
        )?);
        ground_truth.push(f);
        tumor_counts.push(n_tumor);
    }

    Ok(SyntheticCohort {
        cohort: Cohort::new(patients)?,
        ground_truth_risk: ground_truth,
        tumor_patch_counts: tumor_counts,
        archetype_means: means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SyntheticConfig {
        SyntheticConfig {
            n_patients: 50,
            patches_per_patient: 100,
            feature_dim: 16,
            n_archetypes: 4,
            seed: 7,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let a = generate_synthetic_cohort(&config()).unwrap();
        assert_eq!(a.cohort.n_patients(), 50);
        assert_eq!(a.cohort.feature_dim(), 16);
        for bag in a.cohort.patients() {
            assert_eq!(bag.n_patches(), 100);
        }

        let b = generate_synthetic_cohort(&config()).unwrap();
        assert_eq!(a.ground_truth_risk, b.ground_truth_risk);
        for (x, y) in a.cohort.patients().iter().zip(b.cohort.patients()) {
            assert_eq!(x.features(), y.features());
            assert_eq!(x.label(), y.label());
        }
    }

    #[test]
    fn degenerate_range_pins_risk() {
        let cfg = SyntheticConfig {
            tumor_fraction_range: (0.5, 0.5),
            ..config()
        };
        let out = generate_synthetic_cohort(&cfg).unwrap();
        assert!(out.ground_truth_risk.iter().all(|&f| f == 0.5));
    }

    #[test]
    fn risk_correlates_with_short_survival() {
        // Oracle: the generative model itself. Higher f means higher hazard,
        // so corr(f, -log t) over uncensored patients must be positive.
        let out = generate_synthetic_cohort(&SyntheticConfig {
            n_patients: 200,
            ..config()
        })
        .unwrap();
        let pairs: Vec<(f64, f64)> = out
            .cohort
            .patients()
            .iter()
            .zip(&out.ground_truth_risk)
            .filter(|(p, _)| p.label().event)
            .map(|(p, &f)| (f, -p.label().time_days.ln()))
            .collect();
        assert!(pairs.len() > 20);
        let n = pairs.len() as f64;
        let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        for (x, y) in &pairs {
            cov += (x - mean_x) * (y - mean_y);
            var_x += (x - mean_x).powi(2);
            var_y += (y - mean_y).powi(2);
        }
        let corr = cov / (var_x.sqrt() * var_y.sqrt());
        assert!(corr > 0.0, "corr = {corr}");
    }

    #[test]
    fn tumor_patches_hug_archetype_zero_mean() {
        let out = generate_synthetic_cohort(&config()).unwrap();
        for (bag, &n_tumor) in out.cohort.patients().iter().zip(&out.tumor_patch_counts) {
            if n_tumor < 100 {
                continue; // law-of-large-numbers check needs a full bag
            }
            for j in 0..bag.feature_dim() {
                let mean = (0..n_tumor)
                    .map(|i| f64::from(bag.features()[[i, j]]))
                    .sum::<f64>()
                    / n_tumor as f64;
                assert!(
                    (mean - out.archetype_means[[0, j]]).abs() < 0.5,
                    "dim {j}: {mean}"
                );
            }
        }
    }

    #[test]
    fn censoring_rate_is_near_target() {
        let out = generate_synthetic_cohort(&SyntheticConfig {
            n_patients: 2000,
            patches_per_patient: 1,
            ..config()
        })
        .unwrap();
        let censored = out
            .cohort
            .patients()
            .iter()
            .filter(|p| !p.label().event)
            .count() as f64
            / 2000.0;
        assert!((censored - 0.3).abs() < 0.1, "censored = {censored}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let bad_range = SyntheticConfig {
            tumor_fraction_range: (0.9, 0.1),
            ..config()
        };
        assert!(generate_synthetic_cohort(&bad_range).is_err());
        let too_many = SyntheticConfig {
            n_archetypes: 256,
            ..config()
        };
        assert!(generate_synthetic_cohort(&too_many).is_err());
    }
}
