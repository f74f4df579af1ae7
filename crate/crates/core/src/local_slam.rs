//! Per-UE local SLAM.
//!
//! A Rao-Blackwellized filter: particles carry the UE position hypothesis
//! while each map feature keeps its own small Kalman estimate. One step runs
//!
//! 1. motion prediction from the IMU-reported displacement,
//! 2. gated nearest-neighbor association of the shuffled angle measurements
//!    against the predicted bearings of the PA and the mapped features,
//! 3. particle reweighting by the matched bearing likelihoods (the PA's AoD
//!    gives a second bearing on the UE since LoS departure equals arrival),
//! 4. per-feature position updates from the matched AoAs,
//! 5. confidence bookkeeping and feature birth from persistent unmatched
//!    measurements.
//!
//! During the refinement stage the legacy part of the map is replaced by a
//! download of the global map, which re-anchors UEs whose own field of view
//! lacks the PA.

use crate::global_map::{GlobalRadioMap, Upload, UploadFeature};
use crate::sensors::AngleMeasurement;
use crate::vec2::{wrap_angle, Vec2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Tuning constants for the local filter. Defaults match the shipped
/// scenario configurations.
#[derive(Debug, Clone)]
pub struct SlamParams {
    pub n_particles: usize,
    /// Std of the initial position prior per axis (m).
    pub sigma_ini: f64,
    /// Angle-measurement noise std fed to the filter (rad).
    pub sigma_angle: f64,
    /// Association gate half-width in units of innovation std.
    pub gate_sigmas: f64,
    /// Confidence added on a match (saturating at `confidence_max`).
    pub confidence_gain: f64,
    pub confidence_max: f64,
    /// Multiplicative confidence decay on a miss.
    pub confidence_decay: f64,
    /// Confidence assigned to a freshly born feature.
    pub birth_confidence: f64,
    /// New (non-legacy) features below this confidence are dropped.
    pub min_keep_confidence: f64,
    /// A birth candidate must be re-gated this many times...
    pub birth_hits: u32,
    /// ...within this many consecutive steps to become a feature.
    pub birth_window: u32,
    /// Prior position variance per axis for new features (m^2).
    pub feature_prior_var: f64,
}

impl Default for SlamParams {
    fn default() -> Self {
        SlamParams {
            n_particles: 1000,
            sigma_ini: 0.12,
            sigma_angle: 0.04,
            gate_sigmas: 3.0,
            confidence_gain: 0.1,
            confidence_max: 0.99,
            confidence_decay: 0.8,
            birth_confidence: 0.4,
            min_keep_confidence: 0.05,
            birth_hits: 2,
            birth_window: 3,
            feature_prior_var: 25.0,
        }
    }
}

/// Numerical floor for bearing-noise variances so noiseless runs stay finite.
const ANGLE_SIGMA_FLOOR: f64 = 1e-4;
/// Floor for feature position variances.
const FEATURE_VAR_FLOOR: f64 = 1e-10;

/// One mapped feature: position Kalman estimate plus existence confidence.
#[derive(Debug, Clone, Copy)]
pub struct LocalFeature {
    pub position: Vec2,
    /// Diagonal position covariance (m^2).
    pub variance: [f64; 2],
    pub confidence: f64,
    /// Carried over from the previous map / downloaded global map.
    pub legacy: bool,
}

/// Weighted particle representation of the UE position posterior.
#[derive(Debug, Clone)]
pub struct UePosterior {
    particles: Vec<Vec2>,
    weights: Vec<f64>,
    mean: Vec2,
    variance: [f64; 2],
}

/// Gaussian summary of the UE position (the upload/fusion interface).
#[derive(Debug, Clone, Copy)]
pub struct UeGaussian {
    pub mean: Vec2,
    pub variance: [f64; 2],
}

impl UePosterior {
    fn refresh_moments(&mut self) {
        let mut mx = 0.0;
        let mut my = 0.0;
        for (p, w) in self.particles.iter().zip(&self.weights) {
            mx += p.x * w;
            my += p.y * w;
        }
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (p, w) in self.particles.iter().zip(&self.weights) {
            vx += (p.x - mx) * (p.x - mx) * w;
            vy += (p.y - my) * (p.y - my) * w;
        }
        self.mean = Vec2::new(mx, my);
        self.variance = [vx, vy];
    }

    pub fn mean(&self) -> Vec2 {
        self.mean
    }

    pub fn gaussian(&self) -> UeGaussian {
        UeGaussian {
            mean: self.mean,
            variance: self.variance,
        }
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Where each measurement of one step ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Association {
    /// Matched the PA's LoS bearing.
    Pa,
    /// Matched the map feature at this index.
    Feature(usize),
    /// Unmatched; feeds the birth logic.
    New,
}

pub type AssociationVector = Vec<Association>;

#[derive(Debug, Clone, Copy)]
struct BirthCandidate {
    position: Vec2,
    hits: u32,
    age: u32,
}

/// A UE's complete local SLAM state.
#[derive(Debug, Clone)]
pub struct LocalSlam {
    pub posterior: UePosterior,
    pub map: Vec<LocalFeature>,
    candidates: Vec<BirthCandidate>,
    params: SlamParams,
    pa: Vec2,
}

impl LocalSlam {
    /// Start a filter at the true position `x0` plus a drawn initial error:
    /// the particle cloud centers on the erroneous estimate with spread
    /// `sigma_ini`, and the local map starts empty.
    pub fn init<R: Rng>(x0: Vec2, pa: Vec2, params: SlamParams, rng: &mut R) -> LocalSlam {
        let n = params.n_particles.max(1);
        let center = if params.sigma_ini > 0.0 {
            let d = Normal::new(0.0, params.sigma_ini).expect("sigma >= 0");
            x0 + Vec2::new(d.sample(rng), d.sample(rng))
        } else {
            x0
        };
        let particles: Vec<Vec2> = if params.sigma_ini > 0.0 {
            let d = Normal::new(0.0, params.sigma_ini).expect("sigma >= 0");
            (0..n)
                .map(|_| center + Vec2::new(d.sample(rng), d.sample(rng)))
                .collect()
        } else {
            vec![center; n]
        };
        let mut posterior = UePosterior {
            particles,
            weights: vec![1.0 / n as f64; n],
            mean: Vec2::ZERO,
            variance: [0.0, 0.0],
        };
        posterior.refresh_moments();
        LocalSlam {
            posterior,
            map: Vec::new(),
            candidates: Vec::new(),
            params,
            pa,
        }
    }

    /// Motion prediction: translate every particle by the IMU-reported
    /// displacement plus per-particle process noise of the IMU model.
    pub fn predict<R: Rng>(
        &mut self,
        reported_displacement: Vec2,
        sigma_imu: f64,
        dt: f64,
        rng: &mut R,
    ) {
        let std = crate::sensors::imu_position_noise_std(sigma_imu, dt);
        if std > 0.0 {
            let d = Normal::new(0.0, std).expect("std >= 0");
            for p in &mut self.posterior.particles {
                *p += reported_displacement + Vec2::new(d.sample(rng), d.sample(rng));
            }
        } else {
            for p in &mut self.posterior.particles {
                *p += reported_displacement;
            }
        }
        self.posterior.refresh_moments();
    }

    /// Replace the legacy map with a download of the global map. Every UE
    /// receives every global feature in index order; features this UE is not
    /// believed to see arrive demoted to the cutoff confidence.
    pub fn import_global(&mut self, q: &GlobalRadioMap, ue: usize, r_cut: f64) {
        let mut map: Vec<LocalFeature> = q
            .features
            .iter()
            .map(|g| {
                let visible = g.visibility.get(ue).copied().unwrap_or(0.0) > r_cut;
                LocalFeature {
                    position: g.position,
                    variance: g.variance,
                    confidence: if visible { g.confidence } else { r_cut },
                    legacy: true,
                }
            })
            .collect();
        map.extend(self.map.iter().filter(|f| !f.legacy));
        self.map = map;
    }

    /// Measurement update: association, particle reweighting (with
    /// resampling when depleted), feature Kalman updates, confidence
    /// bookkeeping, and feature birth.
    pub fn associate_and_update<R: Rng>(
        &mut self,
        measurements: &[AngleMeasurement],
        rng: &mut R,
    ) -> AssociationVector {
        let sigma_floor = self.params.sigma_angle.max(ANGLE_SIGMA_FLOOR);
        let ue = self.posterior.mean;
        let ue_var = self.posterior.variance;

        // Candidate targets: the PA (known exactly) plus every map feature.
        // Each carries its predicted bearing and an innovation std inflated
        // by the positional uncertainty of both endpoints.
        struct Target {
            anchor: Vec2,
            predicted: f64,
            sigma: f64,
            feature: Option<usize>,
        }
        let mut targets = Vec::with_capacity(self.map.len() + 1);
        let bearing_var = |anchor: Vec2, fvar: [f64; 2]| -> f64 {
            let d = ue - anchor;
            let d2 = d.norm_sq().max(1e-6);
            // Gradient of atan2 w.r.t. both endpoints has magnitude 1/d.
            let endpoint_var = (d.y * d.y * (fvar[0] + ue_var[0])
                + d.x * d.x * (fvar[1] + ue_var[1]))
                / (d2 * d2);
            sigma_floor * sigma_floor + endpoint_var
        };
        targets.push(Target {
            anchor: self.pa,
            predicted: (ue - self.pa).angle(),
            sigma: bearing_var(self.pa, [0.0, 0.0]).sqrt(),
            feature: None,
        });
        for (i, f) in self.map.iter().enumerate() {
            targets.push(Target {
                anchor: f.position,
                predicted: (ue - f.position).angle(),
                sigma: bearing_var(f.position, f.variance).sqrt(),
                feature: Some(i),
            });
        }

        // Gated nearest-neighbor assignment, globally greedy: smallest
        // normalized residual first, each measurement and target used once.
        let mut pairs = Vec::new();
        for (mi, m) in measurements.iter().enumerate() {
            for (ti, t) in targets.iter().enumerate() {
                let resid = wrap_angle(m.aoa - t.predicted).abs();
                let norm = resid / t.sigma;
                if norm <= self.params.gate_sigmas {
                    pairs.push((norm, mi, ti));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut assoc = vec![Association::New; measurements.len()];
        let mut meas_used = vec![false; measurements.len()];
        let mut target_used = vec![false; targets.len()];
        let mut matches: Vec<(usize, usize)> = Vec::new(); // (measurement, target)
        for (_, mi, ti) in pairs {
            if meas_used[mi] || target_used[ti] {
                continue;
            }
            meas_used[mi] = true;
            target_used[ti] = true;
            assoc[mi] = match targets[ti].feature {
                None => Association::Pa,
                Some(f) => Association::Feature(f),
            };
            matches.push((mi, ti));
        }

        // Particle reweighting by the matched bearing likelihoods.
        if !matches.is_empty() {
            let n = self.posterior.particles.len();
            let mut log_w: Vec<f64> = self.posterior.weights.iter().map(|w| w.ln()).collect();
            for &(mi, ti) in &matches {
                let m = &measurements[mi];
                let t = &targets[ti];
                let var = t.sigma * t.sigma;
                for (k, p) in self.posterior.particles.iter().enumerate() {
                    let pred = (*p - t.anchor).angle();
                    let r = wrap_angle(m.aoa - pred);
                    log_w[k] -= 0.5 * r * r / var;
                    if t.feature.is_none() {
                        // LoS departure angle is a second, independent
                        // bearing along the same ray.
                        let r2 = wrap_angle(m.aod - pred);
                        log_w[k] -= 0.5 * r2 * r2 / var;
                    }
                }
            }
            let max_lw = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (w, lw) in self.posterior.weights.iter_mut().zip(&log_w) {
                *w = (lw - max_lw).exp();
                sum += *w;
            }
            if sum > 0.0 && sum.is_finite() {
                for w in &mut self.posterior.weights {
                    *w /= sum;
                }
            } else {
                let u = 1.0 / n as f64;
                self.posterior.weights.fill(u);
            }
            self.posterior.refresh_moments();
            if self.posterior.effective_sample_size() < n as f64 / 2.0 {
                self.resample(rng);
            }
        }

        // Feature position updates from the matched AoAs, conditioned on the
        // refreshed pose estimate.
        let ue = self.posterior.mean;
        let ue_var = self.posterior.variance;
        let mut matched_features = vec![false; self.map.len()];
        for &(mi, ti) in &matches {
            let Some(fi) = targets[ti].feature else {
                continue;
            };
            matched_features[fi] = true;
            let f = &mut self.map[fi];
            let d = ue - f.position;
            let d2 = d.norm_sq().max(1e-6);
            let h = [d.y / d2, -d.x / d2];
            let pose_var = (d.y * d.y * ue_var[0] + d.x * d.x * ue_var[1]) / (d2 * d2);
            let r_meas = sigma_floor * sigma_floor + pose_var;
            let s = h[0] * h[0] * f.variance[0] + h[1] * h[1] * f.variance[1] + r_meas;
            if s <= 0.0 {
                continue;
            }
            let innovation = wrap_angle(measurements[mi].aoa - (ue - f.position).angle());
            let k = [f.variance[0] * h[0] / s, f.variance[1] * h[1] / s];
            f.position.x += k[0] * innovation;
            f.position.y += k[1] * innovation;
            // Joseph-free diagonal update; off-diagonal terms are dropped to
            // keep the declared diagonal covariance model.
            f.variance[0] = ((1.0 - k[0] * h[0]) * f.variance[0]).max(FEATURE_VAR_FLOOR);
            f.variance[1] = ((1.0 - k[1] * h[1]) * f.variance[1]).max(FEATURE_VAR_FLOOR);
        }

        // Confidence dynamics and removal of washed-out new features.
        for (i, f) in self.map.iter_mut().enumerate() {
            if matched_features[i] {
                f.confidence = (f.confidence + self.params.confidence_gain)
                    .min(self.params.confidence_max);
            } else {
                f.confidence *= self.params.confidence_decay;
            }
        }
        let min_keep = self.params.min_keep_confidence;
        self.map.retain(|f| f.legacy || f.confidence >= min_keep);

        // Birth pipeline: unmatched measurements refresh or create
        // candidates; a candidate gated `birth_hits` times within
        // `birth_window` steps becomes a new feature.
        let range_hint = (ue - self.pa).norm().max(1.0);
        let mut new_candidates: Vec<BirthCandidate> = Vec::new();
        for (mi, a) in assoc.iter().enumerate() {
            if *a != Association::New {
                continue;
            }
            let bearing = measurements[mi].aoa;
            // The measured AoA points anchor -> UE, so the anchor hypothesis
            // sits behind the UE along the bearing at the PA-range hint.
            let hypothesis = ue - Vec2::from_angle(bearing) * range_hint;
            let gate_m = (self.params.gate_sigmas * sigma_floor * range_hint).max(0.5);
            let mut absorbed = false;
            for c in &mut self.candidates {
                if c.position.distance(hypothesis) < 3.0 * gate_m {
                    c.position = (c.position + hypothesis) * 0.5;
                    c.hits += 1;
                    absorbed = true;
                    break;
                }
            }
            if !absorbed {
                new_candidates.push(BirthCandidate {
                    position: hypothesis,
                    hits: 1,
                    age: 0,
                });
            }
        }
        let mut born: Vec<LocalFeature> = Vec::new();
        let params = &self.params;
        self.candidates.retain(|c| {
            if c.hits >= params.birth_hits {
                born.push(LocalFeature {
                    position: c.position,
                    variance: [params.feature_prior_var, params.feature_prior_var],
                    confidence: params.birth_confidence,
                    legacy: false,
                });
                false
            } else {
                c.age < params.birth_window
            }
        });
        for c in &mut self.candidates {
            c.age += 1;
        }
        self.candidates.extend(new_candidates);
        self.map.extend(born);

        assoc
    }

    /// Systematic resampling with a shrinking regularization kernel: the
    /// jitter bandwidth follows the current cloud spread, so repeated
    /// resampling contracts onto the measurement-consistent region instead of
    /// collapsing to duplicated points.
    fn resample<R: Rng>(&mut self, rng: &mut R) {
        let n = self.posterior.particles.len();
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for w in &self.posterior.weights {
            acc += w;
            cumulative.push(acc);
        }
        let start: f64 = rng.random_range(0.0..1.0 / n as f64);
        let mut out = Vec::with_capacity(n);
        let mut idx = 0;
        for k in 0..n {
            let u = start + k as f64 / n as f64;
            while idx < n - 1 && cumulative[idx] < u {
                idx += 1;
            }
            out.push(self.posterior.particles[idx]);
        }
        let bw = (n as f64).powf(-1.0 / 6.0);
        let hx = self.posterior.variance[0].sqrt() * bw;
        let hy = self.posterior.variance[1].sqrt() * bw;
        if hx > 0.0 || hy > 0.0 {
            let nx = Normal::new(0.0, hx.max(1e-12)).expect("bandwidth >= 0");
            let ny = Normal::new(0.0, hy.max(1e-12)).expect("bandwidth >= 0");
            for p in &mut out {
                p.x += nx.sample(rng);
                p.y += ny.sample(rng);
            }
        }
        self.posterior.particles = out;
        self.posterior.weights.fill(1.0 / n as f64);
        self.posterior.refresh_moments();
    }

    /// Gaussian summaries for upload and fusion.
    pub fn extract(&self) -> (UeGaussian, Vec<LocalFeature>) {
        (self.posterior.gaussian(), self.map.clone())
    }

    /// The upload record for the global map transaction.
    pub fn upload(&self, ue: usize) -> Upload {
        Upload {
            ue,
            features: self
                .map
                .iter()
                .map(|f| UploadFeature {
                    position: f.position,
                    variance: f.variance,
                    confidence: f.confidence,
                    legacy: f.legacy,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global_map::GlobalFeature;
    use crate::rng::{stream_rng, streams};

    fn quiet_params(n: usize) -> SlamParams {
        SlamParams {
            n_particles: n,
            sigma_ini: 0.0,
            ..SlamParams::default()
        }
    }

    #[test]
    fn init_zero_sigma_collapses_to_start() {
        let mut rng = stream_rng(1, streams::SLAM_BASE);
        let slam = LocalSlam::init(Vec2::new(1.0, 2.0), Vec2::ZERO, quiet_params(50), &mut rng);
        assert!(slam.posterior.mean().distance(Vec2::new(1.0, 2.0)) < 1e-12);
        assert!(slam.posterior.variance[0].abs() < 1e-12);
        assert!(slam.posterior.variance[1].abs() < 1e-12);
        assert!(slam.map.is_empty());
    }

    #[test]
    fn init_mean_statistically_near_center() {
        // The cloud centers on x0 plus a drawn error of scale sigma_ini; the
        // sample mean then concentrates around that center.
        let mut rng = stream_rng(2, streams::SLAM_BASE);
        let params = SlamParams {
            n_particles: 4000,
            sigma_ini: 0.12,
            ..SlamParams::default()
        };
        let slam = LocalSlam::init(Vec2::ZERO, Vec2::ZERO, params, &mut rng);
        // Center error ~ sigma_ini, cloud-mean error ~ sigma_ini/sqrt(n).
        assert!(slam.posterior.mean().norm() < 4.0 * 0.12);
    }

    #[test]
    fn init_mean_error_scale_matches_sigma() {
        // Monte Carlo check of the initial-error calibration: mean radial
        // error of the drawn center is sigma_ini * sqrt(pi/2).
        let mut rng = stream_rng(3, streams::SLAM_BASE);
        let sigma: f64 = 0.15 * (2.0 / std::f64::consts::PI).sqrt();
        let trials = 2000;
        let mut total = 0.0;
        for _ in 0..trials {
            let params = SlamParams {
                n_particles: 200,
                sigma_ini: sigma,
                ..SlamParams::default()
            };
            let slam = LocalSlam::init(Vec2::ZERO, Vec2::ZERO, params, &mut rng);
            total += slam.posterior.mean().norm();
        }
        let mean_err = total / trials as f64;
        assert!(
            (mean_err - 0.15).abs() < 0.015,
            "mean initial error {mean_err}"
        );
    }

    #[test]
    fn predict_translates_exactly_without_noise() {
        let mut rng = stream_rng(4, streams::SLAM_BASE);
        let mut slam = LocalSlam::init(Vec2::ZERO, Vec2::ZERO, quiet_params(10), &mut rng);
        slam.predict(Vec2::ZERO, 0.0, 1.0, &mut rng);
        assert!(slam.posterior.mean().norm() < 1e-12);
        slam.predict(Vec2::new(0.4, -0.3), 0.0, 1.0, &mut rng);
        assert!(slam.posterior.mean().distance(Vec2::new(0.4, -0.3)) < 1e-12);
    }

    #[test]
    fn predict_noise_grows_variance() {
        let mut rng = stream_rng(5, streams::SLAM_BASE);
        let mut slam = LocalSlam::init(Vec2::ZERO, Vec2::ZERO, quiet_params(500), &mut rng);
        let before = slam.posterior.variance;
        slam.predict(Vec2::ZERO, 0.5, 1.0, &mut rng);
        let after = slam.posterior.variance;
        assert!(after[0] > before[0] && after[1] > before[1]);
    }

    #[test]
    fn import_global_confidence_branches() {
        let q = GlobalRadioMap {
            features: vec![
                GlobalFeature {
                    position: Vec2::new(10.0, 0.0),
                    variance: [0.1, 0.1],
                    visibility: vec![0.8, 0.1],
                    confidence: 0.9,
                    timestamp: 3,
                },
                GlobalFeature {
                    position: Vec2::new(0.0, 10.0),
                    variance: [0.2, 0.2],
                    visibility: vec![0.1, 0.9],
                    confidence: 0.9,
                    timestamp: 3,
                },
            ],
            time: 3,
        };
        let mut rng = stream_rng(6, streams::SLAM_BASE);
        let mut slam = LocalSlam::init(Vec2::ZERO, Vec2::ZERO, quiet_params(10), &mut rng);
        slam.map.push(LocalFeature {
            position: Vec2::new(-5.0, 0.0),
            variance: [1.0, 1.0],
            confidence: 0.5,
            legacy: false,
        });
        slam.import_global(&q, 0, 0.3);
        assert_eq!(slam.map.len(), 3);
        // Visible branch keeps the global confidence; the other demotes.
        assert_eq!(slam.map[0].confidence, 0.9);
        assert_eq!(slam.map[1].confidence, 0.3);
        assert!(slam.map[0].legacy && slam.map[1].legacy);
        // Locally born feature survives, after the legacy block.
        assert!(!slam.map[2].legacy);

        // Empty global map leaves only the new feature.
        let empty = GlobalRadioMap::default();
        slam.import_global(&empty, 0, 0.3);
        assert_eq!(slam.map.len(), 1);
        assert!(!slam.map[0].legacy);
    }

    #[test]
    fn unambiguous_match_updates_confidence() {
        let mut rng = stream_rng(7, streams::SLAM_BASE);
        let mut slam = LocalSlam::init(Vec2::new(1.0, 1.0), Vec2::ZERO, quiet_params(50), &mut rng);
        let feature_pos = Vec2::new(10.0, 0.0);
        slam.map.push(LocalFeature {
            position: feature_pos,
            variance: [0.01, 0.01],
            confidence: 0.5,
            legacy: false,
        });
        let truth = (Vec2::new(1.0, 1.0) - feature_pos).angle();
        let assoc = slam.associate_and_update(
            &[AngleMeasurement {
                aoa: truth,
                aod: 0.0,
            }],
            &mut rng,
        );
        assert_eq!(assoc, vec![Association::Feature(0)]);
        assert!((slam.map[0].confidence - 0.6).abs() < 1e-12);
    }

    #[test]
    fn far_measurement_is_new_and_births_after_second_hit() {
        let mut rng = stream_rng(8, streams::SLAM_BASE);
        let mut slam = LocalSlam::init(Vec2::new(1.0, 1.0), Vec2::ZERO, quiet_params(50), &mut rng);
        // Bearing far from the PA's predicted bearing (and no features yet).
        let pa_bearing = (Vec2::new(1.0, 1.0) - Vec2::ZERO).angle();
        let odd = wrap_angle(pa_bearing + 1.5);
        let assoc = slam.associate_and_update(
            &[AngleMeasurement {
                aoa: odd,
                aod: odd,
            }],
            &mut rng,
        );
        assert_eq!(assoc, vec![Association::New]);
        assert!(slam.map.is_empty(), "birth needs a second gated hit");
        let assoc = slam.associate_and_update(
            &[AngleMeasurement {
                aoa: odd,
                aod: odd,
            }],
            &mut rng,
        );
        assert_eq!(assoc, vec![Association::New]);
        assert_eq!(slam.map.len(), 1);
        assert!(!slam.map[0].legacy);
        assert_eq!(slam.map[0].confidence, 0.4);
    }

    #[test]
    fn exact_measurement_of_exact_feature_is_a_fixed_point() {
        let mut rng = stream_rng(9, streams::SLAM_BASE);
        let params = SlamParams {
            sigma_angle: 0.0,
            ..quiet_params(50)
        };
        let ue = Vec2::new(1.0, 1.0);
        let mut slam = LocalSlam::init(ue, Vec2::ZERO, params, &mut rng);
        let feature_pos = Vec2::new(10.0, 0.0);
        slam.map.push(LocalFeature {
            position: feature_pos,
            variance: [0.5, 0.5],
            confidence: 0.5,
            legacy: false,
        });
        let truth = (ue - feature_pos).angle();
        slam.associate_and_update(
            &[AngleMeasurement {
                aoa: truth,
                aod: 0.0,
            }],
            &mut rng,
        );
        assert!(slam.map[0].position.distance(feature_pos) < 1e-6);
    }

    #[test]
    fn association_is_injective() {
        let mut rng = stream_rng(10, streams::SLAM_BASE);
        let mut slam =
            LocalSlam::init(Vec2::new(1.0, 1.0), Vec2::ZERO, quiet_params(50), &mut rng);
        let f = Vec2::new(10.0, 0.0);
        slam.map.push(LocalFeature {
            position: f,
            variance: [0.01, 0.01],
            confidence: 0.5,
            legacy: false,
        });
        let truth = (Vec2::new(1.0, 1.0) - f).angle();
        // Two nearly identical measurements compete for one feature.
        let assoc = slam.associate_and_update(
            &[
                AngleMeasurement {
                    aoa: truth + 0.001,
                    aod: 0.0,
                },
                AngleMeasurement {
                    aoa: truth - 0.001,
                    aod: 0.0,
                },
            ],
            &mut rng,
        );
        let to_feature = assoc
            .iter()
            .filter(|a| matches!(a, Association::Feature(0)))
            .count();
        assert_eq!(to_feature, 1);
    }

    #[test]
    fn misses_decay_confidence_below_cut() {
        let mut rng = stream_rng(11, streams::SLAM_BASE);
        let mut slam =
            LocalSlam::init(Vec2::new(1.0, 1.0), Vec2::ZERO, quiet_params(50), &mut rng);
        slam.map.push(LocalFeature {
            position: Vec2::new(10.0, 0.0),
            variance: [0.01, 0.01],
            confidence: 0.99,
            legacy: true,
        });
        let mut steps = 0;
        while slam.map[0].confidence > 0.3 {
            slam.associate_and_update(&[], &mut rng);
            steps += 1;
            assert!(steps < 20);
        }
        // 0.99 * 0.8^k <= 0.3 first at k = 6.
        assert_eq!(steps, 6);
    }

    #[test]
    fn extract_moments() {
        let mut rng = stream_rng(12, streams::SLAM_BASE);
        let mut slam = LocalSlam::init(Vec2::ZERO, Vec2::ZERO, quiet_params(2), &mut rng);
        slam.posterior.particles = vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)];
        slam.posterior.weights = vec![0.5, 0.5];
        slam.posterior.refresh_moments();
        let (g, _) = slam.extract();
        assert_eq!(g.mean, Vec2::new(1.0, 0.0));
        assert!((g.variance[0] - 1.0).abs() < 1e-12);
        assert_eq!(g.variance[1], 0.0);
    }

    /// Noiseless bearing-only convergence against a nonlinear least-squares
    /// triangulation oracle: with exact angles, exact IMU, and two anchors
    /// (PA + one known feature), the posterior mean lands on the oracle
    /// solution, which is the true position.
    #[test]
    fn noiseless_convergence_matches_triangulation_oracle() {
        let pa = Vec2::ZERO;
        let va = Vec2::new(10.0, 0.0);
        let mut rng = stream_rng(13, streams::SLAM_BASE);
        let params = SlamParams {
            n_particles: 500,
            sigma_ini: 0.12,
            sigma_angle: 0.0,
            ..SlamParams::default()
        };
        let mut truth = Vec2::new(1.0, 2.0);
        let mut slam = LocalSlam::init(truth, pa, params, &mut rng);
        slam.map.push(LocalFeature {
            position: va,
            variance: [1e-6, 1e-6],
            confidence: 0.9,
            legacy: true,
        });
        let mut final_measurements = Vec::new();
        for k in 0..20 {
            let step = Vec2::new(0.2 * ((k % 5) as f64 - 2.0), 0.15);
            truth += step;
            slam.predict(step, 0.0, 1.0, &mut rng);
            let ms = vec![
                AngleMeasurement {
                    aoa: (truth - pa).angle(),
                    aod: (truth - pa).angle(),
                },
                AngleMeasurement {
                    aoa: (truth - va).angle(),
                    aod: 0.0,
                },
            ];
            final_measurements = ms.clone();
            slam.associate_and_update(&ms, &mut rng);
        }
        let oracle = triangulate(&[(pa, final_measurements[0].aoa), (va, final_measurements[1].aoa)]);
        assert!(oracle.distance(truth) < 1e-9, "oracle should hit truth");
        let err = slam.posterior.mean().distance(oracle);
        assert!(err < 0.05, "posterior {err} m from oracle");
    }

    /// Gauss-Newton bearing triangulation: independent of the filter path.
    fn triangulate(rays: &[(Vec2, f64)]) -> Vec2 {
        let mut x = Vec2::new(0.5, 0.5);
        for _ in 0..50 {
            let mut jtj = [[0.0; 2]; 2];
            let mut jtr = [0.0; 2];
            for &(anchor, bearing) in rays {
                let d = x - anchor;
                let d2 = d.norm_sq().max(1e-12);
                let pred = d.angle();
                let r = wrap_angle(bearing - pred);
                // d theta / d x = [-dy, dx] / d^2
                let j = [-d.y / d2, d.x / d2];
                jtj[0][0] += j[0] * j[0];
                jtj[0][1] += j[0] * j[1];
                jtj[1][0] += j[1] * j[0];
                jtj[1][1] += j[1] * j[1];
                jtr[0] += j[0] * r;
                jtr[1] += j[1] * r;
            }
            let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
            if det.abs() < 1e-15 {
                break;
            }
            let dx = (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
            let dy = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
            x += Vec2::new(dx, dy);
            if dx.hypot(dy) < 1e-12 {
                break;
            }
        }
        x
    }
}
