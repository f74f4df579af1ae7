//! Measurement synthesis: noisy path angles, IMU dead reckoning, and
//! pinhole-camera multi-object detections.
//!
//! Measurement order is shuffled wherever the real system would not know the
//! association (path identities, detection identities), so estimators must
//! solve data association themselves. All randomness flows through injected
//! generators; identical seeds reproduce identical streams.

use crate::geometry::PathGeometry;
use crate::vec2::Vec2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One observed path: noisy AoA/AoD pair. Identities withheld.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleMeasurement {
    pub aoa: f64,
    pub aod: f64,
}

/// Draw `(aoa + n1, aod + n2)` per visible path with independent
/// `N(0, sigma_angle^2)` noise, then shuffle the output order.
pub fn measure_angles<R: Rng>(
    paths: &[PathGeometry],
    sigma_angle: f64,
    rng: &mut R,
) -> Vec<AngleMeasurement> {
    let mut out: Vec<AngleMeasurement> = if sigma_angle > 0.0 {
        let noise = Normal::new(0.0, sigma_angle).expect("sigma_angle >= 0");
        paths
            .iter()
            .map(|p| AngleMeasurement {
                aoa: p.aoa + noise.sample(rng),
                aod: p.aod + noise.sample(rng),
            })
            .collect()
    } else {
        paths
            .iter()
            .map(|p| AngleMeasurement {
                aoa: p.aoa,
                aod: p.aod,
            })
            .collect()
    };
    out.shuffle(rng);
    out
}

/// IMU dead-reckoning state: predicted position and accumulated covariance.
#[derive(Debug, Clone, Copy)]
pub struct ImuState {
    pub predicted: Vec2,
    /// Diagonal covariance accumulated since the last anchor point (m^2).
    pub variance: [f64; 2],
}

impl ImuState {
    pub fn new(start: Vec2) -> ImuState {
        ImuState {
            predicted: start,
            variance: [0.0, 0.0],
        }
    }
}

/// Per-step position noise std from accelerometer noise: double integration
/// of white acceleration noise over one step, `0.5 * sigma_imu * dt^2`.
pub fn imu_position_noise_std(sigma_imu: f64, dt: f64) -> f64 {
    0.5 * sigma_imu * dt * dt
}

/// Advance dead reckoning by the true displacement plus integrated
/// accelerometer noise; covariance grows accordingly.
pub fn imu_step<R: Rng>(
    prev: &ImuState,
    true_displacement: Vec2,
    dt: f64,
    sigma_imu: f64,
    rng: &mut R,
) -> ImuState {
    let std = imu_position_noise_std(sigma_imu, dt);
    let noise = if std > 0.0 {
        let n = Normal::new(0.0, std).expect("std >= 0");
        Vec2::new(n.sample(rng), n.sample(rng))
    } else {
        Vec2::ZERO
    };
    ImuState {
        predicted: prev.predicted + true_displacement + noise,
        variance: [prev.variance[0] + std * std, prev.variance[1] + std * std],
    }
}

// ─── Camera ────────────────────────────────────────────────────────────────

/// Fixed stereo camera: pose, pinhole intrinsics, and detection probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraModel {
    /// Ground position of the camera (m).
    pub position: Vec2,
    /// Mounting height above ground (m).
    pub height: f64,
    /// Yaw of the optical axis in the ground plane (rad).
    pub yaw: f64,
    /// Downward tilt of the optical axis (rad).
    pub pitch: f64,
    /// Focal length (pixels).
    pub focal: f64,
    /// Principal point (pixels).
    pub principal: (f64, f64),
    /// Image size (pixels).
    pub image_size: (u32, u32),
    /// Probability that an in-view target is detected.
    pub detection_prob: f64,
}

impl CameraModel {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.focal > 0.0) {
            return Err(crate::Error::InvalidArgument(
                "camera focal length must be positive".into(),
            ));
        }
        let (w, h) = self.image_size;
        let (u0, v0) = self.principal;
        if u0 < 0.0 || u0 > w as f64 || v0 < 0.0 || v0 > h as f64 {
            return Err(crate::Error::InvalidArgument(
                "camera principal point outside the image".into(),
            ));
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return Err(crate::Error::InvalidArgument(
                "camera detection probability must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Pinhole projection of a world point at the given height above ground.
/// Returns `None` when the point is behind the camera or outside the image.
pub fn project_to_pixels(world: Vec2, target_height: f64, cam: &CameraModel) -> Option<(f64, f64)> {
    let rel = Vec2::new(world.x - cam.position.x, world.y - cam.position.y);
    let dz = target_height - cam.height;

    let (cy, sy) = (cam.yaw.cos(), cam.yaw.sin());
    let (cp, sp) = (cam.pitch.cos(), cam.pitch.sin());
    // Camera basis: forward tilted down by pitch, right in the ground plane.
    let forward = (cy * cp, sy * cp, -sp);
    let right = (sy, -cy, 0.0);
    let up = (cy * sp, sy * sp, cp);

    let v = (rel.x, rel.y, dz);
    let depth = v.0 * forward.0 + v.1 * forward.1 + v.2 * forward.2;
    if depth <= 1e-9 {
        return None; // behind the camera plane
    }
    let x_cam = v.0 * right.0 + v.1 * right.1 + v.2 * right.2;
    let y_cam = -(v.0 * up.0 + v.1 * up.1 + v.2 * up.2);
    let u = cam.principal.0 + cam.focal * x_cam / depth;
    let vpix = cam.principal.1 + cam.focal * y_cam / depth;
    let (w, h) = cam.image_size;
    if u < 0.0 || u > w as f64 || vpix < 0.0 || vpix > h as f64 {
        return None;
    }
    Some((u, vpix))
}

/// Ground-truth localization-error field over the image: the per-axis noise
/// std grows from `min_sigma` at the principal point to `max_sigma` at the
/// farthest image corner.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadialErrorSurface {
    pub min_sigma: f64,
    pub max_sigma: f64,
    /// Shape of the radial growth; 2.0 gives quadratic growth.
    pub exponent: f64,
}

impl RadialErrorSurface {
    pub fn sigma(&self, cam: &CameraModel, u: f64, v: f64) -> f64 {
        let (u0, v0) = cam.principal;
        let (w, h) = cam.image_size;
        let du = (w as f64 - u0).max(u0).max(1.0);
        let dv = (h as f64 - v0).max(v0).max(1.0);
        let rx = (u - u0) / du;
        let ry = (v - v0) / dv;
        let rho = (rx * rx + ry * ry).sqrt() / std::f64::consts::SQRT_2;
        let rho = rho.clamp(0.0, 1.0);
        self.min_sigma + (self.max_sigma - self.min_sigma) * rho.powf(self.exponent)
    }
}

/// One camera detection: the pixel where the target appears and the
/// depth-derived world position estimate. Identity withheld.
#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub pixel: (f64, f64),
    pub estimate: Vec2,
}

/// Optional false-detection model: Poisson-count clutter uniform over a
/// ground region, projected into the image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClutterModel {
    /// Expected clutter detections per frame.
    pub rate: f64,
    /// Ground region [x_min, x_max, y_min, y_max] clutter can appear in.
    pub region: [f64; 4],
}

/// Detect each in-view target with probability `P_d`, perturb its world
/// position by the pixel-dependent error surface, and shuffle the output.
pub fn camera_detections<R: Rng>(
    targets: &[Vec2],
    target_height: f64,
    cam: &CameraModel,
    surface: &RadialErrorSurface,
    clutter: Option<&ClutterModel>,
    rng: &mut R,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for &target in targets {
        let Some((u, v)) = project_to_pixels(target, target_height, cam) else {
            continue;
        };
        if cam.detection_prob < 1.0 && rng.random::<f64>() >= cam.detection_prob {
            continue;
        }
        let sigma = surface.sigma(cam, u, v);
        let noise = if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("sigma >= 0");
            Vec2::new(n.sample(rng), n.sample(rng))
        } else {
            Vec2::ZERO
        };
        out.push(Detection {
            pixel: (u, v),
            estimate: target + noise,
        });
    }
    if let Some(c) = clutter {
        if c.rate > 0.0 {
            let count = sample_poisson(c.rate, rng);
            for _ in 0..count {
                let pos = Vec2::new(
                    rng.random_range(c.region[0]..=c.region[1]),
                    rng.random_range(c.region[2]..=c.region[3]),
                );
                if let Some(pix) = project_to_pixels(pos, target_height, cam) {
                    out.push(Detection {
                        pixel: pix,
                        estimate: pos,
                    });
                }
            }
        }
    }
    out.shuffle(rng);
    out
}

fn sample_poisson<R: Rng>(lambda: f64, rng: &mut R) -> u32 {
    // Knuth's method; clutter rates here are small.
    let l = (-lambda).exp();
    let mut k = 0;
    let mut p = 1.0;
    loop {
        p *= rng.random::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
        if k > 10_000 {
            return k;
        }
    }
}
