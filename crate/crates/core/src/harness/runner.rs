//! The simulation loop and Monte Carlo batching.
//!
//! One step of a run follows the system pipeline: move the UEs, synthesize
//! measurements, run each UE's local SLAM (downloading the global map first
//! during the refinement stage), upload and update the global map, fuse
//! camera detections into the location estimates when a camera is deployed,
//! run the configured beam strategy against the true channels, and record
//! metrics. Everything is driven by per-subsystem random streams derived from
//! the run's master seed, so a `(scenario, seed)` pair fully determines every
//! recorded number regardless of parallelism.

use crate::beam_mgmt::{self, BeamContext, PriorParams};
use crate::channel::{self, ChannelMatrix};
use crate::geometry::{visible_paths, AnchorId};
use crate::global_map::{self, GlobalRadioMap};
use crate::harness::config::{CameraSetup, Motion, Scenario, Strategy};
use crate::local_slam::{LocalSlam, UeGaussian};
use crate::metrics;
use crate::rng::{run_master, stream_rng, streams};
use crate::sensors::{self, ImuState};
use crate::vec2::Vec2;
use crate::vision_fusion::{self, ErrorTable, TrainingSample};
use crate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Everything recorded at one timestep of one run.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Simulation time (s).
    pub t: f64,
    /// Map error against the VAs observable at this time.
    pub ospa: f64,
    /// Final per-UE localization errors (fused when a camera is deployed).
    pub ue_errors: Vec<f64>,
    pub ue_error_mean: f64,
    /// Mean error of the raw SLAM estimates (equals `ue_error_mean` without
    /// a camera).
    pub slam_error_mean: f64,
    /// Realized sum SE for the configured strategy; absent for `none`.
    pub se: Option<f64>,
    /// Distance from each site VA (config wall order) to the nearest map
    /// feature, cut off at the OSPA cutoff.
    pub per_feature_error: Vec<f64>,
    /// Mean IMU dead-reckoning error; present when a camera is deployed.
    pub imu_error_mean: Option<f64>,
    /// Mean error of the matched camera estimates; absent on steps where no
    /// UE fused a detection.
    pub vision_error_mean: Option<f64>,
    /// Which UEs were inside the camera frustum (truth positions).
    pub ue_in_view: Option<Vec<bool>>,
    /// Which UEs fused a detection this step.
    pub fused: Option<Vec<bool>>,
    /// True-channel gain evaluations per UE (strategy runs only).
    pub beam_evals: Option<Vec<usize>>,
}

/// One complete simulated run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Wall-clock metadata; excluded from deterministic outputs.
    pub wall_clock_ms: u128,
}

// ─── Motion models ─────────────────────────────────────────────────────────

enum MotionState {
    Walk {
        positions: Vec<Vec2>,
        step_min: f64,
        step_max: f64,
        bounds: [f64; 4],
        pa: Vec2,
    },
    Lanes {
        positions: Vec<Vec2>,
        velocity: Vec<Vec2>,
    },
}

impl MotionState {
    fn init(sc: &Scenario, rng: &mut ChaCha8Rng) -> (MotionState, usize) {
        let horizon_steps = (sc.horizon / sc.dt).floor() as usize;
        match &sc.motion {
            Motion::RandomWalk { step_min, step_max } => {
                let [x0, x1, y0, y1] = sc.bounds;
                let margin = 0.5_f64.min((x1 - x0) / 4.0).min((y1 - y0) / 4.0);
                let positions = (0..sc.n_ues)
                    .map(|_| {
                        let p = Vec2::new(
                            rng.random_range(x0 + margin..x1 - margin),
                            rng.random_range(y0 + margin..y1 - margin),
                        );
                        push_off_pa(p, sc.pa)
                    })
                    .collect();
                (
                    MotionState::Walk {
                        positions,
                        step_min: *step_min,
                        step_max: *step_max,
                        bounds: sc.bounds,
                        pa: sc.pa,
                    },
                    horizon_steps,
                )
            }
            Motion::Lanes {
                lanes,
                speed_min,
                speed_max,
                y_start,
                y_end,
            } => {
                let span = (y_end - y_start).abs();
                let mut positions = Vec::with_capacity(sc.n_ues);
                let mut velocity = Vec::with_capacity(sc.n_ues);
                let mut shortest = f64::INFINITY;
                for j in 0..sc.n_ues {
                    let lane = lanes[j % lanes.len()];
                    let speed = rng.random_range(*speed_min..=*speed_max);
                    // Alternate driving direction by lane index.
                    let (start, dir) = if (j % lanes.len()) % 2 == 0 {
                        (*y_start, 1.0)
                    } else {
                        (*y_end, -1.0)
                    };
                    positions.push(Vec2::new(lane, start));
                    velocity.push(Vec2::new(0.0, dir * speed));
                    shortest = shortest.min(span / speed);
                }
                // The run ends at the shortest crossing time among the UEs.
                let steps = ((shortest / sc.dt).floor() as usize).min(horizon_steps);
                (
                    MotionState::Lanes {
                        positions,
                        velocity,
                    },
                    steps.max(1),
                )
            }
        }
    }

    fn positions(&self) -> &[Vec2] {
        match self {
            MotionState::Walk { positions, .. } => positions,
            MotionState::Lanes { positions, .. } => positions,
        }
    }

    /// Advance one step; returns the per-UE true displacements.
    fn advance(&mut self, dt: f64, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
        match self {
            MotionState::Walk {
                positions,
                step_min,
                step_max,
                bounds,
                pa,
            } => positions
                .iter_mut()
                .map(|p| {
                    let len = rng.random_range(*step_min..=*step_max);
                    let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let old = *p;
                    let mut next = old + Vec2::from_angle(heading) * len;
                    next = reflect_into(next, *bounds);
                    next = push_off_pa(next, *pa);
                    *p = next;
                    next - old
                })
                .collect(),
            MotionState::Lanes {
                positions,
                velocity,
            } => positions
                .iter_mut()
                .zip(velocity.iter())
                .map(|(p, v)| {
                    let d = *v * dt;
                    *p += d;
                    d
                })
                .collect(),
        }
    }
}

fn reflect_into(mut p: Vec2, bounds: [f64; 4]) -> Vec2 {
    let [x0, x1, y0, y1] = bounds;
    for _ in 0..8 {
        let mut again = false;
        if p.x < x0 {
            p.x = 2.0 * x0 - p.x;
            again = true;
        }
        if p.x > x1 {
            p.x = 2.0 * x1 - p.x;
            again = true;
        }
        if p.y < y0 {
            p.y = 2.0 * y0 - p.y;
            again = true;
        }
        if p.y > y1 {
            p.y = 2.0 * y1 - p.y;
            again = true;
        }
        if !again {
            break;
        }
    }
    p
}

/// Keep UEs off the PA singularity (LoS geometry needs ue != pa).
fn push_off_pa(p: Vec2, pa: Vec2) -> Vec2 {
    const MIN_DIST: f64 = 0.3;
    let d = p - pa;
    let n = d.norm();
    if n >= MIN_DIST {
        return p;
    }
    if n < 1e-9 {
        return pa + Vec2::new(MIN_DIST, 0.0);
    }
    pa + d * (MIN_DIST / n)
}

// ─── Single run ────────────────────────────────────────────────────────────

/// Execute one fully deterministic run.
pub fn run_once(sc: &Scenario, seed: u64) -> Result<RunResult> {
    let started = std::time::Instant::now();
    let master = seed;
    let mut motion_rng = stream_rng(master, streams::MOTION);
    let mut camera_rng = stream_rng(master, streams::CAMERA);
    let mut angle_rngs: Vec<ChaCha8Rng> = (0..sc.n_ues)
        .map(|j| stream_rng(master, streams::ANGLES_BASE + j as u64))
        .collect();
    let mut imu_rngs: Vec<ChaCha8Rng> = (0..sc.n_ues)
        .map(|j| stream_rng(master, streams::IMU_BASE + j as u64))
        .collect();
    let mut slam_rngs: Vec<ChaCha8Rng> = (0..sc.n_ues)
        .map(|j| stream_rng(master, streams::SLAM_BASE + j as u64))
        .collect();

    let (mut motion, steps_total) = MotionState::init(sc, &mut motion_rng);
    let params = sc.slam_params();
    let mut slams: Vec<LocalSlam> = motion
        .positions()
        .iter()
        .zip(slam_rngs.iter_mut())
        .map(|(p, rng)| LocalSlam::init(*p, sc.pa, params.clone(), rng))
        .collect();
    let mut imus: Vec<ImuState> = slams
        .iter()
        .map(|s| ImuState::new(s.posterior.mean()))
        .collect();

    let error_table: Option<ErrorTable> = match &sc.camera {
        None => None,
        Some(cam) => Some(resolve_error_table(cam)?),
    };

    let mut q = GlobalRadioMap::default();
    let va_truth = sc.va_positions();
    let mut records = Vec::with_capacity(steps_total);

    for step in 1..=steps_total {
        let t_sec = step as f64 * sc.dt;

        // Motion and dead reckoning.
        let displacements = motion.advance(sc.dt, &mut motion_rng);
        let truth = motion.positions().to_vec();
        let mut reported = Vec::with_capacity(sc.n_ues);
        for j in 0..sc.n_ues {
            let next = sensors::imu_step(
                &imus[j],
                displacements[j],
                sc.dt,
                sc.sigma_imu,
                &mut imu_rngs[j],
            );
            reported.push(next.predicted - imus[j].predicted);
            imus[j] = next;
        }

        // Path geometry and angle measurements per UE.
        let mut paths_per_ue = Vec::with_capacity(sc.n_ues);
        let mut meas_per_ue = Vec::with_capacity(sc.n_ues);
        for j in 0..sc.n_ues {
            let fov = sc.fov.ue(j).expect("schedule per UE");
            let paths = visible_paths(
                truth[j],
                &sc.anchors,
                fov,
                t_sec,
                sc.kappa_los,
                sc.kappa_nlos,
            )?;
            let geometries: Vec<_> = paths.iter().map(|(_, g)| *g).collect();
            meas_per_ue.push(sensors::measure_angles(
                &geometries,
                sc.sigma_angle,
                &mut angle_rngs[j],
            ));
            paths_per_ue.push(paths);
        }

        // Local SLAM, with the global-map download in the refinement stage.
        let refinement = sc.algo.download && t_sec > sc.algo.t_config;
        for j in 0..sc.n_ues {
            if refinement {
                slams[j].import_global(&q, j, sc.algo.r_cut);
            }
            slams[j].predict(reported[j], sc.sigma_imu, sc.dt, &mut slam_rngs[j]);
            slams[j].associate_and_update(&meas_per_ue[j], &mut slam_rngs[j]);
        }

        // Upload and global map update.
        let uploads: Vec<_> = slams.iter().enumerate().map(|(j, s)| s.upload(j)).collect();
        if refinement {
            let (legacy, new_pool) =
                global_map::split_pools(&uploads, sc.algo.r_cut, sc.algo.r_cut_new);
            global_map::refine_stage_update(
                &mut q,
                &legacy,
                &new_pool,
                sc.algo.d_th,
                sc.algo.r_cut,
                step as i64,
                sc.n_ues,
            )?;
        } else {
            let pool = global_map::build_pool(&uploads, sc.algo.r_cut);
            global_map::init_stage_update(
                &mut q,
                &pool,
                sc.algo.d_th,
                sc.algo.r_cut,
                step as i64,
                sc.n_ues,
            );
        }

        // Location estimates, optionally sharpened by the camera.
        let slam_gaussians: Vec<UeGaussian> = slams.iter().map(|s| s.extract().0).collect();
        let mut final_positions: Vec<Vec2> = slam_gaussians.iter().map(|g| g.mean).collect();
        let mut ue_in_view = None;
        let mut fused_flags = None;
        let mut vision_error_mean = None;
        let mut imu_error_mean = None;
        if let (Some(cam), Some(table)) = (&sc.camera, &error_table) {
            let detections = sensors::camera_detections(
                &truth,
                cam.target_height,
                &cam.model,
                &cam.surface,
                cam.clutter.as_ref(),
                &mut camera_rng,
            );
            let imu_predictions: Vec<Vec2> = imus.iter().map(|s| s.predicted).collect();
            let fused = vision_fusion::multimodal_step(
                &slam_gaussians,
                &imu_predictions,
                &detections,
                table,
                sc.algo.d_th_assoc,
                sc.algo.unique_detections,
            )?;
            let mut vis_errs = Vec::new();
            for (j, f) in fused.iter().enumerate() {
                final_positions[j] = f.position;
                if let Some(di) = f.detection {
                    vis_errs.push(detections[di].estimate.distance(truth[j]));
                }
            }
            ue_in_view = Some(
                truth
                    .iter()
                    .map(|p| {
                        sensors::project_to_pixels(*p, cam.target_height, &cam.model).is_some()
                    })
                    .collect(),
            );
            fused_flags = Some(fused.iter().map(|f| f.fused).collect());
            vision_error_mean = if vis_errs.is_empty() {
                None
            } else {
                Some(vis_errs.iter().sum::<f64>() / vis_errs.len() as f64)
            };
            imu_error_mean = Some(
                imus.iter()
                    .zip(&truth)
                    .map(|(s, t)| s.predicted.distance(*t))
                    .sum::<f64>()
                    / sc.n_ues as f64,
            );
        }

        // Beam management against the true channels.
        let mut se = None;
        let mut beam_evals = None;
        if sc.beam.strategy != Strategy::None {
            let true_channels: Vec<ChannelMatrix> = paths_per_ue
                .iter()
                .map(|paths| {
                    let geoms: Vec<_> = paths.iter().map(|(_, g)| *g).collect();
                    channel::synth_channel(&geoms, sc.beam.n_ue, sc.beam.n_bs)
                })
                .collect();
            let outcome = match sc.beam.strategy {
                Strategy::Sweeping => beam_mgmt::run_sweeping(
                    &true_channels,
                    sc.beam.m,
                    sc.beam.n_ue,
                    sc.beam.n_bs,
                ),
                Strategy::Tracking | Strategy::ManagementTracking => {
                    let prior_params = PriorParams {
                        r_cut: sc.algo.r_cut,
                        sigma_angle: sc.sigma_angle,
                        epsilon: sc.walls.first().map(|w| w.epsilon).unwrap_or(4.0),
                        kappa_los: sc.kappa_los,
                        kappa_nlos: sc.kappa_nlos,
                    };
                    let priors: Vec<_> = (0..sc.n_ues)
                        .map(|j| {
                            let est = UeGaussian {
                                mean: final_positions[j],
                                variance: slam_gaussians[j].variance,
                            };
                            beam_mgmt::gen_priors(&q, &est, j, sc.pa, &prior_params)
                        })
                        .collect();
                    let ctx = BeamContext::new(
                        priors,
                        sc.beam.m,
                        sc.beam.n_ue,
                        sc.beam.n_bs,
                        sc.beam.sigma2,
                    );
                    if sc.beam.strategy == Strategy::Tracking {
                        beam_mgmt::run_tracking(&ctx, &true_channels)
                    } else {
                        beam_mgmt::run_management_tracking(&ctx, &true_channels, sc.beam.theta_th)
                    }
                }
                Strategy::None => unreachable!(),
            };
            se = Some(metrics::realized_se(
                &true_channels,
                &outcome.pairs,
                sc.beam.sigma2,
            )?);
            beam_evals = Some(outcome.evals_per_ue);
        }

        // Metrics.
        let observable_truth: Vec<Vec2> = sc
            .anchors
            .vas
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                (0..sc.n_ues).any(|j| {
                    sc.fov
                        .ue(j)
                        .map(|f| f.visible(AnchorId::Va(*i), t_sec))
                        .unwrap_or(false)
                })
            })
            .map(|(_, v)| v.position)
            .collect();
        let map_positions = q.positions();
        let ospa = metrics::ospa(&map_positions, &observable_truth, sc.ospa_cutoff)?;
        let per_feature_error = metrics::feature_errors(&map_positions, &va_truth, sc.ospa_cutoff);
        let (ue_errors, ue_error_mean) = metrics::ue_error(&final_positions, &truth)?;
        let slam_means: Vec<Vec2> = slam_gaussians.iter().map(|g| g.mean).collect();
        let (_, slam_error_mean) = metrics::ue_error(&slam_means, &truth)?;

        records.push(StepRecord {
            t: t_sec,
            ospa,
            ue_errors,
            ue_error_mean,
            slam_error_mean,
            se,
            per_feature_error,
            imu_error_mean,
            vision_error_mean,
            ue_in_view,
            fused: fused_flags,
            beam_evals,
        });
    }

    Ok(RunResult {
        scenario: sc.name.clone(),
        seed,
        steps: records,
        wall_clock_ms: started.elapsed().as_millis(),
    })
}

fn resolve_error_table(cam: &CameraSetup) -> Result<ErrorTable> {
    match &cam.error_table {
        Some(path) => ErrorTable::read_from(Path::new(path)),
        None => ErrorTable::from_surface(&cam.model, &cam.surface, cam.u_cell, cam.v_cell),
    }
}

// ─── Monte Carlo ───────────────────────────────────────────────────────────

/// Per-timestep means over a batch of runs.
#[derive(Debug, Clone)]
pub struct AggregateStep {
    pub t: f64,
    /// Number of runs still active at this step (lane runs vary in length).
    pub runs: usize,
    pub ospa: f64,
    pub ue_errors: Vec<f64>,
    pub ue_error_mean: f64,
    pub slam_error_mean: f64,
    pub se: Option<f64>,
    pub per_feature_error: Vec<f64>,
    pub imu_error_mean: Option<f64>,
    pub vision_error_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Aggregate {
    pub scenario: String,
    pub base_seed: u64,
    pub n_runs: usize,
    pub strategy: &'static str,
    pub steps: Vec<AggregateStep>,
}

/// Run `n_runs` independent runs with seeds `base_seed + k` and average the
/// per-step series. The aggregation is an ordered reduction over the run
/// index, so the result is independent of the parallelism degree.
pub fn run_monte_carlo(
    sc: &Scenario,
    n_runs: usize,
    base_seed: u64,
    parallelism: usize,
) -> Result<(Vec<RunResult>, Aggregate)> {
    use rayon::prelude::*;
    let seeds: Vec<u64> = (0..n_runs as u64).map(|k| run_master(base_seed, k)).collect();
    let results: Result<Vec<RunResult>> = if parallelism == 1 {
        seeds.iter().map(|&s| run_once(sc, s)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism) // 0 = rayon default
            .build()
            .map_err(|e| crate::Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| run_once(sc, s)).collect())
    };
    let results = results?;
    let aggregate = aggregate(sc, &results, base_seed);
    Ok((results, aggregate))
}

fn aggregate(sc: &Scenario, results: &[RunResult], base_seed: u64) -> Aggregate {
    let max_len = results.iter().map(|r| r.steps.len()).max().unwrap_or(0);
    let n_vas = sc.anchors.vas.len();
    let mut steps = Vec::with_capacity(max_len);
    for i in 0..max_len {
        let active: Vec<&StepRecord> = results
            .iter()
            .filter_map(|r| r.steps.get(i))
            .collect();
        let n = active.len();
        let nf = n as f64;
        let mean =
            |f: &dyn Fn(&StepRecord) -> f64| active.iter().map(|s| f(s)).sum::<f64>() / nf;
        let opt_mean = |f: &dyn Fn(&StepRecord) -> Option<f64>| {
            let vals: Vec<f64> = active.iter().filter_map(|s| f(s)).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        steps.push(AggregateStep {
            t: active[0].t,
            runs: n,
            ospa: mean(&|s| s.ospa),
            ue_errors: (0..sc.n_ues)
                .map(|j| mean(&|s| s.ue_errors[j]))
                .collect(),
            ue_error_mean: mean(&|s| s.ue_error_mean),
            slam_error_mean: mean(&|s| s.slam_error_mean),
            se: opt_mean(&|s| s.se),
            per_feature_error: (0..n_vas)
                .map(|k| mean(&|s| s.per_feature_error[k]))
                .collect(),
            imu_error_mean: opt_mean(&|s| s.imu_error_mean),
            vision_error_mean: opt_mean(&|s| s.vision_error_mean),
        });
    }
    Aggregate {
        scenario: sc.name.clone(),
        base_seed,
        n_runs: results.len(),
        strategy: sc.beam.strategy.name(),
        steps,
    }
}

// ─── Offline vision training ───────────────────────────────────────────────

/// Generate camera training samples by driving single vehicles through the
/// scenario's lanes and recording (pixel, estimate, truth) triples.
pub fn vision_training_samples(
    sc: &Scenario,
    n_trajectories: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    let cam = sc.camera.as_ref().ok_or_else(|| {
        crate::Error::InvalidArgument("scenario has no camera to train against".into())
    })?;
    let Motion::Lanes {
        lanes,
        speed_min,
        speed_max,
        y_start,
        y_end,
    } = &sc.motion
    else {
        return Err(crate::Error::InvalidArgument(
            "vision training expects a lane motion model".into(),
        ));
    };
    let mut rng = stream_rng(seed, streams::TRAINING);
    let mut samples = Vec::new();
    for k in 0..n_trajectories {
        let lane = lanes[k % lanes.len()];
        let speed = rng.random_range(*speed_min..=*speed_max);
        let (start, dir) = if (k % lanes.len()) % 2 == 0 {
            (*y_start, 1.0)
        } else {
            (*y_end, -1.0)
        };
        let steps = (((y_end - y_start).abs() / speed) / sc.dt).floor() as usize;
        for s in 1..=steps {
            let truth = Vec2::new(lane, start + dir * speed * sc.dt * s as f64);
            let dets = sensors::camera_detections(
                &[truth],
                cam.target_height,
                &cam.model,
                &cam.surface,
                None,
                &mut rng,
            );
            if let Some(d) = dets.first() {
                samples.push(TrainingSample {
                    pixel: d.pixel,
                    estimate: d.estimate,
                    truth,
                });
            }
        }
    }
    Ok(samples)
}

/// Train the pixel-indexed error table from generated trajectories.
pub fn train_vision_table(sc: &Scenario, n_trajectories: usize, seed: u64) -> Result<ErrorTable> {
    let cam = sc.camera.as_ref().ok_or_else(|| {
        crate::Error::InvalidArgument("scenario has no camera to train against".into())
    })?;
    let samples = vision_training_samples(sc, n_trajectories, seed)?;
    vision_fusion::train_error_table(&samples, cam.model.image_size, cam.u_cell, cam.v_cell)
}
