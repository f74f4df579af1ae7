//! Scenario files: schema, validation, and bundled presets.
//!
//! Scenarios are TOML with a `schema_version` gate; unknown keys are
//! rejected. The raw file structs below deserialize 1:1 from TOML and are
//! then resolved into a [`Scenario`]: walls become validated geometry, the
//! anchor set is derived by mirroring, and the per-UE visibility schedules
//! are assembled.

use crate::geometry::{AnchorId, AnchorSet, FovSchedule, TimeWindow, UeFov, Wall};
use crate::local_slam::SlamParams;
use crate::sensors::{CameraModel, ClutterModel, RadialErrorSurface};
use crate::vec2::Vec2;
use crate::{Error, Result};
use serde::Deserialize;
use std::path::Path;

/// Beam-management strategy executed by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    None,
    Sweeping,
    Tracking,
    ManagementTracking,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "none" => Ok(Strategy::None),
            "sweeping" => Ok(Strategy::Sweeping),
            "tracking" => Ok(Strategy::Tracking),
            "management+tracking" => Ok(Strategy::ManagementTracking),
            other => Err(Error::config(
                "beam.strategy",
                format!(
                    "unknown strategy {other:?} (expected none, sweeping, tracking, \
                     or management+tracking)"
                ),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Sweeping => "sweeping",
            Strategy::Tracking => "tracking",
            Strategy::ManagementTracking => "management+tracking",
        }
    }
}

// ─── Raw file schema ───────────────────────────────────────────────────────

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    name: String,
    site: SiteSection,
    ue: UeSection,
    run: RunSection,
    sensors: SensorsSection,
    #[serde(default)]
    fov: Vec<FovEntry>,
    #[serde(default)]
    algo: AlgoSection,
    #[serde(default)]
    beam: BeamSection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    metrics: MetricsSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteSection {
    pa: [f64; 2],
    epsilon: f64,
    walls: Vec<WallEntry>,
    /// Motion bounding box [x_min, x_max, y_min, y_max].
    bounds: [f64; 4],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WallEntry {
    a: [f64; 2],
    b: [f64; 2],
    #[serde(default)]
    epsilon: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UeSection {
    count: usize,
    sigma_ini: f64,
    motion: MotionSection,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum MotionSection {
    #[serde(rename = "random_walk")]
    RandomWalk { step_min: f64, step_max: f64 },
    #[serde(rename = "lanes")]
    Lanes {
        lanes: Vec<f64>,
        speed_min_kmh: f64,
        speed_max_kmh: f64,
        y_start: f64,
        y_end: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    horizon: f64,
    dt: f64,
    runs: usize,
    base_seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorsSection {
    sigma_angle: f64,
    sigma_imu: f64,
    #[serde(default)]
    camera: Option<CameraSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraSection {
    position: [f64; 2],
    height: f64,
    yaw: f64,
    pitch: f64,
    focal: f64,
    principal: [f64; 2],
    image_size: [u32; 2],
    detection_prob: f64,
    target_height: f64,
    surface: SurfaceSection,
    #[serde(default)]
    error_table: Option<String>,
    #[serde(default)]
    clutter: Option<ClutterSection>,
    #[serde(default = "default_cell")]
    u_cell: u32,
    #[serde(default = "default_cell")]
    v_cell: u32,
}

fn default_cell() -> u32 {
    40
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceSection {
    min_sigma: f64,
    max_sigma: f64,
    exponent: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClutterSection {
    rate: f64,
    region: [f64; 4],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FovEntry {
    /// 1-based UE index.
    ue: usize,
    /// "pa" or "va<k>" with 1-based virtual-anchor index.
    anchor: String,
    /// Optional visibility windows [from, until) in seconds; visible for the
    /// whole run when absent.
    #[serde(default)]
    windows: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AlgoSection {
    n_particles: usize,
    r_cut: f64,
    r_cut_new: f64,
    d_th: f64,
    t_config: f64,
    d_th_assoc: f64,
    gate_sigmas: f64,
    confidence_gain: f64,
    confidence_decay: f64,
    confidence_max: f64,
    birth_confidence: f64,
    min_keep_confidence: f64,
    birth_hits: u32,
    birth_window: u32,
    feature_prior_var: f64,
    download: bool,
    unique_detections: bool,
}

impl Default for AlgoSection {
    fn default() -> Self {
        AlgoSection {
            n_particles: 1000,
            r_cut: 0.3,
            r_cut_new: 0.3,
            d_th: 1.0,
            t_config: 10.0,
            d_th_assoc: 1.5,
            gate_sigmas: 3.0,
            confidence_gain: 0.1,
            confidence_decay: 0.8,
            confidence_max: 0.99,
            birth_confidence: 0.4,
            min_keep_confidence: 0.05,
            birth_hits: 2,
            birth_window: 3,
            feature_prior_var: 25.0,
            download: true,
            unique_detections: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct BeamSection {
    strategy: String,
    m: usize,
    n_bs: usize,
    n_ue: usize,
    sigma2: f64,
    /// Departure-angle collision threshold; pi/m when absent.
    theta_th: Option<f64>,
}

impl Default for BeamSection {
    fn default() -> Self {
        BeamSection {
            strategy: "none".into(),
            m: 8,
            n_bs: 16,
            n_ue: 16,
            sigma2: 1.0,
            theta_th: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ChannelSection {
    kappa_los: f64,
    kappa_nlos: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            kappa_los: 1.0,
            kappa_nlos: 1.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MetricsSection {
    ospa_cutoff: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { ospa_cutoff: 10.0 }
    }
}

// ─── Resolved scenario ─────────────────────────────────────────────────────

/// UE motion model.
#[derive(Debug, Clone)]
pub enum Motion {
    /// Uniform step length, uniform heading, reflecting at the site bounds.
    RandomWalk { step_min: f64, step_max: f64 },
    /// Straight lanes at fixed x, constant per-run speed along y.
    Lanes {
        lanes: Vec<f64>,
        speed_min: f64,
        speed_max: f64,
        y_start: f64,
        y_end: f64,
    },
}

/// Camera deployment resolved from the config.
#[derive(Debug, Clone)]
pub struct CameraSetup {
    pub model: CameraModel,
    pub surface: RadialErrorSurface,
    pub clutter: Option<ClutterModel>,
    pub target_height: f64,
    /// Path of a trained error table; the ideal table derived from the true
    /// surface is used when absent.
    pub error_table: Option<String>,
    pub u_cell: u32,
    pub v_cell: u32,
}

/// Beam-management parameters.
#[derive(Debug, Clone)]
pub struct BeamParams {
    pub strategy: Strategy,
    pub m: usize,
    pub n_bs: usize,
    pub n_ue: usize,
    pub sigma2: f64,
    pub theta_th: f64,
}

/// Fully resolved, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub pa: Vec2,
    pub walls: Vec<Wall>,
    pub anchors: AnchorSet,
    pub bounds: [f64; 4],
    pub n_ues: usize,
    pub sigma_ini: f64,
    pub motion: Motion,
    pub horizon: f64,
    pub dt: f64,
    pub runs: usize,
    pub base_seed: u64,
    pub sigma_angle: f64,
    pub sigma_imu: f64,
    pub camera: Option<CameraSetup>,
    pub fov: FovSchedule,
    pub algo: Algo,
    pub beam: BeamParams,
    pub kappa_los: f64,
    pub kappa_nlos: f64,
    pub ospa_cutoff: f64,
}

/// Estimator parameters shared by the local filters and the global map.
#[derive(Debug, Clone)]
pub struct Algo {
    pub n_particles: usize,
    pub r_cut: f64,
    pub r_cut_new: f64,
    pub d_th: f64,
    pub t_config: f64,
    pub d_th_assoc: f64,
    pub gate_sigmas: f64,
    pub confidence_gain: f64,
    pub confidence_decay: f64,
    pub confidence_max: f64,
    pub birth_confidence: f64,
    pub min_keep_confidence: f64,
    pub birth_hits: u32,
    pub birth_window: u32,
    pub feature_prior_var: f64,
    pub download: bool,
    pub unique_detections: bool,
}

impl Scenario {
    pub fn slam_params(&self) -> SlamParams {
        SlamParams {
            n_particles: self.algo.n_particles,
            sigma_ini: self.sigma_ini,
            sigma_angle: self.sigma_angle,
            gate_sigmas: self.algo.gate_sigmas,
            confidence_gain: self.algo.confidence_gain,
            confidence_max: self.algo.confidence_max,
            confidence_decay: self.algo.confidence_decay,
            birth_confidence: self.algo.birth_confidence,
            min_keep_confidence: self.algo.min_keep_confidence,
            birth_hits: self.algo.birth_hits,
            birth_window: self.algo.birth_window,
            feature_prior_var: self.algo.feature_prior_var,
        }
    }

    /// Ground-truth VA positions in config wall order.
    pub fn va_positions(&self) -> Vec<Vec2> {
        self.anchors.vas.iter().map(|v| v.position).collect()
    }
}

fn parse_anchor(s: &str, n_vas: usize) -> Result<AnchorId> {
    if s == "pa" {
        return Ok(AnchorId::Pa);
    }
    if let Some(num) = s.strip_prefix("va") {
        if let Ok(k) = num.parse::<usize>() {
            if k >= 1 && k <= n_vas {
                return Ok(AnchorId::Va(k - 1));
            }
            return Err(Error::config(
                "fov.anchor",
                format!("va index {k} out of range 1..={n_vas}"),
            ));
        }
    }
    Err(Error::config(
        "fov.anchor",
        format!("expected \"pa\" or \"va<k>\", got {s:?}"),
    ))
}

fn resolve(file: ScenarioFile) -> Result<Scenario> {
    if file.schema_version != 1 {
        return Err(Error::config(
            "schema_version",
            format!("unsupported version {} (expected 1)", file.schema_version),
        ));
    }
    if !(file.site.epsilon > 1.0) {
        return Err(Error::config("site.epsilon", "must exceed 1"));
    }
    let pa = Vec2::new(file.site.pa[0], file.site.pa[1]);
    let walls: Vec<Wall> = file
        .site
        .walls
        .iter()
        .enumerate()
        .map(|(i, w)| {
            Wall::new(
                Vec2::new(w.a[0], w.a[1]),
                Vec2::new(w.b[0], w.b[1]),
                w.epsilon.unwrap_or(file.site.epsilon),
            )
            .map_err(|e| Error::config(format!("site.walls[{i}]"), e.to_string()))
        })
        .collect::<Result<_>>()?;
    let anchors = AnchorSet::from_walls(pa, &walls)?;

    if file.ue.count == 0 {
        return Err(Error::config("ue.count", "need at least one UE"));
    }
    if !(file.run.dt > 0.0) {
        return Err(Error::config("run.dt", "must be positive"));
    }
    if !(file.run.horizon > 0.0) {
        return Err(Error::config("run.horizon", "must be positive"));
    }
    if file.algo.t_config >= file.run.horizon {
        return Err(Error::config(
            "algo.t_config",
            format!(
                "stage switch at {} s must precede the horizon {} s",
                file.algo.t_config, file.run.horizon
            ),
        ));
    }
    if file.sensors.sigma_angle < 0.0 || file.sensors.sigma_imu < 0.0 {
        return Err(Error::config("sensors", "noise parameters must be >= 0"));
    }
    let [x0, x1, y0, y1] = file.site.bounds;
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::config("site.bounds", "empty bounding box"));
    }

    let motion = match &file.ue.motion {
        MotionSection::RandomWalk { step_min, step_max } => {
            if !(*step_min >= 0.0 && step_max >= step_min) {
                return Err(Error::config("ue.motion", "need 0 <= step_min <= step_max"));
            }
            Motion::RandomWalk {
                step_min: *step_min,
                step_max: *step_max,
            }
        }
        MotionSection::Lanes {
            lanes,
            speed_min_kmh,
            speed_max_kmh,
            y_start,
            y_end,
        } => {
            if lanes.is_empty() {
                return Err(Error::config("ue.motion.lanes", "need at least one lane"));
            }
            if !(*speed_min_kmh > 0.0 && speed_max_kmh >= speed_min_kmh) {
                return Err(Error::config("ue.motion", "bad speed range"));
            }
            if (y_end - y_start).abs() < 1e-9 {
                return Err(Error::config("ue.motion", "zero-length lane"));
            }
            Motion::Lanes {
                lanes: lanes.clone(),
                speed_min: speed_min_kmh / 3.6,
                speed_max: speed_max_kmh / 3.6,
                y_start: *y_start,
                y_end: *y_end,
            }
        }
    };

    let mut fovs = vec![UeFov::default(); file.ue.count];
    for (i, entry) in file.fov.iter().enumerate() {
        if entry.ue < 1 || entry.ue > file.ue.count {
            return Err(Error::config(
                format!("fov[{i}].ue"),
                format!("UE index {} out of range 1..={}", entry.ue, file.ue.count),
            ));
        }
        let anchor = parse_anchor(&entry.anchor, anchors.vas.len())?;
        let fov = std::mem::take(&mut fovs[entry.ue - 1]);
        fovs[entry.ue - 1] = match &entry.windows {
            None => fov.always(anchor),
            Some(ws) => fov.windows(
                anchor,
                ws.iter()
                    .map(|w| TimeWindow {
                        from: w[0],
                        until: w[1],
                    })
                    .collect(),
            ),
        };
    }

    let camera = match file.sensors.camera {
        None => None,
        Some(c) => {
            let model = CameraModel {
                position: Vec2::new(c.position[0], c.position[1]),
                height: c.height,
                yaw: c.yaw,
                pitch: c.pitch,
                focal: c.focal,
                principal: (c.principal[0], c.principal[1]),
                image_size: (c.image_size[0], c.image_size[1]),
                detection_prob: c.detection_prob,
            };
            model
                .validate()
                .map_err(|e| Error::config("sensors.camera", e.to_string()))?;
            Some(CameraSetup {
                model,
                surface: RadialErrorSurface {
                    min_sigma: c.surface.min_sigma,
                    max_sigma: c.surface.max_sigma,
                    exponent: c.surface.exponent,
                },
                clutter: c.clutter.map(|cl| ClutterModel {
                    rate: cl.rate,
                    region: cl.region,
                }),
                target_height: c.target_height,
                error_table: c.error_table,
                u_cell: c.u_cell,
                v_cell: c.v_cell,
            })
        }
    };

    let beam = BeamParams {
        strategy: Strategy::parse(&file.beam.strategy)?,
        m: file.beam.m.max(1),
        n_bs: file.beam.n_bs.max(1),
        n_ue: file.beam.n_ue.max(1),
        sigma2: file.beam.sigma2,
        theta_th: file
            .beam
            .theta_th
            .unwrap_or(std::f64::consts::PI / file.beam.m.max(1) as f64),
    };
    if beam.strategy != Strategy::None && !(beam.sigma2 > 0.0) {
        return Err(Error::config("beam.sigma2", "must be positive"));
    }

    Ok(Scenario {
        name: file.name,
        pa,
        walls,
        anchors,
        bounds: file.site.bounds,
        n_ues: file.ue.count,
        sigma_ini: file.ue.sigma_ini,
        motion,
        horizon: file.run.horizon,
        dt: file.run.dt,
        runs: file.run.runs,
        base_seed: file.run.base_seed,
        sigma_angle: file.sensors.sigma_angle,
        sigma_imu: file.sensors.sigma_imu,
        camera,
        fov: FovSchedule { ues: fovs },
        algo: Algo {
            n_particles: file.algo.n_particles,
            r_cut: file.algo.r_cut,
            r_cut_new: file.algo.r_cut_new,
            d_th: file.algo.d_th,
            t_config: file.algo.t_config,
            d_th_assoc: file.algo.d_th_assoc,
            gate_sigmas: file.algo.gate_sigmas,
            confidence_gain: file.algo.confidence_gain,
            confidence_decay: file.algo.confidence_decay,
            confidence_max: file.algo.confidence_max,
            birth_confidence: file.algo.birth_confidence,
            min_keep_confidence: file.algo.min_keep_confidence,
            birth_hits: file.algo.birth_hits,
            birth_window: file.algo.birth_window,
            feature_prior_var: file.algo.feature_prior_var,
            download: file.algo.download,
            unique_detections: file.algo.unique_detections,
        },
        beam,
        kappa_los: file.channel.kappa_los,
        kappa_nlos: file.channel.kappa_nlos,
        ospa_cutoff: file.metrics.ospa_cutoff,
    })
}

fn parse_toml(text: &str, origin: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    resolve(file)
}

/// Load and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text, &path.display().to_string())
}

/// Bundled scenario presets.
const PRESETS: &[(&str, &str)] = &[
    ("indoor_s1", include_str!("../../scenarios/indoor_s1.toml")),
    ("indoor_s2", include_str!("../../scenarios/indoor_s2.toml")),
    ("indoor_s3", include_str!("../../scenarios/indoor_s3.toml")),
    ("indoor_s4", include_str!("../../scenarios/indoor_s4.toml")),
    ("indoor_s5", include_str!("../../scenarios/indoor_s5.toml")),
    (
        "indoor_beam_3ue",
        include_str!("../../scenarios/indoor_beam_3ue.toml"),
    ),
    (
        "indoor_beam_5ue",
        include_str!("../../scenarios/indoor_beam_5ue.toml"),
    ),
    ("outdoor", include_str!("../../scenarios/outdoor.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Load a bundled preset by name.
pub fn load_preset(name: &str) -> Result<Scenario> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::config("scenario", format!("no preset named {name:?}")))?;
    parse_toml(text, name)
}

/// Load a scenario by preset name or, failing that, by path.
pub fn load_by_name_or_path(spec: &str) -> Result<Scenario> {
    if PRESETS.iter().any(|(n, _)| *n == spec) {
        load_preset(spec)
    } else {
        load_scenario(Path::new(spec))
    }
}
