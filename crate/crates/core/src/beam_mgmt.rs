//! Sensing-aided beam management.
//!
//! The global radio map plus the UE location estimates yield per-UE path
//! priors (angles, search range, gain). Each UE initially selects its
//! strongest prior; a single interference-aware pass then nudges UEs whose
//! departure directions collide onto alternative paths whenever that raises
//! the predicted sum rate. Beam tracking finally searches a fine codebook
//! centered on the selected prior against the true channel, spending exactly
//! the same measurement budget (`M x M` beam pairs) as exhaustive sweeping.
//!
//! For an NLoS prior the estimator reconstructs the generating wall as the
//! perpendicular bisector of the PA and the mapped feature (the feature is
//! the PA's mirror image), which fixes the reflection point and with it the
//! departure angle and reflection loss.

use crate::channel::{self, steering_vector, BeamPair, ChannelMatrix};
use crate::geometry::{reflection_angle, reflection_coefficient, AnchorId};
use crate::global_map::GlobalRadioMap;
use crate::local_slam::UeGaussian;
use crate::vec2::{wrap_angle, Vec2};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Hard bounds on the angular search range.
pub const RANGE_MIN: f64 = PI / 64.0;
pub const RANGE_MAX: f64 = PI;

/// Prior information for one candidate path of one UE.
#[derive(Debug, Clone, Copy)]
pub struct PathPrior {
    pub anchor: AnchorId,
    /// AoA prior (rad).
    pub aoa: f64,
    /// AoD prior (rad).
    pub aod: f64,
    /// Angular search range around the priors (rad).
    pub range: f64,
    /// Path-gain prior.
    pub gain: f64,
}

/// A UE's priors, sorted by descending gain (ties by anchor index).
#[derive(Debug, Clone, Default)]
pub struct PriorInfoSet {
    pub priors: Vec<PathPrior>,
}

/// Constants the prior generator needs from the scenario.
#[derive(Debug, Clone, Copy)]
pub struct PriorParams {
    pub r_cut: f64,
    pub sigma_angle: f64,
    /// Wall dielectric constant assumed when predicting reflection losses.
    pub epsilon: f64,
    pub kappa_los: f64,
    pub kappa_nlos: f64,
}

/// Build the prior set for UE `ue`: the PA's LoS path plus one NLoS path per
/// global feature whose visibility to this UE exceeds `r_cut`.
pub fn gen_priors(
    q: &GlobalRadioMap,
    ue_est: &UeGaussian,
    ue: usize,
    pa: Vec2,
    params: &PriorParams,
) -> PriorInfoSet {
    let mut priors = Vec::new();
    let ue_pos = ue_est.mean;
    let sigma_ue = ue_est.variance[0].max(ue_est.variance[1]).max(0.0).sqrt();

    let half_width = |d: f64, sigma_feat: f64| -> f64 {
        let a = (3.0 * sigma_ue / d).min(1.0).asin();
        let b = (3.0 * sigma_feat / d).min(1.0).asin();
        a + b
    };
    let search_range = |d: f64, sigma_feat: f64| -> f64 {
        (2.0 * (3.0 * params.sigma_angle).max(half_width(d, sigma_feat)))
            .clamp(RANGE_MIN, RANGE_MAX)
    };

    let d_pa = ue_pos.distance(pa);
    if d_pa > 1e-9 {
        let angle = (ue_pos - pa).angle();
        priors.push(PathPrior {
            anchor: AnchorId::Pa,
            aoa: angle,
            aod: angle,
            range: search_range(d_pa, 0.0),
            gain: params.kappa_los / d_pa,
        });
    }

    for (i, f) in q.features.iter().enumerate() {
        if !(f.visibility.get(ue).copied().unwrap_or(0.0) > params.r_cut) {
            continue;
        }
        let va = f.position;
        let d = ue_pos.distance(va);
        if d < 1e-9 || va.distance(pa) < 1e-9 {
            continue;
        }
        let aoa = (ue_pos - va).angle();
        // Wall inferred as the perpendicular bisector of PA and the feature.
        let normal = va - pa;
        let midpoint = (va + pa) * 0.5;
        let dir = ue_pos - va;
        let denom = dir.dot(normal);
        let aod = if denom.abs() > 1e-12 {
            let s = (midpoint - va).dot(normal) / denom;
            let xp = va + dir * s;
            if xp.distance(pa) > 1e-9 {
                (xp - pa).angle()
            } else {
                aoa
            }
        } else {
            aoa
        };
        let gamma = reflection_angle(aoa, aod);
        let sigma_feat = f.variance[0].max(f.variance[1]).max(0.0).sqrt();
        priors.push(PathPrior {
            anchor: AnchorId::Va(i),
            aoa,
            aod,
            range: search_range(d, sigma_feat),
            gain: params.kappa_nlos * reflection_coefficient(gamma, params.epsilon) / d,
        });
    }

    priors.sort_by(|a, b| {
        b.gain
            .partial_cmp(&a.gain)
            .unwrap()
            .then(a.anchor.cmp(&b.anchor))
    });
    PriorInfoSet { priors }
}

/// Channel estimate from the priors (sum of rank-1 prior paths).
pub fn estimate_channel(priors: &PriorInfoSet, n_ue: usize, n_bs: usize) -> ChannelMatrix {
    channel::synth_channel_from_params(
        priors.priors.iter().map(|p| (p.gain, p.aoa, p.aod)),
        n_ue,
        n_bs,
    )
}

/// Fold an azimuth into the ULA-distinguishable domain [0, pi]; a ULA cannot
/// tell an angle from its negative.
pub fn fold_to_ula(angle: f64) -> f64 {
    wrap_angle(angle).abs()
}

/// Quantize an angle onto the `m`-beam grid (ceiling index, 1-based).
fn grid_index(angle: f64, m: usize) -> usize {
    let idx = (fold_to_ula(angle) * m as f64 / PI).ceil() as usize;
    idx.clamp(1, m)
}

/// Shared inputs of the selection pipeline for one timestep.
#[derive(Debug, Clone)]
pub struct BeamContext {
    pub priors: Vec<PriorInfoSet>,
    pub est_channels: Vec<ChannelMatrix>,
    pub m: usize,
    pub n_ue: usize,
    pub n_bs: usize,
    pub sigma2: f64,
}

impl BeamContext {
    pub fn new(
        priors: Vec<PriorInfoSet>,
        m: usize,
        n_ue: usize,
        n_bs: usize,
        sigma2: f64,
    ) -> BeamContext {
        let est_channels = priors
            .iter()
            .map(|p| estimate_channel(p, n_ue, n_bs))
            .collect();
        BeamContext {
            priors,
            est_channels,
            m,
            n_ue,
            n_bs,
            sigma2,
        }
    }
}

/// One UE's current selection: the prior index and the beams steered at the
/// quantized prior angles.
#[derive(Debug, Clone)]
pub struct UeChoice {
    pub prior_index: usize,
    /// Extended grid size `M_j = ceil(M pi / S)` used for quantization.
    pub quantized_m: usize,
    pub pair: BeamPair,
}

/// Selection state for all UEs plus the predicted sum SE under the estimated
/// channels. UEs without priors are flagged out with `None`.
#[derive(Debug, Clone)]
pub struct BeamSelection {
    pub choices: Vec<Option<UeChoice>>,
    pub predicted_se: f64,
}

fn zero_pair(n_ue: usize, n_bs: usize) -> BeamPair {
    BeamPair {
        tx: vec![Complex64::ZERO; n_bs],
        rx: vec![Complex64::ZERO; n_ue],
    }
}

fn choice_for(prior: &PathPrior, prior_index: usize, ctx: &BeamContext) -> UeChoice {
    let m_j = ((ctx.m as f64 * PI) / prior.range).ceil() as usize;
    let m_j = m_j.max(1);
    let res = PI / m_j as f64;
    let tx_angle = grid_index(prior.aod, m_j) as f64 * res;
    let rx_angle = grid_index(prior.aoa, m_j) as f64 * res;
    UeChoice {
        prior_index,
        quantized_m: m_j,
        pair: BeamPair {
            tx: steering_vector(tx_angle, ctx.n_bs).expect("n_bs >= 1"),
            rx: steering_vector(rx_angle, ctx.n_ue).expect("n_ue >= 1"),
        },
    }
}

fn predicted_se(ctx: &BeamContext, choices: &[Option<UeChoice>]) -> f64 {
    let pairs: Vec<BeamPair> = choices
        .iter()
        .map(|c| {
            c.as_ref()
                .map(|u| u.pair.clone())
                .unwrap_or_else(|| zero_pair(ctx.n_ue, ctx.n_bs))
        })
        .collect();
    channel::sum_se(&ctx.est_channels, &pairs, ctx.sigma2).expect("valid context")
}

/// Initial selection: every UE takes its strongest prior, beams steered at
/// the prior angles quantized to the range-extended resolution.
pub fn select_initial(ctx: &BeamContext) -> BeamSelection {
    let choices: Vec<Option<UeChoice>> = ctx
        .priors
        .iter()
        .map(|set| set.priors.first().map(|p| choice_for(p, 0, ctx)))
        .collect();
    let predicted = predicted_se(ctx, &choices);
    BeamSelection {
        choices,
        predicted_se: predicted,
    }
}

/// Minimum angular distance from UE `j`'s departure prior to any other UE's;
/// infinity for a single UE.
pub fn iui_distance(priors: &[PriorInfoSet], choices: &[Option<UeChoice>], j: usize) -> f64 {
    let Some(my) = choices[j]
        .as_ref()
        .map(|c| priors[j].priors[c.prior_index].aod)
    else {
        return f64::INFINITY;
    };
    let mut best = f64::INFINITY;
    for (i, c) in choices.iter().enumerate() {
        if i == j {
            continue;
        }
        if let Some(other) = c.as_ref().map(|c| priors[i].priors[c.prior_index].aod) {
            best = best.min(wrap_angle(my - other).abs());
        }
    }
    best
}

/// One interference-refinement pass in UE index order: a UE whose departure
/// prior sits within `theta_th` of another UE's tentatively advances to its
/// next prior; the switch sticks only if the predicted SE strictly improves.
/// UEs on their last prior stay put.
pub fn iui_refine(ctx: &BeamContext, selection: &BeamSelection, theta_th: f64) -> BeamSelection {
    let mut choices = selection.choices.clone();
    let mut best_se = selection.predicted_se;
    for j in 0..choices.len() {
        if iui_distance(&ctx.priors, &choices, j) >= theta_th {
            continue;
        }
        let Some(current) = choices[j].clone() else {
            continue;
        };
        let next_index = current.prior_index + 1;
        let Some(next_prior) = ctx.priors[j].priors.get(next_index) else {
            continue; // exhausted; keep the current selection
        };
        choices[j] = Some(choice_for(next_prior, next_index, ctx));
        let se = predicted_se(ctx, &choices);
        if se > best_se {
            best_se = se;
        } else {
            choices[j] = Some(current);
        }
    }
    BeamSelection {
        choices,
        predicted_se: best_se,
    }
}

/// Per-UE tracking codebooks: `M` fine beams per side at resolution
/// `pi / (2^m_j M)`, centered on the quantized prior angles.
#[derive(Debug, Clone)]
pub struct UeTracking {
    pub tx_beams: Vec<Vec<Complex64>>,
    pub rx_beams: Vec<Vec<Complex64>>,
    pub m_tra: usize,
}

#[derive(Debug, Clone)]
pub struct TrackingCodebooks {
    pub per_ue: Vec<Option<UeTracking>>,
}

/// Resolution exponent: the natural number making `pi / 2^m` closest to the
/// search range (smaller exponent wins ties).
pub fn resolution_exponent(range: f64) -> u32 {
    let mut best = 0u32;
    let mut best_err = f64::INFINITY;
    for m in 0..=16u32 {
        let err = (range - PI / 2f64.powi(m as i32)).abs();
        if err < best_err {
            best_err = err;
            best = m;
        }
    }
    best
}

pub fn build_tracking_codebooks(ctx: &BeamContext, selection: &BeamSelection) -> TrackingCodebooks {
    let per_ue = selection
        .choices
        .iter()
        .enumerate()
        .map(|(j, choice)| {
            choice.as_ref().map(|c| {
                let prior = &ctx.priors[j].priors[c.prior_index];
                let m_tra = 2usize.pow(resolution_exponent(prior.range)) * ctx.m;
                let res = PI / m_tra as f64;
                let tx_center = grid_index(prior.aod, m_tra) as isize;
                let rx_center = grid_index(prior.aoa, m_tra) as isize;
                let half = ctx.m as isize / 2;
                let beams = |center: isize, n: usize| -> Vec<Vec<Complex64>> {
                    ((-half + 1)..=half)
                        .map(|k| steering_vector((center + k) as f64 * res, n).expect("n >= 1"))
                        .collect()
                };
                UeTracking {
                    tx_beams: beams(tx_center, ctx.n_bs),
                    rx_beams: beams(rx_center, ctx.n_ue),
                    m_tra,
                }
            })
        })
        .collect();
    TrackingCodebooks { per_ue }
}

/// Measure every tracking beam pair against the true channel and keep the
/// strongest. Returns the pair, its gain, and the number of evaluations.
pub fn track_and_choose(h: &ChannelMatrix, tracking: &UeTracking) -> (BeamPair, f64, usize) {
    let mut best_gain = -1.0;
    let mut best = (0, 0);
    let mut evals = 0;
    for (ti, tx) in tracking.tx_beams.iter().enumerate() {
        for (ri, rx) in tracking.rx_beams.iter().enumerate() {
            let g = channel::beam_gain(rx, h, tx).expect("codebook dims match channel");
            evals += 1;
            if g > best_gain {
                best_gain = g;
                best = (ti, ri);
            }
        }
    }
    (
        BeamPair {
            tx: tracking.tx_beams[best.0].clone(),
            rx: tracking.rx_beams[best.1].clone(),
        },
        best_gain,
        evals,
    )
}

/// Exhaustive sweep over the standard `M x M` codebook against the true
/// channel.
pub fn baseline_sweep(
    h: &ChannelMatrix,
    m: usize,
    n_ue: usize,
    n_bs: usize,
) -> (BeamPair, f64, usize) {
    let tx_cb = channel::sweep_codebook(m, n_bs);
    let rx_cb = channel::sweep_codebook(m, n_ue);
    let mut best_gain = -1.0;
    let mut best = (0, 0);
    let mut evals = 0;
    for (ti, tx) in tx_cb.beams.iter().enumerate() {
        for (ri, rx) in rx_cb.beams.iter().enumerate() {
            let g = channel::beam_gain(rx, h, tx).expect("codebook dims match channel");
            evals += 1;
            if g > best_gain {
                best_gain = g;
                best = (ti, ri);
            }
        }
    }
    (
        BeamPair {
            tx: tx_cb.beams[best.0].clone(),
            rx: rx_cb.beams[best.1].clone(),
        },
        best_gain,
        evals,
    )
}

/// Outcome of running one strategy for one timestep.
pub struct StrategyOutcome {
    pub pairs: Vec<BeamPair>,
    /// True-channel gain evaluations per UE.
    pub evals_per_ue: Vec<usize>,
}

/// Full pipeline: initial selection, interference refinement, tracking.
pub fn run_management_tracking(
    ctx: &BeamContext,
    true_channels: &[ChannelMatrix],
    theta_th: f64,
) -> StrategyOutcome {
    let selection = iui_refine(ctx, &select_initial(ctx), theta_th);
    run_tracking_on(ctx, true_channels, &selection)
}

/// Baseline: strongest prior per UE, no interference refinement, tracking.
pub fn run_tracking(ctx: &BeamContext, true_channels: &[ChannelMatrix]) -> StrategyOutcome {
    let selection = select_initial(ctx);
    run_tracking_on(ctx, true_channels, &selection)
}

fn run_tracking_on(
    ctx: &BeamContext,
    true_channels: &[ChannelMatrix],
    selection: &BeamSelection,
) -> StrategyOutcome {
    let codebooks = build_tracking_codebooks(ctx, selection);
    let mut pairs = Vec::with_capacity(true_channels.len());
    let mut evals = Vec::with_capacity(true_channels.len());
    for (j, h) in true_channels.iter().enumerate() {
        match &codebooks.per_ue[j] {
            Some(tr) => {
                let (pair, _, n) = track_and_choose(h, tr);
                pairs.push(pair);
                evals.push(n);
            }
            None => {
                pairs.push(zero_pair(ctx.n_ue, ctx.n_bs));
                evals.push(0);
            }
        }
    }
    StrategyOutcome {
        pairs,
        evals_per_ue: evals,
    }
}

/// Baseline: per-UE exhaustive beam sweeping.
pub fn run_sweeping(
    true_channels: &[ChannelMatrix],
    m: usize,
    n_ue: usize,
    n_bs: usize,
) -> StrategyOutcome {
    let mut pairs = Vec::with_capacity(true_channels.len());
    let mut evals = Vec::with_capacity(true_channels.len());
    for h in true_channels {
        let (pair, _, n) = baseline_sweep(h, m, n_ue, n_bs);
        pairs.push(pair);
        evals.push(n);
    }
    StrategyOutcome {
        pairs,
        evals_per_ue: evals,
    }
}
