//! BS-side global radio-map construction.
//!
//! Each step the UEs upload their local feature records. During the
//! initialization stage the BS pools every confident feature, associates it
//! with the nearest global feature by Euclidean distance, and either fuses it
//! (inverse-variance per axis) or promotes it to a new global feature. During
//! the refinement stage the UEs work from downloaded copies of the global map,
//! so their legacy maps stay index-aligned with it and the BS updates legacy
//! features positionally; newly born local features are processed the same
//! way as in the initialization stage. Stale features decay out through an
//! exponential retention test on their last-update timestamp.

use crate::vec2::Vec2;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One feature of the global radio map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalFeature {
    pub position: Vec2,
    /// Per-axis position variance (m^2).
    pub variance: [f64; 2],
    /// Per-UE visibility: likelihood that this feature contributes a path to
    /// each UE's channel.
    pub visibility: Vec<f64>,
    /// Existence confidence; kept equal to `max(visibility)` after updates.
    pub confidence: f64,
    /// Timestep of the most recent update.
    pub timestamp: i64,
}

/// The global radio map: feature set plus current timestep.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GlobalRadioMap {
    pub features: Vec<GlobalFeature>,
    pub time: i64,
}

impl GlobalRadioMap {
    pub fn positions(&self) -> Vec<Vec2> {
        self.features.iter().map(|f| f.position).collect()
    }
}

/// One uploaded local feature record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UploadFeature {
    pub position: Vec2,
    pub variance: [f64; 2],
    pub confidence: f64,
    pub legacy: bool,
}

/// Per-UE upload: the UE's local map snapshot for one timestep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Upload {
    pub ue: usize,
    pub features: Vec<UploadFeature>,
}

/// Union of uploaded features whose confidence reaches the pruning threshold.
pub fn build_pool(uploads: &[Upload], r_cut: f64) -> Vec<(usize, UploadFeature)> {
    uploads
        .iter()
        .flat_map(|u| {
            u.features
                .iter()
                .filter(|f| f.confidence >= r_cut)
                .map(move |f| (u.ue, *f))
        })
        .collect()
}

/// Variance floor keeping covariances positive through long fusion chains.
const MIN_VARIANCE: f64 = 1e-12;

/// Fuse one uploaded feature into a global candidate: per-axis
/// inverse-variance combination of the means, harmonic combination of the
/// variances, then visibility / confidence / timestamp refresh.
pub fn fuse_feature(cand: &mut GlobalFeature, p: &UploadFeature, ue: usize, t: i64) {
    let means = [
        (cand.position.x, p.position.x),
        (cand.position.y, p.position.y),
    ];
    let mut fused = [0.0; 2];
    for axis in 0..2 {
        let (mc, ml) = means[axis];
        let vc = cand.variance[axis];
        let vl = p.variance[axis];
        fused[axis] = (vl * mc + vc * ml) / (vc + vl);
        cand.variance[axis] = (1.0 / (1.0 / vc + 1.0 / vl)).max(MIN_VARIANCE);
    }
    cand.position = Vec2::new(fused[0], fused[1]);
    set_visibility(cand, ue, p.confidence);
    cand.timestamp = t;
}

fn set_visibility(cand: &mut GlobalFeature, ue: usize, value: f64) {
    if cand.visibility.len() <= ue {
        cand.visibility.resize(ue + 1, 0.0);
    }
    cand.visibility[ue] = value;
    cand.confidence = cand.visibility.iter().fold(0.0_f64, |acc, &v| acc.max(v));
}

fn promote(p: &UploadFeature, ue: usize, n_ues: usize, t: i64) -> GlobalFeature {
    let mut f = GlobalFeature {
        position: p.position,
        variance: [
            p.variance[0].max(MIN_VARIANCE),
            p.variance[1].max(MIN_VARIANCE),
        ],
        visibility: vec![0.0; n_ues],
        confidence: 0.0,
        timestamp: t,
    };
    set_visibility(&mut f, ue, p.confidence);
    f
}

/// Initialization-stage map update: nearest-feature association at threshold
/// `d_th`, fusion or promotion, then retention pruning.
///
/// The candidate search covers features promoted earlier in the same
/// transaction, so two UEs first reporting the same physical feature in one
/// step produce a single global feature rather than duplicates.
pub fn init_stage_update(
    q: &mut GlobalRadioMap,
    pool: &[(usize, UploadFeature)],
    d_th: f64,
    r_cut: f64,
    t: i64,
    n_ues: usize,
) {
    for (ue, p) in pool {
        match nearest_feature(&q.features, p.position) {
            Some((idx, d)) if d <= d_th => fuse_feature(&mut q.features[idx], p, *ue, t),
            _ => q.features.push(promote(p, *ue, n_ues, t)),
        }
    }
    q.time = t;
    prune(q, t, r_cut);
}

fn nearest_feature(features: &[GlobalFeature], pos: Vec2) -> Option<(usize, f64)> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f.position.distance(pos)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
}

/// Split refinement-stage uploads into the index-aligned legacy pools (one
/// per UE, confidence zeroed at or below `r_cut`, nothing dropped) and the
/// flat pool of confident new features.
pub fn split_pools(
    uploads: &[Upload],
    r_cut: f64,
    r_cut_new: f64,
) -> (Vec<(usize, Vec<UploadFeature>)>, Vec<(usize, UploadFeature)>) {
    let mut legacy = Vec::new();
    let mut new_pool = Vec::new();
    for u in uploads {
        let mut mine = Vec::new();
        for f in &u.features {
            if f.legacy {
                let mut g = *f;
                if !(g.confidence > r_cut) {
                    g.confidence = 0.0;
                }
                mine.push(g);
            } else if f.confidence >= r_cut_new {
                new_pool.push((u.ue, *f));
            }
        }
        legacy.push((u.ue, mine));
    }
    (legacy, new_pool)
}

/// Refinement-stage map update.
///
/// Legacy global feature `i` takes `v_i[j] <- r~_{j,i}` from every UE and is
/// positionally fused with UE `j`'s copy whenever that visibility is
/// positive; its timestamp refreshes only if at least one UE contributed.
/// New features are associated against both the legacy set and the new set
/// built so far, exactly like the initialization stage. Ends with retention
/// pruning.
pub fn refine_stage_update(
    q: &mut GlobalRadioMap,
    legacy_pools: &[(usize, Vec<UploadFeature>)],
    new_pool: &[(usize, UploadFeature)],
    d_th: f64,
    r_cut: f64,
    t: i64,
    n_ues: usize,
) -> Result<()> {
    let n_legacy = q.features.len();
    for (ue, pool) in legacy_pools {
        if pool.len() != n_legacy {
            return Err(Error::ContractViolation(format!(
                "UE {} uploaded {} legacy features but the global map holds {}",
                ue,
                pool.len(),
                n_legacy
            )));
        }
    }

    for i in 0..n_legacy {
        let mut touched = false;
        let prev_timestamp = q.features[i].timestamp;
        for (ue, pool) in legacy_pools {
            let p = &pool[i];
            set_visibility(&mut q.features[i], *ue, p.confidence);
            if p.confidence > 0.0 {
                fuse_feature(&mut q.features[i], p, *ue, t);
                touched = true;
            }
        }
        q.features[i].timestamp = if touched { t } else { prev_timestamp };
    }

    for (ue, p) in new_pool {
        match nearest_feature(&q.features, p.position) {
            Some((idx, d)) if d <= d_th => fuse_feature(&mut q.features[idx], p, *ue, t),
            _ => q.features.push(promote(p, *ue, n_ues, t)),
        }
    }

    q.time = t;
    prune(q, t, r_cut);
    Ok(())
}

/// Retention test: keep a feature iff `2^(t_i - t) * r_i > r_cut` (strict).
pub fn prune(q: &mut GlobalRadioMap, t: i64, r_cut: f64) {
    q.features
        .retain(|f| retention_score(f.timestamp, t, f.confidence) > r_cut);
    q.time = t;
}

/// The decayed confidence used by the retention test.
pub fn retention_score(timestamp: i64, now: i64, confidence: f64) -> f64 {
    2.0_f64.powi((timestamp - now) as i32) * confidence
}

/// Rebuild a map from recorded per-step uploads (replay of the
/// initialization stage); used to audit upload files offline.
pub fn replay_init_stage(
    uploads_by_step: &[Vec<Upload>],
    d_th: f64,
    r_cut: f64,
    n_ues: usize,
) -> GlobalRadioMap {
    let mut q = GlobalRadioMap::default();
    for (step, uploads) in uploads_by_step.iter().enumerate() {
        let pool = build_pool(uploads, r_cut);
        init_stage_update(&mut q, &pool, d_th, r_cut, step as i64 + 1, n_ues);
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn up(x: f64, y: f64, var: f64, r: f64) -> UploadFeature {
        UploadFeature {
            position: Vec2::new(x, y),
            variance: [var, var],
            confidence: r,
            legacy: false,
        }
    }

    fn legacy(x: f64, y: f64, var: f64, r: f64) -> UploadFeature {
        UploadFeature {
            legacy: true,
            ..up(x, y, var, r)
        }
    }

    #[test]
    fn pool_keeps_threshold_inclusive() {
        let uploads = vec![Upload {
            ue: 0,
            features: vec![
                up(0.0, 0.0, 1.0, 0.2),
                up(1.0, 0.0, 1.0, 0.3),
                up(2.0, 0.0, 1.0, 0.9),
            ],
        }];
        let pool = build_pool(&uploads, 0.3);
        let confs: Vec<f64> = pool.iter().map(|(_, f)| f.confidence).collect();
        assert_eq!(confs, vec![0.3, 0.9]);
    }

    #[test]
    fn pool_empty_and_multi_ue() {
        let uploads = vec![
            Upload {
                ue: 0,
                features: vec![up(0.0, 0.0, 1.0, 0.1)],
            },
            Upload {
                ue: 1,
                features: vec![up(1.0, 0.0, 1.0, 0.2)],
            },
        ];
        assert!(build_pool(&uploads, 0.3).is_empty());

        let uploads = vec![
            Upload {
                ue: 0,
                features: vec![up(0.0, 0.0, 1.0, 0.5)],
            },
            Upload {
                ue: 1,
                features: vec![up(9.0, 0.0, 1.0, 0.5)],
            },
        ];
        assert_eq!(build_pool(&uploads, 0.3).len(), 2);
    }

    #[test]
    fn fusion_symmetric_case() {
        let mut cand = GlobalFeature {
            position: Vec2::new(1.0, 1.0),
            variance: [1.0, 1.0],
            visibility: vec![0.0, 0.0],
            confidence: 0.0,
            timestamp: 0,
        };
        fuse_feature(&mut cand, &up(3.0, 3.0, 1.0, 0.7), 1, 5);
        assert!((cand.position.x - 2.0).abs() < 1e-12);
        assert!((cand.variance[0] - 0.5).abs() < 1e-12);
        assert_eq!(cand.visibility[1], 0.7);
        assert_eq!(cand.confidence, 0.7);
        assert_eq!(cand.timestamp, 5);
    }

    #[test]
    fn fusion_weighted_case() {
        // Prior mean 0 var 1, local mean 3 var 0.5: mean 2, var 1/3.
        let mut cand = GlobalFeature {
            position: Vec2::ZERO,
            variance: [1.0, 1.0],
            visibility: vec![0.0],
            confidence: 0.0,
            timestamp: 0,
        };
        fuse_feature(&mut cand, &up(3.0, 3.0, 0.5, 0.8), 0, 1);
        assert!((cand.position.x - 2.0).abs() < 1e-12);
        assert!((cand.variance[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_is_max_of_visibility() {
        let mut cand = GlobalFeature {
            position: Vec2::ZERO,
            variance: [1.0, 1.0],
            visibility: vec![0.4, 0.0],
            confidence: 0.4,
            timestamp: 0,
        };
        fuse_feature(&mut cand, &up(0.0, 0.0, 1.0, 0.9), 1, 1);
        assert_eq!(cand.confidence, 0.9);
        fuse_feature(&mut cand, &up(0.0, 0.0, 1.0, 0.2), 1, 2);
        // v = [0.4, 0.2] now: max is back to 0.4.
        assert_eq!(cand.confidence, 0.4);
    }

    #[test]
    fn fusion_reduces_variance() {
        let mut cand = GlobalFeature {
            position: Vec2::ZERO,
            variance: [0.8, 0.3],
            visibility: vec![0.0],
            confidence: 0.0,
            timestamp: 0,
        };
        fuse_feature(&mut cand, &up(1.0, 1.0, 0.6, 0.5), 0, 1);
        assert!(cand.variance[0] < 0.6 && cand.variance[0] < 0.8);
        assert!(cand.variance[1] < 0.3);
    }

    #[test]
    fn init_stage_births_and_fuses() {
        let mut q = GlobalRadioMap::default();
        init_stage_update(&mut q, &[(0, up(5.0, 0.0, 1.0, 0.6))], 1.0, 0.3, 1, 2);
        assert_eq!(q.features.len(), 1);
        assert_eq!(q.features[0].confidence, 0.6);

        // A nearby report fuses instead of duplicating.
        init_stage_update(&mut q, &[(1, up(5.1, 0.0, 1.0, 0.5))], 1.0, 0.3, 2, 2);
        assert_eq!(q.features.len(), 1);
        assert!(q.features[0].visibility[1] > 0.0);

        // Two far-apart reports in one step become two features.
        let mut q2 = GlobalRadioMap::default();
        init_stage_update(
            &mut q2,
            &[(0, up(0.0, 0.0, 1.0, 0.6)), (0, up(10.0, 0.0, 1.0, 0.6))],
            1.0,
            0.3,
            1,
            1,
        );
        assert_eq!(q2.features.len(), 2);
    }

    #[test]
    fn init_stage_same_step_reports_do_not_duplicate() {
        let mut q = GlobalRadioMap::default();
        init_stage_update(
            &mut q,
            &[(0, up(5.0, 0.0, 1.0, 0.6)), (1, up(5.05, 0.0, 1.0, 0.7))],
            1.0,
            0.3,
            1,
            2,
        );
        assert_eq!(q.features.len(), 1);
        assert_eq!(q.features[0].confidence, 0.7);
    }

    #[test]
    fn split_pools_indicator_and_threshold() {
        let uploads = vec![Upload {
            ue: 0,
            features: vec![
                legacy(0.0, 0.0, 1.0, 0.2),
                legacy(1.0, 0.0, 1.0, 0.5),
                up(2.0, 0.0, 1.0, 0.1),
                up(3.0, 0.0, 1.0, 0.4),
            ],
        }];
        let (legacy_pools, new_pool) = split_pools(&uploads, 0.3, 0.3);
        assert_eq!(legacy_pools.len(), 1);
        let mine = &legacy_pools[0].1;
        assert_eq!(mine.len(), 2); // nothing pruned, index order kept
        assert_eq!(mine[0].confidence, 0.0); // 0.2 <= r_cut zeroed
        assert_eq!(mine[1].confidence, 0.5);
        assert_eq!(new_pool.len(), 1); // 0.1 < r_cut_new dropped
        assert_eq!(new_pool[0].1.confidence, 0.4);
    }

    #[test]
    fn refine_updates_legacy_and_new() {
        let mut q = GlobalRadioMap {
            features: vec![GlobalFeature {
                position: Vec2::new(10.0, 0.0),
                variance: [1.0, 1.0],
                visibility: vec![0.9, 0.0],
                confidence: 0.9,
                timestamp: 0,
            }],
            time: 0,
        };
        // Two UEs both report the legacy feature; positions fuse twice.
        let legacy_pools = vec![
            (0, vec![legacy(10.2, 0.0, 1.0, 0.9)]),
            (1, vec![legacy(9.8, 0.0, 1.0, 0.8)]),
        ];
        refine_stage_update(&mut q, &legacy_pools, &[], 1.0, 0.3, 1, 2).unwrap();
        assert_eq!(q.features.len(), 1);
        assert_eq!(q.features[0].visibility, vec![0.9, 0.8]);
        assert_eq!(q.features[0].timestamp, 1);
        assert!(q.features[0].variance[0] < 0.4);

        // Zero-confidence upload refreshes visibility but not position.
        let pos_before = q.features[0].position;
        let legacy_pools = vec![
            (0, vec![legacy(20.0, 0.0, 1.0, 0.0)]),
            (1, vec![legacy(pos_before.x, 0.0, 1.0, 0.8)]),
        ];
        refine_stage_update(&mut q, &legacy_pools, &[], 1.0, 0.3, 2, 2).unwrap();
        assert_eq!(q.features[0].visibility[0], 0.0);
        // UE 0's far-off position must not have pulled the feature.
        assert!(q.features[0].position.distance(pos_before) < 1e-9);

        // New feature processed like the initial stage.
        let legacy_pools = vec![
            (0, vec![legacy(10.0, 0.0, 1.0, 0.9)]),
            (1, vec![legacy(10.0, 0.0, 1.0, 0.8)]),
        ];
        refine_stage_update(
            &mut q,
            &legacy_pools,
            &[(0, up(0.0, 5.0, 1.0, 0.5))],
            1.0,
            0.3,
            3,
            2,
        )
        .unwrap();
        assert_eq!(q.features.len(), 2);
    }

    #[test]
    fn refine_rejects_misaligned_pools() {
        let mut q = GlobalRadioMap {
            features: vec![GlobalFeature {
                position: Vec2::ZERO,
                variance: [1.0, 1.0],
                visibility: vec![0.5],
                confidence: 0.5,
                timestamp: 0,
            }],
            time: 0,
        };
        let res = refine_stage_update(&mut q, &[(0, vec![])], &[], 1.0, 0.3, 1, 1);
        assert!(matches!(res, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn prune_truth_cases() {
        let f = |ts, r| GlobalFeature {
            position: Vec2::ZERO,
            variance: [1.0, 1.0],
            visibility: vec![r],
            confidence: r,
            timestamp: ts,
        };
        let mut q = GlobalRadioMap {
            features: vec![f(10, 0.5), f(9, 0.5), f(9, 0.61)],
            time: 10,
        };
        prune(&mut q, 10, 0.3);
        let confs: Vec<f64> = q.features.iter().map(|g| g.confidence).collect();
        assert_eq!(confs, vec![0.5, 0.61]); // 0.25 <= 0.3 dropped, 0.305 kept
    }

    #[test]
    fn prune_is_idempotent() {
        let f = |ts, r| GlobalFeature {
            position: Vec2::ZERO,
            variance: [1.0, 1.0],
            visibility: vec![r],
            confidence: r,
            timestamp: ts,
        };
        let mut q = GlobalRadioMap {
            features: vec![f(10, 0.9), f(8, 0.9), f(5, 0.99)],
            time: 10,
        };
        prune(&mut q, 10, 0.3);
        let once = q.features.len();
        prune(&mut q, 10, 0.3);
        assert_eq!(q.features.len(), once);
    }

    #[test]
    fn upload_serialization_roundtrip() {
        let uploads = vec![Upload {
            ue: 2,
            features: vec![legacy(1.5, -2.5, 0.25, 0.8), up(0.0, 1.0, 4.0, 0.4)],
        }];
        let text = serde_json::to_string(&uploads).unwrap();
        let back: Vec<Upload> = serde_json::from_str(&text).unwrap();
        assert_eq!(back[0].ue, 2);
        assert_eq!(back[0].features.len(), 2);
        assert_eq!(back[0].features[0].position, Vec2::new(1.5, -2.5));
        assert!(back[0].features[0].legacy);
    }

    #[test]
    fn replay_matches_online_construction() {
        let steps = vec![
            vec![Upload {
                ue: 0,
                features: vec![up(5.0, 0.0, 1.0, 0.6)],
            }],
            vec![Upload {
                ue: 1,
                features: vec![up(5.1, 0.0, 0.5, 0.7)],
            }],
        ];
        let q = replay_init_stage(&steps, 1.0, 0.3, 2);
        assert_eq!(q.features.len(), 1);
        assert_eq!(q.features[0].visibility.len(), 2);
    }
}
