//! Ground-truth 2-D propagation geometry.
//!
//! The base station (physical anchor, PA) reaches a UE through the direct LoS
//! path and through single-bounce reflections off flat walls. Each wall turns
//! the PA into a virtual anchor (VA): the mirror image of the PA across the
//! wall line. An NLoS path exists whenever the segment from the VA to the UE
//! crosses the generating wall segment; the crossing point is the physical
//! reflection point.
//!
//! Walls are treated as infinite lines for mirroring but as finite segments
//! for deciding whether a reflection actually occurs.

use crate::vec2::{wrap_angle, Vec2};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A flat reflecting wall segment with a dielectric constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    /// First endpoint (m).
    pub a: Vec2,
    /// Second endpoint (m).
    pub b: Vec2,
    /// Dielectric constant; must exceed 1 so the reflection coefficient is
    /// real for every incidence angle.
    pub epsilon: f64,
}

impl Wall {
    pub fn new(a: Vec2, b: Vec2, epsilon: f64) -> Result<Wall> {
        let wall = Wall { a, b, epsilon };
        wall.validate()?;
        Ok(wall)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidGeometry("wall endpoints not finite".into()));
        }
        if (self.b - self.a).norm_sq() < 1e-20 {
            return Err(Error::InvalidGeometry(
                "wall endpoints coincide (degenerate wall)".into(),
            ));
        }
        if !(self.epsilon > 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "wall dielectric constant must exceed 1 (got {})",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Intersection of the segment `p`-`q` with this wall, requiring the
    /// crossing to lie strictly within both segments (endpoints tolerated).
    /// Returns `None` when the segments do not cross.
    pub fn intersect_segment(&self, p: Vec2, q: Vec2) -> Option<Vec2> {
        let d = q - p;
        let e = self.b - self.a;
        let denom = d.x * e.y - d.y * e.x;
        if denom.abs() < 1e-15 {
            return None; // parallel or degenerate
        }
        let w = self.a - p;
        let s = (w.x * e.y - w.y * e.x) / denom; // position along p->q
        let u = (w.x * d.y - w.y * d.x) / denom; // position along a->b
        let eps = 1e-12;
        if s < -eps || s > 1.0 + eps || u < -eps || u > 1.0 + eps {
            return None;
        }
        Some(p + d * s)
    }
}

/// The PA plus the VAs generated by the site walls. Ground truth only.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub pa: Vec2,
    pub vas: Vec<VirtualAnchor>,
}

/// One virtual anchor together with the wall that generates it.
#[derive(Debug, Clone)]
pub struct VirtualAnchor {
    pub position: Vec2,
    pub wall: Wall,
}

/// Identifies an anchor within an [`AnchorSet`]. VA indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnchorId {
    Pa,
    Va(usize),
}

impl std::fmt::Display for AnchorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnchorId::Pa => write!(f, "pa"),
            AnchorId::Va(i) => write!(f, "va{}", i + 1),
        }
    }
}

impl AnchorSet {
    /// Mirror the PA across each wall to obtain the VA set.
    pub fn from_walls(pa: Vec2, walls: &[Wall]) -> Result<AnchorSet> {
        let vas = walls
            .iter()
            .map(|w| {
                Ok(VirtualAnchor {
                    position: mirror_anchor(pa, w)?,
                    wall: *w,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AnchorSet { pa, vas })
    }

    pub fn position(&self, id: AnchorId) -> Option<Vec2> {
        match id {
            AnchorId::Pa => Some(self.pa),
            AnchorId::Va(i) => self.vas.get(i).map(|v| v.position),
        }
    }

    /// All anchor ids in canonical order: PA first, then VA1, VA2, ...
    pub fn ids(&self) -> impl Iterator<Item = AnchorId> + '_ {
        std::iter::once(AnchorId::Pa).chain((0..self.vas.len()).map(AnchorId::Va))
    }
}

/// Geometry of one propagation path between the BS and a UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGeometry {
    /// Azimuth angle of arrival at the UE (rad, in (-pi, pi]).
    pub aoa: f64,
    /// Azimuth angle of departure at the BS (rad, in (-pi, pi]).
    pub aod: f64,
    /// Non-negative path gain.
    pub gain: f64,
    /// Reflection data; `None` for the LoS path.
    pub reflection: Option<Reflection>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflection {
    /// Point where the path bounces off the wall (m).
    pub point: Vec2,
    /// Reflection angle gamma = (pi - |aoa - aod|) / 2, in (0, pi/2].
    pub angle: f64,
}

impl PathGeometry {
    pub fn is_los(&self) -> bool {
        self.reflection.is_none()
    }
}

/// Mirror `pa` across the infinite line through `wall`.
pub fn mirror_anchor(pa: Vec2, wall: &Wall) -> Result<Vec2> {
    let e = wall.b - wall.a;
    let len_sq = e.norm_sq();
    if len_sq < 1e-20 {
        return Err(Error::InvalidGeometry(
            "cannot mirror across a degenerate wall".into(),
        ));
    }
    let w = pa - wall.a;
    let proj = wall.a + e * (w.dot(e) / len_sq);
    Ok(proj + (proj - pa))
}

/// LoS path geometry: both azimuths point from the PA toward the UE and the
/// gain decays with distance, `g = kappa / ||ue - pa||`.
pub fn los_geometry(ue: Vec2, pa: Vec2, kappa: f64) -> Result<PathGeometry> {
    let d = ue - pa;
    let dist = d.norm();
    if dist < 1e-12 {
        return Err(Error::InvalidGeometry(
            "LoS path undefined: UE coincides with the PA".into(),
        ));
    }
    let angle = d.angle();
    Ok(PathGeometry {
        aoa: angle,
        aod: angle,
        gain: kappa / dist,
        reflection: None,
    })
}

/// Single-bounce NLoS path geometry via the image-source model.
///
/// The AoA points from the VA toward the UE; the AoD points from the PA
/// toward the reflection point. The gain combines free-space decay over the
/// image-source distance with the dielectric reflection loss
/// `|(sin g - sqrt(eps - cos^2 g)) / (sin g + sqrt(eps - cos^2 g))|`.
///
/// Returns `Ok(None)` when the VA-to-UE segment misses the wall segment (the
/// path is blocked and simply does not exist).
pub fn nlos_geometry(
    ue: Vec2,
    va: Vec2,
    pa: Vec2,
    wall: &Wall,
    kappa: f64,
) -> Result<Option<PathGeometry>> {
    let d = ue - va;
    let dist = d.norm();
    if dist < 1e-12 {
        return Err(Error::InvalidGeometry(
            "NLoS path undefined: UE coincides with the VA".into(),
        ));
    }
    let point = match wall.intersect_segment(va, ue) {
        Some(p) => p,
        None => return Ok(None),
    };
    let aoa = d.angle();
    let aod = (point - pa).angle();
    let gamma = reflection_angle(aoa, aod);
    let coeff = reflection_coefficient(gamma, wall.epsilon);
    Ok(Some(PathGeometry {
        aoa,
        aod,
        gain: kappa * coeff / dist,
        reflection: Some(Reflection {
            point,
            angle: gamma,
        }),
    }))
}

/// Reflection angle gamma = (pi - |aoa - aod|) / 2 with the azimuth
/// difference wrapped into [0, pi].
pub fn reflection_angle(aoa: f64, aod: f64) -> f64 {
    let diff = wrap_angle(aoa - aod).abs();
    (std::f64::consts::PI - diff) / 2.0
}

/// Magnitude of the dielectric reflection coefficient at incidence `gamma`.
pub fn reflection_coefficient(gamma: f64, epsilon: f64) -> f64 {
    let s = gamma.sin();
    let root = (epsilon - gamma.cos().powi(2)).sqrt();
    ((s - root) / (s + root)).abs()
}

// ─── Field-of-view schedules ───────────────────────────────────────────────

/// Half-open visibility window `[from, until)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub from: f64,
    pub until: f64,
}

impl TimeWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.from && t < self.until
    }
}

/// Per-UE visibility schedule: which anchors this UE can observe and when.
/// Anchors without an entry are never visible to the UE.
#[derive(Debug, Clone, Default)]
pub struct UeFov {
    entries: Vec<(AnchorId, Vec<TimeWindow>)>,
}

impl UeFov {
    /// Anchor visible over the whole run.
    pub fn always(mut self, anchor: AnchorId) -> Self {
        self.entries.push((
            anchor,
            vec![TimeWindow {
                from: 0.0,
                until: f64::INFINITY,
            }],
        ));
        self
    }

    /// Anchor visible only inside the given windows.
    pub fn windows(mut self, anchor: AnchorId, windows: Vec<TimeWindow>) -> Self {
        self.entries.push((anchor, windows));
        self
    }

    pub fn visible(&self, anchor: AnchorId, t: f64) -> bool {
        self.entries
            .iter()
            .filter(|(a, _)| *a == anchor)
            .any(|(_, ws)| ws.iter().any(|w| w.contains(t)))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Schedules for every UE in the scenario, indexed by UE.
#[derive(Debug, Clone, Default)]
pub struct FovSchedule {
    pub ues: Vec<UeFov>,
}

impl FovSchedule {
    pub fn ue(&self, j: usize) -> Option<&UeFov> {
        self.ues.get(j)
    }
}

/// Geometry of every path the given UE observes at time `t`: anchors in the
/// UE's schedule at `t` whose paths are not blocked.
pub fn visible_paths(
    ue: Vec2,
    anchors: &AnchorSet,
    fov: &UeFov,
    t: f64,
    kappa_los: f64,
    kappa_nlos: f64,
) -> Result<Vec<(AnchorId, PathGeometry)>> {
    let mut out = Vec::new();
    for id in anchors.ids() {
        if !fov.visible(id, t) {
            continue;
        }
        match id {
            AnchorId::Pa => {
                out.push((id, los_geometry(ue, anchors.pa, kappa_los)?));
            }
            AnchorId::Va(i) => {
                let va = &anchors.vas[i];
                if let Some(path) = nlos_geometry(ue, va.position, anchors.pa, &va.wall, kappa_nlos)?
                {
                    out.push((id, path));
                }
            }
        }
    }
    Ok(out)
}
