//! Camera error-table training and multi-modal localization.
//!
//! A fixed camera localizes detected objects from depth, with an error that
//! depends strongly on where in the image the object appears. The error model
//! is learned offline: the image is tiled into blocks and each block stores
//! the per-axis RMS localization error of the training samples that landed in
//! it. Online, a UE's SLAM estimate is associated with the nearest detection
//! and, when both the SLAM and IMU estimates agree with it, fused per axis by
//! inverse variance using the table's variance at the detection's pixel.

use crate::local_slam::UeGaussian;
use crate::sensors::Detection;
use crate::vec2::Vec2;
use crate::{Error, Result};
use std::io::BufRead;
use std::io::BufReader;
use std::path::Path;

/// Pixel-indexed localization error table.
///
/// Blocks are indexed with ceiling division (`block = ceil(u / u_cell)`,
/// 1-based); entries store per-axis RMS errors in meters. Blocks that saw no
/// training samples are filled from their nearest trained block and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub image_size: (u32, u32),
    pub u_cell: u32,
    pub v_cell: u32,
    cols: usize,
    rows: usize,
    e_x: Vec<f64>,
    e_y: Vec<f64>,
    counts: Vec<u64>,
}

/// One offline training sample.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSample {
    pub pixel: (f64, f64),
    pub estimate: Vec2,
    pub truth: Vec2,
}

impl ErrorTable {
    fn grid(image_size: (u32, u32), u_cell: u32, v_cell: u32) -> Result<(usize, usize)> {
        if u_cell == 0 || v_cell == 0 {
            return Err(Error::InvalidArgument("block sizes must be positive".into()));
        }
        let cols = image_size.0.div_ceil(u_cell) as usize;
        let rows = image_size.1.div_ceil(v_cell) as usize;
        if cols == 0 || rows == 0 {
            return Err(Error::InvalidArgument(
                "image must contain at least one block".into(),
            ));
        }
        Ok((cols, rows))
    }

    /// 1-based ceiling block index of a pixel, clamped into the grid at the
    /// left/top edge where `ceil(0 / c) = 0` would otherwise escape it.
    fn block_of(&self, u: f64, v: f64) -> Result<(usize, usize)> {
        let (w, h) = self.image_size;
        if !(0.0..=w as f64).contains(&u) || !(0.0..=h as f64).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "pixel ({u}, {v}) outside the {w}x{h} image"
            )));
        }
        let bu = ((u / self.u_cell as f64).ceil() as usize).clamp(1, self.cols);
        let bv = ((v / self.v_cell as f64).ceil() as usize).clamp(1, self.rows);
        Ok((bu, bv))
    }

    fn idx(&self, bu: usize, bv: usize) -> usize {
        (bv - 1) * self.cols + (bu - 1)
    }

    /// Per-axis variance at a pixel: the squared table value of the
    /// containing block.
    pub fn lookup_variance(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        let (bu, bv) = self.block_of(u, v)?;
        let i = self.idx(bu, bv);
        Ok((self.e_x[i] * self.e_x[i], self.e_y[i] * self.e_y[i]))
    }

    /// Per-axis RMS error at a pixel (the raw table entries).
    pub fn lookup_error(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        let (bu, bv) = self.block_of(u, v)?;
        let i = self.idx(bu, bv);
        Ok((self.e_x[i], self.e_y[i]))
    }

    /// Training sample count of the block containing a pixel; zero marks a
    /// block whose value was filled from a neighbour.
    pub fn sample_count(&self, u: f64, v: f64) -> Result<u64> {
        let (bu, bv) = self.block_of(u, v)?;
        Ok(self.counts[self.idx(bu, bv)])
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    /// Build the table analytically from a known error surface, sampling the
    /// surface at block centers. Serves as the ideal calibration when no
    /// trained table is supplied.
    pub fn from_surface(
        cam: &crate::sensors::CameraModel,
        surface: &crate::sensors::RadialErrorSurface,
        u_cell: u32,
        v_cell: u32,
    ) -> Result<ErrorTable> {
        let (cols, rows) = Self::grid(cam.image_size, u_cell, v_cell)?;
        let mut e = Vec::with_capacity(cols * rows);
        for bv in 1..=rows {
            for bu in 1..=cols {
                let u = ((bu as f64 - 0.5) * u_cell as f64).min(cam.image_size.0 as f64);
                let v = ((bv as f64 - 0.5) * v_cell as f64).min(cam.image_size.1 as f64);
                e.push(surface.sigma(cam, u, v));
            }
        }
        Ok(ErrorTable {
            image_size: cam.image_size,
            u_cell,
            v_cell,
            cols,
            rows,
            e_x: e.clone(),
            e_y: e,
            counts: vec![1; cols * rows],
        })
    }

    // ── Versioned flat-file format ─────────────────────────────────────
    //
    //   coopslam-error-table v1
    //   image <W> <H>
    //   cell <u_cell> <v_cell>
    //   grid <cols> <rows>
    //   <e_x> <e_y> <count>      (cols*rows lines, row-major)

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("coopslam-error-table v1\n");
        out.push_str(&format!(
            "image {} {}\n",
            self.image_size.0, self.image_size.1
        ));
        out.push_str(&format!("cell {} {}\n", self.u_cell, self.v_cell));
        out.push_str(&format!("grid {} {}\n", self.cols, self.rows));
        for i in 0..self.cols * self.rows {
            out.push_str(&format!(
                "{} {} {}\n",
                self.e_x[i], self.e_y[i], self.counts[i]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<ErrorTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut next_line = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()
                .map_err(|e| Error::io(path, e))?
                .ok_or_else(|| Error::InvalidArgument(format!("error table truncated at {what}")))
        };
        let header = next_line("header")?;
        if header.trim() != "coopslam-error-table v1" {
            return Err(Error::InvalidArgument(format!(
                "unsupported error-table header: {header:?}"
            )));
        }
        let parse_pair = |line: &str, tag: &str| -> Result<(u64, u64)> {
            let mut it = line.split_whitespace();
            let front = it.next().unwrap_or_default();
            if front != tag {
                return Err(Error::InvalidArgument(format!(
                    "expected `{tag}` line, found {line:?}"
                )));
            }
            let a = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad `{tag}` line: {line:?}")))?;
            let b = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad `{tag}` line: {line:?}")))?;
            Ok((a, b))
        };
        let (w, h) = parse_pair(&next_line("image")?, "image")?;
        let (uc, vc) = parse_pair(&next_line("cell")?, "cell")?;
        let (cols, rows) = parse_pair(&next_line("grid")?, "grid")?;
        let (cols, rows) = (cols as usize, rows as usize);
        let mut e_x = Vec::with_capacity(cols * rows);
        let mut e_y = Vec::with_capacity(cols * rows);
        let mut counts = Vec::with_capacity(cols * rows);
        for i in 0..cols * rows {
            let line = next_line(&format!("block {i}"))?;
            let mut it = line.split_whitespace();
            let mut field = |name: &str| -> Result<f64> {
                it.next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("bad {name} in block line: {line:?}"))
                    })
            };
            e_x.push(field("e_x")?);
            e_y.push(field("e_y")?);
            counts.push(field("count")? as u64);
        }
        Ok(ErrorTable {
            image_size: (w as u32, h as u32),
            u_cell: uc as u32,
            v_cell: vc as u32,
            cols,
            rows,
            e_x,
            e_y,
            counts,
        })
    }
}

/// Train the block table: per-block per-axis RMS error over the samples whose
/// pixel falls in the block; empty blocks are filled from the nearest
/// nonempty block (by block-center distance) and keep a zero sample count.
pub fn train_error_table(
    samples: &[TrainingSample],
    image_size: (u32, u32),
    u_cell: u32,
    v_cell: u32,
) -> Result<ErrorTable> {
    let (cols, rows) = ErrorTable::grid(image_size, u_cell, v_cell)?;
    let mut table = ErrorTable {
        image_size,
        u_cell,
        v_cell,
        cols,
        rows,
        e_x: vec![0.0; cols * rows],
        e_y: vec![0.0; cols * rows],
        counts: vec![0; cols * rows],
    };
    let mut sq_x = vec![0.0; cols * rows];
    let mut sq_y = vec![0.0; cols * rows];
    let mut used = 0u64;
    for s in samples {
        let Ok((bu, bv)) = table.block_of(s.pixel.0, s.pixel.1) else {
            continue; // out-of-image sample; ignore
        };
        let i = table.idx(bu, bv);
        let dx = s.estimate.x - s.truth.x;
        let dy = s.estimate.y - s.truth.y;
        sq_x[i] += dx * dx;
        sq_y[i] += dy * dy;
        table.counts[i] += 1;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Training(
            "no training samples fall inside the image".into(),
        ));
    }
    for i in 0..cols * rows {
        if table.counts[i] > 0 {
            table.e_x[i] = (sq_x[i] / table.counts[i] as f64).sqrt();
            table.e_y[i] = (sq_y[i] / table.counts[i] as f64).sqrt();
        }
    }
    // Nearest-nonempty fill for unseen blocks.
    let nonempty: Vec<(usize, f64, f64)> = (0..cols * rows)
        .filter(|&i| table.counts[i] > 0)
        .map(|i| {
            let cx = (i % cols) as f64 + 0.5;
            let cy = (i / cols) as f64 + 0.5;
            (i, cx, cy)
        })
        .collect();
    for i in 0..cols * rows {
        if table.counts[i] > 0 {
            continue;
        }
        let cx = (i % cols) as f64 + 0.5;
        let cy = (i / cols) as f64 + 0.5;
        let (src, _, _) = nonempty
            .iter()
            .min_by(|a, b| {
                let da = (a.1 - cx).powi(2) + (a.2 - cy).powi(2);
                let db = (b.1 - cx).powi(2) + (b.2 - cy).powi(2);
                da.partial_cmp(&db).unwrap()
            })
            .copied()
            .expect("at least one nonempty block");
        table.e_x[i] = table.e_x[src];
        table.e_y[i] = table.e_y[src];
    }
    Ok(table)
}

/// A UE location after the multi-modal step.
#[derive(Debug, Clone, Copy)]
pub struct FusedLocation {
    pub position: Vec2,
    /// True when a camera detection was fused in; false for SLAM-only.
    pub fused: bool,
    /// Index of the matched detection, when fused.
    pub detection: Option<usize>,
}

/// Nearest-detection association for one UE: the closest detection to the
/// SLAM estimate, accepted only when both the SLAM-detection and
/// IMU-detection distances stay below the threshold.
pub fn associate_ue_object(
    slam_mean: Vec2,
    imu_prediction: Vec2,
    detections: &[Detection],
    d_th: f64,
) -> Option<usize> {
    let (idx, d_slam) = detections
        .iter()
        .enumerate()
        .map(|(i, d)| (i, d.estimate.distance(slam_mean)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
    let d_imu = detections[idx].estimate.distance(imu_prediction);
    if d_slam.max(d_imu) < d_th {
        Some(idx)
    } else {
        None
    }
}

/// Per-axis inverse-variance fusion of the SLAM estimate with a vision
/// estimate.
pub fn fuse_location(
    slam: &UeGaussian,
    vis_position: Vec2,
    vis_variance: (f64, f64),
) -> Result<FusedLocation> {
    let (sx, sy) = (slam.variance[0], slam.variance[1]);
    let (vx, vy) = vis_variance;
    if sx <= 0.0 || sy <= 0.0 || vx <= 0.0 || vy <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "fusion needs positive variances (slam [{sx}, {sy}], vision [{vx}, {vy}])"
        )));
    }
    let x = (sx * vis_position.x + vx * slam.mean.x) / (sx + vx);
    let y = (sy * vis_position.y + vy * slam.mean.y) / (sy + vy);
    Ok(FusedLocation {
        position: Vec2::new(x, y),
        fused: true,
        detection: None,
    })
}

/// One multi-modal localization pass over all UEs, in index order. UEs whose
/// association fails keep their SLAM estimate. Two UEs may claim the same
/// detection unless `unique_detections` is set.
pub fn multimodal_step(
    slam: &[UeGaussian],
    imu_predictions: &[Vec2],
    detections: &[Detection],
    table: &ErrorTable,
    d_th: f64,
    unique_detections: bool,
) -> Result<Vec<FusedLocation>> {
    let mut out = Vec::with_capacity(slam.len());
    let mut claimed = vec![false; detections.len()];
    for (j, s) in slam.iter().enumerate() {
        let imu = imu_predictions.get(j).copied().unwrap_or(s.mean);
        let available: Vec<(usize, Detection)> = detections
            .iter()
            .enumerate()
            .filter(|(i, _)| !(unique_detections && claimed[*i]))
            .map(|(i, d)| (i, *d))
            .collect();
        let dets: Vec<Detection> = available.iter().map(|(_, d)| *d).collect();
        match associate_ue_object(s.mean, imu, &dets, d_th) {
            Some(local_idx) => {
                let (orig_idx, det) = available[local_idx];
                let var = table.lookup_variance(det.pixel.0, det.pixel.1)?;
                let mut fused = fuse_location(s, det.estimate, var)?;
                fused.detection = Some(orig_idx);
                claimed[orig_idx] = true;
                out.push(fused);
            }
            None => out.push(FusedLocation {
                position: s.mean,
                fused: false,
                detection: None,
            }),
        }
    }
    Ok(out)
}
