//! Narrowband mmWave channel synthesis and beamforming arithmetic.
//!
//! Both ends carry half-wavelength uniform linear arrays, so a steering
//! vector for azimuth `angle` has entries `exp(-i pi k cos(angle)) / sqrt(n)`.
//! The channel to one UE is the sum of rank-1 path terms
//! `g * a_ue(aoa) * a_bs(aod)^H`, and the downlink sum spectral efficiency
//! accumulates `log2(1 + SINR)` per UE, with interference from all other UEs'
//! beamformers passing through the victim's own channel and combiner.

use crate::geometry::PathGeometry;
use crate::{Error, Result};
use num_complex::Complex64;

/// Complex channel matrix of dimension `n_ue` x `n_bs` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n_ue: usize,
    n_bs: usize,
    data: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn zero(n_ue: usize, n_bs: usize) -> ChannelMatrix {
        ChannelMatrix {
            n_ue,
            n_bs,
            data: vec![Complex64::ZERO; n_ue * n_bs],
        }
    }

    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.n_bs + col]
    }

    /// `H * f` for a BS-side beamformer `f`.
    pub fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        if f.len() != self.n_bs {
            return Err(Error::InvalidArgument(format!(
                "beamformer length {} does not match {} BS antennas",
                f.len(),
                self.n_bs
            )));
        }
        let mut out = vec![Complex64::ZERO; self.n_ue];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.n_bs..(r + 1) * self.n_bs];
            *o = row.iter().zip(f).map(|(h, x)| h * x).sum();
        }
        Ok(out)
    }

    /// Frobenius norm; upper-bounds the operator norm used in gain checks.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Unit-norm ULA steering vector: entry `k` is `exp(-i pi k cos(angle)) / sqrt(n)`.
pub fn steering_vector(angle: f64, n: usize) -> Result<Vec<Complex64>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "steering vector needs at least one antenna".into(),
        ));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let phase = -std::f64::consts::PI * angle.cos();
    Ok((0..n)
        .map(|k| Complex64::from_polar(scale, phase * k as f64))
        .collect())
}

/// Sum of rank-1 path terms, `H = sum_l g_l a_ue(aoa_l) a_bs(aod_l)^H`.
pub fn synth_channel(paths: &[PathGeometry], n_ue: usize, n_bs: usize) -> ChannelMatrix {
    synth_channel_from_params(
        paths.iter().map(|p| (p.gain, p.aoa, p.aod)),
        n_ue,
        n_bs,
    )
}

/// Channel synthesis from raw `(gain, aoa, aod)` triples.
pub fn synth_channel_from_params(
    paths: impl IntoIterator<Item = (f64, f64, f64)>,
    n_ue: usize,
    n_bs: usize,
) -> ChannelMatrix {
    let mut h = ChannelMatrix::zero(n_ue, n_bs);
    for (gain, aoa, aod) in paths {
        let a_ue = steering_vector(aoa, n_ue).expect("n_ue >= 1");
        let a_bs = steering_vector(aod, n_bs).expect("n_bs >= 1");
        for r in 0..n_ue {
            for c in 0..n_bs {
                h.data[r * n_bs + c] += gain * a_ue[r] * a_bs[c].conj();
            }
        }
    }
    h
}

/// A predefined set of unit-norm beams on a regular angular grid.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub beams: Vec<Vec<Complex64>>,
    /// Angular resolution (rad) between adjacent beams.
    pub resolution: f64,
    /// Grid offset (in beams): beam `m` (1-based) points at `(m + offset) * resolution`.
    pub offset: f64,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// Sweeping codebook: `m` beams at angles `(k/m) pi`, `k = 1..=m`.
pub fn sweep_codebook(m: usize, n: usize) -> Codebook {
    let resolution = std::f64::consts::PI / m as f64;
    let beams = (1..=m)
        .map(|k| steering_vector(k as f64 * resolution, n).expect("n >= 1"))
        .collect();
    Codebook {
        beams,
        resolution,
        offset: 0.0,
    }
}

/// Squared magnitude of `w^H H f`.
pub fn beam_gain(w: &[Complex64], h: &ChannelMatrix, f: &[Complex64]) -> Result<f64> {
    if w.len() != h.n_ue() {
        return Err(Error::InvalidArgument(format!(
            "combiner length {} does not match {} UE antennas",
            w.len(),
            h.n_ue()
        )));
    }
    let hf = h.apply(f)?;
    let v: Complex64 = w.iter().zip(&hf).map(|(wi, x)| wi.conj() * x).sum();
    Ok(v.norm_sqr())
}

/// One UE's beam pair: BS-side beamformer `tx` and UE-side combiner `rx`.
#[derive(Debug, Clone)]
pub struct BeamPair {
    pub tx: Vec<Complex64>,
    pub rx: Vec<Complex64>,
}

/// Downlink sum spectral efficiency over all UEs (bits/s/Hz).
///
/// `channels[j]` and `pairs[j]` belong to UE `j`; interference at UE `j` sums
/// every other UE's beamformer through UE `j`'s channel and combiner.
pub fn sum_se(channels: &[ChannelMatrix], pairs: &[BeamPair], sigma2: f64) -> Result<f64> {
    if sigma2 <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise power must be positive (got {sigma2})"
        )));
    }
    if channels.len() != pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} channels but {} beam pairs",
            channels.len(),
            pairs.len()
        )));
    }
    let mut se = 0.0;
    for (j, (h, pj)) in channels.iter().zip(pairs).enumerate() {
        let signal = beam_gain(&pj.rx, h, &pj.tx)?;
        let mut interference = 0.0;
        for (i, pi) in pairs.iter().enumerate() {
            if i != j {
                interference += beam_gain(&pj.rx, h, &pi.tx)?;
            }
        }
        se += (1.0 + signal / (interference + sigma2)).log2();
    }
    Ok(se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::los_geometry;
    use crate::Vec2;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn norm(v: &[Complex64]) -> f64 {
        v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn steering_single_antenna() {
        let v = steering_vector(1.234, 1).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_broadside() {
        // cos(pi/2) = 0, so all phases vanish: (1/sqrt(2)) [1, 1].
        let v = steering_vector(FRAC_PI_2, 2).unwrap();
        let e = 1.0 / 2.0_f64.sqrt();
        for c in &v {
            assert!((c - Complex64::new(e, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_unit_norm() {
        for angle in [0.0, 0.3, 1.0, 2.5, PI] {
            assert!((norm(&steering_vector(angle, 4).unwrap()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_zero_antennas_rejected() {
        assert!(steering_vector(1.0, 0).is_err());
    }

    #[test]
    fn synth_empty_is_zero() {
        let h = synth_channel(&[], 3, 2);
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(h.get(r, c), Complex64::ZERO);
            }
        }
    }

    #[test]
    fn synth_scalar_path() {
        let p = los_geometry(Vec2::new(2.0, 0.0), Vec2::ZERO, 1.0).unwrap();
        let h = synth_channel_from_params([(0.5, p.aoa, p.aod)], 1, 1);
        assert!((h.get(0, 0) - Complex64::new(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn synth_is_linear_in_gains() {
        let (aoa, aod) = (0.8, 2.1);
        let one = synth_channel_from_params([(0.7 + 0.4, aoa, aod)], 3, 4);
        let two = synth_channel_from_params([(0.7, aoa, aod), (0.4, aoa, aod)], 3, 4);
        for r in 0..3 {
            for c in 0..4 {
                assert!((one.get(r, c) - two.get(r, c)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sweep_codebook_angles() {
        let cb = sweep_codebook(8, 4);
        assert_eq!(cb.len(), 8);
        assert!((cb.resolution - PI / 8.0).abs() < 1e-12);
        for (k, beam) in cb.beams.iter().enumerate() {
            assert!((norm(beam) - 1.0).abs() < 1e-12);
            let expect = steering_vector((k + 1) as f64 * PI / 8.0, 4).unwrap();
            for (a, b) in beam.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-12);
            }
        }
        let single = sweep_codebook(1, 4);
        assert_eq!(single.len(), 1);
        assert!((single.resolution - PI).abs() < 1e-12);
    }

    #[test]
    fn beam_gain_scalar() {
        let h = synth_channel_from_params([(2.0, FRAC_PI_2, FRAC_PI_2)], 1, 1);
        let one = vec![Complex64::new(1.0, 0.0)];
        assert!((beam_gain(&one, &h, &one).unwrap() - 4.0).abs() < 1e-12);
        let zero = ChannelMatrix::zero(1, 1);
        assert_eq!(beam_gain(&one, &zero, &one).unwrap(), 0.0);
    }

    #[test]
    fn beam_gain_scales_quadratically() {
        let h1 = synth_channel_from_params([(1.0, 0.7, 1.9)], 4, 4);
        let h3 = synth_channel_from_params([(3.0, 0.7, 1.9)], 4, 4);
        let w = steering_vector(0.7, 4).unwrap();
        let f = steering_vector(1.9, 4).unwrap();
        let g1 = beam_gain(&w, &h1, &f).unwrap();
        let g3 = beam_gain(&w, &h3, &f).unwrap();
        assert!((g3 - 9.0 * g1).abs() < 1e-9 * g3.max(1.0));
    }

    #[test]
    fn beam_gain_dimension_mismatch() {
        let h = ChannelMatrix::zero(2, 2);
        let v1 = vec![Complex64::new(1.0, 0.0)];
        let v2 = vec![Complex64::new(1.0, 0.0); 2];
        assert!(beam_gain(&v1, &h, &v2).is_err());
        assert!(beam_gain(&v2, &h, &v1).is_err());
    }

    #[test]
    fn beam_gain_phase_invariance() {
        let h = synth_channel_from_params([(1.3, 0.4, 2.0)], 4, 4);
        let w = steering_vector(0.5, 4).unwrap();
        let f = steering_vector(2.1, 4).unwrap();
        let g = beam_gain(&w, &h, &f).unwrap();
        let rot = Complex64::from_polar(1.0, 1.234);
        let w_rot: Vec<_> = w.iter().map(|c| c * rot).collect();
        let f_rot: Vec<_> = f.iter().map(|c| c * rot).collect();
        assert!((beam_gain(&w_rot, &h, &f_rot).unwrap() - g).abs() < 1e-12 * g.max(1.0));
    }

    #[test]
    fn beam_gain_operator_norm_bound() {
        let h = synth_channel_from_params([(1.1, 0.4, 2.0), (0.6, 1.2, 0.9)], 4, 4);
        let bound = h.frobenius_norm().powi(2);
        for k in 0..8 {
            let w = steering_vector(0.2 + 0.35 * k as f64, 4).unwrap();
            let f = steering_vector(2.9 - 0.3 * k as f64, 4).unwrap();
            assert!(beam_gain(&w, &h, &f).unwrap() <= bound + 1e-9);
        }
    }

    #[test]
    fn sum_se_single_user() {
        let h = synth_channel_from_params([(1.0, FRAC_PI_2, FRAC_PI_2)], 1, 1);
        let one = vec![Complex64::new(1.0, 0.0)];
        let se = sum_se(
            &[h],
            &[BeamPair {
                tx: one.clone(),
                rx: one,
            }],
            1.0,
        )
        .unwrap();
        assert!((se - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sum_se_symmetric_two_users() {
        // Signal 1, interference 1, noise 1 per UE: 2 log2(1.5).
        let one = vec![Complex64::new(1.0, 0.0)];
        let h = synth_channel_from_params([(1.0, FRAC_PI_2, FRAC_PI_2)], 1, 1);
        let pairs = vec![
            BeamPair {
                tx: one.clone(),
                rx: one.clone(),
            },
            BeamPair {
                tx: one.clone(),
                rx: one.clone(),
            },
        ];
        let se = sum_se(&[h.clone(), h], &pairs, 1.0).unwrap();
        assert!((se - 2.0 * 1.5_f64.log2()).abs() < 1e-12);
        assert!((se - 1.16993).abs() < 1e-5);
    }

    #[test]
    fn sum_se_zero_channels() {
        let one = vec![Complex64::new(1.0, 0.0)];
        let se = sum_se(
            &[ChannelMatrix::zero(1, 1)],
            &[BeamPair {
                tx: one.clone(),
                rx: one,
            }],
            1.0,
        )
        .unwrap();
        assert_eq!(se, 0.0);
    }

    #[test]
    fn sum_se_rejects_bad_noise() {
        assert!(sum_se(&[], &[], 0.0).is_err());
        assert!(sum_se(&[], &[], -1.0).is_err());
    }

    #[test]
    fn removing_interferer_never_hurts() {
        let n = 4;
        let h = synth_channel_from_params([(1.0, 0.9, 1.4)], n, n);
        let w = steering_vector(0.9, n).unwrap();
        let f = steering_vector(1.4, n).unwrap();
        let f_int = steering_vector(1.5, n).unwrap();
        let with = sum_se(
            &[h.clone(), h.clone()],
            &[
                BeamPair {
                    tx: f.clone(),
                    rx: w.clone(),
                },
                BeamPair {
                    tx: f_int,
                    rx: w.clone(),
                },
            ],
            1.0,
        )
        .unwrap();
        let solo = sum_se(&[h], &[BeamPair { tx: f, rx: w }], 1.0).unwrap();
        // First UE's SINR term alone cannot exceed its interference-free value.
        assert!(with <= 2.0 * solo + 1e-12);
    }
}
