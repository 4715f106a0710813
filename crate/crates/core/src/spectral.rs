//! Fourier-space diagnostics: radially averaged power spectra, the analytic
//! mixture spectrum of the linear noising path, progression maps and
//! power-law fits.
//!
//! Frequencies are in cycles per image side. Power at frequency `k` of an
//! `N x N` image is `|X_k|^2 / N^2`, so unit white noise has a flat spectrum
//! of 1 and the spectrum sums to `N^2 * mean(x^2)` over all bins.

use std::fmt::Write as _;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::GrayImage;

/// Bins where the endpoint log-powers differ by less than this are degenerate.
pub const DEGENERATE_SPAN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSpectrum {
    pub freq: Vec<f64>,
    pub power: Vec<f64>,
    /// Number of Fourier coefficients per bin for a single image.
    pub multiplicity: Vec<usize>,
    pub sample_count: usize,
}

impl RadialSpectrum {
    pub fn bins(&self) -> usize {
        self.freq.len()
    }

    /// Indices of bins with `lo <= f <= hi` and `f > 0`.
    pub fn band_indices(&self, lo: f64, hi: f64) -> Vec<usize> {
        self.freq
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0.0 && f >= lo && f <= hi)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq,power\n");
        for (f, p) in self.freq.iter().zip(&self.power) {
            let _ = writeln!(out, "{f},{p:e}");
        }
        out
    }
}

/// Largest rounded radius on an `n x n` frequency grid.
pub fn max_radius(side: usize) -> usize {
    let h = (side / 2) as f64;
    (2.0 * h * h).sqrt().round() as usize
}

/// Power spectrum `|X_k|^2 / N^2` of one square image, in standard FFT order.
pub fn power_spectrum_2d(image: &Array2<f64>, planner: &mut FftPlanner<f64>) -> Result<Array2<f64>> {
    let (h, w) = image.dim();
    if h != w {
        return Err(Error::Shape(format!("radial PSD needs a square image, got {h}x{w}")));
    }
    let spec = fft2(image, planner);
    let norm = (h * w) as f64;
    Ok(spec.mapv(|c| c.norm_sqr() / norm))
}

pub(crate) fn fft2(image: &Array2<f64>, planner: &mut FftPlanner<f64>) -> Array2<Complex<f64>> {
    let (h, w) = image.dim();
    let mut buf: Array2<Complex<f64>> = image.mapv(|v| Complex::new(v, 0.0));
    let row_fft = planner.plan_fft_forward(w);
    for mut row in buf.rows_mut() {
        let mut tmp: Vec<Complex<f64>> = row.to_vec();
        row_fft.process(&mut tmp);
        row.iter_mut().zip(tmp).for_each(|(d, s)| *d = s);
    }
    let col_fft = planner.plan_fft_forward(h);
    for mut col in buf.columns_mut() {
        let mut tmp: Vec<Complex<f64>> = col.to_vec();
        col_fft.process(&mut tmp);
        col.iter_mut().zip(tmp).for_each(|(d, s)| *d = s);
    }
    buf
}

pub(crate) fn ifft2(spec: &Array2<Complex<f64>>, planner: &mut FftPlanner<f64>) -> Array2<Complex<f64>> {
    let (h, w) = spec.dim();
    let mut buf = spec.clone();
    let row_fft = planner.plan_fft_inverse(w);
    for mut row in buf.rows_mut() {
        let mut tmp: Vec<Complex<f64>> = row.to_vec();
        row_fft.process(&mut tmp);
        row.iter_mut().zip(tmp).for_each(|(d, s)| *d = s);
    }
    let col_fft = planner.plan_fft_inverse(h);
    for mut col in buf.columns_mut() {
        let mut tmp: Vec<Complex<f64>> = col.to_vec();
        col_fft.process(&mut tmp);
        col.iter_mut().zip(tmp).for_each(|(d, s)| *d = s);
    }
    let n = (h * w) as f64;
    buf.mapv_inplace(|c| c / n);
    buf
}

/// Signed frequency of FFT index `i` on an axis of length `n`.
#[inline]
pub(crate) fn signed_freq(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Radially averaged PSD of a batch of square images.
///
/// Coefficients are binned by rounded integer radius; radii `>= bins` are
/// dropped. Bin 0 holds only the DC term.
pub fn radial_psd(images: &[Array2<f64>], bins: usize) -> Result<RadialSpectrum> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptyInput("radial PSD needs at least one image".into()))?;
    let (side, w) = first.dim();
    if side != w {
        return Err(Error::Shape(format!("radial PSD needs square images, got {side}x{w}")));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 bins, got {bins}")));
    }
    let bins = bins.min(max_radius(side) + 1);
    let mut bin_of = Array2::<usize>::zeros((side, side));
    let mut multiplicity = vec![0usize; bins];
    for ((i, j), b) in bin_of.indexed_iter_mut() {
        let fy = signed_freq(i, side);
        let fx = signed_freq(j, side);
        let r = (fx * fx + fy * fy).sqrt().round() as usize;
        *b = r;
        if r < bins {
            multiplicity[r] += 1;
        }
    }
    let mut planner = FftPlanner::new();
    let mut sums = vec![0.0f64; bins];
    for img in images {
        if img.dim() != (side, side) {
            return Err(Error::Shape(format!("batch mixes {side}x{side} with {:?}", img.dim())));
        }
        let ps = power_spectrum_2d(img, &mut planner)?;
        for (p, &b) in ps.iter().zip(bin_of.iter()) {
            if b < bins {
                sums[b] += p;
            }
        }
    }
    let n = images.len() as f64;
    let power = sums
        .iter()
        .zip(&multiplicity)
        .map(|(&s, &m)| if m == 0 { 0.0 } else { s / (m as f64 * n) })
        .collect();
    Ok(RadialSpectrum {
        freq: (0..bins).map(|r| r as f64).collect(),
        power,
        multiplicity,
        sample_count: images.len(),
    })
}

/// Mean PSD of `(1 - t) x + t eps` for data PSD `C / f^omega` and unit white noise.
pub fn theoretical_psd(f: f64, t: f64, c: f64, omega: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::InvalidFrequency(f));
    }
    crate::dynamic::check_time(t)?;
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "PSD scale C must be positive, got {c}"
        )));
    }
    let a = 1.0 - t;
    Ok(a * a * c / f.powf(omega) + t * t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionMap {
    pub times: Vec<f64>,
    pub freq: Vec<f64>,
    /// `gamma[i][j]` for `times[i]`, `freq[j]`.
    pub gamma: Vec<Vec<f64>>,
    pub degenerate: Vec<bool>,
}

impl ProgressionMap {
    /// Builds the map from log-powers `s(t)_f` given per time, sorted by time.
    fn from_log_power(times: Vec<f64>, freq: Vec<f64>, log_power: Vec<Vec<f64>>) -> Result<Self> {
        let i0 = times
            .iter()
            .position(|&t| t == 0.0)
            .ok_or(Error::MissingEndpoint(0.0))?;
        let i1 = times
            .iter()
            .position(|&t| t == 1.0)
            .ok_or(Error::MissingEndpoint(1.0))?;
        let nf = freq.len();
        let mut degenerate = vec![false; nf];
        let mut gamma = vec![vec![0.0; nf]; times.len()];
        for j in 0..nf {
            let s0 = log_power[i0][j];
            let span = log_power[i1][j] - s0;
            if !(span.abs() >= DEGENERATE_SPAN) {
                degenerate[j] = true;
                continue;
            }
            for (i, row) in gamma.iter_mut().enumerate() {
                row[j] = (log_power[i][j] - s0) / span;
            }
        }
        for (i, row) in gamma.iter().enumerate() {
            if let Some(j) = row.iter().position(|g| !g.is_finite()) {
                return Err(Error::numeric(
                    "progression map",
                    format!("non-finite gamma at t={}, f={}", times[i], freq[j]),
                ));
            }
        }
        Ok(Self {
            times,
            freq,
            gamma,
            degenerate,
        })
    }

    /// Analytic map from [`theoretical_psd`] over the given grid.
    pub fn theoretical(times: &[f64], freq: &[f64], c: f64, omega: f64) -> Result<Self> {
        let mut times = times.to_vec();
        times.sort_by(f64::total_cmp);
        let log_power = times
            .iter()
            .map(|&t| {
                freq.iter()
                    .map(|&f| theoretical_psd(f, t, c, omega).map(f64::ln))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_log_power(times, freq.to_vec(), log_power)
    }

    /// Elapsed sampling time `1 - t` at which frequency column `j` first
    /// falls to `gamma = 0.5` when walking from `t = 1` toward `t = 0`,
    /// linearly interpolated between grid times. Small values mean the mode
    /// settles early in sampling.
    pub fn half_progress_elapsed(&self, j: usize) -> Option<f64> {
        let n = self.times.len();
        for i in (0..n - 1).rev() {
            let (t_hi, g_hi) = (self.times[i + 1], self.gamma[i + 1][j]);
            let (t_lo, g_lo) = (self.times[i], self.gamma[i][j]);
            if g_hi > 0.5 && g_lo <= 0.5 {
                let w = (g_hi - 0.5) / (g_hi - g_lo);
                let t = t_hi + w * (t_lo - t_hi);
                return Some(1.0 - t);
            }
        }
        None
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for f in &self.freq {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.gamma) {
            let _ = write!(out, "{t}");
            for g in row {
                let _ = write!(out, ",{g:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// 8-bit heatmap: one row per time with `t = 1` at the top, one column
    /// per frequency, `gamma` clamped to `[0, 1]`.
    pub fn to_heatmap(&self) -> GrayImage {
        let w = self.freq.len();
        let h = self.times.len();
        let mut data = Vec::with_capacity(w * h);
        for row in self.gamma.iter().rev() {
            data.extend(row.iter().map(|g| (g.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        GrayImage::new(w, h, data).expect("heatmap dimensions match data")
    }
}

/// Progression map from empirical spectra keyed by time.
pub fn progression_map(spectra: &[(f64, RadialSpectrum)]) -> Result<ProgressionMap> {
    let mut sorted: Vec<&(f64, RadialSpectrum)> = spectra.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = sorted.first().ok_or(Error::MissingEndpoint(0.0))?;
    let freq = first.1.freq.clone();
    for (t, s) in &sorted {
        if s.freq != freq {
            return Err(Error::Shape(format!("spectrum at t={t} uses different bins")));
        }
    }
    let times = sorted.iter().map(|(t, _)| *t).collect();
    let log_power = sorted
        .iter()
        .map(|(_, s)| s.power.iter().map(|p| p.ln()).collect())
        .collect();
    ProgressionMap::from_log_power(times, freq, log_power)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub omega: f64,
    pub fit_band: (f64, f64),
    pub residual: f64,
}

/// Least-squares line through `(ln f, ln P)` over the band; `omega = -slope`.
pub fn fit_power_law(spectrum: &RadialSpectrum, band: (f64, f64)) -> Result<PowerLawFit> {
    let idx = spectrum.band_indices(band.0, band.1);
    if idx.len() < 4 {
        return Err(Error::Fit(format!(
            "band [{}, {}] holds {} bins, need at least 4",
            band.0,
            band.1,
            idx.len()
        )));
    }
    let mut xs = Vec::with_capacity(idx.len());
    let mut ys = Vec::with_capacity(idx.len());
    for &i in &idx {
        let p = spectrum.power[i];
        if !(p > 0.0) {
            return Err(Error::Fit(format!("non-positive power {p} at f={}", spectrum.freq[i])));
        }
        xs.push(spectrum.freq[i].ln());
        ys.push(p.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        c: intercept.exp(),
        omega: -slope,
        fit_band: band,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::TAU;

    fn spectrum_from(freq: Vec<f64>, power: Vec<f64>) -> RadialSpectrum {
        let n = freq.len();
        RadialSpectrum {
            freq,
            power,
            multiplicity: vec![1; n],
            sample_count: 1,
        }
    }

    #[test]
    fn constant_image_is_all_dc() {
        let img = Array2::from_elem((16, 16), 0.7);
        let s = radial_psd(&[img], 64).unwrap();
        assert!(s.power[0] > 0.0);
        assert!(s.power[1..].iter().all(|&p| p.abs() < 1e-24));
        assert_eq!(s.multiplicity[0], 1);
    }

    #[test]
    fn sinusoid_lands_in_its_bin() {
        // Brute-force DFT of cos(2 pi 4 x / 32): energy only at kx = +-4, ky = 0.
        let n = 32;
        let img = Array2::from_shape_fn((n, n), |(_, x)| (TAU * 4.0 * x as f64 / n as f64).cos());
        let mut brute = Array2::<f64>::zeros((n, n));
        for ky in 0..n {
            for kx in 0..n {
                let mut re = 0.0;
                let mut im = 0.0;
                for y in 0..n {
                    for x in 0..n {
                        let ang = -TAU * (kx * x + ky * y) as f64 / n as f64;
                        re += img[[y, x]] * ang.cos();
                        im += img[[y, x]] * ang.sin();
                    }
                }
                brute[[ky, kx]] = (re * re + im * im) / (n * n) as f64;
            }
        }
        let mut planner = FftPlanner::new();
        let fast = power_spectrum_2d(&img, &mut planner).unwrap();
        for (a, b) in fast.iter().zip(brute.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let s = radial_psd(&[img], 64).unwrap();
        let peak = s.power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 4);
        let total: f64 = s.power.iter().zip(&s.multiplicity).map(|(p, &m)| p * m as f64).sum();
        let in_peak = s.power[4] * s.multiplicity[4] as f64;
        assert!((in_peak / total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn white_noise_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let imgs: Vec<Array2<f64>> = (0..512)
            .map(|_| Array2::from_shape_fn((32, 32), |_| StandardNormal.sample(&mut rng)))
            .collect();
        let s = radial_psd(&imgs, 17).unwrap();
        for &p in &s.power[1..] {
            assert!((p - 1.0).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn parseval_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let imgs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((20, 20), |_| StandardNormal.sample(&mut rng)))
            .collect();
        let s = radial_psd(&imgs, usize::MAX).unwrap();
        let lhs: f64 = s.power.iter().zip(&s.multiplicity).map(|(p, &m)| p * m as f64).sum();
        let mean_sq: f64 = imgs.iter().map(|i| i.mapv(|v| v * v).mean().unwrap()).sum::<f64>() / 3.0;
        let rhs = mean_sq * 400.0;
        assert!(((lhs - rhs) / rhs).abs() < 1e-6);
        assert_eq!(s.multiplicity.iter().sum::<usize>(), 400);
    }

    #[test]
    fn psd_errors() {
        assert!(matches!(radial_psd(&[], 8), Err(Error::EmptyInput(_))));
        assert!(matches!(radial_psd(&[Array2::zeros((4, 8))], 8), Err(Error::Shape(_))));
    }

    #[test]
    fn theory_examples() {
        assert_eq!(theoretical_psd(3.0, 1.0, 5.0, 2.0).unwrap(), 1.0);
        assert_eq!(theoretical_psd(2.0, 0.0, 8.0, 2.0).unwrap(), 2.0);
        assert_eq!(theoretical_psd(1.0, 0.5, 1.0, 2.0).unwrap(), 0.5);
        assert!(matches!(
            theoretical_psd(0.0, 0.5, 1.0, 2.0),
            Err(Error::InvalidFrequency(_))
        ));
    }

    #[test]
    fn progression_map_examples() {
        let freq = vec![1.0, 2.0, 3.0];
        let s0 = spectrum_from(freq.clone(), vec![100.0, 4.0, 1.0]);
        let s1 = spectrum_from(freq.clone(), vec![1.0, 1.0, 1.0]);
        let mid = spectrum_from(freq.clone(), vec![10.0, 1.0, 1.0]);
        let map = progression_map(&[(1.0, s1.clone()), (0.5, mid), (0.0, s0.clone())]).unwrap();
        assert_eq!(map.times, vec![0.0, 0.5, 1.0]);
        assert!(map.gamma[0].iter().all(|&g| g == 0.0));
        assert_eq!(&map.gamma[2][..2], &[1.0, 1.0]);
        assert!((map.gamma[1][0] - 0.5).abs() < 1e-15);
        assert_eq!(map.gamma[1][1], 1.0);
        assert_eq!(map.degenerate, vec![false, false, true]);
        assert_eq!(map.gamma[1][2], 0.0);
        assert!(matches!(progression_map(&[(0.0, s0)]), Err(Error::MissingEndpoint(_))));
        assert!(matches!(progression_map(&[(1.0, s1)]), Err(Error::MissingEndpoint(_))));
    }

    #[test]
    fn analytic_low_frequencies_settle_first() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let freq: Vec<f64> = (1..=32).map(f64::from).collect();
        let map = ProgressionMap::theoretical(&times, &freq, 1e4, 2.0).unwrap();
        let star: Vec<f64> = (0..freq.len()).map(|j| map.half_progress_elapsed(j).unwrap()).collect();
        for w in star.windows(2) {
            assert!(w[0] < w[1], "{star:?}");
        }
        let img = map.to_heatmap();
        assert_eq!((img.width(), img.height()), (32, 101));
    }

    #[test]
    fn power_law_fit_examples() {
        let freq: Vec<f64> = (0..20).map(f64::from).collect();
        let power: Vec<f64> = freq
            .iter()
            .map(|&f| if f == 0.0 { 5.0 } else { 1.0 / (f * f) })
            .collect();
        let s = spectrum_from(freq.clone(), power.clone());
        let fit = fit_power_law(&s, (1.0, 19.0)).unwrap();
        assert!((fit.c - 1.0).abs() < 1e-10 && (fit.omega - 2.0).abs() < 1e-12 && fit.residual < 1e-12);
        let s10 = spectrum_from(freq, power.iter().map(|p| p * 10.0).collect());
        let fit10 = fit_power_law(&s10, (1.0, 19.0)).unwrap();
        assert!((fit10.c - 10.0).abs() < 1e-9 && (fit10.omega - 2.0).abs() < 1e-12);
        assert!(matches!(fit_power_law(&s, (1.0, 3.0)), Err(Error::Fit(_))));
    }
}
