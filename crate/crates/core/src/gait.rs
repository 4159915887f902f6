//! Stride analytics from foot-position time series: the aggregate stride
//! via the Fourier spectrum peak, individual strides via peak-to-peak
//! timing, conversion to length through the treadmill belt speed, and
//! sigma-based outlier exclusion.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::KeypointName;

/// Default outlier gate in standard deviations.
pub const DEFAULT_OUTLIER_SIGMA: f64 = 2.3;

/// Minimum trace length for spectrum analysis.
pub const MIN_TRACE_SAMPLES: usize = 64;

/// Lowest stride frequency considered, Hz.
pub const MIN_STRIDE_HZ: f64 = 0.5;

/// Uniformly sampled scalar foot coordinate (the fitted foot position
/// projected on the travel axis; units are irrelevant to the analysis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootTrace {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub joint: KeypointName,
    pub belt_speed_cm_s: f64,
}

impl FootTrace {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("foot trace".into()));
        }
        Ok(())
    }

    fn std(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        (self
            .samples
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

/// One frequency bin of the windowed magnitude spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBin {
    pub frequency_hz: f64,
    pub magnitude: f64,
}

/// Mean-subtracted, Hann-windowed magnitude spectrum up to (excluding) the
/// Nyquist frequency.
pub fn spectrum(trace: &FootTrace) -> Result<Vec<SpectrumBin>> {
    trace.validate()?;
    let n = trace.samples.len();
    if n < MIN_TRACE_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "trace has {n} samples, need at least {MIN_TRACE_SAMPLES}"
        )));
    }
    let mean = trace.samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = trace
        .samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let w = 0.5
                * (1.0 - (std::f64::consts::TAU * i as f64 / (n as f64 - 1.0)).cos());
            Complex::new((x - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = trace.sample_rate_hz / n as f64;
    Ok((0..n.div_ceil(2))
        .map(|k| SpectrumBin {
            frequency_hz: k as f64 * df,
            magnitude: buf[k].norm(),
        })
        .collect())
}

/// The aggregate stride duration: the wavelength (inverse frequency) of the
/// spectrum magnitude peak over `[0.5, rate/2)` Hz, refined by quadratic
/// interpolation over the peak bin and its neighbors.
pub fn dominant_stride_duration(trace: &FootTrace) -> Result<f64> {
    let n = trace.samples.len();
    let bins = spectrum(trace)?;
    let variance = trace.std().powi(2);
    if variance < 1e-12 {
        return Err(Error::NoPeriodicity(format!(
            "trace variance {variance} is indistinguishable from flat"
        )));
    }
    let df = trace.sample_rate_hz / n as f64;
    let k_min = (MIN_STRIDE_HZ / df).ceil() as usize;
    let k_max = bins.len().saturating_sub(1);
    if k_min > k_max {
        return Err(Error::InsufficientData(format!(
            "trace too short to resolve frequencies above {MIN_STRIDE_HZ} Hz"
        )));
    }
    let mut peak = k_min;
    for k in k_min..=k_max {
        if bins[k].magnitude > bins[peak].magnitude {
            peak = k;
        }
    }
    if bins[peak].magnitude <= 0.0 {
        return Err(Error::NoPeriodicity(
            "spectrum is empty in the stride band".into(),
        ));
    }

    let mut refined = peak as f64;
    if peak > 0 && peak + 1 < bins.len() {
        let m0 = bins[peak - 1].magnitude;
        let m1 = bins[peak].magnitude;
        let m2 = bins[peak + 1].magnitude;
        let denom = m0 - 2.0 * m1 + m2;
        if denom.abs() > 1e-300 {
            let delta = 0.5 * (m0 - m2) / denom;
            if delta.is_finite() {
                refined += delta.clamp(-0.5, 0.5);
            }
        }
    }
    Ok(1.0 / (refined * df))
}

/// Indices of stride peaks: local maxima with prominence at least half the
/// trace standard deviation and separation at least half the dominant
/// stride duration. Plateaus count once, at their middle sample.
pub fn stride_peaks(trace: &FootTrace) -> Result<Vec<usize>> {
    let dominant = dominant_stride_duration(trace)?;
    let x = &trace.samples;
    let n = x.len();
    let min_prominence = 0.5 * trace.std();
    let min_separation = 0.5 * dominant * trace.sample_rate_hz;

    // Plateau-aware local maxima.
    let mut candidates: Vec<usize> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let start = i;
            let mut end = i;
            while end + 1 < n && x[end + 1] == x[start] {
                end += 1;
            }
            if end + 1 < n && x[end + 1] < x[start] {
                candidates.push(start + (end - start) / 2);
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }

    // Prominence: height above the higher of the two flanking valleys,
    // where each valley is the minimum before a strictly higher sample (or
    // the trace edge) is reached.
    let prominence = |p: usize| -> f64 {
        let h = x[p];
        let mut left_min = h;
        let mut j = p;
        while j > 0 {
            j -= 1;
            if x[j] > h {
                break;
            }
            left_min = left_min.min(x[j]);
        }
        let mut right_min = h;
        let mut j = p;
        while j + 1 < n {
            j += 1;
            if x[j] > h {
                break;
            }
            right_min = right_min.min(x[j]);
        }
        h - left_min.max(right_min)
    };
    let mut qualified: Vec<usize> = candidates
        .into_iter()
        .filter(|p| prominence(*p) >= min_prominence)
        .collect();

    // Enforce separation, keeping taller peaks first.
    qualified.sort_by(|a, b| {
        x[*b].partial_cmp(&x[*a])
            .unwrap()
            .then_with(|| a.cmp(b))
    });
    let mut accepted: Vec<usize> = Vec::new();
    for p in qualified {
        if accepted
            .iter()
            .all(|q| (p as f64 - *q as f64).abs() >= min_separation)
        {
            accepted.push(p);
        }
    }
    accepted.sort_unstable();
    Ok(accepted)
}

/// Stride measurements of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrideReport {
    pub joint: KeypointName,
    pub belt_speed_cm_s: f64,
    pub dominant_duration_s: f64,
    /// Dominant duration times belt speed.
    pub aggregate_length_cm: f64,
    pub peak_indices: Vec<usize>,
    /// Successive peak-to-peak times; empty when fewer than 3 strides.
    pub durations_s: Vec<f64>,
    /// `durations_s` times belt speed, element by element.
    pub lengths_cm: Vec<f64>,
    /// True where a stride length deviates from the mean by more than the
    /// sigma gate (single pass: the gate uses the all-stride mean/sigma).
    pub outlier_mask: Vec<bool>,
    pub outlier_sigma: f64,
    /// Mean/sigma of the inlier lengths, recomputed once after exclusion.
    pub inlier_mean_cm: Option<f64>,
    pub inlier_sigma_cm: Option<f64>,
}

fn mean_and_sample_sigma(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sigma = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sigma)
}

/// Full stride report. Individual statistics need at least 3 strides;
/// otherwise only the aggregate (spectrum) measurements are filled in.
pub fn stride_report(trace: &FootTrace, outlier_sigma: f64) -> Result<StrideReport> {
    let dominant = dominant_stride_duration(trace)?;
    let peaks = stride_peaks(trace)?;
    let mut report = StrideReport {
        joint: trace.joint,
        belt_speed_cm_s: trace.belt_speed_cm_s,
        dominant_duration_s: dominant,
        aggregate_length_cm: dominant * trace.belt_speed_cm_s,
        peak_indices: peaks.clone(),
        durations_s: Vec::new(),
        lengths_cm: Vec::new(),
        outlier_mask: Vec::new(),
        outlier_sigma,
        inlier_mean_cm: None,
        inlier_sigma_cm: None,
    };
    if peaks.len() < 4 {
        // Fewer than 3 strides: aggregate only.
        return Ok(report);
    }
    report.durations_s = peaks
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / trace.sample_rate_hz)
        .collect();
    report.lengths_cm = report
        .durations_s
        .iter()
        .map(|d| d * trace.belt_speed_cm_s)
        .collect();

    let (mean_all, sigma_all) = mean_and_sample_sigma(&report.lengths_cm);
    report.outlier_mask = report
        .lengths_cm
        .iter()
        .map(|l| (l - mean_all).abs() > outlier_sigma * sigma_all)
        .collect();
    let inliers: Vec<f64> = report
        .lengths_cm
        .iter()
        .zip(&report.outlier_mask)
        .filter(|(_, o)| !**o)
        .map(|(l, _)| *l)
        .collect();
    if !inliers.is_empty() {
        let (mean_in, sigma_in) = mean_and_sample_sigma(&inliers);
        report.inlier_mean_cm = Some(mean_in);
        report.inlier_sigma_cm = Some(sigma_in);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(samples: Vec<f64>, rate: f64, belt: f64) -> FootTrace {
        FootTrace {
            samples,
            sample_rate_hz: rate,
            joint: KeypointName::LeftAnkle,
            belt_speed_cm_s: belt,
        }
    }

    fn sinusoid(freq: f64, rate: f64, n: usize, amplitude: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amplitude * (std::f64::consts::TAU * freq * i as f64 / rate + phase).sin())
            .collect()
    }

    #[test]
    fn pure_sinusoid_frequency_is_recovered() {
        let t = trace(sinusoid(4.0, 24.0, 240, 1.0, 0.0), 24.0, 0.0);
        let duration = dominant_stride_duration(&t).unwrap();
        assert!((duration - 0.25).abs() < 1e-3, "duration {duration}");
    }

    #[test]
    fn noisy_sinusoid_monte_carlo_stays_within_half_a_bin() {
        // SNR 10 dB: unit-amplitude signal (power 0.5), noise power 0.05.
        let rate = 24.0;
        let n = 240;
        let freq = 3.3;
        let bin_hz = rate / n as f64;
        let tol_s = 0.5 * bin_hz / (freq * freq);
        let noise_sigma = 0.05_f64.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..100 {
            let mut samples = sinusoid(freq, rate, n, 1.0, rng.random_range(0.0..std::f64::consts::TAU));
            for s in &mut samples {
                // Box-Muller.
                let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                *s += noise_sigma
                    * (-2.0 * u1.ln()).sqrt()
                    * (std::f64::consts::TAU * u2).cos();
            }
            let duration = dominant_stride_duration(&trace(samples, rate, 0.0)).unwrap();
            assert!(
                (duration - 1.0 / freq).abs() <= tol_s,
                "duration {duration} vs {} (tol {tol_s})",
                1.0 / freq
            );
        }
    }

    #[test]
    fn dominant_peak_wins_over_secondary() {
        let rate = 48.0;
        let n = 480;
        let mut samples = sinusoid(2.0, rate, n, 1.0, 0.0);
        let secondary = sinusoid(5.0, rate, n, 0.3, 1.0);
        for (a, b) in samples.iter_mut().zip(secondary) {
            *a += b;
        }
        let duration = dominant_stride_duration(&trace(samples, rate, 0.0)).unwrap();
        assert!((duration - 0.5).abs() < 2e-3, "duration {duration}");
    }

    #[test]
    fn short_or_flat_traces_error() {
        assert!(matches!(
            dominant_stride_duration(&trace(vec![0.0; 32], 24.0, 0.0)),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            dominant_stride_duration(&trace(vec![3.5; 128], 24.0, 0.0)),
            Err(Error::NoPeriodicity(_))
        ));
        let mut t = trace(vec![0.0; 128], 24.0, 0.0);
        t.samples[3] = f64::NAN;
        assert!(matches!(
            dominant_stride_duration(&t),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sinusoid_peaks_are_periodic() {
        // Period 6 samples over 66 samples (>= the spectrum minimum).
        let t = trace(sinusoid(4.0, 24.0, 66, 1.0, 0.0), 24.0, 0.0);
        let peaks = stride_peaks(&t).unwrap();
        assert_eq!(peaks.len(), 11, "peaks {peaks:?}");
        for w in peaks.windows(2) {
            let gap = w[1] - w[0];
            assert!((5..=7).contains(&gap), "gap {gap}");
        }
    }

    #[test]
    fn low_spike_is_rejected_by_prominence() {
        let mut samples = sinusoid(3.0, 24.0, 240, 1.0, 0.0);
        // A small bump near a trough: prominence well under half a sigma.
        let trough = 4; // sin minimum near sample 4 of each 8-sample period
        samples[trough] += 0.15;
        let t = trace(samples, 24.0, 0.0);
        let peaks = stride_peaks(&t).unwrap();
        assert!(!peaks.contains(&trough));
        assert_eq!(peaks.len(), 30);
    }

    #[test]
    fn asymmetric_gait_peak_count_matches_generator() {
        // Sawtooth-like stance/swing: slow drop, fast rise, 12 samples per
        // stride, 20 strides, phase-shifted so every peak is interior.
        let period = 12usize;
        let strides = 20;
        let mut samples = Vec::new();
        for _ in 0..strides {
            for i in 0..period {
                let phase = ((i + 4) % period) as f64 / period as f64;
                samples.push(if phase < 0.75 {
                    1.0 - 2.0 * phase / 0.75
                } else {
                    -1.0 + 2.0 * (phase - 0.75) / 0.25
                });
            }
        }
        let t = trace(samples, 24.0, 0.0);
        let peaks = stride_peaks(&t).unwrap();
        assert_eq!(peaks.len(), strides);
    }

    #[test]
    fn identical_strides_have_no_outliers() {
        let rate = 40.0;
        let t = trace(sinusoid(1.0 / 0.3, rate, 250, 1.0, 0.0), rate, 20.0);
        let report = stride_report(&t, DEFAULT_OUTLIER_SIGMA).unwrap();
        assert!((report.dominant_duration_s - 0.3).abs() < 2e-3);
        assert!((report.aggregate_length_cm - 6.0).abs() < 0.05);
        assert!(report.durations_s.len() >= 19);
        for l in &report.lengths_cm {
            assert!((l - 6.0).abs() < 1e-9, "length {l}");
        }
        assert!(report.outlier_mask.iter().all(|o| !o));
        assert!((report.inlier_mean_cm.unwrap() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn one_long_stride_is_flagged() {
        // 19 strides of 0.30 s plus one of 0.90 s, at 20 cm/s: lengths are
        // nineteen 6 cm and one 18 cm. Hand computation: mean 6.6, sample
        // sigma sqrt(136.8/19) = 2.683, gate 2.3 sigma = 6.17; only the
        // 18 cm stride exceeds it.
        let rate = 40.0;
        let mut samples = Vec::new();
        let segment = |freq: f64, cycles: f64, rate: f64| -> Vec<f64> {
            let n = (cycles * rate / freq).round() as usize;
            (0..n)
                .map(|i| {
                    // Cosine so every segment starts and ends at a peak.
                    (std::f64::consts::TAU * freq * i as f64 / rate).cos()
                })
                .collect()
        };
        // A short rising lead-in keeps the first peak interior.
        for j in (1..=6).rev() {
            samples.push((std::f64::consts::TAU * (1.0 / 0.3) * j as f64 / rate).cos());
        }
        samples.extend(segment(1.0 / 0.3, 10.0, rate));
        samples.extend(segment(1.0 / 0.9, 1.0, rate));
        samples.extend(segment(1.0 / 0.3, 10.0, rate));
        let t = trace(samples, rate, 20.0);
        let report = stride_report(&t, DEFAULT_OUTLIER_SIGMA).unwrap();
        assert_eq!(report.durations_s.len(), 20);
        let flagged: Vec<usize> = report
            .outlier_mask
            .iter()
            .enumerate()
            .filter(|(_, o)| **o)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(flagged.len(), 1, "mask {:?}", report.outlier_mask);
        assert!((report.lengths_cm[flagged[0]] - 18.0).abs() < 1.0);

        // The flagged set equals the brute-force single-pass rule.
        let (mean, sigma) = mean_and_sample_sigma(&report.lengths_cm);
        for (i, l) in report.lengths_cm.iter().enumerate() {
            assert_eq!(
                report.outlier_mask[i],
                (l - mean).abs() > DEFAULT_OUTLIER_SIGMA * sigma
            );
        }
    }

    #[test]
    fn zero_belt_speed_degenerates_gracefully() {
        let rate = 40.0;
        let t = trace(sinusoid(1.0 / 0.3, rate, 250, 1.0, 0.0), rate, 0.0);
        let report = stride_report(&t, DEFAULT_OUTLIER_SIGMA).unwrap();
        assert_eq!(report.aggregate_length_cm, 0.0);
        assert!(report.lengths_cm.iter().all(|l| *l == 0.0));
        assert!(report.outlier_mask.iter().all(|o| !o));
    }

    #[test]
    fn too_few_strides_leaves_individual_statistics_empty() {
        // Two cycles only (at the 64-sample floor).
        let t = trace(sinusoid(1.0, 32.0, 64, 1.0, 0.0), 32.0, 20.0);
        let report = stride_report(&t, DEFAULT_OUTLIER_SIGMA).unwrap();
        assert!(report.durations_s.is_empty());
        assert!(report.inlier_mean_cm.is_none());
        assert!(report.aggregate_length_cm > 0.0);
    }

    #[test]
    fn report_invariant_under_offset_and_positive_scale() {
        let rate = 24.0;
        let base = sinusoid(3.0, rate, 240, 1.0, 0.3);
        let t0 = trace(base.clone(), rate, 20.0);
        let shifted = trace(base.iter().map(|x| 7.5 + 3.0 * x).collect(), rate, 20.0);
        let a = stride_report(&t0, DEFAULT_OUTLIER_SIGMA).unwrap();
        let b = stride_report(&shifted, DEFAULT_OUTLIER_SIGMA).unwrap();
        assert_eq!(a.peak_indices, b.peak_indices);
        assert!((a.dominant_duration_s - b.dominant_duration_s).abs() < 1e-12);
        assert_eq!(a.outlier_mask, b.outlier_mask);
    }
}
