use crate::error::{Error, Result};

/// Refractory period between detections, seconds.
pub const REFRACTORY_S: f64 = 0.25;
const BAND_HZ: (f64, f64) = (5.0, 15.0);
const FIR_TAPS: usize = 31;
const INTEGRATION_S: f64 = 0.15;

/// Hamming-windowed sinc band-pass, symmetric so it adds no delay.
fn bandpass_taps(fs: f64) -> Vec<f64> {
    let (f1, f2) = (BAND_HZ.0 / fs, BAND_HZ.1 / fs);
    let half = (FIR_TAPS / 2) as f64;
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
    (0..FIR_TAPS)
        .map(|n| {
            let m = n as f64 - half;
            let w = 0.54 - 0.46 * (std::f64::consts::TAU * n as f64 / (FIR_TAPS - 1) as f64).cos();
            w * (2.0 * f2 * sinc(2.0 * f2 * m) - 2.0 * f1 * sinc(2.0 * f1 * m))
        })
        .collect()
}

/// Centered filtering with zero extension.
fn filter_same(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    (0..x.len())
        .map(|i| {
            taps.iter()
                .enumerate()
                .filter_map(|(k, &h)| (i + half).checked_sub(k).and_then(|j| x.get(j)).map(|&v| h * v))
                .sum()
        })
        .collect()
}

/// Band-pass, five-point derivative, squaring, centered moving-window
/// integration.
pub fn detection_envelope(signal: &[f32], fs: f64) -> Vec<f64> {
    let x: Vec<f64> = signal.iter().map(|&v| v as f64).collect();
    let bp = filter_same(&x, &bandpass_taps(fs));
    let at = |i: isize| if i < 0 || i as usize >= bp.len() { 0.0 } else { bp[i as usize] };
    let sq: Vec<f64> = (0..bp.len() as isize)
        .map(|i| {
            let d = (2.0 * at(i + 1) + at(i + 2) - 2.0 * at(i - 1) - at(i - 2)) / 8.0;
            d * d
        })
        .collect();
    let w = ((INTEGRATION_S * fs).round() as usize).max(1) | 1;
    filter_same(&sq, &vec![1.0 / w as f64; w])
}

/// Pan-Tompkins style R-peak detection.
///
/// Candidates are strict-left local maxima of the envelope. A running signal
/// level and noise level set the threshold `noise + (signal - noise) / 4`.
/// A candidate inside the refractory period of the previous detection
/// replaces it only if it is larger.
pub fn detect_r_peaks(signal: &[f32], fs: f64) -> Result<Vec<usize>> {
    let need = (2.0 * fs).ceil() as usize;
    if signal.len() < need {
        return Err(Error::RecordTooShort {
            len: signal.len(),
            need,
        });
    }
    let env = detection_envelope(signal, fs);
    let warm = &env[..need];
    let mut spk = 0.25 * warm.iter().cloned().fold(0.0, f64::max);
    let mut npk = 0.5 * warm.iter().sum::<f64>() / warm.len() as f64;
    let refractory = (REFRACTORY_S * fs).ceil() as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..env.len() {
        let v = env[i];
        let is_max = v > env[i - 1] && env.get(i + 1).is_none_or(|&n| v >= n);
        if !is_max {
            continue;
        }
        let threshold = npk + 0.25 * (spk - npk);
        if v <= threshold || v <= 0.0 {
            npk = 0.125 * v + 0.875 * npk;
            continue;
        }
        match peaks.last_mut() {
            Some(last) if i - *last < refractory => {
                if v > env[*last] {
                    *last = i;
                }
            }
            _ => peaks.push(i),
        }
        spk = 0.125 * v + 0.875 * spk;
    }
    Ok(peaks)
}
