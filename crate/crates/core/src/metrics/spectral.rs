//! Direct DFT probes used to analyze generated motion.

const TAU: f64 = std::f64::consts::TAU;

/// Power of `signal` at `freq_hz` (mean removed).
pub fn dft_power(signal: &[f32], fps: f64, freq_hz: f64) -> f64 {
    let n = signal.len();
    if n == 0 {
        return 0.0;
    }
    let mean = signal.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let (mut re, mut im) = (0.0f64, 0.0f64);
    for (t, &v) in signal.iter().enumerate() {
        let ang = TAU * freq_hz * t as f64 / fps;
        re += (v as f64 - mean) * libm::cos(ang);
        im -= (v as f64 - mean) * libm::sin(ang);
    }
    re * re + im * im
}

/// Which of the candidate frequencies carries the most power.
pub fn dominant_frequency(signal: &[f32], fps: f64, candidates: &[f64]) -> usize {
    let mut best = (0usize, f64::MIN);
    for (i, &f) in candidates.iter().enumerate() {
        let p = dft_power(signal, fps, f);
        if p > best.1 {
            best = (i, p);
        }
    }
    best.0
}
