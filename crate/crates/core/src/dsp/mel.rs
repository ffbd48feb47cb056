//! HTK mel scale and triangular filterbanks.

use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `n_fft / 2 + 1` one-sided FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterBank {
    n_fft: usize,
    n_mels: usize,
    sample_rate: u32,
    /// Row-major `n_mels × n_bins`.
    weights: Vec<f64>,
}

impl MelFilterBank {
    /// Filters with centres equally spaced in mel between 0 Hz and Nyquist,
    /// evaluated at each bin's centre frequency.
    pub fn new(n_fft: usize, n_mels: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if !n_fft.is_power_of_two() || n_fft < 2 {
            return Err(Error::config(format!("n_fft {n_fft} is not a power of two")));
        }
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        let n_bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let mut weights = vec![0.0; n_mels * n_bins];
        for m in 0..n_mels {
            let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let rising = (f - lo) / (centre - lo);
                let falling = (hi - f) / (hi - centre);
                *w = rising.min(falling).max(0.0);
            }
            if row.iter().all(|&w| w <= 0.0) {
                return Err(Error::config(format!(
                    "mel band {m} has no FFT bins: {n_mels} bands is too many for n_fft {n_fft}"
                )));
            }
        }
        Ok(Self {
            n_fft,
            n_mels,
            sample_rate,
            weights,
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let n = self.n_bins();
        &self.weights[m * n..(m + 1) * n]
    }

    /// Mel energies of one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate().take(self.n_mels) {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        // 2595 * log10(2)
        assert!((hz_to_mel(700.0) - 781.172_838_7).abs() < 1e-6);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn rows_are_nonnegative_and_unimodal() {
        for n_mels in [32, 64] {
            let fb = MelFilterBank::new(512, n_mels, 16_000).unwrap();
            for m in 0..n_mels {
                let row = fb.row(m);
                assert!(row.iter().all(|&w| w >= 0.0));
                assert!(row.iter().any(|&w| w > 0.0));
                let peak = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
                assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn filters_span_zero_to_nyquist() {
        let fb = MelFilterBank::new(512, 32, 16_000).unwrap();
        let first = fb.row(0);
        let first_nz = first.iter().position(|&w| w > 0.0).unwrap();
        assert!(first_nz <= 1);
        let last = fb.row(31);
        let last_nz = last.iter().rposition(|&w| w > 0.0).unwrap();
        // the last triangle falls to zero exactly at Nyquist (bin 256)
        assert!(last[256] < 1e-12);
        assert!(last_nz >= 250);
    }

    #[test]
    fn too_many_bands_is_a_config_error() {
        assert!(matches!(MelFilterBank::new(64, 60, 16_000), Err(Error::Config(_))));
        assert!(matches!(MelFilterBank::new(500, 32, 16_000), Err(Error::Config(_))));
        assert!(matches!(MelFilterBank::new(512, 0, 16_000), Err(Error::Config(_))));
    }
}
