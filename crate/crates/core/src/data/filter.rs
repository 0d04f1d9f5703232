use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// Second-order IIR section with `a[0] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Second-order Butterworth low-pass by the prewarped bilinear transform.
    pub fn butterworth_lowpass(cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0) || !(sample_rate_hz > 2.0 * cutoff_hz) {
            return Err(Error::Contract(format!(
                "cutoff {cutoff_hz} Hz needs a sample rate above {} Hz, got {sample_rate_hz}",
                2.0 * cutoff_hz
            )));
        }
        let k = (PI * cutoff_hz / sample_rate_hz).tan();
        let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - SQRT_2 * k + k * k) * norm],
        })
    }

    /// `|H(e^{iω})|` at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let poly = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            (re * re + im * im).sqrt()
        };
        poly(&self.b) / poly(&self.a)
    }

    /// Delay state of the transposed direct form at steady unit input.
    fn steady_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let y = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z1 = b2 - a2 * y;
        [b1 - a1 * y + z1, z1]
    }

    fn run(&self, x: &[f64], mut z: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z[0];
                z = [b1 * xi - a1 * y + z[1], b2 * xi - a2 * y];
                y
            })
            .collect()
    }

    /// Samples of odd extension added on each side by [`Biquad::filtfilt`].
    pub const PAD: usize = 9;

    /// Forward-backward filtering with odd extension at both ends and
    /// steady-state initial conditions, so the result has zero phase.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let pad = Self::PAD;
        if n <= pad {
            return Err(Error::Contract(format!("filtering needs more than {pad} samples, got {n}")));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));

        let zi = self.steady_state();
        let scaled = |v: f64| [zi[0] * v, zi[1] * v];
        let mut y = self.run(&ext, scaled(ext[0]));
        y.reverse();
        let mut y = self.run(&y, scaled(y[0]));
        y.reverse();
        Ok(y[pad..pad + n].to_vec())
    }
}
