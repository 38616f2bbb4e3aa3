//! Butterworth IIR low-pass filtering for pulse bandwidth studies.
//!
//! The analog prototype is factored into second-order sections (plus one
//! first-order section for odd orders) and discretized by the bilinear
//! transform with frequency pre-warping. Filtering runs forward only; phase
//! lag is compensated by trimming the DC group delay so filtered pulses stay
//! aligned with the simulation grid.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("filter order must be at least 1")]
    BadOrder,
    #[error("normalized cutoff must lie in (0, 0.5), got {0}")]
    BadCutoff(f64),
    #[error("designed filter is unstable at cutoff {0}")]
    Unstable(f64),
}

/// Second-order section b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FirstOrder {
    pub b0: f64,
    pub b1: f64,
    pub a1: f64,
}

/// Cascaded low-pass filter.
#[derive(Debug, Clone)]
pub struct Butterworth {
    sections: Vec<Biquad>,
    first: Option<FirstOrder>,
    cutoff_norm: f64,
}

/// Design a Butterworth low-pass of the given order.
///
/// `cutoff_norm` is f_c / f_s and must lie strictly inside (0, 0.5).
pub fn butterworth_lowpass(order: usize, cutoff_norm: f64) -> Result<Butterworth, FilterError> {
    if order == 0 {
        return Err(FilterError::BadOrder);
    }
    if !(cutoff_norm > 0.0 && cutoff_norm < 0.5) {
        return Err(FilterError::BadCutoff(cutoff_norm));
    }
    // Pre-warped bilinear transform variable.
    let k = (std::f64::consts::PI * cutoff_norm).tan();
    let k2 = k * k;
    let n = order;
    let mut sections = Vec::with_capacity(n / 2);
    for j in 0..n / 2 {
        // Conjugate analog pole pair: s^2 + 2 sin(beta) s + 1 with the poles
        // at angle beta off the imaginary axis.
        let beta = std::f64::consts::PI * (2 * j + 1) as f64 / (2 * n) as f64;
        let c = 2.0 * beta.sin();
        let d = 1.0 + c * k + k2;
        sections.push(Biquad {
            b0: k2 / d,
            b1: 2.0 * k2 / d,
            b2: k2 / d,
            a1: 2.0 * (k2 - 1.0) / d,
            a2: (1.0 - c * k + k2) / d,
        });
    }
    let first = (n % 2 == 1).then(|| {
        let d = 1.0 + k;
        FirstOrder {
            b0: k / d,
            b1: k / d,
            a1: (k - 1.0) / d,
        }
    });
    let filt = Butterworth {
        sections,
        first,
        cutoff_norm,
    };
    if !filt.is_stable() {
        return Err(FilterError::Unstable(cutoff_norm));
    }
    Ok(filt)
}

impl Butterworth {
    /// All poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let biquads_ok = self
            .sections
            .iter()
            .all(|s| s.a2.abs() < 1.0 && s.a1.abs() < 1.0 + s.a2);
        let first_ok = self.first.map(|f| f.a1.abs() < 1.0).unwrap_or(true);
        biquads_ok && first_ok
    }

    pub fn cutoff_norm(&self) -> f64 {
        self.cutoff_norm
    }

    /// Forward (causal) filtering, direct form II transposed per section.
    pub fn apply_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.to_vec();
        for s in &self.sections {
            let mut z1 = 0.0;
            let mut z2 = 0.0;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b0 * xin + z1;
                z1 = s.b1 * xin - s.a1 * out + z2;
                z2 = s.b2 * xin - s.a2 * out;
                *v = out;
            }
        }
        if let Some(f) = self.first {
            let mut z1 = 0.0;
            for v in y.iter_mut() {
                let xin = *v;
                let out = f.b0 * xin + z1;
                z1 = f.b1 * xin - f.a1 * out;
                *v = out;
            }
        }
        y
    }

    /// Complex frequency response at normalized angular frequency ω (rad/sample).
    pub fn response(&self, omega: f64) -> (f64, f64) {
        let (mut re, mut im) = (1.0f64, 0.0f64);
        let mul =
            |are: f64, aim: f64, bre: f64, bim: f64| (are * bre - aim * bim, are * bim + aim * bre);
        let z1 = (omega.cos(), -omega.sin());
        let z2 = ((2.0 * omega).cos(), -(2.0 * omega).sin());
        for s in &self.sections {
            let num = (s.b0 + s.b1 * z1.0 + s.b2 * z2.0, s.b1 * z1.1 + s.b2 * z2.1);
            let den = (1.0 + s.a1 * z1.0 + s.a2 * z2.0, s.a1 * z1.1 + s.a2 * z2.1);
            let dn = den.0 * den.0 + den.1 * den.1;
            let h = mul(num.0, num.1, den.0 / dn, -den.1 / dn);
            let acc = mul(re, im, h.0, h.1);
            re = acc.0;
            im = acc.1;
        }
        if let Some(f) = self.first {
            let num = (f.b0 + f.b1 * z1.0, f.b1 * z1.1);
            let den = (1.0 + f.a1 * z1.0, f.a1 * z1.1);
            let dn = den.0 * den.0 + den.1 * den.1;
            let h = mul(num.0, num.1, den.0 / dn, -den.1 / dn);
            let acc = mul(re, im, h.0, h.1);
            re = acc.0;
            im = acc.1;
        }
        (re, im)
    }

    /// Group delay at DC, in samples.
    pub fn group_delay_dc(&self) -> f64 {
        let w = 1e-4;
        let (re1, im1) = self.response(w);
        let (re2, im2) = self.response(2.0 * w);
        let p1 = im1.atan2(re1);
        let p2 = im2.atan2(re2);
        -(p2 - p1) / w
    }

    /// Forward filtering with the DC group delay trimmed off, so the output
    /// stays time-aligned with the input; the tail is zero-padded.
    pub fn apply_zero_phase_compensated(&self, x: &[f64]) -> Vec<f64> {
        let y = self.apply_forward(x);
        let shift = self.group_delay_dc().round().max(0.0) as usize;
        let mut out = vec![0.0; x.len()];
        for i in 0..x.len() {
            if i + shift < y.len() {
                out[i] = y[i + shift];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            butterworth_lowpass(0, 0.1),
            Err(FilterError::BadOrder)
        ));
        assert!(matches!(
            butterworth_lowpass(4, 0.5),
            Err(FilterError::BadCutoff(_))
        ));
        assert!(matches!(
            butterworth_lowpass(4, 0.0),
            Err(FilterError::BadCutoff(_))
        ));
    }

    #[test]
    fn unity_gain_at_dc() {
        for order in [1usize, 2, 3, 4, 5, 8] {
            for cut in [0.01, 0.1, 0.25, 0.45] {
                let f = butterworth_lowpass(order, cut).unwrap();
                let (re, im) = f.response(0.0);
                assert_abs_diff_eq!(re, 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn half_power_at_cutoff() {
        // |H(f_c)|^2 = 1/2 for every Butterworth order.
        for order in [2usize, 4, 7] {
            let cut = 0.2;
            let f = butterworth_lowpass(order, cut).unwrap();
            let w = 2.0 * std::f64::consts::PI * cut;
            let (re, im) = f.response(w);
            let mag2 = re * re + im * im;
            assert_abs_diff_eq!(mag2, 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn stable_across_design_range() {
        for k in 1..=200 {
            let cut = 0.5 * k as f64 / 201.0;
            let f = butterworth_lowpass(4, cut).unwrap();
            assert!(f.is_stable());
        }
    }

    #[test]
    fn constant_input_passes_through() {
        let f = butterworth_lowpass(4, 0.2).unwrap();
        let x = vec![1.5; 400];
        let y = f.apply_forward(&x);
        // after the transient settles, output equals the DC gain times input
        for v in y.iter().skip(100) {
            assert_abs_diff_eq!(*v, 1.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn group_delay_alignment_recovers_pulse_peak() {
        let f = butterworth_lowpass(4, 0.15).unwrap();
        let n = 300;
        let peak_at = 150usize;
        let x: Vec<f64> = (0..n)
            .map(|i| (-((i as f64 - peak_at as f64) / 18.0).powi(2)).exp())
            .collect();
        let y = f.apply_zero_phase_compensated(&x);
        let argmax = y
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            (argmax as i64 - peak_at as i64).abs() <= 2,
            "peak moved to {argmax}"
        );
    }

    #[test]
    fn high_cutoff_is_nearly_allpass() {
        let f = butterworth_lowpass(4, 0.5 * 200.0 / 201.0).unwrap();
        let x: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.21).sin().abs()).collect();
        let y = f.apply_zero_phase_compensated(&x);
        let err: f64 = x
            .iter()
            .zip(&y)
            .take(190)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "max deviation {err}");
    }
}
