//! Versioned text format for synthesized pulses.
//!
//! Samples are written with Rust's shortest-roundtrip float formatting, so a
//! read of a written file reproduces the pulse bit-exactly.

use anyhow::{bail, Context, Result};
use std::fmt::Write as _;
use std::path::Path;

use braggsynth::{ControlPulse, TimeGrid};
use ndarray::{Array1, Array2};

const MAGIC: &str = "braggsynth pulse v1";

/// On-disk pulse record: header plus the optical-channel samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseFile {
    pub fingerprint: String,
    pub horizon: f64,
    pub steps: usize,
    pub lower: f64,
    pub upper: f64,
    pub samples: Vec<f64>,
}

impl PulseFile {
    pub fn from_pulse(pulse: &ControlPulse, fingerprint: &str) -> Result<Self> {
        if pulse.channels() != 1 {
            bail!(
                "pulse files carry a single optical channel, got {}",
                pulse.channels()
            );
        }
        Ok(Self {
            fingerprint: fingerprint.to_string(),
            horizon: pulse.grid().horizon(),
            steps: pulse.grid().steps(),
            lower: pulse.lower()[0],
            upper: pulse.upper()[0],
            samples: pulse.values().column(0).to_vec(),
        })
    }

    pub fn to_pulse(&self) -> Result<ControlPulse> {
        let grid = TimeGrid::new(self.horizon, self.steps)?;
        let values = Array2::from_shape_vec((self.steps, 1), self.samples.clone())
            .context("sample count does not match steps")?;
        Ok(ControlPulse::new(
            grid,
            values,
            Array1::from_elem(1, self.lower),
            Array1::from_elem(1, self.upper),
        )?)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "fingerprint = {}", self.fingerprint);
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(out, "steps = {}", self.steps);
        let _ = writeln!(out, "lower = {}", self.lower);
        let _ = writeln!(out, "upper = {}", self.upper);
        let _ = writeln!(out, "samples:");
        for s in &self.samples {
            let _ = writeln!(out, "{s}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let magic = lines.next().context("empty pulse file")?;
        if magic.trim() != MAGIC {
            bail!("not a pulse file (bad magic line: {magic:?})");
        }
        let mut fingerprint = None;
        let mut horizon = None;
        let mut steps = None;
        let mut lower = None;
        let mut upper = None;
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "samples:" {
                break;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("malformed header line {line:?}"))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "fingerprint" => fingerprint = Some(value.to_string()),
                "horizon" => horizon = Some(value.parse::<f64>()?),
                "steps" => steps = Some(value.parse::<usize>()?),
                "lower" => lower = Some(value.parse::<f64>()?),
                "upper" => upper = Some(value.parse::<f64>()?),
                other => bail!("unknown header key {other:?}"),
            }
        }
        let steps = steps.context("missing steps")?;
        let mut samples = Vec::with_capacity(steps);
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            samples.push(line.parse::<f64>()?);
        }
        if samples.len() != steps {
            bail!("expected {steps} samples, found {}", samples.len());
        }
        Ok(Self {
            fingerprint: fingerprint.context("missing fingerprint")?,
            horizon: horizon.context("missing horizon")?,
            steps,
            lower: lower.context("missing lower bound")?,
            upper: upper.context("missing upper bound")?,
            samples,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())
            .with_context(|| format!("writing pulse file {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading pulse file {}", path.display()))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let samples: Vec<f64> = (0..50)
            .map(|k| (k as f64 * 0.7318).sin().abs() * 29.934_817_212_311 + 1e-13)
            .collect();
        let pf = PulseFile {
            fingerprint: "abc123".into(),
            horizon: 2.0 * std::f64::consts::PI,
            steps: 50,
            lower: 0.0,
            upper: f64::INFINITY,
            samples,
        };
        let text = pf.serialize();
        let back = PulseFile::parse(&text).unwrap();
        assert_eq!(pf, back);
        for (a, b) in pf.samples.iter().zip(&back.samples) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.upper, f64::INFINITY);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(PulseFile::parse("not a pulse").is_err());
        let truncated = "braggsynth pulse v1\nfingerprint = x\nhorizon = 1\nsteps = 3\nlower = 0\nupper = 1\nsamples:\n0.5\n";
        assert!(PulseFile::parse(truncated).is_err());
    }

    #[test]
    fn pulse_conversion_roundtrip() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let pulse = ControlPulse::new(
            grid,
            Array2::from_shape_vec((4, 1), vec![0.0, 0.5, 1.0, 0.25]).unwrap(),
            Array1::from_elem(1, 0.0),
            Array1::from_elem(1, 2.0),
        )
        .unwrap();
        let pf = PulseFile::from_pulse(&pulse, "deadbeef").unwrap();
        let back = pf.to_pulse().unwrap();
        assert_eq!(back.values(), pulse.values());
        assert_eq!(back.grid().steps(), 4);
    }
}
