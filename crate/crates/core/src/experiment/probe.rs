use crate::error::{Error, Result};

/// A sampled photodetector response to the probe pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    /// Detector signal, volts.
    pub samples: Vec<f64>,
    /// Seconds per sample.
    pub dt: f64,
    /// Inclusive sample indices `(t_i, t_f)` bounding the integral.
    pub window: (usize, usize),
    /// Integral of the no-atoms reference pulse over the same window, volt seconds.
    pub reference: f64,
}

impl ProbeTrace {
    /// Builds a trace whose reference is taken from a reference pulse recorded
    /// without atoms.
    pub fn with_reference_pulse(
        samples: Vec<f64>,
        reference_pulse: &[f64],
        dt: f64,
        window: (usize, usize),
    ) -> Result<Self> {
        let reference = trapezoid(reference_pulse, dt, window)?;
        Ok(Self {
            samples,
            dt,
            window,
            reference,
        })
    }
}

/// Trapezoidal integral of `samples` between the window's sample indices.
pub fn trapezoid(samples: &[f64], dt: f64, window: (usize, usize)) -> Result<f64> {
    let (start, end) = window;
    if start > end || end >= samples.len() {
        return Err(Error::InvalidTrace(format!(
            "window {start}..={end} outside a trace of {} samples",
            samples.len()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTrace(format!("sample spacing {dt} is not positive")));
    }
    let sum: f64 = samples[start..=end]
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .sum();
    Ok(sum * dt)
}

/// Transmitted probe fraction: the windowed integral divided by the reference
/// integral. 1 means no absorption, 0 total absorption.
pub fn probe_cost(trace: &ProbeTrace) -> Result<f64> {
    if !(trace.reference > 0.0) {
        return Err(Error::InvalidTrace(format!(
            "reference integral {} must be positive",
            trace.reference
        )));
    }
    Ok(trapezoid(&trace.samples, trace.dt, trace.window)? / trace.reference)
}
