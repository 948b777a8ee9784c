//! A toy model of MOT compression: 21 one-millisecond bins, each setting the
//! trap detuning, repump detuning and coil drive. The dynamics are invented
//! to give a landscape with failure plateaus and an interior optimum; they
//! make no claim of physical fidelity.

use serde::{Deserialize, Serialize};

use super::RelativeNoise;
use crate::experiment::{Evaluation, Experiment, ExperimentError};
use crate::space::ParameterSpace;
use crate::{Error, Result};

pub const BINS: usize = 21;

/// Transmitted fraction `exp(−od·(γ²/4)/(Δ² + γ²/4))` of a probe at detuning
/// `delta` through a medium of optical depth `od`, both in MHz.
pub fn transmission(od: f64, delta: f64, gamma: f64) -> f64 {
    let hw2 = 0.25 * gamma * gamma;
    (-od * hw2 / (delta * delta + hw2)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotConstants {
    /// Linewidth used by the scattering terms, MHz.
    pub gamma_sim: f64,
    /// Initial temperature and reference temperature, µK.
    pub t0: f64,
    /// Initial cloud radius, mm.
    pub r0: f64,
    /// µK/ms.
    pub a_heat: f64,
    /// 1/ms.
    pub a_cool: f64,
    /// µK.
    pub t_floor: f64,
    /// mm·µK^(−1/2)/ms.
    pub c_expand: f64,
    /// 1/ms.
    pub c_compress: f64,
    /// 1/ms.
    pub l_light: f64,
    /// mm³/ms.
    pub l_density: f64,
    pub k_od: f64,
    /// Probe detuning, MHz.
    pub probe_detuning: f64,
    /// Probe transition linewidth, MHz.
    pub gamma_probe: f64,
    /// Bin length, ms.
    pub dt: f64,
    pub min_radius: f64,
    /// Runs with an optical depth below this count as a failure to trap.
    pub bad_od: f64,
}

impl Default for MotConstants {
    fn default() -> Self {
        Self {
            gamma_sim: 6.0,
            t0: 100.0,
            r0: 2.0,
            a_heat: 40.0,
            a_cool: 0.8,
            t_floor: 10.0,
            c_expand: 0.02,
            c_compress: 0.35,
            l_light: 0.01,
            l_density: 0.05,
            k_od: 1000.0,
            probe_detuning: 90.0,
            gamma_probe: 5.75,
            dt: 1.0,
            min_radius: 0.1,
            bad_od: 1.0,
        }
    }
}

/// Cloud state: normalized atom number, temperature (µK), radius (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotState {
    pub n: f64,
    pub temperature: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotOutcome {
    pub od: f64,
    /// Noiseless probe transmission.
    pub transmission: f64,
    pub bad: bool,
    pub final_state: MotState,
}

/// The compression surrogate. Parameters are ordered
/// `[u_t(1..=21), u_r(1..=21), u_b(1..=21)]`.
#[derive(Debug, Clone)]
pub struct MotSurrogate {
    constants: MotConstants,
    space: ParameterSpace,
    noise: RelativeNoise,
}

impl MotSurrogate {
    pub fn new(noise_sigma: f64, seed: u64) -> Self {
        Self::with_constants(MotConstants::default(), noise_sigma, seed)
    }

    pub fn with_constants(constants: MotConstants, noise_sigma: f64, seed: u64) -> Self {
        Self {
            constants,
            space: Self::parameter_space(),
            noise: RelativeNoise::new(noise_sigma, seed),
        }
    }

    /// Trap and repump detuning in `[−40, 0]` MHz, coil drive in `[0, 1]`.
    pub fn parameter_space() -> ParameterSpace {
        let mut lower = vec![-40.0; 2 * BINS];
        lower.extend(std::iter::repeat_n(0.0, BINS));
        let mut upper = vec![0.0; 2 * BINS];
        upper.extend(std::iter::repeat_n(1.0, BINS));
        let names = ["trap_detuning", "repump_detuning", "coil_drive"]
            .iter()
            .flat_map(|c| (1..=BINS).map(move |k| format!("{c}_{k:02}")))
            .collect();
        ParameterSpace::new(lower, upper)
            .and_then(|s| s.with_names(names))
            .expect("static bounds are valid")
    }

    /// The hand-designed linear ramp used as the reference strategy: trap
    /// detuning −31 → −40 MHz, repump 0 → −40 MHz, coil 0.3 → 1.
    pub fn baseline_ramps() -> Vec<f64> {
        let lin = |a: f64, b: f64| (0..BINS).map(move |k| a + (b - a) * k as f64 / (BINS - 1) as f64);
        lin(-31.0, -40.0).chain(lin(0.0, -40.0)).chain(lin(0.3, 1.0)).collect()
    }

    pub fn constants(&self) -> &MotConstants {
        &self.constants
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    /// Runs the recurrence, reporting the state after every bin to `visit`.
    pub fn trajectory(&self, ramps: &[f64], mut visit: impl FnMut(&MotState)) -> Result<MotOutcome> {
        if ramps.len() != 3 * BINS {
            return Err(Error::DimensionMismatch {
                expected: 3 * BINS,
                actual: ramps.len(),
            });
        }
        let c = &self.constants;
        let (ut, rest) = ramps.split_at(BINS);
        let (ur, ub) = rest.split_at(BINS);
        let mut st = MotState {
            n: 1.0,
            temperature: c.t0,
            radius: c.r0,
        };
        visit(&st);
        for k in 0..BINS {
            let s = 1.0 / (1.0 + (2.0 * ut[k] / c.gamma_sim).powi(2));
            let bright = 1.0 / (1.0 + (2.0 * ur[k] / c.gamma_sim).powi(2));
            let x = ut[k] / c.gamma_sim;
            let cool = 4.0 * (-x) / (1.0 + 4.0 * x * x).powi(2);
            let scatter = s * bright;

            let t = st.temperature;
            st.temperature = c
                .t_floor
                .max(t + c.dt * (c.a_heat * scatter - c.a_cool * cool * bright * (t - c.t_floor)));
            let r = st.radius;
            st.radius = c
                .min_radius
                .max(r + c.dt * (c.c_expand * st.temperature.sqrt() - c.c_compress * ub[k] * scatter * r));
            let n = st.n;
            st.n = n * (-c.dt * (c.l_light * scatter + c.l_density * n * ub[k] / st.radius.powi(3))).exp();
            visit(&st);
        }
        let od = c.k_od * st.n / (st.radius * st.radius * (st.temperature / c.t0).sqrt());
        Ok(MotOutcome {
            od,
            transmission: transmission(od, c.probe_detuning, c.gamma_probe),
            bad: od < c.bad_od,
            final_state: st,
        })
    }

    pub fn evolve(&self, ramps: &[f64]) -> Result<MotOutcome> {
        self.trajectory(ramps, |_| {})
    }
}

impl Experiment for MotSurrogate {
    fn dim(&self) -> usize {
        3 * BINS
    }

    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<Evaluation, ExperimentError> {
        let out = self
            .evolve(x)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(Evaluation {
            raw_cost: self.noise.apply(out.transmission),
            bad: out.bad,
        })
    }
}
