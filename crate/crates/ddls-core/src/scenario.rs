//! Scenario configuration: the three builtin mobility cases in integer and
//! fractional variants, plus validation of the structural parity constraints.

use crate::channel::GridConfig;
use crate::error::{DdlsError, Result};
use serde::{Deserialize, Serialize};

/// Whether path delays/Dopplers are drawn on integer grid bins or as reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathMode {
    Integer,
    Fractional,
}

/// CSI acquisition: genie path knowledge or pilot-based estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMode {
    Ideal,
    Pilot,
}

/// Tuning knobs for the basis-expansion predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictParams {
    /// Ridge weight relative to tr(E^H E)/Q for the amplitude solve.
    pub lambda_amp_rel: f64,
    /// Levenberg-Marquardt damping for the Doppler refinement.
    pub lambda_gn: f64,
    /// Gauss-Newton step size.
    pub alpha: f64,
    pub max_iters: usize,
}

impl Default for PredictParams {
    fn default() -> Self {
        PredictParams {
            lambda_amp_rel: 1e-8,
            lambda_gn: 1e-3,
            alpha: 1.0,
            max_iters: 15,
        }
    }
}

/// Full description of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridConfig,
    /// Informational; the Doppler bound below is authoritative.
    pub max_speed_kph: f64,
    pub max_doppler_hz: f64,
    pub mode: PathMode,
    /// Linearly drifting per-path Doppler across frames.
    #[serde(default)]
    pub doppler_drift: bool,
    #[serde(default = "default_drift")]
    pub drift_bins_per_frame: f64,
    /// Precoder staleness: frames between CSI measurement and use.
    pub feedback_delay: usize,
    pub estimation: EstimationMode,
    /// Multiplicative error applied to the Dopplers handed to GCE-BEM.
    #[serde(default = "default_doppler_error")]
    pub doppler_error_frac: f64,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    #[serde(default = "default_measured")]
    pub measured_frames: usize,
    /// Sliding-window length for the CSI history, in snapshots.
    #[serde(default = "default_window")]
    pub window_snapshots: usize,
    /// Warm-up frames before metrics accumulate; None = window + delay.
    #[serde(default)]
    pub warmup_frames: Option<usize>,
    pub base_seed: u64,
    #[serde(default = "default_paths")]
    pub num_paths: usize,
    #[serde(default = "default_max_delay")]
    pub max_delay_samples: f64,
    /// CE-BEM basis grid offset in Doppler bins, to keep basis tones off the
    /// integer bins in the small integer-Doppler scenarios.
    #[serde(default)]
    pub basis_offset_bins: f64,
    #[serde(default)]
    pub predict: PredictParams,
    /// Tap-detection threshold as a multiple of the noise standard deviation.
    #[serde(default = "default_tap_threshold")]
    pub tap_threshold_sigma: f64,
}

fn default_drift() -> f64 {
    0.05
}
fn default_doppler_error() -> f64 {
    0.10
}
fn default_measured() -> usize {
    10
}
fn default_window() -> usize {
    16
}
fn default_paths() -> usize {
    3
}
fn default_max_delay() -> f64 {
    2.0
}
fn default_tap_threshold() -> f64 {
    3.0
}

impl ScenarioConfig {
    /// Doppler bound in cycles/frame: f_Hz · MN · T_s = f_Hz · M / Δf.
    pub fn nu_max_bins(&self) -> f64 {
        self.max_doppler_hz * self.grid.m_doppler as f64 / self.grid.scs_hz
    }

    /// Doppler bound in cycles/sample, the predictor-facing unit.
    pub fn nu_max_cycles_per_sample(&self) -> f64 {
        self.nu_max_bins() / self.grid.mn() as f64
    }

    /// Integer-mode Doppler bin bound (nearest bin to the Hz bound).
    pub fn nu_int_max(&self) -> i64 {
        self.nu_max_bins().round().max(0.0) as i64
    }

    /// Frames before the measurement window opens.
    pub fn warmup(&self) -> usize {
        self.warmup_frames
            .unwrap_or(self.window_snapshots + self.feedback_delay)
    }

    /// Delay guard half-width for the impulse pilot, bins.
    pub fn guard_tau(&self) -> usize {
        self.max_delay_samples.ceil() as usize
    }

    /// Doppler guard half-width for the impulse pilot, bins.
    pub fn guard_nu(&self) -> usize {
        self.nu_max_bins().ceil().max(1.0) as usize
    }

    /// Structural checks: grid parity, antenna ordering, causality bounds.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate(self.mode == PathMode::Integer)?;
        if self.feedback_delay == 0 {
            return Err(DdlsError::Config(
                "feedback delay must be at least one frame".into(),
            ));
        }
        if self.trials == 0 {
            return Err(DdlsError::Config("trials must be >= 1".into()));
        }
        if self.num_paths == 0 || self.num_paths > 5 {
            return Err(DdlsError::Config(format!(
                "path count must be in 1..=5, got {}",
                self.num_paths
            )));
        }
        if self.max_delay_samples > self.grid.c_ofdm as f64 {
            return Err(DdlsError::Config(format!(
                "max delay {} exceeds per-symbol CP {}",
                self.max_delay_samples, self.grid.c_ofdm
            )));
        }
        if self.snr_db.is_empty() {
            return Err(DdlsError::Config("need at least one SNR point".into()));
        }
        if self.measured_frames == 0 {
            return Err(DdlsError::Config("need at least one measured frame".into()));
        }
        if self.window_snapshots < 2 * self.num_paths + 1 {
            return Err(DdlsError::Config(format!(
                "window of {} snapshots cannot support the {}-tone basis",
                self.window_snapshots,
                2 * self.num_paths + 1
            )));
        }
        Ok(())
    }
}

fn base(
    name: &str,
    nt: usize,
    nr: usize,
    m_doppler: usize,
    doppler_hz: f64,
    speed_kph: f64,
    delay: usize,
    mode: PathMode,
) -> ScenarioConfig {
    let n_delay = 8;
    let c_ofdm = 2;
    ScenarioConfig {
        name: name.into(),
        grid: GridConfig {
            n_delay,
            m_doppler,
            c_ofdm,
            c_otfs: m_doppler * c_ofdm,
            nt,
            nr,
            scs_hz: 15e3,
            carrier_hz: 3.5e9,
        },
        max_speed_kph: speed_kph,
        max_doppler_hz: doppler_hz,
        mode,
        doppler_drift: false,
        drift_bins_per_frame: default_drift(),
        feedback_delay: delay,
        estimation: EstimationMode::Ideal,
        doppler_error_frac: default_doppler_error(),
        snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
        trials: 50,
        measured_frames: default_measured(),
        window_snapshots: default_window(),
        warmup_frames: None,
        base_seed: 7,
        num_paths: default_paths(),
        max_delay_samples: default_max_delay(),
        basis_offset_bins: if mode == PathMode::Integer { 1.0 / 7.0 } else { 0.0 },
        predict: PredictParams::default(),
        tap_threshold_sigma: default_tap_threshold(),
    }
}

/// The three mobility cases of the study, each on the integer 8(delay)x64
/// (Doppler) grid and the fractional 8x32 grid: VANET (2x2, 225 Hz, 1-frame
/// delay), FANET (2x2, 450 Hz, 1-frame delay), dMIMO (4 tx x 2 rx, 225 Hz,
/// 2-frame delay). Carrier 3.5 GHz, 15 kHz subcarrier spacing, 3 paths,
/// QPSK, 50 trials, 10 measured frames.
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    vec![
        base("vanet-integer", 2, 2, 64, 225.0, 75.0, 1, PathMode::Integer),
        base("vanet-fractional", 2, 2, 32, 225.0, 75.0, 1, PathMode::Fractional),
        base("fanet-integer", 2, 2, 64, 450.0, 144.0, 1, PathMode::Integer),
        base("fanet-fractional", 2, 2, 32, 450.0, 144.0, 1, PathMode::Fractional),
        base("dmimo-integer", 4, 2, 64, 225.0, 75.0, 2, PathMode::Integer),
        base("dmimo-fractional", 4, 2, 32, 225.0, 75.0, 2, PathMode::Fractional),
    ]
}

/// Looks up a builtin scenario by name.
pub fn builtin_scenario(name: &str) -> Option<ScenarioConfig> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        let all = builtin_scenarios();
        assert_eq!(all.len(), 6);
        for s in &all {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
    }

    #[test]
    fn builtin_parameters_match_study() {
        let vanet = builtin_scenario("vanet-integer").unwrap();
        assert_eq!(vanet.max_doppler_hz, 225.0);
        assert_eq!(vanet.grid.m_doppler, 64);
        assert_eq!(vanet.grid.n_delay, 8);
        assert_eq!(vanet.feedback_delay, 1);
        assert!((vanet.nu_max_bins() - 0.96).abs() < 1e-12);

        let frac = builtin_scenario("fanet-fractional").unwrap();
        assert_eq!(frac.grid.m_doppler, 32);
        assert_eq!(frac.max_doppler_hz, 450.0);

        let dmimo = builtin_scenario("dmimo-fractional").unwrap();
        assert_eq!((dmimo.grid.nt, dmimo.grid.nr), (4, 2));
        assert_eq!(dmimo.feedback_delay, 2);
    }

    #[test]
    fn periodicity_violation_is_rejected_for_integer_mode() {
        let mut s = builtin_scenario("vanet-integer").unwrap();
        s.grid.n_delay = 7; // c_otfs = 128 is not a multiple of 7
        assert!(s.validate().is_err());
        s.mode = PathMode::Fractional;
        // Fractional mode does not need the periodicity condition, but the
        // frame-length parity still holds, so this passes.
        s.validate().unwrap();
    }

    #[test]
    fn frame_length_parity_is_enforced() {
        let mut s = builtin_scenario("vanet-integer").unwrap();
        s.grid.c_otfs += 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn antenna_ordering_is_enforced() {
        let mut s = builtin_scenario("vanet-integer").unwrap();
        s.grid.nr = 4;
        s.grid.nt = 2;
        assert!(s.validate().is_err());
    }
}
