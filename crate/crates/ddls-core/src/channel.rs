//! Physical channel model: per-scenario path-set generation and the
//! time-varying channel matrices at block, OFDM-symbol and OTFS-frame
//! granularity, plus a sample-level time-domain oracle.
//!
//! Units, fixed repo-wide:
//! * delays τ_p in samples (sample rate = N·Δf),
//! * Dopplers ν_p in cycles per MN-sample frame ("bins" — the delay-Doppler
//!   grid spacing is one cycle/frame),
//! * drift in cycles/frame added per elapsed frame.

use crate::error::{DdlsError, Result};
use crate::linalg::{delay_operator, doppler_operator, unit_root_pow};
use crate::scenario::{PathMode, ScenarioConfig};
use crate::CMat;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: Complex64,
    /// Delay in samples, >= 0.
    pub delay: f64,
    /// Doppler in cycles per MN-sample frame.
    pub doppler: f64,
    /// Doppler change per frame (cycles/frame per frame); 0 = static.
    #[serde(default)]
    pub drift: f64,
}

/// The physical channel between one (rx, tx) antenna pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    /// Validates the path-count bound and power-normalizes the gains so that
    /// Σ|h_p|² = 1.
    pub fn normalized(mut paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() || paths.len() > 5 {
            return Err(DdlsError::Config(format!(
                "path count must be in 1..=5, got {}",
                paths.len()
            )));
        }
        let power: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
        if power <= 0.0 {
            return Err(DdlsError::Config("zero total path power".into()));
        }
        let scale = 1.0 / power.sqrt();
        for p in &mut paths {
            p.gain *= scale;
        }
        Ok(PathSet { paths })
    }

    /// Total gain power Σ|h_p|².
    pub fn power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }

    /// Largest delay in samples.
    pub fn max_delay(&self) -> f64 {
        self.paths.iter().map(|p| p.delay).fold(0.0, f64::max)
    }

    /// True when every delay and Doppler sits on an integer bin.
    pub fn is_integer(&self) -> bool {
        self.paths.iter().all(|p| {
            (p.delay - p.delay.round()).abs() < 1e-9 && (p.doppler - p.doppler.round()).abs() < 1e-9
        })
    }

    /// Paths with the Doppler advanced by `frames` frames of drift.
    pub fn drifted(&self, frames: f64) -> PathSet {
        PathSet {
            paths: self
                .paths
                .iter()
                .map(|p| Path {
                    doppler: p.doppler + frames * p.drift,
                    ..*p
                })
                .collect(),
        }
    }
}

/// Grid geometry and antenna configuration shared by every module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Delay bins = OFDM subcarriers.
    pub n_delay: usize,
    /// Doppler bins = OFDM symbols per frame.
    pub m_doppler: usize,
    /// Per-OFDM-symbol cyclic prefix, samples.
    pub c_ofdm: usize,
    /// Per-OTFS-frame cyclic prefix, samples.
    pub c_otfs: usize,
    /// Transmit antennas.
    pub nt: usize,
    /// Receive antennas.
    pub nr: usize,
    /// Subcarrier spacing, Hz.
    pub scs_hz: f64,
    /// Carrier frequency, Hz.
    pub carrier_hz: f64,
}

impl GridConfig {
    pub fn mn(&self) -> usize {
        self.n_delay * self.m_doppler
    }

    /// OTFS frame length in samples (CP included). Equals the OFDM frame
    /// length M·(c_ofdm+N) whenever the frame-length parity c_otfs = M·c_ofdm
    /// holds.
    pub fn frame_len(&self) -> usize {
        self.mn() + self.c_otfs
    }

    /// The periodicity factor k in c_otfs = k·N, when it exists.
    pub fn periodicity_k(&self) -> Option<usize> {
        if self.c_otfs % self.n_delay == 0 {
            Some(self.c_otfs / self.n_delay)
        } else {
            None
        }
    }

    /// Structural invariants: frame-length parity, antenna ordering.
    pub fn validate(&self, require_periodicity: bool) -> Result<()> {
        if self.n_delay == 0 || self.m_doppler == 0 {
            return Err(DdlsError::Config("grid dimensions must be nonzero".into()));
        }
        if self.c_otfs != self.m_doppler * self.c_ofdm {
            return Err(DdlsError::Config(format!(
                "frame-length parity violated: c_otfs = {} but M*c_ofdm = {}",
                self.c_otfs,
                self.m_doppler * self.c_ofdm
            )));
        }
        if require_periodicity && self.c_otfs % self.n_delay != 0 {
            return Err(DdlsError::Config(format!(
                "periodicity condition violated: c_otfs = {} is not a multiple of N = {}",
                self.c_otfs, self.n_delay
            )));
        }
        if self.nr > self.nt {
            return Err(DdlsError::Config(format!(
                "precoded link requires rx <= tx antennas, got {}x{}",
                self.nt, self.nr
            )));
        }
        if self.nr == 0 {
            return Err(DdlsError::Config("need at least one receive antenna".into()));
        }
        Ok(())
    }
}

/// Independent path sets for every (rx, tx) antenna pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoChannelSet {
    pub nr: usize,
    pub nt: usize,
    /// Row-major by receive antenna: entry p·nt + q is the (rx p, tx q) pair.
    pub pairs: Vec<PathSet>,
}

impl MimoChannelSet {
    pub fn pair(&self, p: usize, q: usize) -> &PathSet {
        &self.pairs[p * self.nt + q]
    }
}

/// Draws one MIMO channel realization for a scenario. Deterministic in the
/// seed: identical (scenario, seed) give bit-identical path sets.
pub fn sample_paths(cfg: &ScenarioConfig, seed: u64) -> Result<MimoChannelSet> {
    let grid = &cfg.grid;
    if cfg.max_delay_samples > grid.c_ofdm as f64 {
        return Err(DdlsError::Config(format!(
            "max path delay {} exceeds the per-symbol CP {}",
            cfg.max_delay_samples, grid.c_ofdm
        )));
    }
    let nu_max = cfg.nu_max_bins();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(grid.nr * grid.nt);
    for _ in 0..grid.nr * grid.nt {
        let mut paths = Vec::with_capacity(cfg.num_paths);
        match cfg.mode {
            PathMode::Integer => {
                let tau_hi = cfg.max_delay_samples.floor() as i64;
                let nu_hi = nu_max.round().max(0.0) as i64;
                let cells = (tau_hi + 1) * (2 * nu_hi + 1);
                if cells < cfg.num_paths as i64 {
                    return Err(DdlsError::Config(format!(
                        "integer grid has {cells} delay-Doppler cells for {} paths",
                        cfg.num_paths
                    )));
                }
                let mut used = HashSet::new();
                while paths.len() < cfg.num_paths {
                    let tau = rng.gen_range(0..=tau_hi);
                    let nu = rng.gen_range(-nu_hi..=nu_hi);
                    if !used.insert((tau, nu)) {
                        continue;
                    }
                    paths.push(Path {
                        gain: complex_gaussian(&mut rng),
                        delay: tau as f64,
                        doppler: nu as f64,
                        drift: 0.0,
                    });
                }
            }
            PathMode::Fractional => {
                for _ in 0..cfg.num_paths {
                    let drift = if cfg.doppler_drift {
                        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                        sign * cfg.drift_bins_per_frame
                    } else {
                        0.0
                    };
                    paths.push(Path {
                        gain: complex_gaussian(&mut rng),
                        delay: rng.gen_range(0.0..cfg.max_delay_samples),
                        doppler: rng.gen_range(-nu_max..nu_max),
                        drift,
                    });
                }
            }
        }
        pairs.push(PathSet::normalized(paths)?);
    }
    Ok(MimoChannelSet {
        nr: grid.nr,
        nt: grid.nt,
        pairs,
    })
}

fn complex_gaussian(rng: &mut ChaCha12Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) / 2f64.sqrt()
}

/// Per-block channel H[i] = Σ_p h_p z_L^{i(c+L)ν_p} Δ_L(ν_p) Π_L(τ_p).
pub fn block_channel(paths: &PathSet, l: usize, c: usize, block: usize) -> Result<CMat> {
    let mut h = Array2::zeros((l, l));
    for p in &paths.paths {
        let phase = unit_root_pow(l, ((block * (c + l)) as f64 * p.doppler).rem_euclid(l as f64));
        accumulate_term(&mut h, p.gain * phase, l, p.doppler, p.delay)?;
    }
    Ok(h)
}

/// Per-OFDM-symbol channel H^F[s] = Σ_p h_p z_MN^{s(c+N)ν_p} Δ_N(ν_p/M) Π_N(τ_p).
pub fn ofdm_symbol_channel(
    paths: &PathSet,
    n: usize,
    m: usize,
    c_ofdm: usize,
    symbol: usize,
) -> Result<CMat> {
    let mn = n * m;
    let mut h = Array2::zeros((n, n));
    for p in &paths.paths {
        let phase = unit_root_pow(
            mn,
            ((symbol * (c_ofdm + n)) as f64 * p.doppler).rem_euclid(mn as f64),
        );
        accumulate_term(&mut h, p.gain * phase, n, p.doppler / m as f64, p.delay)?;
    }
    Ok(h)
}

/// Per-OTFS-frame channel H^O[r] = Σ_p h_p z_MN^{r(MN+c)ν_p} Δ_MN(ν_p) Π_MN(τ_p),
/// with per-path drift applied as ν_p + r·drift_p.
pub fn otfs_frame_channel(
    paths: &PathSet,
    m: usize,
    n: usize,
    c_otfs: usize,
    frame: usize,
) -> Result<CMat> {
    let mn = n * m;
    let mut h = Array2::zeros((mn, mn));
    for p in &paths.paths {
        let nu = p.doppler + frame as f64 * p.drift;
        let phase = unit_root_pow(
            mn,
            ((frame * (mn + c_otfs)) as f64 * nu).rem_euclid(mn as f64),
        );
        accumulate_term(&mut h, p.gain * phase, mn, nu, p.delay)?;
    }
    Ok(h)
}

/// Adds g·Δ_l(ν)·Π_l(τ) into `h`. Integer delays touch one diagonal of the
/// matrix; fractional delays spread over the full circulant.
fn accumulate_term(h: &mut CMat, g: Complex64, l: usize, nu: f64, tau: f64) -> Result<()> {
    let rounded = tau.round();
    if (tau - rounded).abs() < 1e-9 {
        let shift = (rounded as i64).rem_euclid(l as i64) as usize;
        for q in 0..l {
            let row = (q + shift) % l;
            h[(row, q)] += g * unit_root_pow(l, (nu * row as f64).rem_euclid(l as f64));
        }
    } else {
        let pi = delay_operator(l, tau)?;
        let dop = doppler_operator(l, nu)?;
        let term = dop.dot(&pi);
        h.zip_mut_with(&term, |a, b| *a += g * b);
    }
    Ok(())
}

/// Sample-level oracle: applies the sinc-interpolated delay and per-sample
/// Doppler phase of each path to a sample stream. Doppler is normalized by
/// `frame_len` (phase per sample = 2πν/frame_len) and `start_time` is the
/// time index of `x[0]` in samples. Samples before the stream are zero
/// (linear, not circular, convolution), so CP-protected comparisons against
/// the circulant matrices are exact for integer delays.
pub fn time_domain_apply(
    paths: &PathSet,
    x: &[Complex64],
    frame_len: usize,
    start_time: f64,
) -> Vec<Complex64> {
    let n = x.len();
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for p in &paths.paths {
        let rounded = p.delay.round();
        let integer = (p.delay - rounded).abs() < 1e-9;
        for (j, yj) in y.iter_mut().enumerate() {
            let delayed = if integer {
                let k = j as i64 - rounded as i64;
                if k >= 0 && (k as usize) < n {
                    x[k as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            } else {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, xk) in x.iter().enumerate() {
                    acc += xk * sinc(j as f64 - p.delay - k as f64);
                }
                acc
            };
            let phase = Complex64::from_polar(
                1.0,
                2.0 * PI * p.doppler * (start_time + j as f64) / frame_len as f64,
            );
            *yj += p.gain * phase * delayed;
        }
    }
    y
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}
