//! Basis-expansion prediction of channel evolution from a sliding CSI
//! history: CE-BEM on a uniform Doppler grid, GCE-BEM on the estimated
//! per-path Dopplers, and damped Gauss-Newton refinement of the Doppler
//! frequencies.
//!
//! Units: frequencies in cycles/sample, snapshot times in samples. Fits
//! center the time axis for conditioning; predictions are invariant to the
//! shift.

use crate::error::{DdlsError, Result};
use crate::{CMat, CVec};
use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;
use num_complex::Complex64;
use std::f64::consts::TAU;

/// Sliding window of CSI snapshots: one complex vector of B tracked entries
/// per snapshot time.
#[derive(Debug, Clone, Default)]
pub struct CsiHistory {
    pub times: Vec<f64>,
    pub snapshots: Vec<CVec>,
}

impl CsiHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a snapshot; times must be strictly increasing and entry
    /// counts constant.
    pub fn push(&mut self, time: f64, snapshot: CVec) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if time <= last {
                return Err(DdlsError::Config(format!(
                    "snapshot times must increase, got {time} after {last}"
                )));
            }
        }
        if let Some(first) = self.snapshots.first() {
            if first.len() != snapshot.len() {
                return Err(DdlsError::Config(format!(
                    "snapshot has {} entries, history tracks {}",
                    snapshot.len(),
                    first.len()
                )));
            }
        }
        self.times.push(time);
        self.snapshots.push(snapshot);
        Ok(())
    }

    /// Keeps only the most recent `window` snapshots.
    pub fn truncate_to_window(&mut self, window: usize) {
        if self.times.len() > window {
            let drop = self.times.len() - window;
            self.times.drain(..drop);
            self.snapshots.drain(..drop);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.snapshots.first().map(|s| s.len()).unwrap_or(0)
    }

    /// Snapshot matrix, T × B.
    fn matrix(&self) -> CMat {
        let t = self.len();
        let b = self.entry_count();
        let mut h = Array2::zeros((t, b));
        for (i, snap) in self.snapshots.iter().enumerate() {
            h.row_mut(i).assign(snap);
        }
        h
    }
}

/// Complex-exponential basis frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct BemBasis {
    pub frequencies: Vec<f64>,
}

/// CE-BEM basis: Q = 2·num_paths + 1 frequencies on the deterministic
/// uniform grid spanning [−F_D, F_D] inclusive, each shifted by `offset`.
pub fn cebem_basis(num_paths: usize, f_d: f64, offset: f64) -> BemBasis {
    let q = 2 * num_paths + 1;
    let frequencies = (0..q)
        .map(|i| -f_d + 2.0 * f_d * i as f64 / (q - 1) as f64 + offset)
        .collect();
    BemBasis { frequencies }
}

/// A fitted basis expansion: coefficients per (basis tone, tracked entry).
#[derive(Debug, Clone)]
pub struct BemFit {
    pub frequencies: Vec<f64>,
    /// P × B coefficient matrix.
    pub coefficients: CMat,
    pub residual_norm: f64,
    pub iterations: usize,
    /// Times were centered here; predictions account for it.
    pub time_origin: f64,
    /// Residual Frobenius norm after each refinement iteration.
    pub residual_trajectory: Vec<f64>,
}

impl BemFit {
    /// Extrapolates every tracked entry to absolute time `t`.
    pub fn predict(&self, t: f64) -> CVec {
        let b = self.coefficients.ncols();
        let mut out: CVec = Array1::zeros(b);
        for (q, &f) in self.frequencies.iter().enumerate() {
            let tone = Complex64::from_polar(1.0, TAU * f * (t - self.time_origin));
            for j in 0..b {
                out[j] += tone * self.coefficients[(q, j)];
            }
        }
        out
    }
}

fn dictionary(times: &[f64], origin: f64, freqs: &[f64]) -> CMat {
    Array2::from_shape_fn((times.len(), freqs.len()), |(t, p)| {
        Complex64::from_polar(1.0, TAU * freqs[p] * (times[t] - origin))
    })
}

/// Ridge least-squares fit of the history onto the given tones:
/// C = (E^H E + λI)^{−1} E^H H with λ = ridge_rel·tr(E^H E)/Q.
pub fn bem_fit(history: &CsiHistory, freqs: &[f64], ridge_rel: f64) -> Result<BemFit> {
    let t = history.len();
    let p = freqs.len();
    if p == 0 {
        return Err(DdlsError::Config("empty basis".into()));
    }
    if t < p {
        return Err(DdlsError::Underdetermined {
            snapshots: t,
            basis: p,
        });
    }
    let origin = history.times.iter().sum::<f64>() / t as f64;
    let e = dictionary(&history.times, origin, freqs);
    let h = history.matrix();
    let c = ridge_solve(&e, &h, ridge_rel)?;
    let residual = &h - &e.dot(&c);
    let residual_norm = residual.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(BemFit {
        frequencies: freqs.to_vec(),
        coefficients: c,
        residual_norm,
        iterations: 0,
        time_origin: origin,
        residual_trajectory: vec![residual_norm],
    })
}

fn ridge_solve(e: &CMat, h: &CMat, ridge_rel: f64) -> Result<CMat> {
    let p = e.ncols();
    let eh = e.t().mapv(|z| z.conj());
    let mut gram = eh.dot(e);
    let trace: f64 = (0..p).map(|i| gram[(i, i)].re).sum();
    let lambda = ridge_rel * trace / p as f64;
    for i in 0..p {
        gram[(i, i)] += Complex64::new(lambda, 0.0);
    }
    let rhs = eh.dot(h);
    let inv = crate::solve::inv(&gram)?;
    Ok(inv.dot(&rhs))
}

/// CE-BEM: fit the window on the fixed uniform basis and extrapolate every
/// tracked entry to `horizon_time`.
pub fn cebem_fit_predict(
    history: &CsiHistory,
    basis: &BemBasis,
    horizon_time: f64,
    ridge_rel: f64,
) -> Result<CVec> {
    let fit = bem_fit(history, &basis.frequencies, ridge_rel)?;
    Ok(fit.predict(horizon_time))
}

/// GCE-BEM: basis tones at the estimated per-path Dopplers (duplicates
/// within 1e−12 collapse to one column), then fit and extrapolate.
pub fn gcebem_fit_predict(
    history: &CsiHistory,
    path_dopplers: &[f64],
    horizon_time: f64,
    ridge_rel: f64,
) -> Result<CVec> {
    let freqs = dedup_frequencies(path_dopplers);
    let fit = bem_fit(history, &freqs, ridge_rel)?;
    Ok(fit.predict(horizon_time))
}

/// Removes duplicate tones closer than 1e−12 cycles/sample.
pub fn dedup_frequencies(freqs: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(freqs.len());
    for &f in freqs {
        if !out.iter().any(|&g| (g - f).abs() < 1e-12) {
            out.push(f);
        }
    }
    out
}

/// Gradient of ½‖H − E(ν)C‖²_F with respect to the tone frequencies, with C
/// held fixed: g_p = −Re Σ_b conj(C[p,b]) (J^H R)[p,b], J = j2π t ∘ E.
pub fn bem_frequency_gradient(
    times: &[f64],
    origin: f64,
    freqs: &[f64],
    coeffs: &CMat,
    residual: &CMat,
) -> Vec<f64> {
    let e = dictionary(times, origin, freqs);
    let p = freqs.len();
    let mut g = vec![0.0; p];
    for (pi, gp) in g.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (ti, &t) in times.iter().enumerate() {
            let j = Complex64::new(0.0, TAU * (t - origin)) * e[(ti, pi)];
            for b in 0..residual.ncols() {
                acc += (j * coeffs[(pi, b)]).conj() * residual[(ti, b)];
            }
        }
        *gp = -acc.re;
    }
    g
}

/// Damped Gauss-Newton refinement of the basis frequencies: alternate a
/// ridge solve for the gains with a Levenberg-Marquardt step on the
/// frequencies. The damping grows tenfold whenever a step fails to reduce
/// the residual or the damped normal equations are singular.
pub fn gn_refine(
    history: &CsiHistory,
    nu0: &[f64],
    lambda_amp_rel: f64,
    lambda_gn: f64,
    alpha: f64,
    max_iters: usize,
) -> Result<BemFit> {
    let t = history.len();
    let p = nu0.len();
    if p == 0 {
        return Err(DdlsError::Config("empty frequency vector".into()));
    }
    if t < p {
        return Err(DdlsError::Underdetermined {
            snapshots: t,
            basis: p,
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DdlsError::Config(format!("alpha must be in (0,1], got {alpha}")));
    }
    let origin = history.times.iter().sum::<f64>() / t as f64;
    let times = &history.times;
    let h = history.matrix();
    let b = h.ncols();

    let fit_at = |freqs: &[f64]| -> Result<(CMat, CMat, f64)> {
        let e = dictionary(times, origin, freqs);
        let c = ridge_solve(&e, &h, lambda_amp_rel)?;
        let r = &h - &e.dot(&c);
        let res = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        Ok((c, r, res))
    };

    let mut freqs = nu0.to_vec();
    let mut lambda = lambda_gn;
    let mut trajectory = Vec::with_capacity(max_iters + 1);
    let (mut coeffs, mut residual, mut res_norm) = fit_at(&freqs)?;
    trajectory.push(res_norm);
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let e = dictionary(times, origin, &freqs);
        // Weighted normal equations of the separable problem.
        let mut jhj = Array2::<f64>::zeros((p, p));
        for pi in 0..p {
            for qi in 0..p {
                let mut a = Complex64::new(0.0, 0.0);
                for (ti, &tt) in times.iter().enumerate() {
                    let jp = Complex64::new(0.0, TAU * (tt - origin)) * e[(ti, pi)];
                    let jq = Complex64::new(0.0, TAU * (tt - origin)) * e[(ti, qi)];
                    a += jp.conj() * jq;
                }
                let mut gcc = Complex64::new(0.0, 0.0);
                for bi in 0..b {
                    gcc += coeffs[(pi, bi)].conj() * coeffs[(qi, bi)];
                }
                jhj[(pi, qi)] = (a * gcc).re;
            }
        }
        let grad = bem_frequency_gradient(times, origin, &freqs, &coeffs, &residual);

        // Solve the damped step, escalating λ on singularity or on a
        // residual increase.
        let mut accepted = false;
        let mut delta = vec![0.0; p];
        for _retry in 0..8 {
            let mut lhs = jhj.clone();
            for i in 0..p {
                lhs[(i, i)] += lambda;
            }
            let rhs = Array1::from(grad.iter().map(|g| -g).collect::<Vec<f64>>());
            let step = match lhs.solve(&rhs) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = freqs
                .iter()
                .zip(step.iter())
                .map(|(f, d)| f + alpha * d)
                .collect();
            match fit_at(&trial) {
                Ok((c2, r2, res2)) if res2 <= res_norm + 1e-12 => {
                    delta = step.to_vec();
                    freqs = trial;
                    coeffs = c2;
                    residual = r2;
                    res_norm = res2;
                    accepted = true;
                    break;
                }
                _ => {
                    lambda *= 10.0;
                }
            }
        }
        if !accepted {
            // Sufficient damping makes the step vanish; we are at a local
            // minimum for this window.
            break;
        }
        trajectory.push(res_norm);
        let step_norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt() * alpha;
        if step_norm < 1e-10 {
            break;
        }
    }

    Ok(BemFit {
        frequencies: freqs,
        coefficients: coeffs,
        residual_norm: res_norm,
        iterations,
        time_origin: origin,
        residual_trajectory: trajectory,
    })
}
