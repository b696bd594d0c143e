//! OTFS modulation and the per-frame equivalent channel in three forms:
//! direct conjugation by the modulation matrix, the compact reduced form for
//! integer channels, and the Dirichlet-spread form for fractional channels.
//! Also the cyclic-prefix periodicity factor L[r] behind deterministic
//! prediction, and impulse-pilot channel estimation in the delay-Doppler
//! domain.
//!
//! Vectorization order is fixed repo-wide: index = doppler·N + delay.

use crate::channel::PathSet;
use crate::error::{DdlsError, Result};
use crate::linalg::{dft_matrix, dirichlet, eye, kronecker, unit_root_pow};
use crate::solve::adjoint;
use crate::{CMat, CVec};
use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// OTFS modulation matrix O = F_M ⊗ I_N (unitary, MN×MN).
pub fn otfs_mod_matrix(m: usize, n: usize) -> Result<CMat> {
    Ok(kronecker(&dft_matrix(m)?, &eye(n)))
}

/// Equivalent frame channel by direct conjugation: O·H·O^H.
pub fn otfs_equiv_channel_direct(h_frame: &CMat, m: usize, n: usize) -> Result<CMat> {
    let mn = m * n;
    if h_frame.dim() != (mn, mn) {
        return Err(DdlsError::InvalidDimension(format!(
            "frame channel must be {mn}x{mn}, got {:?}",
            h_frame.dim()
        )));
    }
    let o = otfs_mod_matrix(m, n)?;
    Ok(o.dot(h_frame).dot(&adjoint(&o)))
}

#[inline]
fn unit_root_neg(l: usize, x: usize) -> Complex64 {
    // exp(−j2π x/l) with an exact 1 at x ≡ 0.
    let rem = x % l;
    if rem == 0 {
        Complex64::new(1.0, 0.0)
    } else {
        unit_root_pow(l, (l - rem) as f64)
    }
}

/// P_m = I_M ⊗ diag(x_m), {x_m}_a = exp(j2π m a/(MN)). The Doppler argument
/// may be fractional.
pub fn pm_matrix(m_doppler: f64, m: usize, n: usize) -> CMat {
    let mn = m * n;
    let mut out = Array2::zeros((mn, mn));
    for idx in 0..mn {
        let a = idx % n;
        out[(idx, idx)] = unit_root_pow(mn, (m_doppler * a as f64).rem_euclid(mn as f64));
    }
    out
}

/// Q_n: diagonal rectangular-pulse correction. Entry at index c = dN+b is
/// exp(−j2π·χ(b ≥ N−n)·d/M), so that Q_n^H carries the +j phase on the
/// delay-wrapped columns. Q_0 = I.
pub fn qn_matrix(n_delay: usize, m: usize, n: usize) -> Result<CMat> {
    if n_delay >= n {
        return Err(DdlsError::InvalidDimension(format!(
            "delay bin {n_delay} outside 0..{n}"
        )));
    }
    let mn = m * n;
    let mut out = Array2::zeros((mn, mn));
    for idx in 0..mn {
        let (d, b) = (idx / n, idx % n);
        out[(idx, idx)] = if b >= n - n_delay {
            unit_root_neg(m, d)
        } else {
            Complex64::new(1.0, 0.0)
        };
    }
    Ok(out)
}

/// One delay-Doppler tap of an integer channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdTap {
    /// Doppler bin m (cycles/frame), may be negative.
    pub doppler: i64,
    /// Delay bin n (samples), 0 ≤ n < N.
    pub delay: i64,
    pub gain: Complex64,
}

/// Reduced-form equivalent channel for integer channels:
/// Σ_p h_p z_MN^{rcm} P_m (Π_M^{−m} ⊗ Π_N^n) Q_n^H. Equals the direct
/// conjugation of the frame builder for every integer path set; non-integer
/// paths are a domain error.
pub fn otfs_equiv_channel_reduced(
    paths: &PathSet,
    m: usize,
    n: usize,
    c: usize,
    frame: usize,
) -> Result<CMat> {
    let mn = m * n;
    let taps: Vec<DdTap> = paths
        .paths
        .iter()
        .map(|p| {
            let nu = p.doppler + frame as f64 * p.drift;
            if (p.delay - p.delay.round()).abs() >= 1e-9 || (nu - nu.round()).abs() >= 1e-9 {
                return Err(DdlsError::NonIntegerPath(format!(
                    "reduced form requires integer bins, got τ={} ν={nu}",
                    p.delay
                )));
            }
            let md = nu.round() as i64;
            let phase_arg = (frame as i64 * c as i64 * md).rem_euclid(mn as i64);
            Ok(DdTap {
                doppler: md,
                delay: p.delay.round() as i64,
                gain: p.gain * unit_root_pow(mn, phase_arg as f64),
            })
        })
        .collect::<Result<_>>()?;
    Ok(reduced_from_taps(&taps, m, n))
}

/// Assembles Σ g·P_m(Π_M^{−m} ⊗ Π_N^n)Q_n^H from explicit taps (any frame
/// phase is expected to live in the gains already). Each tap touches exactly
/// one entry per column.
pub fn reduced_from_taps(taps: &[DdTap], m: usize, n: usize) -> CMat {
    let mn = m * n;
    let mut h = Array2::zeros((mn, mn));
    let (mi, ni) = (m as i64, n as i64);
    for tap in taps {
        for col in 0..mn {
            let (e, b) = ((col / n) as i64, (col % n) as i64);
            let row_dop = (e - tap.doppler).rem_euclid(mi) as usize;
            let row_del = (b + tap.delay).rem_euclid(ni) as usize;
            let mut v = tap.gain
                * unit_root_pow(
                    mn,
                    (tap.doppler * row_del as i64).rem_euclid(mn as i64) as f64,
                );
            if b >= ni - tap.delay {
                v *= unit_root_pow(m, e as f64);
            }
            h[(row_dop * n + row_del, col)] += v;
        }
    }
    h
}

/// Wraps a bin offset to the centered representative in (−span/2, span/2].
fn wrap_centered(x: f64, span: usize) -> f64 {
    let s = span as f64;
    let mut w = x.rem_euclid(s);
    if w > s / 2.0 {
        w -= s;
    }
    w
}

/// Per-path structure matrix of the Dirichlet-spread fractional form:
/// P(ν)·(ν_dirch ⊗ τ_dirch)·Q^H with real periodic-sinc circulant factors,
/// for a unit-gain path. The evolving per-frame scalar multiplies this.
pub fn otfs_frac_path_template(m: usize, n: usize, tau: f64, nu: f64) -> CMat {
    let mn = m * n;
    // Doppler factor oriented as an advance (collapses to Π_M^{−m}), delay
    // factor as a delay (collapses to Π_N^{n}); kernel offsets taken on the
    // centered branch so integer paths reduce to single +1 bins.
    let dop_kernel: Vec<f64> = (0..m)
        .map(|off| dirichlet(wrap_centered(off as f64 - nu, m) / m as f64, m))
        .collect();
    let del_kernel: Vec<f64> = (0..n)
        .map(|off| dirichlet(wrap_centered(off as f64 - tau, n) / n as f64, n))
        .collect();
    let n_round = (tau.round() as i64).rem_euclid(n as i64);
    let (mi, ni) = (m as i64, n as i64);
    let mut h = Array2::zeros((mn, mn));
    for row in 0..mn {
        let (d, a) = ((row / n) as i64, (row % n) as i64);
        let pm = unit_root_pow(mn, (nu * a as f64).rem_euclid(mn as f64));
        for col in 0..mn {
            let (e, b) = ((col / n) as i64, (col % n) as i64);
            let w = dop_kernel[(e - d).rem_euclid(mi) as usize]
                * del_kernel[(a - b).rem_euclid(ni) as usize];
            if w == 0.0 {
                continue;
            }
            let mut v = pm * w;
            if b >= ni - n_round {
                v *= unit_root_pow(m, e as f64);
            }
            h[(row as usize, col as usize)] = v;
        }
    }
    h
}

/// Inter-frame phase of the frame builder, z_MN^{r(MN+c)ν}, shared by the
/// fractional equivalent form and the predictors' tone model.
pub fn frame_phase(m: usize, n: usize, c: usize, frame: usize, nu: f64) -> Complex64 {
    let mn = m * n;
    unit_root_pow(mn, ((frame * (mn + c)) as f64 * nu).rem_euclid(mn as f64))
}

/// Fractional equivalent frame channel: per-path Dirichlet spreading across
/// delay and Doppler bins with the frame builder's inter-frame phase (which
/// reduces to z^{rcm} on integer bins). Per-path drift enters as ν + r·drift.
pub fn otfs_equiv_channel_frac(
    paths: &PathSet,
    m: usize,
    n: usize,
    c: usize,
    frame: usize,
) -> Result<CMat> {
    let mn = m * n;
    let mut h = Array2::zeros((mn, mn));
    for p in &paths.paths {
        let nu = p.doppler + frame as f64 * p.drift;
        let g = p.gain * frame_phase(m, n, c, frame, nu);
        let template = otfs_frac_path_template(m, n, p.delay, nu);
        h.zip_mut_with(&template, |acc, t| *acc += g * t);
    }
    Ok(h)
}

/// First column of the fractional equivalent channel — the entry set the
/// delay-Doppler predictors track. O(P·MN), no matrix build.
pub fn otfs_frac_first_column(paths: &PathSet, m: usize, n: usize, c: usize, frame: usize) -> CVec {
    let mn = m * n;
    let mut col = Array1::zeros(mn);
    let mi = m as i64;
    for p in &paths.paths {
        let nu = p.doppler + frame as f64 * p.drift;
        let g = p.gain * frame_phase(m, n, c, frame, nu);
        for d in 0..m {
            // Template entry (row (d,a), column (0,0)): kernel offset ⟨0−d⟩_M.
            let off = (-(d as i64)).rem_euclid(mi) as usize;
            let dk = dirichlet(wrap_centered(off as f64 - nu, m) / m as f64, m);
            if dk == 0.0 {
                continue;
            }
            for a in 0..n {
                let tk = dirichlet(wrap_centered(a as f64 - p.delay, n) / n as f64, n);
                if tk == 0.0 {
                    continue;
                }
                let pm = unit_root_pow(mn, (nu * a as f64).rem_euclid(mn as f64));
                col[d * n + a] += g * pm * dk * tk;
            }
        }
    }
    col
}

/// Periodicity factor: with c = kN the equivalent channel evolves as
/// H_eq[r] = (L[r] ⊗ I_N)·H_eq[0]·(L[r] ⊗ I_N)^H where
/// L[r] = diag(exp(−j2π r p k/M)). L[r] = I exactly when rk ≡ 0 (mod M).
pub fn periodicity_factor(frame: usize, k: usize, m: usize) -> CMat {
    let mut l = Array2::zeros((m, m));
    for p in 0..m {
        l[(p, p)] = unit_root_neg(m, frame * k * p);
    }
    l
}

/// Diagonal of I_{ant} ⊗ L[r] ⊗ I_N as a vector, for cheap row/column
/// scaling of assembled MIMO matrices and precoders.
pub fn periodicity_scaling(
    frame: usize,
    k: usize,
    m: usize,
    n: usize,
    ant: usize,
) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(ant * m * n);
    for _ in 0..ant {
        for p in 0..m {
            let z = unit_root_neg(m, frame * k * p);
            for _ in 0..n {
                v.push(z);
            }
        }
    }
    v
}

/// Delay-Doppler data grid: M Doppler rows by N delay columns. Vectorizes in
/// the repo-wide order index = doppler·N + delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid {
    pub m_doppler: usize,
    pub n_delay: usize,
    pub data: CMat,
}

impl DdGrid {
    pub fn zeros(m_doppler: usize, n_delay: usize) -> Self {
        DdGrid {
            m_doppler,
            n_delay,
            data: Array2::zeros((m_doppler, n_delay)),
        }
    }

    pub fn vectorize(&self) -> CVec {
        Array1::from_iter(self.data.iter().cloned())
    }

    pub fn from_vector(v: &CVec, m_doppler: usize, n_delay: usize) -> Result<Self> {
        if v.len() != m_doppler * n_delay {
            return Err(DdlsError::InvalidDimension(format!(
                "vector length {} does not match {m_doppler}x{n_delay}",
                v.len()
            )));
        }
        Ok(DdGrid {
            m_doppler,
            n_delay,
            data: Array2::from_shape_vec((m_doppler, n_delay), v.to_vec())
                .expect("shape checked above"),
        })
    }
}

/// Impulse pilot in the delay-Doppler grid with a guard box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdPilot {
    /// Doppler bin of the pilot.
    pub k_doppler: usize,
    /// Delay bin of the pilot.
    pub l_delay: usize,
    pub amplitude: Complex64,
    /// Guard half-width along Doppler, bins.
    pub g_nu: usize,
    /// Guard half-width along delay, bins.
    pub g_tau: usize,
}

impl DdPilot {
    /// Cells of the pilot-plus-guard box (cyclic around the grid edges).
    pub fn region(&self, m: usize, n: usize) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for dk in -(self.g_nu as i64)..=self.g_nu as i64 {
            for dl in -(self.g_tau as i64)..=self.g_tau as i64 {
                let k = (self.k_doppler as i64 + dk).rem_euclid(m as i64) as usize;
                let l = (self.l_delay as i64 + dl).rem_euclid(n as i64) as usize;
                cells.push((k, l));
            }
        }
        cells
    }

    /// Pilot-plus-guard cell count, the OTFS side of the pilot-budget parity.
    pub fn budget(&self) -> usize {
        (2 * self.g_nu + 1) * (2 * self.g_tau + 1)
    }
}

/// Errors when per-antenna pilot-plus-guard regions overlap.
pub fn check_pilot_disjoint(pilots: &[DdPilot], m: usize, n: usize) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for (idx, p) in pilots.iter().enumerate() {
        for cell in p.region(m, n) {
            if !seen.insert(cell) {
                return Err(DdlsError::Config(format!(
                    "pilot regions overlap at {cell:?} (antenna {idx})"
                )));
            }
        }
    }
    Ok(())
}

/// Embeds an impulse pilot into a data grid: the guard box is zeroed, the
/// pilot cell is set, data cells elsewhere are untouched.
pub fn impulse_pilot_frame(pilot: &DdPilot, data: &DdGrid) -> Result<DdGrid> {
    let (m, n) = (data.m_doppler, data.n_delay);
    if 2 * pilot.g_nu + 1 > m || 2 * pilot.g_tau + 1 > n {
        return Err(DdlsError::Config(format!(
            "guard box {}x{} does not fit the {m}x{n} grid",
            2 * pilot.g_nu + 1,
            2 * pilot.g_tau + 1
        )));
    }
    let mut out = data.clone();
    for cell in pilot.region(m, n) {
        out.data[cell] = Complex64::new(0.0, 0.0);
    }
    out.data[(pilot.k_doppler, pilot.l_delay)] = pilot.amplitude;
    Ok(out)
}

/// Phase a unit tap (m, n) contributes at its landing cell for a pilot at
/// (k_p, ℓ_p), from the reduced-form structure: the P_m ramp at the landing
/// delay bin and the Q_n wrap phase at the pilot column.
fn tap_position_phase(
    tap_doppler: i64,
    tap_delay: i64,
    pilot: &DdPilot,
    m: usize,
    n: usize,
) -> Complex64 {
    let mn = m * n;
    let ni = n as i64;
    let land_delay = (pilot.l_delay as i64 + tap_delay).rem_euclid(ni);
    let mut phi = unit_root_pow(mn, (tap_doppler * land_delay).rem_euclid(mn as i64) as f64);
    if pilot.l_delay as i64 >= ni - tap_delay {
        phi *= unit_root_pow(m, pilot.k_doppler as f64);
    }
    phi
}

/// Reads the channel taps off a received delay-Doppler grid around the
/// impulse pilot. Returns the integer taps of the equivalent channel at the
/// received frame (gains include that frame's Doppler phase), thresholded at
/// `threshold` absolute gain. Exact for noiseless integer channels whenever
/// the guards cover the delay/Doppler spread.
pub fn impulse_pilot_estimate(rx: &DdGrid, pilot: &DdPilot, threshold: f64) -> Vec<DdTap> {
    let (m, n) = (rx.m_doppler, rx.n_delay);
    let (mi, ni) = (m as i64, n as i64);
    let mut taps = Vec::new();
    for dk in -(pilot.g_nu as i64)..=pilot.g_nu as i64 {
        for dl in 0..=pilot.g_tau as i64 {
            // A tap (Doppler μ, delay d) lands at (k_p − μ, ℓ_p + d).
            let tap_doppler = -dk;
            let tap_delay = dl;
            let k = (pilot.k_doppler as i64 + dk).rem_euclid(mi) as usize;
            let l = (pilot.l_delay as i64 + dl).rem_euclid(ni) as usize;
            let raw = rx.data[(k, l)];
            let phi = tap_position_phase(tap_doppler, tap_delay, pilot, m, n);
            let gain = raw / (pilot.amplitude * phi);
            if gain.norm() > threshold {
                taps.push(DdTap {
                    doppler: tap_doppler,
                    delay: tap_delay,
                    gain,
                });
            }
        }
    }
    taps.sort_by_key(|t| (t.delay, t.doppler));
    taps
}
