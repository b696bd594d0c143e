//! OFDM modulation chain: per-symbol equivalent channel, time-invariant
//! (per-subcarrier) approximation, the Dirichlet ICI matrix for fractional
//! Doppler, and scattered-pilot channel estimation with separable cubic
//! interpolation.
//!
//! The receive transform is the conjugate of [`crate::linalg::dft_matrix`],
//! so a pure delay of n0 samples appears as diag(exp(−j2π n0 k/N)).

use crate::channel::PathSet;
use crate::error::{DdlsError, Result};
use crate::linalg::{delay_operator, dft_matrix, dirichlet, unit_root_pow};
use crate::solve::adjoint;
use crate::{CMat, CVec};
use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// Time-frequency grid: M symbol rows by N subcarrier columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    pub m_symbols: usize,
    pub n_subcarriers: usize,
    pub data: CMat,
}

impl TfGrid {
    pub fn zeros(m_symbols: usize, n_subcarriers: usize) -> Self {
        TfGrid {
            m_symbols,
            n_subcarriers,
            data: Array2::zeros((m_symbols, n_subcarriers)),
        }
    }
}

/// IDFT + cyclic prefix per symbol; symbols concatenated.
pub fn ofdm_modulate(grid: &TfGrid, c_ofdm: usize) -> Result<Vec<Complex64>> {
    let n = grid.n_subcarriers;
    let f = dft_matrix(n)?;
    let mut out = Vec::with_capacity(grid.m_symbols * (n + c_ofdm));
    for s in 0..grid.m_symbols {
        let row: CVec = grid.data.row(s).to_owned();
        let body = f.dot(&row);
        out.extend(body.iter().skip(n - c_ofdm).cloned());
        out.extend(body.iter().cloned());
    }
    Ok(out)
}

/// CP strip + DFT per symbol.
pub fn ofdm_demodulate(
    samples: &[Complex64],
    m_symbols: usize,
    n_subcarriers: usize,
    c_ofdm: usize,
) -> Result<TfGrid> {
    let sym_len = n_subcarriers + c_ofdm;
    if samples.len() != m_symbols * sym_len {
        return Err(DdlsError::InvalidDimension(format!(
            "expected {} samples, got {}",
            m_symbols * sym_len,
            samples.len()
        )));
    }
    let f = dft_matrix(n_subcarriers)?;
    let fh = adjoint(&f);
    let mut grid = TfGrid::zeros(m_symbols, n_subcarriers);
    for s in 0..m_symbols {
        let body: CVec = Array1::from(samples[s * sym_len + c_ofdm..(s + 1) * sym_len].to_vec());
        let freq = fh.dot(&body);
        grid.data.row_mut(s).assign(&freq);
    }
    Ok(grid)
}

/// Per-symbol equivalent channel: receive and transmit DFTs absorbed,
/// H_eq = F^H·H·F.
pub fn ofdm_equiv_channel(h_sym: &CMat) -> Result<CMat> {
    let n = h_sym.nrows();
    if h_sym.ncols() != n {
        return Err(DdlsError::InvalidDimension(
            "per-symbol channel must be square".into(),
        ));
    }
    let f = dft_matrix(n)?;
    Ok(adjoint(&f).dot(h_sym).dot(&f))
}

/// Time-invariant approximation: keep only the per-subcarrier diagonal.
pub fn ti_approx_channel(h_eq: &CMat) -> CMat {
    let n = h_eq.nrows();
    let mut d = Array2::zeros((n, n));
    for k in 0..n {
        d[(k, k)] = h_eq[(k, k)];
    }
    d
}

/// ICI matrix: entry (k,ℓ) = dirichlet((k−ℓ−δ)/N, N) on the centered offset
/// branch. Integer δ yields the exact cyclically shifted identity.
pub fn ici_matrix(n: usize, delta: f64) -> CMat {
    let rounded = delta.round();
    if (delta - rounded).abs() < 1e-12 {
        let shift = (rounded as i64).rem_euclid(n as i64) as usize;
        let mut m = Array2::zeros((n, n));
        for l in 0..n {
            m[((l + shift) % n, l)] = Complex64::new(1.0, 0.0);
        }
        return m;
    }
    Array2::from_shape_fn((n, n), |(k, l)| {
        let u = wrap_centered(k as f64 - l as f64 - delta, n);
        Complex64::new(dirichlet(u / n as f64, n), 0.0)
    })
}

fn wrap_centered(x: f64, span: usize) -> f64 {
    let s = span as f64;
    let mut w = x.rem_euclid(s);
    if w > s / 2.0 {
        w -= s;
    }
    w
}

/// Frequency-domain factor of one path: the exact Doppler spreading
/// circulant F^H Δ_N(ν/M) F times the delay phase diag(e^{j2πτ⟨−k⟩_N/N}).
pub fn ofdm_freq_path_term(n: usize, m_doppler: usize, tau: f64, nu: f64) -> Result<CMat> {
    let mut term = delay_operator(n, nu / m_doppler as f64)?;
    for k in 0..n {
        let wrap = if k == 0 { 0.0 } else { (n - k) as f64 };
        let d = unit_root_pow(n, (tau * wrap).rem_euclid(n as f64));
        term.column_mut(k).mapv_inplace(|z| z * d);
    }
    Ok(term)
}

/// Equivalent channel of the fractional-Doppler OFDM I/O relationship for
/// symbol `s`: Σ_p h_p z_MN^{s(c+N)ν_p}·(spreading circulant)·(delay phase).
/// Exactly equals `ofdm_equiv_channel(ofdm_symbol_channel(..))` for every
/// path set. Per-path drift advances by OTFS-frame index ⌊s/M⌋.
pub fn ofdm_equiv_channel_frac(
    paths: &PathSet,
    n: usize,
    m_doppler: usize,
    c_ofdm: usize,
    symbol: usize,
) -> Result<CMat> {
    let mn = n * m_doppler;
    let mut h = Array2::zeros((n, n));
    for p in &paths.paths {
        let nu = p.doppler + (symbol / m_doppler) as f64 * p.drift;
        let phase = unit_root_pow(mn, ((symbol * (c_ofdm + n)) as f64 * nu).rem_euclid(mn as f64));
        let term = ofdm_freq_path_term(n, m_doppler, p.delay, nu)?;
        h.zip_mut_with(&term, |acc, t| *acc += p.gain * phase * t);
    }
    Ok(h)
}

/// Per-subcarrier TI gains for symbol `s` (diagonal of the equivalent
/// channel), in closed form.
pub fn ofdm_ti_gains(
    paths: &PathSet,
    n: usize,
    m_doppler: usize,
    c_ofdm: usize,
    symbol: usize,
) -> CVec {
    let mn = n * m_doppler;
    let mut gains: CVec = Array1::zeros(n);
    for p in &paths.paths {
        let nu = p.doppler + (symbol / m_doppler) as f64 * p.drift;
        let phase = unit_root_pow(mn, ((symbol * (c_ofdm + n)) as f64 * nu).rem_euclid(mn as f64));
        // The spreading circulant has a constant diagonal; delay phases vary
        // per subcarrier.
        let delta = nu / m_doppler as f64;
        let diag_const = if (delta - delta.round()).abs() < 1e-12 {
            if (delta.round() as i64).rem_euclid(n as i64) == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        } else {
            // First-column entry at offset 0 of the spreading circulant.
            let u = delta / n as f64;
            Complex64::from_polar(dirichlet(u, n), std::f64::consts::PI * u * (n as f64 - 1.0))
        };
        if diag_const == Complex64::new(0.0, 0.0) {
            continue;
        }
        for k in 0..n {
            let wrap = if k == 0 { 0.0 } else { (n - k) as f64 };
            let d = unit_root_pow(n, (p.delay * wrap).rem_euclid(n as f64));
            gains[k] += p.gain * phase * diag_const * d;
        }
    }
    gains
}

/// Scattered-pilot layout for one transmit antenna: pilots at the listed
/// symbol rows, on the comb base + i·stride within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPattern {
    pub symbol_positions: Vec<usize>,
    pub subcarrier_base: usize,
    pub subcarrier_stride: usize,
    pub subcarriers_per_symbol: usize,
    pub amplitude: Complex64,
}

impl PilotPattern {
    /// Regular-interval layout: symbol stride Δ_n from row n0, comb stride
    /// Δ_k from column k0.
    pub fn from_strides(
        n0: usize,
        k0: usize,
        delta_n: usize,
        delta_k: usize,
        m_symbols: usize,
        n_subcarriers: usize,
        amplitude: Complex64,
    ) -> Result<Self> {
        if delta_n == 0 || delta_k == 0 {
            return Err(DdlsError::Config("pilot strides must be nonzero".into()));
        }
        let symbol_positions: Vec<usize> = (n0..m_symbols).step_by(delta_n).collect();
        let per_symbol = (n_subcarriers.saturating_sub(k0) + delta_k - 1) / delta_k;
        Ok(PilotPattern {
            symbol_positions,
            subcarrier_base: k0,
            subcarrier_stride: delta_k,
            subcarriers_per_symbol: per_symbol,
            amplitude,
        })
    }

    pub fn subcarriers(&self) -> Vec<usize> {
        (0..self.subcarriers_per_symbol)
            .map(|i| self.subcarrier_base + i * self.subcarrier_stride)
            .collect()
    }

    /// All (symbol, subcarrier) pilot cells.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let sc = self.subcarriers();
        let mut out = Vec::with_capacity(self.symbol_positions.len() * sc.len());
        for &s in &self.symbol_positions {
            for &k in &sc {
                out.push((s, k));
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.symbol_positions.len() * self.subcarriers_per_symbol
    }

    fn in_grid(&self, m_symbols: usize, n_subcarriers: usize) -> bool {
        self.symbol_positions.iter().all(|&s| s < m_symbols)
            && self.subcarriers().iter().all(|&k| k < n_subcarriers)
    }
}

/// LS estimation at the pilot cells followed by separable interpolation to
/// every cell of the grid. Returns the gain grid and whether the bilinear
/// fallback was taken (fewer than 4 knots on either axis).
pub fn scattered_pilot_estimate(rx: &TfGrid, pattern: &PilotPattern) -> Result<(TfGrid, bool)> {
    let (m, n) = (rx.m_symbols, rx.n_subcarriers);
    if !pattern.in_grid(m, n) {
        return Err(DdlsError::Config("pilot pattern exceeds the grid".into()));
    }
    if pattern.amplitude.norm() == 0.0 {
        return Err(DdlsError::Config("pilot amplitude must be nonzero".into()));
    }
    let sc = pattern.subcarriers();
    let syms = &pattern.symbol_positions;
    if sc.is_empty() || syms.is_empty() {
        return Err(DdlsError::Config("empty pilot pattern".into()));
    }
    let bilinear = sc.len() < 4 || syms.len() < 4;

    // LS gains at pilot cells.
    let mut ls: CMat = Array2::zeros((syms.len(), sc.len()));
    for (i, &s) in syms.iter().enumerate() {
        for (j, &k) in sc.iter().enumerate() {
            ls[(i, j)] = rx.data[(s, k)] / pattern.amplitude;
        }
    }

    // Frequency axis first: one interpolant per pilot symbol.
    let sc_f: Vec<f64> = sc.iter().map(|&k| k as f64).collect();
    let mut rows: CMat = Array2::zeros((syms.len(), n));
    for i in 0..syms.len() {
        let vals: Vec<Complex64> = (0..sc.len()).map(|j| ls[(i, j)]).collect();
        for k in 0..n {
            rows[(i, k)] = interp_1d(&sc_f, &vals, k as f64, bilinear);
        }
    }

    // Then the time axis per subcarrier.
    let sym_f: Vec<f64> = syms.iter().map(|&s| s as f64).collect();
    let mut grid = TfGrid::zeros(m, n);
    for k in 0..n {
        let vals: Vec<Complex64> = (0..syms.len()).map(|i| rows[(i, k)]).collect();
        for s in 0..m {
            grid.data[(s, k)] = interp_1d(&sym_f, &vals, s as f64, bilinear);
        }
    }
    Ok((grid, bilinear))
}

fn interp_1d(xs: &[f64], ys: &[Complex64], x: f64, linear: bool) -> Complex64 {
    if xs.len() == 1 {
        return ys[0];
    }
    if linear {
        return linear_interp(xs, ys, x);
    }
    let re: Vec<f64> = ys.iter().map(|z| z.re).collect();
    let im: Vec<f64> = ys.iter().map(|z| z.im).collect();
    Complex64::new(cubic_interp(xs, &re, x), cubic_interp(xs, &im, x))
}

fn linear_interp(xs: &[f64], ys: &[Complex64], x: f64) -> Complex64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let mut hi = 1;
    while xs[hi] < x {
        hi += 1;
    }
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] * Complex64::new(1.0 - t, 0.0) + ys[hi] * Complex64::new(t, 0.0)
}

/// Natural cubic spline with clamped (constant) extrapolation beyond the
/// edge knots; second derivatives by the Thomas algorithm.
fn cubic_interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let s = natural_spline_second_derivs(xs, ys);
    let mut hi = 1;
    while xs[hi] < x {
        hi += 1;
    }
    let lo = hi - 1;
    let h = xs[hi] - xs[lo];
    let a = (xs[hi] - x) / h;
    let b = (x - xs[lo]) / h;
    a * ys[lo] + b * ys[hi] + ((a * a * a - a) * s[lo] + (b * b * b - b) * s[hi]) * h * h / 6.0
}

fn natural_spline_second_derivs(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut s = vec![0.0; n];
    if n < 3 {
        return s;
    }
    let m = n - 2;
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        let h0 = xs[i + 1] - xs[i];
        let h1 = xs[i + 2] - xs[i + 1];
        sub[i] = h0;
        diag[i] = 2.0 * (h0 + h1);
        sup[i] = h1;
        rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
    }
    // Thomas algorithm.
    for i in 1..m {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    s[m] = rhs[m - 1] / diag[m - 1];
    for i in (0..m - 1).rev() {
        s[i + 1] = (rhs[i] - sup[i] * s[i + 2]) / diag[i];
    }
    s
}
