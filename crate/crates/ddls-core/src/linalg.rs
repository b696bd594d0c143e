//! Deterministic builders for the structured complex matrices the channel
//! and waveform modules compose: normalized DFT, diagonal phase ramps,
//! cyclic (possibly fractional) delay operators, Doppler phase operators,
//! Kronecker products, and the periodic-sinc Dirichlet kernel.
//!
//! Conventions, fixed repo-wide and pinned by the tests below:
//! * `dft_matrix(l)` has entry (r,c) = exp(+j2π rc/l)/√l.
//! * `delay_operator(l, n)` with integer `n` is the cyclic delay sending
//!   e_q to e_{q+n mod l}; fractional arguments give the circulant
//!   bandlimited interpolator F^H D(τ) F.
//! * `doppler_operator(l, ν)` is diag(exp(+j2π ν r/l)).

use crate::error::{DdlsError, Result};
use crate::CMat;
use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::{PI, TAU};

/// exp(j·2π·x/l).
#[inline]
pub fn unit_root_pow(l: usize, x: f64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * x / l as f64)
}

/// Unitary DFT matrix with entry (r,c) = exp(j2π rc/l)/√l.
pub fn dft_matrix(l: usize) -> Result<CMat> {
    if l == 0 {
        return Err(DdlsError::InvalidDimension(
            "dft_matrix requires l >= 1".into(),
        ));
    }
    let scale = 1.0 / (l as f64).sqrt();
    Ok(Array2::from_shape_fn((l, l), |(r, c)| {
        // r·c reduced mod l: exact in integer arithmetic, keeps the phase
        // argument small.
        unit_root_pow(l, ((r * c) % l) as f64) * scale
    }))
}

/// Diagonal matrix D_l(x) with entry (r,r) = exp(j2π x r/l).
pub fn phase_diag(l: usize, x: f64) -> Result<CMat> {
    if l == 0 {
        return Err(DdlsError::InvalidDimension(
            "phase_diag requires l >= 1".into(),
        ));
    }
    let mut m = Array2::zeros((l, l));
    for r in 0..l {
        m[(r, r)] = unit_root_pow(l, (x * r as f64).rem_euclid(l as f64));
    }
    Ok(m)
}

/// Diagonal entries of D_l(x) as a vector, for callers that scale rows or
/// columns without materializing the matrix.
pub fn phase_diag_vec(l: usize, x: f64) -> Vec<Complex64> {
    (0..l)
        .map(|r| unit_root_pow(l, (x * r as f64).rem_euclid(l as f64)))
        .collect()
}

/// Cyclic delay operator Π_l(τ).
///
/// Integer τ gives the exact 0/1 cyclic shift with Π[p,q] = δ(⟨p−q−τ⟩_l),
/// i.e. e_q ↦ e_{q+τ}. Fractional τ gives the circulant bandlimited
/// interpolator whose first column is (1/l)·Σ_r exp(j2π r(τ−p)/l).
pub fn delay_operator(l: usize, tau: f64) -> Result<CMat> {
    if l == 0 {
        return Err(DdlsError::InvalidDimension(
            "delay_operator requires l >= 1".into(),
        ));
    }
    let li = l as i64;
    let rounded = tau.round();
    if (tau - rounded).abs() < 1e-9 {
        let n = (rounded as i64).rem_euclid(li) as usize;
        let mut m = Array2::zeros((l, l));
        for q in 0..l {
            m[((q + n) % l, q)] = Complex64::new(1.0, 0.0);
        }
        return Ok(m);
    }
    // First column, then circulant completion C[i,j] = col[⟨i−j⟩_l].
    let col: Vec<Complex64> = (0..l)
        .map(|p| {
            let u = (tau - p as f64) / l as f64;
            let mag = dirichlet(u, l);
            Complex64::from_polar(mag, PI * u * (l as f64 - 1.0))
        })
        .collect();
    Ok(Array2::from_shape_fn((l, l), |(i, j)| {
        col[(i as i64 - j as i64).rem_euclid(li) as usize]
    }))
}

/// Doppler phase operator Δ_l(ν) = diag(exp(j2π ν r/l)).
pub fn doppler_operator(l: usize, nu: f64) -> Result<CMat> {
    phase_diag(l, nu)
}

/// Kronecker product A ⊗ B.
pub fn kronecker(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::zeros((ra * rb, ca * cb));
    for i1 in 0..ra {
        for j1 in 0..ca {
            let v = a[(i1, j1)];
            if v == Complex64::new(0.0, 0.0) {
                continue;
            }
            for i2 in 0..rb {
                for j2 in 0..cb {
                    out[(i1 * rb + i2, j1 * cb + j2)] = v * b[(i2, j2)];
                }
            }
        }
    }
    out
}

/// Periodic-sinc Dirichlet kernel sin(πlu)/(l·sin(πu)), with the removable
/// singularities at integer u resolved by the cos-ratio limit.
pub fn dirichlet(u: f64, l: usize) -> f64 {
    let lf = l as f64;
    let s = (PI * u).sin();
    if s.abs() < 1e-9 {
        (PI * lf * u).cos() / (PI * u).cos()
    } else {
        (PI * lf * u).sin() / (lf * s)
    }
}

/// Max absolute entry of A − B; test and oracle helper.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.dim(), b.dim(), "dimension mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Identity matrix of size l.
pub fn eye(l: usize) -> CMat {
    Array2::eye(l)
}
