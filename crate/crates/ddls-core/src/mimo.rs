//! MIMO assembly of the per-pair equivalent channels, zero-forcing
//! precoding, deterministic OTFS precoder prediction via the periodicity
//! factor, LMMSE equalization, QPSK mapping and BER counting.
//!
//! Convention: channel matrices are (rx)·dim × (tx)·dim, precoders map
//! stream vectors (streams = rx count) to transmit vectors, and the
//! composite H·W is the identity on the stream dimension under perfect CSI.

use crate::channel::MimoChannelSet;
use crate::error::{DdlsError, Result};
use crate::ofdm::ofdm_ti_gains;
use crate::otfs::{otfs_equiv_channel_frac, otfs_equiv_channel_reduced, periodicity_scaling};
use crate::scenario::PathMode;
use crate::solve::{adjoint, inv, solve};
use crate::{CMat, CVec};
use ndarray::{s, Array1, Array2};
use num_complex::Complex64;

/// Per-subcarrier MIMO matrices H̃_l[s] (each Nr×Nt) for one OFDM symbol.
pub fn assemble_mimo_ofdm(
    set: &MimoChannelSet,
    n: usize,
    m: usize,
    c_ofdm: usize,
    symbol: usize,
) -> Vec<CMat> {
    let gains: Vec<CVec> = set
        .pairs
        .iter()
        .map(|ps| ofdm_ti_gains(ps, n, m, c_ofdm, symbol))
        .collect();
    mimo_subcarrier_matrices(&gains, set.nr, set.nt, n)
}

/// Arranges per-pair per-subcarrier gains into Nr×Nt matrices per subcarrier.
pub fn mimo_subcarrier_matrices(
    gains_per_pair: &[CVec],
    nr: usize,
    nt: usize,
    n: usize,
) -> Vec<CMat> {
    (0..n)
        .map(|l| {
            Array2::from_shape_fn((nr, nt), |(p, q)| gains_per_pair[p * nt + q][l])
        })
        .collect()
}

/// Block-diagonal stack of per-subcarrier matrices: the NN_r × NN_t form.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.slice_mut(s![r0..r0 + b.nrows(), c0..c0 + b.ncols()])
            .assign(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Full MNN_r × MNN_t OTFS MIMO matrix for frame r: per-pair equivalent
/// channels (reduced form on integer channels, Dirichlet-spread form on
/// fractional ones) arranged in the receive-major block grid.
pub fn assemble_mimo_otfs(
    set: &MimoChannelSet,
    m: usize,
    n: usize,
    c: usize,
    frame: usize,
    mode: PathMode,
) -> Result<CMat> {
    let mn = m * n;
    let mut full = Array2::zeros((mn * set.nr, mn * set.nt));
    for p in 0..set.nr {
        for q in 0..set.nt {
            let block = match mode {
                PathMode::Integer => otfs_equiv_channel_reduced(set.pair(p, q), m, n, c, frame)?,
                PathMode::Fractional => otfs_equiv_channel_frac(set.pair(p, q), m, n, c, frame)?,
            };
            full.slice_mut(s![p * mn..(p + 1) * mn, q * mn..(q + 1) * mn])
                .assign(&block);
        }
    }
    Ok(full)
}

/// Scope of a precoder matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecoderScope {
    PerSubcarrier(usize),
    PerFrame,
}

/// A zero-forcing precoder and the CSI it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    /// tx-dim × stream-dim matrix applied at the transmitter.
    pub matrix: CMat,
    pub scope: PrecoderScope,
    /// Frame the CSI snapshot was taken at.
    pub csi_frame: i64,
    /// True when the regularized fallback was needed.
    pub regularized: bool,
}

/// Numerical-rank guard: the exact right inverse is kept only while the
/// effective conditioning ‖H‖_F·‖W‖_F/rows stays below this. The bound also
/// keeps the LU inverse accurate enough for the deterministic-prediction
/// exactness contract (errors grow like κ·ε per entry).
const ZF_CONDITION_LIMIT: f64 = 1e3;
/// Tikhonov weight of the regularized fallback, relative to the mean
/// squared singular value tr(HH^H)/rows. Directions more than ~20 dB below
/// the average channel gain are suppressed instead of inverted.
const ZF_RIDGE_REL: f64 = 5e-3;

/// Zero-forcing right inverse W = H^H (H H^H)^{−1} of an rx×tx channel with
/// rx ≤ tx. Numerically rank-deficient instances (frame-level OTFS channels
/// routinely graze exact singularity) fall back to the Tikhonov form
/// H^H (H H^H + εI)^{−1} with ε = 5e−3·tr(HH^H)/rows, and are flagged. The
/// fallback commutes exactly with the frame periodicity conjugation, so
/// precoder prediction is unaffected by which branch ran.
pub fn zf_precoder(h: &CMat) -> Result<Precoder> {
    let (rows, cols) = h.dim();
    if rows > cols {
        return Err(DdlsError::Config(format!(
            "zero-forcing needs rx <= tx, got {rows}x{cols}"
        )));
    }
    let h_fro: f64 = h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let healthy = |w: &CMat| -> bool {
        let w_fro: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        w_fro.is_finite() && h_fro * w_fro / rows as f64 <= ZF_CONDITION_LIMIT
    };
    if rows == cols {
        if let Ok(w) = inv(h) {
            if healthy(&w) {
                return Ok(Precoder {
                    matrix: w,
                    scope: PrecoderScope::PerFrame,
                    csi_frame: 0,
                    regularized: false,
                });
            }
        }
    }
    let gram = h.dot(&adjoint(h));
    if rows < cols {
        if let Ok(x) = inv(&gram) {
            let w = adjoint(h).dot(&x);
            if healthy(&w) {
                return Ok(Precoder {
                    matrix: w,
                    scope: PrecoderScope::PerFrame,
                    csi_frame: 0,
                    regularized: false,
                });
            }
        }
    }
    let trace: f64 = (0..rows).map(|i| gram[(i, i)].re).sum();
    let eps = ZF_RIDGE_REL * trace.max(f64::MIN_POSITIVE) / rows as f64;
    let mut reg = gram;
    for i in 0..rows {
        reg[(i, i)] += Complex64::new(eps, 0.0);
    }
    let w = adjoint(h).dot(&inv(&reg)?);
    Ok(Precoder {
        matrix: w,
        scope: PrecoderScope::PerFrame,
        csi_frame: 0,
        regularized: true,
    })
}

/// Normalizes each precoder column to power 1/streams_per_use so the total
/// transmit power is one per channel use regardless of the channel
/// realization. For a per-subcarrier precoder streams_per_use is the column
/// count; for a whole-frame OTFS precoder it is the stream count per
/// delay-Doppler sample (the columns span streams × samples).
pub fn column_normalize(w: &mut CMat, streams_per_use: usize) {
    let ns = streams_per_use as f64;
    for mut col in w.columns_mut() {
        let norm: f64 = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scale = 1.0 / (norm * ns.sqrt());
            col.mapv_inplace(|z| z * scale);
        }
    }
}

/// Deterministic OTFS precoder update across `delta_frames` frames:
/// W[r+Δ] = (I_Nt ⊗ L[Δ] ⊗ I_N) · W[r] · (I_Nr ⊗ L[Δ] ⊗ I_N)^H.
/// Requires the periodicity condition c = kN of the grid (k passed in).
pub fn predict_otfs_precoder(
    w0: &Precoder,
    delta_frames: usize,
    k: usize,
    m: usize,
    n: usize,
    nt: usize,
    nr: usize,
) -> Result<Precoder> {
    let mn = m * n;
    if w0.matrix.dim() != (mn * nt, mn * nr) {
        return Err(DdlsError::InvalidDimension(format!(
            "precoder is {:?}, expected {}x{}",
            w0.matrix.dim(),
            mn * nt,
            mn * nr
        )));
    }
    let row_scale = periodicity_scaling(delta_frames, k, m, n, nt);
    let col_scale = periodicity_scaling(delta_frames, k, m, n, nr);
    let mut w = w0.matrix.clone();
    for (i, mut row) in w.rows_mut().into_iter().enumerate() {
        let zr = row_scale[i];
        for (j, v) in row.iter_mut().enumerate() {
            *v *= zr * col_scale[j].conj();
        }
    }
    Ok(Precoder {
        matrix: w,
        scope: w0.scope,
        csi_frame: w0.csi_frame,
        regularized: w0.regularized,
    })
}

/// LMMSE equalizer: x̂ = H^H (H H^H + σ²I)^{−1} y for the effective channel
/// (precoder included).
pub fn lmmse_equalize(y: &CVec, h_eff: &CMat, noise_var: f64) -> Result<CVec> {
    let rows = h_eff.nrows();
    if y.len() != rows {
        return Err(DdlsError::InvalidDimension(format!(
            "received vector has {} entries for {} rows",
            y.len(),
            rows
        )));
    }
    let mut gram = h_eff.dot(&adjoint(h_eff));
    for i in 0..rows {
        gram[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    let z = solve(&gram, y)?;
    Ok(adjoint(h_eff).dot(&z))
}

/// Gray-mapped unit-energy QPSK: bit pair (b0, b1) → ((1−2b0) + j(1−2b1))/√2.
pub fn qpsk_map(bits: &[u8]) -> Result<CVec> {
    if bits.len() % 2 != 0 {
        return Err(DdlsError::InvalidDimension(
            "QPSK needs an even number of bits".into(),
        ));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Ok(Array1::from_iter(bits.chunks_exact(2).map(|b| {
        Complex64::new(
            if b[0] == 0 { s } else { -s },
            if b[1] == 0 { s } else { -s },
        )
    })))
}

/// Hard-decision demapping by component signs.
pub fn qpsk_demap(symbols: &CVec) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * 2);
    for z in symbols.iter() {
        bits.push(if z.re >= 0.0 { 0 } else { 1 });
        bits.push(if z.im >= 0.0 { 0 } else { 1 });
    }
    bits
}

/// Bit error rate: Hamming distance over length.
pub fn ber(tx: &[u8], rx: &[u8]) -> Result<f64> {
    if tx.len() != rx.len() {
        return Err(DdlsError::InvalidDimension(format!(
            "bit streams differ in length: {} vs {}",
            tx.len(),
            rx.len()
        )));
    }
    if tx.is_empty() {
        return Ok(0.0);
    }
    let errors = tx.iter().zip(rx).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / tx.len() as f64)
}
