//! OFDM side of a Monte Carlo trial: per-symbol equivalent channels with
//! full ICI coupling for propagation, per-subcarrier TI gains for precoding
//! and receive CSI, CE-BEM gain prediction, and scattered-pilot estimation.

use super::{
    frame_bits, frame_noise, pilot_noise, pilot_parity_check, snr_db_to_noise_var, Predictor,
    SnrAccum, Waveform,
};
use crate::channel::MimoChannelSet;
use crate::error::{DdlsError, Result};
use crate::mimo::{column_normalize, mimo_subcarrier_matrices, zf_precoder};
use crate::ofdm::{ofdm_equiv_channel_frac, ofdm_ti_gains, scattered_pilot_estimate, PilotPattern, TfGrid};
use crate::predict::{bem_fit, cebem_basis, CsiHistory};
use crate::scenario::{EstimationMode, PathMode, ScenarioConfig};
use crate::{CMat, CVec};
use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use std::collections::BTreeMap;

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    set: &'a MimoChannelSet,
    n: usize,
    m: usize,
    c: usize,
    nr: usize,
    nt: usize,
    ns: usize,
    delay: usize,
    warmup: usize,
    total: usize,
    sym_len: f64,
    trial_seed: u64,
    /// (symbol, subcarrier) cells carrying payload.
    data_cells: Vec<(usize, usize)>,
    /// Per-antenna scattered-pilot layouts, pilot mode only.
    patterns: Vec<PilotPattern>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a ScenarioConfig, set: &'a MimoChannelSet, trial_seed: u64) -> Result<Self> {
        let g = &cfg.grid;
        let (m, n) = (g.m_doppler, g.n_delay);
        let (data_cells, patterns) = if cfg.estimation == EstimationMode::Pilot {
            let parity = pilot_parity_check(cfg)?;
            let patterns: Vec<PilotPattern> = (0..g.nt)
                .map(|q| PilotPattern {
                    symbol_positions: parity.ofdm_pilot_symbols.clone(),
                    subcarrier_base: q,
                    subcarrier_stride: parity.ofdm_comb_stride,
                    subcarriers_per_symbol: parity.ofdm_comb_size,
                    amplitude: Complex64::new(1.0, 0.0),
                })
                .collect();
            let mut blocked = vec![false; m * n];
            for p in &patterns {
                for (s, k) in p.cells() {
                    blocked[s * n + k] = true;
                }
            }
            let cells = (0..m * n)
                .filter(|&i| !blocked[i])
                .map(|i| (i / n, i % n))
                .collect();
            (cells, patterns)
        } else {
            ((0..m * n).map(|i| (i / n, i % n)).collect(), Vec::new())
        };
        Ok(Ctx {
            cfg,
            set,
            n,
            m,
            c: g.c_ofdm,
            nr: g.nr,
            nt: g.nt,
            ns: g.nr,
            delay: cfg.feedback_delay,
            warmup: cfg.warmup(),
            total: cfg.warmup() + cfg.measured_frames,
            sym_len: (g.c_ofdm + n) as f64,
            trial_seed,
            data_cells,
            patterns,
        })
    }

    /// True per-subcarrier gains of one frame: (symbol, pair·N + l).
    fn true_gains(&self, frame: usize) -> CMat {
        let b = self.nr * self.nt * self.n;
        let mut out = Array2::zeros((self.m, b));
        for s_local in 0..self.m {
            let g = frame * self.m + s_local;
            for (pair, ps) in self.set.pairs.iter().enumerate() {
                let gains = ofdm_ti_gains(ps, self.n, self.m, self.c, g);
                for l in 0..self.n {
                    out[(s_local, pair * self.n + l)] = gains[l];
                }
            }
        }
        out
    }

    /// Full equivalent channel with ICI for one global symbol, antenna-major.
    fn full_symbol_channel(&self, global_symbol: usize) -> Result<CMat> {
        let mut g = Array2::zeros((self.n * self.nr, self.n * self.nt));
        for p in 0..self.nr {
            for q in 0..self.nt {
                let block = ofdm_equiv_channel_frac(
                    self.set.pair(p, q),
                    self.n,
                    self.m,
                    self.c,
                    global_symbol,
                )?;
                g.slice_mut(s![p * self.n..(p + 1) * self.n, q * self.n..(q + 1) * self.n])
                    .assign(&block);
            }
        }
        Ok(g)
    }
}

/// Per-subcarrier ZF precoders from a gain row, columns normalized.
fn precoders_from_gains(gains_row: &[Complex64], nr: usize, nt: usize, n: usize) -> Result<Vec<CMat>> {
    let per_pair: Vec<CVec> = (0..nr * nt)
        .map(|pair| Array1::from_iter((0..n).map(|l| gains_row[pair * n + l])))
        .collect();
    let mats = mimo_subcarrier_matrices(&per_pair, nr, nt, n);
    mats.iter()
        .map(|h| {
            let mut w = zf_precoder(h)?.matrix;
            let streams = w.ncols();
            column_normalize(&mut w, streams);
            Ok(w)
        })
        .collect()
}

fn gains_nmse(est: &CMat, truth: &CMat) -> f64 {
    let num: f64 = est
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = truth.iter().map(|z| z.norm_sqr()).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub(crate) fn run(
    cfg: &ScenarioConfig,
    set: &MimoChannelSet,
    predictors: &[Predictor],
    trial_seed: u64,
) -> Result<Vec<Vec<SnrAccum>>> {
    let ctx = Ctx::new(cfg, set, trial_seed)?;
    let nsnr = cfg.snr_db.len();
    let mut acc = vec![vec![SnrAccum::default(); nsnr]; predictors.len()];
    match cfg.estimation {
        EstimationMode::Ideal => {
            let all: Vec<usize> = (0..nsnr).collect();
            run_frames(&ctx, predictors, &mut acc, &all, None)?;
        }
        EstimationMode::Pilot => {
            if cfg.mode == PathMode::Fractional {
                return Err(DdlsError::Incompatible(
                    "fractional scenarios assume ideal channel knowledge".into(),
                ));
            }
            for si in 0..nsnr {
                run_frames(&ctx, predictors, &mut acc, &[si], Some(si))?;
            }
        }
    }
    Ok(acc)
}

fn run_frames(
    ctx: &Ctx,
    predictors: &[Predictor],
    acc: &mut [Vec<SnrAccum>],
    snr_indices: &[usize],
    pilot_snr: Option<usize>,
) -> Result<()> {
    let b_entries = ctx.nr * ctx.nt * ctx.n;
    let basis = cebem_basis(
        ctx.cfg.num_paths,
        ctx.cfg.nu_max_cycles_per_sample(),
        ctx.cfg.basis_offset_bins / ctx.cfg.grid.mn() as f64,
    );
    let window = ctx.cfg.window_snapshots;

    // CSI gain grids per frame: the truth in ideal mode, scattered-pilot
    // estimates in pilot mode. Filled lazily, evicted once stale.
    let mut csi: BTreeMap<usize, CMat> = BTreeMap::new();

    for frame in ctx.warmup..ctx.total {
        let g_true = ctx.true_gains(frame);
        let equiv: Vec<CMat> = (0..ctx.m)
            .map(|s_local| ctx.full_symbol_channel(frame * ctx.m + s_local))
            .collect::<Result<_>>()?;

        // Ideal per-subcarrier precoders double as the NMSE reference and
        // anchor the SNR axis via their received energy.
        let w_ideal: Vec<Vec<CMat>> = (0..ctx.m)
            .map(|s_local| {
                precoders_from_gains(
                    g_true.row(s_local).as_slice().expect("contiguous row"),
                    ctx.nr,
                    ctx.nt,
                    ctx.n,
                )
            })
            .collect::<Result<_>>()?;
        let mut e_ref = 0.0;
        for s_local in 0..ctx.m {
            for l in 0..ctx.n {
                let h_l = Array2::from_shape_fn((ctx.nr, ctx.nt), |(p, q)| {
                    g_true[(s_local, (p * ctx.nt + q) * ctx.n + l)]
                });
                e_ref += h_l
                    .dot(&w_ideal[s_local][l])
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>();
            }
        }
        e_ref /= (ctx.nr * ctx.m * ctx.n) as f64;

        let csi_frame = frame - ctx.delay;
        let ensure_csi = |f: usize, csi: &mut BTreeMap<usize, CMat>| -> Result<()> {
            if csi.contains_key(&f) {
                return Ok(());
            }
            let grid = match pilot_snr {
                None => ctx.true_gains(f),
                Some(si) => estimate_gains_from_pilots(ctx, f, ctx.cfg.snr_db[si])?,
            };
            csi.insert(f, grid);
            Ok(())
        };

        let bits = frame_bits(ctx.trial_seed, frame, 2 * ctx.ns * ctx.data_cells.len());
        let syms = crate::mimo::qpsk_map(&bits)?;
        let noise_unit = frame_noise(
            ctx.trial_seed,
            frame,
            Waveform::Ofdm,
            ctx.m * ctx.n * ctx.nr,
        );

        for (pi, pred) in predictors.iter().enumerate() {
            // Predicted gain grid for this frame (None has no estimate).
            let est_gains: Option<CMat> = match pred {
                Predictor::Ideal => Some(g_true.clone()),
                Predictor::None => None,
                Predictor::Stale => {
                    ensure_csi(csi_frame, &mut csi)?;
                    Some(csi[&csi_frame].clone())
                }
                Predictor::Cebem => {
                    // Window: the last `window` symbols up to the CSI frame.
                    let mut hist = CsiHistory::new();
                    let last_g = (csi_frame + 1) * ctx.m - 1;
                    let first_g = (last_g + 1).saturating_sub(window);
                    for g in first_g..=last_g {
                        let f = g / ctx.m;
                        ensure_csi(f, &mut csi)?;
                        let row = csi[&f].row(g % ctx.m).to_owned();
                        hist.push(g as f64 * ctx.sym_len, row)?;
                    }
                    let fit = bem_fit(&hist, &basis.frequencies, ctx.cfg.predict.lambda_amp_rel)?;
                    let mut grid = Array2::zeros((ctx.m, b_entries));
                    for s_local in 0..ctx.m {
                        let t = (frame * ctx.m + s_local) as f64 * ctx.sym_len;
                        grid.row_mut(s_local).assign(&fit.predict(t));
                    }
                    Some(grid)
                }
                _ => {
                    return Err(DdlsError::Incompatible(format!(
                        "predictor {pred} is not an OFDM pipeline"
                    )))
                }
            };

            let chan_nmse = match &est_gains {
                Some(g) => gains_nmse(g, &g_true),
                None => 1.0,
            };

            // Per-symbol precoders.
            let w_pred: Vec<Vec<CMat>> = match (&est_gains, pred) {
                (_, Predictor::Ideal) => w_ideal.clone(),
                (None, _) => {
                    let mut w: CMat = Array2::zeros((ctx.nt, ctx.ns));
                    let scale = Complex64::new(1.0 / (ctx.ns as f64).sqrt(), 0.0);
                    for j in 0..ctx.ns {
                        w[(j, j)] = scale;
                    }
                    vec![vec![w; ctx.n]; ctx.m]
                }
                (Some(g), _) => (0..ctx.m)
                    .map(|s_local| {
                        precoders_from_gains(
                            g.row(s_local).as_slice().expect("contiguous row"),
                            ctx.nr,
                            ctx.nt,
                            ctx.n,
                        )
                    })
                    .collect::<Result<_>>()?,
            };

            let mut wq_num = 0.0;
            let mut wq_den = 0.0;
            for s_local in 0..ctx.m {
                for l in 0..ctx.n {
                    wq_num += w_pred[s_local][l]
                        .iter()
                        .zip(w_ideal[s_local][l].iter())
                        .map(|(a, b)| (a - b).norm_sqr())
                        .sum::<f64>();
                    wq_den += w_ideal[s_local][l].iter().map(|z| z.norm_sqr()).sum::<f64>();
                }
            }
            let prec_nmse = if wq_den > 0.0 { wq_num / wq_den } else { 0.0 };

            // Transmission: per-symbol frequency-domain signal through the
            // ICI-coupled true channel.
            let mut y_sig: CVec = Array1::zeros(ctx.m * ctx.n * ctx.nr);
            for s_local in 0..ctx.m {
                let mut x: CVec = Array1::zeros(ctx.n * ctx.nt);
                // Data cells of this symbol, in lexicographic cell order.
                for (ci, &(cs, cl)) in ctx.data_cells.iter().enumerate() {
                    if cs != s_local {
                        continue;
                    }
                    let mut stream_syms: CVec = Array1::zeros(ctx.ns);
                    for j in 0..ctx.ns {
                        stream_syms[j] = syms[j * ctx.data_cells.len() + ci];
                    }
                    let tx = w_pred[s_local][cl].dot(&stream_syms);
                    for q in 0..ctx.nt {
                        x[q * ctx.n + cl] += tx[q];
                    }
                }
                // Pilot cells transmit the unit pilots of their antenna.
                for (q, pat) in ctx.patterns.iter().enumerate() {
                    if pat.symbol_positions.contains(&s_local) {
                        for k in pat.subcarriers() {
                            x[q * ctx.n + k] = pat.amplitude;
                        }
                    }
                }
                let y = equiv[s_local].dot(&x);
                y_sig
                    .slice_mut(s![s_local * ctx.n * ctx.nr..(s_local + 1) * ctx.n * ctx.nr])
                    .assign(&y);
            }

            for &si in snr_indices {
                // SNR referenced to the genie precoder's received energy.
                let noise_var = e_ref * snr_db_to_noise_var(ctx.cfg.snr_db[si]);
                let sigma = noise_var.sqrt();
                let y_all = &y_sig + &noise_unit.mapv(|z| z * sigma);
                // Per-subcarrier LMMSE on the true effective gains.
                let mut rx_bits: Vec<u8> = Vec::with_capacity(bits.len());
                let mut rx_syms: CVec = Array1::zeros(ctx.ns * ctx.data_cells.len());
                for (ci, &(cs, cl)) in ctx.data_cells.iter().enumerate() {
                    let mut yl: CVec = Array1::zeros(ctx.nr);
                    for p in 0..ctx.nr {
                        yl[p] = y_all[cs * ctx.n * ctx.nr + p * ctx.n + cl];
                    }
                    let h_l = Array2::from_shape_fn((ctx.nr, ctx.nt), |(p, q)| {
                        g_true[(cs, (p * ctx.nt + q) * ctx.n + cl)]
                    });
                    let eff = h_l.dot(&w_pred[cs][cl]);
                    let est = crate::mimo::lmmse_equalize(&yl, &eff, noise_var)?;
                    for j in 0..ctx.ns {
                        rx_syms[j * ctx.data_cells.len() + ci] = est[j];
                    }
                }
                for j in 0..ctx.ns * ctx.data_cells.len() {
                    let z = rx_syms[j];
                    rx_bits.push(if z.re >= 0.0 { 0 } else { 1 });
                    rx_bits.push(if z.im >= 0.0 { 0 } else { 1 });
                }
                acc[pi][si].record_bits(&bits, &rx_bits);
                acc[pi][si].record_frame(chan_nmse, Some(prec_nmse));
            }
        }

        let keep_from = frame.saturating_sub(ctx.delay + window / ctx.m + 1);
        csi.retain(|&f, _| f >= keep_from);
    }
    Ok(())
}

/// Scattered-pilot sounding of one frame: pilots only on the grid, then LS +
/// separable interpolation per antenna pair. Returns the estimated gain
/// grid in the same layout as [`Ctx::true_gains`].
fn estimate_gains_from_pilots(ctx: &Ctx, frame: usize, snr_db: f64) -> Result<CMat> {
    // Reference energy of this frame under ideal per-subcarrier precoding.
    let g_true = ctx.true_gains(frame);
    let w_ideal: Vec<Vec<CMat>> = (0..ctx.m)
        .map(|s_local| {
            precoders_from_gains(
                g_true.row(s_local).as_slice().expect("contiguous row"),
                ctx.nr,
                ctx.nt,
                ctx.n,
            )
        })
        .collect::<Result<_>>()?;
    let mut e_ref = 0.0;
    for s_local in 0..ctx.m {
        for l in 0..ctx.n {
            let h_l = Array2::from_shape_fn((ctx.nr, ctx.nt), |(p, q)| {
                g_true[(s_local, (p * ctx.nt + q) * ctx.n + l)]
            });
            e_ref += h_l
                .dot(&w_ideal[s_local][l])
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>();
        }
    }
    e_ref /= (ctx.nr * ctx.m * ctx.n) as f64;
    let noise_var = e_ref * snr_db_to_noise_var(snr_db);
    let sigma = noise_var.sqrt();
    let noise = pilot_noise(
        ctx.trial_seed,
        frame,
        Waveform::Ofdm,
        ctx.m * ctx.n * ctx.nr,
    );
    // Received grids per rx antenna.
    let mut rx_grids: Vec<TfGrid> = (0..ctx.nr).map(|_| TfGrid::zeros(ctx.m, ctx.n)).collect();
    for s_local in 0..ctx.m {
        let mut x: CVec = Array1::zeros(ctx.n * ctx.nt);
        for (q, pat) in ctx.patterns.iter().enumerate() {
            if pat.symbol_positions.contains(&s_local) {
                for k in pat.subcarriers() {
                    x[q * ctx.n + k] = pat.amplitude;
                }
            }
        }
        let g = ctx.full_symbol_channel(frame * ctx.m + s_local)?;
        let y = g.dot(&x);
        for p in 0..ctx.nr {
            for k in 0..ctx.n {
                let idx = s_local * ctx.n * ctx.nr + p * ctx.n + k;
                rx_grids[p].data[(s_local, k)] = y[p * ctx.n + k] + noise[idx] * sigma;
            }
        }
    }
    let mut out = Array2::zeros((ctx.m, ctx.nr * ctx.nt * ctx.n));
    for p in 0..ctx.nr {
        for (q, pat) in ctx.patterns.iter().enumerate() {
            let (est, _) = scattered_pilot_estimate(&rx_grids[p], pat)?;
            for s_local in 0..ctx.m {
                for l in 0..ctx.n {
                    out[(s_local, (p * ctx.nt + q) * ctx.n + l)] = est.data[(s_local, l)];
                }
            }
        }
    }
    Ok(out)
}
