//! End-to-end harness checks at miniature scale: predictor orderings,
//! the deterministic/genie equivalence on integer channels, estimation
//! modes, and run-to-run determinism.

use ddls_core::harness::{
    pilot_parity_check, run_scenario, run_trial, Predictor, Waveform,
};
use ddls_core::scenario::{builtin_scenario, EstimationMode, PathMode, ScenarioConfig};

fn mini(name: &str, mode: PathMode) -> ScenarioConfig {
    let mut cfg = builtin_scenario("vanet-integer").unwrap();
    cfg.name = name.into();
    cfg.mode = mode;
    cfg.grid.m_doppler = 8;
    cfg.grid.n_delay = 8;
    cfg.grid.c_ofdm = 2;
    cfg.grid.c_otfs = 16;
    // Keep the Doppler bound just under one bin on the small grid.
    cfg.max_doppler_hz = 0.96 * cfg.grid.scs_hz / cfg.grid.m_doppler as f64;
    cfg.window_snapshots = 8;
    cfg.measured_frames = 4;
    cfg.trials = 3;
    cfg.snr_db = vec![10.0, 30.0];
    cfg.base_seed = 11;
    cfg.basis_offset_bins = if mode == PathMode::Integer { 1.0 / 7.0 } else { 0.0 };
    cfg.validate().unwrap();
    cfg
}

#[test]
fn ideal_pipelines_improve_with_snr() {
    // Uncoded ZF precoding is fade-limited, so miniature-scale levels are
    // high; the genie chain must still be exact in its CSI and monotone in
    // SNR.
    let cfg = mini("mini-int", PathMode::Integer);
    let table = run_scenario(
        &cfg,
        &[
            (Waveform::Otfs, Predictor::Ideal),
            (Waveform::Ofdm, Predictor::Ideal),
        ],
        None,
    )
    .unwrap();
    for wf in [Waveform::Otfs, Waveform::Ofdm] {
        let lo = table.find(wf, Predictor::Ideal, 10.0).unwrap();
        let hi = table.find(wf, Predictor::Ideal, 30.0).unwrap();
        assert!(hi.ber < lo.ber, "{wf}: {} !< {}", hi.ber, lo.ber);
        assert!(hi.ber < 0.3, "{wf} genie BER {}", hi.ber);
        assert!(hi.precoder_nmse < 1e-18);
        assert!(hi.chan_nmse < 1e-18);
    }
}

#[test]
fn deterministic_update_equals_genie_on_integer_channels() {
    let cfg = mini("mini-det", PathMode::Integer);
    let table = run_scenario(
        &cfg,
        &[
            (Waveform::Otfs, Predictor::Ideal),
            (Waveform::Otfs, Predictor::Deterministic),
            (Waveform::Otfs, Predictor::Stale),
        ],
        None,
    )
    .unwrap();
    for &snr in &cfg.snr_db {
        let ideal = table.find(Waveform::Otfs, Predictor::Ideal, snr).unwrap();
        let det = table
            .find(Waveform::Otfs, Predictor::Deterministic, snr)
            .unwrap();
        assert_eq!(det.ber, ideal.ber, "snr {snr}");
        assert!(det.precoder_nmse < 1e-15, "prediction exactness");
    }
    // The stale precoder pays for the Doppler rotation it ignores.
    let det_hi = table
        .find(Waveform::Otfs, Predictor::Deterministic, 30.0)
        .unwrap();
    let stale_hi = table.find(Waveform::Otfs, Predictor::Stale, 30.0).unwrap();
    assert!(stale_hi.ber > det_hi.ber);
}

#[test]
fn fractional_predictor_ordering() {
    let cfg = mini("mini-frac", PathMode::Fractional);
    let table = run_scenario(
        &cfg,
        &[
            (Waveform::Otfs, Predictor::GcebemGn),
            (Waveform::Otfs, Predictor::Gcebem),
            (Waveform::Otfs, Predictor::Stale),
        ],
        None,
    )
    .unwrap();
    let gn = table
        .find(Waveform::Otfs, Predictor::GcebemGn, 30.0)
        .unwrap();
    let gce = table.find(Waveform::Otfs, Predictor::Gcebem, 30.0).unwrap();
    let stale = table.find(Waveform::Otfs, Predictor::Stale, 30.0).unwrap();
    assert!(
        gn.ber <= gce.ber && gce.ber <= stale.ber,
        "ordering violated: gn {} gce {} stale {}",
        gn.ber,
        gce.ber,
        stale.ber
    );
    assert!(gn.chan_nmse < gce.chan_nmse);
}

#[test]
fn ofdm_cebem_pays_a_prediction_penalty() {
    let cfg = mini("mini-ofdm", PathMode::Integer);
    let table = run_scenario(
        &cfg,
        &[
            (Waveform::Ofdm, Predictor::Cebem),
            (Waveform::Ofdm, Predictor::Ideal),
            (Waveform::Ofdm, Predictor::None),
        ],
        None,
    )
    .unwrap();
    let cebem = table.find(Waveform::Ofdm, Predictor::Cebem, 30.0).unwrap();
    let ideal = table.find(Waveform::Ofdm, Predictor::Ideal, 30.0).unwrap();
    let none = table.find(Waveform::Ofdm, Predictor::None, 30.0).unwrap();
    assert!(cebem.ber >= ideal.ber);
    assert!(cebem.chan_nmse > 1e-12);
    assert!(ideal.chan_nmse < 1e-18);
    // The unprecoded baseline estimates nothing.
    assert!((none.chan_nmse - 1.0).abs() < 1e-12);
}

#[test]
fn pilot_estimation_tracks_ideal_at_high_snr() {
    let mut cfg = mini("mini-est", PathMode::Integer);
    cfg.estimation = EstimationMode::Pilot;
    pilot_parity_check(&cfg).unwrap();
    let table = run_scenario(
        &cfg,
        &[
            (Waveform::Otfs, Predictor::Deterministic),
            (Waveform::Ofdm, Predictor::Stale),
        ],
        None,
    )
    .unwrap();
    let mut ideal_cfg = cfg.clone();
    ideal_cfg.estimation = EstimationMode::Ideal;
    let ideal_table = run_scenario(
        &ideal_cfg,
        &[(Waveform::Otfs, Predictor::Deterministic)],
        None,
    )
    .unwrap();
    let det = table
        .find(Waveform::Otfs, Predictor::Deterministic, 30.0)
        .unwrap();
    let det_ideal = ideal_table
        .find(Waveform::Otfs, Predictor::Deterministic, 30.0)
        .unwrap();
    // Impulse estimation at 30 dB: near-exact taps, so the estimated-CSI
    // pipeline stays close to its ideal-CSI counterpart.
    assert!(det.chan_nmse < 1e-2, "chan nmse {}", det.chan_nmse);
    assert!(
        det.ber <= det_ideal.ber + 0.05,
        "estimated {} vs ideal {}",
        det.ber,
        det_ideal.ber
    );
    let ofdm = table.find(Waveform::Ofdm, Predictor::Stale, 30.0).unwrap();
    assert!(ofdm.ber <= 0.5);
}

#[test]
fn run_trial_single_point_matches_matrix_row() {
    let cfg = mini("mini-single", PathMode::Integer);
    let row = run_trial(&cfg, Waveform::Otfs, Predictor::Ideal, 10.0, cfg.base_seed).unwrap();
    assert_eq!(row.snr_db, 10.0);
    assert_eq!(row.frames, cfg.measured_frames);
    assert!(row.ber <= 1.0);
}

#[test]
fn scenario_runs_are_deterministic() {
    let cfg = mini("mini-rep", PathMode::Fractional);
    let variants = [
        (Waveform::Otfs, Predictor::Gcebem),
        (Waveform::Ofdm, Predictor::Cebem),
    ];
    let a = run_scenario(&cfg, &variants, None).unwrap();
    let b = run_scenario(&cfg, &variants, None).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.ber, y.ber);
        assert_eq!(x.ber_stderr, y.ber_stderr);
        assert_eq!(x.chan_nmse, y.chan_nmse);
        assert_eq!(x.precoder_nmse, y.precoder_nmse);
    }
}

#[test]
fn incompatible_pipelines_are_rejected() {
    let cfg = mini("mini-bad", PathMode::Fractional);
    assert!(run_scenario(&cfg, &[(Waveform::Otfs, Predictor::Deterministic)], None).is_err());
    assert!(run_scenario(&cfg, &[(Waveform::Ofdm, Predictor::Gcebem)], None).is_err());
}
