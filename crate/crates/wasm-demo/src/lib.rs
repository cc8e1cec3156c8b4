//! Browser demo bindings. Three interactive operations, each taking and
//! returning JSON strings so the page needs no generated TypeScript glue:
//!
//! * [`scene_psd`] — synthesize a scene, push it through one satellite's
//!   channel and return the power spectrum with the band-occupancy truth;
//! * [`doppler_pearson`] — the Pearson matrix of one scene under random
//!   Doppler shifts;
//! * [`packet_demo`] — packetize an embedding, drop packets, and show what the
//!   ground station reassembles.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use cospec_core::compressor::Embedding;
use cospec_core::downlink;
use cospec_core::harness::analyze_doppler;
use cospec_core::scene::{
    apply_satellite_channel, generate_occupancy, synthesize_baseband, BandGrid,
    ChannelRealization,
};
use cospec_core::spectrum::{decimate, periodogram_db};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEMO_SAMPLES: usize = 4096;
const PLOT_POINTS: usize = 1024;

#[derive(Deserialize)]
struct SceneParams {
    seed: u64,
    num_signals: usize,
    snr_db: f64,
    doppler_khz: f64,
}

#[derive(Serialize)]
struct BandInfo {
    lo_mhz: f64,
    hi_mhz: f64,
    occupied: bool,
}

#[derive(Serialize)]
struct ScenePsd {
    psd_db: Vec<f64>,
    freq_mhz: Vec<f64>,
    bands: Vec<BandInfo>,
}

fn scene_psd_impl(params: &SceneParams) -> Result<ScenePsd, String> {
    let grid = BandGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let truth = generate_occupancy(&grid, params.num_signals.clamp(1, grid.num_bands), &mut rng)
        .map_err(|e| e.to_string())?;
    let scene = synthesize_baseband(&truth, &grid, DEMO_SAMPLES, params.seed)
        .map_err(|e| e.to_string())?;
    let doppler = (params.doppler_khz * 1e3).clamp(-480e3, 480e3);
    let snr = if params.snr_db >= 30.0 { f64::INFINITY } else { params.snr_db };
    let ch = ChannelRealization::new(doppler, 0.0, snr, params.seed ^ 0x5eed)
        .map_err(|e| e.to_string())?;
    let rx = apply_satellite_channel(&scene, &ch);

    let psd = periodogram_db(&rx.samples, -60.0);
    let psd_db = decimate(&psd, PLOT_POINTS);
    let n = psd_db.len();
    let freq_mhz: Vec<f64> = (0..n)
        .map(|i| i as f64 / n as f64 * grid.f_nyq_hz() / 1e6)
        .collect();
    let bands = (0..grid.num_bands)
        .map(|b| BandInfo {
            lo_mhz: b as f64 * grid.band_width_hz / 1e6,
            hi_mhz: (b + 1) as f64 * grid.band_width_hz / 1e6,
            occupied: truth.bits[b],
        })
        .collect();
    Ok(ScenePsd {
        psd_db,
        freq_mhz,
        bands,
    })
}

/// JSON in: `{seed, num_signals, snr_db, doppler_khz}` (snr >= 30 disables
/// noise). JSON out: `{psd_db, freq_mhz, bands}`.
#[wasm_bindgen]
pub fn scene_psd(params_json: &str) -> Result<String, JsValue> {
    let params: SceneParams =
        serde_json::from_str(params_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let out = scene_psd_impl(&params).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[derive(Deserialize)]
struct DopplerParams {
    seed: u64,
    num_shifts: usize,
}

#[derive(Serialize)]
struct DopplerOut {
    matrix: Vec<Vec<f64>>,
    shifts_khz: Vec<f64>,
    mean_abs_offdiag: f64,
}

fn doppler_impl(params: &DopplerParams) -> Result<DopplerOut, String> {
    let grid = BandGrid::default();
    let shifts = params.num_shifts.clamp(2, 24);
    let (m, shifts_hz, mean_abs) =
        analyze_doppler(&grid, shifts, DEMO_SAMPLES, params.seed).map_err(|e| e.to_string())?;
    Ok(DopplerOut {
        matrix: (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect(),
        shifts_khz: shifts_hz.iter().map(|s| s / 1e3).collect(),
        mean_abs_offdiag: mean_abs,
    })
}

/// JSON in: `{seed, num_shifts}`. JSON out:
/// `{matrix, shifts_khz, mean_abs_offdiag}`.
#[wasm_bindgen]
pub fn doppler_pearson(params_json: &str) -> Result<String, JsValue> {
    let params: DopplerParams =
        serde_json::from_str(params_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let out = doppler_impl(&params).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[derive(Deserialize)]
struct PacketParams {
    seed: u64,
    m: usize,
    rate_percent: f64,
}

#[derive(Serialize)]
struct PacketOut {
    num_packets: usize,
    dropped: Vec<bool>,
    original: Vec<f32>,
    corrupted: Vec<f32>,
    mask: Vec<bool>,
    corrupted_fraction: f64,
}

fn packet_impl(params: &PacketParams) -> Result<PacketOut, String> {
    let m = params.m.clamp(1, 2048);
    let rate = (params.rate_percent / 100.0).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // A smooth waveform reads better on screen than white noise.
    let values: Vec<f32> = (0..m)
        .map(|i| {
            let t = i as f64 * 0.12;
            (t.sin() + 0.4 * (2.7 * t).cos() + rng.gen_range(-0.1..0.1)) as f32
        })
        .collect();
    let emb = Embedding::clean(values.clone());
    let stream = downlink::packetize(&emb).map_err(|e| e.to_string())?;
    let cfg = downlink::LossChannelConfig::new(rate, params.seed ^ 0x1055)
        .map_err(|e| e.to_string())?;
    let lossy = downlink::drop_packets(&stream, &cfg).map_err(|e| e.to_string())?;
    let recovered = downlink::depacketize(&lossy, m).map_err(|e| e.to_string())?;
    let masked = recovered.loss_mask.iter().filter(|&&b| b).count();
    Ok(PacketOut {
        num_packets: lossy.packets.len(),
        dropped: lossy.dropped.clone(),
        original: values,
        corrupted: recovered.values,
        mask: recovered.loss_mask,
        corrupted_fraction: masked as f64 / m as f64,
    })
}

/// JSON in: `{seed, m, rate_percent}`. JSON out: `{num_packets, dropped,
/// original, corrupted, mask, corrupted_fraction}`.
#[wasm_bindgen]
pub fn packet_demo(params_json: &str) -> Result<String, JsValue> {
    let params: PacketParams =
        serde_json::from_str(params_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let out = packet_impl(&params).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}
