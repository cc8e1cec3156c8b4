//! Results table, CSV emission, analytic FLOPs accounting and SVG figures.

use ndarray::Array2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::fusion::GlssConfig;
use crate::{Error, Result};

/// One measurement: reproducible from (config, seed) alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub snr_db: f64,
    pub loss_rate: f64,
    /// Signal count this row aggregates over; 0 pools the whole list.
    pub num_signals: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,snr_db,loss_rate,num_signals,metric,value,seed\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.model, r.snr_db, r.loss_rate, r.num_signals, r.metric, r.value, r.seed
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Serde(format!("csv line {} has {} fields", ln + 1, f.len())));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Serde(format!("csv line {}: {e}", ln + 1)))
            };
            rows.push(ResultRow {
                model: f[0].to_string(),
                snr_db: parse_f(f[1])?,
                loss_rate: parse_f(f[2])?,
                num_signals: f[3]
                    .parse()
                    .map_err(|e| Error::Serde(format!("csv line {}: {e}", ln + 1)))?,
                metric: f[4].to_string(),
                value: parse_f(f[5])?,
                seed: f[6]
                    .parse()
                    .map_err(|e| Error::Serde(format!("csv line {}: {e}", ln + 1)))?,
            });
        }
        Ok(ResultsTable { rows })
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn extend(&mut self, other: ResultsTable) {
        self.rows.extend(other.rows);
    }

    /// Pooled-row lookup (num_signals = 0).
    pub fn value(&self, model: &str, snr_db: f64, loss_rate: f64, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.model == model
                    && r.metric == metric
                    && r.num_signals == 0
                    && (r.snr_db - snr_db).abs() < 1e-9
                    && (r.loss_rate - loss_rate).abs() < 1e-12
            })
            .map(|r| r.value)
    }

    /// Mean of a metric over every pooled row of a model (e.g. accuracy across
    /// the whole SNR grid).
    pub fn mean_over_grid(&self, model: &str, metric: &str, loss_rate: Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.model == model
                    && r.metric == metric
                    && r.num_signals == 0
                    && loss_rate.is_none_or(|lr| (r.loss_rate - lr).abs() < 1e-12)
            })
            .map(|r| r.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Analytic multiply-accumulate count for one forward pass of the graph
/// classifier, doubled into FLOPs. Attention accounting per head: the shared
/// projection (K*in*out), the two score dot products (2*K*out), the pairwise
/// score additions (K^2) and the weighted aggregation (K^2*out).
pub fn glss_flops(cfg: &GlssConfig, k: usize) -> u64 {
    let k = k as u64;
    let t = cfg.heads as u64;
    let gat = |in_dim: u64, out_dim: u64| -> u64 {
        t * (k * in_dim * out_dim + 2 * k * out_dim + k * k + k * k * out_dim)
    };
    let gat1_in = cfg.dense1_out as u64;
    let gat1_out = cfg.gat1_out as u64;
    let gat2_in = match cfg.combine {
        crate::fusion::HeadCombine::Concat => gat1_out * t,
        crate::fusion::HeadCombine::Average => gat1_out,
    };
    let gat2_out = cfg.gat2_out as u64;
    let dense2_in = match cfg.combine {
        crate::fusion::HeadCombine::Concat => gat2_out * t,
        crate::fusion::HeadCombine::Average => gat2_out,
    };
    let macs = k * (cfg.input_dim as u64) * (cfg.dense1_out as u64)
        + gat(gat1_in, gat1_out)
        + gat(gat2_in, gat2_out)
        + dense2_in * (cfg.num_bands as u64);
    2 * macs
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

/// One named polyline.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Minimal deterministic SVG line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (64.0, 24.0, 40.0, 48.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0).max(1e-12) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0).max(1e-12) * ph;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>",
        w / 2.0
    );
    // Axes and ticks.
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>",
        mt + ph,
        ml + pw,
        mt + ph,
        mt + ph
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>",
            sx(fx),
            mt + ph + 18.0,
            fx,
            ml - 6.0,
            sy(fy) + 4.0,
            fy
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{x_label}</text>\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>",
        ml + pw / 2.0,
        mt + ph + 38.0,
        mt + ph / 2.0,
        mt + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            pts.trim_end()
        );
        for &(x, y) in &s.points {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.6\" fill=\"{color}\"/>",
                sx(x),
                sy(y)
            );
        }
        let ly = mt + 14.0 * i as f64;
        let _ = write!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            ml + pw - 150.0,
            ly,
            ml + pw - 136.0,
            ly + 9.0,
            s.name
        );
    }
    svg.push_str("</svg>");
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

/// Deterministic SVG heatmap with a blue-white-red ramp over [-1, 1] by
/// default (Pearson matrices), or the data range when wider.
pub fn heatmap(title: &str, m: &Array2<f64>) -> String {
    let (rows, cols) = (m.nrows(), m.ncols());
    let cell = (360.0 / rows.max(cols) as f64).min(40.0);
    let (ml, mt) = (60.0, 50.0);
    let w = ml + cell * cols as f64 + 30.0;
    let h = mt + cell * rows as f64 + 30.0;
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min).min(-1.0);
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(1.0);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\
         <rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>",
        w / 2.0
    );
    for i in 0..rows {
        for j in 0..cols {
            let t = ((m[(i, j)] - lo) / (hi - lo)).clamp(0.0, 1.0);
            // blue (0) -> white (0.5) -> red (1)
            let (r, g, b) = if t < 0.5 {
                let u = t * 2.0;
                ((255.0 * u) as u8, (255.0 * u) as u8, 255u8)
            } else {
                let u = (t - 0.5) * 2.0;
                (255u8, (255.0 * (1.0 - u)) as u8, (255.0 * (1.0 - u)) as u8)
            };
            let _ = write!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({r},{g},{b})\"><title>{:.4}</title></rect>",
                ml + j as f64 * cell,
                mt + i as f64 * cell,
                m[(i, j)]
            );
        }
    }
    svg.push_str("</svg>");
    svg
}

fn pct(rate: f64) -> String {
    format!("{}%", rate * 100.0)
}

/// Emits one figure per available analysis (recovery error, recovery
/// correlation, sensing accuracy, and any sweep families present in the
/// table), plus the raw CSV next to them. Returns the written paths.
pub fn emit_plots<P: AsRef<Path>>(table: &ResultsTable, dir: P) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let csv = dir.join("results.csv");
    table.write_csv(&csv)?;
    written.push(csv);

    let mut snrs: Vec<f64> = Vec::new();
    let mut rates: Vec<f64> = Vec::new();
    let mut base_models: Vec<String> = Vec::new();
    let mut sweep_models: Vec<String> = Vec::new();
    for r in &table.rows {
        if !snrs.iter().any(|&s| (s - r.snr_db).abs() < 1e-9) {
            snrs.push(r.snr_db);
        }
        if !rates.iter().any(|&s| (s - r.loss_rate).abs() < 1e-12) {
            rates.push(r.loss_rate);
        }
        let bucket = if r.model.contains('[') {
            &mut sweep_models
        } else {
            &mut base_models
        };
        if !bucket.contains(&r.model) {
            bucket.push(r.model.clone());
        }
    }
    snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let metric_chart = |metric: &str, models: &[String], title: &str, ylab: &str| -> Option<String> {
        let mut series = Vec::new();
        for model in models {
            for &rate in &rates {
                let points: Vec<(f64, f64)> = snrs
                    .iter()
                    .filter_map(|&snr| table.value(model, snr, rate, metric).map(|v| (snr, v)))
                    .collect();
                if !points.is_empty() {
                    series.push(Series {
                        name: format!("{model} @{}", pct(rate)),
                        points,
                    });
                }
            }
        }
        if series.is_empty() {
            None
        } else {
            Some(line_chart(title, "SNR (dB)", ylab, &series))
        }
    };

    let figures: Vec<(&str, Option<String>)> = vec![
        (
            "recovery_mse.svg",
            metric_chart("mse", &base_models, "Recovery error vs SNR", "MSE"),
        ),
        (
            "recovery_pearson.svg",
            metric_chart(
                "pearson",
                &base_models,
                "Recovery correlation vs SNR",
                "Pearson r",
            ),
        ),
        (
            "sensing_accuracy.svg",
            metric_chart(
                "accuracy",
                &base_models,
                "Per-band sensing accuracy vs SNR",
                "accuracy",
            ),
        ),
        (
            "heads_sweep.svg",
            metric_chart(
                "accuracy",
                &family(&sweep_models, "[heads="),
                "Attention heads sweep",
                "accuracy",
            ),
        ),
        (
            "embedding_dim.svg",
            metric_chart(
                "accuracy",
                &family(&sweep_models, "[m="),
                "Embedding dimension sweep",
                "accuracy",
            ),
        ),
        (
            "num_satellites.svg",
            metric_chart(
                "accuracy",
                &family(&sweep_models, "[k="),
                "Collaborating satellites sweep",
                "accuracy",
            ),
        ),
        (
            "sampling_mode.svg",
            metric_chart(
                "accuracy",
                &{
                    let mut fam = family(&sweep_models, "[cosets=");
                    fam.extend(family(&sweep_models, "[mode="));
                    fam
                },
                "Sampling mode and coset count sweep",
                "accuracy",
            ),
        ),
    ];

    for (name, content) in figures {
        if let Some(svg) = content {
            let path = dir.join(name);
            std::fs::write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn family(models: &[String], tag: &str) -> Vec<String> {
    models.iter().filter(|m| m.contains(tag)).cloned().collect()
}

/// Recovery waveform comparison: raw vs both compressors, first `n` elements.
pub fn emit_recovery_visual<P: AsRef<Path>>(
    raw: &[f64],
    cae: &[f64],
    ae: &[f64],
    n: usize,
    path: P,
) -> Result<()> {
    let take = n.min(raw.len());
    let s = |v: &[f64], name: &str| Series {
        name: name.to_string(),
        points: v[..take].iter().enumerate().map(|(i, &y)| (i as f64, y)).collect(),
    };
    let svg = line_chart(
        "Raw vs recovered observation (first samples)",
        "sample index",
        "amplitude",
        &[s(raw, "raw"), s(cae, "cae"), s(ae, "ae")],
    );
    std::fs::write(path, svg)?;
    Ok(())
}
