//! Command-line frontend: dataset generation, training, evaluation, ablation
//! sweeps and report emission.
//!
//! Exit codes: 0 success, 2 configuration error, 3 training failure,
//! 1 anything else.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use cospec_core::compressor::{save_compressor, CompressorTrainCfg};
use cospec_core::fusion::dcs::save_dcs;
use cospec_core::fusion::{save_glss, FusionTrainCfg};
use cospec_core::harness::dataset::{
    build_observation_set, load_observation_set, save_observation_set, scene_specs,
};
use cospec_core::harness::pipeline::{
    build_recovered_graphs, run_pipeline, train_ae_on, train_cae_on, train_dcs_on, train_glss_on,
    ModelBundle,
};
use cospec_core::harness::report::{emit_plots, emit_recovery_visual, glss_flops, heatmap, ResultsTable};
use cospec_core::harness::{analyze_doppler, AblationAxis, ExperimentConfig, Split};
use cospec_core::nn::Schedule;
use cospec_core::{derive_seed, Error};

#[derive(Parser)]
#[command(name = "cospec", version, about = "Multi-satellite collaborative spectrum sensing simulator")]
struct Cli {
    /// TOML experiment configuration; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in profile when no config file is given: "full" or "quick".
    #[arg(long, global = true, default_value = "full")]
    profile: String,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Satellite count override.
    #[arg(long, global = true)]
    satellites: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build seeded observation datasets (and optionally raw scene dumps).
    Generate(GenerateArgs),
    /// Train the contrastive autoencoder on a generated train split.
    TrainCae(TrainArgs),
    /// Train the plain autoencoder baseline.
    TrainAe(TrainArgs),
    /// Train the graph classifier on compressor-recovered data.
    TrainGlss(TrainFusionArgs),
    /// Train the CNN baseline on the same recovered data.
    TrainDcs(TrainFusionArgs),
    /// Run the full evaluation sweep and write results.csv.
    Evaluate(EvaluateArgs),
    /// Sweep one axis (heads, embedding_dim, num_satellites, num_cosets,
    /// sampling_mode), retraining per point.
    Ablate(AblateArgs),
    /// Pearson analysis of one scene under random Doppler shifts.
    AnalyzeDoppler(DopplerArgs),
    /// Analytic forward-pass complexity of the graph classifier.
    Flops,
    /// Render figures from a results CSV.
    Plot(PlotArgs),
    /// Hex dump of a packetized embedding, optionally after the loss channel.
    DumpPackets(DumpArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// train, val, test or all.
    #[arg(long, default_value = "all")]
    split: String,
    /// Also dump this many raw Nyquist-rate scenes.
    #[arg(long, default_value_t = 0)]
    raw_scenes: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Observation container base path (without extension), e.g. out/dataset/train.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct TrainFusionArgs {
    #[arg(long)]
    data: PathBuf,
    /// Compressor checkpoint whose recoveries feed the classifier.
    #[arg(long)]
    cae: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    cae: Option<PathBuf>,
    #[arg(long)]
    ae: Option<PathBuf>,
    #[arg(long)]
    glss: Option<PathBuf>,
    #[arg(long)]
    dcs: Option<PathBuf>,
    /// Also emit a waveform comparison figure for one test observation.
    #[arg(long, default_value_t = false)]
    visual: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    axis: String,
}

#[derive(Args)]
struct DopplerArgs {
    #[arg(long, default_value_t = 16)]
    shifts: usize,
    #[arg(long, default_value_t = 6400)]
    duration: usize,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    table: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    /// Embedding length.
    #[arg(long, default_value_t = 640)]
    m: usize,
    /// Packet loss rate applied before dumping.
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn load_config(cli: &Cli) -> cospec_core::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match cli.profile.as_str() {
            "full" => ExperimentConfig::full(),
            "quick" => ExperimentConfig::quick(),
            other => {
                return Err(Error::Config(format!(
                    "unknown profile '{other}' (expected full or quick)"
                )))
            }
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.satellites {
        cfg.num_satellites = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_train_log(
    path: &std::path::Path,
    schedule: &Schedule,
    history: &[f64],
) -> cospec_core::Result<()> {
    let mut csv = String::from("epoch,lr,loss\n");
    for (i, loss) in history.iter().enumerate() {
        let epoch = i + 1;
        csv.push_str(&format!("{},{},{}\n", epoch, schedule.lr_at(epoch), loss));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn run(cli: &Cli) -> cospec_core::Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;

    match &cli.command {
        Command::Generate(args) => {
            let coset = cfg.coset_config()?;
            let dir = cli.out.join("dataset");
            std::fs::create_dir_all(&dir)?;
            let splits: Vec<(Split, usize, &str)> = match args.split.as_str() {
                "train" => vec![(Split::Train, cfg.train_scenes, "train")],
                "val" => vec![(Split::Val, cfg.val_scenes, "val")],
                "test" => vec![(Split::Test, cfg.test_scenes, "test")],
                "all" => vec![
                    (Split::Train, cfg.train_scenes, "train"),
                    (Split::Val, cfg.val_scenes, "val"),
                    (Split::Test, cfg.test_scenes, "test"),
                ],
                other => return Err(Error::Config(format!("unknown split '{other}'"))),
            };
            for (split, count, name) in splits {
                let specs = scene_specs(&cfg, split, count, None);
                let set = build_observation_set(&cfg, &coset, cfg.num_satellites, &specs)?;
                save_observation_set(dir.join(name), &cfg, &set)?;
                println!(
                    "wrote {} scenes x {} satellites to {}",
                    set.scenes.len(),
                    set.num_satellites,
                    dir.join(name).display()
                );
            }
            if args.raw_scenes > 0 {
                let raw_dir = cli.out.join("scenes");
                std::fs::create_dir_all(&raw_dir)?;
                let specs = scene_specs(&cfg, Split::Train, args.raw_scenes, None);
                for spec in &specs {
                    let scene = cospec_core::harness::dataset::build_scene(
                        &cfg,
                        spec,
                        coset.required_input_len(),
                    )?;
                    let channels: Vec<_> = (0..cfg.num_satellites)
                        .map(|sat| {
                            cospec_core::scene::ChannelRealization::draw(
                                spec.seed,
                                sat,
                                spec.mean_snr_db,
                            )
                        })
                        .collect();
                    cospec_core::scene::save_scene(
                        raw_dir.join(format!("scene{:05}", spec.index)),
                        &scene,
                        &channels,
                    )?;
                }
                println!("wrote {} raw scenes to {}", specs.len(), raw_dir.display());
            }
        }
        Command::TrainCae(args) => {
            let set = load_observation_set(&args.data)?;
            let (params, history) = train_cae_on(&cfg, &set)?;
            let dir = cli.out.join("cae");
            let tc = CompressorTrainCfg {
                schedule: cfg.compressor_schedule(),
                alpha1: cfg.alpha1,
                alpha2: cfg.alpha2,
                corrupt_rate_range: cfg.train_corrupt_range,
                init_seed: derive_seed(cfg.seed, "cae-init", 0),
            };
            save_compressor(&dir, &params, &tc, &history)?;
            write_train_log(&dir.join("train_log.csv"), &tc.schedule, &history)?;
            println!("cae checkpoint at {} (final loss {:.6})", dir.display(), history.last().unwrap());
        }
        Command::TrainAe(args) => {
            let set = load_observation_set(&args.data)?;
            let (params, history) = train_ae_on(&cfg, &set)?;
            let dir = cli.out.join("ae");
            let tc = CompressorTrainCfg {
                schedule: cfg.compressor_schedule(),
                alpha1: cfg.alpha1,
                alpha2: 0.0,
                corrupt_rate_range: (0.0, 0.0),
                init_seed: derive_seed(cfg.seed, "cae-init", 0),
            };
            save_compressor(&dir, &params, &tc, &history)?;
            write_train_log(&dir.join("train_log.csv"), &tc.schedule, &history)?;
            println!("ae checkpoint at {} (final loss {:.6})", dir.display(), history.last().unwrap());
        }
        Command::TrainGlss(args) => {
            let set = load_observation_set(&args.data)?;
            let (cae, _) = cospec_core::compressor::load_compressor(&args.cae)?;
            let graphs = build_recovered_graphs(&cfg, &set, &cae)?;
            let (model, history) = train_glss_on(&cfg, &graphs)?;
            let dir = cli.out.join("glss");
            let tc = FusionTrainCfg {
                schedule: cfg.schedule,
                init_seed: derive_seed(cfg.seed, "glss-init", 0),
            };
            save_glss(&dir, &model, &tc, &history)?;
            write_train_log(&dir.join("train_log.csv"), &cfg.schedule, &history)?;
            println!("glss checkpoint at {} (final loss {:.6})", dir.display(), history.last().unwrap());
        }
        Command::TrainDcs(args) => {
            let set = load_observation_set(&args.data)?;
            let (cae, _) = cospec_core::compressor::load_compressor(&args.cae)?;
            let graphs = build_recovered_graphs(&cfg, &set, &cae)?;
            let (model, history) = train_dcs_on(&cfg, &graphs, set.num_satellites)?;
            let dir = cli.out.join("dcs");
            let tc = FusionTrainCfg {
                schedule: cfg.schedule,
                init_seed: derive_seed(cfg.seed, "dcs-init", 0),
            };
            save_dcs(&dir, &model, &tc, &history)?;
            write_train_log(&dir.join("train_log.csv"), &cfg.schedule, &history)?;
            println!("dcs checkpoint at {} (final loss {:.6})", dir.display(), history.last().unwrap());
        }
        Command::Evaluate(args) => {
            let mut models = ModelBundle::default();
            if let Some(p) = &args.cae {
                models.cae = Some(cospec_core::compressor::load_compressor(p)?.0);
            }
            if let Some(p) = &args.ae {
                models.ae = Some(cospec_core::compressor::load_compressor(p)?.0);
            }
            if let Some(p) = &args.glss {
                models.glss = Some(cospec_core::fusion::load_glss(p)?.0);
            }
            if let Some(p) = &args.dcs {
                models.dcs = Some(cospec_core::fusion::dcs::load_dcs(p)?.0);
            }
            let table = run_pipeline(&cfg, &models)?;
            let path = cli.out.join("results.csv");
            table.write_csv(&path)?;
            println!("wrote {} rows to {}", table.rows.len(), path.display());
            if args.visual {
                if let (Some(cae), Some(ae)) = (&models.cae, &models.ae) {
                    let coset = cfg.coset_config()?;
                    let specs = scene_specs(&cfg, Split::Test, 1, Some(0.0));
                    let set = build_observation_set(&cfg, &coset, cfg.num_satellites, &specs)?;
                    let raw = &set.scenes[0].observations[0];
                    let zc = cospec_core::compressor::encode(raw, &cae.enc)?;
                    let (zch, _) = cospec_core::downlink::corrupt_values(
                        &zc.as_f64(),
                        cfg.loss_rates[0],
                        derive_seed(cfg.seed, "visual-drop", 0),
                    )?;
                    let embc = cospec_core::compressor::Embedding::clean(
                        zch.iter().map(|&v| v as f32).collect(),
                    );
                    let cae_rec = cospec_core::compressor::decode(&embc, &cae.dec)?.0.values;
                    let za = cospec_core::compressor::encode(raw, &ae.enc)?;
                    let (zah, _) = cospec_core::downlink::corrupt_values(
                        &za.as_f64(),
                        cfg.loss_rates[0],
                        derive_seed(cfg.seed, "visual-drop", 0),
                    )?;
                    let emba = cospec_core::compressor::Embedding::clean(
                        zah.iter().map(|&v| v as f32).collect(),
                    );
                    let ae_rec = cospec_core::compressor::decode(&emba, &ae.dec)?.0.values;
                    let vpath = cli.out.join("recovery_visual.svg");
                    emit_recovery_visual(raw, &cae_rec, &ae_rec, 200, &vpath)?;
                    println!("wrote {}", vpath.display());
                }
            }
        }
        Command::Ablate(args) => {
            let axis: AblationAxis = args.axis.parse()?;
            let table = cospec_core::harness::ablate(&cfg, axis)?;
            let path = cli.out.join(format!("ablate_{}.csv", axis.name()));
            table.write_csv(&path)?;
            println!("wrote {} rows to {}", table.rows.len(), path.display());
        }
        Command::AnalyzeDoppler(args) => {
            let (m, shifts, mean_abs) =
                analyze_doppler(&cfg.grid, args.shifts, args.duration, cfg.seed)?;
            let mut csv = String::from("i,j,doppler_i_hz,doppler_j_hz,pearson\n");
            for i in 0..shifts.len() {
                for j in 0..shifts.len() {
                    csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        i,
                        j,
                        shifts[i],
                        shifts[j],
                        m[(i, j)]
                    ));
                }
            }
            let csv_path = cli.out.join("doppler_pearson.csv");
            std::fs::write(&csv_path, csv)?;
            let svg_path = cli.out.join("doppler_pearson.svg");
            std::fs::write(&svg_path, heatmap("Pearson coefficient across Doppler shifts", &m))?;
            println!(
                "mean |off-diagonal| = {:.4} over {} shifts; wrote {} and {}",
                mean_abs,
                shifts.len(),
                csv_path.display(),
                svg_path.display()
            );
        }
        Command::Flops => {
            let gcfg = cfg.glss_config();
            println!("analytic forward-pass complexity of the graph classifier");
            println!("config: input_dim={} heads={} widths=({}, {}, {})", gcfg.input_dim, gcfg.heads, gcfg.dense1_out, gcfg.gat1_out, gcfg.gat2_out);
            for k in [3usize, 5, 7, 10] {
                let f = glss_flops(&gcfg, k);
                println!("  K={k:2}  {:.2} MFLOPs", f as f64 / 1e6);
            }
            let own = glss_flops(&gcfg, cfg.num_satellites);
            println!(
                "configured K={}: {:.2} MFLOPs (published figure for a comparable 10-satellite configuration: 220.61 MFLOPs; architectures differ in unstated details, no equality implied)",
                cfg.num_satellites,
                own as f64 / 1e6
            );
        }
        Command::Plot(args) => {
            let table = ResultsTable::read_csv(&args.table)?;
            let written = emit_plots(&table, &cli.out)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::DumpPackets(args) => {
            let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(args.seed);
            let values: Vec<f32> = (0..args.m).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            let emb = cospec_core::compressor::Embedding::clean(values);
            let stream = cospec_core::downlink::packetize(&emb)?;
            let stream = if args.rate > 0.0 {
                cospec_core::downlink::drop_packets(
                    &stream,
                    &cospec_core::downlink::LossChannelConfig::new(args.rate, args.seed)?,
                )?
            } else {
                stream
            };
            print!("{}", cospec_core::downlink::dump_hex(&stream));
            println!(
                "{} packets, {} dropped, payload {} bytes",
                stream.packets.len(),
                stream.num_dropped(),
                stream.payload_len
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::TrainingFailure { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
