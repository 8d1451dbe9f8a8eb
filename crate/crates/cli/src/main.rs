//! Command-line front end: RIR generation, dataset synthesis, two-stage
//! training, estimation, evaluation, duration sweeps and sweep-based
//! measurement. Logs go to stderr; data goes to stdout or files. Exit
//! codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand_chacha::rand_core::SeedableRng;
use rayon::prelude::*;

use blindt60::dataset;
use blindt60::decay;
use blindt60::dsp::wav::{read_wav, write_wav, WavFormat};
use blindt60::dsp::{magnitude, resample, stft, SampleBuffer, StftConfig};
use blindt60::error::{Error, Result};
use blindt60::eval::{build_report, duration_sweep, write_report_csv, write_report_json, EvalEntry};
use blindt60::nn::{load_checkpoint, load_into, save_checkpoint, ModelConfig, NeNet, ReNet};
use blindt60::room::{
    absorption_for_target, deconvolve_rir, generate_ess, inverse_from_sweep, load_rir, save_rir,
    simulate_rir, EssConfig, Rir, RirSidecar, RoomSpec, SourceReceiverGeometry,
};
use blindt60::train::{train_stage1, train_stage2};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "blindt60", version, about = "Room acoustics and blind T60 estimation toolkit")]
struct Cli {
    /// TOML run configuration; omit for built-in desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for generation/labeling/evaluation
    /// (env: BLINDT60_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the RIR pool with ground-truth T60 labels.
    GenRirs(GenRirsArgs),
    /// Materialize a noisy-reverberant dataset from an RIR pool.
    SynthData(SynthDataArgs),
    /// Run the two-stage training schedule.
    Train(TrainArgs),
    /// Estimate T60 for one WAV file.
    Estimate(EstimateArgs),
    /// Evaluate a model over a materialized dataset.
    Eval(EvalArgs),
    /// Estimates from growing prefixes (0.2 s steps up to 8 s).
    SweepDuration(SweepArgs),
    /// Generate an ESS excitation or deconvolve a sweep recording.
    Measure(MeasureArgs),
    /// Merge evaluation entries into the method x SNR report tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenRirsArgs {
    /// Output directory (env: BLINDT60_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the [rirs] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write each RIR's energy decay curve as CSV.
    #[arg(long)]
    dump_edc: bool,
}

#[derive(Args)]
struct SynthDataArgs {
    /// Directory holding the RIR pool (from gen-rirs).
    #[arg(long)]
    rirs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the [dataset] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the [dataset] split name.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Materialized dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset for the plateau schedule; defaults to the
    /// training set.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// 1, 2, or both.
    #[arg(long, default_value = "both")]
    stage: String,
    /// Stage-1 checkpoint to start stage 2 from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the [model] preset.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Model bundle (stage-2 checkpoint).
    #[arg(long)]
    model: PathBuf,
    /// Mono WAV input; resampled to 16 kHz if needed.
    wav: PathBuf,
    /// Also print the per-frame trace.
    #[arg(long)]
    per_frame: bool,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Method label in the report.
    #[arg(long, default_value = "noise-aware")]
    method: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input of at least 8 seconds.
    wav: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeasureArgs {
    /// Write a fresh excitation sweep here and exit.
    #[arg(long)]
    emit_sweep: Option<PathBuf>,
    /// The excitation that was played back.
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// The microphone recording of that playback.
    #[arg(long)]
    recording: Option<PathBuf>,
    /// Output stem for the measured RIR (wav + json sidecar).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    f_start: f64,
    #[arg(long, default_value_t = 20000.0)]
    f_end: f64,
    /// Sweep duration in seconds (emit mode).
    #[arg(long, default_value_t = 20.0)]
    duration: f64,
    /// Sample rate in Hz (emit mode).
    #[arg(long, default_value_t = 48000)]
    rate: u32,
    #[arg(long)]
    dump_edc: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// entries.json files produced by `eval`.
    #[arg(long, required = true, num_args = 1..)]
    entries: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value annotations carried into the JSON report.
    #[arg(long)]
    annotate: Vec<String>,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if let Some(jobs) = cli
        .jobs
        .or_else(|| std::env::var("BLINDT60_JOBS").ok().and_then(|v| v.parse().ok()))
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            warn!("could not set thread pool size: {}", e);
        }
    }

    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {}", err);
            std::process::exit(exit_code(&err));
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Wav(_) | Error::Json(_) | Error::InvalidArgument(_) => 3,
        _ => 4,
    }
}

fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| std::env::var("BLINDT60_OUT_DIR").ok().map(PathBuf::from))
        .ok_or_else(|| Error::config("no output directory: pass --out or set BLINDT60_OUT_DIR"))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenRirs(args) => {
            if let Some(seed) = args.seed {
                config.rirs.seed = seed;
            }
            gen_rirs(&config, out_dir(args.out)?, args.dump_edc)
        }
        Command::SynthData(args) => {
            if let Some(seed) = args.seed {
                config.dataset.seed = seed;
            }
            if let Some(split) = args.split {
                config.dataset.split = split;
            }
            synth_data(&config, &args.rirs, out_dir(args.out)?)
        }
        Command::Train(args) => {
            if let Some(preset) = &args.preset {
                config.model.preset = preset.clone();
            }
            if let Some(n) = args.stage1_epochs {
                config.training.stage1_epochs = n;
            }
            if let Some(n) = args.stage2_epochs {
                config.training.stage2_epochs = n;
            }
            let out = out_dir(args.out.clone())?;
            train(&config, &args, out)
        }
        Command::Estimate(args) => estimate(&args),
        Command::Eval(args) => {
            let out = out_dir(args.out.clone())?;
            eval(&args, out)
        }
        Command::SweepDuration(args) => sweep_duration(&args),
        Command::Measure(args) => measure(&config, &args),
        Command::Report(args) => {
            let out = out_dir(args.out.clone())?;
            report(&args, out)
        }
    }
}

struct RirPlanItem {
    index: usize,
    length: f64,
    width: f64,
    height: f64,
    target: f64,
    seed: u64,
}

fn gen_rirs(config: &RunConfig, out: PathBuf, dump_edc: bool) -> Result<()> {
    use std::io::Write;
    let hash = config.hash();
    let section = &config.rirs;
    std::fs::create_dir_all(&out)?;

    let mut plan = Vec::new();
    let mut index = 0usize;
    for room in &section.rooms {
        for &target in &section.targets_t60 {
            for _rep in 0..section.geometries_per_room {
                plan.push(RirPlanItem {
                    index,
                    length: room.length,
                    width: room.width,
                    height: room.height,
                    target,
                    seed: section
                        .seed
                        .wrapping_mul(0x9e3779b97f4a7c15)
                        .wrapping_add(index as u64),
                });
                index += 1;
            }
        }
    }

    let results: Vec<Option<(usize, f64, f64, f64, RoomSpec)>> = plan
        .par_iter()
        .map(|item| -> Result<Option<(usize, f64, f64, f64, RoomSpec)>> {
            let alpha =
                match absorption_for_target(item.length, item.width, item.height, item.target) {
                    Ok(a) => a,
                    Err(e) => {
                        warn!("rir_{:05}: {}", item.index, e);
                        return Ok(None);
                    }
                };
            let mut room = RoomSpec::new(item.length, item.width, item.height, alpha)?;
            room.scattering = section.scattering;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(item.seed);
            let geometry = {
                use rand::Rng;
                let d = section.distances_m[rng.gen_range(0..section.distances_m.len())];
                let a = section.angles_deg[rng.gen_range(0..section.angles_deg.len())];
                SourceReceiverGeometry::from_distance_angle(&room, d, a, &mut rng)?
            };
            let mut rir = simulate_rir(&room, &geometry, section.sample_rate, item.seed)?;
            let fit = decay::attach_ground_truth(&mut rir)?;
            let t60 = rir.ground_truth_t60.unwrap();

            let mut sidecar = RirSidecar::from_rir(&rir);
            sidecar.eyring_target_t60 = Some(item.target);
            sidecar.fit_slope_db_per_s = Some(fit.slope_db_per_s);
            sidecar.fit_r_squared = Some(fit.r_squared);
            sidecar.fit_range_db = Some([fit.fit_range_db.0, fit.fit_range_db.1]);
            sidecar.config_hash = Some(hash.clone());
            let stem = out.join(format!("rir_{:05}", item.index));
            save_rir(&stem, &rir, &sidecar)?;
            if dump_edc {
                let edc = decay::schroeder_edc(&rir)?;
                decay::write_edc_csv(&stem.with_extension("edc.csv"), &edc)?;
            }
            info!(
                "rir_{:05}: target {:.3} s, schroeder {:.3} s (r2 {:.3})",
                item.index, item.target, t60, fit.r_squared
            );
            Ok(Some((item.index, item.target, t60, fit.r_squared, room)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = std::io::BufWriter::new(std::fs::File::create(out.join("summary.csv"))?);
    writeln!(
        summary,
        "name,length_m,width_m,height_m,absorption,target_t60_s,estimated_t60_s,fit_r_squared"
    )?;
    let mut produced = 0usize;
    for (idx, target, t60, r2, room) in results.into_iter().flatten() {
        writeln!(
            summary,
            "rir_{:05},{},{},{},{},{},{},{}",
            idx, room.length, room.width, room.height, room.absorption, target, t60, r2
        )?;
        produced += 1;
    }
    println!("generated {} RIRs in {}", produced, out.display());
    Ok(())
}

/// Load a pool of labeled RIRs written by gen-rirs.
fn load_rir_pool(dir: &Path) -> Result<Vec<(String, Rir)>> {
    let mut stems: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map(|e| e == "wav").unwrap_or(false) && p.with_extension("json").exists()
        })
        .map(|p| p.with_extension(""))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::config(format!(
            "no RIRs (wav + json pairs) in {}",
            dir.display()
        )));
    }
    let mut pool = Vec::with_capacity(stems.len());
    for stem in stems {
        let (rir, _) = load_rir(&stem)?;
        let name = stem
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        pool.push((name, rir));
    }
    Ok(pool)
}

fn synth_data(config: &RunConfig, rir_dir: &Path, out: PathBuf) -> Result<()> {
    let hash = config.hash();
    let dataset_cfg = config.dataset.to_config();
    let stft_cfg = config.stft.to_config();
    let pool = load_rir_pool(rir_dir)?;
    std::fs::create_dir_all(out.join("samples"))?;

    let plan = dataset::plan_mixtures(&dataset_cfg, &pool)?;
    let by_ref: BTreeMap<&str, &Rir> = pool.iter().map(|(n, r)| (n.as_str(), r)).collect();
    plan.par_iter().try_for_each(|spec| -> Result<()> {
        let sample = dataset::materialize_sample(spec, &dataset_cfg, &by_ref)?;
        dataset::write_sample(&out, spec, &sample, Some(&hash))
    })?;
    let manifest = dataset::finalize_manifest(&dataset_cfg, &stft_cfg, plan, &out)?;
    println!(
        "materialized {} samples in {} (content hash {})",
        manifest.mixtures.len(),
        out.display(),
        &manifest.content_hash[..16]
    );
    Ok(())
}

fn train(config: &RunConfig, args: &TrainArgs, out: PathBuf) -> Result<()> {
    std::fs::create_dir_all(&out)?;
    let hash = config.hash();
    let model_cfg = ModelConfig::preset(&config.model.preset)?;
    let train_cfg = config.training.to_config();

    info!("loading training data from {}", args.data.display());
    let train_samples = dataset::load_train_samples(&args.data)?;
    let val_samples = match &args.val_data {
        Some(dir) => dataset::load_train_samples(dir)?,
        None => train_samples.clone(),
    };
    info!(
        "{} training / {} validation samples",
        train_samples.len(),
        val_samples.len()
    );

    let mut ne = NeNet::<f32>::new(&model_cfg, config.model.seed);
    let mut re = ReNet::<f32>::new(&model_cfg, config.model.seed.wrapping_add(1));

    let run_stage1 = args.stage == "1" || args.stage == "both";
    let run_stage2 = args.stage == "2" || args.stage == "both";
    if !run_stage1 && !run_stage2 {
        return Err(Error::config(format!(
            "unknown --stage '{}': expected 1, 2 or both",
            args.stage
        )));
    }

    if let Some(ckpt) = &args.resume {
        let (ckpt_cfg, _, entries) = load_checkpoint(ckpt)?;
        if ckpt_cfg != model_cfg {
            return Err(Error::config(
                "checkpoint model configuration differs from the requested preset",
            ));
        }
        load_into(&mut ne.params, &entries)?;
        info!("resumed NE-NET from {}", ckpt.display());
        if run_stage2 && load_into(&mut re.params, &entries).is_ok() {
            info!("resumed RE-NET as well");
        }
    }

    if run_stage1 {
        info!("stage 1: {} epochs", train_cfg.stage1_epochs);
        let history = train_stage1(&mut ne, &train_samples, &val_samples, &train_cfg)?;
        history.write_csv(&out.join("history_stage1.csv"))?;
        save_checkpoint(&out.join("stage1.ckpt"), &model_cfg, &[&ne.params], &hash)?;
        println!(
            "stage 1 done: train loss {:.6} -> {:.6}",
            history.rows.first().map(|r| r.train_loss).unwrap_or(f64::NAN),
            history.rows.last().map(|r| r.train_loss).unwrap_or(f64::NAN)
        );
    } else if run_stage2 && args.resume.is_none() {
        return Err(Error::config(
            "--stage 2 needs --resume with a stage-1 checkpoint",
        ));
    }

    if run_stage2 {
        info!("stage 2: {} epochs", train_cfg.stage2_epochs);
        let history = train_stage2(&mut ne, &mut re, &train_samples, &val_samples, &train_cfg)?;
        history.write_csv(&out.join("history_stage2.csv"))?;
        save_checkpoint(
            &out.join("model.ckpt"),
            &model_cfg,
            &[&ne.params, &re.params],
            &hash,
        )?;
        println!(
            "stage 2 done: joint loss {:.6} -> {:.6}; bundle at {}",
            history.rows.first().map(|r| r.train_loss).unwrap_or(f64::NAN),
            history.rows.last().map(|r| r.train_loss).unwrap_or(f64::NAN),
            out.join("model.ckpt").display()
        );
    }
    Ok(())
}

struct LoadedModel {
    ne: NeNet<f32>,
    re: ReNet<f32>,
    stft: StftConfig,
}

fn load_model_bundle(path: &Path) -> Result<LoadedModel> {
    let (model_cfg, _hash, entries) = load_checkpoint(path)?;
    let mut ne = NeNet::<f32>::new(&model_cfg, 0);
    let mut re = ReNet::<f32>::new(&model_cfg, 0);
    load_into(&mut ne.params, &entries)?;
    load_into(&mut re.params, &entries).map_err(|_| {
        Error::config("checkpoint has no RE-NET parameters; pass a stage-2 bundle (model.ckpt)")
    })?;
    Ok(LoadedModel {
        ne,
        re,
        stft: StftConfig::default(),
    })
}

fn prepare_input(path: &Path) -> Result<SampleBuffer> {
    let buf = read_wav(path)?;
    resample(&buf, 16000)
}

fn estimate_prefix(model: &LoadedModel, buf: &SampleBuffer) -> Result<f64> {
    let spec = stft(buf, &model.stft)?;
    blindt60::nn::estimate_t60_utterance(&model.ne, &model.re, &magnitude(&spec))
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let model = load_model_bundle(&args.model)?;
    let buf = prepare_input(&args.wav)?;
    let mag = magnitude(&stft(&buf, &model.stft)?);
    let per_frame = blindt60::nn::two_stage_per_frame(&model.ne, &model.re, &mag)?;
    let t60 = *per_frame.last().expect("at least one frame");
    if args.json {
        let mut obj = serde_json::json!({ "t60_s": t60, "frames": per_frame.len() });
        if args.per_frame {
            obj["per_frame_s"] = serde_json::json!(per_frame);
        }
        println!("{}", serde_json::to_string_pretty(&obj)?);
    } else {
        println!("t60_s {:.4}", t60);
        if args.per_frame {
            for (l, v) in per_frame.iter().enumerate() {
                println!("frame {} {:.4}", l, v);
            }
        }
    }
    Ok(())
}

fn eval(args: &EvalArgs, out: PathBuf) -> Result<()> {
    std::fs::create_dir_all(&out)?;
    let model = load_model_bundle(&args.model)?;
    let manifest = dataset::load_manifest(&args.data)?;

    let entries: Vec<EvalEntry> = manifest
        .mixtures
        .par_iter()
        .map(|spec| -> Result<EvalEntry> {
            let sample = dataset::load_sample(&args.data, spec.index)?;
            let mag = magnitude(&stft(&sample.y, &manifest.stft)?);
            let raw = blindt60::nn::estimate_t60_utterance(&model.ne, &model.re, &mag)?;
            Ok(EvalEntry {
                method: args.method.clone(),
                snr_db: spec.snr_db,
                truth: spec.t60_label,
                // clamped only here, in reporting
                estimate: raw.min(2.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    std::fs::write(
        out.join("entries.json"),
        serde_json::to_string_pretty(&entries)?,
    )?;
    let table = build_report(&entries)?;
    write_report_csv(&out.join("report.csv"), &table)?;
    write_report_json(&out.join("report.json"), &table)?;

    let batch =
        blindt60::eval::EvalBatch::new(entries.iter().map(|e| (e.truth, e.estimate)).collect());
    let overall = blindt60::eval::rmse(&batch)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({
                "samples": entries.len(),
                "rmse_ms": overall * 1000.0,
            }))?
        );
    } else {
        println!(
            "evaluated {} samples: overall RMSE {:.1} ms; report in {}",
            entries.len(),
            overall * 1000.0,
            out.display()
        );
    }
    Ok(())
}

fn sweep_duration(args: &SweepArgs) -> Result<()> {
    use std::io::Write;
    let model = load_model_bundle(&args.model)?;
    let buf = prepare_input(&args.wav)?;
    let sweep = duration_sweep(|prefix| estimate_prefix(&model, prefix), &buf)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(f, "duration_s,t60_s")?;
    for (d, e) in &sweep {
        writeln!(f, "{:.1},{:.6}", d, e)?;
    }
    println!("wrote {} sweep points to {}", sweep.len(), args.out.display());
    Ok(())
}

fn measure(config: &RunConfig, args: &MeasureArgs) -> Result<()> {
    if let Some(path) = &args.emit_sweep {
        let cfg = EssConfig {
            f_start: args.f_start,
            f_end: args.f_end,
            duration: args.duration,
            sample_rate: args.rate,
        };
        let (sweep, _) = generate_ess(&cfg)?;
        write_wav(path, &sweep, WavFormat::Float32)?;
        println!(
            "wrote {:.0} s sweep ({:.0} Hz to {:.0} Hz at {} Hz) to {}",
            cfg.duration,
            cfg.f_start,
            cfg.f_end,
            cfg.sample_rate,
            path.display()
        );
        return Ok(());
    }

    let (sweep_path, recording_path) = match (&args.sweep, &args.recording) {
        (Some(s), Some(r)) => (s, r),
        _ => {
            return Err(Error::config(
                "measure needs --sweep and --recording (or --emit-sweep to generate one)",
            ))
        }
    };
    let out = args
        .out
        .clone()
        .ok_or_else(|| Error::config("measure needs --out STEM for the recovered RIR"))?;

    let sweep = read_wav(sweep_path)?;
    let recording = read_wav(recording_path)?;
    let inverse = inverse_from_sweep(&sweep, args.f_start, args.f_end)?;
    let mut rir = deconvolve_rir(&recording, &inverse)?;
    let fit = decay::attach_ground_truth(&mut rir)?;
    let t60 = rir.ground_truth_t60.unwrap();

    let mut sidecar = RirSidecar::from_rir(&rir);
    sidecar.fit_slope_db_per_s = Some(fit.slope_db_per_s);
    sidecar.fit_r_squared = Some(fit.r_squared);
    sidecar.fit_range_db = Some([fit.fit_range_db.0, fit.fit_range_db.1]);
    sidecar.config_hash = Some(config.hash());
    save_rir(&out, &rir, &sidecar)?;
    if args.dump_edc {
        let edc = decay::schroeder_edc(&rir)?;
        decay::write_edc_csv(&out.with_extension("edc.csv"), &edc)?;
    }
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({
                "t60_s": t60,
                "fit_r_squared": fit.r_squared,
                "rir": out.with_extension("wav"),
            }))?
        );
    } else {
        println!("t60_s {:.4} (fit r2 {:.3})", t60, fit.r_squared);
    }
    Ok(())
}

fn report(args: &ReportArgs, out: PathBuf) -> Result<()> {
    std::fs::create_dir_all(&out)?;
    let mut entries: Vec<EvalEntry> = Vec::new();
    for path in &args.entries {
        let batch: Vec<EvalEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        entries.extend(batch);
    }
    let mut table = build_report(&entries)?;
    for pair in &args.annotate {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--annotate wants key=value, got '{}'", pair)))?;
        table.annotations.insert(k.to_string(), v.to_string());
    }
    write_report_csv(&out.join("report.csv"), &table)?;
    write_report_json(&out.join("report.json"), &table)?;
    println!(
        "report over {} entries ({} methods) in {}",
        entries.len(),
        table.methods.len(),
        out.display()
    );
    Ok(())
}
