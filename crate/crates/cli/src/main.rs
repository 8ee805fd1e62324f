use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use scope3d::connector::ConnectorVariant;
use scope3d::geotrans::{evaluate_geo, export_pointcloud, metrics_writer, train_geo, GeoData, GeoModel};
use scope3d::policy::{train_policy, PolicyCheckpointMeta, PolicyModel};
use scope3d::scenegen::{generate_dataset, list_samples, pseudo_label_dataset, read_frames, render_stereo, sample_scene};
use scope3d::simrobot::{collect_demos, evaluate, list_demos, load_training_episode, Driver, Region, Task, WorldState};
use scope3d::{DType, RunConfig};

mod plot;

#[derive(Parser)]
#[command(name = "scope3d", version, about = "Stereo geometry transformer and action-chunking policy toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stereo dataset with exact point maps.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num: u64,
        #[arg(long, default_value_t = 0)]
        first_index: u64,
    },
    /// Train the geometry transformer.
    TrainGeo {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Held-out dataset for the median scale-aligned error.
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
    /// Label unlabeled frames with confident geometry predictions.
    PseudoLabel {
        #[arg(long)]
        geo_ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        conf_threshold: f64,
    },
    /// Record scripted-expert demonstrations.
    CollectDemos {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        num: usize,
        /// `train:wide` episode counts; all train-region when omitted.
        #[arg(long)]
        region_split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train connector + policy decoder with the geometry transformer frozen.
    TrainPolicy {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        geo_ckpt: PathBuf,
        #[arg(long)]
        connector: Option<ConnectorVariant>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Closed-loop evaluation in the simulator.
    Eval {
        #[arg(long, required_unless_present_any = ["expert", "random"])]
        policy_ckpt: Option<PathBuf>,
        #[arg(long, required_unless_present_any = ["expert", "random"])]
        geo_ckpt: Option<PathBuf>,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value = "train")]
        region: Region,
        /// Drive with the scripted expert instead of a policy.
        #[arg(long, conflicts_with = "random")]
        expert: bool,
        /// Drive with random reaching actions.
        #[arg(long)]
        random: bool,
        /// Per-episode JSONL log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Per-inference latency.
    Bench {
        #[arg(long)]
        geo_ckpt: PathBuf,
        /// Also time full policy queries.
        #[arg(long)]
        policy_ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Sample directory for the input pair; a generated scene otherwise.
        #[arg(long)]
        sample: Option<PathBuf>,
    },
    /// Write a colored point cloud for one sample.
    ExportPly {
        #[arg(long)]
        geo_ckpt: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        conf_threshold: f64,
        /// 0 = left view, 1 = right view.
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// Loss curves and success bars as SVG.
    Plot {
        /// Training metrics or episode logs (JSONL); repeatable.
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(global: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn finish_config(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    info!("resolved config:\n{}", cfg.to_toml());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Sidecar written next to a file artifact.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn parse_split(split: Option<&str>, num: usize) -> Result<(usize, usize)> {
    let Some(s) = split else { return Ok((num, 0)) };
    let (a, b) = s.split_once(':').context("--region-split must look like TRAIN:WIDE")?;
    let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
    if a + b != num {
        bail!("--region-split {a}:{b} does not add up to --num {num}");
    }
    Ok((a, b))
}

fn load_geo(path: &Path) -> Result<(GeoModel, String)> {
    let (model, meta, fp) = GeoModel::load(path, DType::F32)?;
    info!("geometry checkpoint {} ({} steps, {})", path.display(), meta.steps, meta.code_version);
    Ok((model, fp))
}

fn load_policy(path: &Path, geo_fp: &str) -> Result<PolicyModel> {
    let (model, meta) = PolicyModel::load(path, geo_fp, false)?;
    info!("policy checkpoint {} ({} connector)", path.display(), meta.connector.variant);
    Ok(model)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::GenData { out, num, first_index } => {
            finish_config(&cfg)?;
            let manifest = generate_dataset(&cfg.scenegen, &out, first_index, num)?;
            write_text(&out.join("run_config.toml"), &cfg.to_toml())?;
            println!("wrote {} samples to {}", manifest.count, out.display());
        }
        Command::TrainGeo {
            data,
            out,
            epochs,
            max_steps,
            batch_size,
            lr,
            eval_data,
        } => {
            let t = &mut cfg.geotrans.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.max_steps = max_steps.unwrap_or(t.max_steps);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.lr = lr.unwrap_or(t.lr);
            finish_config(&cfg)?;
            let paths = list_samples(&data)?;
            let model = GeoModel::new(&cfg.geotrans.model, cfg.geotrans.train.seed, DType::F32)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let mut metrics = metrics_writer(&sidecar(&out, ".metrics.jsonl"))?;
            let outcome = train_geo(&model, &GeoData::Disk(&paths), &cfg.geotrans.train, Some(&mut metrics), Some(&out))?;
            metrics.flush()?;
            let fp = model.save(&out, cfg.geotrans.train.seed, outcome.steps, Some(&cfg.geotrans.train))?;
            write_text(&sidecar(&out, ".config.toml"), &cfg.to_toml())?;
            println!("trained {} steps; checkpoint {} ({fp})", outcome.steps, out.display());
            if let Some(eval) = eval_data {
                let held = list_samples(&eval)?;
                let err = evaluate_geo(&model, &GeoData::Disk(&held), cfg.geotrans.train.batch_size)?;
                println!("held-out median scale-aligned error: {:.6} m", err);
            }
        }
        Command::PseudoLabel {
            geo_ckpt,
            input,
            out,
            conf_threshold,
        } => {
            finish_config(&cfg)?;
            let (geo, _) = load_geo(&geo_ckpt)?;
            let report = pseudo_label_dataset(&geo, &input, &out, conf_threshold)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::CollectDemos {
            task,
            num,
            region_split,
            out,
        } => {
            finish_config(&cfg)?;
            let (train, wide) = parse_split(region_split.as_deref(), num)?;
            let seed = cfg.seed.unwrap_or(0);
            let manifest = collect_demos(&cfg.simrobot, task, train, wide, seed, &out)?;
            write_text(&out.join("run_config.toml"), &cfg.to_toml())?;
            println!(
                "wrote {} {task} demos ({train} train, {wide} wide) to {}",
                manifest.demos.len(),
                out.display()
            );
        }
        Command::TrainPolicy {
            demos,
            geo_ckpt,
            connector,
            out,
            steps,
            batch_size,
        } => {
            if let Some(v) = connector {
                cfg.connector.variant = v;
            }
            let t = &mut cfg.policy.train;
            t.steps = steps.unwrap_or(t.steps);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            finish_config(&cfg)?;
            let (geo, fp) = load_geo(&geo_ckpt)?;
            let episodes = list_demos(&demos)?
                .iter()
                .map(|d| load_training_episode(d))
                .collect::<scope3d::Result<Vec<_>>>()?;
            if episodes.is_empty() {
                bail!("no demonstrations under {}", demos.display());
            }
            let metrics_path = sidecar(&out, ".metrics.jsonl");
            let mut metrics = metrics_writer(&metrics_path)?;
            let outcome = train_policy(
                &geo,
                &fp,
                &episodes,
                &cfg.policy.model,
                &cfg.connector,
                &cfg.policy.train,
                Some(&mut metrics),
            )?;
            metrics.flush()?;
            let meta: &PolicyCheckpointMeta = &outcome.meta;
            outcome.model.save(&out, meta)?;
            write_text(&sidecar(&out, ".config.toml"), &cfg.to_toml())?;
            let last = outcome.metrics.last().map(|m| m.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} steps on {} demos ({} connector), final loss {last:.5}; checkpoint {}",
                outcome.metrics.len(),
                episodes.len(),
                cfg.connector.variant,
                out.display()
            );
        }
        Command::Eval {
            policy_ckpt,
            geo_ckpt,
            task,
            episodes,
            region,
            expert,
            random,
            log,
        } => {
            finish_config(&cfg)?;
            let seed = cfg.seed.unwrap_or(0);
            let mut log_file = match &log {
                Some(p) => Some(metrics_writer(p)?),
                None => None,
            };
            let sink = log_file.as_mut().map(|w| w as &mut dyn Write);
            let report = if expert {
                evaluate(&cfg.simrobot, &Driver::Expert, task, region, episodes, seed, sink)?
            } else if random {
                evaluate(&cfg.simrobot, &Driver::Random, task, region, episodes, seed, sink)?
            } else {
                let (geo, fp) = load_geo(geo_ckpt.as_deref().expect("required by clap"))?;
                let policy = load_policy(policy_ckpt.as_deref().expect("required by clap"), &fp)?;
                let driver = Driver::Policy {
                    geo: &geo,
                    policy: &policy,
                };
                evaluate(&cfg.simrobot, &driver, task, region, episodes, seed, sink)?
            };
            if let Some(mut w) = log_file {
                w.flush()?;
            }
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Bench {
            geo_ckpt,
            policy_ckpt,
            runs,
            warmup,
            sample,
        } => {
            finish_config(&cfg)?;
            let (geo, fp) = load_geo(&geo_ckpt)?;
            let (left, right) = match sample {
                Some(dir) => {
                    let (l, r, _) = read_frames(&dir)?;
                    (l, r)
                }
                None => {
                    let (scene, rig) = sample_scene(&cfg.scenegen, 0)?;
                    let s = render_stereo(&scene, &rig, cfg.scenegen.master_seed, 0);
                    (s.left, s.right)
                }
            };
            let report = scope3d::bench::bench_geometry(&geo, &left, &right, runs, warmup)?;
            println!("{}", serde_json::to_string(&summary(&report))?);
            if let Some(p) = policy_ckpt {
                let policy = load_policy(&p, &fp)?;
                let world = WorldState::setup(&cfg.simrobot, Task::Lift, Region::Train, 0, 0)?;
                let (l, r) = world.render();
                let report = scope3d::bench::bench_policy(&geo, &policy, &l, &r, &world.measured(), runs, warmup)?;
                println!("{}", serde_json::to_string(&summary(&report))?);
            }
        }
        Command::ExportPly {
            geo_ckpt,
            sample,
            out,
            conf_threshold,
            view,
        } => {
            finish_config(&cfg)?;
            if view > 1 {
                bail!("--view must be 0 (left) or 1 (right)");
            }
            let (geo, _) = load_geo(&geo_ckpt)?;
            let (left, right, _) = read_frames(&sample)?;
            let pred = geo.predict(&left, &right)?;
            let image = if view == 0 { &left } else { &right };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let n = export_pointcloud(&pred, view, image, conf_threshold, &out)?;
            println!("wrote {n} points to {}", out.display());
        }
        Command::Plot { metrics, out } => {
            let written = plot::render(&metrics, &out)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

/// Report without the raw samples, for the console.
fn summary(r: &scope3d::bench::BenchReport) -> serde_json::Value {
    serde_json::json!({
        "target": r.target,
        "runs": r.runs,
        "mean_ms": r.mean_ms,
        "median_ms": r.median_ms,
        "min_ms": r.min_ms,
        "max_ms": r.max_ms,
        "code_version": r.code_version,
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<scope3d::Error>() {
        Some(e) if e.is_invariant_violation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    // Single-threaded runs are reproducible bit for bit.
    let deterministic = resolve_config(&cli.global).map(|c| c.deterministic).unwrap_or(true);
    if deterministic && std::env::var_os("RAYON_NUM_THREADS").is_none() {
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if msg.ends_with(&cause) {
                    continue;
                }
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&cause);
            }
            let msg = msg.replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
