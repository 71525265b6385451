//! Command-line driver for jointdrive: dataset generation, staged training,
//! closed-loop evaluation, ablations and SVG renders.

pub mod config;
pub mod error;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointdrive::agent::{ModelAgent, RouteFollowAgent, TickTrace};
use jointdrive::checkpoint::Checkpoint;
use jointdrive::data::{generate_samples, read_dataset, write_dataset, Sample};
use jointdrive::eval::{run_eval, EvalReport};
use jointdrive::model::{accumulate_attention, AssembleMode, AttentionRecord, Model, Variant};
use jointdrive::render::{attention_svg, overlay_svg, OverlayView};
use jointdrive::train::{evaluate, prepare, EvalLosses, Stage, Trainer};
use jointdrive_numerics::{Graph, ParamStore};
use jointdrive_sim::{run_episode, compute_metrics, Controls, EgoAgent, EpisodeConfig, World, WorldSnapshot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "jointdrive", version, about = "Joint planning and prediction on a toy driving simulator")]
pub struct Cli {
    /// TOML run configuration; every field has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set train.lr=1e-3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out seeded scenarios under the expert and write a dataset.
    GenData(GenDataArgs),
    /// Run the staged training schedule.
    Train(TrainArgs),
    /// Closed-loop evaluation over a scenario suite.
    Eval(EvalArgs),
    /// Drive one scenario and write its per-tick log.
    Rollout(RolloutArgs),
    /// Train every variant with the same budget and compare held-out errors.
    Ablate(AblateArgs),
    /// Render a vehicle's accumulated local attention beside its crop.
    AttnDump(AttnDumpArgs),
    /// Render rollout frames with plan, predictions and footprints.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output path; `.gz` compresses. Defaults to `paths.data`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the held-out split: `paths.heldout`, seeded by `eval.seed`.
    #[arg(long)]
    pub heldout: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run a single stage (1, 2 or 3) instead of all three.
    #[arg(long)]
    pub stage: Option<u8>,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AgentKind {
    /// The trained network feeding the controller.
    Model,
    /// Route following with constant-velocity predictions.
    Route,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (required for the model agent).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    pub agent: AgentKind,
    /// Disable the collision check (controller ablation).
    #[arg(long)]
    pub no_collision_check: bool,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    pub agent: AgentKind,
    /// Scenario index within `eval.suite` at `eval.seed`.
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    /// Output JSON-lines path; defaults to `<out_dir>/rollout.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Variants to train; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AttnDumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sample index in the held-out dataset (`paths.heldout`).
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Sequence slot: 0 is the ego.
    #[arg(long, default_value_t = 0)]
    pub vehicle: usize,
    /// Encoder layer; defaults to the last.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    /// Render every n-th control tick.
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    /// Directory for `frame_<tick>.svg`; defaults to `<out_dir>/frames`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the arguments, loads the configuration and runs the command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::GenData(a) => gen_data(&cfg, &a, &mut stdout),
        Command::Train(a) => train(&cfg, &a, &mut stdout),
        Command::Eval(a) => eval(&cfg, &a, &mut stdout),
        Command::Rollout(a) => rollout(&cfg, &a, &mut stdout),
        Command::Ablate(a) => ablate(&cfg, &a, &mut stdout),
        Command::AttnDump(a) => attn_dump(&cfg, &a, &mut stdout),
        Command::Plot(a) => plot(&cfg, &a, &mut stdout),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<Vec<Sample>, CliError> {
    if !path.exists() {
        return Err(jointdrive::DataError::Missing(path.display().to_string()).into());
    }
    Ok(read_dataset(path)?)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<(ParamStore, Model), CliError> {
    if !path.exists() {
        return Err(jointdrive::DataError::Missing(path.display().to_string()).into());
    }
    let ckpt = Checkpoint::load(path)?;
    Ok(ckpt.restore_with(cfg.model.clone())?)
}

pub fn gen_data(cfg: &RunConfig, a: &GenDataArgs, out: &mut impl Write) -> Result<(), CliError> {
    let mut gen = cfg.data.clone();
    let default_path = match a.heldout {
        true => {
            gen.seed = cfg.eval.seed;
            &cfg.paths.heldout
        }
        false => &cfg.paths.data,
    };
    let path = a.out.as_ref().unwrap_or(default_path);
    let samples = generate_samples(&gen, &cfg.model.grid)?;
    ensure_parent(path)?;
    let index = write_dataset(path, &samples, Some(&gen))?;
    let others: usize = samples.iter().map(|s| s.others.len()).sum();
    writeln!(
        out,
        "wrote {} samples ({} other-vehicle trajectories) from {} scenarios to {} sha256={}",
        index.count,
        others,
        gen.scenarios,
        path.display(),
        index.sha256
    )?;
    Ok(())
}

pub fn train(cfg: &RunConfig, a: &TrainArgs, out: &mut impl Write) -> Result<(), CliError> {
    let data = load_data(&cfg.paths.data)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            if !p.exists() {
                return Err(jointdrive::DataError::Missing(p.display().to_string()).into());
            }
            Trainer::from_checkpoint(&Checkpoint::load(p)?)?
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
    };
    let stages: Vec<Stage> = match a.stage {
        Some(n) => vec![Stage::from_number(n)?],
        None if a.resume.is_some() => Stage::ALL
            .into_iter()
            .filter(|s| s.number() >= trainer.stage.number())
            .collect(),
        None => Stage::ALL.to_vec(),
    };
    let dir = &cfg.paths.out_dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?)?;
    let records = trainer.train_stages(&data, &stages, Some(dir))?;
    for &stage in &stages {
        if let Some(last) = records.iter().rev().find(|r| r.stage == stage) {
            writeln!(
                out,
                "stage {} steps {} loss total={:.6} planning={:.6} prediction={:.6} seg={:.6}",
                stage.number(),
                last.step + 1,
                last.loss.total,
                last.loss.planning,
                last.loss.prediction,
                last.loss.seg
            )?;
        }
    }
    writeln!(
        out,
        "variant {:?}: {} parameters; checkpoints and metrics.csv in {}",
        trainer.model.config.variant,
        trainer.store.num_scalars(),
        dir.display()
    )?;
    Ok(())
}

/// Evaluation report for the configured agent; used by `eval`.
pub fn eval_report(cfg: &RunConfig, a: &EvalArgs) -> Result<EvalReport, CliError> {
    let mut controller = cfg.controller.clone();
    if a.no_collision_check {
        controller.collision_check = false;
    }
    let hash = cfg.hash()?;
    match a.agent {
        AgentKind::Route => {
            let horizon = cfg.model.horizon;
            Ok(run_eval(&cfg.eval, "route", hash, || {
                Ok(Box::new(RouteFollowAgent::new(controller.clone(), horizon)?))
            })?)
        }
        AgentKind::Model => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("the model agent needs --checkpoint".into()))?;
            let (store, model) = load_checkpoint(path, cfg)?;
            Ok(run_eval(&cfg.eval, "model", hash, || {
                Ok(Box::new(ModelAgent::new(&model, &store, controller.clone())?))
            })?)
        }
    }
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs, out: &mut impl Write) -> Result<(), CliError> {
    let report = eval_report(cfg, a)?;
    let dir = &cfg.paths.out_dir;
    std::fs::create_dir_all(dir)?;
    report.write_json(&dir.join("eval.json"))?;
    report.write_csv(&dir.join("eval.csv"))?;
    writeln!(
        out,
        "{} on {:?}: RC {:.2}±{:.2} IS {:.4}±{:.4} DS {:.2}±{:.2} collisions {} stop violations {}",
        report.agent,
        report.config.suite,
        report.rc.mean,
        report.rc.std,
        report.is.mean,
        report.is.std,
        report.ds.mean,
        report.ds.std,
        report.collisions,
        report.stop_violations
    )?;
    Ok(())
}

pub fn rollout(cfg: &RunConfig, a: &RolloutArgs, out: &mut impl Write) -> Result<(), CliError> {
    let scenario = cfg.eval.suite.scenario(cfg.eval.seed, a.index);
    let episode = EpisodeConfig {
        off_route_distance: cfg.eval.off_route_distance,
        arrival_tolerance: cfg.eval.arrival_tolerance,
    };
    let log = match a.agent {
        AgentKind::Route => {
            let mut agent = RouteFollowAgent::new(cfg.controller.clone(), cfg.model.horizon)?;
            run_episode(&scenario, &mut agent, &episode).map_err(jointdrive::CoreError::from)?
        }
        AgentKind::Model => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::Config("the model agent needs --checkpoint".into()))?;
            let (store, model) = load_checkpoint(path, cfg)?;
            let mut agent = ModelAgent::new(&model, &store, cfg.controller.clone())?;
            run_episode(&scenario, &mut agent, &episode).map_err(jointdrive::CoreError::from)?
        }
    };
    let path = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join("rollout.jsonl"));
    ensure_parent(&path)?;
    let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    log.write_jsonl(file).map_err(jointdrive::CoreError::from)?;
    let metrics = compute_metrics(&log).map_err(jointdrive::CoreError::from)?;
    writeln!(
        out,
        "{} ticks, termination {:?}: {}",
        log.ticks.len(),
        log.termination,
        serde_json::to_string(&metrics)?
    )?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub parameters: usize,
    pub heldout: EvalLosses,
}

/// Trains each variant on `paths.data` with the configured budget and
/// evaluates it on `paths.heldout`.
pub fn ablation_rows(cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<AblationRow>, CliError> {
    let data = load_data(&cfg.paths.data)?;
    let heldout = load_data(&cfg.paths.heldout)?;
    variants
        .iter()
        .map(|&variant| {
            let model = jointdrive::model::ModelConfig {
                variant,
                ..cfg.model.clone()
            };
            let mut trainer = Trainer::new(model, cfg.train.clone())?;
            trainer.train_stages(&data, &Stage::ALL, None)?;
            Ok(AblationRow {
                variant,
                parameters: trainer.store.num_scalars(),
                heldout: evaluate(&trainer.model, &trainer.store, &heldout)?,
            })
        })
        .collect()
}

pub fn ablate(cfg: &RunConfig, a: &AblateArgs, out: &mut impl Write) -> Result<(), CliError> {
    let variants: Vec<Variant> = match a.variants.is_empty() {
        true => vec![Variant::Full, Variant::I, Variant::II, Variant::III],
        false => a
            .variants
            .iter()
            .map(|v| v.parse())
            .collect::<Result<_, jointdrive::CoreError>>()?,
    };
    let rows = ablation_rows(cfg, &variants)?;
    let dir = &cfg.paths.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("variant,parameters,samples,planning_per_wp,prediction_per_wp,joint_per_wp\n");
    for r in &rows {
        let variant = serde_json::to_value(r.variant)?;
        let line = format!(
            "{},{},{},{},{},{}\n",
            variant.as_str().unwrap_or_default(),
            r.parameters,
            r.heldout.samples,
            r.heldout.planning_per_wp,
            r.heldout.prediction_per_wp,
            r.heldout.joint_per_wp
        );
        csv.push_str(&line);
        write!(out, "{line}")?;
    }
    std::fs::write(dir.join("ablation.csv"), csv)?;
    Ok(())
}

pub fn attn_dump(cfg: &RunConfig, a: &AttnDumpArgs, out: &mut impl Write) -> Result<(), CliError> {
    let (store, model) = load_checkpoint(&a.checkpoint, cfg)?;
    if model.local.is_none() {
        return Err(CliError::Config(format!(
            "variant {:?} has no local transformer",
            model.config.variant
        )));
    }
    let data = load_data(&cfg.paths.heldout)?;
    let sample = data.get(a.sample).ok_or_else(|| {
        CliError::Config(format!("sample {} out of range ({} samples)", a.sample, data.len()))
    })?;
    let prepared = prepare(
        sample,
        &model.config,
        AssembleMode::Inference,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let mut g = Graph::new(&store);
    let output = model.forward(&mut g, &prepared.input(), false)?;
    let probs = output.plan.local_attention.get(a.vehicle).ok_or_else(|| {
        CliError::Config(format!(
            "vehicle slot {} out of range ({} vehicles)",
            a.vehicle,
            output.crops.len()
        ))
    })?;
    let record = AttentionRecord::from_graph(&g, probs)?;
    let layer = a.layer.unwrap_or(record.layers.len().saturating_sub(1));
    let heat = accumulate_attention(&record, layer)?;
    let side = (heat.len() as f64).sqrt().round() as usize;
    let crop = g.value(output.crops[a.vehicle]).to_vec();
    let svg = attention_svg(&heat, side, &crop, model.config.crop.size)?;
    let path = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join("attention.svg"));
    ensure_parent(&path)?;
    std::fs::write(&path, svg)?;
    writeln!(out, "layer {layer} heat-map ({side}x{side}) written to {}", path.display())?;
    Ok(())
}

/// Wraps the model agent and keeps the world snapshot and trace of every
/// `every`-th tick.
struct Recorder<'a> {
    agent: ModelAgent<'a>,
    every: usize,
    tick: usize,
    frames: Vec<(usize, WorldSnapshot, TickTrace)>,
}

impl EgoAgent for Recorder<'_> {
    fn act(&mut self, world: &World) -> Result<Controls, Box<dyn std::error::Error + Send + Sync>> {
        let snapshot = world.snapshot(world.ego_id())?;
        let command = self.agent.act(world)?;
        if self.tick % self.every == 0 {
            if let Some(trace) = self.agent.last.clone() {
                self.frames.push((self.tick, snapshot, trace));
            }
        }
        self.tick += 1;
        Ok(command)
    }
}

pub fn plot(cfg: &RunConfig, a: &PlotArgs, out: &mut impl Write) -> Result<(), CliError> {
    if a.every == 0 {
        return Err(CliError::Config("--every must be positive".into()));
    }
    let (store, model) = load_checkpoint(&a.checkpoint, cfg)?;
    let scenario = cfg.eval.suite.scenario(cfg.eval.seed, a.index);
    let mut recorder = Recorder {
        agent: ModelAgent::new(&model, &store, cfg.controller.clone())?,
        every: a.every,
        tick: 0,
        frames: Vec::new(),
    };
    let episode = EpisodeConfig {
        off_route_distance: cfg.eval.off_route_distance,
        arrival_tolerance: cfg.eval.arrival_tolerance,
    };
    run_episode(&scenario, &mut recorder, &episode).map_err(jointdrive::CoreError::from)?;
    let dir = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join("frames"));
    std::fs::create_dir_all(&dir)?;
    let extent = cfg.model.grid.x_max.max(cfg.model.grid.y_max);
    for (tick, snapshot, trace) in &recorder.frames {
        let svg = overlay_svg(&OverlayView {
            snapshot,
            plan: &trace.plan,
            predictions: &trace.predictions,
            extent,
        })?;
        std::fs::write(dir.join(format!("frame_{tick:05}.svg")), svg)?;
    }
    writeln!(out, "{} frames written to {}", recorder.frames.len(), dir.display())?;
    Ok(())
}
