//! Closed-loop evaluation over scenario suites, repeated with seed offsets.

use std::io::Write;
use std::path::Path;

use jointdrive_sim::{
    compute_metrics, generate, generate_kind, run_episode, EgoAgent, EpisodeConfig, Metrics, Scenario,
    ScenarioKind, Termination,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::hex;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// The mixed training distribution (intersections, straights, lane changes).
    Standard,
    /// A lead vehicle brakes hard in front of the ego.
    HardBrake,
    /// The ego alone on a straight road.
    EmptyRoad,
}

impl Suite {
    pub fn scenario(self, seed: u64, index: u64) -> Scenario {
        match self {
            Suite::Standard => generate(seed, index),
            Suite::HardBrake => generate_kind(ScenarioKind::HardBrake, seed, index),
            Suite::EmptyRoad => generate_kind(ScenarioKind::EmptyRoad, seed, index),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub suite: Suite,
    pub seed: u64,
    pub routes: u64,
    pub first_index: u64,
    pub repetitions: u64,
    /// Scenario seed added per repetition.
    pub seed_stride: u64,
    pub off_route_distance: f64,
    pub arrival_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            suite: Suite::Standard,
            seed: 1000,
            routes: 10,
            first_index: 0,
            repetitions: 3,
            seed_stride: 10_000,
            off_route_distance: 3.0,
            arrival_tolerance: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    pub repetition: u64,
    pub scenario_seed: u64,
    pub index: u64,
    pub kind: ScenarioKind,
    pub ticks: usize,
    pub termination: Option<Termination>,
    pub metrics: Metrics,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

/// Means over routes of one repetition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub repetition: u64,
    pub rc: f64,
    pub is: f64,
    pub ds: f64,
    pub collisions: usize,
    pub stop_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub agent: String,
    pub config: EvalConfig,
    pub routes: Vec<RouteResult>,
    pub repetitions: Vec<RepetitionSummary>,
    /// Mean and deviation of the per-repetition means.
    pub rc: MeanStd,
    pub is: MeanStd,
    pub ds: MeanStd,
    pub collisions: usize,
    pub stop_violations: usize,
}

/// SHA-256 of the JSON serialisation of any configuration value.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(config)?)))
}

/// Runs every route of every repetition with a fresh agent from `make_agent`.
pub fn run_eval<'a>(
    cfg: &EvalConfig,
    agent_name: &str,
    config_hash: String,
    mut make_agent: impl FnMut() -> Result<Box<dyn EgoAgent + 'a>>,
) -> Result<EvalReport> {
    let episode = EpisodeConfig {
        off_route_distance: cfg.off_route_distance,
        arrival_tolerance: cfg.arrival_tolerance,
    };
    let mut routes = Vec::new();
    let mut repetitions = Vec::new();
    for rep in 0..cfg.repetitions {
        let seed = cfg.seed + rep * cfg.seed_stride;
        let mut rep_routes = Vec::new();
        for index in cfg.first_index..cfg.first_index + cfg.routes {
            let scenario = cfg.suite.scenario(seed, index);
            let mut agent = make_agent()?;
            let log = run_episode(&scenario, agent.as_mut(), &episode)?;
            rep_routes.push(RouteResult {
                repetition: rep,
                scenario_seed: seed,
                index,
                kind: scenario.kind,
                ticks: log.ticks.len(),
                termination: log.termination,
                metrics: compute_metrics(&log)?,
            });
        }
        let n = rep_routes.len().max(1) as f64;
        repetitions.push(RepetitionSummary {
            repetition: rep,
            rc: rep_routes.iter().map(|r| r.metrics.rc).sum::<f64>() / n,
            is: rep_routes.iter().map(|r| r.metrics.is).sum::<f64>() / n,
            ds: rep_routes.iter().map(|r| r.metrics.ds).sum::<f64>() / n,
            collisions: rep_routes.iter().map(|r| r.metrics.collisions).sum(),
            stop_violations: rep_routes.iter().map(|r| r.metrics.stop_violations).sum(),
        });
        routes.extend(rep_routes);
    }
    let pick = |f: fn(&RepetitionSummary) -> f64| MeanStd::of(&repetitions.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        config_hash,
        agent: agent_name.to_string(),
        config: cfg.clone(),
        rc: pick(|r| r.rc),
        is: pick(|r| r.is),
        ds: pick(|r| r.ds),
        collisions: repetitions.iter().map(|r| r.collisions).sum(),
        stop_violations: repetitions.iter().map(|r| r.stop_violations).sum(),
        routes,
        repetitions,
    })
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// One row per route.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "repetition,scenario_seed,index,kind,ticks,termination,rc,is,ds,collisions,stop_violations,off_route"
        )?;
        for r in &self.routes {
            let kind = serde_json::to_value(r.kind)?;
            let term = serde_json::to_value(r.termination)?;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.repetition,
                r.scenario_seed,
                r.index,
                kind.as_str().unwrap_or_default(),
                r.ticks,
                term.as_str().unwrap_or("none"),
                r.metrics.rc,
                r.metrics.is,
                r.metrics.ds,
                r.metrics.collisions,
                r.metrics.stop_violations,
                r.metrics.off_route
            )?;
        }
        w.flush()?;
        Ok(())
    }
}
