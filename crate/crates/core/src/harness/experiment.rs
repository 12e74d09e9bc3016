use std::fs::File;
use std::io::BufReader;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{baseline_name, ExperimentConfig, SuiteConfig};
use crate::controller::{ArmValueRecord, Controller, ControllerConfig, STATIC_GAMMA};
use crate::dist::TokenId;
use crate::error::{Error, Result};
use crate::metrics::{RunMetrics, SessionRecord};
use crate::models::{read_trace, replay_pair, synth_pair, ModelPair, ReplayConfig, TraceRecord};
use crate::rng::{derive_seed, rng_for};

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub controller: String,
    pub seed: u64,
    pub tag: String,
    pub m: f64,
    pub accept_rate: f64,
    pub speedup: f64,
}

/// Everything one controller produced on one suite under one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerRun {
    pub controller: String,
    pub seed: u64,
    pub tag: String,
    pub metrics: RunMetrics,
    pub sessions: Vec<SessionRecord>,
    pub arm_log: Vec<ArmValueRecord>,
    /// Generated tokens per prompt, in suite order.
    pub outputs: Vec<Vec<TokenId>>,
}

impl ControllerRun {
    pub fn row(&self) -> ResultRow {
        ResultRow {
            controller: self.controller.clone(),
            seed: self.seed,
            tag: self.tag.clone(),
            m: self.metrics.mean_accepted,
            accept_rate: self.metrics.accept_rate,
            speedup: self.metrics.speedup,
        }
    }
}

/// Runs in order: seed, then suite, then the baseline followed by the
/// configured controllers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentResult {
    pub runs: Vec<ControllerRun>,
}

impl ExperimentResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.runs.iter().map(ControllerRun::row).collect()
    }

    pub fn find(&self, controller: &str, seed: u64, tag: &str) -> Option<&ControllerRun> {
        self.runs
            .iter()
            .find(|r| r.controller == controller && r.seed == seed && r.tag == tag)
    }
}

enum PreparedSource {
    Synthetic(crate::models::SyntheticPairConfig),
    Trace(Vec<TraceRecord>, ReplayConfig),
}

struct PreparedSuite {
    tag: String,
    source: PreparedSource,
}

impl PreparedSuite {
    fn load(suite: &SuiteConfig) -> Result<Self> {
        let source = match (&suite.synthetic, &suite.trace) {
            (Some(s), _) => PreparedSource::Synthetic(s.clone()),
            (None, Some(t)) => {
                let file = File::open(&t.path).map_err(|e| Error::io(&t.path, e))?;
                let records = read_trace(BufReader::new(file))?;
                let replay = ReplayConfig {
                    vocab_size: t.vocab_size,
                    eos_token: t.eos_token,
                    tag: suite.tag.clone(),
                };
                PreparedSource::Trace(records, replay)
            }
            (None, None) => return Err(Error::config(format!("suite `{}` has no source", suite.tag))),
        };
        Ok(PreparedSuite {
            tag: suite.tag.clone(),
            source,
        })
    }

    /// A fresh model pair; identical for every controller under one seed.
    fn build(&self, seed: u64) -> Result<Box<dyn ModelPair + Send>> {
        Ok(match &self.source {
            PreparedSource::Synthetic(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = derive_seed(seed, &["model", &self.tag]);
                Box::new(synth_pair(cfg)?.with_tag(&self.tag))
            }
            PreparedSource::Trace(records, replay) => Box::new(replay_pair(records.clone(), replay.clone())?),
        })
    }
}

struct RawRun {
    sessions: Vec<SessionRecord>,
    arm_log: Vec<ArmValueRecord>,
    outputs: Vec<Vec<TokenId>>,
}

fn drive(config: &ExperimentConfig, suite: &PreparedSuite, controller: &ControllerConfig, seed: u64) -> Result<RawRun> {
    let mut models = suite.build(seed)?;
    let rng = rng_for(seed, &["controller", &controller.name, &suite.tag, "bandit"]);
    let mut ctl = Controller::new(controller.clone(), config.reward, rng)?;
    let mut run = RawRun {
        sessions: Vec::new(),
        arm_log: Vec::new(),
        outputs: Vec::new(),
    };
    let prompts = models.prompts().to_vec();
    for prompt in &prompts {
        let g = ctl.generate(&mut models, prompt, prompt.max_new_tokens)?;
        run.sessions.extend(g.sessions);
        run.arm_log.extend(g.arm_log);
        run.outputs.push(g.tokens);
    }
    Ok(run)
}

fn finish(
    name: &str,
    seed: u64,
    tag: &str,
    raw: RawRun,
    baseline: &[SessionRecord],
    config: &ExperimentConfig,
) -> Result<ControllerRun> {
    Ok(ControllerRun {
        controller: name.to_string(),
        seed,
        tag: tag.to_string(),
        metrics: RunMetrics::compute(&raw.sessions, baseline, &config.cost)?,
        sessions: raw.sessions,
        arm_log: raw.arm_log,
        outputs: raw.outputs,
    })
}

fn run_cell(config: &ExperimentConfig, suite: &PreparedSuite, seed: u64) -> Result<Vec<ControllerRun>> {
    let baseline_cfg = ControllerConfig::static_baseline(STATIC_GAMMA);
    let baseline = drive(config, suite, &baseline_cfg, seed)?;
    let others: Vec<RawRun> = config
        .controllers
        .par_iter()
        .map(|c| drive(config, suite, c, seed))
        .collect::<Result<_>>()?;

    let mut runs = Vec::with_capacity(others.len() + 1);
    for (c, raw) in config.controllers.iter().zip(others) {
        runs.push(finish(&c.name, seed, &suite.tag, raw, &baseline.sessions, config)?);
    }
    let base_sessions = baseline.sessions.clone();
    runs.insert(
        0,
        finish(&baseline_name(), seed, &suite.tag, baseline, &base_sessions, config)?,
    );
    Ok(runs)
}

/// Run every controller and the baseline on every (seed, suite) cell.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let suites: Vec<PreparedSuite> = config.suites.iter().map(PreparedSuite::load).collect::<Result<_>>()?;
    let cells: Vec<(u64, &PreparedSuite)> = config
        .seeds
        .iter()
        .flat_map(|&seed| suites.iter().map(move |s| (seed, s)))
        .collect();
    let per_cell: Vec<Vec<ControllerRun>> = cells
        .par_iter()
        .map(|&(seed, suite)| run_cell(config, suite, seed))
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        runs: per_cell.into_iter().flatten().collect(),
    })
}
