use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{
    CsvAppender, MetricsRow, Phase, METRICS_HEADER, Q_TRACE_HEADER, SIMILARITY_SUMMARY_HEADER,
    TIMINGS_HEADER,
};
use crate::agents::{Agent, AgentBehaviour, Algorithm, LossReport};
use crate::diagnostics::{
    action_histogram, feature_similarity, final_rate, q_action_gradient_field, q_trace,
    run_statistics, write_field_csv, write_histogram_csv, write_q_trace_csv,
    write_run_statistics_csv, write_similarity_csv, EpisodeRecord, ProbeSet, QTrace,
};
use crate::envs::{
    collect_demonstrations, load_dataset, rollout, save_dataset, Behaviour, Demonstrator, EnvConfig,
    Trajectory,
};
use crate::replay::DualBuffer;
use crate::rng::derive_seed;
use crate::{Error, Result};

const DEMO_STREAM: u64 = 1;
const AGENT_STREAM: u64 = 2;
const BUFFER_STREAM: u64 = 3;
const ONLINE_STREAM: u64 = 4;
const EVAL_STREAM: u64 = 5;
const PROBE_STREAM: u64 = 6;

/// Episodes at the end of online training that define final success.
pub const FINAL_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Offline,
    Online,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Offline => "offline",
            Stage::Online => "online",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Stage::Offline),
            "online" => Ok(Stage::Online),
            other => Err(Error::config(format!("unknown stage {other:?} (offline, online)"))),
        }
    }
}

/// Layout of one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("diagnostics")).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn stamp(&self) -> PathBuf {
        self.root.join("run.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.jsonl")
    }
    pub fn dataset_manifest(&self) -> PathBuf {
        self.root.join("dataset.manifest.json")
    }
    pub fn probe(&self) -> PathBuf {
        self.root.join("probe.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.csv")
    }
    pub fn checkpoint(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{}_checkpoint.json", stage.as_str()))
    }
    pub fn partial_checkpoint(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{}_checkpoint.partial.json", stage.as_str()))
    }
    pub fn buffer(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("buffer_{}", stage.as_str()))
    }
    pub fn eval_rows(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("eval_{}.csv", stage.as_str()))
    }
    pub fn eval_summary(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("eval_{}.json", stage.as_str()))
    }
    pub fn diagnostic(&self, name: &str) -> PathBuf {
        self.root.join("diagnostics").join(name)
    }
}

/// Identity of a run, written next to its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStamp {
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub env: String,
    pub algorithm: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn stamp(cfg: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<()> {
    std::fs::write(run.config(), cfg.to_json()?).map_err(|e| Error::io(run.config(), e))?;
    write_json(
        &run.stamp(),
        &RunStamp {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            env: cfg.env.name().into(),
            algorithm: cfg.agent.algorithm.name().into(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetManifest {
    env: EnvConfig,
    seed: u64,
    demonstrations: usize,
}

/// Collects the configured number of successful demonstrations.
pub fn collect(cfg: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    stamp(cfg, seed, run)?;
    let mut env = cfg.env.build();
    let horizon = env.spec().horizon;
    let demos = collect_demonstrations(
        env.as_mut(),
        &mut Demonstrator::new(),
        cfg.demonstrations,
        horizon,
        true,
        derive_seed(seed, DEMO_STREAM),
        cfg.demo_retry_budget,
    )?;
    save_dataset(&run.dataset(), &demos)?;
    write_json(
        &run.dataset_manifest(),
        &DatasetManifest {
            env: cfg.env.clone(),
            seed,
            demonstrations: demos.len(),
        },
    )?;
    log::info!("collected {} demonstrations into {}", demos.len(), run.dataset().display());
    Ok(demos)
}

fn probe_set(cfg: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<ProbeSet> {
    let path = run.probe();
    if path.exists() {
        let probe: ProbeSet = read_json(&path)?;
        if probe.len() == cfg.diagnostics.probe_pairs {
            return Ok(probe);
        }
    }
    let mut env = cfg.env.build();
    let probe = ProbeSet::from_random_rollouts(
        env.as_mut(),
        cfg.diagnostics.probe_pairs,
        derive_seed(seed, PROBE_STREAM),
    )?;
    write_json(&path, &probe)?;
    Ok(probe)
}

/// Probe evaluations gathered during one training phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeLog {
    pub traces: Vec<QTrace>,
    /// `(gradient step, mean |clipped feature dot|)`.
    pub similarity: Vec<(u64, f64)>,
}

struct Prober {
    probe: ProbeSet,
    clip: f64,
    traces: CsvAppender,
    similarity: CsvAppender,
    log: ProbeLog,
}

impl Prober {
    fn open(cfg: &ExperimentConfig, seed: u64, run: &RunDir, stage: Stage) -> Result<Self> {
        let name = |kind: &str| run.diagnostic(&format!("{}_{kind}.csv", stage.as_str()));
        Ok(Self {
            probe: probe_set(cfg, seed, run)?,
            clip: cfg.diagnostics.similarity_clip,
            traces: CsvAppender::create(&name("q_trace_log"), &Q_TRACE_HEADER)?,
            similarity: CsvAppender::create(&name("similarity_summary"), &SIMILARITY_SUMMARY_HEADER)?,
            log: ProbeLog::default(),
        })
    }

    fn record(&mut self, agent: &Agent) -> Result<()> {
        let Some(critic) = agent.critics.first() else {
            return Ok(());
        };
        let trace = q_trace(critic, &self.probe, agent.config.gamma, agent.updates)?;
        let sim = feature_similarity(critic, &self.probe, self.clip)?;
        self.traces.q_trace(&trace)?;
        self.similarity.similarity_summary(agent.updates, &sim)?;
        self.log.similarity.push((agent.updates, sim.mean_abs));
        self.log.traces.push(trace);
        Ok(())
    }
}

#[derive(Default)]
struct LossMean {
    sum: LossReport,
    n: usize,
}

impl LossMean {
    fn add(&mut self, r: &LossReport) {
        let s = &mut self.sum;
        s.td += r.td;
        s.cql += r.cql;
        s.reg += r.reg;
        s.critic += r.critic;
        s.actor += r.actor;
        s.bc += r.bc;
        s.entropy += r.entropy;
        s.temperature += r.temperature;
        self.n += 1;
    }

    fn take(&mut self) -> LossReport {
        let k = 1.0 / self.n.max(1) as f64;
        let s = self.sum;
        *self = Self::default();
        LossReport {
            td: s.td * k,
            cql: s.cql * k,
            reg: s.reg * k,
            critic: s.critic * k,
            actor: s.actor * k,
            bc: s.bc * k,
            entropy: s.entropy * k,
            temperature: s.temperature * k,
        }
    }
}

/// Keeps what training produced so far before passing a fault upward.
fn halt(agent: &Agent, run: &RunDir, stage: Stage, err: Error) -> Error {
    if let Err(e) = agent.save(&run.partial_checkpoint(stage)) {
        log::error!("could not save partial checkpoint: {e}");
    }
    log::error!("{} training halted: {err}", stage.as_str());
    err
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineOutcome {
    pub steps: usize,
    pub last: LossReport,
    pub probes: ProbeLog,
}

/// Gradient steps on the demonstrations alone.
pub fn train_offline(cfg: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<OfflineOutcome> {
    cfg.validate()?;
    stamp(cfg, seed, run)?;
    let demos = load_dataset(&run.dataset())?;
    let first = demos
        .first()
        .ok_or_else(|| Error::config("dataset holds no trajectories"))?;
    let env = cfg.env.build();
    let spec = env.spec();
    let (obs_dim, act_dim) = (first.observations[0].len(), first.actions.first().map_or(0, Vec::len));
    if obs_dim != spec.obs_dim || act_dim != spec.act_dim {
        return Err(Error::config(format!(
            "dataset has obs/act widths {obs_dim}/{act_dim}, {} expects {}/{}",
            spec.name, spec.obs_dim, spec.act_dim
        )));
    }
    let mut buffer = DualBuffer::new(cfg.buffer_config(), derive_seed(seed, BUFFER_STREAM));
    for d in demos {
        buffer.add_offline(d);
    }
    let mut agent = Agent::new(cfg.agent.clone(), obs_dim, act_dim, derive_seed(seed, AGENT_STREAM))?;
    let mut metrics = CsvAppender::create(&run.metrics(), &METRICS_HEADER)?;
    let mut timings = CsvAppender::create(&run.timings(), &TIMINGS_HEADER)?;
    let mut prober = Prober::open(cfg, seed, run, Stage::Offline)?;
    let cadence = cfg.diagnostics.offline_every;
    if cadence > 0 {
        prober.record(&agent)?;
    }
    let start = Instant::now();
    let mut mean = LossMean::default();
    let mut last = LossReport::default();
    for step in 1..=cfg.offline_steps {
        last = match agent.update(&mut buffer) {
            Ok(r) => r,
            Err(e) => return Err(halt(&agent, run, Stage::Offline, e)),
        };
        mean.add(&last);
        if step % cfg.log_every == 0 || step == cfg.offline_steps {
            metrics.metrics(&MetricsRow {
                phase: Phase::Offline,
                index: step as u64,
                success: None,
                fault: None,
                ret: None,
                losses: mean.take(),
            })?;
            timings.timing(Phase::Offline, step as u64, start.elapsed().as_secs_f64())?;
        }
        if cadence > 0 && step % cadence == 0 {
            prober.record(&agent)?;
        }
    }
    agent.save(&run.checkpoint(Stage::Offline))?;
    buffer.save(&run.buffer(Stage::Offline))?;
    log::info!(
        "offline: {} steps in {:.1}s",
        cfg.offline_steps,
        start.elapsed().as_secs_f64()
    );
    Ok(OfflineOutcome {
        steps: cfg.offline_steps,
        last,
        probes: prober.log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineOutcome {
    pub records: Vec<EpisodeRecord>,
    pub returns: Vec<f64>,
    /// Training-episode success over the last [`FINAL_WINDOW`] episodes.
    pub final_success: f64,
    pub probes: ProbeLog,
}

/// Interaction loop: one stochastic episode, then a block of updates.
pub fn train_online(cfg: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<OnlineOutcome> {
    cfg.validate()?;
    let mut agent = Agent::load(&run.checkpoint(Stage::Offline))?;
    let mut buffer = DualBuffer::load(&run.buffer(Stage::Offline))?;
    let mut env = cfg.env.build();
    let mut metrics = CsvAppender::open(&run.metrics(), &METRICS_HEADER)?;
    let mut timings = CsvAppender::open(&run.timings(), &TIMINGS_HEADER)?;
    let mut prober = Prober::open(cfg, seed, run, Stage::Online)?;
    let cadence = cfg.diagnostics.online_every;
    if cadence > 0 {
        prober.record(&agent)?;
    }
    let episode_seed = derive_seed(seed, ONLINE_STREAM);
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.online_episodes);
    let mut returns = Vec::with_capacity(cfg.online_episodes);
    for ep in 0..cfg.online_episodes {
        let mut behaviour = AgentBehaviour::new(agent.policy.clone(), true);
        let traj = rollout(env.as_mut(), &mut behaviour, derive_seed(episode_seed, ep as u64), usize::MAX);
        let success = env.is_success(&traj);
        let (fault, ret) = (traj.fault, traj.ret());
        let id = buffer.add_online_episode(traj);
        if success {
            buffer.sil_commit(id);
        }
        let mut mean = LossMean::default();
        for _ in 0..agent.config.updates_per_episode {
            match agent.update(&mut buffer) {
                Ok(r) => mean.add(&r),
                Err(e) => return Err(halt(&agent, run, Stage::Online, e)),
            }
        }
        metrics.metrics(&MetricsRow {
            phase: Phase::Online,
            index: ep as u64,
            success: Some(success),
            fault: Some(fault),
            ret: Some(ret),
            losses: mean.take(),
        })?;
        timings.timing(Phase::Online, ep as u64, start.elapsed().as_secs_f64())?;
        records.push(EpisodeRecord { success, fault });
        returns.push(ret);
        if cadence > 0 && (ep + 1) % cadence == 0 {
            prober.record(&agent)?;
        }
    }
    agent.save(&run.checkpoint(Stage::Online))?;
    buffer.save(&run.buffer(Stage::Online))?;
    if !records.is_empty() {
        let stats = run_statistics(std::slice::from_ref(&records), 10)?;
        write_run_statistics_csv(&run.diagnostic("online_success_curve.csv"), &stats)?;
    }
    log::info!(
        "online: {} episodes in {:.1}s, final success {:.2}",
        cfg.online_episodes,
        start.elapsed().as_secs_f64(),
        final_rate(&records, FINAL_WINDOW)
    );
    Ok(OnlineOutcome {
        final_success: final_rate(&records, FINAL_WINDOW),
        records,
        returns,
        probes: prober.log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub attempts: usize,
    pub success_rate: f64,
    pub fault_rate: f64,
    pub mean_return: f64,
}

/// Episode seeds used by every evaluation of one run seed; policies compared
/// under the same seed face the same attempts.
pub fn eval_seeds(seed: u64, attempts: usize) -> Vec<u64> {
    let base = derive_seed(seed, EVAL_STREAM);
    (0..attempts as u64).map(|i| derive_seed(base, i)).collect()
}

/// Runs `behaviour` on a fresh environment for each seed.
pub fn evaluate_behaviour(
    env: &EnvConfig,
    behaviour: &mut dyn Behaviour,
    seeds: &[u64],
) -> (EvalSummary, Vec<MetricsRow>) {
    let mut e = env.build();
    let mut rows = Vec::with_capacity(seeds.len());
    for (i, &s) in seeds.iter().enumerate() {
        let t = rollout(e.as_mut(), behaviour, s, usize::MAX);
        rows.push(MetricsRow {
            phase: Phase::Eval,
            index: i as u64,
            success: Some(e.is_success(&t)),
            fault: Some(t.fault),
            ret: Some(t.ret()),
            losses: LossReport::default(),
        });
    }
    let n = rows.len().max(1) as f64;
    let count = |f: fn(&MetricsRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let summary = EvalSummary {
        attempts: rows.len(),
        success_rate: count(|r| r.success == Some(true)),
        fault_rate: count(|r| r.fault == Some(true)),
        mean_return: rows.iter().filter_map(|r| r.ret).sum::<f64>() / n,
    };
    (summary, rows)
}

/// Mean-action rollouts of a saved checkpoint.
pub fn evaluate(cfg: &ExperimentConfig, seed: u64, run: &RunDir, stage: Stage) -> Result<EvalSummary> {
    let agent = Agent::load(&run.checkpoint(stage))?;
    let mut behaviour = AgentBehaviour::new(agent.policy, false);
    let (summary, rows) = evaluate_behaviour(&cfg.env, &mut behaviour, &eval_seeds(seed, cfg.eval_attempts));
    let mut out = CsvAppender::create(&run.eval_rows(stage), &METRICS_HEADER)?;
    for r in &rows {
        out.metrics(r)?;
    }
    write_json(&run.eval_summary(stage), &summary)?;
    log::info!(
        "{} evaluation: success {:.2}, fault {:.2}, return {:.3} over {} attempts",
        stage.as_str(),
        summary.success_rate,
        summary.fault_rate,
        summary.mean_return,
        summary.attempts
    );
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Similarity,
    QTrace,
    Histogram,
    Field,
}

impl DiagnosticKind {
    pub const ALL: [DiagnosticKind; 4] = [
        DiagnosticKind::Similarity,
        DiagnosticKind::QTrace,
        DiagnosticKind::Histogram,
        DiagnosticKind::Field,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::Similarity => "similarity",
            DiagnosticKind::QTrace => "q_trace",
            DiagnosticKind::Histogram => "histogram",
            DiagnosticKind::Field => "field",
        }
    }
}

impl FromStr for DiagnosticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown diagnostic {s:?} (similarity, q_trace, histogram, field)"
                ))
            })
    }
}

/// Writes the requested reports for one checkpoint and returns their paths.
pub fn diagnose(
    cfg: &ExperimentConfig,
    seed: u64,
    run: &RunDir,
    stage: Stage,
    which: &[DiagnosticKind],
) -> Result<Vec<PathBuf>> {
    if which.is_empty() {
        return Ok(Vec::new());
    }
    let agent = Agent::load(&run.checkpoint(stage))?;
    let probe = probe_set(cfg, seed, run)?;
    let critic = agent.critics.first();
    let need_critic = || {
        critic.ok_or_else(|| {
            Error::config(format!("{} has no critic to diagnose", agent.config.algorithm.name()))
        })
    };
    let mut written = Vec::new();
    for &kind in which {
        let path = run.diagnostic(&format!("{}_{}.csv", stage.as_str(), kind.as_str()));
        match kind {
            DiagnosticKind::Similarity => {
                let r = feature_similarity(need_critic()?, &probe, cfg.diagnostics.similarity_clip)?;
                write_similarity_csv(&path, &r)?;
            }
            DiagnosticKind::QTrace => {
                let t = q_trace(need_critic()?, &probe, agent.config.gamma, agent.updates)?;
                write_q_trace_csv(&path, &[t])?;
            }
            DiagnosticKind::Histogram => {
                let trajectories = match stage {
                    Stage::Online => DualBuffer::load(&run.buffer(Stage::Online))?
                        .online_trajectories()
                        .to_vec(),
                    Stage::Offline => {
                        let mut env = cfg.env.build();
                        let mut b = AgentBehaviour::new(agent.policy.clone(), true);
                        eval_seeds(seed, cfg.eval_attempts)
                            .into_iter()
                            .map(|s| rollout(env.as_mut(), &mut b, s, usize::MAX))
                            .collect()
                    }
                };
                let h = action_histogram(&trajectories, cfg.diagnostics.histogram_bins)?;
                write_histogram_csv(&path, &h)?;
            }
            DiagnosticKind::Field => {
                let s = probe.obs.row(0).to_vec();
                let base = agent.act_deterministic(&s)?;
                if base.len() < 2 {
                    return Err(Error::config("gradient field needs two action dimensions"));
                }
                let f = q_action_gradient_field(need_critic()?, &s, &base, [0, 1], cfg.diagnostics.field_grid)?;
                write_field_csv(&path, &f)?;
            }
        }
        written.push(path);
    }
    Ok(written)
}

/// Everything the full protocol measured for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub offline: OfflineOutcome,
    pub offline_eval: EvalSummary,
    pub online: Option<OnlineOutcome>,
    pub online_eval: Option<EvalSummary>,
}

/// collect, train offline, evaluate, train online, evaluate.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64, run: &RunDir) -> Result<RunSummary> {
    collect(cfg, seed, run)?;
    let offline = train_offline(cfg, seed, run)?;
    let offline_eval = evaluate(cfg, seed, run, Stage::Offline)?;
    let online_phase = cfg.online_episodes > 0 && cfg.agent.algorithm != Algorithm::Bc;
    let (online, online_eval) = if online_phase {
        let o = train_online(cfg, seed, run)?;
        (Some(o), Some(evaluate(cfg, seed, run, Stage::Online)?))
    } else {
        (None, None)
    };
    let summary = RunSummary {
        seed,
        offline,
        offline_eval,
        online,
        online_eval,
    };
    write_json(&run.root.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One grid cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub variant: String,
    pub overrides: Vec<String>,
    pub runs: Vec<RunSummary>,
}

/// Cartesian product of `key=v1,v2,...` axes.
pub fn expand_grid(axes: &[String]) -> Result<Vec<Vec<String>>> {
    let mut cells: Vec<Vec<String>> = vec![Vec::new()];
    for axis in axes {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| Error::config(format!("grid axis {axis:?} is not key=v1,v2")))?;
        let values: Vec<&str> = values.split(',').filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::config(format!("grid axis {key:?} has no values")));
        }
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push(format!("{key}={v}"));
                    next
                })
            })
            .collect();
    }
    Ok(cells)
}

fn variant_name(overrides: &[String]) -> String {
    if overrides.is_empty() {
        return "base".into();
    }
    overrides
        .iter()
        .map(|o| {
            o.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("__")
}

/// Runs the full protocol for every grid cell and seed under `cfg.out_dir`.
pub fn sweep(cfg: &ExperimentConfig, axes: &[String]) -> Result<Vec<SweepEntry>> {
    let mut entries = Vec::new();
    for overrides in expand_grid(axes)? {
        let variant = variant_name(&overrides);
        let vcfg = cfg.with_overrides(&overrides)?;
        let root = cfg.out_dir.join(&variant);
        let mut runs = Vec::new();
        for &seed in &vcfg.seeds {
            let run = RunDir::create(root.join(format!("seed{seed}")))?;
            runs.push(run_pipeline(&vcfg, seed, &run)?);
        }
        let curves: Vec<Vec<EpisodeRecord>> = runs
            .iter()
            .filter_map(|r| r.online.as_ref().map(|o| o.records.clone()))
            .collect();
        if !curves.is_empty() {
            let stats = run_statistics(&curves, 10)?;
            write_run_statistics_csv(&root.join("success_curve.csv"), &stats)?;
        }
        let mut table = CsvAppender::create(
            &root.join("summary.csv"),
            &["seed", "offline_eval_success", "final_online_success", "online_eval_success"],
        )?;
        for r in &runs {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            table.write([
                r.seed.to_string(),
                r.offline_eval.success_rate.to_string(),
                opt(r.online.as_ref().map(|o| o.final_success)),
                opt(r.online_eval.as_ref().map(|e| e.success_rate)),
            ])?;
        }
        entries.push(SweepEntry {
            variant,
            overrides,
            runs,
        });
    }
    Ok(entries)
}
