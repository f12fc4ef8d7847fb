use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actor::{run_actor_steps, ActorState};
use super::config::ExperimentConfig;
use super::gap::symmetry_gap;
use super::metrics::{MetricsHeader, MetricsRecord, MetricsWriter};
use super::schedule::Scheduler;
use crate::error::{Error, Result};
use crate::mpo::{learner_step, q_symmetry_gap, LearnerMetrics, LearnerState, StepOutcome};
use crate::replay::ReplayBuffer;
use crate::symmetry::build_quadruped_mirror_spec;

/// Learner steps at the end of a run whose completed episodes make up the final return.
pub const FINAL_WINDOW: u64 = 1000;

/// Independent random streams of one run. Both conditions of a pair use the same seed, so they
/// share network initialization, reset seeds, actor noise and learner sampling streams.
#[derive(Clone, Copy, Debug)]
enum Stream {
    Init = 0,
    Resets = 1,
    ActorNoise = 2,
    Learner = 3,
    Diagnostics = 4,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

fn init_seed(seed: u64) -> u64 {
    use rand::RngCore;
    stream(seed, Stream::Init).next_u64()
}

/// Everything a finished run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub augment: bool,
    pub records: Vec<MetricsRecord>,
    /// `(learner_step, return)` for every completed episode, attributed to the learner step
    /// before which the episode ended.
    pub episodes: Vec<(u64, f64)>,
    pub env_steps: u64,
    pub updates: u64,
    /// Symmetry gap of the final policy on states drawn from the run's replay buffer.
    pub final_symmetry_gap: f64,
    /// Mean `|Q(s, a) - Q(M s, M a)|` of the final critic on replay transitions.
    pub final_q_gap: f64,
    pub learner_steps: u64,
}

impl RunOutcome {
    /// Mean `episode_return` over the metrics records.
    pub fn auc(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.episode_return).sum::<f64>() / self.records.len() as f64
    }

    /// Mean return of episodes completed during the last `FINAL_WINDOW` learner steps, falling
    /// back to the last completed episode, then to 0.
    pub fn final_return(&self) -> f64 {
        let start = self.learner_steps.saturating_sub(FINAL_WINDOW);
        let recent: Vec<f64> = self
            .episodes
            .iter()
            .filter(|(t, _)| *t > start)
            .map(|&(_, r)| r)
            .collect();
        if !recent.is_empty() {
            recent.iter().sum::<f64>() / recent.len() as f64
        } else {
            self.episodes.last().map_or(0.0, |&(_, r)| r)
        }
    }
}

/// One training run of one condition. Metrics go to `sink` when given.
pub fn train_run(
    cfg: &ExperimentConfig,
    seed: u64,
    augment: bool,
    mut sink: Option<&mut MetricsWriter>,
) -> Result<(RunOutcome, LearnerState)> {
    cfg.validate()?;
    let started = Instant::now();
    let spec = build_quadruped_mirror_spec();
    let mut ls = LearnerState::new(&cfg.mpo_config(), init_seed(seed))?;
    let mut buf = ReplayBuffer::new(cfg.capacity);
    let mut resets = stream(seed, Stream::Resets);
    let mut noise = stream(seed, Stream::ActorNoise);
    let mut learner_rng = stream(seed, Stream::Learner);
    let mut diag_rng = stream(seed, Stream::Diagnostics);
    let mut actor = ActorState::new(cfg.task.params(), &mut resets);
    let mut sched = Scheduler::new(cfg.ratio);

    let mut last: Option<LearnerMetrics> = None;
    let mut updates = 0;
    let mut episodes = Vec::new();
    let mut window: Vec<f64> = Vec::new();
    let mut records = Vec::new();

    for t in 1..=cfg.learner_steps {
        let n = sched.steps_before(t);
        for r in run_actor_steps(&ls.policy, &mut actor, n, &mut buf, &mut noise, &mut resets)? {
            episodes.push((t, r));
            window.push(r);
        }
        if let StepOutcome::Updated(m) = learner_step(&mut ls, &buf, &spec, augment, &mut learner_rng)? {
            last = Some(m);
            updates += 1;
        }
        if t % cfg.metrics_every == 0 {
            let episode_return = if window.is_empty() {
                episodes.last().map_or(0.0, |&(_, r)| r)
            } else {
                window.iter().sum::<f64>() / window.len() as f64
            };
            window.clear();
            let states = buf.sample_states(cfg.gap_states.min(buf.len()), &mut diag_rng)?;
            let m = last.unwrap_or_default();
            let record = MetricsRecord {
                learner_step: t,
                updates,
                env_steps: actor.env_steps(),
                episodes: episodes.len() as u64,
                episode_return,
                td_loss: m.td.loss,
                policy_loss: m.improve.loss,
                eta: ls.eta,
                mean_kl: m.improve.mean_kl,
                symmetry_gap: symmetry_gap(&ls.policy, states.view(), &spec)?,
                wall_clock: if cfg.wall_clock {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            if let Some(w) = sink.as_deref_mut() {
                w.write(&record)?;
            }
            records.push(record);
        }
    }

    let (final_symmetry_gap, final_q_gap) = if buf.is_empty() {
        (0.0, 0.0)
    } else {
        let k = cfg.gap_states.min(buf.len());
        let states = buf.sample_states(k, &mut diag_rng)?;
        let batch = buf.sample_transitions(k, &mut diag_rng)?;
        (
            symmetry_gap(&ls.policy, states.view(), &spec)?,
            q_symmetry_gap(&ls.q, batch.s.view(), batch.a.view(), &spec)?,
        )
    };
    let outcome = RunOutcome {
        seed,
        augment,
        records,
        episodes,
        env_steps: actor.env_steps(),
        updates,
        final_symmetry_gap,
        final_q_gap,
        learner_steps: cfg.learner_steps,
    };
    Ok((outcome, ls))
}

/// Runs one condition and writes its metrics file at `path`.
pub fn train_to_file(cfg: &ExperimentConfig, seed: u64, augment: bool, path: &Path) -> Result<(RunOutcome, LearnerState)> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = MetricsWriter::create(path, &MetricsHeader::new(cfg, seed, augment))?;
    let out = train_run(cfg, seed, augment, Some(&mut writer))?;
    writer.finish()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub augment: bool,
    pub metrics_file: PathBuf,
    pub auc: f64,
    pub final_return: f64,
    pub final_symmetry_gap: f64,
    pub final_q_gap: f64,
    pub episodes: usize,
    pub env_steps: u64,
}

impl RunSummary {
    fn new(o: &RunOutcome, metrics_file: PathBuf) -> Self {
        Self {
            seed: o.seed,
            augment: o.augment,
            metrics_file,
            auc: o.auc(),
            final_return: o.final_return(),
            final_symmetry_gap: o.final_symmetry_gap,
            final_q_gap: o.final_q_gap,
            episodes: o.episodes.len(),
            env_steps: o.env_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedResult {
    pub seed: u64,
    pub normal: RunSummary,
    pub augmented: RunSummary,
    pub augmented_wins: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub median_auc: f64,
    pub median_final_return: f64,
    pub median_symmetry_gap: f64,
    /// `(learner_step, median episode_return across seeds)` per metrics record.
    pub median_curve: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub pairs: Vec<PairedResult>,
    pub normal: ConditionSummary,
    pub augmented: ConditionSummary,
    pub augmented_wins: usize,
}

impl ExperimentSummary {
    pub fn auc_not_worse(&self) -> bool {
        self.augmented.median_auc >= self.normal.median_auc
    }

    pub fn symmetry_gap_not_worse(&self) -> bool {
        self.augmented.median_symmetry_gap <= self.normal.median_symmetry_gap
    }
}

/// Median with the mean of the two middle values for even counts; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn condition_summary(runs: &[&RunOutcome]) -> ConditionSummary {
    let pick = |f: &dyn Fn(&RunOutcome) -> f64| median(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
    let n_records = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
    let median_curve = (0..n_records)
        .map(|k| {
            let step = runs[0].records[k].learner_step;
            let values: Vec<f64> = runs.iter().map(|r| r.records[k].episode_return).collect();
            (step, median(&values))
        })
        .collect();
    ConditionSummary {
        median_auc: pick(&|r| r.auc()),
        median_final_return: pick(&|r| r.final_return()),
        median_symmetry_gap: pick(&|r| r.final_symmetry_gap),
        median_curve,
    }
}

/// Builds the paired summary. `outcomes` holds `(normal, augmented)` per seed.
pub fn summarize(cfg: &ExperimentConfig, outcomes: &[(RunOutcome, RunOutcome)], out_dir: &Path) -> ExperimentSummary {
    let pairs: Vec<PairedResult> = outcomes
        .iter()
        .map(|(n, a)| {
            let normal = RunSummary::new(n, out_dir.join(metrics_file_name(n.seed, false)));
            let augmented = RunSummary::new(a, out_dir.join(metrics_file_name(a.seed, true)));
            PairedResult {
                seed: n.seed,
                augmented_wins: augmented.final_return > normal.final_return,
                normal,
                augmented,
            }
        })
        .collect();
    let normal: Vec<&RunOutcome> = outcomes.iter().map(|(n, _)| n).collect();
    let augmented: Vec<&RunOutcome> = outcomes.iter().map(|(_, a)| a).collect();
    ExperimentSummary {
        config_digest: cfg.digest(),
        config: cfg.clone(),
        augmented_wins: pairs.iter().filter(|p| p.augmented_wins).count(),
        pairs,
        normal: condition_summary(&normal),
        augmented: condition_summary(&augmented),
    }
}

pub fn metrics_file_name(seed: u64, augment: bool) -> String {
    let condition = if augment { "augmented" } else { "normal" };
    format!("seed{seed}-{condition}.jsonl")
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Fails early when the output directory cannot be created or written.
pub fn ensure_writable_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .and_then(|_| {
            let probe = dir.join(".write-probe");
            std::fs::write(&probe, b"")?;
            std::fs::remove_file(&probe)
        })
        .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", dir.display())))
}

/// Runs both conditions for every seed in `cfg.seeds`, writing one metrics file per run and a
/// `summary.json` into `cfg.out`. Runs are independent, so the thread count does not change
/// any output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    ensure_writable_dir(&cfg.out)?;
    let jobs: Vec<(u64, bool)> = cfg.seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let threads = match cfg.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());

    let results: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(seed, augment)) = jobs.get(k) else { break };
        let path = cfg.out.join(metrics_file_name(seed, augment));
        let out = train_to_file(cfg, seed, augment, &path).map(|(o, _)| o);
        results.lock().expect("no worker panicked")[k] = Some(out);
    };
    if threads <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }

    let mut outcomes = Vec::with_capacity(jobs.len());
    for r in results.into_inner().expect("no worker panicked") {
        outcomes.push(r.expect("every job ran")?);
    }
    let mut it = outcomes.into_iter();
    let mut paired = Vec::new();
    while let (Some(n), Some(a)) = (it.next(), it.next()) {
        paired.push((n, a));
    }
    let summary = summarize(cfg, &paired, &cfg.out);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(cfg.out.join(SUMMARY_FILE), text + "\n")?;
    Ok(summary)
}
