use serde::{Deserialize, Serialize};

use super::config::Config;
use super::episode::{run_episode, ControllerSpec, EpisodeOptions, Networks};
use crate::error::{Error, Result};
use crate::par;
use crate::record::{ActionSource, EpisodeRecord};
use crate::world::Outcome;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub controller: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: u32,
    pub engagements: usize,
    pub collision_source: Option<ActionSource>,
    pub final_x: f64,
    pub final_y: f64,
    pub record_hash: String,
}

impl EpisodeSummary {
    pub fn of(record: &EpisodeRecord) -> Result<Self> {
        let last = record.steps.last().map_or(record.initial, |s| s.state);
        Ok(Self {
            controller: record.controller.clone(),
            seed: record.seed,
            outcome: record.outcome,
            steps: record.step_count,
            engagements: record.engagements.len(),
            collision_source: record.collision_source(),
            final_x: last.position.x,
            final_y: last.position.y,
            record_hash: record.hash()?,
        })
    }
}

/// Outcome rates and completed-episode length for one controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub controller: ControllerSpec,
    pub episodes: usize,
    pub base_seed: u64,
    pub config_hash: String,
    pub collision_rate: f64,
    pub out_of_bounds_rate: f64,
    pub timeout_rate: f64,
    pub completion_rate: f64,
    /// Collisions during contingency control, per episode.
    pub contingency_collision_share: f64,
    /// Collisions under the learned or straight-line policy, per episode.
    pub policy_collision_share: f64,
    pub engagements: usize,
    pub engaged_episodes: usize,
    /// Contingency collisions per engagement.
    pub contingency_collision_rate_per_engagement: Option<f64>,
    /// Contingency collisions per episode with at least one engagement.
    pub contingency_collision_rate_per_engaged_episode: Option<f64>,
    pub completed: usize,
    pub mean_completed_length: Option<f64>,
    /// Sample standard deviation over √n.
    pub completed_length_standard_error: Option<f64>,
}

impl EvaluationReport {
    pub fn from_summaries(controller: ControllerSpec, base_seed: u64, config_hash: &str, eps: &[EpisodeSummary]) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::data("no episodes to aggregate"));
        }
        let n = eps.len() as f64;
        let rate = |o: Outcome| eps.iter().filter(|e| e.outcome == o).count() as f64 / n;
        let contingency = eps.iter().filter(|e| e.collision_source.is_some_and(|s| s.is_contingency())).count();
        let policy = eps.iter().filter(|e| e.collision_source.is_some_and(|s| !s.is_contingency())).count();
        let engagements: usize = eps.iter().map(|e| e.engagements).sum();
        let engaged = eps.iter().filter(|e| e.engagements > 0).count();
        let lengths: Vec<f64> = eps.iter().filter(|e| e.outcome == Outcome::Completed).map(|e| e.steps as f64).collect();
        let (mean, se) = mean_and_standard_error(&lengths);
        let per = |d: usize| (d > 0).then(|| contingency as f64 / d as f64);
        Ok(Self {
            controller,
            episodes: eps.len(),
            base_seed,
            config_hash: config_hash.to_string(),
            collision_rate: rate(Outcome::Collision),
            out_of_bounds_rate: rate(Outcome::OutOfBounds),
            timeout_rate: rate(Outcome::Timeout),
            completion_rate: rate(Outcome::Completed),
            contingency_collision_share: contingency as f64 / n,
            policy_collision_share: policy as f64 / n,
            engagements,
            engaged_episodes: engaged,
            contingency_collision_rate_per_engagement: per(engagements),
            contingency_collision_rate_per_engaged_episode: per(engaged),
            completed: lengths.len(),
            mean_completed_length: mean,
            completed_length_standard_error: se,
        })
    }

    /// Standard error of the completion-rate estimate.
    pub fn completion_standard_error(&self) -> f64 {
        let p = self.completion_rate;
        (p * (1.0 - p) / self.episodes as f64).sqrt()
    }
}

pub fn mean_and_standard_error(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// `a − b` exceeds `k` combined standard errors.
pub fn exceeds_by(a: f64, se_a: f64, b: f64, se_b: f64, k: f64) -> bool {
    a - b > k * se_a.hypot(se_b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Hybrid-expert beats rl-only beats expert-only on completion rate, and
/// rl-only is shorter than hybrid-expert is shorter than expert-only on mean
/// completed length; every gap at `k` combined standard errors.
pub fn directional_checks(reports: &[EvaluationReport], k: f64) -> Result<Vec<OrderingCheck>> {
    let get = |c: ControllerSpec| {
        reports.iter().find(|r| r.controller == c).ok_or_else(|| Error::data(format!("no report for {c}")))
    };
    let (h, r, e) = (get(ControllerSpec::HybridExpert)?, get(ControllerSpec::RlOnly)?, get(ControllerSpec::ExpertOnly)?);
    let completion = |a: &EvaluationReport, b: &EvaluationReport| {
        let passed = exceeds_by(a.completion_rate, a.completion_standard_error(), b.completion_rate, b.completion_standard_error(), k);
        OrderingCheck {
            name: format!("completion {} > {}", a.controller, b.controller),
            passed,
            detail: format!(
                "{:.3} ± {:.3} vs {:.3} ± {:.3}",
                a.completion_rate,
                a.completion_standard_error(),
                b.completion_rate,
                b.completion_standard_error()
            ),
        }
    };
    let length = |a: &EvaluationReport, b: &EvaluationReport| {
        let name = format!("length {} < {}", a.controller, b.controller);
        match (a.mean_completed_length, a.completed_length_standard_error, b.mean_completed_length, b.completed_length_standard_error) {
            (Some(ma), Some(sa), Some(mb), Some(sb)) => OrderingCheck {
                name,
                passed: exceeds_by(mb, sb, ma, sa, k),
                detail: format!("{ma:.1} ± {sa:.1} vs {mb:.1} ± {sb:.1}"),
            },
            _ => OrderingCheck { name, passed: false, detail: "too few completed episodes".into() },
        }
    };
    Ok(vec![completion(h, r), completion(r, e), length(r, h), length(h, e)])
}

pub struct Evaluation {
    pub report: EvaluationReport,
    pub episodes: Vec<EpisodeSummary>,
    /// Full records of the first `keep_records` episodes.
    pub records: Vec<EpisodeRecord>,
}

/// Episodes seeded `base_seed + i`, run in parallel and aggregated in order.
pub fn run_evaluation(spec: ControllerSpec, n: usize, base_seed: u64, config: &Config, nets: &Networks) -> Result<Evaluation> {
    run_evaluation_with(spec, n, base_seed, config, nets, EpisodeOptions::default())
}

pub fn run_evaluation_with(
    spec: ControllerSpec,
    n: usize,
    base_seed: u64,
    config: &Config,
    nets: &Networks,
    opts: EpisodeOptions,
) -> Result<Evaluation> {
    if n == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let keep = config.evaluation.keep_records;
    let results = par::with_workers(config.workers, || {
        par::map_indexed(n, |i| -> Result<(EpisodeSummary, Option<EpisodeRecord>)> {
            let record = run_episode(spec, base_seed + i as u64, config, nets, opts)?;
            Ok((EpisodeSummary::of(&record)?, (i < keep).then_some(record)))
        })
    });
    let mut episodes = Vec::with_capacity(n);
    let mut records = Vec::new();
    for r in results {
        let (s, rec) = r?;
        episodes.push(s);
        records.extend(rec);
    }
    let report = EvaluationReport::from_summaries(spec, base_seed, &config.hash(), &episodes)?;
    Ok(Evaluation { report, episodes, records })
}
