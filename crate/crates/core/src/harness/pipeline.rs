use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::collect::{collect_depth_data, collect_policy_collision_data, collect_straight_collision_data, selection_score};
use super::config::{digest, Config};
use super::emit::line_plot_svg;
use crate::collision_net::{train_collision_selected, validate_collision, CollisionDataset, CollisionNet, CollisionReport};
use crate::depth_net::{train_depth, validate_depth, DepthMetrics, DepthNet, DepthTrainingLog};
use crate::error::Result;
use crate::observe::{DepthSource, Observer};
use crate::perception::DepthDataset;
use crate::policy_net::{train_dqn_selected, CourseEnv, PolicyTrainingLog, QNetwork};
use crate::world::CourseConfig;

/// Where artifacts go and whether cached ones may be reused.
pub struct Pipeline<'a> {
    pub config: &'a Config,
    pub out: PathBuf,
    /// Rebuild even when a matching artifact exists.
    pub force: bool,
    pub progress: &'a (dyn Fn(&str) + Sync),
}

fn key_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".key");
    PathBuf::from(s)
}

fn key_matches(artifact: &Path, key: &str) -> bool {
    artifact.exists() && fs::read_to_string(key_path(artifact)).is_ok_and(|k| k.trim() == key)
}

fn write_key(artifact: &Path, key: &str) -> Result<()> {
    fs::write(key_path(artifact), key)?;
    Ok(())
}

/// Training log stored next to a cached checkpoint, if readable.
fn saved_log<T: serde::de::DeserializeOwned>(ckpt: &Path) -> Option<T> {
    let dir = ckpt.parent()?;
    serde_json::from_slice(&fs::read(dir.join("training.json")).ok()?).ok()
}

fn parent(path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionSummary {
    pub frames: usize,
    pub positives: usize,
    pub validation: CollisionReport,
    #[serde(default)]
    pub selected_step: Option<usize>,
}

impl Pipeline<'_> {
    fn path(&self, rel: &Path) -> PathBuf {
        self.out.join(rel)
    }

    fn reuse(&self, artifact: &Path, key: &str) -> bool {
        let hit = !self.force && key_matches(artifact, key);
        if hit {
            (self.progress)(&format!("reusing {}", artifact.display()));
        }
        hit
    }

    pub fn depth_data_key(&self) -> String {
        let c = self.config;
        digest(&("depth-data", &c.course, &c.observation.perception, c.depth.pairs, c.depth.data_seed, c.depth.poses_per_course))
    }

    pub fn depth_net_key(&self) -> String {
        digest(&("depth-net", self.depth_data_key(), &self.config.depth.net, &self.config.depth.schedule))
    }

    pub fn policy_key(&self) -> String {
        let c = self.config;
        let depth = (c.observation.depth_source == DepthSource::Network).then(|| self.depth_net_key());
        digest(&("policy", &c.course, &c.dynamics, &c.observation, &c.policy, depth))
    }

    pub fn collision_data_key(&self, straight: bool) -> String {
        let c = self.config;
        let upstream = if straight { None } else { Some(self.policy_key()) };
        let count = if straight { c.collision.straight_episodes } else { c.collision.episodes };
        digest(&(
            "collision-data",
            straight,
            upstream,
            &c.course,
            &c.dynamics,
            &c.observation,
            count,
            c.collision.data_seed,
            c.collision.net.horizon,
            c.contingency.boundary_margin,
        ))
    }

    pub fn collision_net_key(&self, straight: bool) -> String {
        let c = &self.config.collision;
        digest(&("collision-net", self.collision_data_key(straight), &c.net, &c.schedule, c.init_seed, c.validation_batches))
    }

    pub fn depth_data(&self) -> Result<DepthDataset> {
        let dir = self.path(&self.config.paths.depth_data);
        let key = self.depth_data_key();
        if self.reuse(&dir, &key) {
            return DepthDataset::load(&dir);
        }
        (self.progress)(&format!("rendering {} depth pairs", self.config.depth.pairs));
        let ds = collect_depth_data(self.config)?;
        ds.save(&dir)?;
        write_key(&dir, &key)?;
        Ok(ds)
    }

    pub fn depth_net(&self) -> Result<(DepthNet, Option<DepthTrainingLog>)> {
        let ckpt = self.path(&self.config.paths.depth_checkpoint);
        let key = self.depth_net_key();
        if self.reuse(&ckpt, &key) {
            return Ok((DepthNet::load(self.config.depth.net.clone(), &ckpt)?, saved_log(&ckpt)));
        }
        let data = self.depth_data()?;
        let mut net = DepthNet::new(self.config.depth.net.clone(), self.config.depth.schedule.seed)?;
        let log = train_depth(&data, &mut net, &self.config.depth.schedule, |e| {
            (self.progress)(&format!("depth epoch {}: train {:.5} val {:.5}", e.epoch, e.train_huber, e.val_huber));
        })?;
        parent(&ckpt)?;
        net.params.save(&ckpt)?;
        let dir = ckpt.parent().unwrap_or(Path::new("."));
        log.write_csv(&dir.join("training.csv"))?;
        let train: Vec<(f64, f64)> = log.epochs.iter().map(|e| (e.epoch as f64, e.train_huber)).collect();
        let val: Vec<(f64, f64)> = log.epochs.iter().map(|e| (e.epoch as f64, e.val_huber)).collect();
        fs::write(dir.join("training.svg"), line_plot_svg("Depth network Huber loss", "epoch", &[("train", train), ("validation", val)]))?;
        fs::write(dir.join("training.json"), serde_json::to_string_pretty(&log)?)?;
        write_key(&ckpt, &key)?;
        Ok((net, Some(log)))
    }

    pub fn depth_validation(&self, net: &DepthNet) -> Result<DepthMetrics> {
        let data = self.depth_data()?;
        let (_, val) = data.split_indices();
        validate_depth(net, &data, &val)
    }

    fn observer(&self) -> Result<Observer> {
        let depth = match self.config.observation.depth_source {
            DepthSource::Network => Some(Arc::new(self.depth_net()?.0)),
            _ => None,
        };
        Observer::new(self.config.observation.clone(), depth)
    }

    pub fn policy(&self) -> Result<(QNetwork, Option<PolicyTrainingLog>)> {
        let c = self.config;
        let ckpt = self.path(&c.paths.policy_checkpoint);
        let key = self.policy_key();
        if self.reuse(&ckpt, &key) {
            return Ok((QNetwork::load(c.policy.net.clone(), &ckpt)?, saved_log(&ckpt)));
        }
        let course = CourseConfig { seed: c.policy.course_seed, ..c.course.clone() };
        let observer = self.observer()?;
        let mut env = CourseEnv::new(course, c.dynamics.clone(), observer.clone(), c.policy.dqn.lambda, c.policy.noise_seed);
        let mut net = QNetwork::new(c.policy.net.clone(), c.policy.init_seed)?;
        (self.progress)(&format!("training policy for {} steps", c.policy.dqn.total_steps));
        let mut completed = 0usize;
        let log = train_dqn_selected(
            &mut env,
            &mut net,
            &c.policy.dqn,
            |row| {
                completed += (row.outcome == crate::world::Outcome::Completed) as usize;
                if (row.episode + 1) % 100 == 0 {
                    (self.progress)(&format!("policy episode {}: {} completed so far", row.episode + 1, completed));
                }
            },
            |q| {
                let s = selection_score(c, &observer, q)?;
                (self.progress)(&format!("policy selection score {s:.3}"));
                Ok(s)
            },
        )?;
        if let Some(at) = log.selected_step {
            (self.progress)(&format!("kept policy parameters from step {at}"));
        }
        parent(&ckpt)?;
        net.params.save(&ckpt)?;
        let dir = ckpt.parent().unwrap_or(Path::new("."));
        log.write_csv(&dir.join("training.csv"))?;
        let window = 50;
        let smoothed: Vec<(f64, f64)> = log
            .episodes
            .windows(window)
            .map(|w| (w[window - 1].episode as f64, w.iter().map(|e| e.episode_return).sum::<f64>() / window as f64))
            .collect();
        fs::write(dir.join("training.svg"), line_plot_svg("Policy return (50-episode mean)", "episode", &[("return", smoothed)]))?;
        let sel: Vec<(f64, f64)> = log.selection.iter().map(|r| (r.step as f64, r.score)).collect();
        fs::write(dir.join("selection.svg"), line_plot_svg("Held-out selection score", "step", &[("score", sel)]))?;
        fs::write(dir.join("training.json"), serde_json::to_string_pretty(&log)?)?;
        write_key(&ckpt, &key)?;
        Ok((net, Some(log)))
    }

    fn collision_paths(&self, straight: bool) -> (PathBuf, PathBuf) {
        let p = &self.config.paths;
        if straight {
            (self.path(&p.straight_collision_data), self.path(&p.straight_collision_checkpoint))
        } else {
            (self.path(&p.collision_data), self.path(&p.collision_checkpoint))
        }
    }

    pub fn collision_data(&self, straight: bool) -> Result<CollisionDataset> {
        let (dir, _) = self.collision_paths(straight);
        let key = self.collision_data_key(straight);
        if self.reuse(&dir, &key) {
            return CollisionDataset::load(&dir);
        }
        let ds = if straight {
            (self.progress)("logging straight-line flights");
            collect_straight_collision_data(self.config)?
        } else {
            let (policy, _) = self.policy()?;
            (self.progress)("logging policy rollouts");
            collect_policy_collision_data(self.config, &policy)?
        };
        ds.save(&dir)?;
        write_key(&dir, &key)?;
        Ok(ds)
    }

    pub fn collision_net(&self, straight: bool) -> Result<(CollisionNet, CollisionSummary)> {
        let c = &self.config.collision;
        let (_, ckpt) = self.collision_paths(straight);
        let key = self.collision_net_key(straight);
        let summary_path = ckpt.with_extension("validation.json");
        if self.reuse(&ckpt, &key) && summary_path.exists() {
            let summary: CollisionSummary = serde_json::from_slice(&fs::read(&summary_path)?)?;
            return Ok((CollisionNet::load(c.net.clone(), &ckpt)?, summary));
        }
        let data = self.collision_data(straight)?;
        let (train, val) = data.split_indices();
        let (fit, holdout) = data.holdout_split(&train);
        let mut net = CollisionNet::new(c.net.clone(), c.init_seed)?;
        (self.progress)(&format!("training collision network on {} frames ({} positive)", data.samples.len(), data.positives()));
        let log = train_collision_selected(&data.samples, &fit, &holdout, &mut net, &c.schedule)?;
        let validation = validate_collision(&net, &data.samples, &val, c.validation_batches, c.schedule.batch_size, c.schedule.seed ^ 1)?;
        let summary = CollisionSummary { frames: data.samples.len(), positives: data.positives(), validation, selected_step: log.selected_step };
        parent(&ckpt)?;
        net.params.save(&ckpt)?;
        let dir = ckpt.parent().unwrap_or(Path::new("."));
        let mut csv = String::from("step,train_loss\n");
        for r in &log.rows {
            csv.push_str(&format!("{},{}\n", r.step, r.train_loss));
        }
        fs::write(dir.join("training.csv"), csv)?;
        let pts: Vec<(f64, f64)> = log.rows.iter().map(|r| (r.step as f64, r.train_loss)).collect();
        let held: Vec<(f64, f64)> = log.holdout.iter().map(|r| (r.step as f64, r.cross_entropy)).collect();
        fs::write(
            dir.join("training.svg"),
            line_plot_svg("Collision network cross-entropy", "step", &[("train", pts), ("holdout", held)]),
        )?;
        if let Some(at) = log.selected_step {
            (self.progress)(&format!("kept collision parameters from step {at}"));
        }
        fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
        write_key(&ckpt, &key)?;
        Ok((net, summary))
    }
}
