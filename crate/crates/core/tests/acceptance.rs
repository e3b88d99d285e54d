mod common;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{brute_force_labels, oracle_cost, path_is_safe, random_arena, square};
use hybrid_avoid::arbiter::ConstantGate;
use hybrid_avoid::collision_net::label_dataset;
use hybrid_avoid::contingency::{astar_plan, ContingencyConfig, PlanningArena};
use hybrid_avoid::depth_net::{huber_loss, image_metrics};
use hybrid_avoid::harness::collect::rollout;
use hybrid_avoid::harness::episode::episode_course;
use hybrid_avoid::harness::*;
use hybrid_avoid::observe::Observer;
use hybrid_avoid::perception::*;
use hybrid_avoid::record::EpisodeRecord;
use hybrid_avoid::seed;
use hybrid_avoid::world::{Action, Outcome, VehicleState, World};
use rand::Rng;

type Check = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Check) -> Check {
    let t = Instant::now();
    let (ok, detail) = f()?;
    let el = t.elapsed();
    match limit {
        Some(l) => Ok((ok && el <= l, format!("{detail}; {:.1} s (limit {} s)", el.as_secs_f64(), l.as_secs()))),
        None => Ok((ok, format!("{detail}; {:.1} s", el.as_secs_f64()))),
    }
}

fn pooling() -> Check {
    let mut rng = seed::rng(8101);
    for _ in 0..500 {
        let values: Vec<f64> = (0..144 * 256).map(|_| rng.random_range(0.0..100.0)).collect();
        let mut oracle = vec![f64::INFINITY; 144];
        for (k, &v) in values.iter().enumerate() {
            let b = (k / 256 / 16) * 16 + (k % 256) / 16;
            oracle[b] = oracle[b].min(v);
        }
        let m = DepthMap::new(144, 256, values, Resolution::Full, DepthUnits::Meters).map_err(err)?;
        if min_pool(&m).map_err(err)?.values != oracle {
            return Ok((false, "pooled map differs from block minima".into()));
        }
    }
    Ok((true, "500 maps equal".into()))
}

fn gradients() -> Check {
    let entries = gradcheck_suite(0).map_err(err)?;
    let detail = entries.iter().map(|e| format!("{} {:.1e}/{:.0e}", e.network, e.max_relative_error, e.tolerance)).collect::<Vec<_>>();
    Ok((entries.iter().all(|e| e.passed()), detail.join(", ")))
}

fn closed_forms() -> Check {
    let map = |v: f64| DepthMap::filled(9, 16, v, Resolution::Reduced, DepthUnits::Normalized);
    let zero = map(0.0);
    let h05 = huber_loss(&map(0.5), &zero, 1.0).map_err(err)?;
    let h2 = huber_loss(&map(2.0), &zero, 1.0).map_err(err)?;
    let target: Vec<f64> = (0..144).map(|k| -0.9 + 1.6 * k as f64 / 143.0).collect();
    let pred: Vec<f64> = target.iter().map(|t| t + 0.1).collect();
    let [mae, mse, _, _] = image_metrics(&pred, &target, 1.0);
    let ok = (h05 - 0.125).abs() < 1e-9 && (h2 - 1.5).abs() < 1e-9 && (mae - 0.1).abs() < 1e-9 && (mse - 0.01).abs() < 1e-9;
    Ok((ok, format!("huber {h05} / {h2}, mae {mae:.12}, mse {mse:.12}")))
}

fn labeling(config: &Config) -> Check {
    let observer = Observer::new(config.observation.clone(), None).map_err(err)?;
    let horizon = config.collision.net.horizon;
    let (mut collisions, mut frames_total) = (0, 0);
    for e in 0..200u64 {
        let s = seed::derive(4401, e);
        let course = episode_course(config, s);
        let obstacles = hybrid_avoid::world::generate_course(&course).map_err(err)?;
        let y = seed::rng(s).random_range(-5.5..=5.5);
        let mut world = World::with_obstacles(course, config.dynamics.clone(), obstacles, VehicleState::at(0.0, y, 0.0));
        let mut rng = seed::rng_for(s, "actions");
        let (frames, outcome, last) = rollout(&mut world, &observer, s, |_, _| {
            Ok(if rng.random_bool(0.8) { Action::Forward.index() } else { rng.random_range(0..4) })
        })
        .map_err(err)?;
        let mut collided = vec![false; last as usize + 1];
        if outcome == Outcome::Collision {
            collided[last as usize] = true;
            collisions += 1;
        }
        let got: Vec<bool> = label_dataset(&frames, (outcome == Outcome::Collision).then_some(last as usize), horizon)
            .iter()
            .map(|s| s.positive)
            .collect();
        if got != brute_force_labels(&collided, frames.len(), horizon) {
            return Ok((false, format!("episode {e} differs")));
        }
        frames_total += frames.len();
    }
    Ok((collisions > 0 && collisions < 200, format!("200 episodes, {frames_total} frames, {collisions} collisions")))
}

fn planner() -> Check {
    let cfg = ContingencyConfig::default();
    let mut rng = seed::rng(2025);
    let (mut found, mut blocked) = (0, 0);
    for k in 0..1000 {
        let arena = random_arena(&mut rng, &cfg);
        match (astar_plan(&arena), oracle_cost(&arena)) {
            (Some(p), Some(c)) if (p.cost() - c).abs() < 1e-9 && path_is_safe(&arena, &p) => found += 1,
            (None, None) => blocked += 1,
            (p, c) => return Ok((false, format!("arena {k}: planner {:?}, oracle {c:?}", p.map(|p| p.cost())))),
        }
    }
    let mut walls = 0;
    for k in 0..20 {
        let origin = Pose::new(5.0 * k as f64, rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5));
        let arena = PlanningArena::new(origin, vec![square(&origin, rng.random_range(1.5..4.0), 0.0, 30.0)], 6.0, &cfg);
        walls += astar_plan(&arena).is_none() as usize;
    }
    Ok((walls == 20, format!("{found} optimal safe paths, {blocked} agreed blocked, {walls}/20 walls NoPath")))
}

fn noise() -> Check {
    let sigma = PerceptionConfig::default().depth_noise_sigma;
    let m = DepthMap::filled(9, 16, 0.0, Resolution::Reduced, DepthUnits::Normalized);
    let (mut total, mut cells, mut k) = (0.0, 0usize, 0u64);
    while cells < 100_000 {
        let n = apply_depth_noise(&m, sigma, seed::derive(6601, k)).map_err(err)?;
        total += n.values.iter().map(|v| v.abs()).sum::<f64>();
        cells += n.values.len();
        k += 1;
    }
    let mae = total / cells as f64;
    Ok(((mae - 0.147).abs() <= 0.05 * 0.147, format!("mae {mae:.4} over {cells} cells")))
}

fn collision(pipe: &Pipeline) -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for straight in [false, true] {
        let (_, s) = pipe.collision_net(straight).map_err(err)?;
        ok &= s.frames >= 50_000 && s.validation.accuracy >= 0.90;
        parts.push(format!(
            "{}: accuracy {:.3} on {} frames ({} positive)",
            if straight { "straight-line gate" } else { "policy gate" },
            s.validation.accuracy,
            s.frames,
            s.positives
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn depth(pipe: &Pipeline) -> Check {
    let (net, log) = pipe.depth_net().map_err(err)?;
    let m = pipe.depth_validation(&net).map_err(err)?;
    let pairs = pipe.depth_data().map_err(err)?.len();
    let log = log.ok_or("depth training log missing")?;
    let first: Vec<f64> = log.epochs.iter().take(5).map(|e| e.val_huber).collect();
    let decreasing = first.len() == 5 && first.windows(2).all(|w| w[1] < w[0]);
    Ok((
        pairs >= 2000 && m.huber.mean <= 0.06 && decreasing,
        format!("{pairs} pairs, validation huber {:.4}, first epochs {first:.4?}", m.huber.mean),
    ))
}

struct Trained {
    nets: Networks,
}

fn train(pipe: &Pipeline) -> Result<Trained, String> {
    let (policy, _) = pipe.policy().map_err(err)?;
    let (coll, _) = pipe.collision_net(false).map_err(err)?;
    let (straight, _) = pipe.collision_net(true).map_err(err)?;
    Ok(Trained {
        nets: Networks {
            depth: None,
            policy: Some(Arc::new(policy)),
            collision: Some(Arc::new(coll)),
            straight_collision: Some(Arc::new(straight)),
        },
    })
}

fn directional(config: &Config, t: &Trained, out: &std::path::Path) -> Check {
    let n = 300;
    let base = config.evaluation.base_seed;
    let (mut reports, mut eps, mut recs) = (Vec::new(), Vec::new(), Vec::new());
    for spec in ControllerSpec::ALL {
        let ev = run_evaluation(spec, n, base, config, &t.nets).map_err(err)?;
        reports.push(ev.report);
        eps.push(ev.episodes);
        recs.push(ev.records);
    }
    aggregate_and_emit(&out.join("evaluation"), &reports, &eps, &recs).map_err(err)?;
    let checks = directional_checks(&reports, 2.0).map_err(err)?;
    let detail = checks.iter().map(|c| format!("{} [{}] {}", c.name, if c.passed { "ok" } else { "no" }, c.detail)).collect::<Vec<_>>();
    Ok((checks.iter().all(|c| c.passed), detail.join("; ")))
}

fn trajectory(r: &EpisodeRecord) -> Vec<(u32, Option<usize>, VehicleState)> {
    r.steps.iter().map(|s| (s.step, s.action, s.state)).collect()
}

fn degenerate(config: &Config, t: &Trained) -> Check {
    let open = Config { arbiter: hybrid_avoid::arbiter::ArbiterConfig { threshold: 1.0, ..config.arbiter.clone() }, ..config.clone() };
    for k in 0..20 {
        let s = seed::derive(9901, k);
        let rl = run_episode(ControllerSpec::RlOnly, s, &open, &t.nets, EpisodeOptions::default()).map_err(err)?;
        for spec in [ControllerSpec::HybridExpert, ControllerSpec::HybridAstar] {
            let h = run_episode(spec, s, &open, &t.nets, EpisodeOptions::default()).map_err(err)?;
            if trajectory(&h) != trajectory(&rl) || h.outcome != rl.outcome || !h.engagements.is_empty() {
                return Ok((false, format!("p* = 1 diverges from rl-only on seed {s}")));
            }
        }
    }
    let always = ConstantGate(1.0);
    let mut engagements = 0;
    for k in 0..10 {
        let s = seed::derive(9902, k);
        for spec in [ControllerSpec::HybridExpert, ControllerSpec::HybridAstar, ControllerSpec::ExpertOnly] {
            let opts = EpisodeOptions { gate: Some(&always), ..EpisodeOptions::default() };
            let r = run_episode(spec, s, config, &t.nets, opts).map_err(err)?;
            let mut at = 0;
            for e in &r.engagements {
                if e.step != at || e.duration == 0 {
                    return Ok((false, format!("{spec} seed {s}: gap before step {}", e.step)));
                }
                at += e.duration;
            }
            if at != r.step_count || r.steps.iter().any(|s| !s.source.is_contingency()) {
                return Ok((false, format!("{spec} seed {s}: a step escaped the contingency")));
            }
            engagements += r.engagements.len();
        }
    }
    Ok((true, format!("p* = 1 identical on 20 seeds x 2 hybrids; constant-1 gate: {engagements} back-to-back engagements")))
}

fn determinism(config: &Config, t: &Trained) -> Check {
    let run = |workers: usize| {
        let c = Config { workers, ..config.clone() };
        ControllerSpec::ALL
            .iter()
            .map(|&spec| run_evaluation(spec, 16, 777_000, &c, &t.nets).map(|e| (e.report, e.episodes)))
            .collect::<hybrid_avoid::Result<Vec<_>>>()
    };
    let one = run(1).map_err(err)?;
    let again = run(1).map_err(err)?;
    let four = run(4).map_err(err)?;
    let ok = one == again && one == four;
    let hashes: usize = one.iter().map(|(_, e)| e.len()).sum();
    Ok((ok, format!("{hashes} episode records identical across reruns and 1 vs 4 workers")))
}

fn main() {
    let out = std::env::var_os(OUTPUT_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"));
    let config = Config::default();
    let progress = |m: &str| eprintln!("  {m}");
    let pipe = Pipeline { config: &config, out: out.clone(), force: false, progress: &progress };
    let (mut failed, mut errored) = (0, 0);
    let mut report = |id: u32, name: &str, r: Check| {
        errored += r.is_err() as u32;
        let (ok, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += !ok as u32;
        println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };
    report(1, "pooling oracle", timed(Some(Duration::from_secs(10)), pooling));
    report(2, "gradient correctness", timed(Some(Duration::from_secs(120)), gradients));
    report(3, "loss and metric closed forms", closed_forms());
    report(4, "labeling oracle", timed(None, || labeling(&config)));
    report(5, "planner optimality and safety", timed(Some(Duration::from_secs(60)), planner));
    report(6, "noise calibration", noise());
    report(7, "collision-net learnability", timed(None, || collision(&pipe)));
    report(8, "depth-net learnability", timed(None, || depth(&pipe)));
    match train(&pipe) {
        Ok(t) => {
            report(9, "directional hybrid result", timed(Some(Duration::from_secs(3600)), || directional(&config, &t, &out)));
            report(10, "degenerate-gate identities", timed(None, || degenerate(&config, &t)));
            report(11, "determinism across worker counts", timed(None, || determinism(&config, &t)));
        }
        Err(e) => {
            for (id, name) in [(9, "directional hybrid result"), (10, "degenerate-gate identities"), (11, "determinism across worker counts")] {
                report(id, name, Err(e.clone()));
            }
        }
    }
    if failed == 0 {
        println!("all acceptance criteria passed");
        return;
    }
    println!("{failed} of 11 acceptance criteria failed ({errored} with errors)");
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict || errored > 0 {
        std::process::exit(1);
    }
}
