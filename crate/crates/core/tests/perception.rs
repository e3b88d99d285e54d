use hybrid_avoid::perception::*;
use hybrid_avoid::seed;
use hybrid_avoid::world::{generate_course, CourseConfig, ObstacleBox};
use proptest::prelude::*;
use rand::Rng;

fn no_walls() -> PerceptionConfig {
    PerceptionConfig { walls: false, ..PerceptionConfig::default() }
}

fn pixel_ray(cam: &CameraModel, r: usize, c: usize) -> (f64, f64) {
    let f = (cam.width as f64 / 2.0) / (cam.hfov / 2.0).tan();
    ((c as f64 + 0.5 - cam.width as f64 / 2.0) / f, (r as f64 + 0.5 - cam.height as f64 / 2.0) / f)
}

/// Independent 3D raycaster: slab test against boxes (and walls as long
/// boxes) with z ∈ [0, top], ground plane at z = 0.
fn oracle_depth(pose: &Pose, obstacles: &[ObstacleBox], course: &CourseConfig, cfg: &PerceptionConfig, r: usize, c: usize) -> f64 {
    let cam = &cfg.camera;
    let (a, b) = pixel_ray(cam, r, c);
    let body = [1.0, -a, -b];
    let n = (body[0] * body[0] + body[1] * body[1] + body[2] * body[2]).sqrt();
    let (s, co) = pose.yaw.sin_cos();
    let d = [(co * body[0] - s * body[1]) / n, (s * body[0] + co * body[1]) / n, body[2] / n];
    let o = [pose.x, pose.y, course.obstacle_height / 2.0];

    let slab3 = |lo: [f64; 3], hi: [f64; 3], o: [f64; 3], d: [f64; 3]| -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k] < lo[k] || o[k] > hi[k] {
                    return None;
                }
            } else {
                let (ta, tb) = ((lo[k] - o[k]) / d[k], (hi[k] - o[k]) / d[k]);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        (t0 <= t1).then_some(t0)
    };

    let mut best = f64::INFINITY;
    let mut ground_best = true;
    if d[2] < 0.0 {
        best = -o[2] / d[2];
    }
    for bx in obstacles {
        // rotate ray into box frame
        let (bs, bc) = (-bx.yaw).sin_cos();
        let rel = [o[0] - bx.center_x, o[1] - bx.center_y];
        let lo_ = [bc * rel[0] - bs * rel[1], bs * rel[0] + bc * rel[1], o[2]];
        let ld = [bc * d[0] - bs * d[1], bs * d[0] + bc * d[1], d[2]];
        if let Some(t) = slab3([-bx.half_depth, -bx.half_width, 0.0], [bx.half_depth, bx.half_width, course.obstacle_height], lo_, ld) {
            if t < best {
                best = t;
                ground_best = false;
            }
        }
    }
    if cfg.walls {
        let wy = course.half_width + cfg.wall_margin;
        for (lo, hi) in [([-1e5, wy, 0.0], [1e5, 1e5, cfg.wall_height]), ([-1e5, -1e5, 0.0], [1e5, -wy, cfg.wall_height])] {
            if let Some(t) = slab3(lo, hi, o, d) {
                if t < best {
                    best = t;
                    ground_best = false;
                }
            }
        }
    }
    if ground_best && !cfg.ground_in_depth {
        return cam.far_clip;
    }
    best.min(cam.far_clip)
}

#[test]
fn empty_world_reads_far_clip() {
    let course = CourseConfig::default();
    let d = render_depth_full(&Pose::new(0.0, 0.0, 0.0), &[], &course, &no_walls()).unwrap();
    assert_eq!((d.rows, d.cols), (144, 256));
    assert!(d.values.iter().all(|&v| v == 100.0));
}

#[test]
fn wall_ahead_matches_ray_plane_intersection() {
    let course = CourseConfig { obstacle_height: 1000.0, ..CourseConfig::default() };
    let wall = ObstacleBox { center_x: 12.0, center_y: 0.0, half_width: 200.0, half_depth: 2.0, yaw: 0.0 };
    let cfg = no_walls();
    let d = render_depth_full(&Pose::new(0.0, 0.0, 0.0), &[wall], &course, &cfg).unwrap();
    for r in (0..144).step_by(7) {
        for c in (0..256).step_by(5) {
            let (a, b) = pixel_ray(&cfg.camera, r, c);
            // distance to plane x = 10 along a ray with direction (1, -a, -b)
            let want = 10.0 * (1.0 + a * a + b * b).sqrt();
            assert!((d.get(r, c) - want).abs() < 1e-9, "({r},{c})");
        }
    }
    // central pixels see the wall at almost exactly 10 m
    assert!((d.get(72, 128) - 10.0).abs() < 1e-3);
    // edge column: horizontal half-angle β gives 10/cos β
    let (a, _) = pixel_ray(&cfg.camera, 72, 255);
    let beta = a.atan();
    let horiz = 10.0 / beta.cos();
    assert!(d.get(71, 255) >= horiz && d.get(71, 255) - horiz < 0.01);
}

#[test]
fn obstacle_behind_camera_has_no_effect() {
    let course = CourseConfig::default();
    let behind = ObstacleBox { center_x: -5.0, center_y: 0.0, half_width: 1.0, half_depth: 2.25, yaw: 0.0 };
    let cfg = PerceptionConfig::default();
    let pose = Pose::new(0.0, 0.0, 0.0);
    assert_eq!(
        render_depth_full(&pose, &[behind], &course, &cfg).unwrap(),
        render_depth_full(&pose, &[], &course, &cfg).unwrap()
    );
}

fn random_scene(rng: &mut seed::Rng) -> (Pose, Vec<ObstacleBox>, CourseConfig) {
    let course = CourseConfig::with_seed(rng.random());
    let obstacles = generate_course(&course).unwrap();
    let pose = Pose::new(rng.random_range(0.0..95.0), rng.random_range(-5.5..5.5), rng.random_range(-1.2..1.2));
    (pose, obstacles, course)
}

#[test]
fn renderer_agrees_with_3d_raycast_oracle() {
    let mut rng = seed::rng(5);
    for k in 0..12 {
        let (pose, obstacles, course) = random_scene(&mut rng);
        let cfg = PerceptionConfig { ground_in_depth: k % 2 == 0, ..PerceptionConfig::default() };
        let d = render_depth_full(&pose, &obstacles, &course, &cfg).unwrap();
        for r in (0..144).step_by(3) {
            for c in (0..256).step_by(3) {
                let want = oracle_depth(&pose, &obstacles, &course, &cfg, r, c);
                assert!((d.get(r, c) - want).abs() < 1e-7, "scene {k} ({r},{c}): {} vs {want}", d.get(r, c));
            }
        }
    }
}

#[test]
fn ground_is_reported_only_when_enabled() {
    let course = CourseConfig::default();
    let pose = Pose::new(0.0, 0.0, 0.0);
    let on = PerceptionConfig { ground_in_depth: true, ..no_walls() };
    let d = render_depth_full(&pose, &[], &course, &on).unwrap();
    assert!(d.get(143, 128) < 2.0);
    assert_eq!(d.get(0, 128), 100.0);
    let off = render_depth_full(&pose, &[], &course, &no_walls()).unwrap();
    assert_eq!(off.get(143, 128), 100.0);
}

#[test]
fn min_pool_examples() {
    let c = DepthMap::filled(144, 256, 37.5, Resolution::Full, DepthUnits::Meters);
    let p = min_pool(&c).unwrap();
    assert_eq!((p.rows, p.cols, p.resolution), (9, 16, Resolution::Reduced));
    assert!(p.values.iter().all(|&v| v == 37.5));

    let mut m = DepthMap::filled(144, 256, 20.0, Resolution::Full, DepthUnits::Meters);
    m.set(16 * 3 + 5, 16 * 7 + 11, 3.0);
    let p = min_pool(&m).unwrap();
    for r in 0..9 {
        for c in 0..16 {
            assert_eq!(p.get(r, c), if (r, c) == (3, 7) { 3.0 } else { 20.0 });
        }
    }
    let bad = DepthMap::filled(20, 32, 1.0, Resolution::Full, DepthUnits::Meters);
    assert!(matches!(min_pool(&bad), Err(hybrid_avoid::Error::Config(_))));
}

fn brute_pool(m: &DepthMap) -> Vec<f64> {
    let mut out = Vec::new();
    for br in 0..m.rows / 16 {
        for bc in 0..m.cols / 16 {
            let mut best = f64::INFINITY;
            for r in br * 16..br * 16 + 16 {
                for c in bc * 16..bc * 16 + 16 {
                    if m.get(r, c) < best {
                        best = m.get(r, c);
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

#[test]
fn min_pool_matches_brute_force_on_random_maps() {
    let mut rng = seed::rng(8);
    for _ in 0..500 {
        let values = (0..144 * 256).map(|_| rng.random_range(0.0..100.0)).collect();
        let m = DepthMap::new(144, 256, values, Resolution::Full, DepthUnits::Meters).unwrap();
        assert_eq!(min_pool(&m).unwrap().values, brute_pool(&m));
    }
}

#[test]
fn normalization_endpoints_and_round_trip() {
    let m = DepthMap::new(1, 3, vec![0.0, 50.0, 100.0], Resolution::Reduced, DepthUnits::Meters).unwrap();
    let n = normalize(&m, 100.0).unwrap();
    assert_eq!(n.values, vec![-1.0, 0.0, 1.0]);
    let mut rng = seed::rng(9);
    for _ in 0..50 {
        let values = (0..144).map(|_| rng.random_range(0.0..=100.0)).collect();
        let m = DepthMap::new(9, 16, values, Resolution::Reduced, DepthUnits::Meters).unwrap();
        let back = denormalize(&normalize(&m, 100.0).unwrap(), 100.0).unwrap();
        for (a, b) in m.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let bad = DepthMap::new(1, 1, vec![100.5], Resolution::Reduced, DepthUnits::Meters).unwrap();
    assert!(matches!(normalize(&bad, 100.0), Err(hybrid_avoid::Error::Data(_))));
}

#[test]
fn noise_examples() {
    let m = DepthMap::new(9, 16, (0..144).map(|i| i as f64 / 143.0 * 2.0 - 1.0).collect(), Resolution::Reduced, DepthUnits::Normalized)
        .unwrap();
    assert_eq!(apply_depth_noise(&m, 0.0, 3).unwrap(), m);
    let noisy = apply_depth_noise(&m, 2.0, 3).unwrap();
    assert!(noisy.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(noisy, apply_depth_noise(&m, 2.0, 3).unwrap());
}

#[test]
fn calibrated_noise_matches_target_mae() {
    let sigma = calibrated_noise_sigma();
    assert!((sigma - 0.184).abs() < 1e-3);
    // interior values so the clamp never binds
    let m = DepthMap::filled(9, 16, 0.0, Resolution::Reduced, DepthUnits::Normalized);
    let mut total = 0.0;
    let mut cells = 0usize;
    let mut k = 0u64;
    while cells < 100_000 {
        let n = apply_depth_noise(&m, sigma, k).unwrap();
        total += n.values.iter().map(|v| v.abs()).sum::<f64>();
        cells += n.values.len();
        k += 1;
    }
    let mae = total / cells as f64;
    assert!((mae - 0.147).abs() < 0.05 * 0.147, "mae {mae}");
}

fn matches_color(px: [f32; 3], base: [f32; 3]) -> bool {
    let k = px[0] / base[0];
    k > 0.0 && (0..3).all(|i| (px[i] - base[i] * k).abs() < 0.02)
}

#[test]
fn rgb_empty_world_and_determinism() {
    let course = CourseConfig::default();
    let pose = Pose::new(0.0, 0.0, 0.0);
    let cfg = PerceptionConfig::default();
    let img = render_rgb(&pose, &[], &course, &cfg).unwrap();
    let sky = img.pixel(0, 128);
    let ground = img.pixel(143, 128);
    assert_ne!(sky, ground);
    for r in 0..144 {
        for c in 0..256 {
            let p = img.pixel(r, c);
            let known = [[0.55, 0.72, 0.92], [0.36, 0.34, 0.30], [0.62, 0.60, 0.58]];
            assert!(known.iter().any(|&b| matches_color(p, b)), "({r},{c}) {p:?}");
        }
    }
    assert_eq!(img, render_rgb(&pose, &[], &course, &cfg).unwrap());
}

#[test]
fn centered_obstacle_forms_contiguous_block_through_center_row() {
    let course = CourseConfig::default();
    let car = ObstacleBox { center_x: 10.0, center_y: 0.0, half_width: 1.0, half_depth: 2.25, yaw: 0.0 };
    let cfg = PerceptionConfig::default();
    let img = render_rgb(&Pose::new(0.0, 0.0, 0.0), &[car], &course, &cfg).unwrap();
    let color = obstacle_color(cfg.color_seed, 0);
    let hit = |r, c| matches_color(img.pixel(r, c), color);
    let rows: Vec<usize> = (0..144).filter(|&r| hit(r, 128)).collect();
    assert!(!rows.is_empty());
    assert_eq!(rows.len(), rows.last().unwrap() - rows[0] + 1);
    assert!(rows.contains(&71) && rows.contains(&72));
    let cols: Vec<usize> = (0..256).filter(|&c| hit(72, c)).collect();
    assert_eq!(cols.len(), cols.last().unwrap() - cols[0] + 1);
    assert!(cols.contains(&127) && cols.contains(&128));
    // projected half-width at the near face (7.75 m): 128·1/7.75 ≈ 16.5 px
    assert!((cols.len() as i64 - 33).abs() <= 1, "{}", cols.len());
}

#[test]
fn dataset_round_trip() {
    let course = CourseConfig::with_seed(3);
    let obstacles = generate_course(&course).unwrap();
    let cfg = PerceptionConfig::default();
    let mut ds = DepthDataset::new(144, 256, 9, 16, 100.0, 7);
    for k in 0..3 {
        let pose = Pose::new(k as f64 * 10.0, 0.0, 0.0);
        let img = render_rgb(&pose, &obstacles, &course, &cfg).unwrap();
        let d = observe_reduced(&pose, &obstacles, &course, &cfg).unwrap();
        ds.push(&img, &d).unwrap();
    }
    let dir = std::env::temp_dir().join(format!("hav-ds-{}", std::process::id()));
    ds.save(&dir).unwrap();
    let back = DepthDataset::load(&dir).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.index().count, 3);
    assert_eq!(back.network_input(1), back.image(1).to_network_input());
    std::fs::remove_dir_all(&dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn removing_an_obstacle_never_decreases_depth(s in any::<u64>(), drop in 0usize..6) {
        let mut rng = seed::rng(s);
        let (pose, obstacles, course) = random_scene(&mut rng);
        let cfg = PerceptionConfig::default();
        let full = render_depth_full(&pose, &obstacles, &course, &cfg).unwrap();
        let mut fewer = obstacles.clone();
        fewer.remove(drop);
        let less = render_depth_full(&pose, &fewer, &course, &cfg).unwrap();
        prop_assert!(full.values.iter().zip(&less.values).all(|(a, b)| b >= a));
    }

    #[test]
    fn pooled_cells_lower_bound_their_pixels(s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let (pose, obstacles, course) = random_scene(&mut rng);
        let full = render_depth_full(&pose, &obstacles, &course, &PerceptionConfig::default()).unwrap();
        let pooled = min_pool(&full).unwrap();
        for r in 0..144 {
            for c in 0..256 {
                prop_assert!(pooled.get(r / 16, c / 16) <= full.get(r, c));
            }
        }
        prop_assert_eq!(&pooled, &min_pool(&full).unwrap());
    }
}
