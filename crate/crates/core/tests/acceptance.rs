//! Acceptance run. Prints one `criterion N: PASS|FAIL` line per criterion and
//! exits non-zero when any fails. `NOMA_ACCEPTANCE_ONLY=1,4` limits the run.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use noma::archsearch::{
    knee_select, non_dominated_sort, run_search, EvalBudget, Evaluation, Genome, SearchConfig,
    TaskEvaluator,
};
use noma::field::{init_params, DensityActivation, FieldArch, FieldModel, ForwardCache, ParamVector};
use noma::geometry::{angle_diff, rot_x, rot_y, rot_z, ObjectState, Rigid, Vec3};
use noma::meshmetrics::{chamfer, completion_ratio, emd, sample_surface};
use noma::metalearn::{meta_train, MetaConfig};
use noma::objmap::{canonical_yaw, coarse_state, icp_refine, t_test_one_sample, wilcoxon_rank_sum};
use noma::priorgrid::{build_ray_cdf, inverse_transform_sample, sample_ray, DensityGrid};
use noma::render::{
    batch_loss, batch_loss_f64, composite, uniform_samples, LossWeights, ObjectRay, RayConfig,
    RayKind,
};
use noma::taskgen::{build_splits, Category, Task, TaskConfig};
use noma::train::{
    evaluate_on_task, extract_mesh, median, to_object_frame, train, MeshingConfig, SamplingMode,
    TrainConfig, TrainSetup,
};

type Verdict = (bool, String);

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        let n = dist(&v, &[0.0; 3]);
        if n > 1e-3 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
}

// ---------------------------------------------------------------- criterion 1

fn random_tiny_arch(rng: &mut ChaCha8Rng) -> FieldArch {
    FieldArch {
        hash_levels: rng.gen_range(1..=3),
        features_per_level: rng.gen_range(1..=2),
        log2_table_size: rng.gen_range(5..=7),
        base_resolution: rng.gen_range(2..=4),
        per_level_scale: rng.gen_range(1.2f32..2.0),
        hidden_width: rng.gen_range(4..=8),
        hidden_layers: rng.gen_range(1..=2),
        density_activation: if rng.gen_bool(0.5) {
            DensityActivation::ExpClamped
        } else {
            DensityActivation::Softplus
        },
    }
}

fn random_rays(rng: &mut ChaCha8Rng, size: [f64; 3]) -> Vec<ObjectRay> {
    (0..6)
        .map(|i| {
            let origin = unit_vector(rng).map(|c| 0.8 * c);
            let target: [f64; 3] = [0, 1, 2].map(|k| rng.gen_range(-0.4..0.4) * size[k]);
            let d = [0, 1, 2].map(|k| target[k] - origin[k]);
            let n = dist(&d, &[0.0; 3]);
            ObjectRay {
                origin,
                direction: d.map(|c| c / n),
                kind: if i < 4 {
                    RayKind::Object
                } else {
                    RayKind::Background
                },
                target_color: [rng.gen(), rng.gen(), rng.gen()],
                target_depth: (i % 2 == 0).then(|| rng.gen_range(0.6f32..1.0)),
            }
        })
        .collect()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let weights = LossWeights::default();
    let size = [0.3, 0.25, 0.2];
    let h = 1e-6;
    let (mut checked, mut bad, mut worst) = (0usize, 0usize, 0.0f64);
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
        let arch = random_tiny_arch(&mut rng);
        // generic parameters: at init the zero biases put every ReLU on its kink
        let mut params = init_params(&arch, k).unwrap();
        params.values.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        let rays = random_rays(&mut rng, size);
        let sets: Vec<_> = rays.iter().map(|r| uniform_samples(r, size, 8)).collect();
        let points: Vec<[f32; 3]> = sets.iter().flat_map(|s| s.positions.clone()).collect();
        let model = FieldModel::new(&arch).unwrap();
        let mut cache = ForwardCache::default();
        model.forward(&params.values, &points, &mut cache).unwrap();
        let loss_seed = 77 + k;
        let (_, up) = batch_loss(
            &rays,
            &sets,
            cache.outputs(),
            weights,
            &mut ChaCha8Rng::seed_from_u64(loss_seed),
        )
        .unwrap();
        let mut grad = vec![0f32; params.len()];
        model
            .backward(&params.values, &cache, &up.d_sigma, &up.d_rgb, &mut grad)
            .unwrap();
        let loss_at = |theta: &[f64]| {
            let out = model.forward_f64(theta, &points).unwrap();
            batch_loss_f64(&rays, &sets, &out, weights, &mut ChaCha8Rng::seed_from_u64(loss_seed))
                .unwrap()
                .0
                .total
        };
        let mut theta: Vec<f64> = params.values.iter().map(|&v| v as f64).collect();
        for j in 0..theta.len() {
            let keep = theta[j];
            theta[j] = keep + h;
            let up_l = loss_at(&theta);
            theta[j] = keep - h;
            let down_l = loss_at(&theta);
            theta[j] = keep;
            let num = (up_l - down_l) / (2.0 * h);
            let ana = grad[j] as f64;
            if num.abs() > 1e-6 || ana.abs() > 1e-6 {
                checked += 1;
                let rel = (ana - num).abs() / ana.abs().max(num.abs());
                worst = worst.max(rel);
                if rel >= 1e-3 {
                    bad += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        bad == 0 && checked > 0 && secs < 120.0,
        format!("{checked} gradient entries over 20 archs, {bad} off, worst rel {worst:.2e}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=64);
        let sigmas: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    10f64.powf(rng.gen_range(-3.0..3.0))
                }
            })
            .collect();
        let deltas: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-4..0.1)).collect();
        let depths: Vec<f64> = deltas
            .iter()
            .scan(0.0, |t, d| {
                *t += d;
                Some(*t)
            })
            .collect();
        let colors: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let c = if trial % 2 == 0 {
            composite(&sigmas, &colors, &deltas, &depths)
        } else {
            let s32: Vec<f32> = sigmas.iter().map(|&s| s as f32).collect();
            let c32: Vec<[f32; 3]> = colors.iter().map(|c| c.map(|v| v as f32)).collect();
            let out = composite(&s32, &c32, &deltas, &depths);
            // the oracle must see the same rounded densities
            let pass: f64 = s32
                .iter()
                .zip(&deltas)
                .map(|(&s, d)| 1.0 - (1.0 - (-(s as f64) * d).exp()))
                .product();
            worst = worst.max((out.term_probs.iter().sum::<f64>() - (1.0 - pass)).abs());
            continue;
        };
        let pass: f64 = sigmas
            .iter()
            .zip(&deltas)
            .map(|(s, d)| 1.0 - (1.0 - (-s * d).exp()))
            .product();
        worst = worst.max((c.term_probs.iter().sum::<f64>() - (1.0 - pass)).abs());
    }
    (worst <= 1e-6, format!("1000 inputs, max |error| {worst:.2e}"))
}

// ---------------------------------------------------------------- criterion 3

fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    // pool adjacent bins until every group expects at least 5 draws
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (oi, ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= 5.0 {
            groups.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => groups.push((o, e)),
        }
    }
    if groups.len() < 2 {
        return 1.0;
    }
    let stat: f64 = groups.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((groups.len() - 1) as f64).unwrap().cdf(stat)
}

fn criterion_3() -> Verdict {
    let ray = ObjectRay {
        origin: [-0.9, -0.7, -0.5],
        direction: {
            let d = [0.9, 0.72, 0.48];
            let n = dist(&d, &[0.0; 3]);
            d.map(|c| c / n)
        },
        kind: RayKind::Object,
        target_color: [0.5; 3],
        target_depth: None,
    };
    let size = [1.0, 1.0, 1.0];
    let grids: Vec<(&str, DensityGrid)> = vec![
        ("ramp", DensityGrid::from_fn(16, |p| 4.0 * p[2] + 1.0).unwrap()),
        (
            "blob",
            DensityGrid::from_fn(32, |p| {
                let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2);
                30.0 * (-r2 / 0.02).exp()
            })
            .unwrap(),
        ),
        (
            "slabs",
            DensityGrid::from_fn(32, |p| {
                if (0.2..0.3).contains(&p[0]) || (0.7..0.8).contains(&p[0]) {
                    8.0
                } else {
                    0.05
                }
            })
            .unwrap(),
        ),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    let draws = 100_000usize;
    for (gi, (name, grid)) in grids.iter().enumerate() {
        let set = uniform_samples(&ray, size, 32);
        let cdf = build_ray_cdf(grid, &set, 1e-4);
        if cdf.escaped {
            ok = false;
            details.push(format!("{name} escaped"));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(30 + gi as u64);
        let step = set.deltas[0];
        let mut counts = vec![0f64; set.len()];
        for _ in 0..draws / 1000 {
            let out = inverse_transform_sample(&set, &cdf.cdf, 1000, &mut rng);
            for d in &out.depths {
                let bin = (((d - set.t_near) / step) as usize).min(set.len() - 1);
                counts[bin] += 1.0;
            }
        }
        let total: f64 = cdf.term_probs.iter().sum();
        let expected: Vec<f64> = cdf
            .term_probs
            .iter()
            .map(|w| draws as f64 * w / total)
            .collect();
        let p = chi_square_p(&counts, &expected);
        ok &= p > 0.01;
        details.push(format!("{name} p={p:.3}"));
    }
    let zero = DensityGrid::constant(16, 0.0).unwrap();
    let set = uniform_samples(&ray, size, 32);
    let escaped = build_ray_cdf(&zero, &set, 1e-4).escaped;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fallback = sample_ray(&zero, &ray, size, 32, 24, 1e-4, &mut rng);
    let uniform = uniform_samples(&ray, size, 24);
    let exact = fallback == uniform;
    ok &= escaped && exact;
    details.push(format!("zero grid escaped={escaped} uniform fallback exact={exact}"));
    (ok, format!("{draws} draws per grid; {}", details.join(", ")))
}

// ---------------------------------------------------------------- criterion 4

fn oracle_dominates(a: &Evaluation, b: &Evaluation) -> bool {
    let le = a.time_per_iter <= b.time_per_iter && a.cd <= b.cd;
    let lt = a.time_per_iter < b.time_per_iter || a.cd < b.cd;
    le && lt
}

fn oracle_fronts(points: &[Evaluation]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| oracle_dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn oracle_wilcoxon(a: &[f64], b: &[f64]) -> f64 {
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let total = all.len();
    // doubled midranks keep everything integral
    let rank2: Vec<i64> = all
        .iter()
        .map(|v| {
            let below = all.iter().filter(|w| *w < v).count() as i64;
            let equal = all.iter().filter(|w| *w == v).count() as i64;
            2 * below + equal + 1
        })
        .collect();
    let n = a.len();
    let mean2 = n as i64 * (total as i64 + 1);
    let w2: i64 = rank2[..n].iter().sum();
    let dev = (w2 - mean2).abs();
    let (mut hit, mut count) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let s: i64 = (0..total).filter(|i| mask >> i & 1 == 1).map(|i| rank2[i]).sum();
        count += 1;
        if (s - mean2).abs() >= dev {
            hit += 1;
        }
    }
    hit as f64 / count as f64
}

fn oracle_t_two_sided(t: f64, dof: f64) -> f64 {
    let log_c = ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * PI).ln();
    let pdf = |x: f64| (log_c - 0.5 * (dof + 1.0) * (1.0 + x * x / dof).ln()).exp();
    let upper = t.abs();
    let steps = 200_000;
    let h = upper / steps as f64;
    let mut acc = pdf(0.0) + pdf(upper);
    for i in 1..steps {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    1.0 - 2.0 * acc * h / 3.0
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut parts = Vec::new();
    let mut ok = true;

    let mut sort_bad = 0;
    for _ in 0..300 {
        let n = rng.gen_range(1..=30);
        let pts: Vec<Evaluation> = (0..n)
            .map(|_| Evaluation {
                time_per_iter: rng.gen_range(0..6) as f64,
                cd: rng.gen_range(0..6) as f64,
            })
            .collect();
        let mut got = non_dominated_sort(&pts);
        for f in &mut got {
            f.sort_unstable();
        }
        if got != oracle_fronts(&pts) {
            sort_bad += 1;
        }
    }
    ok &= sort_bad == 0;
    parts.push(format!("sort {sort_bad}/300 mismatched"));

    let mut cd_err = 0.0f64;
    for _ in 0..20 {
        let a = random_cloud(&mut rng, 200);
        let b = random_cloud(&mut rng, 200);
        let nn = |p: &[f64; 3], c: &[[f64; 3]]| c.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min);
        let ab = a.iter().map(|p| nn(p, &b)).sum::<f64>() / 200.0;
        let ba = b.iter().map(|p| nn(p, &a)).sum::<f64>() / 200.0;
        cd_err = cd_err.max((chamfer(&a, &b).unwrap() - 0.5 * (ab + ba)).abs());
        for tau in [0.02, 0.05, 0.1] {
            let cr = b.iter().filter(|p| nn(p, &a) <= tau).count() as f64 / 200.0;
            cd_err = cd_err.max((completion_ratio(&b, &a, tau).unwrap() - cr).abs());
        }
    }
    ok &= cd_err <= 1e-6;
    parts.push(format!("chamfer/cr max err {cd_err:.1e}"));

    let mut emd_err = 0.0f64;
    for trial in 0..60 {
        let n = 1 + trial % 6;
        let a = random_cloud(&mut rng, n);
        let b = random_cloud(&mut rng, n);
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| dist(&a[i], &b[j])).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / n as f64;
        emd_err = emd_err.max((emd(&a, &b, n, trial as u64).unwrap() - best).abs());
    }
    ok &= emd_err <= 1e-12;
    parts.push(format!("emd max err {emd_err:.1e}"));

    let mut w_err = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=16 - n);
        let tied = rng.gen_bool(0.5);
        let mut draw = |k: usize| -> Vec<f64> {
            (0..k)
                .map(|_| {
                    if tied {
                        rng.gen_range(0..5) as f64
                    } else {
                        rng.gen::<f64>()
                    }
                })
                .collect()
        };
        let a = draw(n);
        let b = draw(m);
        let got = wilcoxon_rank_sum(&a, &b).unwrap();
        w_err = w_err.max((got - oracle_wilcoxon(&a, &b)).abs());
    }
    ok &= w_err <= 1e-12;
    parts.push(format!("wilcoxon max err {w_err:.1e}"));

    let mut t_err = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=30);
        let shift = rng.gen_range(-1.5..1.5);
        let xs: Vec<f64> = (0..n).map(|_| shift + rng.gen_range(-1.0..1.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let t = mean / (var / n as f64).sqrt();
        let got = t_test_one_sample(&xs, 0.0).unwrap();
        t_err = t_err.max((got - oracle_t_two_sided(t, n as f64 - 1.0)).abs());
    }
    ok &= t_err <= 1e-6;
    parts.push(format!("t-test max err {t_err:.1e}"));

    (ok, parts.join(", "))
}

// ---------------------------------------------------------------- mug fixture

struct MugFixture {
    arch: FieldArch,
    train: Vec<Task>,
    test: Vec<Task>,
}

struct MetaRun {
    theta: ParamVector,
    /// Chamfer distance after 200 uniform iterations from the meta init, per test task.
    adapted_cd: Vec<f64>,
}

fn adapt_cfg() -> TrainConfig {
    TrainConfig {
        iters: 200,
        ..Default::default()
    }
}

fn criterion_6(fx: &MugFixture) -> (Verdict, MetaRun) {
    let start = Instant::now();
    let setups: Vec<TrainSetup> = fx
        .train
        .iter()
        .map(|t| TrainSetup::from_task(t, &RayConfig::default()).unwrap())
        .collect();
    let cfg = MetaConfig {
        steps: 300,
        inner_iters: 20,
        beta: 0.8,
        seed: 3,
        ..Default::default()
    };
    let theta = meta_train(&setups, &fx.arch, &cfg).unwrap();
    let random = init_params(&fx.arch, 99).unwrap();
    let mesh_cfg = MeshingConfig::default();
    let mut wins = 0;
    let mut adapted_cd = Vec::new();
    for (i, task) in fx.test.iter().enumerate() {
        let setup = TrainSetup::from_task(task, &RayConfig::default()).unwrap();
        let run = |init: &ParamVector| {
            let out = train(
                &fx.arch,
                init,
                &setup,
                &adapt_cfg(),
                None,
                &mut ChaCha8Rng::seed_from_u64(i as u64),
            )
            .unwrap();
            evaluate_on_task(&fx.arch, &out.params, task, &mesh_cfg, 0).unwrap()
        };
        let (meta_cd, rand_cd) = (run(&theta), run(&random));
        if meta_cd < rand_cd {
            wins += 1;
        }
        adapted_cd.push(meta_cd);
    }
    let secs = start.elapsed().as_secs_f64();
    (
        (
            wins >= 8 && secs < 900.0,
            format!(
                "meta init wins {wins}/{} at 200 iters, median cd {:.5}, {secs:.0}s",
                fx.test.len(),
                median(&adapted_cd)
            ),
        ),
        MetaRun { theta, adapted_cd },
    )
}

// ---------------------------------------------------------------- criterion 5

fn rotation_about_axis(axis_yaw: f64, axis_pitch: f64, angle: f64) -> Rigid {
    // carries +x onto the axis, rotates about it, carries back
    let q = rot_z(axis_yaw) * rot_y(axis_pitch);
    Rigid::new(q * rot_x(angle) * q.transpose(), Vec3::zeros())
}

fn criterion_5(fx: &MugFixture, meta: &MetaRun) -> Verdict {
    let (grid, mesh) = extract_mesh(&fx.arch, &meta.theta, &MeshingConfig::default()).unwrap();
    if mesh.is_empty() {
        return (false, "baked mug prior mesh is empty".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = [0.11, 0.085, 0.095];
    let mut within = 0;
    let mut errs = Vec::new();
    for trial in 0..50u64 {
        let psi = rng.gen_range(0.0..TAU);
        let size = base.map(|s| s * rng.gen_range(0.9..1.1));
        let state = ObjectState {
            position: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.5 * size[2]],
            yaw: psi,
            size,
        };
        let cloud: Vec<[f64; 3]> = sample_surface(&mesh, 2000, trial)
            .unwrap()
            .iter()
            .map(|u| state.denormalize(u))
            .collect();
        let pivot = coarse_state(&cloud).unwrap().position;
        let c = canonical_yaw(&cloud, pivot, &grid, 72).unwrap();
        let err = angle_diff(c.state().yaw, psi).abs().to_degrees();
        if err <= 5.0 {
            within += 1;
        }
        errs.push(err);
    }
    let yaw_ok = within >= 45;

    let metric = to_object_frame(&mesh, base);
    let (mut t_worst, mut r_worst) = (0.0f64, 0.0f64);
    for trial in 0..20u64 {
        let reference = sample_surface(&metric, 4000, 2 * trial).unwrap();
        let observed = sample_surface(&metric, 4000, 2 * trial + 1).unwrap();
        let angle = rng.gen_range(0.0..10f64.to_radians());
        let mut injected =
            rotation_about_axis(rng.gen_range(0.0..TAU), rng.gen_range(-PI / 2.0..PI / 2.0), angle);
        let dir = unit_vector(&mut rng);
        let len = rng.gen_range(0.0..0.02);
        injected.translation = Vec3::new(dir[0] * len, dir[1] * len, dir[2] * len);
        let cloud: Vec<[f64; 3]> = observed
            .iter()
            .map(|p| {
                let q = injected.apply(&Vec3::from(*p));
                [q.x, q.y, q.z]
            })
            .collect();
        let res = icp_refine(&reference, &cloud, 100, 1e-14).unwrap();
        t_worst = t_worst.max((res.transform.translation - injected.translation).norm());
        r_worst = r_worst.max(res.transform.rotation_angle_to(&injected).to_degrees());
    }
    let icp_ok = t_worst <= 1e-3 && r_worst <= 0.5;
    errs.sort_by(f64::total_cmp);
    (
        yaw_ok && icp_ok,
        format!(
            "yaw within 5 deg on {within}/50 (median err {:.2} deg); ICP worst {:.2e} m, {:.3} deg over 20 injections",
            errs[errs.len() / 2],
            t_worst,
            r_worst
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(fx: &MugFixture, meta: &MetaRun) -> Verdict {
    let mesh_cfg = MeshingConfig::default();
    let cfg = TrainConfig {
        sampling: SamplingMode::Prior,
        ..adapt_cfg()
    };
    let (grid, _) = extract_mesh(&fx.arch, &meta.theta, &mesh_cfg).unwrap();
    let grid = Arc::new(grid);
    let prior_cd: Vec<f64> = fx
        .test
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let setup = TrainSetup::from_task(task, &RayConfig::default()).unwrap();
            let out = train(
                &fx.arch,
                &meta.theta,
                &setup,
                &cfg,
                Some(grid.clone()),
                &mut ChaCha8Rng::seed_from_u64(i as u64),
            )
            .unwrap();
            evaluate_on_task(&fx.arch, &out.params, task, &mesh_cfg, 0).unwrap()
        })
        .collect();
    let (mp, mu) = (median(&prior_cd), median(&meta.adapted_cd));
    (
        mp < mu,
        format!("median cd prior-guided {mp:.5} vs uniform {mu:.5} over {} tasks", prior_cd.len()),
    )
}

// ---------------------------------------------------------------- criterion 8

fn oracle_knee(front: &[Evaluation]) -> usize {
    let lo_t = front.iter().map(|e| e.time_per_iter).fold(f64::INFINITY, f64::min);
    let hi_t = front.iter().map(|e| e.time_per_iter).fold(f64::NEG_INFINITY, f64::max);
    let lo_c = front.iter().map(|e| e.cd).fold(f64::INFINITY, f64::min);
    let hi_c = front.iter().map(|e| e.cd).fold(f64::NEG_INFINITY, f64::max);
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let pts: Vec<(f64, f64)> = front
        .iter()
        .map(|e| ((e.time_per_iter - lo_t) / span(lo_t, hi_t), (e.cd - lo_c) / span(lo_c, hi_c)))
        .collect();
    let by = |f: &dyn Fn(&(f64, f64)) -> (f64, f64)| {
        (0..pts.len())
            .min_by(|&a, &b| f(&pts[a]).partial_cmp(&f(&pts[b])).unwrap())
            .unwrap()
    };
    let a = pts[by(&|p| (p.0, p.1))];
    let b = pts[by(&|p| (p.1, p.0))];
    let chord = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let d = |p: &(f64, f64)| {
        if chord == 0.0 {
            0.0
        } else {
            ((b.0 - a.0) * (a.1 - p.1) - (a.0 - p.0) * (b.1 - a.1)).abs() / chord
        }
    };
    let mut best = 0;
    for i in 1..pts.len() {
        let (di, db) = (d(&pts[i]), d(&pts[best]));
        if di > db || (di == db && front[i].cd < front[best].cd) {
            best = i;
        }
    }
    best
}

fn criterion_8(fx: &MugFixture) -> Verdict {
    let start = Instant::now();
    let evaluator =
        TaskEvaluator::new(&fx.train[..4], &fx.test[..2], EvalBudget::default(), 0).unwrap();
    let cfg = SearchConfig {
        population: 8,
        generations: 5,
        seed: 8,
        ..Default::default()
    };
    let res = run_search(&evaluator, &cfg).unwrap();
    let default = Genome::default_genome();
    let Some(base) = res
        .records
        .iter()
        .find(|r| r.generation == 0 && r.genome == default)
    else {
        return (false, "default genome was not evaluated".into());
    };
    let knee_params = res.knee.arch().param_count();
    let base_params = default.arch().param_count();
    let front: Vec<Evaluation> = res.front.iter().map(|f| f.1).collect();
    let oracle = oracle_knee(&front);
    let lib = knee_select(&front).unwrap();
    let knee_matches = lib == oracle && res.front[oracle].0 == res.knee;
    let smaller = knee_params < base_params;
    let close = res.knee_eval.cd <= 1.1 * base.eval.cd;
    (
        smaller && close && knee_matches,
        format!(
            "knee {knee_params} params cd {:.5} vs default {base_params} params cd {:.5}; front {} points, oracle knee agrees={knee_matches}; {:.0}s",
            res.knee_eval.cd,
            base.eval.cd,
            front.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

/// Chamfer distances of the last validated end-to-end run.
const PINNED_CD: &[(&str, f64)] = &[("ball_2", 0.00897), ("book_1", 0.00465), ("mug_0", 0.00728)];

fn noma(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_noma"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run noma: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`noma {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn collect_files(dir: &Path, ext: &str, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().flatten().map(|e| e.path()).collect();
    entries.sort();
    for p in entries {
        if p.extension().is_some_and(|e| e == ext) {
            out.insert(p.file_name().unwrap().into(), std::fs::read(&p).unwrap());
        }
    }
}

struct PipelineRun {
    cds: BTreeMap<String, f64>,
    artifacts: BTreeMap<PathBuf, Vec<u8>>,
}

fn pipeline(root: &Path) -> Result<PipelineRun, String> {
    let gen_cfg = root.join("gen.cfg");
    let prior_cfg = root.join("prior.cfg");
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(
        &gen_cfg,
        "categories = mug,book,ball\ntrain = 4\ntest = 2\nscene.categories = mug,book,ball\n",
    )
    .unwrap();
    std::fs::write(
        &prior_cfg,
        "search.population = 4\nsearch.generations = 1\nmeta.steps = 60\n",
    )
    .unwrap();
    let s = |p: PathBuf| p.to_str().unwrap().to_string();
    let (data, priors, meshes) = (s(root.join("data")), s(root.join("priors")), s(root.join("map")));
    let eval_csv = s(root.join("eval.csv"));
    noma(&["gen-tasks", "--out", &data, "--config", &s(gen_cfg), "--seed", "7"])?;
    for cat in ["mug", "book", "ball"] {
        noma(&[
            "train-prior", "--dataset", &data, "--category", cat, "--out", &priors, "--config",
            &s(prior_cfg.clone()),
        ])?;
    }
    let sequence = s(root.join("data").join("sequence"));
    noma(&["map", "--sequence", &sequence, "--priors", &priors, "--out", &meshes])?;
    let gt = s(root.join("data").join("sequence").join("gt"));
    let table = noma(&["eval", "--meshes", &meshes, "--gt", &gt, "--out", &eval_csv])?;
    let mut cds = BTreeMap::new();
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() > 1 && cols[0] != "mean" {
            let cd: f64 = cols[1].parse().map_err(|_| format!("bad eval line `{line}`"))?;
            cds.insert(cols[0].to_string(), cd);
        }
    }
    let mut artifacts = BTreeMap::new();
    collect_files(&root.join("priors"), "prior", &mut artifacts);
    collect_files(&root.join("map"), "obj", &mut artifacts);
    artifacts.insert("eval.csv".into(), std::fs::read(&eval_csv).unwrap());
    Ok(PipelineRun { cds, artifacts })
}

fn criterion_9() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let runs: Result<Vec<PipelineRun>, String> =
        ["a", "b"].iter().map(|n| pipeline(&dir.path().join(n))).collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let same = runs[0].artifacts == runs[1].artifacts;
    let cds = &runs[0].cds;
    let mut ok = same && cds.len() == 3;
    let mut parts = Vec::new();
    for (name, cd) in cds {
        match PINNED_CD.iter().find(|p| p.0 == name) {
            Some(&(_, pin)) => {
                let fine = *cd <= 1.05 * pin;
                ok &= fine;
                parts.push(format!("{name} {cd:.5} (pin {pin:.5})"));
            }
            None => {
                ok = false;
                parts.push(format!("{name} {cd:.5} (unpinned)"));
            }
        }
    }
    (
        ok,
        format!(
            "{} objects, rerun identical={same}, {} artifacts; {}; {:.0}s",
            cds.len(),
            runs[0].artifacts.len(),
            parts.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let start = Instant::now();
    let only: Option<Vec<usize>> = std::env::var("NOMA_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut failed = Vec::new();
    let mut report = |id: usize, (pass, detail): Verdict| {
        println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(id);
        }
    };
    if wanted(1) {
        report(1, criterion_1());
    }
    if wanted(2) {
        report(2, criterion_2());
    }
    if wanted(3) {
        report(3, criterion_3());
    }
    if wanted(4) {
        report(4, criterion_4());
    }
    if [5, 6, 7, 8].into_iter().any(wanted) {
        let (train_tasks, test_tasks) =
            build_splits(Category::Mug, 12, 10, 1, &TaskConfig::default()).unwrap();
        let fx = MugFixture {
            arch: FieldArch::desk_default(),
            train: train_tasks,
            test: test_tasks,
        };
        if [5, 6, 7].into_iter().any(wanted) {
            let (verdict, meta) = criterion_6(&fx);
            if wanted(5) {
                report(5, criterion_5(&fx, &meta));
            }
            if wanted(6) {
                report(6, verdict);
            }
            if wanted(7) {
                report(7, criterion_7(&fx, &meta));
            }
        }
        if wanted(8) {
            report(8, criterion_8(&fx));
        }
    }
    if wanted(9) {
        let (pass, detail) = criterion_9();
        let total = start.elapsed().as_secs_f64();
        report(9, (pass && total < 1800.0, format!("{detail}; acceptance total {total:.0}s")));
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
