//! Reptile meta-learning of initial field parameters over a task family.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::{init_params, FieldArch, ParamVector};
use crate::train::{train, TrainConfig, TrainSetup};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Meta-steps `N`.
    pub steps: usize,
    /// Inner iterations `q`.
    pub inner_iters: usize,
    /// Inner learning rate.
    pub eta: f32,
    /// Meta step size.
    pub beta: f32,
    pub seed: u64,
    /// Inner-loop settings; its `iters` and `lr` are replaced by `inner_iters` and `eta`.
    pub inner: TrainConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            inner_iters: 40,
            eta: 1e-2,
            beta: 0.1,
            seed: 0,
            inner: TrainConfig::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_iters == 0 {
            return Err(Error::InvalidArgument(
                "inner iterations must be >= 1".into(),
            ));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidArgument(
                "inner learning rate must be positive".into(),
            ));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidArgument(
                "meta step size must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// `q` Adam steps from `theta` on one task with a fresh optimizer; `theta` is untouched.
pub fn inner_adapt(
    theta: &ParamVector,
    arch: &FieldArch,
    task: &TrainSetup,
    q: usize,
    eta: f32,
    template: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamVector, Vec<f64>)> {
    if q == 0 {
        return Ok((theta.clone(), Vec::new()));
    }
    let cfg = TrainConfig {
        iters: q,
        lr: eta,
        ..template.clone()
    };
    let out = train(arch, theta, task, &cfg, None, rng)?;
    Ok((out.params, out.iter_seconds))
}

/// `(1 - beta) * meta + beta * adapted`.
pub fn reptile_update(meta: &ParamVector, adapted: &ParamVector, beta: f32) -> Result<ParamVector> {
    if meta.len() != adapted.len() {
        return Err(Error::LengthMismatch {
            expected: meta.len(),
            actual: adapted.len(),
        });
    }
    Ok(ParamVector::new(
        meta.values
            .iter()
            .zip(&adapted.values)
            .map(|(&m, &a)| (1.0 - beta) * m + beta * a)
            .collect(),
    ))
}

#[derive(Clone, Debug)]
pub struct MetaOutcome {
    pub params: ParamVector,
    /// Wall time of every inner iteration, seconds.
    pub inner_iter_seconds: Vec<f64>,
}

/// Meta-trains from a seeded initialization; tasks are visited round-robin in
/// an order reshuffled every pass.
pub fn meta_train(tasks: &[TrainSetup], arch: &FieldArch, cfg: &MetaConfig) -> Result<ParamVector> {
    Ok(meta_train_timed(tasks, arch, cfg)?.params)
}

pub fn meta_train_timed(
    tasks: &[TrainSetup],
    arch: &FieldArch,
    cfg: &MetaConfig,
) -> Result<MetaOutcome> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument(
            "meta-training needs at least one task".into(),
        ));
    }
    cfg.validate()?;
    let mut theta = init_params(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4D45_5441);
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut times = Vec::new();
    for step in 0..cfg.steps {
        let slot = step % tasks.len();
        if slot == 0 {
            order.shuffle(&mut rng);
        }
        let (adapted, t) = inner_adapt(
            &theta,
            arch,
            &tasks[order[slot]],
            cfg.inner_iters,
            cfg.eta,
            &cfg.inner,
            &mut rng,
        )?;
        theta = reptile_update(&theta, &adapted, cfg.beta)?;
        times.extend(t);
        if (step + 1) % 50 == 0 {
            log::debug!("meta step {}/{}", step + 1, cfg.steps);
        }
    }
    Ok(MetaOutcome {
        params: theta,
        inner_iter_seconds: times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::RayConfig;
    use crate::taskgen::{make_task, Category, TaskConfig};
    use proptest::prelude::*;

    fn tiny_arch() -> FieldArch {
        FieldArch {
            hash_levels: 3,
            log2_table_size: 9,
            hidden_width: 8,
            hidden_layers: 1,
            ..FieldArch::desk_default()
        }
    }

    fn setup(seed: u64) -> TrainSetup {
        let cfg = TaskConfig {
            min_frames: 4,
            max_frames: 4,
            width: 24,
            height: 24,
            ..Default::default()
        };
        TrainSetup::from_task(
            &make_task(Category::Book, seed, &cfg).unwrap(),
            &RayConfig::default(),
        )
        .unwrap()
    }

    fn small_inner() -> TrainConfig {
        TrainConfig {
            rays_per_iter: 32,
            n_coarse: 8,
            n_samples: 8,
            ..Default::default()
        }
    }

    #[test]
    fn reptile_endpoints_and_midpoint() {
        let a = ParamVector::new(vec![0.0, 0.0]);
        let b = ParamVector::new(vec![2.0, 4.0]);
        assert_eq!(reptile_update(&a, &b, 0.0).unwrap(), a);
        assert_eq!(reptile_update(&a, &b, 1.0).unwrap(), b);
        assert_eq!(reptile_update(&a, &b, 0.5).unwrap().values, vec![1.0, 2.0]);
        assert!(reptile_update(&a, &ParamVector::new(vec![1.0]), 0.5).is_err());
    }

    #[test]
    fn zero_inner_iterations_is_identity() {
        let arch = tiny_arch();
        let theta = init_params(&arch, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) =
            inner_adapt(&theta, &arch, &setup(1), 0, 0.01, &small_inner(), &mut rng).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn zero_steps_returns_init() {
        let arch = tiny_arch();
        let cfg = MetaConfig {
            steps: 0,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(
            meta_train(&[setup(1)], &arch, &cfg).unwrap(),
            init_params(&arch, 5).unwrap()
        );
        assert!(meta_train(&[], &arch, &cfg).is_err());
    }

    #[test]
    fn meta_training_is_deterministic() {
        let arch = tiny_arch();
        let tasks = vec![setup(1), setup(2)];
        let cfg = MetaConfig {
            steps: 3,
            inner_iters: 3,
            inner: small_inner(),
            ..Default::default()
        };
        assert_eq!(
            meta_train(&tasks, &arch, &cfg).unwrap(),
            meta_train(&tasks, &arch, &cfg).unwrap()
        );
    }

    #[test]
    fn inner_loop_makes_progress() {
        let arch = tiny_arch();
        let task = setup(3);
        let template = small_inner();
        let mut improved = 0;
        for seed in 0..10 {
            let theta = init_params(&arch, seed).unwrap();
            let cfg = TrainConfig {
                iters: 100,
                lr: 1e-2,
                ..template.clone()
            };
            let out = train(
                &arch,
                &theta,
                &task,
                &cfg,
                None,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            let head: f64 = out.losses[..5].iter().map(|l| l.total).sum::<f64>() / 5.0;
            let tail: f64 = out.losses[95..].iter().map(|l| l.total).sum::<f64>() / 5.0;
            if tail < head {
                improved += 1;
            }
        }
        assert!(improved >= 9, "{improved}/10");
    }

    proptest! {
        #[test]
        fn reptile_is_linear(
            pairs in prop::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 1..32),
            beta in 0.0f32..=1.0,
        ) {
            let a = ParamVector::new(pairs.iter().map(|p| p.0).collect());
            let b = ParamVector::new(pairs.iter().map(|p| p.1).collect());
            let out = reptile_update(&a, &b, beta).unwrap();
            for i in 0..pairs.len() {
                prop_assert_eq!(out.values[i], (1.0 - beta) * a.values[i] + beta * b.values[i]);
            }
        }
    }
}
