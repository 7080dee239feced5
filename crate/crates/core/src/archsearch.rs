//! Two-objective genetic search over field architecture, meta-learning and
//! loss-weight genes, minimizing (scaled time per iteration, test Chamfer
//! distance), with knee-point selection on the final front.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{DensityActivation, FieldArch, ParamVector};
use crate::metalearn::{inner_adapt, meta_train_timed, MetaConfig};
use crate::render::LossWeights;
use crate::taskgen::Task;
use crate::threads::parallel_map;
use crate::train::{evaluate_on_task, median, MeshingConfig, TrainConfig, TrainSetup};
use crate::{Error, Result};

/// Chamfer distance assigned to genomes whose training diverged.
pub const DIVERGED_CD: f64 = 1e6;

pub const INT_GENES: [&str; 7] = [
    "hash_levels",
    "log2_table_size",
    "features_per_level",
    "hidden_width",
    "hidden_layers",
    "meta_steps",
    "inner_iters",
];
pub const REAL_GENES: [&str; 5] = ["eta", "beta", "per_level_scale", "lambda_d", "lambda_sigma"];
pub const GENE_COUNT: usize = INT_GENES.len() + REAL_GENES.len() + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Genome {
    /// In [`INT_GENES`] order.
    pub ints: [u32; 7],
    /// In [`REAL_GENES`] order.
    pub reals: [f64; 5],
    pub density_activation: DensityActivation,
}

/// Inclusive bounds of every gene.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneDomains {
    pub ints: [(u32, u32); 7],
    pub reals: [(f64, f64); 5],
}

impl Default for GeneDomains {
    fn default() -> Self {
        Self {
            ints: [(2, 10), (8, 14), (1, 4), (8, 64), (1, 3), (8, 40), (4, 16)],
            reals: [
                (1e-3, 3e-2),
                (0.05, 0.5),
                (1.2, 2.0),
                (0.1, 1.0),
                (1e-3, 5e-2),
            ],
        }
    }
}

impl GeneDomains {
    pub fn contains(&self, g: &Genome) -> bool {
        g.ints
            .iter()
            .zip(&self.ints)
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
            && g.reals
                .iter()
                .zip(&self.reals)
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn random<R: Rng>(&self, rng: &mut R) -> Genome {
        Genome {
            ints: std::array::from_fn(|i| rng.gen_range(self.ints[i].0..=self.ints[i].1)),
            reals: std::array::from_fn(|i| rng.gen_range(self.reals[i].0..=self.reals[i].1)),
            density_activation: random_activation(rng),
        }
    }
}

fn random_activation<R: Rng>(rng: &mut R) -> DensityActivation {
    if rng.gen_bool(0.5) {
        DensityActivation::ExpClamped
    } else {
        DensityActivation::Softplus
    }
}

impl Genome {
    /// The desk-default field with engineering meta-learning settings.
    pub fn default_genome() -> Self {
        let a = FieldArch::desk_default();
        Self {
            ints: [
                a.hash_levels,
                a.log2_table_size,
                a.features_per_level,
                a.hidden_width,
                a.hidden_layers,
                24,
                10,
            ],
            reals: [1e-2, 0.2, a.per_level_scale as f64, 0.5, 0.01],
            density_activation: a.density_activation,
        }
    }

    pub fn arch(&self) -> FieldArch {
        FieldArch {
            hash_levels: self.ints[0],
            log2_table_size: self.ints[1],
            features_per_level: self.ints[2],
            hidden_width: self.ints[3],
            hidden_layers: self.ints[4],
            per_level_scale: self.reals[2] as f32,
            density_activation: self.density_activation,
            ..FieldArch::desk_default()
        }
    }

    pub fn meta_steps(&self) -> usize {
        self.ints[5] as usize
    }

    pub fn inner_iters(&self) -> usize {
        self.ints[6] as usize
    }

    pub fn eta(&self) -> f32 {
        self.reals[0] as f32
    }

    pub fn beta(&self) -> f32 {
        self.reals[1] as f32
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_d: self.reals[3] as f32,
            lambda_sigma: self.reals[4] as f32,
        }
    }

    pub fn meta_config(&self, seed: u64, inner: &TrainConfig) -> MetaConfig {
        MetaConfig {
            steps: self.meta_steps(),
            inner_iters: self.inner_iters(),
            eta: self.eta(),
            beta: self.beta(),
            seed,
            inner: TrainConfig {
                loss: self.loss_weights(),
                ..inner.clone()
            },
        }
    }

    /// `name=value` pairs; reals are printed round-trip exact.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = INT_GENES
            .iter()
            .zip(&self.ints)
            .map(|(k, v)| (format!("gene.{k}"), v.to_string()))
            .collect();
        out.extend(
            REAL_GENES
                .iter()
                .zip(&self.reals)
                .map(|(k, v)| (format!("gene.{k}"), format!("{v:?}"))),
        );
        out.push((
            "gene.density_activation".into(),
            self.density_activation.to_string(),
        ));
        out
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(map: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str> {
            map.get(k)
                .map(|s| s.as_str())
                .ok_or_else(|| Error::config(k, "missing"))
        }
        let mut g = Genome::default_genome();
        for (i, name) in INT_GENES.iter().enumerate() {
            let key = format!("gene.{name}");
            g.ints[i] = get(map, &key)?
                .parse()
                .map_err(|_| Error::config(&key, "not an integer"))?;
        }
        for (i, name) in REAL_GENES.iter().enumerate() {
            let key = format!("gene.{name}");
            g.reals[i] = get(map, &key)?
                .parse()
                .map_err(|_| Error::config(&key, "not a number"))?;
        }
        g.density_activation = get(map, "gene.density_activation")?.parse()?;
        Ok(g)
    }

    /// Comma-separated gene values in declaration order.
    pub fn csv(&self) -> String {
        let mut parts: Vec<String> = self.ints.iter().map(|v| v.to_string()).collect();
        parts.extend(self.reals.iter().map(|v| format!("{v}")));
        parts.push(self.density_activation.to_string());
        parts.join(",")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Scaled seconds per training iteration.
    pub time_per_iter: f64,
    pub cd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeObjective {
    /// Median measured inner-iteration wall time.
    Measured,
    /// Floating-point work per iteration from the architecture cost model,
    /// expressed as seconds at 1 GFLOP/s; reproducible across runs.
    Analytic,
}

impl std::str::FromStr for TimeObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "measured" => Ok(TimeObjective::Measured),
            "analytic" => Ok(TimeObjective::Analytic),
            other => Err(Error::InvalidArgument(format!(
                "unknown time objective `{other}`"
            ))),
        }
    }
}

/// Per-genome evaluation budget.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBudget {
    /// Inner-loop template (rays and samples per iteration).
    pub inner: TrainConfig,
    /// Adaptation iterations on every test task.
    pub adapt_iters: usize,
    pub meshing: MeshingConfig,
    pub time: TimeObjective,
    pub time_scale: f64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self {
            inner: TrainConfig {
                rays_per_iter: 64,
                n_coarse: 16,
                n_samples: 16,
                ..TrainConfig::default()
            },
            adapt_iters: 60,
            meshing: MeshingConfig {
                resolution: 40,
                surface_samples: 3000,
                ..MeshingConfig::default()
            },
            time: TimeObjective::Analytic,
            time_scale: 1.0,
        }
    }
}

pub fn analytic_time(arch: &FieldArch, inner: &TrainConfig) -> f64 {
    // forward plus roughly twice that for the backward pass
    3.0 * arch.flops_per_sample() * (inner.rays_per_iter * inner.n_samples) as f64 * 1e-9
}

/// Scores genomes; implementations must be deterministic in `cd`.
pub trait GenomeEvaluator: Sync {
    fn evaluate(&self, genome: &Genome) -> (Evaluation, Option<ParamVector>);
}

/// Meta-trains on the training tasks, adapts to each test task and scores the
/// baked mesh against ground truth.
pub struct TaskEvaluator {
    pub train: Vec<TrainSetup>,
    pub test: Vec<(TrainSetup, Task)>,
    pub budget: EvalBudget,
    pub eval_seed: u64,
}

impl TaskEvaluator {
    pub fn new(train: &[Task], test: &[Task], budget: EvalBudget, eval_seed: u64) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(
                "search needs training and test tasks".into(),
            ));
        }
        let rays = budget.inner.rays;
        Ok(Self {
            train: train
                .iter()
                .map(|t| TrainSetup::from_task(t, &rays))
                .collect::<Result<_>>()?,
            test: test
                .iter()
                .map(|t| Ok((TrainSetup::from_task(t, &rays)?, t.clone())))
                .collect::<Result<_>>()?,
            budget,
            eval_seed,
        })
    }

    fn run(&self, g: &Genome) -> Result<(f64, f64, ParamVector)> {
        let arch = g.arch();
        arch.validate()?;
        let meta = g.meta_config(self.eval_seed, &self.budget.inner);
        let outcome = meta_train_timed(&self.train, &arch, &meta)?;
        let mut times = outcome.inner_iter_seconds;
        let mut cds = Vec::with_capacity(self.test.len());
        for (i, (setup, task)) in self.test.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.eval_seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9),
            );
            let (adapted, t) = inner_adapt(
                &outcome.params,
                &arch,
                setup,
                self.budget.adapt_iters,
                g.eta(),
                &meta.inner,
                &mut rng,
            )?;
            times.extend(t);
            cds.push(evaluate_on_task(
                &arch,
                &adapted,
                task,
                &self.budget.meshing,
                self.eval_seed,
            )?);
        }
        let cd = cds.iter().sum::<f64>() / cds.len() as f64;
        Ok((median(&times), cd, outcome.params))
    }
}

impl GenomeEvaluator for TaskEvaluator {
    fn evaluate(&self, g: &Genome) -> (Evaluation, Option<ParamVector>) {
        let analytic = analytic_time(&g.arch(), &self.budget.inner) * self.budget.time_scale;
        match self.run(g) {
            Ok((measured, cd, theta)) if cd.is_finite() => {
                let time = match self.budget.time {
                    TimeObjective::Measured => measured * self.budget.time_scale,
                    TimeObjective::Analytic => analytic,
                };
                (
                    Evaluation {
                        time_per_iter: time,
                        cd,
                    },
                    Some(theta),
                )
            }
            Ok(_) | Err(Error::Numeric(_)) => (
                Evaluation {
                    time_per_iter: analytic,
                    cd: DIVERGED_CD,
                },
                None,
            ),
            Err(e) => {
                log::warn!("genome evaluation failed: {e}");
                (
                    Evaluation {
                        time_per_iter: analytic,
                        cd: DIVERGED_CD,
                    },
                    None,
                )
            }
        }
    }
}

pub fn dominates(a: &Evaluation, b: &Evaluation) -> bool {
    a.time_per_iter <= b.time_per_iter
        && a.cd <= b.cd
        && (a.time_per_iter < b.time_per_iter || a.cd < b.cd)
}

/// Fronts of mutually non-dominated points, best first; indices ascend within a front.
pub fn non_dominated_sort(points: &[Evaluation]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates(&points[i], &points[j]) {
                dominates_list[i].push(j);
            } else if i != j && dominates(&points[j], &points[i]) {
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance per point of one front; extremes get infinity.
pub fn crowding_distance(front: &[Evaluation]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0f64; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let objectives: [fn(&Evaluation) -> f64; 2] = [|e| e.time_per_iter, |e| e.cd];
    for obj in objectives {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| obj(&front[a]).total_cmp(&obj(&front[b])).then(a.cmp(&b)));
        let lo = obj(&front[idx[0]]);
        let hi = obj(&front[idx[n - 1]]);
        let range = if hi - lo > 0.0 { hi - lo } else { 1.0 };
        dist[idx[0]] = f64::INFINITY;
        dist[idx[n - 1]] = f64::INFINITY;
        for k in 1..n - 1 {
            let i = idx[k];
            if dist[i].is_finite() {
                dist[i] += (obj(&front[idx[k + 1]]) - obj(&front[idx[k - 1]])) / range;
            }
        }
    }
    dist
}

/// Front rank and crowding distance of every point.
pub fn rank_and_crowding(evals: &[Evaluation]) -> (Vec<usize>, Vec<f64>) {
    let mut rank = vec![0usize; evals.len()];
    let mut crowd = vec![0.0f64; evals.len()];
    for (r, front) in non_dominated_sort(evals).iter().enumerate() {
        let sub: Vec<Evaluation> = front.iter().map(|&i| evals[i]).collect();
        for (k, d) in front.iter().zip(crowding_distance(&sub)) {
            rank[*k] = r;
            crowd[*k] = d;
        }
    }
    (rank, crowd)
}

fn better(i: usize, j: usize, rank: &[usize], crowd: &[f64]) -> bool {
    rank[i] < rank[j] || (rank[i] == rank[j] && crowd[i] > crowd[j])
}

/// Binary tournament on (rank, crowding).
pub fn tournament<R: Rng>(rank: &[usize], crowd: &[f64], rng: &mut R) -> usize {
    let a = rng.gen_range(0..rank.len());
    let b = rng.gen_range(0..rank.len());
    if better(b, a, rank, crowd) {
        b
    } else {
        a
    }
}

/// Uniform crossover for integer and categorical genes, random blend for reals.
pub fn crossover<R: Rng>(a: &Genome, b: &Genome, rng: &mut R) -> Genome {
    Genome {
        ints: std::array::from_fn(|i| {
            if rng.gen_bool(0.5) {
                a.ints[i]
            } else {
                b.ints[i]
            }
        }),
        reals: std::array::from_fn(|i| {
            let u: f64 = rng.gen();
            a.reals[i] + u * (b.reals[i] - a.reals[i])
        }),
        density_activation: if rng.gen_bool(0.5) {
            a.density_activation
        } else {
            b.density_activation
        },
    }
}

/// Resets each gene within its domain with probability `rate`.
pub fn mutate<R: Rng>(g: &mut Genome, domains: &GeneDomains, rate: f64, rng: &mut R) {
    for i in 0..g.ints.len() {
        if rng.gen::<f64>() < rate {
            g.ints[i] = rng.gen_range(domains.ints[i].0..=domains.ints[i].1);
        }
    }
    for i in 0..g.reals.len() {
        if rng.gen::<f64>() < rate {
            g.reals[i] = rng.gen_range(domains.reals[i].0..=domains.reals[i].1);
        }
    }
    if rng.gen::<f64>() < rate {
        g.density_activation = random_activation(rng);
    }
}

/// `n` children from tournament-selected parents.
pub fn make_offspring<R: Rng>(
    pop: &[Genome],
    evals: &[Evaluation],
    n: usize,
    domains: &GeneDomains,
    mutation_rate: f64,
    rng: &mut R,
) -> Result<Vec<Genome>> {
    if pop.len() != evals.len() || pop.is_empty() {
        return Err(Error::LengthMismatch {
            expected: pop.len(),
            actual: evals.len(),
        });
    }
    let (rank, crowd) = rank_and_crowding(evals);
    Ok((0..n)
        .map(|_| {
            let a = tournament(&rank, &crowd, rng);
            let b = tournament(&rank, &crowd, rng);
            let mut child = crossover(&pop[a], &pop[b], rng);
            mutate(&mut child, domains, mutation_rate, rng);
            child
        })
        .collect())
}

/// Indices of the `p` survivors: whole fronts in order, the last partial
/// front by decreasing crowding distance.
pub fn environmental_selection(evals: &[Evaluation], p: usize) -> Vec<usize> {
    let mut keep = Vec::with_capacity(p);
    for front in non_dominated_sort(evals) {
        if keep.len() + front.len() <= p {
            keep.extend_from_slice(&front);
        } else {
            let sub: Vec<Evaluation> = front.iter().map(|&i| evals[i]).collect();
            let d = crowding_distance(&sub);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
            keep.extend(order.into_iter().take(p - keep.len()).map(|k| front[k]));
        }
        if keep.len() >= p {
            break;
        }
    }
    keep
}

/// Index of the knee: the point furthest from the chord joining the two
/// extremes after normalizing both objectives over the front; ties go to the
/// smaller `cd`.
pub fn knee_select(front: &[Evaluation]) -> Result<usize> {
    if front.is_empty() {
        return Err(Error::InvalidArgument("empty front".into()));
    }
    let norm = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        vals.into_iter()
            .map(|v| (v - lo) / range)
            .collect::<Vec<f64>>()
    };
    let xs = norm(front.iter().map(|e| e.time_per_iter).collect());
    let ys = norm(front.iter().map(|e| e.cd).collect());
    let pick = |key: &dyn Fn(usize) -> (f64, f64)| {
        (0..front.len())
            .min_by(|&a, &b| {
                let (ka, kb) = (key(a), key(b));
                ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
            })
            .unwrap_or(0)
    };
    let fastest = pick(&|i| (xs[i], ys[i]));
    let best = pick(&|i| (ys[i], xs[i]));
    let (ax, ay) = (xs[fastest], ys[fastest]);
    let (dx, dy) = (xs[best] - ax, ys[best] - ay);
    let len = (dx * dx + dy * dy).sqrt();
    let dist = |i: usize| {
        if len == 0.0 {
            0.0
        } else {
            ((xs[i] - ax) * dy - (ys[i] - ay) * dx).abs() / len
        }
    };
    let mut choice = 0;
    for i in 1..front.len() {
        let (di, dc) = (dist(i), dist(choice));
        if di > dc || (di == dc && front[i].cd < front[choice].cd) {
            choice = i;
        }
    }
    Ok(choice)
}

/// Everything evaluated during a search, for the log.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchRecord {
    pub generation: usize,
    pub index: usize,
    pub genome: Genome,
    pub eval: Evaluation,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub front: Vec<(Genome, Evaluation)>,
    pub knee: Genome,
    pub knee_eval: Evaluation,
    pub theta: Option<ParamVector>,
    pub records: Vec<SearchRecord>,
    /// Final population evaluations, one per generation boundary, for audits.
    pub generations: Vec<Vec<Evaluation>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    pub domains: GeneDomains,
    pub threads: usize,
    /// Start from the default genome plus random ones.
    pub seed_default: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 8,
            generations: 5,
            seed: 0,
            domains: GeneDomains::default(),
            threads: 1,
            seed_default: true,
        }
    }
}

/// Population loop: evaluate, breed `P` children, keep the best `P` of the
/// union, repeat `M` times; the knee of the final first front is returned with
/// its meta-learned parameters.
pub fn run_search<E: GenomeEvaluator>(evaluator: &E, cfg: &SearchConfig) -> Result<SearchResult> {
    if cfg.population < 2 || cfg.generations < 1 {
        return Err(Error::InvalidArgument(
            "search needs P >= 2 and M >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6E53_4741);
    let mut pop: Vec<Genome> = Vec::with_capacity(cfg.population);
    if cfg.seed_default {
        pop.push(Genome::default_genome());
    }
    while pop.len() < cfg.population {
        pop.push(cfg.domains.random(&mut rng));
    }
    let run_batch =
        |genomes: &[Genome]| parallel_map(genomes, cfg.threads, |_, g| evaluator.evaluate(g));
    let first = run_batch(&pop);
    let mut evals: Vec<Evaluation> = first.iter().map(|r| r.0).collect();
    let mut thetas: Vec<Option<ParamVector>> = first.into_iter().map(|r| r.1).collect();
    let mut records: Vec<SearchRecord> = pop
        .iter()
        .zip(&evals)
        .enumerate()
        .map(|(i, (g, e))| SearchRecord {
            generation: 0,
            index: i,
            genome: g.clone(),
            eval: *e,
        })
        .collect();
    let mut generations = vec![evals.clone()];
    let rate = 1.0 / GENE_COUNT as f64;
    for gen in 1..=cfg.generations {
        let children = make_offspring(&pop, &evals, cfg.population, &cfg.domains, rate, &mut rng)?;
        let results = run_batch(&children);
        for (i, (g, r)) in children.iter().zip(&results).enumerate() {
            records.push(SearchRecord {
                generation: gen,
                index: i,
                genome: g.clone(),
                eval: r.0,
            });
        }
        let mut all_pop = pop;
        all_pop.extend(children);
        let mut all_evals = evals;
        all_evals.extend(results.iter().map(|r| r.0));
        let mut all_thetas = thetas;
        all_thetas.extend(results.into_iter().map(|r| r.1));
        let keep = environmental_selection(&all_evals, cfg.population);
        pop = keep.iter().map(|&i| all_pop[i].clone()).collect();
        evals = keep.iter().map(|&i| all_evals[i]).collect();
        thetas = keep.iter().map(|&i| all_thetas[i].take()).collect();
        generations.push(evals.clone());
        log::info!(
            "generation {gen}: best cd {:.5}",
            evals.iter().map(|e| e.cd).fold(f64::INFINITY, f64::min)
        );
    }
    let front_idx = non_dominated_sort(&evals)
        .into_iter()
        .next()
        .unwrap_or_default();
    let front_evals: Vec<Evaluation> = front_idx.iter().map(|&i| evals[i]).collect();
    let k = front_idx[knee_select(&front_evals)?];
    Ok(SearchResult {
        front: front_idx
            .iter()
            .map(|&i| (pop[i].clone(), evals[i]))
            .collect(),
        knee: pop[k].clone(),
        knee_eval: evals[k],
        theta: thetas[k].take(),
        records,
        generations,
    })
}

/// Lines `gen,idx,genes...,time,cd`.
pub fn write_search_log<W: Write>(w: &mut W, records: &[SearchRecord]) -> std::io::Result<()> {
    writeln!(
        w,
        "# gen,idx,{},{},density_activation,time,cd",
        INT_GENES.join(","),
        REAL_GENES.join(",")
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.generation,
            r.index,
            r.genome.csv(),
            r.eval.time_per_iter,
            r.eval.cd
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ev(t: f64, c: f64) -> Evaluation {
        Evaluation {
            time_per_iter: t,
            cd: c,
        }
    }

    // O(n^2) oracle: repeatedly peel the points nobody remaining dominates
    fn oracle_fronts(points: &[Evaluation]) -> Vec<Vec<usize>> {
        let mut left: Vec<usize> = (0..points.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let front: Vec<usize> = left
                .iter()
                .copied()
                .filter(|&i| !left.iter().any(|&j| dominates(&points[j], &points[i])))
                .collect();
            left.retain(|i| !front.contains(i));
            out.push(front);
        }
        out
    }

    /// Cheap deterministic evaluator: smaller nets are faster, the cd favours
    /// a particular table size and width.
    struct Stub;

    impl GenomeEvaluator for Stub {
        fn evaluate(&self, g: &Genome) -> (Evaluation, Option<ParamVector>) {
            let a = g.arch();
            let cd =
                1.0 / (1.0 + a.param_count() as f64).ln() + 0.01 * (g.reals[0] * 100.0 - 1.0).abs();
            (
                ev(a.flops_per_sample(), cd),
                Some(ParamVector::new(vec![cd as f32])),
            )
        }
    }

    #[test]
    fn sort_examples() {
        assert_eq!(non_dominated_sort(&[ev(1.0, 1.0)]), vec![vec![0]]);
        assert_eq!(
            non_dominated_sort(&[ev(1.0, 2.0), ev(2.0, 1.0), ev(2.0, 2.0)]),
            vec![vec![0, 1], vec![2]]
        );
        assert_eq!(
            non_dominated_sort(&[ev(1.0, 1.0), ev(1.0, 1.0)]),
            vec![vec![0, 1]]
        );
    }

    #[test]
    fn crowding_examples() {
        assert!(crowding_distance(&[ev(0.0, 1.0), ev(1.0, 0.0)])
            .iter()
            .all(|d| d.is_infinite()));
        let d = crowding_distance(&[ev(0.0, 2.0), ev(1.0, 1.0), ev(2.0, 0.0)]);
        assert_eq!(d[1], 2.0);
        let flat = crowding_distance(&[ev(1.0, 1.0), ev(1.0, 1.0), ev(1.0, 1.0)]);
        assert!(flat.iter().filter(|d| d.is_finite()).count() >= 1);
    }

    #[test]
    fn knee_examples() {
        assert_eq!(knee_select(&[ev(3.0, 3.0)]).unwrap(), 0);
        assert_eq!(
            knee_select(&[ev(0.0, 1.0), ev(0.1, 0.1), ev(1.0, 0.0)]).unwrap(),
            1
        );
        // collinear: all distances zero, smallest cd wins
        assert_eq!(
            knee_select(&[ev(0.0, 1.0), ev(0.5, 0.5), ev(1.0, 0.0)]).unwrap(),
            2
        );
    }

    #[test]
    fn identical_parents_without_mutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Genome::default_genome();
        let mut child = crossover(&g, &g, &mut rng);
        mutate(&mut child, &GeneDomains::default(), 0.0, &mut rng);
        assert_eq!(child, g);
    }

    #[test]
    fn offspring_stay_in_domain() {
        let d = GeneDomains::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop: Vec<Genome> = (0..6).map(|_| d.random(&mut rng)).collect();
        let evals: Vec<Evaluation> = (0..6).map(|i| ev(i as f64, 6.0 - i as f64)).collect();
        let kids =
            make_offspring(&pop, &evals, 10_000, &d, 1.0 / GENE_COUNT as f64, &mut rng).unwrap();
        assert!(kids.iter().all(|k| d.contains(k)));
        assert!(d.contains(&Genome::default_genome()));
    }

    #[test]
    fn genome_kv_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GeneDomains::default().random(&mut rng);
        let map: BTreeMap<String, String> = g.to_kv().into_iter().collect();
        assert_eq!(Genome::from_kv(&map).unwrap(), g);
    }

    #[test]
    fn stub_search_smoke() {
        let cfg = SearchConfig {
            population: 2,
            generations: 1,
            ..Default::default()
        };
        let out = run_search(&Stub, &cfg).unwrap();
        assert!(!out.front.is_empty());
        assert!(out.theta.is_some());
    }

    #[test]
    fn search_generations_match_oracle() {
        let cfg = SearchConfig {
            population: 8,
            generations: 5,
            seed: 4,
            ..Default::default()
        };
        let out = run_search(&Stub, &cfg).unwrap();
        assert_eq!(out.generations.len(), 6);
        for gen in &out.generations {
            assert_eq!(gen.len(), 8);
            assert_eq!(non_dominated_sort(gen), oracle_fronts(gen));
        }
        let fe: Vec<Evaluation> = out.front.iter().map(|f| f.1).collect();
        for a in &fe {
            assert!(!fe.iter().any(|b| dominates(b, a)));
        }
        let again = run_search(&Stub, &cfg).unwrap();
        assert_eq!(again.knee, out.knee);
        let mut log = Vec::new();
        write_search_log(&mut log, &out.records).unwrap();
        assert_eq!(String::from_utf8(log).unwrap().lines().count(), 1 + 8 * 6);
    }

    #[test]
    fn elitism_keeps_best_cd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let evals: Vec<Evaluation> = (0..16).map(|_| ev(rng.gen(), rng.gen())).collect();
            let best = (0..16)
                .min_by(|&a, &b| evals[a].cd.total_cmp(&evals[b].cd))
                .unwrap();
            assert!(environmental_selection(&evals, 8).contains(&best));
        }
    }

    proptest! {
        #[test]
        fn sort_matches_oracle(pts in prop::collection::vec((0u8..6, 0u8..6), 1..40)) {
            let evals: Vec<Evaluation> = pts.iter().map(|&(a, b)| ev(a as f64, b as f64)).collect();
            let fronts = non_dominated_sort(&evals);
            prop_assert_eq!(&fronts, &oracle_fronts(&evals));
            let mut all: Vec<usize> = fronts.concat();
            all.sort();
            prop_assert_eq!(all, (0..evals.len()).collect::<Vec<_>>());
        }

        #[test]
        fn knee_invariant_to_affine_rescale(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..12),
            s1 in 0.5f64..4.0, o1 in -2.0f64..2.0, s2 in 0.5f64..4.0, o2 in -2.0f64..2.0,
        ) {
            let a: Vec<Evaluation> = pts.iter().map(|&(t, c)| ev(t, c)).collect();
            let b: Vec<Evaluation> = pts.iter().map(|&(t, c)| ev(s1 * t + o1, s2 * c + o2)).collect();
            let (ka, kb) = (knee_select(&a).unwrap(), knee_select(&b).unwrap());
            // rescaling may reorder exact ties through rounding; compare distances instead
            if ka != kb {
                prop_assert!((a[ka].cd - a[kb].cd).abs() < 1e-9 || (a[ka].time_per_iter - a[kb].time_per_iter).abs() < 1e-9);
            }
        }

        #[test]
        fn selection_preserves_size(n in 2usize..30, p in 1usize..30, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let evals: Vec<Evaluation> = (0..n).map(|_| ev(rng.gen_range(0..5) as f64, rng.gen_range(0..5) as f64)).collect();
            let keep = environmental_selection(&evals, p.min(n));
            prop_assert_eq!(keep.len(), p.min(n));
        }
    }
}
