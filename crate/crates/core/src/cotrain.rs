//! Weighted human/robot cotraining: domain weights, a domain-balanced
//! sampler, a small tanh MLP trained with analytic gradients, and a toy
//! placement-height experiment probing whether robot data lets a policy
//! interpolate to a human-only task.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetIndex, Domain, DomainCounts};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainWeights {
    pub human: f64,
    pub robot: f64,
}

/// `alpha = |H| / (|H| + |R|)` weights the robot loss and `1 − alpha` the
/// human loss. Per-sample weights rescale those so the mean weight over the
/// whole dataset is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CotrainWeights {
    pub alpha: f64,
    pub counts: DomainCounts,
    pub per_sample: DomainWeights,
}

pub fn compute_weights(counts: DomainCounts) -> Result<CotrainWeights> {
    if counts.human == 0 || counts.robot == 0 {
        return Err(Error::EmptyDomain(format!(
            "need samples from both domains, got {} human / {} robot",
            counts.human, counts.robot
        )));
    }
    let (h, r) = (counts.human as f64, counts.robot as f64);
    let n = h + r;
    let alpha = h / n;
    Ok(CotrainWeights {
        alpha,
        counts,
        per_sample: DomainWeights {
            robot: alpha / r * n,
            human: (1.0 - alpha) / h * n,
        },
    })
}

pub fn compute_weights_for_index(index: &DatasetIndex) -> Result<CotrainWeights> {
    compute_weights(index.counts)
}

impl CotrainWeights {
    pub fn weight(&self, d: Domain) -> f64 {
        match d {
            Domain::Human => self.per_sample.human,
            Domain::Robot => self.per_sample.robot,
        }
    }

    fn count(&self, d: Domain) -> usize {
        match d {
            Domain::Human => self.counts.human,
            Domain::Robot => self.counts.robot,
        }
    }

    /// Expected weight a uniformly drawn sample contributes from domain `d`:
    /// `alpha` for robot, `1 − alpha` for human.
    pub fn expected_domain_weight(&self, d: Domain) -> f64 {
        let n = (self.counts.human + self.counts.robot) as f64;
        self.weight(d) * self.count(d) as f64 / n
    }

    /// Per-domain totals of the raw loss coefficients (`alpha` on every robot
    /// sample, `1 − alpha` on every human sample), as fractions of the
    /// dataset size. The choice of `alpha` makes the two equal.
    pub fn coefficient_sums(&self) -> DomainWeights {
        let n = (self.counts.human + self.counts.robot) as f64;
        DomainWeights {
            robot: self.alpha * self.counts.robot as f64 / n,
            human: (1.0 - self.alpha) * self.counts.human as f64 / n,
        }
    }
}

/// Draws the robot domain with probability `alpha`, then a uniform id
/// within the chosen domain.
#[derive(Debug, Clone)]
pub struct DomainSampler {
    human: Vec<usize>,
    robot: Vec<usize>,
    alpha: f64,
}

impl DomainSampler {
    pub fn new(human: Vec<usize>, robot: Vec<usize>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} must lie in (0, 1)")));
        }
        if human.is_empty() || robot.is_empty() {
            return Err(Error::EmptyDomain("sampler needs ids from both domains".into()));
        }
        Ok(DomainSampler { human, robot, alpha })
    }

    /// Ids are positions in `domains`.
    pub fn from_domains(domains: &[Domain], alpha: f64) -> Result<Self> {
        let pick = |d: Domain| (0..domains.len()).filter(|&i| domains[i] == d).collect();
        Self::new(pick(Domain::Human), pick(Domain::Robot), alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let pool = if rng.random_bool(self.alpha) { &self.robot } else { &self.human };
        pool[rng.random_range(0..pool.len())]
    }

    pub fn sample_batch<R: Rng>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| self.draw(rng)).collect()
    }
}

pub fn sample_batch(domains: &[Domain], weights: &CotrainWeights, batch: usize, seed: u64) -> Result<Vec<usize>> {
    let sampler = DomainSampler::from_domains(domains, weights.alpha)?;
    Ok(sampler.sample_batch(&mut ChaCha8Rng::seed_from_u64(seed), batch))
}

// ---------------------------------------------------------------------------
// toy policy

/// Fully connected network: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    pub sizes: Vec<usize>,
    /// Layer `i` maps `sizes[i]` to `sizes[i+1]`; stored `in × out`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub init_seed: u64,
}

impl ToyPolicy {
    /// Xavier-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let lim = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-lim..lim)));
            biases.push(DVector::zeros(w[1]));
        }
        Ok(ToyPolicy {
            sizes: sizes.to_vec(),
            weights,
            biases,
            init_seed: seed,
        })
    }

    /// `[in, 64, 64, out]`.
    pub fn standard(n_in: usize, n_out: usize, seed: u64) -> Result<Self> {
        Self::new(&[n_in, 64, 64, n_out], seed)
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                actual: p.len(),
            });
        }
        let mut o = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&p[o..o + n]);
            o += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&p[o..o + n]);
            o += n;
        }
        Ok(())
    }

    fn activations(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = &acts[i] * w;
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Batch forward pass; rows of `x` are inputs.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::Dimension {
                expected: self.n_inputs(),
                actual: x.ncols(),
            });
        }
        Ok(self.activations(x).pop().unwrap())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.forward(&m)?.row(0).iter().copied().collect())
    }

    /// Weighted mean squared error `(1/B) Σ_b w_b · mean_d (ŷ − y)²` and its
    /// gradient with respect to [`ToyPolicy::parameters`].
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.ncols() != self.n_inputs() || y.ncols() != self.n_outputs() || x.nrows() != y.nrows() || w.len() != x.nrows() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                actual: w.len(),
            });
        }
        let acts = self.activations(x);
        let pred = acts.last().unwrap();
        let scale = 1.0 / (x.nrows() * self.n_outputs()) as f64;
        let mut g = pred - y;
        let mut loss = 0.0;
        for (r, wr) in w.iter().enumerate() {
            let mut row = g.row_mut(r);
            loss += wr * row.norm_squared();
            row *= 2.0 * wr * scale;
        }
        loss *= scale;

        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.weights.len());
        for i in (0..self.weights.len()).rev() {
            let gw = acts[i].transpose() * &g;
            let gb = DVector::from_iterator(g.ncols(), g.column_iter().map(|c| c.sum()));
            if i > 0 {
                let mut back = &g * self.weights[i].transpose();
                back.zip_apply(&acts[i], |b, a| *b *= 1.0 - a * a);
                g = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in &grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        Ok((loss, flat))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mixed-domain regression data; rows of `x` and `y` pair up with `domain`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub domain: Vec<Domain>,
}

impl RegressionSet {
    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn counts(&self) -> DomainCounts {
        let human = self.domain.iter().filter(|&&d| d == Domain::Human).count();
        DomainCounts {
            human,
            robot: self.domain.len() - human,
        }
    }

    fn rows(&self, ids: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.x.select_rows(ids), self.y.select_rows(ids))
    }
}

/// How the two domains are balanced during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Domain-balanced sampling with unit loss weights.
    Sampling,
    /// Uniform sampling with per-sample loss weights.
    LossScaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub mode: WeightingMode,
    /// The run is flagged `below_threshold` when the final full-set loss
    /// does not exceed this value.
    pub loss_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            steps: 5000,
            batch: 64,
            seed: 0,
            mode: WeightingMode::Sampling,
            loss_threshold: 1e-2,
        }
    }
}

pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub below_threshold: bool,
    /// `None` when the data holds a single domain and cotraining weights are
    /// undefined; training then treats all samples equally.
    pub weights: Option<CotrainWeights>,
}

/// Full-set weighted loss under `weights` (uniform when `None`).
pub fn weighted_loss(policy: &ToyPolicy, data: &RegressionSet, weights: Option<&CotrainWeights>) -> Result<f64> {
    let w: Vec<f64> = data
        .domain
        .iter()
        .map(|&d| weights.map_or(1.0, |cw| cw.weight(d)))
        .collect();
    Ok(policy.loss_and_grad(&data.x, &data.y, &w)?.0)
}

pub fn train_toy(mut policy: ToyPolicy, data: &RegressionSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() || cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("training needs data, batch > 0 and lr > 0".into()));
    }
    let weights = match compute_weights(data.counts()) {
        Ok(w) => Some(w),
        Err(Error::EmptyDomain(_)) => {
            log::info!("single-domain data: training without cotraining weights");
            None
        }
        Err(e) => return Err(e),
    };
    let sampler = match (weights, cfg.mode) {
        (Some(w), WeightingMode::Sampling) => Some(DomainSampler::from_domains(&data.domain, w.alpha)?),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = policy.parameters();
    let mut adam = Adam::new(params.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let ids: Vec<usize> = match &sampler {
            Some(s) => s.sample_batch(&mut rng, cfg.batch),
            None => (0..cfg.batch).map(|_| rng.random_range(0..data.len())).collect(),
        };
        let w: Vec<f64> = ids
            .iter()
            .map(|&i| match (weights, cfg.mode) {
                (Some(cw), WeightingMode::LossScaling) => cw.weight(data.domain[i]),
                _ => 1.0,
            })
            .collect();
        let (x, y) = data.rows(&ids);
        let (loss, grad) = policy.loss_and_grad(&x, &y, &w)?;
        if !(loss <= DIVERGENCE_LOSS) {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        adam.step(&mut params, &grad, cfg.lr);
        policy.set_parameters(&params)?;
    }
    let final_loss = weighted_loss(&policy, data, weights.as_ref())?;
    Ok(TrainOutcome {
        policy,
        losses,
        final_loss,
        below_threshold: final_loss <= cfg.loss_threshold,
        weights,
    })
}

// ---------------------------------------------------------------------------
// placement-height experiment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightTask {
    pub id: String,
    pub domain: Domain,
    pub height_cm: f64,
}

/// Synthetic placement tasks. Each sample's features are a domain flag
/// (human −1, robot +1), a task one-hot, a scene cue `height/10 + noise`
/// and `embodiment_dims` nuisance features. Robot samples shift the nuisance
/// features by `embodiment_offset` and the cue by `cue_offset`; targets are
/// the placement heights in centimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightTaskSpec {
    pub tasks: Vec<HeightTask>,
    /// The human task evaluated with robot-domain observations.
    pub eval_task: String,
    pub samples_per_task: usize,
    pub eval_samples: usize,
    pub height_spread_cm: f64,
    pub cue_noise: f64,
    pub cue_offset: f64,
    pub embodiment_dims: usize,
    pub embodiment_noise: f64,
    pub embodiment_offset: f64,
    pub train: TrainConfig,
}

impl Default for HeightTaskSpec {
    fn default() -> Self {
        let task = |id: &str, domain, height_cm| HeightTask {
            id: id.into(),
            domain,
            height_cm,
        };
        HeightTaskSpec {
            tasks: vec![
                task("h_bucket", Domain::Human, 15.3),
                task("r_pad", Domain::Robot, 0.3),
                task("r_platform", Domain::Robot, 20.7),
            ],
            eval_task: "h_bucket".into(),
            samples_per_task: 200,
            eval_samples: 200,
            height_spread_cm: 0.5,
            cue_noise: 0.02,
            cue_offset: -1.0,
            embodiment_dims: 8,
            embodiment_noise: 0.3,
            embodiment_offset: 2.0,
            train: TrainConfig {
                steps: 1500,
                mode: WeightingMode::LossScaling,
                loss_threshold: f64::INFINITY,
                ..TrainConfig::default()
            },
        }
    }
}

impl HeightTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.tasks.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate task ids".into()));
        }
        if self.tasks.iter().any(|t| !(t.height_cm > 0.0)) {
            return Err(Error::InvalidArgument("heights must be positive".into()));
        }
        self.task(&self.eval_task)?;
        Ok(())
    }

    pub fn task(&self, id: &str) -> Result<(usize, &HeightTask)> {
        self.tasks
            .iter()
            .enumerate()
            .find(|(_, t)| t.id == id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    pub fn n_features(&self) -> usize {
        2 + self.tasks.len() + self.embodiment_dims
    }

    fn features<R: Rng>(&self, rng: &mut R, task: usize, domain: Domain, n: usize) -> (Vec<f64>, Vec<f64>) {
        let spread = Normal::new(0.0, self.height_spread_cm).unwrap();
        let cue_noise = Normal::new(0.0, self.cue_noise).unwrap();
        let emb = Normal::new(0.0, self.embodiment_noise).unwrap();
        let robot = domain == Domain::Robot;
        let mut x = Vec::with_capacity(n * self.n_features());
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let h = self.tasks[task].height_cm + spread.sample(rng);
            x.push(if robot { 1.0 } else { -1.0 });
            x.extend((0..self.tasks.len()).map(|k| if k == task { 1.0 } else { 0.0 }));
            x.push(h / 10.0 + cue_noise.sample(rng) + if robot { self.cue_offset } else { 0.0 });
            for _ in 0..self.embodiment_dims {
                x.push(emb.sample(rng) + if robot { self.embodiment_offset } else { 0.0 });
            }
            y.push(h);
        }
        (x, y)
    }

    pub fn training_set(&self, subset: &[&str], seed: u64) -> Result<RegressionSet> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("empty task subset".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut domain = Vec::new();
        for id in subset {
            let (k, t) = self.task(id)?;
            let (x, y) = self.features(&mut rng, k, t.domain, self.samples_per_task);
            xs.extend(x);
            ys.extend(y);
            domain.extend(std::iter::repeat_n(t.domain, self.samples_per_task));
        }
        let n = domain.len();
        Ok(RegressionSet {
            x: DMatrix::from_row_slice(n, self.n_features(), &xs),
            y: DMatrix::from_row_slice(n, 1, &ys),
            domain,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismRun {
    pub subset: Vec<String>,
    pub seed: u64,
    /// Mean predicted height for the evaluation task seen through robot-domain observations.
    pub prediction_cm: f64,
    pub abs_error_cm: f64,
    pub final_loss: f64,
}

pub fn run_mechanism_experiment(spec: &HeightTaskSpec, subset: &[&str], seed: u64) -> Result<MechanismRun> {
    spec.validate()?;
    let data = spec.training_set(subset, seed)?;
    let policy = ToyPolicy::standard(spec.n_features(), 1, seed.wrapping_add(1000))?;
    let cfg = TrainConfig {
        seed: seed.wrapping_add(2000),
        ..spec.train
    };
    let outcome = train_toy(policy, &data, &cfg)?;
    let (k, task) = spec.task(&spec.eval_task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
    let (x, _) = spec.features(&mut rng, k, Domain::Robot, spec.eval_samples);
    let pred = outcome
        .policy
        .forward(&DMatrix::from_row_slice(spec.eval_samples, spec.n_features(), &x))?;
    let mean = pred.mean();
    Ok(MechanismRun {
        subset: subset.iter().map(|s| s.to_string()).collect(),
        seed,
        prediction_cm: mean,
        abs_error_cm: (mean - task.height_cm).abs(),
        final_loss: outcome.final_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub subset: Vec<String>,
    pub mean_prediction_cm: f64,
    pub mean_abs_error_cm: f64,
    pub runs: Vec<MechanismRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismReport {
    pub target_cm: f64,
    pub seeds: Vec<u64>,
    pub subsets: Vec<SubsetSummary>,
}

/// The four subsets compared in the experiment: the human task alone, with
/// each robot task, and with both.
pub fn standard_subsets(spec: &HeightTaskSpec) -> Vec<Vec<String>> {
    let robot: Vec<String> = spec
        .tasks
        .iter()
        .filter(|t| t.domain == Domain::Robot)
        .map(|t| t.id.clone())
        .collect();
    let base = vec![spec.eval_task.clone()];
    let mut out = vec![base.clone()];
    for r in &robot {
        let mut s = base.clone();
        s.push(r.clone());
        out.push(s);
    }
    if robot.len() > 1 {
        let mut s = base;
        s.extend(robot);
        out.push(s);
    }
    out
}

pub fn run_mechanism_report(spec: &HeightTaskSpec, subsets: &[Vec<String>], seeds: &[u64]) -> Result<MechanismReport> {
    spec.validate()?;
    let jobs: Vec<(usize, u64)> = (0..subsets.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let runs: Vec<MechanismRun> = jobs
        .par_iter()
        .map(|&(s, seed)| {
            let ids: Vec<&str> = subsets[s].iter().map(String::as_str).collect();
            run_mechanism_experiment(spec, &ids, seed)
        })
        .collect::<Result<_>>()?;
    let mut grouped: BTreeMap<usize, Vec<MechanismRun>> = BTreeMap::new();
    for (&(s, _), run) in jobs.iter().zip(runs) {
        grouped.entry(s).or_default().push(run);
    }
    let summaries = grouped
        .into_iter()
        .map(|(s, runs)| {
            let n = runs.len().max(1) as f64;
            SubsetSummary {
                subset: subsets[s].clone(),
                mean_prediction_cm: runs.iter().map(|r| r.prediction_cm).sum::<f64>() / n,
                mean_abs_error_cm: runs.iter().map(|r| r.abs_error_cm).sum::<f64>() / n,
                runs,
            }
        })
        .collect();
    Ok(MechanismReport {
        target_cm: spec.task(&spec.eval_task)?.1.height_cm,
        seeds: seeds.to_vec(),
        subsets: summaries,
    })
}

impl MechanismReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<32} {:>12} {:>12}   (target {:.1} cm, {} seeds)\n",
            "subset",
            "mean pred",
            "mean |err|",
            self.target_cm,
            self.seeds.len()
        );
        for s in &self.subsets {
            let _ = writeln!(
                out,
                "{:<32} {:>12.3} {:>12.3}",
                s.subset.join(" + "),
                s.mean_prediction_cm,
                s.mean_abs_error_cm
            );
        }
        out
    }
}
