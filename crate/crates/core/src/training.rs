//! Joint optimization of the four models.
//!
//! The batch objective is the per-batch mean of
//! `(1 - λ)·β·(E_gl + E_h + E_m + E_e) + λ·E_det`. Training runs in two
//! phases: for the first `phase1_steps` SGD steps only the representation
//! learner and the scene heads are trained, on the scene term alone; after
//! that every parameter is trained on the full objective.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, LabeledClip};
use crate::labels::{Condition, ConditionLabels, Drowsiness, Eye, GlassesIllum, Head, Mouth};
use crate::layers::LayerError;
use crate::network::{ClipLosses, Network, NetworkConfig, NetworkError, ParamGroup, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss diverged (non-finite for 3 consecutive steps) at step {step}")]
    Diverged { step: usize },
    #[error("gradient does not match the parameter registry")]
    Registry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Balance between scene understanding (0) and detection (1).
    pub lambda: f64,
    /// Scale on the summed scene-head losses.
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// SGD steps of the scene-only first phase.
    pub phase1_steps: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            beta: 0.25,
            learning_rate: 0.1,
            batch_size: 8,
            phase1_steps: 200,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TrainError::Config(alloc::format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TrainError::Config(alloc::format!(
                "beta {} must be positive",
                self.beta
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(alloc::format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Representation learner and scene heads only.
    Scene,
    /// All four models.
    Joint,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Scene => 1,
            Phase::Joint => 2,
        }
    }

    /// Whether parameters of `group` are updated in this phase.
    pub fn trains(self, group: ParamGroup) -> bool {
        match self {
            Phase::Scene => matches!(group, ParamGroup::Representation | ParamGroup::Scene(_)),
            Phase::Joint => true,
        }
    }
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchLoss {
    /// The optimized objective.
    pub joint: f64,
    /// `β · (E_gl + E_h + E_m + E_e)`
    pub scene: f64,
    pub detection: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: u8,
    pub joint: f64,
    pub scene: f64,
    pub detection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub checksum: u64,
    /// Filled in by callers that have a clock.
    pub wall_time_secs: Option<f64>,
}

/// Loss and parameter gradients of the batch under `phase`. In the joint
/// phase this is the balanced objective; in the scene phase it is the scene
/// term alone. Fusion always sees the ground-truth one-hots.
pub fn batch_objective(
    batch: &[&LabeledClip],
    net: &Network,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<(BatchLoss, Params), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let scale = 1.0 / batch.len() as f64;
    let (w_scene, w_det) = match phase {
        Phase::Scene => (cfg.beta, 0.0),
        Phase::Joint => ((1.0 - cfg.lambda) * cfg.beta, cfg.lambda),
    };
    let mut grads = net.params().zeros_like();
    let mut loss = BatchLoss::default();
    for item in batch {
        let l = net.accumulate_gradients(&item.clip, &item.labels, w_scene * scale, w_det * scale, &mut grads)?;
        loss.scene += scale * cfg.beta * l.scene_sum();
        loss.detection += scale * l.detection;
        loss.joint += scale * (w_scene * l.scene_sum() + w_det * l.detection);
    }
    Ok((loss, grads))
}

/// The balanced joint objective and its gradient for every parameter.
pub fn joint_loss(batch: &[&LabeledClip], net: &Network, cfg: &TrainConfig) -> Result<(BatchLoss, Params), TrainError> {
    batch_objective(batch, net, cfg, Phase::Joint)
}

/// `p ← p − η·g` for every parameter whose group passes `filter`; the rest
/// stay bitwise unchanged.
pub fn sgd_step(
    net: &mut Network,
    grads: &Params,
    learning_rate: f64,
    filter: impl Fn(ParamGroup) -> bool,
) -> Result<(), TrainError> {
    let groups = net.params().registry();
    let grads = grads.tensors();
    let params = net.params_mut().tensors_mut();
    if grads.len() != params.len() {
        return Err(TrainError::Registry);
    }
    for ((p, g), (_, group)) in params.into_iter().zip(grads).zip(groups) {
        if p.shape() != g.shape() {
            return Err(TrainError::Registry);
        }
        if filter(group) {
            p.axpy(-learning_rate, g).map_err(|_| TrainError::Registry)?;
        }
    }
    Ok(())
}

/// Two-phase SGD over `dataset`. `observer` is called after every step
/// with the step record and the updated network.
pub fn train(
    dataset: &Dataset,
    net: &mut Network,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepRecord, &Network),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut steps = Vec::new();
    let mut non_finite_run = 0;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let phase = if step < cfg.phase1_steps {
                Phase::Scene
            } else {
                Phase::Joint
            };
            let batch: Vec<&LabeledClip> = chunk.iter().map(|&i| &dataset.clips[i]).collect();
            let outcome = match batch_objective(&batch, net, cfg, phase) {
                Ok(v) => Some(v),
                Err(TrainError::Network(NetworkError::Layer(LayerError::NonFinite(_)))) => None,
                Err(e) => return Err(e),
            };
            let record = match outcome {
                Some((loss, grads)) if loss.joint.is_finite() && grads.tensors().iter().all(|t| t.is_finite()) => {
                    non_finite_run = 0;
                    sgd_step(net, &grads, cfg.learning_rate, |g| phase.trains(g))?;
                    StepRecord {
                        step,
                        epoch,
                        phase: phase.number(),
                        joint: loss.joint,
                        scene: loss.scene,
                        detection: loss.detection,
                    }
                }
                _ => {
                    non_finite_run += 1;
                    if non_finite_run >= 3 {
                        return Err(TrainError::Diverged { step });
                    }
                    StepRecord {
                        step,
                        epoch,
                        phase: phase.number(),
                        joint: f64::NAN,
                        scene: f64::NAN,
                        detection: f64::NAN,
                    }
                }
            };
            observer(&record, net);
            steps.push(record);
            step += 1;
        }
    }
    Ok(TrainReport {
        steps,
        checksum: net.params().checksum(),
        wall_time_secs: None,
    })
}

/// Something with parameters, a scalar loss and an analytic gradient.
pub trait Differentiable {
    /// `(name, group label)` per parameter tensor.
    fn parameter_names(&self) -> Vec<(String, String)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    fn loss(&self) -> f64;
    fn gradient(&self) -> Vec<Tensor>;

    /// Summands of [`Differentiable::loss`]. Finite differences are taken
    /// per summand, so terms a perturbation does not touch cancel exactly
    /// instead of contributing rounding noise at the scale of the total.
    fn loss_terms(&self) -> Vec<f64> {
        vec![self.loss()]
    }
}

fn central_difference(up: &[f64], down: &[f64], h: f64) -> f64 {
    up.iter().zip(down).map(|(u, d)| u - d).sum::<f64>() / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub group: String,
    pub max_rel_error: f64,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }

    /// Largest error per group label, in first-seen order.
    pub fn by_group(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|(g, _)| *g == e.group) {
                Some((_, m)) => *m = m.max(e.max_rel_error),
                None => out.push((e.group.clone(), e.max_rel_error)),
            }
        }
        out
    }

    /// Element-wise worst case of two reports over the same parameters.
    pub fn merge(mut self, other: &GradCheckReport) -> GradCheckReport {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.max_rel_error = a.max_rel_error.max(b.max_rel_error);
        }
        self
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences with step `h` against the analytic gradient, for
/// every element of every parameter. NaN errors count as failures.
pub fn grad_check<D: Differentiable>(model: &mut D, h: f64, tolerance: f64) -> GradCheckReport {
    let analytic = model.gradient();
    let names = model.parameter_names();
    let mut entries = Vec::with_capacity(names.len());
    for (k, (name, group)) in names.into_iter().enumerate() {
        let n = analytic[k].len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = model.parameters_mut()[k].data()[i];
            model.parameters_mut()[k].data_mut()[i] = orig + h;
            let up = model.loss_terms();
            model.parameters_mut()[k].data_mut()[i] = orig - h;
            let down = model.loss_terms();
            model.parameters_mut()[k].data_mut()[i] = orig;
            let numeric = central_difference(&up, &down, h);
            let err = relative_error(analytic[k].data()[i], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        entries.push(GradCheckEntry {
            name,
            group,
            max_rel_error: worst,
            elements: n,
        });
    }
    GradCheckReport { entries, tolerance }
}

/// The joint objective of a fixed batch, as a function of the network's
/// parameters.
pub struct JointObjective {
    pub net: Network,
    pub batch: Vec<LabeledClip>,
    pub cfg: TrainConfig,
}

impl Differentiable for JointObjective {
    fn parameter_names(&self) -> Vec<(String, String)> {
        self.net
            .params()
            .registry()
            .into_iter()
            .map(|(n, g)| (n, group_label(g)))
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut().tensors_mut()
    }

    fn loss(&self) -> f64 {
        self.terms(Network::clip_losses).iter().sum()
    }

    /// Terms offset by the constant `ln(K)` of each head.
    fn loss_terms(&self) -> Vec<f64> {
        self.terms(Network::centered_clip_losses)
    }

    fn gradient(&self) -> Vec<Tensor> {
        let batch: Vec<&LabeledClip> = self.batch.iter().collect();
        let (_, grads) = joint_loss(&batch, &self.net, &self.cfg).expect("valid batch");
        grads.tensors().into_iter().cloned().collect()
    }
}

impl JointObjective {
    fn terms(
        &self,
        losses: impl Fn(&Network, &Tensor, &ConditionLabels) -> Result<ClipLosses, NetworkError>,
    ) -> Vec<f64> {
        let w_scene = (1.0 - self.cfg.lambda) * self.cfg.beta;
        let scale = 1.0 / self.batch.len() as f64;
        let mut terms = Vec::with_capacity(5 * self.batch.len());
        for c in &self.batch {
            let l = losses(&self.net, &c.clip, &c.labels).expect("valid batch");
            terms.extend(l.scene.iter().map(|e| scale * w_scene * e));
            terms.push(scale * self.cfg.lambda * l.detection);
        }
        terms
    }
}

pub fn group_label(g: ParamGroup) -> String {
    match g {
        ParamGroup::Representation => "representation".into(),
        ParamGroup::Scene(k) => alloc::format!("scene.{}", k.short_name()),
        ParamGroup::Fusion => "fusion".into(),
        ParamGroup::Detector => "detector".into(),
    }
}

/// A tiny network and a two-clip batch of random clips and labels.
pub fn tiny_problem(seed: u64) -> JointObjective {
    let config = NetworkConfig {
        seed,
        ..NetworkConfig::tiny()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n: usize = config.input.iter().product();
    let batch = (0..2)
        .map(|_| {
            let clip = Tensor::new(
                config.input.to_vec(),
                (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .expect("tiny input");
            let labels = ConditionLabels {
                glasses_illum: GlassesIllum::ALL[rng.random_range(0..5)],
                head: Head::ALL[rng.random_range(0..3)],
                mouth: Mouth::ALL[rng.random_range(0..3)],
                eye: Eye::ALL[rng.random_range(0..2)],
                drowsy: Drowsiness::ALL[rng.random_range(0..2)],
            };
            LabeledClip::new(clip, labels)
        })
        .collect();
    // Positive biases keep pre-activations off the ReLU kink, where they
    // sit exactly at 0 with zero biases and central differences mean nothing.
    let mut net = Network::new(config).expect("tiny config is valid");
    let names = net.params().registry();
    for (t, (name, _)) in net.params_mut().tensors_mut().into_iter().zip(names) {
        if name.ends_with("bias") || name.ends_with("b_fu") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(0.05..0.25));
        }
    }
    JointObjective {
        net,
        batch,
        cfg: TrainConfig::default(),
    }
}

/// Gradient check of the joint objective on the tiny configuration, worst
/// case over `seeds`.
pub fn grad_check_tiny(seeds: &[u64], tolerance: f64) -> GradCheckReport {
    let mut report: Option<GradCheckReport> = None;
    for &seed in seeds {
        let mut problem = tiny_problem(seed);
        let r = grad_check(&mut problem, 1e-5, tolerance);
        report = Some(match report {
            Some(acc) => acc.merge(&r),
            None => r,
        });
    }
    report.unwrap_or(GradCheckReport {
        entries: Vec::new(),
        tolerance,
    })
}
