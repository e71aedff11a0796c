//! The outer federated-learning loop.
//!
//! A round broadcasts `w_t`, lets every device take one local SGD step
//! (Byzantine devices then apply their attack), and aggregates the local
//! models into `w_{t+1}` with the configured rule. Geometric-median
//! aggregation always starts from `z = w_t`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::aircomp::{weiszfeld_aircomp, AirConfig, AirError, Threshold, DEFAULT_B_FLOOR};
use crate::attacks::{class_flip, weight_flip, AttackKind};
use crate::data::{gen_synthetic_with, load_mnist_dir, partition_iid_with, Dataset, Shard};
use crate::model::{evaluate, local_comp, loss, param_dim, Batch, ModelParams};
use crate::robust_agg::{mean_aggregate, weiszfeld_ideal, AggregationProblem};
use crate::streams::{SeedStreams, Stream};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationMode {
    /// Smoothed geometric median computed exactly at the server.
    IdealGm,
    /// Smoothed geometric median computed over the simulated uplink.
    AirCompGm,
    /// Weighted mean.
    Mean,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::IdealGm => "ideal",
            AggregationMode::AirCompGm => "aircomp",
            AggregationMode::Mean => "mean",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ideal" => Ok(AggregationMode::IdealGm),
            "aircomp" => Ok(AggregationMode::AirCompGm),
            "mean" => Ok(AggregationMode::Mean),
            other => Err(format!("unknown aggregation mode {other:?}")),
        }
    }
}

/// How the per-device weights `alpha_k` are set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightRule {
    /// `1 / K`.
    Uniform,
    /// `n_k / n`.
    SampleCount,
}

impl fmt::Display for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightRule::Uniform => "uniform",
            WeightRule::SampleCount => "samples",
        })
    }
}

impl FromStr for WeightRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(WeightRule::Uniform),
            "samples" => Ok(WeightRule::SampleCount),
            other => Err(format!("unknown weight rule {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    Synthetic,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Synthetic => "synthetic",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(format!("unknown dataset {other:?}")),
        }
    }
}

/// Everything that determines an experiment. Defaults reproduce the MNIST
/// setup: 50 devices, batch 50, learning rate 0.01, `nu = 1e-4`, at most 1000
/// Weiszfeld iterations with tolerance `1e-5`, `P = 1`, `sigma^2 = 0.01` and a
/// soft-threshold multiplier of 500.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub devices: usize,
    pub byzantine: usize,
    pub attack: AttackKind,
    pub mode: AggregationMode,
    pub rounds: usize,
    pub batch: usize,
    pub lr: f64,
    pub nu: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub power: f64,
    pub sigma2: f64,
    /// Soft-threshold multiplier; infinity aligns all devices every block.
    pub cmult: f64,
    pub weights: WeightRule,
    pub dataset: DatasetKind,
    pub mnist_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub features: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            devices: 50,
            byzantine: 0,
            attack: AttackKind::None,
            mode: AggregationMode::AirCompGm,
            rounds: 150,
            batch: 50,
            lr: 1e-2,
            nu: 1e-4,
            max_iter: 1000,
            tol: 1e-5,
            power: 1.0,
            sigma2: 1e-2,
            cmult: 500.0,
            weights: WeightRule::Uniform,
            dataset: DatasetKind::Mnist,
            mnist_dir: PathBuf::from("data/mnist"),
            n_train: 5000,
            n_test: 1000,
            features: 20,
            classes: 10,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Checks every invariant, naming the first offending key.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |key: &'static str, reason: String| Err(Error::InvalidConfig { key, reason });
        if self.devices == 0 {
            return bad("K", "need at least one device".into());
        }
        if self.byzantine >= self.devices {
            return bad(
                "B",
                format!("{} Byzantine devices with K = {}; need B < K", self.byzantine, self.devices),
            );
        }
        if self.byzantine > 0 && self.attack == AttackKind::None {
            return bad("attack", format!("B = {} requires an attack kind", self.byzantine));
        }
        if self.rounds == 0 {
            return bad("rounds", "need at least one round".into());
        }
        if self.batch == 0 {
            return bad("batch", "batch size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} is not a finite non-negative rate", self.lr));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu", format!("{} is not positive", self.nu));
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol", format!("{} is not positive", self.tol));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return bad("P", format!("{} is not positive", self.power));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2", format!("{} is not a finite non-negative variance", self.sigma2));
        }
        if !(self.cmult > 0.0) {
            return bad("cmult", format!("{} is not positive", self.cmult));
        }
        if self.dataset == DatasetKind::Synthetic {
            if self.classes < 2 {
                return bad("classes", "need at least two classes".into());
            }
            if self.features == 0 {
                return bad("features", "need at least one feature".into());
            }
            if self.n_train < self.classes {
                return bad("n_train", format!("{} samples for {} classes", self.n_train, self.classes));
            }
            if self.n_test == 0 {
                return bad("n_test", "need a non-empty test set".into());
            }
        }
        Ok(())
    }

    pub fn air(&self) -> AirConfig {
        AirConfig {
            power: self.power,
            noise_var: self.sigma2,
            threshold: Threshold::from_multiplier(self.cmult),
            b_floor: DEFAULT_B_FLOOR,
        }
    }

    /// Loads or generates the (train, test) pair named by the config.
    pub fn load_datasets(&self) -> Result<(Dataset, Dataset), Error> {
        match self.dataset {
            DatasetKind::Mnist => Ok(load_mnist_dir(&self.mnist_dir)?),
            DatasetKind::Synthetic => {
                let mut rng = SeedStreams::new(self.seed).synthetic();
                let all = gen_synthetic_with(
                    self.n_train + self.n_test,
                    self.features,
                    self.classes,
                    &mut rng,
                )?;
                Ok(all.split_at(self.n_train))
            }
        }
    }
}

/// One row of the per-round log.
///
/// `train_loss` is the mean cross entropy of the broadcast model `w_t` on the
/// clean training set; `test_accuracy` is measured on the model `w_{t+1}` the
/// round produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub weiszfeld_iters: usize,
    pub distorted_devices: usize,
    pub decode_failures: usize,
    /// The over-the-air solve was abandoned and `w_t` carried forward.
    pub aggregation_failed: bool,
    /// Largest `|x_k|^2 / (m P)` seen this round (0 outside AirComp mode).
    pub peak_power_ratio: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct Device {
    pub id: usize,
    pub shard: Shard,
    pub attack: AttackKind,
    rng: Stream,
}

/// Result of aggregating one round's local models.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub model: ModelParams,
    pub weiszfeld_iters: usize,
    pub distorted_devices: usize,
    pub decode_failures: usize,
    pub failed: bool,
    pub peak_power_ratio: f64,
}

/// Devices, data and random streams of a running experiment.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ExperimentConfig,
    devices: Vec<Device>,
    train: Dataset,
    test: Dataset,
    alphas: Vec<f64>,
    channel_rng: Stream,
    noise_rng: Stream,
}

impl Simulation {
    pub fn new(config: ExperimentConfig) -> Result<Self, Error> {
        config.validate()?;
        let (train, test) = config.load_datasets()?;
        Self::with_datasets(config, train, test)
    }

    /// Partitions `train` across the devices and poisons the Byzantine ones.
    /// The first `B` device indices are Byzantine.
    pub fn with_datasets(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self, Error> {
        config.validate()?;
        if train.n_features() != test.n_features() || train.n_classes() != test.n_classes() {
            return Err(Error::InvalidConfig {
                key: "dataset",
                reason: "train and test sets have different shapes".into(),
            });
        }
        let seeds = SeedStreams::new(config.seed);
        let shards = partition_iid_with(&train, config.devices, &mut seeds.partition())?;
        let devices: Vec<Device> = shards
            .into_iter()
            .map(|shard| {
                let id = shard.owner;
                let attack = if id < config.byzantine {
                    config.attack
                } else {
                    AttackKind::None
                };
                let shard = if attack == AttackKind::ClassFlip {
                    class_flip(&shard)
                } else {
                    shard
                };
                Device {
                    id,
                    shard,
                    attack,
                    rng: seeds.device(id),
                }
            })
            .collect();
        let alphas = match config.weights {
            WeightRule::Uniform => vec![1.0 / config.devices as f64; config.devices],
            WeightRule::SampleCount => {
                let total: usize = devices.iter().map(|d| d.shard.len()).sum();
                devices
                    .iter()
                    .map(|d| d.shard.len() as f64 / total as f64)
                    .collect()
            }
        };
        Ok(Self {
            devices,
            train,
            test,
            alphas,
            channel_rng: seeds.channel(),
            noise_rng: seeds.noise(),
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn dim(&self) -> usize {
        param_dim(self.train.n_features(), self.train.n_classes())
    }

    fn byzantine_ids(&self) -> Vec<usize> {
        self.devices
            .iter()
            .filter(|d| d.attack != AttackKind::None)
            .map(|d| d.id)
            .collect()
    }

    /// Local computation: one SGD step per device from `w`, followed by the
    /// weight-flip transform when the Byzantine devices use it.
    pub fn local_models(&mut self, w: &ModelParams) -> Result<Vec<ModelParams>, Error> {
        let (batch, lr) = (self.config.batch, self.config.lr);
        let honest = self
            .devices
            .iter_mut()
            .map(|d| local_comp(w, &d.shard, batch, lr, &mut d.rng))
            .collect::<Result<Vec<_>, _>>()?;
        let byzantine = self.byzantine_ids();
        if self.config.attack == AttackKind::WeightFlip && !byzantine.is_empty() {
            Ok(weight_flip(&honest, &byzantine)?)
        } else {
            Ok(honest)
        }
    }

    /// The aggregation problem the geometric-median modes solve.
    pub fn problem(&self, locals: Vec<ModelParams>) -> Result<AggregationProblem, Error> {
        Ok(AggregationProblem::new(
            locals,
            self.alphas.clone(),
            self.config.nu,
            self.config.max_iter,
            self.config.tol,
        )?)
    }

    /// Aggregates local models into the next global model, starting the
    /// geometric-median iteration at `w`.
    pub fn aggregate(&mut self, w: &ModelParams, locals: Vec<ModelParams>) -> Result<Aggregate, Error> {
        match self.config.mode {
            AggregationMode::Mean => Ok(Aggregate {
                model: mean_aggregate(&locals, &self.alphas)?,
                weiszfeld_iters: 0,
                distorted_devices: 0,
                decode_failures: 0,
                failed: false,
                peak_power_ratio: 0.0,
            }),
            AggregationMode::IdealGm => {
                let problem = self.problem(locals)?;
                let state = weiszfeld_ideal(w, &problem);
                Ok(Aggregate {
                    model: state.z,
                    weiszfeld_iters: state.iterations_used,
                    distorted_devices: 0,
                    decode_failures: 0,
                    failed: false,
                    peak_power_ratio: 0.0,
                })
            }
            AggregationMode::AirCompGm => {
                let problem = self.problem(locals)?;
                let air = self.config.air();
                match weiszfeld_aircomp(w, &problem, &air, &mut self.channel_rng, &mut self.noise_rng) {
                    Ok(out) => Ok(Aggregate {
                        model: out.state.z,
                        weiszfeld_iters: out.state.iterations_used,
                        distorted_devices: out.distorted,
                        decode_failures: out.decode_failures,
                        failed: false,
                        peak_power_ratio: out.peak_power_ratio,
                    }),
                    Err(AirError::Aborted {
                        iteration, failures, ..
                    }) => Ok(Aggregate {
                        model: w.clone(),
                        weiszfeld_iters: iteration,
                        distorted_devices: 0,
                        decode_failures: failures,
                        failed: true,
                        peak_power_ratio: 0.0,
                    }),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    /// One full round from `w`.
    pub fn run_round(&mut self, round: usize, w: &ModelParams) -> Result<(ModelParams, RoundMetrics), Error> {
        let start = Instant::now();
        let train_loss = loss(w, &Batch::full(&self.train)?)?;
        let locals = self.local_models(w)?;
        let agg = self.aggregate(w, locals)?;
        let eval = evaluate(&agg.model, &self.test)?;
        let metrics = RoundMetrics {
            round,
            train_loss,
            test_accuracy: eval.accuracy,
            weiszfeld_iters: agg.weiszfeld_iters,
            distorted_devices: agg.distorted_devices,
            decode_failures: agg.decode_failures,
            aggregation_failed: agg.failed,
            peak_power_ratio: agg.peak_power_ratio,
            wall_time: start.elapsed(),
        };
        Ok((agg.model, metrics))
    }

    /// Runs every configured round from `w = 0`, handing each row to
    /// `on_round` as soon as it is complete.
    pub fn run<F>(&mut self, mut on_round: F) -> Result<ExperimentOutcome, Error>
    where
        F: FnMut(&RoundMetrics) -> Result<(), Error>,
    {
        let mut w = ModelParams::zeros(self.dim());
        let mut metrics = Vec::with_capacity(self.config.rounds);
        for t in 0..self.config.rounds {
            let (next, row) = self.run_round(t, &w)?;
            on_round(&row)?;
            metrics.push(row);
            w = next;
        }
        Ok(ExperimentOutcome {
            metrics,
            final_model: w,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub final_model: ModelParams,
}

impl ExperimentOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.test_accuracy)
    }
}

/// Builds the simulation for `config` and runs it to completion.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, Error> {
    Simulation::new(config.clone())?.run(|_| Ok(()))
}
