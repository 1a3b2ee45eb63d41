//! Experiment driver: trains networks under the three protocols.
//!
//! A subject-dependent run fits one model per subject on that subject's
//! own trials. A subject-independent run holds each subject out in turn
//! and trains on everyone else. A transfer run takes a pretrained
//! held-out-subject model, freezes its feature extractor, and retrains
//! the dense head on a small adaptation share of the held-out subject.
//!
//! Every fold draws its randomness from a string-derived stream of the
//! plan seed, so fold results do not depend on scheduling order and a
//! rerun of the same plan is bit-identical.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::split::{split_dep, split_loso, split_transfer, SplitSets, TlFraction};
use crate::data::{class_counts, SensorConfig, WindowSample, WindowSettings};
use crate::error::{Error, Result};
use crate::eval::{evaluate_network, stack_windows, EvalReport};
use crate::layers::Mode;
use crate::model::{build_custom_network, build_network, ArchId, Network, NetworkConfig};
use crate::optim::{weighted_cross_entropy, ClassWeights, Optimizer, OptimizerKind};
use crate::tensor::{Rng, Scalar, Tensor};

/// The three experiment protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Dep,
    Ind,
    Transfer,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Dep => "dep",
            Protocol::Ind => "ind",
            Protocol::Transfer => "transfer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dep" => Ok(Protocol::Dep),
            "ind" => Ok(Protocol::Ind),
            "transfer" => Ok(Protocol::Transfer),
            other => Err(Error::Config(format!(
                "unknown protocol '{other}' (expected dep, ind, or transfer)"
            ))),
        }
    }
}

/// Everything a run needs to be reproduced.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub protocol: Protocol,
    pub sensor_config: SensorConfig,
    pub arch: ArchId,
    pub net: NetworkConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub window: WindowSettings,
    pub tl_fraction: Option<TlFraction>,
    pub tl_reinit_head: bool,
}

impl ExperimentPlan {
    /// Subject-dependent defaults: 30 epochs, batch 512, Adam at 1e-4.
    pub fn dep(sensor_config: SensorConfig, seed: u64) -> Self {
        ExperimentPlan {
            protocol: Protocol::Dep,
            sensor_config,
            arch: ArchId::Dep,
            net: NetworkConfig::dep(),
            epochs: 30,
            batch_size: 512,
            lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed,
            window: WindowSettings::default(),
            tl_fraction: None,
            tl_reinit_head: false,
        }
    }

    /// Subject-independent defaults: 35 epochs, batch 1024, Adam at 1.5e-4.
    pub fn ind(sensor_config: SensorConfig, seed: u64) -> Self {
        ExperimentPlan {
            protocol: Protocol::Ind,
            sensor_config,
            arch: ArchId::Ind,
            net: NetworkConfig::ind(),
            epochs: 35,
            batch_size: 1024,
            lr: 1.5e-4,
            optimizer: OptimizerKind::Adam,
            seed,
            window: WindowSettings::default(),
            tl_fraction: None,
            tl_reinit_head: false,
        }
    }

    /// Transfer defaults: 100 epochs, batch 256, SGD at 1e-4, head
    /// re-initialized, adapting on 10 percent of the subject.
    pub fn transfer(sensor_config: SensorConfig, seed: u64) -> Self {
        ExperimentPlan {
            protocol: Protocol::Transfer,
            sensor_config,
            arch: ArchId::Ind,
            net: NetworkConfig::ind(),
            epochs: 100,
            batch_size: 256,
            lr: 1e-4,
            optimizer: OptimizerKind::Sgd,
            seed,
            window: WindowSettings::default(),
            tl_fraction: Some(TlFraction::F10),
            tl_reinit_head: true,
        }
    }

    pub fn for_protocol(protocol: Protocol, sensor_config: SensorConfig, seed: u64) -> Self {
        match protocol {
            Protocol::Dep => ExperimentPlan::dep(sensor_config, seed),
            Protocol::Ind => ExperimentPlan::ind(sensor_config, seed),
            Protocol::Transfer => ExperimentPlan::transfer(sensor_config, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.protocol == Protocol::Transfer && self.tl_fraction.is_none() {
            return Err(Error::Config(
                "transfer protocol needs a tl_fraction (5, 10, 15, or 20)".into(),
            ));
        }
        self.net.validate()?;
        if let Some(canonical) = NetworkConfig::for_arch(self.arch) {
            if self.net != canonical {
                return Err(Error::Config(format!(
                    "network config does not match the {:?} reference architecture",
                    self.arch
                )));
            }
        }
        Ok(())
    }

    /// The protocol tag written into reports: `dep`, `ind`, or
    /// `transfer-<percent>`.
    pub fn protocol_tag(&self) -> String {
        match (self.protocol, self.tl_fraction) {
            (Protocol::Transfer, Some(f)) => format!("transfer-{}", f.percent()),
            (p, _) => p.name().to_string(),
        }
    }

    fn build_net<T: Scalar>(&self, in_channels: usize, window_len: usize, rng: &mut Rng) -> Result<Network<T>> {
        match self.arch {
            ArchId::Custom => build_custom_network(self.net.clone(), in_channels, window_len, rng),
            arch => build_network(arch, in_channels, window_len, rng),
        }
    }
}

/// Per-epoch training history. Wall time is measured but kept out of the
/// serialized form so logs from identical runs stay byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_error: Vec<f64>,
    pub best_epoch: usize,
    #[serde(skip)]
    pub wall_secs: f64,
}

fn gather_batch<T: Scalar>(
    samples: &[WindowSample],
    idx: &[usize],
) -> Result<(Tensor<T>, Vec<usize>)> {
    let picked: Vec<WindowSample> = idx.iter().map(|&i| samples[i].clone()).collect();
    let x = stack_windows::<T>(&picked)?;
    let y = picked.iter().map(|s| s.label.index()).collect();
    Ok((x, y))
}

/// Sum of the class weights a batch of targets selects; the denominator
/// of the weighted-mean loss.
fn selected_weight<T: Scalar>(targets: &[usize], weights: &ClassWeights<T>) -> f64 {
    targets
        .iter()
        .map(|&y| weights.as_slice()[y].to_f64())
        .sum()
}

/// Trains a network in place and returns its history.
///
/// Each epoch shuffles the training set, consumes it in `batch_size`
/// chunks (final partial chunk included), and then scores the validation
/// set. The parameters finally kept are those of the epoch with the
/// lowest validation loss. Class weights come from the training split
/// alone; the same weights score the validation set.
pub fn train_network<T: Scalar>(
    net: &mut Network<T>,
    plan: &ExperimentPlan,
    train: &[WindowSample],
    val: &[WindowSample],
    rng: &mut Rng,
) -> Result<TrainLog> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let start = std::time::Instant::now();
    let weights = ClassWeights::<T>::from_counts(&class_counts(train))?;
    if selected_weight(&val.iter().map(|s| s.label.index()).collect::<Vec<_>>(), &weights) == 0.0 {
        return Err(Error::InsufficientData(
            "validation set shares no classes with the training set".into(),
        ));
    }
    let mut opt = Optimizer::<T>::new(plan.optimizer, plan.lr)?;

    let mut log = TrainLog {
        train_loss: Vec::with_capacity(plan.epochs),
        val_loss: Vec::with_capacity(plan.epochs),
        val_error: Vec::with_capacity(plan.epochs),
        best_epoch: 0,
        wall_secs: 0.0,
    };
    let mut best_loss = f64::INFINITY;
    let mut best_params: Option<Vec<Tensor<T>>> = None;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..plan.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for batch_idx in order.chunks(plan.batch_size) {
            let (x, y) = gather_batch::<T>(train, batch_idx)?;
            let logits = net.forward(&x, Mode::Train, rng)?;
            let (loss, dlogits) = weighted_cross_entropy(&logits, &y, &weights)?;
            net.zero_grad();
            net.backward(&dlogits)?;
            opt.step(&mut net.param_slots())?;
            let w = selected_weight(&y, &weights);
            loss_sum += loss.to_f64() * w;
            weight_sum += w;
        }
        log.train_loss.push(loss_sum / weight_sum);

        let (val_loss, val_error) = score(net, val, &weights, plan.batch_size)?;
        log.val_loss.push(val_loss);
        log.val_error.push(val_error);
        if val_loss < best_loss {
            best_loss = val_loss;
            log.best_epoch = epoch;
            best_params = Some(net.snapshot());
        }
    }
    net.restore(&best_params.expect("at least one epoch ran"))?;
    log.wall_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Weighted cross-entropy loss and plain error rate over a fixed set,
/// evaluated batch by batch. Batches whose labels all carry zero weight
/// contribute to the error rate but not the loss.
fn score<T: Scalar>(
    net: &mut Network<T>,
    samples: &[WindowSample],
    weights: &ClassWeights<T>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut weight_sum = 0.0;
    let mut wrong = 0usize;
    for chunk in samples.chunks(batch_size) {
        let x = stack_windows::<T>(chunk)?;
        let y: Vec<usize> = chunk.iter().map(|s| s.label.index()).collect();
        let logits = net.infer(&x)?;
        let classes = logits.shape()[1];
        for (row, &truth) in y.iter().enumerate() {
            let scores = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0usize;
            for (i, &v) in scores.iter().enumerate() {
                if v > scores[best] {
                    best = i;
                }
            }
            wrong += (best != truth) as usize;
        }
        let w = selected_weight(&y, weights);
        if w > 0.0 {
            let (loss, _) = weighted_cross_entropy(&logits, &y, weights)?;
            loss_sum += loss.to_f64() * w;
            weight_sum += w;
        }
    }
    Ok((loss_sum / weight_sum, wrong as f64 / samples.len() as f64))
}

/// Outcome of one fold: the trained model, its history, and its report.
#[derive(Debug)]
pub struct SubjectRun<T: Scalar> {
    pub subject_id: String,
    pub network: Network<T>,
    pub log: TrainLog,
    pub report: EvalReport,
}

fn subjects_of(samples: &[WindowSample]) -> Vec<String> {
    let mut ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn windows_of(samples: &[WindowSample], subject: &str) -> Vec<WindowSample> {
    samples
        .iter()
        .filter(|s| s.subject_id == subject)
        .cloned()
        .collect()
}

fn input_dims(samples: &[WindowSample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no windows to train on".into()))?;
    Ok((first.x.shape()[0], first.x.shape()[1]))
}

fn run_fold<T: Scalar>(
    plan: &ExperimentPlan,
    subject: &str,
    splits: SplitSets,
    mut rng: Rng,
) -> Result<SubjectRun<T>> {
    let (in_ch, win) = input_dims(&splits.train)?;
    let mut net = plan.build_net::<T>(in_ch, win, &mut rng)?;
    let log = train_network(&mut net, plan, &splits.train, &splits.val, &mut rng)?;
    let report = evaluate_network(
        &mut net,
        &splits.test,
        subject,
        plan.sensor_config.name(),
        &plan.protocol_tag(),
    )?;
    Ok(SubjectRun {
        subject_id: subject.to_string(),
        network: net,
        log,
        report,
    })
}

/// Subject-dependent protocol: one model per subject, trained and tested
/// on that subject's own trials. Folds run in parallel; results come
/// back sorted by subject.
pub fn run_dep<T: Scalar>(
    samples: &[WindowSample],
    plan: &ExperimentPlan,
) -> Result<Vec<SubjectRun<T>>> {
    plan.validate()?;
    let subjects = subjects_of(samples);
    if subjects.is_empty() {
        return Err(Error::InsufficientData("dataset holds no windows".into()));
    }
    let mut runs: Vec<SubjectRun<T>> = subjects
        .par_iter()
        .map(|subject| {
            let mut rng = Rng::derive(plan.seed, &format!("dep/{subject}"));
            let own = windows_of(samples, subject);
            let splits = split_dep(own, &mut rng)?;
            run_fold(plan, subject, splits, rng)
        })
        .collect::<Result<_>>()?;
    runs.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(runs)
}

/// Leave-one-subject-out protocol: for every subject, train on all the
/// others and test on the holdout. The returned models are the
/// pretrained inputs of the transfer protocol.
pub fn run_loso<T: Scalar>(
    samples: &[WindowSample],
    plan: &ExperimentPlan,
) -> Result<Vec<SubjectRun<T>>> {
    plan.validate()?;
    let subjects = subjects_of(samples);
    let mut runs: Vec<SubjectRun<T>> = subjects
        .par_iter()
        .map(|subject| {
            let mut rng = Rng::derive(plan.seed, &format!("ind/{subject}"));
            let splits = split_loso(samples, subject, &mut rng)?;
            run_fold(plan, subject, splits, rng)
        })
        .collect::<Result<_>>()?;
    runs.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(runs)
}

/// Transfer protocol for one subject: freeze the pretrained model's
/// feature extractor, retrain the head on the subject's adaptation
/// share, and test on the rest of their trials.
pub fn run_transfer<T: Scalar>(
    pretrained: &Network<T>,
    samples: &[WindowSample],
    subject: &str,
    plan: &ExperimentPlan,
) -> Result<SubjectRun<T>> {
    plan.validate()?;
    let fraction = plan
        .tl_fraction
        .ok_or_else(|| Error::Config("transfer run needs a tl_fraction".into()))?;
    let own = windows_of(samples, subject);
    let mut rng = Rng::derive(plan.seed, &format!("tl{}/{subject}", fraction.percent()));
    let mut net = pretrained.transfer_surgery(plan.tl_reinit_head, &mut rng)?;
    let splits = split_transfer(own, fraction, &mut rng)?;
    let log = train_network(&mut net, plan, &splits.train, &splits.val, &mut rng)?;
    let report = evaluate_network(
        &mut net,
        &splits.test,
        subject,
        plan.sensor_config.name(),
        &plan.protocol_tag(),
    )?;
    Ok(SubjectRun {
        subject_id: subject.to_string(),
        network: net,
        log,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_windows, ModeLabel};
    use crate::synth::{gen_recordings, SynthConfig};

    fn tiny_plan(protocol: Protocol) -> ExperimentPlan {
        let mut plan = ExperimentPlan::for_protocol(protocol, SensorConfig::UnilateralThigh, 7);
        plan.arch = ArchId::Custom;
        plan.net = NetworkConfig {
            block_channels: vec![4, 8],
            hidden_width: 16,
            classes: 10,
        };
        plan.epochs = 3;
        plan.batch_size = 64;
        plan.window = WindowSettings {
            window_ms: 200.0,
            stride_ms: 100.0,
            transition_ms: 500.0,
        };
        plan
    }

    fn synth_windows(subjects: usize, trials: usize, settings: &WindowSettings) -> Vec<WindowSample> {
        let cfg = SynthConfig {
            subjects,
            trials_per_subject: trials,
            sample_rate_hz: 50.0,
            seed: 11,
            ..SynthConfig::default()
        };
        let mut windows = Vec::new();
        for rec in gen_recordings(&cfg) {
            windows.extend(
                extract_windows(&rec, SensorConfig::UnilateralThigh, settings).unwrap(),
            );
        }
        windows
    }

    #[test]
    fn presets_match_the_table() {
        let dep = ExperimentPlan::dep(SensorConfig::All, 0);
        assert_eq!((dep.epochs, dep.batch_size), (30, 512));
        assert_eq!(dep.lr, 1e-4);
        assert_eq!(dep.optimizer, OptimizerKind::Adam);

        let ind = ExperimentPlan::ind(SensorConfig::All, 0);
        assert_eq!((ind.epochs, ind.batch_size), (35, 1024));
        assert_eq!(ind.lr, 1.5e-4);
        assert_eq!(ind.optimizer, OptimizerKind::Adam);

        let tl = ExperimentPlan::transfer(SensorConfig::All, 0);
        assert_eq!((tl.epochs, tl.batch_size), (100, 256));
        assert_eq!(tl.lr, 1e-4);
        assert_eq!(tl.optimizer, OptimizerKind::Sgd);
        assert!(tl.tl_reinit_head);
        assert_eq!(tl.protocol_tag(), "transfer-10");
    }

    #[test]
    fn plan_validation_fails_closed() {
        let mut p = ExperimentPlan::dep(SensorConfig::All, 0);
        p.epochs = 0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));

        let mut p = ExperimentPlan::dep(SensorConfig::All, 0);
        p.lr = -1.0;
        assert!(p.validate().is_err());

        let mut p = ExperimentPlan::transfer(SensorConfig::All, 0);
        p.tl_fraction = None;
        assert!(p.validate().is_err());

        // a dep-tagged plan with a doctored channel list is rejected
        let mut p = ExperimentPlan::dep(SensorConfig::All, 0);
        p.net.block_channels = vec![1, 2];
        assert!(p.validate().is_err());
    }

    #[test]
    fn training_is_deterministic_and_keeps_the_best_epoch() {
        let plan = tiny_plan(Protocol::Dep);
        let windows = synth_windows(1, 4, &plan.window);
        let splits = split_dep(windows.clone(), &mut Rng::derive(plan.seed, "s")).unwrap();
        let (c, w) = input_dims(&splits.train).unwrap();

        let mut net_a = plan.build_net::<f32>(c, w, &mut Rng::seed(3)).unwrap();
        let mut rng_a = Rng::seed(4);
        let log_a = train_network(&mut net_a, &plan, &splits.train, &splits.val, &mut rng_a).unwrap();

        let mut net_b = plan.build_net::<f32>(c, w, &mut Rng::seed(3)).unwrap();
        let mut rng_b = Rng::seed(4);
        let log_b = train_network(&mut net_b, &plan, &splits.train, &splits.val, &mut rng_b).unwrap();

        assert_eq!(log_a.train_loss, log_b.train_loss);
        assert_eq!(log_a.val_loss, log_b.val_loss);
        assert_eq!(net_a.snapshot(), net_b.snapshot());

        assert_eq!(log_a.train_loss.len(), plan.epochs);
        let best = log_a.best_epoch;
        let min = log_a.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(log_a.val_loss[best], min);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let plan = tiny_plan(Protocol::Dep);
        let windows = synth_windows(1, 4, &plan.window);
        let (c, w) = input_dims(&windows).unwrap();
        let mut net = plan.build_net::<f32>(c, w, &mut Rng::seed(0)).unwrap();
        let e = train_network(&mut net, &plan, &[], &windows, &mut Rng::seed(0)).unwrap_err();
        assert!(matches!(e, Error::InsufficientData(_)));
        let e = train_network(&mut net, &plan, &windows, &[], &mut Rng::seed(0)).unwrap_err();
        assert!(matches!(e, Error::InsufficientData(_)));
    }

    #[test]
    fn dep_produces_one_sorted_run_per_subject() {
        let plan = tiny_plan(Protocol::Dep);
        let windows = synth_windows(2, 4, &plan.window);
        let runs = run_dep::<f32>(&windows, &plan).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].subject_id, "S01");
        assert_eq!(runs[1].subject_id, "S02");
        for run in &runs {
            assert_eq!(run.report.protocol, "dep");
            assert_eq!(run.report.sensor_config, "unilateral");
            assert_eq!(run.report.subject_id, run.subject_id);
        }
        // rerun: bit-identical reports
        let again = run_dep::<f32>(&windows, &plan).unwrap();
        for (a, b) in runs.iter().zip(&again) {
            assert_eq!(a.report, b.report);
            assert_eq!(a.log.val_loss, b.log.val_loss);
        }
    }

    #[test]
    fn loso_tests_only_the_held_out_subject() {
        let mut plan = tiny_plan(Protocol::Ind);
        plan.epochs = 2;
        let windows = synth_windows(3, 2, &plan.window);
        let runs = run_loso::<f32>(&windows, &plan).unwrap();
        assert_eq!(runs.len(), 3);
        for run in &runs {
            assert_eq!(run.report.protocol, "ind");
            let n_test = windows
                .iter()
                .filter(|s| s.subject_id == run.subject_id)
                .count() as u64;
            assert_eq!(run.report.n_ss + run.report.n_ts, n_test);
        }
    }

    #[test]
    fn transfer_freezes_features_and_moves_the_head() {
        let mut plan = tiny_plan(Protocol::Ind);
        plan.epochs = 2;
        let windows = synth_windows(3, 4, &plan.window);
        let pretrained = run_loso::<f32>(&windows, &plan).unwrap();

        let mut tl_plan = tiny_plan(Protocol::Transfer);
        tl_plan.epochs = 2;
        tl_plan.tl_fraction = Some(TlFraction::F20);
        let run = run_transfer(&pretrained[0].network, &windows, "S01", &tl_plan).unwrap();
        assert_eq!(run.report.protocol, "transfer-20");

        // feature extractor bit-identical, head not
        let before = pretrained[0].network.params();
        let after = run.network.params();
        let mut head_moved = false;
        for ((name_b, val_b), (name_a, val_a)) in before.iter().zip(after.iter()) {
            assert_eq!(name_b, name_a);
            if name_b.starts_with("block") {
                assert_eq!(val_b.data(), val_a.data(), "{name_b} should be frozen");
            } else if val_b.data() != val_a.data() {
                head_moved = true;
            }
        }
        assert!(head_moved);
        // test split excludes the adaptation share
        let own = windows.iter().filter(|s| s.subject_id == "S01").count() as u64;
        assert!(run.report.n_ss + run.report.n_ts < own);
    }

    #[test]
    fn class_weights_come_from_the_training_split_only() {
        // a validation set missing most classes still scores: weights are
        // defined by the train split, and a val set with no shared class
        // is refused
        let plan = tiny_plan(Protocol::Dep);
        let windows = synth_windows(1, 4, &plan.window);
        let splits = split_dep(windows, &mut Rng::seed(1)).unwrap();
        let (c, w) = input_dims(&splits.train).unwrap();
        let mut net = plan.build_net::<f32>(c, w, &mut Rng::seed(0)).unwrap();
        let lw_only: Vec<WindowSample> = splits
            .val
            .iter()
            .filter(|s| s.label == ModeLabel::Lw)
            .cloned()
            .collect();
        assert!(!lw_only.is_empty());
        train_network(&mut net, &plan, &splits.train, &lw_only, &mut Rng::seed(2)).unwrap();
    }
}
