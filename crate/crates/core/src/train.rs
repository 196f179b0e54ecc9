//! Mini-batch training with rmsprop and early stopping on dev loss.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{make_batches, BinaryLabels};
use crate::error::{Error, Result};
use crate::eval::{candidates, evaluate_lists, rank_candidates, score_examples};
use crate::model::{DropoutRates, Example, Network, Pass, TaskScores};
use crate::nn::{bce_loss, Real, RmsProp, RmsPropConfig};
use crate::{Task, TaskSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoppingMode {
    /// Stop on the summed dev loss and keep the best epoch.
    Global,
    /// Track every active task separately and keep one snapshot per task.
    PerTask,
}

impl StoppingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StoppingMode::Global => "global",
            StoppingMode::PerTask => "per_task",
        }
    }
}

impl FromStr for StoppingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "global" => Ok(StoppingMode::Global),
            "per_task" | "pertask" => Ok(StoppingMode::PerTask),
            other => Err(Error::InvalidArgument(format!(
                "unknown stopping mode `{other}` (expected global or per_task)"
            ))),
        }
    }
}

impl std::fmt::Display for StoppingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub dropout: DropoutRates,
    pub optimizer: RmsPropConfig,
    pub seed: u64,
    pub active_tasks: TaskSet,
    pub stopping_mode: StoppingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            patience: 10,
            max_epochs: 100,
            dropout: DropoutRates::default(),
            optimizer: RmsPropConfig::default(),
            seed: 0,
            active_tasks: TaskSet::ALL,
            stopping_mode: StoppingMode::Global,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        if self.active_tasks.is_empty() {
            return Err(Error::InvalidArgument("active_tasks must not be empty".into()));
        }
        for (name, rate) in [("dropout_input", self.dropout.input), ("dropout_hidden", self.dropout.hidden)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1), got {rate}")));
            }
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.epsilon > 0.0 && (0.0..1.0).contains(&o.rho)) {
            return Err(Error::InvalidArgument(format!("invalid rmsprop settings {o:?}")));
        }
        Ok(())
    }
}

/// Sum of the binary cross-entropies of the active tasks.
pub fn joint_loss<T: Real>(preds: [T; 3], labels: BinaryLabels, active: TaskSet) -> T {
    active
        .iter()
        .map(|task| bce_loss(preds[task.index()], labels.get(task)))
        .fold(T::zero(), |a, b| a + b)
}

/// Patience counter over a loss sequence. Only strict decreases count as
/// improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records the loss of `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn exhausted(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss over the training examples, with dropout.
    pub loss_train: f64,
    /// Mean joint dev loss over the active tasks.
    pub loss_dev: f64,
    /// Mean dev loss per task; `None` for tasks the network does not score.
    pub task_loss_dev: [Option<f64>; 3],
    pub map_dev: [Option<f64>; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop_epoch: usize,
    /// `(task, epoch)` of each returned snapshot; task is `None` in global mode.
    pub best_epochs: Vec<(Option<Task>, usize)>,
}

pub const REPORT_HEADER: &str = "epoch,loss_train,loss_dev,lossA_dev,lossB_dev,lossC_dev,mapA_dev,mapB_dev,mapC_dev";

fn opt_cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v:.6}");
    }
}

impl TrainReport {
    /// One row per epoch; cells for tasks the network does not score are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{},{:.6},{:.6}", r.epoch, r.loss_train, r.loss_dev);
            for v in r.task_loss_dev {
                opt_cell(&mut out, v);
            }
            for v in r.map_dev {
                opt_cell(&mut out, v);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot<N> {
    /// The task this snapshot was selected for; `None` in global mode.
    pub task: Option<Task>,
    pub epoch: usize,
    pub model: N,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<N> {
    pub snapshots: Vec<Snapshot<N>>,
    pub report: TrainReport,
}

impl<N> TrainOutcome<N> {
    pub fn snapshot(&self, task: Option<Task>) -> Option<&Snapshot<N>> {
        self.snapshots.iter().find(|s| s.task == task)
    }
}

/// Dev losses in inference mode: `(joint over active, per task)`.
pub fn dev_losses<T: Real, N: Network<T>>(
    model: &N,
    dev: &[Example],
    active: TaskSet,
) -> Result<(f64, [Option<f64>; 3])> {
    if dev.is_empty() {
        return Err(Error::Empty("development data".into()));
    }
    let scores = score_examples(model, dev)?;
    losses_from_scores(model.tasks(), dev, &scores, active)
}

fn losses_from_scores<T: Real>(
    scored: TaskSet,
    dev: &[Example],
    scores: &[TaskScores<T>],
    active: TaskSet,
) -> Result<(f64, [Option<f64>; 3])> {
    let mut sums = [0.0f64; 3];
    for (ex, preds) in dev.iter().zip(scores) {
        for task in scored.iter() {
            let p = preds[task.index()].ok_or_else(|| {
                Error::InvalidArgument(format!("network claims task {task} but gave no score"))
            })?;
            sums[task.index()] += bce_loss(p, ex.labels.get(task)).as_f64();
        }
    }
    let n = dev.len() as f64;
    let per_task = Task::ALL.map(|t| scored.contains(t).then(|| sums[t.index()] / n));
    let joint = active.iter().map(|t| sums[t.index()] / n).sum();
    if !f64::is_finite(joint) {
        return Err(Error::NonFinite(format!("dev loss is {joint}")));
    }
    Ok((joint, per_task))
}

fn maps_from_scores<T: Real>(scored: TaskSet, dev: &[Example], scores: &[TaskScores<T>]) -> Result<[Option<f64>; 3]> {
    let mut out = [None; 3];
    for task in scored.iter() {
        let lists = rank_candidates(&candidates(dev, scores, task)?, None)?;
        out[task.index()] = Some(evaluate_lists(&lists)?.map);
    }
    Ok(out)
}

/// One epoch of shuffled mini-batch training; returns the mean training loss.
fn run_epoch<T: Real, N: Network<T>>(
    model: &mut N,
    optimizer: &mut RmsProp<T>,
    train: &[Example],
    cfg: &TrainConfig,
    epoch: usize,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let order: Vec<usize> = (0..train.len()).collect();
    let batches = make_batches(&order, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
    let mut total = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        model.zero_grad();
        let scale = T::lit(1.0 / batch.len() as f64);
        let mut batch_loss = 0.0;
        for &i in batch {
            let mut pass = Pass::Training {
                dropout: cfg.dropout,
                rng: &mut *dropout_rng,
            };
            let losses = model.accumulate_gradients(&train[i], cfg.active_tasks, &mut pass, scale)?;
            batch_loss += losses.iter().map(|l| l.as_f64()).sum::<f64>();
        }
        if !batch_loss.is_finite() {
            let first = batch.first().map(|&i| train[i].id.as_str()).unwrap_or("");
            return Err(Error::NonFinite(format!(
                "training loss is {batch_loss} in epoch {epoch}, batch {} (first example `{first}`)",
                b + 1
            )));
        }
        total += batch_loss;
        optimizer.step(&mut model.parameters_mut())?;
    }
    Ok(total / train.len() as f64)
}

/// Trains `model` until early stopping or `max_epochs`.
///
/// Global mode returns one snapshot from the epoch with the lowest joint dev
/// loss. Per-task mode returns one snapshot per active task, each from that
/// task's lowest-dev-loss epoch, and stops once every active task has gone
/// `patience` epochs without improving.
pub fn train<T: Real, N: Network<T>>(
    mut model: N,
    train: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<N>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("development data".into()));
    }
    if !cfg.active_tasks.is_subset_of(&model.tasks()) {
        return Err(Error::InvalidArgument(format!(
            "network scores tasks {} but training asks for {}",
            model.tasks(),
            cfg.active_tasks
        )));
    }

    let mut optimizer = RmsProp::new(cfg.optimizer, &model.parameters_mut());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let tracked: Vec<Option<Task>> = match cfg.stopping_mode {
        StoppingMode::Global => vec![None],
        StoppingMode::PerTask => cfg.active_tasks.iter().map(Some).collect(),
    };
    let mut stoppers: Vec<EarlyStopping> = tracked.iter().map(|_| EarlyStopping::new(cfg.patience)).collect();
    let mut best: Vec<Option<Snapshot<N>>> = tracked.iter().map(|_| None).collect();
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.max_epochs {
        let loss_train = run_epoch(&mut model, &mut optimizer, train, cfg, epoch, &mut dropout_rng)?;
        let scores = score_examples(&model, dev)?;
        let (loss_dev, task_loss_dev) = losses_from_scores(model.tasks(), dev, &scores, cfg.active_tasks)?;
        let map_dev = maps_from_scores(model.tasks(), dev, &scores)?;
        log::info!("epoch {epoch}: train loss {loss_train:.5}, dev loss {loss_dev:.5}");
        report.epochs.push(EpochRecord {
            epoch,
            loss_train,
            loss_dev,
            task_loss_dev,
            map_dev,
        });
        report.stop_epoch = epoch;

        for ((task, stopper), slot) in tracked.iter().zip(stoppers.iter_mut()).zip(best.iter_mut()) {
            let loss = match task {
                None => loss_dev,
                Some(t) => task_loss_dev[t.index()].unwrap_or(f64::INFINITY),
            };
            if stopper.observe(epoch, loss) {
                *slot = Some(Snapshot {
                    task: *task,
                    epoch,
                    model: model.clone(),
                });
            }
        }
        if stoppers.iter().all(EarlyStopping::exhausted) {
            break;
        }
    }

    let snapshots: Vec<Snapshot<N>> = best
        .into_iter()
        .zip(&tracked)
        .map(|(s, task)| {
            s.ok_or_else(|| {
                Error::NonFinite(format!(
                    "no finite dev loss recorded for {}",
                    task.map_or("the joint loss".to_string(), |t| format!("task {t}"))
                ))
            })
        })
        .collect::<Result<_>>()?;
    report.best_epochs = snapshots.iter().map(|s| (s.task, s.epoch)).collect();
    Ok(TrainOutcome { snapshots, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_loss_examples() {
        let y = BinaryLabels { a: 1, b: 1, c: 1 };
        let l: f64 = joint_loss([0.5, 0.5, 0.5], y, TaskSet::ALL);
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 2.07944).abs() < 1e-5);
        let perfect: f64 = joint_loss([1.0, 1.0, 1.0], y, TaskSet::ALL);
        assert!(perfect < 1e-6);
        let bc = TaskSet::from_tasks([Task::B, Task::C]).unwrap();
        let a: f64 = joint_loss([0.1, 0.3, 0.6], y, bc);
        let b: f64 = joint_loss([0.9, 0.3, 0.6], y, bc);
        assert_eq!(a, b);
    }

    #[test]
    fn patience_arithmetic() {
        let mut s = EarlyStopping::new(10);
        let mut losses = vec![1.0, 0.9];
        losses.extend(std::iter::repeat(0.95).take(11));
        let mut stop = None;
        for (i, &l) in losses.iter().enumerate() {
            s.observe(i + 1, l);
            if s.exhausted() {
                stop = Some(i + 1);
                break;
            }
        }
        assert_eq!(stop, Some(12));
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best(), 0.9);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(1, 0.5));
        assert!(!s.observe(2, 0.5));
        assert!(s.exhausted());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig {
                dropout: DropoutRates { input: 1.0, hidden: 0.5 },
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!("per_task".parse::<StoppingMode>().unwrap(), StoppingMode::PerTask);
        assert_eq!("Global".parse::<StoppingMode>().unwrap(), StoppingMode::Global);
        assert!("best".parse::<StoppingMode>().is_err());
    }

    #[test]
    fn csv_layout() {
        let report = TrainReport {
            epochs: vec![EpochRecord {
                epoch: 1,
                loss_train: 0.5,
                loss_dev: 0.25,
                task_loss_dev: [None, Some(0.125), None],
                map_dev: [None, Some(100.0), None],
            }],
            stop_epoch: 1,
            best_epochs: vec![(Some(Task::B), 1)],
        };
        assert_eq!(
            report.to_csv(),
            format!("{REPORT_HEADER}\n1,0.500000,0.250000,,0.125000,,,100.000000,\n")
        );
    }
}
