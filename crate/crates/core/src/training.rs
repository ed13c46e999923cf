//! Experiment harness: stratified splits, the RMSprop training loop with
//! validation-F1 model selection, evaluation, and the ablation and sweep
//! grids.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::augment::{build_input_pairs, eval_pairs, AugmentSpec, InputPair};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{EpochTrace, MetricsReport};
use crate::model::{Embeddings, LossBreakdown, Model};
use crate::nn::Parameters;
use crate::optim::{self, RmsProp};
use crate::rng::{self, stream};
use crate::signal::{Label, Record};

/// Record indices of each partition, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class is shuffled on its own and cut by the
/// rounded fractions, keeping at least one record of every class in the
/// validation and test parts.
pub fn split_indices(labels: &[Label], fractions: [f64; 3], seed: u64) -> Result<Split> {
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for class in [Label::Control, Label::Depressed] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 3 {
            return Err(Error::invalid(
                "records",
                format!("class {class} has {} records, at least 3 are needed to split", idx.len()),
            ));
        }
        idx.shuffle(&mut rng::derived(seed, stream::SPLIT, class.index() as u64));
        let n = idx.len();
        let mut n_val = (math::round(n as f64 * fractions[1]) as usize).max(1);
        let mut n_test = (math::round(n as f64 * fractions[2]) as usize).max(1);
        while n_val + n_test > n - 1 {
            if n_val >= n_test {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        let n_train = n - n_val - n_test;
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test.extend_from_slice(&idx[n_train + n_val..n_train + n_val + n_test]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

pub fn select(records: &[Record], idx: &[usize]) -> Vec<Record> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

pub fn split_dataset(
    records: &[Record],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<Record>, Vec<Record>, Vec<Record>)> {
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let s = split_indices(&labels, fractions, seed)?;
    Ok((select(records, &s.train), select(records, &s.val), select(records, &s.test)))
}

/// Batches of `size` consecutive items from `order`; a trailing batch of a
/// single item joins the previous batch, since the contrastive loss needs
/// at least two pairs.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(2)).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Every parameter rounded to the nearest `f32`, so the in-memory model and
/// its `f32` checkpoint are the same function.
pub fn round_to_f32<P: Parameters + ?Sized>(model: &mut P) {
    model.visit_mut("", &mut |_, p| p.value.iter_mut().for_each(|x| *x = math::to_f32_precision(*x)));
}

pub fn init_model(cfg: &ExperimentConfig, records: &[Record]) -> Result<Model> {
    let first = records.first().ok_or_else(|| Error::invalid("records", "dataset is empty"))?;
    let (mx, my) = cfg.train.mode.sides();
    let spec = cfg.model_spec(first.signal(mx)?.channels(), first.signal(my)?.channels());
    let mut model = Model::new(spec, &mut rng::derived(cfg.train.seed, stream::INIT, 0))?;
    round_to_f32(&mut model);
    Ok(model)
}

/// Augmentation seed of one training run, mixing the augmentation seed
/// with the run seed.
fn augment_spec(cfg: &ExperimentConfig) -> AugmentSpec {
    AugmentSpec { seed: rng::derive_seed(cfg.augment.seed, stream::AUGMENT, cfg.train.seed), ..cfg.augment }
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: Model,
    /// Test metrics of `model`, with the full loss trace attached.
    pub test: MetricsReport,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub split: Split,
}

fn check_records(cfg: &ExperimentConfig, records: &[Record]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("records", "dataset is empty"));
    }
    let (mx, my) = cfg.train.mode.sides();
    for r in records {
        r.signal(mx)?;
        r.signal(my)?;
        cfg.augment.validate_for(&r.task)?;
    }
    Ok(())
}

fn mean(xs: &[LossBreakdown]) -> LossBreakdown {
    let n = xs.len() as f64;
    let mut m = LossBreakdown::default();
    for x in xs {
        m.total += x.total;
        m.msc += x.msc;
        m.sc += x.sc;
        m.fl += x.fl;
    }
    LossBreakdown { total: m.total / n, msc: m.msc / n, sc: m.sc / n, fl: m.fl / n }
}

/// Train on the split's training part, select the epoch with the best
/// validation macro F1 (first one on ties) and report test metrics of that
/// epoch's parameters.
pub fn train(cfg: &ExperimentConfig, records: &[Record]) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_records(cfg, records)?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let split = split_indices(&labels, cfg.train.split, cfg.train.seed)?;
    let train_set = select(records, &split.train);
    let mode = cfg.train.mode;
    let val_pairs = eval_pairs(&select(records, &split.val), mode)?;
    let test_pairs = eval_pairs(&select(records, &split.test), mode)?;

    let mut model = init_model(cfg, &train_set)?;
    let mut opt = RmsProp::new(cfg.train.lr, cfg.train.rms_decay, cfg.train.rms_eps);
    let aug = augment_spec(cfg);
    let seed = cfg.train.seed;

    let mut trace = Vec::new();
    let mut best = None;
    let mut best_val_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    for epoch in 0..cfg.train.epochs {
        let pairs = build_input_pairs(&train_set, mode, &aug, epoch as u64)?;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::derived(seed, stream::SHUFFLE, epoch as u64));
        let mut dropout = rng::derived(seed, stream::DROPOUT, epoch as u64);
        let mut losses = Vec::new();
        for (b, idx) in batches(&order, cfg.train.batch_size).iter().enumerate() {
            let batch: Vec<InputPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
            let loss = match model.loss_and_grad(&batch, Some(&mut dropout)) {
                Ok(l) if l.total.is_finite() => l,
                Ok(_) | Err(Error::Numeric(_)) => return Err(Error::Diverged { epoch, batch: b }),
                Err(e) => return Err(e),
            };
            opt.step(&mut model);
            round_to_f32(&mut model);
            losses.push(loss);
        }
        let val_f1 = model.evaluate(&val_pairs)?.f1;
        let m = mean(&losses);
        trace.push(EpochTrace { epoch, total: m.total, msc: m.msc, sc: m.sc, fl: m.fl, val_f1 });
        if val_f1 > best_val_f1 {
            best_val_f1 = val_f1;
            best_epoch = epoch;
            best = Some(optim::snapshot(&model));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.train.patience {
                break;
            }
        }
    }
    if let Some(snap) = &best {
        optim::restore(&mut model, snap);
    }
    let mut test = model.evaluate(&test_pairs)?;
    test.trace = trace;
    Ok(TrainOutcome { model, test, best_epoch, best_val_f1, split })
}

/// Metrics of a trained model on records, dropout disabled.
pub fn evaluate(model: &Model, records: &[Record]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::invalid("records", "cannot evaluate an empty record set"));
    }
    model.evaluate(&eval_pairs(records, model.mode())?)
}

/// `(subject_id, label, embeddings)` for every record.
pub fn embed(model: &Model, records: &[Record]) -> Result<Vec<(String, Label, Embeddings)>> {
    eval_pairs(records, model.mode())?
        .iter()
        .map(|p| Ok((p.subject_id.clone(), p.label, model.embed(p)?)))
        .collect()
}

/// One row of the loss-term ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub msc: bool,
    pub sc: bool,
    pub config: ExperimentConfig,
}

/// The four loss combinations: FL only, MSC+FL, SC+FL, all. Disabled terms
/// get weight 0; the last row is the base config unchanged.
pub fn ablation_rows(base: &ExperimentConfig) -> Vec<AblationRow> {
    [("FL", false, false), ("MSC+FL", true, false), ("SC+FL", false, true), ("MSC+SC+FL", true, true)]
        .into_iter()
        .map(|(name, msc, sc)| {
            let mut config = base.clone();
            if !msc {
                config.head.lambda1 = 0.0;
            }
            if !sc {
                config.head.lambda2 = 0.0;
            }
            AblationRow { name, msc, sc, config }
        })
        .collect()
}

pub const SWEEP_N_SCALE: [usize; 3] = [4, 5, 6];
pub const SWEEP_N_TRANS: [usize; 3] = [1, 2, 3];
pub const SWEEP_N_HEAD: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub n_scale: usize,
    pub n_trans: usize,
    pub n_head: usize,
    pub config: ExperimentConfig,
    /// Why the grid point cannot be built, if it cannot.
    pub invalid: Option<String>,
}

/// The full `N_scale x N_trans x N_head` grid over a base config.
pub fn sweep_cells(base: &ExperimentConfig) -> Vec<SweepCell> {
    let mut out = Vec::new();
    for &n_scale in &SWEEP_N_SCALE {
        for &n_trans in &SWEEP_N_TRANS {
            for &n_head in &SWEEP_N_HEAD {
                let mut config = base.clone();
                config.model.n_scale = n_scale;
                config.semantic.n_trans = n_trans;
                config.semantic.n_head = n_head;
                let invalid = config.validate().err().map(|e| format!("{e}"));
                out.push(SweepCell { n_scale, n_trans, n_head, config, invalid });
            }
        }
    }
    out
}
