//! Training loop: seeded shuffling, augmentation, Adam on softmax
//! cross-entropy, per-epoch validation and best-model retention.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, to_input, AugmentConfig, AugmentDraw};
use crate::densenet::{argmax_rows, DenseNet};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, AdamConfig, AdamState, Tensor4};
use crate::{par, ClassLabel, NUM_CLASSES};

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_LR: f64 = 1e-3;

const SHUFFLE_STREAM: u64 = 0;
const AUGMENT_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidInput(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Labelled images addressed by index.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn id(&self, i: usize) -> &str;
    fn label(&self, i: usize) -> ClassLabel;
    fn load(&self, i: usize) -> Result<RgbImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples held in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySamples {
    pub items: Vec<(String, ClassLabel, Arc<RgbImage>)>,
}

impl SampleSource for MemorySamples {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn id(&self, i: usize) -> &str {
        &self.items[i].0
    }

    fn label(&self, i: usize) -> ClassLabel {
        self.items[i].1
    }

    fn load(&self, i: usize) -> Result<RgbImage> {
        Ok(self.items[i].2.as_ref().clone())
    }
}

/// Patches stored as `{dir}/{patch_id}.png`.
#[derive(Clone, Debug)]
pub struct PatchDir {
    pub dir: PathBuf,
    pub entries: Vec<(String, ClassLabel)>,
}

impl SampleSource for PatchDir {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn id(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    fn label(&self, i: usize) -> ClassLabel {
        self.entries[i].1
    }

    fn load(&self, i: usize) -> Result<RgbImage> {
        let id = &self.entries[i].0;
        crate::raster::read_image(&self.dir.join(format!("{id}.png")))
            .map_err(|e| Error::InvalidInput(format!("unreadable patch {id}: {e}")))
    }
}

/// Index ranges of each batch; the final partial batch is kept.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(batch_size)).map(|b| b * batch_size..((b + 1) * batch_size).min(n)).collect()
}

fn load_batch(
    source: &dyn SampleSource,
    indices: &[usize],
    draws: Option<&[AugmentDraw]>,
    size: usize,
) -> Result<(Tensor4<f32>, Vec<usize>)> {
    let slots: Vec<usize> = (0..indices.len()).collect();
    let inputs = par::map(&slots, |&k| -> Result<Vec<f32>> {
        let img = source.load(indices[k])?;
        Ok(match draws {
            Some(d) => to_input(&augment(&img, &d[k]), size),
            None => to_input(&img, size),
        })
    });
    let mut data = Vec::with_capacity(indices.len() * 3 * size * size);
    for input in inputs {
        data.extend(input?);
    }
    let labels = indices.iter().map(|&i| source.label(i).index()).collect();
    Ok((Tensor4::from_vec([indices.len(), 3, size, size], data)?, labels))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitEval {
    pub loss: f64,
    pub accuracy: f64,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

/// Eval-mode pass over a whole split without augmentation.
pub fn evaluate_split(model: &DenseNet<f32>, source: &dyn SampleSource, batch_size: usize) -> Result<SplitEval> {
    if source.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
    }
    let size = model.config.input_size;
    let mut loss_sum = 0.0;
    let (mut labels, mut predictions) = (Vec::new(), Vec::new());
    for r in batch_ranges(source.len(), batch_size.max(1)) {
        let idx: Vec<usize> = r.collect();
        let (x, y) = load_batch(source, &idx, None, size)?;
        let logits = model.forward_eval(&x)?;
        let ce = softmax_cross_entropy(&logits, &y, NUM_CLASSES)?;
        loss_sum += ce.per_sample.iter().sum::<f64>();
        predictions.extend(argmax_rows(&logits, NUM_CLASSES));
        labels.extend(y);
    }
    let correct = labels.iter().zip(&predictions).filter(|(a, b)| a == b).count();
    Ok(SplitEval {
        loss: loss_sum / labels.len() as f64,
        accuracy: correct as f64 / labels.len() as f64,
        labels,
        predictions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    /// Accuracy on the augmented training batches, in training mode.
    pub accuracy: f64,
    pub steps: usize,
}

/// Stateful trainer; one call to [`Trainer::run_epoch`] is one epoch.
pub struct Trainer {
    pub model: DenseNet<f32>,
    config: TrainConfig,
    adam: AdamState<f32>,
    shuffle_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: DenseNet<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(s);
            r
        };
        let adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() });
        Ok(Trainer {
            model,
            adam,
            shuffle_rng: stream(SHUFFLE_STREAM),
            augment_rng: stream(AUGMENT_STREAM),
            config,
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn run_epoch(&mut self, train: &dyn SampleSource) -> Result<EpochStats> {
        if train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let size = self.model.config.input_size;
        let (mut loss_sum, mut correct, mut steps) = (0.0, 0usize, 0usize);
        for (b, r) in batch_ranges(order.len(), self.config.batch_size).into_iter().enumerate() {
            let idx = &order[r];
            let draws: Vec<AugmentDraw> =
                idx.iter().map(|_| AugmentDraw::sample(&self.config.augment, &mut self.augment_rng)).collect();
            let (x, y) = load_batch(train, idx, Some(&draws), size)?;
            self.model.zero_grad();
            let (logits, tape) = self.model.forward_train(&x)?;
            let ce = softmax_cross_entropy(&logits, &y, NUM_CLASSES)
                .ok()
                .filter(|ce| ce.loss.is_finite())
                .ok_or_else(|| Error::NonFinite(format!("training loss at epoch {} batch {}", self.epoch, b + 1)))?;
            self.model.backward(tape, &ce.grad)?;
            self.adam.step(&mut self.model.params_mut());
            loss_sum += ce.per_sample.iter().sum::<f64>();
            correct += argmax_rows(&logits, NUM_CLASSES).iter().zip(&y).filter(|(p, t)| p == t).count();
            steps += 1;
        }
        let n = order.len() as f64;
        Ok(EpochStats { loss: loss_sum / n, accuracy: correct as f64 / n, steps })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_model: DenseNet<f32>,
    pub last_model: DenseNet<f32>,
    pub optimizer_steps: usize,
}

impl TrainOutcome {
    pub fn best_record(&self) -> &EpochRecord {
        &self.records[self.best_epoch - 1]
    }
}

/// Epoch with the highest validation accuracy; ties go to the earliest.
pub fn best_epoch(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in records {
        if best.is_none_or(|b| r.val_acc > b.val_acc) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

pub fn train(
    model: DenseNet<f32>,
    train_set: &dyn SampleSource,
    val_set: &dyn SampleSource,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if val_set.is_empty() {
        return Err(Error::InvalidInput("validation split is empty".into()));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, DenseNet<f32>)> = None;
    let mut best_epoch = 0;
    let mut steps = 0;
    for _ in 0..config.epochs {
        let stats = trainer.run_epoch(train_set)?;
        steps += stats.steps;
        let val = evaluate_split(&trainer.model, val_set, config.batch_size)?;
        let rec = EpochRecord {
            epoch: trainer.epochs_run(),
            train_loss: stats.loss,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        log::info!(
            "epoch {} train_loss {:.4} val_loss {:.4} val_acc {:.4}",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            rec.val_acc
        );
        if best.as_ref().is_none_or(|(acc, _)| rec.val_acc > *acc) {
            best = Some((rec.val_acc, trainer.model.clone()));
            best_epoch = rec.epoch;
        }
        on_epoch(&rec);
        records.push(rec);
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome { records, best_epoch, best_model, last_model: trainer.model, optimizer_steps: steps })
}

pub fn write_epochs_csv<W: Write>(w: W, records: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| Error::InvalidInput(format!("writing epoch records: {e}"));
    out.write_record(["epoch", "train_loss", "val_loss", "val_acc"]).map_err(wrap)?;
    for r in records {
        out.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.train_loss),
            format!("{:.6}", r.val_loss),
            format!("{:.6}", r.val_acc),
        ])
        .map_err(wrap)?;
    }
    out.flush().map_err(|e| Error::InvalidInput(format!("writing epoch records: {e}")))
}

/// Loss curves (left axis) and validation accuracy (right axis) as SVG.
pub fn loss_curve_svg(records: &[EpochRecord]) -> String {
    let (w, h, m) = (640.0, 360.0, 48.0);
    let n = records.len().max(2) as f64;
    let max_loss = records.iter().flat_map(|r| [r.train_loss, r.val_loss]).fold(1e-9, f64::max);
    let px = |e: usize| m + (e as f64 - 1.0) / (n - 1.0) * (w - 2.0 * m);
    let py = |v: f64, top: f64| h - m - v / top * (h - 2.0 * m);
    let line = |f: &dyn Fn(&EpochRecord) -> f64, top: f64| {
        records.iter().map(|r| format!("{:.1},{:.1}", px(r.epoch), py(f(r), top))).collect::<Vec<_>>().join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<path d="M{m},{m} V{b} H{r} V{m}" fill="none" stroke="black"/>"#, b = h - m, r = w - m);
    for (f, top, colour, label) in [
        (&(|r: &EpochRecord| r.train_loss) as &dyn Fn(&EpochRecord) -> f64, max_loss, "#1f77b4", "train loss"),
        (&|r: &EpochRecord| r.val_loss, max_loss, "#ff7f0e", "val loss"),
        (&|r: &EpochRecord| r.val_acc, 1.0, "#2ca02c", "val accuracy"),
    ] {
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"><title>{label}</title></polyline>"#,
            line(f, top)
        );
    }
    let _ = writeln!(s, r#"<text x="{m}" y="{}">loss (max {max_loss:.3})</text>"#, m - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">accuracy 0..1</text>"#, w - m, m - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, w / 2.0, h - 12.0);
    s.push_str("</svg>\n");
    s
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
