//! Pipeline stages over the output layout:
//!
//! ```text
//! output/
//!   patches/{patch_id}.png   patch_index.csv   patches.jsonl
//!   manifest.csv   manifest.json
//!   train/{epochs.csv, loss_curve.svg, best.ckpt, last.ckpt}
//!   eval/{test1,test2}/{confusion.csv, metrics.json, confusion.svg, predictions.csv}
//!   report.md
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::annotations::{parse_annotations, resolve_concordance, ConsideredRegion};
use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{PipelineConfig, RegionSelection};
use crate::dataset::{build_manifest, DatasetManifest, PoolEntry, Split};
use crate::densenet::DenseNet;
use crate::error::{Error, Result};
use crate::evaluator::{summary_lines, write_report, ConfusionMatrix, Metrics};
use crate::patchfilter::{self, ensure_dir, process_candidates, save_patch, PatchRecord};
use crate::raster::{read_image, RasterSource, TiledSlide};
use crate::tiler::{area_filter, partition_chunks, write_patch_index};
use crate::trainer::{self, loss_curve_svg, write_epochs_csv, PatchDir};
use crate::{par, ClassLabel};

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Layout { root: cfg.paths.output.clone() }
    }

    pub fn patches(&self) -> PathBuf {
        self.root.join("patches")
    }

    pub fn patch_index(&self) -> PathBuf {
        self.root.join("patch_index.csv")
    }

    pub fn sidecar(&self) -> PathBuf {
        self.root.join("patches.jsonl")
    }

    pub fn manifest_csv(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn manifest_json(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.train_dir().join("best.ckpt")
    }

    pub fn eval_dir(&self, split: Split) -> PathBuf {
        self.root.join("eval").join(split.as_str())
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

/// Fails with an IO "not found" error naming `path` when it does not exist.
pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "required path does not exist")))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Opens `{wsi}/` (tiled), `{wsi}.png` or `{wsi}.ppm` under `slides`. The
/// second value is the magnification recorded by a tiled slide.
pub fn open_slide(slides: &Path, wsi: &str) -> Result<(Box<dyn RasterSource>, Option<u32>)> {
    let tiled = slides.join(wsi);
    if tiled.join("meta.json").exists() {
        let s = TiledSlide::open(tiled)?;
        let mag = s.meta().magnification;
        return Ok((Box::new(s), Some(mag)));
    }
    for ext in ["png", "ppm"] {
        let p = slides.join(format!("{wsi}.{ext}"));
        if p.exists() {
            return Ok((Box::new(read_image(&p)?), None));
        }
    }
    Err(Error::io(
        slides.join(format!("{wsi}.png")),
        std::io::Error::new(std::io::ErrorKind::NotFound, format!("no raster or tiled directory for slide {wsi}")),
    ))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TileSummary {
    pub per_class: BTreeMap<ClassLabel, usize>,
    pub regions: usize,
    pub rejected_area: usize,
    pub rejected_white: usize,
    pub duplicates: usize,
}

impl TileSummary {
    pub fn lines(&self) -> Vec<String> {
        let mut v: Vec<String> =
            ClassLabel::ALL.iter().map(|c| format!("{c}: {}", self.per_class.get(c).copied().unwrap_or(0))).collect();
        v.push(format!(
            "regions: {}, rejected by area: {}, rejected as background: {}, duplicates skipped: {}",
            self.regions, self.rejected_area, self.rejected_white, self.duplicates
        ));
        v
    }
}

pub fn cmd_tile(cfg: &PipelineConfig) -> Result<TileSummary> {
    let ann_path = &cfg.paths.annotations;
    require(ann_path)?;
    require(&cfg.paths.slides)?;
    let text = fs::read_to_string(ann_path).map_err(|e| Error::io(ann_path, e))?;
    let annotations = parse_annotations(&text)?;
    let regions = resolve_concordance(&annotations, cfg.tiler.iou_threshold)?;
    let mut by_wsi: BTreeMap<&str, Vec<&ConsideredRegion>> = BTreeMap::new();
    for r in &regions {
        if cfg.tiler.regions == RegionSelection::All || r.concordant {
            by_wsi.entry(r.wsi_id.as_str()).or_default().push(r);
        }
    }
    let layout = Layout::new(cfg);
    let patch_dir = layout.patches();
    ensure_dir(&patch_dir)?;
    let mut summary = TileSummary::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut records: Vec<PatchRecord> = Vec::new();
    for (wsi, regs) in by_wsi {
        let (slide, slide_mag) = open_slide(&cfg.paths.slides, wsi)?;
        for region in regs {
            if let Some(m) = slide_mag.filter(|&m| m != region.magnification.value()) {
                return Err(Error::Validation {
                    record: format!("slide {wsi}"),
                    message: format!("slide is {m}x but annotated at {}x", region.magnification.value()),
                });
            }
            summary.regions += 1;
            for chunk in partition_chunks(region)? {
                let total = chunk.len();
                let kept = area_filter(chunk, cfg.tiler.min_area_fraction);
                summary.rejected_area += total - kept.len();
                let patches = process_candidates(&*slide, &kept, region.magnification, cfg.tiler.white_threshold)?;
                summary.rejected_white += kept.len() - patches.len();
                let mut fresh = Vec::with_capacity(patches.len());
                for p in patches {
                    let id = p.patch_id();
                    if seen.insert(id.clone()) {
                        fresh.push(p);
                    } else {
                        log::warn!("patch {id} already produced by an earlier region; skipping");
                        summary.duplicates += 1;
                    }
                }
                for r in par::map(&fresh, |p| save_patch(&patch_dir, p)) {
                    r?;
                }
                for p in &fresh {
                    *summary.per_class.entry(p.class_label).or_default() += 1;
                    records.push(p.record(region.concordant));
                }
            }
        }
    }
    let index = layout.patch_index();
    let f = fs::File::create(&index).map_err(|e| Error::io(&index, e))?;
    write_patch_index(
        BufWriter::new(f),
        records.iter().map(|r| {
            (r.wsi_id.as_str(), r.class, crate::tiler::PatchBox { x: r.x, y: r.y, side: r.side }, r.area_fraction)
        }),
    )
    .map_err(|e| Error::io(&index, e))?;
    patchfilter::write_sidecar(&layout.sidecar(), &records)?;
    Ok(summary)
}

pub fn cmd_split(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let layout = Layout::new(cfg);
    require(&layout.sidecar())?;
    let records = patchfilter::read_sidecar(&layout.sidecar())?;
    let set2: HashSet<&str> = cfg.image_sets.set2.iter().map(String::as_str).collect();
    let set1: HashSet<&str> = if cfg.image_sets.set1.is_empty() {
        records.iter().map(|r| r.wsi_id.as_str()).filter(|w| !set2.contains(w)).collect()
    } else {
        cfg.image_sets.set1.iter().map(String::as_str).collect()
    };
    let (mut pool1, mut pool2) = (Vec::new(), Vec::new());
    for r in &records {
        let e = PoolEntry::new(r.patch_id.clone(), r.class);
        if set1.contains(r.wsi_id.as_str()) {
            pool1.push(e);
        } else if set2.contains(r.wsi_id.as_str()) {
            pool2.push(e);
        }
    }
    for wsi in set1.iter().chain(&set2) {
        if !records.iter().any(|r| r.wsi_id == *wsi) {
            log::warn!("slide {wsi} is listed in an image set but produced no patches");
        }
    }
    let manifest = build_manifest(&pool1, &pool2, &cfg.dataset, cfg.seed)?;
    manifest.write(&layout.manifest_csv(), &layout.manifest_json())?;
    Ok(manifest)
}

pub fn split_summary(m: &DatasetManifest) -> Vec<String> {
    let splits = [Split::Train, Split::Val, Split::Test1, Split::Test2];
    ClassLabel::ALL
        .iter()
        .map(|&c| {
            let parts: Vec<String> = splits.iter().map(|&s| format!("{s} {}", m.count(c, s))).collect();
            format!("{c}: {}", parts.join(", "))
        })
        .collect()
}

fn read_manifest(layout: &Layout) -> Result<DatasetManifest> {
    require(&layout.manifest_csv())?;
    require(&layout.manifest_json())?;
    DatasetManifest::read(&layout.manifest_csv(), &layout.manifest_json())
}

fn split_source(layout: &Layout, m: &DatasetManifest, split: Split) -> PatchDir {
    PatchDir { dir: layout.patches(), entries: m.split(split).map(|e| (e.patch_id.clone(), e.class_label)).collect() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<trainer::EpochRecord>,
    pub best_epoch: usize,
    pub optimizer_steps: usize,
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let layout = Layout::new(cfg);
    let manifest = read_manifest(&layout)?;
    require(&layout.patches())?;
    let train_set = split_source(&layout, &manifest, Split::Train);
    let val_set = split_source(&layout, &manifest, Split::Val);
    let model = DenseNet::<f32>::build(cfg.architecture.clone(), cfg.seed)?;
    log::info!(
        "model: {} parameters, {} train / {} val patches",
        model.param_count(),
        train_set.entries.len(),
        val_set.entries.len()
    );
    let tc = cfg.train_config();
    let outcome = trainer::train(model, &train_set, &val_set, &tc, |_| {})?;
    let dir = layout.train_dir();
    ensure_dir(&dir)?;
    let mut csv = Vec::new();
    write_epochs_csv(&mut csv, &outcome.records)?;
    trainer::write_file(&dir.join("epochs.csv"), &csv)?;
    write_text(&dir.join("loss_curve.svg"), &loss_curve_svg(&outcome.records))?;
    let best = outcome.best_record();
    let best_meta = CheckpointMeta { epoch: best.epoch, seed: cfg.seed, val_accuracy: Some(best.val_acc) };
    checkpoint::save(&outcome.best_model, &best_meta, &layout.best_checkpoint())?;
    let last = outcome.records.last().expect("at least one epoch");
    let last_meta = CheckpointMeta { epoch: last.epoch, seed: cfg.seed, val_accuracy: Some(last.val_acc) };
    checkpoint::save(&outcome.last_model, &last_meta, &dir.join("last.ckpt"))?;
    Ok(TrainSummary {
        records: outcome.records,
        best_epoch: outcome.best_epoch,
        optimizer_steps: outcome.optimizer_steps,
    })
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<Vec<(Split, ConfusionMatrix)>> {
    let layout = Layout::new(cfg);
    let manifest = read_manifest(&layout)?;
    let ckpt = layout.best_checkpoint();
    require(&ckpt)?;
    let (model, meta) = checkpoint::load(&ckpt)?;
    if model.config != cfg.architecture {
        log::warn!("checkpoint architecture differs from the configured one; using the checkpoint's");
    }
    let digest = checkpoint::file_digest(&ckpt)?;
    let mut out = Vec::new();
    for split in [Split::Test1, Split::Test2] {
        let source = split_source(&layout, &manifest, split);
        if source.entries.is_empty() {
            continue;
        }
        let ev = trainer::evaluate_split(&model, &source, cfg.train.batch_size)?;
        let cm = ConfusionMatrix::from_predictions(&ev.labels, &ev.predictions)?;
        let dir = layout.eval_dir(split);
        write_report(&dir, &cm, &Metrics::new(&cm, split.as_str(), meta.seed, &digest))?;
        let mut preds = String::from("patch_id,true,predicted\n");
        for ((id, _), (&t, &p)) in source.entries.iter().zip(ev.labels.iter().zip(&ev.predictions)) {
            let _ = writeln!(preds, "{id},{},{}", ClassLabel::ALL[t], ClassLabel::ALL[p]);
        }
        write_text(&dir.join("predictions.csv"), &preds)?;
        out.push((split, cm));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("manifest has no test entries to evaluate".into()));
    }
    Ok(out)
}

/// Rebuilds figures from the evaluation CSVs and writes `report.md`.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<String> {
    let layout = Layout::new(cfg);
    let mut md = String::from("# Evaluation report\n");
    let mut found = false;
    for split in [Split::Test1, Split::Test2] {
        let dir = layout.eval_dir(split);
        let csv_path = dir.join("confusion.csv");
        if !csv_path.exists() {
            continue;
        }
        found = true;
        let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let cm = ConfusionMatrix::from_csv(&text)?;
        let metrics_path = dir.join("metrics.json");
        let metrics: Option<Metrics> =
            fs::read_to_string(&metrics_path).ok().and_then(|t| serde_json::from_str(&t).ok());
        write_text(&dir.join("confusion.svg"), &cm.to_svg(&format!("Confusion matrix ({split})")))?;
        let _ = writeln!(md, "\n## {split}\n");
        if let Some(m) = &metrics {
            let _ = writeln!(md, "seed {}, checkpoint sha256 `{}`\n", m.seed, m.checkpoint_sha256);
        }
        let _ = writeln!(md, "| true \\ predicted | Normal | NPI | NPC | accuracy |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            let cells: Vec<String> =
                (0..3).map(|j| format!("{} ({})", cm.fraction_str(i, j), cm.counts()[i][j])).collect();
            let _ = writeln!(md, "| {c} | {} | {}% |", cells.join(" | "), cm.accuracy_percent_str(i));
        }
        let _ = writeln!(md, "\n{}", summary_lines(&cm).last().expect("overall line"));
    }
    if !found {
        let missing = layout.eval_dir(Split::Test1).join("confusion.csv");
        require(&missing)?;
    }
    write_text(&layout.report(), &md)?;
    Ok(md)
}
