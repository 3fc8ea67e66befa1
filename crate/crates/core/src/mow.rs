//! Model-on-windows: a per-image pixel classifier trained from a handful of
//! labelled windows.
//!
//! The flow is [`sample_windows`] → [`build_dataset`] → [`split_samples`] →
//! [`train_gbdt`] → [`predict_pixels`]; [`run_mow`] chains them and reports
//! pixel scores. A model trained this way is only meant for the image it
//! was trained on.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{label_prf, PrfScores};
use crate::gbdt::{Features, GbdtModel, GbdtParams, TrainingTrace};
use crate::raster::{check_window_side, LabelMap, PhaseLabel, RasterImage};

/// Attempts allowed when drawing windows that must cover every class.
pub const STRATIFY_RETRY_CAP: usize = 1000;

/// Square window; `(x, y)` is its top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub x: usize,
    pub y: usize,
    pub n: usize,
}

impl WindowSpec {
    fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.n == 0 || self.x + self.n > width || self.y + self.n > height {
            return Err(Error::invalid(format!(
                "window {}x{} at ({}, {}) does not fit a {width}x{height} image",
                self.n, self.n, self.x, self.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WindowSampling {
    Explicit { windows: Vec<WindowSpec> },
    /// Random windows, redrawn until the covered pixels include all three
    /// phases.
    StratifiedRandom {
        count: usize,
        side: usize,
        #[serde(default)]
        seed: u64,
    },
}

/// Whether the train/validation/test split shuffles pixels or whole windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitGranularity {
    #[default]
    Pixel,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MowConfig {
    /// Odd neighbourhood side.
    pub p: usize,
    pub sampling: WindowSampling,
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub granularity: SplitGranularity,
    pub seed: u64,
}

impl Default for MowConfig {
    fn default() -> Self {
        Self {
            p: 3,
            sampling: WindowSampling::StratifiedRandom {
                count: 10,
                side: 50,
                seed: 0,
            },
            ratios: [0.70, 0.15, 0.15],
            granularity: SplitGranularity::Pixel,
            seed: 0,
        }
    }
}

impl MowConfig {
    pub fn validate(&self) -> Result<()> {
        check_window_side(self.p)?;
        check_ratios(&self.ratios)
    }
}

// Negated comparisons also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check_ratios(r: &[f64; 3]) -> Result<()> {
    if r.iter().any(|&v| !(v > 0.0)) || ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got {r:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub window: usize,
    pub x: usize,
    pub y: usize,
}

/// Neighbourhood-feature samples, one per pixel per window.
#[derive(Debug, Clone, PartialEq)]
pub struct MowDataset {
    pub image_id: u64,
    pub p: usize,
    pub channels: usize,
    pub features: Features,
    pub labels: Vec<PhaseLabel>,
    pub split: Vec<SplitTag>,
    pub provenance: Vec<Provenance>,
    /// Pixel count of each window, in window order.
    pub window_sizes: Vec<usize>,
}

impl MowDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.width()
    }

    pub fn rows_tagged(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == tag).collect()
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for t in &self.split {
            c[*t as usize] += 1;
        }
        c
    }

    /// Audit dump with provenance columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,window,x,y,label,split");
        for f in 0..self.feature_width() {
            let _ = write!(out, ",f{f}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let p = self.provenance[i];
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                self.image_id,
                p.window,
                p.x,
                p.y,
                self.labels[i].name(),
                self.split[i].name()
            );
            for v in self.features.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_dims(img: &RasterImage, labels: &LabelMap) -> Result<()> {
    if (img.width(), img.height()) != labels.dims() {
        return Err(Error::DimensionMismatch {
            expected: (img.width(), img.height()),
            found: labels.dims(),
        });
    }
    Ok(())
}

/// Picks the training windows.
pub fn sample_windows(
    img: &RasterImage,
    labels: &LabelMap,
    cfg: &MowConfig,
) -> Result<Vec<WindowSpec>> {
    check_dims(img, labels)?;
    let (w, h) = labels.dims();
    match &cfg.sampling {
        WindowSampling::Explicit { windows } => {
            for win in windows {
                win.check(w, h)?;
            }
            Ok(windows.clone())
        }
        &WindowSampling::StratifiedRandom { count, side, seed } => {
            if count == 0 {
                return Err(Error::invalid("window count must be at least 1"));
            }
            WindowSpec { x: 0, y: 0, n: side }.check(w, h)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..STRATIFY_RETRY_CAP {
                let windows: Vec<WindowSpec> = (0..count)
                    .map(|_| WindowSpec {
                        x: rng.gen_range(0..=w - side),
                        y: rng.gen_range(0..=h - side),
                        n: side,
                    })
                    .collect();
                let mut seen = [false; 3];
                for win in &windows {
                    for y in win.y..win.y + side {
                        for x in win.x..win.x + side {
                            seen[labels.get(x, y).index()] = true;
                        }
                    }
                }
                if seen.iter().all(|&s| s) {
                    return Ok(windows);
                }
            }
            Err(Error::RetryCap {
                attempts: STRATIFY_RETRY_CAP,
                reason: "no window draw covered all three phases".into(),
            })
        }
    }
}

/// One sample per pixel of every window, in window then raster order.
/// Overlapping windows contribute duplicate samples.
pub fn build_dataset(
    img: &RasterImage,
    labels: &LabelMap,
    windows: &[WindowSpec],
    p: usize,
) -> Result<MowDataset> {
    check_dims(img, labels)?;
    check_window_side(p)?;
    for win in windows {
        win.check(img.width(), img.height())?;
    }
    let total: usize = windows.iter().map(|w| w.n * w.n).sum();
    let width = img.channels() * p * p;
    let mut features = Features::with_capacity(width, total);
    let mut out_labels = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    for (k, win) in windows.iter().enumerate() {
        for y in win.y..win.y + win.n {
            for x in win.x..win.x + win.n {
                img.write_neighborhood(x, y, p, features.values_mut());
                out_labels.push(labels.get(x, y));
                provenance.push(Provenance { window: k, x, y });
            }
        }
    }
    Ok(MowDataset {
        image_id: 0,
        p,
        channels: img.channels(),
        features,
        split: vec![SplitTag::Train; total],
        labels: out_labels,
        provenance,
        window_sizes: windows.iter().map(|w| w.n * w.n).collect(),
    })
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5 + 1e-9).floor() as usize
}

/// Cut points of `n` items under the ratios.
fn cuts(n: usize, ratios: &[f64; 3]) -> (usize, usize) {
    let a = round_half_up(ratios[0] * n as f64);
    let b = round_half_up((ratios[0] + ratios[1]) * n as f64);
    (a.min(n), b.min(n))
}

/// Seeded shuffle of the samples, then contiguous train/val/test cuts at
/// `round(r0·N)` and `round((r0 + r1)·N)`, rounding halves up.
pub fn split_samples(mut ds: MowDataset, ratios: &[f64; 3], seed: u64) -> Result<MowDataset> {
    check_ratios(ratios)?;
    let n = ds.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 samples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = cuts(n, ratios);
    for (pos, &i) in order.iter().enumerate() {
        ds.split[i] = tag_at(pos, a, b);
    }
    Ok(ds)
}

/// Same cut rule applied to whole windows.
pub fn split_windows(mut ds: MowDataset, ratios: &[f64; 3], seed: u64) -> Result<MowDataset> {
    check_ratios(ratios)?;
    let m = ds.window_sizes.len();
    if m < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 windows to split by window, got {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = cuts(m, ratios);
    let mut tag_of = vec![SplitTag::Train; m];
    for (pos, &k) in order.iter().enumerate() {
        tag_of[k] = tag_at(pos, a, b);
    }
    for i in 0..ds.len() {
        ds.split[i] = tag_of[ds.provenance[i].window];
    }
    Ok(ds)
}

fn tag_at(pos: usize, a: usize, b: usize) -> SplitTag {
    if pos < a {
        SplitTag::Train
    } else if pos < b {
        SplitTag::Val
    } else {
        SplitTag::Test
    }
}

/// Candidate hyperparameters; every combination is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub subsample: Vec<f64>,
    pub min_leaf: usize,
    pub balance_classes: bool,
    pub seed: u64,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let d = GbdtParams::default();
        Self {
            n_trees: vec![d.n_trees],
            max_depth: vec![d.max_depth],
            learning_rate: vec![d.learning_rate],
            subsample: vec![d.subsample],
            min_leaf: d.min_leaf,
            balance_classes: d.balance_classes,
            seed: d.seed,
        }
    }
}

impl HyperGrid {
    /// All combinations ordered by trees, depth, learning rate, subsample.
    pub fn points(&self) -> Vec<GbdtParams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &learning_rate in &self.learning_rate {
                    for &subsample in &self.subsample {
                        out.push(GbdtParams {
                            n_trees,
                            max_depth,
                            learning_rate,
                            subsample,
                            min_leaf: self.min_leaf,
                            balance_classes: self.balance_classes,
                            seed: self.seed,
                        });
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            (a.n_trees, a.max_depth)
                .cmp(&(b.n_trees, b.max_depth))
                .then(a.learning_rate.total_cmp(&b.learning_rate))
                .then(a.subsample.total_cmp(&b.subsample))
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: GbdtParams,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: GbdtModel,
    pub trace: TrainingTrace,
    pub grid: Vec<GridScore>,
}

/// Macro-F1 over the model's classes on the given rows.
fn macro_f1(model: &GbdtModel, ds: &MowDataset, rows: &[usize]) -> f64 {
    let pred: Vec<PhaseLabel> = rows.iter().map(|&i| model.predict(ds.features.row(i))).collect();
    let truth: Vec<PhaseLabel> = rows.iter().map(|&i| ds.labels[i]).collect();
    let f1s: Vec<f64> = model
        .classes
        .iter()
        .map(|&c| label_prf(&pred, &truth, c).f1)
        .collect();
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

/// Trains every grid point on the train split and keeps the one with the
/// best validation macro-F1. Ties favour fewer trees, then shallower trees.
pub fn train_gbdt(ds: &MowDataset, grid: &HyperGrid) -> Result<TrainedModel> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("hyperparameter grid is empty"));
    }
    let train = ds.rows_tagged(SplitTag::Train);
    if train.is_empty() {
        return Err(Error::data("train split is empty"));
    }
    let mut val = ds.rows_tagged(SplitTag::Val);
    if val.is_empty() {
        val = train.clone();
    }
    let mut best: Option<(f64, GbdtModel, TrainingTrace)> = None;
    let mut scores = Vec::with_capacity(points.len());
    for params in points {
        let (model, trace) = GbdtModel::fit(&ds.features, &ds.labels, &train, &params)?;
        let f1 = macro_f1(&model, ds, &val);
        scores.push(GridScore {
            params,
            val_macro_f1: f1,
        });
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, model, trace));
        }
    }
    let (_, model, trace) = best.expect("grid is non-empty");
    Ok(TrainedModel {
        model,
        trace,
        grid: scores,
    })
}

/// Classifies every pixel from its `p`x`p` neighbourhood.
pub fn predict_pixels(model: &GbdtModel, img: &RasterImage, p: usize) -> Result<LabelMap> {
    check_window_side(p)?;
    let width = img.channels() * p * p;
    if width != model.feature_width {
        return Err(Error::invalid(format!(
            "model expects {} features but a {}-channel image with p={p} gives {width}",
            model.feature_width,
            img.channels()
        )));
    }
    let rows: Vec<Vec<PhaseLabel>> = (0..img.height())
        .into_par_iter()
        .map(|y| {
            let mut buf = Vec::with_capacity(width);
            (0..img.width())
                .map(|x| {
                    buf.clear();
                    img.write_neighborhood(x, y, p, &mut buf);
                    model.predict(&buf)
                })
                .collect()
        })
        .collect();
    LabelMap::new(img.width(), img.height(), rows.concat())
}

/// Per-class scores for one evaluation subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub other: PrfScores,
    pub alite: PrfScores,
    pub belite: PrfScores,
}

impl ClassScores {
    fn compute(pred: &[PhaseLabel], truth: &[PhaseLabel]) -> Self {
        Self {
            other: label_prf(pred, truth, PhaseLabel::Other),
            alite: label_prf(pred, truth, PhaseLabel::Alite),
            belite: label_prf(pred, truth, PhaseLabel::Belite),
        }
    }

    pub fn get(&self, phase: PhaseLabel) -> &PrfScores {
        match phase {
            PhaseLabel::Other => &self.other,
            PhaseLabel::Alite => &self.alite,
            PhaseLabel::Belite => &self.belite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MowReport {
    pub samples: usize,
    pub features: usize,
    pub windows: Vec<WindowSpec>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub selected: GbdtParams,
    pub grid: Vec<GridScore>,
    /// Scores on the held-out test samples.
    pub test_scores: ClassScores,
    /// Scores of the full-image prediction against the label map.
    pub image_scores: ClassScores,
}

pub struct MowOutcome {
    pub dataset: MowDataset,
    pub model: GbdtModel,
    pub prediction: LabelMap,
    pub report: MowReport,
}

/// Runs the whole pipeline on one image.
pub fn run_mow(
    img: &RasterImage,
    labels: &LabelMap,
    cfg: &MowConfig,
    grid: &HyperGrid,
) -> Result<MowOutcome> {
    cfg.validate()?;
    let windows = sample_windows(img, labels, cfg)?;
    let ds = build_dataset(img, labels, &windows, cfg.p)?;
    let ds = match cfg.granularity {
        SplitGranularity::Pixel => split_samples(ds, &cfg.ratios, cfg.seed)?,
        SplitGranularity::Window => split_windows(ds, &cfg.ratios, cfg.seed)?,
    };
    let trained = train_gbdt(&ds, grid)?;
    let prediction = predict_pixels(&trained.model, img, cfg.p)?;

    let test_rows = ds.rows_tagged(SplitTag::Test);
    let test_pred: Vec<PhaseLabel> = test_rows
        .iter()
        .map(|&i| trained.model.predict(ds.features.row(i)))
        .collect();
    let test_truth: Vec<PhaseLabel> = test_rows.iter().map(|&i| ds.labels[i]).collect();
    let [train, val, test] = ds.split_counts();
    let report = MowReport {
        samples: ds.len(),
        features: ds.feature_width(),
        windows,
        train,
        val,
        test,
        selected: trained.model.params,
        grid: trained.grid,
        test_scores: ClassScores::compute(&test_pred, &test_truth),
        image_scores: ClassScores::compute(prediction.labels(), labels.labels()),
    };
    Ok(MowOutcome {
        dataset: ds,
        model: trained.model,
        prediction,
        report,
    })
}
