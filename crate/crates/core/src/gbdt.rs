//! One-vs-rest gradient-boosted regression trees on logistic loss.
//!
//! Split finding is exact greedy: each feature is reduced to the sorted set
//! of its distinct training values and every boundary between consecutive
//! values is a candidate threshold. Gain is the usual second-order
//! reduction `G_L²/H_L + G_R²/H_R − G²/H`; leaves take the Newton step
//! `−G/H` scaled by the learning rate. Candidates are visited in feature
//! index then threshold order and a later candidate only wins with a
//! strictly larger gain, so the grown trees do not depend on row order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::PhaseLabel;

pub const MODEL_FORMAT: &str = "clinker-gbdt";
pub const MODEL_VERSION: u32 = 1;

/// Relative slack under which two split gains count as equal.
const GAIN_TIE: f64 = 1e-9;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features {
    width: usize,
    values: Vec<f32>,
}

impl Features {
    pub fn new(width: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || !values.len().is_multiple_of(width) {
            return Err(Error::invalid(format!(
                "{} values cannot form rows of width {width}",
                values.len()
            )));
        }
        Ok(Self { width, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("rows have different lengths"));
        }
        Self::new(width, rows.concat())
    }

    pub(crate) fn with_capacity(width: usize, rows: usize) -> Self {
        Self {
            width,
            values: Vec::with_capacity(width * rows),
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut Vec<f32> {
        &mut self.values
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Settings for one boosted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_leaf: usize,
    /// Weight samples by inverse class frequency.
    pub balance_classes: bool,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            subsample: 1.0,
            min_leaf: 5,
            balance_classes: false,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        Ok(())
    }
}

/// Flat tree node. Children always sit after their parent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: usize,
        #[serde(rename = "r")]
        right: usize,
    },
    Leaf {
        #[serde(rename = "v")]
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Rows with `x[feature] < threshold` go left.
    pub fn predict(&self, row: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if (row[feature] as f64) < threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn validate(&self, width: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::data("tree has no nodes"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= width {
                        return Err(Error::data(format!(
                            "node {i} uses feature {feature} >= width {width}"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(Error::data(format!("node {i} has a non-finite threshold")));
                    }
                    for c in [left, right] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(Error::data(format!(
                                "node {i} has invalid child {c}"
                            )));
                        }
                    }
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return Err(Error::data(format!("leaf {i} is not finite")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-class additive tree ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format: String,
    pub version: u32,
    pub feature_width: usize,
    /// Classes in ascending order; `ensembles[k]` scores `classes[k]`.
    pub classes: Vec<PhaseLabel>,
    pub params: GbdtParams,
    pub base_scores: Vec<f64>,
    pub ensembles: Vec<Vec<Tree>>,
}

/// Training logistic loss after each boosting round, per class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub loss: Vec<Vec<f64>>,
}

impl GbdtModel {
    /// Fits one ensemble per class present in `rows`.
    pub fn fit(
        features: &Features,
        labels: &[PhaseLabel],
        rows: &[usize],
        params: &GbdtParams,
    ) -> Result<(GbdtModel, TrainingTrace)> {
        params.validate()?;
        if labels.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        let mut classes: Vec<PhaseLabel> = rows.iter().map(|&r| labels[r]).collect();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::data(format!(
                "training data needs at least two classes, found {}",
                classes.len()
            )));
        }
        let binned = Binned::new(features, rows);
        let weights = sample_weights(labels, rows, params.balance_classes);
        let fitted: Vec<(f64, Vec<Tree>, Vec<f64>)> = classes
            .par_iter()
            .enumerate()
            .map(|(k, &class)| {
                let y: Vec<f64> = rows
                    .iter()
                    .map(|&r| if labels[r] == class { 1.0 } else { 0.0 })
                    .collect();
                let seed = params.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                fit_binary(&binned, &y, &weights, params, seed)
            })
            .collect();
        let mut model = GbdtModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            feature_width: features.width(),
            classes,
            params: *params,
            base_scores: Vec::new(),
            ensembles: Vec::new(),
        };
        let mut trace = TrainingTrace::default();
        for (base, trees, loss) in fitted {
            model.base_scores.push(base);
            model.ensembles.push(trees);
            trace.loss.push(loss);
        }
        Ok((model, trace))
    }

    pub fn scores(&self, row: &[f32]) -> Vec<f64> {
        self.base_scores
            .iter()
            .zip(&self.ensembles)
            .map(|(b, trees)| b + trees.iter().map(|t| t.predict(row)).sum::<f64>())
            .collect()
    }

    /// Highest-scoring class; ties go to the earlier class.
    pub fn predict(&self, row: &[f32]) -> PhaseLabel {
        let scores = self.scores(row);
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        self.classes[best]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: GbdtModel = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::data(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        if self.classes.len() < 2
            || self.base_scores.len() != self.classes.len()
            || self.ensembles.len() != self.classes.len()
        {
            return Err(Error::data("model class lists are inconsistent"));
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("model classes must be sorted and distinct"));
        }
        for t in self.ensembles.iter().flatten() {
            t.validate(self.feature_width)?;
        }
        Ok(())
    }
}

fn sample_weights(labels: &[PhaseLabel], rows: &[usize], balance: bool) -> Vec<f64> {
    if !balance {
        return vec![1.0; rows.len()];
    }
    let mut counts = [0usize; 3];
    for &r in rows {
        counts[labels[r].index()] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    rows.iter()
        .map(|&r| rows.len() as f64 / (present * counts[labels[r].index()] as f64))
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean weighted logistic loss, numerically stable in the score.
pub(crate) fn logistic_loss(scores: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((&f, &t), &wi) in scores.iter().zip(y).zip(w) {
        // log(1 + e^f) - t f
        let softplus = if f > 0.0 {
            f + (-f).exp().ln_1p()
        } else {
            f.exp().ln_1p()
        };
        total += wi * (softplus - t * f);
        wsum += wi;
    }
    total / wsum
}

/// Feature values reduced to ranks among the distinct training values.
struct Binned {
    /// Distinct sorted values per feature.
    cuts: Vec<Vec<f32>>,
    /// `codes[f][i]` is the rank of training row `i` in feature `f`.
    codes: Vec<Vec<u32>>,
}

impl Binned {
    fn new(features: &Features, rows: &[usize]) -> Self {
        let width = features.width();
        let (cuts, codes) = (0..width)
            .map(|f| {
                let column: Vec<f32> = rows.iter().map(|&r| features.row(r)[f]).collect();
                let mut cuts = column.clone();
                cuts.sort_by(f32::total_cmp);
                cuts.dedup();
                let codes = column
                    .iter()
                    .map(|v| cuts.partition_point(|c| c < v) as u32)
                    .collect();
                (cuts, codes)
            })
            .unzip();
        Self { cuts, codes }
    }

    fn rows(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

/// Node statistics for the level being grown.
struct Open {
    node: usize,
    depth: usize,
    g: f64,
    h: f64,
    n: usize,
}

fn fit_binary(
    data: &Binned,
    y: &[f64],
    w: &[f64],
    params: &GbdtParams,
    seed: u64,
) -> (f64, Vec<Tree>, Vec<f64>) {
    let n = data.rows();
    let wsum: f64 = w.iter().sum();
    let p = (y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum).clamp(1e-6, 1.0 - 1e-6);
    let base = (p / (1.0 - p)).ln();
    let mut scores = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut losses = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            let s = sigmoid(scores[i]);
            grad[i] = w[i] * (s - y[i]);
            hess[i] = w[i] * s * (1.0 - s);
        }
        let sample: Vec<usize> = if params.subsample < 1.0 {
            all.shuffle(&mut rng);
            let k = ((params.subsample * n as f64).round() as usize).max(1);
            let mut s = all[..k].to_vec();
            s.sort_unstable();
            s
        } else {
            all.clone()
        };
        let tree = grow_tree(data, &grad, &hess, &sample, params);
        let mut leaf_of = vec![0usize; n];
        assign_leaves(&tree, data, &mut leaf_of);
        for i in 0..n {
            if let BinNode::Leaf(value) = tree.nodes[leaf_of[i]] {
                scores[i] += value;
            }
        }
        losses.push(logistic_loss(&scores, y, w));
        trees.push(tree);
    }
    let trees = trees
        .into_iter()
        .map(|t| to_thresholds(t, data))
        .collect();
    (base, trees, losses)
}

/// Tree during growth: splits refer to bins, not raw thresholds.
struct BinTree {
    nodes: Vec<BinNode>,
}

enum BinNode {
    Split {
        feature: usize,
        bin: usize,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

fn assign_leaves(tree: &BinTree, data: &Binned, leaf_of: &mut [usize]) {
    for (i, slot) in leaf_of.iter_mut().enumerate() {
        let mut at = 0;
        while let BinNode::Split {
            feature,
            bin,
            left,
            right,
        } = tree.nodes[at]
        {
            at = if data.codes[feature][i] as usize <= bin {
                left
            } else {
                right
            };
        }
        *slot = at;
    }
}

fn to_thresholds(tree: BinTree, data: &Binned) -> Tree {
    let nodes = tree
        .nodes
        .into_iter()
        .map(|n| match n {
            BinNode::Leaf(value) => Node::Leaf { value },
            BinNode::Split {
                feature,
                bin,
                left,
                right,
            } => {
                let cuts = &data.cuts[feature];
                let threshold = (cuts[bin] as f64 + cuts[bin + 1] as f64) / 2.0;
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                }
            }
        })
        .collect();
    Tree { nodes }
}

fn leaf_value(g: f64, h: f64, lr: f64) -> f64 {
    if h > 0.0 {
        -lr * g / h
    } else {
        0.0
    }
}

fn grow_tree(
    data: &Binned,
    grad: &[f64],
    hess: &[f64],
    sample: &[usize],
    params: &GbdtParams,
) -> BinTree {
    let mut nodes = vec![BinNode::Leaf(0.0)];
    // Node owning each sampled row; rows are addressed by position in `sample`.
    let mut owner = vec![0usize; sample.len()];
    let (g0, h0) = sample
        .iter()
        .fold((0.0, 0.0), |(g, h), &i| (g + grad[i], h + hess[i]));
    let mut level = vec![Open {
        node: 0,
        depth: 0,
        g: g0,
        h: h0,
        n: sample.len(),
    }];
    while !level.is_empty() {
        let splittable: Vec<usize> = (0..level.len())
            .filter(|&k| level[k].depth < params.max_depth && level[k].n >= 2 * params.min_leaf)
            .collect();
        let best = if splittable.is_empty() {
            Vec::new()
        } else {
            best_splits(data, grad, hess, sample, &owner, &level, &splittable, params)
        };
        let mut next = Vec::new();
        let mut child_of = vec![None; nodes.len()];
        for (k, open) in level.iter().enumerate() {
            match best.iter().find(|(slot, _)| *slot == k).and_then(|(_, c)| *c) {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(BinNode::Leaf(0.0));
                    nodes.push(BinNode::Leaf(0.0));
                    nodes[open.node] = BinNode::Split {
                        feature: c.feature,
                        bin: c.bin,
                        left,
                        right: left + 1,
                    };
                    child_of.resize(nodes.len(), None);
                    child_of[open.node] = Some((c.feature, c.bin, left));
                    for child in [left, left + 1] {
                        next.push(Open {
                            node: child,
                            depth: open.depth + 1,
                            g: 0.0,
                            h: 0.0,
                            n: 0,
                        });
                    }
                }
                None => {
                    nodes[open.node] = BinNode::Leaf(leaf_value(open.g, open.h, params.learning_rate));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        let slot_of_node: std::collections::HashMap<usize, usize> =
            next.iter().enumerate().map(|(s, o)| (o.node, s)).collect();
        for (pos, &i) in sample.iter().enumerate() {
            if let Some(Some((feature, bin, left))) = child_of.get(owner[pos]) {
                let child = if data.codes[*feature][i] as usize <= *bin {
                    *left
                } else {
                    left + 1
                };
                owner[pos] = child;
                let o = &mut next[slot_of_node[&child]];
                o.g += grad[i];
                o.h += hess[i];
                o.n += 1;
            } else {
                // Row sits in a finished leaf.
                owner[pos] = usize::MAX;
            }
        }
        level = next;
    }
    BinTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn best_splits(
    data: &Binned,
    grad: &[f64],
    hess: &[f64],
    sample: &[usize],
    owner: &[usize],
    level: &[Open],
    splittable: &[usize],
    params: &GbdtParams,
) -> Vec<(usize, Option<Candidate>)> {
    let mut slot_of = std::collections::HashMap::new();
    for (s, &k) in splittable.iter().enumerate() {
        slot_of.insert(level[k].node, s);
    }
    let m = splittable.len();
    let mut best: Vec<Option<Candidate>> = vec![None; m];
    for (feature, cuts) in data.cuts.iter().enumerate() {
        let bins = cuts.len();
        if bins < 2 {
            continue;
        }
        let mut hg = vec![0.0; m * bins];
        let mut hh = vec![0.0; m * bins];
        let mut hn = vec![0usize; m * bins];
        let codes = &data.codes[feature];
        for (pos, &i) in sample.iter().enumerate() {
            if let Some(&s) = slot_of.get(&owner[pos]) {
                let b = s * bins + codes[i] as usize;
                hg[b] += grad[i];
                hh[b] += hess[i];
                hn[b] += 1;
            }
        }
        for (s, &k) in splittable.iter().enumerate() {
            let open = &level[k];
            let parent = if open.h > 0.0 { open.g * open.g / open.h } else { 0.0 };
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for bin in 0..bins - 1 {
                let b = s * bins + bin;
                gl += hg[b];
                hl += hh[b];
                nl += hn[b];
                if hn[b] == 0 {
                    continue;
                }
                let nr = open.n - nl;
                if nl < params.min_leaf || nr < params.min_leaf {
                    continue;
                }
                let (gr, hr) = (open.g - gl, open.h - hl);
                if hl <= 0.0 || hr <= 0.0 {
                    continue;
                }
                let gain = gl * gl / hl + gr * gr / hr - parent;
                let threshold = parent.abs().max(1e-300) * 1e-12;
                if gain <= threshold {
                    continue;
                }
                let better = match best[s] {
                    None => true,
                    Some(c) => gain > c.gain * (1.0 + GAIN_TIE),
                };
                if better {
                    best[s] = Some(Candidate { gain, feature, bin });
                }
            }
        }
    }
    splittable.iter().copied().zip(best).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_data() -> (Features, Vec<PhaseLabel>) {
        // Four clusters of unequal size so the first split has positive gain.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let clusters = [(0.0, 0.0, 8, PhaseLabel::Other), (0.0, 1.0, 11, PhaseLabel::Alite),
            (1.0, 0.0, 14, PhaseLabel::Alite), (1.0, 1.0, 17, PhaseLabel::Other)];
        for (cx, cy, n, l) in clusters {
            for k in 0..n {
                let jitter = k as f32 * 0.01;
                rows.push(vec![cx as f32 + jitter, cy as f32 - jitter]);
                labels.push(l);
            }
        }
        (Features::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn xor_is_learned_with_depth_two() {
        let (x, y) = xor_data();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let params = GbdtParams {
            n_trees: 30,
            max_depth: 2,
            ..GbdtParams::default()
        };
        let (model, _) = GbdtModel::fit(&x, &y, &rows, &params).unwrap();
        for i in 0..x.rows() {
            assert_eq!(model.predict(x.row(i)), y[i], "row {i}");
        }
    }

    #[test]
    fn depth_one_cannot_express_xor() {
        let (x, y) = xor_data();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let params = GbdtParams {
            n_trees: 30,
            max_depth: 1,
            ..GbdtParams::default()
        };
        let (model, _) = GbdtModel::fit(&x, &y, &rows, &params).unwrap();
        let correct = (0..x.rows()).filter(|&i| model.predict(x.row(i)) == y[i]).count();
        assert!(correct < x.rows());
    }

    #[test]
    fn constant_features_predict_majority() {
        let rows = vec![vec![1.0, 2.0]; 20];
        let x = Features::from_rows(&rows).unwrap();
        let mut y = vec![PhaseLabel::Belite; 12];
        y.extend(vec![PhaseLabel::Alite; 8]);
        let idx: Vec<usize> = (0..20).collect();
        let (model, _) = GbdtModel::fit(&x, &y, &idx, &GbdtParams::default()).unwrap();
        assert!(model.ensembles.iter().flatten().all(|t| t.nodes.len() == 1));
        assert_eq!(model.predict(&[1.0, 2.0]), PhaseLabel::Belite);
        assert_eq!(model.predict(&[-5.0, 99.0]), PhaseLabel::Belite);
    }

    #[test]
    fn single_class_rejected() {
        let x = Features::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let y = vec![PhaseLabel::Alite; 2];
        assert!(GbdtModel::fit(&x, &y, &[0, 1], &GbdtParams::default()).is_err());
    }

    #[test]
    fn loss_is_non_increasing() {
        let (x, y) = xor_data();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let params = GbdtParams {
            n_trees: 40,
            max_depth: 3,
            ..GbdtParams::default()
        };
        let (_, trace) = GbdtModel::fit(&x, &y, &rows, &params).unwrap();
        for curve in &trace.loss {
            for w in curve.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn json_round_trip_predicts_identically() {
        let (x, y) = xor_data();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let params = GbdtParams {
            n_trees: 10,
            max_depth: 3,
            subsample: 0.8,
            seed: 4,
            ..GbdtParams::default()
        };
        let (model, _) = GbdtModel::fit(&x, &y, &rows, &params).unwrap();
        let back = GbdtModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        for i in 0..x.rows() {
            assert_eq!(back.scores(x.row(i)), model.scores(x.row(i)));
        }
    }

    #[test]
    fn tampered_model_rejected() {
        let (x, y) = xor_data();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let (mut model, _) = GbdtModel::fit(&x, &y, &rows, &GbdtParams { n_trees: 2, ..Default::default() }).unwrap();
        model.feature_width = 1;
        assert!(GbdtModel::from_json(&serde_json::to_string(&model).unwrap()).is_err());
    }

    #[test]
    fn trees_respect_depth_and_leaf_size() {
        let (x, y) = xor_data();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let params = GbdtParams {
            n_trees: 5,
            max_depth: 3,
            min_leaf: 5,
            ..GbdtParams::default()
        };
        let (model, _) = GbdtModel::fit(&x, &y, &rows, &params).unwrap();
        assert!(model.ensembles.iter().flatten().all(|t| t.depth() <= 3));
    }
}
