//! Precision, recall and F1 at pixel and particle level.
//!
//! Degenerate ratios follow one rule everywhere: `0/0` counts as 0, so a
//! class that is neither predicted nor present scores zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedImage, ParticleInstance};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, LabelMap, PhaseLabel};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl PrfScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: f1_from_pr(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

/// Harmonic mean of precision and recall.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    let s = precision + recall;
    if s > 0.0 {
        2.0 * precision * recall / s
    } else {
        0.0
    }
}

/// One-vs-rest counts over parallel label slices.
pub fn label_prf(pred: &[PhaseLabel], truth: &[PhaseLabel], phase: PhaseLabel) -> PrfScores {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == phase, t == phase) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    PrfScores::from_counts(tp, fp, fn_)
}

pub fn pixel_prf(pred: &LabelMap, gt: &LabelMap, phase: PhaseLabel) -> Result<PrfScores> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    Ok(label_prf(pred.labels(), gt.labels(), phase))
}

/// Intersection over union; two empty masks give 0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(ratio(inter, union))
}

/// IoU of two instances, restricted to the overlap of their boxes.
fn instance_iou(a: &ParticleInstance, b: &ParticleInstance, area_a: usize, area_b: usize) -> f64 {
    let Some(bx) = a.bbox.intersect(&b.bbox) else {
        return 0.0;
    };
    if a.region.dims() != b.region.dims() {
        return 0.0;
    }
    let mut inter = 0;
    for y in bx.y..bx.y + bx.h {
        for x in bx.x..bx.x + bx.w {
            inter += (a.region.get(x, y) && b.region.get(x, y)) as usize;
        }
    }
    ratio(inter, area_a + area_b - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: u64,
    pub gt: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    /// False positives.
    pub unmatched_preds: Vec<u64>,
    /// False negatives.
    pub unmatched_gts: Vec<u64>,
}

/// Pairwise IoU table for one image, reused across confidence cutoffs.
struct IouTable<'a> {
    preds: &'a [ParticleInstance],
    gts: &'a [ParticleInstance],
    iou: Vec<f64>,
    /// Predictions in matching order.
    order: Vec<usize>,
    phase_agnostic: bool,
}

impl<'a> IouTable<'a> {
    fn new(preds: &'a [ParticleInstance], gts: &'a [ParticleInstance], phase_agnostic: bool) -> Self {
        let gt_area: Vec<usize> = gts.iter().map(|g| g.area()).collect();
        let mut iou = vec![0.0; preds.len() * gts.len()];
        let mut best = vec![0.0f64; preds.len()];
        for (i, p) in preds.iter().enumerate() {
            let pa = p.area();
            for (j, g) in gts.iter().enumerate() {
                if phase_agnostic || p.phase == g.phase {
                    let v = instance_iou(p, g, pa, gt_area[j]);
                    iou[i * gts.len() + j] = v;
                    best[i] = best[i].max(v);
                }
            }
        }
        let mut order: Vec<usize> = (0..preds.len()).collect();
        let conf = |i: usize| preds[i].confidence.unwrap_or(1.0);
        order.sort_by(|&a, &b| {
            conf(b)
                .total_cmp(&conf(a))
                .then(best[b].total_cmp(&best[a]))
                .then(preds[a].id.cmp(&preds[b].id))
        });
        Self {
            preds,
            gts,
            iou,
            order,
            phase_agnostic,
        }
    }

    fn matches(&self, threshold: f64, keep: impl Fn(&ParticleInstance) -> bool) -> MatchResult {
        let mut taken = vec![false; self.gts.len()];
        let mut out = MatchResult::default();
        for &i in &self.order {
            let p = &self.preds[i];
            if !keep(p) {
                continue;
            }
            let mut pick: Option<(usize, f64)> = None;
            for (j, g) in self.gts.iter().enumerate() {
                if taken[j] || !(self.phase_agnostic || p.phase == g.phase) {
                    continue;
                }
                let v = self.iou[i * self.gts.len() + j];
                if v >= threshold && pick.is_none_or(|(_, b)| v > b) {
                    pick = Some((j, v));
                }
            }
            match pick {
                Some((j, v)) => {
                    taken[j] = true;
                    out.pairs.push(MatchedPair {
                        pred: p.id,
                        gt: self.gts[j].id,
                        iou: v,
                    });
                }
                None => out.unmatched_preds.push(p.id),
            }
        }
        out.unmatched_gts = self
            .gts
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(g, _)| g.id)
            .collect();
        out
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold must lie in (0, 1], got {t}"
        )));
    }
    Ok(())
}

/// Greedy matching in descending confidence (then descending best IoU, then
/// prediction id). Each prediction takes the free ground truth with the
/// highest IoU at or above the threshold; unless `phase_agnostic`, only
/// same-phase pairs are considered.
pub fn match_instances(
    preds: &[ParticleInstance],
    gts: &[ParticleInstance],
    iou_threshold: f64,
    phase_agnostic: bool,
) -> Result<MatchResult> {
    check_threshold(iou_threshold)?;
    Ok(IouTable::new(preds, gts, phase_agnostic).matches(iou_threshold, |_| true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub iou_threshold: f64,
    /// Spacing of the confidence cutoffs over [0, 1].
    pub step: f64,
    pub average: Average,
    pub phase_agnostic: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            step: 0.01,
            average: Average::Macro,
            phase_agnostic: false,
        }
    }
}

/// Particle-level scores per phase plus the selected average.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstanceScores {
    pub alite: PrfScores,
    pub belite: PrfScores,
    /// Both phases pooled.
    pub micro: PrfScores,
    pub macro_f1: f64,
}

impl InstanceScores {
    pub fn new(alite: PrfScores, belite: PrfScores) -> Self {
        Self {
            micro: PrfScores::from_counts(alite.tp + belite.tp, alite.fp + belite.fp, alite.fn_ + belite.fn_),
            macro_f1: (alite.f1 + belite.f1) / 2.0,
            alite,
            belite,
        }
    }

    fn from_counts(counts: [[usize; 3]; 2]) -> Self {
        Self::new(
            PrfScores::from_counts(counts[0][0], counts[0][1], counts[0][2]),
            PrfScores::from_counts(counts[1][0], counts[1][1], counts[1][2]),
        )
    }

    pub fn get(&self, phase: PhaseLabel) -> Option<&PrfScores> {
        match phase {
            PhaseLabel::Alite => Some(&self.alite),
            PhaseLabel::Belite => Some(&self.belite),
            PhaseLabel::Other => None,
        }
    }

    pub fn objective(&self, average: Average) -> f64 {
        match average {
            Average::Macro => self.macro_f1,
            Average::Micro => self.micro.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub threshold: f64,
    pub scores: InstanceScores,
    /// `(cutoff, objective)` for every cutoff on the grid.
    pub curve: Vec<(f64, f64)>,
}

struct ImagePair<'a> {
    table: IouTable<'a>,
}

fn pair_images<'a>(
    dets: &'a [AnnotatedImage],
    gts: &'a [AnnotatedImage],
    phase_agnostic: bool,
) -> Result<Vec<ImagePair<'a>>> {
    let mut by_id: BTreeMap<u64, (Option<&AnnotatedImage>, Option<&AnnotatedImage>)> =
        BTreeMap::new();
    for d in dets {
        if d.instances.iter().any(|i| i.confidence.is_none()) {
            return Err(Error::data(format!(
                "image {}: detections must carry confidence scores",
                d.image_id
            )));
        }
        by_id.entry(d.image_id).or_default().0 = Some(d);
    }
    for g in gts {
        by_id.entry(g.image_id).or_default().1 = Some(g);
    }
    Ok(by_id
        .into_values()
        .map(|(d, g)| ImagePair {
            table: IouTable::new(
                d.map_or(&[][..], |d| &d.instances),
                g.map_or(&[][..], |g| &g.instances),
                phase_agnostic,
            ),
        })
        .collect())
}

fn phase_slot(p: PhaseLabel) -> usize {
    match p {
        PhaseLabel::Belite => 1,
        _ => 0,
    }
}

fn scores_at(pairs: &[ImagePair], cutoff: f64, iou_threshold: f64) -> InstanceScores {
    // counts[phase] = [tp, fp, fn]
    let mut counts = [[0usize; 3]; 2];
    for pair in pairs {
        let t = &pair.table;
        let keep = |p: &ParticleInstance| p.confidence.unwrap_or(1.0) >= cutoff;
        let m = t.matches(iou_threshold, keep);
        let phase_of_pred: BTreeMap<u64, PhaseLabel> =
            t.preds.iter().map(|p| (p.id, p.phase)).collect();
        let phase_of_gt: BTreeMap<u64, PhaseLabel> = t.gts.iter().map(|g| (g.id, g.phase)).collect();
        for pr in &m.pairs {
            counts[phase_slot(phase_of_gt[&pr.gt])][0] += 1;
        }
        for id in &m.unmatched_preds {
            counts[phase_slot(phase_of_pred[id])][1] += 1;
        }
        for id in &m.unmatched_gts {
            counts[phase_slot(phase_of_gt[id])][2] += 1;
        }
    }
    InstanceScores::from_counts(counts)
}

/// Particle-level scores keeping detections with confidence ≥ `cutoff`.
pub fn instance_prf(
    dets: &[AnnotatedImage],
    gts: &[AnnotatedImage],
    cutoff: f64,
    opts: &SweepOptions,
) -> Result<InstanceScores> {
    check_threshold(opts.iou_threshold)?;
    let pairs = pair_images(dets, gts, opts.phase_agnostic)?;
    Ok(scores_at(&pairs, cutoff, opts.iou_threshold))
}

/// Scans confidence cutoffs `0, step, 2·step, …, 1` and returns the lowest
/// cutoff with the best averaged F1.
pub fn best_f1_threshold(
    dets: &[AnnotatedImage],
    gts: &[AnnotatedImage],
    opts: &SweepOptions,
) -> Result<ThresholdSweep> {
    check_threshold(opts.iou_threshold)?;
    if !(opts.step > 0.0 && opts.step <= 1.0) {
        return Err(Error::invalid(format!(
            "sweep step must lie in (0, 1], got {}",
            opts.step
        )));
    }
    let pairs = pair_images(dets, gts, opts.phase_agnostic)?;
    let steps = (1.0 / opts.step).round() as usize;
    let mut best: Option<(f64, InstanceScores)> = None;
    let mut curve = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let cutoff = k as f64 / steps as f64;
        let scores = scores_at(&pairs, cutoff, opts.iou_threshold);
        let objective = scores.objective(opts.average);
        curve.push((cutoff, objective));
        if best
            .as_ref()
            .is_none_or(|(_, b)| objective > b.objective(opts.average))
        {
            best = Some((cutoff, scores));
        }
    }
    let (threshold, scores) = best.expect("at least one cutoff");
    Ok(ThresholdSweep {
        threshold,
        scores,
        curve,
    })
}

/// Aligned text table: one row per run, precision/recall/F1 per phase.
pub fn format_table(rows: &[(String, InstanceScores)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<label_w$}  {:>9} {:>9}  {:>9} {:>9}  {:>9} {:>9}",
        "", "Precision", "", "Recall", "", "F1", ""
    );
    let _ = writeln!(
        out,
        "{:<label_w$}  {:>9} {:>9}  {:>9} {:>9}  {:>9} {:>9}",
        "Model", "Alite", "Belite", "Alite", "Belite", "Alite", "Belite"
    );
    for (label, s) in rows {
        let _ = writeln!(
            out,
            "{:<label_w$}  {:>9.3} {:>9.3}  {:>9.3} {:>9.3}  {:>9.3} {:>9.3}",
            label,
            s.alite.precision,
            s.belite.precision,
            s.alite.recall,
            s.belite.recall,
            s.alite.f1,
            s.belite.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(id: u64, phase: PhaseLabel, x0: usize, y0: usize, w: usize, h: usize, conf: Option<f64>) -> ParticleInstance {
        let mut m = BinaryMask::empty(20, 20);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set(x, y, true);
            }
        }
        ParticleInstance::from_region(id, phase, m, Some(vec![]), conf).unwrap()
    }

    #[test]
    fn prf_hand_arithmetic() {
        let s = PrfScores::from_counts(3, 1, 2);
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.6);
        assert!((s.f1 - 0.9 / 1.35).abs() < 1e-12);
        let z = PrfScores::from_counts(0, 0, 5);
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
        assert_eq!(f1_from_pr(0.0, 0.0), 0.0);
    }

    #[test]
    fn pixel_identity_and_degenerate() {
        let mut gt = LabelMap::filled(4, 4, PhaseLabel::Other);
        gt.set(1, 1, PhaseLabel::Alite);
        let s = pixel_prf(&gt, &gt, PhaseLabel::Alite).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let pred = LabelMap::filled(4, 4, PhaseLabel::Other);
        let s = pixel_prf(&pred, &gt, PhaseLabel::Alite).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!(pixel_prf(&LabelMap::filled(3, 4, PhaseLabel::Other), &gt, PhaseLabel::Alite).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = rect(1, PhaseLabel::Alite, 0, 0, 4, 4, None);
        let b = rect(2, PhaseLabel::Alite, 2, 0, 4, 4, None);
        let c = rect(3, PhaseLabel::Alite, 10, 10, 2, 2, None);
        assert_eq!(mask_iou(&a.region, &a.region).unwrap(), 1.0);
        assert_eq!(mask_iou(&a.region, &c.region).unwrap(), 0.0);
        assert!((mask_iou(&a.region, &b.region).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(instance_iou(&a, &b, 16, 16), mask_iou(&a.region, &b.region).unwrap());
        let e = BinaryMask::empty(20, 20);
        assert_eq!(mask_iou(&e, &e).unwrap(), 0.0);
    }

    #[test]
    fn identical_sets_match_fully() {
        let gts = vec![rect(1, PhaseLabel::Alite, 0, 0, 3, 3, None), rect(2, PhaseLabel::Belite, 5, 5, 3, 3, None)];
        let preds: Vec<_> = gts
            .iter()
            .map(|g| ParticleInstance { confidence: Some(0.9), ..g.clone() })
            .collect();
        let m = match_instances(&preds, &gts, 0.5, false).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert!(m.pairs.iter().all(|p| p.iou == 1.0));
        assert!(m.unmatched_preds.is_empty() && m.unmatched_gts.is_empty());
    }

    #[test]
    fn pred_takes_higher_iou_gt() {
        let pred = rect(1, PhaseLabel::Alite, 0, 0, 10, 1, Some(0.9));
        let gt_a = rect(10, PhaseLabel::Alite, 0, 0, 6, 1, None); // IoU 0.6
        let gt_b = rect(11, PhaseLabel::Alite, 0, 0, 7, 1, None); // IoU 0.7
        let m = match_instances(&[pred], &[gt_a, gt_b], 0.5, false).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].gt, 11);
        assert!((m.pairs[0].iou - 0.7).abs() < 1e-12);
        assert_eq!(m.unmatched_gts, vec![10]);
    }

    #[test]
    fn disjoint_and_cross_phase() {
        let pred = rect(1, PhaseLabel::Alite, 0, 0, 3, 3, Some(0.5));
        let gt = rect(2, PhaseLabel::Alite, 10, 10, 3, 3, None);
        let m = match_instances(std::slice::from_ref(&pred), &[gt], 0.5, false).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!((m.unmatched_preds, m.unmatched_gts), (vec![1], vec![2]));
        let other_phase = rect(3, PhaseLabel::Belite, 0, 0, 3, 3, None);
        assert!(match_instances(std::slice::from_ref(&pred), std::slice::from_ref(&other_phase), 0.5, false).unwrap().pairs.is_empty());
        assert_eq!(match_instances(&[pred], &[other_phase], 0.5, true).unwrap().pairs.len(), 1);
    }

    #[test]
    fn empty_sweep_is_not_an_error() {
        let s = best_f1_threshold(&[], &[], &SweepOptions::default()).unwrap();
        assert_eq!(s.threshold, 0.0);
        assert_eq!(s.scores.macro_f1, 0.0);
        assert_eq!(s.curve.len(), 101);
    }

    #[test]
    fn missing_confidence_rejected() {
        let img = AnnotatedImage {
            image_id: 1,
            source: String::new(),
            width: 20,
            height: 20,
            instances: vec![rect(1, PhaseLabel::Alite, 0, 0, 3, 3, None)],
        };
        assert!(best_f1_threshold(std::slice::from_ref(&img), std::slice::from_ref(&img), &SweepOptions::default()).is_err());
    }

    #[test]
    fn table_layout() {
        let s = InstanceScores::from_counts([[3, 1, 2], [1, 0, 0]]);
        let t = format_table(&[("RGB dual".into(), s)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("RGB dual"));
        assert!(lines[2].contains("0.750") && lines[2].contains("1.000"));
    }
}
