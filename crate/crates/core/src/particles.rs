//! Particle extraction and the size and phase-fraction analytics built on it.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{trace_component, ParticleInstance};
use crate::components::components_8;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, LabelMap, PhaseLabel};

pub const SIZE_MIN: f64 = 0.1;
pub const SIZE_MAX: f64 = 16.0;

/// Splits every non-matrix phase into 8-connected particles.
///
/// Ids start at 1 and follow the raster position of each particle's first
/// pixel. Components smaller than `min_area` pixels are dropped; a
/// `min_area` of 1 keeps everything.
pub fn extract_instances(labels: &LabelMap, min_area: usize) -> Vec<ParticleInstance> {
    let (w, h) = labels.dims();
    let lab = labels.labels();
    let comps = components_8(w, h, |i| (lab[i] != PhaseLabel::Other).then_some(lab[i]));
    let mut out = Vec::new();
    for (phase, pixels) in comps {
        if pixels.len() < min_area.max(1) {
            continue;
        }
        let mut region = BinaryMask::empty(w, h);
        for &i in &pixels {
            region.set(i % w, i / w, true);
        }
        let polygons = trace_component(w, &pixels);
        let id = out.len() as u64 + 1;
        out.push(
            ParticleInstance::from_region(id, phase, region, Some(polygons), None)
                .expect("non-empty particle component"),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleStats {
    pub id: u64,
    pub phase: PhaseLabel,
    /// Mean of pixel centres, `(x + 0.5, y + 0.5)` per pixel.
    pub centroid: [f64; 2],
    pub area_px: usize,
    /// Diagonal of the tight axis-aligned box.
    pub diag_px: f64,
    pub normalized_size: Option<f64>,
}

pub fn particle_stats(inst: &ParticleInstance) -> ParticleStats {
    let b = inst.bbox;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            if inst.region.get(x, y) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    ParticleStats {
        id: inst.id,
        phase: inst.phase,
        centroid: [sx / n as f64, sy / n as f64],
        area_px: n,
        diag_px: b.diagonal(),
        normalized_size: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeMetric {
    Area,
    #[default]
    Diagonal,
}

impl SizeMetric {
    pub fn of(self, s: &ParticleStats) -> f64 {
        match self {
            SizeMetric::Area => s.area_px as f64,
            SizeMetric::Diagonal => s.diag_px,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeMetric::Area => "area",
            SizeMetric::Diagonal => "diagonal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Linear,
    /// Linear in `ln(v)`.
    Log,
}

/// Maps sizes onto `[0.1, 16]`, smallest to 0.1 and largest to 16.
pub fn normalize_sizes(values: &[f64], mode: Normalization) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::data("size normalization needs at least 2 values"));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::data(format!("sizes must be positive and finite, got {v}")));
    }
    let t: Vec<f64> = match mode {
        Normalization::Linear => values.to_vec(),
        Normalization::Log => values.iter().map(|v| v.ln()).collect(),
    };
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::data("all sizes are equal; normalized scale is undefined"));
    }
    let slope = (SIZE_MAX - SIZE_MIN) / (hi - lo);
    Ok(t.iter()
        .map(|&v| {
            if v == lo {
                SIZE_MIN
            } else if v == hi {
                SIZE_MAX
            } else {
                (SIZE_MIN + (v - lo) * slope).clamp(SIZE_MIN, SIZE_MAX)
            }
        })
        .collect())
}

/// Fills `normalized_size` on every entry.
pub fn attach_normalized(stats: &mut [ParticleStats], metric: SizeMetric, mode: Normalization) -> Result<()> {
    let raw: Vec<f64> = stats.iter().map(|s| metric.of(s)).collect();
    for (s, v) in stats.iter_mut().zip(normalize_sizes(&raw, mode)?) {
        s.normalized_size = Some(v);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdCurve {
    pub metric: SizeMetric,
    /// `(normalized size, percent finer)`, one point per distinct size.
    pub points: Vec<(f64, f64)>,
}

/// Cumulative percent-finer curve. A size's percent counts every particle
/// with a normalized size at or below it.
pub fn psd_curve(stats: &[ParticleStats], metric: SizeMetric, mode: Normalization) -> Result<PsdCurve> {
    if stats.len() < 2 {
        return Err(Error::data(format!(
            "size distribution needs at least 2 particles, got {}",
            stats.len()
        )));
    }
    let raw: Vec<f64> = stats.iter().map(|s| metric.of(s)).collect();
    let mut sizes = normalize_sizes(&raw, mode)?;
    sizes.sort_by(f64::total_cmp);
    let n = sizes.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (k, &s) in sizes.iter().enumerate() {
        let pct = 100.0 * (k + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == s => last.1 = pct,
            _ => points.push((s, pct)),
        }
    }
    Ok(PsdCurve { metric, points })
}

impl PsdCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("normalized_size,percent_finer\n");
        for (s, p) in &self.points {
            let _ = writeln!(out, "{s},{p}");
        }
        out
    }

    /// Step chart: normalized size on x, percent finer on y.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const M: f64 = 48.0;
        let sx = |v: f64| M + (v - SIZE_MIN) / (SIZE_MAX - SIZE_MIN) * (W - 2.0 * M);
        let sy = |p: f64| H - M - p / 100.0 * (H - 2.0 * M);
        let mut path = format!("M{:.2},{:.2}", sx(SIZE_MIN), sy(0.0));
        let mut prev = 0.0;
        for &(s, p) in &self.points {
            let _ = write!(path, " L{:.2},{:.2} L{:.2},{:.2}", sx(s), sy(prev), sx(s), sy(p));
            prev = p;
        }
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<path d="M{M},{M} V{} H{}" fill="none" stroke="black"/>"#,
            H - M,
            W - M
        );
        for t in [0.0, 25.0, 50.0, 75.0, 100.0] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{t}</text>"#,
                M - 4.0,
                sy(t) + 3.0
            );
        }
        for t in [0.1, 4.0, 8.0, 12.0, 16.0] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{}" font-size="10" text-anchor="middle">{t}</text>"#,
                sx(t),
                H - M + 14.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">normalized particle size ({})</text>"#,
            W / 2.0,
            H - 8.0,
            self.metric.name()
        );
        let _ = writeln!(
            svg,
            r#"<text x="12" y="{}" font-size="11" text-anchor="middle" transform="rotate(-90 12 {})">percent finer</text>"#,
            H / 2.0,
            H / 2.0
        );
        let _ = writeln!(svg, r#"<path d="{path}" fill="none" stroke="steelblue" stroke-width="2"/>"#);
        svg.push_str("</svg>\n");
        svg
    }
}

pub fn stats_to_csv(stats: &[ParticleStats]) -> String {
    let mut out = String::from("id,phase,centroid_x,centroid_y,area_px,diag_px,normalized_size\n");
    for s in stats {
        let norm = s.normalized_size.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.id, s.phase, s.centroid[0], s.centroid[1], s.area_px, s.diag_px, norm
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PointSampling {
    Grid,
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTally<T> {
    pub other: T,
    pub alite: T,
    pub belite: T,
}

impl<T: Copy> PhaseTally<T> {
    pub fn get(&self, phase: PhaseLabel) -> T {
        match phase {
            PhaseLabel::Other => self.other,
            PhaseLabel::Alite => self.alite,
            PhaseLabel::Belite => self.belite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCountResult {
    pub total: usize,
    pub counts: PhaseTally<usize>,
    pub fractions: PhaseTally<f64>,
}

/// Phase fractions from `n_points` sample points.
///
/// Grid mode lays a cell-centred `g × g` lattice with `g = ⌈√n⌉` and keeps
/// the first `n` points in raster order; asking for as many points as the
/// image has pixels visits every pixel once. Random mode draws pixels
/// uniformly with replacement.
pub fn point_count(labels: &LabelMap, n_points: usize, sampling: PointSampling) -> Result<PointCountResult> {
    if n_points == 0 {
        return Err(Error::invalid("point count needs at least 1 point"));
    }
    let (w, h) = labels.dims();
    let mut counts = [0usize; 3];
    match sampling {
        PointSampling::Grid if n_points == w * h => {
            counts = labels.counts();
        }
        PointSampling::Grid => {
            let g = (n_points as f64).sqrt().ceil() as usize;
            let g = if g * g < n_points { g + 1 } else { g };
            'outer: for j in 0..g {
                let y = ((j as f64 + 0.5) * h as f64 / g as f64).floor() as usize;
                for i in 0..g {
                    if j * g + i >= n_points {
                        break 'outer;
                    }
                    let x = ((i as f64 + 0.5) * w as f64 / g as f64).floor() as usize;
                    counts[labels.get(x.min(w - 1), y.min(h - 1)).index()] += 1;
                }
            }
        }
        PointSampling::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..n_points {
                let x = rng.gen_range(0..w);
                let y = rng.gen_range(0..h);
                counts[labels.get(x, y).index()] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    let frac = |c: usize| c as f64 / total as f64;
    Ok(PointCountResult {
        total,
        counts: PhaseTally {
            other: counts[0],
            alite: counts[1],
            belite: counts[2],
        },
        fractions: PhaseTally {
            other: frac(counts[0]),
            alite: frac(counts[1]),
            belite: frac(counts[2]),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_with(w: usize, h: usize, cells: &[(usize, usize, PhaseLabel)]) -> LabelMap {
        let mut m = LabelMap::filled(w, h, PhaseLabel::Other);
        for &(x, y, p) in cells {
            m.set(x, y, p);
        }
        m
    }

    fn stats_of(sizes: &[usize]) -> Vec<ParticleStats> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &a)| ParticleStats {
                id: i as u64 + 1,
                phase: PhaseLabel::Alite,
                centroid: [0.0, 0.0],
                area_px: a,
                diag_px: 1.0,
                normalized_size: None,
            })
            .collect()
    }

    #[test]
    fn extraction_cases() {
        use PhaseLabel::*;
        let m = map_with(6, 3, &[(0, 0, Alite), (1, 0, Alite), (4, 1, Alite), (5, 2, Belite)]);
        let inst = extract_instances(&m, 1);
        assert_eq!(inst.len(), 3);
        assert_eq!(inst.iter().map(|i| (i.id, i.phase, i.area())).collect::<Vec<_>>(),
            vec![(1, Alite, 2), (2, Alite, 1), (3, Belite, 1)]);
        assert_eq!(extract_instances(&m, 2).len(), 1);
        let checker = LabelMap::new(
            4,
            4,
            (0..16).map(|i| if (i % 4 + i / 4) % 2 == 0 { Alite } else { Other }).collect(),
        )
        .unwrap();
        assert_eq!(extract_instances(&checker, 1).len(), 1);
        assert!(extract_instances(&LabelMap::filled(5, 5, Other), 1).is_empty());
    }

    #[test]
    fn stats_on_simple_shapes() {
        use PhaseLabel::*;
        let sq = map_with(5, 5, &[(0, 0, Alite), (1, 0, Alite), (0, 1, Alite), (1, 1, Alite)]);
        let s = particle_stats(&extract_instances(&sq, 1)[0]);
        assert_eq!(s.centroid, [1.0, 1.0]);
        assert_eq!(s.area_px, 4);
        assert_eq!(s.diag_px, 8f64.sqrt());
        let cells: Vec<_> = (0..3).flat_map(|x| (0..4).map(move |y| (x, y, Belite))).collect();
        let s = particle_stats(&extract_instances(&map_with(6, 6, &cells), 1)[0]);
        assert_eq!(s.diag_px, 5.0);
        // L pentomino
        let l = [(1, 1), (1, 2), (1, 3), (2, 3), (3, 3)];
        let cells: Vec<_> = l.iter().map(|&(x, y)| (x, y, Alite)).collect();
        let s = particle_stats(&extract_instances(&map_with(5, 5, &cells), 1)[0]);
        let mx = l.iter().map(|p| p.0 as f64 + 0.5).sum::<f64>() / 5.0;
        let my = l.iter().map(|p| p.1 as f64 + 0.5).sum::<f64>() / 5.0;
        assert_eq!(s.centroid, [mx, my]);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_sizes(&[2.0, 10.0], Normalization::Linear).unwrap(), vec![0.1, 16.0]);
        let v = normalize_sizes(&[2.0, 6.0, 10.0], Normalization::Linear).unwrap();
        assert!((v[1] - 8.05).abs() < 1e-12);
        assert!(normalize_sizes(&[5.0, 5.0, 5.0], Normalization::Linear).is_err());
        assert!(normalize_sizes(&[1.0], Normalization::Linear).is_err());
        assert!(normalize_sizes(&[0.0, 1.0], Normalization::Linear).is_err());
        let v = normalize_sizes(&[1.0, 10.0, 100.0], Normalization::Log).unwrap();
        assert_eq!((v[0], v[2]), (0.1, 16.0));
        assert!((v[1] - 8.05).abs() < 1e-12);
    }

    #[test]
    fn psd_counting_and_ties() {
        let c = psd_curve(&stats_of(&[4, 1, 3, 2]), SizeMetric::Area, Normalization::Linear).unwrap();
        let pct: Vec<f64> = c.points.iter().map(|p| p.1).collect();
        assert_eq!(pct, vec![25.0, 50.0, 75.0, 100.0]);
        let c = psd_curve(&stats_of(&[3, 3, 7]), SizeMetric::Area, Normalization::Linear).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points[0].0, 0.1);
        assert!((c.points[0].1 - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.points[1], (16.0, 100.0));
        assert!(psd_curve(&stats_of(&[3]), SizeMetric::Area, Normalization::Linear).is_err());
        assert!(c.to_csv().starts_with("normalized_size,percent_finer\n0.1,66.66"));
        assert!(c.to_svg().contains("<path"));
    }

    #[test]
    fn point_count_examples() {
        let half = LabelMap::new(
            8,
            8,
            (0..64).map(|i| if i % 8 < 4 { PhaseLabel::Alite } else { PhaseLabel::Belite }).collect(),
        )
        .unwrap();
        let r = point_count(&half, 16, PointSampling::Grid).unwrap();
        assert_eq!((r.fractions.alite, r.fractions.belite, r.fractions.other), (0.5, 0.5, 0.0));
        let r = point_count(&half, 1, PointSampling::Grid).unwrap();
        assert_eq!(r.total, 1);
        assert_eq!(r.fractions.get(half.get(4, 4)), 1.0);
        let r = point_count(&half, 64, PointSampling::Grid).unwrap();
        assert_eq!(r.counts.alite, 32);
        let a = point_count(&half, 50, PointSampling::Random { seed: 3 }).unwrap();
        assert_eq!(a, point_count(&half, 50, PointSampling::Random { seed: 3 }).unwrap());
        assert_eq!(a.counts.alite + a.counts.belite + a.counts.other, 50);
        assert!(point_count(&half, 0, PointSampling::Grid).is_err());
    }

    #[test]
    fn grid_truncates_in_raster_order() {
        // 5 points use a 3×3 lattice: first row of 3, then 2 of the second.
        let mut m = LabelMap::filled(9, 9, PhaseLabel::Other);
        for x in 0..9 {
            m.set(x, 1, PhaseLabel::Alite);
            m.set(x, 4, PhaseLabel::Belite);
        }
        let r = point_count(&m, 5, PointSampling::Grid).unwrap();
        assert_eq!((r.counts.alite, r.counts.belite), (3, 2));
    }
}
