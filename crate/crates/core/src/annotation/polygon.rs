use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::components::components_8;
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Closed polygon in pixel-corner coordinates (`(0, 0)` is the top-left
/// corner of the top-left pixel).
///
/// Outer boundaries have positive signed area in image coordinates, holes
/// negative. Traced boundaries of 8-connected regions may touch themselves
/// at single vertices where pixels meet diagonally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::data(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data("polygon has non-finite coordinates"));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Shoelace area; positive for outer boundaries.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut twice = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            twice += x0 * y1 - x1 * y0;
        }
        twice / 2.0
    }

    pub fn is_hole(&self) -> bool {
        self.signed_area() < 0.0
    }

    /// Flat `[x0, y0, x1, y1, ...]` list as used by COCO.
    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::data("polygon coordinate list has odd length"));
        }
        Polygon::new(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn translate(&mut self, dx: f64, dy: f64) {
        for v in &mut self.vertices {
            v[0] += dx;
            v[1] += dy;
        }
    }

    /// Boundary length.
    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                (x1 - x0).hypot(y1 - y0)
            })
            .sum()
    }
}

/// Rasterizes polygons: a pixel is set when its centre lies inside the
/// even-odd fill of the whole polygon set.
pub fn polygon_to_mask(polys: &[Polygon], width: usize, height: usize) -> Result<BinaryMask> {
    for (i, p) in polys.iter().enumerate() {
        if p.signed_area() == 0.0 {
            return Err(Error::data(format!("polygon {i} has zero area")));
        }
    }
    let mut mask = BinaryMask::empty(width, height);
    let mut crossings = Vec::new();
    for row in 0..height {
        let yc = row as f64 + 0.5;
        crossings.clear();
        for p in polys {
            let v = p.vertices();
            for i in 0..v.len() {
                let [x0, y0] = v[i];
                let [x1, y1] = v[(i + 1) % v.len()];
                if (y0 > yc) != (y1 > yc) {
                    crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
        }
        crossings.sort_by(f64::total_cmp);
        // A centre c is inside when an odd number of crossings satisfy x < c,
        // i.e. c lies in (x[2k], x[2k+1]].
        for pair in crossings.chunks_exact(2) {
            let first = (pair[0] - 0.5).floor() + 1.0;
            let last = (pair[1] - 0.5).floor();
            let first = first.max(0.0);
            let last = last.min(width as f64 - 1.0);
            if first > last {
                continue;
            }
            for col in first as usize..=last as usize {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}

/// Traces every 8-connected foreground component: its outer boundary first,
/// then its holes. Vertices lie on pixel corners and collinear runs are
/// merged.
pub fn mask_to_polygons(mask: &BinaryMask) -> Vec<Polygon> {
    let (w, h) = mask.dims();
    let bits = mask.bits();
    components_8(w, h, |i| bits[i].then_some(()))
        .into_iter()
        .flat_map(|(_, pixels)| trace_component(w, &pixels))
        .collect()
}

// Directions in image coordinates: east, south, west, north.
const STEP: [(i32, i32); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Boundary loops of one 8-connected pixel set given as raster indices into
/// an image of the given width.
///
/// Boundary edges are directed with the foreground on the right-hand side
/// (in image coordinates), which makes outer loops positively oriented under
/// [`Polygon::signed_area`]. Where two pixels of the set touch only at a
/// corner the walk turns towards the other pixel, so diagonal contacts stay
/// inside one loop.
pub fn trace_component(width: usize, pixels: &[usize]) -> Vec<Polygon> {
    trace_loops(width, pixels)
        .into_iter()
        .map(|lp| Polygon {
            vertices: lp
                .into_iter()
                .map(|(x, y)| [x as f64, y as f64])
                .collect(),
        })
        .collect()
}

/// Same as [`trace_component`] but returns the unmerged unit-step loops as
/// integer corner coordinates, one entry per unit edge.
pub(crate) fn trace_unit_loops(width: usize, pixels: &[usize]) -> Vec<Vec<(i32, i32)>> {
    let edges = boundary_edges(width, pixels);
    walk_loops(&edges, false)
}

fn trace_loops(width: usize, pixels: &[usize]) -> Vec<Vec<(i32, i32)>> {
    let edges = boundary_edges(width, pixels);
    walk_loops(&edges, true)
}

/// Outgoing boundary directions per corner, as a 4-bit set.
fn boundary_edges(width: usize, pixels: &[usize]) -> HashMap<(i32, i32), u8> {
    let set: std::collections::HashSet<(i32, i32)> = pixels
        .iter()
        .map(|&i| ((i % width) as i32, (i / width) as i32))
        .collect();
    let mut edges: HashMap<(i32, i32), u8> = HashMap::new();
    for &(x, y) in &set {
        if !set.contains(&(x, y - 1)) {
            *edges.entry((x, y)).or_default() |= 1 << 0;
        }
        if !set.contains(&(x + 1, y)) {
            *edges.entry((x + 1, y)).or_default() |= 1 << 1;
        }
        if !set.contains(&(x, y + 1)) {
            *edges.entry((x + 1, y + 1)).or_default() |= 1 << 2;
        }
        if !set.contains(&(x - 1, y)) {
            *edges.entry((x, y + 1)).or_default() |= 1 << 3;
        }
    }
    edges
}

fn next_direction(outgoing: u8, heading: usize) -> usize {
    // Left turn first, then straight, then right.
    [(heading + 3) % 4, heading, (heading + 1) % 4]
        .into_iter()
        .find(|d| outgoing & (1 << d) != 0)
        .expect("boundary edges always continue")
}

fn walk_loops(edges: &HashMap<(i32, i32), u8>, merge: bool) -> Vec<Vec<(i32, i32)>> {
    let mut starts: Vec<(i32, i32)> = edges.keys().copied().collect();
    starts.sort_by_key(|&(x, y)| (y, x));
    let mut used: HashMap<(i32, i32), u8> = HashMap::new();
    let mut loops = Vec::new();
    for start in starts {
        let out = edges[&start];
        for d0 in 0..4 {
            if out & (1 << d0) == 0 || used.get(&start).is_some_and(|u| u & (1 << d0) != 0) {
                continue;
            }
            let mut vertices = Vec::new();
            let mut at = start;
            let mut heading = d0;
            loop {
                *used.entry(at).or_default() |= 1 << heading;
                vertices.push((at, heading));
                at = (at.0 + STEP[heading].0, at.1 + STEP[heading].1);
                let next = next_direction(edges[&at], heading);
                if at == start && next == d0 {
                    break;
                }
                heading = next;
            }
            let lp = if merge {
                let n = vertices.len();
                (0..n)
                    .filter(|&i| vertices[i].1 != vertices[(i + n - 1) % n].1)
                    .map(|i| vertices[i].0)
                    .collect()
            } else {
                vertices.into_iter().map(|(v, _)| v).collect()
            };
            loops.push(lp);
        }
    }
    loops
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        BinaryMask::new(w, h, bits).unwrap()
    }

    #[test]
    fn single_pixel_square() {
        let mut m = BinaryMask::empty(5, 6);
        m.set(2, 3, true);
        let polys = mask_to_polygons(&m);
        assert_eq!(polys.len(), 1);
        assert_eq!(
            polys[0].vertices(),
            &[[2.0, 3.0], [3.0, 3.0], [3.0, 4.0], [2.0, 4.0]]
        );
    }

    #[test]
    fn solid_square_merges_collinear() {
        let m = mask_from(&["....", ".###", ".###", ".###"]);
        let polys = mask_to_polygons(&m);
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].vertices().len(), 4);
        assert_eq!(polys[0].signed_area(), 9.0);
    }

    #[test]
    fn ring_has_hole_with_opposite_winding() {
        let m = mask_from(&["###", "#.#", "###"]);
        let polys = mask_to_polygons(&m);
        assert_eq!(polys.len(), 2);
        assert!(polys[0].signed_area() > 0.0);
        assert!(polys[1].is_hole());
        assert_eq!(polys[0].signed_area() + polys[1].signed_area(), 8.0);
        assert_eq!(polygon_to_mask(&polys, 3, 3).unwrap(), m);
    }

    #[test]
    fn diagonal_pixels_form_one_loop() {
        let m = mask_from(&["#.", ".#"]);
        let polys = mask_to_polygons(&m);
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].signed_area(), 2.0);
        assert_eq!(polygon_to_mask(&polys, 2, 2).unwrap(), m);
    }

    #[test]
    fn diagonal_background_is_not_a_hole() {
        // The two background pixels touch diagonally inside a ring of
        // foreground; they are separate 4-connected holes.
        let m = mask_from(&["####", "#.##", "##.#", "####"]);
        let polys = mask_to_polygons(&m);
        assert_eq!(polys.len(), 3);
        assert_eq!(polys.iter().filter(|p| p.is_hole()).count(), 2);
        assert_eq!(polygon_to_mask(&polys, 4, 4).unwrap(), m);
    }

    #[test]
    fn unit_square_covers_one_pixel() {
        let p = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let m = polygon_to_mask(&[p], 2, 2).unwrap();
        assert_eq!(m.bits(), &[true, false, false, false]);
    }

    #[test]
    fn empty_inputs() {
        assert!(polygon_to_mask(&[], 3, 2).unwrap().is_empty());
        assert!(mask_to_polygons(&BinaryMask::empty(4, 4)).is_empty());
    }

    #[test]
    fn degenerate_polygon_rejected() {
        let p = Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!(polygon_to_mask(&[p], 3, 3).is_err());
        assert!(Polygon::new(vec![[0.0, 0.0], [1.0, 1.0]]).is_err());
    }

    #[test]
    fn unit_loops_walk_every_edge() {
        let loops = trace_unit_loops(8, &[0, 1, 2, 3, 8, 9, 10, 11, 16, 17, 18, 19, 24, 25, 26, 27]);
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].len(), 16);
    }
}
