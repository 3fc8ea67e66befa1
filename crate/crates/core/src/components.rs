//! 8-connected component labeling.

use std::collections::VecDeque;

const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Groups pixels into 8-connected components.
///
/// `class_of` returns `None` for background and a class key otherwise; two
/// neighbours join only when their keys are equal. Components come back in
/// raster order of their first pixel and each pixel list is raster-sorted.
pub fn components_8<K, F>(width: usize, height: usize, class_of: F) -> Vec<(K, Vec<usize>)>
where
    K: PartialEq + Copy,
    F: Fn(usize) -> Option<K>,
{
    let mut visited = vec![false; width * height];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..width * height {
        if visited[start] {
            continue;
        }
        let Some(key) = class_of(start) else {
            continue;
        };
        visited[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for (dx, dy) in NEIGHBORS_8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if !visited[j] && class_of(j) == Some(key) {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        pixels.sort_unstable();
        out.push((key, pixels));
    }
    out
}
