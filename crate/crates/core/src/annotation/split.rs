use serde::{Deserialize, Serialize};

use super::AnnotatedImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub image_id: u64,
    pub particles: usize,
    pub side: SplitSide,
    /// Cross-validation fold, train images only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

/// Whole-image train/test assignment plus cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub folds: usize,
    pub train_particles: usize,
    pub test_particles: usize,
    /// Sorted by image id.
    pub entries: Vec<SplitEntry>,
}

impl SplitPlan {
    pub fn train_share(&self) -> f64 {
        let total = self.train_particles + self.test_particles;
        if total == 0 {
            0.0
        } else {
            self.train_particles as f64 / total as f64
        }
    }

    pub fn side_of(&self, image_id: u64) -> Option<SplitSide> {
        self.entries
            .iter()
            .find(|e| e.image_id == image_id)
            .map(|e| e.side)
    }
}

/// SplitMix64 finaliser; gives a seed-dependent but input-order-free key.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Assigns whole images to train or test so the train side holds at least
/// `train_fraction` of all particles, then deals train images into folds.
///
/// Starting from everything in train, images move to test largest first
/// whenever the train side stays at or above the target. Equal-sized images
/// are ordered by a seeded hash of their id, so the plan does not depend on
/// the input order.
pub fn plan_split(
    images: &[AnnotatedImage],
    train_fraction: f64,
    folds: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut ids: Vec<u64> = images.iter().map(|i| i.image_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::data("image ids must be unique"));
    }
    let key = |id: u64| mix64(seed ^ mix64(id));
    let mut order: Vec<(u64, usize)> = images
        .iter()
        .map(|i| (i.image_id, i.instances.len()))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(key(a.0).cmp(&key(b.0))).then(a.0.cmp(&b.0)));

    let total: usize = order.iter().map(|&(_, n)| n).sum();
    let target = (train_fraction * total as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut train = total;
    let mut sides = vec![SplitSide::Train; order.len()];
    for (i, &(_, n)) in order.iter().enumerate() {
        if n > 0 && train - n >= target {
            train -= n;
            sides[i] = SplitSide::Test;
        }
    }

    let mut train_ids: Vec<u64> = order
        .iter()
        .zip(&sides)
        .filter(|(_, s)| **s == SplitSide::Train)
        .map(|(&(id, _), _)| id)
        .collect();
    if folds == 0 || train_ids.len() < folds {
        return Err(Error::data(format!(
            "{} train images cannot fill {folds} folds",
            train_ids.len()
        )));
    }
    train_ids.sort_by_key(|&id| (key(id.rotate_left(17)), id));
    let fold_of = |id: u64| train_ids.iter().position(|&t| t == id).map(|p| p % folds);

    let mut entries: Vec<SplitEntry> = order
        .iter()
        .zip(&sides)
        .map(|(&(image_id, particles), &side)| SplitEntry {
            image_id,
            particles,
            side,
            fold: match side {
                SplitSide::Train => fold_of(image_id),
                SplitSide::Test => None,
            },
        })
        .collect();
    entries.sort_by_key(|e| e.image_id);
    Ok(SplitPlan {
        seed,
        folds,
        train_particles: train,
        test_particles: total - train,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ParticleInstance;
    use crate::raster::{BinaryMask, PhaseLabel};

    fn corpus(counts: &[usize]) -> Vec<AnnotatedImage> {
        let mut region = BinaryMask::empty(2, 2);
        region.set(0, 0, true);
        let inst = ParticleInstance::from_region(0, PhaseLabel::Alite, region, None, None).unwrap();
        counts
            .iter()
            .enumerate()
            .map(|(i, &n)| AnnotatedImage {
                image_id: i as u64 + 100,
                source: format!("img{i}.png"),
                width: 2,
                height: 2,
                instances: (0..n)
                    .map(|k| ParticleInstance { id: k as u64, ..inst.clone() })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn ten_single_particle_images() {
        let plan = plan_split(&corpus(&[1; 10]), 0.8, 4, 1).unwrap();
        assert_eq!((plan.train_particles, plan.test_particles), (8, 2));
        let mut sizes = [0; 4];
        for e in &plan.entries {
            if let Some(f) = e.fold {
                sizes[f] += 1;
            }
        }
        assert_eq!(sizes.iter().sum::<usize>(), 8);
        assert!(sizes.iter().all(|&s| s == 2));
    }

    #[test]
    fn folds_only_on_train() {
        let plan = plan_split(&corpus(&[3, 1, 4, 1, 5, 9, 2, 6, 5, 3]), 0.8, 4, 9).unwrap();
        for e in &plan.entries {
            assert_eq!(e.fold.is_some(), e.side == SplitSide::Train);
        }
        assert_eq!(plan.train_particles + plan.test_particles, 39);
        assert!(plan.train_particles as f64 >= 0.8 * 39.0);
    }

    #[test]
    fn too_few_images() {
        assert!(plan_split(&corpus(&[5, 5, 5]), 0.8, 4, 0).is_err());
        assert!(plan_split(&corpus(&[5; 10]), 1.0, 4, 0).is_err());
    }

    #[test]
    fn order_invariant() {
        let imgs = corpus(&[7, 3, 3, 3, 8, 1, 1, 2, 9, 4, 4, 6]);
        let mut rev = imgs.clone();
        rev.reverse();
        assert_eq!(plan_split(&imgs, 0.8, 4, 5).unwrap(), plan_split(&rev, 0.8, 4, 5).unwrap());
    }
}
