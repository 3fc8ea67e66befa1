//! Ground-truth and predicted particle annotations: polygon and run-length
//! mask encodings, labelme and COCO documents, and dataset split planning.

mod coco;
mod labelme;
mod polygon;
mod rle;
mod split;

pub use coco::{export_coco, import_coco, CocoOptions};
pub use labelme::import_labelme;
pub use polygon::{mask_to_polygons, polygon_to_mask, trace_component, Polygon};
pub(crate) use polygon::trace_unit_loops;
pub use rle::{rle_decode, rle_encode, RleCounts};
pub use split::{plan_split, SplitEntry, SplitPlan, SplitSide};

use crate::error::{Error, Result};
use crate::raster::{BBox, BinaryMask, PhaseLabel};

/// One annotated or detected particle.
///
/// `region` spans the whole image; `bbox` is its tight box. Ground truth
/// carries no confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleInstance {
    pub id: u64,
    pub phase: PhaseLabel,
    pub region: BinaryMask,
    pub polygons: Vec<Polygon>,
    pub bbox: BBox,
    pub confidence: Option<f64>,
}

impl ParticleInstance {
    /// Builds an instance from its mask, tracing polygons when none are given.
    pub fn from_region(
        id: u64,
        phase: PhaseLabel,
        region: BinaryMask,
        polygons: Option<Vec<Polygon>>,
        confidence: Option<f64>,
    ) -> Result<Self> {
        if phase == PhaseLabel::Other {
            return Err(Error::invalid(format!(
                "instance {id}: particles must be alite or belite"
            )));
        }
        let bbox = region
            .bbox()
            .ok_or_else(|| Error::data(format!("instance {id}: region is empty")))?;
        if let Some(c) = confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::data(format!(
                    "instance {id}: confidence {c} outside [0, 1]"
                )));
            }
        }
        let polygons = match polygons {
            Some(p) => p,
            None => mask_to_polygons(&region),
        };
        Ok(Self {
            id,
            phase,
            region,
            polygons,
            bbox,
            confidence,
        })
    }

    pub fn area(&self) -> usize {
        self.region.count()
    }
}

/// All particles of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: u64,
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<ParticleInstance>,
}

impl AnnotatedImage {
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for inst in &self.instances {
            if inst.region.dims() != (self.width, self.height) {
                return Err(Error::DimensionMismatch {
                    expected: (self.width, self.height),
                    found: inst.region.dims(),
                });
            }
            if !ids.insert(inst.id) {
                return Err(Error::data(format!(
                    "image {}: duplicate instance id {}",
                    self.image_id, inst.id
                )));
            }
        }
        Ok(())
    }

    pub fn count_phase(&self, phase: PhaseLabel) -> usize {
        self.instances.iter().filter(|i| i.phase == phase).count()
    }
}
