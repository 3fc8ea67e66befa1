use serde::Deserialize;

use super::{polygon_to_mask, AnnotatedImage, ParticleInstance, Polygon};
use crate::error::{Error, Result};
use crate::raster::PhaseLabel;

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct LabelmeDoc {
    image_path: String,
    image_width: usize,
    image_height: usize,
    shapes: Vec<LabelmeShape>,
}

#[derive(Deserialize)]
struct LabelmeShape {
    label: String,
    points: Vec<[f64; 2]>,
    #[serde(default)]
    shape_type: Option<String>,
}

/// Reads one labelme document. Each alite or belite polygon becomes a
/// particle with ids counting from 1 in document order.
pub fn import_labelme(json: &str, image_id: u64) -> Result<AnnotatedImage> {
    let doc: LabelmeDoc = serde_json::from_str(json)?;
    let (w, h) = (doc.image_width, doc.image_height);
    if w == 0 || h == 0 {
        return Err(Error::data(format!(
            "{}: image size {w}x{h} is empty",
            doc.image_path
        )));
    }
    let mut instances = Vec::with_capacity(doc.shapes.len());
    for (i, shape) in doc.shapes.into_iter().enumerate() {
        let phase = PhaseLabel::parse_particle(&shape.label).ok_or_else(|| {
            Error::data(format!(
                "shape {i}: label '{}' is neither alite nor belite",
                shape.label
            ))
        })?;
        let points = match shape.shape_type.as_deref() {
            None | Some("polygon") => shape.points,
            Some("rectangle") if shape.points.len() == 2 => {
                let [[x0, y0], [x1, y1]] = [shape.points[0], shape.points[1]];
                vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
            }
            Some(other) => {
                return Err(Error::data(format!(
                    "shape {i}: unsupported shape_type '{other}'"
                )))
            }
        };
        let polygon =
            Polygon::new(points).map_err(|e| Error::data(format!("shape {i}: {e}")))?;
        let region = polygon_to_mask(std::slice::from_ref(&polygon), w, h)
            .map_err(|e| Error::data(format!("shape {i}: {e}")))?;
        let inst = ParticleInstance::from_region(i as u64 + 1, phase, region, Some(vec![polygon]), None)
            .map_err(|e| Error::data(format!("shape {i}: {e}")))?;
        instances.push(inst);
    }
    Ok(AnnotatedImage {
        image_id,
        source: doc.image_path,
        width: w,
        height: h,
        instances,
    })
}
