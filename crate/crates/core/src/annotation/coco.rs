use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{mask_to_polygons, polygon_to_mask, rle_decode, rle_encode, AnnotatedImage};
use super::{ParticleInstance, Polygon, RleCounts};
use crate::error::{Error, Result};
use crate::raster::PhaseLabel;

/// Export settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CocoOptions {
    /// Write column-major run lengths instead of polygons.
    pub use_rle: bool,
}

#[derive(Serialize, Deserialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    segmentation: Segmentation,
    area: f64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    supercategory: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [usize; 2], counts: RleRepr },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RleRepr {
    Raw(Vec<u32>),
    Compressed(String),
}

fn category_id(phase: PhaseLabel) -> u64 {
    phase as u64
}

/// Serializes images as a COCO instance-segmentation document.
///
/// Categories are fixed (1 = alite, 2 = belite); annotation ids run from 1
/// across the whole dataset in image then instance order.
pub fn export_coco(images: &[AnnotatedImage], options: CocoOptions) -> Result<String> {
    let mut doc = CocoDoc {
        images: Vec::with_capacity(images.len()),
        annotations: Vec::new(),
        categories: PhaseLabel::PARTICLES
            .iter()
            .map(|&p| CocoCategory {
                id: category_id(p),
                name: p.name().to_string(),
                supercategory: Some("clinker".to_string()),
            })
            .collect(),
    };
    let mut next_id = 1;
    for img in images {
        img.validate()?;
        doc.images.push(CocoImage {
            id: img.image_id,
            file_name: img.source.clone(),
            width: img.width,
            height: img.height,
        });
        for inst in &img.instances {
            let segmentation = if options.use_rle {
                let rle = rle_encode(&inst.region);
                Segmentation::Rle {
                    size: [rle.height, rle.width],
                    counts: RleRepr::Raw(rle.counts),
                }
            } else {
                let polys = if inst.polygons.is_empty() {
                    mask_to_polygons(&inst.region)
                } else {
                    inst.polygons.clone()
                };
                Segmentation::Polygons(polys.iter().map(Polygon::to_flat).collect())
            };
            let b = inst.bbox;
            doc.annotations.push(CocoAnnotation {
                id: next_id,
                image_id: img.image_id,
                category_id: category_id(inst.phase),
                segmentation,
                area: inst.area() as f64,
                bbox: [b.x as f64, b.y as f64, b.w as f64, b.h as f64],
                iscrowd: 0,
                score: inst.confidence,
            });
            next_id += 1;
        }
    }
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Parses a COCO instance document. Instance ids are the annotation ids and
/// a `score` field becomes the instance confidence.
pub fn import_coco(json: &str) -> Result<Vec<AnnotatedImage>> {
    let doc: CocoDoc = serde_json::from_str(json)?;
    let categories: BTreeMap<u64, &str> = doc
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let mut images: BTreeMap<u64, AnnotatedImage> = BTreeMap::new();
    let mut order = Vec::new();
    for im in &doc.images {
        if im.width == 0 || im.height == 0 {
            return Err(Error::data(format!("image {}: empty size", im.id)));
        }
        let previous = images.insert(
            im.id,
            AnnotatedImage {
                image_id: im.id,
                source: im.file_name.clone(),
                width: im.width,
                height: im.height,
                instances: Vec::new(),
            },
        );
        if previous.is_some() {
            return Err(Error::data(format!("duplicate image id {}", im.id)));
        }
        order.push(im.id);
    }
    for ann in doc.annotations {
        let name = categories.get(&ann.category_id).ok_or_else(|| {
            Error::data(format!(
                "annotation {}: unknown category id {}",
                ann.id, ann.category_id
            ))
        })?;
        let phase = PhaseLabel::parse_particle(name).ok_or_else(|| {
            Error::data(format!(
                "annotation {}: category '{name}' is neither alite nor belite",
                ann.id
            ))
        })?;
        let img = images.get_mut(&ann.image_id).ok_or_else(|| {
            Error::data(format!(
                "annotation {}: unknown image id {}",
                ann.id, ann.image_id
            ))
        })?;
        let (w, h) = (img.width, img.height);
        let context = |e: Error| Error::data(format!("annotation {}: {e}", ann.id));
        let (region, polygons) = match ann.segmentation {
            Segmentation::Polygons(flat) => {
                let polys = flat
                    .iter()
                    .map(|f| Polygon::from_flat(f))
                    .collect::<Result<Vec<_>>>()
                    .map_err(context)?;
                (polygon_to_mask(&polys, w, h).map_err(context)?, Some(polys))
            }
            Segmentation::Rle { size, counts } => {
                if size != [h, w] {
                    return Err(Error::data(format!(
                        "annotation {}: RLE size {:?} does not match image {}x{}",
                        ann.id, size, w, h
                    )));
                }
                let rle = match counts {
                    RleRepr::Raw(counts) => RleCounts {
                        width: w,
                        height: h,
                        counts,
                    },
                    RleRepr::Compressed(s) => {
                        RleCounts::from_compressed(w, h, &s).map_err(context)?
                    }
                };
                (rle_decode(&rle).map_err(context)?, None)
            }
        };
        let inst = ParticleInstance::from_region(ann.id, phase, region, polygons, ann.score)
            .map_err(context)?;
        img.instances.push(inst);
    }
    let out: Vec<AnnotatedImage> = order
        .into_iter()
        .map(|id| images.remove(&id).expect("inserted above"))
        .collect();
    for img in &out {
        img.validate()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BinaryMask;

    fn square_image() -> AnnotatedImage {
        let mut region = BinaryMask::empty(10, 8);
        for y in 2..5 {
            for x in 3..7 {
                region.set(x, y, true);
            }
        }
        let inst = ParticleInstance::from_region(1, PhaseLabel::Alite, region, None, None).unwrap();
        AnnotatedImage {
            image_id: 7,
            source: "a.png".into(),
            width: 10,
            height: 8,
            instances: vec![inst],
        }
    }

    #[test]
    fn empty_dataset() {
        let json = export_coco(&[], CocoOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["images"].as_array().unwrap().len(), 0);
        assert_eq!(v["annotations"].as_array().unwrap().len(), 0);
        assert_eq!(v["categories"].as_array().unwrap().len(), 2);
        assert!(import_coco(&json).unwrap().is_empty());
    }

    #[test]
    fn single_square_annotation() {
        for use_rle in [false, true] {
            let json = export_coco(&[square_image()], CocoOptions { use_rle }).unwrap();
            let v: serde_json::Value = serde_json::from_str(&json).unwrap();
            let ann = &v["annotations"][0];
            assert_eq!(ann["category_id"], 1);
            assert_eq!(ann["area"], 12.0);
            assert_eq!(ann["bbox"], serde_json::json!([3.0, 2.0, 4.0, 3.0]));
            let back = import_coco(&json).unwrap();
            assert_eq!(back[0].instances[0].region, square_image().instances[0].region);
            assert_eq!(back[0].instances[0].phase, PhaseLabel::Alite);
        }
    }

    #[test]
    fn key_order_is_stable() {
        let json = export_coco(&[square_image()], CocoOptions { use_rle: true }).unwrap();
        let i = |k: &str| json.find(k).unwrap();
        assert!(i("\"images\"") < i("\"annotations\"") && i("\"annotations\"") < i("\"categories\""));
        assert!(i("\"segmentation\"") < i("\"area\"") && i("\"area\"") < i("\"bbox\""));
    }

    #[test]
    fn unknown_category_rejected() {
        let json = r#"{"images":[{"id":1,"file_name":"x","width":2,"height":2}],
            "annotations":[{"id":1,"image_id":1,"category_id":9,"segmentation":{"size":[2,2],"counts":[0,4]},"area":4,"bbox":[0,0,2,2]}],
            "categories":[{"id":1,"name":"alite"}]}"#;
        let err = import_coco(json).unwrap_err().to_string();
        assert!(err.contains("unknown category id 9"), "{err}");
    }

    #[test]
    fn compressed_rle_and_scores_are_read() {
        let json = r#"{"images":[{"id":1,"file_name":"x","width":4,"height":4}],
            "annotations":[{"id":5,"image_id":1,"category_id":2,"segmentation":{"size":[4,4],"counts":"52203"},"area":4,"bbox":[1,1,2,2],"score":0.75}],
            "categories":[{"id":2,"name":"Belite"}]}"#;
        let imgs = import_coco(json).unwrap();
        let inst = &imgs[0].instances[0];
        assert_eq!(inst.phase, PhaseLabel::Belite);
        assert_eq!(inst.area(), 4);
        assert_eq!(inst.confidence, Some(0.75));
        assert_eq!(inst.id, 5);
    }
}
