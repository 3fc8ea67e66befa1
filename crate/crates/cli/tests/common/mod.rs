#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clinker_core::annotation::{export_coco, AnnotatedImage, CocoOptions};
use clinker_core::particles::extract_instances;
use clinker_core::synth::{microstructure, SynthSpec};
use clinker_core::PhaseLabel;

pub fn clinker() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clinker"))
}

pub fn run(args: &[&str]) -> Output {
    clinker().args(args).output().expect("spawn clinker")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct Scene {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub gt: PathBuf,
    pub pred: PathBuf,
}

/// Writes the default synthetic micrograph, its label map, the ground-truth
/// particles as COCO and a scored detection set derived from them.
pub fn write_scene(dir: &Path) -> Scene {
    let s = microstructure(&SynthSpec::default()).unwrap();
    let image = dir.join("image.png");
    let labels = dir.join("labels.png");
    s.image.save_png(&image).unwrap();
    s.labels.to_color_image().save_png(&labels).unwrap();

    let instances = extract_instances(&s.labels, 1);
    let gt_doc = AnnotatedImage {
        image_id: 1,
        source: "image.png".into(),
        width: s.labels.width(),
        height: s.labels.height(),
        instances: instances.clone(),
    };
    // Every third particle is missed at high cutoffs, every fifth has its phase swapped.
    let mut det_doc = gt_doc.clone();
    for (k, inst) in det_doc.instances.iter_mut().enumerate() {
        inst.confidence = Some(if k % 3 == 0 { 0.35 } else { 0.6 + 0.01 * (k % 30) as f64 });
        if k % 5 == 0 {
            inst.phase = match inst.phase {
                PhaseLabel::Alite => PhaseLabel::Belite,
                _ => PhaseLabel::Alite,
            };
        }
    }
    let gt = dir.join("gt.json");
    let pred = dir.join("pred.json");
    std::fs::write(&gt, export_coco(&[gt_doc], CocoOptions::default()).unwrap()).unwrap();
    std::fs::write(&pred, export_coco(&[det_doc], CocoOptions { use_rle: true }).unwrap()).unwrap();
    Scene { image, labels, gt, pred }
}

/// Ten non-overlapping 50x50 windows on a 300x300 image.
pub const TEN_WINDOWS: &str = r#"
[mow]
p = 3

[mow.sampling]
mode = "explicit"
windows = [
  { x = 0, y = 0, n = 50 }, { x = 60, y = 20, n = 50 }, { x = 120, y = 40, n = 50 },
  { x = 180, y = 60, n = 50 }, { x = 240, y = 80, n = 50 }, { x = 10, y = 150, n = 50 },
  { x = 70, y = 170, n = 50 }, { x = 130, y = 190, n = 50 }, { x = 190, y = 210, n = 50 },
  { x = 250, y = 240, n = 50 },
]

[grid]
n_trees = [40]
max_depth = [4]
"#;
