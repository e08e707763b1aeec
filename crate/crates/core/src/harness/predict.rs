use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::{image_path, png_io, DatasetManifest};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport};

pub const MASK_DIR: &str = "masks";
pub const COMPARE_DIR: &str = "compare";

pub const TRUE_POSITIVE: [u8; 3] = [255, 255, 255];
pub const TRUE_NEGATIVE: [u8; 3] = [0, 0, 0];
pub const FALSE_POSITIVE: [u8; 3] = [255, 0, 0];
pub const FALSE_NEGATIVE: [u8; 3] = [0, 255, 0];

/// Comparison color of one pixel. A change predicted with the wrong class
/// counts as a false positive.
pub fn compare_color(pred: u8, gt: u8) -> [u8; 3] {
    match (pred == gt, gt == 0, pred == 0) {
        (true, true, _) => TRUE_NEGATIVE,
        (true, false, _) => TRUE_POSITIVE,
        (false, false, true) => FALSE_NEGATIVE,
        _ => FALSE_POSITIVE,
    }
}

pub fn comparison_image(pred: &Array2<u8>, gt: &Array2<u8>) -> Vec<u8> {
    pred.iter().zip(gt.iter()).flat_map(|(&p, &g)| compare_color(p, g)).collect()
}

/// Write `masks/<id>.png` for every prediction and, for labeled manifests,
/// `compare/<id>.png`.
pub fn export_predictions(out: &Path, manifest: &DatasetManifest, preds: &[(String, Array2<u8>)]) -> Result<()> {
    for (id, pred) in preds {
        png_io::write_mask(&out.join(MASK_DIR).join(format!("{id}.png")), pred)?;
        if manifest.labeled {
            let gt = png_io::read_mask(&image_path(&manifest.root, "label", id))?;
            let (h, w) = gt.dim();
            png_io::write_rgb8(&out.join(COMPARE_DIR).join(format!("{id}.png")), h, w, &comparison_image(pred, &gt))?;
        }
    }
    Ok(())
}

/// Score a directory of predicted class PNGs against a directory of ground
/// truth PNGs; files are matched by name.
pub fn metrics_from_dirs(pred_dir: &Path, gt_dir: &Path, num_classes: usize, class_names: &[String]) -> Result<MetricsReport> {
    let mut names: Vec<_> = fs::read_dir(gt_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidArg(format!("no PNG files in {}", gt_dir.display())));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for gt_path in names {
        let name = gt_path.file_name().unwrap();
        let pred_path = pred_dir.join(name);
        if !pred_path.is_file() {
            return Err(Error::MissingFile {
                sample: gt_path.file_stem().unwrap().to_string_lossy().into_owned(),
                path: pred_path,
            });
        }
        let gt = png_io::read_mask(&gt_path)?;
        let pred = png_io::read_mask(&pred_path)?;
        cm.accumulate_2d(pred.view(), gt.view())?;
    }
    Ok(cm.report(class_names))
}
