use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use tripath_autograd::ops::resize_bilinear;

use crate::data::{png_io, ImagePair, Normalization};
use crate::error::{Error, Result};
use crate::model::TriPathModel;
use crate::nn::Phase;

/// Which feature map the class activation map is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSelector {
    /// `f_CNN`, the path over the final encoder features.
    Backbone,
    /// `f_Tr`, the attention path over the intermediate features.
    ThirdPath,
}

impl PathSelector {
    pub const ALL: [PathSelector; 2] = [PathSelector::Backbone, PathSelector::ThirdPath];
}

impl fmt::Display for PathSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathSelector::Backbone => "backbone",
            PathSelector::ThirdPath => "third_path",
        })
    }
}

impl FromStr for PathSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(PathSelector::Backbone),
            "third_path" => Ok(PathSelector::ThirdPath),
            other => Err(Error::InvalidArg(format!("unknown path `{other}` (expected backbone or third_path)"))),
        }
    }
}

/// Grad-CAM heatmap in `[0, 1]` at input resolution.
///
/// The score is the mean logit of `target_class` over the image; channel
/// weights are the spatial means of its gradient with respect to the
/// selected feature map.
pub fn gradcam(
    model: &TriPathModel,
    pair: &ImagePair,
    norm: &Normalization,
    target_class: usize,
    selector: PathSelector,
) -> Result<Array2<f64>> {
    let n = model.config.num_classes;
    if target_class > n {
        return Err(Error::LabelOutOfRange { sample: pair.sample_id.clone(), value: target_class, max: n });
    }
    let t1 = norm.apply(&pair.image_t1).insert_axis(Axis(0));
    let t2 = norm.apply(&pair.image_t2).insert_axis(Axis(0));
    let out = model.forward_with(&t1, &t2, Phase::Eval, true)?;
    let feature = match selector {
        PathSelector::Backbone => out.f_cnn,
        PathSelector::ThirdPath => out
            .f_tr
            .ok_or_else(|| Error::InvalidArg("the model has no third path".into()))?,
    };
    let score = out.logits.narrow(1, target_class, 1).mean_all();
    let grads = score.backward();
    let a = feature.value().index_axis(Axis(0), 0).to_owned().into_dimensionality::<ndarray::Ix3>().unwrap();
    let g = match grads.get(&feature) {
        Some(g) => g.index_axis(Axis(0), 0).to_owned().into_dimensionality::<ndarray::Ix3>().unwrap(),
        None => Array3::zeros(a.raw_dim()),
    };
    let weights = g.mean_axis(Axis(2)).unwrap().mean_axis(Axis(1)).unwrap();
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let mut cam = Array2::<f64>::zeros((h, w));
    for (k, plane) in a.outer_iter().enumerate() {
        cam.scaled_add(weights[k], &plane);
    }
    cam.mapv_inplace(|v| v.max(0.0));
    let (lo, hi) = cam.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    if hi <= 0.0 {
        return Err(Error::AllZeroMap);
    }
    if hi > lo {
        cam.mapv_inplace(|v| (v - lo) / (hi - lo));
    } else {
        cam.fill(1.0);
    }
    let (oh, ow) = (pair.height(), pair.width());
    let up = resize_bilinear(&cam.into_dyn().insert_axis(Axis(0)).insert_axis(Axis(0)), oh, ow);
    Ok(up
        .into_shape_with_order((oh, ow))
        .expect("single plane")
        .mapv(|v| v.clamp(0.0, 1.0)))
}

/// Blue-to-red ramp.
fn heat_color(v: f64) -> [f64; 3] {
    [v, 1.0 - (2.0 * v - 1.0).abs(), 1.0 - v]
}

/// Half-and-half blend of an image (`[3, H, W]` in `[0, 1]`) and a heatmap.
pub fn overlay(image: &Array3<f64>, heat: &Array2<f64>) -> Array3<f64> {
    Array3::from_shape_fn(image.raw_dim(), |(c, y, x)| 0.5 * image[[c, y, x]] + 0.5 * heat_color(heat[[y, x]])[c])
}

/// Write `<stem>_<path>.png` (gray), `<stem>_<path>_overlay.png` for each
/// heatmap, and `<stem>_side_by_side.png` with all overlays in a row.
pub fn write_gradcam(dir: &Path, stem: &str, image: &Array3<f64>, maps: &[(PathSelector, Array2<f64>)]) -> Result<()> {
    let mut panels = Vec::new();
    for (sel, heat) in maps {
        png_io::write_gray(&dir.join(format!("{stem}_{sel}.png")), heat)?;
        let ov = overlay(image, heat);
        png_io::write_rgb(&dir.join(format!("{stem}_{sel}_overlay.png")), &ov)?;
        panels.push(ov);
    }
    if panels.len() > 1 {
        let views: Vec<_> = panels.iter().map(|p| p.view()).collect();
        let row = ndarray::concatenate(Axis(2), &views).expect("equal heights");
        png_io::write_rgb(&dir.join(format!("{stem}_side_by_side.png")), &row)?;
    }
    Ok(())
}
