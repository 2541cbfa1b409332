use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{confusion, EvalReport};
use crate::error::{Error, Result};
use crate::hsi_io::{Checkpoint, HsiCube, LabelMap};
use crate::model::{predict_logits, ModelConfig, ModelParams};
use crate::preprocess::{write_patch, PatchSet};
use crate::tensor::Tensor;

/// Seconds spent building patches and running the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub extraction_s: f64,
    pub forward_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneMode {
    /// Every pixel of the cube.
    Full,
    /// Only pixels with a non-zero reference label.
    Labeled,
}

#[derive(Clone, Debug)]
pub struct ScenePrediction {
    /// Predicted class per pixel; `0` where nothing was predicted.
    pub predictions: LabelMap,
    /// Present when reference labels were supplied.
    pub report: Option<EvalReport>,
    pub timing: Timing,
    /// Number of pixels classified.
    pub pixels: usize,
}

/// 1-based index of the largest logit; ties go to the lowest class id.
pub fn argmax_class(row: &[f32]) -> u16 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u16 + 1
}

fn argmax_rows(logits: &Tensor<f32>) -> Vec<u16> {
    let k = logits.shape()[1];
    logits.data().chunks_exact(k).map(argmax_class).collect()
}

/// Eval-mode predictions for the selected samples, in `indices` order.
pub fn classify(
    params: &ModelParams,
    cfg: &ModelConfig,
    set: &PatchSet,
    indices: &[usize],
    batch: usize,
) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch.max(1)) {
        out.extend(argmax_rows(&predict_logits(params, cfg, &set.batch(chunk))?));
    }
    Ok(out)
}

/// Classifies a (dimension-reduced) cube with the model stored in `ckpt`.
pub fn predict_scene(
    cube: &HsiCube,
    labels: Option<&LabelMap>,
    cfg: &ModelConfig,
    ckpt: &Checkpoint,
    batch: usize,
    mode: SceneMode,
) -> Result<ScenePrediction> {
    let params = ModelParams::from_checkpoint(cfg, ckpt)?;
    if cube.bands() != cfg.input_bands {
        return Err(Error::dim("predict_scene bands", &[cfg.input_bands], &[cube.bands()]));
    }
    if let Some(l) = labels {
        if l.height() != cube.height() || l.width() != cube.width() {
            return Err(Error::dim(
                "predict_scene labels",
                &[cube.height(), cube.width()],
                &[l.height(), l.width()],
            ));
        }
    }
    let coords: Vec<(usize, usize)> = match (mode, labels) {
        (SceneMode::Labeled, None) => {
            return Err(Error::Config("labeled-pixel prediction needs reference labels".into()))
        }
        (SceneMode::Labeled, Some(l)) => (0..cube.height())
            .flat_map(|y| (0..cube.width()).map(move |x| (y, x)))
            .filter(|&(y, x)| l.get(y, x) != 0)
            .collect(),
        (SceneMode::Full, _) => (0..cube.height())
            .flat_map(|y| (0..cube.width()).map(move |x| (y, x)))
            .collect(),
    };

    let s = cfg.patch_size;
    let plen = s * s * cube.bands();
    let mut timing = Timing::default();
    let mut predicted = vec![0u16; cube.pixels()];
    for chunk in coords.chunks(batch.max(1)) {
        let t0 = Instant::now();
        let mut buf = vec![0.0f32; chunk.len() * plen];
        for (&(y, x), dst) in chunk.iter().zip(buf.chunks_exact_mut(plen)) {
            write_patch(cube, y, x, s, dst);
        }
        let input = Tensor::new(vec![chunk.len(), s, s, cube.bands()], buf)?;
        let t1 = Instant::now();
        let classes = argmax_rows(&predict_logits(&params, cfg, &input)?);
        timing.extraction_s += (t1 - t0).as_secs_f64();
        timing.forward_s += t1.elapsed().as_secs_f64();
        for (&(y, x), c) in chunk.iter().zip(classes) {
            predicted[y * cube.width() + x] = c;
        }
    }

    let report = match labels {
        Some(l) => {
            let (mut preds, mut refs) = (Vec::new(), Vec::new());
            for &(y, x) in &coords {
                let r = l.get(y, x);
                if r != 0 {
                    refs.push(r);
                    preds.push(predicted[y * cube.width() + x]);
                }
            }
            let k = cfg.num_classes.max(l.num_classes() as usize);
            Some(EvalReport::from_confusion(&confusion(&preds, &refs, k)?)?)
        }
        None => None,
    };
    let predictions = LabelMap::new(cube.height(), cube.width(), cfg.num_classes as u16, predicted)?;
    Ok(ScenePrediction {
        predictions,
        report,
        timing,
        pixels: coords.len(),
    })
}
