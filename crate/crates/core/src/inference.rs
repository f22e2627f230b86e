//! Dense sliding-window inference over every LA slice of a volume.

use crate::bagging::dense_grid;
use crate::error::Result;
use crate::losses::TaskLoss;
use crate::model::AcMil;
use crate::synthdata::{ConceptGrades, PhantomVolume};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

/// Tile overlap used for validation and test inference.
pub const DENSE_OVERLAP: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct VolumeInference {
    pub volume_id: usize,
    pub y_true: u8,
    pub grades: ConceptGrades,
    pub pred: usize,
    pub task_logits: Array1<f32>,
    /// Ordered sh, nu, ao.
    pub concept_logits: Vec<Array1<f32>>,
    pub adv_logits: Vec<Array1<f32>>,
    /// Per concept (sh, nu, ao, un): `[slices, tiles]`.
    pub alpha: Vec<Array2<f32>>,
    /// Per concept: `[slices, L]`.
    pub z: Vec<Array2<f32>>,
    pub beta: Array1<f32>,
    pub slices: Vec<usize>,
    /// Tile origins, shared by every slice.
    pub origins: Vec<(usize, usize)>,
    pub patch_size: usize,
}

pub fn infer_volume(
    model: &AcMil<f32>,
    volume: &PhantomVolume,
    task_loss: TaskLoss,
) -> Result<VolumeInference> {
    let p = model.config.patch_size;
    let grid = dense_grid(volume, p, DENSE_OVERLAP)?;
    let fwd = model.forward(grid.pixel_tensor().view(), false)?;
    let origins = grid.patches[0].iter().map(|patch| patch.origin).collect();
    Ok(VolumeInference {
        volume_id: volume.id,
        y_true: volume.y_vol,
        grades: volume.grades,
        pred: task_loss.predict(fwd.head.task_logits.view()),
        task_logits: fwd.head.task_logits,
        concept_logits: fwd.concept_logits,
        adv_logits: fwd.adv_logits,
        alpha: fwd.alpha,
        z: fwd.z,
        beta: fwd.head.beta,
        slices: grid.slices,
        origins,
        patch_size: p,
    })
}

/// Dense inference over many volumes, in parallel; output order follows input.
pub fn infer_all(
    model: &AcMil<f32>,
    volumes: &[&PhantomVolume],
    task_loss: TaskLoss,
) -> Result<Vec<VolumeInference>> {
    volumes
        .par_iter()
        .map(|v| infer_volume(model, v, task_loss))
        .collect()
}
