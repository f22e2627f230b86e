//! On-disk dataset layout.
//!
//! ```text
//! meta.json                global manifest
//! vol_<id>.f32             D*H*W little-endian f32, C order
//! vol_<id>.masks.u8        blood_pool, myocardium, aorta stacked, one byte per voxel
//! vol_<id>.json            labels and LA slice range
//! ```

use super::dataset::class_counts;
use super::{
    derive_global_quality, ConceptGrades, PhantomVolume, SliceRange, VolumeMasks,
    GENERATOR_VERSION, NUM_GRADES,
};
use crate::error::{Error, Result};
use crate::jsonio;
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator_version: String,
    pub count: usize,
    /// [depth, height, width]
    pub shape: [usize; 3],
    pub seed: Option<u64>,
    pub class_counts: [usize; NUM_GRADES],
    pub volume_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub volumes: Vec<PhantomVolume>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VolumeLabels {
    id: usize,
    seed: u64,
    grades: ConceptGrades,
    noise_level: u8,
    y_vol: u8,
    la_slice_range: SliceRange,
}

#[derive(Clone, Copy, Debug)]
pub struct ReadOptions {
    /// When false, missing mask files yield volumes without masks instead of
    /// an error.
    pub require_masks: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            require_masks: true,
        }
    }
}

fn stem(id: usize) -> String {
    format!("vol_{id:04}")
}

/// Write volumes to `dir` (created if needed). All volumes must share a shape.
pub fn write_dataset(
    volumes: &[PhantomVolume],
    dir: &Path,
    seed: Option<u64>,
) -> Result<DatasetMeta> {
    let shape = match volumes.first() {
        Some(v) => v.dim(),
        None => return Err(Error::validation("cannot write an empty dataset")),
    };
    if let Some(v) = volumes.iter().find(|v| v.dim() != shape) {
        return Err(Error::validation(format!(
            "{} has shape {:?}, expected {:?}",
            stem(v.id),
            v.dim(),
            shape
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    volumes.par_iter().try_for_each(|v| write_volume(v, dir))?;
    let meta = DatasetMeta {
        generator_version: GENERATOR_VERSION.to_string(),
        count: volumes.len(),
        shape: [shape.0, shape.1, shape.2],
        seed,
        class_counts: class_counts(volumes),
        volume_ids: volumes.iter().map(|v| v.id).collect(),
    };
    jsonio::write_sorted(&dir.join("meta.json"), &meta)?;
    Ok(meta)
}

fn write_volume(v: &PhantomVolume, dir: &Path) -> Result<()> {
    let name = stem(v.id);
    let mut bytes = Vec::with_capacity(v.intensities.len() * 4);
    for x in v.intensities.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let path = dir.join(format!("{name}.f32"));
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    if let Some(masks) = &v.masks {
        let mut bytes = Vec::with_capacity(masks.blood_pool.len() * 3);
        for m in [&masks.blood_pool, &masks.myocardium, &masks.aorta] {
            bytes.extend(m.iter().map(|&b| u8::from(b)));
        }
        let path = dir.join(format!("{name}.masks.u8"));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }

    let labels = VolumeLabels {
        id: v.id,
        seed: v.seed,
        grades: v.grades,
        noise_level: v.noise_level,
        y_vol: v.y_vol,
        la_slice_range: v.la_slice_range,
    };
    jsonio::write_sorted(&dir.join(format!("{name}.json")), &labels)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    read_dataset_with(dir, ReadOptions::default())
}

pub fn read_dataset_with(dir: &Path, options: ReadOptions) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::load(
            dir.display().to_string(),
            "meta.json not found; not a dataset directory",
        ));
    }
    let meta: DatasetMeta = jsonio::read(&meta_path)
        .map_err(|e| Error::load(meta_path.display().to_string(), e.to_string()))?;
    if meta.volume_ids.len() != meta.count {
        return Err(Error::load(
            "meta.json",
            format!(
                "count {} disagrees with {} listed volumes",
                meta.count,
                meta.volume_ids.len()
            ),
        ));
    }
    let volumes = meta
        .volume_ids
        .par_iter()
        .map(|&id| read_volume(dir, id, meta.shape, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { meta, volumes })
}

fn read_volume(
    dir: &Path,
    id: usize,
    shape: [usize; 3],
    options: ReadOptions,
) -> Result<PhantomVolume> {
    let name = stem(id);
    let fail = |reason: String| Error::load(name.clone(), reason);
    let [d, h, w] = shape;
    let voxels = d * h * w;

    let labels: VolumeLabels = jsonio::read(&dir.join(format!("{name}.json")))
        .map_err(|e| fail(format!("labels: {e}")))?;
    if labels.id != id {
        return Err(fail(format!("label file carries id {}", labels.id)));
    }
    labels.grades.validate().map_err(|e| fail(e.to_string()))?;
    let expected_y = derive_global_quality(labels.grades, labels.noise_level)
        .map_err(|e| fail(e.to_string()))?;
    if expected_y != labels.y_vol {
        return Err(fail(format!(
            "y_vol {} inconsistent with grades (expected {expected_y})",
            labels.y_vol
        )));
    }
    let la = labels.la_slice_range;
    if la.is_empty() || la.end >= d {
        return Err(fail(format!(
            "la_slice_range {:?} invalid for depth {d}",
            la
        )));
    }

    let path = dir.join(format!("{name}.f32"));
    let bytes = std::fs::read(&path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    if bytes.len() != voxels * 4 {
        return Err(fail(format!(
            "intensity file has {} bytes, expected {} for shape {:?}",
            bytes.len(),
            voxels * 4,
            shape
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let intensities = Array3::from_shape_vec((d, h, w), data).map_err(|e| fail(e.to_string()))?;

    let mask_path = dir.join(format!("{name}.masks.u8"));
    let masks = match std::fs::read(&mask_path) {
        Ok(bytes) => Some(parse_masks(&bytes, (d, h, w)).map_err(fail)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && !options.require_masks => None,
        Err(e) => return Err(fail(format!("{}: {e}", mask_path.display()))),
    };

    Ok(PhantomVolume {
        id,
        seed: labels.seed,
        intensities,
        grades: labels.grades,
        noise_level: labels.noise_level,
        y_vol: labels.y_vol,
        masks,
        la_slice_range: la,
    })
}

fn parse_masks(
    bytes: &[u8],
    dim: (usize, usize, usize),
) -> std::result::Result<VolumeMasks, String> {
    let n = dim.0 * dim.1 * dim.2;
    if bytes.len() != 3 * n {
        return Err(format!(
            "mask file has {} bytes, expected {}",
            bytes.len(),
            3 * n
        ));
    }
    if let Some(b) = bytes.iter().find(|&&b| b > 1) {
        return Err(format!("mask byte {b} is not 0/1"));
    }
    let plane = |k: usize| {
        Array3::from_shape_vec(
            dim,
            bytes[k * n..(k + 1) * n].iter().map(|&b| b == 1).collect(),
        )
        .map_err(|e| e.to_string())
    };
    let masks = VolumeMasks {
        blood_pool: plane(0)?,
        myocardium: plane(1)?,
        aorta: plane(2)?,
    };
    if !masks.pairwise_disjoint() {
        return Err("masks overlap".to_string());
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, DatasetConfig};

    fn small(count: usize) -> Vec<PhantomVolume> {
        generate_dataset(&DatasetConfig::new(count, 3).with_shape(8, 64, 64)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let vols = small(8);
        let meta = write_dataset(&vols[..5], dir.path(), Some(3)).unwrap();
        assert_eq!(meta.count, 5);
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.meta, meta);
        assert_eq!(ds.volumes, vols[..5].to_vec());
    }

    #[test]
    fn truncated_intensities_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let vols = small(8);
        write_dataset(&vols, dir.path(), None).unwrap();
        let path = dir.path().join("vol_0003.f32");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("vol_0003"), "{err}");
    }

    #[test]
    fn missing_masks_strict_and_lenient() {
        let dir = tempfile::tempdir().unwrap();
        let vols = small(8);
        write_dataset(&vols, dir.path(), None).unwrap();
        std::fs::remove_file(dir.path().join("vol_0006.masks.u8")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("vol_0006"), "{err}");
        let ds = read_dataset_with(
            dir.path(),
            ReadOptions {
                require_masks: false,
            },
        )
        .unwrap();
        assert!(ds.volumes[6].masks.is_none());
        assert!(ds.volumes[5].masks.is_some());
    }

    #[test]
    fn corrupt_label_file_names_volume() {
        let dir = tempfile::tempdir().unwrap();
        let vols = small(8);
        write_dataset(&vols, dir.path(), None).unwrap();
        std::fs::write(dir.path().join("vol_0002.json"), "{ not json").unwrap();
        let err = read_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("vol_0002"), "{err}");
    }

    #[test]
    fn missing_meta_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }
}
