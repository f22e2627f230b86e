//! Synthetic cardiac-like phantoms with controllable quality concepts.
//!
//! Each volume renders a bright blood pool, a surrounding myocardium ring and
//! an aorta tube. Three graded concepts (sharpness, myocardium nulling, aorta
//! wall enhancement) control the rendering, and a hidden noise level acts as
//! a quality factor that no concept label describes. Ground-truth masks are
//! rasterized before any degradation so they describe anatomy only.

mod dataset;
mod io;
mod render;

pub use dataset::{generate_dataset, DatasetConfig};
pub use io::{read_dataset, read_dataset_with, write_dataset, Dataset, DatasetMeta, ReadOptions};
pub use render::generate_volume;

use crate::concept::Concept;
use crate::error::{Error, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// Number of ordinal grades per concept and for the global rating.
pub const NUM_GRADES: usize = 4;
pub const MAX_GRADE: u8 = 3;
pub const MAX_NOISE_LEVEL: u8 = 3;
pub const GENERATOR_VERSION: &str = "acmil-phantom/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptGrades {
    pub sharpness: u8,
    pub nulling: u8,
    pub aorta: u8,
}

impl ConceptGrades {
    pub fn new(sharpness: u8, nulling: u8, aorta: u8) -> Result<Self> {
        let grades = ConceptGrades {
            sharpness,
            nulling,
            aorta,
        };
        grades.validate()?;
        Ok(grades)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("sharpness", self.sharpness),
            ("nulling", self.nulling),
            ("aorta", self.aorta),
        ] {
            if g > MAX_GRADE {
                return Err(Error::validation(format!(
                    "{name} grade {g} outside 0..={MAX_GRADE}"
                )));
            }
        }
        Ok(())
    }

    /// Grade of a predefined concept; `None` for the residual branch.
    pub fn grade(&self, concept: Concept) -> Option<u8> {
        match concept {
            Concept::Sharpness => Some(self.sharpness),
            Concept::Nulling => Some(self.nulling),
            Concept::Aorta => Some(self.aorta),
            Concept::Residual => None,
        }
    }

    pub fn to_array(self) -> [u8; 3] {
        [self.sharpness, self.nulling, self.aorta]
    }
}

/// Image-physics parameters derived from the concept grades.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    /// In-plane Gaussian blur, pixels.
    pub blur_sigma: f64,
    /// Myocardium / blood-pool intensity ratio (lower is better nulling).
    pub null_ratio: f64,
    /// Intensity gap between aorta wall and lumen.
    pub aorta_contrast: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_std: f64,
}

fn check_noise_level(noise_level: u8) -> Result<()> {
    if noise_level > MAX_NOISE_LEVEL {
        return Err(Error::validation(format!(
            "noise level {noise_level} outside 0..={MAX_NOISE_LEVEL}"
        )));
    }
    Ok(())
}

pub fn grade_to_render_params(grades: ConceptGrades, noise_level: u8) -> Result<RenderParams> {
    grades.validate()?;
    check_noise_level(noise_level)?;
    let max = f64::from(MAX_GRADE);
    Ok(RenderParams {
        blur_sigma: max - f64::from(grades.sharpness),
        null_ratio: 0.15 + 0.22 * (max - f64::from(grades.nulling)),
        aorta_contrast: 0.1 + 0.3 * f64::from(grades.aorta) / max,
        noise_std: 0.02 * f64::from(noise_level),
    })
}

/// Global quality: rounded mean concept grade, one grade lower for heavy noise.
pub fn derive_global_quality(grades: ConceptGrades, noise_level: u8) -> Result<u8> {
    grades.validate()?;
    check_noise_level(noise_level)?;
    let sum = u32::from(grades.sharpness) + u32::from(grades.nulling) + u32::from(grades.aorta);
    // sum/3 is never exactly half-way, so integer rounding is exact.
    let rounded = ((sum + 1) / 3) as i32;
    let penalty = i32::from(noise_level >= 2);
    Ok((rounded - penalty).clamp(0, i32::from(MAX_GRADE)) as u8)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub grades: ConceptGrades,
    pub noise_level: u8,
    pub seed: u64,
}

impl PhantomSpec {
    pub const MIN_DEPTH: usize = 8;
    pub const MIN_SIDE: usize = 64;

    pub fn new(grades: ConceptGrades, noise_level: u8, seed: u64) -> Self {
        PhantomSpec {
            depth: 24,
            height: 192,
            width: 192,
            grades,
            noise_level,
            seed,
        }
    }

    pub fn with_shape(mut self, depth: usize, height: usize, width: usize) -> Self {
        self.depth = depth;
        self.height = height;
        self.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < Self::MIN_DEPTH {
            return Err(Error::validation(format!(
                "depth {} below minimum {}",
                self.depth,
                Self::MIN_DEPTH
            )));
        }
        if self.height < Self::MIN_SIDE || self.width < Self::MIN_SIDE {
            return Err(Error::validation(format!(
                "slice {}x{} smaller than {}x{}",
                self.height,
                self.width,
                Self::MIN_SIDE,
                Self::MIN_SIDE
            )));
        }
        self.grades.validate()?;
        check_noise_level(self.noise_level)
    }
}

/// Inclusive range of slice indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct SliceRange {
    pub start: usize,
    pub end: usize,
}

impl SliceRange {
    pub fn new(start: usize, end: usize) -> Self {
        SliceRange { start, end }
    }

    pub fn len(&self) -> usize {
        if self.end < self.start {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> {
        self.start..self.start + self.len()
    }

    pub fn contains(&self, z: usize) -> bool {
        z >= self.start && z <= self.end
    }
}

impl From<[usize; 2]> for SliceRange {
    fn from(v: [usize; 2]) -> Self {
        SliceRange::new(v[0], v[1])
    }
}

impl From<SliceRange> for [usize; 2] {
    fn from(r: SliceRange) -> Self {
        [r.start, r.end]
    }
}

/// Anatomical structures with ground-truth masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    BloodPool,
    Myocardium,
    Aorta,
}

impl Structure {
    pub const ALL: [Structure; 3] = [
        Structure::BloodPool,
        Structure::Myocardium,
        Structure::Aorta,
    ];

    /// Target anatomy of a localized concept.
    pub fn for_concept(concept: Concept) -> Option<Structure> {
        match concept {
            Concept::Nulling => Some(Structure::Myocardium),
            Concept::Aorta => Some(Structure::Aorta),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeMasks {
    pub blood_pool: Array3<bool>,
    pub myocardium: Array3<bool>,
    pub aorta: Array3<bool>,
}

impl VolumeMasks {
    pub fn get(&self, structure: Structure) -> &Array3<bool> {
        match structure {
            Structure::BloodPool => &self.blood_pool,
            Structure::Myocardium => &self.myocardium,
            Structure::Aorta => &self.aorta,
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.blood_pool.dim()
    }

    pub fn pairwise_disjoint(&self) -> bool {
        ndarray::Zip::from(&self.blood_pool)
            .and(&self.myocardium)
            .and(&self.aorta)
            .all(|&a, &b, &c| u8::from(a) + u8::from(b) + u8::from(c) <= 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomVolume {
    pub id: usize,
    pub seed: u64,
    /// D x H x W intensities in [0, 1].
    pub intensities: Array3<f32>,
    pub grades: ConceptGrades,
    pub noise_level: u8,
    pub y_vol: u8,
    /// `None` when a dataset was read leniently without mask files.
    pub masks: Option<VolumeMasks>,
    pub la_slice_range: SliceRange,
}

impl PhantomVolume {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.intensities.dim()
    }

    pub fn grade(&self, concept: Concept) -> Option<u8> {
        self.grades.grade(concept)
    }
}
