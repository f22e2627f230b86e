//! Volume -> slices -> patches hierarchy.
//!
//! Training draws a random sub-bag of `N` LA slices with `K` random patches
//! each; evaluation tiles every LA slice densely with overlapping windows.

use crate::error::{Error, Result};
use crate::synthdata::{ConceptGrades, PhantomVolume};
use ndarray::{s, Array2, Array4, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub pixels: Array2<f32>,
    pub slice_index: usize,
    /// (row, col) of the top-left pixel.
    pub origin: (usize, usize),
}

impl Patch {
    pub fn size(&self) -> usize {
        self.pixels.nrows()
    }

    /// Pixel at the patch center, `origin + p/2`.
    pub fn center(&self) -> (usize, usize) {
        let half = self.size() / 2;
        (self.origin.0 + half, self.origin.1 + half)
    }
}

/// Patches grouped by slice; every slice holds the same number of patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub slices: Vec<usize>,
    pub patches: Vec<Vec<Patch>>,
}

impl PatchGrid {
    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn patches_per_slice(&self) -> usize {
        self.patches.first().map_or(0, Vec::len)
    }

    pub fn patch_size(&self) -> usize {
        self.patches
            .first()
            .and_then(|row| row.first())
            .map_or(0, Patch::size)
    }

    /// Pixels as `[slices, patches, p, p]`.
    pub fn pixel_tensor(&self) -> Array4<f32> {
        let (n, k, p) = (
            self.num_slices(),
            self.patches_per_slice(),
            self.patch_size(),
        );
        let mut out = Array4::zeros((n, k, p, p));
        for (i, row) in self.patches.iter().enumerate() {
            for (j, patch) in row.iter().enumerate() {
                out.slice_mut(s![i, j, .., ..]).assign(&patch.pixels);
            }
        }
        out
    }

    pub fn origins(&self) -> Vec<Vec<(usize, usize)>> {
        self.patches
            .iter()
            .map(|row| row.iter().map(|p| p.origin).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubBag {
    pub volume_id: usize,
    pub y_vol: u8,
    pub grades: ConceptGrades,
    pub grid: PatchGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubBagConfig {
    pub n_slices: usize,
    pub n_patches: usize,
    pub patch_size: usize,
}

impl Default for SubBagConfig {
    fn default() -> Self {
        SubBagConfig {
            n_slices: 8,
            n_patches: 80,
            patch_size: 64,
        }
    }
}

/// Slices containing the left-atrium surrogate, in order.
pub fn la_slices(volume: &PhantomVolume) -> Result<Vec<usize>> {
    let range = volume.la_slice_range;
    if range.is_empty() {
        return Err(Error::validation(format!(
            "volume {} has an empty LA slice range",
            volume.id
        )));
    }
    if range.end >= volume.dim().0 {
        return Err(Error::validation(format!(
            "volume {} LA range {:?} exceeds depth {}",
            volume.id,
            range,
            volume.dim().0
        )));
    }
    Ok(range.indices().collect())
}

fn check_patch_fits(volume: &PhantomVolume, p: usize) -> Result<()> {
    let (_, h, w) = volume.dim();
    if p == 0 || p > h || p > w {
        return Err(Error::validation(format!(
            "patch size {p} does not fit slices of {h}x{w}"
        )));
    }
    Ok(())
}

fn cut(slice: ArrayView2<f32>, slice_index: usize, origin: (usize, usize), p: usize) -> Patch {
    Patch {
        pixels: slice
            .slice(s![origin.0..origin.0 + p, origin.1..origin.1 + p])
            .to_owned(),
        slice_index,
        origin,
    }
}

/// Draw a training sub-bag: `N` LA slices (without replacement when
/// `M >= N`, with replacement otherwise), `K` uniform patch origins each.
pub fn sample_subbag<R: Rng + ?Sized>(
    volume: &PhantomVolume,
    config: &SubBagConfig,
    rng: &mut R,
) -> Result<SubBag> {
    let p = config.patch_size;
    check_patch_fits(volume, p)?;
    if config.n_slices == 0 || config.n_patches == 0 {
        return Err(Error::validation(
            "sub-bag needs at least one slice and one patch",
        ));
    }
    let available = la_slices(volume)?;
    let m = available.len();
    let mut chosen: Vec<usize> = if m >= config.n_slices {
        index::sample(rng, m, config.n_slices)
            .into_iter()
            .map(|i| available[i])
            .collect()
    } else {
        (0..config.n_slices)
            .map(|_| available[rng.random_range(0..m)])
            .collect()
    };
    chosen.sort_unstable();

    let (_, h, w) = volume.dim();
    let patches = chosen
        .iter()
        .map(|&z| {
            let slice = volume.intensities.index_axis(Axis(0), z);
            (0..config.n_patches)
                .map(|_| {
                    let origin = (rng.random_range(0..=h - p), rng.random_range(0..=w - p));
                    cut(slice, z, origin, p)
                })
                .collect()
        })
        .collect();

    Ok(SubBag {
        volume_id: volume.id,
        y_vol: volume.y_vol,
        grades: volume.grades,
        grid: PatchGrid {
            slices: chosen,
            patches,
        },
    })
}

/// Sliding-window origins along one axis; the last window is clamped to the
/// edge so the axis is fully covered.
pub fn tile_positions(len: usize, p: usize, overlap: f64) -> Result<Vec<usize>> {
    if p == 0 || p > len {
        return Err(Error::validation(format!(
            "patch size {p} does not fit length {len}"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::validation(format!(
            "overlap {overlap} outside [0, 1)"
        )));
    }
    let stride = ((p as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let mut positions: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&o| o + p <= len)
        .collect();
    if let Some(&last) = positions.last() {
        if last + p < len {
            positions.push(len - p);
        }
    }
    Ok(positions)
}

/// Row-major overlapping tiles covering a whole slice.
pub fn tile_dense(
    slice: ArrayView2<f32>,
    slice_index: usize,
    p: usize,
    overlap: f64,
) -> Result<Vec<Patch>> {
    let (h, w) = slice.dim();
    let rows = tile_positions(h, p, overlap)?;
    let cols = tile_positions(w, p, overlap)?;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            out.push(cut(slice, slice_index, (r, c), p));
        }
    }
    Ok(out)
}

/// Dense tiles for every LA slice of a volume.
pub fn dense_grid(volume: &PhantomVolume, p: usize, overlap: f64) -> Result<PatchGrid> {
    check_patch_fits(volume, p)?;
    let slices = la_slices(volume)?;
    let patches = slices
        .iter()
        .map(|&z| tile_dense(volume.intensities.index_axis(Axis(0), z), z, p, overlap))
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchGrid { slices, patches })
}
