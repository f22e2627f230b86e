use super::{
    derive_global_quality, grade_to_render_params, PhantomSpec, PhantomVolume, SliceRange,
    VolumeMasks,
};
use crate::error::Result;
use ndarray::{Array2, Array3, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Lattice spacing (pixels) used to position the aorta; dense 64-px tiles
/// with 50% overlap have their centers on this lattice.
const AORTA_LATTICE: usize = 32;

struct Geometry {
    la: SliceRange,
    z_center: f64,
    z_radius: f64,
    pool_center: (f64, f64),
    pool_radii: (f64, f64),
    myo_thickness: f64,
    aorta_center: (f64, f64),
    lumen_radius: f64,
    wall_radius: f64,
    pool_intensity: f64,
    lumen_intensity: f64,
    background: f64,
    background_slope: (f64, f64),
}

fn sample_geometry(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Geometry {
    let (d, h, w) = (spec.depth, spec.height, spec.width);
    let (hf, wf) = (h as f64, w as f64);
    let side = hf.min(wf);
    let scale = side / 192.0;

    let m_lo = (d / 2).max(d.min(8));
    let m_hi = d.saturating_sub(2).max(m_lo);
    let m = rng.random_range(m_lo..=m_hi);
    let start = rng.random_range(0..=d - m);
    let la = SliceRange::new(start, start + m - 1);

    let pool_center = (
        hf * (0.58 + rng.random_range(-0.04..0.04)),
        wf * (0.38 + rng.random_range(-0.04..0.04)),
    );
    let pool_radii = (
        side * rng.random_range(0.15..0.19),
        side * rng.random_range(0.15..0.19),
    );
    let myo_thickness = side * 0.06;
    let lumen_radius = (8.0 * scale).max(2.5);
    let wall_radius = lumen_radius + (4.0 * scale).max(1.5);

    let outer = pool_radii.0.max(pool_radii.1) + myo_thickness;
    let clearance = outer + wall_radius + 6.0 * scale;
    let lattice = |n: usize| -> Vec<usize> {
        (1..)
            .map(|i| i * AORTA_LATTICE)
            .take_while(|&c| (c as f64) + wall_radius + 2.0 <= n as f64)
            .filter(|&c| (c as f64) >= wall_radius + 2.0)
            .collect()
    };
    let mut candidates = Vec::new();
    for &r in &lattice(h) {
        for &c in &lattice(w) {
            let dy = r as f64 - pool_center.0;
            let dx = c as f64 - pool_center.1;
            if (dy * dy + dx * dx).sqrt() > clearance {
                candidates.push((r as f64, c as f64));
            }
        }
    }
    let jitter = 2.0 * scale;
    let aorta_center = if candidates.is_empty() {
        (wall_radius + 1.0, wf - wall_radius - 1.0)
    } else {
        let (r, c) = candidates[rng.random_range(0..candidates.len())];
        (
            r + rng.random_range(-jitter..=jitter),
            c + rng.random_range(-jitter..=jitter),
        )
    };

    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Geometry {
        la,
        z_center: start as f64 + (m as f64 - 1.0) / 2.0,
        z_radius: m as f64 / 2.0,
        pool_center,
        pool_radii,
        myo_thickness,
        aorta_center,
        lumen_radius,
        wall_radius,
        pool_intensity: rng.random_range(0.75..0.85),
        lumen_intensity: rng.random_range(0.42..0.48),
        background: rng.random_range(0.2..0.26),
        background_slope: (0.06 * angle.cos(), 0.06 * angle.sin()),
    }
}

/// Render one phantom. Deterministic in `spec` (including its seed).
pub fn generate_volume(spec: &PhantomSpec) -> Result<PhantomVolume> {
    spec.validate()?;
    let params = grade_to_render_params(spec.grades, spec.noise_level)?;
    let y_vol = derive_global_quality(spec.grades, spec.noise_level)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geo = sample_geometry(spec, &mut rng);

    let (d, h, w) = (spec.depth, spec.height, spec.width);
    let mut image = Array3::<f64>::zeros((d, h, w));
    let mut blood_pool = Array3::from_elem((d, h, w), false);
    let mut myocardium = Array3::from_elem((d, h, w), false);
    let mut aorta = Array3::from_elem((d, h, w), false);
    let myo_intensity = params.null_ratio * geo.pool_intensity;
    let wall_intensity = geo.lumen_intensity + params.aorta_contrast;

    for z in 0..d {
        let dz = (z as f64 - geo.z_center) / geo.z_radius;
        // cross-section scale of the blood-pool ellipsoid on this slice
        let cs = if geo.la.contains(z) {
            (1.0 - dz * dz).max(0.0).sqrt()
        } else {
            0.0
        };
        let (ry, rx) = (geo.pool_radii.0 * cs, geo.pool_radii.1 * cs);
        let (oy, ox) = (ry + geo.myo_thickness * cs, rx + geo.myo_thickness * cs);
        for y in 0..h {
            let yf = y as f64 + 0.5;
            for x in 0..w {
                let xf = x as f64 + 0.5;
                let mut v = geo.background
                    + geo.background_slope.0 * (yf / h as f64 - 0.5)
                    + geo.background_slope.1 * (xf / w as f64 - 0.5);

                let ady = yf - geo.aorta_center.0;
                let adx = xf - geo.aorta_center.1;
                let ar = (ady * ady + adx * adx).sqrt();
                let mut structure = None;
                if ar <= geo.lumen_radius {
                    v = geo.lumen_intensity;
                    structure = Some(2);
                } else if ar <= geo.wall_radius {
                    v = wall_intensity;
                    structure = Some(2);
                }

                if cs > 0.0 {
                    let py = yf - geo.pool_center.0;
                    let px = xf - geo.pool_center.1;
                    let inner = (py / ry).powi(2) + (px / rx).powi(2);
                    let outer = (py / oy).powi(2) + (px / ox).powi(2);
                    if inner <= 1.0 {
                        v = geo.pool_intensity;
                        structure = Some(0);
                    } else if outer <= 1.0 {
                        v = myo_intensity;
                        structure = Some(1);
                    }
                }
                image[[z, y, x]] = v;
                match structure {
                    Some(0) => blood_pool[[z, y, x]] = true,
                    Some(1) => myocardium[[z, y, x]] = true,
                    Some(2) => aorta[[z, y, x]] = true,
                    _ => {}
                }
            }
        }
    }

    if params.blur_sigma > 0.0 {
        for mut slice in image.axis_iter_mut(Axis(0)) {
            gaussian_blur_2d(&mut slice, params.blur_sigma);
        }
    }

    let mut intensities = Array3::<f32>::zeros((d, h, w));
    if params.noise_std > 0.0 {
        let normal = Normal::new(0.0, params.noise_std).expect("finite noise std");
        ndarray::Zip::from(&mut intensities)
            .and(&image)
            .for_each(|out, &v| {
                *out = (v + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            });
    } else {
        ndarray::Zip::from(&mut intensities)
            .and(&image)
            .for_each(|out, &v| *out = v.clamp(0.0, 1.0) as f32);
    }

    Ok(PhantomVolume {
        id: 0,
        seed: spec.seed,
        intensities,
        grades: spec.grades,
        noise_level: spec.noise_level,
        y_vol,
        masks: Some(VolumeMasks {
            blood_pool,
            myocardium,
            aorta,
        }),
        la_slice_range: geo.la,
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur_2d(slice: &mut ArrayViewMut2<f64>, sigma: f64) {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = slice.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * slice[[y, xx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let yy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[[yy, x]];
            }
            slice[[y, x]] = acc;
        }
    }
}
