//! Patch-grid extraction, rejection tests, class balancing, augmentation
//! and whitening.
//!
//! The grid is anchored at the stone bounding-box minimum and strides by
//! `patch_side - max_overlap` along both axes. When the last strided cell
//! leaves stone pixels uncovered, one extra row/column is anchored flush
//! to the bounding-box maximum. Cells keep at most `max_overlap` pixels
//! of overlap between strided neighbors; the flush closers may overlap
//! more. Patches with too many non-stone pixels, or too many
//! blue-dominant (instrument) pixels, are discarded.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, PatchRecord, SourceImage};
use crate::raster::{BinaryMask, FloatImage, RgbImage};
use crate::{Error, Result};

/// Grid extraction parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// Square patch side in pixels. The reference configuration uses 256;
    /// the ablation sweep covers 64, 128, 200, 256 and 512.
    pub patch_side: u32,
    /// Maximal border overlap between strided neighbor patches.
    pub max_overlap: u32,
    /// Rejection threshold on the non-stone pixel fraction (also applied
    /// to the instrument fraction).
    pub max_non_stone_fraction: f64,
    pub seed: u64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            patch_side: 256,
            max_overlap: 20,
            max_non_stone_fraction: 0.10,
            seed: 0,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side < 3 {
            return Err(Error::InvalidParams(format!(
                "patch side {} below feature minimum 3",
                self.patch_side
            )));
        }
        if self.max_overlap >= self.patch_side {
            return Err(Error::InvalidParams(format!(
                "max overlap {} must be smaller than patch side {}",
                self.max_overlap, self.patch_side
            )));
        }
        if !(0.0..=1.0).contains(&self.max_non_stone_fraction) {
            return Err(Error::InvalidParams(format!(
                "non-stone fraction threshold {} outside [0, 1]",
                self.max_non_stone_fraction
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.patch_side - self.max_overlap
    }
}

/// Class balancing strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BalanceMode {
    /// Raise every class to the largest class count by adding seeded
    /// random off-grid patches.
    OverSample,
    /// Reduce every class to the smallest class count by removing a
    /// seeded random subset.
    UnderSample,
}

/// One-axis anchor sequence: strided anchors from the bounding-box
/// minimum while the cell fits inside the box, plus a closing anchor
/// flush to the maximum when stone would otherwise stay uncovered.
fn axis_anchors(bb_min: u32, bb_max: u32, side: u32, stride: u32) -> Vec<u32> {
    let end = bb_max as u64 + 1; // exclusive
    let mut anchors = vec![bb_min];
    let mut a = bb_min as u64;
    loop {
        a += stride as u64;
        if a + side as u64 <= end {
            anchors.push(a as u32);
        } else {
            break;
        }
    }
    let last = *anchors.last().unwrap() as u64;
    if last + (side as u64) < end {
        anchors.push((end - side as u64) as u32);
    }
    anchors
}

/// Grid anchor positions for a mask, or `None` when the mask holds no
/// stone pixels. Exposed for over-sampling (off-grid checks) and tests.
pub fn grid_anchors(mask: &BinaryMask, params: &GridParams) -> Option<(Vec<u32>, Vec<u32>)> {
    let (x0, y0, x1, y1) = mask.bounding_box()?;
    let stride = params.stride();
    Some((
        axis_anchors(x0, x1, params.patch_side, stride),
        axis_anchors(y0, y1, params.patch_side, stride),
    ))
}

/// Copies the square window at `origin` out of the source, padding pixels
/// beyond the image bounds with black.
fn cut_patch(image: &RgbImage, origin: (u32, u32), side: u32) -> RgbImage {
    RgbImage::from_fn(side, side, |dx, dy| {
        let x = origin.0 as u64 + dx as u64;
        let y = origin.1 as u64 + dy as u64;
        if x < image.width() as u64 && y < image.height() as u64 {
            image.get(x as u32, y as u32)
        } else {
            [0, 0, 0]
        }
    })
}

/// Fraction of window pixels that are not stone (mask-negative pixels and
/// padding beyond the image bounds both count).
pub fn non_stone_fraction(mask: &BinaryMask, origin: (u32, u32), side: u32) -> f64 {
    let mut non_stone = 0usize;
    for dy in 0..side {
        for dx in 0..side {
            let x = origin.0 as u64 + dx as u64;
            let y = origin.1 as u64 + dy as u64;
            let stone = x < mask.width() as u64
                && y < mask.height() as u64
                && mask.stone(x as u32, y as u32);
            if !stone {
                non_stone += 1;
            }
        }
    }
    non_stone as f64 / (side as f64 * side as f64)
}

/// Fraction of blue-dominant pixels (`B > R` and `B > G`), the signature
/// of instruments; stone and tissue carry far stronger red and green.
pub fn detect_instrument(patch: &RgbImage) -> f64 {
    let total = (patch.width() as usize) * (patch.height() as usize);
    let blue = patch
        .pixels()
        .filter(|p| p[2] > p[0] && p[2] > p[1])
        .count();
    blue as f64 / total as f64
}

fn accept_patch(source: &SourceImage, origin: (u32, u32), params: &GridParams) -> Option<RgbImage> {
    if non_stone_fraction(&source.mask, origin, params.patch_side) > params.max_non_stone_fraction {
        return None;
    }
    let patch = cut_patch(&source.image, origin, params.patch_side);
    if detect_instrument(&patch) > params.max_non_stone_fraction {
        return None;
    }
    Some(patch)
}

/// Extracts the grid patches of one source image. An empty result is
/// valid (small or absent stone region).
pub fn extract_patch_grid(source: &SourceImage, params: &GridParams) -> Result<Vec<PatchRecord>> {
    params.validate()?;
    if source.image.dimensions() != source.mask.dimensions() {
        return Err(Error::DimensionMismatch {
            context: format!("source {}", source.stone_id),
            image_w: source.image.width(),
            image_h: source.image.height(),
            mask_w: source.mask.width(),
            mask_h: source.mask.height(),
        });
    }
    let Some((xs, ys)) = grid_anchors(&source.mask, params) else {
        return Ok(Vec::new());
    };
    let mut records = Vec::new();
    for &y in &ys {
        for &x in &xs {
            if let Some(patch) = accept_patch(source, (x, y), params) {
                records.push(PatchRecord {
                    patch,
                    origin: (x, y),
                    class: source.class,
                    view: source.view,
                    stone_id: source.stone_id.clone(),
                    synthetic: false,
                });
            }
        }
    }
    Ok(records)
}

/// Attempts per missing patch before over-sampling gives up on a class.
pub const OVERSAMPLE_ATTEMPTS: usize = 100;

fn class_counts(records: &[PatchRecord]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for r in records {
        counts[r.class.index()] += 1;
    }
    counts
}

/// Equalizes class counts. Over-sampling draws seeded random off-grid
/// patch positions from the class's source images, subject to the same
/// rejection tests as the grid, and flags the extras synthetic.
/// Under-sampling removes a seeded random subset. Retained records pass
/// through unmodified, so the operation is idempotent under a fixed seed.
pub fn balance(
    records: Vec<PatchRecord>,
    mode: BalanceMode,
    sources: &[SourceImage],
    params: &GridParams,
) -> Result<Vec<PatchRecord>> {
    params.validate()?;
    let counts = class_counts(&records);
    let present: Vec<usize> = (0..4).filter(|&i| counts[i] > 0).collect();
    if present.is_empty() {
        return Ok(records);
    }
    let target = match mode {
        BalanceMode::OverSample => present.iter().map(|&i| counts[i]).max().unwrap(),
        BalanceMode::UnderSample => present.iter().map(|&i| counts[i]).min().unwrap(),
    };

    match mode {
        BalanceMode::UnderSample => {
            let mut kept: Vec<Option<PatchRecord>> = records.into_iter().map(Some).collect();
            for &ci in &present {
                let class = ClassLabel::ALL[ci];
                let extra = counts[ci] - target;
                if extra == 0 {
                    continue;
                }
                let mut idxs: Vec<usize> = kept
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.as_ref().is_some_and(|r| r.class == class))
                    .map(|(i, _)| i)
                    .collect();
                let mut rng = class_rng(params.seed, class);
                idxs.shuffle(&mut rng);
                for &i in idxs.iter().take(extra) {
                    kept[i] = None;
                }
            }
            Ok(kept.into_iter().flatten().collect())
        }
        BalanceMode::OverSample => {
            let mut out = records;
            for &ci in &present {
                let class = ClassLabel::ALL[ci];
                let missing = target - counts[ci];
                if missing == 0 {
                    continue;
                }
                let class_sources: Vec<&SourceImage> =
                    sources.iter().filter(|s| s.class == class).collect();
                if class_sources.is_empty() {
                    return Err(Error::BalanceExhausted {
                        class: class.to_string(),
                        missing,
                        attempts: 0,
                    });
                }
                let mut rng = class_rng(params.seed, class);
                for _ in 0..missing {
                    let rec = draw_off_grid(&class_sources, params, &mut rng).ok_or(
                        Error::BalanceExhausted {
                            class: class.to_string(),
                            missing,
                            attempts: OVERSAMPLE_ATTEMPTS,
                        },
                    )?;
                    out.push(rec);
                }
            }
            Ok(out)
        }
    }
}

fn class_rng(seed: u64, class: ClassLabel) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0xb5ad4ece_u64.wrapping_mul(class.index() as u64 + 1)))
}

/// One randomly positioned patch that passes the rejection tests and does
/// not coincide with a regular grid cell of its source image.
fn draw_off_grid(
    class_sources: &[&SourceImage],
    params: &GridParams,
    rng: &mut ChaCha8Rng,
) -> Option<PatchRecord> {
    for _ in 0..OVERSAMPLE_ATTEMPTS {
        let source = class_sources[rng.random_range(0..class_sources.len())];
        let Some((x0, y0, x1, y1)) = source.mask.bounding_box() else {
            continue;
        };
        let Some((gx, gy)) = grid_anchors(&source.mask, params) else {
            continue;
        };
        // Any anchor inside the bounding box such that the patch still
        // meets the non-stone threshold; positions are clamped so the
        // window stays within the box whenever it fits.
        let side = params.patch_side;
        let hi_x = (x1 + 1).saturating_sub(side).max(x0);
        let hi_y = (y1 + 1).saturating_sub(side).max(y0);
        let x = rng.random_range(x0..=hi_x);
        let y = rng.random_range(y0..=hi_y);
        if gx.contains(&x) && gy.contains(&y) {
            continue; // a regular grid cell, not an off-grid extra
        }
        if let Some(patch) = accept_patch(source, (x, y), params) {
            return Some(PatchRecord {
                patch,
                origin: (x, y),
                class: source.class,
                view: source.view,
                stone_id: source.stone_id.clone(),
                synthetic: true,
            });
        }
    }
    None
}

fn hflip(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| img.get(w - 1 - x, y))
}

fn vflip(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| img.get(x, h - 1 - y))
}

fn rot90(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    debug_assert_eq!(w, h);
    RgbImage::from_fn(w, h, |x, y| img.get(y, h - 1 - x))
}

fn rot180(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| img.get(w - 1 - x, h - 1 - y))
}

fn rot270(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    debug_assert_eq!(w, h);
    RgbImage::from_fn(w, h, |x, y| img.get(w - 1 - y, x))
}

/// Bilinear sample with clamp-to-edge semantics.
fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [u8; 3] {
    let w = img.width() as f64;
    let h = img.height() as f64;
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = img.get(x0, y0);
    let p10 = img.get(x1, y0);
    let p01 = img.get(x0, y1);
    let p11 = img.get(x1, y1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bot = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Corner displacement of the fixed perspective distortion, as a fraction
/// of the patch side.
pub const PERSPECTIVE_JITTER: f64 = 0.05;
/// Shear coefficient of the fixed affine shear.
pub const SHEAR: f64 = 0.1;

/// Solves the 3x3 homography mapping four source points onto four
/// destination points (direct linear transform, 8x8 system).
fn homography(src: [[f64; 2]; 4], dst: [[f64; 2]; 4]) -> [f64; 9] {
    let mut a = nalgebra::DMatrix::<f64>::zeros(8, 8);
    let mut b = nalgebra::DVector::<f64>::zeros(8);
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        a[(2 * i, 0)] = x;
        a[(2 * i, 1)] = y;
        a[(2 * i, 2)] = 1.0;
        a[(2 * i, 6)] = -x * u;
        a[(2 * i, 7)] = -y * u;
        b[2 * i] = u;
        a[(2 * i + 1, 3)] = x;
        a[(2 * i + 1, 4)] = y;
        a[(2 * i + 1, 5)] = 1.0;
        a[(2 * i + 1, 6)] = -x * v;
        a[(2 * i + 1, 7)] = -y * v;
        b[2 * i + 1] = v;
    }
    let sol = a.lu().solve(&b).expect("homography system is well-posed");
    [
        sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0,
    ]
}

/// Fixed keystone warp: the top edge is pinched inward by 5 % of the
/// side. `dst(x, y)` samples `src` through the homography.
fn perspective(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = (w - 1) as f64;
    let t = (h - 1) as f64;
    let j = PERSPECTIVE_JITTER * w as f64;
    // Destination square corners -> source quadrilateral corners.
    let m = homography(
        [[0.0, 0.0], [s, 0.0], [s, t], [0.0, t]],
        [[j, 0.0], [s - j, 0.0], [s, t], [0.0, t]],
    );
    RgbImage::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let d = m[6] * xf + m[7] * yf + m[8];
        let sx = (m[0] * xf + m[1] * yf + m[2]) / d;
        let sy = (m[3] * xf + m[4] * yf + m[5]) / d;
        sample_bilinear(img, sx, sy)
    })
}

/// Fixed horizontal shear about the patch center.
fn shear(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let cy = (h - 1) as f64 / 2.0;
    RgbImage::from_fn(w, h, |x, y| {
        let sx = x as f64 + SHEAR * (y as f64 - cy);
        sample_bilinear(img, sx, y as f64)
    })
}

/// Expands one patch into exactly eight variants: the original, the two
/// flips, the fixed perspective distortion, and four affine transforms
/// (three right-angle rotations and the fixed shear). Deterministic; all
/// outputs keep the input side length.
pub fn augment(record: &PatchRecord) -> Vec<PatchRecord> {
    let img = &record.patch;
    debug_assert_eq!(img.width(), img.height(), "augment expects square patches");
    let variants: [(RgbImage, bool); 8] = [
        (img.clone(), record.synthetic),
        (hflip(img), true),
        (vflip(img), true),
        (perspective(img), true),
        (rot90(img), true),
        (rot180(img), true),
        (rot270(img), true),
        (shear(img), true),
    ];
    variants
        .into_iter()
        .map(|(patch, synthetic)| PatchRecord {
            patch,
            origin: record.origin,
            class: record.class,
            view: record.view,
            stone_id: record.stone_id.clone(),
            synthetic,
        })
        .collect()
}

/// Sigma guard below which a channel is treated as constant.
pub const WHITEN_SIGMA_GUARD: f64 = 1e-12;

/// Per-channel standardization `(P - m) / sigma` over the patch. Channels
/// with `sigma < 1e-12` come out all zero.
pub fn whiten(patch: &RgbImage) -> FloatImage {
    let (w, h) = patch.dimensions();
    let mut float = FloatImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = patch.get(x, y);
            float.set(x, y, [p[0] as f64, p[1] as f64, p[2] as f64]);
        }
    }
    whiten_float(&float)
}

/// [`whiten`] over an already real-valued raster. Whitening an output of
/// `whiten` is the identity up to floating-point tolerance.
pub fn whiten_float(image: &FloatImage) -> FloatImage {
    let (w, h) = (image.width(), image.height());
    let n = (w as usize * h as usize) as f64;
    let mean: Vec<f64> = (0..3).map(|c| image.channel(c).sum::<f64>() / n).collect();
    let sigma: Vec<f64> = (0..3)
        .map(|c| {
            let var = image
                .channel(c)
                .map(|v| (v - mean[c]) * (v - mean[c]))
                .sum::<f64>()
                / n;
            var.sqrt()
        })
        .collect();
    let mut out = FloatImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = image.get(x, y);
            let mut o = [0.0f64; 3];
            for c in 0..3 {
                if sigma[c] >= WHITEN_SIGMA_GUARD {
                    o[c] = (px[c] - mean[c]) / sigma[c];
                }
            }
            out.set(x, y, o);
        }
    }
    out
}
