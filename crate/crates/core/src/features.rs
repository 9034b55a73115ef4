//! Handcrafted color and texture descriptors.
//!
//! A patch is described by four 10-bin probability histograms concatenated
//! in fixed order: hue energies (`eH`), saturation energies (`eS`),
//! intensity energies (`eV`), and rotation-invariant uniform LBP codes
//! (`LBP`) — 40 components for a single view. Mixed descriptors
//! concatenate a surface vector and a section vector into 80 components.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, PatchRecord, ViewKind};
use crate::raster::{Plane, RgbImage};
use crate::{Error, Result};

/// Number of bins in each histogram block.
pub const BINS: usize = 10;
/// Single-view descriptor length.
pub const SINGLE_VIEW_LEN: usize = 4 * BINS;
/// Mixed (surface ‖ section) descriptor length.
pub const MIXED_LEN: usize = 2 * SINGLE_VIEW_LEN;

/// HSV value of one pixel. Hue in degrees `[0, 360)` (0 when undefined),
/// saturation in `[0, 1]`, value on the input channel scale `[0, 255]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsvPixel {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// RGB to HSV conversion.
///
/// `V = max(R,G,B)`; `S = 1 - min/V` (0 when `V = 0`); hue from the sector
/// formula, testing the maximal channel in R, G, B order so ties resolve
/// to the earliest channel. Achromatic pixels (`R = G = B`) take the
/// `H = 0`, `S = 0` convention.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> HsvPixel {
    let r = rgb[0] as f64;
    let g = rgb[1] as f64;
    let b = rgb[2] as f64;
    let v = r.max(g).max(b);
    let min = r.min(g).min(b);
    if r == g && g == b {
        return HsvPixel { h: 0.0, s: 0.0, v };
    }
    let s = 1.0 - min / v; // v > 0 here: v = 0 implies r = g = b = 0
    let range = v - min;
    let mut h = if v == r {
        60.0 * (g - b) / range
    } else if v == g {
        120.0 + 60.0 * (b - r) / range
    } else {
        240.0 + 60.0 * (r - g) / range
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    HsvPixel { h, s, v }
}

/// Converts a patch into its H, S and V planes.
pub fn hsv_planes(img: &RgbImage) -> [Plane; 3] {
    let (w, h) = img.dimensions();
    let mut ph = Plane::new(w, h);
    let mut ps = Plane::new(w, h);
    let mut pv = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let hsv = rgb_to_hsv(img.get(x, y));
            ph.set(x, y, hsv.h);
            ps.set(x, y, hsv.s);
            pv.set(x, y, hsv.v);
        }
    }
    [ph, ps, pv]
}

/// Per-pixel gradient-magnitude map over a channel's interior.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyMap {
    plane: Plane,
}

impl EnergyMap {
    pub fn width(&self) -> u32 {
        self.plane.width()
    }

    pub fn height(&self) -> u32 {
        self.plane.height()
    }

    pub fn values(&self) -> &[f64] {
        self.plane.values()
    }
}

/// Central-difference energy `e = sqrt(gx^2 + gy^2)` with
/// `gx = I(x+1,y) - I(x-1,y)` and `gy = I(x,y+1) - I(x,y-1)`, computed on
/// interior pixels only. Requires both sides >= 3.
pub fn channel_energy(channel: &Plane) -> Result<EnergyMap> {
    let (w, h) = (channel.width(), channel.height());
    if w < 3 || h < 3 {
        return Err(Error::InvalidInput(format!(
            "channel raster {w}x{h} too small for central differences (need >= 3)"
        )));
    }
    let mut plane = Plane::new(w - 2, h - 2);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = channel.get(x + 1, y) - channel.get(x - 1, y);
            let gy = channel.get(x, y + 1) - channel.get(x, y - 1);
            plane.set(x - 1, y - 1, (gx * gx + gy * gy).sqrt());
        }
    }
    Ok(EnergyMap { plane })
}

/// Which HSV channel an energy map came from; fixes the histogram range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    Hue,
    Saturation,
    Value,
}

impl ChannelKind {
    /// Nominal channel scale (hue degrees, saturation ratio, value level).
    pub fn scale(self) -> f64 {
        match self {
            ChannelKind::Hue => 360.0,
            ChannelKind::Saturation => 1.0,
            ChannelKind::Value => 255.0,
        }
    }

    /// Upper edge of the fixed histogram range: `2 * sqrt(2) * scale`.
    /// Fixed ranges keep histograms comparable across patches.
    pub fn max_energy(self) -> f64 {
        2.0 * std::f64::consts::SQRT_2 * self.scale()
    }
}

/// Ten equal-width bins over `[0, max_energy]`; values at or beyond the
/// range clamp into the last bin. Normalized to sum 1.
pub fn energy_histogram(map: &EnergyMap, kind: ChannelKind) -> Result<[f64; BINS]> {
    let values = map.values();
    if values.is_empty() {
        return Err(Error::InvalidInput("empty energy map".into()));
    }
    let width = kind.max_energy() / BINS as f64;
    let mut counts = [0usize; BINS];
    for &e in values {
        let bin = ((e / width) as usize).min(BINS - 1);
        counts[bin] += 1;
    }
    let total = values.len() as f64;
    let mut hist = [0.0; BINS];
    for (h, &c) in hist.iter_mut().zip(&counts) {
        *h = c as f64 / total;
    }
    Ok(hist)
}

/// LBP configuration: square window side (5, 7 or 9) around each pixel;
/// eight neighbors are sampled on the circle of radius `(side - 1) / 2`
/// and mapped through the rotation-invariant uniform (riu2) code, which
/// yields exactly ten pattern bins for P = 8.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpParams {
    pub window_side: u32,
}

impl Default for LbpParams {
    fn default() -> Self {
        LbpParams { window_side: 5 }
    }
}

impl LbpParams {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.window_side, 5 | 7 | 9) {
            return Err(Error::InvalidParams(format!(
                "LBP window side must be 5, 7 or 9, got {}",
                self.window_side
            )));
        }
        Ok(())
    }

    pub fn radius(&self) -> u32 {
        (self.window_side - 1) / 2
    }
}

/// Samples the eight circle neighbors of `(x, y)` at radius `r`.
///
/// Axis-aligned neighbors are exact pixel reads. Diagonal neighbors are
/// bilinearly interpolated through a formulation that is symmetric in the
/// two off-axis pixels, so a sampled value is bit-identical under 90°
/// rotations of the raster and interpolation of a constant region returns
/// the constant exactly.
fn sample_ring(plane: &Plane, x: u32, y: u32, r: u32) -> [f64; 8] {
    let diag = r as f64 / std::f64::consts::SQRT_2;
    let k = diag.floor() as u32;
    let f = diag - k as f64;

    let axis =
        |dx: i64, dy: i64| -> f64 { plane.get((x as i64 + dx) as u32, (y as i64 + dy) as u32) };
    let diagonal = |sx: i64, sy: i64| -> f64 {
        let px = |i: u32, j: u32| {
            plane.get(
                (x as i64 + sx * i as i64) as u32,
                (y as i64 + sy * j as i64) as u32,
            )
        };
        let a = px(k, k);
        let bx = px(k + 1, k);
        let by = px(k, k + 1);
        let c = px(k + 1, k + 1);
        let (lo, hi) = if bx <= by { (bx, by) } else { (by, bx) };
        a + f * ((lo - a) + (hi - a)) + f * f * ((a + c) - (lo + hi))
    };

    // Angular order: E, SE, S, SW, W, NW, N, NE (y grows downward).
    [
        axis(r as i64, 0),
        diagonal(1, 1),
        axis(0, r as i64),
        diagonal(-1, 1),
        axis(-(r as i64), 0),
        diagonal(-1, -1),
        axis(0, -(r as i64)),
        diagonal(1, -1),
    ]
}

/// riu2 bin of an 8-bit circular pattern: uniform patterns (at most two
/// 0/1 transitions around the circle) map to their popcount (bins 0..=8),
/// non-uniform patterns map to bin 9.
fn riu2_bin(code: u8) -> usize {
    let transitions = (code ^ code.rotate_left(1)).count_ones();
    if transitions <= 2 {
        code.count_ones() as usize
    } else {
        9
    }
}

/// Rotation-invariant uniform LBP histogram over a grey raster (the V
/// plane of a patch). A neighbor ties with the center count as 1.
pub fn lbp_histogram(grey: &Plane, params: &LbpParams) -> Result<[f64; BINS]> {
    params.validate()?;
    let r = params.radius();
    let (w, h) = (grey.width(), grey.height());
    if w < params.window_side || h < params.window_side {
        return Err(Error::InvalidInput(format!(
            "raster {w}x{h} smaller than LBP window {}",
            params.window_side
        )));
    }
    let mut counts = [0usize; BINS];
    for y in r..h - r {
        for x in r..w - r {
            let center = grey.get(x, y);
            let ring = sample_ring(grey, x, y, r);
            let mut code = 0u8;
            for (bit, &v) in ring.iter().enumerate() {
                if v >= center {
                    code |= 1 << bit;
                }
            }
            counts[riu2_bin(code)] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let mut hist = [0.0; BINS];
    for (out, &c) in hist.iter_mut().zip(&counts) {
        *out = c as f64 / total as f64;
    }
    Ok(hist)
}

/// View provenance of a descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureView {
    Surface,
    Section,
    Mixed,
}

impl FeatureView {
    pub fn token(self) -> &'static str {
        match self {
            FeatureView::Surface => "SURFACE",
            FeatureView::Section => "SECTION",
            FeatureView::Mixed => "MIXED",
        }
    }
}

impl From<ViewKind> for FeatureView {
    fn from(v: ViewKind) -> Self {
        match v {
            ViewKind::Surface => FeatureView::Surface,
            ViewKind::Section => FeatureView::Section,
        }
    }
}

impl fmt::Display for FeatureView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FeatureView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SURFACE" => Ok(FeatureView::Surface),
            "SECTION" => Ok(FeatureView::Section),
            "MIXED" => Ok(FeatureView::Mixed),
            _ => Err(Error::UnknownToken {
                kind: "view",
                token: s.to_string(),
            }),
        }
    }
}

/// Normalized histogram descriptor of one patch (40 components) or one
/// surface/section pair (80 components).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub components: Vec<f64>,
    pub view: FeatureView,
    pub class: ClassLabel,
    pub stone_id: String,
}

/// Computes the 40-component descriptor `[eH | eS | eV | LBP]` of a patch.
pub fn feature_vector(patch: &PatchRecord, lbp: &LbpParams) -> Result<FeatureVector> {
    let side = patch.patch.width().min(patch.patch.height());
    let min_side = 3.max(lbp.window_side);
    if side < min_side {
        return Err(Error::InvalidInput(format!(
            "patch side {side} below feature minimum {min_side}"
        )));
    }
    let [ph, ps, pv] = hsv_planes(&patch.patch);
    let mut components = Vec::with_capacity(SINGLE_VIEW_LEN);
    components.extend(energy_histogram(&channel_energy(&ph)?, ChannelKind::Hue)?);
    components.extend(energy_histogram(
        &channel_energy(&ps)?,
        ChannelKind::Saturation,
    )?);
    components.extend(energy_histogram(&channel_energy(&pv)?, ChannelKind::Value)?);
    components.extend(lbp_histogram(&pv, lbp)?);
    Ok(FeatureVector {
        components,
        view: patch.view.into(),
        class: patch.class,
        stone_id: patch.stone_id.clone(),
    })
}

/// Concatenates a surface and a section descriptor of the same class into
/// an 80-component mixed descriptor.
pub fn mixed_vector(surface: &FeatureVector, section: &FeatureVector) -> Result<FeatureVector> {
    if surface.view != FeatureView::Surface {
        return Err(Error::ViewMismatch {
            expected: "SURFACE".into(),
            actual: surface.view.to_string(),
        });
    }
    if section.view != FeatureView::Section {
        return Err(Error::ViewMismatch {
            expected: "SECTION".into(),
            actual: section.view.to_string(),
        });
    }
    if surface.class != section.class {
        return Err(Error::ClassMismatch {
            left: surface.class.to_string(),
            right: section.class.to_string(),
        });
    }
    if surface.components.len() != SINGLE_VIEW_LEN || section.components.len() != SINGLE_VIEW_LEN {
        return Err(Error::InvalidInput(format!(
            "mixed concatenation needs two {SINGLE_VIEW_LEN}-component vectors"
        )));
    }
    let mut components = Vec::with_capacity(MIXED_LEN);
    components.extend_from_slice(&surface.components);
    components.extend_from_slice(&section.components);
    let stone_id = if surface.stone_id == section.stone_id {
        surface.stone_id.clone()
    } else {
        format!("{}|{}", surface.stone_id, section.stone_id)
    };
    Ok(FeatureVector {
        components,
        view: FeatureView::Mixed,
        class: surface.class,
        stone_id,
    })
}

/// Pairs surface and section descriptors of each class into mixed
/// descriptors, preferring partners from the same stone fragment and
/// cycling the smaller view list, so each class yields `max(m, n)` mixed
/// vectors. Seeded and deterministic.
pub fn pair_mixed(
    surface: &[FeatureVector],
    section: &[FeatureVector],
    seed: u64,
) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::new();
    for class in ClassLabel::ALL {
        let mut surf: Vec<&FeatureVector> = surface
            .iter()
            .filter(|v| v.class == class && v.view == FeatureView::Surface)
            .collect();
        let mut sect: Vec<&FeatureVector> = section
            .iter()
            .filter(|v| v.class == class && v.view == FeatureView::Section)
            .collect();
        if surf.is_empty() || sect.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37 + class.index() as u64));
        surf.shuffle(&mut rng);
        sect.shuffle(&mut rng);
        let (long, short, surface_long) = if surf.len() >= sect.len() {
            (&surf, &sect, true)
        } else {
            (&sect, &surf, false)
        };
        // Walk the longer list; draw partners from the shorter without
        // replacement, preferring the same stone, refilling when drained.
        let mut available: Vec<usize> = (0..short.len()).collect();
        for item in long.iter() {
            if available.is_empty() {
                available = (0..short.len()).collect();
            }
            let pos = available
                .iter()
                .position(|&i| short[i].stone_id == item.stone_id)
                .unwrap_or(0);
            let partner = short[available.remove(pos)];
            let mixed = if surface_long {
                mixed_vector(item, partner)?
            } else {
                mixed_vector(partner, item)?
            };
            out.push(mixed);
        }
    }
    Ok(out)
}

/// A subset of the four descriptor blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureCombo {
    pub eh: bool,
    pub es: bool,
    pub ev: bool,
    pub lbp: bool,
}

impl FeatureCombo {
    pub const ALL: FeatureCombo = FeatureCombo {
        eh: true,
        es: true,
        ev: true,
        lbp: true,
    };

    /// The seven descriptor combinations of the standard ablation.
    pub fn ablation_rows() -> Vec<FeatureCombo> {
        ["eh", "es", "ev", "ehsv", "lbp", "lbp+eh", "lbp+ehsv"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        !(self.eh || self.es || self.ev || self.lbp)
    }

    /// Number of selected 10-bin blocks per view half.
    pub fn blocks(&self) -> usize {
        [self.eh, self.es, self.ev, self.lbp]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

impl fmt::Display for FeatureCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.lbp {
            parts.push("lbp");
        }
        if self.eh && self.es && self.ev {
            parts.push("ehsv");
        } else {
            if self.eh {
                parts.push("eh");
            }
            if self.es {
                parts.push("es");
            }
            if self.ev {
                parts.push("ev");
            }
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for FeatureCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut combo = FeatureCombo {
            eh: false,
            es: false,
            ev: false,
            lbp: false,
        };
        for token in s.split('+') {
            match token.trim().to_ascii_lowercase().as_str() {
                "eh" => combo.eh = true,
                "es" => combo.es = true,
                "ev" => combo.ev = true,
                "ehsv" => {
                    combo.eh = true;
                    combo.es = true;
                    combo.ev = true;
                }
                "lbp" => combo.lbp = true,
                other => {
                    return Err(Error::UnknownToken {
                        kind: "feature combo",
                        token: other.to_string(),
                    })
                }
            }
        }
        if combo.is_empty() {
            return Err(Error::InvalidParams("empty feature combo".into()));
        }
        Ok(combo)
    }
}

/// Extracts the requested blocks, in canonical `[eH | eS | eV | LBP]`
/// order, per view half for mixed vectors.
pub fn select_features(vector: &FeatureVector, combo: FeatureCombo) -> Result<FeatureVector> {
    if combo.is_empty() {
        return Err(Error::InvalidParams("empty feature combo".into()));
    }
    let halves = match vector.components.len() {
        SINGLE_VIEW_LEN => 1,
        MIXED_LEN => 2,
        other => {
            return Err(Error::InvalidInput(format!(
                "unexpected vector length {other}"
            )))
        }
    };
    let mut components = Vec::with_capacity(halves * combo.blocks() * BINS);
    for half in 0..halves {
        let base = half * SINGLE_VIEW_LEN;
        for (i, selected) in [combo.eh, combo.es, combo.ev, combo.lbp].iter().enumerate() {
            if *selected {
                let start = base + i * BINS;
                components.extend_from_slice(&vector.components[start..start + BINS]);
            }
        }
    }
    Ok(FeatureVector {
        components,
        ..vector.clone()
    })
}

/// Writes feature vectors as `class<TAB>view<TAB>stone_id<TAB>c0,c1,...`
/// after a header line naming the combo and the LBP window. Components
/// carry nine significant decimal digits.
pub fn save_features(
    vectors: &[FeatureVector],
    combo: FeatureCombo,
    lbp: &LbpParams,
    path: &Path,
) -> Result<()> {
    let mut out = format!(
        "# lithoscan-features v1\tcombo={combo}\tlbp_window={}\n",
        lbp.window_side
    );
    for v in vectors {
        let comps: Vec<String> = v.components.iter().map(|c| format!("{c:.8e}")).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            v.class,
            v.view,
            v.stone_id,
            comps.join(",")
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Feature file contents: the vectors plus the header metadata.
pub struct FeatureFile {
    pub vectors: Vec<FeatureVector>,
    pub combo: FeatureCombo,
    pub lbp: LbpParams,
}

/// Reads a file written by [`save_features`].
pub fn load_features(path: &Path) -> Result<FeatureFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty feature file"))?;
    if !header.starts_with("# lithoscan-features v1") {
        return Err(Error::parse(path, 1, "missing feature file header"));
    }
    let mut combo = FeatureCombo::ALL;
    let mut lbp = LbpParams::default();
    for field in header.split('\t').skip(1) {
        if let Some(c) = field.strip_prefix("combo=") {
            combo = c.parse()?;
        } else if let Some(w) = field.strip_prefix("lbp_window=") {
            lbp.window_side = w
                .parse()
                .map_err(|_| Error::parse(path, 1, "bad lbp_window"))?;
        }
    }
    let mut vectors = Vec::new();
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let class = fields[0]
            .parse::<ClassLabel>()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let view = fields[1]
            .parse::<FeatureView>()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let components = fields[3]
            .split(',')
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad component `{c}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        vectors.push(FeatureVector {
            components,
            view,
            class,
            stone_id: fields[2].to_string(),
        });
    }
    Ok(FeatureFile {
        vectors,
        combo,
        lbp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ViewKind;

    #[test]
    fn hsv_achromatic_convention() {
        let p = rgb_to_hsv([100, 100, 100]);
        assert_eq!((p.h, p.s, p.v), (0.0, 0.0, 100.0));
    }

    #[test]
    fn hsv_pure_red() {
        let p = rgb_to_hsv([255, 0, 0]);
        assert_eq!((p.h, p.s, p.v), (0.0, 1.0, 255.0));
    }

    #[test]
    fn hsv_teal_uses_green_branch() {
        // V achieved by G and B; the R->G->B tie order selects the G branch.
        let p = rgb_to_hsv([0, 128, 128]);
        assert_eq!((p.h, p.s, p.v), (180.0, 1.0, 128.0));
    }

    #[test]
    fn hsv_negative_hue_wraps() {
        // V = R with B > G gives a negative sector value.
        let p = rgb_to_hsv([200, 10, 60]);
        assert!(p.h >= 0.0 && p.h < 360.0, "h = {}", p.h);
        assert!(p.h > 340.0);
    }

    #[test]
    fn energy_constant_channel_is_zero() {
        let plane = Plane::from_fn(5, 5, |_, _| 42.0);
        let e = channel_energy(&plane).unwrap();
        assert!(e.values().iter().all(|&v| v == 0.0));
        assert_eq!((e.width(), e.height()), (3, 3));
    }

    #[test]
    fn energy_unit_ramp_is_two() {
        let plane = Plane::from_fn(6, 5, |x, _| x as f64);
        let e = channel_energy(&plane).unwrap();
        assert!(e.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn energy_single_bright_pixel_matches_hand_evaluation() {
        // 5x5 zero field with one bright pixel at the center.
        let mut plane = Plane::new(5, 5);
        plane.set(2, 2, 10.0);
        let e = channel_energy(&plane).unwrap();
        // Interior is 3x3 centered on the bright pixel. Direct evaluation:
        // neighbors on the same row/column see |g| = 10 in one direction.
        let expected = [
            (0, 1, 10.0),
            (2, 1, 10.0),
            (1, 0, 10.0),
            (1, 2, 10.0),
            (1, 1, 0.0),
            (0, 0, 0.0),
            (2, 2, 0.0),
            (0, 2, 0.0),
            (2, 0, 0.0),
        ];
        for (x, y, want) in expected {
            let got = e.values()[(y * 3 + x) as usize];
            assert_eq!(got, want, "at ({x},{y})");
        }
    }

    #[test]
    fn energy_needs_three_pixels() {
        let plane = Plane::new(2, 5);
        assert!(channel_energy(&plane).is_err());
    }

    #[test]
    fn histogram_all_zero_map() {
        let e = channel_energy(&Plane::from_fn(4, 4, |_, _| 7.0)).unwrap();
        let h = energy_histogram(&e, ChannelKind::Value).unwrap();
        assert_eq!(h[0], 1.0);
        assert!(h[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn histogram_ramp_bins_into_first_bin() {
        let e = channel_energy(&Plane::from_fn(8, 8, |x, _| x as f64)).unwrap();
        let h = energy_histogram(&e, ChannelKind::Value).unwrap();
        // e = 2 everywhere; bin width = 2*sqrt(2)*255/10 = 72.12; bin 0.
        assert_eq!(h[0], 1.0);
    }

    #[test]
    fn histogram_matches_brute_force_binning() {
        // Deterministic pseudo-random energies spanning the full range.
        let vals: Vec<f64> = (0..400)
            .map(|i| {
                let t = (i as f64 * 0.37).sin().abs();
                t * ChannelKind::Value.max_energy() * 1.05 // some beyond range
            })
            .collect();
        let plane = Plane::from_fn(22, 22, |x, y| {
            let i = (y * 22 + x) as usize;
            vals[i % vals.len()]
        });
        // Wrap the plane as an energy map directly and compare against an
        // independently coded binning pass.
        let e_max = ChannelKind::Value.max_energy();
        let hist = {
            let em = EnergyMap {
                plane: plane.clone(),
            };
            energy_histogram(&em, ChannelKind::Value).unwrap()
        };
        let mut brute = [0.0; BINS];
        for &v in plane.values() {
            let mut b = (v / (e_max / 10.0)).floor() as usize;
            if b > 9 {
                b = 9;
            }
            brute[b] += 1.0;
        }
        let n = plane.values().len() as f64;
        for b in &mut brute {
            *b /= n;
        }
        assert_eq!(hist, brute);
        let sum: f64 = hist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_uniform_energies_fill_bins_evenly() {
        // 400 energies evenly spanning [0, E_max): each bin holds 0.1.
        let e_max = ChannelKind::Value.max_energy();
        let plane = Plane::from_fn(20, 20, |x, y| {
            let i = (y * 20 + x) as f64;
            i / 400.0 * e_max
        });
        let hist = energy_histogram(&EnergyMap { plane }, ChannelKind::Value).unwrap();
        for (b, &mass) in hist.iter().enumerate() {
            assert!((mass - 0.1).abs() < 1e-9, "bin {b} holds {mass}");
        }
    }

    #[test]
    fn lbp_constant_raster_all_ones_pattern() {
        let plane = Plane::from_fn(9, 9, |_, _| 3.5);
        let h = lbp_histogram(&plane, &LbpParams::default()).unwrap();
        assert_eq!(h[8], 1.0, "ties set the bit, so all codes are 0xFF");
        assert_eq!(h.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn lbp_rotation_invariance_exact() {
        let plane = Plane::from_fn(16, 16, |x, y| {
            ((x as f64 * 3.7).sin() * 40.0 + (y as f64 * 1.9).cos() * 55.0 + 128.0).round()
        });
        let rot90 = Plane::from_fn(16, 16, |x, y| plane.get(y, 15 - x));
        let rot180 = Plane::from_fn(16, 16, |x, y| plane.get(15 - x, 15 - y));
        let rot270 = Plane::from_fn(16, 16, |x, y| plane.get(15 - y, x));
        let params = LbpParams::default();
        let h0 = lbp_histogram(&plane, &params).unwrap();
        assert_eq!(h0, lbp_histogram(&rot90, &params).unwrap());
        assert_eq!(h0, lbp_histogram(&rot180, &params).unwrap());
        assert_eq!(h0, lbp_histogram(&rot270, &params).unwrap());
    }

    #[test]
    fn lbp_window_size_checked() {
        let plane = Plane::new(4, 4);
        assert!(lbp_histogram(&plane, &LbpParams::default()).is_err());
        assert!(lbp_histogram(&plane, &LbpParams { window_side: 4 }).is_err());
    }

    #[test]
    fn riu2_has_ten_classes() {
        let mut seen = std::collections::BTreeSet::new();
        for code in 0..=255u8 {
            seen.insert(riu2_bin(code));
        }
        assert_eq!(seen.len(), 10);
        assert_eq!(riu2_bin(0b0000_0000), 0);
        assert_eq!(riu2_bin(0b1111_1111), 8);
        assert_eq!(riu2_bin(0b0000_1111), 4);
        assert_eq!(riu2_bin(0b0101_0101), 9);
    }

    fn constant_patch(side: u32, rgb: [u8; 3]) -> PatchRecord {
        PatchRecord {
            patch: RgbImage::from_fn(side, side, |_, _| rgb),
            origin: (0, 0),
            class: ClassLabel::WW,
            view: ViewKind::Surface,
            stone_id: "s".into(),
            synthetic: false,
        }
    }

    #[test]
    fn feature_vector_constant_grey_patch() {
        let v = feature_vector(&constant_patch(16, [90, 90, 90]), &LbpParams::default()).unwrap();
        assert_eq!(v.components.len(), SINGLE_VIEW_LEN);
        // Energy blocks concentrate in bin 0; LBP mass in riu2 class 8.
        assert_eq!(v.components[0], 1.0);
        assert_eq!(v.components[10], 1.0);
        assert_eq!(v.components[20], 1.0);
        assert_eq!(v.components[30 + 8], 1.0);
    }

    #[test]
    fn feature_vector_blocks_sum_to_one() {
        let patch = PatchRecord {
            patch: RgbImage::from_fn(20, 20, |x, y| {
                [
                    ((x * 13 + y * 7) % 256) as u8,
                    ((x * 5 + y * 17) % 256) as u8,
                    ((x * 3 + y * 29) % 211) as u8,
                ]
            }),
            origin: (0, 0),
            class: ClassLabel::UA,
            view: ViewKind::Section,
            stone_id: "t".into(),
            synthetic: false,
        };
        let v = feature_vector(&patch, &LbpParams::default()).unwrap();
        for block in 0..4 {
            let sum: f64 = v.components[block * BINS..(block + 1) * BINS].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "block {block} sums to {sum}");
            assert!(v.components[block * BINS..(block + 1) * BINS]
                .iter()
                .all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn intensity_scaling_leaves_hue_saturation_blocks() {
        // Smooth low-frequency patch; H and S are scale-invariant in exact
        // arithmetic, so their histograms move by at most quantization.
        let base = RgbImage::from_fn(32, 32, |x, y| {
            let t = ((x as f64 / 6.0).sin() + (y as f64 / 8.0).cos()) * 0.5;
            [
                (170.0 + 20.0 * t) as u8,
                (120.0 + 25.0 * t) as u8,
                (60.0 + 10.0 * t) as u8,
            ]
        });
        let scaled = RgbImage::from_fn(32, 32, |x, y| {
            let p = base.get(x, y);
            [
                (p[0] as f64 * 0.5).round() as u8,
                (p[1] as f64 * 0.5).round() as u8,
                (p[2] as f64 * 0.5).round() as u8,
            ]
        });
        let mk = |img: RgbImage| PatchRecord {
            patch: img,
            origin: (0, 0),
            class: ClassLabel::WW,
            view: ViewKind::Surface,
            stone_id: "s".into(),
            synthetic: false,
        };
        let v1 = feature_vector(&mk(base), &LbpParams::default()).unwrap();
        let v2 = feature_vector(&mk(scaled), &LbpParams::default()).unwrap();
        for i in 0..2 * BINS {
            assert!(
                (v1.components[i] - v2.components[i]).abs() < 0.02,
                "component {i}: {} vs {}",
                v1.components[i],
                v2.components[i]
            );
        }
    }

    #[test]
    fn mixed_vector_concatenates() {
        let s = feature_vector(&constant_patch(16, [200, 80, 40]), &LbpParams::default()).unwrap();
        let mut c =
            feature_vector(&constant_patch(16, [180, 90, 30]), &LbpParams::default()).unwrap();
        c.view = FeatureView::Section;
        let m = mixed_vector(&s, &c).unwrap();
        assert_eq!(m.components.len(), MIXED_LEN);
        assert_eq!(&m.components[..SINGLE_VIEW_LEN], &s.components[..]);
        assert_eq!(m.view, FeatureView::Mixed);
    }

    #[test]
    fn mixed_vector_class_mismatch() {
        let s = feature_vector(&constant_patch(16, [200, 80, 40]), &LbpParams::default()).unwrap();
        let mut c = s.clone();
        c.view = FeatureView::Section;
        c.class = ClassLabel::WD;
        assert!(matches!(
            mixed_vector(&s, &c),
            Err(Error::ClassMismatch { .. })
        ));
    }

    #[test]
    fn pair_mixed_counts_and_reuse() {
        let mk = |view: FeatureView, stone: &str| FeatureVector {
            components: vec![0.1; SINGLE_VIEW_LEN],
            view,
            class: ClassLabel::BRU,
            stone_id: stone.into(),
        };
        let surface: Vec<FeatureVector> = (0..5)
            .map(|i| mk(FeatureView::Surface, &format!("st{}", i % 3)))
            .collect();
        let section: Vec<FeatureVector> = (0..2)
            .map(|i| mk(FeatureView::Section, &format!("st{i}")))
            .collect();
        let mixed = pair_mixed(&surface, &section, 11).unwrap();
        assert_eq!(mixed.len(), 5, "max(m, n) mixed vectors");
        assert!(mixed.iter().all(|m| m.components.len() == MIXED_LEN));
    }

    #[test]
    fn pair_mixed_prefers_same_stone() {
        let mk = |view: FeatureView, stone: &str, fill: f64| FeatureVector {
            components: vec![fill; SINGLE_VIEW_LEN],
            view,
            class: ClassLabel::WW,
            stone_id: stone.into(),
        };
        let surface = vec![
            mk(FeatureView::Surface, "a", 0.0),
            mk(FeatureView::Surface, "b", 1.0),
        ];
        let section = vec![
            mk(FeatureView::Section, "b", 2.0),
            mk(FeatureView::Section, "a", 3.0),
        ];
        let mixed = pair_mixed(&surface, &section, 5).unwrap();
        for m in &mixed {
            assert!(m.stone_id == "a" || m.stone_id == "b", "same-stone pairing");
        }
    }

    #[test]
    fn select_single_block() {
        let v = FeatureVector {
            components: (0..40).map(|i| i as f64).collect(),
            view: FeatureView::Surface,
            class: ClassLabel::WW,
            stone_id: "s".into(),
        };
        let eh = select_features(&v, "eh".parse().unwrap()).unwrap();
        assert_eq!(eh.components, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        let all = select_features(&v, FeatureCombo::ALL).unwrap();
        assert_eq!(all.components, v.components);
    }

    #[test]
    fn select_on_mixed_vector_takes_blocks_per_half() {
        let v = FeatureVector {
            components: (0..80).map(|i| i as f64).collect(),
            view: FeatureView::Mixed,
            class: ClassLabel::WW,
            stone_id: "s".into(),
        };
        let sel = select_features(&v, "lbp+eh".parse().unwrap()).unwrap();
        assert_eq!(sel.components.len(), 40);
        // First half: eH block (0..10) then LBP block (30..40).
        assert_eq!(sel.components[0], 0.0);
        assert_eq!(sel.components[10], 30.0);
        // Second half starts at source index 40.
        assert_eq!(sel.components[20], 40.0);
        assert_eq!(sel.components[30], 70.0);
    }

    #[test]
    fn combo_parse_display() {
        let c: FeatureCombo = "LBP+eHSV".parse().unwrap();
        assert_eq!(c, FeatureCombo::ALL);
        assert_eq!(c.to_string(), "lbp+ehsv");
        assert!("".parse::<FeatureCombo>().is_err());
        assert_eq!("eh".parse::<FeatureCombo>().unwrap().to_string(), "eh");
        assert_eq!(FeatureCombo::ablation_rows().len(), 7);
    }

    #[test]
    fn feature_vector_deterministic() {
        let patch = PatchRecord {
            patch: RgbImage::from_fn(24, 24, |x, y| {
                [
                    ((x * 41 + y) % 256) as u8,
                    ((y * 9) % 256) as u8,
                    ((x + y * 3) % 128) as u8,
                ]
            }),
            origin: (0, 0),
            class: ClassLabel::WD,
            view: ViewKind::Surface,
            stone_id: "det".into(),
            synthetic: false,
        };
        let a = feature_vector(&patch, &LbpParams::default()).unwrap();
        let b = feature_vector(&patch.clone(), &LbpParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_file_roundtrip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("features.tsv");
        let v = feature_vector(&constant_patch(16, [10, 200, 50]), &LbpParams::default()).unwrap();
        save_features(
            std::slice::from_ref(&v),
            FeatureCombo::ALL,
            &LbpParams::default(),
            &p,
        )
        .unwrap();
        let file = load_features(&p).unwrap();
        assert_eq!(file.vectors.len(), 1);
        assert_eq!(file.combo, FeatureCombo::ALL);
        assert_eq!(file.lbp.window_side, 5);
        assert_eq!(file.vectors[0].class, v.class);
        for (a, b) in file.vectors[0].components.iter().zip(&v.components) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
