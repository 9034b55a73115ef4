//! Corpus data model and on-disk formats.
//!
//! A corpus is described by a manifest: UTF-8 text, one record per line,
//! tab-separated fields `image<TAB>mask<TAB>class<TAB>view<TAB>stone_id`.
//! Lines starting with `#` are comments. Class and view tokens are
//! case-insensitive on read and written canonically in uppercase.
//!
//! Extracted patches persist as lossless PNGs under
//! `patches/<class>/<view>/<stone_id>_<n>.png` next to an `index.tsv`
//! holding one provenance record per patch.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, RgbImage};
use crate::{Error, Result};

/// The four kidney stone classes in scope, with their morphological codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    /// Whewellite (type Ia).
    WW,
    /// Weddellite (type IIb).
    WD,
    /// Uric acid (type IIIb).
    UA,
    /// Brushite (type IVd).
    BRU,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::WW,
        ClassLabel::WD,
        ClassLabel::UA,
        ClassLabel::BRU,
    ];

    /// Canonical uppercase acronym.
    pub fn token(self) -> &'static str {
        match self {
            ClassLabel::WW => "WW",
            ClassLabel::WD => "WD",
            ClassLabel::UA => "UA",
            ClassLabel::BRU => "BRU",
        }
    }

    /// Morphological subgroup code of the class.
    pub fn morphological_code(self) -> &'static str {
        match self {
            ClassLabel::WW => "Ia",
            ClassLabel::WD => "IIb",
            ClassLabel::UA => "IIIb",
            ClassLabel::BRU => "IVd",
        }
    }

    /// Stable index into [`ClassLabel::ALL`].
    pub fn index(self) -> usize {
        match self {
            ClassLabel::WW => 0,
            ClassLabel::WD => 1,
            ClassLabel::UA => 2,
            ClassLabel::BRU => 3,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WW" => Ok(ClassLabel::WW),
            "WD" => Ok(ClassLabel::WD),
            "UA" => Ok(ClassLabel::UA),
            "BRU" => Ok(ClassLabel::BRU),
            _ => Err(Error::UnknownToken {
                kind: "class",
                token: s.to_string(),
            }),
        }
    }
}

/// Whether an image shows the exterior surface or the fragment section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewKind {
    Surface,
    Section,
}

impl ViewKind {
    pub const ALL: [ViewKind; 2] = [ViewKind::Surface, ViewKind::Section];

    pub fn token(self) -> &'static str {
        match self {
            ViewKind::Surface => "SURFACE",
            ViewKind::Section => "SECTION",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ViewKind::Surface => 0,
            ViewKind::Section => 1,
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ViewKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SURFACE" => Ok(ViewKind::Surface),
            "SECTION" => Ok(ViewKind::Section),
            _ => Err(Error::UnknownToken {
                kind: "view",
                token: s.to_string(),
            }),
        }
    }
}

/// One manifest row: an image, its stone mask, and the labeling metadata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub class: ClassLabel,
    pub view: ViewKind,
    /// Groups images acquired from the same stone fragment.
    pub stone_id: String,
}

/// List of manifest entries defining a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Parses a manifest file. Paths are kept verbatim; use
    /// [`load_image_pair`] with the manifest's parent directory to resolve
    /// relative entries. An empty (or comment-only) file yields an empty
    /// manifest; callers decide whether that deserves a warning.
    pub fn load(path: &Path) -> Result<CorpusManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 5 tab-separated fields, found {}", fields.len()),
                ));
            }
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::parse(path, lineno, "empty image or mask path"));
            }
            let class = fields[2]
                .parse::<ClassLabel>()
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let view = fields[3]
                .parse::<ViewKind>()
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            if fields[4].is_empty() {
                return Err(Error::parse(path, lineno, "empty stone_id"));
            }
            entries.push(ManifestEntry {
                image_path: PathBuf::from(fields[0]),
                mask_path: PathBuf::from(fields[1]),
                class,
                view,
                stone_id: fields[4].to_string(),
            });
        }
        Ok(CorpusManifest { entries })
    }

    /// Writes the manifest in canonical form (uppercase tokens, `\n` line
    /// endings, no comments). `save(load(m))` is byte-identical for
    /// canonical manifests.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.image_path.display(),
                e.mask_path.display(),
                e.class,
                e.view,
                e.stone_id
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One square image patch plus its provenance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchRecord {
    pub patch: RgbImage,
    /// Pixel offset of the patch in its source image.
    pub origin: (u32, u32),
    pub class: ClassLabel,
    pub view: ViewKind,
    pub stone_id: String,
    /// True for over-sampled or augmented extras.
    pub synthetic: bool,
}

/// A manifest entry with its rasters loaded; the unit the patch extractor
/// and the over-sampler operate on.
#[derive(Clone, Debug)]
pub struct SourceImage {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub class: ClassLabel,
    pub view: ViewKind,
    pub stone_id: String,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    let dyn_img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ImageDecode {
            path: path.to_path_buf(),
            source: other,
        },
    })?;
    let rgb = dyn_img.into_rgb8();
    RgbImage::from_raw(rgb.width(), rgb.height(), rgb.into_raw())
}

/// Loads an entry's image and mask and enforces dimension equality.
/// Mask rasters are thresholded: luma >= 128 counts as stone.
pub fn load_image_pair(entry: &ManifestEntry, base: &Path) -> Result<(RgbImage, BinaryMask)> {
    let image_path = resolve(base, &entry.image_path);
    let mask_path = resolve(base, &entry.mask_path);
    let image = read_rgb(&image_path)?;
    let mask_img = image::open(&mask_path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&mask_path, io),
            other => Error::ImageDecode {
                path: mask_path.clone(),
                source: other,
            },
        })?
        .into_luma8();
    if mask_img.dimensions() != image.dimensions() {
        return Err(Error::DimensionMismatch {
            context: format!("entry {}", entry.image_path.display()),
            image_w: image.width(),
            image_h: image.height(),
            mask_w: mask_img.width(),
            mask_h: mask_img.height(),
        });
    }
    let mask = BinaryMask::from_fn(mask_img.width(), mask_img.height(), |x, y| {
        mask_img.get_pixel(x, y).0[0] >= 128
    });
    Ok((image, mask))
}

/// Loads every entry of a manifest into memory.
pub fn load_sources(manifest: &CorpusManifest, base: &Path) -> Result<Vec<SourceImage>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let (image, mask) = load_image_pair(e, base)?;
            Ok(SourceImage {
                image,
                mask,
                class: e.class,
                view: e.view,
                stone_id: e.stone_id.clone(),
            })
        })
        .collect()
}

pub(crate) fn write_png_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer(
        path,
        img.as_raw(),
        img.width(),
        img.height(),
        image::ColorType::Rgb8,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ImageEncode {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

pub(crate) fn write_png_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buf = Vec::with_capacity((mask.width() * mask.height()) as usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            buf.push(if mask.stone(x, y) { 255u8 } else { 0u8 });
        }
    }
    image::save_buffer(
        path,
        &buf,
        mask.width(),
        mask.height(),
        image::ColorType::L8,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::ImageEncode {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

const PATCH_INDEX: &str = "index.tsv";

/// Saves patches as lossless PNGs plus an `index.tsv` of provenance
/// records, returning the number of patches written. Single writer per
/// directory; the index is written last.
pub fn save_patches(records: &[PatchRecord], dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    let mut counters: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for rec in records {
        let key = format!("{}/{}/{}", rec.class, rec.view, rec.stone_id);
        let n = counters.entry(key).or_insert(0);
        let rel = format!("{}/{}/{}_{}.png", rec.class, rec.view, rec.stone_id, n);
        *n += 1;
        write_png_rgb(&rec.patch, &dir.join(&rel))?;
        index.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            rel,
            rec.class,
            rec.view,
            rec.stone_id,
            rec.origin.0,
            rec.origin.1,
            if rec.synthetic { 1 } else { 0 }
        ));
    }
    let index_path = dir.join(PATCH_INDEX);
    let mut f = fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
    f.write_all(index.as_bytes())
        .map_err(|e| Error::io(&index_path, e))?;
    Ok(records.len())
}

/// Loads a patch directory written by [`save_patches`]. The round trip
/// preserves every pixel and every provenance field.
pub fn load_patches(dir: &Path) -> Result<Vec<PatchRecord>> {
    let index_path = dir.join(PATCH_INDEX);
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                &index_path,
                lineno,
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let patch_path = dir.join(fields[0]);
        if !patch_path.is_file() {
            return Err(Error::parse(
                &index_path,
                lineno,
                format!("referenced patch file missing: {}", patch_path.display()),
            ));
        }
        let class = fields[1]
            .parse::<ClassLabel>()
            .map_err(|e| Error::parse(&index_path, lineno, e.to_string()))?;
        let view = fields[2]
            .parse::<ViewKind>()
            .map_err(|e| Error::parse(&index_path, lineno, e.to_string()))?;
        let ox: u32 = fields[4]
            .parse()
            .map_err(|_| Error::parse(&index_path, lineno, "bad origin x"))?;
        let oy: u32 = fields[5]
            .parse()
            .map_err(|_| Error::parse(&index_path, lineno, "bad origin y"))?;
        let synthetic = match fields[6] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    &index_path,
                    lineno,
                    format!("bad synthetic flag `{other}`"),
                ))
            }
        };
        records.push(PatchRecord {
            patch: read_rgb(&patch_path)?,
            origin: (ox, oy),
            class,
            view,
            stone_id: fields[3].to_string(),
            synthetic,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn class_tokens_roundtrip_case_insensitive() {
        for c in ClassLabel::ALL {
            assert_eq!(c.token().to_lowercase().parse::<ClassLabel>().unwrap(), c);
        }
        assert_eq!("bru".parse::<ClassLabel>().unwrap(), ClassLabel::BRU);
        assert!(matches!(
            "XYZ".parse::<ClassLabel>(),
            Err(Error::UnknownToken { kind: "class", .. })
        ));
    }

    #[test]
    fn morphological_codes_fixed() {
        assert_eq!(ClassLabel::WW.morphological_code(), "Ia");
        assert_eq!(ClassLabel::WD.morphological_code(), "IIb");
        assert_eq!(ClassLabel::UA.morphological_code(), "IIIb");
        assert_eq!(ClassLabel::BRU.morphological_code(), "IVd");
    }

    #[test]
    fn manifest_two_valid_rows() {
        let d = tmpdir();
        let p = d.path().join("manifest.tsv");
        fs::write(
            &p,
            "# comment\nimg/a.png\tmask/a.png\tww\tsurface\ts1\nimg/b.png\tmask/b.png\tUA\tSECTION\ts2\n",
        )
        .unwrap();
        let m = CorpusManifest::load(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries[0].class, ClassLabel::WW);
        assert_eq!(m.entries[1].view, ViewKind::Section);
    }

    #[test]
    fn manifest_unknown_class_names_line() {
        let d = tmpdir();
        let p = d.path().join("manifest.tsv");
        fs::write(&p, "a.png\tb.png\tXYZ\tsurface\ts1\n").unwrap();
        match CorpusManifest::load(&p) {
            Err(Error::Parse { line, reason, .. }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("XYZ"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_empty_file_is_empty_manifest() {
        let d = tmpdir();
        let p = d.path().join("manifest.tsv");
        fs::write(&p, "").unwrap();
        let m = CorpusManifest::load(&p).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn manifest_canonical_roundtrip_byte_identical() {
        let d = tmpdir();
        let m = CorpusManifest {
            entries: vec![ManifestEntry {
                image_path: "images/x.png".into(),
                mask_path: "masks/x.png".into(),
                class: ClassLabel::WD,
                view: ViewKind::Surface,
                stone_id: "wd007".into(),
            }],
        };
        let p1 = d.path().join("m1.tsv");
        let p2 = d.path().join("m2.tsv");
        m.save(&p1).unwrap();
        CorpusManifest::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn image_pair_dimension_mismatch() {
        let d = tmpdir();
        write_png_rgb(&RgbImage::new(8, 8), &d.path().join("img.png")).unwrap();
        write_png_mask(&BinaryMask::new(4, 4), &d.path().join("mask.png")).unwrap();
        let entry = ManifestEntry {
            image_path: "img.png".into(),
            mask_path: "mask.png".into(),
            class: ClassLabel::WW,
            view: ViewKind::Surface,
            stone_id: "s".into(),
        };
        assert!(matches!(
            load_image_pair(&entry, d.path()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn image_pair_matching_dims_and_empty_mask_ok() {
        let d = tmpdir();
        write_png_rgb(
            &RgbImage::from_fn(8, 8, |x, y| [x as u8 * 10, y as u8 * 10, 3]),
            &d.path().join("img.png"),
        )
        .unwrap();
        write_png_mask(&BinaryMask::new(8, 8), &d.path().join("mask.png")).unwrap();
        let entry = ManifestEntry {
            image_path: "img.png".into(),
            mask_path: "mask.png".into(),
            class: ClassLabel::WW,
            view: ViewKind::Surface,
            stone_id: "s".into(),
        };
        let (img, mask) = load_image_pair(&entry, d.path()).unwrap();
        assert_eq!(img.dimensions(), mask.dimensions());
        assert_eq!(mask.stone_count(), 0);
        assert_eq!(img.get(1, 2), [10, 20, 3]);
    }

    #[test]
    fn patch_roundtrip_preserves_pixels_and_provenance() {
        let d = tmpdir();
        let records: Vec<PatchRecord> = (0..10)
            .map(|i| PatchRecord {
                patch: RgbImage::from_fn(6, 6, |x, y| [i as u8, x as u8 * 7, y as u8 * 11]),
                origin: (i * 3, i * 5),
                class: ClassLabel::ALL[(i % 4) as usize],
                view: if i % 2 == 0 {
                    ViewKind::Surface
                } else {
                    ViewKind::Section
                },
                stone_id: format!("st{}", i % 3),
                synthetic: i % 3 == 0,
            })
            .collect();
        let n = save_patches(&records, d.path()).unwrap();
        assert_eq!(n, 10);
        let mut loaded = load_patches(d.path()).unwrap();
        // Index order is the save order.
        assert_eq!(loaded.len(), 10);
        for (a, b) in records.iter().zip(loaded.drain(..)) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn empty_patch_list_gives_empty_index() {
        let d = tmpdir();
        assert_eq!(save_patches(&[], d.path()).unwrap(), 0);
        assert!(load_patches(d.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_patch_file_named_in_error() {
        let d = tmpdir();
        let rec = PatchRecord {
            patch: RgbImage::new(4, 4),
            origin: (0, 0),
            class: ClassLabel::UA,
            view: ViewKind::Surface,
            stone_id: "s9".into(),
            synthetic: false,
        };
        save_patches(&[rec], d.path()).unwrap();
        fs::remove_file(d.path().join("UA/SURFACE/s9_0.png")).unwrap();
        match load_patches(d.path()) {
            Err(Error::Parse { reason, .. }) => assert!(reason.contains("s9_0.png")),
            other => panic!("expected missing-file error, got {other:?}"),
        }
    }
}
