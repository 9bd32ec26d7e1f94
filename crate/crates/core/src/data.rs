//! Datasets: CIFAR-10 binary batches, directories of PNG files and a
//! deterministic procedural glyph generator.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgba};
use ncam_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcamError, Result};
use crate::image_io::rgba8_to_tensor;

/// Side length of a CIFAR-10 image.
pub const CIFAR_SIDE: usize = 32;
/// One label byte followed by 32·32 red, then green, then blue bytes.
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: usize,
    pub label: Option<u8>,
    /// (V, H, W) in `[0, 1]`, premultiplied when V = 4.
    pub image: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub visible: usize,
    pub height: usize,
    pub width: usize,
    pub items: Vec<Item>,
}

impl Dataset {
    /// Checks that every item shares one (V, H, W) shape.
    pub fn new(name: impl Into<String>, items: Vec<Item>) -> Result<Self> {
        let first = items.first().ok_or(NcamError::EmptyDataset)?;
        let s = first.image.shape().to_vec();
        if s.len() != 3 {
            return Err(NcamError::Precondition(format!("dataset images must be (V, H, W), got {s:?}")));
        }
        if let Some(bad) = items.iter().find(|it| it.image.shape() != s.as_slice()) {
            return Err(NcamError::Precondition(format!(
                "item {} has shape {:?} but the dataset uses {s:?}",
                bad.id,
                bad.image.shape()
            )));
        }
        Ok(Self {
            name: name.into(),
            visible: s[0],
            height: s[1],
            width: s[2],
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Item> {
        self.items.iter().find(|it| it.id == id).ok_or(NcamError::UnknownId(id))
    }

    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.id).collect()
    }

    /// Keeps the first `n` items.
    pub fn truncated(mut self, n: usize) -> Result<Self> {
        self.items.truncate(n);
        if self.items.is_empty() {
            return Err(NcamError::EmptyDataset);
        }
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlyphStyle {
    /// Two or three thick straight strokes.
    Lines,
    /// A ring or ellipse outline, sometimes with a dot.
    Round,
    /// Alternates the two styles.
    Mixed,
}

impl std::str::FromStr for GlyphStyle {
    type Err = NcamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(Self::Lines),
            "round" => Ok(Self::Round),
            "mixed" => Ok(Self::Mixed),
            other => Err(NcamError::Config(format!(
                "unknown glyph style {other:?} (expected lines, round or mixed)"
            ))),
        }
    }
}

/// Serializable recipe for rebuilding a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Glyphs {
        count: usize,
        size: usize,
        style: GlyphStyle,
        seed: u64,
    },
    Cifar {
        path: PathBuf,
        limit: Option<usize>,
    },
    PngDir {
        path: PathBuf,
        size: Option<usize>,
        visible: usize,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Glyphs { count, size, style, seed } => gen_glyphs(*count, *size, *style, *seed),
            DatasetSpec::Cifar { path, limit } => {
                let ds = load_cifar10(path)?;
                match limit {
                    Some(n) => ds.truncated(*n),
                    None => Ok(ds),
                }
            }
            DatasetSpec::PngDir { path, size, visible } => load_png_dir(path, *size, *visible),
        }
    }
}

/// Parses the records of one CIFAR-10 binary batch.
pub fn parse_cifar(bytes: &[u8], context: &str, first_id: usize) -> Result<Vec<Item>> {
    let full = bytes.len() / CIFAR_RECORD;
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = (full * CIFAR_RECORD) as u64;
        return Err(NcamError::Malformed {
            context: context.into(),
            offset,
            msg: format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                bytes.len() - full * CIFAR_RECORD
            ),
        });
    }
    if full == 0 {
        return Err(NcamError::Malformed {
            context: context.into(),
            offset: 0,
            msg: "no records".into(),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if label > 9 {
                return Err(NcamError::Malformed {
                    context: context.into(),
                    offset: (i * CIFAR_RECORD) as u64,
                    msg: format!("label {label} is outside 0..=9"),
                });
            }
            let pixels = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
            Ok(Item {
                id: first_id + i,
                label: Some(label),
                image: Tensor::new(&[3, CIFAR_SIDE, CIFAR_SIDE], pixels)?,
            })
        })
        .collect()
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| NcamError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads one CIFAR-10 batch file, or every `.bin` batch of a directory in
/// file-name order.
pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    let files = if path.is_dir() {
        sorted_files(path, "bin")?
    } else {
        vec![path.to_path_buf()]
    };
    let mut items = Vec::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| NcamError::io(&f, e))?;
        items.extend(parse_cifar(&bytes, &f.display().to_string(), items.len())?);
    }
    Dataset::new(format!("cifar10:{}", path.display()), items)
}

/// Loads every `.png` of a directory (file-name order) as RGBA or RGB,
/// resizing to `size x size` when given. Without resizing all files must
/// share one size.
pub fn load_png_dir(dir: &Path, size: Option<usize>, visible: usize) -> Result<Dataset> {
    let files = sorted_files(dir, "png")?;
    if files.is_empty() {
        return Err(NcamError::EmptyDataset);
    }
    let mut items = Vec::with_capacity(files.len());
    for (id, f) in files.iter().enumerate() {
        let img = image::open(f)?.to_rgba8();
        let image = match size {
            Some(s) => resize_premultiplied(&img, s, visible)?,
            None => rgba8_to_tensor(&img, visible)?,
        };
        items.push(Item { id, label: None, image });
    }
    Dataset::new(format!("png:{}", dir.display()), items)
}

/// Resizes in premultiplied space so transparent pixels do not bleed color.
fn resize_premultiplied(img: &image::RgbaImage, size: usize, visible: usize) -> Result<Tensor<f32>> {
    if size == 0 {
        return Err(NcamError::Config("resize target must be positive".into()));
    }
    let premul: ImageBuffer<Rgba<f32>, Vec<f32>> = ImageBuffer::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y);
        let a = if visible == 4 { p[3] as f32 / 255.0 } else { 1.0 };
        Rgba([p[0] as f32 / 255.0 * a, p[1] as f32 / 255.0 * a, p[2] as f32 / 255.0 * a, a])
    });
    let small = imageops::resize(&premul, size as u32, size as u32, FilterType::Triangle);
    let plane = size * size;
    let mut t = Tensor::zeros(&[visible, size, size]);
    let d = t.data_mut();
    for (x, y, p) in small.enumerate_pixels() {
        let i = y as usize * size + x as usize;
        for c in 0..visible {
            d[c * plane + i] = p[c].clamp(0.0, 1.0);
        }
    }
    Ok(t)
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Signed distance (in pixels) of a point to a shape; negative inside.
enum Shape {
    Stroke { a: [f32; 2], b: [f32; 2], r: f32 },
    Ring { c: [f32; 2], rx: f32, ry: f32, r: f32 },
    Disc { c: [f32; 2], r: f32 },
}

impl Shape {
    fn sdf(&self, p: [f32; 2]) -> f32 {
        match *self {
            Shape::Stroke { a, b, r } => {
                let (pa, ba) = ([p[0] - a[0], p[1] - a[1]], [b[0] - a[0], b[1] - a[1]]);
                let t = ((pa[0] * ba[0] + pa[1] * ba[1]) / (ba[0] * ba[0] + ba[1] * ba[1])).clamp(0.0, 1.0);
                (pa[0] - t * ba[0]).hypot(pa[1] - t * ba[1]) - r
            }
            Shape::Ring { c, rx, ry, r } => {
                // distance to an ellipse outline, approximated by radial scaling
                let (dx, dy) = ((p[0] - c[0]) / rx, (p[1] - c[1]) / ry);
                let k = dx.hypot(dy);
                (k - 1.0).abs() * rx.min(ry) - r
            }
            Shape::Disc { c, r } => (p[0] - c[0]).hypot(p[1] - c[1]) - r,
        }
    }
}

const SUPERSAMPLE: usize = 4;

fn glyph_shapes(rng: &mut ChaCha8Rng, size: f32, round: bool) -> Vec<Shape> {
    let r = (0.06 * size).max(0.75);
    let pt = |rng: &mut ChaCha8Rng| [rng.gen_range(0.2..0.8) * size, rng.gen_range(0.2..0.8) * size];
    if !round {
        let strokes = rng.gen_range(2..=3);
        (0..strokes)
            .map(|_| loop {
                let (a, b) = (pt(rng), pt(rng));
                if (a[0] - b[0]).hypot(a[1] - b[1]) >= 0.3 * size {
                    break Shape::Stroke { a, b, r };
                }
            })
            .collect()
    } else {
        let c = [
            size / 2.0 + rng.gen_range(-0.08..0.08) * size,
            size / 2.0 + rng.gen_range(-0.08..0.08) * size,
        ];
        let rx = rng.gen_range(0.18..0.32) * size;
        let ry = if rng.gen_bool(0.5) { rx } else { rng.gen_range(0.18..0.32) * size };
        let mut shapes = vec![Shape::Ring { c, rx, ry, r }];
        if rng.gen_bool(0.5) {
            shapes.push(Shape::Disc { c, r: r * 1.5 });
        }
        shapes
    }
}

/// Procedural anti-aliased glyphs: `count` images of `size x size`
/// premultiplied RGBA, each one colored shape on a transparent background.
/// The output depends only on the arguments.
pub fn gen_glyphs(count: usize, size: usize, style: GlyphStyle, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(NcamError::EmptyDataset);
    }
    if size < 8 {
        return Err(NcamError::Config(format!("glyphs need at least 8x8 pixels, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    let items = (0..count)
        .map(|id| {
            let round = match style {
                GlyphStyle::Lines => false,
                GlyphStyle::Round => true,
                GlyphStyle::Mixed => id % 2 == 1,
            };
            let color = hsv(rng.gen(), rng.gen_range(0.6..0.9), rng.gen_range(0.75..1.0));
            let shapes = glyph_shapes(&mut rng, size as f32, round);
            let mut t = Tensor::zeros(&[4, size, size]);
            let d = t.data_mut();
            for y in 0..size {
                for x in 0..size {
                    let mut hits = 0;
                    for sy in 0..SUPERSAMPLE {
                        for sx in 0..SUPERSAMPLE {
                            let p = [
                                x as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32,
                                y as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32,
                            ];
                            if shapes.iter().any(|s| s.sdf(p) <= 0.0) {
                                hits += 1;
                            }
                        }
                    }
                    let a = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                    let i = y * size + x;
                    for c in 0..3 {
                        d[c * plane + i] = color[c] * a;
                    }
                    d[3 * plane + i] = a;
                }
            }
            Item {
                id,
                label: None,
                image: t,
            }
        })
        .collect();
    let name = format!("glyphs-{style:?}-{size}-{seed}").to_lowercase();
    Dataset::new(name, items)
}
