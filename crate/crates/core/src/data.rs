//! Dataset handling: folder corpora, synthetic blobs, weak-label conversion,
//! the mixed-supervision sampler, and resize augmentation.
//!
//! A training pool is a list of datasets, one supervision kind each. The
//! sampler cycles the kinds round-robin (each step trains on exactly one
//! kind) and walks shuffled epochs within a kind, all as a pure function of
//! the seed and step counter so training can resume from a checkpoint
//! without replaying data.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{
    self, BoxLabel, DenseMask, PointLabel, ScribbleLabel, ScribbleMark, DEFAULT_MAX_VERTICES,
    DEFAULT_POINTS_PER_CLASS,
};
use crate::error::{Error, Result};
use crate::grid;
use crate::ImageTensor;

/// The five annotation regimes, in their fixed scheduling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SupervisionKind {
    Pixel,
    Polygon,
    Box,
    Scribble,
    Point,
}

impl SupervisionKind {
    pub const ALL: [SupervisionKind; 5] = [
        SupervisionKind::Pixel,
        SupervisionKind::Polygon,
        SupervisionKind::Box,
        SupervisionKind::Scribble,
        SupervisionKind::Point,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SupervisionKind::Pixel => "pixel",
            SupervisionKind::Polygon => "polygon",
            SupervisionKind::Box => "box",
            SupervisionKind::Scribble => "scribble",
            SupervisionKind::Point => "point",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown supervision kind {s:?}")))
    }
}

impl std::fmt::Display for SupervisionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The label payload attached to one image.
#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    Dense(DenseMask),
    Box(BoxLabel),
    Scribble(ScribbleLabel),
    Points(PointLabel),
}

impl Annotation {
    fn matches_kind(&self, kind: SupervisionKind) -> bool {
        matches!(
            (self, kind),
            (Annotation::Dense(_), SupervisionKind::Pixel)
                | (Annotation::Dense(_), SupervisionKind::Polygon)
                | (Annotation::Box(_), SupervisionKind::Box)
                | (Annotation::Scribble(_), SupervisionKind::Scribble)
                | (Annotation::Points(_), SupervisionKind::Point)
        )
    }
}

/// One image with one annotation of the sample's supervision kind.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub image: ImageTensor,
    pub kind: SupervisionKind,
    pub annotation: Annotation,
    pub name: String,
    pub source: String,
}

impl LabeledSample {
    pub fn new(
        image: ImageTensor,
        kind: SupervisionKind,
        annotation: Annotation,
        name: String,
        source: String,
    ) -> Result<Self> {
        if !annotation.matches_kind(kind) {
            return Err(Error::InvalidLabel(format!(
                "annotation variant does not fit kind {kind} (sample {name})"
            )));
        }
        let (h, w) = (image.height(), image.width());
        let fits = match &annotation {
            Annotation::Dense(m) => m.dim() == (h, w),
            Annotation::Scribble(s) => s.dim() == (h, w),
            Annotation::Box(b) => b.fits(h, w),
            Annotation::Points(p) => p
                .fg_points
                .iter()
                .chain(p.bg_points.iter())
                .all(|&(r, c)| r < h && c < w),
        };
        if !fits {
            return Err(Error::InvalidLabel(format!(
                "annotation extent does not fit {h}x{w} image (sample {name})"
            )));
        }
        Ok(Self {
            image,
            kind,
            annotation,
            name,
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetRole {
    Train,
    Test,
}

/// Catalog entry describing one dataset on disk.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub name: String,
    pub root: PathBuf,
    pub kind: SupervisionKind,
    pub count: usize,
    pub role: DatasetRole,
}

impl DatasetSpec {
    pub fn new(
        name: String,
        root: PathBuf,
        kind: SupervisionKind,
        count: usize,
        role: DatasetRole,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyDataset(name));
        }
        if role == DatasetRole::Test && kind != SupervisionKind::Pixel {
            return Err(Error::InvalidConfig(format!(
                "test dataset {name} must carry dense masks, got {kind}"
            )));
        }
        Ok(Self {
            name,
            root,
            kind,
            count,
            role,
        })
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BoxRecord {
    #[serde(rename = "box")]
    coords: [usize; 4],
}

#[derive(Serialize, Deserialize, Default)]
struct PointsRecord {
    fg: Vec<[usize; 2]>,
    bg: Vec<[usize; 2]>,
}

const SCRIBBLE_BG: u8 = 0;
const SCRIBBLE_UNLABELED: u8 = 128;
const SCRIBBLE_FG: u8 = 255;

fn read_gray(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
        gray.get_pixel(c as u32, r as u32)[0]
    }))
}

/// Loads an image file as a single-channel tensor with values in [0,1].
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let gray = read_gray(path)?;
    Ok(ImageTensor::from_luma(gray.mapv(|v| f64::from(v) / 255.0)))
}

/// Loads a mask PNG, binarizing at >127.
pub fn load_mask(path: &Path) -> Result<DenseMask> {
    let gray = read_gray(path)?;
    DenseMask::new(gray.mapv(|v| u8::from(v > 127)))
}

pub fn load_scribble(path: &Path) -> Result<ScribbleLabel> {
    let gray = read_gray(path)?;
    let (h, w) = gray.dim();
    let mut grid = Array2::from_elem((h, w), ScribbleMark::Unlabeled);
    for ((r, c), &v) in gray.indexed_iter() {
        grid[[r, c]] = match v {
            SCRIBBLE_BG => ScribbleMark::Background,
            SCRIBBLE_FG => ScribbleMark::Foreground,
            SCRIBBLE_UNLABELED => ScribbleMark::Unlabeled,
            other => {
                return Err(Error::InvalidLabel(format!(
                    "scribble {} holds value {other}, expected 0/128/255",
                    path.display()
                )))
            }
        };
    }
    ScribbleLabel::new(grid)
}

pub fn load_box(path: &Path) -> Result<BoxLabel> {
    let text = std::fs::read_to_string(path)?;
    let rec: BoxRecord = serde_json::from_str(&text)?;
    BoxLabel::new(rec.coords[0], rec.coords[1], rec.coords[2], rec.coords[3])
}

pub fn load_points(path: &Path, height: usize, width: usize) -> Result<PointLabel> {
    let text = std::fs::read_to_string(path)?;
    let rec: PointsRecord = serde_json::from_str(&text)?;
    PointLabel::new(
        rec.fg.into_iter().map(|[r, c]| (r, c)).collect(),
        rec.bg.into_iter().map(|[r, c]| (r, c)).collect(),
        height,
        width,
    )
}

fn gray_to_png(path: &Path, gray: &Array2<u8>) -> Result<()> {
    let (h, w) = gray.dim();
    let buf: Vec<u8> = gray.iter().copied().collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer length matches dimensions");
    img.save(path).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn save_image(path: &Path, image: &ImageTensor) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let gray = Array2::from_shape_fn((h, w), |(r, c)| {
        (image.data[[0, r, c]].clamp(0.0, 1.0) * 255.0).round() as u8
    });
    gray_to_png(path, &gray)
}

pub fn save_mask(path: &Path, mask: &DenseMask) -> Result<()> {
    gray_to_png(path, &mask.grid().mapv(|v| v * 255))
}

pub fn save_scribble(path: &Path, scribble: &ScribbleLabel) -> Result<()> {
    let gray = scribble.grid().mapv(|m| match m {
        ScribbleMark::Background => SCRIBBLE_BG,
        ScribbleMark::Unlabeled => SCRIBBLE_UNLABELED,
        ScribbleMark::Foreground => SCRIBBLE_FG,
    });
    gray_to_png(path, &gray)
}

pub fn save_box(path: &Path, label: &BoxLabel) -> Result<()> {
    let rec = BoxRecord {
        coords: [label.row_min, label.col_min, label.row_max, label.col_max],
    };
    std::fs::write(path, serde_json::to_string_pretty(&rec)?)?;
    Ok(())
}

pub fn save_points(path: &Path, points: &PointLabel) -> Result<()> {
    let rec = PointsRecord {
        fg: points.fg_points.iter().map(|&(r, c)| [r, c]).collect(),
        bg: points.bg_points.iter().map(|&(r, c)| [r, c]).collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&rec)?)?;
    Ok(())
}

fn annotation_dir(kind: SupervisionKind) -> &'static str {
    match kind {
        SupervisionKind::Pixel | SupervisionKind::Polygon => "masks",
        SupervisionKind::Box => "boxes",
        SupervisionKind::Scribble => "scribbles",
        SupervisionKind::Point => "points",
    }
}

fn annotation_ext(kind: SupervisionKind) -> &'static str {
    match kind {
        SupervisionKind::Box | SupervisionKind::Point => "json",
        _ => "png",
    }
}

/// Writes a dataset folder: `images/*.png` plus the kind's annotation
/// directory, all named by sample name.
pub fn save_dataset(root: &Path, samples: &[LabeledSample]) -> Result<()> {
    std::fs::create_dir_all(root.join("images"))?;
    for sample in samples {
        std::fs::create_dir_all(root.join(annotation_dir(sample.kind)))?;
        save_image(
            &root.join("images").join(format!("{}.png", sample.name)),
            &sample.image,
        )?;
        let ann_path = root.join(annotation_dir(sample.kind)).join(format!(
            "{}.{}",
            sample.name,
            annotation_ext(sample.kind)
        ));
        match &sample.annotation {
            Annotation::Dense(m) => save_mask(&ann_path, m)?,
            Annotation::Box(b) => save_box(&ann_path, b)?,
            Annotation::Scribble(s) => save_scribble(&ann_path, s)?,
            Annotation::Points(p) => save_points(&ann_path, p)?,
        }
    }
    Ok(())
}

/// Loads a dataset folder laid out as written by [`save_dataset`]: every
/// image in `images/` must have a same-stem annotation file.
pub fn load_folder_dataset(root: &Path, kind: SupervisionKind) -> Result<Vec<LabeledSample>> {
    let images_dir = root.join("images");
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&images_dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::CorruptImage {
                    path: path.clone(),
                    reason: "non-UTF-8 file name".into(),
                })?
                .to_string();
            stems.push((stem, path));
        }
    }
    stems.sort();

    let source = root
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let ann_dir = root.join(annotation_dir(kind));
    let ext = annotation_ext(kind);

    let mut samples = Vec::with_capacity(stems.len());
    for (stem, image_path) in stems {
        let ann_path = ann_dir.join(format!("{stem}.{ext}"));
        if !ann_path.exists() {
            return Err(Error::MissingAnnotation(ann_path));
        }
        let image = load_image(&image_path)?;
        let (h, w) = (image.height(), image.width());
        let annotation = match kind {
            SupervisionKind::Pixel | SupervisionKind::Polygon => {
                let mask = load_mask(&ann_path)?;
                if mask.dim() != (h, w) {
                    return Err(Error::SizeMismatch {
                        path: ann_path,
                        image_h: h,
                        image_w: w,
                        ann_h: mask.dim().0,
                        ann_w: mask.dim().1,
                    });
                }
                Annotation::Dense(mask)
            }
            SupervisionKind::Box => {
                let b = load_box(&ann_path)?;
                if !b.fits(h, w) {
                    return Err(Error::SizeMismatch {
                        path: ann_path,
                        image_h: h,
                        image_w: w,
                        ann_h: b.row_max + 1,
                        ann_w: b.col_max + 1,
                    });
                }
                Annotation::Box(b)
            }
            SupervisionKind::Scribble => {
                let s = load_scribble(&ann_path)?;
                if s.dim() != (h, w) {
                    return Err(Error::SizeMismatch {
                        path: ann_path,
                        image_h: h,
                        image_w: w,
                        ann_h: s.dim().0,
                        ann_w: s.dim().1,
                    });
                }
                Annotation::Scribble(s)
            }
            SupervisionKind::Point => Annotation::Points(load_points(&ann_path, h, w)?),
        };
        samples.push(LabeledSample::new(
            image,
            kind,
            annotation,
            stem,
            source.clone(),
        )?);
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

const BLOB_FRACTION_MIN: f64 = 0.005;
const BLOB_FRACTION_MAX: f64 = 0.60;

/// Generates `n` synthetic samples: a smooth sinusoidal background with one
/// harmonically-perturbed elliptical blob at a shifted intensity, paired
/// with its exact mask. Deterministic per seed; every mask is a single
/// 4-connected component with foreground fraction in [0.5%, 60%].
pub fn synth_blob_dataset(
    n: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::EmptyDataset("synthetic".into()));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (image, mask) = synth_blob(height, width, &mut rng);
        samples.push(LabeledSample::new(
            image,
            SupervisionKind::Pixel,
            Annotation::Dense(mask),
            format!("blob{i:04}"),
            "synthetic".into(),
        )?);
    }
    Ok(samples)
}

fn synth_blob(height: usize, width: usize, rng: &mut ChaCha8Rng) -> (ImageTensor, DenseMask) {
    let (hf, wf) = (height as f64, width as f64);
    loop {
        // Smooth background: a few low-frequency plane waves around mid-gray.
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.03..0.10),
                )
            })
            .collect();

        let cy = rng.gen_range(0.25 * hf..0.75 * hf);
        let cx = rng.gen_range(0.25 * wf..0.75 * wf);
        let short = hf.min(wf);
        let radius = rng.gen_range(0.08 * short..0.40 * short);
        let aspect = rng.gen_range(0.6..1.6);
        let tilt = rng.gen_range(0.0..std::f64::consts::PI);
        // Boundary wobble from order-2..4 harmonics, total amplitude <= 0.25.
        let harmonics: Vec<(f64, f64)> = (2..=4)
            .map(|_| (rng.gen_range(0.0..0.083), rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let offset = rng.gen_range(0.15..0.35) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };

        let (sin_t, cos_t) = tilt.sin_cos();
        let raw = DenseMask::from_fn(height, width, |r, c| {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            // Rotate into the ellipse frame and squeeze one axis.
            let u = dx * cos_t + dy * sin_t;
            let v = (-dx * sin_t + dy * cos_t) * aspect;
            let d = (u * u + v * v).sqrt();
            let theta = v.atan2(u);
            let wobble: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(k, (a, phase))| a * ((k as f64 + 2.0) * theta + phase).cos())
                .sum();
            d <= radius * (1.0 + wobble)
        });

        let component = largest_component_mask(&raw);
        let fraction = component.fg_count() as f64 / (hf * wf);
        if !(BLOB_FRACTION_MIN..=BLOB_FRACTION_MAX).contains(&fraction) {
            continue;
        }

        let mut data = Array3::zeros((1, height, width));
        for r in 0..height {
            for c in 0..width {
                let mut value = 0.45;
                for &(fr, fc, phase, amp) in &waves {
                    value += amp
                        * (std::f64::consts::TAU * (fr * r as f64 / hf + fc * c as f64 / wf)
                            + phase)
                            .sin();
                }
                if component.is_fg(r, c) {
                    value += offset;
                }
                data[[0, r, c]] = value.clamp(0.0, 1.0);
            }
        }
        return (ImageTensor::new(data), component);
    }
}

fn largest_component_mask(mask: &DenseMask) -> DenseMask {
    let (h, w) = mask.dim();
    let grid = mask.grid();
    let mut label = Array2::<u32>::zeros((h, w));
    let mut sizes: Vec<usize> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if grid[[r, c]] == 1 && label[[r, c]] == 0 {
                let id = sizes.len() as u32;
                sizes.push(0);
                let mut stack = vec![(r, c)];
                label[[r, c]] = id;
                while let Some((pr, pc)) = stack.pop() {
                    sizes[id as usize] += 1;
                    for (nr, nc) in [
                        (pr.wrapping_sub(1), pc),
                        (pr + 1, pc),
                        (pr, pc.wrapping_sub(1)),
                        (pr, pc + 1),
                    ] {
                        if nr < h && nc < w && grid[[nr, nc]] == 1 && label[[nr, nc]] == 0 {
                            label[[nr, nc]] = id;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
        }
    }
    let best = (1..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i));
    match best {
        Some(b) => DenseMask::from_fn(h, w, |r, c| label[[r, c]] == b as u32),
        None => mask.clone(),
    }
}

/// Converts a dense corpus wholesale to one weak kind, mirroring how the
/// real datasets each carry a single annotation form.
pub fn derive_weak_dataset(
    dense: &[LabeledSample],
    kind: SupervisionKind,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::with_capacity(dense.len());
    for (i, sample) in dense.iter().enumerate() {
        let Annotation::Dense(mask) = &sample.annotation else {
            return Err(Error::InvalidLabel(format!(
                "derive_weak_dataset needs pixel-kind input, sample {} is {}",
                sample.name, sample.kind
            )));
        };
        let per_sample = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let annotation = match kind {
            SupervisionKind::Pixel => Annotation::Dense(mask.clone()),
            SupervisionKind::Polygon => {
                Annotation::Dense(annotations::mask_to_polygon(mask, DEFAULT_MAX_VERTICES)?)
            }
            SupervisionKind::Box => Annotation::Box(annotations::mask_to_box(mask)?),
            SupervisionKind::Scribble => {
                Annotation::Scribble(annotations::mask_to_scribble(mask, per_sample)?)
            }
            SupervisionKind::Point => Annotation::Points(annotations::mask_to_points(
                mask,
                DEFAULT_POINTS_PER_CLASS,
                DEFAULT_POINTS_PER_CLASS,
                per_sample,
            )?),
        };
        out.push(LabeledSample::new(
            sample.image.clone(),
            kind,
            annotation,
            sample.name.clone(),
            sample.source.clone(),
        )?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Kinds take strict turns in their canonical order.
    RoundRobin,
    /// Kind drawn per step with probability proportional to dataset size.
    Proportional,
}

/// Deterministic mixed-supervision batch scheduler.
///
/// The batch for any step is a pure function of (seed, step), so a resumed
/// run continues exactly where the checkpointed one left off: per-kind
/// epochs are shuffled with an RNG keyed by (seed, kind, epoch) and indexed
/// by how many batches that kind has already served.
pub struct MixedSampler<'a> {
    groups: Vec<(SupervisionKind, &'a [LabeledSample])>,
    batch_size: usize,
    seed: u64,
    mode: SamplerMode,
    step: u64,
    kind_draws: Vec<u64>,
}

impl<'a> MixedSampler<'a> {
    pub fn new(
        datasets: &'a [(SupervisionKind, Vec<LabeledSample>)],
        batch_size: usize,
        seed: u64,
        mode: SamplerMode,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let mut groups: Vec<(SupervisionKind, &[LabeledSample])> = Vec::new();
        for (kind, samples) in datasets {
            if samples.is_empty() {
                return Err(Error::EmptyDataset(kind.to_string()));
            }
            groups.push((*kind, samples.as_slice()));
        }
        if groups.is_empty() {
            return Err(Error::EmptyDataset("no datasets supplied".into()));
        }
        groups.sort_by_key(|(kind, _)| *kind);
        let n = groups.len();
        Ok(Self {
            groups,
            batch_size,
            seed,
            mode,
            step: 0,
            kind_draws: vec![0; n],
        })
    }

    pub fn kinds(&self) -> Vec<SupervisionKind> {
        self.groups.iter().map(|(k, _)| *k).collect()
    }

    /// Repositions the sampler as if `step` batches had been drawn.
    pub fn set_step(&mut self, step: u64) {
        self.step = 0;
        self.kind_draws = vec![0; self.groups.len()];
        for _ in 0..step {
            let g = self.group_for_step(self.step);
            self.kind_draws[g] += 1;
            self.step += 1;
        }
    }

    fn group_for_step(&self, step: u64) -> usize {
        match self.mode {
            SamplerMode::RoundRobin => (step % self.groups.len() as u64) as usize,
            SamplerMode::Proportional => {
                let total: usize = self.groups.iter().map(|(_, s)| s.len()).sum();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x70726f70);
                rng.set_stream(step);
                let mut pick = rng.gen_range(0..total);
                for (i, (_, samples)) in self.groups.iter().enumerate() {
                    if pick < samples.len() {
                        return i;
                    }
                    pick -= samples.len();
                }
                unreachable!("pick bounded by total")
            }
        }
    }

    /// Index permutation for one epoch of one kind.
    fn epoch_order(&self, group: usize, epoch: u64) -> Vec<usize> {
        let len = self.groups[group].1.len();
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (group as u64) << 32);
        rng.set_stream(epoch);
        for i in (1..len).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        order
    }

    pub fn next_batch(&mut self) -> (SupervisionKind, Vec<&'a LabeledSample>) {
        let group = self.group_for_step(self.step);
        let draw = self.kind_draws[group];
        self.kind_draws[group] += 1;
        self.step += 1;

        let (kind, samples) = self.groups[group];
        let len = samples.len() as u64;
        let mut batch = Vec::with_capacity(self.batch_size);
        for j in 0..self.batch_size as u64 {
            let flat = draw * self.batch_size as u64 + j;
            let epoch = flat / len;
            let offset = (flat % len) as usize;
            let order = self.epoch_order(group, epoch);
            batch.push(&samples[order[offset]]);
        }
        (kind, batch)
    }
}

// ---------------------------------------------------------------------------
// Resize augmentation
// ---------------------------------------------------------------------------

/// Rescales a sample to `size x size` for a size drawn from `size_set`:
/// images bilinearly, mask-like labels nearest-neighbor, boxes and points by
/// coordinate arithmetic. A scribble that would lose its last FG or BG mark
/// is returned unresized.
pub fn random_resize(
    sample: &LabeledSample,
    size_set: &[usize],
    rng: &mut impl Rng,
) -> Result<LabeledSample> {
    if size_set.is_empty() {
        return Err(Error::InvalidConfig("empty resize size set".into()));
    }
    let size = size_set[rng.gen_range(0..size_set.len())];
    resize_sample(sample, size)
}

fn scale_floor(v: usize, num: usize, den: usize) -> usize {
    v * num / den
}

fn scale_ceil_end(v: usize, num: usize, den: usize) -> usize {
    ((v + 1) * num).div_ceil(den) - 1
}

fn scale_round(v: usize, num: usize, den: usize) -> usize {
    (v as f64 * num as f64 / den as f64).round() as usize
}

/// Deterministic single-size resize; see [`random_resize`].
pub fn resize_sample(sample: &LabeledSample, size: usize) -> Result<LabeledSample> {
    let (h, w) = (sample.image.height(), sample.image.width());
    if (h, w) == (size, size) {
        return Ok(sample.clone());
    }
    let image = ImageTensor::new(grid::bilinear_resize3(&sample.image.data, size, size));
    let annotation = match &sample.annotation {
        Annotation::Dense(m) => {
            Annotation::Dense(DenseMask::new(grid::nearest_resize(m.grid(), size, size))?)
        }
        Annotation::Scribble(s) => {
            let resized = grid::nearest_resize(s.grid(), size, size);
            match ScribbleLabel::new(resized) {
                Ok(label) => Annotation::Scribble(label),
                Err(_) => return Ok(sample.clone()),
            }
        }
        Annotation::Box(b) => Annotation::Box(BoxLabel::new(
            scale_floor(b.row_min, size, h).min(size - 1),
            scale_floor(b.col_min, size, w).min(size - 1),
            scale_ceil_end(b.row_max, size, h).min(size - 1),
            scale_ceil_end(b.col_max, size, w).min(size - 1),
        )?),
        Annotation::Points(p) => {
            let map = |pts: &[(usize, usize)]| -> Vec<(usize, usize)> {
                let mut out: Vec<(usize, usize)> = pts
                    .iter()
                    .map(|&(r, c)| {
                        (
                            scale_round(r, size, h).min(size - 1),
                            scale_round(c, size, w).min(size - 1),
                        )
                    })
                    .collect();
                out.dedup();
                out
            };
            let fg = map(&p.fg_points);
            let bg: Vec<(usize, usize)> = map(&p.bg_points)
                .into_iter()
                .filter(|pt| !fg.contains(pt))
                .collect();
            Annotation::Points(PointLabel::new(fg, bg, size, size)?)
        }
    };
    LabeledSample::new(
        image,
        sample.kind,
        annotation,
        sample.name.clone(),
        sample.source.clone(),
    )
}

// ---------------------------------------------------------------------------
