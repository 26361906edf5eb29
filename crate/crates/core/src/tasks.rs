//! Datasets: the synthetic class-conditional image-transformation
//! regression task and an IDX (MNIST) reader.

use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Row-aligned inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    /// Class of each row, when the data has one.
    pub labels: Option<Vec<usize>>,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>, labels: Option<Vec<usize>>, split: Split) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} target rows", inputs.nrows()),
                found: format!("{} target rows", targets.nrows()),
            });
        }
        if labels.as_ref().is_some_and(|l| l.len() != inputs.nrows()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", inputs.nrows()),
                found: format!("{} labels", labels.as_ref().unwrap().len()),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Dataset { inputs, targets, labels, split })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn slice(&self, rows: Range<usize>) -> Dataset {
        Dataset {
            inputs: self.inputs.slice(s![rows.clone(), ..]).to_owned(),
            targets: self.targets.slice(s![rows.clone(), ..]).to_owned(),
            labels: self.labels.as_ref().map(|l| l[rows].to_vec()),
            split: self.split,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
            split: self.split,
        }
    }

    /// Binary container: magic `SNDSET01`, then rows, input columns and
    /// target columns as little-endian u64, then inputs and targets as
    /// little-endian f64, row-major.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * (self.inputs.len() + self.targets.len()));
        out.extend_from_slice(BINARY_MAGIC);
        for d in [self.len(), self.input_dim(), self.output_dim()] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in self.inputs.iter().chain(self.targets.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8], split: Split) -> Result<Dataset> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != BINARY_MAGIC {
            return Err(Error::Format { offset: 0, message: "not a dataset container".into() });
        }
        let rows = cur.u64_le()? as usize;
        let d = cur.u64_le()? as usize;
        let k = cur.u64_le()? as usize;
        let mut read = |n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| Ok(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()))).collect()
        };
        let inputs = Array2::from_shape_vec((rows, d), read(rows * d)?).expect("shape");
        let targets = Array2::from_shape_vec((rows, k), read(rows * k)?).expect("shape");
        Dataset::new(inputs, targets, None, split)
    }

    /// CSV with columns `x0..`, `y0..`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((0..self.output_dim()).map(|i| format!("y{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (x, y) in self.inputs.rows().into_iter().zip(self.targets.rows()) {
            let row: Vec<String> = x.iter().chain(y.iter()).map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_binary()).map_err(|e| Error::io(path, e))
    }
}

const BINARY_MAGIC: &[u8; 8] = b"SNDSET01";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Truncated { offset: self.pos, needed: n, available: self.bytes.len() - self.pos });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Images of an IDX file: `(rows, cols, pixels)` with one row of
/// `rows * cols` values in [0, 1] per image.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Array2<f64>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad image magic {magic:#010x}") });
    }
    let n = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let pixels = cur.take(n * rows * cols)?;
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok((rows, cols, Array2::from_shape_vec((n, rows * cols), data).expect("shape")))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("bad label magic {magic:#010x}") });
    }
    let n = cur.u32_be()? as usize;
    Ok(cur.take(n)?.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image file and its label file as a classification dataset
/// with one-hot targets.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let (_, _, inputs) = parse_idx_images(&img)?;
    let labels = parse_idx_labels(&lab)?;
    if labels.len() != inputs.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", inputs.nrows()),
            found: format!("{} labels", labels.len()),
        });
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut targets = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        targets[[i, l]] = 1.0;
    }
    Dataset::new(inputs, targets, Some(labels), split)
}

/// Rotation and shear applied to every image of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTransform {
    pub angle_deg: f64,
    pub shear: f64,
}

/// Order in which a class transform composes its two parts.
pub const COMPOSITION: &str = "rotate-then-shear";

/// Configuration of the image-transformation regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformTask {
    pub image_side: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub angle_step_deg: f64,
    pub max_shear: f64,
}

impl Default for TransformTask {
    fn default() -> Self {
        TransformTask {
            image_side: 12,
            classes: 10,
            train_per_class: 200,
            test_per_class: 50,
            angle_step_deg: 30.0,
            max_shear: 0.6,
        }
    }
}

/// Provenance stored next to a generated task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetadata {
    pub composition: String,
    pub transforms: Vec<ClassTransform>,
    pub seed: u64,
}

impl TransformTask {
    pub fn dim(&self) -> usize {
        self.image_side * self.image_side
    }

    /// Class `c` rotates by `c * angle_step` and shears by a coefficient
    /// drawn uniformly from `[-max_shear, max_shear]`.
    pub fn class_transforms(&self, seed: u64) -> Vec<ClassTransform> {
        let mut rng = rng::stream(rng::derive_seed(seed, "class-transforms"), Stream::Task);
        (0..self.classes)
            .map(|c| ClassTransform {
                angle_deg: c as f64 * self.angle_step_deg,
                shear: rng.random_range(-self.max_shear..=self.max_shear),
            })
            .collect()
    }
}

fn bilinear(img: &[f64], side: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let px = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= side as f64 || yi >= side as f64 {
            0.0
        } else {
            img[yi as usize * side + xi as usize]
        }
    };
    let mut v = 0.0;
    // skip zero-weight corners so exact coordinates read exactly one pixel
    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            let w = wx * wy;
            if w != 0.0 {
                v += w * px(x0 + dx, y0 + dy);
            }
        }
    }
    v
}

/// Rotates (counter-clockwise in row-up coordinates) about the image centre,
/// then applies the horizontal shear `x' = x + shear * y`. Output pixels are
/// bilinearly resampled from the source; the frame is cropped and padded
/// with zeros to the original size.
pub fn transform_image(img: &[f64], side: usize, t: ClassTransform) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let mut out = vec![0.0; side * side];
    for row in 0..side {
        for col in 0..side {
            // centred coordinates with y pointing up
            let xo = col as f64 - c;
            let yo = c - row as f64;
            // undo the shear, then the rotation
            let xr = xo - t.shear * yo;
            let yr = yo;
            let xs = cos * xr + sin * yr;
            let ys = -sin * xr + cos * yr;
            out[row * side + col] = bilinear(img, side, xs + c, c - ys);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

fn class_prototypes(task: &TransformTask, rng: &mut rng::Rng) -> Vec<Vec<Blob>> {
    let side = task.image_side as f64;
    let c = (side - 1.0) / 2.0;
    let spread = side / 5.0;
    (0..task.classes)
        .map(|_| {
            let n = rng.random_range(2..=4);
            (0..n)
                .map(|_| Blob {
                    cx: c + rng.random_range(-spread..=spread),
                    cy: c + rng.random_range(-spread..=spread),
                    sigma: rng.random_range(0.08 * side..=0.15 * side),
                    amp: rng.random_range(0.5..=1.0),
                })
                .collect()
        })
        .collect()
}

fn render(blobs: &[Blob], side: usize, jitter: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, jitter).expect("jitter");
    let blobs: Vec<Blob> = blobs
        .iter()
        .map(|b| Blob {
            cx: b.cx + noise.sample(rng),
            cy: b.cy + noise.sample(rng),
            sigma: b.sigma,
            amp: b.amp * rng.random_range(0.8..=1.2),
        })
        .collect();
    let mut img = vec![0.0; side * side];
    for (i, v) in img.iter_mut().enumerate() {
        let (y, x) = ((i / side) as f64, (i % side) as f64);
        *v = blobs
            .iter()
            .map(|b| b.amp * (-((x - b.cx).powi(2) + (y - b.cy).powi(2)) / (2.0 * b.sigma * b.sigma)).exp())
            .sum::<f64>()
            .min(1.0);
    }
    img
}

/// Generates train and test splits of the transformation task from
/// synthetic sources: each class has a prototype sum of 2-4 Gaussian blobs
/// and each example jitters its centres and amplitudes, so the class (and
/// with it the transform) is recognisable from the input. Pure in
/// `(task, seed)`.
pub fn generate_transform_task(task: &TransformTask, seed: u64) -> Result<(Dataset, Dataset, TaskMetadata)> {
    if task.image_side < 4 {
        return Err(Error::InvalidArgument(format!("image side {} is below 4", task.image_side)));
    }
    if task.classes == 0 {
        return Err(Error::InvalidArgument("task needs at least one class".into()));
    }
    let transforms = task.class_transforms(seed);
    let mut rng = rng::stream(rng::derive_seed(seed, "blob-sources"), Stream::Task);
    let prototypes = class_prototypes(task, &mut rng);
    let side = task.image_side;
    let mut make = |per_class: usize, split: Split| -> Result<Dataset> {
        let n = per_class * task.classes;
        let mut inputs = Array2::zeros((n, side * side));
        let mut targets = Array2::zeros((n, side * side));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % task.classes;
            let src = render(&prototypes[class], side, 0.5, &mut rng);
            let dst = transform_image(&src, side, transforms[class]);
            inputs.row_mut(i).assign(&ndarray::ArrayView1::from(&src));
            targets.row_mut(i).assign(&ndarray::ArrayView1::from(&dst));
            labels.push(class);
        }
        Dataset::new(inputs, targets, Some(labels), split)
    };
    let train = make(task.train_per_class, Split::Train)?;
    let test = make(task.test_per_class, Split::Test)?;
    Ok((train, test, TaskMetadata { composition: COMPOSITION.into(), transforms, seed }))
}

/// Builds the transformation task from labelled source images (for example
/// MNIST loaded with [`load_idx`]); the image side must match the task.
pub fn transform_task_from_images(
    task: &TransformTask,
    source: &Dataset,
    seed: u64,
) -> Result<(Dataset, TaskMetadata)> {
    let labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("source images need labels".into()))?;
    if source.input_dim() != task.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} pixels", task.dim()),
            found: format!("{} pixels", source.input_dim()),
        });
    }
    let transforms = task.class_transforms(seed);
    let mut targets = Array2::zeros(source.inputs.raw_dim());
    for (i, row) in source.inputs.rows().into_iter().enumerate() {
        let class = labels[i] % task.classes.max(1);
        let out = transform_image(row.as_slice().expect("contiguous"), task.image_side, transforms[class]);
        targets.row_mut(i).assign(&ndarray::ArrayView1::from(&out));
    }
    let data = Dataset::new(source.inputs.clone(), targets, Some(labels.clone()), source.split)?;
    Ok((data, TaskMetadata { composition: COMPOSITION.into(), transforms, seed }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn parses_idx_fixture() {
        let bytes = [
            0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, // header
            0x00, 0xff, 0x33, 0x66, // image 0
            0xcc, 0x99, 0x00, 0x00, // image 1
        ];
        let (r, c, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(px.row(0).to_vec(), vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(px.row(1).to_vec(), vec![0.8, 0.6, 0.0, 0.0]);
        let labels = [0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 0x07, 0x03];
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![7, 3]);
    }

    #[test]
    fn idx_errors() {
        let mut bad = idx_images(1, 1, 1, &[0]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_idx_images(&[]), Err(Error::Truncated { offset: 0, .. })));
        let short = idx_images(2, 2, 2, &[1, 2, 3]);
        assert!(matches!(parse_idx_images(&short), Err(Error::Truncated { offset: 16, .. })));
    }

    #[test]
    fn idx_files_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        std::fs::write(&img, idx_images(2, 1, 1, &[0, 255])).unwrap();
        std::fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 3, 1, 0, 1]).unwrap();
        assert!(matches!(load_idx(&img, &lab, Split::Train), Err(Error::ShapeMismatch { .. })));
        std::fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 2, 1, 0]).unwrap();
        let d = load_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(d.targets.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(d.inputs.column(0).to_vec(), vec![0.0, 1.0]);
    }

    fn pattern(side: usize) -> Vec<f64> {
        (0..side * side).map(|i| ((i * 37) % 11) as f64 / 10.0).collect()
    }

    #[test]
    fn identity_transform_is_exact() {
        let img = pattern(12);
        let out = transform_image(&img, 12, ClassTransform { angle_deg: 0.0, shear: 0.0 });
        assert_eq!(out, img);
    }

    #[test]
    fn full_turn_is_identity() {
        let img = pattern(12);
        let out = transform_image(&img, 12, ClassTransform { angle_deg: 360.0, shear: 0.0 });
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        // 5x5, centre (2,2). Pixel one step right of centre (row 2, col 3)
        // rotates counter-clockwise to one step up (row 1, col 2); the pixel
        // one step up goes to one step left (row 2, col 1).
        let side = 5;
        let mut img = vec![0.0; 25];
        img[2 * side + 3] = 1.0;
        img[side + 2] = 0.5;
        let out = transform_image(&img, side, ClassTransform { angle_deg: 90.0, shear: 0.0 });
        assert!((out[side + 2] - 1.0).abs() < 1e-9);
        assert!((out[2 * side + 1] - 0.5).abs() < 1e-9);
        assert!((out.iter().sum::<f64>() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn task_is_pure_and_class_deterministic() {
        let task = TransformTask { train_per_class: 3, test_per_class: 2, ..Default::default() };
        let (a, b, meta) = generate_transform_task(&task, 4).unwrap();
        let (a2, b2, meta2) = generate_transform_task(&task, 4).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(meta, meta2);
        assert_eq!(a.len(), 30);
        assert_eq!(b.len(), 20);
        assert_eq!(a.input_dim(), 144);
        assert_eq!(meta.composition, "rotate-then-shear");
        for (c, t) in meta.transforms.iter().enumerate() {
            assert_eq!(t.angle_deg, 30.0 * c as f64);
            assert!(t.shear.abs() <= 0.6);
        }
        // every example of a class uses that class's transform
        for i in 0..a.len() {
            let class = a.labels.as_ref().unwrap()[i];
            let expect = transform_image(a.inputs.row(i).as_slice().unwrap(), 12, meta.transforms[class]);
            assert_eq!(a.targets.row(i).to_vec(), expect);
        }
        assert!(generate_transform_task(&TransformTask { image_side: 3, ..task }, 0).is_err());
    }

    #[test]
    fn mass_is_roughly_conserved() {
        let task = TransformTask { train_per_class: 5, test_per_class: 1, ..Default::default() };
        let (train, _, _) = generate_transform_task(&task, 11).unwrap();
        for (x, y) in train.inputs.rows().into_iter().zip(train.targets.rows()) {
            let ratio = y.sum() / x.sum();
            assert!((0.5..=1.5).contains(&ratio), "mass ratio {ratio}");
        }
    }

    #[test]
    fn binary_container_round_trip() {
        let task = TransformTask { image_side: 4, classes: 2, train_per_class: 2, test_per_class: 1, ..Default::default() };
        let (train, _, _) = generate_transform_task(&task, 1).unwrap();
        let bytes = train.to_binary();
        let back = Dataset::from_binary(&bytes, Split::Train).unwrap();
        assert_eq!(back.inputs, train.inputs);
        assert_eq!(back.targets, train.targets);
        assert!(Dataset::from_binary(&bytes[..40], Split::Train).is_err());
        assert_eq!(train.to_csv().lines().count(), 5);
    }
}
