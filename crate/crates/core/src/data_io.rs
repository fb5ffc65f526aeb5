//! Datasets: MNIST IDX files, one-hot targets, and teacher-generated
//! realizable datasets.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collab_net::{CollabNetwork, CollabSpec};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::trainer::{Target, TeacherOracle};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Inputs and targets stored row-major in flat buffers.
///
/// A dataset may carry per-sample joint rates, in which case its targets are
/// task-space velocities and each sample supervises a Jacobian-shaped output
/// (see [`Target::Velocity`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    input_dim: usize,
    target_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    rates: Option<Vec<f64>>,
    rate_dim: usize,
    class_count: Option<usize>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::shape("dataset targets", inputs.len(), targets.len()));
        }
        let input_dim = inputs.first().map_or(0, Vec::len);
        let target_dim = targets.first().map_or(0, Vec::len);
        Ok(Self {
            input_dim,
            target_dim,
            inputs: flatten(inputs, input_dim, "dataset inputs")?,
            targets: flatten(targets, target_dim, "dataset targets")?,
            rates: None,
            rate_dim: 0,
            class_count: None,
        })
    }

    /// One-hot targets (exact 0 and 1) from integer labels.
    pub fn classification(
        inputs: Vec<Vec<f64>>,
        labels: &[usize],
        class_count: usize,
    ) -> Result<Self> {
        let targets = labels
            .iter()
            .map(|&l| one_hot(l, class_count))
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Self::new(inputs, targets)?;
        ds.class_count = Some(class_count);
        Ok(ds)
    }

    /// Velocity-supervised samples: `velocities[i] = J(inputs[i]) rates[i]`.
    pub fn with_rates(
        inputs: Vec<Vec<f64>>,
        velocities: Vec<Vec<f64>>,
        rates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if rates.len() != inputs.len() {
            return Err(Error::shape("dataset rates", inputs.len(), rates.len()));
        }
        let rate_dim = rates.first().map_or(0, Vec::len);
        let mut ds = Self::new(inputs, velocities)?;
        ds.rates = Some(flatten(rates, rate_dim, "dataset rates")?);
        ds.rate_dim = rate_dim;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.input_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn class_count(&self) -> Option<usize> {
        self.class_count
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn raw_target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    pub fn rates(&self, i: usize) -> Option<&[f64]> {
        self.rates
            .as_ref()
            .map(|r| &r[i * self.rate_dim..(i + 1) * self.rate_dim])
    }

    pub fn target(&self, i: usize) -> Target<'_> {
        match self.rates(i) {
            Some(rates) => Target::Velocity {
                rates,
                velocity: self.raw_target(i),
            },
            None => Target::Output(self.raw_target(i)),
        }
    }

    /// Class label (argmax of the one-hot target) for classification sets.
    pub fn label(&self, i: usize) -> Option<usize> {
        self.class_count.map(|_| argmax(self.raw_target(i)))
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs[..n * self.input_dim].to_vec(),
            targets: self.targets[..n * self.target_dim].to_vec(),
            rates: self.rates.as_ref().map(|r| r[..n * self.rate_dim].to_vec()),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            target_dim: self.target_dim,
            inputs: Vec::new(),
            targets: Vec::new(),
            rates: None,
            rate_dim: self.rate_dim,
            class_count: self.class_count,
        }
    }
}

fn flatten(rows: Vec<Vec<f64>>, dim: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::shape(what, dim, r.len()));
        }
        flat.extend_from_slice(&r);
    }
    Ok(flat)
}

pub fn one_hot(label: usize, class_count: usize) -> Result<Vec<f64>> {
    if label >= class_count {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {class_count} classes"
        )));
    }
    let mut v = vec![0.0; class_count];
    v[label] = 1.0;
    Ok(v)
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            message: format!("truncated header (file has {} bytes)", bytes.len()),
        })
}

/// Parses an IDX image file: pixels scaled by 1/255, each image flattened
/// row-major.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    let need = count * size;
    if body.len() != need {
        return Err(Error::Parse {
            offset: (16 + body.len().min(need)) as u64,
            message: format!(
                "header declares {count} images of {rows}x{cols} ({need} pixel bytes), file has {}",
                body.len()
            ),
        });
    }
    let images = if size == 0 {
        vec![Vec::new(); count]
    } else {
        body.chunks_exact(size)
            .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
            .collect()
    };
    Ok((images, rows, cols))
}

/// Parses an IDX label file; every label must be a digit class.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Parse {
            offset: (8 + body.len().min(count)) as u64,
            message: format!("header declares {count} labels, file has {}", body.len()),
        });
    }
    if let Some(pos) = body.iter().position(|&l| usize::from(l) >= MNIST_CLASSES) {
        return Err(Error::Parse {
            offset: (8 + pos) as u64,
            message: format!("label {} out of range 0..{MNIST_CLASSES}", body[pos]),
        });
    }
    Ok(body.to_vec())
}

/// 28x28 images as 784-entry vectors in `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let (images, rows, cols) = parse_idx_images(&fs::read(path)?)?;
    if (rows, cols) != (28, 28) {
        return Err(Error::Parse {
            offset: 8,
            message: format!("expected 28x28 images, found {rows}x{cols}"),
        });
    }
    Ok(images)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

/// Loads the canonical uncompressed MNIST files from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>, split: MnistSplit) -> Result<LabeledDataset> {
    let prefix = match split {
        MnistSplit::Train => "train",
        MnistSplit::Test => "t10k",
    };
    let dir = dir.as_ref();
    let images = load_idx_images(dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = load_idx_labels(dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    if images.len() != labels.len() {
        return Err(Error::shape("MNIST labels", images.len(), labels.len()));
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    LabeledDataset::classification(images, &labels, MNIST_CLASSES)
}

/// Realizable supervision for a collaborative network.
#[derive(Debug, Clone)]
pub struct TeacherSetup {
    /// Inputs uniform on `[0, 1]^input_dim`; targets are the last
    /// subsystem's teacher outputs (per-subsystem targets come from
    /// [`TeacherOracle::subsystem_targets`]).
    pub dataset: LabeledDataset,
    pub teacher: TeacherOracle,
    /// Student sharing the teacher's frozen trunk, with its own random
    /// output-side weights.
    pub student: CollabNetwork,
}

pub fn make_teacher_dataset(spec: CollabSpec, seed: u64, count: usize) -> Result<TeacherSetup> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "teacher dataset needs at least one sample".into(),
        ));
    }
    let student = CollabNetwork::init(spec, seed)?;
    let teacher = TeacherOracle::random_for(&student, seed.wrapping_add(1), 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let dim = student.spec().input_dim;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut ys = teacher.subsystem_targets(&x)?;
        targets.push(ys.pop().unwrap());
        inputs.push(x);
    }
    Ok(TeacherSetup {
        dataset: LabeledDataset::new(inputs, targets)?,
        teacher,
        student,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind::*;
    use crate::trainer::objective_v;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&count.to_be_bytes());
        b.extend_from_slice(&rows.to_be_bytes());
        b.extend_from_slice(&cols.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn images_scale_and_flatten_row_major() {
        let (imgs, r, c) = parse_idx_images(&idx_images(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        assert_eq!((r, c), (1, 2));
        assert_eq!(imgs, vec![vec![0.0, 1.0], vec![0.2, 0.4]]);
    }

    #[test]
    fn image_errors_name_offsets() {
        let mut wrong = idx_images(1, 1, 1, &[0]);
        wrong[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&wrong),
            Err(Error::Parse { offset: 0, .. })
        ));
        let short = idx_images(2, 2, 2, &[1, 2, 3]);
        assert!(matches!(
            parse_idx_images(&short),
            Err(Error::Parse { offset: 19, .. })
        ));
        assert!(matches!(
            parse_idx_images(&[0, 0]),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn label_parsing() {
        assert_eq!(
            parse_idx_labels(&idx_labels(&[7, 0, 9])).unwrap(),
            vec![7, 0, 9]
        );
        assert!(matches!(
            parse_idx_labels(&idx_labels(&[1, 12])),
            Err(Error::Parse { offset: 9, .. })
        ));
        assert!(parse_idx_labels(&[]).is_err());
        assert!(parse_idx_labels(&idx_images(1, 1, 1, &[0])).is_err());
    }

    #[test]
    fn one_hot_and_argmax_round_trip() {
        for l in 0..10 {
            let v = one_hot(l, 10).unwrap();
            assert_eq!(v.iter().sum::<f64>(), 1.0);
            assert_eq!(argmax(&v), l);
        }
        assert_eq!(one_hot(7, 10).unwrap()[7], 1.0);
        assert!(one_hot(10, 10).is_err());
    }

    #[test]
    fn load_files_and_reject_non_mnist_dims() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("i");
        let pixels = vec![255u8; 2 * 784];
        std::fs::write(&img, idx_images(2, 28, 28, &pixels)).unwrap();
        let a = load_idx_images(&img).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].len(), 784);
        assert!(a[1].iter().all(|&p| p == 1.0));
        assert_eq!(a, load_idx_images(&img).unwrap());
        std::fs::write(&img, idx_images(1, 2, 2, &[0; 4])).unwrap();
        assert!(load_idx_images(&img).is_err());
    }

    #[test]
    fn velocity_dataset_targets() {
        let ds = LabeledDataset::with_rates(
            vec![vec![0.0; 3]],
            vec![vec![1.0, 2.0, 3.0]],
            vec![vec![0.1, 0.2, 0.3]],
        )
        .unwrap();
        match ds.target(0) {
            Target::Velocity { rates, velocity } => {
                assert_eq!(rates, &[0.1, 0.2, 0.3]);
                assert_eq!(velocity, &[1.0, 2.0, 3.0]);
            }
            t => panic!("unexpected target {t:?}"),
        }
        assert_eq!(ds.head(5).len(), 1);
    }

    #[test]
    fn teacher_targets_are_exactly_representable() {
        let spec = CollabSpec::uniform(4, &[8, 5], Sigmoid, 2, Sigmoid, Identity);
        let setup = make_teacher_dataset(spec, 3, 50).unwrap();
        assert!(objective_v(&setup.student, &setup.teacher).unwrap() > 0.0);
        // Student set to the teacher's weights reproduces every target.
        let teacher_net = setup.teacher.network().clone();
        assert_eq!(objective_v(&teacher_net, &setup.teacher).unwrap(), 0.0);
        for i in 0..setup.dataset.len() {
            let x = setup.dataset.input(i);
            let ys = setup.teacher.subsystem_targets(x).unwrap();
            let tr = teacher_net.forward_collab(x).unwrap();
            for (j, y) in ys.iter().enumerate() {
                assert_eq!(&tr.subsystems[j].output, y);
            }
            assert_eq!(ys.last().unwrap().as_slice(), setup.dataset.raw_target(i));
            let yn = setup.teacher.collab_target(&tr.sub_concat).unwrap();
            assert_eq!(yn, tr.collab_out);
        }
    }
}
