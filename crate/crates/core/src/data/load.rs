use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{parse_idx, DataError, DomainId, ImageStack, LabeledImageSet, Split, TaskId};

/// Relative paths of the (images, labels) IDX files for a task split.
///
/// A `.gz` sibling is accepted when the plain file is absent.
pub fn expected_files(task: TaskId, split: Split) -> (PathBuf, PathBuf) {
    let (dir, prefix) = match (task, split) {
        (TaskId::Mnist, Split::Train) => ("mnist", "train".to_string()),
        (TaskId::Mnist, Split::Test) => ("mnist", "t10k".to_string()),
        (TaskId::Fashion, Split::Train) => ("fashion-mnist", "train".to_string()),
        (TaskId::Fashion, Split::Test) => ("fashion-mnist", "t10k".to_string()),
        (TaskId::Emnist, s) => ("emnist", format!("emnist-letters-{s}")),
        (TaskId::Nist, s) => ("nist", format!("nist-{s}")),
    };
    let dir = Path::new(dir);
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Smallest raw label of each task; stored labels are shifted down by it.
fn label_offset(task: TaskId) -> usize {
    match task {
        // EMNIST letters are labelled 1..=26
        TaskId::Emnist => 1,
        _ => 0,
    }
}

fn read_maybe_gz(root: &Path, rel: &Path, expected: &[String]) -> Result<Vec<u8>, DataError> {
    let plain = root.join(rel);
    if plain.is_file() {
        return Ok(fs::read(plain)?);
    }
    let mut gz_name = plain.clone().into_os_string();
    gz_name.push(".gz");
    let gz = PathBuf::from(gz_name);
    if gz.is_file() {
        let mut out = Vec::new();
        GzDecoder::new(fs::File::open(gz)?).read_to_end(&mut out)?;
        return Ok(out);
    }
    Err(DataError::MissingFile {
        path: plain,
        expected: expected.to_vec(),
    })
}

/// Loads the raw grayscale (G-dom) images of a task split.
pub fn load_task_dataset(
    task: TaskId,
    split: Split,
    root: &Path,
) -> Result<LabeledImageSet, DataError> {
    let (img_rel, lbl_rel) = expected_files(task, split);
    let expected = vec![
        root.join(&img_rel).display().to_string(),
        root.join(&lbl_rel).display().to_string(),
    ];
    let images = parse_idx(&read_maybe_gz(root, &img_rel, &expected)?)?;
    let labels = parse_idx(&read_maybe_gz(root, &lbl_rel, &expected)?)?;
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(DataError::Inconsistent(format!(
            "expected 3-D images and 1-D labels, got {:?} and {:?}",
            images.dims, labels.dims
        )));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(DataError::Inconsistent(format!(
            "{n} images but {} labels",
            labels.dims[0]
        )));
    }
    let classes = task.class_count();
    let offset = label_offset(task);
    let labels = labels
        .data
        .iter()
        .map(|&raw| {
            let raw = raw as usize;
            match raw.checked_sub(offset) {
                Some(l) if l < classes => Ok(l),
                _ => Err(DataError::LabelOutOfRange {
                    label: raw,
                    classes,
                }),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pixels = if task == TaskId::Emnist {
        // EMNIST stores glyphs transposed
        let mut out = vec![0u8; images.data.len()];
        for i in 0..n {
            let src = &images.data[i * h * w..(i + 1) * h * w];
            let dst = &mut out[i * h * w..(i + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    dst[x * h + y] = src[y * w + x];
                }
            }
        }
        out
    } else {
        images.data
    };
    let (h, w) = if task == TaskId::Emnist {
        (w, h)
    } else {
        (h, w)
    };
    let set = LabeledImageSet {
        images: ImageStack::new(h, w, 1, pixels),
        labels,
        task,
        domain: DomainId::Gray,
        split,
        origin_indices: (0..n).collect(),
    };
    set.validate()?;
    Ok(set)
}

/// A seeded random subset of `n` samples kept in original order; `n = 0` or
/// `n >= len` returns the whole set.
pub fn subset(set: &LabeledImageSet, n: usize, seed: u64) -> LabeledImageSet {
    if n == 0 || n >= set.len() {
        return set.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, set.len(), n).into_vec();
    picked.sort_unstable();
    let len = set.images.image_len();
    let mut pixels = Vec::with_capacity(n * len);
    for &i in &picked {
        pixels.extend_from_slice(set.images.image(i));
    }
    LabeledImageSet {
        images: ImageStack::new(
            set.images.height,
            set.images.width,
            set.images.channels,
            pixels,
        ),
        labels: picked.iter().map(|&i| set.labels[i]).collect(),
        origin_indices: picked.iter().map(|&i| set.origin_indices[i]).collect(),
        ..set.clone_meta()
    }
}

impl LabeledImageSet {
    /// An empty set carrying this set's task/domain/split.
    pub(crate) fn clone_meta(&self) -> LabeledImageSet {
        LabeledImageSet {
            images: ImageStack::new(
                self.images.height,
                self.images.width,
                self.images.channels,
                Vec::new(),
            ),
            labels: Vec::new(),
            task: self.task,
            domain: self.domain,
            split: self.split,
            origin_indices: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{serialize_idx, IdxArray};

    fn write_task(
        root: &Path,
        task: TaskId,
        split: Split,
        n: usize,
        h: usize,
        w: usize,
        labels: Vec<u8>,
    ) {
        let (img, lbl) = expected_files(task, split);
        fs::create_dir_all(root.join(img.parent().unwrap())).unwrap();
        let pixels = (0..n * h * w).map(|i| (i % 251) as u8).collect();
        fs::write(
            root.join(img),
            serialize_idx(&IdxArray {
                dims: vec![n, h, w],
                data: pixels,
            })
            .unwrap(),
        )
        .unwrap();
        fs::write(
            root.join(lbl),
            serialize_idx(&IdxArray {
                dims: vec![n],
                data: labels,
            })
            .unwrap(),
        )
        .unwrap();
    }

    #[test]
    fn missing_root_names_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_task_dataset(TaskId::Mnist, Split::Train, dir.path()).unwrap_err();
        match err {
            DataError::MissingFile { expected, .. } => {
                assert!(expected[0].ends_with("mnist/train-images-idx3-ubyte"));
                assert!(expected[1].ends_with("mnist/train-labels-idx1-ubyte"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn loads_small_set_with_identity_origins() {
        let dir = tempfile::tempdir().unwrap();
        write_task(
            dir.path(),
            TaskId::Fashion,
            Split::Test,
            3,
            4,
            4,
            vec![9, 0, 4],
        );
        let set = load_task_dataset(TaskId::Fashion, Split::Test, dir.path()).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.labels, vec![9, 0, 4]);
        assert_eq!(set.origin_indices, vec![0, 1, 2]);
        assert_eq!(set.images.channels, 1);
        assert_eq!(set.domain, DomainId::Gray);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_task(dir.path(), TaskId::Mnist, Split::Test, 2, 2, 2, vec![3, 10]);
        assert!(matches!(
            load_task_dataset(TaskId::Mnist, Split::Test, dir.path()),
            Err(DataError::LabelOutOfRange {
                label: 10,
                classes: 10
            })
        ));
    }

    #[test]
    fn emnist_labels_shift_and_glyphs_transpose() {
        let dir = tempfile::tempdir().unwrap();
        write_task(dir.path(), TaskId::Emnist, Split::Train, 1, 2, 3, vec![26]);
        let set = load_task_dataset(TaskId::Emnist, Split::Train, dir.path()).unwrap();
        assert_eq!(set.labels, vec![25]);
        assert_eq!((set.images.height, set.images.width), (3, 2));
        // stored rows [0 1 2; 3 4 5] become [0 3; 1 4; 2 5]
        assert_eq!(set.images.pixels, vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn gzip_sibling_is_accepted() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        write_task(dir.path(), TaskId::Mnist, Split::Test, 2, 2, 2, vec![1, 2]);
        let (img, _) = expected_files(TaskId::Mnist, Split::Test);
        let raw = fs::read(dir.path().join(&img)).unwrap();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&raw).unwrap();
        fs::write(
            dir.path().join(format!("{}.gz", img.display())),
            enc.finish().unwrap(),
        )
        .unwrap();
        fs::remove_file(dir.path().join(&img)).unwrap();
        let set = load_task_dataset(TaskId::Mnist, Split::Test, dir.path()).unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn subset_is_seeded_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        write_task(
            dir.path(),
            TaskId::Mnist,
            Split::Train,
            20,
            2,
            2,
            (0..20).map(|i| i % 10).collect(),
        );
        let set = load_task_dataset(TaskId::Mnist, Split::Train, dir.path()).unwrap();
        let a = subset(&set, 7, 3);
        let b = subset(&set, 7, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        assert!(a.origin_indices.windows(2).all(|w| w[0] < w[1]));
        for (i, &o) in a.origin_indices.iter().enumerate() {
            assert_eq!(a.labels[i], set.labels[o]);
            assert_eq!(a.images.image(i), set.images.image(o));
        }
    }
}
