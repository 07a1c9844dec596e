//! IDX image/label files, optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, need {needed} bytes but have {actual}")]
    TruncatedFile {
        path: PathBuf,
        needed: usize,
        actual: usize,
    },
    #[error("{images} images but {labels} labels")]
    DimMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Reads a file, inflating it when it starts with the gzip magic.
fn read_bytes(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_owned(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses the header and returns (dims, payload) after checking length.
fn parse<'a>(
    path: &Path,
    b: &'a [u8],
    magic: u32,
    ndims: usize,
) -> Result<(Vec<usize>, &'a [u8]), IdxError> {
    let header = 4 + 4 * ndims;
    let truncated = |needed| IdxError::TruncatedFile {
        path: path.to_owned(),
        needed,
        actual: b.len(),
    };
    if b.len() < 4 {
        return Err(truncated(header));
    }
    let found = be_u32(b, 0);
    if found != magic {
        return Err(IdxError::BadMagic {
            path: path.to_owned(),
            expected: magic,
            found,
        });
    }
    if b.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..ndims).map(|d| be_u32(b, 4 + 4 * d) as usize).collect();
    let needed = header + dims.iter().product::<usize>();
    if b.len() < needed {
        return Err(truncated(needed));
    }
    Ok((dims, &b[header..needed]))
}

/// Images as rows of `rows * cols` pixels scaled to [0, 1].
pub fn read_images(path: &Path) -> Result<Array2<f64>, IdxError> {
    let bytes = read_bytes(path)?;
    let (dims, px) = parse(path, &bytes, IMAGES_MAGIC, 3)?;
    let (n, w) = (dims[0], dims[1] * dims[2]);
    Ok(Array2::from_shape_fn((n, w), |(r, c)| {
        f64::from(px[r * w + c]) / 255.0
    }))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>, IdxError> {
    let bytes = read_bytes(path)?;
    let (_, payload) = parse(path, &bytes, LABELS_MAGIC, 1)?;
    Ok(payload.iter().map(|&l| usize::from(l)).collect())
}

/// Loads a matching image/label pair.
pub fn load_idx(images: &Path, labels: &Path) -> Result<(Array2<f64>, Vec<usize>), IdxError> {
    let x = read_images(images)?;
    let y = read_labels(labels)?;
    if x.nrows() != y.len() {
        return Err(IdxError::DimMismatch {
            images: x.nrows(),
            labels: y.len(),
        });
    }
    Ok((x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Image and label paths for `split` under `dir`, preferring uncompressed
/// files when both exist.
pub fn split_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let pick = |stem: String| {
        let plain = dir.join(&stem);
        if plain.exists() {
            plain
        } else {
            dir.join(format!("{stem}.gz"))
        }
    };
    let p = split.prefix();
    (
        pick(format!("{p}-images-idx3-ubyte")),
        pick(format!("{p}-labels-idx1-ubyte")),
    )
}

/// Loads one split from a directory in the usual IDX naming scheme.
pub fn load_split(dir: &Path, split: Split) -> Result<(Array2<f64>, Vec<usize>), IdxError> {
    let (i, l) = split_paths(dir, split);
    load_idx(&i, &l)
}
