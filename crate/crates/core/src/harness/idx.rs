//! IDX image/label files: big-endian headers, `u8` payloads.

use std::fs;
use std::io::{self, Cursor, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::linalg::Matrix;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{}: magic {found:#010x} at offset 0, expected {expected:#010x}", path.display())]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: file ends at offset {len}, expected {expected} bytes", path.display())]
    Truncated { path: PathBuf, len: usize, expected: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let truncated = |expected| IdxError::Truncated {
        path: path.to_path_buf(),
        len: bytes.len(),
        expected,
    };
    let mut cur = Cursor::new(bytes);
    let found = cur.read_u32::<BigEndian>().map_err(|_| truncated(4))?;
    if found != magic {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    (0..dims)
        .map(|_| {
            cur.read_u32::<BigEndian>()
                .map(|d| d as usize)
                .map_err(|_| truncated(4 + 4 * dims))
        })
        .collect()
}

fn payload<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8], IdxError> {
    if bytes.len() < offset + len {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            len: bytes.len(),
            expected: offset + len,
        });
    }
    Ok(&bytes[offset..offset + len])
}

/// Loads an image/label pair. Pixels are scaled to `[0, 1]` and each image is
/// flattened row-major.
pub fn load_idx(images: &Path, labels: &Path, num_classes: usize) -> Result<Dataset, IdxError> {
    let img = read_file(images)?;
    let dims = header(images, &img, IMAGE_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = payload(images, &img, 16, n * rows * cols)?;

    let lab = read_file(labels)?;
    let m = header(labels, &lab, LABEL_MAGIC, 1)?[0];
    if m != n {
        return Err(IdxError::CountMismatch { images: n, labels: m });
    }
    let ys = payload(labels, &lab, 8, m)?;

    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Matrix::from_vec(n, rows * cols, data);
    Ok(Dataset::new(
        features,
        ys.iter().map(|&y| usize::from(y)).collect(),
        num_classes,
    )?)
}

/// Writes an image file; `pixels` holds `n · rows · cols` bytes.
pub fn write_idx_images<W: Write>(mut w: W, rows: usize, cols: usize, pixels: &[u8]) -> io::Result<()> {
    let n = pixels.len() / (rows * cols).max(1);
    w.write_u32::<BigEndian>(IMAGE_MAGIC)?;
    for d in [n, rows, cols] {
        w.write_u32::<BigEndian>(d as u32)?;
    }
    w.write_all(pixels)
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> io::Result<()> {
    w.write_u32::<BigEndian>(LABEL_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)
}
