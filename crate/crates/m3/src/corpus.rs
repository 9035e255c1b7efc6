//! Dataset generation and the toolkit's file formats on disk.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use m3_core::format::{AnyHeader, AssignmentHeader, LabelHeader, MatrixHeader, HEADER_LEN};
use m3_core::generator::{Generator, GeneratorSpec};
use m3_core::softmax::SoftmaxModel;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exec::ThreadPoolExecutor;
use crate::mmatrix::MappedMatrix;

/// Rows generated per parallel task.
const GEN_BLOCK_ROWS: usize = 1024;

/// Writes `spec.rows` generated rows to `data_path` and their labels to
/// `label_path`. Rows are filled in parallel; the bytes do not depend on the
/// thread count. On failure both files are removed.
pub fn generate_dataset(
    spec: &GeneratorSpec,
    data_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    exec: &ThreadPoolExecutor,
) -> Result<()> {
    let (data_path, label_path) = (data_path.as_ref(), label_path.as_ref());
    let result = write_dataset(spec, data_path, label_path, exec);
    if result.is_err() {
        let _ = std::fs::remove_file(data_path);
        let _ = std::fs::remove_file(label_path);
    }
    result
}

fn write_dataset(spec: &GeneratorSpec, data_path: &Path, label_path: &Path, exec: &ThreadPoolExecutor) -> Result<()> {
    let generator = Generator::new(*spec)?;
    let rows = usize::try_from(spec.rows).map_err(|_| Error::Usage("row count too large".into()))?;
    let cols = spec.cols;

    let mut matrix = MappedMatrix::create_mapped(data_path, rows, cols)?;
    {
        let data = matrix.as_mut_slice().expect("freshly created matrix is writable");
        exec.install(|| {
            data.par_chunks_mut(GEN_BLOCK_ROWS * cols).enumerate().for_each(|(block, out)| {
                generator.fill_rows((block * GEN_BLOCK_ROWS) as u64, out);
            })
        });
    }
    matrix.flush()?;
    drop(matrix);

    let mut labels = vec![0u8; rows];
    generator.fill_labels(0, &mut labels);
    let header = LabelHeader { rows: spec.rows, num_classes: spec.num_classes };
    write_file(label_path, |w| {
        w.write_all(&header.encode())?;
        w.write_all(&labels)
    })
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let result = body(&mut w).and_then(|_| w.flush()).and_then(|_| w.get_ref().sync_all());
    if let Err(e) = result {
        drop(w);
        let _ = std::fs::remove_file(path);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Reads and validates whichever header `path` starts with.
pub fn read_header(path: impl AsRef<Path>) -> Result<AnyHeader> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut prefix = Vec::with_capacity(HEADER_LEN);
    (&mut file).take(HEADER_LEN as u64).read_to_end(&mut prefix).map_err(|e| Error::io(path, e))?;
    AnyHeader::sniff(&prefix, len).map_err(|e| Error::format(path, e))
}

pub fn write_model(path: impl AsRef<Path>, model: &SoftmaxModel) -> Result<()> {
    let bytes = model.to_bytes();
    write_file(path.as_ref(), |w| w.write_all(&bytes))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<SoftmaxModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SoftmaxModel::from_bytes(&bytes).map_err(|e| match e {
        m3_core::Error::Format(f) => Error::format(path, f),
        other => other.into(),
    })
}

/// Writes a small in-memory matrix (e.g. centroids) as an `M3MX` file.
pub fn write_matrix(path: impl AsRef<Path>, data: &[f64], rows: usize, cols: usize) -> Result<()> {
    m3_core::MatrixView::new(data, rows, cols)?;
    let header = MatrixHeader::new(rows as u64, cols as u64);
    write_file(path.as_ref(), |w| {
        w.write_all(&header.encode())?;
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

/// Writes cluster assignments: an `M3LB` file with `num_classes = k` when
/// `k <= 256`, otherwise an `M3A4` file of `u32` indices.
pub fn write_assignments(path: impl AsRef<Path>, assignments: &[u32], k: usize) -> Result<()> {
    let rows = assignments.len() as u64;
    if k <= 256 {
        let header = LabelHeader { rows, num_classes: k as u32 };
        write_file(path.as_ref(), |w| {
            w.write_all(&header.encode())?;
            let bytes: Vec<u8> = assignments.iter().map(|&a| a as u8).collect();
            w.write_all(&bytes)
        })
    } else {
        let header = AssignmentHeader { rows, k: k as u32 };
        write_file(path.as_ref(), |w| {
            w.write_all(&header.encode())?;
            for a in assignments {
                w.write_all(&a.to_le_bytes())?;
            }
            Ok(())
        })
    }
}

/// Reads an assignment file written by [`write_assignments`].
pub fn read_assignments(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = AnyHeader::sniff(&bytes[..bytes.len().min(HEADER_LEN)], bytes.len() as u64)
        .map_err(|e| Error::format(path, e))?;
    let payload = &bytes[HEADER_LEN.min(bytes.len())..];
    match header {
        AnyHeader::Labels(_) => Ok(payload.iter().map(|&b| u32::from(b)).collect()),
        AnyHeader::Assignments(_) => {
            Ok(payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        _ => Err(Error::format(path, m3_core::FormatError::Unsupported)),
    }
}

/// Human-readable one-line description used by `inspect`.
pub fn describe(header: &AnyHeader) -> String {
    match header {
        AnyHeader::Matrix(h) => format!(
            "kind=matrix magic=M3MX rows={} cols={} elem_code={} data_bytes={}",
            h.rows,
            h.cols,
            h.elem_code,
            h.data_bytes().unwrap_or(0)
        ),
        AnyHeader::Labels(h) => format!("kind=labels magic=M3LB rows={} num_classes={}", h.rows, h.num_classes),
        AnyHeader::Assignments(h) => format!("kind=assignments magic=M3A4 rows={} k={}", h.rows, h.k),
        AnyHeader::Model(h) => format!(
            "kind=model magic=M3MD num_classes={} features={} lambda={:e}",
            h.num_classes, h.features, h.lambda
        ),
    }
}
