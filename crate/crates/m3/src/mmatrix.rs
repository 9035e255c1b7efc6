//! Dense matrices backed either by RAM or by a file mapping.
//!
//! Both backings expose the same `&[f64]` view, so algorithm code cannot tell
//! them apart. A mapped matrix aliases the file's data region directly (zero
//! copy); pages are read by the OS on first touch.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use m3_core::format::{LabelHeader, MatrixHeader, HEADER_LEN};
use m3_core::matrix::{ChunkPlan, Chunks, MatrixView};
use memmap2::{Mmap, MmapMut, MmapOptions};

use crate::error::{Error, Result};

#[cfg(target_endian = "big")]
compile_error!("on-disk matrices are little-endian and are aliased without conversion");

/// Where a matrix's elements live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Mapped,
    #[value(name = "inram")]
    InRam,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mapped => "mapped",
            Mode::InRam => "inram",
        }
    }
}

/// Access-pattern hint for a mapped region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Advice {
    Sequential,
    Random,
    Normal,
}

enum Storage {
    Ram(Vec<f64>),
    ReadOnly(Mmap),
    Writable(MmapMut),
    /// Zero-row file; nothing to map.
    Empty,
}

pub struct MappedMatrix {
    rows: usize,
    cols: usize,
    storage: Storage,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for MappedMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MappedMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("mapped", &self.is_mapped())
            .field("path", &self.path)
            .finish()
    }
}

fn to_usize(v: u64, path: &Path) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::format(path, m3_core::FormatError::Unsupported))
}

/// Opens `path`, validates its matrix header against the file size, and
/// returns the file with the header.
fn open_checked(path: &Path, writable: bool) -> Result<(File, MatrixHeader)> {
    let mut file = OpenOptions::new()
        .read(true)
        .write(writable)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len < HEADER_LEN as u64 {
        return Err(Error::format(path, m3_core::FormatError::TruncatedOrCorrupt));
    }
    let mut prefix = [0u8; HEADER_LEN];
    file.read_exact(&mut prefix).map_err(|e| Error::io(path, e))?;
    let header = MatrixHeader::decode(&prefix).map_err(|e| Error::format(path, e))?;
    header.check_file_len(len).map_err(|e| Error::format(path, e))?;
    Ok((file, header))
}

fn map_region(file: &File, path: &Path, bytes: usize) -> Result<Mmap> {
    // SAFETY: the mapping is read-only; callers must not truncate the file
    // while the matrix is alive.
    unsafe { MmapOptions::new().offset(HEADER_LEN as u64).len(bytes).map(file) }
        .map_err(|source| Error::Mapping { path: path.to_owned(), source })
}

fn map_region_mut(file: &File, path: &Path, bytes: usize) -> Result<MmapMut> {
    // SAFETY: single writer; the file is owned by this matrix for its lifetime.
    unsafe { MmapOptions::new().offset(HEADER_LEN as u64).len(bytes).map_mut(file) }
        .map_err(|source| Error::Mapping { path: path.to_owned(), source })
}

#[cfg(unix)]
fn reserve_blocks(file: &File, path: &Path, len: u64) -> Result<()> {
    use std::os::fd::AsRawFd;
    let Ok(len) = libc::off_t::try_from(len) else {
        return Err(Error::DiskFull { path: path.to_owned() });
    };
    // SAFETY: plain syscall on an open descriptor.
    let rc = unsafe { libc::posix_fallocate(file.as_raw_fd(), 0, len) };
    match rc {
        0 => Ok(()),
        libc::ENOSPC | libc::EFBIG => Err(Error::DiskFull { path: path.to_owned() }),
        // Filesystems without fallocate fall back to a sparse file.
        libc::EOPNOTSUPP | libc::EINVAL => Ok(()),
        code => Err(Error::io(path, std::io::Error::from_raw_os_error(code))),
    }
}

#[cfg(not(unix))]
fn reserve_blocks(_: &File, _: &Path, _: u64) -> Result<()> {
    Ok(())
}

impl MappedMatrix {
    /// Creates a zero-filled matrix file of `rows x cols` and maps it writable.
    pub fn create_mapped(path: impl AsRef<Path>, rows: usize, cols: usize) -> Result<Self> {
        let path = path.as_ref();
        if cols == 0 {
            return Err(m3_core::Error::Shape("cols must be at least 1").into());
        }
        let header = MatrixHeader::new(rows as u64, cols as u64);
        let (Some(file_len), Some(bytes)) = (header.file_len(), header.data_bytes()) else {
            return Err(Error::Mapping {
                path: path.to_owned(),
                source: std::io::Error::other("matrix size overflows the address space"),
            });
        };
        let bytes = usize::try_from(bytes).map_err(|_| Error::Mapping {
            path: path.to_owned(),
            source: std::io::Error::other("matrix size overflows the address space"),
        })?;

        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let result = (|| {
            file.write_all(&header.encode()).map_err(|e| Error::io(path, e))?;
            file.set_len(file_len).map_err(|e| Error::io(path, e))?;
            reserve_blocks(&file, path, file_len)?;
            let storage =
                if bytes == 0 { Storage::Empty } else { Storage::Writable(map_region_mut(&file, path, bytes)?) };
            Ok(Self { rows, cols, storage, path: Some(path.to_owned()) })
        })();
        if result.is_err() {
            drop(file);
            let _ = std::fs::remove_file(path);
        }
        result
    }

    /// Maps the data region of an existing matrix file. Nothing is read
    /// eagerly.
    pub fn open_mapped(path: impl AsRef<Path>, writable: bool) -> Result<Self> {
        let path = path.as_ref();
        let (file, header) = open_checked(path, writable)?;
        let rows = to_usize(header.rows, path)?;
        let cols = to_usize(header.cols, path)?;
        let bytes = to_usize(header.data_bytes().unwrap(), path)?;
        let storage = match (bytes, writable) {
            (0, _) => Storage::Empty,
            (_, false) => Storage::ReadOnly(map_region(&file, path, bytes)?),
            (_, true) => Storage::Writable(map_region_mut(&file, path, bytes)?),
        };
        Ok(Self { rows, cols, storage, path: Some(path.to_owned()) })
    }

    /// Reads the whole data region into a heap buffer with one sequential
    /// pass.
    pub fn load_in_ram(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_rows_in_ram(path, None)
    }

    /// Like [`Self::load_in_ram`] but stops after `limit` rows if given.
    pub fn load_rows_in_ram(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let (mut file, header) = open_checked(path, false)?;
        let cols = to_usize(header.cols, path)?;
        let rows = row_limit(to_usize(header.rows, path)?, limit, path)?;
        let len = rows * cols;
        let bytes = len as u64 * 8;

        let mut data: Vec<f64> = Vec::new();
        data.try_reserve_exact(len).map_err(|_| Error::OutOfMemory { path: path.to_owned(), bytes })?;
        data.resize(len, 0.0);
        // SAFETY: f64 has no invalid bit patterns and the byte view covers
        // exactly the initialized buffer.
        let raw = unsafe { std::slice::from_raw_parts_mut(data.as_mut_ptr().cast::<u8>(), len * 8) };
        file.seek(SeekFrom::Start(HEADER_LEN as u64)).map_err(|e| Error::io(path, e))?;
        file.read_exact(raw).map_err(|e| Error::io(path, e))?;
        Ok(Self { rows, cols, storage: Storage::Ram(data), path: Some(path.to_owned()) })
    }

    /// Opens read-only in the requested mode, optionally restricted to the
    /// first `limit` rows.
    pub fn open(path: impl AsRef<Path>, mode: Mode, limit: Option<usize>) -> Result<Self> {
        match mode {
            Mode::InRam => Self::load_rows_in_ram(path, limit),
            Mode::Mapped => {
                let path = path.as_ref();
                let mut m = Self::open_mapped(path, false)?;
                m.rows = row_limit(m.rows, limit, path)?;
                Ok(m)
            }
        }
    }

    pub fn from_vec(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        MatrixView::new(&data, rows, cols)?;
        Ok(Self { rows, cols, storage: Storage::Ram(data), path: None })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mode(&self) -> Mode {
        match self.storage {
            Storage::Ram(_) => Mode::InRam,
            _ => Mode::Mapped,
        }
    }

    pub fn is_mapped(&self) -> bool {
        self.mode() == Mode::Mapped
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn as_slice(&self) -> &[f64] {
        let len = self.rows * self.cols;
        let bytes: &[u8] = match &self.storage {
            Storage::Ram(v) => return &v[..len],
            Storage::ReadOnly(m) => m,
            Storage::Writable(m) => m,
            Storage::Empty => return &[],
        };
        assert_eq!(bytes.as_ptr() as usize % std::mem::align_of::<f64>(), 0);
        // SAFETY: page-aligned mapping of at least `len * 8` bytes that lives
        // as long as `self`.
        unsafe { std::slice::from_raw_parts(bytes.as_ptr().cast::<f64>(), len) }
    }

    /// Mutable access; `None` for read-only mappings.
    pub fn as_mut_slice(&mut self) -> Option<&mut [f64]> {
        let len = self.rows * self.cols;
        let bytes: &mut [u8] = match &mut self.storage {
            Storage::Ram(v) => return Some(&mut v[..len]),
            Storage::Writable(m) => m,
            Storage::ReadOnly(_) => return None,
            Storage::Empty => return Some(&mut []),
        };
        assert_eq!(bytes.as_ptr() as usize % std::mem::align_of::<f64>(), 0);
        // SAFETY: as in `as_slice`, and the borrow is unique.
        Some(unsafe { std::slice::from_raw_parts_mut(bytes.as_mut_ptr().cast::<f64>(), len) })
    }

    pub fn view(&self) -> MatrixView<'_> {
        MatrixView::new(self.as_slice(), self.rows, self.cols).expect("matrix shape invariant")
    }

    /// # Panics
    /// On an out-of-range index.
    pub fn element(&self, i: usize, j: usize) -> f64 {
        self.view().element(i, j)
    }

    /// # Panics
    /// On an out-of-range row.
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row {i} out of range for {} rows", self.rows);
        &self.as_slice()[i * self.cols..(i + 1) * self.cols]
    }

    pub fn chunks(&self, plan: ChunkPlan) -> Chunks<'_> {
        self.view().chunks(plan)
    }

    /// Passes an access-pattern hint to the OS. Best effort: a refused hint is
    /// ignored, and in-RAM matrices ignore hints entirely.
    pub fn advise(&self, advice: Advice) {
        #[cfg(unix)]
        {
            let hint = match advice {
                Advice::Sequential => memmap2::Advice::Sequential,
                Advice::Random => memmap2::Advice::Random,
                Advice::Normal => memmap2::Advice::Normal,
            };
            let _ = match &self.storage {
                Storage::ReadOnly(m) => m.advise(hint),
                Storage::Writable(m) => m.advise(hint),
                Storage::Ram(_) | Storage::Empty => Ok(()),
            };
        }
        #[cfg(not(unix))]
        let _ = advice;
    }

    /// Flushes a writable mapping to disk.
    pub fn flush(&self) -> Result<()> {
        if let Storage::Writable(m) = &self.storage {
            m.flush().map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        Ok(())
    }
}

fn row_limit(rows: usize, limit: Option<usize>, path: &Path) -> Result<usize> {
    match limit {
        None => Ok(rows),
        Some(n) if n <= rows => Ok(n),
        Some(n) => Err(Error::Usage(format!("{} has {rows} rows, {n} requested", path.display()))),
    }
}

enum LabelStorage {
    Ram(Vec<u8>),
    Mapped(Mmap),
    Empty,
}

/// An `M3LB` label file.
pub struct LabelFile {
    header: LabelHeader,
    rows: usize,
    storage: LabelStorage,
}

impl LabelFile {
    pub fn open(path: impl AsRef<Path>, mode: Mode, limit: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        if len < HEADER_LEN as u64 {
            return Err(Error::format(path, m3_core::FormatError::TruncatedOrCorrupt));
        }
        let mut prefix = [0u8; HEADER_LEN];
        file.read_exact(&mut prefix).map_err(|e| Error::io(path, e))?;
        let header = LabelHeader::decode(&prefix).map_err(|e| Error::format(path, e))?;
        header.check_file_len(len).map_err(|e| Error::format(path, e))?;
        let rows = row_limit(to_usize(header.rows, path)?, limit, path)?;

        let storage = match mode {
            _ if rows == 0 => LabelStorage::Empty,
            Mode::Mapped => LabelStorage::Mapped(map_region(&file, path, rows)?),
            Mode::InRam => {
                let mut buf = Vec::new();
                buf.try_reserve_exact(rows)
                    .map_err(|_| Error::OutOfMemory { path: path.to_owned(), bytes: rows as u64 })?;
                buf.resize(rows, 0);
                file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                LabelStorage::Ram(buf)
            }
        };
        let labels = Self { header, rows, storage };
        header.check_labels(labels.as_slice()).map_err(|e| Error::format(path, e))?;
        Ok(labels)
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes as usize
    }

    pub fn as_slice(&self) -> &[u8] {
        match &self.storage {
            LabelStorage::Ram(v) => v,
            LabelStorage::Mapped(m) => &m[..self.rows],
            LabelStorage::Empty => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_then_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.m3mx");
        let mut m = MappedMatrix::create_mapped(&path, 4, 3).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 4192);
        assert_eq!(m.element(2, 1), 0.0);
        m.as_mut_slice().unwrap()[7] = 2.5;
        m.flush().unwrap();
        drop(m);

        let ro = MappedMatrix::open_mapped(&path, false).unwrap();
        assert_eq!(ro.element(2, 1), 2.5);
        assert!(ro.is_mapped());
        let ram = MappedMatrix::load_in_ram(&path).unwrap();
        assert_eq!(ram.mode(), Mode::InRam);
        assert_eq!(ram.as_slice(), ro.as_slice());
    }

    #[test]
    fn empty_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.m3mx");
        let m = MappedMatrix::create_mapped(&path, 0, 5).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 4096);
        assert_eq!(m.rows(), 0);
        assert_eq!(m.chunks(ChunkPlan::default()).count(), 0);
        let m = MappedMatrix::open(&path, Mode::Mapped, None).unwrap();
        assert!(m.as_slice().is_empty());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.m3mx");
        MappedMatrix::create_mapped(&path, 4, 3).unwrap();
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(4100).unwrap();
        let err = MappedMatrix::open_mapped(&path, false).unwrap_err();
        assert_eq!(err.to_string(), format!("{}: truncated or corrupt", path.display()));
        std::fs::write(&path, [0u8; 100]).unwrap();
        assert!(MappedMatrix::load_in_ram(&path).unwrap_err().to_string().ends_with("truncated or corrupt"));
    }

    #[test]
    fn advice_is_semantics_preserving() {
        let m = MappedMatrix::from_vec(vec![1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        m.advise(Advice::Sequential);
        assert_eq!(m.element(1, 0), 3.0);
        assert_eq!(m.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn prefix_limit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.m3mx");
        let mut m = MappedMatrix::create_mapped(&path, 5, 2).unwrap();
        for (i, v) in m.as_mut_slice().unwrap().iter_mut().enumerate() {
            *v = i as f64;
        }
        drop(m);
        let a = MappedMatrix::open(&path, Mode::Mapped, Some(3)).unwrap();
        let b = MappedMatrix::open(&path, Mode::InRam, Some(3)).unwrap();
        assert_eq!(a.rows(), 3);
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(MappedMatrix::open(&path, Mode::Mapped, Some(6)).is_err());
    }

    #[test]
    #[cfg(unix)]
    fn permission_denied_is_distinct() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        std::fs::set_permissions(dir.path(), std::fs::Permissions::from_mode(0o500)).unwrap();
        let result = MappedMatrix::create_mapped(dir.path().join("x.m3mx"), 1, 1);
        std::fs::set_permissions(dir.path(), std::fs::Permissions::from_mode(0o700)).unwrap();
        // Root bypasses directory permissions.
        if unsafe { libc::geteuid() } != 0 {
            assert!(matches!(result, Err(Error::PermissionDenied { .. })), "{result:?}");
        }
    }
}
