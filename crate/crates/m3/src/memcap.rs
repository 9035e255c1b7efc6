//! Process memory cap used to simulate a machine whose RAM is smaller than
//! the dataset.
//!
//! `RLIMIT_DATA` limits heap and anonymous mappings (Linux 4.7+) but not
//! read-only file mappings, so a mapped matrix can exceed the cap while an
//! in-RAM load of the same file cannot.

use crate::error::{Error, Result};

/// Lowers the soft and hard data-segment limit of the current process.
pub fn limit_data_segment(bytes: u64) -> Result<()> {
    let limit = libc::rlimit { rlim_cur: bytes as libc::rlim_t, rlim_max: bytes as libc::rlim_t };
    // SAFETY: plain syscall on a stack value.
    if unsafe { libc::setrlimit(libc::RLIMIT_DATA, &limit) } != 0 {
        let e = std::io::Error::last_os_error();
        return Err(Error::Usage(format!("cannot set memory cap of {bytes} bytes: {e}")));
    }
    Ok(())
}

