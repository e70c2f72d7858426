use std::borrow::Cow;
use std::fs::File;
use std::io;
use std::path::Path;
use std::sync::Arc;

use memmap2::Mmap;

/// Random-access bytes. In-memory and mapped sources hand out borrowed
/// slices, so tensor views over them never copy.
pub trait ByteSource: Send + Sync {
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exactly `len` bytes at `offset`, or `UnexpectedEof`.
    fn read_at(&self, offset: u64, len: usize) -> io::Result<Cow<'_, [u8]>>;
}

fn slice_at(bytes: &[u8], offset: u64, len: usize) -> io::Result<Cow<'_, [u8]>> {
    let start = usize::try_from(offset).map_err(|_| io::ErrorKind::UnexpectedEof)?;
    match start.checked_add(len) {
        Some(end) if end <= bytes.len() => Ok(Cow::Borrowed(&bytes[start..end])),
        _ => Err(io::ErrorKind::UnexpectedEof.into()),
    }
}

impl ByteSource for Vec<u8> {
    fn len(&self) -> u64 {
        self.as_slice().len() as u64
    }

    fn read_at(&self, offset: u64, len: usize) -> io::Result<Cow<'_, [u8]>> {
        slice_at(self, offset, len)
    }
}

impl ByteSource for Arc<[u8]> {
    fn len(&self) -> u64 {
        (**self).len() as u64
    }

    fn read_at(&self, offset: u64, len: usize) -> io::Result<Cow<'_, [u8]>> {
        slice_at(self, offset, len)
    }
}

impl ByteSource for Mmap {
    fn len(&self) -> u64 {
        (**self).len() as u64
    }

    fn read_at(&self, offset: u64, len: usize) -> io::Result<Cow<'_, [u8]>> {
        slice_at(self, offset, len)
    }
}

/// Demand-paged read-only mapping of a file on disk.
pub fn map_file(path: impl AsRef<Path>) -> io::Result<Mmap> {
    let file = File::open(path)?;
    // SAFETY: the mapping is read-only; model files are not expected to be
    // modified while open, same assumption as every mmap-based loader.
    unsafe { Mmap::map(&file) }
}
