//! Byte-window featurization.
//!
//! A file becomes three 512-token windows (beginning, middle, end) over its
//! content with outer ASCII whitespace stripped. Tokens are byte values
//! 0..=255; [`PAD_TOKEN`] fills windows of short files. Only a bounded number
//! of bytes is ever read, so large files cost the same as small ones.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::Path;

pub const WINDOW: usize = 512;
pub const N_WINDOWS: usize = 3;
pub const FEATURE_LEN: usize = WINDOW * N_WINDOWS;
pub const PAD_TOKEN: u16 = 256;
pub const VOCAB: usize = 257;

/// Maximum distance scanned from each end while stripping whitespace. A file
/// whose first (last) `STRIP_SCAN_LIMIT` bytes are all whitespace is treated
/// as having no leading (trailing) whitespace at all.
pub const STRIP_SCAN_LIMIT: u64 = 1 << 20;

const SCAN_CHUNK: usize = WINDOW;

#[inline]
pub fn is_strip_whitespace(b: u8) -> bool {
    matches!(b, 0x09..=0x0D | 0x20)
}

/// Removes leading and trailing ASCII whitespace.
pub fn strip_outer_whitespace(data: &[u8]) -> &[u8] {
    let mut src = SliceSource::new(data);
    match stripped_bounds(&mut src) {
        Ok((s, e)) => &data[s as usize..e as usize],
        Err(_) => unreachable!("slice reads cannot fail"),
    }
}

/// Model input: `begin ‖ middle ‖ end`, each `WINDOW` tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    tokens: Vec<u16>,
    content_len: u64,
}

impl FeatureVector {
    /// Wraps raw tokens; fails unless there are `FEATURE_LEN` of them, all `<= PAD_TOKEN`.
    pub fn from_tokens(tokens: Vec<u16>, content_len: u64) -> Option<Self> {
        if tokens.len() != FEATURE_LEN || tokens.iter().any(|&t| t > PAD_TOKEN) {
            return None;
        }
        Some(Self {
            tokens,
            content_len,
        })
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [u16] {
        &mut self.tokens
    }

    /// Length of the content after stripping.
    pub fn content_len(&self) -> u64 {
        self.content_len
    }

    pub fn begin(&self) -> &[u16] {
        &self.tokens[..WINDOW]
    }

    pub fn middle(&self) -> &[u16] {
        &self.tokens[WINDOW..2 * WINDOW]
    }

    pub fn end(&self) -> &[u16] {
        &self.tokens[2 * WINDOW..]
    }
}

/// Random-access byte input for the featurizer.
pub trait ByteSource {
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fills `buf` with the bytes at `offset..offset + buf.len()`.
    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> io::Result<()>;
}

pub struct SliceSource<'a> {
    data: &'a [u8],
}

impl<'a> SliceSource<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data }
    }
}

impl ByteSource for SliceSource<'_> {
    fn len(&self) -> u64 {
        self.data.len() as u64
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        let start = offset as usize;
        buf.copy_from_slice(&self.data[start..start + buf.len()]);
        Ok(())
    }
}

/// Seek-based reader over an open file.
pub struct FileSource<R> {
    inner: R,
    len: u64,
}

impl FileSource<File> {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Ok(Self { inner: file, len })
    }
}

impl<R: Read + Seek> FileSource<R> {
    pub fn from_reader(mut inner: R) -> io::Result<Self> {
        let len = inner.seek(SeekFrom::End(0))?;
        Ok(Self { inner, len })
    }
}

impl<R: Read + Seek> ByteSource for FileSource<R> {
    fn len(&self) -> u64 {
        self.len
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
        self.inner.seek(SeekFrom::Start(offset))?;
        self.inner.read_exact(buf)
    }
}

/// `[start, end)` of the content after stripping.
fn stripped_bounds<S: ByteSource + ?Sized>(src: &mut S) -> io::Result<(u64, u64)> {
    let n = src.len();
    let mut buf = [0u8; SCAN_CHUNK];

    let limit = n.min(STRIP_SCAN_LIMIT);
    let mut start = None;
    let mut pos = 0u64;
    while pos < limit {
        let take = (limit - pos).min(SCAN_CHUNK as u64) as usize;
        src.read_at(pos, &mut buf[..take])?;
        if let Some(i) = buf[..take].iter().position(|&b| !is_strip_whitespace(b)) {
            start = Some(pos + i as u64);
            break;
        }
        pos += take as u64;
    }
    let start = match start {
        Some(s) => s,
        // nothing but whitespace within the limit
        None if n <= STRIP_SCAN_LIMIT => return Ok((0, 0)),
        None => 0,
    };

    let floor = n.saturating_sub(STRIP_SCAN_LIMIT).max(start);
    let mut end = None;
    let mut pos = n;
    while pos > floor {
        let take = (pos - floor).min(SCAN_CHUNK as u64) as usize;
        let at = pos - take as u64;
        src.read_at(at, &mut buf[..take])?;
        if let Some(i) = buf[..take].iter().rposition(|&b| !is_strip_whitespace(b)) {
            end = Some(at + i as u64 + 1);
            break;
        }
        pos = at;
    }
    let end = end.unwrap_or(n);
    Ok((start, end))
}

/// Featurizes any [`ByteSource`], reading at most the three windows plus the
/// whitespace scans.
pub fn extract_features_from<S: ByteSource + ?Sized>(src: &mut S) -> io::Result<FeatureVector> {
    let (start, end) = stripped_bounds(src)?;
    let n = end - start;
    let take = n.min(WINDOW as u64) as usize;
    let mut tokens = vec![PAD_TOKEN; FEATURE_LEN];
    let mut buf = [0u8; WINDOW];

    if take > 0 {
        // begin: left-aligned
        src.read_at(start, &mut buf[..take])?;
        fill(&mut tokens[..WINDOW], 0, &buf[..take]);

        // middle: centered
        if n >= WINDOW as u64 {
            let mid = start + (n - WINDOW as u64) / 2;
            src.read_at(mid, &mut buf)?;
            fill(&mut tokens[WINDOW..2 * WINDOW], 0, &buf);
        } else {
            // whole content; reuse the begin read
            src.read_at(start, &mut buf[..take])?;
            let lead = (WINDOW - take) / 2;
            fill(&mut tokens[WINDOW..2 * WINDOW], lead, &buf[..take]);
        }

        // end: right-aligned
        src.read_at(end - take as u64, &mut buf[..take])?;
        fill(&mut tokens[2 * WINDOW..], WINDOW - take, &buf[..take]);
    }
    Ok(FeatureVector {
        tokens,
        content_len: n,
    })
}

fn fill(dst: &mut [u16], offset: usize, bytes: &[u8]) {
    for (d, &b) in dst[offset..].iter_mut().zip(bytes) {
        *d = b as u16;
    }
}

pub fn extract_features(data: &[u8]) -> FeatureVector {
    extract_features_from(&mut SliceSource::new(data)).expect("slice reads cannot fail")
}

/// Featurizes a file on disk with seek-based reads.
pub fn extract_features_from_path(path: impl AsRef<Path>) -> io::Result<FeatureVector> {
    let mut src = FileSource::open(path)?;
    extract_features_from(&mut src)
}
