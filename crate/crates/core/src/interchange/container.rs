//! Section framing shared by the dataset (`DIMX`) and basis (`DIMB`) files.
//!
//! ```text
//! magic [u8; 4] | version u32 | section_count u32
//! repeated: tag [u8; 4] | payload_len u64 | payload
//! ```
//!
//! All integers and reals are little-endian.

use super::InterchangeError;

pub type Tag = [u8; 4];

pub struct Section<'a> {
    pub tag: Tag,
    /// Absolute file offset of the first payload byte.
    pub offset: usize,
    pub payload: &'a [u8],
}

pub fn tag_name(tag: &Tag) -> String {
    tag.iter()
        .take_while(|&&b| b != 0)
        .map(|&b| if b.is_ascii_graphic() { b as char } else { '?' })
        .collect()
}

/// Parses the header and splits the file into sections.
pub fn parse<'a>(
    bytes: &'a [u8],
    magic: &Tag,
    version: u32,
) -> Result<Vec<Section<'a>>, InterchangeError> {
    let mut r = ByteReader::new(bytes, 0);
    let found: Tag = r.array()?;
    if &found != magic {
        return Err(InterchangeError::BadMagic { expected: *magic, found });
    }
    let v = r.u32()?;
    if v != version {
        return Err(InterchangeError::VersionMismatch { expected: version, found: v });
    }
    let count = r.u32()?;
    let mut sections = Vec::with_capacity(count.min(64) as usize);
    for _ in 0..count {
        let tag: Tag = r.array()?;
        let len = r.u64()?;
        let len = usize::try_from(len).map_err(|_| InterchangeError::Truncated {
            offset: r.offset(),
            needed: usize::MAX,
        })?;
        let offset = r.offset();
        let payload = r.take(len)?;
        sections.push(Section { tag, offset, payload });
    }
    if r.remaining() != 0 {
        return Err(InterchangeError::TrailingBytes { offset: r.offset() });
    }
    Ok(sections)
}

pub struct Writer {
    buf: Vec<u8>,
    count_at: usize,
    count: u32,
}

impl Writer {
    pub fn new(magic: &Tag, version: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        let count_at = buf.len();
        buf.extend_from_slice(&0u32.to_le_bytes());
        Self { buf, count_at, count: 0 }
    }

    pub fn section(&mut self, tag: &Tag, payload: &[u8]) {
        self.buf.extend_from_slice(tag);
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(payload);
        self.count += 1;
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.buf[self.count_at..self.count_at + 4].copy_from_slice(&self.count.to_le_bytes());
        self.buf
    }
}

/// Little-endian cursor over a byte slice that remembers absolute offsets
/// for error messages.
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], base: usize) -> Self {
        Self { bytes, pos: 0, base }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], InterchangeError> {
        if self.remaining() < n {
            return Err(InterchangeError::Truncated { offset: self.offset(), needed: n });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], InterchangeError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8, InterchangeError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32, InterchangeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, InterchangeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, InterchangeError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Little-endian append helpers.
pub trait PutLe {
    fn put_u8(&mut self, v: u8);
    fn put_u32(&mut self, v: u32);
    fn put_u64(&mut self, v: u64);
    fn put_f64(&mut self, v: f64);
    fn put_f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.put_f64(x);
        }
    }
}

impl PutLe for Vec<u8> {
    fn put_u8(&mut self, v: u8) {
        self.push(v);
    }
    fn put_u32(&mut self, v: u32) {
        self.extend_from_slice(&v.to_le_bytes());
    }
    fn put_u64(&mut self, v: u64) {
        self.extend_from_slice(&v.to_le_bytes());
    }
    fn put_f64(&mut self, v: f64) {
        self.extend_from_slice(&v.to_le_bytes());
    }
}
