//! The `EMBSTRM1` container.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "EMBSTRM1"
//!      8     4  version (u32, currently 1)
//!     12     4  d (u32, >= 1)
//!     16     4  K (u32, >= 2)
//!     20     8  record_count (u64, 0 = unknown / streaming)
//!     28     4  flags (u32; bit 0 labels present, bit 1 features pre-normalized)
//!     32   4Kd  text embeddings, f32, row-major
//!      …        records: d × f32 feature, then i32 label if bit 0 (-1 = unlabeled)
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::state::{ClassTextEmbeddings, EmbeddingRecord};

pub const MAGIC: &[u8; 8] = b"EMBSTRM1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const FLAG_LABELS: u32 = 1;
pub const FLAG_NORMALIZED: u32 = 1 << 1;
const KNOWN_FLAGS: u32 = FLAG_LABELS | FLAG_NORMALIZED;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub version: u32,
    pub dim: u32,
    pub num_classes: u32,
    pub record_count: u64,
    pub flags: u32,
}

impl EmbeddingFileHeader {
    pub fn new(dim: usize, num_classes: usize, record_count: u64, flags: u32) -> Self {
        EmbeddingFileHeader {
            version: FORMAT_VERSION,
            dim: dim as u32,
            num_classes: num_classes as u32,
            record_count,
            flags,
        }
    }

    pub fn has_labels(&self) -> bool {
        self.flags & FLAG_LABELS != 0
    }

    pub fn pre_normalized(&self) -> bool {
        self.flags & FLAG_NORMALIZED != 0
    }

    /// Bytes per record.
    pub fn record_len(&self) -> usize {
        self.dim as usize * 4 + if self.has_labels() { 4 } else { 0 }
    }

    pub fn text_len(&self) -> usize {
        self.dim as usize * self.num_classes as usize * 4
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..8].copy_from_slice(MAGIC);
        buf[8..12].copy_from_slice(&self.version.to_le_bytes());
        buf[12..16].copy_from_slice(&self.dim.to_le_bytes());
        buf[16..20].copy_from_slice(&self.num_classes.to_le_bytes());
        buf[20..28].copy_from_slice(&self.record_count.to_le_bytes());
        buf[28..32].copy_from_slice(&self.flags.to_le_bytes());
        buf
    }

    pub fn decode(buf: &[u8; HEADER_LEN]) -> Result<Self> {
        if &buf[0..8] != MAGIC {
            return Err(Error::format(format!("bad magic {:?}", &buf[0..8])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let header = EmbeddingFileHeader {
            version: u32_at(8),
            dim: u32_at(12),
            num_classes: u32_at(16),
            record_count: u64::from_le_bytes(buf[20..28].try_into().unwrap()),
            flags: u32_at(28),
        };
        header.validate().map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Format(msg),
            other => other,
        })?;
        Ok(header)
    }

    fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.dim < 1 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("at least 2 classes are required"));
        }
        if self.flags & !KNOWN_FLAGS != 0 {
            return Err(Error::invalid(format!(
                "unknown flag bits {:#x}",
                self.flags
            )));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Writes a complete file. Features and text embeddings are narrowed to f32.
pub fn write_embedding_file<W: Write>(
    mut out: W,
    header: &EmbeddingFileHeader,
    text: &ClassTextEmbeddings,
    records: &[EmbeddingRecord],
) -> Result<()> {
    header.validate()?;
    let d = header.dim as usize;
    if text.dim() != d || text.num_classes() != header.num_classes as usize {
        return Err(Error::invalid(format!(
            "text embeddings are {}x{}, header says {}x{d}",
            text.num_classes(),
            text.dim(),
            header.num_classes
        )));
    }
    if header.record_count != 0 && header.record_count != records.len() as u64 {
        return Err(Error::invalid(format!(
            "header announces {} records, got {}",
            header.record_count,
            records.len()
        )));
    }

    let mut buf = Vec::with_capacity(HEADER_LEN + header.text_len());
    buf.extend_from_slice(&header.encode());
    for row in text.rows() {
        put_f32s(&mut buf, row);
    }
    out.write_all(&buf)?;

    let mut rec = Vec::with_capacity(header.record_len());
    for (i, record) in records.iter().enumerate() {
        if record.feature.len() != d {
            return Err(Error::invalid(format!(
                "record {i} has dimension {}, header says {d}",
                record.feature.len()
            )));
        }
        rec.clear();
        put_f32s(&mut rec, &record.feature);
        match (header.has_labels(), record.label) {
            (true, Some(y)) if y < header.num_classes as usize => {
                rec.extend_from_slice(&(y as i32).to_le_bytes())
            }
            (true, Some(y)) => {
                return Err(Error::invalid(format!(
                    "record {i} has label {y} out of range"
                )))
            }
            (true, None) => rec.extend_from_slice(&(-1i32).to_le_bytes()),
            (false, Some(_)) => {
                return Err(Error::invalid(format!(
                    "record {i} is labeled but the header has no labels flag"
                )))
            }
            (false, None) => {}
        }
        out.write_all(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Single-pass reader. Yields records in file order.
pub struct EmbeddingReader<R> {
    inner: R,
    header: EmbeddingFileHeader,
    text: ClassTextEmbeddings,
    next_record: u64,
    offset: u64,
    buf: Vec<u8>,
    finished: bool,
}

/// Reads as many bytes as are available, up to `buf.len()`.
fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> EmbeddingReader<R> {
    /// Consumes the header and the text-embedding block.
    pub fn new(mut inner: R) -> Result<Self> {
        let mut head = [0u8; HEADER_LEN];
        if read_up_to(&mut inner, &mut head)? != HEADER_LEN {
            return Err(Error::format("file shorter than the 32-byte header"));
        }
        let header = EmbeddingFileHeader::decode(&head)?;
        let mut block = vec![0u8; header.text_len()];
        if read_up_to(&mut inner, &mut block)? != block.len() {
            return Err(Error::format("text embedding block is truncated"));
        }
        let d = header.dim as usize;
        let rows: Vec<Vec<f64>> = block
            .chunks_exact(d * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect()
            })
            .collect();
        let text = ClassTextEmbeddings::unnamed(rows).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Format(msg),
            other => other,
        })?;
        Ok(EmbeddingReader {
            inner,
            header,
            text,
            next_record: 0,
            offset: (HEADER_LEN + header.text_len()) as u64,
            buf: vec![0u8; header.record_len()],
            finished: false,
        })
    }

    pub fn header(&self) -> &EmbeddingFileHeader {
        &self.header
    }

    pub fn text_embeddings(&self) -> &ClassTextEmbeddings {
        &self.text
    }

    fn read_record(&mut self) -> Result<Option<EmbeddingRecord>> {
        let announced = self.header.record_count;
        if announced != 0 && self.next_record >= announced {
            return Ok(None);
        }
        let got = read_up_to(&mut self.inner, &mut self.buf)?;
        if got == 0 && announced == 0 {
            return Ok(None);
        }
        if got < self.buf.len() {
            return Err(Error::Truncated {
                record: self.next_record,
                offset: self.offset,
            });
        }
        let d = self.header.dim as usize;
        let feature: Vec<f64> = self.buf[..d * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let label = if self.header.has_labels() {
            let raw = i32::from_le_bytes(self.buf[d * 4..d * 4 + 4].try_into().unwrap());
            match raw {
                -1 => None,
                y if y >= 0 && (y as u32) < self.header.num_classes => Some(y as usize),
                y => {
                    return Err(Error::format(format!(
                        "record {} has invalid label {y}",
                        self.next_record
                    )))
                }
            }
        } else {
            None
        };
        self.next_record += 1;
        self.offset += self.buf.len() as u64;
        Ok(Some(EmbeddingRecord { feature, label }))
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.read_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.finished = true;
                None
            }
            Err(e) => {
                self.finished = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a stream: returns the class text embeddings and a record iterator.
pub fn read_embedding_stream<R: Read>(
    inner: R,
) -> Result<(ClassTextEmbeddings, EmbeddingReader<R>)> {
    let reader = EmbeddingReader::new(inner)?;
    Ok((reader.text_embeddings().clone(), reader))
}
