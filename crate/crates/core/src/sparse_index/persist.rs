//! Single-file binary index format. See `docs/index-format.md`.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! magic  "LRIX"            4 bytes
//! version u32              currently 1
//! section*                 tag (4 bytes) + payload length (u64) + payload
//!   PRMS  k1 f64, b f64, flags u8 (bit 0 stemming, bit 1 stopwords)
//!   DOCS  count u32, then per doc: id (u32 len + utf-8), token count u32
//!   POST  term count u32, then per term in byte order:
//!         term (u32 len + utf-8), posting count u32, (doc u32, tf u32)*
//! ```
//!
//! Sections appear exactly once, in the order above.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{IndexError, IndexParams, InvertedIndex, Posting};

pub const MAGIC: [u8; 4] = *b"LRIX";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_STEMMING: u8 = 1;
const FLAG_STOPWORDS: u8 = 2;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_section(buf: &mut Vec<u8>, tag: &[u8; 4], payload: Vec<u8>) {
    buf.extend_from_slice(tag);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(&payload);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IndexError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| IndexError::Corrupt("invalid utf-8".into()))
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>, IndexError> {
        let found = self.take(4)?;
        if found != tag {
            return Err(IndexError::Corrupt(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = usize::try_from(self.u64()?).map_err(|_| IndexError::Corrupt("section too large".into()))?;
        Ok(Reader {
            bytes: self.take(len)?,
            pos: 0,
        })
    }

    fn finish(&self) -> Result<(), IndexError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(IndexError::Corrupt(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )))
        }
    }
}

impl InvertedIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, FORMAT_VERSION);

        let mut params = Vec::with_capacity(17);
        params.extend_from_slice(&self.params.k1.to_le_bytes());
        params.extend_from_slice(&self.params.b.to_le_bytes());
        let mut flags = 0u8;
        if self.params.stemming {
            flags |= FLAG_STEMMING;
        }
        if self.params.stopwords {
            flags |= FLAG_STOPWORDS;
        }
        params.push(flags);
        put_section(&mut out, b"PRMS", params);

        let mut docs = Vec::new();
        put_u32(&mut docs, self.doc_ids.len() as u32);
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            put_str(&mut docs, id);
            put_u32(&mut docs, *len);
        }
        put_section(&mut out, b"DOCS", docs);

        let mut post = Vec::new();
        put_u32(&mut post, self.postings.len() as u32);
        for (term, list) in &self.postings {
            put_str(&mut post, term);
            put_u32(&mut post, list.len() as u32);
            for p in list {
                put_u32(&mut post, p.doc);
                put_u32(&mut post, p.tf);
            }
        }
        put_section(&mut out, b"POST", post);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IndexError::Corrupt("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Corrupt(format!("unsupported format version {version}")));
        }

        let mut p = r.section(b"PRMS")?;
        let k1 = p.f64()?;
        let b = p.f64()?;
        let flags = p.u8()?;
        p.finish()?;
        let params = IndexParams {
            k1,
            b,
            stemming: flags & FLAG_STEMMING != 0,
            stopwords: flags & FLAG_STOPWORDS != 0,
        };
        params.validate().map_err(|e| IndexError::Corrupt(e.to_string()))?;

        let mut d = r.section(b"DOCS")?;
        let count = d.u32()? as usize;
        let mut doc_ids = Vec::with_capacity(count.min(1 << 20));
        let mut doc_lengths = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            doc_ids.push(d.string()?);
            doc_lengths.push(d.u32()?);
        }
        d.finish()?;

        let mut s = r.section(b"POST")?;
        let terms = s.u32()?;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = s.string()?;
            let n = s.u32()? as usize;
            let mut list = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                list.push(Posting {
                    doc: s.u32()?,
                    tf: s.u32()?,
                });
            }
            postings.insert(term, list);
        }
        s.finish()?;
        r.finish()?;

        InvertedIndex::from_parts(params, doc_ids, doc_lengths, postings)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
