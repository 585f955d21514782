//! The `HKIT` binary container: a magic tag, a format version, and a list of
//! named, length-prefixed, CRC32-checked sections. All integers and floats
//! are little-endian.
//!
//! ```text
//! "HKIT" | u16 version | u32 section count
//! per section: u16 name length | name | u64 payload length | payload | u32 crc32(payload)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HKIT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub payload: Vec<u8>,
}

impl Section {
    pub fn new(name: impl Into<String>, payload: Vec<u8>) -> Self {
        Self { name: name.into(), payload }
    }
}

fn format_err(section: &str, message: impl Into<String>) -> Error {
    Error::Format { section: section.to_string(), message: message.into() }
}

pub fn encode(sections: &[Section]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for s in sections {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&s.payload);
        out.extend_from_slice(&crc32fast::hash(&s.payload).to_le_bytes());
    }
    out
}

pub fn write_file(path: &Path, sections: &[Section]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(sections))?;
    f.sync_all()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &str, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(
                section,
                format!("truncated while reading {what} ({} of {n} bytes present)", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn read_header(cur: &mut Cursor<'_>) -> Result<u32> {
    let magic = cur.take(4, "header", "magic")?;
    if magic != MAGIC {
        return Err(format_err("header", "bad magic, not an HKIT file"));
    }
    let version = u16::from_le_bytes(cur.take(2, "header", "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err("header", format!("unsupported version {version} (expected {VERSION})")));
    }
    Ok(u32::from_le_bytes(cur.take(4, "header", "section count")?.try_into().unwrap()))
}

fn read_section(cur: &mut Cursor<'_>, index: u32) -> Result<Section> {
    let placeholder = format!("#{index}");
    let name_len = u16::from_le_bytes(cur.take(2, &placeholder, "name length")?.try_into().unwrap()) as usize;
    let name = String::from_utf8(cur.take(name_len, &placeholder, "name")?.to_vec())
        .map_err(|_| format_err(&placeholder, "section name is not UTF-8"))?;
    let len = u64::from_le_bytes(cur.take(8, &name, "payload length")?.try_into().unwrap()) as usize;
    let payload = cur.take(len, &name, "payload")?.to_vec();
    let crc = u32::from_le_bytes(cur.take(4, &name, "checksum")?.try_into().unwrap());
    if crc32fast::hash(&payload) != crc {
        return Err(format_err(&name, "checksum mismatch"));
    }
    Ok(Section { name, payload })
}

pub fn decode(buf: &[u8]) -> Result<Vec<Section>> {
    let mut cur = Cursor { buf, pos: 0 };
    let count = read_header(&mut cur)?;
    (0..count).map(|i| read_section(&mut cur, i)).collect()
}

pub fn read_file(path: &Path) -> Result<Vec<Section>> {
    decode(&fs::read(path)?)
}

/// Reads only the first section, without validating the rest of the file.
pub fn read_first(path: &Path) -> Result<Section> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if read_header(&mut cur)? == 0 {
        return Err(format_err("header", "container has no sections"));
    }
    read_section(&mut cur, 0)
}

pub fn find<'a>(sections: &'a [Section], name: &str) -> Result<&'a Section> {
    sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| format_err(name, "section missing"))
}

/// Little-endian payload builder.
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn f32s(&mut self, v: &[f32]) -> &mut Self {
        self.u64(v.len() as u64);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        self
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        self.u64(v.len() as u64);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

/// Little-endian payload parser; errors name the section being read.
pub struct Reader<'a> {
    section: &'a str,
    cur: Cursor<'a>,
}

impl<'a> Reader<'a> {
    pub fn new(section: &'a Section) -> Self {
        Self { section: &section.name, cur: Cursor { buf: &section.payload, pos: 0 } }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.cur.take(1, self.section, "u8")?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.cur.take(4, self.section, "u32")?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.cur.take(8, self.section, "u64")?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.cur.take(n, self.section, "string")?.to_vec())
            .map_err(|_| format_err(self.section, "invalid UTF-8 string"))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len_prefix(1)?;
        self.cur.take(n, self.section, "bytes")
    }

    fn len_prefix(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem).is_none_or(|b| b > self.cur.buf.len() - self.cur.pos) {
            return Err(format_err(self.section, format!("array of {n} elements exceeds the payload")));
        }
        Ok(n)
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len_prefix(4)?;
        let raw = self.cur.take(n * 4, self.section, "f32 array")?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        let raw = self.cur.take(n * 8, self.section, "f64 array")?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.cur.pos != self.cur.buf.len() {
            return Err(format_err(self.section, "trailing bytes after payload"));
        }
        Ok(())
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        format_err(self.section, message)
    }
}
