//! Reading and writing a strict subset of the NumPy `.npy` format.
//!
//! Only version 1.0 containers in C order are accepted:
//!
//! ```text
//! 93 4E 55 4D 50 59        magic "\x93NUMPY"
//! 01 00                    version 1.0
//! LL LL                    header length, u16 little-endian
//! {'descr': '<f4', 'fortran_order': False, 'shape': (5, 64, 64), }  (space padded, '\n')
//! payload                  C-order elements, exactly prod(shape) * itemsize bytes
//! ```
//!
//! Score tensors are `'<f4'` with shape `(K, H, W)`. Label masks are `'|u1'`
//! or `'<u2'` with shape `(H, W)`; the maximum value of the stored type marks
//! void pixels. Multi-labeled masks are `'|u1'` 0/1 tensors of shape
//! `(K, H, W)`. Every malformed input maps to a typed [`Error`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Dims, GroundTruthMask, MultiMask, ScoreTensor, IGNORE};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Magic, version and header-length prefix.
const PREAMBLE_LEN: usize = 10;
const ALIGNMENT: usize = 64;

/// Parsed header dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpyHeader {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

impl NpyHeader {
    fn element_count(&self) -> Result<usize> {
        self.shape.iter().try_fold(1usize, |acc, &d| {
            acc.checked_mul(d)
                .ok_or_else(|| Error::MalformedHeader("shape product overflows".into()))
        })
    }

    fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::ShapeRankError {
                expected: rank,
                found: self.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Splits a container into its header and payload.
pub fn parse(bytes: &[u8]) -> Result<(NpyHeader, &[u8])> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::MalformedHeader("truncated preamble".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::UnsupportedVersion { major, minor });
    }
    let header_len = usize::from(u16::from_le_bytes([bytes[8], bytes[9]]));
    let end = PREAMBLE_LEN + header_len;
    if bytes.len() < end {
        return Err(Error::MalformedHeader(format!(
            "header declares {header_len} bytes but the file is shorter"
        )));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..end])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let header = parse_dict(text)?;
    Ok((header, &bytes[end..]))
}

fn payload<'a>(header: &NpyHeader, data: &'a [u8], itemsize: usize) -> Result<&'a [u8]> {
    let expected = header
        .element_count()?
        .checked_mul(itemsize)
        .ok_or_else(|| Error::MalformedHeader("shape product overflows".into()))?;
    if data.len() != expected {
        return Err(Error::DataLength {
            expected,
            found: data.len(),
        });
    }
    Ok(data)
}

fn check_order(header: &NpyHeader) -> Result<()> {
    if header.fortran_order {
        return Err(Error::FortranOrderUnsupported);
    }
    Ok(())
}

/// Decodes a `(K, H, W)` little-endian float32 score tensor.
pub fn scores_from_bytes(bytes: &[u8], validate: bool) -> Result<ScoreTensor> {
    let (header, data) = parse(bytes)?;
    check_order(&header)?;
    if header.descr != "<f4" {
        return Err(Error::UnsupportedDescriptor(header.descr));
    }
    header.expect_rank(3)?;
    let data = payload(&header, data, 4)?;
    let dims = Dims::new(header.shape[0], header.shape[1], header.shape[2])?;
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if validate {
        ScoreTensor::new(dims, values)
    } else {
        ScoreTensor::new_unvalidated(dims, values)
    }
}

pub fn scores_to_bytes(scores: &ScoreTensor) -> Vec<u8> {
    let d = scores.dims();
    let mut out = header_bytes("<f4", &[d.k, d.h, d.w]);
    out.reserve(scores.values().len() * 4);
    for v in scores.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Label grid as stored on disk, before pairing with a class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    /// Labels with the on-disk sentinel already mapped to [`IGNORE`].
    pub labels: Vec<u16>,
}

impl LabelGrid {
    /// Range-checks labels against `k` classes.
    pub fn into_mask(self, k: usize) -> Result<GroundTruthMask> {
        GroundTruthMask::new(Dims::new(k, self.height, self.width)?, self.labels)
    }
}

pub fn mask_from_bytes(bytes: &[u8]) -> Result<LabelGrid> {
    let (header, data) = parse(bytes)?;
    check_order(&header)?;
    let wide = match header.descr.as_str() {
        "|u1" | "<u1" => false,
        "<u2" => true,
        _ => return Err(Error::UnsupportedDescriptor(header.descr)),
    };
    header.expect_rank(2)?;
    let data = payload(&header, data, if wide { 2 } else { 1 })?;
    let labels = if wide {
        data.chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    } else {
        data.iter()
            .map(|&b| if b == u8::MAX { IGNORE } else { u16::from(b) })
            .collect()
    };
    Ok(LabelGrid {
        height: header.shape[0],
        width: header.shape[1],
        labels,
    })
}

/// One byte per label when every class index fits below 255, two otherwise.
pub fn mask_to_bytes(mask: &GroundTruthMask) -> Vec<u8> {
    let d = mask.dims();
    if d.k <= usize::from(u8::MAX) {
        let mut out = header_bytes("|u1", &[d.h, d.w]);
        out.extend(
            mask.labels()
                .iter()
                .map(|&l| if l == IGNORE { u8::MAX } else { l as u8 }),
        );
        out
    } else {
        let mut out = header_bytes("<u2", &[d.h, d.w]);
        for l in mask.labels() {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }
}

pub fn multimask_from_bytes(bytes: &[u8]) -> Result<MultiMask> {
    let (header, data) = parse(bytes)?;
    check_order(&header)?;
    if !matches!(header.descr.as_str(), "|u1" | "<u1" | "|b1") {
        return Err(Error::UnsupportedDescriptor(header.descr));
    }
    header.expect_rank(3)?;
    let data = payload(&header, data, 1)?;
    let dims = Dims::new(header.shape[0], header.shape[1], header.shape[2])?;
    MultiMask::new(dims, data.to_vec())
}

pub fn multimask_to_bytes(z: &MultiMask) -> Vec<u8> {
    let d = z.dims();
    let mut out = header_bytes("|u1", &[d.k, d.h, d.w]);
    out.extend_from_slice(z.bits());
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>, validate: bool) -> Result<ScoreTensor> {
    scores_from_bytes(&read_file(path.as_ref())?, validate)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreTensor) -> Result<()> {
    write_file(path.as_ref(), &scores_to_bytes(scores))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelGrid> {
    mask_from_bytes(&read_file(path.as_ref())?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &GroundTruthMask) -> Result<()> {
    write_file(path.as_ref(), &mask_to_bytes(mask))
}

pub fn read_multimask(path: impl AsRef<Path>) -> Result<MultiMask> {
    multimask_from_bytes(&read_file(path.as_ref())?)
}

pub fn write_multimask(path: impl AsRef<Path>, z: &MultiMask) -> Result<()> {
    write_file(path.as_ref(), &multimask_to_bytes(z))
}

/// Preamble plus header dict, padded so the payload starts on a 64-byte
/// boundary.
pub fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_text = match shape {
        [one] => format!("({one},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_text}, }}");
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let padding = (ALIGNMENT - unpadded % ALIGNMENT) % ALIGNMENT;
    dict.extend(std::iter::repeat_n(' ', padding));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

// Header dictionary grammar (a Python literal subset):
//   dict  := '{' (key ':' value (',' key ':' value)* ','?)? '}'
//   key   := quoted string
//   value := quoted string | True | False | '(' (int (',' int)* ','?)? ')'

#[derive(Debug)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, want: u8) -> Result<()> {
        match self.peek() {
            Some(b) if b == want => {
                self.pos += 1;
                Ok(())
            }
            other => Err(malformed(format!(
                "expected {:?} at byte {}, found {:?}",
                want as char,
                self.pos,
                other.map(|b| b as char)
            ))),
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(malformed(format!("expected a string at byte {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == quote {
                let s = std::str::from_utf8(&self.bytes[start..self.pos])
                    .map_err(|_| malformed("non-ASCII string".into()))?
                    .to_string();
                self.pos += 1;
                return Ok(s);
            }
            if b == b'\\' {
                return Err(malformed("escape sequences are not supported".into()));
            }
            self.pos += 1;
        }
        Err(malformed("unterminated string".into()))
    }

    fn word(&mut self) -> &str {
        self.skip_ws();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("")
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.eat(b'(')?;
        let mut items = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(items);
            }
            let word = self.word();
            // numpy may write `5L` on old Pythons
            let digits = word.strip_suffix('L').unwrap_or(word);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(malformed(format!("bad shape entry {word:?}")));
            }
            let n = digits
                .parse::<usize>()
                .map_err(|_| malformed(format!("shape entry {word:?} out of range")))?;
            items.push(n);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return Err(malformed("unterminated shape tuple".into())),
            }
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(Value::Str),
            Some(b'(') => self.tuple().map(Value::Tuple),
            Some(_) => match self.word() {
                "True" => Ok(Value::Bool(true)),
                "False" => Ok(Value::Bool(false)),
                other => Err(malformed(format!("unexpected value {other:?}"))),
            },
            None => Err(malformed("unexpected end of header".into())),
        }
    }
}

fn malformed(msg: String) -> Error {
    Error::MalformedHeader(msg)
}

fn parse_dict(text: &str) -> Result<NpyHeader> {
    let mut cur = Cursor {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    cur.eat(b'{')?;
    loop {
        if cur.peek() == Some(b'}') {
            cur.pos += 1;
            break;
        }
        let key = cur.string()?;
        cur.eat(b':')?;
        let value = cur.value()?;
        let slot_taken = match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr.replace(s).is_some(),
            ("fortran_order", Value::Bool(b)) => fortran.replace(b).is_some(),
            ("shape", Value::Tuple(t)) => shape.replace(t).is_some(),
            ("descr" | "fortran_order" | "shape", v) => {
                return Err(malformed(format!("key {key:?} has the wrong type: {v:?}")));
            }
            _ => return Err(malformed(format!("unexpected key {key:?}"))),
        };
        if slot_taken {
            return Err(malformed(format!("duplicate key {key:?}")));
        }
        match cur.peek() {
            Some(b',') => cur.pos += 1,
            Some(b'}') => {}
            _ => return Err(malformed("expected ',' or '}' in header".into())),
        }
    }
    if cur.peek().is_some() {
        return Err(malformed("trailing characters after header dict".into()));
    }
    Ok(NpyHeader {
        descr: descr.ok_or_else(|| malformed("missing 'descr'".into()))?,
        fortran_order: fortran.ok_or_else(|| malformed("missing 'fortran_order'".into()))?,
        shape: shape.ok_or_else(|| malformed("missing 'shape'".into()))?,
    })
}
