//! Reader and writer for version 1.0 `.npy` files holding little-endian
//! `f4`/`f8` arrays in C order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = 10;
const ALIGN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NpyArray {
    /// Interprets a 1-D or 2-D array as a matrix; 1-D becomes a column.
    pub fn into_matrix(self) -> Result<Matrix> {
        let (r, c) = match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::Format {
                    offset: 0,
                    reason: format!("expected a 1-D or 2-D array, got shape {other:?}"),
                })
            }
        };
        Matrix::from_vec(r, c, self.data)
    }
}

fn header_text(dtype: DType, shape: &[usize]) -> String {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut h = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {dims}, }}",
        dtype.descr()
    );
    let total = PREAMBLE + h.len() + 1;
    let pad = (ALIGN - total % ALIGN) % ALIGN;
    h.extend(std::iter::repeat_n(' ', pad));
    h.push('\n');
    h
}

pub fn encode(dtype: DType, shape: &[usize], data: &[f64]) -> Vec<u8> {
    let header = header_text(dtype, shape);
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + data.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match dtype {
        DType::F32 => data
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dtype, &[m.rows(), m.cols()], m.as_slice());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    read(path)?.into_matrix()
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < PREAMBLE {
        return Err(format_err(bytes.len(), "truncated preamble"));
    }
    if &bytes[..6] != MAGIC {
        return Err(format_err(0, "bad magic, expected \\x93NUMPY"));
    }
    if bytes[6..8] != [1, 0] {
        return Err(format_err(6, format!("unsupported version {}.{}", bytes[6], bytes[7])));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE..data_start])
        .map_err(|e| format_err(PREAMBLE + e.valid_up_to(), "header is not ASCII"))?;
    let header = parse_header(text).map_err(|(off, reason)| format_err(PREAMBLE + off, reason))?;
    let dtype = match header.descr.as_str() {
        "<f4" => DType::F32,
        "<f8" => DType::F64,
        other => return Err(format_err(PREAMBLE, format!("unsupported descr {other:?}"))),
    };
    if header.fortran_order {
        return Err(format_err(PREAMBLE, "fortran_order arrays are not supported"));
    }
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(PREAMBLE, "shape overflows"))?;
    let body = &bytes[data_start..];
    let need = count * dtype.size();
    if body.len() != need {
        return Err(format_err(
            data_start + body.len().min(need),
            format!("data section holds {} bytes, shape needs {need}", body.len()),
        ));
    }
    let data = match dtype {
        DType::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(NpyArray {
        dtype,
        shape: header.shape,
        data,
    })
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal in the header. Errors carry the offset
/// within the header text.
fn parse_header(text: &str) -> std::result::Result<Header, (usize, String)> {
    let mut p = Parser {
        s: text.as_bytes(),
        pos: 0,
    };
    p.ws();
    p.expect(b'{')?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    loop {
        p.ws();
        if p.peek() == Some(b'}') {
            break;
        }
        let key_at = p.pos;
        let key = p.string()?;
        p.ws();
        p.expect(b':')?;
        p.ws();
        match key.as_str() {
            "descr" => descr = Some(p.string()?),
            "fortran_order" => fortran = Some(p.boolean()?),
            "shape" => shape = Some(p.tuple()?),
            other => return Err((key_at, format!("unexpected header key {other:?}"))),
        }
        p.ws();
        match p.peek() {
            Some(b',') => p.pos += 1,
            Some(b'}') => {}
            _ => return Err((p.pos, "expected ',' or '}'".into())),
        }
    }
    let missing = |k: &str| (0, format!("header missing key {k:?}"));
    Ok(Header {
        descr: descr.ok_or_else(|| missing("descr"))?,
        fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
        shape: shape.ok_or_else(|| missing("shape"))?,
    })
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\n' | b'\t' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), (usize, String)> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err((self.pos, format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> std::result::Result<String, (usize, String)> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err((self.pos, "expected a quoted string".into())),
        };
        self.pos += 1;
        let start = self.pos;
        while self.peek().is_some_and(|c| c != quote) {
            self.pos += 1;
        }
        if self.peek().is_none() {
            return Err((start, "unterminated string".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> std::result::Result<bool, (usize, String)> {
        for (word, v) in [("True", true), ("False", false)] {
            if self.s[self.pos..].starts_with(word.as_bytes()) {
                self.pos += word.len();
                return Ok(v);
            }
        }
        Err((self.pos, "expected True or False".into()))
    }

    fn tuple(&mut self) -> std::result::Result<Vec<usize>, (usize, String)> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.ws();
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(dims);
            }
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            dims.push(
                digits
                    .parse()
                    .map_err(|_| (start, "expected a dimension".to_string()))?,
            );
            self.ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return Err((self.pos, "expected ',' or ')'".into())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_aligned_and_parseable() {
        let bytes = encode(DType::F64, &[3, 4], &[0.0; 12]);
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((PREAMBLE + header_len) % ALIGN, 0);
        assert_eq!(bytes[PREAMBLE + header_len - 1], b'\n');
        let arr = decode(&bytes).unwrap();
        assert_eq!(arr.shape, vec![3, 4]);
        assert_eq!(arr.dtype, DType::F64);
    }

    #[test]
    fn reads_numpy_written_header_variants() {
        // Header exactly as numpy 1.x writes it for a 1-D float32 array.
        let mut bytes = Vec::new();
        let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }";
        let mut h = header.to_string();
        while !(PREAMBLE + h.len() + 1).is_multiple_of(16) {
            h.push(' ');
        }
        h.push('\n');
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(h.len() as u16).to_le_bytes());
        bytes.extend_from_slice(h.as_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let arr = decode(&bytes).unwrap();
        assert_eq!(arr.data, vec![1.5, -2.0]);
        assert_eq!(arr.into_matrix().unwrap().shape(), (2, 1));
    }

    fn replace_bytes(bytes: &[u8], from: &[u8], to: &[u8]) -> Vec<u8> {
        let at = bytes.windows(from.len()).position(|w| w == from).unwrap();
        let mut out = bytes.to_vec();
        out[at..at + to.len()].copy_from_slice(to);
        out
    }

    #[test]
    fn rejects_unsupported_inputs() {
        let good = encode(DType::F32, &[2, 2], &[1.0; 4]);
        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));

        let mut v2 = good.clone();
        v2[6] = 2;
        assert!(matches!(decode(&v2), Err(Error::Format { offset: 6, .. })));

        assert!(decode(&good[..good.len() - 1]).is_err());
        assert!(decode(&good[..5]).is_err());

        let fortran = replace_bytes(&good, b"False", b"True ");
        assert!(decode(&fortran).unwrap_err().to_string().contains("fortran"));

        let big_endian = replace_bytes(&good, b"<f4", b">f4");
        assert!(decode(&big_endian).unwrap_err().to_string().contains("descr"));
    }

    proptest! {
        #[test]
        fn round_trip_at_stored_precision(rows in 0usize..12, cols in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1e6..1e6)).collect();
            let f64_back = decode(&encode(DType::F64, &[rows, cols], &data)).unwrap();
            prop_assert_eq!(&f64_back.data, &data);
            let f32_back = decode(&encode(DType::F32, &[rows, cols], &data)).unwrap();
            let expected: Vec<f64> = data.iter().map(|&v| v as f32 as f64).collect();
            prop_assert_eq!(&f32_back.data, &expected);
            // Re-encoding the decoded f32 data reproduces the same bytes.
            prop_assert_eq!(encode(DType::F32, &[rows, cols], &f32_back.data), encode(DType::F32, &[rows, cols], &data));
        }
    }
}
