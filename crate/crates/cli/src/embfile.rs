//! Binary embedding container.
//!
//! Layout: the 8-byte magic `SGRSEMB1`, a little-endian `u32` header length,
//! a UTF-8 header of `key=value` lines, then `n_tokens * dim` little-endian
//! `f32` values in row-major order.
//!
//! ```text
//! n_tokens=4
//! dim=3
//! special=0,3
//! grid=2x2        (optional)
//! codes=1,0,2,2   (optional)
//! ```
//!
//! Headers must be in this canonical form, so a file that parses is rewritten
//! byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use segros::{Matrix, TokenSequence};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"SGRSEMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub n_tokens: usize,
    pub dim: usize,
    pub special: Vec<usize>,
    pub grid: Option<(usize, usize)>,
    pub codes: Option<Vec<usize>>,
    pub data: Vec<f32>,
}

fn parse_err(msg: impl Into<String>) -> CliError {
    CliError::Parse(msg.into())
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list(value: &str, key: &str) -> CliResult<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            v.parse()
                .map_err(|_| parse_err(format!("bad entry `{v}` in `{key}`")))
        })
        .collect()
}

impl EmbeddingFile {
    pub fn from_sequence(seq: &TokenSequence) -> Self {
        let special = (0..seq.len()).filter(|&i| seq.special_flags()[i]).collect();
        Self {
            n_tokens: seq.len(),
            dim: seq.dim(),
            special,
            grid: None,
            codes: None,
            data: seq.embeddings().data().to_vec(),
        }
    }

    pub fn with_grid(mut self, rows: usize, cols: usize) -> Self {
        self.grid = Some((rows, cols));
        self
    }

    pub fn with_codes(mut self, codes: Vec<usize>) -> Self {
        self.codes = Some(codes);
        self
    }

    pub fn to_sequence(&self) -> CliResult<TokenSequence> {
        let m = Matrix::new(self.n_tokens, self.dim, self.data.clone())
            .map_err(|e| parse_err(e.to_string()))?;
        let mut flags = vec![false; self.n_tokens];
        for &i in &self.special {
            flags[i] = true;
        }
        TokenSequence::new(m, flags).map_err(|e| parse_err(e.to_string()))
    }

    fn header(&self) -> String {
        let mut h = String::new();
        let _ = writeln!(h, "n_tokens={}", self.n_tokens);
        let _ = writeln!(h, "dim={}", self.dim);
        let _ = writeln!(h, "special={}", join(&self.special));
        if let Some((r, c)) = self.grid {
            let _ = writeln!(h, "grid={r}x{c}");
        }
        if let Some(codes) = &self.codes {
            let _ = writeln!(h, "codes={}", join(codes));
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(12 + header.len() + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < 12 {
            return Err(parse_err(format!(
                "file truncated at byte offset {}: preamble needs 12 bytes",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(parse_err("bad magic, expected SGRSEMB1"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let payload_start = 12 + header_len;
        if bytes.len() < payload_start {
            return Err(parse_err(format!(
                "header truncated at byte offset {}: expected {header_len} header bytes",
                bytes.len()
            )));
        }
        let header = std::str::from_utf8(&bytes[12..payload_start])
            .map_err(|e| parse_err(format!("header is not UTF-8: {e}")))?;
        let mut file = Self::parse_header(header)?;
        if file.header() != header {
            return Err(parse_err("header is not in canonical form"));
        }

        let expected = file.n_tokens * file.dim * 4;
        let payload = &bytes[payload_start..];
        if payload.len() < expected {
            return Err(parse_err(format!(
                "payload truncated at byte offset {}: expected {expected} payload bytes starting at {payload_start}",
                bytes.len()
            )));
        }
        if payload.len() > expected {
            return Err(parse_err(format!(
                "{} trailing bytes after payload at byte offset {}",
                payload.len() - expected,
                payload_start + expected
            )));
        }
        file.data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(file)
    }

    fn parse_header(header: &str) -> CliResult<Self> {
        let mut file = Self {
            n_tokens: 0,
            dim: 0,
            special: Vec::new(),
            grid: None,
            codes: None,
            data: Vec::new(),
        };
        let mut seen = Vec::new();
        for line in header.lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("header line `{line}` is not key=value")))?;
            if seen.contains(&key) {
                return Err(parse_err(format!("duplicate header key `{key}`")));
            }
            seen.push(key);
            let num = |v: &str| -> CliResult<usize> {
                v.parse()
                    .map_err(|_| parse_err(format!("bad value `{v}` for `{key}`")))
            };
            match key {
                "n_tokens" => file.n_tokens = num(value)?,
                "dim" => file.dim = num(value)?,
                "special" => file.special = parse_list(value, key)?,
                "grid" => {
                    let (r, c) = value
                        .split_once('x')
                        .ok_or_else(|| parse_err(format!("grid `{value}` is not RxC")))?;
                    file.grid = Some((num(r)?, num(c)?));
                }
                "codes" => file.codes = Some(parse_list(value, key)?),
                other => return Err(parse_err(format!("unknown header key `{other}`"))),
            }
        }
        for required in ["n_tokens", "dim", "special"] {
            if !seen.contains(&required) {
                return Err(parse_err(format!("header lacks `{required}`")));
            }
        }
        if file.n_tokens == 0 || file.dim == 0 {
            return Err(parse_err("n_tokens and dim must be positive"));
        }
        if file.special.iter().any(|&i| i >= file.n_tokens) {
            return Err(parse_err("special index out of range"));
        }
        if file.special.windows(2).any(|w| w[0] >= w[1]) {
            return Err(parse_err("special indices must be strictly increasing"));
        }
        if let Some(codes) = &file.codes {
            if codes.len() != file.n_tokens {
                return Err(parse_err(format!(
                    "{} codes for {} tokens",
                    codes.len(),
                    file.n_tokens
                )));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }
}
