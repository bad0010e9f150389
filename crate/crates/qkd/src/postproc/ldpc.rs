//! Sparse parity-check codes for syndrome reconciliation.
//!
//! Four 4096-bit codes are shipped, one per supported rate. They are stored
//! as versioned text files under `codes/` and embedded into the library; the
//! files in turn are reproducible from the progressive-edge-growth generator
//! and the construction seed recorded in their headers.
//!
//! File format, one code per file:
//!
//! ```text
//! ldpc v1 <n> <m> <rate> <seed>
//! <sorted column indices of row 0>
//! ...
//! <sorted column indices of row m-1>
//! ```

use crate::bits::Bits;
use crate::postproc::peg::build_parity_rows;
use std::fmt::Write as _;
use std::sync::OnceLock;
use thiserror::Error;

/// Uniform column degree of generated codes.
pub const COLUMN_DEGREE: usize = 3;

/// Block length of the shipped reconciliation codes.
pub const BLOCK_BITS: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum LdpcError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("block length {0} is not a positive multiple of 64")]
    BadLength(usize),
    #[error("rate {0} outside (0, 1)")]
    BadRate(f64),
    #[error("rate {0} leaves too few checks for degree-{COLUMN_DEGREE} columns")]
    TooFewChecks(f64),
}

/// The four reconciliation rates, ordered from most to least redundant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeRate {
    R50,
    R65,
    R75,
    R90,
}

impl CodeRate {
    pub const ALL: [CodeRate; 4] = [CodeRate::R50, CodeRate::R65, CodeRate::R75, CodeRate::R90];

    pub fn label(self) -> f64 {
        match self {
            CodeRate::R50 => 0.50,
            CodeRate::R65 => 0.65,
            CodeRate::R75 => 0.75,
            CodeRate::R90 => 0.90,
        }
    }

    /// Wire identifier.
    pub fn id(self) -> u8 {
        match self {
            CodeRate::R50 => 0,
            CodeRate::R65 => 1,
            CodeRate::R75 => 2,
            CodeRate::R90 => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<CodeRate> {
        CodeRate::ALL.into_iter().find(|r| r.id() == id)
    }
}

/// A parity-check matrix in row form plus its construction pedigree.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcCode {
    n: usize,
    rows: Vec<Vec<u32>>,
    rate_label: f64,
    seed: u64,
}

impl LdpcCode {
    /// Deterministically constructs a fresh code. `n` must be a positive
    /// multiple of 64 and the rate must leave at least `COLUMN_DEGREE` rows.
    pub fn generate(n: usize, rate_label: f64, seed: u64) -> Result<LdpcCode, LdpcError> {
        if n == 0 || n % 64 != 0 {
            return Err(LdpcError::BadLength(n));
        }
        if !(rate_label > 0.0 && rate_label < 1.0) {
            return Err(LdpcError::BadRate(rate_label));
        }
        let m = (n as f64 * (1.0 - rate_label)).round() as usize;
        if m < COLUMN_DEGREE {
            return Err(LdpcError::TooFewChecks(rate_label));
        }
        let (rows, _) = build_parity_rows(n, m, COLUMN_DEGREE, seed);
        Ok(LdpcCode { n, rows, rate_label, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of parity checks, i.e. syndrome bits per block.
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rate_label(&self) -> f64 {
        self.rate_label
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    /// Syndrome s = H x over GF(2): bit c is the parity of the block on the
    /// support of row c.
    pub fn syndrome(&self, block: &Bits) -> Bits {
        assert_eq!(block.len(), self.n, "block length mismatch");
        let mut s = Bits::zeros(self.m());
        for (c, row) in self.rows.iter().enumerate() {
            let mut parity = false;
            for &j in row {
                parity ^= block.get(j as usize);
            }
            if parity {
                s.set(c, true);
            }
        }
        s
    }

    pub fn column_degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.n];
        for row in &self.rows {
            for &j in row {
                deg[j as usize] += 1;
            }
        }
        deg
    }

    pub fn row_degree_bounds(&self) -> (usize, usize) {
        let degs = self.rows.iter().map(|r| r.len());
        (degs.clone().min().unwrap_or(0), degs.max().unwrap_or(0))
    }

    /// Independent girth audit: a 4-cycle exists exactly when two rows share
    /// two columns. Hashes every column pair of every row; quadratic in row
    /// degree but linear in edges, and entirely separate from the BFS logic
    /// that built the matrix.
    pub fn has_four_cycle(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        for row in &self.rows {
            for (i, &a) in row.iter().enumerate() {
                for &b in &row[i + 1..] {
                    if !seen.insert(((a as u64) << 32) | b as u64) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Serializes in the versioned text format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "ldpc v1 {} {} {} {}", self.n, self.m(), self.rate_label, self.seed)
            .unwrap();
        for row in &self.rows {
            let mut first = true;
            for &j in row {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{}", j);
                first = false;
            }
            out.push('\n');
        }
        out
    }

    /// Parses and validates the text format: header shape, row count, sorted
    /// unique in-range indices, no empty columns, and the m / n / rate
    /// relation.
    pub fn from_file_str(text: &str) -> Result<LdpcCode, LdpcError> {
        let parse_err = |line: usize, reason: &str| LdpcError::Parse { line, reason: reason.into() };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "ldpc" || fields[1] != "v1" {
            return Err(parse_err(1, "header must be `ldpc v1 <n> <m> <rate> <seed>`"));
        }
        let n: usize = fields[2].parse().map_err(|_| parse_err(1, "bad n"))?;
        let m: usize = fields[3].parse().map_err(|_| parse_err(1, "bad m"))?;
        let rate_label: f64 = fields[4].parse().map_err(|_| parse_err(1, "bad rate"))?;
        let seed: u64 = fields[5].parse().map_err(|_| parse_err(1, "bad seed"))?;
        if n == 0 || n % 64 != 0 {
            return Err(LdpcError::BadLength(n));
        }
        if !(rate_label > 0.0 && rate_label < 1.0) {
            return Err(LdpcError::BadRate(rate_label));
        }
        if (n as f64 * (1.0 - rate_label)).round() as usize != m {
            return Err(parse_err(1, "m does not match n and rate"));
        }

        let mut rows = Vec::with_capacity(m);
        let mut col_seen = vec![false; n];
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                return Err(parse_err(lineno, "blank row"));
            }
            let mut row = Vec::new();
            let mut prev: Option<u32> = None;
            for tok in line.split_whitespace() {
                let j: u32 = tok
                    .parse()
                    .map_err(|_| parse_err(lineno, &format!("bad column index `{}`", tok)))?;
                if j as usize >= n {
                    return Err(parse_err(lineno, &format!("column {} out of range", j)));
                }
                if prev.is_some_and(|p| p >= j) {
                    return Err(parse_err(lineno, "columns must be strictly increasing"));
                }
                prev = Some(j);
                col_seen[j as usize] = true;
                row.push(j);
            }
            rows.push(row);
        }
        if rows.len() != m {
            return Err(parse_err(
                rows.len() + 1,
                &format!("expected {} rows, found {}", m, rows.len()),
            ));
        }
        if let Some(j) = col_seen.iter().position(|&s| !s) {
            return Err(parse_err(1, &format!("column {} participates in no check", j)));
        }
        Ok(LdpcCode { n, rows, rate_label, seed })
    }

    /// The shipped 4096-bit code for a rate, parsed once from the embedded
    /// files.
    pub fn standard(rate: CodeRate) -> &'static LdpcCode {
        static CODES: [OnceLock<LdpcCode>; 4] =
            [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
        CODES[rate.id() as usize].get_or_init(|| {
            let text = match rate {
                CodeRate::R50 => include_str!("../../codes/ldpc_4096_r050.txt"),
                CodeRate::R65 => include_str!("../../codes/ldpc_4096_r065.txt"),
                CodeRate::R75 => include_str!("../../codes/ldpc_4096_r075.txt"),
                CodeRate::R90 => include_str!("../../codes/ldpc_4096_r090.txt"),
            };
            let code = LdpcCode::from_file_str(text).expect("embedded code file is valid");
            assert_eq!(code.n, BLOCK_BITS);
            assert_eq!(code.rate_label, rate.label());
            code
        })
    }
}
