//! Matrix Market coordinate I/O for matrices and whitespace-separated plain
//! text for vectors. Values are written with shortest-roundtrip formatting so
//! files reload bit-exactly.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{Csr, SparseSpd};

pub fn write_matrix_market<W: Write>(w: &mut W, a: &SparseSpd) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    let lower: Vec<_> = a
        .csr()
        .triplets()
        .into_iter()
        .filter(|&(i, j, _)| i >= j)
        .collect();
    writeln!(w, "{} {} {}", a.n(), a.n(), lower.len())?;
    for (i, j, v) in lower {
        writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
    }
    Ok(())
}

/// Writes a general (rectangular) sparse matrix, e.g. an interpolation.
pub fn write_matrix_market_general<W: Write>(w: &mut W, a: &Csr) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.rows(), a.cols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn read_matrix_market<R: Read>(r: R) -> Result<SparseSpd> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix market file".into()))??;
    let header = header.to_ascii_lowercase();
    if !header.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse(format!("unsupported header {header:?}")));
    }
    let symmetric = header.contains("symmetric");
    if !symmetric && !header.contains("general") {
        return Err(Error::Parse(format!("unsupported symmetry in {header:?}")));
    }
    let mut size_line = None;
    for line in lines.by_ref() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        size_line = Some(line);
        break;
    }
    let size_line = size_line.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad size token {t:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Parse("size line must have three fields".into()));
    }
    let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
    if rows != cols {
        return Err(Error::dim("SPD matrix market file must be square"));
    }
    let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut it = t.split_whitespace();
        let i: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad entry line {t:?}")))?;
        let j: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad entry line {t:?}")))?;
        let v: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad entry line {t:?}")))?;
        if i == 0 || j == 0 {
            return Err(Error::Parse("matrix market entries are 1-based".into()));
        }
        triplets.push((i - 1, j - 1, v));
        if symmetric && i != j {
            triplets.push((j - 1, i - 1, v));
        }
    }
    SparseSpd::new(Csr::from_triplets(rows, cols, &triplets)?)
}

pub fn write_vector<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        writeln!(w, "{x}")?;
    }
    Ok(())
}

pub fn read_vector<R: Read>(r: R) -> Result<Vec<f64>> {
    let reader = BufReader::new(r);
    let mut out = Vec::new();
    for line in reader.lines() {
        for tok in line?.split_whitespace() {
            out.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad vector token {tok:?}")))?,
            );
        }
    }
    Ok(out)
}

pub fn write_matrix_file(path: &Path, a: &SparseSpd) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_matrix_market(&mut f, a)
}

pub fn read_matrix_file(path: &Path) -> Result<SparseSpd> {
    read_matrix_market(std::fs::File::open(path)?)
}

pub fn write_vector_file(path: &Path, v: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_vector(&mut f, v)
}

pub fn read_vector_file(path: &Path) -> Result<Vec<f64>> {
    read_vector(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_roundtrip_is_bit_exact() {
        let a = SparseSpd::from_triplets(
            3,
            &[
                (0, 0, 2.0),
                (1, 1, 2.5),
                (2, 2, 3.0),
                (0, 1, -0.12345678901234567),
                (1, 0, -0.12345678901234567),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &a).unwrap();
        let b = read_matrix_market(buf.as_slice()).unwrap();
        assert_eq!(a.csr().triplets(), b.csr().triplets());
    }

    #[test]
    fn vector_roundtrip() {
        let v = vec![1.0, -2.25, 3.5e-17, 0.1];
        let mut buf = Vec::new();
        write_vector(&mut buf, &v).unwrap();
        assert_eq!(read_vector(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn rejects_malformed_header() {
        let text = b"%%MatrixMarket matrix array real general\n1 1\n1.0\n";
        assert!(read_matrix_market(&text[..]).is_err());
    }
}
