//! Matrix Market coordinate I/O (real, general or symmetric).

use super::sparse::SparseMatrix;
use crate::{Error, Result};
use std::io::{BufRead, Write};

pub fn read_matrix_market<R: BufRead>(reader: R) -> Result<SparseMatrix> {
    let mut lines = reader.lines().enumerate();
    let (lineno, header) = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break (i + 1, line);
                }
            }
            None => {
                return Err(Error::Parse {
                    line: 0,
                    msg: "empty matrix market stream".into(),
                })
            }
        }
    };
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() < 5 || !head[0].eq_ignore_ascii_case("%%MatrixMarket") {
        return Err(Error::Parse {
            line: lineno,
            msg: "expected %%MatrixMarket header".into(),
        });
    }
    if !head[1].eq_ignore_ascii_case("matrix")
        || !head[2].eq_ignore_ascii_case("coordinate")
        || !head[3].eq_ignore_ascii_case("real")
    {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("unsupported matrix market type: {}", header.trim()),
        });
    }
    let symmetric = match head[4].to_ascii_lowercase().as_str() {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("unsupported symmetry: {other}"),
            })
        }
    };

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match dims {
            None => {
                if toks.len() != 3 {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "expected 'rows cols nnz' size line".into(),
                    });
                }
                let parse = |s: &str| {
                    s.parse::<usize>().map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    })
                };
                dims = Some((parse(toks[0])?, parse(toks[1])?, parse(toks[2])?));
            }
            Some((nr, nc, _)) => {
                if toks.len() != 3 {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "expected 'row col value' entry".into(),
                    });
                }
                let r: usize = toks[0].parse().map_err(|e: std::num::ParseIntError| {
                    Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    }
                })?;
                let c: usize = toks[1].parse().map_err(|e: std::num::ParseIntError| {
                    Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    }
                })?;
                let v: f64 = toks[2].parse().map_err(|e: std::num::ParseFloatError| {
                    Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    }
                })?;
                if r == 0 || c == 0 || r > nr || c > nc {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("index ({r},{c}) out of bounds for {nr}x{nc}"),
                    });
                }
                triplets.push((r - 1, c - 1, v));
                if symmetric && r != c {
                    triplets.push((c - 1, r - 1, v));
                }
            }
        }
    }
    let (nr, nc, _nnz) = dims.ok_or(Error::Parse {
        line: 0,
        msg: "missing size line".into(),
    })?;
    SparseMatrix::from_triplets(nr, nc, &triplets)
}

pub fn write_matrix_market<W: Write>(w: &mut W, m: &SparseMatrix) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (i, j, v) in m.iter() {
        // shortest round-trip float formatting keeps the file bit-exact
        writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn read_matrix_market_file(path: &std::path::Path) -> Result<SparseMatrix> {
    let f = std::fs::File::open(path)?;
    read_matrix_market(std::io::BufReader::new(f))
}

pub fn write_matrix_market_file(path: &std::path::Path, m: &SparseMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_market(&mut f, m)
}
