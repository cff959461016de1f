//! Matrix Market (coordinate, real, symmetric) export of pencils.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::DiscretePencil;
use crate::band::SymBand;
use crate::error::{Error, Result};

/// Write the lower triangle of a symmetric matrix given as `(i, j, v)`
/// triples with `i >= j` (0-based). Values use 17 significant digits, so a
/// read-back reproduces them exactly.
pub fn write_matrix_market<W: Write>(
    w: &mut W,
    dim: usize,
    entries: &[(usize, usize, f64)],
    comment: &str,
) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    for line in comment.lines() {
        writeln!(w, "% {line}")?;
    }
    writeln!(w, "{dim} {dim} {}", entries.len())?;
    for &(i, j, v) in entries {
        writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

/// Read a file written by [`write_matrix_market`]: dimension and 0-based triples.
pub fn read_matrix_market<R: Read>(r: R) -> Result<(usize, Vec<(usize, usize, f64)>)> {
    let bad = |msg: &str| Error::domain(format!("matrix market: {msg}"));
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))??;
    if !header.starts_with("%%MatrixMarket matrix coordinate real symmetric") {
        return Err(bad("unsupported header"));
    }
    let mut size = None;
    let mut entries = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        match size {
            None => {
                if f.len() != 3 {
                    return Err(bad("size line"));
                }
                let d: usize = f[0].parse().map_err(|_| bad("size"))?;
                let nnz: usize = f[2].parse().map_err(|_| bad("nnz"))?;
                size = Some(d);
                entries.reserve(nnz);
            }
            Some(_) => {
                if f.len() != 3 {
                    return Err(bad("entry line"));
                }
                let i: usize = f[0].parse().map_err(|_| bad("row"))?;
                let j: usize = f[1].parse().map_err(|_| bad("col"))?;
                let v: f64 = f[2].parse().map_err(|_| bad("value"))?;
                entries.push((i - 1, j - 1, v));
            }
        }
    }
    Ok((size.ok_or_else(|| bad("missing size line"))?, entries))
}

fn global_entries(pencil: &DiscretePencil, pick: impl Fn(&super::Block) -> &SymBand) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    let mut off = 0;
    for b in &pencil.blocks {
        let mat = pick(b);
        for _ in 0..b.multiplicity {
            out.extend(mat.lower_entries().map(|(i, j, v)| (i + off, j + off, v)));
            off += b.dim();
        }
    }
    out
}

/// Write `<stem>_A.mtx` and `<stem>_M.mtx` into `dir`; returns both paths.
pub fn export_pencil(pencil: &DiscretePencil, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let dim = pencil.dim();
    let describe = pencil
        .params
        .map(|p| format!("n={} m={} p={} sigma={}", p.n, p.m, p.p, p.sigma))
        .unwrap_or_else(|| "explicit pencil".into());
    let mut paths = Vec::new();
    for (tag, name) in [("A", "weighted stiffness"), ("M", "mass")] {
        let path = dir.join(format!("{stem}_{tag}.mtx"));
        let entries = if tag == "A" { global_entries(pencil, |b| &b.a) } else { global_entries(pencil, |b| &b.m) };
        let mut w = BufWriter::new(File::create(&path)?);
        write_matrix_market(&mut w, dim, &entries, &format!("{name}, {describe}"))?;
        w.flush()?;
        paths.push(path);
    }
    let m = paths.pop().unwrap();
    Ok((paths.pop().unwrap(), m))
}
