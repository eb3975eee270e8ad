//! On-disk formats: binary caches for lattice kernels, DtN samples, and ABC
//! coefficients, plus the CSV observable/snapshot schemas.
//!
//! All binary formats are little-endian with fixed-width fields:
//!
//! * `QGF1` — lattice Green's function table: magic, `dim` (u32), `h` (f64),
//!   `s` (two f64), stencil id (u32), `quad_n` (u32), offset count (u64),
//!   then one record per canonical offset (three i32, value as two f64).
//! * `QDTN` — DtN kernel sample: magic, grid/stencil hash (32 bytes),
//!   `s` (two f64), `n_Γ` (u64), flags (u8: bit 0 = derivative block
//!   present, bit 1 = dense-oracle provenance), the kernel entries
//!   row-major (two f64 each), then the optional `K′` block in the same
//!   layout.
//! * `QABC` — boundary-condition coefficients: magic, order (u32), variant
//!   tag (u8), node count (u64) and nodes (f64), `n_Γ` (u64), then the
//!   coefficient matrices row-major complex in fixed order (`M`; `A, B`;
//!   `A1, A0, B1, B0`).
//!
//! CSV files carry a header line; floats are written with Rust's shortest
//! round-trip representation, so identical data produces byte-identical
//! files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::abc::{AbcCoefficients, AbcVariant, RationalAbc};
use crate::dtn::{DtnSample, Provenance};
use crate::error::{Error, Result};
use crate::greens::GreensTable;
use crate::lattice::{Grid, IndexPartition};
use crate::linalg::{c, C64, CMat, CVec};

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), detail: detail.into() }
}

fn check_magic(r: &mut impl Read, path: &Path, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(bad(
            path,
            format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            ),
        ));
    }
    Ok(())
}

fn write_c64(w: &mut impl Write, z: C64) -> Result<()> {
    w.write_f64::<LittleEndian>(z.re)?;
    w.write_f64::<LittleEndian>(z.im)?;
    Ok(())
}

fn read_c64(r: &mut impl Read) -> Result<C64> {
    let re = r.read_f64::<LittleEndian>()?;
    let im = r.read_f64::<LittleEndian>()?;
    Ok(c(re, im))
}

fn write_cmat(w: &mut impl Write, m: &CMat) -> Result<()> {
    for z in m.iter() {
        write_c64(w, *z)?;
    }
    Ok(())
}

fn read_cmat(r: &mut impl Read, nrows: usize, ncols: usize) -> Result<CMat> {
    let mut data = Vec::with_capacity(nrows * ncols);
    for _ in 0..nrows * ncols {
        data.push(read_c64(r)?);
    }
    CMat::from_shape_vec((nrows, ncols), data)
        .map_err(|e| Error::Runtime(format!("matrix shape: {e}")))
}

/// Serialize a Green's function table (`QGF1`).
pub fn write_greens_table(path: &Path, table: &GreensTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"QGF1")?;
    w.write_u32::<LittleEndian>(table.dim as u32)?;
    w.write_f64::<LittleEndian>(table.h)?;
    write_c64(&mut w, table.s)?;
    w.write_u32::<LittleEndian>(table.stencil_id)?;
    w.write_u32::<LittleEndian>(table.quad_n)?;
    let entries = table.entries();
    w.write_u64::<LittleEndian>(entries.len() as u64)?;
    for (off, val) in entries {
        for comp in off {
            w.write_i32::<LittleEndian>(comp)?;
        }
        write_c64(&mut w, val)?;
    }
    w.flush()?;
    Ok(())
}

/// Deserialize a Green's function table (`QGF1`).
pub fn read_greens_table(path: &Path) -> Result<GreensTable> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, path, b"QGF1")?;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if dim != 1 && dim != 3 {
        return Err(bad(path, format!("unsupported dimension {dim}")));
    }
    let h = r.read_f64::<LittleEndian>()?;
    let s = read_c64(&mut r)?;
    let stencil_id = r.read_u32::<LittleEndian>()?;
    let quad_n = r.read_u32::<LittleEndian>()?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut off = [0i32; 3];
        for comp in &mut off {
            *comp = r.read_i32::<LittleEndian>()?;
        }
        entries.push((off, read_c64(&mut r)?));
    }
    GreensTable::from_entries(dim, h, s, stencil_id, quad_n, &entries)
        .map_err(|e| bad(path, format!("inconsistent table payload: {e}")))
}

/// Serialize a DtN kernel sample (`QDTN`).
pub fn write_dtn_sample(path: &Path, sample: &DtnSample) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"QDTN")?;
    w.write_all(&sample.meta_hash)?;
    write_c64(&mut w, sample.s)?;
    let n = sample.k.nrows();
    w.write_u64::<LittleEndian>(n as u64)?;
    let mut flags = 0u8;
    if sample.k_prime.is_some() {
        flags |= 1;
    }
    if sample.provenance == Provenance::DenseOracle {
        flags |= 2;
    }
    w.write_u8(flags)?;
    write_cmat(&mut w, &sample.k)?;
    if let Some(kp) = &sample.k_prime {
        write_cmat(&mut w, kp)?;
    }
    w.flush()?;
    Ok(())
}

/// Deserialize a DtN kernel sample (`QDTN`).
pub fn read_dtn_sample(path: &Path) -> Result<DtnSample> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, path, b"QDTN")?;
    let mut meta_hash = [0u8; 32];
    r.read_exact(&mut meta_hash)?;
    let s = read_c64(&mut r)?;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let flags = r.read_u8()?;
    if flags & !3 != 0 {
        return Err(bad(path, format!("unknown flag bits {flags:#04x}")));
    }
    let k = read_cmat(&mut r, n, n)?;
    let k_prime = if flags & 1 != 0 { Some(read_cmat(&mut r, n, n)?) } else { None };
    let provenance =
        if flags & 2 != 0 { Provenance::DenseOracle } else { Provenance::BoundaryElement };
    Ok(DtnSample { s, k, k_prime, provenance, meta_hash })
}

/// Serialize ABC coefficients (`QABC`).
pub fn write_abc(path: &Path, abc: &RationalAbc) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"QABC")?;
    w.write_u32::<LittleEndian>(abc.order as u32)?;
    w.write_u8(abc.variant.tag())?;
    w.write_u64::<LittleEndian>(abc.interp_points.len() as u64)?;
    for &node in &abc.interp_points {
        w.write_f64::<LittleEndian>(node)?;
    }
    w.write_u64::<LittleEndian>(abc.n_gamma() as u64)?;
    match &abc.coeffs {
        AbcCoefficients::Zeroth { m } => write_cmat(&mut w, m)?,
        AbcCoefficients::First { a, b } => {
            write_cmat(&mut w, a)?;
            write_cmat(&mut w, b)?;
        }
        AbcCoefficients::Second { a1, a0, b1, b0 } => {
            for m in [a1, a0, b1, b0] {
                write_cmat(&mut w, m)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Deserialize ABC coefficients (`QABC`).
///
/// The fit residual is a build-time diagnostic and is not persisted.
pub fn read_abc(path: &Path) -> Result<RationalAbc> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, path, b"QABC")?;
    let order = r.read_u32::<LittleEndian>()? as usize;
    let variant = AbcVariant::from_tag(r.read_u8()?)
        .map_err(|e| bad(path, e.to_string()))?;
    let n_nodes = r.read_u64::<LittleEndian>()? as usize;
    let mut interp_points = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        interp_points.push(r.read_f64::<LittleEndian>()?);
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let coeffs = match order {
        0 => AbcCoefficients::Zeroth { m: read_cmat(&mut r, n, n)? },
        1 => AbcCoefficients::First {
            a: read_cmat(&mut r, n, n)?,
            b: read_cmat(&mut r, n, n)?,
        },
        2 => AbcCoefficients::Second {
            a1: read_cmat(&mut r, n, n)?,
            a0: read_cmat(&mut r, n, n)?,
            b1: read_cmat(&mut r, n, n)?,
            b0: read_cmat(&mut r, n, n)?,
        },
        o => return Err(bad(path, format!("unsupported rational order {o}"))),
    };
    Ok(RationalAbc { order, variant, interp_points, coeffs, fit_residual: None })
}

/// One row of the propagation observable series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableRow {
    /// Simulation time.
    pub t: f64,
    /// Interior norm (squared L², trapezoid-free grid sum × hᵈ).
    pub n: f64,
    /// Reference norm (exact solution or reference run; NaN when absent).
    pub n_ref: f64,
    /// Auxiliary-variable norm.
    pub w: f64,
    /// Interior error against the reference (NaN when absent).
    pub err_n: f64,
}

/// Mean-field runs append particle number and total energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdhfObservableRow {
    /// Shared observable columns.
    pub base: ObservableRow,
    /// Total nucleon number on the interior.
    pub nucleons: f64,
    /// Total mean-field energy (MeV).
    pub energy: f64,
}

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}

/// Write the observable series CSV (`t,N,N_ref,W,err_N`).
pub fn write_observables(path: &Path, rows: &[ObservableRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,N,N_ref,W,err_N")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_float(r.t),
            fmt_float(r.n),
            fmt_float(r.n_ref),
            fmt_float(r.w),
            fmt_float(r.err_n)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Write the mean-field observable series CSV
/// (`t,N,N_ref,W,err_N,nucleons,energy`).
pub fn write_tdhf_observables(path: &Path, rows: &[TdhfObservableRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,N,N_ref,W,err_N,nucleons,energy")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_float(r.base.t),
            fmt_float(r.base.n),
            fmt_float(r.base.n_ref),
            fmt_float(r.base.w),
            fmt_float(r.base.err_n),
            fmt_float(r.nucleons),
            fmt_float(r.energy)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Write a wavefunction snapshot CSV (`x[,y,z],re,im,abs2`), one row per
/// interior node in grid scan order.
pub fn write_snapshot(
    path: &Path,
    grid: &Grid,
    part: &IndexPartition,
    phi: &CVec,
) -> Result<()> {
    let n_int = grid.n_interior();
    if phi.len() != n_int {
        return Err(Error::Validation(format!(
            "snapshot field has {} entries, interior has {n_int}",
            phi.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    match grid.dim {
        1 => writeln!(w, "x,re,im,abs2")?,
        3 => writeln!(w, "x,y,z,re,im,abs2")?,
        d => return Err(Error::Validation(format!("snapshots support 1D and 3D, got {d}D"))),
    }
    for lex in 0..n_int {
        let xyz = grid.coord(&grid.multi_index(lex));
        let z = phi[part.canon_of_lex[lex]];
        for d in 0..grid.dim {
            write!(w, "{},", fmt_float(xyz[d]))?;
        }
        writeln!(w, "{},{},{}", fmt_float(z.re), fmt_float(z.im), fmt_float(z.norm_sqr()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a numeric CSV with a header line; `nan` parses to NaN.
pub fn read_csv_numeric(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(bad(path, "empty file, expected a header line")),
    };
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                if tok.eq_ignore_ascii_case("nan") {
                    Ok(f64::NAN)
                } else {
                    tok.parse::<f64>().map_err(|e| {
                        bad(path, format!("line {}: bad number {tok:?}: {e}", idx + 2))
                    })
                }
            })
            .collect::<Result<_>>()?;
        if row.len() != columns.len() {
            return Err(bad(
                path,
                format!("line {}: {} fields, header has {}", idx + 2, row.len(), columns.len()),
            ));
        }
        rows.push(row);
    }
    Ok((columns, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::greens_table_1d;
    use crate::lattice::{build_grid, partition, Stencil};

    #[test]
    fn greens_table_round_trip() {
        let st = Stencil::classic(2).unwrap();
        let table = greens_table_1d(&st, 0.1, c(10.0, 0.0), 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.qgf1");
        write_greens_table(&path, &table).unwrap();
        let back = read_greens_table(&path).unwrap();
        assert_eq!(back.dim, 1);
        assert_eq!(back.stencil_id, table.stencil_id);
        assert_eq!(back.nmax, table.nmax);
        for j in 0..=12 {
            assert_eq!(back.get([j, 0, 0]), table.get([j, 0, 0]));
        }
    }

    #[test]
    fn dtn_sample_round_trip() {
        let k = CMat::from_shape_fn((3, 3), |(i, j)| c(i as f64, j as f64));
        let sample = DtnSample {
            s: c(10.0, 0.0),
            k: k.clone(),
            k_prime: Some(&k * c(0.0, 1.0)),
            provenance: Provenance::DenseOracle,
            meta_hash: [7; 32],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.qdtn");
        write_dtn_sample(&path, &sample).unwrap();
        let back = read_dtn_sample(&path).unwrap();
        assert_eq!(back.s, sample.s);
        assert_eq!(back.meta_hash, sample.meta_hash);
        assert_eq!(back.provenance, Provenance::DenseOracle);
        assert_eq!(back.k, sample.k);
        assert_eq!(back.k_prime.unwrap(), sample.k_prime.unwrap());
    }

    #[test]
    fn abc_round_trip() {
        let abc = RationalAbc {
            order: 1,
            variant: AbcVariant::FirstTwopoint,
            interp_points: vec![10.0, 20.0],
            coeffs: AbcCoefficients::First {
                a: CMat::from_elem((2, 2), c(1.0, -2.0)),
                b: CMat::from_elem((2, 2), c(-3.0, 0.5)),
            },
            fit_residual: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qabc");
        write_abc(&path, &abc).unwrap();
        let back = read_abc(&path).unwrap();
        assert_eq!(back.order, 1);
        assert_eq!(back.variant, AbcVariant::FirstTwopoint);
        assert_eq!(back.interp_points, abc.interp_points);
        if let (AbcCoefficients::First { a, b }, AbcCoefficients::First { a: a0, b: b0 }) =
            (&back.coeffs, &abc.coeffs)
        {
            assert_eq!(a, a0);
            assert_eq!(b, b0);
        } else {
            panic!("coefficient order lost in round trip");
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        let err = read_dtn_sample(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn observables_csv_deterministic_and_readable() {
        let rows = vec![
            ObservableRow { t: 0.0, n: 1.283181, n_ref: 1.283181, w: 0.0, err_n: 0.0 },
            ObservableRow { t: 0.5, n: 0.5, n_ref: f64::NAN, w: 1e-3, err_n: f64::NAN },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_observables(&p1, &rows).unwrap();
        write_observables(&p2, &rows).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let (cols, data) = read_csv_numeric(&p1).unwrap();
        assert_eq!(cols, vec!["t", "N", "N_ref", "W", "err_N"]);
        assert_eq!(data.len(), 2);
        assert_eq!(data[0][1], 1.283181);
        assert!(data[1][2].is_nan());
    }

    #[test]
    fn snapshot_matches_grid_scan() {
        let st = Stencil::classic(1).unwrap();
        let grid = build_grid(1, &[0.0], &[0.4], 0.1, &st).unwrap();
        let part = partition(&grid, &st).unwrap();
        let n = grid.n_interior();
        let phi = CVec::from_shape_fn(n, |i| c(i as f64, 0.0));
        // phi is canonical; undo the ordering so node k carries value k.
        let mut lex_phi = phi.clone();
        for lex in 0..n {
            lex_phi[part.canon_of_lex[lex]] = c(lex as f64, 0.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.csv");
        write_snapshot(&path, &grid, &part, &lex_phi).unwrap();
        let (cols, data) = read_csv_numeric(&path).unwrap();
        assert_eq!(cols, vec!["x", "re", "im", "abs2"]);
        assert_eq!(data.len(), n);
        for (k, row) in data.iter().enumerate() {
            assert!((row[0] - 0.1 * k as f64).abs() < 1e-12);
            assert_eq!(row[1], k as f64);
        }
    }
}
