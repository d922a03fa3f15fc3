//! CSV tables and binary state snapshots.
//!
//! Snapshot layout, all little-endian: `n: u64`, `half_width: f64`, `t: f64`, then `n`
//! pairs `(re: f64, im: f64)` of spectral coefficients in DFT order.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gauge::{dump_rows, GaugeMap};
use crate::solver::Trajectory;
use crate::spectral::{make_grid, SpectralState};

/// Write `# ` comment lines, a header row and the data rows.
pub fn write_csv(out: &mut impl Write, comments: &[String], columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", columns.join(","))?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::Invalid(format!("row has {} values for {} columns", row.len(), columns.len())));
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Parse a table written by [`write_csv`]; returns column names and rows.
pub fn read_csv(input: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = input.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Invalid("empty table".into()))?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row: std::result::Result<Vec<f64>, _> = l.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| Error::Invalid(format!("row {}: {e}", i + 1)))?;
        if row.len() != columns.len() {
            return Err(Error::Invalid(format!("row {} has {} values for {} columns", i + 1, row.len(), columns.len())));
        }
        rows.push(row);
    }
    Ok((columns, rows))
}

/// `(t, x, u)` rows for every stored state.
pub fn trajectory_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for (t, st) in traj.times.iter().zip(&traj.states) {
        for (x, u) in st.grid().nodes().iter().zip(st.to_real()) {
            rows.push(vec![*t, *x, u]);
        }
    }
    rows
}

pub const NORM_COLUMNS: [&str; 7] = ["t", "hs", "seminorm", "sup", "l2", "mass", "dissipation"];

/// One row per stored time with the monitored norms.
pub fn norm_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    let n = &traj.norms;
    (0..n.times.len())
        .map(|i| vec![n.times[i], n.hs[i], n.seminorm[i], n.sup[i], n.l2[i], n.mass[i], n.dissipation[i]])
        .collect()
}

pub const GAUGE_COLUMNS: [&str; 12] = ["x", "A", "A_inv", "h", "h_x", "h_2x", "h_3x", "b", "c", "d", "e", "f"];

pub fn gauge_rows(map: &GaugeMap) -> Vec<Vec<f64>> {
    dump_rows(map).into_iter().map(|r| r.to_vec()).collect()
}

pub fn write_snapshot(out: &mut impl Write, state: &SpectralState, t: f64) -> Result<()> {
    let g = state.grid();
    out.write_all(&(g.num_points() as u64).to_le_bytes())?;
    out.write_all(&g.half_width().to_le_bytes())?;
    out.write_all(&t.to_le_bytes())?;
    for c in state.coefficients() {
        out.write_all(&c.re.to_le_bytes())?;
        out.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

/// Read a snapshot; the state is flagged real when its coefficients are Hermitian.
pub fn read_snapshot(input: &mut impl Read) -> Result<(SpectralState, f64)> {
    let mut b8 = [0u8; 8];
    let mut next = |input: &mut dyn Read| -> Result<[u8; 8]> {
        input.read_exact(&mut b8)?;
        Ok(b8)
    };
    let n = u64::from_le_bytes(next(input)?) as usize;
    let l = f64::from_le_bytes(next(input)?);
    let t = f64::from_le_bytes(next(input)?);
    let grid = make_grid(l, n)?;
    let mut coeffs = Vec::with_capacity(n);
    for _ in 0..n {
        let re = f64::from_le_bytes(next(input)?);
        let im = f64::from_le_bytes(next(input)?);
        coeffs.push(Complex64::new(re, im));
    }
    let probe = SpectralState::from_coefficients(&grid, coeffs.clone(), false)?;
    let real = probe.hermitian_defect() <= 1e-12;
    Ok((SpectralState::from_coefficients(&grid, coeffs, real)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let g = make_grid(5.0, 32).unwrap();
        let s = SpectralState::from_fn(&g, |x| (-x * x).exp());
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &s, 0.25).unwrap();
        assert_eq!(buf.len(), 24 + 32 * 16);
        assert_eq!(&buf[..8], &32u64.to_le_bytes());
        let (back, t) = read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(t, 0.25);
        assert!(back.is_real_field());
        assert_eq!(back.coefficients(), s.coefficients());
        assert!(read_snapshot(&mut &buf[..40]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut buf = Vec::new();
        let rows = vec![vec![0.1, -2.5e-17], vec![3.0, f64::MAX]];
        write_csv(&mut buf, &["run abc".into()], &["a", "b"], &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# run abc\na,b\n"));
        let (cols, back) = read_csv(&text).unwrap();
        assert_eq!(cols, vec!["a", "b"]);
        assert_eq!(back, rows);
    }
}
