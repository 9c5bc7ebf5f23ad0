//! CSV dumps of trajectories, measurement matrices and singular values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::full_order::Trajectory;

/// Header `t,xi_1,…,xi_q`, one row per instant.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "t")?;
    for i in 1..=traj.dim() {
        write!(f, ",xi_{i}")?;
    }
    writeln!(f)?;
    for (t, x) in traj.times.iter().zip(&traj.values) {
        write!(f, "{t}")?;
        for v in x.iter() {
            write!(f, ",{v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Plain rows, no header.
pub fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Header `k,sigma`, `k` starting at 1.
pub fn write_singular_values_csv(sigma: &[f64], path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "k,sigma")?;
    for (k, s) in sigma.iter().enumerate() {
        writeln!(f, "{},{s}", k + 1)?;
    }
    f.flush()?;
    Ok(())
}
