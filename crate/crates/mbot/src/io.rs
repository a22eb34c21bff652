//! Plain-file input/output: headerless coordinate CSV for point clouds.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cloud::DiscreteDistribution;
use crate::error::{OtError, Result};
use crate::plan::format_float;

/// Read a point cloud from headerless CSV: one point per row, coordinates
/// comma-separated.
pub fn read_cloud_csv(path: &Path) -> Result<DiscreteDistribution> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut points = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let coords: std::result::Result<Vec<f64>, _> =
            trimmed.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match coords {
            Ok(c) => points.push(c),
            Err(e) => {
                return Err(OtError::Parse(format!(
                    "{}:{}: {e}",
                    path.display(),
                    line_no + 1
                )))
            }
        }
    }
    DiscreteDistribution::new(points)
}

pub fn write_cloud_csv(path: &Path, dist: &DiscreteDistribution) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_points_csv(&mut w, dist.points_flat(), dist.dim())?;
    Ok(())
}

/// Write flat row-major coordinates as CSV with 17 significant digits.
pub fn write_points_csv<W: Write>(w: &mut W, flat: &[f64], dim: usize) -> Result<()> {
    for point in flat.chunks_exact(dim) {
        let row: Vec<String> = point.iter().map(|&v| format_float(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
