//! Result files: convergence history, density and von Mises maps, PGM
//! image and an optional legacy VTK file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::optimize::RunHistory;
use super::DriverError;
use crate::fem::StructuredMesh;
use crate::levelset::LevelSetGrid;

pub const HISTORY_HEADER: [&str; 7] = ["iter", "volume", "sigma_pm", "ks_mu", "lambda1", "max_vn", "rel_change"];

/// Paths of the files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub history: PathBuf,
    pub density_csv: PathBuf,
    pub density_pgm: PathBuf,
    pub vtk: Option<PathBuf>,
    pub von_mises: Option<PathBuf>,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path, vtk: bool, von_mises: bool) -> Self {
        Self {
            history: dir.join("history.csv"),
            density_csv: dir.join("density.csv"),
            density_pgm: dir.join("density.pgm"),
            vtk: vtk.then(|| dir.join("design.vtk")),
            von_mises: von_mises.then(|| dir.join("von_mises.csv")),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> DriverError {
    DriverError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_history(history: &RunHistory, path: &Path) -> Result<(), DriverError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(HISTORY_HEADER).map_err(|e| csv_error(path, e))?;
    for r in &history.records {
        w.write_record([
            r.iter.to_string(),
            r.volume.to_string(),
            opt(r.sigma_pm),
            opt(r.ks_mu),
            opt(r.lambda1),
            r.max_vn.to_string(),
            opt(r.rel_change),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| DriverError::io(path, e))
}

/// Element values on the full grid, rows ordered top (largest y) first.
/// Inactive elements take `fill`.
pub fn element_grid(mesh: &StructuredMesh, values: &[f64], fill: f64) -> Vec<Vec<f64>> {
    (0..mesh.ny())
        .rev()
        .map(|j| {
            (0..mesh.nx())
                .map(|i| mesh.active_index(j * mesh.nx() + i).map_or(fill, |a| values[a]))
                .collect()
        })
        .collect()
}

/// Writes a matrix as CSV with shortest round-trip number formatting.
pub fn write_matrix_csv(rows: &[Vec<f64>], path: &Path) -> Result<(), DriverError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| DriverError::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>, DriverError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| DriverError::Io { path: path.to_path_buf(), message: format!("{s:?}: {e}") })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// 8-bit grey level of a density: 1 is black, 0 is white.
pub fn grey_level(rho: f64) -> u8 {
    (255.0 * (1.0 - rho.clamp(0.0, 1.0))).round() as u8
}

/// Binary PGM of the density, top row first; inactive elements are white.
pub fn write_pgm(mesh: &StructuredMesh, density: &[f64], path: &Path) -> Result<(), DriverError> {
    let grid = element_grid(mesh, density, 0.0);
    let mut bytes = format!("P5\n{} {}\n255\n", mesh.nx(), mesh.ny()).into_bytes();
    for row in &grid {
        bytes.extend(row.iter().map(|&r| grey_level(r)));
    }
    fs::write(path, bytes).map_err(|e| DriverError::io(path, e))
}

/// Reads a binary PGM written by [`write_pgm`]: (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), DriverError> {
    let bytes = fs::read(path).map_err(|e| DriverError::io(path, e))?;
    let bad = |m: &str| DriverError::Io { path: path.to_path_buf(), message: m.to_string() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("not an 8-bit binary PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?.to_vec();
    if pixels.len() != w * h {
        return Err(bad("pixel count does not match the header"));
    }
    Ok((w, h, pixels))
}

/// Legacy ASCII VTK structured points with ρ on cells and Φ on nodes.
pub fn write_vtk(mesh: &StructuredMesh, density: &[f64], levelset: &LevelSetGrid, path: &Path) -> Result<(), DriverError> {
    let (nx, ny, h) = (mesh.nx(), mesh.ny(), mesh.h());
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\nvfls design\nASCII\nDATASET STRUCTURED_POINTS\n");
    out.push_str(&format!("DIMENSIONS {} {} 1\nORIGIN 0 0 0\nSPACING {h} {h} 1\n", nx + 1, ny + 1));
    out.push_str(&format!("CELL_DATA {}\nSCALARS density double 1\nLOOKUP_TABLE default\n", nx * ny));
    for e in 0..nx * ny {
        let v = mesh.active_index(e).map_or(0.0, |a| density[a]);
        out.push_str(&format!("{v}\n"));
    }
    out.push_str(&format!("POINT_DATA {}\nSCALARS phi double 1\nLOOKUP_TABLE default\n", (nx + 1) * (ny + 1)));
    for v in &levelset.phi {
        out.push_str(&format!("{v}\n"));
    }
    let mut f = fs::File::create(path).map_err(|e| DriverError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| DriverError::io(path, e))
}

/// Writes every output file into `dir`, creating it if needed.
pub fn write_outputs(
    history: &RunHistory,
    density: &[f64],
    levelset: &LevelSetGrid,
    mesh: &StructuredMesh,
    von_mises: Option<&[f64]>,
    dir: &Path,
    vtk: bool,
) -> Result<OutputPaths, DriverError> {
    fs::create_dir_all(dir).map_err(|e| DriverError::io(dir, e))?;
    let paths = OutputPaths::in_dir(dir, vtk, von_mises.is_some());
    write_history(history, &paths.history)?;
    write_matrix_csv(&element_grid(mesh, density, 0.0), &paths.density_csv)?;
    write_pgm(mesh, density, &paths.density_pgm)?;
    if let Some(p) = &paths.vtk {
        write_vtk(mesh, density, levelset, p)?;
    }
    if let (Some(p), Some(vm)) = (&paths.von_mises, von_mises) {
        write_matrix_csv(&element_grid(mesh, vm, 0.0), p)?;
    }
    Ok(paths)
}
