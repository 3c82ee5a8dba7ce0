//! Reachable regions of the two appendages and the grip-force heatmap.
//!
//! Cells are classified by closed-form inverse kinematics at a fixed base
//! width. Cell centres are placed symmetrically about `x = 0`, so a symmetric
//! geometry yields a map that is mirror-exact cell by cell.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::GripperGeometry;
use crate::geometry::Vec2;
use crate::kinematics::{inverse_kinematics, Boundary, KinematicsError, Side};
use crate::mechanics::BucklingModel;

/// Grids larger than this are rejected instead of allocated.
pub const MAX_CELLS: usize = 16_000_000;

pub const CSV_HEADER: [&str; 6] = ["x_mm", "y_mm", "reach_left", "reach_right", "reach_both", "F_grip_N"];

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("resolution must be a positive finite length, got {0}")]
    InvalidResolution(f64),
    #[error("grid of {0} cells exceeds the limit of {MAX_CELLS}")]
    TooLarge(usize),
    #[error("base width {0} outside the rack travel")]
    InvalidBaseWidth(f64),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed heatmap: {0}")]
    Malformed(String),
}

/// Per-appendage classification of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellClass {
    Interior,
    AngularLeft,
    AngularRight,
    RadialInner,
    RadialOuter,
}

impl From<Boundary> for CellClass {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::AngularLeft => CellClass::AngularLeft,
            Boundary::AngularRight => CellClass::AngularRight,
            Boundary::RadialInner => CellClass::RadialInner,
            Boundary::RadialOuter => CellClass::RadialOuter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceCell {
    pub left: CellClass,
    pub right: CellClass,
    /// Defined exactly where both appendages reach.
    pub f_grip: Option<f64>,
}

impl WorkspaceCell {
    pub fn reach_left(&self) -> bool {
        self.left == CellClass::Interior
    }

    pub fn reach_right(&self) -> bool {
        self.right == CellClass::Interior
    }

    pub fn reach_both(&self) -> bool {
        self.reach_left() && self.reach_right()
    }

    pub fn reach(&self, side: Side) -> bool {
        match side {
            Side::Left => self.reach_left(),
            Side::Right => self.reach_right(),
        }
    }
}

/// Row-major grid (rows of constant `y`, increasing `x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceMap {
    /// Centre of cell (0, 0).
    pub origin: Vec2<f64>,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    /// Base width used for every IK query.
    pub a: f64,
    pub cells: Vec<WorkspaceCell>,
    /// Set when no cell is reachable by both appendages.
    pub degenerate: bool,
}

/// Evaluation of a single point, shared by the grid and by point queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointReach {
    pub left: Result<f64, CellClass>,
    pub right: Result<f64, CellClass>,
}

impl PointReach {
    /// Outer-section lengths on `(left, right)` reaching the point.
    fn classes(&self) -> (CellClass, CellClass) {
        let c = |r: &Result<f64, CellClass>| match r {
            Ok(_) => CellClass::Interior,
            Err(c) => *c,
        };
        (c(&self.left), c(&self.right))
    }

    /// Grip force at the point: the weaker side's buckling limit.
    pub fn grip_force(&self, buckling: &BucklingModel<f64>) -> Option<f64> {
        let (Ok(l1_left), Ok(l1_right)) = (self.left, self.right) else {
            return None;
        };
        let f_left = buckling.force(l1_left).ok()?;
        let f_right = buckling.force(l1_right).ok()?;
        Some(f_left.min(f_right))
    }
}

fn classify(geom: &GripperGeometry<f64>, side: Side, p: Vec2<f64>, a: f64) -> Result<f64, CellClass> {
    match inverse_kinematics(geom, side, p, a) {
        Ok(state) => Ok(state.l1),
        Err(KinematicsError::OutOfWorkspace(b)) => Err(b.into()),
        Err(_) => Err(CellClass::RadialInner),
    }
}

/// Classifies one world point for both appendages at base width `a`.
pub fn evaluate_point(geom: &GripperGeometry<f64>, p: Vec2<f64>, a: f64) -> PointReach {
    PointReach { left: classify(geom, Side::Left, p, a), right: classify(geom, Side::Right, p, a) }
}

/// Workspace at the mid-range base width.
pub fn compute_workspace(
    geom: &GripperGeometry<f64>,
    buckling: &BucklingModel<f64>,
    resolution: f64,
) -> Result<WorkspaceMap, WorkspaceError> {
    compute_workspace_at(geom, buckling, resolution, geom.a_mid())
}

/// One workspace per base width.
pub fn compute_workspace_family(
    geom: &GripperGeometry<f64>,
    buckling: &BucklingModel<f64>,
    resolution: f64,
    widths: &[f64],
) -> Result<Vec<WorkspaceMap>, WorkspaceError> {
    widths.iter().map(|&a| compute_workspace_at(geom, buckling, resolution, a)).collect()
}

pub fn compute_workspace_at(
    geom: &GripperGeometry<f64>,
    buckling: &BucklingModel<f64>,
    resolution: f64,
    a: f64,
) -> Result<WorkspaceMap, WorkspaceError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(WorkspaceError::InvalidResolution(resolution));
    }
    if !(a >= geom.a_min && a <= geom.a_max) {
        return Err(WorkspaceError::InvalidBaseWidth(a));
    }
    let reach = geom.reach_bound();
    let half_x = geom.outer_extruder_spacing * 0.5 + reach;
    let half_cols = (half_x / resolution).ceil();
    let rows = (2.0 * reach / resolution).ceil() + 1.0;
    let total = (2.0 * half_cols + 1.0) * rows;
    if !(total <= MAX_CELLS as f64) {
        return Err(WorkspaceError::TooLarge(total.min(usize::MAX as f64) as usize));
    }
    let nx = 2 * half_cols as usize + 1;
    let ny = rows as usize;
    let origin = Vec2::new(-(half_cols * resolution), -reach);

    let cells: Vec<WorkspaceCell> = (0..ny)
        .into_par_iter()
        .flat_map_iter(|j| {
            (0..nx).map(move |i| {
                let p = cell_center_raw(origin, resolution, nx, i, j);
                let reach = evaluate_point(geom, p, a);
                let (left, right) = reach.classes();
                WorkspaceCell { left, right, f_grip: reach.grip_force(buckling) }
            })
        })
        .collect();
    let degenerate = !cells.iter().any(|c| c.f_grip.is_some());
    Ok(WorkspaceMap { origin, resolution, nx, ny, a, cells, degenerate })
}

fn cell_center_raw(origin: Vec2<f64>, res: f64, nx: usize, i: usize, j: usize) -> Vec2<f64> {
    // Symmetric about x = 0: column i and nx-1-i are exact negatives.
    let x = (i as f64 - (nx as f64 - 1.0) * 0.5) * res;
    Vec2::new(x, origin.y + j as f64 * res)
}

impl WorkspaceMap {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, i: usize, j: usize) -> &WorkspaceCell {
        &self.cells[j * self.nx + i]
    }

    pub fn center(&self, i: usize, j: usize) -> Vec2<f64> {
        cell_center_raw(self.origin, self.resolution, self.nx, i, j)
    }

    /// Indices of the cell containing `p`, if inside the grid.
    pub fn locate(&self, p: Vec2<f64>) -> Option<(usize, usize)> {
        let fi = ((p.x - self.origin.x) / self.resolution + 0.5).floor();
        let fj = ((p.y - self.origin.y) / self.resolution + 0.5).floor();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec2<f64>, &WorkspaceCell)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, c)| (self.center(k % self.nx, k / self.nx), c))
    }

    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }

    /// Area where both appendages reach (mm²).
    pub fn grip_area(&self) -> f64 {
        self.cells.iter().filter(|c| c.reach_both()).count() as f64 * self.cell_area()
    }

    /// Area reached by `side` (mm²).
    pub fn reach_area(&self, side: Side) -> f64 {
        self.cells.iter().filter(|c| c.reach(side)).count() as f64 * self.cell_area()
    }

    /// Smallest and largest grip force over the map.
    pub fn grip_force_range(&self) -> Option<(f64, f64)> {
        self.cells.iter().filter_map(|c| c.f_grip).fold(None, |acc, f| match acc {
            None => Some((f, f)),
            Some((lo, hi)) => Some((lo.min(f), hi.max(f))),
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = HeatmapRow> + '_ {
        self.iter().map(|(p, c)| HeatmapRow {
            x_mm: p.x,
            y_mm: p.y,
            reach_left: c.reach_left(),
            reach_right: c.reach_right(),
            reach_both: c.reach_both(),
            f_grip_n: c.f_grip,
        })
    }
}

/// One line of the heatmap CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapRow {
    pub x_mm: f64,
    pub y_mm: f64,
    pub reach_left: bool,
    pub reach_right: bool,
    pub reach_both: bool,
    pub f_grip_n: Option<f64>,
}

/// Formats with 6 significant digits in the style of C's `%g`.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    strip_zeros(&format!("{v:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_heatmap<W: Write>(rows: impl IntoIterator<Item = HeatmapRow>, out: W) -> Result<(), WorkspaceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let f = r.f_grip_n.map(format_sig6).unwrap_or_default();
        w.write_record([
            format_sig6(r.x_mm).as_str(),
            format_sig6(r.y_mm).as_str(),
            flag(r.reach_left),
            flag(r.reach_right),
            flag(r.reach_both),
            f.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_heatmap(map: &WorkspaceMap, path: impl AsRef<Path>) -> Result<(), WorkspaceError> {
    let file = std::fs::File::create(path)?;
    write_heatmap(map.rows(), std::io::BufWriter::new(file))
}

pub fn read_heatmap<R: Read>(input: R) -> Result<Vec<HeatmapRow>, WorkspaceError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(WorkspaceError::Malformed(format!("unexpected header {header:?}")));
    }
    let num = |s: &str, line: usize| {
        s.parse::<f64>().map_err(|_| WorkspaceError::Malformed(format!("line {line}: bad number {s:?}")))
    };
    let bit = |s: &str, line: usize| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(WorkspaceError::Malformed(format!("line {line}: bad flag {s:?}"))),
    };
    let mut rows = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != CSV_HEADER.len() {
            return Err(WorkspaceError::Malformed(format!("line {line}: expected 6 fields")));
        }
        let f = &rec[5];
        rows.push(HeatmapRow {
            x_mm: num(&rec[0], line)?,
            y_mm: num(&rec[1], line)?,
            reach_left: bit(&rec[2], line)?,
            reach_right: bit(&rec[3], line)?,
            reach_both: bit(&rec[4], line)?,
            f_grip_n: if f.is_empty() { None } else { Some(num(f, line)?) },
        });
    }
    Ok(rows)
}

pub fn import_heatmap(path: impl AsRef<Path>) -> Result<Vec<HeatmapRow>, WorkspaceError> {
    read_heatmap(std::fs::File::open(path)?)
}
