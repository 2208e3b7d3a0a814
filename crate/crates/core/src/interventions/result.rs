use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datasets::{Intervention, Role, RolePositions};
use crate::error::Result;
use crate::metrics::batch_stats_defined;
use crate::model::{Direction, Site};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LayerPosition,
    LayerHead,
}

/// Aggregate of one sweep cell over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Samples with a defined score.
    pub n: usize,
    /// Samples whose score was undefined (degenerate clean/corrupted gap).
    pub missing: usize,
}

impl Cell {
    pub const EMPTY: Cell = Cell { mean: None, std: None, n: 0, missing: 0 };

    pub fn from_scores(scores: &[Option<f64>]) -> Cell {
        let (stats, missing) = batch_stats_defined(scores);
        match stats {
            Some(s) => Cell { mean: Some(s.mean), std: Some(s.std), n: s.count, missing },
            None => Cell { missing, ..Cell::EMPTY },
        }
    }
}

/// Mean patching score per (layer, position) or (layer, head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub site: Site,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<Intervention>,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// Role label → token positions, taken from the first clean prompt.
    pub roles: BTreeMap<String, Vec<usize>>,
    pub n_samples: usize,
    pub cells: Vec<Vec<Cell>>,
}

impl SweepResult {
    pub(crate) fn new(
        axis: SweepAxis,
        site: Site,
        direction: Direction,
        intervention: Option<Intervention>,
        columns: Vec<String>,
        roles: &RolePositions,
        n_samples: usize,
        cells: Vec<Vec<Cell>>,
    ) -> Self {
        SweepResult {
            axis,
            site,
            direction,
            intervention,
            rows: (0..cells.len()).map(|l| l.to_string()).collect(),
            columns,
            roles: role_legend(roles),
            n_samples,
            cells,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.cells.len(), self.columns.len())
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[row][col]
    }

    pub fn mean(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row][col].mean
    }

    /// Means as a matrix, undefined cells as NaN.
    pub fn means(&self) -> Array2<f64> {
        self.matrix(|c| c.mean)
    }

    pub fn stds(&self) -> Array2<f64> {
        self.matrix(|c| c.std)
    }

    fn matrix(&self, f: impl Fn(&Cell) -> Option<f64>) -> Array2<f64> {
        let (r, c) = self.shape();
        Array2::from_shape_fn((r, c), |(i, j)| f(&self.cells[i][j]).unwrap_or(f64::NAN))
    }

    pub fn total_missing(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.missing).sum()
    }

    /// The `k` highest-mean cells as `(row, col, mean)`, best first.
    pub fn top(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let mut all: Vec<(usize, usize, f64)> = self
            .cells
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter_map(move |(j, c)| c.mean.map(|m| (i, j, m))))
            .collect();
        all.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        all.truncate(k);
        all
    }

    /// The `k` lowest-mean cells, most negative first.
    pub fn bottom(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let mut all = self.top(usize::MAX);
        all.reverse();
        all.truncate(k);
        all
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One line per cell: `layer,column,mean,std,n,missing`.
    pub fn to_csv(&self) -> String {
        let col_name = match self.axis {
            SweepAxis::LayerPosition => "position",
            SweepAxis::LayerHead => "head",
        };
        let mut out = format!("layer,{col_name},mean,std,n,missing\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, row) in self.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.rows[i],
                    csv_field(&self.columns[j]),
                    fmt(c.mean),
                    fmt(c.std),
                    c.n,
                    c.missing
                );
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn role_legend(roles: &RolePositions) -> BTreeMap<String, Vec<usize>> {
    Role::ALL.iter().map(|&r| (r.label().to_string(), roles.of(r))).collect()
}

/// `"7 [p]"`-style labels for each token position.
pub(crate) fn position_labels(n: usize, roles: &RolePositions) -> Vec<String> {
    (0..n)
        .map(|i| match roles.role_at(i) {
            Some(r) => format!("{i} [{}]", r.label()),
            None => i.to_string(),
        })
        .collect()
}
