//! Table export as 8-bit grayscale PGM images and CSV grids.
//!
//! Images are max-normalized per table; brighter means more probable.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{FlaError, Result};
use crate::modelfile::ModelFile;
use crate::track::Feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportTarget {
    /// Empirical joints `p̂` for every ordered pair.
    Empirical,
    /// Model joints `p̃` for every ordered pair.
    Model,
    /// `|p̂ - p̃|` per cell for every ordered pair.
    Diff,
    Conditionals,
    Mixing,
    /// Type marginals `p̃(lᵢ)`.
    Marginals,
    /// Empirical symbol marginals per feature.
    Histograms,
}

impl ExportTarget {
    pub const ALL: [ExportTarget; 7] = [
        ExportTarget::Empirical,
        ExportTarget::Model,
        ExportTarget::Diff,
        ExportTarget::Conditionals,
        ExportTarget::Mixing,
        ExportTarget::Marginals,
        ExportTarget::Histograms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExportTarget::Empirical => "empirical",
            ExportTarget::Model => "model",
            ExportTarget::Diff => "diff",
            ExportTarget::Conditionals => "conditionals",
            ExportTarget::Mixing => "mixing",
            ExportTarget::Marginals => "marginals",
            ExportTarget::Histograms => "histograms",
        }
    }

    /// Parses a comma-separated list; `all` expands to every target.
    pub fn parse_list(s: &str) -> Result<Vec<ExportTarget>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            if part == "all" {
                out.extend(ExportTarget::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for ExportTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExportTarget {
    type Err = FlaError;

    fn from_str(s: &str) -> Result<Self> {
        ExportTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| FlaError::Invalid(format!("unknown export target `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTable {
    /// File stem, e.g. `empirical_size_speed`.
    pub name: String,
    pub table: Array2<f64>,
}

fn feature_name(f: usize) -> &'static str {
    Feature::ALL[f].name()
}

/// The tables of one target, computed from a model file.
pub fn tables_for(file: &ModelFile, target: ExportTarget) -> Result<Vec<NamedTable>> {
    let model = &file.model;
    let k = model.features();
    let ordered: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let empirical = || {
        file.accumulator
            .as_ref()
            .ok_or_else(|| FlaError::Invalid(format!("`{target}` export needs the accumulator snapshot")))
            .and_then(|a| a.finalize())
    };
    let pair_name = |prefix: &str, i: usize, j: usize| {
        format!("{prefix}_{}_{}", feature_name(i), feature_name(j))
    };
    Ok(match target {
        ExportTarget::Empirical => {
            let p = empirical()?;
            ordered
                .iter()
                .map(|&(i, j)| NamedTable {
                    name: pair_name("empirical", i, j),
                    table: p.joint(i, j).to_owned(),
                })
                .collect()
        }
        ExportTarget::Model => ordered
            .iter()
            .map(|&(i, j)| NamedTable {
                name: pair_name("model", i, j),
                table: model.pairwise_joint(i, j),
            })
            .collect(),
        ExportTarget::Diff => {
            let p = empirical()?;
            ordered
                .iter()
                .map(|&(i, j)| NamedTable {
                    name: pair_name("diff", i, j),
                    table: (&p.joint(i, j) - &model.pairwise_joint(i, j)).mapv(f64::abs),
                })
                .collect()
        }
        ExportTarget::Conditionals => (0..k)
            .map(|f| NamedTable {
                name: format!("conditional_{}", feature_name(f)),
                table: model.conditionals[f].clone(),
            })
            .collect(),
        ExportTarget::Mixing => ordered
            .iter()
            .map(|&(i, j)| NamedTable {
                name: pair_name("mixing", i, j),
                table: model.mixing(i, j).to_owned(),
            })
            .collect(),
        ExportTarget::Marginals => model
            .type_marginals()
            .into_iter()
            .enumerate()
            .map(|(f, m)| NamedTable {
                name: format!("marginal_{}", feature_name(f)),
                table: Array2::from_shape_vec((1, m.len()), m).expect("row shape"),
            })
            .collect(),
        ExportTarget::Histograms => {
            let p = empirical()?;
            (0..k)
                .map(|f| {
                    let m = p.marginal(f);
                    NamedTable {
                        name: format!("histogram_{}", feature_name(f)),
                        table: Array2::from_shape_vec((1, m.len()), m).expect("row shape"),
                    }
                })
                .collect()
        }
    })
}

/// Binary PGM (P5), one byte per cell, max-normalized.
pub fn pgm_bytes(table: &Array2<f64>) -> Vec<u8> {
    let (h, w) = table.dim();
    let max = table.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(table.iter().map(|&v| {
        if max > 0.0 && v > 0.0 {
            (255.0 * v / max).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// Comma-separated rows, values in shortest round-trip form.
pub fn grid_text(table: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in table.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_grid(text: &str) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| FlaError::Parse {
                        line: n + 1,
                        message: format!("bad number `{v}`"),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    crate::tables::rows::from_rows(rows).map_err(FlaError::Shape)
}
