//! Fleiss' kappa for a fixed number of annotators over categorical ratings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("ratings matrix has no items")]
    NoItems,
    #[error("at least 2 categories are required, got {0}")]
    TooFewCategories(usize),
    #[error("at least 2 annotators per item are required, got {0}")]
    TooFewAnnotators(usize),
    #[error("item {item}: {found} ratings, expected {expected}")]
    RowSum {
        item: usize,
        found: u64,
        expected: u64,
    },
    #[error("item {item}: {found} category counts for {expected} categories")]
    RowWidth {
        item: usize,
        found: usize,
        expected: usize,
    },
    #[error("kappa is undefined: every rating falls in a single category")]
    Undefined,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// Items x categories table of how many annotators chose each category.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix {
    categories: Vec<String>,
    counts: Vec<Vec<u32>>,
    annotators: usize,
}

impl RatingsMatrix {
    pub fn new(categories: Vec<String>, counts: Vec<Vec<u32>>) -> Result<Self, AgreementError> {
        if counts.is_empty() {
            return Err(AgreementError::NoItems);
        }
        if categories.len() < 2 {
            return Err(AgreementError::TooFewCategories(categories.len()));
        }
        let expected: u64 = counts[0].iter().map(|&c| c as u64).sum();
        for (item, row) in counts.iter().enumerate() {
            if row.len() != categories.len() {
                return Err(AgreementError::RowWidth {
                    item,
                    found: row.len(),
                    expected: categories.len(),
                });
            }
            let found: u64 = row.iter().map(|&c| c as u64).sum();
            if found != expected {
                return Err(AgreementError::RowSum {
                    item,
                    found,
                    expected,
                });
            }
        }
        if expected < 2 {
            return Err(AgreementError::TooFewAnnotators(expected as usize));
        }
        Ok(Self {
            categories,
            counts,
            annotators: expected as usize,
        })
    }

    /// Matrix with categories named `0..k`.
    pub fn from_counts(counts: Vec<Vec<u32>>) -> Result<Self, AgreementError> {
        let k = counts.first().map_or(0, Vec::len);
        Self::new((0..k).map(|c| c.to_string()).collect(), counts)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn annotators_per_item(&self) -> usize {
        self.annotators
    }
}

/// `kappa = (P_bar - P_e) / (1 - P_e)`, with `P_bar` the mean per-item
/// agreement and `P_e` the sum of squared overall category proportions.
pub fn fleiss_kappa(matrix: &RatingsMatrix) -> Result<f64, AgreementError> {
    let n = matrix.annotators as f64;
    let items = matrix.items() as f64;
    let k = matrix.categories.len();
    let mut column = vec![0.0; k];
    let mut agreement = 0.0;
    for row in &matrix.counts {
        let mut pairs = 0.0;
        for (j, &c) in row.iter().enumerate() {
            let c = c as f64;
            column[j] += c;
            pairs += c * (c - 1.0);
        }
        agreement += pairs / (n * (n - 1.0));
    }
    let p_bar = agreement / items;
    let p_e: f64 = column.iter().map(|c| (c / (items * n)).powi(2)).sum();
    if p_e >= 1.0 {
        return Err(AgreementError::Undefined);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// One kappa per (group, dimension) built from long-format ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaTable {
    pub groups: Vec<String>,
    pub dimensions: Vec<String>,
    /// `cells[g][d]`; `None` when the dimension has no ratings in the group.
    pub cells: Vec<Vec<Option<Result<f64, AgreementError>>>>,
}

impl KappaTable {
    pub fn get(&self, group: &str, dimension: &str) -> Option<&Result<f64, AgreementError>> {
        let g = self.groups.iter().position(|x| x == group)?;
        let d = self.dimensions.iter().position(|x| x == dimension)?;
        self.cells[g][d].as_ref()
    }

    /// Rows are groups, columns dimensions; `percent` renders kappa x 100.
    pub fn render(&self, percent: bool) -> String {
        let fmt = |cell: &Option<Result<f64, AgreementError>>| match cell {
            None => "-".to_string(),
            Some(Err(_)) => "n/a".to_string(),
            Some(Ok(k)) if percent => format!("{:.2}", k * 100.0),
            Some(Ok(k)) => format!("{k:.4}"),
        };
        let rendered: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|row| row.iter().map(fmt).collect())
            .collect();
        let first = self
            .groups
            .iter()
            .map(|g| g.chars().count())
            .max()
            .unwrap_or(0)
            .max("Group".len());
        let widths: Vec<usize> = self
            .dimensions
            .iter()
            .enumerate()
            .map(|(d, name)| {
                rendered
                    .iter()
                    .map(|r| r[d].len())
                    .max()
                    .unwrap_or(0)
                    .max(name.chars().count())
            })
            .collect();
        let mut out = format!("{:<first$}", "Group");
        for (name, w) in self.dimensions.iter().zip(&widths) {
            let _ = write!(out, "  {name:>w$}");
        }
        out.push('\n');
        for (group, row) in self.groups.iter().zip(&rendered) {
            let _ = write!(out, "{group:<first$}");
            for (cell, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {cell:>w$}");
            }
            out.push('\n');
        }
        out
    }

    /// `group,dimension,kappa` with empty kappa where undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,dimension,kappa\n");
        for (g, row) in self.groups.iter().zip(&self.cells) {
            for (d, cell) in self.dimensions.iter().zip(row) {
                if let Some(cell) = cell {
                    let value = cell.as_ref().map(|k| k.to_string()).unwrap_or_default();
                    let _ = writeln!(out, "{g},{d},{value}");
                }
            }
        }
        out
    }
}

#[derive(Default)]
struct LongRatings {
    // item -> annotator -> category
    items: BTreeMap<String, BTreeMap<String, String>>,
}

/// Reads delimited ratings with columns `item_id, annotator_id, dimension,
/// category` and an optional `group`, and computes one kappa per
/// (group, dimension). Categories are pooled per dimension.
pub fn kappa_table_from_csv<R: Read>(reader: R) -> Result<KappaTable, AgreementError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| AgreementError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| AgreementError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (c_item, c_ann, c_dim, c_cat) = (
        required("item_id")?,
        required("annotator_id")?,
        required("dimension")?,
        required("category")?,
    );
    let c_group = col("group");

    let mut groups: Vec<String> = Vec::new();
    let mut dimensions: Vec<String> = Vec::new();
    let mut data: BTreeMap<(String, String), LongRatings> = BTreeMap::new();
    for row in csv.records() {
        let row = row.map_err(|e| AgreementError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let group = c_group.map_or("all", |c| &row[c]).to_string();
        let dim = row[c_dim].to_string();
        if !groups.contains(&group) {
            groups.push(group.clone());
        }
        if !dimensions.contains(&dim) {
            dimensions.push(dim.clone());
        }
        let previous = data
            .entry((group, dim))
            .or_default()
            .items
            .entry(row[c_item].to_string())
            .or_default()
            .insert(row[c_ann].to_string(), row[c_cat].to_string());
        if previous.is_some() {
            return Err(AgreementError::Parse {
                line,
                message: format!(
                    "annotator `{}` rated item `{}` twice on `{}`",
                    &row[c_ann], &row[c_item], &row[c_dim]
                ),
            });
        }
    }
    if data.is_empty() {
        return Err(AgreementError::NoItems);
    }

    // category set per dimension, pooled across groups
    let mut categories: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for ((_, dim), ratings) in &data {
        let set = categories.entry(dim.as_str()).or_default();
        for per_item in ratings.items.values() {
            set.extend(per_item.values().map(String::as_str));
        }
    }

    let cells = groups
        .iter()
        .map(|g| {
            dimensions
                .iter()
                .map(|d| {
                    let ratings = data.get(&(g.clone(), d.clone()))?;
                    let cats: Vec<&str> = categories[d.as_str()].iter().copied().collect();
                    let counts = ratings
                        .items
                        .values()
                        .map(|per_item| {
                            let mut row = vec![0u32; cats.len()];
                            for c in per_item.values() {
                                let j = cats.binary_search(&c.as_str()).expect("pooled");
                                row[j] += 1;
                            }
                            row
                        })
                        .collect();
                    Some(
                        RatingsMatrix::new(cats.iter().map(|c| c.to_string()).collect(), counts)
                            .and_then(|m| fleiss_kappa(&m)),
                    )
                })
                .collect()
        })
        .collect();
    Ok(KappaTable {
        groups,
        dimensions,
        cells,
    })
}
