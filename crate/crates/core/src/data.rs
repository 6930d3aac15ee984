//! Individual-level data with per-row missingness.
//!
//! Every row carries its instruments. Exposures are observed all together or
//! not at all, and the outcome is either observed or missing, which gives the
//! three observation patterns of a merged one-, two- or overlapping-sample
//! design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which blocks of a row are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowPattern {
    /// Instruments, exposures and outcome observed.
    Complete,
    /// Instruments and exposures observed, outcome missing.
    ExposureOnly,
    /// Instruments and outcome observed, exposures missing.
    OutcomeOnly,
}

impl RowPattern {
    pub fn has_exposures(self) -> bool {
        !matches!(self, RowPattern::OutcomeOnly)
    }

    pub fn has_outcome(self) -> bool {
        !matches!(self, RowPattern::ExposureOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrDataset {
    n_instruments: usize,
    n_exposures: usize,
    z: Vec<f64>,
    x: Vec<Option<f64>>,
    y: Vec<Option<f64>>,
    pattern: Vec<RowPattern>,
}

impl MrDataset {
    pub fn empty(n_instruments: usize, n_exposures: usize) -> Self {
        Self {
            n_instruments,
            n_exposures,
            z: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
            pattern: Vec::new(),
        }
    }

    /// Appends one row. `x` is either `None` (exposures missing) or a slice
    /// with one value per exposure.
    pub fn push_row(&mut self, z: &[f64], x: Option<&[f64]>, y: Option<f64>) -> Result<()> {
        if z.len() != self.n_instruments {
            return Err(Error::Dimension(format!(
                "row has {} instruments, expected {}",
                z.len(),
                self.n_instruments
            )));
        }
        let pattern = match (x, y) {
            (Some(_), Some(_)) => RowPattern::Complete,
            (Some(_), None) => RowPattern::ExposureOnly,
            (None, Some(_)) => RowPattern::OutcomeOnly,
            (None, None) => {
                return Err(Error::Dimension(
                    "row has neither exposures nor outcome".into(),
                ))
            }
        };
        if let Some(x) = x {
            if x.len() != self.n_exposures {
                return Err(Error::Dimension(format!(
                    "row has {} exposures, expected {}",
                    x.len(),
                    self.n_exposures
                )));
            }
        }
        self.z.extend_from_slice(z);
        match x {
            Some(x) => self.x.extend(x.iter().map(|&v| Some(v))),
            None => self.x.extend(std::iter::repeat_n(None, self.n_exposures)),
        }
        self.y.push(y);
        self.pattern.push(pattern);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.n_instruments
    }

    pub fn n_exposures(&self) -> usize {
        self.n_exposures
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    pub fn pattern(&self, row: usize) -> RowPattern {
        self.pattern[row]
    }

    pub fn patterns(&self) -> &[RowPattern] {
        &self.pattern
    }

    pub fn z_row(&self, row: usize) -> &[f64] {
        let k = self.n_instruments;
        &self.z[row * k..(row + 1) * k]
    }

    pub fn x_cell(&self, row: usize, exposure: usize) -> Option<f64> {
        self.x[row * self.n_exposures + exposure]
    }

    /// Observed exposures of a row, or `None` for an outcome-only row.
    pub fn x_row(&self, row: usize) -> Option<Vec<f64>> {
        if !self.pattern[row].has_exposures() {
            return None;
        }
        let p = self.n_exposures;
        Some(self.x[row * p..(row + 1) * p].iter().map(|v| v.unwrap()).collect())
    }

    pub fn y(&self, row: usize) -> Option<f64> {
        self.y[row]
    }

    pub fn count(&self, pattern: RowPattern) -> usize {
        self.pattern.iter().filter(|&&p| p == pattern).count()
    }

    /// Copies the selected rows, re-masking them to `pattern`. The source
    /// rows must have every block that `pattern` keeps.
    pub fn select(&self, rows: &[usize], pattern: RowPattern) -> Result<MrDataset> {
        let mut out = MrDataset::empty(self.n_instruments, self.n_exposures);
        for &r in rows {
            let x = if pattern.has_exposures() {
                Some(self.x_row(r).ok_or_else(|| {
                    Error::Dimension(format!("row {r} has no exposures to keep"))
                })?)
            } else {
                None
            };
            let y = if pattern.has_outcome() {
                Some(self.y[r].ok_or_else(|| {
                    Error::Dimension(format!("row {r} has no outcome to keep"))
                })?)
            } else {
                None
            };
            out.push_row(self.z_row(r), x.as_deref(), y)?;
        }
        Ok(out)
    }

    /// Stacks datasets with identical dimensions, preserving row order.
    pub fn concat(parts: &[&MrDataset]) -> Result<MrDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("nothing to concatenate".into()))?;
        let mut out = MrDataset::empty(first.n_instruments, first.n_exposures);
        for part in parts {
            if part.n_instruments != out.n_instruments || part.n_exposures != out.n_exposures {
                return Err(Error::Dimension("datasets have different shapes".into()));
            }
            out.z.extend_from_slice(&part.z);
            out.x.extend_from_slice(&part.x);
            out.y.extend_from_slice(&part.y);
            out.pattern.extend_from_slice(&part.pattern);
        }
        Ok(out)
    }

    /// Where each row's imputed cells live inside a [`crate::ParamState`].
    pub fn missing_layout(&self) -> MissingLayout {
        let mut x_slot = Vec::with_capacity(self.n_rows());
        let mut y_slot = Vec::with_capacity(self.n_rows());
        let (mut nx, mut ny) = (0, 0);
        for p in &self.pattern {
            if p.has_exposures() {
                x_slot.push(None);
            } else {
                x_slot.push(Some(nx));
                nx += 1;
            }
            if p.has_outcome() {
                y_slot.push(None);
            } else {
                y_slot.push(Some(ny));
                ny += 1;
            }
        }
        MissingLayout {
            x_slot,
            y_slot,
            n_missing_x_rows: nx,
            n_missing_y: ny,
        }
    }
}

/// Row-to-slot map for imputed cells. `x_slot[r] = Some(s)` means row `r`'s
/// exposures are stored at `x_imputed[s * P..(s + 1) * P]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingLayout {
    pub x_slot: Vec<Option<usize>>,
    pub y_slot: Vec<Option<usize>>,
    pub n_missing_x_rows: usize,
    pub n_missing_y: usize,
}
