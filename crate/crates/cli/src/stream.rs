//! Line format for `pip infer`: `time_s,<values>` with empty fields marking
//! missing readings.
//!
//! Without a header, a line carries either one value per observed DOF or one
//! value per model DOF, both in model order; slots of latent and controlled
//! DOFs are ignored. A `time_s,<names>` header switches to named columns.

use pip_core::inference::ObservationFrame;
use pip_core::model::{DofRole, PipModel};

/// What one input line holds.
#[derive(Debug, Clone, PartialEq)]
pub enum Line {
    Blank,
    Comment,
    Reset,
    Header(Vec<String>),
    Frame { time: String, frame: ObservationFrame },
}

pub struct StreamParser {
    names: Vec<String>,
    observed: Vec<usize>,
    /// Column -> model DOF, set by a header line.
    columns: Option<Vec<Option<usize>>>,
}

impl StreamParser {
    pub fn new(model: &PipModel) -> Self {
        Self {
            names: model.dofs.iter().map(|d| d.name.clone()).collect(),
            observed: (0..model.dof_count())
                .filter(|&d| model.dofs[d].role == DofRole::Observed)
                .collect(),
            columns: None,
        }
    }

    /// Classifies and parses one line. Headers are applied immediately and
    /// returned with the names of columns that map to no model DOF.
    pub fn parse(&mut self, line: &str) -> Result<Line, String> {
        let line = line.trim_end_matches(['\r', '\n']);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return Ok(Line::Blank);
        }
        if let Some(directive) = trimmed.strip_prefix('#') {
            return Ok(if directive.trim() == "reset" { Line::Reset } else { Line::Comment });
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields[0] == "time_s" {
            return self.header(&fields[1..]).map(Line::Header);
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| format!("cannot parse time `{}`", fields[0]))?;
        if !time.is_finite() {
            return Err(format!("non-finite time `{}`", fields[0]));
        }
        let values = &fields[1..];
        let targets: Vec<Option<usize>> = match &self.columns {
            Some(cols) => {
                if values.len() != cols.len() {
                    return Err(format!("{} values, header declares {}", values.len(), cols.len()));
                }
                cols.clone()
            }
            None if values.len() == self.observed.len() => self.observed.iter().map(|&d| Some(d)).collect(),
            None if values.len() == self.names.len() => (0..self.names.len()).map(Some).collect(),
            None => {
                return Err(format!(
                    "{} values, expected {} (observed DOFs) or {} (all DOFs)",
                    values.len(),
                    self.observed.len(),
                    self.names.len()
                ))
            }
        };
        let mut slots = vec![None; self.names.len()];
        for (raw, target) in values.iter().zip(targets) {
            let Some(d) = target else { continue };
            if raw.is_empty() || !self.observed.contains(&d) {
                continue;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| format!("column `{}`: cannot parse `{raw}`", self.names[d]))?;
            if !v.is_finite() {
                return Err(format!("column `{}`: non-finite value `{raw}`", self.names[d]));
            }
            slots[d] = Some(v);
        }
        Ok(Line::Frame {
            time: fields[0].to_string(),
            frame: ObservationFrame::new(slots),
        })
    }

    fn header(&mut self, names: &[&str]) -> Result<Vec<String>, String> {
        let mut seen = Vec::new();
        let mut unknown = Vec::new();
        let columns = names
            .iter()
            .map(|&name| {
                if seen.contains(&name) {
                    return Err(format!("header repeats column `{name}`"));
                }
                seen.push(name);
                let d = self.names.iter().position(|n| n == name);
                if d.is_none() {
                    unknown.push(name.to_string());
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.columns = Some(columns);
        Ok(unknown)
    }
}
