//! DOF metadata, demonstration cycles and the comma-separated dataset format.
//!
//! ```text
//! #dofs shank_angle:observed:deg:phase_pos,shank_vel:observed:deg/s:phase_vel,knee_moment:latent:Nmm/kg
//! cycle_id,time_s,shank_angle,shank_vel,knee_moment
//! 0,0,12.5,-3.25,40.1
//! ...
//! ```

use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DOFS_PREFIX: &str = "#dofs ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DofRole {
    /// Measured by a sensor at run time.
    Observed,
    /// Only available offline (e.g. a joint moment); inferred at run time.
    Latent,
    /// A command for an actuated device; inferred at run time.
    Controlled,
}

impl DofRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DofRole::Observed => "observed",
            DofRole::Latent => "latent",
            DofRole::Controlled => "controlled",
        }
    }
}

impl fmt::Display for DofRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DofRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(DofRole::Observed),
            "latent" => Ok(DofRole::Latent),
            "controlled" => Ok(DofRole::Controlled),
            other => Err(Error::invalid(format!("unknown DOF role `{other}`"))),
        }
    }
}

/// Marks the DOF pair feeding the phase manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseInput {
    Position,
    Velocity,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DofSpec {
    pub name: String,
    pub role: DofRole,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub phase_input: Option<PhaseInput>,
}

impl DofSpec {
    pub fn new(name: impl Into<String>, role: DofRole, unit: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role,
            unit: unit.into(),
            phase_input: None,
        }
    }

    pub fn with_phase_input(mut self, input: PhaseInput) -> Self {
        self.phase_input = Some(input);
        self
    }

    fn header_token(&self) -> String {
        let mut s = format!("{}:{}:{}", self.name, self.role, self.unit);
        match self.phase_input {
            Some(PhaseInput::Position) => s.push_str(":phase_pos"),
            Some(PhaseInput::Velocity) => s.push_str(":phase_vel"),
            None => {}
        }
        s
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

/// Checks names, units and the phase-input designation of a DOF list.
pub fn validate_dofs(dofs: &[DofSpec]) -> Result<()> {
    if dofs.is_empty() {
        return Err(Error::invalid("at least one DOF is required"));
    }
    for (i, d) in dofs.iter().enumerate() {
        if !valid_name(&d.name) || d.name == "cycle_id" || d.name == "time_s" {
            return Err(Error::invalid(format!("invalid DOF name `{}`", d.name)));
        }
        if d.unit.contains([',', ':', '\n', '\r']) {
            return Err(Error::invalid(format!("DOF `{}` has an invalid unit string", d.name)));
        }
        if dofs[..i].iter().any(|o| o.name == d.name) {
            return Err(Error::invalid(format!("duplicate DOF name `{}`", d.name)));
        }
    }
    for input in [PhaseInput::Position, PhaseInput::Velocity] {
        let marked: Vec<&DofSpec> = dofs.iter().filter(|d| d.phase_input == Some(input)).collect();
        let label = match input {
            PhaseInput::Position => "phase_pos",
            PhaseInput::Velocity => "phase_vel",
        };
        match marked.as_slice() {
            [d] if d.role == DofRole::Observed => {}
            [d] => {
                return Err(Error::invalid(format!(
                    "`{label}` DOF `{}` must have role observed",
                    d.name
                )))
            }
            _ => {
                return Err(Error::invalid(format!(
                    "exactly one DOF must be marked `{label}`, found {}",
                    marked.len()
                )))
            }
        }
    }
    Ok(())
}

/// One pre-segmented cycle, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub cycle_id: u64,
    pub times: Vec<f64>,
    /// `columns[d][t]`, one column per DOF in dataset order.
    pub columns: Vec<Vec<f64>>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[t]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dofs: Vec<DofSpec>,
    cycles: Vec<Demonstration>,
}

impl Dataset {
    pub fn new(dofs: Vec<DofSpec>, cycles: Vec<Demonstration>) -> Result<Self> {
        validate_dofs(&dofs)?;
        for (k, c) in cycles.iter().enumerate() {
            if cycles[..k].iter().any(|o| o.cycle_id == c.cycle_id) {
                return Err(Error::Data(format!("duplicate cycle_id {}", c.cycle_id)));
            }
            if k > 0 && cycles[k - 1].cycle_id > c.cycle_id {
                return Err(Error::Data(format!(
                    "cycles are not sorted by cycle_id (cycle {} after {})",
                    c.cycle_id,
                    cycles[k - 1].cycle_id
                )));
            }
            if c.len() < 2 {
                return Err(Error::Data(format!(
                    "cycle {} has {} rows, at least 2 required",
                    c.cycle_id,
                    c.len()
                )));
            }
            if c.columns.len() != dofs.len() {
                return Err(Error::Data(format!(
                    "cycle {} has {} columns, expected {}",
                    c.cycle_id,
                    c.columns.len(),
                    dofs.len()
                )));
            }
            if let Some(t) = c.times.iter().position(|t| !t.is_finite()) {
                return Err(Error::Data(format!(
                    "cycle {}, column `time_s`, row {t}: non-finite value",
                    c.cycle_id
                )));
            }
            if let Some(t) = c.times.windows(2).position(|w| w[1] <= w[0]) {
                return Err(Error::Data(format!(
                    "cycle {}, column `time_s`: times not strictly increasing at row {}",
                    c.cycle_id,
                    t + 1
                )));
            }
            for (d, col) in c.columns.iter().enumerate() {
                if col.len() != c.len() {
                    return Err(Error::Data(format!(
                        "cycle {}, column `{}`: {} values for {} timestamps",
                        c.cycle_id,
                        dofs[d].name,
                        col.len(),
                        c.len()
                    )));
                }
                if let Some(t) = col.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "cycle {}, column `{}`, row {t}: non-finite value",
                        c.cycle_id, dofs[d].name
                    )));
                }
            }
        }
        Ok(Self { dofs, cycles })
    }

    pub fn dofs(&self) -> &[DofSpec] {
        &self.dofs
    }

    pub fn cycles(&self) -> &[Demonstration] {
        &self.cycles
    }

    pub fn into_parts(self) -> (Vec<DofSpec>, Vec<Demonstration>) {
        (self.dofs, self.cycles)
    }

    pub fn dof_index(&self, name: &str) -> Option<usize> {
        self.dofs.iter().position(|d| d.name == name)
    }

    /// Keeps only the cycles accepted by `keep`.
    pub fn filter_cycles(&self, mut keep: impl FnMut(&Demonstration) -> bool) -> Dataset {
        Dataset {
            dofs: self.dofs.clone(),
            cycles: self.cycles.iter().filter(|c| keep(c)).cloned().collect(),
        }
    }

    /// Peak-to-peak amplitude of every DOF over all cycles.
    pub fn peak_to_peak(&self) -> Vec<f64> {
        (0..self.dofs.len())
            .map(|d| {
                let (lo, hi) = self
                    .cycles
                    .iter()
                    .flat_map(|c| c.columns[d].iter())
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                if hi >= lo {
                    hi - lo
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Serializes to the dataset text format.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(DOFS_PREFIX);
        let tokens: Vec<String> = self.dofs.iter().map(DofSpec::header_token).collect();
        out.push_str(&tokens.join(","));
        out.push('\n');
        out.push_str("cycle_id,time_s");
        for d in &self.dofs {
            out.push(',');
            out.push_str(&d.name);
        }
        out.push('\n');
        for c in &self.cycles {
            for t in 0..c.len() {
                let _ = write!(out, "{},{}", c.cycle_id, c.times[t]);
                for col in &c.columns {
                    let _ = write!(out, ",{}", col[t]);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        Self::from_reader(s.as_bytes())
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let first = match lines.next() {
            Some((_, l)) => l?,
            None => return Err(Error::Data("line 1: empty dataset file".into())),
        };
        let dofs = parse_dofs_line(first.trim_end_matches('\r'))?;
        let header = match lines.next() {
            Some((_, l)) => l?,
            None => return Err(Error::Data("line 2: missing column header".into())),
        };
        let expected: Vec<&str> = ["cycle_id", "time_s"]
            .into_iter()
            .chain(dofs.iter().map(|d| d.name.as_str()))
            .collect();
        let got: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if got != expected {
            return Err(Error::Data(format!(
                "line 2: header `{}` does not match DOF declaration (expected `{}`)",
                header.trim_end(),
                expected.join(",")
            )));
        }

        let mut cycles: Vec<Demonstration> = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim_end_matches('\r');
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected.len() {
                return Err(Error::Data(format!(
                    "line {lineno}: {} fields, expected {}",
                    fields.len(),
                    expected.len()
                )));
            }
            let cycle_id: u64 = fields[0].trim().parse().map_err(|_| {
                Error::Data(format!(
                    "line {lineno}, column `cycle_id`: cannot parse `{}` as an unsigned integer",
                    fields[0]
                ))
            })?;
            let parse = |k: usize| -> Result<f64> {
                fields[k].trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "line {lineno}, column `{}`: cannot parse `{}` as a number",
                        expected[k], fields[k]
                    ))
                })
            };
            let time = parse(1)?;
            let start_new = match cycles.last() {
                Some(c) if c.cycle_id == cycle_id => false,
                Some(c) if c.cycle_id > cycle_id => {
                    return Err(Error::Data(format!(
                        "line {lineno}: cycle_id {cycle_id} after {}; rows must be sorted by (cycle_id, time_s)",
                        c.cycle_id
                    )))
                }
                _ => true,
            };
            if start_new {
                cycles.push(Demonstration {
                    cycle_id,
                    times: Vec::new(),
                    columns: vec![Vec::new(); dofs.len()],
                });
            }
            let cycle = cycles.last_mut().expect("cycle just pushed");
            cycle.times.push(time);
            for d in 0..dofs.len() {
                cycle.columns[d].push(parse(d + 2)?);
            }
        }
        Dataset::new(dofs, cycles)
    }
}

fn parse_dofs_line(line: &str) -> Result<Vec<DofSpec>> {
    let body = line
        .strip_prefix(DOFS_PREFIX)
        .ok_or_else(|| Error::Data("line 1: expected `#dofs name:role:unit[:phase_pos|:phase_vel],...`".into()))?;
    let dofs = body
        .split(',')
        .map(|token| {
            let parts: Vec<&str> = token.split(':').collect();
            if !(3..=4).contains(&parts.len()) {
                return Err(Error::Data(format!("line 1: malformed DOF declaration `{token}`")));
            }
            let role = parts[1]
                .parse::<DofRole>()
                .map_err(|e| Error::Data(format!("line 1: {e}")))?;
            let mut spec = DofSpec::new(parts[0], role, parts[2]);
            if let Some(flag) = parts.get(3) {
                spec.phase_input = Some(match *flag {
                    "phase_pos" => PhaseInput::Position,
                    "phase_vel" => PhaseInput::Velocity,
                    other => {
                        return Err(Error::Data(format!("line 1: unknown DOF flag `{other}`")))
                    }
                });
            }
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    validate_dofs(&dofs).map_err(|e| Error::Data(format!("line 1: {e}")))?;
    Ok(dofs)
}
