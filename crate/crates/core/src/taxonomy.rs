//! Morphological description of controllers.
//!
//! Each sensed dimension records what physical variable is measured
//! (position or force, or their change), whether it is linear or rotary, the
//! axis it acts on, its resolution, and the transducer group it belongs to.
//! Dimensions in the same group are sensed together by one composed
//! transducer, which is what makes them integral.
//!
//! Device descriptor files are TOML:
//!
//! ```toml
//! name = "mouse"
//!
//! [[dimensions]]
//! property = "delta-position"   # position | delta-position | force | delta-force
//! geometry = "linear"           # linear | rotary
//! axis = "X"                    # X | Y | Z | rX | rY | rZ
//! resolution = "continuous"     # integer >= 2 or "continuous"
//! group = "sensor"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaxonomyError {
    #[error("invalid device descriptor: {0}")]
    Validation(String),
    #[error("task needs {attributes} attributes but the device senses only {dof} dimensions")]
    Capacity { attributes: usize, dof: usize },
    #[error("cannot parse device descriptor: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    Position,
    DeltaPosition,
    Force,
    DeltaForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    Linear,
    /// Rotary position is an angle, rotary force a torque.
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
    #[serde(rename = "rX")]
    RX,
    #[serde(rename = "rY")]
    RY,
    #[serde(rename = "rZ")]
    RZ,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::X, Axis::Y, Axis::Z, Axis::RX, Axis::RY, Axis::RZ];

    pub fn is_rotational(self) -> bool {
        matches!(self, Axis::RX | Axis::RY | Axis::RZ)
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
            Axis::RX => "rX",
            Axis::RY => "rY",
            Axis::RZ => "rZ",
        }
    }

    fn column(self) -> usize {
        Axis::ALL.iter().position(|&a| a == self).unwrap()
    }
}

/// Number of distinguishable values, or a continuous sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ResolutionRepr", into = "ResolutionRepr")]
pub enum Resolution {
    Levels(u32),
    Continuous,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ResolutionRepr {
    Levels(u32),
    Marker(String),
}

impl TryFrom<ResolutionRepr> for Resolution {
    type Error = String;

    fn try_from(r: ResolutionRepr) -> Result<Self, Self::Error> {
        match r {
            ResolutionRepr::Levels(n) if n >= 2 => Ok(Resolution::Levels(n)),
            ResolutionRepr::Levels(n) => Err(format!("resolution must be >= 2, got {n}")),
            ResolutionRepr::Marker(m) if m == "continuous" => Ok(Resolution::Continuous),
            ResolutionRepr::Marker(m) => Err(format!("unknown resolution marker {m:?}")),
        }
    }
}

impl From<Resolution> for ResolutionRepr {
    fn from(r: Resolution) -> Self {
        match r {
            Resolution::Levels(n) => ResolutionRepr::Levels(n),
            Resolution::Continuous => ResolutionRepr::Marker("continuous".into()),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Levels(n) => write!(f, "{n}"),
            Resolution::Continuous => f.write_str("cont"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SenseDimension {
    pub property: Property,
    pub geometry: Geometry,
    pub axis: Axis,
    pub resolution: Resolution,
    pub group: String,
}

impl SenseDimension {
    pub fn new(
        property: Property,
        geometry: Geometry,
        axis: Axis,
        resolution: Resolution,
        group: &str,
    ) -> Self {
        Self {
            property,
            geometry,
            axis,
            resolution,
            group: group.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDescriptor {
    pub name: String,
    #[serde(default)]
    pub dimensions: Vec<SenseDimension>,
}

impl DeviceDescriptor {
    pub fn new(name: &str, dimensions: Vec<SenseDimension>) -> Self {
        Self {
            name: name.to_string(),
            dimensions,
        }
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if self.name.trim().is_empty() {
            return Err(TaxonomyError::Validation("device name is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for d in &self.dimensions {
            if let Resolution::Levels(n) = d.resolution {
                if n < 2 {
                    return Err(TaxonomyError::Validation(format!(
                        "resolution must be >= 2, got {n}"
                    )));
                }
            }
            let rotary = d.geometry == Geometry::Rotary;
            if rotary != d.axis.is_rotational() {
                return Err(TaxonomyError::Validation(format!(
                    "{:?} geometry cannot act on axis {}",
                    d.geometry,
                    d.axis.label()
                )));
            }
            if !seen.insert((d.property, d.geometry, d.axis, d.group.as_str())) {
                return Err(TaxonomyError::Validation(format!(
                    "duplicate dimension {:?}/{:?}/{} in group {:?}",
                    d.property,
                    d.geometry,
                    d.axis.label(),
                    d.group
                )));
            }
        }
        Ok(())
    }

    /// Parses and validates a TOML descriptor; unknown fields are rejected.
    pub fn from_toml(text: &str) -> Result<Self, TaxonomyError> {
        let device: DeviceDescriptor =
            toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        device.validate()?;
        Ok(device)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor serializes to TOML")
    }
}

pub fn degrees_of_freedom(device: &DeviceDescriptor) -> usize {
    device.dimensions.len()
}

/// Chart rows in display order.
pub const CHART_ROWS: [(Property, Geometry, &str); 8] = [
    (Property::Position, Geometry::Linear, "position"),
    (Property::Position, Geometry::Rotary, "angle"),
    (Property::Force, Geometry::Linear, "force"),
    (Property::Force, Geometry::Rotary, "torque"),
    (Property::DeltaPosition, Geometry::Linear, "delta-position"),
    (Property::DeltaPosition, Geometry::Rotary, "delta-angle"),
    (Property::DeltaForce, Geometry::Linear, "delta-force"),
    (Property::DeltaForce, Geometry::Rotary, "delta-torque"),
];

fn chart_row(property: Property, geometry: Geometry) -> usize {
    CHART_ROWS
        .iter()
        .position(|&(p, g, _)| p == property && g == geometry)
        .unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Marker {
    pub device: String,
    pub resolution: Resolution,
}

/// Controller chart: one row per sensed variable, one column per axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chart {
    pub devices: Vec<String>,
    /// `cells[row][column]`, markers sorted by device name.
    pub cells: Vec<Vec<Vec<Marker>>>,
}

pub fn build_chart(devices: &[DeviceDescriptor]) -> Result<Chart, TaxonomyError> {
    let mut names = BTreeSet::new();
    for d in devices {
        d.validate()?;
        if !names.insert(d.name.clone()) {
            return Err(TaxonomyError::Validation(format!(
                "duplicate device name {:?}",
                d.name
            )));
        }
    }
    let mut cells = vec![vec![Vec::new(); Axis::ALL.len()]; CHART_ROWS.len()];
    for d in devices {
        for dim in &d.dimensions {
            cells[chart_row(dim.property, dim.geometry)][dim.axis.column()].push(Marker {
                device: d.name.clone(),
                resolution: dim.resolution,
            });
        }
    }
    for cell in cells.iter_mut().flatten() {
        cell.sort();
    }
    Ok(Chart {
        devices: names.into_iter().collect(),
        cells,
    })
}

impl Chart {
    fn cell_text(&self, row: usize, col: usize) -> String {
        self.cells[row][col]
            .iter()
            .map(|m| format!("{} ({})", m.device, m.resolution))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn render_text(&self) -> String {
        let mut table: Vec<Vec<String>> = Vec::with_capacity(CHART_ROWS.len() + 1);
        let mut header = vec!["variable".to_string()];
        header.extend(Axis::ALL.iter().map(|a| a.label().to_string()));
        table.push(header);
        for (r, &(_, _, label)) in CHART_ROWS.iter().enumerate() {
            let mut row = vec![label.to_string()];
            row.extend((0..Axis::ALL.len()).map(|c| self.cell_text(r, c)));
            table.push(row);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| {
                table
                    .iter()
                    .map(|row| row[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();

        let mut out = String::new();
        writeln!(out, "controllers: {}", self.devices.join(", ")).unwrap();
        for (i, row) in table.iter().enumerate() {
            let line = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ");
            writeln!(out, "{}", line.trim_end()).unwrap();
            if i == 0 {
                let rule = widths
                    .iter()
                    .map(|&w| "-".repeat(w))
                    .collect::<Vec<_>>()
                    .join("-+-");
                writeln!(out, "{rule}").unwrap();
            }
        }
        out
    }

    pub fn render_svg(&self) -> String {
        const LABEL_W: usize = 120;
        const COL_W: usize = 150;
        const LINE_H: usize = 16;
        const PAD: usize = 6;

        let row_lines: Vec<usize> = self
            .cells
            .iter()
            .map(|row| row.iter().map(Vec::len).max().unwrap_or(0).max(1))
            .collect();
        let width = LABEL_W + COL_W * Axis::ALL.len();
        let header_h = LINE_H + 2 * PAD;
        let height = header_h
            + row_lines
                .iter()
                .map(|n| n * LINE_H + 2 * PAD)
                .sum::<usize>();

        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="12">"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white" stroke="black"/>"#
        )
        .unwrap();
        for (c, axis) in Axis::ALL.iter().enumerate() {
            let x = LABEL_W + c * COL_W;
            writeln!(
                out,
                r#"<line x1="{x}" y1="0" x2="{x}" y2="{height}" stroke="black"/>"#
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{}" y="{}">{}</text>"#,
                x + PAD,
                PAD + LINE_H - 4,
                axis.label()
            )
            .unwrap();
        }
        let mut y = header_h;
        for (r, &(_, _, label)) in CHART_ROWS.iter().enumerate() {
            writeln!(
                out,
                r#"<line x1="0" y1="{y}" x2="{width}" y2="{y}" stroke="black"/>"#
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{PAD}" y="{}">{label}</text>"#,
                y + PAD + LINE_H - 4
            )
            .unwrap();
            for c in 0..Axis::ALL.len() {
                let x = LABEL_W + c * COL_W + PAD;
                for (k, m) in self.cells[r][c].iter().enumerate() {
                    writeln!(
                        out,
                        r#"<text x="{x}" y="{}">{} ({})</text>"#,
                        y + PAD + (k + 1) * LINE_H - 4,
                        xml_escape(&m.device),
                        m.resolution
                    )
                    .unwrap();
                }
            }
            y += row_lines[r] * LINE_H + 2 * PAD;
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Integral,
    Separable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskStructure {
    pub attributes: Vec<String>,
    pub structure: Structure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupClass {
    pub group: String,
    pub dimensions: usize,
    pub structure: Structure,
}

/// Per-group classification: groups with two or more dimensions are
/// integral, single-dimension groups separable. Groups are listed by name.
pub fn classify_control_structure(device: &DeviceDescriptor) -> Vec<GroupClass> {
    group_members(device)
        .into_iter()
        .map(|(group, dims)| GroupClass {
            group: group.to_string(),
            dimensions: dims.len(),
            structure: if dims.len() >= 2 {
                Structure::Integral
            } else {
                Structure::Separable
            },
        })
        .collect()
}

fn group_members(device: &DeviceDescriptor) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in device.dimensions.iter().enumerate() {
        groups.entry(d.group.as_str()).or_default().push(i);
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchReport {
    pub verdict: Verdict,
    /// Witness: attribute label and the index of the dimension assigned to it.
    pub assignment: Vec<(String, usize)>,
    pub reason: Option<String>,
}

/// Integral tasks need all attributes on dimensions of one group; separable
/// tasks need them on dimensions of pairwise distinct groups.
pub fn match_device_to_task(
    device: &DeviceDescriptor,
    task: &TaskStructure,
) -> Result<MatchReport, TaxonomyError> {
    let k = task.attributes.len();
    if k == 0 {
        return Err(TaxonomyError::Validation("task has no attributes".into()));
    }
    let dof = degrees_of_freedom(device);
    if k > dof {
        return Err(TaxonomyError::Capacity { attributes: k, dof });
    }
    let groups = group_members(device);
    let dims: Option<Vec<usize>> = match task.structure {
        Structure::Integral => groups
            .values()
            .find(|members| members.len() >= k)
            .map(|members| members[..k].to_vec()),
        Structure::Separable => {
            (groups.len() >= k).then(|| groups.values().take(k).map(|members| members[0]).collect())
        }
    };
    Ok(match dims {
        Some(dims) => MatchReport {
            verdict: Verdict::Match,
            assignment: task.attributes.iter().cloned().zip(dims).collect(),
            reason: None,
        },
        None => {
            let reason = match task.structure {
                Structure::Integral => {
                    let largest = groups.values().map(Vec::len).max().unwrap_or(0);
                    format!("integral task needs {k} dimensions in one group; largest group has {largest}")
                }
                Structure::Separable => {
                    format!(
                        "separable task needs {k} distinct groups; device has {}",
                        groups.len()
                    )
                }
            };
            MatchReport {
                verdict: Verdict::Mismatch,
                assignment: Vec::new(),
                reason: Some(reason),
            }
        }
    })
}
