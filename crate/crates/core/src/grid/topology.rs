//! Grid topology: node declarations, cable runs, and the file format they
//! are loaded from.

use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{GridError, ParseError};

/// Per-kilometre cable parameters. The series branch is three resistive
/// paths in parallel (inductors are short in steady state); the shunt
/// conductance is split half per endpoint as a pi section.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CableParams {
    /// Series resistance of the first parallel path [Ω/km].
    pub r1: f64,
    /// Series resistance of the second parallel path [Ω/km].
    pub r2: f64,
    /// Series resistance of the third parallel path [Ω/km].
    pub r3: f64,
    /// Total shunt conductance [Ω⁻¹/km].
    pub g: f64,
}

impl CableParams {
    /// Steady-state series resistance per kilometre: r1 ∥ r2 ∥ r3.
    pub fn series_resistance_per_km(&self) -> f64 {
        1.0 / (1.0 / self.r1 + 1.0 / self.r2 + 1.0 / self.r3)
    }
}

/// Whether a station forms the dc grid (dispatchable voltage setpoint) or
/// behaves as a constant-power injection with grid-dictated voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    DcGfm,
    AcGfm,
}

/// A transmission line between two declared nodes.
#[derive(Debug, Clone)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub length_km: f64,
    pub cable: CableParams,
}

impl Line {
    /// Total series resistance of this run [Ω].
    pub fn series_resistance(&self) -> f64 {
        self.length_km * self.cable.series_resistance_per_km()
    }

    /// Total shunt conductance of this run [Ω⁻¹], before the per-endpoint split.
    pub fn shunt_conductance(&self) -> f64 {
        self.length_km * self.cable.g
    }
}

/// Validated grid topology. Node order is fixed at construction: all
/// dc-GFM nodes first (in declaration order), then all ac-GFM nodes.
/// Every vector and matrix in the crate follows this ordering.
#[derive(Debug, Clone)]
pub struct GridTopology {
    dcgfm_nodes: Vec<String>,
    acgfm_nodes: Vec<String>,
    /// Rated apparent power per node [VA], same order as `node_ids`.
    ratings: Vec<f64>,
    lines: Vec<Line>,
    index: BTreeMap<String, usize>,
}

impl GridTopology {
    /// Build and validate a topology. `nodes` is (id, kind, rating [VA]).
    pub fn new(
        nodes: Vec<(String, NodeKind, f64)>,
        lines: Vec<Line>,
    ) -> Result<Self, GridError> {
        let mut dcgfm = Vec::new();
        let mut acgfm = Vec::new();
        for (id, kind, rating) in &nodes {
            if !rating.is_finite() || *rating <= 0.0 {
                return Err(GridError::InvalidTopology(format!(
                    "node {id}: rating must be positive, got {rating}"
                )));
            }
            match kind {
                NodeKind::DcGfm => dcgfm.push(id.clone()),
                NodeKind::AcGfm => acgfm.push(id.clone()),
            }
        }
        if dcgfm.is_empty() {
            return Err(GridError::InvalidTopology(
                "at least one dc-GFM node is required".into(),
            ));
        }

        let mut index = BTreeMap::new();
        let mut ratings = vec![0.0; nodes.len()];
        for (pos, id) in dcgfm.iter().chain(acgfm.iter()).enumerate() {
            if index.insert(id.clone(), pos).is_some() {
                return Err(GridError::InvalidTopology(format!(
                    "duplicate node id {id}"
                )));
            }
        }
        for (id, _, rating) in &nodes {
            ratings[index[id]] = *rating;
        }

        for line in &lines {
            for end in [&line.from, &line.to] {
                if !index.contains_key(end) {
                    return Err(GridError::InvalidTopology(format!(
                        "line {}-{} references undeclared node {end}",
                        line.from, line.to
                    )));
                }
            }
            if line.from == line.to {
                return Err(GridError::InvalidTopology(format!(
                    "line {}-{} is a self loop",
                    line.from, line.to
                )));
            }
            if !(line.length_km > 0.0) {
                return Err(GridError::InvalidTopology(format!(
                    "line {}-{}: length must be positive, got {}",
                    line.from, line.to, line.length_km
                )));
            }
            let c = &line.cable;
            if !(c.r1 > 0.0 && c.r2 > 0.0 && c.r3 > 0.0) {
                return Err(GridError::InvalidTopology(format!(
                    "line {}-{}: series resistances must be positive",
                    line.from, line.to
                )));
            }
            if c.g < 0.0 {
                return Err(GridError::InvalidTopology(format!(
                    "line {}-{}: shunt conductance must be nonnegative",
                    line.from, line.to
                )));
            }
        }

        let topo = Self {
            dcgfm_nodes: dcgfm,
            acgfm_nodes: acgfm,
            ratings,
            lines,
            index,
        };
        topo.check_connected()?;
        Ok(topo)
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let total = self.node_count();
        if total == 1 {
            return Ok(());
        }
        let mut adjacency = vec![Vec::new(); total];
        for line in &self.lines {
            let a = self.index[&line.from];
            let b = self.index[&line.to];
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut seen = vec![false; total];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for &next in &adjacency[node] {
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(GridError::InvalidTopology(format!(
                "node {} is not connected to the rest of the grid",
                self.node_ids()[orphan]
            )));
        }
        Ok(())
    }

    /// Number of dc-GFM nodes (n).
    pub fn dcgfm_count(&self) -> usize {
        self.dcgfm_nodes.len()
    }

    /// Number of ac-GFM nodes (m).
    pub fn acgfm_count(&self) -> usize {
        self.acgfm_nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.dcgfm_nodes.len() + self.acgfm_nodes.len()
    }

    pub fn dcgfm_ids(&self) -> &[String] {
        &self.dcgfm_nodes
    }

    pub fn acgfm_ids(&self) -> &[String] {
        &self.acgfm_nodes
    }

    /// All node ids in the canonical order (dc-GFM first, then ac-GFM).
    pub fn node_ids(&self) -> Vec<&str> {
        self.dcgfm_nodes
            .iter()
            .chain(self.acgfm_nodes.iter())
            .map(String::as_str)
            .collect()
    }

    /// Position of a node in the canonical order.
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Rated apparent power [VA] in canonical node order.
    pub fn ratings(&self) -> &[f64] {
        &self.ratings
    }

    /// Rated dc currents I* = S* / V_nom [A] for the dc-GFM nodes.
    pub fn rated_currents(&self, v_nom: f64) -> Vec<f64> {
        self.ratings[..self.dcgfm_count()]
            .iter()
            .map(|s| s / v_nom)
            .collect()
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Load a topology from its TOML file form.
    pub fn load(path: &Path) -> Result<Self, ParseError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse the topology file format. `origin` names the source in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ParseError> {
        let file: TopologyFile = toml::from_str(text).map_err(|e| syntax_error(origin, text, e))?;
        let nodes = file
            .node
            .into_iter()
            .map(|n| (n.id, n.kind, n.rating))
            .collect();
        let lines = file
            .line
            .into_iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                length_km: l.length_km,
                cable: CableParams {
                    r1: l.r1,
                    r2: l.r2,
                    r3: l.r3,
                    g: l.g,
                },
            })
            .collect();
        GridTopology::new(nodes, lines).map_err(|e| ParseError::Schema {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }
}

/// Convert a TOML error span into a line/column report.
pub(crate) fn syntax_error(origin: &str, text: &str, err: toml::de::Error) -> ParseError {
    let (line, column) = err
        .span()
        .map(|span| {
            let upto = &text[..span.start.min(text.len())];
            let line = upto.bytes().filter(|&b| b == b'\n').count() + 1;
            let column = upto.len() - upto.rfind('\n').map_or(0, |p| p + 1) + 1;
            (line, column)
        })
        .unwrap_or((0, 0));
    ParseError::Syntax {
        path: origin.to_string(),
        line,
        column,
        message: err.message().to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    #[serde(default)]
    node: Vec<NodeEntry>,
    #[serde(default)]
    line: Vec<LineEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: String,
    kind: NodeKind,
    /// Rated apparent power [VA].
    rating: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineEntry {
    from: String,
    to: String,
    length_km: f64,
    r1: f64,
    r2: f64,
    r3: f64,
    g: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cable() -> CableParams {
        CableParams {
            r1: 0.1265,
            r2: 0.1504,
            r3: 0.0178,
            g: 0.1015e-6,
        }
    }

    fn line(from: &str, to: &str, km: f64) -> Line {
        Line {
            from: from.into(),
            to: to.into(),
            length_km: km,
            cable: cable(),
        }
    }

    #[test]
    fn orders_dcgfm_before_acgfm() {
        let topo = GridTopology::new(
            vec![
                ("hub".into(), NodeKind::AcGfm, 1e9),
                ("area".into(), NodeKind::DcGfm, 2e9),
            ],
            vec![line("area", "hub", 100.0)],
        )
        .unwrap();
        assert_eq!(topo.node_ids(), vec!["area", "hub"]);
        assert_eq!(topo.node_index("area"), Some(0));
        assert_eq!(topo.ratings(), &[2e9, 1e9]);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = GridTopology::new(
            vec![
                ("a".into(), NodeKind::DcGfm, 1e9),
                ("a".into(), NodeKind::AcGfm, 1e9),
            ],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn rejects_disconnected_graph() {
        let err = GridTopology::new(
            vec![
                ("a".into(), NodeKind::DcGfm, 1e9),
                ("b".into(), NodeKind::DcGfm, 1e9),
            ],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("not connected"));
    }

    #[test]
    fn rejects_nonpositive_length() {
        let err = GridTopology::new(
            vec![
                ("a".into(), NodeKind::DcGfm, 1e9),
                ("b".into(), NodeKind::AcGfm, 1e9),
            ],
            vec![line("a", "b", 0.0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("length"));
    }

    #[test]
    fn rejects_undeclared_endpoint() {
        let err = GridTopology::new(
            vec![("a".into(), NodeKind::DcGfm, 1e9)],
            vec![line("a", "ghost", 50.0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("undeclared"));
    }

    #[test]
    fn single_node_without_lines_is_valid() {
        let topo =
            GridTopology::new(vec![("solo".into(), NodeKind::DcGfm, 1e9)], vec![]).unwrap();
        assert_eq!(topo.node_count(), 1);
    }

    #[test]
    fn parses_file_form() {
        let text = r#"
            [[node]]
            id = "area1"
            kind = "dcgfm"
            rating = 2000e6

            [[node]]
            id = "hub7"
            kind = "acgfm"
            rating = 1000e6

            [[line]]
            from = "area1"
            to = "hub7"
            length_km = 120.0
            r1 = 0.1265
            r2 = 0.1504
            r3 = 0.0178
            g = 0.1015e-6
        "#;
        let topo = GridTopology::parse(text, "inline").unwrap();
        assert_eq!(topo.dcgfm_count(), 1);
        assert_eq!(topo.acgfm_count(), 1);
        assert_eq!(topo.lines().len(), 1);
    }

    #[test]
    fn parse_error_reports_line_and_column() {
        let text = "[[node]]\nid = \"a\"\nkind = \"dcgfm\"\nrating = \"oops\"\n";
        let err = GridTopology::parse(text, "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("bad.toml:4:"), "got: {msg}");
    }
}
