//! Scenario files: a TOML/JSON schema describing the exhaustion, the
//! operator coefficients (as presets or inline tables), the run grids, and
//! tolerance overrides.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::lattice::{build_exhaustion, Exhaustion, Node};
use crate::operator::{DriftField, EdgeField, NodeField, OperatorSpec};
use crate::spaces::Exponent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Classify,
    Norms,
    Spectrum,
    Semigroup,
    Perturb,
}

impl Suite {
    pub fn label(&self) -> &'static str {
        match self {
            Suite::Classify => "classify",
            Suite::Norms => "norms",
            Suite::Spectrum => "spectrum",
            Suite::Semigroup => "semigroup",
            Suite::Perturb => "perturb",
        }
    }

    pub fn all() -> Vec<Suite> {
        vec![
            Suite::Classify,
            Suite::Norms,
            Suite::Spectrum,
            Suite::Semigroup,
            Suite::Perturb,
        ]
    }
}

/// Node-field preset: a string like `"unit"`, `"constant:0.3"`,
/// `"radial:1.0,-4.0"`, `"box:0.5,2"`, `"bump:0.001,1.0,1"` or an inline
/// table `{ default = 1.0, nodes = [{ at = [0, 0], value = 2.0 }] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeFieldSpec {
    Preset(String),
    Table {
        default: f64,
        #[serde(default)]
        nodes: Vec<NodeEntry>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeEntry {
    pub at: Vec<i64>,
    pub value: f64,
}

/// Edge-field preset: `"unit"`, `"constant:2.0"`, `"checkerboard:1.0,2.0"`,
/// `"axis:1.0,2.0,0.5"` or an inline table with `edges` entries addressed
/// by lower endpoint and axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeFieldSpec {
    Preset(String),
    Table {
        default: f64,
        #[serde(default)]
        edges: Vec<EdgeEntry>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub at: Vec<i64>,
    pub axis: usize,
    pub value: f64,
}

fn pad_node(v: &[i64]) -> Node {
    let mut n = [0i64; 3];
    for (i, &c) in v.iter().take(3).enumerate() {
        n[i] = c;
    }
    n
}

fn parse_args(s: &str, what: &'static str) -> Result<Vec<f64>, ScenarioError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| ScenarioError::UnknownPreset(s.to_string(), what))
        })
        .collect()
}

impl NodeFieldSpec {
    pub fn resolve(&self, what: &'static str) -> Result<NodeField, ScenarioError> {
        match self {
            NodeFieldSpec::Table { default, nodes } => Ok(NodeField::Table {
                default: *default,
                entries: nodes.iter().map(|e| (pad_node(&e.at), e.value)).collect(),
            }),
            NodeFieldSpec::Preset(s) => {
                let (head, args) = s.split_once(':').unwrap_or((s.as_str(), ""));
                match head {
                    "unit" => Ok(NodeField::Constant(1.0)),
                    "zero" => Ok(NodeField::Constant(0.0)),
                    "constant" => {
                        let a = parse_args(args, what)?;
                        if a.len() != 1 {
                            return Err(ScenarioError::UnknownPreset(s.clone(), what));
                        }
                        Ok(NodeField::Constant(a[0]))
                    }
                    // "radial:alpha" is (1+|x|)^alpha; "radial:scale,alpha"
                    // adds a prefactor
                    "radial" => {
                        let a = parse_args(args, what)?;
                        match a.len() {
                            1 => Ok(NodeField::RadialPower {
                                scale: 1.0,
                                exponent: a[0],
                            }),
                            2 => Ok(NodeField::RadialPower {
                                scale: a[0],
                                exponent: a[1],
                            }),
                            _ => Err(ScenarioError::UnknownPreset(s.clone(), what)),
                        }
                    }
                    "box" => {
                        let a = parse_args(args, what)?;
                        if a.len() != 2 || a[1].fract() != 0.0 {
                            return Err(ScenarioError::UnknownPreset(s.clone(), what));
                        }
                        Ok(NodeField::BoxBump {
                            floor: 0.0,
                            height: a[0],
                            radius: a[1] as i64,
                        })
                    }
                    "bump" => {
                        let a = parse_args(args, what)?;
                        if a.len() != 3 || a[2].fract() != 0.0 {
                            return Err(ScenarioError::UnknownPreset(s.clone(), what));
                        }
                        Ok(NodeField::BoxBump {
                            floor: a[0],
                            height: a[1],
                            radius: a[2] as i64,
                        })
                    }
                    _ => Err(ScenarioError::UnknownPreset(s.clone(), what)),
                }
            }
        }
    }
}

impl EdgeFieldSpec {
    pub fn resolve(&self, what: &'static str) -> Result<EdgeField, ScenarioError> {
        match self {
            EdgeFieldSpec::Table { default, edges } => Ok(EdgeField::Table {
                default: *default,
                entries: edges
                    .iter()
                    .map(|e| (pad_node(&e.at), e.axis, e.value))
                    .collect(),
            }),
            EdgeFieldSpec::Preset(s) => {
                let (head, args) = s.split_once(':').unwrap_or((s.as_str(), ""));
                match head {
                    "unit" => Ok(EdgeField::Constant(1.0)),
                    "constant" => {
                        let a = parse_args(args, what)?;
                        if a.len() != 1 {
                            return Err(ScenarioError::UnknownPreset(s.clone(), what));
                        }
                        Ok(EdgeField::Constant(a[0]))
                    }
                    "checkerboard" => {
                        let a = parse_args(args, what)?;
                        if a.len() != 2 {
                            return Err(ScenarioError::UnknownPreset(s.clone(), what));
                        }
                        Ok(EdgeField::Checkerboard {
                            even: a[0],
                            odd: a[1],
                        })
                    }
                    "axis" => {
                        let a = parse_args(args, what)?;
                        if a.is_empty() || a.len() > 3 {
                            return Err(ScenarioError::UnknownPreset(s.clone(), what));
                        }
                        let mut v = [0.0; 3];
                        for (i, &x) in a.iter().enumerate() {
                            v[i] = x;
                        }
                        Ok(EdgeField::Axis(v))
                    }
                    _ => Err(ScenarioError::UnknownPreset(s.clone(), what)),
                }
            }
        }
    }

    pub fn resolve_drift(&self, what: &'static str) -> Result<DriftField, ScenarioError> {
        match self {
            EdgeFieldSpec::Table { default, edges } => Ok(DriftField::Table {
                default: *default,
                entries: edges
                    .iter()
                    .map(|e| (pad_node(&e.at), e.axis, e.value))
                    .collect(),
            }),
            EdgeFieldSpec::Preset(s) => {
                let (head, args) = s.split_once(':').unwrap_or((s.as_str(), ""));
                match head {
                    "zero" => Ok(DriftField::Zero),
                    "constant" => {
                        let a = parse_args(args, what)?;
                        if a.is_empty() || a.len() > 3 {
                            return Err(ScenarioError::UnknownPreset(s.clone(), what));
                        }
                        let mut v = [0.0; 3];
                        for (i, &x) in a.iter().enumerate() {
                            v[i] = x;
                        }
                        Ok(DriftField::Vector(v))
                    }
                    _ => Err(ScenarioError::UnknownPreset(s.clone(), what)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExhaustionSection {
    pub dimension: usize,
    pub radii: Vec<i64>,
    pub ambient_radius: i64,
    #[serde(default)]
    pub anchor: Option<Vec<i64>>,
    #[serde(default = "default_nu")]
    pub nu: NodeFieldSpec,
}

fn default_nu() -> NodeFieldSpec {
    NodeFieldSpec::Preset("unit".into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSection {
    #[serde(default = "default_unit_edge")]
    pub a: EdgeFieldSpec,
    #[serde(default = "default_zero_edge")]
    pub b: EdgeFieldSpec,
    #[serde(default = "default_zero_edge")]
    pub b_tilde: EdgeFieldSpec,
    #[serde(default = "default_zero_node")]
    pub c: NodeFieldSpec,
    #[serde(default = "default_unit_node")]
    pub w: NodeFieldSpec,
}

fn default_unit_edge() -> EdgeFieldSpec {
    EdgeFieldSpec::Preset("unit".into())
}
fn default_zero_edge() -> EdgeFieldSpec {
    EdgeFieldSpec::Preset("zero".into())
}
fn default_zero_node() -> NodeFieldSpec {
    NodeFieldSpec::Preset("zero".into())
}
fn default_unit_node() -> NodeFieldSpec {
    NodeFieldSpec::Preset("unit".into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_ps")]
    pub ps: Vec<String>,
    #[serde(default = "default_suites")]
    pub suites: Vec<String>,
    /// Optional expected criticality class checked by the classify suite.
    #[serde(default)]
    pub expect_class: Option<String>,
}

fn default_lambdas() -> Vec<f64> {
    vec![-0.5, -1.0, -2.0, -4.0]
}
fn default_ps() -> Vec<String> {
    ["1", "1.5", "2", "3", "inf"].map(String::from).to_vec()
}
fn default_suites() -> Vec<String> {
    vec!["all".into()]
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            lambdas: default_lambdas(),
            ps: default_ps(),
            suites: default_suites(),
            expect_class: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbSection {
    #[serde(default = "default_perturb_v")]
    pub v: NodeFieldSpec,
    #[serde(default = "default_perturb_modes")]
    pub modes: Vec<String>,
    #[serde(default)]
    pub comparability_lambda: f64,
    #[serde(default = "default_eps_excl")]
    pub eps_excl: i64,
}

fn default_perturb_v() -> NodeFieldSpec {
    NodeFieldSpec::Preset("radial:1.0,-4.0".into())
}
fn default_perturb_modes() -> Vec<String> {
    vec!["semismall".into()]
}
fn default_eps_excl() -> i64 {
    1
}

impl Default for PerturbSection {
    fn default() -> Self {
        PerturbSection {
            v: default_perturb_v(),
            modes: default_perturb_modes(),
            comparability_lambda: 0.0,
            eps_excl: default_eps_excl(),
        }
    }
}

/// Raw scenario file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub exhaustion: ExhaustionSection,
    pub operator: OperatorSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub perturb: PerturbSection,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

/// Numerical tolerances and box caps with spec defaults, overridable per
/// scenario through the `[tolerances]` table.
#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub norm_bound_slack: f64,
    pub norm_equality_tol: f64,
    pub eigen_identity_tol: f64,
    pub pde_residual_tol: f64,
    pub resolvent_defect_tol: f64,
    pub contraction_slack: f64,
    pub gelfand_agreement_tol: f64,
    pub monotonicity_slack: f64,
    pub schur_slack: f64,
    pub duality_defect_tol: f64,
    pub spectral_gap_tol: f64,
    pub cauchy_ratio: f64,
    pub norm_box_cap: f64,
    pub spectrum_box_cap: f64,
    pub semigroup_box_cap: f64,
    pub gelfand_steps: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            norm_bound_slack: 1e-8,
            norm_equality_tol: 1e-8,
            eigen_identity_tol: 1e-10,
            pde_residual_tol: 1e-8,
            resolvent_defect_tol: 1e-10,
            contraction_slack: 1e-9,
            gelfand_agreement_tol: 1e-6,
            monotonicity_slack: 1e-12,
            schur_slack: 1e-9,
            duality_defect_tol: 1e-12,
            spectral_gap_tol: 1e-8,
            cauchy_ratio: 0.5,
            norm_box_cap: 2000.0,
            spectrum_box_cap: 700.0,
            semigroup_box_cap: 450.0,
            gelfand_steps: 64.0,
        }
    }
}

impl Tolerances {
    pub fn with_overrides(map: &BTreeMap<String, f64>, path: &str) -> Result<Self, ScenarioError> {
        let mut t = Tolerances::default();
        for (k, &v) in map {
            match k.as_str() {
                "norm_bound_slack" => t.norm_bound_slack = v,
                "norm_equality_tol" => t.norm_equality_tol = v,
                "eigen_identity_tol" => t.eigen_identity_tol = v,
                "pde_residual_tol" => t.pde_residual_tol = v,
                "resolvent_defect_tol" => t.resolvent_defect_tol = v,
                "contraction_slack" => t.contraction_slack = v,
                "gelfand_agreement_tol" => t.gelfand_agreement_tol = v,
                "monotonicity_slack" => t.monotonicity_slack = v,
                "schur_slack" => t.schur_slack = v,
                "duality_defect_tol" => t.duality_defect_tol = v,
                "spectral_gap_tol" => t.spectral_gap_tol = v,
                "cauchy_ratio" => t.cauchy_ratio = v,
                "norm_box_cap" => t.norm_box_cap = v,
                "spectrum_box_cap" => t.spectrum_box_cap = v,
                "semigroup_box_cap" => t.semigroup_box_cap = v,
                "gelfand_steps" => t.gelfand_steps = v,
                other => {
                    return Err(ScenarioError::Parse {
                        path: path.to_string(),
                        message: format!("unknown tolerance key `{other}`"),
                    })
                }
            }
        }
        Ok(t)
    }
}

/// A parsed and resolved scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub file: ScenarioFile,
    pub exhaustion: Exhaustion,
    pub spec: OperatorSpec,
    pub lambdas: Vec<f64>,
    pub ps: Vec<Exponent>,
    pub suites: Vec<Suite>,
    pub perturb_v: NodeField,
    pub perturb_modes: Vec<crate::perturbation::PerturbationMode>,
    pub tolerances: Tolerances,
}

pub fn parse_scenario_str(text: &str, path: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = if path.ends_with(".json") {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_string(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?
    } else {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?
    };
    resolve_scenario(file, path)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text, &path.display().to_string())
}

fn resolve_scenario(file: ScenarioFile, path: &str) -> Result<Scenario, ScenarioError> {
    let nu = file.exhaustion.nu.resolve("nu")?;
    let dim = file.exhaustion.dimension;
    let anchor = file.exhaustion.anchor.as_ref().map(|v| pad_node(v));
    let exhaustion = build_exhaustion(
        dim,
        &file.exhaustion.radii,
        file.exhaustion.ambient_radius,
        anchor,
        |node| nu.eval(node, dim),
    )?;

    let spec = OperatorSpec {
        conductance: file.operator.a.resolve("a")?,
        drift_advection: file.operator.b.resolve_drift("b")?,
        drift_flux: file.operator.b_tilde.resolve_drift("b_tilde")?,
        potential: file.operator.c.resolve("c")?,
        weight: file.operator.w.resolve("w")?,
    };

    let mut ps = Vec::new();
    for s in &file.run.ps {
        let p = Exponent::parse(s).map_err(|_| ScenarioError::Parse {
            path: path.to_string(),
            message: format!("bad exponent `{s}` in run.ps"),
        })?;
        ps.push(p);
    }

    let mut suites = Vec::new();
    for s in &file.run.suites {
        match s.as_str() {
            "all" => suites = Suite::all(),
            "classify" => suites.push(Suite::Classify),
            "norms" => suites.push(Suite::Norms),
            "spectrum" => suites.push(Suite::Spectrum),
            "semigroup" => suites.push(Suite::Semigroup),
            "perturb" => suites.push(Suite::Perturb),
            other => {
                return Err(ScenarioError::Parse {
                    path: path.to_string(),
                    message: format!("unknown suite `{other}`"),
                })
            }
        }
    }
    // perturb consumes the classify report (subcriticality and the lambda0
    // sequence), so classify is pulled in automatically; the box suites
    // validate their shifts against their own principal pairs
    if suites.contains(&Suite::Perturb) && !suites.contains(&Suite::Classify) {
        suites.push(Suite::Classify);
    }
    suites.sort();
    suites.dedup();

    let perturb_v = file.perturb.v.resolve("perturb.v")?;
    let mut perturb_modes = Vec::new();
    for m in &file.perturb.modes {
        let mode = match m.as_str() {
            "small" => crate::perturbation::PerturbationMode::Small,
            "semismall" => crate::perturbation::PerturbationMode::Semismall,
            "semismall_adjoint" => crate::perturbation::PerturbationMode::SemismallAdjoint,
            other => {
                return Err(ScenarioError::Parse {
                    path: path.to_string(),
                    message: format!("unknown perturbation mode `{other}`"),
                })
            }
        };
        perturb_modes.push(mode);
    }

    let tolerances = Tolerances::with_overrides(&file.tolerances, path)?;

    Ok(Scenario {
        name: file.name.clone(),
        lambdas: file.run.lambdas.clone(),
        exhaustion,
        spec,
        ps,
        suites,
        perturb_v,
        perturb_modes,
        tolerances,
        file,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "sample"

[exhaustion]
dimension = 2
radii = [2, 4]
ambient_radius = 6
nu = "radial:0.5"

[operator]
a = "checkerboard:1.0,2.0"
b = "constant:0.2,0.1"
c = "constant:0.3"
w = "bump:0.5,1.0,1"

[run]
lambdas = [-1.0, -2.0]
ps = ["1", "2", "inf"]
suites = ["classify", "norms"]
expect_class = "subcritical"

[tolerances]
norm_bound_slack = 1e-7
"#;

    #[test]
    fn toml_scenario_parses_and_resolves() {
        let sc = parse_scenario_str(SAMPLE, "sample.toml").unwrap();
        assert_eq!(sc.name, "sample");
        assert_eq!(sc.exhaustion.radii(), &[2, 4]);
        assert_eq!(sc.exhaustion.ambient_radius(), 6);
        assert_eq!(sc.lambdas, vec![-1.0, -2.0]);
        assert_eq!(sc.ps.len(), 3);
        assert_eq!(sc.suites, vec![Suite::Classify, Suite::Norms]);
        assert_eq!(sc.tolerances.norm_bound_slack, 1e-7);
        assert!(matches!(
            sc.spec.conductance,
            EdgeField::Checkerboard { .. }
        ));
        assert!(!sc.spec.is_symmetric());
        // nu = (1 + |x|)^0.5
        assert_eq!(sc.exhaustion.measure_at([0, 0, 0]), 1.0);
        assert_eq!(sc.exhaustion.measure_at([3, 0, 0]), 2.0);
    }

    use crate::operator::EdgeField;

    #[test]
    fn json_scenario_round_trips() {
        let sc = parse_scenario_str(SAMPLE, "sample.toml").unwrap();
        let json = serde_json::to_string_pretty(&sc.file).unwrap();
        let sc2 = parse_scenario_str(&json, "sample.json").unwrap();
        assert_eq!(sc2.name, sc.name);
        assert_eq!(sc2.lambdas, sc.lambdas);
        assert_eq!(sc2.suites, sc.suites);
    }

    #[test]
    fn malformed_toml_reports_position() {
        let err = parse_scenario_str("name = [unclosed", "bad.toml").unwrap_err();
        match err {
            ScenarioError::Parse { message, .. } => {
                assert!(
                    message.contains("line") || message.contains("column") || message.contains('|'),
                    "message should localize the error: {message}"
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_preset_is_rejected() {
        let text = SAMPLE.replace("checkerboard:1.0,2.0", "mystery:1.0");
        assert!(matches!(
            parse_scenario_str(&text, "sample.toml"),
            Err(ScenarioError::UnknownPreset(_, "a"))
        ));
    }

    #[test]
    fn unknown_tolerance_key_is_rejected() {
        let text = SAMPLE.replace("norm_bound_slack", "norm_bound_slck");
        assert!(matches!(
            parse_scenario_str(&text, "sample.toml"),
            Err(ScenarioError::Parse { .. })
        ));
    }

    #[test]
    fn perturb_pulls_in_classify() {
        let text = SAMPLE.replace(r#"["classify", "norms"]"#, r#"["perturb"]"#);
        let sc = parse_scenario_str(&text, "sample.toml").unwrap();
        assert_eq!(sc.suites, vec![Suite::Classify, Suite::Perturb]);
        // the box suites stand alone
        let text = SAMPLE.replace(r#"["classify", "norms"]"#, r#"["norms"]"#);
        let sc = parse_scenario_str(&text, "sample.toml").unwrap();
        assert_eq!(sc.suites, vec![Suite::Norms]);
    }

    #[test]
    fn inline_tables_resolve() {
        let text = r#"
name = "tabled"

[exhaustion]
dimension = 1
radii = [1]
ambient_radius = 2
nu = { default = 1.0, nodes = [{ at = [0], value = 3.0 }] }

[operator]
a = { default = 1.0, edges = [{ at = [0], axis = 0, value = 2.0 }] }
c = { default = 0.0, nodes = [{ at = [1], value = 0.5 }] }
"#;
        let sc = parse_scenario_str(text, "tabled.toml").unwrap();
        assert_eq!(sc.exhaustion.measure_at([0, 0, 0]), 3.0);
        assert_eq!(sc.exhaustion.measure_at([1, 0, 0]), 1.0);
        assert_eq!(sc.spec.potential.eval([1, 0, 0], 1), 0.5);
        assert_eq!(sc.spec.conductance.eval([0, 0, 0], 0), 2.0);
        assert_eq!(sc.spec.conductance.eval([-1, 0, 0], 0), 1.0);
    }
}
