//! Run configuration: a TOML document, validated as a whole.
//!
//! Unknown keys are rejected. See `configs/layered.toml` for the canonical
//! example.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constitutive::{FluxLaw, LawError};
use crate::corrector::SubBox;
use crate::domain::{DomainProblem, Load, TablePolicy};
use crate::grid::{Grid, GridError, ScalarField, Topology};
use crate::microstructure::{MicroError, Microstructure};
use crate::solver::{ConfigError, SolverConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{0}")]
    Parse(String),
    #[error("{}{source}", at(*.line))]
    Law {
        line: Option<usize>,
        source: LawError,
    },
    #[error("{}{source}", at(*.line))]
    Micro {
        line: Option<usize>,
        source: MicroError,
    },
    #[error("{}{source}", at(*.line))]
    Solver {
        line: Option<usize>,
        source: ConfigError,
    },
    #[error("{}{message}", at(*.line))]
    Invalid {
        line: Option<usize>,
        message: String,
    },
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// First line (1-based) assigning `key`, or opening table `[key]`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            let assign = t
                .strip_prefix(key)
                .map(|r| r.trim_start().starts_with('='))
                .unwrap_or(false);
            assign || t == format!("[{key}]")
        })
        .map(|i| i + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    pub p1: f64,
    pub p2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Unit-cell elements per axis.
    pub cell_n: usize,
    /// Domain elements per axis.
    pub domain_n: usize,
    #[serde(default = "default_side")]
    pub side: f64,
}

fn default_dim() -> usize {
    2
}

fn default_side() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LoadConfig {
    Constant {
        value: f64,
    },
    /// CSV in the layout written by `write_field_csv`.
    Nodal {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Required `e_i(ε_max) / e_i(ε_min)`.
    pub decay_factor: f64,
    /// Allowance in `lower_bound ≤ empirical·(1 + slack)`.
    pub moment_slack: f64,
    /// Largest admissible max/min of the a priori totals.
    pub apriori_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            decay_factor: 1.3,
            moment_slack: 0.05,
            apriori_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub law: LawConfig,
    pub microstructure: Microstructure,
    pub grids: GridConfig,
    pub load: LoadConfig,
    /// Scales for the ε-problems, strictly decreasing.
    pub eps: Vec<f64>,
    /// Moment exponents; empty skips the moment stage.
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub sub_box: Option<SubBox>,
    /// Macroscopic gradients for the `cell` and `homog` commands.
    #[serde(default)]
    pub xi: Vec<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub table: TablePolicy,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputConfig,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigFileError> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| ConfigFileError::Parse(describe(text, &e)))?;
    cfg.validate(text)?;
    Ok(cfg)
}

fn describe(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigFileError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigFileError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = parse_config(&text)?;
        // nodal loads are relative to the config file
        if let LoadConfig::Nodal { path: p } = &mut cfg.load {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    fn validate(&self, text: &str) -> Result<(), ConfigFileError> {
        let invalid = |key: &str, message: String| ConfigFileError::Invalid {
            line: line_of(text, key),
            message,
        };
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(
                "schema",
                format!(
                    "schema version {} is not supported (expected {SCHEMA_VERSION})",
                    self.schema
                ),
            ));
        }
        let l = &self.law;
        FluxLaw::new(l.p1, l.p2, l.sigma1, l.sigma2).map_err(|source| {
            let key = match source {
                LawError::LowExponent(_) => "p1",
                LawError::Exponents(..) => "p2",
                _ => "sigma1",
            };
            ConfigFileError::Law {
                line: line_of(text, key),
                source,
            }
        })?;
        let g = &self.grids;
        if !(1..=3).contains(&g.dim) {
            return Err(invalid(
                "dim",
                format!("dim must be 1, 2 or 3, got {}", g.dim),
            ));
        }
        self.microstructure
            .validate()
            .and_then(|_| self.microstructure.validate_dim(g.dim))
            .map_err(|source| ConfigFileError::Micro {
                line: line_of(text, "microstructure"),
                source,
            })?;
        if g.cell_n < 2 {
            return Err(invalid(
                "cell_n",
                format!("cell_n must be ≥ 2, got {}", g.cell_n),
            ));
        }
        if g.domain_n < 4 {
            return Err(invalid(
                "domain_n",
                format!("domain_n must be ≥ 4, got {}", g.domain_n),
            ));
        }
        if !(g.side > 0.0 && g.side.is_finite()) {
            return Err(invalid(
                "side",
                format!("side must be positive, got {}", g.side),
            ));
        }
        if self.eps.is_empty() {
            return Err(invalid("eps", "eps list is empty".into()));
        }
        for &e in &self.eps {
            let ratio = g.side / e;
            let k = ratio.round();
            if !(e > 0.0) || k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
                return Err(invalid(
                    "eps",
                    format!("eps = {e} is not side/k for an integer k (alignment)"),
                ));
            }
            if g.domain_n % (k as usize * g.cell_n) != 0 {
                return Err(invalid(
                    "eps",
                    format!(
                        "eps = {e} is not resolved: {k}·cell_n = {} must divide domain_n = {}",
                        k as usize * g.cell_n,
                        g.domain_n
                    ),
                ));
            }
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid(
                "eps",
                "eps list must be strictly decreasing".into(),
            ));
        }
        if let Some(q) = self.q.iter().find(|&&q| !(q >= 2.0 && q.is_finite())) {
            return Err(invalid(
                "q",
                format!("moment exponents must be ≥ 2, got {q}"),
            ));
        }
        if !self.q.is_empty() {
            let grid = self
                .domain_grid()
                .map_err(|e| invalid("grids", e.to_string()))?;
            self.sub_box()
                .elements(&grid)
                .map_err(|e| invalid("sub_box", e.to_string()))?;
        }
        if let Some(x) = self.xi.iter().find(|x| x.len() != g.dim) {
            return Err(invalid(
                "xi",
                format!(
                    "gradient {x:?} has {} components, dim is {}",
                    x.len(),
                    g.dim
                ),
            ));
        }
        self.solver
            .validate()
            .map_err(|source| ConfigFileError::Solver {
                line: line_of(text, "solver"),
                source,
            })?;
        let t = &self.table;
        if !(t.spacing > 0.0 && t.cap > t.spacing) {
            return Err(invalid(
                "spacing",
                format!(
                    "table needs 0 < spacing < cap, got {} and {}",
                    t.spacing, t.cap
                ),
            ));
        }
        let th = &self.thresholds;
        if !(th.decay_factor > 0.0 && th.moment_slack >= 0.0 && th.apriori_ratio >= 1.0) {
            return Err(invalid("thresholds", "thresholds out of range".into()));
        }
        Ok(())
    }

    pub fn law(&self) -> FluxLaw {
        let l = &self.law;
        FluxLaw::new(l.p1, l.p2, l.sigma1, l.sigma2).expect("validated")
    }

    pub fn cell_grid(&self) -> Result<Grid, GridError> {
        Grid::new(self.grids.dim, self.grids.cell_n, 1.0, Topology::Periodic)
    }

    pub fn domain_grid(&self) -> Result<Grid, GridError> {
        Grid::new(
            self.grids.dim,
            self.grids.domain_n,
            self.grids.side,
            Topology::Dirichlet,
        )
    }

    pub fn sub_box(&self) -> SubBox {
        self.sub_box.clone().unwrap_or_else(|| {
            let s = self.grids.side;
            SubBox {
                lower: vec![0.25 * s; self.grids.dim],
                upper: vec![0.75 * s; self.grids.dim],
            }
        })
    }

    /// `ξ` list, defaulting to the unit vectors and their sum.
    pub fn xi_list(&self) -> Vec<Vec<f64>> {
        if !self.xi.is_empty() {
            return self.xi.clone();
        }
        let d = self.grids.dim;
        let mut out: Vec<Vec<f64>> = (0..d)
            .map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        if d > 1 {
            out.push(vec![1.0; d]);
        }
        out
    }

    pub fn domain_problem(&self) -> Result<DomainProblem, ConfigFileError> {
        let grid = self.domain_grid().map_err(|e| ConfigFileError::Invalid {
            line: None,
            message: e.to_string(),
        })?;
        let load = match &self.load {
            LoadConfig::Constant { value } => Load::Constant(*value),
            LoadConfig::Nodal { path } => Load::Nodal(read_nodal_csv(path, grid)?),
        };
        DomainProblem::new(grid, load)
            .map(|p| p.with_cell_resolution(self.grids.cell_n))
            .map_err(|e| ConfigFileError::Invalid {
                line: None,
                message: e.to_string(),
            })
    }

    /// Canonical TOML echo of the parsed config.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`echo`](Self::echo).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads a nodal field written in the `x,y,value` CSV layout.
pub fn read_nodal_csv(path: &Path, grid: Grid) -> Result<ScalarField, ConfigFileError> {
    let io = |message: String| ConfigFileError::Io {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.n_nodes());
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("");
        let v: f64 = last
            .trim()
            .parse()
            .map_err(|_| io(format!("line {}: bad value {last:?}", i + 1)))?;
        values.push(v);
    }
    ScalarField::new(grid, values).map_err(|e| io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
eps = [0.5, 0.25, 0.125]

[law]
p1 = 2.0
p2 = 3.0
sigma1 = 1.0
sigma2 = 2.0

[microstructure]
kind = "layered"
axis = 1
lower = 0.25
upper = 0.75

[grids]
cell_n = 16
domain_n = 128

[load]
kind = "constant"
value = 1.0
"#;

    fn with(extra: &str) -> String {
        // top-level keys must precede the first table
        let (head, tail) = BASE.split_at(BASE.find("[law]").unwrap());
        format!("{head}{extra}\n{tail}")
    }

    #[test]
    fn parses_minimal_document() {
        let cfg = parse_config(&with("q = [2.0, 3.0]")).unwrap();
        assert_eq!(cfg.eps, vec![0.5, 0.25, 0.125]);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.sub_box(), SubBox::central_quarter(2));
        assert_eq!(cfg.xi_list().len(), 3);
        assert_eq!(cfg.law().q1(), 1.5);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(&with("q = [2.0]")).unwrap();
        let back = parse_config(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn low_exponent_is_reported_with_line() {
        let text = BASE.replace("p1 = 2.0", "p1 = 1.5");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("p₁ must be ≥ 2"), "{err}");
        assert!(err.starts_with("line 5:"), "{err}");
    }

    #[test]
    fn misaligned_eps_is_rejected() {
        let text = BASE.replace("[0.5, 0.25, 0.125]", "[0.5, 0.3]");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("alignment"), "{err}");
        let text = BASE.replace("[0.5, 0.25, 0.125]", "[0.0625]");
        assert!(parse_config(&text)
            .unwrap_err()
            .to_string()
            .contains("resolved"));
        let text = BASE.replace("[0.5, 0.25, 0.125]", "[0.25, 0.5]");
        assert!(parse_config(&text)
            .unwrap_err()
            .to_string()
            .contains("decreasing"));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = BASE.replace("sigma2 = 2.0", "sigma2 = 2.0\nsigma3 = 1.0");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("sigma3"), "{err}");
        assert!(err.starts_with("line "), "{err}");
        let text = with("[solver]\ntolerance = 1e-9");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn bad_moment_exponent() {
        let err = parse_config(&with("q = [1.5]")).unwrap_err().to_string();
        assert!(err.contains("≥ 2"), "{err}");
    }
}
