//! Run configuration: `key = value` file parsing, flag overrides, validation.
//!
//! A config file is UTF-8 text, one `key = value` pair per line; `#` starts a
//! comment (full-line or trailing) and blank lines are ignored. Command-line
//! flags override file values, which override the built-in defaults.

use pxlap::mesh::{build_grid, DomainSpec, Grid};
use pxlap::solvers::{MpParams, SolverParams};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: key `{key}`: cannot parse `{value}` as {want}")]
    BadValue { line: usize, key: String, value: String, want: &'static str },
    #[error("{0}")]
    Constraint(String),
}

/// The effective run configuration after defaults, file, and flag overrides.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunConfig {
    /// 1 for an interval, 2 for a symmetric square (same extents and inner
    /// box on both axes).
    pub dimension: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Lower face of the inner region carrying the exponent `p`.
    pub a: f64,
    /// Upper face of the inner region.
    pub b: f64,
    pub p: f64,
    pub q: f64,
    /// Nodes per axis.
    pub n: usize,
    pub lambda: Option<f64>,
    pub lambda_list: Option<Vec<f64>>,
    pub newton_tol: f64,
    pub monotone_tol: f64,
    pub m_cap: f64,
    pub mp_path_nodes: usize,
    pub mp_tol: f64,
    pub seed: u64,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let sp = SolverParams::default();
        let mp = MpParams::default();
        RunConfig {
            dimension: 1,
            x_lo: 0.0,
            x_hi: 1.0,
            a: 0.4,
            b: 0.6,
            p: 3.0,
            q: 1.5,
            n: 201,
            lambda: None,
            lambda_list: None,
            newton_tol: sp.newton_tol,
            monotone_tol: sp.monotone_tol,
            m_cap: sp.m_cap,
            mp_path_nodes: mp.path_nodes,
            mp_tol: mp.mp_tol,
            seed: 42,
            out_dir: "out".to_string(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(
    key: &str,
    value: &str,
    line: usize,
    want: &'static str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        want,
    })
}

impl RunConfig {
    /// Applies one `key = value` pair; `line` is for error reporting.
    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match key {
            "dimension" => self.dimension = parse_num(key, value, line, "an integer")?,
            "x_lo" => self.x_lo = parse_num(key, value, line, "a number")?,
            "x_hi" => self.x_hi = parse_num(key, value, line, "a number")?,
            "a" => self.a = parse_num(key, value, line, "a number")?,
            "b" => self.b = parse_num(key, value, line, "a number")?,
            "p" => self.p = parse_num(key, value, line, "a number")?,
            "q" => self.q = parse_num(key, value, line, "a number")?,
            "n" => self.n = parse_num(key, value, line, "an integer")?,
            "lambda" => self.lambda = Some(parse_num(key, value, line, "a number")?),
            "lambda_list" => self.lambda_list = Some(parse_lambda_list(value, line)?),
            "newton_tol" => self.newton_tol = parse_num(key, value, line, "a number")?,
            "monotone_tol" => self.monotone_tol = parse_num(key, value, line, "a number")?,
            "m_cap" => self.m_cap = parse_num(key, value, line, "a number")?,
            "mp_path_nodes" => self.mp_path_nodes = parse_num(key, value, line, "an integer")?,
            "mp_tol" => self.mp_tol = parse_num(key, value, line, "a number")?,
            "seed" => self.seed = parse_num(key, value, line, "an unsigned integer")?,
            "out_dir" => self.out_dir = value.to_string(),
            _ => {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
        }
        Ok(())
    }

    /// Parses config text over the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: stripped.to_string() });
            };
            self.apply(key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    /// Reads and applies a config file over the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text)
    }

    /// Builds the validated grid this configuration describes.
    pub fn build_domain(&self) -> Result<Arc<Grid>, ConfigError> {
        let spec = match self.dimension {
            1 => DomainSpec::interval((self.x_lo, self.x_hi), (self.a, self.b), self.p, self.q),
            2 => DomainSpec::square((self.x_lo, self.x_hi), (self.a, self.b), self.p, self.q),
            d => {
                return Err(ConfigError::Constraint(format!(
                    "key `dimension`: must be 1 or 2, got {d}"
                )));
            }
        }
        .map_err(|e| ConfigError::Constraint(e.to_string()))?;
        build_grid(&spec, self.n).map_err(|e| ConfigError::Constraint(e.to_string()))
    }

    /// Solver knobs drawn from this configuration (defaults elsewhere).
    pub fn solver_params(&self) -> Result<SolverParams, ConfigError> {
        let params = SolverParams {
            newton_tol: self.newton_tol,
            monotone_tol: self.monotone_tol,
            m_cap: self.m_cap,
            ..SolverParams::default()
        };
        params.validate().map_err(|e| ConfigError::Constraint(e.to_string()))?;
        Ok(params)
    }

    /// Mountain-pass knobs drawn from this configuration.
    pub fn mp_params(&self) -> Result<MpParams, ConfigError> {
        if self.mp_path_nodes < 3 {
            return Err(ConfigError::Constraint(format!(
                "key `mp_path_nodes`: need at least 3 path nodes, got {}",
                self.mp_path_nodes
            )));
        }
        if !(self.mp_tol > 0.0) {
            return Err(ConfigError::Constraint(format!(
                "key `mp_tol`: must be positive, got {}",
                self.mp_tol
            )));
        }
        Ok(MpParams { path_nodes: self.mp_path_nodes, mp_tol: self.mp_tol, ..MpParams::default() })
    }

    /// The coupling, or a uniform error when the command requires one.
    pub fn require_lambda(&self) -> Result<f64, ConfigError> {
        self.lambda.ok_or_else(|| {
            ConfigError::Constraint(
                "key `lambda`: this command needs a coupling (set `lambda = …` or pass --lambda)"
                    .to_string(),
            )
        })
    }

    /// The coupling list, or a uniform error when the command requires one.
    pub fn require_lambda_list(&self) -> Result<&[f64], ConfigError> {
        match &self.lambda_list {
            Some(list) if !list.is_empty() => Ok(list),
            _ => Err(ConfigError::Constraint(
                "key `lambda_list`: this command needs couplings (set `lambda_list = …` or pass --lambda-list)"
                    .to_string(),
            )),
        }
    }
}

/// Comma-separated floats (`0.1, 0.2, 0.3`).
pub fn parse_lambda_list(value: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num("lambda_list", s, line, "a comma-separated list of numbers"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_the_reference_domain() {
        let cfg = RunConfig::default();
        let grid = cfg.build_domain().unwrap();
        assert_eq!(grid.node_count(), 201);
        assert!(grid.p_edge_count() > 0);
    }

    #[test]
    fn comments_blank_lines_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# header\n\nlambda = 0.1 # trailing\n n = 101\nlambda_list = 1, 2,3\n")
            .unwrap();
        assert_eq!(cfg.lambda, Some(0.1));
        assert_eq!(cfg.n, 101);
        assert_eq!(cfg.lambda_list.as_deref(), Some(&[1.0, 2.0, 3.0][..]));
    }

    #[test]
    fn unknown_key_names_the_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("n = 11\nbogus = 3\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 2);
                assert_eq!(key, "bogus");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn type_mismatch_names_key_and_value() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("n = eleven\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 1, .. }), "{err}");
    }

    #[test]
    fn exponent_ordering_is_enforced() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("p = 2.4\nq = 1.5\n").unwrap();
        let err = cfg.build_domain().unwrap_err();
        assert!(matches!(err, ConfigError::Constraint(_)), "{err}");
    }
}
