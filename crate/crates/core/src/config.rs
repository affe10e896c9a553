//! JSON run configuration shared by the CLI commands.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::material::{CurvatureTensor, IsotropicElasticTensor, MaterialError, MicromorphicMaterial};
use crate::tensor_fields::{CurlConvention, MatMN};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// "zero" or absent; mutually exclusive with mms_preset.
    #[serde(default)]
    pub load_preset: Option<String>,
    /// "bump" | "zero".
    #[serde(default)]
    pub mms_preset: Option<String>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub probe: ProbeFileConfig,
    #[serde(default)]
    pub mms: MmsConfig,
}

fn default_r() -> f64 {
    1.0
}
fn default_n() -> usize {
    8
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.r <= 0.0 {
            return Err(ConfigError::Invalid(format!("r must be positive, got {}", self.r)));
        }
        if self.n < 2 {
            return Err(ConfigError::Invalid(format!("N must be at least 2, got {}", self.n)));
        }
        if self.load_preset.is_some() && self.mms_preset.is_some() {
            return Err(ConfigError::Invalid(
                "load_preset and mms_preset are mutually exclusive".into(),
            ));
        }
        if let Some(p) = &self.load_preset {
            if p != "zero" {
                return Err(ConfigError::Invalid(format!("unknown load preset '{p}'")));
            }
        }
        if let Some(p) = &self.mms_preset {
            if p != "bump" && p != "zero" {
                return Err(ConfigError::Invalid(format!("unknown mms preset '{p}'")));
            }
        }
        self.material.to_material()?;
        self.verify.validate()?;
        self.probe.validate(self.r)?;
        self.mms.validate()?;
        if self.solver.tol <= 0.0 || self.solver.max_iter == 0 {
            return Err(ConfigError::Invalid("solver tol/max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn cg(&self) -> crate::discretization::CgConfig {
        crate::discretization::CgConfig { tol: self.solver.tol, max_iter: self.solver.max_iter }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    #[serde(default = "one")]
    pub mu_e: f64,
    #[serde(default = "one")]
    pub lambda_e: f64,
    #[serde(default = "one")]
    pub mu_micro: f64,
    #[serde(default = "one")]
    pub lambda_micro: f64,
    #[serde(default)]
    pub alpha_c: Option<f64>,
    #[serde(rename = "Lc_matrix", default)]
    pub lc_matrix: Option<Vec<Vec<f64>>>,
}

fn one() -> f64 {
    1.0
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            mu_e: 1.0,
            lambda_e: 1.0,
            mu_micro: 1.0,
            lambda_micro: 1.0,
            alpha_c: None,
            lc_matrix: None,
        }
    }
}

impl MaterialConfig {
    pub fn to_material(&self) -> Result<MicromorphicMaterial, ConfigError> {
        let curvature = match (&self.alpha_c, &self.lc_matrix) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "specify either alpha_c or Lc_matrix, not both".into(),
                ))
            }
            (Some(a), None) => CurvatureTensor::Scalar(*a),
            (None, Some(rows)) => {
                if rows.len() != 9 || rows.iter().any(|r| r.len() != 9) {
                    return Err(ConfigError::Invalid("Lc_matrix must be 9×9".into()));
                }
                CurvatureTensor::Full(MatMN::from_fn(9, 9, |i, j| rows[i][j]))
            }
            (None, None) => CurvatureTensor::Scalar(0.5),
        };
        let mat = MicromorphicMaterial::new(
            IsotropicElasticTensor::new(self.mu_e, self.lambda_e)?,
            IsotropicElasticTensor::new(self.mu_micro, self.lambda_micro)?,
            curvature,
        )?;
        Ok(mat)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    50_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: default_tol(), max_iter: default_max_iter() }
    }
}

pub const ALL_SUITES: [&str; 8] = [
    "scalar_product_rule",
    "curl_of_gradient",
    "div_product_rules",
    "piola_identity",
    "inverse_jacobian",
    "curl_transformation",
    "transform_boundedness",
    "finite_difference_bound",
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Suite selection; absent means all suites.
    #[serde(default)]
    pub suites: Option<Vec<String>>,
    /// Random fields (or maps) per suite.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Evaluation points per field.
    #[serde(default = "default_points")]
    pub points_per_field: usize,
    /// Differentiation step for numerically differentiated identities,
    /// relative to r.
    #[serde(default = "default_fd_step_rel")]
    pub fd_step_rel: f64,
    /// Levels of the dyadic |h| sweeps.
    #[serde(default = "default_sweep_levels")]
    pub sweep_levels: usize,
    /// "standard" | "flipped_third" (negative-control hook).
    #[serde(default = "default_convention")]
    pub curl_convention: String,
    /// Virtual quadrature grid for the boundedness sweeps.
    #[serde(default = "default_quad_cells")]
    pub quad_cells: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
    /// Cutoff support radius as a fraction of r.
    #[serde(default = "default_rho_frac")]
    pub rho_frac: f64,
}

fn default_samples() -> usize {
    50
}
fn default_points() -> usize {
    20
}
fn default_fd_step_rel() -> f64 {
    1e-5
}
fn default_sweep_levels() -> usize {
    5
}
fn default_convention() -> String {
    "standard".into()
}
fn default_quad_cells() -> usize {
    12
}
fn default_quad_order() -> usize {
    3
}
fn default_rho_frac() -> f64 {
    0.5
}

impl Default for VerifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty verify config deserializes")
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(suites) = &self.suites {
            if suites.is_empty() {
                return Err(ConfigError::Invalid("verify.suites must not be empty".into()));
            }
            for s in suites {
                if !ALL_SUITES.contains(&s.as_str()) {
                    return Err(ConfigError::Invalid(format!("unknown verify suite '{s}'")));
                }
            }
        }
        self.convention()?;
        if !(self.rho_frac > 0.0 && self.rho_frac < 1.0) {
            return Err(ConfigError::Invalid("verify.rho_frac must lie in (0,1)".into()));
        }
        if self.samples == 0 || self.points_per_field == 0 || self.sweep_levels == 0 {
            return Err(ConfigError::Invalid("verify sample counts must be positive".into()));
        }
        Ok(())
    }

    pub fn convention(&self) -> Result<CurlConvention, ConfigError> {
        match self.curl_convention.as_str() {
            "standard" => Ok(CurlConvention::Standard),
            "flipped_third" => Ok(CurlConvention::FlippedThird),
            other => Err(ConfigError::Invalid(format!("unknown curl convention '{other}'"))),
        }
    }

    pub fn selected_suites(&self) -> Vec<String> {
        match &self.suites {
            Some(s) => s.clone(),
            None => ALL_SUITES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFileConfig {
    #[serde(default = "default_rho_frac")]
    pub rho_frac: f64,
    #[serde(default = "default_direction")]
    pub direction: [f64; 3],
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_probe_order")]
    pub gauss_order: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default)]
    pub strict_mesh_resolution: bool,
}

fn default_direction() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn default_levels() -> usize {
    4
}
fn default_tolerance() -> f64 {
    1.25
}
fn default_probe_order() -> usize {
    3
}
fn default_trials() -> usize {
    20
}
fn default_delta_min() -> f64 {
    0.1
}

impl Default for ProbeFileConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty probe config deserializes")
    }
}

impl ProbeFileConfig {
    pub fn validate(&self, _r: f64) -> Result<(), ConfigError> {
        if !(self.rho_frac > 0.0 && self.rho_frac < 1.0) {
            return Err(ConfigError::Invalid("probe.rho_frac must lie in (0,1)".into()));
        }
        if self.direction.iter().all(|v| *v == 0.0) {
            return Err(ConfigError::Invalid("probe.direction must be nonzero".into()));
        }
        if !(self.delta_min > 0.0 && self.delta_min < 1.0) {
            return Err(ConfigError::Invalid("probe.delta_min must lie in (0,1)".into()));
        }
        if self.levels == 0 || self.trials == 0 {
            return Err(ConfigError::Invalid("probe.levels and probe.trials must be positive".into()));
        }
        if !(self.tolerance >= 1.0) {
            return Err(ConfigError::Invalid("probe.tolerance must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsConfig {
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_quad_order")]
    pub norm_order: usize,
    #[serde(default = "default_rate_l2")]
    pub rate_l2_min: f64,
    #[serde(default = "default_rate_semi")]
    pub rate_semi_min: f64,
}

fn default_n_values() -> Vec<usize> {
    vec![4, 8, 16]
}
fn default_rate_l2() -> f64 {
    1.8
}
fn default_rate_semi() -> f64 {
    0.9
}

impl Default for MmsConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty mms config deserializes")
    }
}

impl MmsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_values.len() < 2 {
            return Err(ConfigError::Invalid("mms.n_values needs at least two levels".into()));
        }
        if self.n_values.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(ConfigError::Invalid(
                "mms.n_values must double between consecutive levels".into(),
            ));
        }
        Ok(())
    }
}
