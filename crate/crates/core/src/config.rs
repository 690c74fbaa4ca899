//! TOML experiment configuration.
//!
//! Every key is optional; omitted keys take the four-tank defaults. Unknown
//! keys are rejected so typos do not silently fall back to a default.
//!
//! ```toml
//! N = 30                      # prediction horizon
//! n = 4                       # order used for the initial/terminal segments
//! T = 150                     # data window
//! N_s = 750                   # simulated steps
//! case = 1                    # 1: constant gain, 2: drifting gain
//! mode = "p1"                 # "p0" fixed data, "p1" excitation-guarded
//! Q = [3.0, 3.0]              # diagonal output weight
//! R = [1e-4, 1e-4]            # diagonal input weight
//! lambda_alpha = 0.1
//! lambda_sigma = 1000.0
//! u_setpoint = [1.0, 1.0]
//! y_setpoint = [0.65, 0.77]
//! input_lower = [-1.0, -1.0]
//! input_upper = [1.5, 1.5]
//! # output_lower / output_upper: omitted means unconstrained
//! epsilon = 0.05518           # single-run epsilon
//! epsilons = [1e-4, 0.3]      # sweep grid (default: 8 points on [1e-4, 0.3])
//! seed = 1                    # single-run seed
//! seeds = [1, 2, 3, 4, 5]     # sweep seeds
//! rel_tol = 1e-9
//! # pe_order: default N + 2n
//! guard = "every_step"        # or "rank_deficient"
//! excitation_lower = [0.0, 0.0]
//! excitation_upper = [1.0, 1.0]
//! tracking_window = 100
//! full_grid = false           # 100 seeds x 100 epsilons
//! out = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{Mode, SweepSpec};
use crate::controller::{ControllerConfig, GuardPolicy};
use crate::error::{Error, Result};
use crate::hankel::{self, BoxSet};
use crate::linalg::{Matrix, Vector};
use crate::plant::FourTankCase;

pub const EPSILON_RANGE: (f64, f64) = (1e-4, 0.3);
pub const DESK_SEEDS: usize = 5;
pub const DESK_EPSILONS: usize = 8;
pub const FULL_GRID: usize = 100;

/// `count` points spaced linearly over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "n")]
    pub order: usize,
    #[serde(rename = "T")]
    pub data_length: usize,
    #[serde(rename = "N_s")]
    pub steps: usize,
    pub case: u8,
    pub mode: String,
    #[serde(rename = "Q")]
    pub q_diag: Vec<f64>,
    #[serde(rename = "R")]
    pub r_diag: Vec<f64>,
    pub lambda_alpha: f64,
    pub lambda_sigma: f64,
    pub u_setpoint: Vec<f64>,
    pub y_setpoint: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_upper: Option<Vec<f64>>,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub rel_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe_order: Option<usize>,
    pub guard: String,
    pub excitation_lower: Vec<f64>,
    pub excitation_upper: Vec<f64>,
    pub tracking_window: usize,
    pub full_grid: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            horizon: 30,
            order: 4,
            data_length: 150,
            steps: 750,
            case: 1,
            mode: "p1".into(),
            q_diag: vec![3.0, 3.0],
            r_diag: vec![1e-4, 1e-4],
            lambda_alpha: 0.1,
            lambda_sigma: 1000.0,
            u_setpoint: vec![1.0, 1.0],
            y_setpoint: vec![0.65, 0.77],
            input_lower: vec![-1.0, -1.0],
            input_upper: vec![1.5, 1.5],
            output_lower: None,
            output_upper: None,
            epsilon: 0.05518,
            epsilons: None,
            seed: 1,
            seeds: None,
            rel_tol: 1e-9,
            pe_order: None,
            guard: GuardPolicy::EveryStep.as_str().into(),
            excitation_lower: vec![0.0, 0.0],
            excitation_upper: vec![1.0, 1.0],
            tracking_window: 100,
            full_grid: false,
            out: PathBuf::from("out"),
        }
    }
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let from_message = e.message().split('`').nth(1).map(str::to_string);
        let from_span = e.span().and_then(|span| {
            let line_start = text[..span.start].rfind('\n').map_or(0, |i| i + 1);
            let line = text[line_start..].lines().next()?;
            line.split_once('=').map(|(k, _)| k.trim().to_string())
        });
        let key = from_message.or(from_span).unwrap_or_else(|| "<syntax>".into());
        Error::config(&key, e.message().trim().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_len(key: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::config(key, format!("expected {len} entries, got {}", v.len())));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::config(key, "NaN entry"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialize>", e.to_string()))
    }

    pub fn inputs(&self) -> usize {
        self.u_setpoint.len()
    }

    pub fn outputs(&self) -> usize {
        self.y_setpoint.len()
    }

    pub fn plant_case(&self) -> Result<FourTankCase> {
        FourTankCase::from_index(self.case).map_err(|_| Error::config("case", "must be 1 or 2"))
    }

    pub fn run_mode(&self) -> Result<Mode> {
        Mode::parse(&self.mode).map_err(|_| Error::config("mode", "must be \"p0\" or \"p1\""))
    }

    pub fn pe_order(&self) -> usize {
        self.pe_order.unwrap_or(self.horizon + 2 * self.order)
    }

    /// Sweep seeds: the explicit list, else the desk or full default.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        match (&self.seeds, self.full_grid) {
            (_, true) => (1..=FULL_GRID as u64).collect(),
            (Some(s), false) => s.clone(),
            (None, false) => (1..=DESK_SEEDS as u64).collect(),
        }
    }

    pub fn sweep_epsilons(&self) -> Vec<f64> {
        match (&self.epsilons, self.full_grid) {
            (_, true) => linspace(EPSILON_RANGE.0, EPSILON_RANGE.1, FULL_GRID),
            (Some(e), false) => e.clone(),
            (None, false) => linspace(EPSILON_RANGE.0, EPSILON_RANGE.1, DESK_EPSILONS),
        }
    }

    pub fn excitation_box(&self) -> Result<BoxSet> {
        BoxSet::new(self.excitation_lower.clone(), self.excitation_upper.clone())
            .map_err(|e| Error::config("excitation_lower", e.to_string()))
    }

    /// Controller settings for one epsilon.
    pub fn controller(&self, epsilon: f64) -> Result<ControllerConfig> {
        let input_box = BoxSet::new(self.input_lower.clone(), self.input_upper.clone())
            .map_err(|e| Error::config("input_lower", e.to_string()))?;
        let output_box = match (&self.output_lower, &self.output_upper) {
            (None, None) => None,
            (lo, hi) => {
                let p = self.outputs();
                let lo = lo.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; p]);
                let hi = hi.clone().unwrap_or_else(|| vec![f64::INFINITY; p]);
                Some(BoxSet::new(lo, hi).map_err(|e| Error::config("output_lower", e.to_string()))?)
            }
        };
        let guard = GuardPolicy::parse(&self.guard).map_err(|e| Error::config("guard", e.to_string()))?;
        Ok(ControllerConfig {
            horizon: self.horizon,
            order: self.order,
            data_length: self.data_length,
            q_weight: Matrix::from_diagonal(&Vector::from_column_slice(&self.q_diag)),
            r_weight: Matrix::from_diagonal(&Vector::from_column_slice(&self.r_diag)),
            lambda_alpha: self.lambda_alpha,
            lambda_sigma: self.lambda_sigma,
            u_setpoint: Vector::from_column_slice(&self.u_setpoint),
            y_setpoint: Vector::from_column_slice(&self.y_setpoint),
            input_box,
            output_box,
            epsilon,
            rel_tol: self.rel_tol,
            pe_order: self.pe_order(),
            guard,
            qp: Default::default(),
        })
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        Ok(SweepSpec {
            case: self.plant_case()?,
            mode: self.run_mode()?,
            seeds: self.sweep_seeds(),
            epsilons: self.sweep_epsilons(),
            n_s: self.steps,
            excitation: self.excitation_box()?,
            tracking_window: self.tracking_window,
            keep_logs: false,
        })
    }

    /// Check every key; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.inputs(), self.outputs());
        // the only plant shipped is the two-input, two-output four-tank system
        if m != 2 {
            return Err(Error::config("u_setpoint", format!("the four-tank plant has 2 inputs, got {m}")));
        }
        if p != 2 {
            return Err(Error::config("y_setpoint", format!("the four-tank plant has 2 outputs, got {p}")));
        }
        self.plant_case()?;
        self.run_mode()?;
        if self.horizon == 0 {
            return Err(Error::config("N", "must be positive"));
        }
        if self.order == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        if self.horizon < self.order {
            return Err(Error::config("N", format!("must be at least n = {}", self.order)));
        }
        if self.pe_order == Some(0) {
            return Err(Error::config("pe_order", "must be positive"));
        }
        let need = hankel::min_pe_length(m, self.pe_order()).max(self.horizon + self.order);
        if self.data_length < need {
            return Err(Error::config(
                "T",
                format!(
                    "T = {} is below (m+1)L-1 = {need} for PE of order L = {}",
                    self.data_length,
                    self.pe_order()
                ),
            ));
        }
        if self.steps < self.data_length {
            return Err(Error::config("N_s", format!("must be at least T = {}", self.data_length)));
        }
        if self.tracking_window == 0 || self.tracking_window > self.steps {
            return Err(Error::config("tracking_window", "must lie in [1, N_s]"));
        }
        check_len("Q", &self.q_diag, p)?;
        check_len("R", &self.r_diag, m)?;
        if self.q_diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("Q", "diagonal entries must be positive"));
        }
        if self.r_diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("R", "diagonal entries must be positive"));
        }
        if !(self.lambda_alpha > 0.0 && self.lambda_alpha.is_finite()) {
            return Err(Error::config("lambda_alpha", "must be positive"));
        }
        if !(self.lambda_sigma > 0.0 && self.lambda_sigma.is_finite()) {
            return Err(Error::config("lambda_sigma", "must be positive"));
        }
        check_len("u_setpoint", &self.u_setpoint, m)?;
        check_len("y_setpoint", &self.y_setpoint, p)?;
        check_len("input_lower", &self.input_lower, m)?;
        check_len("input_upper", &self.input_upper, m)?;
        if let Some(v) = &self.output_lower {
            check_len("output_lower", v, p)?;
        }
        if let Some(v) = &self.output_upper {
            check_len("output_upper", v, p)?;
        }
        check_len("excitation_lower", &self.excitation_lower, m)?;
        check_len("excitation_upper", &self.excitation_upper, m)?;
        if self
            .excitation_lower
            .iter()
            .chain(&self.excitation_upper)
            .any(|v| !v.is_finite())
        {
            return Err(Error::config("excitation_lower", "bounds must be finite"));
        }
        let eps_ok = |e: f64| e >= 0.0 && e.is_finite();
        if !eps_ok(self.epsilon) {
            return Err(Error::config("epsilon", format!("must be >= 0, got {}", self.epsilon)));
        }
        if let Some(list) = &self.epsilons {
            if list.is_empty() {
                return Err(Error::config("epsilons", "must not be empty"));
            }
            if let Some(bad) = list.iter().find(|e| !eps_ok(**e)) {
                return Err(Error::config("epsilons", format!("must all be >= 0, got {bad}")));
            }
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return Err(Error::config("seeds", "must not be empty"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::config("rel_tol", "must lie in (0, 1)"));
        }
        self.excitation_box()?;
        // box and weight checks shared with the controller
        self.controller(self.epsilon)?
            .validate()
            .map_err(|e| Error::config("controller", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let c = cfg.controller(cfg.epsilon).unwrap();
        assert_eq!(c, ControllerConfig::four_tank(0.05518));
    }

    #[test]
    fn short_window_rejected() {
        let err = parse_config_str("T = 10").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "T"), "{err}");
    }

    #[test]
    fn negative_epsilon_rejected() {
        let err = parse_config_str("epsilon = -0.1").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "epsilon"), "{err}");
    }

    #[test]
    fn unknown_key_named() {
        let err = parse_config_str("lamda_alpha = 0.1").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "lamda_alpha"), "{err}");
    }

    #[test]
    fn type_error_names_key() {
        let err = parse_config_str("N = 30\nlambda_sigma = \"big\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "lambda_sigma"), "{err}");
    }

    #[test]
    fn round_trip() {
        let text = "N = 20\nT = 140\nepsilons = [0.001, 0.2]\nseeds = [3]\noutput_upper = [2.0, 2.0]\n";
        let a = parse_config_str(text).unwrap();
        let b = parse_config_str(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.sweep_epsilons(), vec![0.001, 0.2]);
    }

    #[test]
    fn grids() {
        let cfg = ExperimentConfig::default();
        let e = cfg.sweep_epsilons();
        assert_eq!(e.len(), DESK_EPSILONS);
        assert_eq!((e[0], e[7]), EPSILON_RANGE);
        assert_eq!(cfg.sweep_seeds(), vec![1, 2, 3, 4, 5]);
        let full = ExperimentConfig {
            full_grid: true,
            ..cfg
        };
        assert_eq!(full.sweep_seeds().len(), 100);
        assert_eq!(full.sweep_epsilons().len(), 100);
    }
}
