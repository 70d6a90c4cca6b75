//! Run configuration schema (deserialized from TOML by the CLI).
//!
//! Indices in the config are 1-based: complex directions are `z_1..z_n`,
//! wave vectors list the `2n` real axes `x_1..x_{2n}`. Unknown keys are
//! rejected.

use crate::error::{CoreError, Result};
use crate::geometry::{
    flat_metric, make_problem, skt_metric, HermitianStructure, MuTerm, NormKind, ProblemData,
    RhoTerm, XiTerm,
};
use crate::grid::GridSpec;
use crate::C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    pub alpha: f64,
    #[serde(rename = "A")]
    pub a_norm: f64,
    /// "L1" or "Ln".
    pub norm: String,
    pub seed: u64,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub rho: Vec<RhoEntry>,
    #[serde(default)]
    pub mu: Vec<MuEntry>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    /// Optional declared experiment kind; when present it must match the
    /// invoked subcommand.
    #[serde(default)]
    pub kind: Option<String>,
    /// Optional output directory (the CLI flag takes precedence).
    #[serde(default)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub xi: Vec<XiEntry>,
    #[serde(default)]
    pub eps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            kind: "flat".to_string(),
            xi: Vec::new(),
            eps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiEntry {
    /// 1-based antiholomorphic direction of dzbar^j.
    pub j: usize,
    pub k: Vec<i32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoEntry {
    /// 1-based matrix entry (i, j).
    pub i: usize,
    pub j: usize,
    pub k: Vec<i32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuEntry {
    pub k: Vec<i32>,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_newton: f64,
    pub max_newton: usize,
    pub krylov_rel_tol: f64,
    pub krylov_restart: usize,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_newton: 1e-9,
            max_newton: 50,
            krylov_rel_tol: 1e-10,
            krylov_restart: 30,
            dt_init: 0.25,
            dt_min: 1e-4,
            dt_max: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Strictly increasing A values for monotonicity sweeps.
    pub a_list: Vec<f64>,
    /// Also traverse the path backward (uniqueness experiments).
    pub backward: bool,
    /// Assert tr_omega rho >= 0 at load time and switch the uniqueness /
    /// monotonicity experiments to the L1 normalization.
    pub trace_rho_nonneg: bool,
}

fn k_array(k: &[i32], axes: usize) -> Result<[i32; 6]> {
    if k.len() != axes {
        return Err(CoreError::InvalidConfig(format!(
            "wave vector must list {axes} axes, got {}",
            k.len()
        )));
    }
    let mut out = [0i32; 6];
    out[..axes].copy_from_slice(k);
    Ok(out)
}

impl RunConfig {
    pub fn parse_norm(&self) -> Result<NormKind> {
        match self.norm.as_str() {
            "L1" => Ok(NormKind::L1),
            "Ln" => Ok(NormKind::Ln),
            other => Err(CoreError::InvalidConfig(format!(
                "norm must be \"L1\" or \"Ln\", got {other:?}"
            ))),
        }
    }

    pub fn build_structure(&self) -> Result<Arc<HermitianStructure>> {
        let grid = GridSpec::new(self.n, self.points)?;
        let axes = grid.axes();
        match self.metric.kind.as_str() {
            "flat" => {
                if !self.metric.xi.is_empty() || self.metric.eps != 0.0 {
                    return Err(CoreError::InvalidConfig(
                        "flat metric takes no xi/eps".into(),
                    ));
                }
                Ok(Arc::new(flat_metric(grid)))
            }
            "skt" => {
                let mut xi = Vec::new();
                for e in &self.metric.xi {
                    if e.j == 0 || e.j > self.n {
                        return Err(CoreError::InvalidConfig(format!(
                            "xi direction j must be in 1..={}, got {}",
                            self.n, e.j
                        )));
                    }
                    xi.push(XiTerm {
                        j: e.j - 1,
                        k: k_array(&e.k, axes)?,
                        coef: C64::new(e.re, e.im),
                    });
                }
                Ok(Arc::new(skt_metric(grid, &xi, self.metric.eps)?))
            }
            other => Err(CoreError::InvalidConfig(format!(
                "metric type must be \"flat\" or \"skt\", got {other:?}"
            ))),
        }
    }

    pub fn rho_terms(&self) -> Result<Vec<RhoTerm>> {
        let axes = 2 * self.n;
        self.rho
            .iter()
            .map(|e| {
                if e.i == 0 || e.i > self.n || e.j == 0 || e.j > self.n {
                    return Err(CoreError::InvalidConfig(format!(
                        "rho entry indices must be in 1..={}, got ({}, {})",
                        self.n, e.i, e.j
                    )));
                }
                Ok(RhoTerm {
                    i: e.i - 1,
                    j: e.j - 1,
                    k: k_array(&e.k, axes)?,
                    coef: C64::new(e.re, e.im),
                })
            })
            .collect()
    }

    pub fn mu_terms(&self) -> Result<Vec<MuTerm>> {
        let axes = 2 * self.n;
        self.mu
            .iter()
            .map(|e| {
                Ok(MuTerm {
                    k: k_array(&e.k, axes)?,
                    c: e.c,
                    s: e.s,
                })
            })
            .collect()
    }

    /// Build structure and problem, applying the load-time checks.
    pub fn build_problem(&self) -> Result<ProblemData> {
        self.build_problem_with_a(self.a_norm, self.parse_norm()?)
    }

    pub fn build_problem_with_a(&self, a_norm: f64, norm: NormKind) -> Result<ProblemData> {
        let structure = self.build_structure()?;
        let rho = self.rho_terms()?;
        let mu = self.mu_terms()?;
        let data = make_problem(self.alpha, &rho, &mu, a_norm, norm, structure)?;
        if self.experiment.trace_rho_nonneg {
            let s = data.structure.as_ref();
            let cache = data.contraction_cache();
            let min_tr = crate::exec::min_indexed(s.grid.num_points(), |idx| {
                let ginv = s.ginv_at(idx);
                let rho = cache.rho_mat.at(idx);
                (ginv.mul(&rho)).trace().re
            });
            if min_tr < 0.0 {
                return Err(CoreError::InvalidConfig(format!(
                    "trace_rho_nonneg is set but min tr_omega rho = {min_tr:.3e} < 0"
                )));
            }
        }
        Ok(data)
    }

    pub fn newton_options(&self) -> crate::continuation::NewtonOptions {
        crate::continuation::NewtonOptions {
            tol: self.solver.tol_newton,
            max_iters: self.solver.max_newton,
            gmres: crate::solver::GmresOptions {
                restart: self.solver.krylov_restart,
                max_restarts: 8,
                rel_tol: self.solver.krylov_rel_tol,
            },
            ..Default::default()
        }
    }

    pub fn continuation_options(&self) -> crate::continuation::ContinuationOptions {
        crate::continuation::ContinuationOptions {
            newton: self.newton_options(),
            dt_init: self.solver.dt_init,
            dt_min: self.solver.dt_min,
            dt_max: self.solver.dt_max,
            ..Default::default()
        }
    }
}
