//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::effective::{CellGrids, EffectiveParams};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, TimeGrid};
use crate::operators::{FluxOperator, DEFAULT_DELTA};
use crate::orlicz::NFunction;
use crate::pde::{EnergyMonitor, Source};
use crate::solver::NewtonOptions;
use crate::trig::TrigPoly;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    #[default]
    Table,
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NFunctionKind {
    Power,
    PowerLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NFunctionSpec {
    pub kind: NFunctionKind,
    pub p: f64,
}

impl Default for NFunctionSpec {
    fn default() -> Self {
        Self {
            kind: NFunctionKind::Power,
            p: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Linear,
    Power,
    Identity,
}

/// `2 + sin(2 pi x_1)`.
fn reference_coefficient() -> TrigPoly {
    TrigPoly::offset_sin(2.0, 1.0, &[1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    /// Exponent of the power law.
    pub p: f64,
    pub delta: f64,
    /// Slow coefficient `c(y, tau)`.
    pub c: TrigPoly,
    /// Fast coefficient `gamma(z)`.
    pub gamma: TrigPoly,
}

impl Default for OperatorSpec {
    fn default() -> Self {
        Self {
            kind: OperatorKind::Linear,
            p: 2.0,
            delta: DEFAULT_DELTA,
            c: reference_coefficient(),
            gamma: reference_coefficient(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    pub n_tau: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "M")]
    pub steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            d: 1,
            n: 64,
            n_tau: 8,
            horizon: 1.0,
            steps: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSpec {
    pub n: usize,
}

impl Default for CellSpec {
    fn default() -> Self {
        Self { n: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSpec {
    pub half_width: f64,
    /// Samples per axis; 0 picks 17 in 1D and 9 in 2D.
    pub n_xi: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self { half_width: 2.0, n_xi: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Zero,
    Constant,
    /// `value * prod_i sin(pi x_i)`.
    Sine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub value: f64,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            kind: SourceKind::Constant,
            value: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManufacturedSpec {
    pub kappa: f64,
    /// `(n, M)` pairs; each rung halves `h` and quarters `dt`.
    pub ladder: Vec<(usize, usize)>,
}

impl Default for ManufacturedSpec {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            ladder: vec![(32, 32), (64, 128), (128, 512)],
        }
    }
}

/// Everything one experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub q_mode: QMode,
    pub epsilons: Vec<f64>,
    pub literal_tau_average: bool,
    pub nfunction: NFunctionSpec,
    pub operator: OperatorSpec,
    pub grid: GridSpec,
    pub cell: CellSpec,
    pub table: TableSpec,
    pub solver: SolverSpec,
    pub source: SourceSpec,
    pub manufactured: ManufacturedSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: PathBuf::from("out"),
            q_mode: QMode::Table,
            epsilons: vec![0.25, 0.125, 0.0625],
            literal_tau_average: false,
            nfunction: NFunctionSpec::default(),
            operator: OperatorSpec::default(),
            grid: GridSpec::default(),
            cell: CellSpec::default(),
            table: TableSpec::default(),
            solver: SolverSpec::default(),
            source: SourceSpec::default(),
            manufactured: ManufacturedSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The fully resolved configuration (defaults filled in).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.grid.d;
        if !(d == 1 || d == 2) {
            return Err(Error::Config(format!("grid.d must be 1 or 2, got {d}")));
        }
        for w in self.epsilons.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(format!("epsilons must be strictly decreasing, got {:?}", self.epsilons)));
            }
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(Error::Config(format!("each epsilon must lie in (0, 1], got {e}")));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Config("solver.tol must be positive and solver.max_iter nonzero".into()));
        }
        if self.n_xi().is_multiple_of(2) || self.n_xi() < 3 {
            return Err(Error::Config(format!("table.n_xi must be odd and at least 3, got {}", self.n_xi())));
        }
        if !(self.manufactured.kappa > 0.0) {
            return Err(Error::Config("manufactured.kappa must be positive".into()));
        }
        for (c, what) in [(&self.operator.c, "operator.c"), (&self.operator.gamma, "operator.gamma")] {
            if c.modes().iter().any(|m| m.k.len() > d) {
                return Err(Error::Config(format!("{what} has a wave vector longer than d = {d}")));
            }
        }
        self.operator().map_err(as_config)?;
        self.nfunction().map_err(as_config)?;
        self.cell_grids()?;
        self.domain_grid()?;
        self.time_grid()?;
        Ok(())
    }

    pub fn n_xi(&self) -> usize {
        match (self.table.n_xi, self.grid.d) {
            (0, 1) => 17,
            (0, _) => 9,
            (n, _) => n,
        }
    }

    pub fn nfunction(&self) -> Result<NFunction> {
        match self.nfunction.kind {
            NFunctionKind::Power => NFunction::power(self.nfunction.p),
            NFunctionKind::PowerLog => NFunction::power_log(self.nfunction.p),
        }
    }

    pub fn operator(&self) -> Result<FluxOperator> {
        let s = &self.operator;
        let d = self.grid.d;
        match s.kind {
            OperatorKind::Identity => FluxOperator::identity(d),
            OperatorKind::Linear => FluxOperator::linear_separable(d, s.c.clone(), s.gamma.clone()),
            OperatorKind::Power => FluxOperator::power_law(d, NFunction::power(s.p)?, s.c.clone(), s.gamma.clone(), s.delta),
        }
    }

    pub fn cell_grids(&self) -> Result<CellGrids> {
        CellGrids::new(self.grid.d, self.cell.n, self.grid.n_tau)
    }

    pub fn domain_grid(&self) -> Result<DomainGrid> {
        DomainGrid::new(self.grid.d, self.grid.n)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.steps)
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            ..NewtonOptions::default()
        }
    }

    pub fn effective_params(&self) -> EffectiveParams {
        EffectiveParams {
            newton: self.newton(),
            literal_tau_average: self.literal_tau_average,
        }
    }

    pub fn source(&self) -> Source {
        match self.source.kind {
            SourceKind::Zero => Source::Zero,
            SourceKind::Constant => Source::Constant(self.source.value),
            SourceKind::Sine => {
                let a = self.source.value;
                Source::function(move |x, _| a * x.iter().map(|v| (std::f64::consts::PI * v).sin()).product::<f64>())
            }
        }
    }

    /// Energy monitor from the operator's monotonicity constant, when one is known.
    pub fn energy_monitor(&self) -> Result<Option<EnergyMonitor>> {
        let op = self.operator()?;
        Ok(op.constants().c2.map(|c2| EnergyMonitor {
            nf: op.reference_nfunction().clone(),
            c2,
        }))
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
