//! Named experiments: configuration, seeding, and JSON reports.
//!
//! Each experiment owns one acceptance verdict made of individual checks.
//! Reports contain no wall-clock data, so a rerun with the same
//! configuration and seed reproduces the serialized report byte for byte;
//! timings are returned separately by [`run_timed`].

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::brownian::{intersection_local_time, local_time, sample_path, tanaka_sup_error};
use crate::error::{LabError, Result};
use crate::functionals::{
    c_star_mc, c_star_quadrature, sigma_prime_sq_mc, sigma_star_sq_mc, x_eps, y_eps, ClarkOconeKernel,
    ConstantsEstimate, MicroCentering,
};
use crate::homogenization::{
    corrected_samples, ew_first_order_variance, ew_from_samples, ew_target_variance, fluctuation_slope,
    homogenization_check, solve_v, transition_sweep, HomogenizationRun, ScaleConfig,
};
use crate::mollifier::{Covariance, CovarianceTable, CrossCovariance, MollifierSpec, ZeroCovariance};
use crate::noise::{couple_across_scales, mollify, sample_white_noise, GridSpec, WhiteNoiseRealization};
use crate::rng::{derive_key, label_hash};
use crate::she::{chaos_second_moment, exp_local_time_moment, lattice_second_moment, limit_second_moment, solve_she_ito, ItoParams};
use crate::solver::{c_eps, feynman_kac, first_moment_functional, solve_fd, FdParams, InitialCondition};
use crate::stats::{mean, par_map, variance_estimate, EstimateWithCI};

/// Experiment names with a one-line description, in criterion order.
pub const EXPERIMENTS: [(&str, &str); 9] = [
    ("constants", "c_* by quadrature and Monte Carlo; sigma_*^2 by two routes"),
    ("local-time", "Brownian and intersection local time against closed forms"),
    ("tanaka", "sup-error of the Tanaka approximation f_n along n"),
    ("functionals", "X_eps mean and variance, Y_eps,eps against the local time"),
    ("solver", "finite differences against Feynman-Kac on the same field"),
    ("second-moment", "E U(t,x)^2 by chaos series, local time and the Ito scheme"),
    ("convergence", "Cauchy decay along the eps ladder, product and first moments"),
    ("homogenization", "scale family v_eps,alpha: limit, fluctuations, sweep"),
    ("determinism", "byte-identical reports across worker counts"),
];

pub fn criterion_of(name: &str) -> Option<u8> {
    EXPERIMENTS.iter().position(|(n, _)| *n == name).map(|i| i as u8 + 1)
}

const DEFAULT_TOLERANCES: [(&str, f64); 16] = [
    ("constants.k_se", 3.0),
    ("local_time.rel", 0.02),
    ("tanaka.k_se", 3.0),
    ("functionals.k_se", 3.0),
    ("functionals.var_rel", 0.10),
    ("solver.k_se", 3.0),
    ("solver.fd_allowance", 0.02),
    ("second_moment.chaos_rel", 0.01),
    ("second_moment.local_time_rel", 0.02),
    ("second_moment.ito_rel", 0.05),
    ("convergence.k_se", 3.0),
    ("convergence.product_rel", 0.08),
    ("homogenization.l1", 0.05),
    ("homogenization.ew_rel", 0.15),
    ("homogenization.slope", 0.25),
    ("homogenization.slope_tol", 0.10),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub mc_paths: usize,
    pub mc_dt: f64,
    pub sigma_paths: usize,
    pub sigma_dt: f64,
    pub s_step: f64,
    pub prime_paths: usize,
    pub a_step: f64,
    pub x_step: f64,
    /// Run with `R ≡ 0` instead of the tabulated covariance.
    pub zero_stub: bool,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            mc_paths: 100_000,
            mc_dt: 1e-3,
            sigma_paths: 20_000,
            sigma_dt: 1.0 / 1024.0,
            s_step: 1.0 / 64.0,
            prime_paths: 400_000,
            a_step: 1.0 / 256.0,
            x_step: 1.0 / 128.0,
            zero_stub: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTimeConfig {
    pub pairs: usize,
    pub dt: f64,
    pub delta: f64,
    pub t: f64,
}

impl Default for LocalTimeConfig {
    fn default() -> Self {
        Self { pairs: 100_000, dt: 1e-5, delta: 0.01, t: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TanakaConfig {
    pub pairs: usize,
    pub dt: f64,
    pub ns: Vec<usize>,
    pub t: f64,
}

impl Default for TanakaConfig {
    fn default() -> Self {
        Self { pairs: 2000, dt: 1.0 / 16384.0, ns: vec![4, 16, 64, 256], t: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalsConfig {
    pub eps: Vec<f64>,
    pub t: f64,
    pub x_paths: usize,
    pub micro_dt: f64,
    pub y_pairs: usize,
    /// Step of the paths for Y and the local time.
    pub y_dt: f64,
    /// Y is evaluated on a thinned path with about this many steps per `ε²`.
    pub y_steps_per_eps2: usize,
    pub delta: f64,
}

impl Default for FunctionalsConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.4, 0.2, 0.1],
            t: 1.0,
            x_paths: 10_000,
            micro_dt: 0.01,
            y_pairs: 2000,
            y_dt: 1e-4,
            y_steps_per_eps2: 100,
            delta: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub eps: f64,
    pub t: f64,
    pub probes: Vec<f64>,
    pub realizations: usize,
    pub fk_paths: usize,
    pub fk_dt: f64,
    pub noise_dt: f64,
    pub noise_dx: f64,
    pub solver_dt: f64,
    pub u0: InitialCondition,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 0.2,
            t: 0.5,
            probes: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            realizations: 2,
            fk_paths: 100_000,
            fk_dt: 1e-3,
            noise_dt: 1e-3,
            noise_dx: 0.02,
            solver_dt: 1e-3,
            u0: InitialCondition::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondMomentConfig {
    pub t: f64,
    pub kmax: usize,
    pub lt_pairs: usize,
    pub lt_dt: f64,
    pub delta: f64,
    pub ito_realizations: usize,
    pub ito_dt: f64,
    pub ito_dx: f64,
    pub probes: Vec<f64>,
}

impl Default for SecondMomentConfig {
    fn default() -> Self {
        Self {
            t: 1.0,
            kmax: 12,
            lt_pairs: 20_000,
            lt_dt: 1e-4,
            delta: 0.01,
            ito_realizations: 500,
            ito_dt: 1e-3,
            ito_dx: 0.05,
            probes: (-8..=8).map(f64::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub eps_ladder: Vec<f64>,
    pub t: f64,
    pub probes: Vec<f64>,
    pub realizations: usize,
    pub noise_dt: f64,
    pub noise_dx: f64,
    pub solver_dt: f64,
    /// Paths for the Clark-Ocone estimate of `σ_*²` entering `c_ε`.
    pub sigma_paths: usize,
    /// Ladder levels where the first moment is also evaluated by the
    /// path-integral formula at finite ε (diagnostic cells, no verdict).
    pub formula_eps: Vec<f64>,
    pub formula_paths: usize,
    pub formula_micro_dt: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            eps_ladder: vec![0.4, 0.2, 0.1],
            t: 0.5,
            probes: vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0],
            realizations: 1000,
            noise_dt: 1e-3,
            noise_dx: 0.02,
            solver_dt: 1e-3,
            sigma_paths: 100_000,
            formula_eps: vec![0.4, 0.2],
            formula_paths: 10_000,
            formula_micro_dt: 1.0 / 128.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogenizationConfig {
    pub alpha: f64,
    pub eps: f64,
    pub t: f64,
    pub probes: Vec<f64>,
    pub mean_realizations: usize,
    pub ew_realizations: usize,
    pub sweep_alphas: Vec<f64>,
    pub sweep_eps: Vec<f64>,
    pub sweep_realizations: usize,
    pub sigma_paths: usize,
}

impl Default for HomogenizationConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            eps: 0.1,
            t: 0.5,
            probes: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            mean_realizations: 100,
            ew_realizations: 400,
            sweep_alphas: vec![1.0, 1.5, 2.0],
            sweep_eps: vec![0.4, 0.2, 0.1],
            sweep_realizations: 400,
            sigma_paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeterminismConfig {
    pub experiments: Vec<String>,
    pub workers: Vec<usize>,
    /// Run the listed experiments at reduced replication.
    pub quick: bool,
}

impl Default for DeterminismConfig {
    fn default() -> Self {
        Self {
            experiments: EXPERIMENTS.iter().map(|(n, _)| n.to_string()).filter(|n| n != "determinism").collect(),
            workers: vec![1, 4, 8],
            quick: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub phi_x_halfwidth: f64,
    pub constants: ConstantsConfig,
    pub local_time: LocalTimeConfig,
    pub tanaka: TanakaConfig,
    pub functionals: FunctionalsConfig,
    pub solver: SolverConfig,
    pub second_moment: SecondMomentConfig,
    pub convergence: ConvergenceConfig,
    pub homogenization: HomogenizationConfig,
    pub determinism: DeterminismConfig,
    /// Overrides of the named tolerances (see [`ExperimentConfig::tolerance`]).
    pub tolerances: BTreeMap<String, f64>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "constants".into(),
            seed: 20240601,
            phi_x_halfwidth: 0.5,
            constants: Default::default(),
            local_time: Default::default(),
            tanaka: Default::default(),
            functionals: Default::default(),
            solver: Default::default(),
            second_moment: Default::default(),
            convergence: Default::default(),
            homogenization: Default::default(),
            determinism: Default::default(),
            tolerances: BTreeMap::new(),
            output: Default::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_experiment(name: &str) -> Result<Self> {
        criterion_of(name).ok_or_else(|| LabError::UnknownExperiment(name.into()))?;
        Ok(Self { experiment: name.into(), ..Default::default() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        if let Some(v) = self.tolerances.get(key) {
            return *v;
        }
        DEFAULT_TOLERANCES
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("unknown tolerance `{key}`"))
    }

    pub fn spec(&self) -> Result<MollifierSpec> {
        MollifierSpec::new(self.phi_x_halfwidth)
    }

    /// Reduced replication for smoke runs and the determinism check.
    pub fn quick(&self) -> Self {
        let mut c = self.clone();
        c.constants.mc_paths = 2000;
        c.constants.sigma_paths = 200;
        c.constants.prime_paths = 4000;
        c.local_time.pairs = 200;
        c.local_time.dt = 1e-4;
        c.tanaka.pairs = 100;
        c.tanaka.dt = 1.0 / 4096.0;
        c.functionals.x_paths = 100;
        c.functionals.y_pairs = 50;
        c.functionals.eps = vec![0.4, 0.2];
        c.solver.realizations = 1;
        c.solver.fk_paths = 2000;
        c.second_moment.lt_pairs = 500;
        c.second_moment.ito_realizations = 50;
        c.convergence.realizations = 20;
        c.convergence.eps_ladder = vec![0.4, 0.2];
        c.convergence.sigma_paths = 4000;
        c.convergence.formula_paths = 200;
        c.convergence.formula_eps = vec![0.4];
        c.homogenization.mean_realizations = 20;
        c.homogenization.ew_realizations = 200;
        c.homogenization.sweep_realizations = 20;
        c.homogenization.sweep_alphas = vec![1.0];
        c.homogenization.sweep_eps = vec![0.4, 0.2];
        c.homogenization.sigma_paths = 4000;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(LabError::Config(what.to_string()));
        if criterion_of(&self.experiment).is_none() {
            return Err(LabError::UnknownExperiment(self.experiment.clone()));
        }
        self.spec()?;
        for k in self.tolerances.keys() {
            if !DEFAULT_TOLERANCES.iter().any(|(d, _)| d == k) {
                return bad(&format!("unknown tolerance `{k}`"));
            }
        }
        let th = &self.convergence;
        if th.eps_ladder.is_empty() {
            return bad("convergence.eps_ladder is empty");
        }
        if th.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return bad("convergence.eps_ladder must be strictly decreasing");
        }
        for &e in &th.eps_ladder {
            check_resolved(e, th.noise_dt, th.noise_dx, th.solver_dt)?;
        }
        for &e in &th.formula_eps {
            if th.eps_ladder.contains(&e) && !is_multiple(th.t / (e * e), th.formula_micro_dt) {
                return bad(&format!("t/ε² at ε {e} is not a multiple of convergence.formula_micro_dt"));
            }
        }
        if !is_multiple(th.solver_dt, th.noise_dt) {
            return bad("convergence.solver_dt must be a multiple of convergence.noise_dt");
        }
        let s = &self.solver;
        check_resolved(s.eps, s.noise_dt, s.noise_dx, s.solver_dt)?;
        let f = &self.functionals;
        if f.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("functionals.eps must be strictly decreasing");
        }
        let h = &self.homogenization;
        if h.sweep_eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("homogenization.sweep_eps must be strictly decreasing");
        }
        for &a in h.sweep_alphas.iter().chain(std::iter::once(&h.alpha)) {
            ScaleConfig::new(a, h.eps, 0.0)?;
        }
        for e in &self.determinism.experiments {
            if e == "determinism" || criterion_of(e).is_none() {
                return bad(&format!("determinism cannot run `{e}`"));
            }
        }
        if self.determinism.workers.contains(&0) {
            return bad("worker counts must be positive");
        }
        Ok(())
    }
}

fn is_multiple(a: f64, b: f64) -> bool {
    let r = a / b;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() < 1e-9
}

fn check_resolved(eps: f64, noise_dt: f64, noise_dx: f64, solver_dt: f64) -> Result<()> {
    let tol = 1.0 + 1e-12;
    if !(eps > 0.0) || eps * eps < 2.0 * noise_dt / tol || eps < 2.0 * noise_dx / tol || solver_dt > eps * eps / 2.0 * tol {
        return Err(LabError::Unresolved {
            constraint: "ε² >= 2 dt, ε >= 2 dx, solver dt <= ε²/2",
            detail: format!("ε {eps}, noise dt {noise_dt}, dx {noise_dx}, solver dt {solver_dt}"),
        });
    }
    Ok(())
}

/// One reported number: an estimate with its standard error, or an exact
/// (deterministic) value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub name: String,
    pub value: f64,
    pub se: Option<f64>,
    pub exact: bool,
    pub n: usize,
}

impl ReportCell {
    pub fn estimate(name: impl Into<String>, e: &EstimateWithCI) -> Self {
        Self { name: name.into(), value: e.mean, se: Some(e.se), exact: false, n: e.n }
    }

    pub fn exact(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), value, se: None, exact: true, n: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: u8,
    pub pass: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub build: String,
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<ReportCell>,
    pub verdict: Verdict,
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn cell(&self, name: &str) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.name == name)
    }
}

/// `git describe`-style tag baked in at build time.
pub fn build_tag() -> String {
    option_env!("WZ_BUILD_TAG").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION"))).to_string()
}

struct Builder {
    cells: Vec<ReportCell>,
    checks: Vec<Check>,
    tables: Vec<Table>,
}

impl Builder {
    fn new() -> Self {
        Self { cells: Vec::new(), checks: Vec::new(), tables: Vec::new() }
    }

    fn est(&mut self, name: impl Into<String>, e: &EstimateWithCI) {
        self.cells.push(ReportCell::estimate(name, e));
    }

    fn exact(&mut self, name: impl Into<String>, v: f64) {
        self.cells.push(ReportCell::exact(name, v));
    }

    fn check(&mut self, name: impl Into<String>, pass: bool, detail: String) {
        self.checks.push(Check { name: name.into(), pass, detail });
    }

    fn finish(self, config: &ExperimentConfig) -> ExperimentReport {
        let pass = self.checks.iter().all(|c| c.pass);
        ExperimentReport {
            experiment: config.experiment.clone(),
            build: build_tag(),
            config_hash: config.hash(),
            seed: config.seed,
            cells: self.cells,
            verdict: Verdict {
                criterion: criterion_of(&config.experiment).unwrap_or(0),
                pass,
                checks: self.checks,
            },
            tables: self.tables,
        }
    }
}

fn experiment_key(config: &ExperimentConfig, label: &str) -> u64 {
    derive_key(derive_key(config.seed, label_hash(&config.experiment)), label_hash(label))
}

/// Runs the configured experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    match config.experiment.as_str() {
        "constants" => run_constants_report(config),
        "local-time" => run_local_time(config),
        "tanaka" => run_tanaka(config),
        "functionals" => run_functionals(config),
        "solver" => run_solver_check(config),
        "second-moment" => run_second_moment(config),
        "convergence" => run_convergence(config),
        "homogenization" => run_homogenization_suite(config),
        "determinism" => run_determinism(config),
        other => Err(LabError::UnknownExperiment(other.into())),
    }
}

/// [`run_experiment`] plus its wall-clock duration.
pub fn run_timed(config: &ExperimentConfig) -> Result<(ExperimentReport, Duration)> {
    let start = Instant::now();
    let r = run_experiment(config)?;
    Ok((r, start.elapsed()))
}

fn fmt_e(e: &EstimateWithCI) -> String {
    format!("{:.6} ± {:.2e}", e.mean, e.se)
}

fn rel_check(b: &mut Builder, name: &str, e: &EstimateWithCI, target: f64, rel: f64) {
    let err = (e.mean - target) / target;
    b.check(name, err.abs() <= rel, format!("{} vs {target:.6}: {:+.2}% (limit {:.0}%)", fmt_e(e), 100.0 * err, 100.0 * rel));
}

/// Constants by every implemented route, with a given covariance.
pub fn constants_estimate<C: Covariance>(cov: &C, spec: MollifierSpec, cfg: &ConstantsConfig, seed: u64) -> Result<ConstantsEstimate> {
    let c_star = c_star_quadrature(cov);
    let mc = c_star_mc(cov, cfg.mc_paths, cfg.mc_dt, derive_key(seed, 1))?;
    let sigma = sigma_star_sq_mc(cov, cfg.sigma_paths, cfg.sigma_dt, cfg.s_step, derive_key(seed, 2))?;
    let kernel = ClarkOconeKernel::build(cov, cfg.a_step, cfg.x_step)?;
    let prime = sigma_prime_sq_mc(&kernel, cfg.prime_paths, derive_key(seed, 3));
    Ok(ConstantsEstimate {
        c_star,
        c_star_se: mc.se,
        c_star_mc: mc.mean,
        sigma_star_sq: sigma.mean,
        sigma_star_sq_se: sigma.se,
        sigma_prime_sq: prime.mean,
        sigma_prime_sq_se: prime.se,
        methods: vec![
            "c_star: composite Gauss-Legendre over geometric panels".into(),
            format!("c_star_mc: {} paths, dt {}", cfg.mc_paths, cfg.mc_dt),
            format!("sigma_star_sq: two-sided paths, {} paths, dt {}, s step {}", cfg.sigma_paths, cfg.sigma_dt, cfg.s_step),
            format!("sigma_prime_sq: Clark-Ocone kernel table, {} paths, step {}", cfg.prime_paths, cfg.a_step),
        ],
        phi_spec: spec,
    })
}

/// `c_*` by quadrature and `σ'_*²` by the Clark-Ocone route, as used for
/// `c_ε` in the solver experiments.
fn renormalization(table: &CovarianceTable, paths: usize, cfg: &ConstantsConfig, seed: u64) -> Result<(f64, EstimateWithCI)> {
    let kernel = ClarkOconeKernel::build(table, cfg.a_step, cfg.x_step)?;
    Ok((c_star_quadrature(table), sigma_prime_sq_mc(&kernel, paths, seed)))
}

pub fn run_constants_report(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let spec = config.spec()?;
    let seed = experiment_key(config, "constants");
    let cfg = &config.constants;
    let est = if cfg.zero_stub {
        constants_estimate(&ZeroCovariance, spec, cfg, seed)?
    } else {
        constants_estimate(&CovarianceTable::build(spec), spec, cfg, seed)?
    };
    let k = config.tolerance("constants.k_se");
    let mut b = Builder::new();
    b.exact("c_star_quadrature", est.c_star);
    let mc = EstimateWithCI { mean: est.c_star_mc, se: est.c_star_se, n: cfg.mc_paths };
    let sigma = EstimateWithCI { mean: est.sigma_star_sq, se: est.sigma_star_sq_se, n: cfg.sigma_paths };
    let prime = EstimateWithCI { mean: est.sigma_prime_sq, se: est.sigma_prime_sq_se, n: cfg.prime_paths };
    b.est("c_star_mc", &mc);
    b.est("sigma_star_sq", &sigma);
    b.est("sigma_prime_sq", &prime);
    let d = (est.c_star - mc.mean).abs();
    b.check("c_star quadrature vs Monte Carlo", d <= k * mc.se, format!("|{:.6} - {}| = {d:.2e} <= {k}·{:.2e}", est.c_star, fmt_e(&mc), mc.se));
    let se = (sigma.se.powi(2) + prime.se.powi(2)).sqrt();
    let d = (sigma.mean - prime.mean).abs();
    b.check("sigma_star_sq vs sigma_prime_sq", d <= k * se, format!("|{} - {}| = {d:.2e} <= {k}·{se:.2e}", fmt_e(&sigma), fmt_e(&prime)));
    Ok(b.finish(config))
}

pub fn run_local_time(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.local_time;
    let base = experiment_key(config, "pairs");
    let rows: Result<Vec<[f64; 4]>> = par_map(c.pairs, |i| {
        let b1 = sample_path(c.t, c.dt, derive_key(base, 2 * i as u64))?;
        let b2 = sample_path(c.t, c.dt, derive_key(base, 2 * i as u64 + 1))?;
        let l1 = local_time(&b1, 0.0, c.t, c.delta)?.value;
        let l2 = local_time(&b2, 0.0, c.t, c.delta)?.value;
        let ell = intersection_local_time(&b1, &b2, c.t, c.delta)?.value;
        Ok([l1, l2, ell, ell.exp()])
    })
    .into_iter()
    .collect();
    let rows = rows?;
    let brownian: Vec<f64> = rows.iter().flat_map(|r| [r[0], r[1]]).collect();
    let ell: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let exp_ell: Vec<f64> = rows.iter().map(|r| r[3]).collect();
    let rel = config.tolerance("local_time.rel");
    let pi = std::f64::consts::PI;
    let mut b = Builder::new();
    let est_l = EstimateWithCI::from_samples(&brownian);
    let est_ell = EstimateWithCI::from_samples(&ell);
    let est_exp = EstimateWithCI::from_samples(&exp_ell);
    b.est("brownian_local_time", &est_l);
    b.est("intersection_local_time", &est_ell);
    b.est("exp_intersection_local_time", &est_exp);
    b.exact("target_brownian", (2.0 * c.t / pi).sqrt());
    b.exact("target_intersection", (c.t / pi).sqrt());
    b.exact("target_exp", exp_local_time_moment(c.t));
    rel_check(&mut b, "E L(t,0;B)", &est_l, (2.0 * c.t / pi).sqrt(), rel);
    rel_check(&mut b, "E l(t)", &est_ell, (c.t / pi).sqrt(), rel);
    rel_check(&mut b, "E exp l(t)", &est_exp, exp_local_time_moment(c.t), rel);
    Ok(b.finish(config))
}

/// Strictly decreasing means, and the first-to-last paired difference
/// above `k` standard errors.
fn decreasing_checks(b: &mut Builder, what: &str, labels: &[String], samples: &[Vec<f64>], k: f64) {
    let means: Vec<EstimateWithCI> = samples.iter().map(|s| EstimateWithCI::from_samples(s)).collect();
    let strict = means.windows(2).all(|w| w[1].mean < w[0].mean);
    let listing: Vec<String> = labels.iter().zip(&means).map(|(l, e)| format!("{l}: {}", fmt_e(e))).collect();
    b.check(format!("{what} strictly decreasing"), strict, listing.join("; "));
    if samples.len() >= 2 {
        let last = samples.len() - 1;
        let d: Vec<f64> = samples[0].iter().zip(&samples[last]).map(|(a, z)| a - z).collect();
        let e = EstimateWithCI::from_samples(&d);
        b.check(
            format!("{what} endpoint separation"),
            e.mean > k * e.se,
            format!("paired difference {} between {} and {}, need > {k} SE", fmt_e(&e), labels[0], labels[last]),
        );
    }
}

pub fn run_tanaka(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.tanaka;
    let base = experiment_key(config, "pairs");
    let rows: Result<Vec<Vec<f64>>> = par_map(c.pairs, |i| {
        let b1 = sample_path(c.t, c.dt, derive_key(base, 2 * i as u64))?;
        let b2 = sample_path(c.t, c.dt, derive_key(base, 2 * i as u64 + 1))?;
        let y = b1.difference(&b2)?;
        c.ns.iter().map(|&n| tanaka_sup_error(&y, n, c.t)).collect()
    })
    .into_iter()
    .collect();
    let rows = rows?;
    let by_n: Vec<Vec<f64>> = (0..c.ns.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut b = Builder::new();
    let mut table = Table { name: "tanaka".into(), columns: vec!["n".into(), "mean".into(), "se".into()], rows: vec![] };
    for (n, s) in c.ns.iter().zip(&by_n) {
        let e = EstimateWithCI::from_samples(s);
        b.est(format!("sup_error_n{n}"), &e);
        table.rows.push(vec![*n as f64, e.mean, e.se]);
    }
    b.tables.push(table);
    let labels: Vec<String> = c.ns.iter().map(|n| format!("n={n}")).collect();
    decreasing_checks(&mut b, "E sup|U - f_n|^2", &labels, &by_n, config.tolerance("tanaka.k_se"));
    Ok(b.finish(config))
}

pub fn run_functionals(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.functionals;
    let spec = config.spec()?;
    let table = CovarianceTable::build(spec);
    let k = config.tolerance("functionals.k_se");
    let mut b = Builder::new();
    let (_, sigma) = renormalization(&table, config.constants.prime_paths, &config.constants, experiment_key(config, "sigma"))?;
    b.est("sigma_prime_sq", &sigma);

    let centering = MicroCentering::new(&table, c.micro_dt)?;
    for &eps in &c.eps {
        let base = derive_key(experiment_key(config, "x_eps"), eps.to_bits());
        let horizon = c.t / (eps * eps);
        let xs: Result<Vec<f64>> = par_map(c.x_paths, |i| {
            let p = sample_path(horizon, c.micro_dt, derive_key(base, i as u64))?;
            x_eps(&table, &centering, &p, eps, c.t)
        })
        .into_iter()
        .collect();
        let xs = xs?;
        let m = EstimateWithCI::from_samples(&xs);
        let v = variance_estimate(&xs);
        b.est(format!("x_eps_mean_eps{eps}"), &m);
        b.est(format!("x_eps_var_eps{eps}"), &v);
        b.check(format!("E X_eps(t) = 0 at eps {eps}"), m.mean.abs() <= k * m.se, format!("{} within {k} SE of 0", fmt_e(&m)));
    }
    if let Some(&eps) = c.eps.last() {
        let v = b.cells.iter().find(|x| x.name == format!("x_eps_var_eps{eps}")).expect("cell").clone();
        let target = sigma.mean * c.t;
        let rel = config.tolerance("functionals.var_rel");
        let err = (v.value - target) / target;
        b.check(
            format!("Var X_eps(t) vs sigma_*^2 t at eps {eps}"),
            err.abs() <= rel,
            format!("{:.6} ± {:.2e} vs {target:.6}: {:+.2}% (limit {:.0}%)", v.value, v.se.unwrap_or(0.0), 100.0 * err, 100.0 * rel),
        );
    }

    let base = experiment_key(config, "y_pairs");
    let crosses: Vec<CrossCovariance> = c.eps.iter().map(|&e| CrossCovariance::new(&spec, e, e)).collect::<Result<_>>()?;
    let nsteps = (c.t / c.y_dt).round() as usize;
    let factors: Vec<usize> = c
        .eps
        .iter()
        .map(|&e| {
            let f = ((e * e / c.y_dt) / c.y_steps_per_eps2 as f64).floor().max(1.0) as usize;
            (1..=f).rev().find(|d| nsteps.is_multiple_of(*d)).unwrap_or(1)
        })
        .collect();
    let rows: Result<Vec<Vec<f64>>> = par_map(c.y_pairs, |i| {
        let b1 = sample_path(c.t, c.y_dt, derive_key(base, 2 * i as u64))?;
        let b2 = sample_path(c.t, c.y_dt, derive_key(base, 2 * i as u64 + 1))?;
        let ell = intersection_local_time(&b1, &b2, c.t, c.delta)?.value;
        crosses
            .iter()
            .zip(&factors)
            .map(|(cross, &f)| {
                let y = if f > 1 { y_eps(cross, &b1.decimate(f)?, &b2.decimate(f)?, c.t)? } else { y_eps(cross, &b1, &b2, c.t)? };
                Ok((y - ell) * (y - ell))
            })
            .collect()
    })
    .into_iter()
    .collect();
    let rows = rows?;
    let by_eps: Vec<Vec<f64>> = (0..c.eps.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut t = Table { name: "y_minus_local_time".into(), columns: vec!["eps".into(), "mean".into(), "se".into()], rows: vec![] };
    for (e, s) in c.eps.iter().zip(&by_eps) {
        let est = EstimateWithCI::from_samples(s);
        b.est(format!("y_error_sq_eps{e}"), &est);
        t.rows.push(vec![*e, est.mean, est.se]);
    }
    b.tables.push(t);
    let labels: Vec<String> = c.eps.iter().map(|e| format!("eps={e}")).collect();
    let means: Vec<EstimateWithCI> = by_eps.iter().map(|s| EstimateWithCI::from_samples(s)).collect();
    let strict = means.windows(2).all(|w| w[1].mean < w[0].mean);
    let listing: Vec<String> = labels.iter().zip(&means).map(|(l, e)| format!("{l}: {}", fmt_e(e))).collect();
    b.check("E (Y_eps,eps - l)^2 strictly decreasing", strict, listing.join("; "));
    Ok(b.finish(config))
}

fn probe_values(sol: &crate::solver::SolutionField, probes: &[f64]) -> Result<Vec<f64>> {
    probes.iter().map(|&x| sol.at(x).ok_or_else(|| LabError::OutOfDomain(format!("probe {x}")))).collect()
}

fn half_width(probes: &[f64]) -> f64 {
    probes.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn run_solver_check(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.solver;
    let spec = config.spec()?;
    let table = CovarianceTable::build(spec);
    let (c_star, sigma) = renormalization(&table, config.convergence.sigma_paths, &config.constants, experiment_key(config, "sigma"))?;
    let ce = c_eps(c.eps, c_star, sigma.mean)?;
    let grid = GridSpec::buffered(c.t, half_width(&c.probes), c.noise_dt, c.noise_dx, spec.t_halfwidth * c.eps * c.eps)?;
    let k = config.tolerance("solver.k_se");
    let allowance = config.tolerance("solver.fd_allowance");
    let mut b = Builder::new();
    b.exact("c_eps", ce);
    let mut table_rows = Vec::new();
    let mut worst_fk: f64 = 0.0;
    let mut worst_self: f64 = 0.0;
    let (mut ok_fk, mut ok_self) = (true, true);
    for r in 0..c.realizations {
        let key = derive_key(experiment_key(config, "realization"), r as u64);
        let noise = sample_white_noise(&grid, key)?;
        let field = mollify(&noise, &spec, c.eps)?;
        let params = FdParams::on_field(&field, c.t, c.solver_dt);
        let fd = probe_values(&solve_fd(&field, ce, &c.u0, &params)?, &c.probes)?;
        let fine = probe_values(&solve_fd(&field, ce, &c.u0, &params.refined())?, &c.probes)?;
        for (p, &x) in c.probes.iter().enumerate() {
            let fk = feynman_kac(&field, ce, &c.u0, c.t, x, c.fk_paths, c.fk_dt, derive_key(key, label_hash("fk")))?;
            let gap = (fd[p] - fk.mean).abs();
            let bound = k * fk.se + allowance * fd[p].abs();
            ok_fk &= gap <= bound;
            worst_fk = worst_fk.max(gap / bound);
            let self_gap = (fd[p] - fine[p]).abs();
            let self_bound = allowance * fine[p].abs();
            ok_self &= self_gap <= self_bound;
            worst_self = worst_self.max(self_gap / self_bound);
            b.est(format!("fk_r{r}_x{x}"), &fk);
            b.exact(format!("fd_r{r}_x{x}"), fd[p]);
            b.exact(format!("fd_refined_r{r}_x{x}"), fine[p]);
            table_rows.push(vec![r as f64, x, fd[p], fine[p], fk.mean, fk.se]);
        }
    }
    b.tables.push(Table {
        name: "fd_vs_fk".into(),
        columns: ["realization", "x", "fd", "fd_refined", "fk", "fk_se"].iter().map(|s| s.to_string()).collect(),
        rows: table_rows,
    });
    b.check(
        "|FD - FK| <= k FK-SE + allowance",
        ok_fk,
        format!("worst gap/bound {worst_fk:.3} (k = {k}, allowance {:.1}% of |FD|)", 100.0 * allowance),
    );
    b.check(
        "FD self-convergence under grid halving",
        ok_self,
        format!("worst |FD(h) - FD(h/2)| / allowance {worst_self:.3} (allowance {:.1}%)", 100.0 * allowance),
    );
    Ok(b.finish(config))
}

pub fn run_second_moment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.second_moment;
    let closed = exp_local_time_moment(c.t);
    let chaos = chaos_second_moment(c.t, c.kmax);
    let lt = limit_second_moment(c.t, 0.0, &InitialCondition::one(), c.lt_pairs, c.lt_dt, c.delta, experiment_key(config, "local_time"))?;
    let grid = GridSpec::buffered(c.t, half_width(&c.probes), c.ito_dt, c.ito_dx, 0.0)?;
    let base = experiment_key(config, "ito");
    let u0 = InitialCondition::one();
    let ito_rows: Result<Vec<f64>> = par_map(c.ito_realizations, |r| {
        let noise = sample_white_noise(&grid, derive_key(base, r as u64))?;
        let sol = solve_she_ito(&noise, &u0, &ItoParams { t: c.t, rows_per_step: 1 })?;
        let v = probe_values(&sol, &c.probes)?;
        Ok(v.iter().map(|u| u * u).sum::<f64>() / v.len() as f64)
    })
    .into_iter()
    .collect();
    let ito = EstimateWithCI::from_samples(&ito_rows?);
    let lattice = lattice_second_moment(c.t, c.ito_dt, c.ito_dx);
    let mut b = Builder::new();
    b.exact("closed_form", closed);
    b.exact("chaos", chaos);
    b.est("local_time_mc", &lt);
    b.est("ito_mc", &ito);
    b.exact("ito_lattice_exact", lattice);
    let (r_chaos, r_lt, r_ito) = (
        config.tolerance("second_moment.chaos_rel"),
        config.tolerance("second_moment.local_time_rel"),
        config.tolerance("second_moment.ito_rel"),
    );
    let err = (chaos - closed) / closed;
    b.check(
        format!("chaos series (kmax {}) vs closed form", c.kmax),
        err.abs() <= r_chaos,
        format!("{chaos:.6} vs {closed:.6}: {:+.3}% (limit {:.0}%)", 100.0 * err, 100.0 * r_chaos),
    );
    rel_check(&mut b, "local-time MC vs closed form", &lt, closed, r_lt);
    rel_check(&mut b, "Ito MC vs closed form", &ito, closed, r_ito);
    let pair = |a: f64, z: f64, tol: f64| ((a - z).abs() / closed, tol);
    for (name, (gap, tol)) in [
        ("chaos vs local-time MC", pair(chaos, lt.mean, r_chaos + r_lt)),
        ("chaos vs Ito MC", pair(chaos, ito.mean, r_chaos + r_ito)),
        ("local-time MC vs Ito MC", pair(lt.mean, ito.mean, r_lt + r_ito)),
    ] {
        b.check(name, gap <= tol, format!("gap {:.2}% of the closed form (limit {:.0}%)", 100.0 * gap, 100.0 * tol));
    }
    Ok(b.finish(config))
}

/// Per-realization probe values of `u_ε` for each ladder level and of the
/// Itô reference, all driven by one white-noise realization.
pub struct CoupledRealization {
    pub u: Vec<Vec<f64>>,
    pub she: Vec<f64>,
}

pub fn coupled_realization(
    noise: &WhiteNoiseRealization,
    spec: &MollifierSpec,
    ladder: &[f64],
    cs: &[f64],
    t: f64,
    solver_dt: f64,
    probes: &[f64],
) -> Result<CoupledRealization> {
    let u0 = InitialCondition::one();
    let fields = couple_across_scales(noise, spec, ladder)?;
    let u = fields
        .iter()
        .zip(cs)
        .map(|(f, &c)| probe_values(&solve_fd(f, c, &u0, &FdParams::on_field(f, t, solver_dt))?, probes))
        .collect::<Result<Vec<_>>>()?;
    let rows = (solver_dt / noise.grid.dt).round() as usize;
    let she = probe_values(&solve_she_ito(noise, &u0, &ItoParams { t, rows_per_step: rows })?, probes)?;
    Ok(CoupledRealization { u, she })
}

fn probe_mean<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    (0..n).map(f).sum::<f64>() / n as f64
}

pub fn run_convergence(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.convergence;
    let spec = config.spec()?;
    let table = CovarianceTable::build(spec);
    let (c_star, sigma) = renormalization(&table, c.sigma_paths, &config.constants, experiment_key(config, "sigma"))?;
    let cs: Vec<f64> = c.eps_ladder.iter().map(|&e| c_eps(e, c_star, sigma.mean)).collect::<Result<_>>()?;
    let e_max = c.eps_ladder[0];
    let grid = GridSpec::buffered(c.t, half_width(&c.probes), c.noise_dt, c.noise_dx, spec.t_halfwidth * e_max * e_max)?;
    let base = experiment_key(config, "realization");
    let reals: Result<Vec<CoupledRealization>> = par_map(c.realizations, |r| {
        let noise = sample_white_noise(&grid, derive_key(base, r as u64))?;
        coupled_realization(&noise, &spec, &c.eps_ladder, &cs, c.t, c.solver_dt, &c.probes)
    })
    .into_iter()
    .collect();
    let reals = reals?;
    let np = c.probes.len();
    let levels = c.eps_ladder.len();
    let k = config.tolerance("convergence.k_se");
    let mut b = Builder::new();
    b.est("sigma_prime_sq", &sigma);
    for (e, ce) in c.eps_ladder.iter().zip(&cs) {
        b.exact(format!("c_eps{e}"), *ce);
    }

    for (i, e) in c.eps_ladder.iter().enumerate() {
        let first: Vec<f64> = reals.iter().map(|r| probe_mean(np, |p| r.u[i][p])).collect();
        let est = EstimateWithCI::from_samples(&first);
        b.est(format!("mean_u_eps{e}"), &est);
        let target = InitialCondition::one().heat_semigroup(c.t, 0.0);
        b.check(
            format!("E u_eps = heat semigroup at eps {e}"),
            est.within_se_of(target, k),
            format!("{} vs {target}: {:.2} SE", fmt_e(&est), (est.mean - target) / est.se),
        );
        for n in [1, 2] {
            let s: Vec<f64> = reals.iter().map(|r| probe_mean(np, |p| (r.u[i][p] - r.she[p]).abs().powi(n))).collect();
            b.est(format!("abs_u_minus_she_pow{n}_eps{e}"), &EstimateWithCI::from_samples(&s));
        }
        let m4: Vec<f64> = reals.iter().map(|r| probe_mean(np, |p| r.u[i][p].powi(4))).collect();
        b.est(format!("fourth_moment_eps{e}"), &EstimateWithCI::from_samples(&m4));
    }
    // Levels off the ladder are skipped.
    for (&e, &ce) in c.eps_ladder.iter().zip(&cs).filter(|(e, _)| c.formula_eps.contains(e)) {
        let key = derive_key(experiment_key(config, "formula"), e.to_bits());
        let f = first_moment_functional(&table, e, ce, &InitialCondition::one(), c.t, 0.0, c.formula_paths, c.formula_micro_dt, key)?;
        b.est(format!("mean_u_formula_eps{e}"), &f);
    }
    let she_sq: Vec<f64> = reals.iter().map(|r| probe_mean(np, |p| r.she[p] * r.she[p])).collect();
    b.est("she_second_moment", &EstimateWithCI::from_samples(&she_sq));

    let mut cauchy = Table {
        name: "cauchy".into(),
        columns: ["eps1", "eps2", "mean_sq_diff", "se"].iter().map(|s| s.to_string()).collect(),
        rows: vec![],
    };
    let pair_samples: Vec<Vec<f64>> = (0..levels.saturating_sub(1))
        .map(|i| reals.iter().map(|r| probe_mean(np, |p| (r.u[i][p] - r.u[i + 1][p]).powi(2))).collect())
        .collect();
    for (i, s) in pair_samples.iter().enumerate() {
        let est = EstimateWithCI::from_samples(s);
        let (e1, e2) = (c.eps_ladder[i], c.eps_ladder[i + 1]);
        b.est(format!("cauchy_{e1}_{e2}"), &est);
        cauchy.rows.push(vec![e1, e2, est.mean, est.se]);
    }
    b.tables.push(cauchy);
    for w in 0..pair_samples.len().saturating_sub(1) {
        let d: Vec<f64> = pair_samples[w].iter().zip(&pair_samples[w + 1]).map(|(a, z)| a - z).collect();
        let est = EstimateWithCI::from_samples(&d);
        let (a, m, z) = (c.eps_ladder[w], c.eps_ladder[w + 1], c.eps_ladder[w + 2]);
        b.check(
            format!("E|u_{m} - u_{z}|^2 < E|u_{a} - u_{m}|^2"),
            est.mean > k * est.se,
            format!("paired difference {}, need > {k} SE", fmt_e(&est)),
        );
    }
    if levels >= 2 {
        let (i, j) = (levels - 2, levels - 1);
        let prod: Vec<f64> = reals.iter().map(|r| probe_mean(np, |p| r.u[i][p] * r.u[j][p])).collect();
        let est = EstimateWithCI::from_samples(&prod);
        let target = exp_local_time_moment(c.t);
        b.est(format!("product_{}_{}", c.eps_ladder[i], c.eps_ladder[j]), &est);
        b.exact("product_limit", target);
        rel_check(
            &mut b,
            &format!("E[u_{} u_{}] vs limit", c.eps_ladder[i], c.eps_ladder[j]),
            &est,
            target,
            config.tolerance("convergence.product_rel"),
        );
    }
    Ok(b.finish(config))
}

pub fn run_homogenization_suite(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.homogenization;
    let spec = config.spec()?;
    let table = CovarianceTable::build(spec);
    let (c_star, sigma) = renormalization(&table, c.sigma_paths, &config.constants, experiment_key(config, "sigma"))?;
    let u0 = InitialCondition::one();
    let scale = ScaleConfig::new(c.alpha, c.eps, c_star)?;
    let mut b = Builder::new();
    b.exact("c_star", c_star);

    // Zero noise: the corrected field is the damped heat flow, exactly.
    let grid = scale.grid(&spec, c.t, half_width(&c.probes))?;
    let zero = WhiteNoiseRealization::zeros(&grid)?;
    let field = scale.field(&zero, &spec)?;
    let params = FdParams::on_field(&field, c.t, grid.dt);
    let s = solve_v(&scale, &zero, &spec, &u0, &params)?;
    let free = solve_fd(&field, 0.0, &u0, &params)?;
    let d = (-scale.drift(c.t)).exp();
    let exact = s.corrected.last().iter().zip(free.last()).all(|(a, f)| *a == f * d);
    b.check("zero-noise drift identity", exact, format!("corrected = exp(-{:.4})·heat flow at every node", scale.drift(c.t)));

    let n = c.ew_realizations.max(c.mean_realizations);
    let run = HomogenizationRun { t: c.t, probes: c.probes.clone(), realizations: n, seed: experiment_key(config, "main") };
    let samples = corrected_samples(&scale, &spec, &u0, &run)?;
    let h = homogenization_check(&samples[..c.mean_realizations], &u0, &run);
    let l1 = config.tolerance("homogenization.l1");
    b.exact("l1_error", h.l1_error);
    b.check(
        format!("corrected field -> heat flow (alpha {}, eps {})", c.alpha, c.eps),
        h.l1_error <= l1,
        format!("L1 over probes {:.4} (limit {l1}); probe means {:?}", h.l1_error, h.probe_means),
    );
    let ew = ew_from_samples(&scale, &samples[..c.ew_realizations])?;
    let target = ew_target_variance(c.t);
    let first_order = ew_first_order_variance(&table, &scale, c.t);
    b.est("ew_variance", &ew);
    b.exact("ew_target", target);
    b.exact("ew_first_order_finite_eps", first_order);
    rel_check(&mut b, "EW variance vs sqrt(t/pi)", &ew, target, config.tolerance("homogenization.ew_rel"));

    let sweep_run = HomogenizationRun { t: c.t, probes: c.probes.clone(), realizations: c.sweep_realizations, seed: experiment_key(config, "sweep") };
    let rows = transition_sweep(&c.sweep_alphas, &c.sweep_eps, c_star, sigma.mean, &spec, &sweep_run)?;
    for r in &rows {
        b.cells.push(ReportCell { name: format!("size_alpha{}_eps{}", r.alpha, r.eps), value: r.size(), se: Some(r.size_se()), exact: false, n: c.sweep_realizations });
        if r.alpha < 2.0 {
            let first = ew_first_order_variance(&table, &ScaleConfig::new(r.alpha, r.eps, c_star)?, c.t) * ScaleConfig::new(r.alpha, r.eps, c_star)?.fluctuation_scale().powi(2);
            b.exact(format!("size_first_order_alpha{}_eps{}", r.alpha, r.eps), first.sqrt());
        }
    }
    b.tables.push(Table {
        name: "sweep".into(),
        columns: ["alpha", "eps", "mean", "var", "target_var", "se"].iter().map(|s| s.to_string()).collect(),
        rows: rows.iter().map(|r| vec![r.alpha, r.eps, r.mean, r.var, r.target_var, r.se]).collect(),
    });
    let (centre, tol) = (config.tolerance("homogenization.slope"), config.tolerance("homogenization.slope_tol"));
    match fluctuation_slope(&rows, 1.0) {
        Some(slope) => {
            b.exact("slope_alpha1", slope);
            b.check("log-log fluctuation slope at alpha 1", (slope - centre).abs() <= tol, format!("{slope:.4} vs {centre} ± {tol}"));
        }
        None => b.check("log-log fluctuation slope at alpha 1", false, "sweep has fewer than two eps values at alpha 1".into()),
    }
    Ok(b.finish(config))
}

/// Serialized report of one experiment under a pool of `workers` threads.
pub fn report_with_workers(config: &ExperimentConfig, workers: usize) -> Result<String> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| LabError::Config(e.to_string()))?;
        pool.install(|| run_experiment(config).map(|r| r.to_json()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        run_experiment(config).map(|r| r.to_json())
    }
}

pub fn run_determinism(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let c = &config.determinism;
    let mut b = Builder::new();
    for name in &c.experiments {
        let base = if c.quick { config.quick() } else { config.clone() };
        let sub = ExperimentConfig { experiment: name.clone(), ..base };
        let outputs: Vec<String> = c.workers.iter().map(|&w| report_with_workers(&sub, w)).collect::<Result<_>>()?;
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        let digest: String = Sha256::digest(outputs[0].as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect();
        b.check(
            format!("{name} byte-identical across workers {:?}", c.workers),
            same,
            format!("{} bytes, sha256 prefix {digest}", outputs[0].len()),
        );
    }
    Ok(b.finish(config))
}

/// Writes `<dir>/<experiment>.json`, the CSV tables and a timing sidecar.
pub fn write_outputs(dir: &std::path::Path, report: &ExperimentReport, elapsed: Duration) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{}.json", report.experiment)), report.to_json())?;
    for t in &report.tables {
        std::fs::write(dir.join(format!("{}_{}.csv", report.experiment, t.name)), t.to_csv())?;
    }
    let timing = serde_json::json!({ "experiment": report.experiment, "seconds": elapsed.as_secs_f64() });
    std::fs::write(dir.join(format!("{}.timing.json", report.experiment)), serde_json::to_string_pretty(&timing)?)?;
    Ok(())
}

/// Mean of the second column of a table (used by callers summarizing CSVs).
pub fn column_mean(t: &Table, col: usize) -> f64 {
    mean(&t.rows.iter().map(|r| r[col]).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let mut c = ExperimentConfig::for_experiment("convergence").unwrap();
        c.tolerances.insert("convergence.k_se".into(), 2.5);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(back.tolerance("convergence.k_se"), 2.5);
        assert_eq!(back.tolerance("convergence.product_rel"), 0.08);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"experiment": "tanaka", "seed": 3}"#).unwrap();
        assert_eq!(c.tanaka, TanakaConfig::default());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "nope"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "tanaka", "bogus": 1}"#).is_err());
    }

    #[test]
    fn validation_rejects_bad_ladders() {
        let mut c = ExperimentConfig::for_experiment("convergence").unwrap();
        c.convergence.eps_ladder = vec![0.2, 0.4];
        assert!(c.validate().is_err());
        c.convergence.eps_ladder = vec![0.4, 0.02];
        assert!(matches!(c.validate(), Err(LabError::Unresolved { .. })));
        c.convergence.eps_ladder = vec![0.4];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn zero_stub_constants_vanish() {
        let mut c = ExperimentConfig::for_experiment("constants").unwrap().quick();
        c.constants.zero_stub = true;
        let r = run_experiment(&c).unwrap();
        for name in ["c_star_quadrature", "c_star_mc", "sigma_star_sq", "sigma_prime_sq"] {
            assert_eq!(r.cell(name).unwrap().value, 0.0, "{name}");
        }
        assert!(r.verdict.pass);
    }

    #[test]
    fn single_level_ladder_gives_empty_cauchy_table() {
        let mut c = ExperimentConfig::for_experiment("convergence").unwrap().quick();
        c.convergence.eps_ladder = vec![0.4];
        c.convergence.realizations = 4;
        c.convergence.probes = vec![0.0];
        let r = run_experiment(&c).unwrap();
        assert!(r.tables[0].rows.is_empty());
        assert!(r.cell("mean_u_eps0.4").is_some());
    }

    #[test]
    fn every_estimate_has_se_or_exact_tag() {
        let c = ExperimentConfig::for_experiment("tanaka").unwrap().quick();
        let r = run_experiment(&c).unwrap();
        assert!(r.cells.iter().all(|c| c.exact || c.se.is_some()));
        assert_eq!(r.verdict.criterion, 3);
    }
}
