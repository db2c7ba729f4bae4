//! The four-step program over an `n`-scan: bounded initial data, converging
//! initial data, uniform approximation of the exact solutions by the ansatz,
//! and order-one separation of the two exact families at positive times.
//!
//! The report documents one witnessing family; it makes no claim about other
//! bounded sets of data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ansatz::{pair_difference, velocity_norm, Ansatz, AnsatzGridRule, AnsatzParams};
use crate::cutoffs::{CutoffConfig, CutoffFamily};
use crate::error::{LabError, Result};
use crate::sobolev::{fit_scaling, hs_norm, hs_norm_state, ScalingFit};
use crate::solver::{Run, SolverConfig, Termination};
use crate::spectral::{Grid2D, SpectralField};
use crate::state::{GasConstants, StateVector};

pub const SCOPE: &str = "one witnessing family of data (omega = +1 and -1) at finitely many n and t; \
                         no statement is made about other bounded sets";

/// Sizing rule for solver grids: the two-thirds band must hold `band_x`
/// scaled envelope wavenumbers in x, and the carrier plus `band_y` of them
/// in y. `refine` multiplies both point counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverGridRule {
    pub band_x: f64,
    pub band_y: f64,
    pub margin: f64,
    pub refine: usize,
}

impl Default for SolverGridRule {
    fn default() -> Self {
        Self { band_x: 36.0, band_y: 12.0, margin: 4.0, refine: 1 }
    }
}

impl SolverGridRule {
    pub fn grid(&self, p: &AnsatzParams, c: &CutoffFamily) -> Result<Grid2D> {
        if self.refine == 0 || !self.refine.is_power_of_two() {
            return Err(LabError::InvalidGrid(format!("refine must be a power of two, got {}", self.refine)));
        }
        let l = c.extent() * p.envelope_width() + self.margin;
        let (kx, ky) = (self.band_x / p.envelope_width(), self.band_y / p.envelope_width());
        let pi = std::f64::consts::PI;
        let pow2 = |x: f64| (x.ceil().max(16.0) as usize).next_power_of_two();
        let ny = pow2(3.0 * l * (p.nf() + ky) / pi) * self.refine;
        let nx = pow2(3.0 * l * kx / pi) * self.refine;
        Grid2D::new(nx, ny, l, l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Template; `n` and `omega` are overridden per run.
    pub params: AnsatzParams,
    pub constants: GasConstants,
    pub cutoffs: CutoffConfig,
    pub n_list: Vec<u32>,
    pub solver: SolverConfig,
    pub solver_grid: SolverGridRule,
    pub analysis_grid: AnsatzGridRule,
    /// Times at which error and separation are measured; must start at 0.
    pub snapshot_times: Vec<f64>,
    pub separation_times: Vec<f64>,
    pub tau: f64,
    /// Worker threads for the two members of a pair.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let params = AnsatzParams::default();
        Self {
            params,
            constants: GasConstants::default(),
            cutoffs: CutoffConfig::default(),
            n_list: vec![16, 32, 64, 128],
            solver: SolverConfig { monitor_indices: vec![params.s], doubling_index: params.s, ..SolverConfig::default() },
            solver_grid: SolverGridRule::default(),
            analysis_grid: AnsatzGridRule::default(),
            snapshot_times: (0..=16).map(|k| k as f64 / 16.0).collect(),
            separation_times: vec![0.25, 0.5, 1.0],
            tau: params.tau(),
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        CutoffFamily::new(&self.cutoffs)?;
        if self.n_list.is_empty() {
            return Err(LabError::InvalidParameter("n_list is empty".into()));
        }
        if self.snapshot_times.first() != Some(&0.0) {
            return Err(LabError::InvalidParameter("snapshot times must start at 0".into()));
        }
        if self.snapshot_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidParameter("snapshot times must increase strictly".into()));
        }
        for t in &self.separation_times {
            if !self.snapshot_times.iter().any(|s| (s - t).abs() < 1e-12) {
                return Err(LabError::InvalidParameter(format!("separation time {t} is not a snapshot time")));
            }
        }
        if !(self.tau > self.params.s) {
            return Err(LabError::InvalidParameter(format!("tau = {} must exceed s = {}", self.tau, self.params.s)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn t_end(&self) -> f64 {
        *self.snapshot_times.last().expect("validated")
    }
}

/// `U - U^{ansatz}` with its norms.
#[derive(Clone, Debug)]
pub struct ErrorState {
    pub e: SpectralField,
    pub f: SpectralField,
    pub g: SpectralField,
    pub h: SpectralField,
    /// `(index, norm)` pairs; each norm is the root sum of squares of the
    /// component norms.
    pub norms: Vec<(f64, f64)>,
}

impl ErrorState {
    pub fn new(exact: &StateVector, approx: &StateVector, indices: &[f64]) -> Result<Self> {
        let d = exact.sub(approx)?;
        let mut norms = Vec::with_capacity(indices.len());
        for s in indices {
            let mut acc = 0.0;
            for c in d.components() {
                acc += hs_norm(c, *s)?.value.powi(2);
            }
            norms.push((*s, acc.sqrt()));
        }
        Ok(Self { e: d.rho, f: d.u, g: d.v, h: d.h, norms })
    }

    pub fn norm(&self, index: f64) -> Option<f64> {
        self.norms.iter().find(|(s, _)| *s == index).map(|(_, v)| *v)
    }
}

/// Measurements at one snapshot time. Pairs are indexed `[omega=+1, omega=-1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub t: f64,
    pub error_sigma: [f64; 2],
    pub error_s: [f64; 2],
    pub error_tau: [f64; 2],
    /// `||U_{1,n} - U_{-1,n}||_s` for the exact solutions.
    pub separation: f64,
    /// The same for the two approximate solutions.
    pub ansatz_separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub n: u32,
    pub complete: bool,
    pub terminations: [Termination; 2],
    pub messages: Vec<String>,
    pub doubling_times: [Option<f64>; 2],
    pub steps: [usize; 2],
    pub solver_grid: [usize; 2],
    pub half_width: f64,
    /// `||U^{omega,n}(0)||_s` on the analysis grid.
    pub init_norm: [f64; 2],
    /// `||U^{1,n}(0) - U^{-1,n}(0)||_s` on the analysis grid.
    pub init_diff: f64,
    /// `||n^(-delta-s) psi(x') psi(y') cos(n y)||_s`, the separation
    /// normalizer.
    pub packet_reference: f64,
    pub series: Vec<SnapshotRecord>,
}

impl PairRecord {
    pub fn snapshot(&self, t: f64) -> Option<&SnapshotRecord> {
        self.series.iter().find(|r| (r.t - t).abs() < 1e-9)
    }

    pub fn max_error(&self, which: fn(&SnapshotRecord) -> [f64; 2]) -> f64 {
        self.series.iter().flat_map(|r| which(r)).fold(0.0, f64::max)
    }
}

/// Items (1) and (2) plus the separation normalizer, from separable fields
/// on the analysis grid.
pub fn initial_data_norms(
    params: &AnsatzParams,
    cutoffs: &CutoffFamily,
    rule: &AnsatzGridRule,
) -> Result<([f64; 2], f64, f64)> {
    let grid = rule.grid(params, cutoffs)?;
    let plus = Ansatz::new(params.with_omega(1.0), cutoffs, &grid)?;
    let minus = Ansatz::new(params.with_omega(-1.0), cutoffs, &grid)?;
    let s = params.s;
    let norms = [plus.state_norm(0.0, s)?, minus.state_norm(0.0, s)?];
    let (du, dv) = pair_difference(&plus, &minus, 0.0)?;
    let diff = velocity_norm(&du, &dv, s)?;
    let reference = plus.packet_reference().hs_norm(s)?;
    Ok((norms, diff, reference))
}

/// Runs the exact solutions from the `omega = +1` and `omega = -1` data in
/// lockstep and measures error and separation at every snapshot time.
pub fn run_pair(n: u32, cfg: &ExperimentConfig) -> Result<PairRecord> {
    cfg.validate()?;
    let params = cfg.params.with_n(n);
    params.validate()?;
    let cutoffs = CutoffFamily::new(&cfg.cutoffs)?;
    let (init_norm, init_diff, packet_reference) = initial_data_norms(&params, &cutoffs, &cfg.analysis_grid)?;

    let grid = cfg.solver_grid.grid(&params, &cutoffs)?;
    let ansatz = [
        Ansatz::with_resolution(params.with_omega(1.0), &cutoffs, &grid, 3.0)?,
        Ansatz::with_resolution(params.with_omega(-1.0), &cutoffs, &grid, 3.0)?,
    ];
    let mut solver = cfg.solver.clone();
    solver.t_end = cfg.t_end();
    solver.snapshot_times.clear();
    if !solver.monitor_indices.contains(&params.s) {
        solver.monitor_indices.push(params.s);
    }
    let mut runs = Vec::with_capacity(2);
    for a in &ansatz {
        runs.push(Run::start(&a.approximate_state(0.0, cfg.constants), &solver)?);
    }

    let indices = [params.sigma, params.s, cfg.tau];
    let mut series = Vec::new();
    for &t in &cfg.snapshot_times {
        advance_pair(&mut runs, t, cfg.threads)?;
        if runs.iter().any(|r| (r.time() - t).abs() > 1e-12) {
            break;
        }
        let states = [runs[0].state(), runs[1].state()];
        let mut errs = Vec::with_capacity(2);
        for (st, a) in states.iter().zip(&ansatz) {
            errs.push(ErrorState::new(st, &a.approximate_state(t, cfg.constants), &indices)?);
        }
        let pick = |i: usize| [errs[0].norms[i].1, errs[1].norms[i].1];
        let separation = hs_norm_state(&states[0].sub(&states[1])?, params.s)?.value;
        let (du, dv) = pair_difference(&ansatz[0], &ansatz[1], t)?;
        series.push(SnapshotRecord {
            t,
            error_sigma: pick(0),
            error_s: pick(1),
            error_tau: pick(2),
            separation,
            ansatz_separation: velocity_norm(&du, &dv, params.s)?,
        });
    }
    let [r0, r1]: [Run; 2] = runs.try_into().map_err(|_| LabError::Report("pair lost a run".into()))?;
    let (t0, t1) = (r0.trajectory, r1.trajectory);
    let complete = series.len() == cfg.snapshot_times.len()
        && t0.terminated_reason == Termination::Completed
        && t1.terminated_reason == Termination::Completed;
    Ok(PairRecord {
        n,
        complete,
        terminations: [t0.terminated_reason, t1.terminated_reason],
        messages: t0.message.into_iter().chain(t1.message).collect(),
        doubling_times: [t0.doubling_time, t1.doubling_time],
        steps: [t0.steps, t1.steps],
        solver_grid: [grid.nx(), grid.ny()],
        half_width: grid.lx(),
        init_norm,
        init_diff,
        packet_reference,
        series,
    })
}

fn advance_pair(runs: &mut [Run], t: f64, threads: usize) -> Result<()> {
    if threads > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = runs.iter_mut().map(|r| scope.spawn(move || r.advance_to(t))).collect();
            for h in handles {
                h.join().expect("solver thread panicked")?;
            }
            Ok(())
        })
    } else {
        for r in runs.iter_mut() {
            r.advance_to(t)?;
        }
        Ok(())
    }
}

/// Runs every pair of the scan. Incomplete pairs are kept and flagged.
pub fn run_scan(cfg: &ExperimentConfig, mut progress: impl FnMut(&PairRecord)) -> Result<Vec<PairRecord>> {
    let mut out = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let rec = run_pair(n, cfg)?;
        progress(&rec);
        out.push(rec);
    }
    Ok(out)
}

fn complete(records: &[PairRecord]) -> Vec<&PairRecord> {
    let mut v: Vec<_> = records.iter().filter(|r| r.complete).collect();
    v.sort_by_key(|r| r.n);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformApproximation {
    /// Fit of `max_t ||E(t)||_sigma` (over both members) against `n`.
    pub fit: ScalingFit,
    pub predicted_slope: f64,
    pub bound: f64,
    pub tau_fit: ScalingFit,
    pub s_fit: ScalingFit,
    /// Exponent of `||E||_sigma^theta ||E||_tau^(1-theta)`, the interpolation
    /// bound for `||E||_s`.
    pub derived_s_slope: f64,
    pub predicted_epsilon: f64,
    pub max_initial_error: f64,
}

pub fn check_uniform_approximation(
    records: &[PairRecord],
    params: &AnsatzParams,
    tau: f64,
) -> Result<UniformApproximation> {
    let done = complete(records);
    if done.len() < 3 {
        return Err(LabError::InsufficientData(format!("{} completed pairs, need 3", done.len())));
    }
    let pts = |which: fn(&SnapshotRecord) -> [f64; 2]| -> Vec<(f64, f64)> {
        done.iter().map(|r| (r.n as f64, r.max_error(which))).collect()
    };
    let fit = fit_scaling(&pts(|r| r.error_sigma))?;
    let tau_fit = fit_scaling(&pts(|r| r.error_tau))?;
    let s_fit = fit_scaling(&pts(|r| r.error_s))?;
    let (d, s, sigma) = (params.delta, params.s, params.sigma);
    let theta = (tau - s) / (tau - sigma);
    let predicted_slope = d - 3.0 + s - sigma;
    Ok(UniformApproximation {
        derived_s_slope: theta * fit.slope + (1.0 - theta) * tau_fit.slope,
        fit,
        predicted_slope,
        bound: predicted_slope + 0.15,
        tau_fit,
        s_fit,
        predicted_epsilon: -(tau - s) * (d - 3.0 + 2.0 * s - 2.0 * sigma) / (tau - sigma),
        max_initial_error: done
            .iter()
            .filter_map(|r| r.snapshot(0.0))
            .flat_map(|r| r.error_sigma)
            .fold(0.0, f64::max),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub n: u32,
    pub t: f64,
    pub separation: f64,
    pub ratio: f64,
    pub ansatz_ratio: f64,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationTable {
    pub rows: Vec<SeparationRow>,
    pub n_max: u32,
    /// Limiting separation constant: `2 ||n^(-delta-s) psi psi cos(ny)||_s`
    /// at the largest completed `n`.
    pub limit_constant: f64,
    /// `min_t separation / (0.5 limit_constant |sin t|)` at `n_max`.
    pub lower_bound_margin: f64,
    /// `|ratio - 2 sin 1| / (2 sin 1)` at `n_max`, if `t = 1` was measured.
    pub final_relative_error: Option<f64>,
    pub monotone: bool,
}

pub fn check_separation(records: &[PairRecord], times: &[f64]) -> Result<SeparationTable> {
    if !times.iter().any(|t| t.sin() != 0.0) {
        return Err(LabError::InsufficientData("no separation time with sin t != 0".into()));
    }
    let done = complete(records);
    let last = *done.last().ok_or_else(|| LabError::InsufficientData("no completed pairs".into()))?;
    let mut rows = Vec::new();
    for r in &done {
        for &t in times {
            let snap = r
                .snapshot(t)
                .ok_or_else(|| LabError::InsufficientData(format!("n = {}: no snapshot at t = {t}", r.n)))?;
            rows.push(SeparationRow {
                n: r.n,
                t,
                separation: snap.separation,
                ratio: snap.separation / r.packet_reference,
                ansatz_ratio: snap.ansatz_separation / r.packet_reference,
                target: 2.0 * t.sin().abs(),
            });
        }
    }
    let limit_constant = 2.0 * last.packet_reference;
    let lower_bound_margin = rows
        .iter()
        .filter(|r| r.n == last.n && r.t.sin() != 0.0)
        .map(|r| r.separation / (0.5 * limit_constant * r.t.sin().abs()))
        .fold(f64::INFINITY, f64::min);
    let final_relative_error = rows
        .iter()
        .find(|r| r.n == last.n && (r.t - 1.0).abs() < 1e-12)
        .map(|r| (r.ratio - r.target).abs() / r.target);
    let monotone = times.iter().all(|&t| {
        let dev: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| (r.ratio - r.target).abs()).collect();
        dev.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9))
    });
    Ok(SeparationTable { rows, n_max: last.n, limit_constant, lower_bound_margin, final_relative_error, monotone })
}

/// Growth diagnostic `d/dt ||E||_sigma <= a ||E||_sigma + b` from the
/// snapshot series of one pair (larger of the two members at each time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallDiagnostic {
    pub n: u32,
    pub times: Vec<f64>,
    pub error: Vec<f64>,
    pub derivative: Vec<f64>,
    /// Forward-difference slope at `t = 0`, where the first term vanishes.
    pub b: f64,
    /// Smallest `a` making the bound hold at every snapshot given `b`.
    pub a: f64,
    pub predicted_a_scale: f64,
    pub predicted_b_scale: f64,
}

pub fn gronwall_diagnostic(record: &PairRecord, params: &AnsatzParams) -> Result<GronwallDiagnostic> {
    if record.series.len() < 10 {
        return Err(LabError::InsufficientData(format!(
            "n = {}: {} snapshots, need 10",
            record.n,
            record.series.len()
        )));
    }
    let times: Vec<f64> = record.series.iter().map(|r| r.t).collect();
    let error: Vec<f64> = record.series.iter().map(|r| r.error_sigma[0].max(r.error_sigma[1])).collect();
    let m = times.len();
    let derivative: Vec<f64> = (0..m)
        .map(|k| {
            let (i, j) = if k == 0 { (0, 1) } else if k == m - 1 { (m - 2, m - 1) } else { (k - 1, k + 1) };
            (error[j] - error[i]) / (times[j] - times[i])
        })
        .collect();
    let b = derivative[0].max(0.0);
    let a = (1..m)
        .filter(|&k| error[k] > 0.0)
        .map(|k| ((derivative[k] - b) / error[k]).max(0.0))
        .fold(0.0, f64::max);
    let nf = record.n as f64;
    Ok(GronwallDiagnostic {
        n: record.n,
        times,
        error,
        derivative,
        b,
        a,
        predicted_a_scale: nf.powf(params.sigma + 1.0 - params.s),
        predicted_b_scale: nf.powf(params.delta - 2.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    /// `||U^{1,n}(0)||_s` against `n` for `n >= 32`.
    pub init_norm: Option<ScalingFit>,
    pub init_diff: Option<ScalingFit>,
    pub uniform: Option<UniformApproximation>,
    pub separation: Option<SeparationTable>,
    pub gronwall: Vec<GronwallDiagnostic>,
    pub gronwall_b: Option<ScalingFit>,
    pub packet: Option<ScalingFit>,
    pub residual: Option<ScalingFit>,
}

pub fn compute_fits(records: &[PairRecord], cfg: &ExperimentConfig) -> Fits {
    let mut sorted: Vec<&PairRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.n);
    let init_norm = fit_scaling(
        &sorted.iter().filter(|r| r.n >= 32).map(|r| (r.n as f64, r.init_norm[0])).collect::<Vec<_>>(),
    )
    .ok();
    let init_diff = fit_scaling(&sorted.iter().map(|r| (r.n as f64, r.init_diff)).collect::<Vec<_>>()).ok();
    let gronwall: Vec<GronwallDiagnostic> = complete(records)
        .into_iter()
        .filter_map(|r| gronwall_diagnostic(r, &cfg.params).ok())
        .collect();
    let gronwall_b = fit_scaling(&gronwall.iter().map(|g| (g.n as f64, g.b)).collect::<Vec<_>>()).ok();
    Fits {
        init_norm,
        init_diff,
        uniform: check_uniform_approximation(records, &cfg.params, cfg.tau).ok(),
        separation: check_separation(records, &cfg.separation_times).ok(),
        gronwall,
        gronwall_b,
        packet: None,
        residual: None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub item: String,
    pub passed: bool,
    pub detail: String,
}

/// Verdicts from fitted numbers only.
pub fn compute_verdicts(fits: &Fits, params: &AnsatzParams) -> Vec<Verdict> {
    let mut out = Vec::new();
    let mut push = |item: &str, passed: bool, detail: String| {
        out.push(Verdict { item: item.into(), passed, detail })
    };
    let missing = "not computed".to_string();
    match &fits.init_norm {
        Some(f) => push("initial_boundedness", f.slope.abs() <= 0.05, format!("slope {:.4}, need |slope| <= 0.05", f.slope)),
        None => push("initial_boundedness", false, missing.clone()),
    }
    match &fits.init_diff {
        Some(f) => {
            let target = params.delta - 1.0;
            push(
                "initial_convergence",
                (f.slope - target).abs() <= 0.05,
                format!("slope {:.4}, target {target:.2} +- 0.05", f.slope),
            )
        }
        None => push("initial_convergence", false, missing.clone()),
    }
    match &fits.uniform {
        Some(u) => push(
            "uniform_approximation",
            u.fit.slope <= u.bound && u.derived_s_slope < 0.0,
            format!(
                "sigma slope {:.4} (bound {:.2}); derived s slope {:.4} (need < 0)",
                u.fit.slope, u.bound, u.derived_s_slope
            ),
        ),
        None => push("uniform_approximation", false, missing.clone()),
    }
    match &fits.separation {
        Some(s) => {
            let within = s.final_relative_error.map(|e| e <= 0.15).unwrap_or(false);
            push(
                "separation",
                s.lower_bound_margin >= 1.0 && within && s.monotone,
                format!(
                    "lower-bound margin {:.4} (need >= 1); ratio error at t=1, n={} {:?} (need <= 0.15); monotone {}",
                    s.lower_bound_margin, s.n_max, s.final_relative_error, s.monotone
                ),
            )
        }
        None => push("separation", false, missing),
    }
    if let Some(f) = &fits.packet {
        let target = params.sigma + params.delta / 2.0;
        push("packet_law", (f.slope - target).abs() <= 0.05, format!("slope {:.4}, target {target:.4}", f.slope));
    }
    if let Some(f) = &fits.residual {
        let bound = params.delta - 2.0 + 0.1;
        push("residual_scaling", f.slope <= bound, format!("slope {:.4}, bound {bound:.2}", f.slope));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    pub scope: String,
    pub pairs: Vec<PairRecord>,
    pub fits: Fits,
    pub verdicts: Vec<Verdict>,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig, pairs: Vec<PairRecord>, packet: Option<ScalingFit>, residual: Option<ScalingFit>) -> Self {
        let mut fits = compute_fits(&pairs, cfg);
        fits.packet = packet;
        fits.residual = residual;
        let verdicts = compute_verdicts(&fits, &cfg.params);
        Self {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scope: SCOPE.to_string(),
            pairs,
            fits,
            verdicts,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("config {}\nscope: {}\n\n", self.config_hash, self.scope);
        s.push_str("    n  complete  ||U(0)||_s   init diff    max ||E||_sigma  sep(t=1)/ref\n");
        for p in &self.pairs {
            let sep = p.snapshot(1.0).map(|r| r.separation / p.packet_reference);
            s.push_str(&format!(
                "{:5}  {:8}  {:.5e}  {:.5e}  {:.5e}      {}\n",
                p.n,
                p.complete,
                p.init_norm[0],
                p.init_diff,
                p.max_error(|r| r.error_sigma),
                sep.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
            ));
        }
        s.push('\n');
        for v in &self.verdicts {
            s.push_str(&format!("[{}] {}: {}\n", if v.passed { "PASS" } else { "FAIL" }, v.item, v.detail));
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
struct InitialRow {
    n: u32,
    complete: bool,
    init_norm_plus: f64,
    init_norm_minus: f64,
    init_diff: f64,
    packet_reference: f64,
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    n: u32,
    t: f64,
    error_sigma_plus: f64,
    error_sigma_minus: f64,
    error_s_plus: f64,
    error_s_minus: f64,
    error_tau_plus: f64,
    error_tau_minus: f64,
    separation: f64,
    ansatz_separation: f64,
}

/// Writes `report.json`, `summary.txt`, `initial.csv` and `series.csv` into
/// `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<PathBuf> {
    if report.pairs.is_empty() {
        return Err(LabError::InsufficientData("empty run set".into()));
    }
    fs::create_dir_all(dir)?;
    let path = dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("summary.txt"), report.summary())?;
    let mut w = csv::Writer::from_path(dir.join("initial.csv"))?;
    for p in &report.pairs {
        w.serialize(InitialRow {
            n: p.n,
            complete: p.complete,
            init_norm_plus: p.init_norm[0],
            init_norm_minus: p.init_norm[1],
            init_diff: p.init_diff,
            packet_reference: p.packet_reference,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("series.csv"))?;
    for p in &report.pairs {
        for r in &p.series {
            w.serialize(SeriesRow {
                n: p.n,
                t: r.t,
                error_sigma_plus: r.error_sigma[0],
                error_sigma_minus: r.error_sigma[1],
                error_s_plus: r.error_s[0],
                error_s_minus: r.error_s[1],
                error_tau_plus: r.error_tau[0],
                error_tau_minus: r.error_tau[1],
                separation: r.separation,
                ansatz_separation: r.ansatz_separation,
            })?;
        }
    }
    w.flush()?;
    Ok(path)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Rebuilds pair records from the companion CSVs. Solver bookkeeping that
/// the CSVs do not carry is left at neutral values.
pub fn records_from_csv(dir: &Path) -> Result<Vec<PairRecord>> {
    let mut out: Vec<PairRecord> = Vec::new();
    for row in csv::Reader::from_path(dir.join("initial.csv"))?.deserialize() {
        let r: InitialRow = row?;
        let term = if r.complete { Termination::Completed } else { Termination::Guard };
        out.push(PairRecord {
            n: r.n,
            complete: r.complete,
            terminations: [term; 2],
            messages: Vec::new(),
            doubling_times: [None; 2],
            steps: [0; 2],
            solver_grid: [0; 2],
            half_width: 0.0,
            init_norm: [r.init_norm_plus, r.init_norm_minus],
            init_diff: r.init_diff,
            packet_reference: r.packet_reference,
            series: Vec::new(),
        });
    }
    for row in csv::Reader::from_path(dir.join("series.csv"))?.deserialize() {
        let r: SeriesRow = row?;
        let rec = out
            .iter_mut()
            .find(|p| p.n == r.n)
            .ok_or_else(|| LabError::Report(format!("series row for unknown n = {}", r.n)))?;
        rec.series.push(SnapshotRecord {
            t: r.t,
            error_sigma: [r.error_sigma_plus, r.error_sigma_minus],
            error_s: [r.error_s_plus, r.error_s_minus],
            error_tau: [r.error_tau_plus, r.error_tau_minus],
            separation: r.separation,
            ansatz_separation: r.ansatz_separation,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: u32, c_err: f64, slope: f64, complete: bool) -> PairRecord {
        let nf = n as f64;
        let reference = 0.3 * nf.powf(0.0);
        PairRecord {
            n,
            complete,
            terminations: [Termination::Completed; 2],
            messages: vec![],
            doubling_times: [None; 2],
            steps: [10; 2],
            solver_grid: [64, 64],
            half_width: 10.0,
            init_norm: [1.0, 1.0],
            init_diff: 2.0 * nf.powf(-0.75),
            packet_reference: reference,
            series: (0..=16)
                .map(|k| {
                    let t = k as f64 / 16.0;
                    let e = c_err * t * nf.powf(slope);
                    SnapshotRecord {
                        t,
                        error_sigma: [e, 0.5 * e],
                        error_s: [e * nf.powf(0.5), e],
                        error_tau: [e * nf, e],
                        separation: reference * (2.0 * t.sin() + 1.0 / nf),
                        ansatz_separation: reference * 2.0 * t.sin(),
                    }
                })
                .collect(),
        }
    }

    fn synthetic_scan() -> Vec<PairRecord> {
        [16, 32, 64, 128].iter().map(|&n| synthetic(n, 0.1, -1.8, true)).collect()
    }

    #[test]
    fn solver_grid_sizes() {
        let c = CutoffFamily::default();
        let rule = SolverGridRule::default();
        let sizes: Vec<[usize; 2]> = [16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let g = rule.grid(&AnsatzParams::default().with_n(n), &c).unwrap();
                [g.nx(), g.ny()]
            })
            .collect();
        assert_eq!(sizes, vec![[512, 512], [512, 1024], [512, 2048], [512, 4096]]);
        let p = AnsatzParams::default().with_n(16);
        let g = rule.grid(&p, &c).unwrap();
        let w = p.envelope_width();
        assert!(2.0 / 3.0 * g.y_axis().k_max() >= p.nf() + rule.band_y / w);
        assert!(2.0 / 3.0 * g.x_axis().k_max() >= rule.band_x / w);
        assert!(SolverGridRule { refine: 3, ..rule }.grid(&p, &c).is_err());
    }

    #[test]
    fn error_state_norms() {
        let g = Grid2D::new(32, 32, 3.0, 3.0).unwrap();
        let c = GasConstants::default();
        let mut a = StateVector::zeros(&g, c);
        a.u = SpectralField::from_fn(&g, |x, y| (x + y).cos());
        let b = StateVector::zeros(&g, c);
        let e = ErrorState::new(&a, &b, &[0.0, 1.0]).unwrap();
        let direct = hs_norm(&a.u, 1.0).unwrap().value;
        assert!((e.norm(1.0).unwrap() - direct).abs() < 1e-14);
        assert_eq!(ErrorState::new(&a, &a, &[1.0]).unwrap().norm(1.0), Some(0.0));
        assert!(e.norm(2.0).is_none());
    }

    #[test]
    fn uniform_approximation_from_records() {
        let p = AnsatzParams::default();
        let u = check_uniform_approximation(&synthetic_scan(), &p, 3.0).unwrap();
        assert!((u.fit.slope + 1.8).abs() < 1e-12);
        assert!((u.predicted_slope + 1.7).abs() < 1e-12);
        assert!((u.bound + 1.55).abs() < 1e-12);
        let theta = 0.5 / 1.55;
        assert!((u.derived_s_slope - (theta * -1.8 + (1.0 - theta) * -0.8)).abs() < 1e-12);
        let eps = -(0.5) * (0.25 - 3.0 + 5.0 - 2.9) / 1.55;
        assert!((u.predicted_epsilon - eps).abs() < 1e-12 && eps > 0.0);
        assert_eq!(u.max_initial_error, 0.0);
        let mut two = synthetic_scan();
        two[0].complete = false;
        two[1].complete = false;
        assert!(matches!(check_uniform_approximation(&two, &p, 3.0), Err(LabError::InsufficientData(_))));
    }

    #[test]
    fn separation_table_from_records() {
        let sep = check_separation(&synthetic_scan(), &[0.25, 0.5, 1.0]).unwrap();
        assert_eq!(sep.n_max, 128);
        assert!((sep.limit_constant - 0.6).abs() < 1e-12);
        assert!(sep.monotone);
        let e = sep.final_relative_error.unwrap();
        assert!((e - (1.0 / 128.0) / (2.0 * 1f64.sin())).abs() < 1e-12);
        assert!(sep.lower_bound_margin > 1.9);
        let row = sep.rows.iter().find(|r| r.n == 16 && r.t == 0.5).unwrap();
        assert!((row.ansatz_ratio - 2.0 * 0.5f64.sin()).abs() < 1e-12);
        assert!(check_separation(&synthetic_scan(), &[0.3]).is_err());
    }

    #[test]
    fn gronwall_on_linear_growth() {
        let p = AnsatzParams::default();
        let rec = synthetic(32, 0.1, -1.8, true);
        let g = gronwall_diagnostic(&rec, &p).unwrap();
        let slope = 0.1 * 32f64.powf(-1.8);
        assert!((g.b - slope).abs() < 1e-12 * slope.max(1e-300) + 1e-18);
        assert!(g.a < 1e-9);
        let mut short = rec.clone();
        short.series.truncate(5);
        assert!(gronwall_diagnostic(&short, &p).is_err());
    }

    #[test]
    fn report_round_trip_and_verdicts() {
        let cfg = ExperimentConfig::default();
        let report = ExperimentReport::new(&cfg, synthetic_scan(), None, None);
        let dir = std::env::temp_dir().join(format!("hilo-report-{}", std::process::id()));
        let path = emit_report(&report, &dir).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, report);
        assert_eq!(compute_verdicts(&back.fits, &back.config.params), back.verdicts);
        let rebuilt = records_from_csv(&dir).unwrap();
        let refit = compute_fits(&rebuilt, &cfg);
        assert_eq!(refit.init_diff, report.fits.init_diff);
        assert_eq!(refit.uniform, report.fits.uniform);
        assert_eq!(refit.separation, report.fits.separation);
        fs::remove_dir_all(&dir).ok();
        let item = |name: &str| report.verdicts.iter().find(|v| v.item == name).unwrap().passed;
        assert!(item("initial_boundedness"));
        assert!(item("initial_convergence"));
        assert!(item("separation"));
        // Synthetic derived s slope is -0.0116, so the uniform item passes.
        assert!(item("uniform_approximation"));
    }

    #[test]
    fn empty_run_set_is_an_error() {
        let cfg = ExperimentConfig::default();
        let report = ExperimentReport::new(&cfg, vec![], None, None);
        assert!(!report.all_passed());
        let dir = std::env::temp_dir().join("hilo-empty-report");
        assert!(emit_report(&report, &dir).is_err());
    }

    #[test]
    fn config_validation_and_hash() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.hash(), ExperimentConfig::default().hash());
        assert_eq!(cfg.hash().len(), 64);
        let other = ExperimentConfig { tau: 2.9, ..cfg.clone() };
        assert_ne!(other.hash(), cfg.hash());
        assert!(ExperimentConfig { tau: 2.5, ..cfg.clone() }.validate().is_err());
        assert!(ExperimentConfig { separation_times: vec![0.3], ..cfg.clone() }.validate().is_err());
        assert!(ExperimentConfig { snapshot_times: vec![0.1, 1.0], ..cfg }.validate().is_err());
    }
}
