//! Command implementations. Each writes into its own run directory and
//! returns the verdicts it computed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hilo::ansatz::{pair_difference, velocity_norm, Ansatz, AnsatzGridRule};
use hilo::cutoffs::CutoffFamily;
use hilo::experiment::{
    compute_fits, compute_verdicts, emit_report, read_report, records_from_csv, run_scan, ExperimentConfig,
    ExperimentReport, Fits, SolverGridRule, Verdict,
};
use hilo::residual::{
    crucial_cancellation_for, expected_term_slopes, residual_norm_scan, ResidualBreakdown, ResidualScan,
};
use hilo::sobolev::{inequality_lab, packet_norm_check, InequalityReport, ScalingFit};
use hilo::solver::{integrate, write_norm_series, write_snapshot, SolverConfig, Termination};
use rand::SeedableRng;
use serde::Serialize;

use crate::config::{Command, RunConfig};

/// Result of one dispatched command.
#[derive(Debug, Serialize)]
pub struct Outcome {
    pub command: Command,
    pub dir: PathBuf,
    pub verdicts: Vec<Verdict>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.verdicts.iter().filter(|v| !v.passed).map(|v| v.item.as_str()).collect()
    }
}

pub const PACKET_NS: [f64; 5] = [16.0, 32.0, 64.0, 128.0, 256.0];
pub const RESIDUAL_TIMES: [f64; 3] = [0.0, 0.5, 1.0];

fn verdict(item: &str, passed: bool, detail: String) -> Verdict {
    Verdict { item: item.into(), passed, detail }
}

/// Creates `<out>/<command>/<timestamp>/` and points `<out>/<command>/latest`
/// at it.
pub fn make_run_dir(root: &Path, command: Command) -> anyhow::Result<PathBuf> {
    let base = root.join(command.name());
    fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let dir = base.join(&stamp);
    fs::create_dir_all(&dir)?;
    fs::write(base.join("latest"), format!("{stamp}\n"))?;
    Ok(dir)
}

/// Resolves `<root>/<command>/latest` to a directory.
pub fn latest_dir(root: &Path, command: Command) -> anyhow::Result<PathBuf> {
    let base = root.join(command.name());
    let stamp = fs::read_to_string(base.join("latest"))
        .with_context(|| format!("no previous {} run under {}", command.name(), root.display()))?;
    Ok(base.join(stamp.trim()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn experiment_config(cfg: &RunConfig) -> ExperimentConfig {
    let base = ExperimentConfig::default();
    let mut solver: SolverConfig = cfg.solver.clone();
    solver.snapshot_times.clear();
    ExperimentConfig {
        params: cfg.params.with_omega(1.0),
        constants: cfg.constants,
        n_list: cfg.n_list.clone(),
        solver,
        solver_grid: SolverGridRule { band_x: cfg.band_x, band_y: cfg.band_y, ..base.solver_grid },
        snapshot_times: cfg.snapshot_times(),
        separation_times: base.separation_times.into_iter().filter(|t| *t <= cfg.solver.t_end).collect(),
        tau: cfg.tau,
        threads: cfg.threads,
        ..base
    }
}

pub fn dispatch(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<Outcome> {
    let dir = make_run_dir(&cfg.output_dir, cfg.command)?;
    write_json(&dir.join("config.json"), cfg)?;
    let verdicts = match cfg.command {
        Command::Norms => norms(cfg, &dir)?,
        Command::Ansatz => ansatz(cfg, &dir)?,
        Command::Residual => residual(cfg, &dir)?.1,
        Command::Evolve => evolve(cfg, &dir, log)?,
        Command::Demo => demo(cfg, &dir, log)?,
        Command::Fit => fit(cfg, &dir)?,
    };
    write_json(&dir.join("verdicts.json"), &verdicts)?;
    Ok(Outcome { command: cfg.command, dir, verdicts })
}

pub fn norms(cfg: &RunConfig, dir: &Path) -> anyhow::Result<Vec<Verdict>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let lab: InequalityReport = inequality_lab(&mut rng, cfg.trials, cfg.lab_grid, cfg.params.s)?;
    let psi = CutoffFamily::default().psi;
    let packet = packet_norm_check(&psi, cfg.params.sigma, cfg.params.delta, 0.0, &PACKET_NS)?;
    write_json(&dir.join("inequalities.json"), &lab)?;
    write_json(&dir.join("packet.json"), &packet)?;
    let mut w = csv::Writer::from_path(dir.join("packet.csv"))?;
    w.write_record(["n", "modulated_norm", "unmodulated_norm", "unmodulated_bound"])?;
    for ((n, m), (_, u, b)) in packet.modulated.iter().zip(&packet.unmodulated) {
        w.write_record([n.to_string(), m.to_string(), u.to_string(), b.to_string()])?;
    }
    w.flush()?;
    let target = cfg.params.sigma + cfg.params.delta / 2.0;
    let kp = InequalityReport::relative_change(lab.kato_ponce);
    let rc = InequalityReport::relative_change(lab.reciprocal);
    Ok(vec![
        verdict(
            "interpolation",
            lab.max_interpolation_ratio <= 1.0 + 1e-10 && (lab.single_mode_interpolation_ratio - 1.0).abs() <= 1e-10,
            format!(
                "max ratio {:.12}, single mode {:.12}",
                lab.max_interpolation_ratio, lab.single_mode_interpolation_ratio
            ),
        ),
        verdict("monotonicity", lab.monotonicity_violations == 0, format!("{} violations", lab.monotonicity_violations)),
        verdict("kato_ponce_stability", kp <= 0.1, format!("constants {:?}, change {kp:.4}", lab.kato_ponce)),
        verdict("reciprocal_stability", rc <= 0.1, format!("constants {:?}, change {rc:.4}", lab.reciprocal)),
        verdict(
            "packet_law",
            (packet.fit.slope - target).abs() <= 0.05,
            format!("slope {:.4}, target {target:.4}", packet.fit.slope),
        ),
        verdict("packet_inequality", packet.inequality_holds, format!("{:?}", packet.unmodulated)),
    ])
}

#[derive(Serialize)]
struct AnsatzRow {
    n: u32,
    init_norm_plus: f64,
    init_norm_minus: f64,
    init_diff: f64,
    packet_reference: f64,
    max_divergence_ratio: f64,
}

pub fn ansatz(cfg: &RunConfig, dir: &Path) -> anyhow::Result<Vec<Verdict>> {
    let cutoffs = CutoffFamily::default();
    let rule = AnsatzGridRule::default();
    let mut w = csv::Writer::from_path(dir.join("ansatz.csv"))?;
    let mut max_div = 0.0f64;
    let mut records = Vec::new();
    for &n in &cfg.n_list {
        let p = cfg.params.with_n(n);
        let grid = rule.grid(&p, &cutoffs)?;
        let plus = Ansatz::new(p.with_omega(1.0), &cutoffs, &grid)?;
        let minus = Ansatz::new(p.with_omega(-1.0), &cutoffs, &grid)?;
        let mut div = 0.0f64;
        for t in [0.0, 0.5, 1.0] {
            div = div.max(plus.divergence_ratio(t)?).max(minus.divergence_ratio(t)?);
        }
        max_div = max_div.max(div);
        let (du, dv) = pair_difference(&plus, &minus, 0.0)?;
        let row = AnsatzRow {
            n,
            init_norm_plus: plus.state_norm(0.0, p.s)?,
            init_norm_minus: minus.state_norm(0.0, p.s)?,
            init_diff: velocity_norm(&du, &dv, p.s)?,
            packet_reference: plus.packet_reference().hs_norm(p.s)?,
            max_divergence_ratio: div,
        };
        records.push(hilo::experiment::PairRecord {
            n,
            complete: false,
            terminations: [Termination::Completed; 2],
            messages: vec![],
            doubling_times: [None; 2],
            steps: [0; 2],
            solver_grid: [0; 2],
            half_width: grid.lx(),
            init_norm: [row.init_norm_plus, row.init_norm_minus],
            init_diff: row.init_diff,
            packet_reference: row.packet_reference,
            series: vec![],
        });
        w.serialize(row)?;
    }
    w.flush()?;
    let fits = compute_fits(&records, &experiment_config(cfg));
    let mut out = vec![verdict("divergence_free", max_div < 1e-9, format!("max ratio {max_div:.3e}"))];
    out.extend(
        compute_verdicts(&fits, &cfg.params)
            .into_iter()
            .filter(|v| v.item == "initial_boundedness" || v.item == "initial_convergence"),
    );
    Ok(out)
}

pub fn residual(cfg: &RunConfig, dir: &Path) -> anyhow::Result<(ResidualScan, Vec<Verdict>)> {
    let cutoffs = CutoffFamily::default();
    let rule = AnsatzGridRule::default();
    let p = cfg.params;
    let scan = residual_norm_scan(&cfg.n_list, &p, &cutoffs, &rule, p.sigma, &RESIDUAL_TIMES)?;
    scan.write_csv(&dir.join("residual.csv"))?;
    let (mut vanish, mut cancel) = (0.0f64, 0.0f64);
    for &n in &cfg.n_list {
        let pn = p.with_n(n);
        let grid = rule.grid(&pn, &cutoffs)?;
        for omega in [1.0, -1.0] {
            let a = Ansatz::new(pn.with_omega(omega), &cutoffs, &grid)?;
            for t in RESIDUAL_TIMES {
                let b = ResidualBreakdown::compute(&a, t)?;
                vanish = vanish.max(b.vanishing_max() / b.u2_scale);
                cancel = cancel.max(crucial_cancellation_for(&a, t)?.max_rel_err);
            }
        }
    }
    let mut out = vec![
        verdict("vanishing_terms", vanish < 1e-13, format!("max relative {vanish:.3e}")),
        verdict("cancellation_identity", cancel < 1e-10, format!("max relative {cancel:.3e}")),
    ];
    let bound = p.delta - 2.0 + 0.1;
    out.push(verdict(
        "residual_total_slope",
        scan.total_fit.slope <= bound,
        format!("slope {:.4}, bound {bound:.2}", scan.total_fit.slope),
    ));
    for (label, target) in expected_term_slopes(&p, p.sigma) {
        let fit = scan.fit(&label).with_context(|| format!("missing fit {label}"))?;
        let (passed, detail) = if label.ends_with("[0+6]") {
            (fit.slope <= target + 0.05, format!("slope {:.4}, bound {:.4}", fit.slope, target + 0.05))
        } else {
            ((fit.slope - target).abs() <= 0.1, format!("slope {:.4}, target {target:.4} +- 0.1", fit.slope))
        };
        out.push(verdict(&format!("term_slope {label}"), passed, detail));
    }
    Ok((scan, out))
}

pub fn evolve(cfg: &RunConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> anyhow::Result<Vec<Verdict>> {
    let p = cfg.params;
    let cutoffs = CutoffFamily::default();
    let rule = SolverGridRule { band_x: cfg.band_x, band_y: cfg.band_y, ..SolverGridRule::default() };
    let grid = rule.grid(&p, &cutoffs)?;
    log(&format!("n = {}, omega = {}, grid {} x {}", p.n, p.omega, grid.nx(), grid.ny()));
    let a = Ansatz::with_resolution(p, &cutoffs, &grid, 3.0)?;
    let u0 = a.approximate_state(0.0, cfg.constants);
    let mut solver = cfg.solver.clone();
    solver.snapshot_times = vec![solver.t_end];
    let tr = integrate(&u0, &solver)?;
    write_norm_series(&dir.join("norm_series.csv"), &tr.norm_series)?;
    if let Some((t, st)) = tr.snapshots.last() {
        write_snapshot(&dir.join("final.bin"), *t, st)?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        termination: Termination,
        message: &'a Option<String>,
        t_final: f64,
        steps: usize,
        doubling_time: Option<f64>,
    }
    write_json(
        &dir.join("trajectory.json"),
        &Summary {
            termination: tr.terminated_reason,
            message: &tr.message,
            t_final: tr.t_final,
            steps: tr.steps,
            doubling_time: tr.doubling_time,
        },
    )?;
    Ok(vec![
        verdict(
            "completed",
            tr.terminated_reason == Termination::Completed && tr.t_final >= solver.t_end - 1e-12,
            format!("{:?} at t = {} after {} steps {:?}", tr.terminated_reason, tr.t_final, tr.steps, tr.message),
        ),
        verdict("no_doubling", tr.doubling_time.is_none(), format!("doubling time {:?}", tr.doubling_time)),
    ])
}

pub fn demo(cfg: &RunConfig, dir: &Path, log: &mut dyn FnMut(&str)) -> anyhow::Result<Vec<Verdict>> {
    let ecfg = experiment_config(cfg);
    let psi = CutoffFamily::default().psi;
    let packet = packet_norm_check(&psi, cfg.params.sigma, cfg.params.delta, 0.0, &PACKET_NS)?;
    let residual = if cfg.n_list.len() >= 4 {
        let (scan, _) = residual(cfg, dir)?;
        Some(scan.total_fit)
    } else {
        log("residual fit skipped: fewer than 4 n values");
        None
    };
    let pairs = run_scan(&ecfg, |r| {
        log(&format!(
            "n = {:4}: complete {}, steps {:?}, max ||E||_sigma {:.4e}",
            r.n,
            r.complete,
            r.steps,
            r.max_error(|s| s.error_sigma)
        ))
    })?;
    let report = ExperimentReport::new(&ecfg, pairs, Some(packet.fit), residual);
    emit_report(&report, dir)?;
    log(&report.summary());
    Ok(report.verdicts)
}

#[derive(Serialize)]
struct Refit {
    source: PathBuf,
    fits: Fits,
    residual_total: Option<ScalingFit>,
}

pub fn fit(cfg: &RunConfig, dir: &Path) -> anyhow::Result<Vec<Verdict>> {
    let source = match &cfg.from {
        Some(p) => p.clone(),
        None => latest_dir(&cfg.output_dir, Command::Demo)?,
    };
    if !source.join("initial.csv").exists() {
        bail!("{} holds no initial.csv", source.display());
    }
    let report_path = source.join("report.json");
    let (ecfg, packet) = if report_path.exists() {
        let r = read_report(&report_path)?;
        (r.config, r.fits.packet)
    } else {
        (experiment_config(cfg), None)
    };
    let records = records_from_csv(&source)?;
    let residual_total = if source.join("residual.csv").exists() {
        Some(ResidualScan::from_rows(ResidualScan::read_rows(&source.join("residual.csv"))?)?.total_fit)
    } else {
        None
    };
    let mut fits = compute_fits(&records, &ecfg);
    fits.packet = packet;
    fits.residual = residual_total.clone();
    let verdicts = compute_verdicts(&fits, &ecfg.params);
    write_json(&dir.join("fits.json"), &Refit { source, fits, residual_total })?;
    Ok(verdicts)
}
