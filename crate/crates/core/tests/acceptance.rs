//! Acceptance suite: one pass/fail line per criterion, followed by the
//! measured numbers. Exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use hilo::ansatz::{Ansatz, AnsatzGridRule, AnsatzParams};
use hilo::cutoffs::CutoffFamily;
use hilo::experiment::{
    compute_fits, compute_verdicts, initial_data_norms, run_scan, ExperimentConfig, PairRecord, SolverGridRule,
};
use hilo::residual::{crucial_cancellation_for, expected_term_slopes, residual_norm_scan, ResidualBreakdown};
use hilo::sobolev::{fit_scaling, inequality_lab, packet_norm_check, InequalityReport};
use hilo::solver::{integrate, EulerSolver, ManufacturedWaves, SolverConfig, Termination};
use hilo::spectral::{Grid2D, SpectralField};
use hilo::state::{GasConstants, GuardMargins, StateVector};
use rand::SeedableRng;

const N_LIST: [u32; 4] = [16, 32, 64, 128];
const TIMES: [f64; 3] = [0.0, 0.5, 1.0];
const PACKET_NS: [f64; 5] = [16.0, 32.0, 64.0, 128.0, 256.0];

type Outcome = hilo::Result<(bool, Vec<String>)>;

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, check: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let (passed, lines) = match check() {
            Ok(r) => r,
            Err(e) => (false, vec![format!("error: {e}")]),
        };
        if !passed {
            self.failed += 1;
        }
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name} ({:.1}s)", start.elapsed().as_secs_f64());
        for l in lines {
            println!("        {l}");
        }
    }
}

fn ansatz_pair(n: u32) -> hilo::Result<[Ansatz; 2]> {
    let p = AnsatzParams::default().with_n(n);
    let c = CutoffFamily::default();
    let g = AnsatzGridRule::default().grid(&p, &c)?;
    Ok([Ansatz::new(p.with_omega(1.0), &c, &g)?, Ansatz::new(p.with_omega(-1.0), &c, &g)?])
}

fn divergence_free() -> Outcome {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for n in N_LIST {
        let mut m = 0.0f64;
        for a in ansatz_pair(n)? {
            for t in TIMES {
                m = m.max(a.divergence_ratio(t)?);
            }
        }
        lines.push(format!("n = {n:>3}: max |u_x + v_y| / |u| = {m:.3e}"));
        worst = worst.max(m);
    }
    lines.push(format!("need < 1e-9, worst {worst:.3e}"));
    Ok((worst < 1e-9, lines))
}

fn vanishing_terms() -> Outcome {
    let mut worst = 0.0f64;
    for n in N_LIST {
        for a in ansatz_pair(n)? {
            for t in TIMES {
                let b = ResidualBreakdown::compute(&a, t)?;
                worst = worst.max(b.vanishing_max() / b.u2_scale);
            }
        }
    }
    Ok((worst < 1e-13, vec![format!("terms 2, 3, 7 of R2 and R3: max relative {worst:.3e}, need < 1e-13")]))
}

fn residual_scan() -> hilo::Result<hilo::residual::ResidualScan> {
    let p = AnsatzParams::default();
    residual_norm_scan(&N_LIST, &p, &CutoffFamily::default(), &AnsatzGridRule::default(), p.sigma, &TIMES)
}

fn crucial_cancellation(scan: &hilo::residual::ResidualScan) -> Outcome {
    let p = AnsatzParams::default();
    let mut worst = 0.0f64;
    for n in N_LIST {
        for a in ansatz_pair(n)? {
            for t in TIMES {
                worst = worst.max(crucial_cancellation_for(&a, t)?.max_rel_err);
            }
        }
    }
    let mut passed = worst < 1e-10;
    let mut lines = vec![format!("closed form: max relative error {worst:.3e}, need < 1e-10")];
    let bound = p.sigma - p.delta - p.s - 1.0 + 0.05;
    for label in ["R2[0+6]", "R3[0+6]"] {
        let slope = scan.fit(label).map(|f| f.slope).unwrap_or(f64::NAN);
        passed &= slope <= bound;
        lines.push(format!("{label}: slope {slope:.4}, need <= {bound:.4}"));
    }
    Ok((passed, lines))
}

fn residual_scaling(scan: &hilo::residual::ResidualScan) -> Outcome {
    let p = AnsatzParams::default();
    let bound = p.delta - 2.0 + 0.1;
    let mut passed = scan.total_fit.slope <= bound;
    let mut lines = vec![format!("total: slope {:.4}, need <= {bound:.2}", scan.total_fit.slope)];
    for (label, target) in expected_term_slopes(&p, p.sigma) {
        if label.ends_with("[0+6]") {
            continue;
        }
        let slope = scan.fit(&label).map(|f| f.slope).unwrap_or(f64::NAN);
        let ok = (slope - target).abs() <= 0.1;
        passed &= ok;
        lines.push(format!("{label}: slope {slope:.4}, target {target:.4} +- 0.1 {}", if ok { "ok" } else { "off" }));
    }
    Ok((passed, lines))
}

fn packet_law() -> Outcome {
    let p = AnsatzParams::default();
    let psi = CutoffFamily::default().psi;
    let check = packet_norm_check(&psi, p.sigma, p.delta, 0.0, &PACKET_NS)?;
    let target = p.sigma + p.delta / 2.0;
    let mut lines = vec![format!("slope {:.4}, target {target:.4} +- 0.05", check.fit.slope)];
    for (n, norm, bound) in &check.unmodulated {
        lines.push(format!("n = {n:>3}: unmodulated {norm:.6e} <= {bound:.6e}"));
    }
    Ok(((check.fit.slope - target).abs() <= 0.05 && check.inequality_holds, lines))
}

fn initial_data() -> Outcome {
    let p = AnsatzParams::default();
    let c = CutoffFamily::default();
    let rule = AnsatzGridRule::default();
    let mut norms = Vec::new();
    let mut diffs = Vec::new();
    let mut lines = Vec::new();
    for n in N_LIST {
        let (norm, diff, _) = initial_data_norms(&p.with_n(n), &c, &rule)?;
        lines.push(format!("n = {n:>3}: ||U(0)||_s = {:.6}, ||U+ - U-||_s = {diff:.6}", norm[0]));
        if n >= 32 {
            norms.push((n as f64, norm[0]));
        }
        diffs.push((n as f64, diff));
    }
    let fnorm = fit_scaling(&norms)?;
    let fdiff = fit_scaling(&diffs)?;
    let target = p.delta - 1.0;
    lines.push(format!("norm slope (n >= 32) {:.4}, need within [-0.05, 0.05]", fnorm.slope));
    lines.push(format!("difference slope {:.4}, need {target:.2} +- 0.05", fdiff.slope));
    Ok((fnorm.slope.abs() <= 0.05 && (fdiff.slope - target).abs() <= 0.05, lines))
}

fn inequality_lab_check() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let lab = inequality_lab(&mut rng, 100, 64, AnsatzParams::default().s)?;
    let kp = InequalityReport::relative_change(lab.kato_ponce);
    let rc = InequalityReport::relative_change(lab.reciprocal);
    let interp = lab.max_interpolation_ratio <= 1.0 + 1e-10;
    let single = (lab.single_mode_interpolation_ratio - 1.0).abs() <= 1e-10;
    let lines = vec![
        format!(
            "interpolation: max ratio {:.12} over {} fields, single mode {:.12}",
            lab.max_interpolation_ratio, lab.trials, lab.single_mode_interpolation_ratio
        ),
        format!("monotonicity violations: {}", lab.monotonicity_violations),
        format!("Kato-Ponce constants {:?}, relative change {kp:.4}", lab.kato_ponce),
        format!("reciprocal constants {:?}, relative change {rc:.4}", lab.reciprocal),
    ];
    Ok((interp && single && lab.monotonicity_violations == 0 && kp <= 0.1 && rc <= 0.1, lines))
}

fn self_convergence(cfg: &ExperimentConfig, n: u32) -> hilo::Result<(f64, Vec<String>)> {
    let p = cfg.params.with_n(n);
    let c = CutoffFamily::default();
    let checkpoints = [0.25, 0.5, 0.75, 1.0];
    let solver = SolverConfig {
        monitor_indices: vec![p.s],
        snapshot_times: checkpoints.to_vec(),
        ..cfg.solver.clone()
    };
    let mut series = Vec::new();
    let mut lines = Vec::new();
    for refine in [1, 2] {
        let grid = SolverGridRule { refine, ..cfg.solver_grid }.grid(&p, &c)?;
        let a = Ansatz::with_resolution(p, &c, &grid, 3.0)?;
        let tr = integrate(&a.approximate_state(0.0, cfg.constants), &solver)?;
        if tr.terminated_reason != Termination::Completed {
            return Err(hilo::LabError::Report(format!("refine {refine}: {:?}", tr.message)));
        }
        lines.push(format!("grid {} x {}: {} steps", grid.nx(), grid.ny(), tr.steps));
        let at = |t: f64| tr.norm_series.iter().find(|s| (s.t - t).abs() < 1e-12).map(|s| s.value);
        series.push(checkpoints.map(at));
    }
    let mut worst = 0.0f64;
    for (k, t) in checkpoints.iter().enumerate() {
        let (a, b) = match (series[0][k], series[1][k]) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(hilo::LabError::Report(format!("no norm sample at t = {t}"))),
        };
        let rel = (a - b).abs() / b;
        lines.push(format!("t = {t:.2}: ||U||_s = {b:.10}, relative change {rel:.3e}"));
        worst = worst.max(rel);
    }
    Ok((worst, lines))
}

fn solver_verification(cfg: &ExperimentConfig, pairs: &[PairRecord]) -> Outcome {
    let mut lines = Vec::new();
    let c = GasConstants::default();

    let g = Grid2D::new(32, 32, PI, PI)?;
    let errors = ManufacturedWaves::standard(0.1, c).errors(&g, 1.0, &[0.1, 0.05, 0.025])?;
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let order_ok = orders.iter().all(|o| (o - 4.0).abs() <= 0.2);
    lines.push(format!("manufactured errors {errors:?}, orders {orders:.3?}, need 4.0 +- 0.2"));

    let mut st = StateVector::zeros(&g, c);
    st.rho = SpectralField::constant(&g, 0.2);
    st.u = SpectralField::constant(&g, 0.3);
    st.v = SpectralField::constant(&g, -0.1);
    st.h = SpectralField::constant(&g, 0.05);
    let mut s = EulerSolver::new(&g, c, GuardMargins::default(), true);
    let mut next = st.clone();
    for _ in 0..10 {
        next = s.step_rk4(&next, 0.1)?;
    }
    let drift = next
        .components()
        .iter()
        .zip(st.components())
        .map(|(a, b)| a.sub(b).map(|d| d.max_abs()))
        .collect::<hilo::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let constant_ok = drift <= 1e-14;
    lines.push(format!("constant state drift after 10 steps {drift:.3e}, need <= 1e-14"));

    let (worst, conv) = self_convergence(cfg, 16)?;
    let conv_ok = worst <= 1e-6;
    lines.push(format!("self-convergence at n = 16: worst relative change {worst:.3e}, need <= 1e-6"));
    lines.extend(conv.into_iter().map(|l| format!("  {l}")));

    let trips: Vec<String> = pairs
        .iter()
        .filter(|r| r.terminations.contains(&Termination::Guard))
        .map(|r| format!("n = {}: {:?}", r.n, r.messages))
        .collect();
    lines.push(format!("guard trips in the scan: {}", trips.len()));
    lines.extend(trips.iter().map(|t| format!("  {t}")));

    Ok((order_ok && constant_ok && conv_ok && trips.is_empty(), lines))
}

fn scan_lines(pairs: &[PairRecord]) -> Vec<String> {
    pairs
        .iter()
        .map(|r| {
            format!(
                "n = {:>3}: grid {:?}, steps {:?}, complete {}, max ||E||_sigma {:.4e}, max ||E||_s {:.4e}",
                r.n,
                r.solver_grid,
                r.steps,
                r.complete,
                r.max_error(|s| s.error_sigma),
                r.max_error(|s| s.error_s)
            )
        })
        .collect()
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0 };
    suite.run(1, "divergence-free identity", divergence_free);
    suite.run(2, "exact vanishing of terms 2, 3, 7", vanishing_terms);
    let scan = residual_scan();
    let scan_err = |e: &hilo::LabError| hilo::LabError::Report(format!("residual scan: {e}"));
    suite.run(3, "crucial cancellation", || crucial_cancellation(scan.as_ref().map_err(scan_err)?));
    suite.run(4, "residual scaling", || residual_scaling(scan.as_ref().map_err(scan_err)?));
    suite.run(5, "packet norm law", packet_law);
    suite.run(6, "initial data", initial_data);
    suite.run(7, "inequality lab", inequality_lab_check);

    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let pairs = run_scan(&cfg, |r| {
        eprintln!("  scan n = {:>3} done after {:.0}s", r.n, start.elapsed().as_secs_f64())
    });
    let pairs = match pairs {
        Ok(p) => p,
        Err(e) => {
            eprintln!("scan failed: {e}");
            Vec::new()
        }
    };
    suite.run(8, "solver verification", || solver_verification(&cfg, &pairs));
    let fits = compute_fits(&pairs, &cfg);
    let verdicts = compute_verdicts(&fits, &cfg.params);
    let find = |item: &str| verdicts.iter().find(|v| v.item == item).cloned();
    suite.run(9, "uniform approximation", || {
        let v = find("uniform_approximation").expect("verdict");
        let mut lines = vec![v.detail];
        if let Some(u) = &fits.uniform {
            lines.push(format!(
                "tau slope {:.4}, s slope {:.4}, max initial error {:.3e}",
                u.tau_fit.slope, u.s_fit.slope, u.max_initial_error
            ));
        }
        lines.extend(scan_lines(&pairs));
        Ok((v.passed, lines))
    });
    suite.run(10, "separation", || {
        let v = find("separation").expect("verdict");
        let mut lines = vec![v.detail];
        if let Some(s) = &fits.separation {
            lines.push(format!("limiting constant {:.6}", s.limit_constant));
            for r in &s.rows {
                lines.push(format!(
                    "n = {:>3}, t = {:.2}: separation {:.6}, ratio {:.4}, target {:.4}",
                    r.n, r.t, r.separation, r.ratio, r.target
                ));
            }
        }
        Ok((v.passed, lines))
    });

    println!("{} of 10 criteria failed", suite.failed);
    if suite.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
