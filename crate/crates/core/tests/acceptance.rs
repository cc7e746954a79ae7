//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints its verdict, and exits non-zero if any of them fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mvdc_nmpc::controller::initial_state;
use mvdc_nmpc::ocp::{CentralDifference, ForwardSensitivity, GradientMethod};
use mvdc_nmpc::plant::{integrate, restoring_offset};
use mvdc_nmpc::{
    closed_loop, compare_cost, default_scenario, equilibrium, evaluate, run_closed_loop, solve, CaseConfig,
    ControlInput, ControllerKind, Disturbance, FixedOffset, InputMode, InputSequence, LoadProfile, OcpConfig,
    PlantParams, PlantState, RunOptions, RunReport, ShootingProblem, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Run {
    case: CaseConfig,
    traj: Trajectory,
    report: RunReport,
    elapsed: Duration,
}

fn run(kind: ControllerKind) -> Run {
    let case = default_scenario().with_controller(kind.name());
    let start = Instant::now();
    let traj = closed_loop(&case).expect("closed loop");
    let elapsed = start.elapsed();
    let report = evaluate(&traj, &case).expect("evaluate");
    Run { case, traj, report, elapsed }
}

struct Runs {
    droop: Run,
    nmpc: Run,
    enmpc: Run,
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("never".into(), |x| format!("{x:.2}"))
}

fn equilibrium_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dv = rng.gen_range(-150.0..150.0);
        let p = rng.gen_range(0.0..1e7);
        let case = CaseConfig { t_final_s: 20.0, ..default_scenario() }.with_profile(LoadProfile::constant(p));
        let u = ControlInput::Centralized(dv);
        let traj = run_closed_loop(&case, &mut FixedOffset(u), RunOptions::default()).expect("run");
        let oracle = equilibrium(&u, &Disturbance::new(p, 0.0), &case.plant).expect("oracle");
        let end = traj.states().last().expect("samples").to_array();
        for (a, b) in end.iter().zip(oracle.to_array()) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst < 1e-3 && secs < 5.0, format!("worst rel. error {worst:.2e}, {secs:.2} s for 20 runs"))
}

fn droop_sharing(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in [&runs.droop, &runs.nmpc] {
        for (label, ratio) in [("SG", r.report.sharing_sg), ("B", r.report.sharing_b)] {
            let ok = ratio.is_some_and(|x| (x - 2.0).abs() <= 0.02);
            pass &= ok;
            parts.push(format!("{} {label} {}", r.report.controller, fmt_opt(ratio).replace("never", "n/a")));
        }
    }
    verdict(pass, parts.join(", "))
}

fn voltage_restoration(runs: &Runs) -> Verdict {
    let n = runs.nmpc.report.voltage_mape_pct;
    let d = runs.droop.report.voltage_mape_pct;
    let pass = n <= 0.1 && n <= d / 10.0 && (0.2..=3.0).contains(&d);
    verdict(pass, format!("MAPE nmpc {n:.4} %, droop {d:.4} %"))
}

fn sc_division_of_labor(runs: &Runs) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, d) in runs.nmpc.report.pulses.iter().zip(&runs.droop.report.pulses) {
        let quiet = n.sc_quiet_after_end_s.is_some_and(|s| s <= 1.0);
        let faster = match (n.sc_settle_s, d.sc_settle_s) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        };
        pass &= quiet && faster;
        parts.push(format!(
            "pulse@{:.0}s: 1% after {} s, settle nmpc {} vs droop {}",
            n.t_start_s,
            fmt_opt(n.sc_quiet_after_end_s),
            fmt_opt(n.sc_settle_s),
            fmt_opt(d.sc_settle_s)
        ));
    }
    verdict(pass, parts.join("; "))
}

fn input_constraints(runs: &Runs) -> Verdict {
    let v: usize = [&runs.droop, &runs.nmpc, &runs.enmpc].iter().map(|r| r.report.input_violations).sum();
    let worst = [&runs.nmpc, &runs.enmpc]
        .iter()
        .flat_map(|r| r.traj.diagnostics().iter().flatten())
        .map(|d| d.max_abs_sequence)
        .fold(0.0, f64::max);
    verdict(v == 0, format!("{v} violations, largest returned |u| {worst:.2} V"))
}

fn economic_dispatch(runs: &Runs) -> Verdict {
    let savings = compare_cost(&runs.enmpc.report, &runs.nmpc.report).expect("same scenario");
    let ratio = runs.enmpc.report.sharing_sg;
    let pass = runs.enmpc.report.generation_cost < runs.nmpc.report.generation_cost
        && savings >= 5.0
        && ratio.is_some_and(|r| r > 1.0 && r < 2.0);
    verdict(
        pass,
        format!(
            "cost enmpc {:.1} vs nmpc {:.1} (savings {savings:.2} %), SGa:SGb {}",
            runs.enmpc.report.generation_cost,
            runs.nmpc.report.generation_cost,
            ratio.map_or("n/a".into(), |r| format!("{r:.4}"))
        ),
    )
}

fn gradient_correctness() -> Verdict {
    let params = PlantParams::default();
    let cfg = OcpConfig::default();
    let sagged = equilibrium(&ControlInput::Centralized(0.0), &Disturbance::new(6e6, 0.0), &params).expect("eq");
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let mut x0 = sagged;
        x0.v_o += rng.gen_range(-30.0..30.0);
        x0.i_scb = rng.gen_range(-50.0..50.0);
        let u_prev = if trial % 2 == 0 {
            ControlInput::Centralized(rng.gen_range(-100.0..100.0))
        } else {
            ControlInput::Localized([(); 4].map(|_| rng.gen_range(-100.0..100.0)))
        };
        let d = vec![Disturbance::new(rng.gen_range(2e6..8e6), rng.gen_range(0.0..2e6)); cfg.horizon_steps];
        let p = ShootingProblem::new(&x0, &u_prev, &d, &cfg, &params, 0.05).expect("problem");
        let u: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-140.0..140.0)).collect();
        let (_, ga) = ForwardSensitivity.cost_and_gradient(&p, &u).expect("sens");
        let (_, gf) = CentralDifference::default().cost_and_gradient(&p, &u).expect("fd");
        let diff: Vec<f64> = ga.iter().zip(&gf).map(|(a, b)| a - b).collect();
        worst = worst.max(inf(&diff) / inf(&gf).max(1e-12));
    }

    let cs1 = cfg.without_economics();
    let load = Disturbance::new(6e6, 0.0);
    let dv = restoring_offset(6000.0, &load, &params);
    let x0 = equilibrium(&ControlInput::Centralized(dv), &load, &params).expect("eq");
    let p = ShootingProblem::new(&x0, &ControlInput::Centralized(dv), &[load; 10], &cs1, &params, 0.05)
        .expect("problem");
    let fd = CentralDifference::default();
    let (_, g_opt) = fd.cost_and_gradient(&p, &[dv; 10]).expect("fd");
    let (_, g_pert) = fd.cost_and_gradient(&p, &[dv + 5.0; 10]).expect("fd");
    let flat = inf(&g_opt) / inf(&g_pert);
    verdict(
        worst < 1e-4 && flat < 1e-3,
        format!("max rel. error {worst:.2e} over 100 points, optimum/perturbed gradient {flat:.2e}"),
    )
}

fn solver_properties(runs: &Runs) -> Verdict {
    let diags: Vec<_> = [&runs.nmpc, &runs.enmpc].iter().flat_map(|r| r.traj.diagnostics().iter().flatten()).collect();
    let monotone = diags.iter().filter(|d| d.j_opt <= d.j_init).count();

    let cfg = OcpConfig {
        horizon_steps: 1,
        q_voltage: 0.0,
        r_rate: 1.0,
        psi: [0.0; 6],
        rho_state: 0.0,
        ..OcpConfig::default()
    };
    let x0 = initial_state(&runs.nmpc.case).expect("x0");
    let d = [Disturbance::new(4e6, 0.0)];
    let p = ShootingProblem::new(&x0, &ControlInput::Centralized(400.0), &d, &cfg, &PlantParams::default(), 0.05)
        .expect("problem");
    let r = solve(&p, &InputSequence::constant(&ControlInput::zero(InputMode::Centralized), 1), &cfg.solver, &ForwardSensitivity)
        .expect("solve");
    let at_bound = r.useq_opt.values() == [150.0];

    let again = closed_loop(&runs.nmpc.case).expect("rerun");
    let csv = |t: &Trajectory| {
        let mut buf = Vec::new();
        t.write_csv(&mut buf, false).expect("csv");
        buf
    };
    let identical = csv(&again) == csv(&runs.nmpc.traj);
    verdict(
        monotone == diags.len() && at_bound && identical,
        format!(
            "monotone {monotone}/{} solves, bound case u = {:?}, rerun identical {identical}",
            diags.len(),
            r.useq_opt.values()
        ),
    )
}

fn integrator_order() -> Verdict {
    let params = PlantParams::default();
    let u = ControlInput::Centralized(20.0);
    let d = Disturbance::new(6e6, 2e6);
    let mut x0: PlantState = equilibrium(&ControlInput::Centralized(0.0), &Disturbance::new(4e6, 0.0), &params).expect("eq");
    x0.v_o -= 25.0;
    x0.i_sca = 40.0;
    let run = |h: f64| integrate(&x0, &u, &d, &params, h, (0.1 / h).round() as usize).expect("integrate").to_array();
    let truth = run(0.1 / 1600.0);
    let err = |x: [f64; 9]| x.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ratio = err(run(1e-3)) / err(run(5e-4));
    verdict((12.0..=20.0).contains(&ratio), format!("error ratio {ratio:.2} (h = 1 ms vs 0.5 ms)"))
}

fn runtime(runs: &Runs) -> Verdict {
    let a = runs.nmpc.elapsed.as_secs_f64();
    let b = runs.enmpc.elapsed.as_secs_f64();
    verdict(a < 60.0 && b < 300.0, format!("CS-I {a:.2} s, CS-II {b:.2} s"))
}

fn main() -> ExitCode {
    let runs = Runs {
        droop: run(ControllerKind::PrimaryDroop),
        nmpc: run(ControllerKind::NmpcCentralized),
        enmpc: run(ControllerKind::EnmpcLocalized),
    };
    let results = [
        ("equilibrium oracle", equilibrium_oracle()),
        ("droop sharing", droop_sharing(&runs)),
        ("voltage restoration", voltage_restoration(&runs)),
        ("SC division of labor", sc_division_of_labor(&runs)),
        ("input constraints", input_constraints(&runs)),
        ("economic dispatch", economic_dispatch(&runs)),
        ("gradient correctness", gradient_correctness()),
        ("solver properties", solver_properties(&runs)),
        ("integrator order", integrator_order()),
        ("runtime", runtime(&runs)),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag} {name}: {}", i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
