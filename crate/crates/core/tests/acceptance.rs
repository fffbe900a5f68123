//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL ...` line (written past the test harness's output
//! capture so it shows in plain `cargo test` runs) and then asserts.
//!
//! Criteria 1–4 and 8 share one execution of the reference suite in
//! `configs/reference`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use normflow::config::{load_config, ExperimentConfig};
use normflow::diagnostics::{self, check_dissipation_balance};
use normflow::experiment::{initial_field, run_experiment, run_suite, Summary};
use normflow::geometry::{Field, Geometry, GeometryKind};
use normflow::integrator::{run, step, RunStatus, Scheme, SolverConfig, Trace};
use normflow::io::parse_trace_csv;
use normflow::oracles::{lane_emden_shoot, principal_eigenpair, shoot_from_center, ShootStatus, SHOOT_TOL};
use rand::{Rng, SeedableRng};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("\ncriterion {criterion}: {verdict}  {detail}\n");
    // direct handle: not intercepted by libtest's capture
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn reference_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference")
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

struct Experiment {
    cfg: ExperimentConfig,
    geom: Geometry,
    summary: Summary,
    trace: Trace,
    elapsed: Duration,
}

struct Suite {
    dir: PathBuf,
    runs: BTreeMap<String, Experiment>,
}

impl Suite {
    fn get(&self, name: &str) -> &Experiment {
        self.runs.get(name).unwrap_or_else(|| panic!("reference experiment {name} missing"))
    }
}

/// Runs every reference config once, timing each, and reloads its trace
/// from `trace.csv`.
fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let dir = scratch_dir("run1");
        let mut paths: Vec<PathBuf> = std::fs::read_dir(reference_dir())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        assert_eq!(paths.len(), 6, "the reference suite has six experiments");
        let mut runs = BTreeMap::new();
        for path in paths {
            let cfg = load_config(&path).unwrap();
            let geom = cfg.geometry.build().unwrap();
            let out = dir.join(&cfg.name);
            let start = Instant::now();
            let res = run_experiment(&cfg, &out).unwrap();
            let elapsed = start.elapsed();
            let samples = parse_trace_csv(&std::fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
            let trace = Trace { spec: cfg.spec, measure: geom.measure(), samples };
            runs.insert(cfg.name.clone(), Experiment { cfg, geom, summary: res.summary, trace, elapsed });
        }
        Suite { dir, runs }
    })
}

#[test]
fn criterion_1_conservation() {
    let suite = suite();
    let mut pass = true;
    let mut worst_norm: f64 = 0.0;
    let mut ratios = Vec::new();
    for (name, e) in &suite.runs {
        for s in &e.trace.samples {
            worst_norm = worst_norm.max((s.norm_q - 1.0).abs());
        }
        // one step from the initial data at the config's largest step and two halvings
        let g = initial_field(&e.cfg, &e.geom).unwrap();
        let base = e.cfg.solver.dt_max;
        let drift: Vec<f64> = [base, base / 2.0, base / 4.0]
            .iter()
            .map(|&dt| step(&e.cfg.spec, &e.geom, &g, dt, Scheme::ImexCn).unwrap().1.drift)
            .collect();
        for r in [drift[0] / drift[1], drift[1] / drift[2]] {
            pass &= (3.0..=5.0).contains(&r);
            ratios.push(format!("{name}:{r:.3}"));
        }
    }
    pass &= worst_norm < 1e-12;
    let timing: Vec<String> = ["a_p2_circle", "a_p3_circle"]
        .iter()
        .map(|n| format!("{n} {:.2}s", suite.get(n).elapsed.as_secs_f64()))
        .collect();
    report(
        1,
        pass,
        &format!(
            "max post-projection |∫u^q−1| = {worst_norm:.2e} (< 1e-12); drift halving ratios [{}] (in [3,5]); runtime at 256: {}",
            ratios.join(" "),
            timing.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_flow_a_suite() {
    let suite = suite();
    let mut pass = true;
    let mut details = Vec::new();
    for name in ["a_p2_circle", "a_p3_circle"] {
        let e = suite.get(name);
        let p = e.cfg.spec.p;
        let monotone = diagnostics::check_lambda_monotone(&e.trace, 1e-6).unwrap();
        let fit = diagnostics::fit_lambda_decay(&e.trace, e.cfg.diagnostics.decay_tail).unwrap();
        let (mu1, _) = principal_eigenpair(&e.geom).unwrap();
        let u_inf = e.geom.measure().powf(-1.0 / p);
        let predicted = 2.0 * mu1 * u_inf.powf(2.0 - p);
        let rate_err = (fit.rate - predicted).abs() / predicted;
        let literal_err = (fit.rate - 2.0 * mu1).abs() / (2.0 * mu1);
        let last = e.trace.samples.last().unwrap();
        let spread = (last.umax - last.umin) / last.umax;
        let harnack = diagnostics::check_harnack(&e.trace, 1e-6).unwrap();
        let ratio_monotone = harnack.context["ratio_monotone"] == 1.0;
        let ratio_end = harnack.context["ratio_end"];
        let integrable = diagnostics::check_lambda_integrable(&e.trace).unwrap();
        let ok = e.summary.status == Some(RunStatus::Converged)
            && monotone.passed
            && rate_err <= 0.2
            && spread < 1e-6
            && harnack.passed
            && ratio_monotone
            && ratio_end - 1.0 < 1e-6
            && integrable.passed;
        pass &= ok;
        details.push(format!(
            "p={p}: monotone {} (rise {:.1e}), c_fit {:.4} vs 2μ1·u∞^(2−p) {:.4} (err {:.1}%; vs bare 2μ1 {:.4}: {:.1}%), spread {spread:.1e}, Harnack ratio {:.3}→1+{:.1e} monotone {ratio_monotone}, ∫λ tail {:.1e}",
            monotone.passed,
            monotone.violation,
            fit.rate,
            predicted,
            100.0 * rate_err,
            2.0 * mu1,
            100.0 * literal_err,
            harnack.context["ratio_start"],
            ratio_end - 1.0,
            integrable.violation,
        ));
    }
    report(2, pass, &details.join("; "));
    assert!(pass);
}

#[test]
fn criterion_3_flow_b_suite() {
    let e = suite().get("b_p3_interval");
    let lyapunov = diagnostics::check_lyapunov_b(&e.trace, 1e-6).unwrap();
    let b_min = e.trace.samples.iter().filter_map(|s| s.b).fold(f64::INFINITY, f64::min);
    let last = e.trace.samples.last().unwrap();
    let oracle = e.summary.oracle.as_ref().expect("converged flow B run carries an oracle comparison");
    let pass = e.summary.status == Some(RunStatus::Converged)
        && e.summary.steady_residual < 1e-6
        && last.lambda > 0.0
        && lyapunov.passed
        && b_min >= 1.0
        && oracle.lambda_rel_error < 1e-3
        && oracle.l2_distance < 1e-3;
    report(
        3,
        pass,
        &format!(
            "{:?}, residual {:.1e}, λ_final {:.8} vs oracle {:.8} (rel {:.1e}), L² distance {:.1e}, Lyapunov {} , min B {:.6}",
            e.summary.status,
            e.summary.steady_residual,
            last.lambda,
            oracle.lambda_oracle,
            oracle.lambda_rel_error,
            oracle.l2_distance,
            lyapunov.passed,
            b_min
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_flow_c_contrast() {
    let suite = suite();
    let mut pass = true;
    let mut details = Vec::new();
    let mut total = Duration::ZERO;
    for name in ["c_p7_ball", "c_p5_ball"] {
        let e = suite.get(name);
        total += e.elapsed;
        let umax0 = e.trace.samples[0].umax;
        let peak = e.trace.samples.iter().map(|s| s.umax).fold(0.0, f64::max);
        let ok = e.summary.status == Some(RunStatus::BlowUp);
        pass &= ok;
        details.push(format!("p={}: {:?} (peak u_max/u_max(0) = {:.2}, needs BlowUp)", e.cfg.spec.p, e.summary.status.unwrap(), peak / umax0));
    }
    let e = suite.get("c_p3_ball");
    total += e.elapsed;
    let oracle = e.summary.oracle.as_ref();
    let lambda_err = oracle.map_or(f64::INFINITY, |o| o.lambda_rel_error);
    pass &= e.summary.status == Some(RunStatus::Converged) && e.summary.steady_residual < 1e-6 && lambda_err < 1e-3;
    details.push(format!(
        "p=3: {:?}, residual {:.1e}, λ rel. error vs oracle {lambda_err:.1e}",
        e.summary.status.unwrap(),
        e.summary.steady_residual
    ));
    pass &= total < Duration::from_secs(300);
    details.push(format!("runtime {:.1}s", total.as_secs_f64()));
    report(4, pass, &details.join("; "));
    assert!(pass);
}

#[test]
fn criterion_5_oracle_criticality() {
    let mut pass = true;
    let mut statuses = Vec::new();
    let mut worst_residual: f64 = 0.0;
    for p in [2.0, 3.0, 4.0, 5.0, 6.0, 7.0] {
        let prof = lane_emden_shoot(3, p, 1.0, SHOOT_TOL).unwrap();
        let hit = matches!(prof.status, ShootStatus::HitZeroAt(_));
        pass &= hit == (p < 5.0);
        worst_residual = worst_residual.max(prof.ode_residual(4));
        statuses.push(format!("p={p}:{}", if hit { "HitZero" } else { "StayedPositive" }));
    }
    pass &= worst_residual < 1e-8;

    // v_α(r) = α v_1(α^{(p−1)/2} r) on the positive part of v_1
    let mut worst_scaling: f64 = 0.0;
    for p in [2.0, 3.0, 4.0] {
        let r1 = 3.0;
        let v1 = shoot_from_center(3, p, 1.0, r1, SHOOT_TOL).unwrap();
        for alpha in [0.5f64, 0.8, 1.3, 2.0] {
            let s = alpha.powf(0.5 * (p - 1.0));
            let va = shoot_from_center(3, p, alpha, r1 / s, SHOOT_TOL).unwrap();
            for k in 0..=30 {
                let r = 0.99 * r1 / s * k as f64 / 30.0;
                let err = (va.eval(r).unwrap() - alpha * v1.eval(s * r).unwrap()).abs() / alpha;
                worst_scaling = worst_scaling.max(err);
            }
        }
    }
    pass &= worst_scaling < 1e-8;
    report(
        5,
        pass,
        &format!("n=3, R=1: [{}]; max ODE residual {worst_residual:.1e} (< 1e-8); scaling symmetry {worst_scaling:.1e} (< 1e-8)", statuses.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_6_numerical_floor() {
    let pi2 = std::f64::consts::PI.powi(2);
    let errs: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| (principal_eigenpair(&Geometry::interval(1.0, n).unwrap()).unwrap().0 - pi2).abs())
        .collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20240601);
    let mut worst_sbp: f64 = 0.0;
    for res in [8, 17, 32] {
        let geoms = [
            Geometry::interval(1.3, res).unwrap(),
            Geometry::circle(2.0, res).unwrap(),
            Geometry::rectangle(1.0, 0.7, res).unwrap(),
            Geometry::torus(1.0, 1.5, res).unwrap(),
            Geometry::radial_ball(1, 1.0, res).unwrap(),
            Geometry::radial_ball(3, 1.0, res).unwrap(),
            Geometry::radial_ball(5, 2.0, res).unwrap(),
        ];
        for g in &geoms {
            for _ in 0..20 {
                let n = g.node_count();
                let u = Field::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
                let v = Field::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
                let a = g.inner(&u, &g.laplacian(&v).unwrap()).unwrap();
                let b = g.inner(&v, &g.laplacian(&u).unwrap()).unwrap();
                let scale = g.l2_norm(&u).unwrap() * g.l2_norm(&v).unwrap() * g.spectral_radius_bound();
                worst_sbp = worst_sbp.max((a - b).abs() / scale.max(1.0));
            }
        }
    }
    let kinds = [
        GeometryKind::IntervalDirichlet,
        GeometryKind::Circle,
        GeometryKind::RectangleDirichlet,
        GeometryKind::Torus2D,
        GeometryKind::RadialBallDirichlet,
    ];
    let pass = min_order >= 1.9 && worst_sbp < 1e-12;
    report(
        6,
        pass,
        &format!(
            "eigenvalue orders {:?} (min ≥ 1.9); SBP asymmetry {worst_sbp:.1e} (< 1e-12) over {} kinds",
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>(),
            kinds.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_dissipation_balances() {
    const TOL: f64 = 1e-4;
    const HORIZON: f64 = 0.01;
    let mut pass = true;
    let mut details = Vec::new();
    for name in ["a_p2_circle", "b_p3_interval", "c_p7_ball"] {
        let cfg = load_config(&reference_dir().join(format!("{name}.toml"))).unwrap();
        let geom = cfg.geometry.build().unwrap();
        let g = initial_field(&cfg, &geom).unwrap();
        let mut residuals = Vec::new();
        let mut at_finest = None;
        for dt in [1e-5, 5e-6, 2.5e-6] {
            let sc = SolverConfig::fixed_step(Scheme::ImexCn, dt, HORIZON);
            let (_, trace) = run(&cfg.spec, &geom, &g, &sc).unwrap();
            let r = check_dissipation_balance(&trace, TOL).unwrap();
            residuals.push(r.context["final_imbalance"].abs());
            if at_finest.is_none() {
                at_finest = Some(r);
            }
        }
        let r = at_finest.unwrap();
        // A and C: the energy never rises (sign); B: the full identity including the B term
        let ok_at_dt = match cfg.spec.variant {
            normflow::FlowVariant::B => r.passed,
            _ => r.context["max_energy_rise"] <= TOL,
        };
        let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
        let first_order = ratios.iter().all(|&q| q >= 1.8);
        pass &= ok_at_dt && first_order;
        details.push(format!(
            "{} at dt=1e-5: {} (energy rise {:.1e}, cumulative residual {:.1e}, full check {}); refinement ratios {:?}",
            cfg.spec.variant,
            if cfg.spec.variant == normflow::FlowVariant::B { "identity" } else { "sign" },
            r.context["max_energy_rise"],
            residuals[0],
            if r.passed { "pass" } else { "fail" },
            ratios.iter().map(|q| format!("{q:.2}")).collect::<Vec<_>>()
        ));
    }
    report(7, pass, &details.join("; "));
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let first = suite();
    let again = scratch_dir("run2");
    run_suite(&reference_dir(), &again).unwrap();
    let mut identical = 0;
    let mut differing = Vec::new();
    for name in first.runs.keys() {
        let a = std::fs::read(first.dir.join(name).join("trace.csv")).unwrap();
        let b = std::fs::read(again.join(name).join("trace.csv")).unwrap();
        if a == b {
            identical += 1;
        } else {
            differing.push(name.clone());
        }
    }
    let pass = differing.is_empty() && identical == 6;
    report(8, pass, &format!("{identical}/6 trace.csv files bit-identical across two suite executions {differing:?}"));
    assert!(pass);
}
