//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use adaptscan_core::esloop::{run_static_map, EsParams, MoppFilter};
use adaptscan_core::lti::{freq_response, polynomial, realize, Rk4Workspace, C64};
use adaptscan_core::plant::{x_actuator, y_actuator, z_actuator, z_actuator_fitted, Z_INTEGRAL_GAIN};
use adaptscan_core::sim::{run_scan, RateLaw, RunSummary, TraceRow, TraceSink};
use adaptscan_core::trajectory::{exo_step, make_raster, make_spiral, ExosystemSpec};
use adaptscan_harness::config::{parse_scenario, MethodConfig, Scenario, ScenarioConfig};
use adaptscan_harness::sweep::{load_spec, run_sweep, SweepRow};

const K_SZ: f64 = 2.954e-3;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn shipped(name: &str) -> ScenarioConfig {
    let path = scenarios_dir().join(format!("{name}.toml"));
    let source = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_scenario(&source).unwrap_or_else(|e| panic!("{name}: {e}")).0
}

fn build(cfg: &ScenarioConfig) -> Scenario {
    cfg.build().unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
}

fn set_eps_hat0(cfg: &mut ScenarioConfig, value: f64) {
    match &mut cfg.method {
        MethodConfig::Adaptive { eps_hat0, .. } => *eps_hat0 = value,
        other => panic!("not adaptive: {other:?}"),
    }
}

/// Checks every row against the gate and clamp invariants and keeps a
/// decimated `(tau, eps_hat)` history.
struct Audit {
    gate_tau: Option<f64>,
    eps_bounds: (f64, f64),
    every: u64,
    history: Vec<(f64, f64)>,
    violations: Vec<String>,
}

impl Audit {
    fn new(scenario: &Scenario, every: u64) -> Self {
        let gate_tau = match &scenario.law {
            RateLaw::Adaptive { params, .. } => Some(params.gate_tau(scenario.setup.geometry.line_period)),
            _ => None,
        };
        let bounds = match &scenario.law {
            RateLaw::Adaptive { params, .. } => (params.eps_min, params.eps_max),
            _ => (0.0, f64::INFINITY),
        };
        Self {
            gate_tau,
            eps_bounds: bounds,
            every,
            history: Vec::new(),
            violations: Vec::new(),
        }
    }
}

impl TraceSink for Audit {
    fn push(&mut self, row: &TraceRow) -> adaptscan_core::Result<()> {
        if let Some(g) = self.gate_tau {
            if row.gate && row.tau < g && self.violations.len() < 5 {
                self.violations.push(format!("gate open at tau {} < {g}", row.tau));
            }
            if row.clamp && row.tau >= g && self.violations.len() < 5 {
                self.violations.push(format!("clamp at tau {}", row.tau));
            }
        }
        let (lo, hi) = self.eps_bounds;
        if !(row.eps >= lo && row.eps <= hi) && self.violations.len() < 5 {
            self.violations.push(format!("eps {} outside [{lo}, {hi}]", row.eps));
        }
        if row.step % self.every == 0 {
            self.history.push((row.tau, row.eps_hat));
        }
        Ok(())
    }
}

struct Run {
    name: String,
    summary: RunSummary,
    history: Vec<(f64, f64)>,
    violations: Vec<String>,
}

fn simulate(cfg: &ScenarioConfig) -> Run {
    let scenario = build(cfg);
    let mut audit = Audit::new(&scenario, 100);
    let start = Instant::now();
    let summary = run_scan(&scenario.setup, &scenario.law, &scenario.analysis, &mut audit)
        .unwrap_or_else(|e| panic!("{}: {e}", cfg.name));
    println!(
        "    ran {} (N = {}, eps_hat0 = {:?}) in {:.1} s wall",
        cfg.name,
        cfg.lines,
        match &scenario.law {
            RateLaw::Adaptive { eps_hat0, .. } => Some(*eps_hat0),
            _ => None,
        },
        start.elapsed().as_secs_f64()
    );
    Run {
        name: cfg.name.clone(),
        summary,
        history: audit.history,
        violations: audit.violations,
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn sensitivity_slope_check() -> Verdict {
    let ss = realize(&z_actuator()).unwrap();
    let mut worst: f64 = 0.0;
    let mut values = String::new();
    for w in [0.1, 1.0, 3.0, 10.0, 30.0] {
        let g = freq_response(&ss, w).unwrap();
        let loop_gain = C64::new(0.0, -Z_INTEGRAL_GAIN / w) * g;
        let s = (C64::new(1.0, 0.0) + loop_gain).inv();
        let slope = s.norm() / w;
        worst = worst.max((slope - K_SZ).abs() / K_SZ);
        values.push_str(&format!(" {slope:.4e}"));
    }
    verdict(
        worst <= 0.02,
        format!("|S_z(jw)|/w over w in [0.1, 30] = {values}; worst deviation {:.3}%", 100.0 * worst),
    )
}

fn mopp_check() -> Verdict {
    let (a, omega, tau_phi, g) = (0.001, 210.0, 6e-3, 2.5);
    let dtau = 1e-5;
    let eta = |q: &dyn Fn(f64) -> f64| {
        let mut f = MoppFilter::new(a, omega, tau_phi).unwrap();
        let steps = (3.0 * TAU / omega / dtau) as usize;
        for k in 0..=steps {
            let s = 0.123 + k as f64 * dtau;
            f.push(s, q(s));
        }
        f.eta().unwrap()
    };
    let in_phase = eta(&|s| -1.0 + g * (omega * (s - tau_phi)).sin());
    let quad = eta(&|s| -1.0 + g * (omega * (s - tau_phi)).cos());
    let rel = (in_phase - g / a).abs() / (g / a);
    let rej = quad.abs() / (g / a);
    verdict(
        rel <= 1e-3 && rej < 1e-3,
        format!("in-phase error {:.2e}, quadrature leak {:.2e} (relative to G/a)", rel, rej),
    )
}

fn static_map_check() -> Verdict {
    let params = EsParams {
        tau_phi: 0.0,
        ..EsParams::scenario_one()
    };
    let target = 0.6;
    let mut detail = Vec::new();
    let mut pass = true;
    for offset in [-0.5, 0.5] {
        let run = run_static_map(|e| -(e - target) * (e - target), params, target + offset, 5e-4, 8000.0, 0).unwrap();
        let miss = (run.eps_hat - target).abs();
        pass &= miss <= params.a + 0.005;
        detail.push(format!("offset {offset:+}: |eps_hat - eps*| = {miss:.2e}"));
    }
    verdict(pass, detail.join(", "))
}

fn convergence_check(runs: &[Run], scan: f64) -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for r in runs {
        let tau = r.summary.convergence_tau.expect("oracle available");
        pass &= tau <= scan;
        detail.push(format!("{}: last excursion at tau {tau:.4}", r.name));
    }
    verdict(pass, format!("{} (first scan ends at tau {scan})", detail.join(", ")))
}

fn n_monotonicity_check(runs: &[(u32, Run)]) -> Verdict {
    let means: Vec<f64> = runs
        .iter()
        .map(|(_, r)| r.summary.adaptation_error.expect("adaptation span").mean)
        .collect();
    let labels: Vec<String> = runs.iter().zip(&means).map(|((n, _), m)| format!("N={n}: {m:.3e}")).collect();
    verdict(strictly_decreasing(&means), format!("second-scan mean |eps_hat - eps*|: {}", labels.join(", ")))
}

fn adaptive_vs_fixed_check(adaptive: &Run, fixed: &Run) -> Verdict {
    let a = adaptive.summary.steady.expect("steady window");
    let f = fixed.summary.steady.expect("steady window");
    let ratio = f.q_e_max / f.q_e_min;
    verdict(
        a.in_band >= 0.9 && ratio >= 2.0,
        format!(
            "adaptive in band {:.1}% over {:.2} s; fixed over {:.2} s has q_e in [{:.2}, {:.2}] nm, ratio {:.2}",
            100.0 * a.in_band,
            adaptive.summary.duration,
            fixed.summary.duration,
            f.q_e_min,
            f.q_e_max,
            ratio
        ),
    )
}

fn interpolate(history: &[(f64, f64)], tau: f64) -> f64 {
    let i = history.partition_point(|&(t, _)| t < tau);
    if i == 0 {
        return history[0].1;
    }
    if i == history.len() {
        return history[i - 1].1;
    }
    let ((t0, v0), (t1, v1)) = (history[i - 1], history[i]);
    v0 + (v1 - v0) * (tau - t0) / (t1 - t0)
}

/// Time-mean and supremum of the pairwise relative gap on a common grid.
fn pairwise_gap(runs: &[Run], from: f64, to: f64) -> (f64, f64) {
    let grid: Vec<f64> = (0..=2000).map(|k| from + (to - from) * k as f64 / 2000.0).collect();
    let (mut mean, mut sup) = (0.0f64, 0.0f64);
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let gaps: Vec<f64> = grid
                .iter()
                .map(|&t| {
                    let (a, b) = (interpolate(&runs[i].history, t), interpolate(&runs[j].history, t));
                    (a - b).abs() / (0.5 * (a + b))
                })
                .collect();
            mean = mean.max(gaps.iter().sum::<f64>() / gaps.len() as f64);
            sup = sup.max(gaps.iter().copied().fold(0.0, f64::max));
        }
    }
    (mean, sup)
}

/// Largest climb of the estimate above its running minimum after `from`.
fn largest_rise(history: &[(f64, f64)], from: f64) -> f64 {
    let mut low = f64::INFINITY;
    let mut rise: f64 = 0.0;
    for &(_, v) in history.iter().filter(|(t, _)| *t >= from) {
        low = low.min(v);
        rise = rise.max(v - low);
    }
    rise
}

fn spiral_checks(starts: &[Run], transients: &[(u32, f64)], a: f64) -> Vec<(String, Verdict)> {
    let base = &starts[1];
    let from = base.summary.steady.expect("steady window").from_tau;
    let (mean_gap, sup_gap) = pairwise_gap(starts, from, base.summary.tau_end);
    let trend = base.summary.trend.expect("trend window");
    let early = largest_rise(&base.history, 0.25);
    let steady = base.summary.steady.expect("steady window");
    let errors: Vec<f64> = transients.iter().map(|&(_, e)| e).collect();
    let labels: Vec<String> = transients.iter().map(|(n, e)| format!("N={n}: {e:.3} nm")).collect();
    vec![
        (
            "7a".into(),
            verdict(
                mean_gap < 0.10,
                format!(
                    "largest time-mean pairwise eps_hat gap after tau {from} = {:.2}% (pointwise sup {:.2}%)",
                    100.0 * mean_gap,
                    100.0 * sup_gap
                ),
            ),
        ),
        (
            "7b".into(),
            verdict(
                trend.estimate_rise <= 2.0 * a,
                format!(
                    "largest eps_hat rise after tau {} = {:.2e} (allowed {:.1e}); from tau 0.25, including the \
                     first-edge rebound, {:.2e}",
                    trend.from_tau,
                    trend.estimate_rise,
                    2.0 * a,
                    early
                ),
            ),
        ),
        (
            "7c".into(),
            verdict(steady.in_band >= 0.8, format!("q_e in band for {:.1}% of samples", 100.0 * steady.in_band)),
        ),
        (
            "7d".into(),
            verdict(strictly_decreasing(&errors), format!("max |q_e - 4| over first half-scan: {}", labels.join(", "))),
        ),
    ]
}

fn sweep_check(rows: &[SweepRow], d_star: f64) -> Verdict {
    let pick = |m: &str| -> Vec<&SweepRow> { rows.iter().filter(|r| r.method == m).collect() };
    let (adaptive, fixed, ren) = (pick("adaptive"), pick("fixed"), pick("ren"));
    let mut pass = rows.iter().all(|r| r.ok()) && adaptive.len() == 5 && fixed.len() == adaptive.len();
    let mut pairs = Vec::new();
    for a in &adaptive {
        let (da, ea) = (a.duration_s.unwrap_or(f64::NAN), a.steady_max_error_nm.unwrap_or(f64::NAN));
        let Some(f) = fixed.iter().find(|f| f.value == da) else {
            pass = false;
            continue;
        };
        let ef = f.steady_max_error_nm.unwrap_or(f64::NAN);
        pass &= ea <= ef;
        pairs.push(format!("e*={} {:.1}s {:.2}/{:.2}", a.value, da, ea, ef));
    }
    let deviations: Vec<f64> = ren
        .iter()
        .map(|r| (r.steady_max_error_nm.unwrap_or(f64::NAN) - d_star).abs() / d_star)
        .collect();
    let worst = deviations.iter().copied().fold(0.0, f64::max);
    pass &= worst > 0.25;
    verdict(
        pass,
        format!(
            "adaptive/fixed max error at matched durations: {}; Ren worst deviation from d* = {:.0}%",
            pairs.join(", "),
            100.0 * worst
        ),
    )
}

fn oscillator_amplitude_drift() -> f64 {
    let mut worst: f64 = 0.0;
    for spec in [make_raster(4.0, 0.01, 100).unwrap(), make_spiral(4.0, 0.01, 100).unwrap()] {
        let before = ExosystemSpec::oscillator_amplitudes(spec.xi0.as_slice());
        let mut xi = spec.xi0.as_slice().to_vec();
        let mut ws = Rk4Workspace::new(xi.len());
        for _ in 0..2_000_000 {
            exo_step(&spec, &mut xi, 0.02, 1e-5, &mut ws).unwrap();
        }
        let after = ExosystemSpec::oscillator_amplitudes(&xi);
        for (a, b) in before.iter().zip(&after) {
            worst = worst.max(((b - a) / a).abs());
        }
    }
    worst
}

fn realization_error() -> f64 {
    let mut worst: f64 = 0.0;
    for tf in [x_actuator(), y_actuator(), z_actuator_fitted(), z_actuator()] {
        let ss = realize(&tf).unwrap();
        for k in 0..40 {
            let w = 0.1 * 10f64.powf(6.0 * k as f64 / 39.0);
            let s = C64::new(0.0, w);
            let expect = polynomial::eval(tf.num(), s) / polynomial::eval(tf.den(), s);
            let got = freq_response(&ss, w).unwrap();
            worst = worst.max((got - expect).norm() / (1.0 + expect.norm()));
        }
    }
    worst
}

fn tau_invariance_error() -> f64 {
    let mut worst: f64 = 0.0;
    let profile = [0.3, 1.7, 0.05, 0.9, 0.4];
    for spec in [make_raster(4.0, 0.01, 50).unwrap(), make_spiral(4.0, 0.01, 50).unwrap()] {
        let mut xi = spec.xi0.as_slice().to_vec();
        let mut ws = Rk4Workspace::new(xi.len());
        let mut tau = 0.0;
        for k in 0..profile.len() * 4000 {
            let eps = profile[k / 4000];
            let r = exo_step(&spec, &mut xi, eps, 1e-5, &mut ws).unwrap();
            tau += eps * 1e-5;
            let expect = spec.reference_at(tau);
            worst = worst.max((r[0] - expect[0]).abs().max((r[1] - expect[1]).abs()) / 2.0);
        }
    }
    worst
}

fn invariants_check(audited: &[&Run]) -> Verdict {
    let drift = oscillator_amplitude_drift();
    let fidelity = realization_error();
    let invariance = tau_invariance_error();
    let mut pass = drift <= 1e-5 && fidelity <= 1e-9 && invariance <= 1e-6;
    let mut broken = Vec::new();
    for r in audited {
        let clean = r.violations.is_empty() && r.summary.clamp_events_after_gate == 0;
        if !clean {
            broken.push(format!("{}: {:?}", r.name, r.violations));
        }
        pass &= clean;
    }
    verdict(
        pass,
        format!(
            "amplitude drift {drift:.1e}, realization error {fidelity:.1e}, tau-invariance error {invariance:.1e}; \
             {} shipped traces audited{}",
            audited.len(),
            if broken.is_empty() { String::new() } else { format!(", violations: {}", broken.join("; ")) }
        ),
    )
}

fn determinism_check() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("short.toml");
    let mut cfg = shipped("scenario1");
    cfg.name = "determinism".into();
    cfg.stop_tau = Some(0.06);
    std::fs::write(&config, cfg.to_toml()).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_adaptscan"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push((std::fs::read(&out).unwrap(), std::fs::read(out.with_extension("summary.json")).unwrap()));
    }
    let same = outputs[0] == outputs[1];
    verdict(same, format!("two runs wrote {} trace bytes each, identical: {same}", outputs[0].0.len()))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(String, Verdict)> = Vec::new();
    let mut record = |id: &str, v: Verdict| {
        println!("{} criterion {id}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id.to_string(), v));
    };

    record("1", sensitivity_slope_check());
    record("2", mopp_check());
    record("3", static_map_check());

    let one = shipped("scenario1");
    let optimum = match &one.method {
        MethodConfig::Adaptive { eps_hat0, .. } => *eps_hat0,
        _ => unreachable!(),
    };
    let scan = build(&one).setup.scan_length();
    let starts: Vec<Run> = [0.5, 1.0, 1.5]
        .into_iter()
        .map(|k| {
            let mut cfg = one.clone();
            cfg.name = format!("scenario1 x{k}");
            set_eps_hat0(&mut cfg, k * optimum);
            simulate(&cfg)
        })
        .collect();
    record("4", convergence_check(&starts, scan));

    let mut by_n = Vec::new();
    for n in [50, 100, 200] {
        let run = if n == 100 {
            let mut cfg = one.clone();
            cfg.name = "scenario1".into();
            simulate(&cfg)
        } else {
            let mut cfg = one.clone();
            cfg.lines = n;
            cfg.name = format!("scenario1 N={n}");
            simulate(&cfg)
        };
        by_n.push((n, run));
    }
    record("5", n_monotonicity_check(&by_n));

    let fixed_one = simulate(&shipped("scenario1_fixed"));
    record("6", adaptive_vs_fixed_check(&by_n[1].1, &fixed_one));

    let two = shipped("scenario2");
    let (a, eps0) = match &two.method {
        MethodConfig::Adaptive { a, eps_hat0, .. } => (*a, *eps_hat0),
        _ => unreachable!(),
    };
    let spiral: Vec<Run> = [0.5, 1.0, 1.5]
        .into_iter()
        .map(|k| {
            let mut cfg = two.clone();
            cfg.name = if k == 1.0 { "scenario2".into() } else { format!("scenario2 x{k}") };
            set_eps_hat0(&mut cfg, k * eps0);
            simulate(&cfg)
        })
        .collect();
    let transients: Vec<(u32, f64)> = [50, 100, 200]
        .into_iter()
        .map(|n| {
            let mut cfg = two.clone();
            cfg.lines = n;
            cfg.name = format!("scenario2 N={n} half");
            let scenario = build(&cfg);
            let half = 0.5 * scenario.setup.scan_length();
            let gate = match &scenario.law {
                RateLaw::Adaptive { params, .. } => params.gate_tau(cfg.line_period),
                _ => unreachable!(),
            };
            cfg.stop_tau = Some(half);
            cfg.analysis.transient = Some([gate, half]);
            (n, simulate(&cfg).summary.transient_error.unwrap_or(f64::NAN))
        })
        .collect();
    for (id, v) in spiral_checks(&spiral, &transients, a) {
        record(&id, v);
    }

    let dir = tempfile::tempdir().unwrap();
    let (spec, base) = load_spec(&scenarios_dir().join("compare_sweep.toml")).unwrap();
    let d_star = match &shipped("compare_ren").method {
        MethodConfig::Ren { d_star, .. } => *d_star,
        _ => unreachable!(),
    };
    let rows = run_sweep(&spec, &base, dir.path(), None).unwrap();
    record("8", sweep_check(&rows, d_star));

    let fixed_two = simulate(&shipped("scenario2_fixed"));
    let compare_base = simulate(&shipped("compare_base"));
    let compare_ren = simulate(&shipped("compare_ren"));
    let audited = [&by_n[1].1, &fixed_one, &spiral[1], &fixed_two, &compare_base, &compare_ren];
    record("9", invariants_check(&audited));

    record("10", determinism_check());

    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.pass).map(|(id, _)| id.as_str()).collect();
    println!(
        "{} of {} criteria passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
