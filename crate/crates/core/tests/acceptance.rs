//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full training protocol, so expect roughly half an hour on one
//! core. `NCAMUL_ACCEPTANCE_ONLY=1,2,4` restricts the run to some criteria;
//! `NCAMUL_FULL_SWEEP=1` also trains the H=8 and H=32 sweep rows.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use ncamul::eval::{self, EvalReport, SweepRecord, SweepReport, DEFAULT_LENGTHS};
use ncamul::model::checkpoint;
use ncamul::model::{Engine, MlpModel, NcaModel, RuleNet, Symbolic};
use ncamul::rng::stream;
use ncamul::rule::{default_step_cap, sample_chaos_state, Trajectory};
use ncamul::train::{init_model, loss_and_gradients, train_with, TrainConfig};
use ncamul::{multiply_oracle, outer_product_encode, random_nbit};

struct Line {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
    secs: f64,
}

struct Suite {
    only: Option<BTreeSet<String>>,
    lines: Vec<Line>,
}

impl Suite {
    fn wants(&self, ids: &[&str]) -> bool {
        self.only
            .as_ref()
            .is_none_or(|only| ids.iter().any(|id| only.contains(*id)))
    }

    fn record(&mut self, id: &'static str, name: &'static str, pass: bool, detail: String, started: Instant) {
        let line = Line {
            id,
            name,
            pass,
            detail,
            secs: started.elapsed().as_secs_f64(),
        };
        println!(
            "{} [{}] {}: {} ({:.1}s)",
            if line.pass { "PASS" } else { "FAIL" },
            line.id,
            line.name,
            line.detail,
            line.secs
        );
        self.lines.push(line);
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

fn symbolic_exactness(s: &mut Suite) {
    let t = Instant::now();
    let mut pairs = 0;
    let mut failures = 0;
    for n in 1..=8 {
        let r = eval::evaluate_exhaustive(&Symbolic, n).expect("exhaustive run");
        pairs += r.samples;
        failures += r.samples - r.correct;
    }
    s.record(
        "1",
        "exact rule, every operand pair for n=1..8",
        failures == 0 && pairs == 87_380,
        format!("{pairs} pairs, {failures} failures"),
        t,
    );
}

fn conservation(s: &mut Suite) {
    let t = Instant::now();
    let mut rng = stream(0xc0de, &[2]);
    let mut states = 0usize;
    let mut violations = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(1..=32);
        let a = random_nbit(n, false, &mut rng).unwrap();
        let b = random_nbit(n, false, &mut rng).unwrap();
        let product = multiply_oracle(&a, &b);
        let g0 = outer_product_encode(&a, &b, n).unwrap();
        let traj = Trajectory::generate(&g0, default_step_cap(n)).expect("rule converges");
        states += traj.states.len();
        violations += traj.states.iter().filter(|g| g.weighted_sum() != product).count();
    }
    s.record(
        "2",
        "weighted sum is conserved on 1000 trajectories (n<=32)",
        violations == 0,
        format!("{states} states checked, {violations} violations"),
        t,
    );
}

fn parameter_counts(s: &mut Suite) {
    let t = Instant::now();
    let nca: Vec<usize> = [4, 8, 16, 32].iter().map(|&h| NcaModel::zeros(h).param_count()).collect();
    let mlp = MlpModel::zeros(32).param_count();
    s.record(
        "3",
        "parameter counts",
        nca == [81, 161, 321, 641] && mlp == 129,
        format!("nca {nca:?}, mlp {mlp}"),
        t,
    );
}

/// Max relative error of the analytic gradient against central differences.
fn gradient_error<M: RuleNet + Clone>(model: &M, batch: &[ncamul::rule::ChaosSample], h: f64) -> f64 {
    let (_, analytic) = loss_and_gradients(model, batch);
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (p, &a) in analytic.iter().enumerate() {
        let x = model.params()[p];
        probe.params_mut()[p] = x + h;
        let up = loss_and_gradients(&probe, batch).0;
        probe.params_mut()[p] = x - h;
        let down = loss_and_gradients(&probe, batch).0;
        probe.params_mut()[p] = x;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn gradient_check(s: &mut Suite) {
    let t = Instant::now();
    let mut rng = stream(0x9ad, &[4]);
    let mut worst = 0.0f64;
    for trial in 0..25 {
        let batch: Vec<_> = (0..4)
            .map(|_| {
                let n = rng.random_range(2..=6);
                sample_chaos_state(n, &mut rng).unwrap()
            })
            .collect();
        let err = if trial % 5 == 4 {
            gradient_error(&MlpModel::init(32, &mut rng), &batch, 1e-5)
        } else {
            let hidden = [4, 8, 16, 32][trial % 4];
            gradient_error(&NcaModel::init(hidden, &mut rng), &batch, 1e-5)
        };
        worst = worst.max(err);
    }
    s.record(
        "4",
        "analytic gradient vs central differences (h=1e-5), 25 model/batch pairs",
        worst <= 1e-4,
        format!("max relative error {worst:.2e}"),
        t,
    );
}

fn determinism(s: &mut Suite) {
    let t = Instant::now();
    let config = TrainConfig {
        hidden: 8,
        total_steps: 200,
        batch_size: 64,
        eval_every: 100,
        eval_samples: 128,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let (model, metrics) = train_with(init_model::<NcaModel>(&config), &config, |_| {}).unwrap();
        let cfg = serde_json::to_value(&config).unwrap();
        let ckpt = checkpoint::to_json(&model, Some(config.seed), &cfg);
        let report = eval::evaluate_lengths(&Engine::new(&model), &[(8, 50), (24, 20)], 3).unwrap();
        let (cell, _) = eval::sweep_cell(&config, 4, 1);
        let sweep = SweepReport::from_records(vec![cell]);
        [
            ckpt,
            metrics.to_csv().unwrap(),
            report.to_json(),
            report.to_csv().unwrap(),
            serde_json::to_string(&sweep).unwrap(),
            sweep.to_csv().unwrap(),
        ]
    };
    let one = with_threads(1, run);
    let many = with_threads(4, run);
    let identical = one.iter().zip(&many).filter(|(a, b)| a == b).count();
    s.record(
        "10",
        "checkpoint, metrics, eval and sweep reports identical on 1 vs 4 threads",
        identical == one.len(),
        format!("{identical}/{} artifacts byte-identical (200-step runs)", one.len()),
        t,
    );
}

fn sweep(hidden: usize) -> (Vec<(SweepRecord, Option<NcaModel>)>, f64) {
    let t = Instant::now();
    let cells: Vec<_> = (0..10)
        .map(|seed| {
            let (r, m) = eval::sweep_cell(&TrainConfig::default(), hidden, seed);
            eprintln!(
                "  hidden {hidden:>2} seed {seed}: first perfect probe {:?}, generalises {}",
                r.first_perfect_step, r.generalization_success
            );
            (r, m)
        })
        .collect();
    (cells, t.elapsed().as_secs_f64() / 10.0)
}

fn successes(cells: &[(SweepRecord, Option<NcaModel>)]) -> usize {
    cells.iter().filter(|(r, _)| r.generalization_success).count()
}

fn convergence(s: &mut Suite, h16: &[(SweepRecord, Option<NcaModel>)], per_run: f64) {
    let t = Instant::now();
    let converged: Vec<Option<usize>> = h16.iter().map(|(r, _)| r.first_perfect_step).collect();
    let count = converged.iter().filter(|c| c.is_some()).count();
    s.record(
        "5",
        "H=16 seeds reaching 100% single-step accuracy within 30000 steps",
        count >= 8,
        format!("{count}/10 (first perfect probe: {converged:?}; {per_run:.0}s per run incl. scoring)"),
        t,
    );
}

fn length_generalization(s: &mut Suite, model: Option<&NcaModel>) -> Option<EvalReport> {
    let t = Instant::now();
    let Some(model) = model else {
        s.record("6", "length generalization 8..1024 bits", false, "no successful H=16 model".into(), t);
        return None;
    };
    let report = eval::evaluate_lengths(&Engine::new(model), &eval::default_plan(&DEFAULT_LENGTHS), 0).unwrap();
    let rows: Vec<String> = report
        .records
        .iter()
        .map(|r| format!("{}b {}/{}", r.bits, r.correct, r.samples))
        .collect();
    s.record(
        "6",
        "length generalization 8..1024 bits",
        report.all_at_least(1.0),
        rows.join(", "),
        t,
    );
    Some(report)
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let len = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / len;
    let my = points.iter().map(|p| p.1).sum::<f64>() / len;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn step_linearity(s: &mut Suite, report: Option<&EvalReport>) {
    let t = Instant::now();
    let Some(report) = report else {
        s.record("7", "inference steps grow linearly", false, "no length report".into(), t);
        return;
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (bits, target) in [(16, 18.0), (64, 67.0), (256, 262.0)] {
        let mean = report.record(bits).unwrap().mean_steps;
        ok &= (mean - target).abs() <= 0.15 * target;
        parts.push(format!("{bits}b mean {mean:.1} vs {target}"));
    }
    let fit: Vec<(f64, f64)> = [64, 128, 256, 512, 1024]
        .iter()
        .map(|&b| (b as f64, report.record(b).unwrap().mean_steps))
        .collect();
    let k = slope(&fit);
    ok &= (0.95..=1.10).contains(&k);
    parts.push(format!("slope over 64..1024 = {k:.4}"));
    s.record("7", "inference steps grow linearly", ok, parts.join(", "), t);
}

fn rule_fidelity(s: &mut Suite, model: Option<&NcaModel>) {
    let t = Instant::now();
    let Some(model) = model else {
        s.record("6b", "learned step equals exact step on 1e5 chaos states", false, "no model".into(), t);
        return;
    };
    let engine = Engine::new(model);
    let mut rng = stream(0xf1de, &[6]);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let n = rng.random_range(2..=64);
        let sample = sample_chaos_state(n, &mut rng).unwrap();
        if engine.step(&sample.state) != sample.next {
            mismatches += 1;
        }
    }
    s.record(
        "6b",
        "learned step equals exact step on 1e5 chaos states (n=2..64)",
        mismatches == 0,
        format!("{mismatches} mismatches"),
        t,
    );
}

fn robustness(s: &mut Suite, rows: &[(usize, usize)]) {
    let t = Instant::now();
    let get = |h| rows.iter().find(|r| r.0 == h).map(|r| r.1);
    let (h4, h16) = (get(4).unwrap(), get(16).unwrap());
    let reference = [(4, 3), (8, 9), (16, 10), (32, 10)];
    let table: Vec<String> = reference
        .iter()
        .map(|&(h, want)| match get(h) {
            Some(got) => format!("H={h} {got}/10 (ref {want})"),
            None => format!("H={h} not run (ref {want})"),
        })
        .collect();
    s.record(
        "8",
        "sweep: H=16 succeeds on >=8/10 seeds and H=4 on fewer",
        h16 >= 8 && h4 < h16,
        table.join(", "),
        t,
    );
}

fn mlp_control(s: &mut Suite) {
    let t = Instant::now();
    let config = TrainConfig::mlp();
    let (model, metrics) = train_with(init_model::<MlpModel>(&config), &config, |_| {}).unwrap();
    let engine = Engine::new(&model);
    let in_range = eval::evaluate_lengths(&engine, &[(4, 200), (6, 200)], 0).unwrap();
    let ood = eval::evaluate_lengths(&engine, &eval::default_plan(&[16, 32, 64, 128, 256]), 0).unwrap();
    let rows: Vec<String> = ood
        .records
        .iter()
        .map(|r| format!("{}b {}/{}", r.bits, r.correct, r.samples))
        .collect();
    let recorded: Vec<String> = in_range
        .records
        .iter()
        .map(|r| format!("{}b {:.1}%", r.bits, 100.0 * r.exact_match_rate))
        .collect();
    s.record(
        "9",
        "pointwise control (129 params) scores 0% at n>=16",
        model.param_count() == 129 && ood.records.iter().all(|r| r.correct == 0),
        format!(
            "{}; recorded: single-step {:.4}, in-range {}",
            rows.join(", "),
            metrics.final_single_step_acc,
            recorded.join(", ")
        ),
        t,
    );
}

fn main() -> ExitCode {
    let only = std::env::var("NCAMUL_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let full_sweep = std::env::var("NCAMUL_FULL_SWEEP").is_ok_and(|v| v == "1");
    let mut s = Suite { only, lines: Vec::new() };

    if s.wants(&["1"]) {
        symbolic_exactness(&mut s);
    }
    if s.wants(&["2"]) {
        conservation(&mut s);
    }
    if s.wants(&["3"]) {
        parameter_counts(&mut s);
    }
    if s.wants(&["4"]) {
        gradient_check(&mut s);
    }
    if s.wants(&["10"]) {
        determinism(&mut s);
    }
    if s.wants(&["5", "6", "6b", "7", "8"]) {
        let (h16, per_run) = sweep(16);
        convergence(&mut s, &h16, per_run);
        let model = h16.iter().find(|(r, _)| r.generalization_success).and_then(|(_, m)| m.as_ref());
        if s.wants(&["6", "7"]) {
            let report = length_generalization(&mut s, model);
            step_linearity(&mut s, report.as_ref());
        }
        if s.wants(&["6b"]) {
            rule_fidelity(&mut s, model);
        }
        if s.wants(&["8"]) {
            let mut rows = vec![(16, successes(&h16))];
            let extra: &[usize] = if full_sweep { &[4, 8, 32] } else { &[4] };
            for &h in extra {
                rows.push((h, successes(&sweep(h).0)));
            }
            robustness(&mut s, &rows);
        }
    }
    if s.wants(&["9"]) {
        mlp_control(&mut s);
    }

    let failed: Vec<&str> = s.lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        s.lines.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
