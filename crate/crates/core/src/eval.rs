//! Length-generalisation and robustness experiments.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{decode_product, outer_product_encode};
use crate::model::{Engine, MlpModel, NcaModel, RuleNet, Stepper};
use crate::oracle::{decimal_digit_count, multiply_oracle, random_nbit, BitVec};
use crate::rng;
use crate::rule::default_step_cap;
use crate::train::{train_with, init_model, TrainConfig};

/// Widest operand seen in training; the generalisation factor is `n / 6`.
pub const TRAIN_MAX_BITS: usize = 6;

/// Seed used by [`generalization_success`].
pub const GENERALIZATION_SEED: u64 = 0x6e65_7261_6c69_7a65;

pub const DEFAULT_LENGTHS: [usize; 8] = [8, 16, 32, 64, 128, 256, 512, 1024];
pub const LONG_LENGTHS: [usize; 2] = [2048, 4096];

/// Evaluation sample count for width `n`: 200 up to 16 bits, 50 up to 256,
/// 10 beyond.
pub fn default_samples(n: usize) -> usize {
    match n {
        0..=16 => 200,
        17..=256 => 50,
        _ => 10,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Ood,
}

impl Split {
    pub fn of(n: usize) -> Self {
        if n <= TRAIN_MAX_BITS {
            Split::Train
        } else {
            Split::Ood
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Ood => "ood",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRecord {
    pub bits: usize,
    pub split: Split,
    pub samples: usize,
    pub correct: usize,
    pub divergences: usize,
    pub exact_match_rate: f64,
    /// Mean and max step counts over samples that reached a fixed point.
    pub mean_steps: f64,
    pub max_steps: usize,
    pub step_cap: usize,
    /// Largest decimal digit count among the true products.
    pub decimal_digits: usize,
    pub generalization_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub seed: u64,
    pub records: Vec<LengthRecord>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    bits: usize,
    split: &'a str,
    samples: usize,
    accuracy: f64,
    mean_steps: f64,
    max_steps: usize,
    decimal_digits: usize,
    gen_factor: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per length:
    /// `bits,split,samples,accuracy,mean_steps,max_steps,decimal_digits,gen_factor`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                bits: r.bits,
                split: r.split.as_str(),
                samples: r.samples,
                accuracy: r.exact_match_rate,
                mean_steps: r.mean_steps,
                max_steps: r.max_steps,
                decimal_digits: r.decimal_digits,
                gen_factor: r.generalization_factor,
            })?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidConfig(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Human-readable table in the layout of the generalisation results.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Bits\tSplit\tAccuracy\tSteps(mean/max)\tDecimal Digits\tGen. Factor");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.1}%\t{:.1}/{}\t{}\t{:.1}x",
                r.bits,
                r.split.as_str(),
                100.0 * r.exact_match_rate,
                r.mean_steps,
                r.max_steps,
                r.decimal_digits,
                r.generalization_factor
            );
        }
        s
    }

    pub fn all_at_least(&self, threshold: f64) -> bool {
        self.records.iter().all(|r| r.exact_match_rate >= threshold)
    }

    pub fn record(&self, bits: usize) -> Option<&LengthRecord> {
        self.records.iter().find(|r| r.bits == bits)
    }
}

/// Outcome of multiplying one operand pair with a stepper.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub correct: bool,
    /// `None` when no fixed point was reached within the cap.
    pub steps: Option<usize>,
    pub product_digits: usize,
}

pub fn run_pair<S: Stepper + ?Sized>(stepper: &S, a: &BitVec, b: &BitVec, n: usize) -> Result<SampleOutcome> {
    let truth = multiply_oracle(a, b);
    let g0 = outer_product_encode(a, b, n)?;
    let (correct, steps) = match stepper.run(&g0, default_step_cap(n)) {
        Ok((g, t)) => (decode_product(&g).map(|p| p == truth).unwrap_or(false), Some(t)),
        Err(Error::Divergence { .. }) | Err(Error::RuleViolation(_)) => (false, None),
        Err(e) => return Err(e),
    };
    Ok(SampleOutcome {
        correct,
        steps,
        product_digits: decimal_digit_count(&truth),
    })
}

fn summarize(bits: usize, outcomes: &[SampleOutcome]) -> LengthRecord {
    let samples = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let steps: Vec<usize> = outcomes.iter().filter_map(|o| o.steps).collect();
    let mean_steps = if steps.is_empty() {
        0.0
    } else {
        steps.iter().sum::<usize>() as f64 / steps.len() as f64
    };
    LengthRecord {
        bits,
        split: Split::of(bits),
        samples,
        correct,
        divergences: samples - steps.len(),
        exact_match_rate: if samples == 0 { 0.0 } else { correct as f64 / samples as f64 },
        mean_steps,
        max_steps: steps.iter().copied().max().unwrap_or(0),
        step_cap: default_step_cap(bits),
        decimal_digits: outcomes.iter().map(|o| o.product_digits).max().unwrap_or(0),
        generalization_factor: bits as f64 / TRAIN_MAX_BITS as f64,
    }
}

/// Operands for sample `index` at width `n`; both have their top bit set.
pub fn eval_operands(seed: u64, n: usize, index: usize) -> (BitVec, BitVec) {
    let mut r = rng::stream(seed, &[n as u64, index as u64]);
    let a = random_nbit(n, true, &mut r).expect("n >= 1");
    let b = random_nbit(n, true, &mut r).expect("n >= 1");
    (a, b)
}

/// Exact-match accuracy and step statistics at one width.
pub fn evaluate_length<S: Stepper + ?Sized>(stepper: &S, n: usize, samples: usize, seed: u64) -> Result<LengthRecord> {
    if n == 0 {
        return Err(Error::ZeroWidth);
    }
    let outcomes: Vec<SampleOutcome> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (a, b) = eval_operands(seed, n, i);
            run_pair(stepper, &a, &b, n)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(n, &outcomes))
}

/// Evaluate each `(bits, samples)` pair in order.
pub fn evaluate_lengths<S: Stepper + ?Sized>(stepper: &S, plan: &[(usize, usize)], seed: u64) -> Result<EvalReport> {
    let records = plan
        .iter()
        .map(|&(n, samples)| evaluate_length(stepper, n, samples, seed))
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        model_id: stepper.label(),
        seed,
        records,
    })
}

/// Widths paired with their default sample counts.
pub fn default_plan(lengths: &[usize]) -> Vec<(usize, usize)> {
    lengths.iter().map(|&n| (n, default_samples(n))).collect()
}

/// Every operand pair in `[0, 2^n)²`.
pub fn evaluate_exhaustive<S: Stepper + ?Sized>(stepper: &S, n: usize) -> Result<LengthRecord> {
    if n == 0 || n > 12 {
        return Err(Error::InvalidConfig("exhaustive evaluation supports 1..=12 bits".into()));
    }
    let side = 1u64 << n;
    let outcomes: Vec<SampleOutcome> = (0..side * side)
        .into_par_iter()
        .map(|k| run_pair(stepper, &BitVec::from_u64(k / side), &BitVec::from_u64(k % side), n))
        .collect::<Result<_>>()?;
    Ok(summarize(n, &outcomes))
}

/// Pass/fail used for the robustness sweep: every one of 50 random 64-bit
/// pairs and 200 random 16-bit pairs must come out exact.
pub fn generalization_success<S: Stepper + ?Sized>(stepper: &S) -> bool {
    [(16usize, 200usize), (64, 50)].iter().all(|&(n, samples)| {
        (0..samples).into_par_iter().all(|i| {
            let (a, b) = eval_operands(GENERALIZATION_SEED, n, i);
            run_pair(stepper, &a, &b, n).map(|o| o.correct).unwrap_or(false)
        })
    })
}

pub fn model_generalizes<M: RuleNet>(model: &M) -> bool {
    generalization_success(&Engine::new(model))
}

/// Length evaluation of the pointwise control.
pub fn evaluate_mlp_control(model: &MlpModel, plan: &[(usize, usize)], seed: u64) -> Result<EvalReport> {
    evaluate_lengths(&Engine::new(model), plan, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub hidden: usize,
    pub seed: u64,
    pub params: usize,
    /// Final single-step probe was exact on every sample.
    pub trained_ok: bool,
    pub final_single_step_acc: f64,
    pub first_perfect_step: Option<usize>,
    pub generalization_success: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub hidden: usize,
    pub params: usize,
    pub runs: usize,
    pub successes: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<SweepRecord>,
    pub summary: Vec<SweepSummary>,
}

impl SweepReport {
    pub fn from_records(records: Vec<SweepRecord>) -> Self {
        let mut hidden: Vec<usize> = records.iter().map(|r| r.hidden).collect();
        hidden.dedup();
        let summary = hidden
            .into_iter()
            .map(|h| {
                let rs: Vec<_> = records.iter().filter(|r| r.hidden == h).collect();
                let successes = rs.iter().filter(|r| r.generalization_success).count();
                SweepSummary {
                    hidden: h,
                    params: 20 * h + 1,
                    runs: rs.len(),
                    successes,
                    rate: successes as f64 / rs.len() as f64,
                }
            })
            .collect();
        SweepReport { records, summary }
    }

    pub fn successes(&self, hidden: usize) -> Option<usize> {
        self.summary.iter().find(|s| s.hidden == hidden).map(|s| s.successes)
    }

    /// One row per (hidden, seed).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "hidden",
            "seed",
            "params",
            "trained_ok",
            "final_single_step_acc",
            "first_perfect_step",
            "generalization_success",
        ])?;
        for r in &self.records {
            w.write_record([
                r.hidden.to_string(),
                r.seed.to_string(),
                r.params.to_string(),
                r.trained_ok.to_string(),
                r.final_single_step_acc.to_string(),
                r.first_perfect_step.map(|s| s.to_string()).unwrap_or_default(),
                r.generalization_success.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidConfig(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("Hidden\tParams\tSuccess\tRate\n");
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{}\t{}\t{} / {}\t{:.0}%",
                r.hidden,
                r.params,
                r.successes,
                r.runs,
                100.0 * r.rate
            );
        }
        s
    }
}

/// Train one NCA under `base` with the given width and seed, and score it.
pub fn sweep_cell(base: &TrainConfig, hidden: usize, seed: u64) -> (SweepRecord, Option<NcaModel>) {
    let config = TrainConfig {
        hidden,
        seed,
        ..base.clone()
    };
    let params = 20 * hidden + 1;
    match train_with(init_model::<NcaModel>(&config), &config, |_| {}) {
        Ok((model, metrics)) => {
            let success = model_generalizes(&model);
            (
                SweepRecord {
                    hidden,
                    seed,
                    params,
                    trained_ok: metrics.final_single_step_acc == 1.0,
                    final_single_step_acc: metrics.final_single_step_acc,
                    first_perfect_step: metrics.first_perfect_step,
                    generalization_success: success,
                    error: None,
                },
                Some(model),
            )
        }
        Err(e) => (
            SweepRecord {
                hidden,
                seed,
                params,
                trained_ok: false,
                final_single_step_acc: 0.0,
                first_perfect_step: None,
                generalization_success: false,
                error: Some(e.to_string()),
            },
            None,
        ),
    }
}

/// Train and score one model per `(hidden, seed)` for seeds `0..seeds`.
pub fn run_sweep<F: FnMut(&SweepRecord)>(
    hidden_list: &[usize],
    seeds: u64,
    base: &TrainConfig,
    mut on_record: F,
) -> SweepReport {
    let mut records = Vec::new();
    for &h in hidden_list {
        for seed in 0..seeds {
            let (record, _) = sweep_cell(base, h, seed);
            on_record(&record);
            records.push(record);
        }
    }
    SweepReport::from_records(records)
}
