//! The exact local rule of binary long multiplication on the grid.
//!
//! One synchronous step does two things, both reading only the current
//! state:
//!
//! * diagonal flow: every cell with `j > 0` moves to `(i + 1, j - 1)`;
//! * carry: column 0 keeps `v mod 2`, passes `v / 2` one row down, and also
//!   receives the flow arriving from `(i - 1, 1)`.
//!
//! Both moves preserve `Σ cell · 2^(i+j)`, so the fixed point holds the
//! product in column 0.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{outer_product_encode, Grid};
use crate::oracle::{random_nbit, BitVec};

/// Column-0 cell value split into the bit that stays and the carry that moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CarrySplit {
    pub remainder: u32,
    pub carry: u32,
}

impl CarrySplit {
    pub fn of(v: u32) -> Self {
        CarrySplit {
            remainder: v % 2,
            carry: v / 2,
        }
    }
}

/// One step of the exact rule, or an error if value would leave the grid.
///
/// Unreachable from a valid outer-product initial state.
pub fn checked_step(g: &Grid) -> Result<Grid> {
    let (rows, cols) = g.shape();
    let mut next = Grid::zeros(g.n())?;

    // Diagonal flow for columns j >= 2 (column 1 flows into column 0 below).
    for i in 0..rows {
        for j in 2..cols {
            let v = g.get(i, j);
            if v == 0 {
                continue;
            }
            if i + 1 == rows {
                return Err(Error::RuleViolation(format!(
                    "value {v} at ({i}, {j}) would flow off the bottom edge"
                )));
            }
            next.set(i + 1, j - 1, v);
        }
    }

    if cols >= 2 && g.get(rows - 1, 1) != 0 {
        return Err(Error::RuleViolation(format!(
            "value {} at ({}, 1) would flow off the bottom edge",
            g.get(rows - 1, 1),
            rows - 1
        )));
    }
    let last = CarrySplit::of(g.get(rows - 1, 0));
    if last.carry != 0 {
        return Err(Error::RuleViolation(format!(
            "carry {} leaves the bottom row",
            last.carry
        )));
    }

    let mut carry_in = 0u32;
    for i in 0..rows {
        let split = CarrySplit::of(g.get(i, 0));
        let flow = if i > 0 && cols >= 2 { g.get(i - 1, 1) } else { 0 };
        next.set(i, 0, split.remainder + carry_in + flow);
        carry_in = split.carry;
    }
    Ok(next)
}

/// One step of the exact rule.
///
/// # Panics
///
/// If the grid is malformed so that value would leave the grid. This cannot
/// happen for states reachable from [`outer_product_encode`].
pub fn ground_truth_step(g: &Grid) -> Grid {
    checked_step(g).unwrap_or_else(|e| panic!("{e}"))
}

/// True iff stepping leaves `g` unchanged: every column but the first is
/// empty and column 0 is binary.
pub fn is_fixed_point(g: &Grid) -> bool {
    let cols = g.cols();
    g.cells()
        .chunks(cols)
        .all(|row| row[0] <= 1 && row[1..].iter().all(|&c| c == 0))
}

/// Default step budget for an `n`-bit grid.
pub fn default_step_cap(n: usize) -> usize {
    4 * n + 64
}

/// Step until the first fixed point.
///
/// Returns the fixed point and the convergence step count: the index `t` of
/// the first state that repeats its predecessor (`G^t = G^(t-1)`), or 0 when
/// the initial state is already fixed. This is one more than the number of
/// state-changing updates, and it is the count an iterate-until-unchanged
/// loop observes.
pub fn evolve_to_fixed_point(g: &Grid, max_steps: usize) -> Result<(Grid, usize)> {
    if max_steps == 0 {
        return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
    }
    if is_fixed_point(g) {
        return Ok((g.clone(), 0));
    }
    let mut state = g.clone();
    let mut changes = 0;
    while !is_fixed_point(&state) {
        // One more application is needed to observe the repeat.
        if changes + 1 >= max_steps {
            return Err(Error::Divergence { max_steps });
        }
        state = checked_step(&state)?;
        changes += 1;
    }
    Ok((state, changes + 1))
}

/// States `G^0 ..= G^T` where `G^T` repeats `G^(T-1)`; a single state if
/// the initial grid is already fixed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<Grid>,
}

impl Trajectory {
    pub fn generate(g: &Grid, max_steps: usize) -> Result<Self> {
        let (_, steps) = evolve_to_fixed_point(g, max_steps)?;
        let mut states = Vec::with_capacity(steps + 1);
        states.push(g.clone());
        for _ in 0..steps {
            let next = checked_step(states.last().unwrap())?;
            states.push(next);
        }
        Ok(Trajectory { states })
    }

    /// The convergence step count `T`.
    pub fn converged_at(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &Grid {
        self.states.last().unwrap()
    }
}

/// Multiply two operands with the exact rule, zero-padding both to the
/// wider of the two.
pub fn multiply_with_rule(a: &BitVec, b: &BitVec) -> Result<(BitVec, usize)> {
    let n = a.len().max(b.len());
    let g = outer_product_encode(a, b, n)?;
    let (fixed, steps) = evolve_to_fixed_point(&g, default_step_cap(n))?;
    Ok((crate::grid::decode_product(&fixed)?, steps))
}

/// A training example for the single-step rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChaosSample {
    pub state: Grid,
    pub next: Grid,
    pub k: usize,
}

/// Draw a random intermediate state `G^k` and its successor.
///
/// Operands are uniform `n`-bit values (top bit free), `k` is uniform over
/// `0..=4n`. Past convergence the fixed point simply repeats.
pub fn sample_chaos_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<ChaosSample> {
    let a = random_nbit(n, false, rng)?;
    let b = random_nbit(n, false, rng)?;
    let k = rng.random_range(0..=4 * n);
    chaos_state_at(&a, &b, n, k)
}

/// `(G^k, G^(k+1))` for a given operand pair.
pub fn chaos_state_at(a: &BitVec, b: &BitVec, n: usize, k: usize) -> Result<ChaosSample> {
    let mut state = outer_product_encode(a, b, n)?;
    for _ in 0..k {
        if is_fixed_point(&state) {
            break;
        }
        state = checked_step(&state)?;
    }
    let next = if is_fixed_point(&state) {
        state.clone()
    } else {
        checked_step(&state)?
    };
    Ok(ChaosSample { state, next, k })
}
