//! Learned update rules and iterative inference.
//!
//! Both networks share one shape: a first layer that maps the two-channel
//! `k×k` patch around a cell to `hidden` rectified features, and a `1×1`
//! layer that combines those features into a single residual. The NCA uses
//! `k = 3`; the MLP control uses `k = 1` and therefore sees only the cell
//! itself.
//!
//! A step is relax-and-project: `G' = project(G + f(G))`, where `project`
//! rounds half away from zero and clamps at zero.

use std::sync::atomic::{AtomicU32, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{parity, EncodedGrid, Grid, HALO};
use crate::rule;

pub mod checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nca,
    Mlp,
}

impl ModelKind {
    pub fn kernel_size(self) -> usize {
        match self {
            ModelKind::Nca => 3,
            ModelKind::Mlp => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nca => "nca",
            ModelKind::Mlp => "mlp",
        }
    }
}

/// Parameters of the two-layer local network, flat in the order
/// `w1[hidden][2][k][k]`, `b1[hidden]`, `w2[hidden]`, `b2`.
#[derive(Clone, Debug, PartialEq)]
struct TwoLayer {
    kernel: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl TwoLayer {
    fn zeros(kernel: usize, hidden: usize) -> Self {
        let patch = 2 * kernel * kernel;
        TwoLayer {
            kernel,
            hidden,
            params: vec![0.0; hidden * patch + 2 * hidden + 1],
        }
    }

    fn patch_len(&self) -> usize {
        2 * self.kernel * self.kernel
    }

    fn w1_len(&self) -> usize {
        self.hidden * self.patch_len()
    }

    fn w1(&self) -> &[f64] {
        &self.params[..self.w1_len()]
    }

    fn b1(&self) -> &[f64] {
        let s = self.w1_len();
        &self.params[s..s + self.hidden]
    }

    fn w2(&self) -> &[f64] {
        let s = self.w1_len() + self.hidden;
        &self.params[s..s + self.hidden]
    }

    fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    /// Uniform `±1/sqrt(fan_in)` weights per layer, zero biases.
    fn init<R: Rng + ?Sized>(kernel: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = TwoLayer::zeros(kernel, hidden);
        let w1_len = net.w1_len();
        let bound1 = 1.0 / (net.patch_len() as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        for w in &mut net.params[..w1_len] {
            *w = rng.random_range(-bound1..bound1);
        }
        let s = w1_len + hidden;
        for w in &mut net.params[s..s + hidden] {
            *w = rng.random_range(-bound2..bound2);
        }
        net
    }

    /// Output for one cell. `hidden_out` receives the rectified features.
    ///
    /// Accumulation order is fixed: patch entries channel-major, then kernel
    /// row, then kernel column; the bias is added after the dot product.
    #[inline]
    fn cell_output(&self, patch: &[f64], hidden_out: &mut [f64]) -> f64 {
        let p = self.patch_len();
        let w1 = self.w1();
        let b1 = self.b1();
        let w2 = self.w2();
        let mut out = 0.0;
        for o in 0..self.hidden {
            let row = &w1[o * p..(o + 1) * p];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(patch) {
                acc += w * x;
            }
            let h = (acc + b1[o]).max(0.0);
            hidden_out[o] = h;
            out += w2[o] * h;
        }
        out + self.b2()
    }

    /// Accumulate `d_out · ∂output/∂params` into `grads`.
    #[inline]
    fn cell_backward(&self, patch: &[f64], hidden: &[f64], d_out: f64, grads: &mut [f64]) {
        let p = self.patch_len();
        let h_count = self.hidden;
        let w1_len = self.w1_len();
        let w2 = self.w2();
        let (gw1, rest) = grads.split_at_mut(w1_len);
        let (gb1, rest) = rest.split_at_mut(h_count);
        let (gw2, gb2) = rest.split_at_mut(h_count);
        gb2[0] += d_out;
        for o in 0..h_count {
            let h = hidden[o];
            gw2[o] += d_out * h;
            if h > 0.0 {
                let g = d_out * w2[o];
                gb1[o] += g;
                for (gw, x) in gw1[o * p..(o + 1) * p].iter_mut().zip(patch) {
                    *gw += g * x;
                }
            }
        }
    }
}

/// A learnable local update rule.
pub trait RuleNet: Clone + Send + Sync {
    fn kind(&self) -> ModelKind;
    fn hidden(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Side of the square receptive field (3 or 1).
    fn kernel_size(&self) -> usize {
        self.kind().kernel_size()
    }

    /// Network output for one cell given its encoded patch.
    fn cell_output(&self, patch: &[f64], hidden_out: &mut [f64]) -> f64;

    /// Backpropagate `d_out` through [`RuleNet::cell_output`].
    fn cell_backward(&self, patch: &[f64], hidden: &[f64], d_out: f64, grads: &mut [f64]);

    /// SHA-256 of the little-endian parameter bytes, first 16 hex digits.
    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind().as_str().as_bytes());
        for p in self.params() {
            h.update(p.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

macro_rules! two_layer_model {
    ($name:ident, $kind:expr) => {
        impl $name {
            pub fn zeros(hidden: usize) -> Self {
                $name(TwoLayer::zeros($kind.kernel_size(), hidden))
            }

            pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
                $name(TwoLayer::init($kind.kernel_size(), hidden, rng))
            }

            /// Parameters for the given flat vector.
            pub fn from_params(hidden: usize, params: Vec<f64>) -> Result<Self> {
                let expected = Self::zeros(hidden).param_count();
                if params.len() != expected {
                    return Err(Error::Checkpoint(format!(
                        "expected {expected} parameters for hidden={hidden}, got {}",
                        params.len()
                    )));
                }
                if params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Checkpoint("non-finite parameter".into()));
                }
                Ok($name(TwoLayer {
                    kernel: $kind.kernel_size(),
                    hidden,
                    params,
                }))
            }

            pub fn w1(&self) -> &[f64] {
                self.0.w1()
            }

            pub fn b1(&self) -> &[f64] {
                self.0.b1()
            }

            pub fn w2(&self) -> &[f64] {
                self.0.w2()
            }

            pub fn b2(&self) -> f64 {
                self.0.b2()
            }
        }

        impl RuleNet for $name {
            fn kind(&self) -> ModelKind {
                $kind
            }

            fn hidden(&self) -> usize {
                self.0.hidden
            }

            fn params(&self) -> &[f64] {
                &self.0.params
            }

            fn params_mut(&mut self) -> &mut [f64] {
                &mut self.0.params
            }

            #[inline]
            fn cell_output(&self, patch: &[f64], hidden_out: &mut [f64]) -> f64 {
                self.0.cell_output(patch, hidden_out)
            }

            #[inline]
            fn cell_backward(&self, patch: &[f64], hidden: &[f64], d_out: f64, grads: &mut [f64]) {
                self.0.cell_backward(patch, hidden, d_out, grads)
            }
        }
    };
}

/// Convolutional rule: 3×3 conv (2 → hidden), ReLU, 1×1 conv (hidden → 1).
/// Parameter count `20·hidden + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NcaModel(TwoLayer);

/// Pointwise control: 1×1 conv (2 → hidden), ReLU, 1×1 conv (hidden → 1).
/// Parameter count `4·hidden + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel(TwoLayer);

two_layer_model!(NcaModel, ModelKind::Nca);
two_layer_model!(MlpModel, ModelKind::Mlp);

/// Real-valued map with a grid's shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }
}

/// Fill `patch` with the encoded `k×k` neighbourhood of interior cell
/// `(i, j)` taken from a haloed encoding.
#[inline]
fn encoded_patch(x: &EncodedGrid, k: usize, i: usize, j: usize, patch: &mut [f64]) {
    let off = 1 - k / 2;
    let mut idx = 0;
    for c in 0..2 {
        for dy in 0..k {
            for dx in 0..k {
                patch[idx] = x.at(c, i + off + dy, j + off + dx);
                idx += 1;
            }
        }
    }
}

/// Same patch read straight from the integer grid, with the halo implied.
/// Produces bit-identical values to [`encoded_patch`] on `parity_encode(g)`.
#[inline]
fn grid_patch(g: &Grid, k: usize, i: usize, j: usize, patch: &mut [f64]) {
    let r = (k / 2) as isize;
    let (rows, cols) = (g.rows() as isize, g.cols() as isize);
    let kk = k * k;
    let mut idx = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let (y, x) = (i as isize + dy, j as isize + dx);
            let (v, par) = if y < 0 || x < 0 || y >= rows || x >= cols {
                (HALO, HALO)
            } else {
                let v = f64::from(g.get(y as usize, x as usize));
                (v, parity(v))
            };
            patch[idx] = v;
            patch[kk + idx] = par;
            idx += 1;
        }
    }
}

/// Apply the network to every interior cell of an encoded grid.
pub fn forward<M: RuleNet>(model: &M, x: &EncodedGrid) -> Field {
    let k = model.kernel_size();
    let (rows, cols) = x.interior_shape();
    let mut patch = vec![0.0; 2 * k * k];
    let mut hidden = vec![0.0; model.hidden()];
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            encoded_patch(x, k, i, j, &mut patch);
            values.push(model.cell_output(&patch, &mut hidden));
        }
    }
    Field { rows, cols, values }
}

/// Round half away from zero, clamp below at zero.
#[inline]
pub fn project_value(v: f64) -> u32 {
    // `as` saturates, and maps NaN to 0.
    v.round().max(0.0) as u32
}

pub fn project(field: &Field) -> Result<Grid> {
    if field.cols == 0 || field.rows != 2 * field.cols || field.values.len() != field.rows * field.cols {
        return Err(Error::ShapeMismatch {
            expected: (2 * field.cols, field.cols),
            got: (field.rows, field.cols),
        });
    }
    Ok(Grid::from_cells(
        field.cols,
        field.values.iter().map(|&v| project_value(v)).collect(),
    ))
}

/// `project(g + delta)` with a shape check.
pub fn relax_and_project(g: &Grid, delta: &Field) -> Result<Grid> {
    if (delta.rows, delta.cols) != g.shape() {
        return Err(Error::ShapeMismatch {
            expected: g.shape(),
            got: (delta.rows, delta.cols),
        });
    }
    let cells = g
        .cells()
        .iter()
        .zip(&delta.values)
        .map(|(&v, &d)| project_value(f64::from(v) + d))
        .collect();
    Ok(Grid::from_cells(g.n(), cells))
}

/// One learned step: `project(g + f(parity_encode(g)))`.
pub fn nca_step<M: RuleNet>(model: &M, g: &Grid) -> Result<Grid> {
    let delta = forward(model, &crate::grid::parity_encode(g));
    relax_and_project(g, &delta)
}

/// Pointwise counterpart of [`nca_step`] for the MLP control.
pub fn mlp_step(model: &MlpModel, g: &Grid) -> Result<Grid> {
    nca_step(model, g)
}

pub fn mlp_forward(model: &MlpModel, x: &EncodedGrid) -> Field {
    forward(model, x)
}

const ALPHABET: u64 = 5;
const MAX_CACHED_VALUE: u32 = 3;
const INVALID: u32 = u32::MAX;

struct Scratch {
    codes: Vec<u32>,
    patch: Vec<f64>,
    hidden: Vec<f64>,
}

/// Memoising stepper for a fixed model.
///
/// A cell's next value depends only on the integer values in its `k×k`
/// neighbourhood, so the projected result is cached per neighbourhood
/// pattern. Patterns whose cells all lie in `{halo, 0, 1, 2, 3}` are cached;
/// anything else is computed directly. Cached and direct results are the
/// same floating-point computation, so stepping is bit-identical to
/// [`nca_step`].
pub struct Engine<'a, M: RuleNet> {
    model: &'a M,
    /// Projected value + 1; 0 means not yet computed.
    table: Vec<AtomicU32>,
}

impl<'a, M: RuleNet> Engine<'a, M> {
    pub fn new(model: &'a M) -> Self {
        let k = model.kernel_size();
        let len = ALPHABET.pow((k * k) as u32) as usize;
        let table = (0..len).map(|_| AtomicU32::new(0)).collect();
        Engine { model, table }
    }

    pub fn model(&self) -> &M {
        self.model
    }

    #[inline]
    fn direct(&self, g: &Grid, i: usize, j: usize, patch: &mut [f64], hidden: &mut [f64]) -> u32 {
        grid_patch(g, self.model.kernel_size(), i, j, patch);
        let delta = self.model.cell_output(patch, hidden);
        project_value(f64::from(g.get(i, j)) + delta)
    }

    /// Fill `codes[x + r]` with the base-5 code of the k cells of column `x`
    /// centred on row `i` (halo = 0, value v = v + 1), or `INVALID` if any of
    /// them is outside the cached alphabet.
    fn column_codes(&self, g: &Grid, i: usize, codes: &mut [u32]) {
        let k = self.model.kernel_size();
        let r = k / 2;
        let (rows, cols) = (g.rows(), g.cols());
        codes.fill(0);
        for dy in 0..k {
            let y = i + dy;
            let row = (y >= r && y - r < rows).then(|| &g.cells()[(y - r) * cols..(y - r + 1) * cols]);
            for (x, code) in codes[r..r + cols].iter_mut().enumerate() {
                if *code == INVALID {
                    continue;
                }
                let digit = match row {
                    None => 0,
                    Some(row) if row[x] <= MAX_CACHED_VALUE => row[x] + 1,
                    Some(_) => {
                        *code = INVALID;
                        continue;
                    }
                };
                *code = *code * ALPHABET as u32 + digit;
            }
        }
    }

    fn row(&self, g: &Grid, i: usize, out: &mut [u32], scratch: &mut Scratch) {
        let k = self.model.kernel_size();
        let col_base = (ALPHABET as u32).pow(k as u32) as usize;
        self.column_codes(g, i, &mut scratch.codes);
        for (j, out) in out.iter_mut().enumerate() {
            let window = &scratch.codes[j..j + k];
            *out = if window.contains(&INVALID) {
                self.direct(g, i, j, &mut scratch.patch, &mut scratch.hidden)
            } else {
                let key = window.iter().fold(0usize, |acc, &c| acc * col_base + c as usize);
                let slot = &self.table[key];
                match slot.load(Ordering::Relaxed) {
                    0 => {
                        let v = self.direct(g, i, j, &mut scratch.patch, &mut scratch.hidden);
                        if v != u32::MAX {
                            slot.store(v + 1, Ordering::Relaxed);
                        }
                        v
                    }
                    cached => cached - 1,
                }
            };
        }
    }

    pub fn step(&self, g: &Grid) -> Grid {
        let cols = g.cols();
        let k = self.model.kernel_size();
        let mut next = Grid::zeros(g.n()).expect("grid width is non-zero");
        next.cells_mut()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each_init(
                || Scratch {
                    codes: vec![0; cols + k - 1],
                    patch: vec![0.0; 2 * k * k],
                    hidden: vec![0.0; self.model.hidden()],
                },
                |scratch, (i, row)| self.row(g, i, row, scratch),
            );
        next
    }

    /// Iterate until a state repeats. Returns the fixed point and the index
    /// `t` of the first repeated state (0 if `g0` is already fixed), the same
    /// count [`rule::evolve_to_fixed_point`] reports.
    pub fn infer(&self, g0: &Grid, max_steps: usize) -> Result<(Grid, usize)> {
        if max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        let mut g = self.step(g0);
        if &g == g0 {
            return Ok((g, 0));
        }
        for t in 2..=max_steps {
            let next = self.step(&g);
            if next == g {
                return Ok((g, t));
            }
            g = next;
        }
        Err(Error::Divergence { max_steps })
    }
}

/// Run the learned rule from `g0` to its first fixed point.
pub fn infer<M: RuleNet>(model: &M, g0: &Grid, max_steps: usize) -> Result<(Grid, usize)> {
    Engine::new(model).infer(g0, max_steps)
}

/// Anything that can drive a grid to a fixed point.
pub trait Stepper: Sync {
    fn label(&self) -> String;
    fn step(&self, g: &Grid) -> Result<Grid>;
    fn run(&self, g0: &Grid, max_steps: usize) -> Result<(Grid, usize)>;
}

/// The exact rule as a [`Stepper`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Symbolic;

impl Stepper for Symbolic {
    fn label(&self) -> String {
        "symbolic".into()
    }

    fn step(&self, g: &Grid) -> Result<Grid> {
        rule::checked_step(g)
    }

    fn run(&self, g0: &Grid, max_steps: usize) -> Result<(Grid, usize)> {
        rule::evolve_to_fixed_point(g0, max_steps)
    }
}

impl<M: RuleNet> Stepper for Engine<'_, M> {
    fn label(&self) -> String {
        format!("{}-h{}-{}", self.model.kind().as_str(), self.model.hidden(), self.model.fingerprint())
    }

    fn step(&self, g: &Grid) -> Result<Grid> {
        Ok(Engine::step(self, g))
    }

    fn run(&self, g0: &Grid, max_steps: usize) -> Result<(Grid, usize)> {
        self.infer(g0, max_steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{outer_product_encode, parity_encode};
    use crate::oracle::BitVec;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_grid(n: usize, max: u32, seed: u64) -> Grid {
        let mut rng = seeded(seed);
        let cells = (0..2 * n * n).map(|_| rng.random_range(0..=max)).collect();
        Grid::from_cells(n, cells)
    }

    /// Direct summation over the haloed input, written independently of the
    /// patch machinery.
    fn naive_forward(m: &NcaModel, x: &EncodedGrid) -> Vec<f64> {
        let h = m.hidden();
        let (rows, cols) = x.interior_shape();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                let mut o = m.b2();
                for u in 0..h {
                    let mut pre = m.b1()[u];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                pre += m.w1()[((u * 2 + c) * 3 + ky) * 3 + kx] * x.at(c, i + ky, j + kx);
                            }
                        }
                    }
                    o += m.w2()[u] * pre.max(0.0);
                }
                out[i * cols + j] = o;
            }
        }
        out
    }

    #[test]
    fn parameter_counts() {
        for (h, p) in [(4, 81), (8, 161), (16, 321), (32, 641)] {
            assert_eq!(NcaModel::zeros(h).param_count(), p);
            assert_eq!(NcaModel::zeros(h).param_count(), 20 * h + 1);
        }
        assert_eq!(MlpModel::zeros(32).param_count(), 129);
    }

    #[test]
    fn zero_model_outputs_bias() {
        let mut m = NcaModel::zeros(16);
        *m.params_mut().last_mut().unwrap() = 0.375;
        let g = random_grid(3, 3, 1);
        let f = forward(&m, &parity_encode(&g));
        assert!(f.values.iter().all(|&v| v == 0.375));
    }

    #[test]
    fn zero_model_keeps_zero_grid() {
        let m = NcaModel::zeros(16);
        let g = Grid::zeros(5).unwrap();
        assert_eq!(nca_step(&m, &g).unwrap(), g);
        let mlp = MlpModel::zeros(32);
        assert_eq!(mlp_step(&mlp, &g).unwrap(), g);
    }

    #[test]
    fn identity_passthrough_weights() {
        // One hidden unit reading the centre tap of channel 0 (values are
        // non-negative inside, so the ReLU is transparent), unit output weight.
        let mut m = NcaModel::zeros(1);
        let p = m.params_mut();
        p[4] = 1.0; // w1[0][0][1][1]
        p[19] = 1.0; // w2[0]
        let g = random_grid(4, 3, 9);
        let f = forward(&m, &parity_encode(&g));
        for (v, &c) in f.values.iter().zip(g.cells()) {
            assert_eq!(*v, f64::from(c));
        }
    }

    #[test]
    fn forward_matches_naive_summation() {
        for seed in 0..5 {
            let m = NcaModel::init(16, &mut seeded(seed));
            let g = random_grid(2, 3, 100 + seed);
            let x = parity_encode(&g);
            let fast = forward(&m, &x);
            let slow = naive_forward(&m, &x);
            for (a, b) in fast.values.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn projection_rounding() {
        assert_eq!(project_value(-0.3), 0);
        assert_eq!(project_value(1.49), 1);
        assert_eq!(project_value(2.51), 3);
        assert_eq!(project_value(0.5), 1);
        assert_eq!(project_value(1.5), 2);
        assert_eq!(project_value(-0.5), 0);
        assert_eq!(project_value(f64::NAN), 0);
        assert_eq!(project_value(1e300), u32::MAX);
    }

    #[test]
    fn project_checks_shape() {
        let bad = Field {
            rows: 3,
            cols: 2,
            values: vec![0.0; 6],
        };
        assert!(project(&bad).is_err());
        let ok = Field {
            rows: 4,
            cols: 2,
            values: vec![0.4, 0.6, -1.0, 2.5, 0.0, 0.0, 0.0, 0.0],
        };
        assert_eq!(project(&ok).unwrap().cells(), &[0, 1, 0, 3, 0, 0, 0, 0]);
        let g = Grid::zeros(3).unwrap();
        assert!(relax_and_project(&g, &ok).is_err());
    }

    #[test]
    fn engine_matches_direct_step() {
        for seed in 0..4 {
            let m = NcaModel::init(8, &mut seeded(seed));
            let engine = Engine::new(&m);
            for (k, max) in [(3, 3), (5, 7), (6, 2)] {
                let g = random_grid(k, max, seed * 31 + k as u64);
                assert_eq!(engine.step(&g), nca_step(&m, &g).unwrap());
                // Second pass reads from the table.
                assert_eq!(engine.step(&g), nca_step(&m, &g).unwrap());
            }
            let mlp = MlpModel::init(32, &mut seeded(seed));
            let e = Engine::new(&mlp);
            let g = random_grid(4, 5, seed);
            assert_eq!(e.step(&g), mlp_step(&mlp, &g).unwrap());
        }
    }

    #[test]
    fn untrained_model_does_not_multiply() {
        let m = NcaModel::init(16, &mut seeded(42));
        let a = BitVec::from_u64(181);
        let b = BitVec::from_u64(203);
        let g0 = outer_product_encode(&a, &b, 8).unwrap();
        match infer(&m, &g0, rule::default_step_cap(8)) {
            Err(Error::Divergence { .. }) => {}
            Ok((g, _)) => {
                let decoded = crate::grid::decode_product(&g).ok();
                assert_ne!(decoded, Some(crate::oracle::multiply_oracle(&a, &b)));
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn init_ranges_and_determinism() {
        let m = NcaModel::init(16, &mut seeded(0));
        assert_eq!(m.param_count(), 321);
        let bound = 1.0 / 18f64.sqrt();
        assert!(m.w1().iter().all(|w| w.abs() < bound));
        assert!(m.w2().iter().all(|w| w.abs() < 0.25));
        assert!(m.b1().iter().all(|&b| b == 0.0) && m.b2() == 0.0);
        assert!(m.params().iter().all(|p| p.is_finite()));
        assert_eq!(m, NcaModel::init(16, &mut seeded(0)));
        assert_ne!(m, NcaModel::init(16, &mut seeded(1)));
        assert_ne!(m.fingerprint(), NcaModel::init(16, &mut seeded(1)).fingerprint());
    }

    #[test]
    fn translation_equivariance() {
        let m = NcaModel::init(16, &mut seeded(7));
        let motif = [[1u32, 0, 2], [3, 1, 0], [0, 1, 1]];
        let place = |oy: usize, ox: usize| {
            let mut g = Grid::zeros(12).unwrap();
            for (dy, row) in motif.iter().enumerate() {
                for (dx, &v) in row.iter().enumerate() {
                    g.set(oy + dy, ox + dx, v);
                }
            }
            forward(&m, &parity_encode(&g))
        };
        let (a, b) = (place(4, 2), place(11, 6));
        for dy in 0..5 {
            for dx in 0..5 {
                assert_eq!(a.get(3 + dy, 1 + dx), b.get(10 + dy, 5 + dx));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn step_output_is_non_negative_integer(seed in any::<u64>(), n in 1usize..6, scale in 0.1f64..50.0) {
            let mut m = NcaModel::init(4, &mut seeded(seed));
            for p in m.params_mut() {
                *p *= scale;
            }
            let g = random_grid(n, 3, seed ^ 0x55);
            let next = nca_step(&m, &g).unwrap();
            prop_assert_eq!(next.shape(), g.shape());
            prop_assert_eq!(Engine::new(&m).step(&g), next);
        }
    }
}
