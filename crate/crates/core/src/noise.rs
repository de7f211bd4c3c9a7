//! Truncated Karhunen–Loève representation of Q-Wiener noise.
//!
//! `dW(x, t) = Σ_s √λ_s e_s(x) Δβ_s(t)` over the eigenfunctions of the
//! Laplacian matching the grid's boundary condition: sines for Dirichlet,
//! a constant plus cosines for Neumann. Both families are exactly
//! orthonormal under the trapezoid rule on the uniform grid.
//!
//! Brownian increments come from ChaCha8 streams addressed by
//! `(key, rollout, time step)`, so any table row can be regenerated
//! independently of how work is scheduled.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Field, Grid};

/// Dense synthesis is used while `modes × nodes` stays below this.
const DENSE_SYNTHESIS_LIMIT: usize = 1 << 15;

/// Words reserved per time step inside a rollout stream.
const ROW_WORD_SHIFT: u32 = 24;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Labels for the independent random streams a run draws from.
pub mod lineage {
    pub const SIMULATE: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const PLANT: u64 = 4;
    pub const MPC: u64 = 5;
    pub const VERIFY_BASE: u64 = 6;
    pub const VERIFY_CONTROLLED: u64 = 7;
}

/// Key of a family of random streams, derived from a master seed by a
/// chain of labels (e.g. `root(seed).child(TRAIN).child(iteration)`).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    words: [u64; 4],
}

impl fmt::Debug for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StreamKey({:016x}…)", self.words[0])
    }
}

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        let mut words = [0u64; 4];
        let mut z = seed;
        for (i, w) in words.iter_mut().enumerate() {
            z = splitmix64(z ^ (i as u64).wrapping_mul(0xd1b5_4a32_d192_ed03));
            *w = z;
        }
        StreamKey { words }
    }

    pub fn child(&self, label: u64) -> Self {
        let mut words = self.words;
        let mut carry = splitmix64(label ^ 0x5851_f42d_4c95_7f2d);
        for w in words.iter_mut() {
            carry = splitmix64(*w ^ carry);
            *w = carry;
        }
        StreamKey { words }
    }

    fn rng(&self, rollout: u64, time: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(self.words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(rollout);
        rng.set_word_pos((time as u128) << ROW_WORD_SHIFT);
        rng
    }

    /// Fills `out` with i.i.d. `N(0, dt)` draws for one time step of one rollout.
    pub fn fill_increments(&self, rollout: u64, time: u64, dt: f64, out: &mut [f64]) {
        let mut rng = self.rng(rollout, time);
        let sd = dt.sqrt();
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sd * z;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Space-time white noise, all `λ_s = 1`.
    Cylindrical,
    /// User-supplied nonnegative eigenvalues.
    Diagonal,
}

#[derive(Clone)]
enum Synthesis {
    Dense,
    Spectral {
        fft: Arc<dyn Fft<f64>>,
        take_imag: bool,
        /// Frequency index of mode `s` (0-based) is `s + freq_offset`.
        freq_offset: usize,
    },
}

impl fmt::Debug for Synthesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Synthesis::Dense => f.write_str("Dense"),
            Synthesis::Spectral { fft, .. } => write!(f, "Spectral(len={})", fft.len()),
        }
    }
}

/// Eigenbasis `{(λ_s, e_s)}` of the noise covariance, truncated at `R_modes`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    grid: Grid,
    kind: NoiseKind,
    eigenvalues: Vec<f64>,
    /// Row-major `modes × nodes` samples of `e_s`.
    basis: Vec<f64>,
    /// Row-major `modes × nodes` samples of `√λ_s e_s`.
    scaled_basis: Vec<f64>,
    /// Per-mode amplitude used by spectral synthesis: `√λ_s · norm_s`.
    amplitudes: Vec<f64>,
    synthesis: Synthesis,
}

/// Reusable buffers for [`NoiseModel::synthesize`].
#[derive(Debug, Default)]
pub struct SynthesisScratch {
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl NoiseModel {
    /// Cylindrical (white) noise with the first `modes` eigenfunctions.
    pub fn build_eigenbasis(grid: Grid, modes: usize) -> Result<Self> {
        Self::build(grid, NoiseKind::Cylindrical, vec![1.0; modes])
    }

    /// Diagonal covariance with the given eigenvalues, one per retained mode.
    pub fn diagonal(grid: Grid, eigenvalues: Vec<f64>) -> Result<Self> {
        Self::build(grid, NoiseKind::Diagonal, eigenvalues)
    }

    pub fn default_modes(grid: &Grid) -> usize {
        (grid.cells() / 2).max(1)
    }

    fn build(grid: Grid, kind: NoiseKind, eigenvalues: Vec<f64>) -> Result<Self> {
        let modes = eigenvalues.len();
        let max = grid.cells() - 1;
        if modes == 0 {
            return Err(Error::param("modes", "need at least one noise mode"));
        }
        if modes > max {
            return Err(Error::TruncationTooLarge { modes, max });
        }
        if let Some(l) = eigenvalues.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::param("eigenvalues", format!("{l} is not a nonnegative number")));
        }

        let n = grid.len();
        let j = grid.cells() as f64;
        let len = grid.length();
        let norm = (2.0 / len).sqrt();
        let mut basis = vec![0.0; modes * n];
        let mut amplitudes = vec![0.0; modes];
        for s in 0..modes {
            let row = &mut basis[s * n..(s + 1) * n];
            match grid.bc() {
                BoundaryCondition::DirichletZero => {
                    let m = (s + 1) as f64;
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = norm * (m * PI * k as f64 / j).sin();
                    }
                    row[0] = 0.0;
                    row[n - 1] = 0.0;
                    amplitudes[s] = eigenvalues[s].sqrt() * norm;
                }
                BoundaryCondition::NeumannZero if s == 0 => {
                    row.fill(1.0 / len.sqrt());
                    amplitudes[s] = eigenvalues[s].sqrt() / len.sqrt();
                }
                BoundaryCondition::NeumannZero => {
                    let m = s as f64;
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = norm * (m * PI * k as f64 / j).cos();
                    }
                    amplitudes[s] = eigenvalues[s].sqrt() * norm;
                }
            }
        }
        let scaled_basis = basis
            .chunks_exact(n)
            .zip(&eigenvalues)
            .flat_map(|(row, l)| {
                let r = l.sqrt();
                row.iter().map(move |v| r * v)
            })
            .collect();

        let synthesis = if modes * n <= DENSE_SYNTHESIS_LIMIT {
            Synthesis::Dense
        } else {
            Self::spectral(&grid)
        };

        Ok(NoiseModel {
            grid,
            kind,
            eigenvalues,
            basis,
            scaled_basis,
            amplitudes,
            synthesis,
        })
    }

    fn spectral(grid: &Grid) -> Synthesis {
        let fft = FftPlanner::new().plan_fft_inverse(2 * grid.cells());
        match grid.bc() {
            BoundaryCondition::DirichletZero => Synthesis::Spectral {
                fft,
                take_imag: true,
                freq_offset: 1,
            },
            BoundaryCondition::NeumannZero => Synthesis::Spectral {
                fft,
                take_imag: false,
                freq_offset: 0,
            },
        }
    }

    /// Forces FFT-based synthesis regardless of size.
    pub fn with_spectral_synthesis(mut self) -> Self {
        self.synthesis = Self::spectral(&self.grid);
        self
    }

    /// Forces dense matrix-vector synthesis regardless of size.
    pub fn with_dense_synthesis(mut self) -> Self {
        self.synthesis = Synthesis::Dense;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Samples of `e_s` (0-based mode index).
    pub fn eigenfunction_values(&self, s: usize) -> &[f64] {
        let n = self.grid.len();
        &self.basis[s * n..(s + 1) * n]
    }

    pub fn eigenfunction(&self, s: usize) -> Field {
        Field::from_values(self.grid, self.eigenfunction_values(s).to_vec())
            .expect("basis rows have grid length")
    }

    /// Samples of `√λ_s e_s`.
    pub fn scaled_eigenfunction_values(&self, s: usize) -> &[f64] {
        let n = self.grid.len();
        &self.scaled_basis[s * n..(s + 1) * n]
    }

    /// `Σ_s √λ_s e_s Δβ_s` as a field.
    pub fn assemble_noise_field(&self, dbeta_row: &[f64]) -> Result<Field> {
        if dbeta_row.len() != self.modes() {
            return Err(Error::LengthMismatch {
                what: "increment row",
                expected: self.modes(),
                got: dbeta_row.len(),
            });
        }
        let mut out = vec![0.0; self.grid.len()];
        self.synthesize(dbeta_row, &mut out, &mut SynthesisScratch::default());
        Field::from_values(self.grid, out)
    }

    /// Writes `Σ_s √λ_s e_s(x_k) Δβ_s` into `out`, pinning Dirichlet ends.
    pub fn synthesize(&self, dbeta_row: &[f64], out: &mut [f64], ws: &mut SynthesisScratch) {
        let n = self.grid.len();
        debug_assert_eq!(dbeta_row.len(), self.modes());
        debug_assert_eq!(out.len(), n);
        match &self.synthesis {
            Synthesis::Dense => {
                out.fill(0.0);
                for (row, &c) in self.scaled_basis.chunks_exact(n).zip(dbeta_row) {
                    if c != 0.0 {
                        for (o, v) in out.iter_mut().zip(row) {
                            *o += c * v;
                        }
                    }
                }
            }
            Synthesis::Spectral {
                fft,
                take_imag,
                freq_offset,
            } => {
                let len = fft.len();
                ws.buffer.clear();
                ws.buffer.resize(len, Complex::new(0.0, 0.0));
                for (s, (&c, &amp)) in dbeta_row.iter().zip(&self.amplitudes).enumerate() {
                    ws.buffer[s + freq_offset] = Complex::new(c * amp, 0.0);
                }
                let need = fft.get_inplace_scratch_len();
                if ws.scratch.len() < need {
                    ws.scratch.resize(need, Complex::new(0.0, 0.0));
                }
                fft.process_with_scratch(&mut ws.buffer, &mut ws.scratch[..need]);
                for (o, z) in out.iter_mut().zip(&ws.buffer) {
                    *o = if *take_imag { z.im } else { z.re };
                }
            }
        }
        self.grid.pin_dirichlet(out);
    }
}

/// Brownian increments `Δβ_s(t_j)` for one rollout, `steps × modes`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementTable {
    steps: usize,
    modes: usize,
    dt: f64,
    key: StreamKey,
    rollout_index: u64,
    dbeta: Vec<f64>,
}

impl IncrementTable {
    pub fn sample(
        key: StreamKey,
        rollout_index: u64,
        steps: usize,
        model: &NoiseModel,
        dt: f64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("steps", "need at least one time step"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("{dt} is not a positive time step")));
        }
        Ok(Self::sample_unchecked(key, rollout_index, steps, model.modes(), dt))
    }

    pub(crate) fn sample_unchecked(
        key: StreamKey,
        rollout_index: u64,
        steps: usize,
        modes: usize,
        dt: f64,
    ) -> Self {
        let mut dbeta = vec![0.0; steps * modes];
        for (j, row) in dbeta.chunks_exact_mut(modes.max(1)).enumerate() {
            key.fill_increments(rollout_index, j as u64, dt, row);
        }
        IncrementTable {
            steps,
            modes,
            dt,
            key,
            rollout_index,
            dbeta,
        }
    }

    pub(crate) fn zeros(steps: usize, modes: usize, dt: f64) -> Self {
        IncrementTable {
            steps,
            modes,
            dt,
            key: StreamKey::root(0),
            rollout_index: 0,
            dbeta: vec![0.0; steps * modes],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn rollout_index(&self) -> u64 {
        self.rollout_index
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.dbeta[j * self.modes..(j + 1) * self.modes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.dbeta
    }
}

/// Samples an increment table for `(seed, rollout_index)` on the simulation lineage.
pub fn sample_increments(
    seed: u64,
    rollout_index: u64,
    steps: usize,
    model: &NoiseModel,
    dt: f64,
) -> Result<IncrementTable> {
    let key = StreamKey::root(seed).child(lineage::SIMULATE);
    IncrementTable::sample(key, rollout_index, steps, model, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirichlet(j: usize) -> Grid {
        Grid::new(0.0, 1.0, j, BoundaryCondition::DirichletZero).unwrap()
    }

    fn neumann(j: usize, len: f64) -> Grid {
        Grid::new(0.0, len, j, BoundaryCondition::NeumannZero).unwrap()
    }

    fn direct_sum(model: &NoiseModel, row: &[f64]) -> Vec<f64> {
        let n = model.grid().len();
        (0..n)
            .map(|k| {
                (0..model.modes())
                    .map(|s| model.eigenvalues()[s].sqrt() * model.eigenfunction_values(s)[k] * row[s])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dirichlet_modes_orthonormal() {
        let m = NoiseModel::build_eigenbasis(dirichlet(64), 32).unwrap();
        let e1 = m.eigenfunction(0);
        let e2 = m.eigenfunction(1);
        assert!((e1.inner_product(&e1).unwrap() - 1.0).abs() < 1e-10);
        assert!(e1.inner_product(&e2).unwrap().abs() < 1e-10);
        for s in 0..32 {
            for r in 0..32 {
                let ip = m.eigenfunction(s).inner_product(&m.eigenfunction(r)).unwrap();
                let want = if s == r { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-8, "({s},{r}) -> {ip}");
            }
        }
    }

    #[test]
    fn neumann_modes_orthonormal_and_constant_first() {
        let m = NoiseModel::build_eigenbasis(neumann(100, 10.0), 49).unwrap();
        let c = 1.0 / 10f64.sqrt();
        assert!(m.eigenfunction_values(0).iter().all(|v| (v - c).abs() < 1e-15));
        for s in 0..49 {
            for r in 0..49 {
                let ip = m.eigenfunction(s).inner_product(&m.eigenfunction(r)).unwrap();
                let want = if s == r { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-8, "({s},{r}) -> {ip}");
            }
        }
    }

    #[test]
    fn truncation_limit() {
        assert!(NoiseModel::build_eigenbasis(dirichlet(16), 15).is_ok());
        assert!(matches!(
            NoiseModel::build_eigenbasis(dirichlet(16), 16),
            Err(Error::TruncationTooLarge { modes: 16, max: 15 })
        ));
        assert!(NoiseModel::diagonal(dirichlet(16), vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn increment_variance_within_chi_square_band() {
        // 32000 N(0, 0.01) draws: the 99% two-sided chi-square interval for the
        // sample variance is 0.01 · (1 ± 2.576·sqrt(2/31999)) = [0.009796, 0.010204].
        let m = NoiseModel::build_eigenbasis(dirichlet(64), 32).unwrap();
        let t = sample_increments(7, 0, 1000, &m, 0.01).unwrap();
        let n = t.as_slice().len() as f64;
        let mean = t.as_slice().iter().sum::<f64>() / n;
        let var = t.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.0095..=0.0105).contains(&var), "{var}");
    }

    #[test]
    fn streams_deterministic_and_separated() {
        let m = NoiseModel::build_eigenbasis(dirichlet(32), 8).unwrap();
        let a = sample_increments(3, 5, 20, &m, 0.01).unwrap();
        let b = sample_increments(3, 5, 20, &m, 0.01).unwrap();
        let c = sample_increments(3, 6, 20, &m, 0.01).unwrap();
        let d = sample_increments(4, 5, 20, &m, 0.01).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a.as_slice(), c.as_slice());
        assert_ne!(a.as_slice(), d.as_slice());
        // Rows are addressed directly, not by consumption order.
        let mut row = vec![0.0; 8];
        a.key().fill_increments(5, 13, 0.01, &mut row);
        assert_eq!(row.as_slice(), a.row(13));
    }

    #[test]
    fn assemble_basics() {
        let m = NoiseModel::build_eigenbasis(dirichlet(32), 16).unwrap();
        let zero = m.assemble_noise_field(&[0.0; 16]).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));
        let mut unit = [0.0; 16];
        unit[0] = 1.0;
        let f = m.assemble_noise_field(&unit).unwrap();
        for (a, b) in f.values().iter().zip(m.eigenfunction_values(0)) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(m.assemble_noise_field(&[1.0; 3]).is_err());
    }

    #[test]
    fn two_mode_row_matches_direct_sum() {
        let m = NoiseModel::build_eigenbasis(dirichlet(32), 16).unwrap();
        let mut row = [0.0; 16];
        row[0] = 0.7;
        row[1] = -1.3;
        let f = m.assemble_noise_field(&row).unwrap();
        for (k, v) in f.values().iter().enumerate() {
            let want = 0.7 * m.eigenfunction_values(0)[k] - 1.3 * m.eigenfunction_values(1)[k];
            assert!((v - want).abs() < 1e-13);
        }
    }

    #[test]
    fn spectral_and_dense_synthesis_agree() {
        for grid in [dirichlet(50), neumann(50, 10.0)] {
            let lambdas: Vec<f64> = (0..30).map(|s| 1.0 / (1.0 + s as f64)).collect();
            let dense = NoiseModel::diagonal(grid, lambdas).unwrap().with_dense_synthesis();
            let fft = dense.clone().with_spectral_synthesis();
            let key = StreamKey::root(11);
            let mut row = vec![0.0; 30];
            key.fill_increments(0, 0, 1.0, &mut row);
            let a = dense.assemble_noise_field(&row).unwrap();
            let b = fft.assemble_noise_field(&row).unwrap();
            let oracle = direct_sum(&dense, &row);
            for k in 0..grid.len() {
                assert!((a.values()[k] - oracle[k]).abs() < 1e-12);
                assert!((b.values()[k] - oracle[k]).abs() < 1e-12, "{k}");
            }
        }
    }

    #[test]
    fn adding_modes_keeps_existing_coefficients() {
        let small = NoiseModel::build_eigenbasis(dirichlet(64), 8).unwrap();
        let big = NoiseModel::build_eigenbasis(dirichlet(64), 20).unwrap();
        for s in 0..8 {
            assert_eq!(small.eigenfunction_values(s), big.eigenfunction_values(s));
        }
        let mut row = vec![0.0; 20];
        StreamKey::root(1).fill_increments(0, 0, 1.0, &mut row);
        let f = big.assemble_noise_field(&row).unwrap();
        for s in 0..8 {
            let c = f.inner_product(&small.eigenfunction(s)).unwrap();
            assert!((c - row[s]).abs() < 1e-10);
        }
    }

    #[test]
    fn cylindrical_spatial_covariance_is_identity() {
        let m = NoiseModel::build_eigenbasis(dirichlet(32), 16).unwrap();
        let dt = 0.01;
        let n = 10_000usize;
        let key = StreamKey::root(2024);
        let mut sums = [[0.0f64; 4]; 4];
        let mut sq = [[0.0f64; 4]; 4];
        let mut row = vec![0.0; 16];
        let basis: Vec<Field> = (0..4).map(|s| m.eigenfunction(s)).collect();
        for i in 0..n {
            key.fill_increments(0, i as u64, dt, &mut row);
            let dw = m.assemble_noise_field(&row).unwrap();
            let proj: Vec<f64> = basis.iter().map(|e| dw.inner_product(e).unwrap()).collect();
            for s in 0..4 {
                for r in 0..4 {
                    let v = proj[s] * proj[r] / dt;
                    sums[s][r] += v;
                    sq[s][r] += v * v;
                }
            }
        }
        for s in 0..4 {
            for r in 0..4 {
                let mean = sums[s][r] / n as f64;
                let var = sq[s][r] / n as f64 - mean * mean;
                let se = (var / n as f64).sqrt();
                let want = if s == r { 1.0 } else { 0.0 };
                assert!((mean - want).abs() <= 3.0 * se, "({s},{r}) {mean} ± {se}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn assembly_is_linear(a in proptest::collection::vec(-2.0..2.0f64, 10),
                                  b in proptest::collection::vec(-2.0..2.0f64, 10),
                                  c in -3.0..3.0f64) {
                let m = NoiseModel::build_eigenbasis(neumann(24, 3.0), 10).unwrap();
                let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
                let fa = m.assemble_noise_field(&a).unwrap();
                let fb = m.assemble_noise_field(&b).unwrap();
                let fm = m.assemble_noise_field(&mix).unwrap();
                for k in 0..25 {
                    let want = fa.values()[k] + c * fb.values()[k];
                    prop_assert!((fm.values()[k] - want).abs() < 1e-11);
                }
            }
        }
    }
}
