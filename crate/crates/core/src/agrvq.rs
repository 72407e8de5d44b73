//! Adaptive grouped residual vector quantization.
//!
//! Each residual stage projects its input onto two learned low-dimensional
//! subspaces and quantizes each with its own 90-entry codebook; the pair of
//! indices forms one symbol of an equivalent 8100-entry codebook. Branch `a`
//! spans the top principal directions of the stage input, branch `b` the top
//! principal directions of what branch `a` leaves behind after quantization.
//! Search is greedy: `a` first, then `b` on the remainder.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::semantic::{kmeans, nearest};

/// Entries per branch codebook.
pub const GROUP_SIZE: usize = 90;
/// Equivalent codebook size per stage.
pub const COMBINED_SIZE: usize = GROUP_SIZE * GROUP_SIZE;
pub const DEFAULT_REDUCED_DIM: usize = 8;
pub const DEFAULT_STAGES: usize = 3;
const KMEANS_ITERS: usize = 30;

/// One stage's symbol, `a · 90 + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CombinedIndex(u16);

impl CombinedIndex {
    pub fn new(value: usize) -> Result<Self> {
        if value >= COMBINED_SIZE {
            return Err(Error::IndexOutOfRange {
                what: "combined acoustic codebook",
                index: value,
                size: COMBINED_SIZE,
            });
        }
        Ok(Self(value as u16))
    }

    pub fn value(self) -> usize {
        self.0 as usize
    }

    pub fn split(self) -> (usize, usize) {
        (self.value() / GROUP_SIZE, self.value() % GROUP_SIZE)
    }
}

pub fn combine_index(a: usize, b: usize) -> Result<CombinedIndex> {
    for (what, v) in [("branch a codebook", a), ("branch b codebook", b)] {
        if v >= GROUP_SIZE {
            return Err(Error::IndexOutOfRange {
                what,
                index: v,
                size: GROUP_SIZE,
            });
        }
    }
    Ok(CombinedIndex((a * GROUP_SIZE + b) as u16))
}

pub fn split_index(c: usize) -> Result<(usize, usize)> {
    Ok(CombinedIndex::new(c)?.split())
}

/// How a stage chooses its two projection subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    /// Learned principal subspaces, branch `b` fit on branch `a`'s leftovers.
    #[default]
    Adaptive,
    /// Fixed coordinate split: first `d` coordinates, then the next `d`.
    CoordinateSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgrvqStage {
    /// `D × d` analysis projections.
    pub proj_a: Array2<f64>,
    pub proj_b: Array2<f64>,
    /// `d × D` reconstruction maps.
    pub lift_a: Array2<f64>,
    pub lift_b: Array2<f64>,
    /// `90 × d` branch codebooks.
    pub codebook_a: Array2<f64>,
    pub codebook_b: Array2<f64>,
}

/// Regularized least-squares map from projected coordinates back to the input.
fn fit_lift(projected: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
    let gram = projected.t().dot(&projected);
    let scale = gram.diag().sum() / gram.nrows().max(1) as f64;
    linalg::solve_ridge(&gram, &projected.t().dot(&target), 1e-9 * scale + 1e-12, None)
}

fn coordinate_selector(dim: usize, offset: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((dim, d), |(r, c)| if r == offset + c { 1.0 } else { 0.0 })
}

impl AgrvqStage {
    pub fn new(
        proj_a: Array2<f64>,
        proj_b: Array2<f64>,
        lift_a: Array2<f64>,
        lift_b: Array2<f64>,
        codebook_a: Array2<f64>,
        codebook_b: Array2<f64>,
    ) -> Result<Self> {
        let (dim, d) = proj_a.dim();
        if d >= dim {
            return Err(Error::InvalidParameter(format!("reduced dim {d} must be below latent dim {dim}")));
        }
        let shapes = [
            (proj_b.dim(), (dim, d)),
            (lift_a.dim(), (d, dim)),
            (lift_b.dim(), (d, dim)),
            (codebook_a.dim(), (GROUP_SIZE, d)),
            (codebook_b.dim(), (GROUP_SIZE, d)),
        ];
        for (got, want) in shapes {
            if got != want {
                return Err(Error::InvalidParameter(format!("stage matrix shape {got:?}, expected {want:?}")));
            }
        }
        let stage = Self {
            proj_a,
            proj_b,
            lift_a,
            lift_b,
            codebook_a,
            codebook_b,
        };
        if stage.matrices().iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("AGRVQ stage"));
        }
        Ok(stage)
    }

    pub(crate) fn matrices(&self) -> [&Array2<f64>; 6] {
        [&self.proj_a, &self.proj_b, &self.lift_a, &self.lift_b, &self.codebook_a, &self.codebook_b]
    }

    pub fn dim(&self) -> usize {
        self.proj_a.nrows()
    }

    pub fn reduced_dim(&self) -> usize {
        self.proj_a.ncols()
    }

    /// Train one stage on `N × D` residuals with adaptive grouping.
    pub fn train(residuals: ArrayView2<f64>, d: usize, seed: u64) -> Result<Self> {
        Self::train_with(residuals, d, seed, Grouping::Adaptive)
    }

    pub fn train_with(residuals: ArrayView2<f64>, d: usize, seed: u64, grouping: Grouping) -> Result<Self> {
        let (n, dim) = residuals.dim();
        if n < GROUP_SIZE {
            return Err(Error::InsufficientData {
                what: "residual vectors per AGRVQ stage",
                required: GROUP_SIZE,
                available: n,
            });
        }
        if d == 0 || d >= dim || (grouping == Grouping::CoordinateSplit && 2 * d > dim) {
            return Err(Error::InvalidParameter(format!("reduced dim {d} invalid for latent dim {dim}")));
        }
        if residuals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("AGRVQ residuals"));
        }

        let proj_a = match grouping {
            Grouping::Adaptive => linalg::top_directions(residuals, d, seed),
            Grouping::CoordinateSplit => coordinate_selector(dim, 0, d),
        };
        let z_a = residuals.dot(&proj_a);
        let lift_a = fit_lift(z_a.view(), residuals);
        let codebook_a = kmeans(z_a.view(), GROUP_SIZE, KMEANS_ITERS, seed ^ 0xa, true)?.centroids;
        let picked_a: Vec<usize> = z_a.outer_iter().map(|z| nearest(codebook_a.view(), &z.to_vec()).0).collect();
        let mut left = residuals.to_owned();
        for (mut row, &a) in left.outer_iter_mut().zip(&picked_a) {
            row -= &codebook_a.row(a).dot(&lift_a);
        }

        let proj_b = match grouping {
            Grouping::Adaptive => linalg::top_directions(left.view(), d, seed ^ 0xb),
            Grouping::CoordinateSplit => coordinate_selector(dim, d, d),
        };
        let z_b = left.dot(&proj_b);
        let lift_b = fit_lift(z_b.view(), left.view());
        let codebook_b = kmeans(z_b.view(), GROUP_SIZE, KMEANS_ITERS, seed ^ 0xb, true)?.centroids;
        Self::new(proj_a, proj_b, lift_a, lift_b, codebook_a, codebook_b)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Greedy two-branch quantization of one latent.
    pub fn quantize(&self, x: ArrayView1<f64>) -> Result<(CombinedIndex, Array1<f64>)> {
        self.check_dim(x.len())?;
        let z_a = x.dot(&self.proj_a);
        let a = nearest(self.codebook_a.view(), z_a.as_slice().expect("owned")).0;
        let recon_a = self.codebook_a.row(a).dot(&self.lift_a);
        let z_b = (&x - &recon_a).dot(&self.proj_b);
        let b = nearest(self.codebook_b.view(), z_b.as_slice().expect("owned")).0;
        let recon = recon_a + self.codebook_b.row(b).dot(&self.lift_b);
        Ok((combine_index(a, b)?, recon))
    }

    pub fn reconstruct(&self, index: CombinedIndex) -> Array1<f64> {
        let (a, b) = index.split();
        self.codebook_a.row(a).dot(&self.lift_a) + self.codebook_b.row(b).dot(&self.lift_b)
    }
}

/// A chain of residual stages.
#[derive(Debug, Clone, PartialEq)]
pub struct AgrvqQuantizer {
    pub stages: Vec<AgrvqStage>,
}

/// Per-stage training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// Mean squared residual norm left after this stage.
    pub residual_mse: f64,
}

/// Seed for stage `s`; stage seeds do not depend on how many stages follow.
fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_add((stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl AgrvqQuantizer {
    pub fn new(stages: Vec<AgrvqStage>) -> Result<Self> {
        let first = stages.first().ok_or_else(|| Error::InvalidParameter("quantizer needs at least one stage".into()))?;
        let (dim, d) = (first.dim(), first.reduced_dim());
        if stages.iter().any(|s| s.dim() != dim || s.reduced_dim() != d) {
            return Err(Error::InvalidParameter("stages disagree on dimensions".into()));
        }
        Ok(Self { stages })
    }

    /// Train `num_stages` stages greedily on `N × D` latents.
    pub fn train(latents: ArrayView2<f64>, num_stages: usize, d: usize, seed: u64) -> Result<(Self, Vec<StageReport>)> {
        Self::train_with(latents, num_stages, d, seed, Grouping::Adaptive)
    }

    pub fn train_with(latents: ArrayView2<f64>, num_stages: usize, d: usize, seed: u64, grouping: Grouping) -> Result<(Self, Vec<StageReport>)> {
        if num_stages == 0 {
            return Err(Error::InvalidParameter("quantizer needs at least one stage".into()));
        }
        let mut residual = latents.to_owned();
        let mut stages = Vec::with_capacity(num_stages);
        let mut reports = Vec::with_capacity(num_stages);
        for s in 0..num_stages {
            let stage = AgrvqStage::train_with(residual.view(), d, stage_seed(seed, s), grouping)?;
            let recon = quantize_rows(&stage, residual.view())?.1;
            residual -= &recon;
            reports.push(StageReport {
                residual_mse: mean_sq_norm(residual.view()),
            });
            stages.push(stage);
        }
        Ok((Self { stages }, reports))
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn dim(&self) -> usize {
        self.stages[0].dim()
    }

    pub fn reduced_dim(&self) -> usize {
        self.stages[0].reduced_dim()
    }

    fn check_stages(&self, use_stages: usize) -> Result<()> {
        if use_stages == 0 || use_stages > self.num_stages() {
            return Err(Error::InvalidParameter(format!(
                "use_stages {use_stages} outside 1..={}",
                self.num_stages()
            )));
        }
        Ok(())
    }

    /// Encode `N × D` latents with the first `use_stages` stages; one row of
    /// indices per latent.
    pub fn encode(&self, latents: ArrayView2<f64>, use_stages: usize) -> Result<Vec<Vec<CombinedIndex>>> {
        self.check_stages(use_stages)?;
        if latents.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: latents.ncols(),
            });
        }
        let mut residual = latents.to_owned();
        let mut codes = vec![Vec::with_capacity(use_stages); latents.nrows()];
        for stage in &self.stages[..use_stages] {
            let (idx, recon) = quantize_rows(stage, residual.view())?;
            residual -= &recon;
            codes.iter_mut().zip(idx).for_each(|(c, i)| c.push(i));
        }
        Ok(codes)
    }

    /// Sum of per-stage reconstructions for one row of indices.
    pub fn decode_row(&self, indices: &[CombinedIndex]) -> Result<Array1<f64>> {
        if indices.len() > self.num_stages() {
            return Err(Error::InvalidParameter(format!(
                "{} stages requested, quantizer has {}",
                indices.len(),
                self.num_stages()
            )));
        }
        let mut out = Array1::zeros(self.dim());
        for (stage, &idx) in self.stages.iter().zip(indices) {
            out += &stage.reconstruct(idx);
        }
        Ok(out)
    }

    pub fn decode(&self, indices: &[Vec<CombinedIndex>]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((indices.len(), self.dim()));
        for (mut row, idx) in out.outer_iter_mut().zip(indices) {
            row.assign(&self.decode_row(idx)?);
        }
        Ok(out)
    }
}

fn quantize_rows(stage: &AgrvqStage, x: ArrayView2<f64>) -> Result<(Vec<CombinedIndex>, Array2<f64>)> {
    let rows: Vec<ArrayView1<f64>> = x.outer_iter().collect();
    let results: Vec<(CombinedIndex, Array1<f64>)> = rows.par_iter().map(|r| stage.quantize(*r)).collect::<Result<_>>()?;
    let mut recon = Array2::zeros(x.dim());
    let mut idx = Vec::with_capacity(results.len());
    for (i, (c, r)) in results.into_iter().enumerate() {
        recon.row_mut(i).assign(&r);
        idx.push(c);
    }
    Ok((idx, recon))
}

pub(crate) fn mean_sq_norm(x: ArrayView2<f64>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
}

/// Usage of one stage's symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct StageUsage {
    pub combined_counts: Vec<u64>,
    pub branch_a_counts: Vec<u64>,
    pub branch_b_counts: Vec<u64>,
    /// `exp(H) / 8100`, in `[0, 1]`.
    pub perplexity: f64,
    pub perplexity_a: f64,
    pub perplexity_b: f64,
}

impl StageUsage {
    pub fn used_entries(&self) -> usize {
        self.combined_counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationReport {
    pub stages: Vec<StageUsage>,
}

impl UtilizationReport {
    pub fn total_count(&self) -> u64 {
        self.stages.iter().map(|s| s.combined_counts.iter().sum::<u64>()).sum()
    }
}

/// Normalized perplexity `exp(H(p)) / len(counts)`; 0 for no observations.
pub fn normalized_perplexity(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.is_empty() {
        return 0.0;
    }
    let t = total as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .sum();
    entropy.exp() / counts.len() as f64
}

/// Histogram and perplexity per stage over rows of indices.
pub fn utilization_report(indices: &[Vec<CombinedIndex>]) -> UtilizationReport {
    let stages = indices.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut usage: Vec<StageUsage> = (0..stages)
        .map(|_| StageUsage {
            combined_counts: vec![0; COMBINED_SIZE],
            branch_a_counts: vec![0; GROUP_SIZE],
            branch_b_counts: vec![0; GROUP_SIZE],
            perplexity: 0.0,
            perplexity_a: 0.0,
            perplexity_b: 0.0,
        })
        .collect();
    for row in indices {
        for (u, idx) in usage.iter_mut().zip(row) {
            let (a, b) = idx.split();
            u.combined_counts[idx.value()] += 1;
            u.branch_a_counts[a] += 1;
            u.branch_b_counts[b] += 1;
        }
    }
    for u in &mut usage {
        u.perplexity = normalized_perplexity(&u.combined_counts);
        u.perplexity_a = normalized_perplexity(&u.branch_a_counts);
        u.perplexity_b = normalized_perplexity(&u.branch_b_counts);
    }
    UtilizationReport { stages: usage }
}

/// Exhaustive two-branch search over all 8100 pairs under the greedy rule's
/// cost structure; used to quantify the greedy gap.
pub fn joint_search_error(stage: &AgrvqStage, x: ArrayView1<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..GROUP_SIZE {
        let ra = stage.codebook_a.row(a).dot(&stage.lift_a);
        for b in 0..GROUP_SIZE {
            let r = &ra + &stage.codebook_b.row(b).dot(&stage.lift_b);
            let e: f64 = x.iter().zip(r.iter()).map(|(u, v)| (u - v).powi(2)).sum();
            best = best.min(e);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Correlated Gaussian data: white noise through a random mixing matrix
    /// with a decaying spectrum.
    fn correlated(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = Array2::from_shape_fn((dim, dim), |(i, _)| gaussian(&mut rng) * 0.8f64.powi(i as i32));
        let white = Array2::from_shape_simple_fn((n, dim), || gaussian(&mut rng));
        white.dot(&mix)
    }

    #[test]
    fn combine_split_bijection() {
        let mut seen = vec![false; COMBINED_SIZE];
        for a in 0..GROUP_SIZE {
            for b in 0..GROUP_SIZE {
                let c = combine_index(a, b).unwrap();
                assert_eq!(c.split(), (a, b));
                assert_eq!(split_index(c.value()).unwrap(), (a, b));
                assert!(!seen[c.value()]);
                seen[c.value()] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(combine_index(0, 0).unwrap().value(), 0);
        assert_eq!(combine_index(89, 89).unwrap().value(), 8099);
        assert!(combine_index(90, 0).is_err());
        assert!(combine_index(0, 90).is_err());
        assert!(split_index(8100).is_err());
    }

    #[test]
    fn subspace_data_is_captured_by_branch_a() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = linalg::top_directions(Array2::from_shape_simple_fn((50, 12), || gaussian(&mut rng)).view(), d, 1);
        let coeffs = Array2::from_shape_simple_fn((400, d), || gaussian(&mut rng));
        let data = coeffs.dot(&basis.t());
        let stage = AgrvqStage::train(data.view(), d, 7).unwrap();
        let captured = data.dot(&stage.proj_a).mapv(|v| v * v).sum();
        let total = data.mapv(|v| v * v).sum();
        assert!(captured / total >= 0.999, "{}", captured / total);
    }

    #[test]
    fn ninety_distinct_points_quantize_losslessly_in_branch_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_simple_fn((90, 16), || gaussian(&mut rng));
        let stage = AgrvqStage::train(data.view(), 8, 2).unwrap();
        let z = data.dot(&stage.proj_a);
        for r in z.outer_iter() {
            let (_, d) = nearest(stage.codebook_a.view(), r.as_slice().unwrap());
            assert!(d < 1e-20);
        }
    }

    fn handmade_stage() -> AgrvqStage {
        let dim = 6;
        let d = 2;
        let proj_a = coordinate_selector(dim, 0, d);
        let proj_b = coordinate_selector(dim, 2, d);
        let mut codebook_a = Array2::zeros((GROUP_SIZE, d));
        let mut codebook_b = Array2::zeros((GROUP_SIZE, d));
        for i in 0..GROUP_SIZE {
            codebook_a[[i, 0]] = i as f64;
            codebook_a[[i, 1]] = -(i as f64) * 0.5;
            codebook_b[[i, 0]] = i as f64 * 0.1;
            codebook_b[[i, 1]] = (i % 7) as f64;
        }
        AgrvqStage::new(proj_a.clone(), proj_b.clone(), proj_a.t().to_owned(), proj_b.t().to_owned(), codebook_a, codebook_b).unwrap()
    }

    #[test]
    fn in_codebook_point_reconstructs_exactly() {
        let stage = handmade_stage();
        let x = stage.codebook_a.row(5).dot(&stage.lift_a);
        let (idx, recon) = stage.quantize(x.view()).unwrap();
        assert_eq!(idx, combine_index(5, 0).unwrap());
        assert_eq!(recon, x);
        let (idx0, r0) = stage.quantize(Array1::zeros(6).view()).unwrap();
        assert_eq!(idx0.value(), 0);
        assert!(r0.iter().all(|&v| v == 0.0));
        assert!(stage.quantize(Array1::zeros(5).view()).is_err());
    }

    #[test]
    fn greedy_rule_matches_exhaustive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = correlated(600, 16, 8);
        let stage = AgrvqStage::train(data.view(), 4, 1).unwrap();
        for _ in 0..100 {
            let x: Array1<f64> = (0..16).map(|_| gaussian(&mut rng) * 2.0).collect();
            let (idx, recon) = stage.quantize(x.view()).unwrap();
            // Brute force over all pairs with the sequential cost: best a in
            // projected space, then best b on that a's remainder.
            let za = x.dot(&stage.proj_a);
            let mut best_a = (0, f64::INFINITY);
            for a in 0..GROUP_SIZE {
                let e: f64 = za.iter().zip(stage.codebook_a.row(a)).map(|(p, q)| (p - q).powi(2)).sum();
                if e < best_a.1 {
                    best_a = (a, e);
                }
            }
            let rem = &x - &stage.codebook_a.row(best_a.0).dot(&stage.lift_a);
            let zb = rem.dot(&stage.proj_b);
            let mut best = (0, 0, f64::INFINITY);
            for a in 0..GROUP_SIZE {
                for b in 0..GROUP_SIZE {
                    if a != best_a.0 {
                        continue;
                    }
                    let e: f64 = zb.iter().zip(stage.codebook_b.row(b)).map(|(p, q)| (p - q).powi(2)).sum();
                    if e < best.2 {
                        best = (a, b, e);
                    }
                }
            }
            assert_eq!(idx.split(), (best.0, best.1));
            assert_eq!(recon, stage.reconstruct(idx));
            // Greedy can only be worse than (or equal to) the joint optimum.
            let greedy_err: f64 = x.iter().zip(recon.iter()).map(|(u, v)| (u - v).powi(2)).sum();
            assert!(joint_search_error(&stage, x.view()) <= greedy_err + 1e-9);
        }
    }

    #[test]
    fn branch_a_choice_is_nearest_in_branch() {
        let data = correlated(500, 12, 21);
        let stage = AgrvqStage::train(data.view(), 4, 3).unwrap();
        for x in data.outer_iter().take(50) {
            let (idx, _) = stage.quantize(x).unwrap();
            let (a, _) = idx.split();
            let za = x.dot(&stage.proj_a);
            let err = |k: usize| za.iter().zip(stage.codebook_a.row(k)).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            assert!((0..GROUP_SIZE).all(|k| err(a) <= err(k)));
        }
    }

    #[test]
    fn residual_energy_is_monotone_and_prefix_stable() {
        let data = correlated(2000, 24, 4);
        let (q, reports) = AgrvqQuantizer::train(data.view(), 3, 4, 9).unwrap();
        assert!(reports.windows(2).all(|w| w[1].residual_mse <= w[0].residual_mse));
        let mut prev = mean_sq_norm(data.view());
        let full = q.encode(data.view(), 3).unwrap();
        for s in 1..=3 {
            let codes = q.encode(data.view(), s).unwrap();
            for (row, f) in codes.iter().zip(&full) {
                assert_eq!(row[..], f[..s]);
            }
            let err = mean_sq_norm((&data - &q.decode(&codes).unwrap()).view());
            assert!(err <= prev, "stage {s}: {err} > {prev}");
            prev = err;
        }
        let one = q.encode(data.view(), 1).unwrap();
        let stage_only: Vec<CombinedIndex> = data.outer_iter().map(|x| q.stages[0].quantize(x).unwrap().0).collect();
        assert_eq!(one.iter().map(|r| r[0]).collect::<Vec<_>>(), stage_only);
        assert!(q.encode(data.view(), 0).is_err());
        assert!(q.encode(data.view(), 4).is_err());
    }

    #[test]
    fn first_stage_does_not_depend_on_stage_count() {
        let data = correlated(800, 16, 12);
        let (one, _) = AgrvqQuantizer::train(data.view(), 1, 4, 5).unwrap();
        let (three, _) = AgrvqQuantizer::train(data.view(), 3, 4, 5).unwrap();
        assert_eq!(one.stages[0], three.stages[0]);
    }

    #[test]
    fn decode_is_sum_of_stage_reconstructions() {
        let data = correlated(600, 16, 13);
        let (q, _) = AgrvqQuantizer::train(data.view(), 3, 4, 1).unwrap();
        let codes = q.encode(data.view(), 3).unwrap();
        let joint = q.decode(&codes).unwrap();
        for (row, c) in joint.outer_iter().zip(&codes) {
            let sum = q.stages.iter().zip(c).fold(Array1::<f64>::zeros(16), |acc, (s, &i)| acc + s.reconstruct(i));
            assert!(row.iter().zip(sum.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_indices_with_zero_codebooks_decode_to_zero() {
        let mut stage = handmade_stage();
        stage.codebook_a.fill(0.0);
        stage.codebook_b.fill(0.0);
        let q = AgrvqQuantizer::new(vec![stage.clone(), stage]).unwrap();
        let out = q.decode(&vec![vec![CombinedIndex::default(); 2]; 4]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adaptive_grouping_beats_coordinate_split() {
        for seed in 0..10 {
            let data = correlated(1500, 32, 100 + seed);
            let adaptive = AgrvqStage::train_with(data.view(), 4, seed, Grouping::Adaptive).unwrap();
            let split = AgrvqStage::train_with(data.view(), 4, seed, Grouping::CoordinateSplit).unwrap();
            let err = |s: &AgrvqStage| {
                data.outer_iter()
                    .map(|x| {
                        let (_, r) = s.quantize(x).unwrap();
                        (&x - &r).mapv(|v| v * v).sum()
                    })
                    .sum::<f64>()
            };
            assert!(err(&adaptive) <= err(&split), "seed {seed}");
        }
    }

    #[test]
    fn utilization_perplexity() {
        let all: Vec<Vec<CombinedIndex>> = (0..COMBINED_SIZE).map(|c| vec![CombinedIndex::new(c).unwrap()]).collect();
        let rep = utilization_report(&all);
        assert!((rep.stages[0].perplexity - 1.0).abs() < 1e-9);
        assert!((rep.stages[0].perplexity_a - 1.0).abs() < 1e-9);
        let constant = vec![vec![CombinedIndex::new(17).unwrap(); 2]; 50];
        let rep = utilization_report(&constant);
        assert!((rep.stages[0].perplexity - 1.0 / 8100.0).abs() < 1e-12);
        assert_eq!(rep.total_count(), 100);
        assert_eq!(rep.stages[1].used_entries(), 1);
    }

    #[test]
    fn training_errors() {
        let data = correlated(80, 16, 1);
        assert!(matches!(AgrvqStage::train(data.view(), 4, 0), Err(Error::InsufficientData { required: 90, .. })));
        let data = correlated(200, 16, 1);
        assert!(AgrvqStage::train(data.view(), 16, 0).is_err());
        assert!(AgrvqStage::train_with(data.view(), 9, 0, Grouping::CoordinateSplit).is_err());
    }

    #[test]
    fn rank_deficient_data_still_trains() {
        let data = Array2::from_shape_fn((200, 10), |(i, j)| if j == 0 { (i as f64).sin() } else { 0.0 });
        let stage = AgrvqStage::train(data.view(), 3, 0).unwrap();
        let gram = stage.proj_a.t().dot(&stage.proj_a);
        assert!((gram[[1, 1]] - 1.0).abs() < 1e-9 && gram[[0, 1]].abs() < 1e-9);
    }
}
