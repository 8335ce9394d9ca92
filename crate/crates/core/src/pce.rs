//! Pseudospectral polynomial chaos with orthonormal probabilists' Hermite bases.
//!
//! Coefficients are projections `Ŷ_i = Σ_j y(Θ_j) Ψ_i(Θ_j) w_j` on a tensor
//! Gauss-Hermite rule. The basis is orthonormal under the standard normal
//! measure, so every normalization constant is one, the mean is `Ŷ_0` and
//! the variance is the sum of the remaining squared coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PceError {
    #[error("tensor rule with {0} nodes exceeds the 10^7 limit")]
    SizeOverflow(u128),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model failed at cubature node {node}: {message}")]
    ModelFailure { node: usize, message: String },
}

/// Orthonormal probabilists' Hermite polynomial `He_n(θ) / sqrt(n!)`.
pub fn hermite_orthonormal(n: usize, theta: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (theta * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// Values `ψ_0(θ) ..= ψ_max(θ)`.
pub fn hermite_orthonormal_all(max_degree: usize, theta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_degree + 1);
    out.push(1.0);
    if max_degree == 0 {
        return out;
    }
    out.push(theta);
    for k in 1..max_degree {
        let next = (theta * out[k] - (k as f64).sqrt() * out[k - 1]) / ((k + 1) as f64).sqrt();
        out.push(next);
    }
    out
}

/// Complete total-degree multi-index set in graded lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    n_x: usize,
    n_pce: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_pce(&self) -> usize {
        self.n_pce
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// All `i ∈ ℕ₀^{n_x}` with `|i| ≤ n_pce`, ordered by degree and then
/// lexicographically descending in the leading components.
pub fn multi_indices(n_x: usize, n_pce: usize) -> Result<MultiIndexSet, PceError> {
    if n_x == 0 {
        return Err(PceError::InvalidArgument("n_x must be >= 1".into()));
    }
    let mut indices = Vec::new();
    for degree in 0..=n_pce {
        let mut current = vec![0usize; n_x];
        compositions(degree, 0, &mut current, &mut indices);
    }
    Ok(MultiIndexSet {
        n_x,
        n_pce,
        indices,
    })
}

fn compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// One-dimensional quadrature rule for the standard normal measure.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Probabilists' Gauss-Hermite rule with `n_w` nodes.
///
/// Nodes and weights come from the eigen-decomposition of the symmetric
/// Jacobi matrix (off-diagonals `sqrt(k)`). Each node is then polished with
/// Newton steps on `ψ_{n_w}` and its weight recomputed as
/// `1 / (n_w ψ_{n_w−1}(x)²)`, which keeps the small tail weights accurate.
pub fn gauss_hermite(n_w: usize) -> Result<GaussRule, PceError> {
    if !(1..=50).contains(&n_w) {
        return Err(PceError::InvalidArgument(format!(
            "n_w = {n_w} must lie in 1..=50"
        )));
    }
    if n_w == 1 {
        return Ok(GaussRule {
            nodes: vec![0.0],
            weights: vec![1.0],
        });
    }
    let jacobi = nalgebra::DMatrix::from_fn(n_w, n_w, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n_w)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let nf = n_w as f64;
    let mut nodes = Vec::with_capacity(n_w);
    let mut weights = Vec::with_capacity(n_w);
    for (x0, _) in pairs {
        let mut x = x0;
        for _ in 0..3 {
            let psi = hermite_orthonormal_all(n_w, x);
            // ψ_n' = sqrt(n) ψ_{n−1}
            let step = psi[n_w] / (nf.sqrt() * psi[n_w - 1]);
            x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let psi = hermite_orthonormal_all(n_w - 1, x);
        nodes.push(x);
        weights.push(1.0 / (nf * psi[n_w - 1] * psi[n_w - 1]));
    }
    // enforce exact symmetry of the rule
    for i in 0..n_w / 2 {
        let j = n_w - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n_w % 2 == 1 {
        nodes[n_w / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(GaussRule { nodes, weights })
}

/// Tensor-product cubature for `n_x` independent standard normal inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CubatureRule {
    n_w: usize,
    n_x: usize,
    /// Node coordinates, `n_q × n_x`, row-major.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// 1D node index per dimension, `n_q × n_x`.
    node_index: Vec<usize>,
    rule_1d: GaussRule,
}

impl CubatureRule {
    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_q(&self) -> usize {
        self.weights.len()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.n_x..(j + 1) * self.n_x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Full tensor rule with `n_w^{n_x}` nodes; the last dimension varies fastest.
pub fn tensor_rule(n_w: usize, n_x: usize) -> Result<CubatureRule, PceError> {
    if n_x == 0 {
        return Err(PceError::InvalidArgument("n_x must be >= 1".into()));
    }
    let n_q = (n_w as u128).checked_pow(n_x as u32).unwrap_or(u128::MAX);
    if n_q > 10_000_000 {
        return Err(PceError::SizeOverflow(n_q));
    }
    let rule_1d = gauss_hermite(n_w)?;
    let n_q = n_q as usize;
    let mut nodes = Vec::with_capacity(n_q * n_x);
    let mut weights = Vec::with_capacity(n_q);
    let mut node_index = Vec::with_capacity(n_q * n_x);
    let mut digits = vec![0usize; n_x];
    for _ in 0..n_q {
        let mut w = 1.0;
        for &d in &digits {
            nodes.push(rule_1d.nodes[d]);
            node_index.push(d);
            w *= rule_1d.weights[d];
        }
        weights.push(w);
        for pos in (0..n_x).rev() {
            digits[pos] += 1;
            if digits[pos] < n_w {
                break;
            }
            digits[pos] = 0;
        }
    }
    Ok(CubatureRule {
        n_w,
        n_x,
        nodes,
        weights,
        node_index,
        rule_1d,
    })
}

/// Polynomial chaos surrogate with one coefficient vector per output.
#[derive(Debug, Clone, PartialEq)]
pub struct PceSurrogate {
    basis: MultiIndexSet,
    /// `coeffs[o][i]` is the coefficient of basis term `i` for output `o`.
    coeffs: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl PceSurrogate {
    pub fn new(
        basis: MultiIndexSet,
        coeffs: Vec<Vec<f64>>,
        labels: Vec<String>,
    ) -> Result<Self, PceError> {
        if coeffs.iter().any(|c| c.len() != basis.len()) {
            return Err(PceError::InvalidArgument(
                "coefficient array length must equal the basis size".into(),
            ));
        }
        if labels.len() != coeffs.len() {
            return Err(PceError::InvalidArgument(
                "one label per output component required".into(),
            ));
        }
        Ok(PceSurrogate {
            basis,
            coeffs,
            labels,
        })
    }

    pub fn basis(&self) -> &MultiIndexSet {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_outputs(&self) -> usize {
        self.coeffs.len()
    }
}

/// Spectral projection of `model` onto `basis` using `rule`.
///
/// The model runs exactly once per node (in parallel); accumulation follows
/// node order so results do not depend on scheduling.
pub fn pseudospectral_fit<F, E>(
    model: F,
    rule: &CubatureRule,
    basis: &MultiIndexSet,
    labels: Vec<String>,
) -> Result<PceSurrogate, PceError>
where
    F: Fn(usize, &[f64]) -> Result<Vec<f64>, E> + Sync,
    E: std::fmt::Display,
{
    let values: Vec<Vec<f64>> = (0..rule.n_q())
        .into_par_iter()
        .map(|j| {
            model(j, rule.node(j)).map_err(|e| PceError::ModelFailure {
                node: j,
                message: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    fit_from_values(&values, rule, basis, labels)
}

/// Spectral projection of precomputed node values (`values[j]` at node `j`).
pub fn fit_from_values(
    values: &[Vec<f64>],
    rule: &CubatureRule,
    basis: &MultiIndexSet,
    labels: Vec<String>,
) -> Result<PceSurrogate, PceError> {
    if rule.n_x != basis.n_x {
        return Err(PceError::InvalidArgument(format!(
            "rule dimension {} differs from basis dimension {}",
            rule.n_x, basis.n_x
        )));
    }
    if values.len() != rule.n_q() {
        return Err(PceError::InvalidArgument(format!(
            "{} values for {} nodes",
            values.len(),
            rule.n_q()
        )));
    }
    let n_out = labels.len();
    if values.iter().any(|v| v.len() != n_out) {
        return Err(PceError::InvalidArgument(
            "every node value must have one entry per label".into(),
        ));
    }
    // ψ_k at every 1D node
    let psi: Vec<Vec<f64>> = rule
        .rule_1d
        .nodes
        .iter()
        .map(|&x| hermite_orthonormal_all(basis.n_pce, x))
        .collect();
    let mut coeffs = vec![vec![0.0; basis.len()]; n_out];
    for (t, idx) in basis.indices.iter().enumerate() {
        for j in 0..rule.n_q() {
            let mut basis_val = rule.weights[j];
            for (d, &deg) in idx.iter().enumerate() {
                basis_val *= psi[rule.node_index[j * rule.n_x + d]][deg];
            }
            for o in 0..n_out {
                coeffs[o][t] += values[j][o] * basis_val;
            }
        }
    }
    PceSurrogate::new(basis.clone(), coeffs, labels)
}

/// Evaluates `Σ_i Ŷ_i Ψ_i(θ)` for every output.
pub fn surrogate_eval(s: &PceSurrogate, theta: &[f64]) -> Result<Vec<f64>, PceError> {
    if theta.len() != s.basis.n_x {
        return Err(PceError::InvalidArgument(format!(
            "theta has {} entries, surrogate expects {}",
            theta.len(),
            s.basis.n_x
        )));
    }
    let psi: Vec<Vec<f64>> = theta
        .iter()
        .map(|&t| hermite_orthonormal_all(s.basis.n_pce, t))
        .collect();
    let mut out = vec![0.0; s.coeffs.len()];
    for (t, idx) in s.basis.indices.iter().enumerate() {
        let b: f64 = idx.iter().enumerate().map(|(d, &deg)| psi[d][deg]).product();
        for (o, c) in s.coeffs.iter().enumerate() {
            out[o] += c[t] * b;
        }
    }
    Ok(out)
}

/// Mean and variance per output.
pub fn moments(s: &PceSurrogate) -> (Vec<f64>, Vec<f64>) {
    let mean = s.coeffs.iter().map(|c| c[0]).collect();
    let var = s
        .coeffs
        .iter()
        .map(|c| c[1..].iter().map(|v| v * v).sum())
        .collect();
    (mean, var)
}

/// Normal input described by mean and standard deviation, truncated to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputDistribution {
    pub mean: f64,
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
}

impl InputDistribution {
    pub fn new(mean: f64, std: f64, lo: f64, hi: f64) -> Result<Self, PceError> {
        let d = InputDistribution { mean, std, lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn untruncated(mean: f64, std: f64) -> Self {
        InputDistribution {
            mean,
            std,
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<(), PceError> {
        if !(self.std >= 0.0) || !self.std.is_finite() {
            return Err(PceError::InvalidArgument(format!("std {} must be >= 0", self.std)));
        }
        if !(self.lo < self.hi) {
            return Err(PceError::InvalidArgument(format!(
                "bounds [{}, {}] must satisfy lo < hi",
                self.lo, self.hi
            )));
        }
        if !(self.lo <= self.mean && self.mean <= self.hi) {
            return Err(PceError::InvalidArgument(format!(
                "mean {} outside [{}, {}]",
                self.mean, self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.std == 0.0
    }

    /// Physical value of a standard normal germ before truncation.
    pub fn map(&self, theta: f64) -> f64 {
        self.mean + self.std * theta
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Truncated normal draw by rejection.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        loop {
            let x = self.map(rng.sample::<f64, _>(StandardNormal));
            if self.contains(x) {
                return x;
            }
        }
    }
}

/// Sorted `(value, cumulative probability)` pairs for one output.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl CdfTable {
    /// Empirical CDF of `values` (the `i`-th smallest value has probability `(i+1)/n`).
    pub fn empirical(name: &str, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len() as f64;
        let points = sorted
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, (i + 1) as f64 / n))
            .collect();
        CdfTable {
            name: name.to_string(),
            points,
        }
    }

    /// Gaussian-kernel smoothed CDF at the sample points, Silverman bandwidth.
    pub fn smoothed(name: &str, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let h = silverman_bandwidth(&sorted);
        if h <= 0.0 {
            return CdfTable::empirical(name, values);
        }
        let n = sorted.len() as f64;
        let points = sorted
            .iter()
            .map(|&x| {
                let f: f64 = sorted.iter().map(|&v| normal_cdf((x - v) / h)).sum::<f64>() / n;
                (x, f)
            })
            .collect();
        CdfTable {
            name: name.to_string(),
            points,
        }
    }

    /// Step-function CDF value at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|&(v, _)| v <= x);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    /// Smallest tabulated value with CDF at least `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let idx = self.points.partition_point(|&(_, f)| f < p);
        self.points[idx.min(self.points.len() - 1)].0
    }
}

fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n < 2 {
        return 0.0;
    }
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let q = |p: f64| sorted[((p * (n - 1) as f64).round() as usize).min(n - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function, relative error below 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Draws standard normal germs whose physical images respect every input's
/// truncation bounds (out-of-bounds components are redrawn).
pub fn sample_germs(dists: &[InputDistribution], n_samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            dists
                .iter()
                .map(|d| loop {
                    let t: f64 = rng.sample(StandardNormal);
                    if d.is_degenerate() || d.contains(d.map(t)) {
                        break t;
                    }
                })
                .collect()
        })
        .collect()
}

/// CDF tables of every surrogate output from `n_samples` germ draws.
pub fn cdf_table(
    s: &PceSurrogate,
    dists: &[InputDistribution],
    n_samples: usize,
    seed: u64,
    smooth: bool,
) -> Result<Vec<CdfTable>, PceError> {
    if n_samples < 1000 {
        return Err(PceError::InvalidArgument(format!(
            "n_samples = {n_samples} must be >= 1000"
        )));
    }
    if dists.len() != s.basis.n_x {
        return Err(PceError::InvalidArgument(format!(
            "{} distributions for a {}-dimensional surrogate",
            dists.len(),
            s.basis.n_x
        )));
    }
    let germs = sample_germs(dists, n_samples, seed);
    let outputs: Vec<Vec<f64>> = germs
        .par_iter()
        .map(|t| surrogate_eval(s, t))
        .collect::<Result<_, _>>()?;
    Ok((0..s.n_outputs())
        .map(|o| {
            let values: Vec<f64> = outputs.iter().map(|v| v[o]).collect();
            if smooth {
                CdfTable::smoothed(&s.labels[o], &values)
            } else {
                CdfTable::empirical(&s.labels[o], &values)
            }
        })
        .collect())
}

/// Writes `output_name,value,cdf` rows.
pub fn write_cdf_csv<W: std::io::Write>(mut w: W, tables: &[CdfTable]) -> std::io::Result<()> {
    writeln!(w, "output_name,value,cdf")?;
    for t in tables {
        for (v, f) in &t.points {
            writeln!(w, "{},{},{}", t.name, v, f)?;
        }
    }
    Ok(())
}

/// Writes `output_name,mean,std` rows.
pub fn write_moments_csv<W: std::io::Write>(
    mut w: W,
    names: &[String],
    mean: &[f64],
    std: &[f64],
) -> std::io::Result<()> {
    writeln!(w, "output_name,mean,std")?;
    for ((n, m), s) in names.iter().zip(mean).zip(std) {
        writeln!(w, "{n},{m},{s}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn double_factorial_odd(m: usize) -> f64 {
        // E[θ^m] for even m
        (1..m).step_by(2).map(|k| k as f64).product()
    }

    fn gaussian_moment(m: usize) -> f64 {
        if m % 2 == 1 {
            0.0
        } else {
            double_factorial_odd(m)
        }
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite_orthonormal(0, 3.7), 1.0);
        assert_eq!(hermite_orthonormal(1, 0.7), 0.7);
        assert_relative_eq!(
            hermite_orthonormal(2, 0.0),
            -1.0 / 2f64.sqrt(),
            max_relative = 1e-15
        );
        // He_3 = θ³ − 3θ
        let t = 1.3f64;
        assert_relative_eq!(
            hermite_orthonormal(3, t),
            (t.powi(3) - 3.0 * t) / 6f64.sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn orthonormality_under_quadrature() {
        let rule = gauss_hermite(10).unwrap();
        for m in 0..=9 {
            for n in 0..=9 {
                let e: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| w * hermite_orthonormal(m, x) * hermite_orthonormal(n, x))
                    .sum();
                let expected = if m == n { 1.0 } else { 0.0 };
                assert!((e - expected).abs() < 1e-10, "m={m} n={n} e={e}");
            }
        }
    }

    #[test]
    fn multi_index_counts() {
        let s = multi_indices(1, 3).unwrap();
        assert_eq!(s.indices(), &[vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(multi_indices(3, 2).unwrap().len(), 10);
        assert_eq!(multi_indices(3, 9).unwrap().len(), 220);
        let s = multi_indices(2, 2).unwrap();
        assert_eq!(s.indices()[0], vec![0, 0]);
        assert!(s.indices().windows(2).all(|w| {
            w[0].iter().sum::<usize>() <= w[1].iter().sum::<usize>()
        }));
        assert!(multi_indices(0, 2).is_err());
    }

    #[test]
    fn small_rules() {
        let r = gauss_hermite(1).unwrap();
        assert_eq!((r.nodes.clone(), r.weights.clone()), (vec![0.0], vec![1.0]));

        let r = gauss_hermite(2).unwrap();
        assert_relative_eq!(r.nodes[0], -1.0, max_relative = 1e-15);
        assert_relative_eq!(r.nodes[1], 1.0, max_relative = 1e-15);
        assert_relative_eq!(r.weights[0], 0.5, max_relative = 1e-15);

        let r = gauss_hermite(3).unwrap();
        assert_eq!(r.nodes[1], 0.0);
        assert_relative_eq!(r.nodes[2], 3f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(r.weights[1], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(r.weights[0], 1.0 / 6.0, max_relative = 1e-15);
        for m in 0..=5 {
            let q: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(m)).sum();
            assert!((q - gaussian_moment(m as usize)).abs() < 1e-14);
        }
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_hermite(51).is_err());
    }

    #[test]
    fn tensor_rules() {
        let r = tensor_rule(10, 3).unwrap();
        assert_eq!(r.n_q(), 1000);
        assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let r = tensor_rule(1, 4).unwrap();
        assert_eq!(r.n_q(), 1);
        assert_eq!(r.node(0), &[0.0; 4]);
        assert_eq!(r.weights(), &[1.0]);

        let r = tensor_rule(2, 2).unwrap();
        assert_eq!(r.n_q(), 4);
        for j in 0..4 {
            assert!(r.node(j).iter().all(|x| (x.abs() - 1.0).abs() < 1e-15));
            assert_relative_eq!(r.weights()[j], 0.25, max_relative = 1e-15);
        }
        assert!(matches!(tensor_rule(10, 8), Err(PceError::SizeOverflow(_))));
    }

    #[test]
    fn linear_fit_by_hand() {
        let rule = tensor_rule(2, 1).unwrap();
        let basis = multi_indices(1, 1).unwrap();
        let s = pseudospectral_fit(
            |_, t: &[f64]| Ok::<_, String>(vec![2.0 + 3.0 * t[0]]),
            &rule,
            &basis,
            vec!["y".into()],
        )
        .unwrap();
        assert_relative_eq!(s.coeffs()[0][0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.coeffs()[0][1], 3.0, epsilon = 1e-14);
        assert_relative_eq!(surrogate_eval(&s, &[1.0]).unwrap()[0], 5.0, epsilon = 1e-14);
        let (m, v) = moments(&s);
        assert_relative_eq!(m[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(v[0], 9.0, epsilon = 1e-13);
    }

    #[test]
    fn constant_fit() {
        let rule = tensor_rule(4, 2).unwrap();
        let basis = multi_indices(2, 3).unwrap();
        let s = pseudospectral_fit(
            |_, _: &[f64]| Ok::<_, String>(vec![4.5]),
            &rule,
            &basis,
            vec!["c".into()],
        )
        .unwrap();
        assert_relative_eq!(s.coeffs()[0][0], 4.5, epsilon = 1e-12);
        assert!(s.coeffs()[0][1..].iter().all(|c| c.abs() < 1e-12));
        assert_eq!(moments(&s).1[0], s.coeffs()[0][1..].iter().map(|c| c * c).sum::<f64>());
        assert_relative_eq!(surrogate_eval(&s, &[0.3, -2.0]).unwrap()[0], 4.5, epsilon = 1e-12);
    }

    #[test]
    fn model_failure_carries_node() {
        let rule = tensor_rule(3, 1).unwrap();
        let basis = multi_indices(1, 2).unwrap();
        let err = pseudospectral_fit(
            |j, _: &[f64]| if j == 2 { Err("boom") } else { Ok(vec![1.0]) },
            &rule,
            &basis,
            vec!["y".into()],
        )
        .unwrap_err();
        assert!(matches!(err, PceError::ModelFailure { node: 2, .. }));
    }

    #[test]
    fn polynomial_models_are_recovered_exactly() {
        // y = 1 + θ1 θ2 − 0.5 θ1² + 0.25 θ2³ has total degree 3
        let rule = tensor_rule(5, 2).unwrap();
        let basis = multi_indices(2, 4).unwrap();
        let s = pseudospectral_fit(
            |_, t: &[f64]| {
                Ok::<_, String>(vec![
                    1.0 + t[0] * t[1] - 0.5 * t[0] * t[0] + 0.25 * t[1].powi(3),
                ])
            },
            &rule,
            &basis,
            vec!["y".into()],
        )
        .unwrap();
        // Hermite expansion: θ1θ2 = ψ1ψ1, θ1² = √2 ψ2 + 1, θ2³ = √6 ψ3 + 3 ψ1
        let expect = |idx: &[usize]| match idx {
            [0, 0] => 1.0 - 0.5,
            [1, 1] => 1.0,
            [2, 0] => -0.5 * 2f64.sqrt(),
            [0, 3] => 0.25 * 6f64.sqrt(),
            [0, 1] => 0.75,
            _ => 0.0,
        };
        for (t, idx) in s.basis().indices().iter().enumerate() {
            assert!((s.coeffs()[0][t] - expect(idx)).abs() < 1e-10, "{idx:?}");
        }
    }

    #[test]
    fn cdf_tables() {
        let rule = tensor_rule(2, 1).unwrap();
        let basis = multi_indices(1, 1).unwrap();
        let ident = fit_from_values(
            &[vec![-1.0, 2.0 - 3.0, 7.0], vec![1.0, 2.0 + 3.0, 7.0]],
            &rule,
            &basis,
            vec!["theta".into(), "lin".into(), "const".into()],
        )
        .unwrap();
        let dist = [InputDistribution::untruncated(0.0, 1.0)];
        let tables = cdf_table(&ident, &dist, 100_000, 11, false).unwrap();
        assert!((tables[0].eval(0.0) - 0.5).abs() < 0.01);
        assert!((tables[1].quantile(0.975) - 7.88).abs() < 0.1);
        assert_eq!(tables[2].eval(6.999), 0.0);
        assert_eq!(tables[2].eval(7.0), 1.0);

        let smooth = cdf_table(&ident, &dist, 2000, 11, true).unwrap();
        assert!((smooth[0].eval(0.0) - 0.5).abs() < 0.05);
        assert_eq!(smooth[2].eval(7.0), 1.0);

        assert!(cdf_table(&ident, &dist, 10, 1, false).is_err());
    }

    #[test]
    fn truncated_germs_respect_bounds() {
        let d = [InputDistribution::new(0.41, 0.044, 0.0, 0.5).unwrap()];
        let g = sample_germs(&d, 5000, 3);
        assert!(g.iter().all(|t| d[0].map(t[0]) <= 0.5));
        assert!(InputDistribution::new(1.0, 0.1, 2.0, 3.0).is_err());
        assert!(InputDistribution::new(1.0, -0.1, 0.0, 3.0).is_err());
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        assert!((normal_cdf(-1.0) - 0.158655254).abs() < 1e-7);
    }
}
