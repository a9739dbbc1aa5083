//! Bayesian logistic regression under a Gaussian prior `N(0, λ⁻¹ I)` with a
//! Laplace approximation of the posterior.
//!
//! The MAP mean minimizes
//!
//! ```text
//! J(w) = (λ/2)·wᵀw − Σᵢ [fᵢ ln σ(xᵢw) + (1 − fᵢ) ln(1 − σ(xᵢw))]
//! ```
//!
//! and the posterior precision is the Hessian of `J` at that mean,
//! `H = Xᵀ C X + λI` with `Cᵢᵢ = σ(xᵢw)(1 − σ(xᵢw))`. The covariance `H⁻¹` is
//! never formed; sampling goes through the Cholesky factor of `H`.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::features::FeatureVector;
use crate::linalg::{axpy, cholesky, cholesky_solve, dot, gemm_tn, norm_inf, solve_lower_transpose, Matrix};

/// Logistic function, evaluated on the branch that cannot overflow.
///
/// The result is clamped to the open interval `(0, 1)`: saturated inputs map
/// to the smallest normal `f64` or to the largest `f64` below one.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + eᶻ)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `ln σ(z)`.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// One observed (features, binary reward) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub features: FeatureVector,
    pub reward: bool,
    pub round: u64,
}

#[derive(Debug, Clone)]
struct FeatureGroup {
    features: Vec<f64>,
    positives: f64,
    negatives: f64,
    /// Set when `features = left ⊗ right`: the block holding `left`, and `right`.
    outer: Option<(usize, Vec<f64>)>,
}

/// All observations seen so far.
///
/// Rows with bit-identical feature vectors are also pooled into weighted
/// groups; the objective and its derivatives are evaluated over the groups,
/// which is exact and much cheaper once the agent revisits the same pairs.
/// Rows pushed with [`ObservationHistory::push_outer`] additionally share a
/// block per distinct left factor, so their Hessian contribution is summed
/// as `Σ_blocks (l lᵀ) ⊗ (Σ aᵢ rᵢ rᵢᵀ)`.
#[derive(Debug, Clone)]
pub struct ObservationHistory {
    dim: usize,
    rows: Vec<InteractionRecord>,
    groups: Vec<FeatureGroup>,
    index: HashMap<Vec<u64>, usize>,
    blocks: Vec<Vec<f64>>,
    block_index: HashMap<Vec<u64>, usize>,
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

impl ObservationHistory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            groups: Vec::new(),
            index: HashMap::new(),
            blocks: Vec::new(),
            block_index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[InteractionRecord] {
        &self.rows
    }

    /// Number of distinct feature vectors.
    pub fn distinct(&self) -> usize {
        self.groups.len()
    }

    pub fn push(&mut self, record: InteractionRecord) -> Result<()> {
        check_len("observation features", self.dim, record.features.len())?;
        self.insert(record, None);
        Ok(())
    }

    /// Appends a row whose features are the Kronecker product `left ⊗ right`,
    /// i.e. entry `i·right.len() + j` is `left[i]·right[j]`.
    pub fn push_outer(&mut self, left: &[f64], right: &[f64], reward: bool, round: u64) -> Result<()> {
        check_len("outer product features", self.dim, left.len() * right.len())?;
        if let Some(first) = self.blocks.first() {
            check_len("outer product left factor", first.len(), left.len())?;
        }
        let features: Vec<f64> = left
            .iter()
            .flat_map(|&a| right.iter().map(move |&b| a * b))
            .collect();
        let block = match self.block_index.get(&bits(left)) {
            Some(&b) => b,
            None => {
                self.blocks.push(left.to_vec());
                self.block_index.insert(bits(left), self.blocks.len() - 1);
                self.blocks.len() - 1
            }
        };
        let record = InteractionRecord {
            features: FeatureVector::new(features)?,
            reward,
            round,
        };
        self.insert(record, Some((block, right.to_vec())));
        Ok(())
    }

    fn insert(&mut self, record: InteractionRecord, outer: Option<(usize, Vec<f64>)>) {
        let key = bits(record.features.as_slice());
        let slot = match self.index.get(&key) {
            Some(&g) => g,
            None => {
                self.groups.push(FeatureGroup {
                    features: record.features.as_slice().to_vec(),
                    positives: 0.0,
                    negatives: 0.0,
                    outer,
                });
                self.index.insert(key, self.groups.len() - 1);
                self.groups.len() - 1
            }
        };
        if record.reward {
            self.groups[slot].positives += 1.0;
        } else {
            self.groups[slot].negatives += 1.0;
        }
        self.rows.push(record);
    }

    /// Convenience for tests and examples: append raw features with a reward.
    pub fn push_raw(&mut self, features: Vec<f64>, reward: bool) -> Result<()> {
        let round = self.rows.len() as u64;
        self.push(InteractionRecord {
            features: FeatureVector::new(features)?,
            reward,
            round,
        })
    }

    /// `xᵢ·w` for every group.
    fn margins(&self, w: &[f64]) -> Vec<f64> {
        self.groups.iter().map(|g| dot(&g.features, w)).collect()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Usage(format!("lambda must be positive and finite, got {lambda}")))
    }
}

/// `(σ(z), σ(−z))` with one exponential; same values as two [`sigmoid`] calls.
fn sigmoid_pair(z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let (big, small) = (1.0 / (1.0 + e), e / (1.0 + e));
    let clamp = |s: f64| s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    if z >= 0.0 {
        (clamp(big), clamp(small))
    } else {
        (clamp(small), clamp(big))
    }
}

/// `J(w)`: negative log-likelihood plus the `(λ/2)‖w‖²` prior term.
pub fn neg_log_posterior(w: &[f64], history: &ObservationHistory, lambda: f64) -> Result<f64> {
    check_len("weights", history.dim, w.len())?;
    Ok(objective(w, &history.margins(w), history, lambda))
}

fn objective(w: &[f64], margins: &[f64], history: &ObservationHistory, lambda: f64) -> f64 {
    let mut total = 0.5 * lambda * dot(w, w);
    for (g, &z) in history.groups.iter().zip(margins) {
        if g.positives > 0.0 {
            total += g.positives * softplus(-z);
        }
        if g.negatives > 0.0 {
            total += g.negatives * softplus(z);
        }
    }
    total
}

/// `J(w + t·s) − J(w)`, computed term by term so that decreases far below
/// the rounding of `J` itself are still resolved.
fn objective_change(
    w: &[f64],
    s: &[f64],
    t: f64,
    margins: &[f64],
    step_margins: &[f64],
    history: &ObservationHistory,
    lambda: f64,
) -> f64 {
    // (λ/2)(‖w + ts‖² − ‖w‖²) = λ t s·(w + ts/2)
    let mut total = lambda * t * (dot(s, w) + 0.5 * t * dot(s, s));
    for (g, (&z, &dz)) in history.groups.iter().zip(margins.iter().zip(step_margins)) {
        let h = t * dz;
        if g.positives > 0.0 {
            total += g.positives * softplus_change(-z, -h);
        }
        if g.negatives > 0.0 {
            total += g.negatives * softplus_change(z, h);
        }
    }
    total
}

/// `softplus(a + h) − softplus(a) = ln(1 + σ(a)(eʰ − 1))`.
fn softplus_change(a: f64, h: f64) -> f64 {
    (sigmoid(a) * h.exp_m1()).ln_1p()
}

/// `∇J(w) = λw + Σᵢ (σ(xᵢw) − fᵢ) xᵢ`.
pub fn gradient(w: &[f64], history: &ObservationHistory, lambda: f64) -> Result<Vec<f64>> {
    check_len("weights", history.dim, w.len())?;
    Ok(gradient_at(w, &history.margins(w), history, lambda))
}

fn gradient_at(w: &[f64], margins: &[f64], history: &ObservationHistory, lambda: f64) -> Vec<f64> {
    let mut g: Vec<f64> = w.iter().map(|v| lambda * v).collect();
    for (grp, &z) in history.groups.iter().zip(margins) {
        let coef = (grp.positives + grp.negatives) * sigmoid(z) - grp.positives;
        for (gi, xi) in g.iter_mut().zip(&grp.features) {
            *gi += coef * xi;
        }
    }
    g
}

/// `∇²J(w) = Xᵀ C(w) X + λI`.
pub fn hessian(w: &[f64], history: &ObservationHistory, lambda: f64) -> Result<Matrix> {
    check_len("weights", history.dim, w.len())?;
    Ok(hessian_at(&history.margins(w), history, lambda))
}

fn hessian_at(margins: &[f64], history: &ObservationHistory, lambda: f64) -> Matrix {
    let d = history.dim;
    let mut h = Matrix::scaled_identity(d, lambda);

    // plain rows scaled by √aᵢ, so that Σ aᵢ xᵢ xᵢᵀ = YᵀY
    let mut scaled: Vec<f64> = Vec::new();
    // per block: Σ aᵢ rᵢ rᵢᵀ over the rows that share the block's left factor
    let mut block_sums: Vec<Option<Vec<f64>>> = vec![None; history.blocks.len()];
    for (g, &z) in history.groups.iter().zip(margins) {
        let (p, q) = sigmoid_pair(z);
        let a = (g.positives + g.negatives) * p * q;
        match &g.outer {
            None => {
                let root = a.sqrt();
                scaled.extend(g.features.iter().map(|x| root * x));
            }
            Some((b, right)) => {
                let r = right.len();
                let s = block_sums[*b].get_or_insert_with(|| vec![0.0; r * r]);
                for j in 0..r {
                    let sj = a * right[j];
                    for l in j..r {
                        s[j * r + l] += sj * right[l];
                    }
                }
            }
        }
    }
    gemm_tn(d, scaled.len() / d.max(1), d, &scaled, &scaled, 1.0, h.as_mut_slice());

    // Blocks: H[(i,j),(k,l)] += Σ_b left_b[i]·left_b[k]·S_b[j,l]. With one row
    // of left products and one of S per block this is a single product
    // (pairs i ≤ k) × (j, l), scattered into the upper block triangle.
    let mut width = 0;
    let mut lefts: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    for (left, sum) in history.blocks.iter().zip(block_sums) {
        let Some(mut s) = sum else { continue };
        let r = d / left.len();
        width = left.len();
        for j in 0..r {
            for l in 0..j {
                s[j * r + l] = s[l * r + j];
            }
        }
        for (i, &li) in left.iter().enumerate() {
            lefts.extend(left[i..].iter().map(|&lk| li * lk));
        }
        sums.extend_from_slice(&s);
    }
    if width > 0 {
        let r = d / width;
        let pairs = width * (width + 1) / 2;
        let n_blocks = sums.len() / (r * r);
        let mut product = vec![0.0; pairs * r * r];
        gemm_tn(pairs, n_blocks, r * r, &lefts, &sums, 0.0, &mut product);
        let data = h.as_mut_slice();
        let mut pair = 0;
        for i in 0..width {
            for k in i..width {
                let block = &product[pair * r * r..(pair + 1) * r * r];
                for j in 0..r {
                    let row = (i * r + j) * d + k * r;
                    for (hv, pv) in data[row..row + r].iter_mut().zip(&block[j * r..(j + 1) * r]) {
                        *hv += pv;
                    }
                }
                pair += 1;
            }
        }
    }
    h.symmetrize_from_upper();
    h
}


/// `σ(features · w)`.
pub fn predict(w: &[f64], features: &[f64]) -> Result<f64> {
    check_len("features", w.len(), features.len())?;
    Ok(sigmoid(dot(w, features)))
}

/// Stopping rule and iteration budget for [`fit_map_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Maximum number of Newton steps; 0 only re-evaluates the posterior at the start point.
    pub max_iter: usize,
    /// Converged once `‖∇J‖∞ ≤ tol · max(1, ‖w‖∞)`.
    pub tol: f64,
    /// Step halvings tried before giving up on a direction.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 25,
            tol: 1e-8,
            max_halvings: 50,
        }
    }
}

/// Laplace posterior `N(mean, precision⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    mean: Vec<f64>,
    precision: Matrix,
    factor: Matrix,
    lambda: f64,
    fitted_rounds: usize,
    iterations: usize,
    converged: bool,
    /// `precision` is exactly `∇²J(mean)` over the first `fitted_rounds` rows.
    exact_hessian: bool,
}

impl PosteriorState {
    /// The prior: zero mean, precision `λI`.
    pub fn prior(dim: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            mean: vec![0.0; dim],
            precision: Matrix::scaled_identity(dim, lambda),
            factor: Matrix::scaled_identity(dim, lambda.sqrt()),
            lambda,
            fitted_rounds: 0,
            iterations: 0,
            converged: true,
            exact_hessian: true,
        })
    }

    /// Builds a state from an explicit mean and symmetric positive definite precision.
    pub fn from_precision(mean: Vec<f64>, precision: Matrix, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if !precision.is_square() || precision.rows() != mean.len() {
            return Err(Error::Dimension(format!(
                "precision is {}x{}, mean has length {}",
                precision.rows(),
                precision.cols(),
                mean.len()
            )));
        }
        let factor = cholesky(&precision)?;
        Ok(Self {
            mean,
            precision,
            factor,
            lambda,
            fitted_rounds: 0,
            iterations: 0,
            converged: true,
            exact_hessian: false,
        })
    }

    /// Builds a state from a mean and a lower-triangular factor `L` with `H = L Lᵀ`.
    pub fn from_factor(mean: Vec<f64>, factor: Matrix, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let d = mean.len();
        if !factor.is_square() || factor.rows() != d {
            return Err(Error::Dimension("factor does not match mean".into()));
        }
        for i in 0..d {
            if !(factor.get(i, i) > 0.0) {
                return Err(Error::Numerical(format!("factor pivot {i} is not positive")));
            }
            for j in (i + 1)..d {
                if factor.get(i, j) != 0.0 {
                    return Err(Error::Numerical("factor is not lower triangular".into()));
                }
            }
        }
        let precision = crate::linalg::lower_times_transpose(&factor);
        Ok(Self {
            mean,
            precision,
            factor,
            lambda,
            fitted_rounds: 0,
            iterations: 0,
            converged: true,
            exact_hessian: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    /// Lower-triangular Cholesky factor of the precision.
    pub fn precision_factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of observations the mean was fitted on.
    pub fn fitted_rounds(&self) -> usize {
        self.fitted_rounds
    }

    /// Newton steps taken by the fit that produced this state.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Solves `H x = b`, i.e. applies the posterior covariance.
    pub fn apply_covariance(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("vector", self.dim(), b.len())?;
        Ok(cholesky_solve(&self.factor, b))
    }

    /// Binary dump: `u32` dim, `f64` λ, mean, factor (row-major), all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(12 + 8 * (d + d * d));
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&self.lambda.to_le_bytes());
        for v in self.mean.iter().chain(self.factor.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |offset: usize| Error::Format {
            offset: offset as u64,
            message: "truncated posterior file".into(),
        };
        if bytes.len() < 12 {
            return Err(short(bytes.len()));
        }
        let d = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let expected = 12 + 8 * (d + d * d);
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: bytes.len().min(expected) as u64,
                message: format!("posterior of dim {d} needs {expected} bytes, got {}", bytes.len()),
            });
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let lambda = f(4);
        let mean: Vec<f64> = (0..d).map(|i| f(12 + 8 * i)).collect();
        let factor: Vec<f64> = (0..d * d).map(|i| f(12 + 8 * (d + i))).collect();
        Self::from_factor(mean, Matrix::from_row_major(d, d, factor)?, lambda)
    }
}

/// MAP fit with the default Newton options.
pub fn fit_map(
    history: &ObservationHistory,
    lambda: f64,
    warm_start: Option<&[f64]>,
) -> Result<PosteriorState> {
    fit_map_with(history, lambda, warm_start, &NewtonOptions::default())
}

/// Damped Newton iterations on `J` followed by the Laplace precision at the final mean.
///
/// Each step tries the full Newton direction and halves it until `J` does
/// not increase. Hitting `max_iter` is not an error; it shows up as
/// `converged() == false` on the returned state.
pub fn fit_map_with(
    history: &ObservationHistory,
    lambda: f64,
    warm_start: Option<&[f64]>,
    options: &NewtonOptions,
) -> Result<PosteriorState> {
    check_lambda(lambda)?;
    let d = history.dim;
    let w = match warm_start {
        Some(start) => {
            check_len("warm start", d, start.len())?;
            start.to_vec()
        }
        None => vec![0.0; d],
    };
    newton(history, lambda, w, None, options)
}

/// Refits after new rows were appended to the history `previous` was fitted
/// on with the same `lambda`, warm-started at `previous.mean()`.
///
/// When `previous` came from a fit (or is the prior) its precision is the
/// Hessian at its mean over the older rows, so the first Newton step only
/// adds the new rows to it instead of rebuilding it. The result is the same
/// as [`fit_map_with`] up to rounding.
pub fn refit_map(
    history: &ObservationHistory,
    lambda: f64,
    previous: &PosteriorState,
    options: &NewtonOptions,
) -> Result<PosteriorState> {
    check_lambda(lambda)?;
    check_len("posterior", history.dim, previous.dim())?;
    let w = previous.mean.clone();
    let reusable = previous.exact_hessian
        && previous.lambda == lambda
        && previous.fitted_rounds <= history.len();
    if !reusable {
        return newton(history, lambda, w, None, options);
    }
    let d = history.dim;
    let mut h = previous.precision.clone();
    let data = h.as_mut_slice();
    for row in &history.rows[previous.fitted_rounds..] {
        let x = row.features.as_slice();
        let (p, q) = sigmoid_pair(dot(x, &w));
        let a = p * q;
        for i in 0..d {
            axpy(a * x[i], &x[i..], &mut data[i * d + i..(i + 1) * d]);
        }
    }
    h.symmetrize_from_upper();
    newton(history, lambda, w, Some(h), options)
}

fn newton(
    history: &ObservationHistory,
    lambda: f64,
    mut w: Vec<f64>,
    mut first_hessian: Option<Matrix>,
    options: &NewtonOptions,
) -> Result<PosteriorState> {
    let mut iterations = 0;
    let mut converged = false;
    let mut margins = history.margins(&w);
    let (precision, factor) = loop {
        let g = gradient_at(&w, &margins, history, lambda);
        let h = match first_hessian.take() {
            Some(h) => h,
            None => hessian_at(&margins, history, lambda),
        };
        let l = cholesky(&h).map_err(|e| {
            Error::Numerical(format!("posterior precision factorization failed: {e}"))
        })?;
        if norm_inf(&g) <= options.tol * norm_inf(&w).max(1.0) {
            converged = true;
            break (h, l);
        }
        if iterations == options.max_iter {
            break (h, l);
        }
        let step: Vec<f64> = cholesky_solve(&l, &g).iter().map(|v| -v).collect();
        let step_margins = history.margins(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=options.max_halvings {
            if objective_change(&w, &step, t, &margins, &step_margins, history, lambda) <= 0.0 {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No decrease along the Newton direction.
            break (h, l);
        }
        axpy(t, &step, &mut w);
        margins = history.margins(&w);
    };
    Ok(PosteriorState {
        mean: w,
        precision,
        factor,
        lambda,
        fitted_rounds: history.len(),
        iterations,
        converged,
        exact_hessian: true,
    })
}

/// One draw from `N(mean, H⁻¹)`: `mean + L⁻ᵀ z` with `z` standard normal.
pub fn sample_weights<R: Rng + ?Sized>(state: &PosteriorState, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..state.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let offset = solve_lower_transpose(&state.factor, &z);
    state.mean.iter().zip(offset).map(|(m, o)| m + o).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn history(rows: &[(Vec<f64>, bool)]) -> ObservationHistory {
        let mut h = ObservationHistory::new(rows[0].0.len());
        for (x, f) in rows {
            h.push_raw(x.clone(), *f).unwrap();
        }
        h
    }

    fn random_problem(seed: u64, d: usize, n: usize) -> ObservationHistory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = ObservationHistory::new(d);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let f = rng.random_bool(0.4);
            h.push_raw(x, f).unwrap();
        }
        h
    }

    #[test]
    fn refit_matches_fresh_fit() {
        let mut h = random_problem(4, 5, 30);
        let first = fit_map(&h, 1.0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
            h.push_raw(x, true).unwrap();
        }
        let opts = NewtonOptions::default();
        let refit = refit_map(&h, 1.0, &first, &opts).unwrap();
        let fresh = fit_map_with(&h, 1.0, Some(first.mean()), &opts).unwrap();
        for (a, b) in refit.mean().iter().zip(fresh.mean()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(refit.precision().max_abs_diff(fresh.precision()) < 1e-10);

        // a different λ cannot reuse the old precision
        let other = refit_map(&h, 2.0, &first, &opts).unwrap();
        let fresh2 = fit_map_with(&h, 2.0, Some(first.mean()), &opts).unwrap();
        assert!(other.precision().max_abs_diff(fresh2.precision()) < 1e-10);
    }

    #[test]
    fn sigmoid_pair_matches_sigmoid() {
        for z in [-800.0, -30.0, -1.5, -0.0, 0.0, 1e-9, 2.0, 40.0, 800.0] {
            assert_eq!(sigmoid_pair(z), (sigmoid(z), sigmoid(-z)));
        }
    }

    #[test]
    fn outer_rows_match_plain_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (l, r) = (3, 4);
        let lefts: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..l).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut outer = ObservationHistory::new(l * r);
        let mut plain = ObservationHistory::new(l * r);
        for t in 0..40 {
            let left = &lefts[t % 3];
            let right: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = rng.random_bool(0.5);
            outer.push_outer(left, &right, f, t as u64).unwrap();
            let x: Vec<f64> = left.iter().flat_map(|a| right.iter().map(move |b| a * b)).collect();
            plain.push_raw(x, f).unwrap();
        }
        let w: Vec<f64> = (0..l * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ho = hessian(&w, &outer, 0.7).unwrap();
        let hp = hessian(&w, &plain, 0.7).unwrap();
        assert!(ho.max_abs_diff(&hp) < 1e-12);
        assert_eq!(gradient(&w, &outer, 0.7).unwrap(), gradient(&w, &plain, 0.7).unwrap());
        assert!(outer.push_outer(&[1.0], &[1.0], true, 0).is_err());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        let tiny = sigmoid(-1000.0);
        assert!(tiny > 0.0 && tiny <= 1e-300);
        let big = sigmoid(1000.0);
        assert!(big < 1.0 && big > 0.999);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(-1000.0) + 1000.0).abs() < 1e-9);
        assert_eq!(log_sigmoid(1000.0), 0.0);
        assert!((log_sigmoid(0.0) + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let empty = ObservationHistory::new(3);
        let w = [1.0, -2.0, 0.5];
        let j = neg_log_posterior(&w, &empty, 2.0).unwrap();
        assert!((j - 5.25).abs() < 1e-15);

        for f in [false, true] {
            let h = history(&[(vec![0.3, -7.0, 2.0], f)]);
            let j = neg_log_posterior(&[0.0; 3], &h, 13.0).unwrap();
            assert!((j - 2f64.ln()).abs() < 1e-15);
        }

        let h = history(&[(vec![1.0], true)]);
        let j = neg_log_posterior(&[1.0], &h, 1.0).unwrap();
        assert!((j - 0.813262).abs() < 1e-6);
        assert!(neg_log_posterior(&[1.0, 2.0], &h, 1.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let h = history(&[(vec![1.0], true)]);
        assert_eq!(gradient(&[0.0], &h, 1.0).unwrap(), vec![-0.5]);
        assert_eq!(hessian(&[0.0], &h, 1.0).unwrap().as_slice(), &[1.25]);

        let empty = ObservationHistory::new(2);
        assert_eq!(gradient(&[1.0, -3.0], &empty, 2.0).unwrap(), vec![2.0, -6.0]);
        assert_eq!(
            hessian(&[1.0, -3.0], &empty, 2.0).unwrap(),
            Matrix::scaled_identity(2, 2.0)
        );
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for seed in 0..5 {
            let d = 4;
            let h = random_problem(seed, d, 30);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = gradient(&w, &h, 0.7).unwrap();
            let hess = hessian(&w, &h, 0.7).unwrap();
            let eps = 1e-5;
            for k in 0..d {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[k] += eps;
                wm[k] -= eps;
                let fd = (neg_log_posterior(&wp, &h, 0.7).unwrap()
                    - neg_log_posterior(&wm, &h, 0.7).unwrap())
                    / (2.0 * eps);
                assert!((fd - g[k]).abs() < 1e-6, "grad {k}: {fd} vs {}", g[k]);
                let gp = gradient(&wp, &h, 0.7).unwrap();
                let gm = gradient(&wm, &h, 0.7).unwrap();
                for r in 0..d {
                    let fd = (gp[r] - gm[r]) / (2.0 * eps);
                    assert!((fd - hess.get(r, k)).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn grouping_matches_row_sum() {
        // duplicate rows pooled into groups give the same objective as a
        // straight per-row sum
        let rows = vec![
            (vec![1.0, 0.5], true),
            (vec![1.0, 0.5], false),
            (vec![1.0, 0.5], true),
            (vec![-0.2, 2.0], false),
        ];
        let h = history(&rows);
        assert_eq!(h.len(), 4);
        assert_eq!(h.distinct(), 2);
        let w = [0.3, -0.4];
        let direct: f64 = 0.5 * 1.5 * dot(&w, &w)
            + rows
                .iter()
                .map(|(x, f)| {
                    let z = dot(x, &w);
                    if *f {
                        -sigmoid(z).ln()
                    } else {
                        -(1.0 - sigmoid(z)).ln()
                    }
                })
                .sum::<f64>();
        assert!((neg_log_posterior(&w, &h, 1.5).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn hessian_blocks_match_naive() {
        let h = random_problem(9, 6, 23);
        let w = vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4];
        let fast = hessian(&w, &h, 0.5).unwrap();
        let mut naive = Matrix::scaled_identity(6, 0.5);
        for r in h.rows() {
            let x = r.features.as_slice();
            let p = sigmoid(dot(x, &w));
            for i in 0..6 {
                for j in 0..6 {
                    naive.set(i, j, naive.get(i, j) + p * (1.0 - p) * x[i] * x[j]);
                }
            }
        }
        assert!(fast.max_abs_diff(&naive) < 1e-12);
        assert_eq!(fast, fast.transpose());
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn fit_single_observation() {
        // stationarity of J with λ = 1: w − σ(−w) = 0
        let root = bisect(|w| w - 1.0 / (1.0 + w.exp()), 0.0, 1.0);
        assert!((root - 0.40106).abs() < 1e-5);
        let h = history(&[(vec![1.0], true)]);
        let post = fit_map(&h, 1.0, None).unwrap();
        assert!(post.converged());
        assert!((post.mean()[0] - root).abs() < 1e-10);
        let c = sigmoid(root) * (1.0 - sigmoid(root));
        assert!((post.precision().get(0, 0) - (1.0 + c)).abs() < 1e-12);
    }

    #[test]
    fn fit_empty_history() {
        let post = fit_map(&ObservationHistory::new(3), 1.0, None).unwrap();
        assert_eq!(post.mean(), &[0.0; 3]);
        assert_eq!(post.precision(), &Matrix::identity(3));
        assert_eq!(post.iterations(), 0);
    }

    #[test]
    fn fit_matches_gradient_descent() {
        let h = random_problem(42, 3, 50);
        let post = fit_map(&h, 1.0, None).unwrap();
        // plain gradient descent with a small fixed step; J is 1-strongly convex
        let mut w = vec![0.0; 3];
        for _ in 0..200_000 {
            let g = gradient(&w, &h, 1.0).unwrap();
            if norm_inf(&g) < 1e-12 {
                break;
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= 0.01 * gi;
            }
        }
        for (a, b) in post.mean().iter().zip(&w) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        let g = gradient(post.mean(), &h, 1.0).unwrap();
        assert!(norm_inf(&g) <= 1e-8 * norm_inf(post.mean()).max(1.0));
    }

    #[test]
    fn factor_reproduces_precision() {
        let h = random_problem(3, 5, 40);
        let post = fit_map(&h, 0.3, None).unwrap();
        let rebuilt = crate::linalg::lower_times_transpose(post.precision_factor());
        let scale = post.precision().max_abs();
        assert!(rebuilt.max_abs_diff(post.precision()) <= 1e-8 * scale);
    }

    #[test]
    fn newton_path_is_monotone() {
        let h = random_problem(5, 4, 25);
        let mut w: Option<Vec<f64>> = None;
        let mut last = f64::INFINITY;
        let opts = NewtonOptions {
            max_iter: 1,
            ..NewtonOptions::default()
        };
        for _ in 0..10 {
            let post = fit_map_with(&h, 1.0, w.as_deref(), &opts).unwrap();
            let j = neg_log_posterior(post.mean(), &h, 1.0).unwrap();
            assert!(j <= last);
            last = j;
            w = Some(post.mean().to_vec());
        }
    }

    #[test]
    fn separable_data_is_handled() {
        let h = history(&[
            (vec![10.0, 1.0], true),
            (vec![-10.0, 1.0], false),
            (vec![9.0, 1.0], true),
        ]);
        let post = fit_map(&h, 1e-3, None).unwrap();
        assert!(post.mean().iter().all(|v| v.is_finite()));
        assert!(post.mean()[0] > 0.0);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let h = random_problem(8, 3, 30);
        let opts = NewtonOptions {
            max_iter: 0,
            ..NewtonOptions::default()
        };
        let post = fit_map_with(&h, 1.0, None, &opts).unwrap();
        assert!(!post.converged());
        assert_eq!(post.mean(), &[0.0; 3]);
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(fit_map(&ObservationHistory::new(1), 0.0, None).is_err());
        assert!(PosteriorState::prior(1, -1.0).is_err());
    }

    #[test]
    fn sampling_examples() {
        let tight = PosteriorState::from_precision(
            vec![0.5, -1.0],
            Matrix::scaled_identity(2, 1e9),
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_weights(&tight, &mut rng);
        assert!((s[0] - 0.5).abs() < 1e-3 && (s[1] + 1.0).abs() < 1e-3);

        let a = sample_weights(&tight, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_weights(&tight, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments() {
        let precision = Matrix::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        let mean = vec![1.0, -2.0];
        let post = PosteriorState::from_precision(mean.clone(), precision, 1.0).unwrap();
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let s = sample_weights(&post, &mut rng);
            sums[0] += s[0];
            sums[1] += s[1];
        }
        // S = H⁻¹ = [[1, -0.6], [-0.6, 2]] / 1.64
        let var = [1.0 / 1.64, 2.0 / 1.64];
        for i in 0..2 {
            let m = sums[i] / n as f64;
            assert!((m - mean[i]).abs() <= 4.0 * (var[i] / n as f64).sqrt());
        }
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&[0.0, 0.0], &[3.0, -1.0]).unwrap(), 0.5);
        assert_eq!(predict(&[1.0, 1.0], &[1.0, -1.0]).unwrap(), 0.5);
        assert!(predict(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn posterior_bytes_round_trip() {
        let h = random_problem(2, 3, 10);
        let post = fit_map(&h, 0.8, None).unwrap();
        let back = PosteriorState::from_bytes(&post.to_bytes()).unwrap();
        assert_eq!(back.mean(), post.mean());
        assert_eq!(back.precision_factor(), post.precision_factor());
        assert_eq!(back.lambda(), 0.8);
        let bytes = post.to_bytes();
        assert!(PosteriorState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
