//! Gaussian-mixture pose prior over normalized poses: fitting by
//! expectation-maximization and stabilized log-likelihood evaluation.
//!
//! The prior lives on flattened normalized joint coordinates (54 numbers
//! per pose) with diagonal covariances; the desk-scale sample counts this
//! pipeline works with cannot support full 54x54 covariances.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dimension of a flattened normalized pose.
pub const POSE_DIM: usize = 54;

/// Default component count.
pub const DEFAULT_COMPONENTS: usize = 5;

/// Lower bound applied to every variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// EM stops when the total log-likelihood improves by less than this per
/// sample.
pub const EM_TOLERANCE_PER_SAMPLE: f64 = 1e-8;

pub const EM_MAX_ITERATIONS: usize = 500;

pub const PRIOR_FORMAT_VERSION: u32 = 1;

/// Tag recorded in prior files naming the pose canonicalization the prior
/// was fitted on.
pub const NORMALIZATION_TAG: &str = "neck-spine-unit";

/// Mixture of diagonal-covariance Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    ) -> Result<GaussianMixture> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "component counts disagree: {k} weights, {} means, {} variances",
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::ShapeMismatch("zero-dimensional mixture".into()));
        }
        for (m, v) in means.iter().zip(variances.iter()) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::ShapeMismatch(
                    "mean/variance dimensions disagree across components".into(),
                ));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("mixture mean".into()));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= VARIANCE_FLOOR)) {
                return Err(Error::InvalidSpec(format!(
                    "variances must be finite and >= the {VARIANCE_FLOOR} floor"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "weights must be non-negative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(GaussianMixture {
            weights,
            means,
            variances,
            dim,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k]
    }

    pub fn to_doc(&self) -> PriorDoc {
        PriorDoc {
            format_version: PRIOR_FORMAT_VERSION,
            normalization: NORMALIZATION_TAG.to_string(),
            dimension: self.dim as u32,
            components: (0..self.components())
                .map(|k| ComponentEntry {
                    weight: self.weights[k],
                    mean: self.means[k].clone(),
                    variance: self.variances[k].clone(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &PriorDoc) -> Result<GaussianMixture> {
        if doc.format_version != PRIOR_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: doc.format_version,
                expected: PRIOR_FORMAT_VERSION,
            });
        }
        if doc.normalization != NORMALIZATION_TAG {
            return Err(Error::Format(format!(
                "unsupported normalization '{}' (expected '{NORMALIZATION_TAG}')",
                doc.normalization
            )));
        }
        let gmm = GaussianMixture::new(
            doc.components.iter().map(|c| c.weight).collect(),
            doc.components.iter().map(|c| c.mean.clone()).collect(),
            doc.components.iter().map(|c| c.variance.clone()).collect(),
        )?;
        if gmm.dim != doc.dimension as usize {
            return Err(Error::ShapeMismatch(format!(
                "declared dimension {} but components carry {}",
                doc.dimension, gmm.dim
            )));
        }
        Ok(gmm)
    }
}

/// On-disk prior file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorDoc {
    pub format_version: u32,
    pub normalization: String,
    pub dimension: u32,
    pub components: Vec<ComponentEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentEntry {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Log density of one diagonal Gaussian component, generic over the scalar.
fn component_log_pdf<T: Real>(mean: &[f64], variance: &[f64], x: &[T]) -> T {
    let mut quad = T::cst(0.0);
    let mut log_norm = 0.0;
    for d in 0..mean.len() {
        let diff = x[d] - T::cst(mean[d]);
        quad = quad + diff * diff * T::cst(1.0 / variance[d]);
        log_norm += (std::f64::consts::TAU * variance[d]).ln();
    }
    T::cst(-0.5) * (quad + T::cst(log_norm))
}

/// `log sum_k w_k N(x; mu_k, sigma_k)` with log-sum-exp shifting; shared by
/// the plain and dual-number paths. Dimensions must already match.
pub(crate) fn log_likelihood_generic<T: Real>(gmm: &GaussianMixture, x: &[T]) -> T {
    debug_assert_eq!(x.len(), gmm.dim);
    let mut terms: Vec<T> = Vec::with_capacity(gmm.components());
    for k in 0..gmm.components() {
        if gmm.weights[k] <= 0.0 {
            continue;
        }
        let lp = component_log_pdf(&gmm.means[k], &gmm.variances[k], x)
            + T::cst(gmm.weights[k].ln());
        terms.push(lp);
    }
    let mut max_idx = 0;
    for (i, t) in terms.iter().enumerate() {
        if t.val() > terms[max_idx].val() {
            max_idx = i;
        }
    }
    let shift = terms[max_idx];
    let mut sum = T::cst(0.0);
    for t in &terms {
        sum = sum + (*t - shift).exp();
    }
    shift + sum.ln()
}

/// Mixture log-likelihood of one vector; finite for any finite input.
pub fn log_likelihood(gmm: &GaussianMixture, x: &[f64]) -> Result<f64> {
    if x.len() != gmm.dim {
        return Err(Error::ShapeMismatch(format!(
            "vector has dimension {}, mixture has {}",
            x.len(),
            gmm.dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mixture input vector".into()));
    }
    Ok(log_likelihood_generic(gmm, x))
}

/// Per-fit diagnostics.
#[derive(Debug, Clone)]
pub struct GmmFitTrace {
    /// Total log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations at which an emptied component was re-seeded (the
    /// monotonicity guarantee restarts there).
    pub reseeds: Vec<usize>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++-style seeding: the first mean is a uniformly drawn sample, each
/// further mean is drawn with probability proportional to the squared
/// distance to the nearest already-chosen mean.
fn seed_means(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    means.push(samples[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| squared_distance(s, &means[0]))
        .collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        means.push(samples[next].clone());
        for (i, s) in samples.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(s, means.last().unwrap()));
        }
    }
    means
}

/// Re-seeds an emptied component from the worst-fit sample (the one with the
/// lowest mixture log-likelihood): its mean moves there, its variance resets
/// to the global per-dimension data variance and it receives weight `1/n`
/// before all weights are renormalized.
fn reseed_component(
    component: usize,
    samples: &[Vec<f64>],
    per_sample_ll: &[f64],
    global_variance: &[f64],
    weights: &mut [f64],
    means: &mut [Vec<f64>],
    variances: &mut [Vec<f64>],
) {
    let worst = per_sample_ll
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    means[component] = samples[worst].clone();
    variances[component] = global_variance.to_vec();
    weights[component] = 1.0 / samples.len() as f64;
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Fits a `k`-component mixture to the samples by EM, deterministically for
/// a given `(samples, k, seed)` triple.
pub fn fit_gmm(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<GaussianMixture> {
    fit_gmm_traced(samples, k, seed).map(|(gmm, _)| gmm)
}

/// [`fit_gmm`] plus per-iteration diagnostics.
pub fn fit_gmm_traced(
    samples: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<(GaussianMixture, GmmFitTrace)> {
    let n = samples.len();
    if k == 0 {
        return Err(Error::InvalidSpec("component count must be positive".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} samples cannot support {k} components"
        )));
    }
    let dim = samples[0].len();
    if dim == 0 {
        return Err(Error::ShapeMismatch("zero-dimensional samples".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "sample {i} has dimension {}, expected {dim}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
    }

    // Global per-dimension variance: the initial spread of every component
    // and the reset value for re-seeded ones.
    let mut global_mean = vec![0.0; dim];
    for s in samples {
        for (g, v) in global_mean.iter_mut().zip(s) {
            *g += v;
        }
    }
    for g in &mut global_mean {
        *g /= n as f64;
    }
    let mut global_variance = vec![0.0; dim];
    for s in samples {
        for d in 0..dim {
            let diff = s[d] - global_mean[d];
            global_variance[d] += diff * diff;
        }
    }
    for v in &mut global_variance {
        *v = (*v / n as f64).max(VARIANCE_FLOOR);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = seed_means(samples, k, &mut rng);
    let mut variances = vec![global_variance.clone(); k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut trace = GmmFitTrace {
        log_likelihood: Vec::new(),
        iterations: 0,
        converged: false,
        reseeds: Vec::new(),
    };
    let mut resp = vec![vec![0.0; k]; n];
    let mut per_sample_ll = vec![0.0; n];
    let mut previous_ll = f64::NEG_INFINITY;

    for iteration in 0..EM_MAX_ITERATIONS {
        trace.iterations = iteration + 1;

        // E-step.
        let mut total_ll = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let mut lp = vec![f64::NEG_INFINITY; k];
            for c in 0..k {
                if weights[c] > 0.0 {
                    lp[c] = weights[c].ln()
                        + component_log_pdf::<f64>(&means[c], &variances[c], s);
                }
            }
            let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = lp.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum_exp.ln();
            per_sample_ll[i] = lse;
            total_ll += lse;
            for c in 0..k {
                resp[i][c] = (lp[c] - lse).exp();
            }
        }
        trace.log_likelihood.push(total_ll);

        if total_ll - previous_ll < EM_TOLERANCE_PER_SAMPLE * n as f64
            && previous_ll.is_finite()
        {
            trace.converged = true;
            break;
        }
        previous_ll = total_ll;

        // M-step.
        let mut reseeded = false;
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk < 1e-10 {
                reseed_component(
                    c,
                    samples,
                    &per_sample_ll,
                    &global_variance,
                    &mut weights,
                    &mut means,
                    &mut variances,
                );
                trace.reseeds.push(iteration);
                reseeded = true;
                continue;
            }
            weights[c] = nk / n as f64;
            for d in 0..dim {
                let mut acc = 0.0;
                for (i, s) in samples.iter().enumerate() {
                    acc += resp[i][c] * s[d];
                }
                means[c][d] = acc / nk;
            }
            for d in 0..dim {
                let mut acc = 0.0;
                for (i, s) in samples.iter().enumerate() {
                    let diff = s[d] - means[c][d];
                    acc += resp[i][c] * diff * diff;
                }
                variances[c][d] = (acc / nk).max(VARIANCE_FLOOR);
            }
        }
        if reseeded {
            // The next E-step starts a fresh monotone segment.
            previous_ll = f64::NEG_INFINITY;
        }
    }

    let gmm = GaussianMixture::new(weights, means, variances)?;
    Ok((gmm, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_samples(
        n: usize,
        mean: &[f64],
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                mean.iter()
                    .map(|m| m + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn k1_fit_matches_closed_form_maximum_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let truth_mean: Vec<f64> = (0..POSE_DIM).map(|d| d as f64 * 0.1 - 2.0).collect();
        let sigma = 2.0;
        let n = 1000;
        let samples = gaussian_samples(n, &truth_mean, sigma, &mut rng);

        let gmm = fit_gmm(&samples, 1, 7).unwrap();

        // Closed-form ML oracle: sample mean and population variance.
        let mut ml_mean = vec![0.0; POSE_DIM];
        for s in &samples {
            for (m, v) in ml_mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in &mut ml_mean {
            *m /= n as f64;
        }
        let mut ml_var = vec![0.0; POSE_DIM];
        for s in &samples {
            for d in 0..POSE_DIM {
                ml_var[d] += (s[d] - ml_mean[d]).powi(2);
            }
        }
        for v in &mut ml_var {
            *v /= n as f64;
        }
        for d in 0..POSE_DIM {
            assert!((gmm.mean(0)[d] - ml_mean[d]).abs() < 1e-9);
            assert!((gmm.variance(0)[d] - ml_var[d]).abs() < 1e-9);
        }
        assert_eq!(gmm.weights(), &[1.0]);

        // Statistical sanity against the generating distribution: the mean
        // estimate deviates by about sigma/sqrt(N) per coordinate in RMS.
        let rms: f64 = (0..POSE_DIM)
            .map(|d| (gmm.mean(0)[d] - truth_mean[d]).powi(2))
            .sum::<f64>()
            .sqrt()
            / (POSE_DIM as f64).sqrt();
        assert!(rms < 3.0 * sigma / (n as f64).sqrt(), "rms {rms}");
        let mean_var: f64 = gmm.variance(0).iter().sum::<f64>() / POSE_DIM as f64;
        assert!((mean_var - sigma * sigma).abs() < 0.2 * sigma * sigma);
    }

    #[test]
    fn two_separated_clusters_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dim = 8;
        let sigma = 0.5;
        let center_a = vec![0.0; dim];
        let center_b = vec![5.0; dim]; // 10 sigma separation per coordinate
        let mut samples = gaussian_samples(600, &center_a, sigma, &mut rng);
        samples.extend(gaussian_samples(400, &center_b, sigma, &mut rng));

        let (gmm, trace) = fit_gmm_traced(&samples, 2, 3).unwrap();
        assert!(trace.converged);
        assert!(trace.reseeds.is_empty());

        // Label-based empirical means as the oracle.
        let mut order = [0usize, 1usize];
        if gmm.mean(0)[0] > gmm.mean(1)[0] {
            order = [1, 0];
        }
        for d in 0..dim {
            assert!((gmm.mean(order[0])[d] - center_a[d]).abs() < sigma);
            assert!((gmm.mean(order[1])[d] - center_b[d]).abs() < sigma);
        }
        assert!((gmm.weights()[order[0]] - 0.6).abs() < 0.05);
        assert!((gmm.weights()[order[1]] - 0.4).abs() < 0.05);
    }

    #[test]
    fn em_log_likelihood_is_monotone_per_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut samples = gaussian_samples(150, &[0.0, 0.0, 0.0], 1.0, &mut rng);
        samples.extend(gaussian_samples(150, &[4.0, -2.0, 1.0], 1.5, &mut rng));
        samples.extend(gaussian_samples(100, &[-3.0, 5.0, 2.0], 0.7, &mut rng));
        for k in [1, 2, 3, 5] {
            let (_, trace) = fit_gmm_traced(&samples, k, 11).unwrap();
            assert!(trace.reseeds.is_empty());
            for w in trace.log_likelihood.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9,
                    "log-likelihood decreased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn fit_is_deterministic_for_a_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut samples = gaussian_samples(200, &[0.0; 6], 1.0, &mut rng);
        samples.extend(gaussian_samples(200, &[6.0; 6], 1.0, &mut rng));
        let a = fit_gmm(&samples, 3, 99).unwrap();
        let b = fit_gmm(&samples, 3, 99).unwrap();
        assert_eq!(a, b);
        // A different seed may land on another local optimum; it must still
        // be a valid mixture.
        let c = fit_gmm(&samples, 3, 100).unwrap();
        assert_eq!(c.components(), 3);
    }

    #[test]
    fn duplicating_every_sample_leaves_the_fit_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        // Well-separated clusters: EM saturates to the same optimum from any
        // seeding that finds both modes, making the invariance testable on
        // the whole fit rather than a single update.
        let mut samples = gaussian_samples(120, &[0.0; 4], 0.4, &mut rng);
        samples.extend(gaussian_samples(180, &[8.0; 4], 0.4, &mut rng));
        let mut doubled = samples.clone();
        doubled.extend(samples.iter().cloned());

        let sort_components = |g: &GaussianMixture| {
            let mut idx: Vec<usize> = (0..g.components()).collect();
            idx.sort_by(|a, b| g.mean(*a)[0].partial_cmp(&g.mean(*b)[0]).unwrap());
            idx
        };
        let a = fit_gmm(&samples, 2, 1).unwrap();
        let b = fit_gmm(&doubled, 2, 1).unwrap();
        let ia = sort_components(&a);
        let ib = sort_components(&b);
        for (ca, cb) in ia.iter().zip(ib.iter()) {
            assert!((a.weights()[*ca] - b.weights()[*cb]).abs() < 1e-9);
            for d in 0..4 {
                assert!((a.mean(*ca)[d] - b.mean(*cb)[d]).abs() < 1e-9);
                assert!((a.variance(*ca)[d] - b.variance(*cb)[d]).abs() < 1e-9);
            }
        }

        // K = 1 admits a closed form, so duplication invariance is exact.
        let a1 = fit_gmm(&samples, 1, 5).unwrap();
        let b1 = fit_gmm(&doubled, 1, 5).unwrap();
        for d in 0..4 {
            assert!((a1.mean(0)[d] - b1.mean(0)[d]).abs() < 1e-12);
            assert!((a1.variance(0)[d] - b1.variance(0)[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_closed_form_at_standard_normal_origin() {
        let gmm = GaussianMixture::new(
            vec![1.0],
            vec![vec![0.0; POSE_DIM]],
            vec![vec![1.0; POSE_DIM]],
        )
        .unwrap();
        let got = log_likelihood(&gmm, &vec![0.0; POSE_DIM]).unwrap();
        let expect = -(POSE_DIM as f64 / 2.0) * std::f64::consts::TAU.ln();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn mixture_dominates_any_single_term_at_component_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut samples = gaussian_samples(100, &[0.0; 3], 1.0, &mut rng);
        samples.extend(gaussian_samples(100, &[5.0; 3], 1.0, &mut rng));
        let gmm = fit_gmm(&samples, 2, 2).unwrap();
        for k in 0..gmm.components() {
            let at_mean = log_likelihood(&gmm, gmm.mean(k)).unwrap();
            let peak: f64 = -0.5
                * gmm
                    .variance(k)
                    .iter()
                    .map(|v| (std::f64::consts::TAU * v).ln())
                    .sum::<f64>();
            assert!(at_mean >= gmm.weights()[k].ln() + peak - 1e-12);
        }
    }

    #[test]
    fn far_inputs_stay_finite() {
        let gmm = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0; 4], vec![1.0; 4]],
            vec![vec![1.0; 4], vec![2.0; 4]],
        )
        .unwrap();
        let ll = log_likelihood(&gmm, &[1e6, -1e6, 1e6, -1e6]).unwrap();
        assert!(ll.is_finite());
        assert!(ll < -1e10);
    }

    #[test]
    fn shape_and_data_errors() {
        let gmm = GaussianMixture::new(vec![1.0], vec![vec![0.0; 3]], vec![vec![1.0; 3]])
            .unwrap();
        assert!(matches!(
            log_likelihood(&gmm, &[0.0; 4]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            fit_gmm(&[vec![0.0; 3], vec![1.0; 3]], 5, 0),
            Err(Error::InsufficientData(_))
        ));
        // Weights must sum to one.
        assert!(GaussianMixture::new(
            vec![0.6, 0.6],
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![1.0]]
        )
        .is_err());
        // Variances under the floor are rejected.
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![1e-9]]).is_err());
    }

    #[test]
    fn reseed_moves_component_to_worst_fit_sample() {
        let samples = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![9.0, 9.0]];
        let per_sample_ll = vec![-0.5, -0.6, -250.0];
        let global_variance = vec![1.0, 2.0];
        let mut weights = vec![0.5, 0.5];
        let mut means = vec![vec![0.05, 0.0], vec![0.0, 0.0]];
        let mut variances = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        reseed_component(
            1,
            &samples,
            &per_sample_ll,
            &global_variance,
            &mut weights,
            &mut means,
            &mut variances,
        );
        assert_eq!(means[1], vec![9.0, 9.0]);
        assert_eq!(variances[1], global_variance);
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(weights[1] < weights[0]);
    }

    #[test]
    fn density_integrates_to_one_in_two_dimensions() {
        // Midpoint quadrature of exp(log_likelihood) on a K=1, 2-D mixture.
        let gmm = GaussianMixture::new(
            vec![1.0],
            vec![vec![0.3, -0.7]],
            vec![vec![0.8, 1.7]],
        )
        .unwrap();
        let h = 0.02;
        let half = 8.0;
        let steps = (2.0 * half / h) as usize;
        let mut integral = 0.0;
        for i in 0..steps {
            let x = -half + (i as f64 + 0.5) * h + 0.3;
            for j in 0..steps {
                let y = -half + (j as f64 + 0.5) * h - 0.7;
                integral += log_likelihood(&gmm, &[x, y]).unwrap().exp() * h * h;
            }
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn prior_doc_round_trip_and_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let samples = gaussian_samples(50, &[0.0; 5], 1.0, &mut rng);
        let gmm = fit_gmm(&samples, 2, 8).unwrap();
        let doc = gmm.to_doc();
        assert_eq!(doc.normalization, NORMALIZATION_TAG);
        let text = toml::to_string(&doc).unwrap();
        let parsed: PriorDoc = toml::from_str(&text).unwrap();
        let back = GaussianMixture::from_doc(&parsed).unwrap();
        assert_eq!(back, gmm);

        let mut bad = doc.clone();
        bad.normalization = "other".into();
        assert!(GaussianMixture::from_doc(&bad).is_err());
        let mut bad = doc;
        bad.format_version = 9;
        assert!(matches!(
            GaussianMixture::from_doc(&bad),
            Err(Error::FormatVersion { .. })
        ));
    }
}
