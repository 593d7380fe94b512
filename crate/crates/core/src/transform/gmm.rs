//! One-dimensional Gaussian mixtures fitted by EM, with the component count
//! chosen by BIC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureFitOptions {
    pub max_modes: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop once the mean per-point log-likelihood improves by less than this.
    pub tolerance: f64,
}

impl Default for MixtureFitOptions {
    fn default() -> Self {
        Self {
            max_modes: 10,
            restarts: 5,
            max_iterations: 300,
            tolerance: 1e-6,
        }
    }
}

/// Components are kept sorted by mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    std_floor: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>, std_floor: f64) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(Error::Validation(
                "mixture needs matching, non-empty weight/mean/std lists".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Validation("mixture weights must be a distribution".into()));
        }
        if means.iter().any(|m| !m.is_finite()) || stds.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::Validation("mixture means/stds must be finite and stds positive".into()));
        }
        let mut m = Self {
            weights,
            means,
            stds: stds.into_iter().map(|s| s.max(std_floor)).collect(),
            std_floor,
        };
        m.sort_by_mean();
        Ok(m)
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn std_floor(&self) -> f64 {
        self.std_floor
    }

    /// ln(π_k · N(v; μ_k, σ_k²)) for every component.
    pub fn log_joint(&self, v: f64) -> Vec<f64> {
        (0..self.component_count())
            .map(|k| log_weighted_density(v, self.weights[k], self.means[k], self.stds[k]))
            .collect()
    }

    /// Posterior component probabilities for `v`.
    pub fn responsibilities(&self, v: f64) -> Vec<f64> {
        let mut lj = self.log_joint(v);
        let m = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            // Far outside every component: fall back to the nearest mean.
            let mut r = vec![0.0; lj.len()];
            r[self.nearest_component(v)] = 1.0;
            return r;
        }
        let mut total = 0.0;
        for x in lj.iter_mut() {
            *x = (*x - m).exp();
            total += *x;
        }
        lj.iter_mut().for_each(|x| *x /= total);
        lj
    }

    pub fn nearest_component(&self, v: f64) -> usize {
        let mut best = 0;
        for k in 1..self.component_count() {
            if ((v - self.means[k]) / self.stds[k]).abs() < ((v - self.means[best]) / self.stds[best]).abs()
            {
                best = k;
            }
        }
        best
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values.iter().map(|&v| log_sum_exp(&self.log_joint(v))).sum()
    }

    /// Bayesian information criterion (lower is better); 3K−1 free parameters.
    pub fn bic(&self, values: &[f64]) -> f64 {
        let p = (3 * self.component_count() - 1) as f64;
        -2.0 * self.log_likelihood(values) + p * (values.len() as f64).ln()
    }

    fn sort_by_mean(&mut self) {
        let mut order: Vec<usize> = (0..self.component_count()).collect();
        order.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]));
        self.weights = order.iter().map(|&i| self.weights[i]).collect();
        self.means = order.iter().map(|&i| self.means[i]).collect();
        self.stds = order.iter().map(|&i| self.stds[i]).collect();
    }

    /// Fits a mixture with at most `max_modes` components; K is the BIC minimizer.
    pub fn fit(values: &[f64], max_modes: usize, seed: u64) -> Result<Self> {
        let opts = MixtureFitOptions {
            max_modes,
            ..Default::default()
        };
        Self::fit_with(values, &opts, seed, &mut |_| {})
    }

    /// Like [`GaussianMixture::fit`], calling `observer` with the (unsorted)
    /// mixture after every EM iteration of every candidate fit.
    pub fn fit_with(
        values: &[f64],
        opts: &MixtureFitOptions,
        seed: u64,
        observer: &mut dyn FnMut(&GaussianMixture),
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("cannot fit a mixture to no values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("mixture input contains non-finite values".into()));
        }
        if opts.max_modes == 0 {
            return Err(Error::Argument("max_modes must be at least 1".into()));
        }
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        let floor = 1e-4 * if range > 0.0 { range } else { 1.0 };
        if range == 0.0 {
            return Self::new(vec![1.0], vec![lo], vec![floor], floor);
        }

        let mut distinct = values.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let k_max = opts.max_modes.min(distinct.len());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(f64, GaussianMixture)> = None;
        for k in 1..=k_max {
            let mut best_k: Option<(f64, GaussianMixture)> = None;
            let restarts = if k == 1 { 1 } else { opts.restarts.max(1) };
            for _ in 0..restarts {
                let init = kmeans_pp_init(values, k, floor, &mut rng);
                let (ll, fitted) = run_em(values, init, opts, observer);
                if best_k.as_ref().map_or(true, |(b, _)| ll > *b) {
                    best_k = Some((ll, fitted));
                }
            }
            let (_, fitted) = best_k.expect("at least one restart");
            let score = fitted.bic(values);
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, fitted));
            }
        }
        let (_, mut mixture) = best.expect("k_max >= 1");
        mixture.sort_by_mean();
        Ok(mixture)
    }
}

fn log_weighted_density(v: f64, w: f64, mean: f64, std: f64) -> f64 {
    let z = (v - mean) / std;
    w.ln() - std.ln() - 0.5 * LN_2PI - 0.5 * z * z
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// D²-weighted seeding, then one hard assignment pass for weights and spreads.
fn kmeans_pp_init(values: &[f64], k: usize, floor: f64, rng: &mut ChaCha8Rng) -> GaussianMixture {
    let n = values.len();
    let mut centers = vec![values[rng.gen_range(0..n)]];
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            values[pick]
        } else {
            values[rng.gen_range(0..n)]
        };
        centers.push(next);
        for (d, v) in d2.iter_mut().zip(values) {
            *d = d.min((v - next).powi(2));
        }
    }

    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for &v in values {
        let j = (0..k)
            .min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs()))
            .unwrap();
        count[j] += 1;
        sum[j] += v;
        sq[j] += v * v;
    }
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut stds = Vec::with_capacity(k);
    let overall_mean = values.iter().sum::<f64>() / n as f64;
    let overall_std = (values.iter().map(|v| (v - overall_mean).powi(2)).sum::<f64>() / n as f64)
        .sqrt()
        .max(floor);
    for j in 0..k {
        if count[j] == 0 {
            weights.push(1.0 / n as f64);
            means.push(centers[j]);
            stds.push(overall_std);
        } else {
            let c = count[j] as f64;
            let m = sum[j] / c;
            let var = (sq[j] / c - m * m).max(0.0);
            weights.push(c / n as f64);
            means.push(m);
            stds.push(if count[j] > 1 { var.sqrt().max(floor) } else { overall_std });
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture {
        weights,
        means,
        stds,
        std_floor: floor,
    }
}

fn run_em(
    values: &[f64],
    mut g: GaussianMixture,
    opts: &MixtureFitOptions,
    observer: &mut dyn FnMut(&GaussianMixture),
) -> (f64, GaussianMixture) {
    let n = values.len();
    let k = g.component_count();
    let mut resp = vec![0.0; n * k];
    let mut prev = f64::NEG_INFINITY;
    let mut lj = vec![0.0; k];
    for _ in 0..opts.max_iterations {
        // E step
        let mut ll = 0.0;
        for (i, &v) in values.iter().enumerate() {
            for j in 0..k {
                lj[j] = log_weighted_density(v, g.weights[j], g.means[j], g.stds[j]);
            }
            let lse = log_sum_exp(&lj);
            ll += lse;
            let row = &mut resp[i * k..(i + 1) * k];
            for j in 0..k {
                row[j] = (lj[j] - lse).exp();
            }
        }
        let mean_ll = ll / n as f64;

        // M step
        let mut nk = vec![0.0; k];
        let mut sk = vec![0.0; k];
        for (i, &v) in values.iter().enumerate() {
            let row = &resp[i * k..(i + 1) * k];
            for j in 0..k {
                nk[j] += row[j];
                sk[j] += row[j] * v;
            }
        }
        for j in 0..k {
            if nk[j] > 1e-12 {
                g.means[j] = sk[j] / nk[j];
            }
        }
        let mut vk = vec![0.0; k];
        for (i, &v) in values.iter().enumerate() {
            let row = &resp[i * k..(i + 1) * k];
            for j in 0..k {
                vk[j] += row[j] * (v - g.means[j]).powi(2);
            }
        }
        let total: f64 = nk.iter().sum();
        for j in 0..k {
            g.weights[j] = nk[j] / total;
            if nk[j] > 1e-12 {
                g.stds[j] = (vk[j] / nk[j]).sqrt().max(g.std_floor);
            }
        }
        observer(&g);

        if mean_ll - prev < opts.tolerance && prev.is_finite() {
            break;
        }
        prev = mean_ll;
    }
    let ll = g.log_likelihood(values);
    (ll, g)
}
