//! Runtime measurement of the convergence theory's quantities: per-round
//! deviation statistics, estimation of the assumption constants, and
//! term-by-term evaluation of the convergence bound and rate decomposition.
//!
//! Index convention: sums written `sum_{i,j}` run over all clients `i` and
//! local steps `j in {0, .., tau-1}`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algorithms::{HyperParams, ProblemData, RoundTrajectories};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::numerics::{ParamVector, Purpose, RngStream};

/// Smoothness, noise, dissimilarity, and initial-gap constants of a problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Smoothness beta > 0.
    pub beta: f64,
    /// Stochastic gradient variance bound (sigma^2 >= 0).
    pub sigma_sq: f64,
    /// Dissimilarity slope B^2 >= 1.
    pub b_sq: f64,
    /// Dissimilarity offset G^2 >= 0.
    pub g_sq: f64,
    /// Initial optimality gap f(x0) - f(x*) >= 0.
    pub gamma: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("beta", self.beta > 0.0),
            ("sigma_sq", self.sigma_sq >= 0.0),
            ("b_sq", self.b_sq >= 1.0),
            ("g_sq", self.g_sq >= 0.0),
            ("gamma", self.gamma >= 0.0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("constant out of range in {self:?}"),
                });
            }
        }
        Ok(())
    }
}

/// Per-round deviation measurements.
///
/// The serialized form carries exactly the log-schema keys
/// `{agg_gap, zeta, psi, phi, phi0, eps_avg}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    /// `||x^{k+1} - x^k||^2`.
    pub agg_gap: f64,
    /// `(1/n) sum_i ||y_{i,tau} - x^k||^2`.
    pub zeta: f64,
    /// `(1/(n tau)) sum_{i,j} ||y_{i,j} - x^k||^2`.
    pub psi: f64,
    /// `(1/(n tau)) sum_{i,j} ||v_{i,j} - x^k||^2`; absent without a
    /// personalized model.
    pub phi: Option<f64>,
    /// `(1/n) sum_i ||v_{i,0} - x^k||^2`.
    pub phi0: Option<f64>,
    /// Running mean of `||grad f(x^k)||^2` over rounds so far.
    pub eps_avg: f64,
    #[serde(skip)]
    pub round: usize,
    /// `phi` of round 0; constant across the run.
    #[serde(skip)]
    pub xi0: Option<f64>,
}

/// Measure the deviation definitions from one round's retained trajectories.
pub fn measure_deviations(
    trajs: &RoundTrajectories,
    x_k: &ParamVector,
    x_next: &ParamVector,
    round: usize,
    eps_avg: f64,
) -> Result<DeviationRecord> {
    let n = trajs.per_client.len();
    if n == 0 {
        return Err(Error::MissingTrajectory {
            client: 0,
            step: None,
        });
    }
    let steps = trajs.per_client[0].y.len();
    if steps < 2 {
        return Err(Error::MissingTrajectory {
            client: trajs.per_client[0].client,
            step: Some(steps),
        });
    }
    let tau = steps - 1;
    let has_v = trajs.per_client[0].v.is_some();

    let mut zeta = 0.0;
    let mut psi = 0.0;
    let mut phi = 0.0;
    let mut phi0 = 0.0;
    for traj in &trajs.per_client {
        if traj.y.len() != steps {
            return Err(Error::MissingTrajectory {
                client: traj.client,
                step: Some(traj.y.len()),
            });
        }
        zeta += traj.y[tau].squared_distance(x_k);
        for j in 0..tau {
            psi += traj.y[j].squared_distance(x_k);
        }
        match (&traj.v, has_v) {
            (Some(v), true) => {
                if v.len() != steps {
                    return Err(Error::MissingTrajectory {
                        client: traj.client,
                        step: Some(v.len()),
                    });
                }
                for item in v.iter().take(tau) {
                    phi += item.squared_distance(x_k);
                }
                phi0 += v[0].squared_distance(x_k);
            }
            (None, false) => {}
            _ => {
                return Err(Error::MissingTrajectory {
                    client: traj.client,
                    step: None,
                })
            }
        }
    }
    let n_f = n as f64;
    let nt = n_f * tau as f64;
    Ok(DeviationRecord {
        agg_gap: x_next.squared_distance(x_k),
        zeta: zeta / n_f,
        psi: psi / nt,
        phi: has_v.then_some(phi / nt),
        phi0: has_v.then_some(phi0 / n_f),
        eps_avg,
        round,
        xi0: None,
    })
}

/// One round's contribution to the averaged personalized gap:
/// `(1/(n tau)) sum_{i,j} ||v_{i,j} - x*||^2`. `None` when the round has no
/// personalized trajectories.
pub fn round_v_gap(trajs: &RoundTrajectories, x_star: &ParamVector) -> Option<f64> {
    let n = trajs.per_client.len();
    if n == 0 {
        return None;
    }
    let tau = trajs.per_client[0].y.len().checked_sub(1)?;
    if tau == 0 {
        return None;
    }
    let mut sum = 0.0;
    for traj in &trajs.per_client {
        let v = traj.v.as_ref()?;
        for item in v.iter().take(tau) {
            sum += item.squared_distance(x_star);
        }
    }
    Some(sum / (n * tau) as f64)
}

/// `(1/(n tau K)) sum_{i,j,k} ||v_{i,j}^k - x*||^2` over retained rounds.
pub fn theorem2_gap(rounds: &[RoundTrajectories], x_star: &ParamVector) -> Result<f64> {
    if rounds.is_empty() {
        return Err(Error::MissingTrajectory {
            client: 0,
            step: None,
        });
    }
    let mut sum = 0.0;
    for trajs in rounds {
        sum += round_v_gap(trajs, x_star).ok_or(Error::MissingTrajectory {
            client: 0,
            step: None,
        })?;
    }
    Ok(sum / rounds.len() as f64)
}

/// Single-point dissimilarity estimate
/// `(1/n) sum_i ||grad f_i(x)||^2 - ||grad f(x)||^2`.
pub fn dissimilarity_gap(spec: &ModelSpec, data: &ProblemData, x: &ParamVector) -> Result<f64> {
    let n = data.num_clients();
    let mut mean_grad = ParamVector::zeros(x.dim());
    let mut mean_sq = 0.0;
    for client in 0..n {
        let g = data.client_grad(spec, client, x)?;
        mean_sq += g.squared_norm() / n as f64;
        mean_grad.axpy_in_place(1.0 / n as f64, &g);
    }
    Ok(mean_sq - mean_grad.squared_norm())
}

/// How constants are probed on non-analytic problems.
#[derive(Clone, Copy, Debug)]
pub struct ProbePlan {
    pub seed: u64,
    /// Probe points drawn as `x0 + scale * N(0, I)`.
    pub count: usize,
    pub scale: f64,
    /// Minibatch size and draw count for the empirical variance estimate.
    pub minibatch: usize,
    pub minibatch_draws: usize,
}

impl Default for ProbePlan {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 30,
            scale: 1.0,
            minibatch: 32,
            minibatch_draws: 8,
        }
    }
}

const MIN_PROBES: usize = 30;

fn probe_point(x0: &ParamVector, plan: &ProbePlan, index: usize) -> ParamVector {
    let mut rng = RngStream::with_index(plan.seed, Purpose::Probe, index as u64).rng();
    let mut values = x0.as_slice().to_vec();
    for v in &mut values {
        *v += plan.scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
    }
    ParamVector::new(values).expect("finite probe")
}

/// Least-squares fit of `u ~ slope * w + intercept` with the dissimilarity
/// clamps `slope >= 1`, `intercept >= 0`.
fn fit_dissimilarity(w: &[f64], u: &[f64]) -> (f64, f64) {
    let n = w.len() as f64;
    let w_mean = w.iter().sum::<f64>() / n;
    let u_mean = u.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (wi, ui) in w.iter().zip(u) {
        cov += (wi - w_mean) * (ui - u_mean);
        var += (wi - w_mean) * (wi - w_mean);
    }
    let slope = if var > 0.0 { cov / var } else { 1.0 };
    let slope = slope.max(1.0);
    let intercept = (u_mean - slope * w_mean).max(0.0);
    (slope, intercept)
}

/// Estimate the assumption constants for a problem.
///
/// Quadratic: beta = 1 and sigma^2 are exact, `(B^2, G^2)` come from the
/// least-squares fit over probe points, and Gamma is analytic from the known
/// optimum. Other kinds: empirical estimates over >= 30 probes, with beta
/// from the max gradient-difference ratio over consecutive probe pairs and
/// Gamma lower-bounded by the best loss found.
pub fn estimate_constants(
    spec: &ModelSpec,
    data: &ProblemData,
    x0: &ParamVector,
    plan: &ProbePlan,
) -> Result<ProblemConstants> {
    match data {
        ProblemData::Quadratic(problem) => {
            let count = plan.count.max(2);
            let mut w = Vec::with_capacity(count);
            let mut u = Vec::with_capacity(count);
            let n = problem.num_clients() as f64;
            for t in 0..count {
                let x = probe_point(x0, plan, t);
                let mean_sq: f64 = problem
                    .centers()
                    .iter()
                    .map(|c| x.squared_distance(c))
                    .sum::<f64>()
                    / n;
                w.push(problem.global_grad(&x).squared_norm());
                u.push(mean_sq);
            }
            let (b_sq, g_sq) = fit_dissimilarity(&w, &u);
            let constants = ProblemConstants {
                beta: 1.0,
                sigma_sq: problem.noise() * problem.noise(),
                b_sq,
                g_sq,
                gamma: problem.global_loss(x0) - problem.global_loss(&problem.optimum()),
            };
            constants.validate()?;
            Ok(constants)
        }
        ProblemData::Supervised(_) => {
            if plan.count < MIN_PROBES {
                return Err(Error::TooFewProbes {
                    got: plan.count,
                    need: MIN_PROBES,
                });
            }
            let n = data.num_clients();
            let probes: Vec<ParamVector> =
                (0..plan.count).map(|t| probe_point(x0, plan, t)).collect();

            let mut mean_grads: Vec<ParamVector> =
                vec![ParamVector::zeros(x0.dim()); plan.count];
            let mut mean_sq = vec![0.0; plan.count];
            let mut beta: f64 = 0.0;
            for client in 0..n {
                let mut prev: Option<ParamVector> = None;
                for (t, probe) in probes.iter().enumerate() {
                    let g = data.client_grad(spec, client, probe)?;
                    mean_sq[t] += g.squared_norm() / n as f64;
                    mean_grads[t].axpy_in_place(1.0 / n as f64, &g);
                    if let Some(prev_g) = &prev {
                        let dist = probes[t].squared_distance(&probes[t - 1]).sqrt();
                        if dist > 0.0 {
                            beta = beta.max(g.sub(prev_g)?.norm() / dist);
                        }
                    }
                    prev = Some(g);
                }
            }
            let w: Vec<f64> = mean_grads.iter().map(|g| g.squared_norm()).collect();
            let (b_sq, g_sq) = fit_dissimilarity(&w, &mean_sq);

            // Empirical minibatch variance around the full-batch gradient,
            // taken at x0, maxed over clients.
            let mut sigma_sq: f64 = 0.0;
            for client in 0..n {
                let full = data.client_grad(spec, client, x0)?;
                let mut acc = 0.0;
                for draw in 0..plan.minibatch_draws {
                    let batch = data.draw_batch(
                        plan.seed,
                        client,
                        0,
                        draw,
                        Purpose::Probe,
                        Purpose::Probe,
                        plan.minibatch,
                    )?;
                    let g = crate::models::grad(spec, x0, &batch)?;
                    acc += g.sub(&full)?.squared_norm();
                }
                sigma_sq = sigma_sq.max(acc / plan.minibatch_draws as f64);
            }

            let f0 = data.train_loss(spec, x0)?;
            let mut best = f0;
            for probe in &probes {
                best = best.min(data.train_loss(spec, probe)?);
            }
            let constants = ProblemConstants {
                beta: beta.max(f64::MIN_POSITIVE),
                sigma_sq,
                b_sq,
                g_sq,
                gamma: f0 - best,
            };
            constants.validate()?;
            Ok(constants)
        }
    }
}

/// The sampling-dependent quantities entering the convergence bound, plus
/// the bound's per-order terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// Participation ratio p = m / n.
    pub p: f64,
    /// `2 B^2 (1/m - 1/n) + 1`.
    pub b_tilde_sq: f64,
    /// `2 G^2 (1/m - 1/n)`.
    pub g_tilde_sq: f64,
    /// `5 + 75 p + 15 (1-p)^2 / p`.
    pub q: f64,
    /// `15 (1-p)^2 / (49 p^2)`.
    pub l_p1: f64,
    /// `1 + 25/(3136 p) + 75 (1-p)^2 / (3136 p^2)`.
    pub l_p2: f64,
    /// `5/7 + 5/(49 p)`.
    pub l_p3: f64,
    /// Per-order contributions: the Gamma term, then orders
    /// `(eta tau beta)^1 .. (eta tau beta)^6`.
    pub terms: [f64; 7],
}

impl BoundTerms {
    pub fn bound(&self) -> f64 {
        self.terms.iter().sum()
    }
}

/// Whether the bound's hypotheses hold for the given configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreconditionReport {
    /// `rho <= eta * beta`.
    pub rho_ok: bool,
    pub eta_tau_beta: f64,
    /// `min(1/(144 Btilde^2), 1/(84 sqrt(2) sqrt(l1 + l2 B^2 + l3 Btilde^2)))`.
    pub step_cap: f64,
    /// `eta * tau * beta <= step_cap`.
    pub step_ok: bool,
}

impl PreconditionReport {
    pub fn all_hold(&self) -> bool {
        self.rho_ok && self.step_ok
    }
}

/// Evaluate the convergence bound term by term.
///
/// Violated preconditions are reported, not rejected, so sweeps can chart
/// where the theory applies.
pub fn theorem1_bound(
    hyper: &HyperParams,
    consts: &ProblemConstants,
) -> Result<(f64, BoundTerms, PreconditionReport)> {
    consts.validate()?;
    if hyper.rounds == 0 {
        return Err(Error::InvalidParameter {
            name: "rounds",
            reason: "bound evaluation needs K >= 1".into(),
        });
    }
    let m = hyper.sampled as f64;
    let n = hyper.clients as f64;
    let tau = hyper.algorithm.effective_tau(hyper.tau) as f64;
    let k = hyper.rounds as f64;
    let eta = hyper.eta;
    let beta = consts.beta;
    let (b_sq, g_sq, sigma_sq, gamma) =
        (consts.b_sq, consts.g_sq, consts.sigma_sq, consts.gamma);

    let p = m / n;
    let sampling_gap = 1.0 / m - 1.0 / n;
    let b_tilde_sq = 2.0 * b_sq * sampling_gap + 1.0;
    let g_tilde_sq = 2.0 * g_sq * sampling_gap;
    let q = 5.0 + 75.0 * p + 15.0 * (1.0 - p) * (1.0 - p) / p;
    let l_p1 = 15.0 * (1.0 - p) * (1.0 - p) / (49.0 * p * p);
    let l_p2 = 1.0 + 25.0 / (3136.0 * p) + 75.0 * (1.0 - p) * (1.0 - p) / (3136.0 * p * p);
    let l_p3 = 5.0 / 7.0 + 5.0 / (49.0 * p);

    let x = eta * tau * beta;
    let terms = [
        24.0 * gamma / (eta * tau * k),
        12.0 * x * (4.0 * g_tilde_sq + sigma_sq / (tau * m)),
        24.0 * x * x
            * ((1120.0 + 160.0 / p) * g_tilde_sq
                + (1548.0
                    + 25.0 / (2.0 * p)
                    + 97.0 / 6.0
                    + 75.0 / 2.0 * (1.0 - p) * (1.0 - p) / (p * p))
                    * g_sq
                + (330.0 * p + 40.0 / (m * p) + 280.0 / m + 73.0 / 12.0) * sigma_sq / tau),
        192.0 * x.powi(3) * (3.0 * g_sq + sigma_sq / tau),
        96.0 * x.powi(4) * (12.0 * g_sq + (3.0 * p + 20.0 * q) * sigma_sq / (p * tau)),
        576.0 * x.powi(5) * (4.0 * g_sq + sigma_sq / tau),
        5760.0 * x.powi(6) * q * sigma_sq / (p * tau),
    ];

    let step_cap = (1.0 / (144.0 * b_tilde_sq)).min(
        1.0 / (84.0
            * std::f64::consts::SQRT_2
            * (l_p1 + l_p2 * b_sq + l_p3 * b_tilde_sq).sqrt()),
    );
    let report = PreconditionReport {
        rho_ok: hyper.rho <= eta * beta,
        eta_tau_beta: x,
        step_cap,
        step_ok: x <= step_cap,
    };
    let bound_terms = BoundTerms {
        p,
        b_tilde_sq,
        g_tilde_sq,
        q,
        l_p1,
        l_p2,
        l_p3,
        terms,
    };
    Ok((bound_terms.bound(), bound_terms, report))
}

/// Concrete values of the rate decomposition's six terms; `terms[0]` is the
/// dominant `1/sqrt(m tau K)` term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTerms {
    pub terms: [f64; 6],
    /// `G^2 + sigma^2 / tau`.
    pub g_bar_sq: f64,
    /// `sqrt(m / (tau K))`.
    pub eta_cap: f64,
    /// Whether the configured eta satisfies `eta <= eta_cap`.
    pub eta_ok: bool,
}

impl RateTerms {
    pub fn dominant(&self) -> f64 {
        self.terms[0]
    }
}

/// Evaluate the rate decomposition's terms for concrete constants.
pub fn corollary1_rate(hyper: &HyperParams, consts: &ProblemConstants) -> RateTerms {
    let m = hyper.sampled as f64;
    let n = hyper.clients as f64;
    let tau = hyper.algorithm.effective_tau(hyper.tau) as f64;
    let k = hyper.rounds as f64;
    let g_tilde_sq = 2.0 * consts.g_sq * (1.0 / m - 1.0 / n);
    let g_bar_sq = consts.g_sq + consts.sigma_sq / tau;
    let mt = m * tau;
    let mtk = mt * k;
    let terms = [
        (consts.gamma + mt * g_tilde_sq + consts.sigma_sq) / mtk.sqrt(),
        (mt * g_bar_sq + consts.sigma_sq) / k,
        mt.powf(1.5) * g_bar_sq / k.powf(1.5),
        mt * mt * g_bar_sq / (k * k),
        mt.powf(2.5) * g_bar_sq / k.powf(2.5),
        mt.powi(3) * consts.sigma_sq / k.powi(3),
    ];
    let eta_cap = (m / (tau * k)).sqrt();
    RateTerms {
        terms,
        g_bar_sq,
        eta_cap,
        eta_ok: hyper.eta <= eta_cap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{ClientTrajectory, RoundTrajectories};
    use crate::data::{synth_quadratic, QuadraticProblem};

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::new(values.to_vec()).unwrap()
    }

    fn single_client_traj(x: &ParamVector, y_steps: &[ParamVector]) -> RoundTrajectories {
        let mut y = vec![x.clone()];
        y.extend_from_slice(y_steps);
        RoundTrajectories {
            per_client: vec![ClientTrajectory {
                client: 0,
                y,
                v: None,
            }],
        }
    }

    #[test]
    fn deviations_zero_at_consensus() {
        let x = pv(&[2.0, 2.0]);
        let trajs = RoundTrajectories {
            per_client: vec![ClientTrajectory {
                client: 0,
                y: vec![x.clone(), x.clone()],
                v: Some(vec![x.clone(), x.clone()]),
            }],
        };
        let rec = measure_deviations(&trajs, &x, &x, 0, 0.0).unwrap();
        assert_eq!(rec.agg_gap, 0.0);
        assert_eq!(rec.zeta, 0.0);
        assert_eq!(rec.psi, 0.0);
        assert_eq!(rec.phi, Some(0.0));
        assert_eq!(rec.phi0, Some(0.0));
    }

    #[test]
    fn deviations_forced_arithmetic_tau_one() {
        // tau = 1, single client, y_1 = x + [1]: zeta = 1. The j sum runs
        // over {0..tau-1}, so psi sees only y_0 = x and stays 0.
        let x = pv(&[0.0]);
        let trajs = single_client_traj(&x, &[pv(&[1.0])]);
        let rec = measure_deviations(&trajs, &x, &pv(&[1.0]), 0, 0.0).unwrap();
        assert_eq!(rec.zeta, 1.0);
        assert_eq!(rec.psi, 0.0);
        assert_eq!(rec.agg_gap, 1.0);
    }

    #[test]
    fn deviations_match_brute_force_loop() {
        use rand::Rng;
        let mut rng = RngStream::simple(5, Purpose::Probe).rng();
        let dim = 3;
        let n = 4;
        let tau = 5;
        let x = pv(&(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let rand_pv = |rng: &mut rand_chacha::ChaCha8Rng| {
            ParamVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let per_client: Vec<ClientTrajectory> = (0..n)
            .map(|client| ClientTrajectory {
                client,
                y: (0..=tau).map(|_| rand_pv(&mut rng)).collect(),
                v: Some((0..=tau).map(|_| rand_pv(&mut rng)).collect()),
            })
            .collect();
        let trajs = RoundTrajectories { per_client };
        let x_next = rand_pv(&mut rng);
        let rec = measure_deviations(&trajs, &x, &x_next, 3, 0.25).unwrap();

        // Brute-force second summation.
        let mut zeta = 0.0;
        let mut psi = 0.0;
        let mut phi = 0.0;
        let mut phi0 = 0.0;
        for t in &trajs.per_client {
            zeta += t.y[tau].squared_distance(&x);
            for j in 0..tau {
                psi += t.y[j].squared_distance(&x);
                phi += t.v.as_ref().unwrap()[j].squared_distance(&x);
            }
            phi0 += t.v.as_ref().unwrap()[0].squared_distance(&x);
        }
        let nf = n as f64;
        assert!((rec.zeta - zeta / nf).abs() <= 1e-12 * (1.0 + rec.zeta));
        assert!((rec.psi - psi / (nf * tau as f64)).abs() <= 1e-12 * (1.0 + rec.psi));
        assert!(
            (rec.phi.unwrap() - phi / (nf * tau as f64)).abs()
                <= 1e-12 * (1.0 + rec.phi.unwrap())
        );
        assert!((rec.phi0.unwrap() - phi0 / nf).abs() <= 1e-12 * (1.0 + rec.phi0.unwrap()));

        // Literal sanity: zeta bounded by the per-client max over recorded steps.
        let max_bound: f64 = trajs
            .per_client
            .iter()
            .map(|t| {
                t.y.iter()
                    .map(|y| y.squared_distance(&x))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / nf;
        assert!(rec.psi >= 0.0);
        assert!(rec.zeta <= max_bound + 1e-12);
    }

    #[test]
    fn theorem2_gap_examples() {
        let x_star = pv(&[1.0, 1.0]);
        let consensus = RoundTrajectories {
            per_client: vec![ClientTrajectory {
                client: 0,
                y: vec![x_star.clone(), x_star.clone()],
                v: Some(vec![x_star.clone(), x_star.clone()]),
            }],
        };
        assert_eq!(theorem2_gap(&[consensus], &x_star).unwrap(), 0.0);

        // Single client, tau = 1, v_0 - x* = [2]: gap = 4.
        let off = pv(&[3.0, 1.0]);
        let trajs = RoundTrajectories {
            per_client: vec![ClientTrajectory {
                client: 0,
                y: vec![x_star.clone(), x_star.clone()],
                v: Some(vec![off.clone(), off]),
            }],
        };
        assert_eq!(theorem2_gap(&[trajs], &x_star).unwrap(), 4.0);
    }

    #[test]
    fn constants_quadratic_exact() {
        let problem = synth_quadratic(6, 4, 0.0, 2).unwrap();
        let data = ProblemData::Quadratic(problem);
        let x0 = ParamVector::zeros(4);
        let c = estimate_constants(
            &ModelSpec::Quadratic { dim: 4 },
            &data,
            &x0,
            &ProbePlan::default(),
        )
        .unwrap();
        assert_eq!(c.beta, 1.0);
        assert_eq!(c.sigma_sq, 0.0);
        assert!((c.b_sq - 1.0).abs() <= 1e-9);
        assert!(c.g_sq.abs() <= 1e-9);
    }

    #[test]
    fn constants_recover_center_variance() {
        let problem = synth_quadratic(10, 5, 1.5, 7).unwrap();
        let expected_g_sq = problem.center_variance();
        let expected_gamma =
            problem.global_loss(&ParamVector::zeros(5)) - problem.global_loss(&problem.optimum());
        let data = ProblemData::Quadratic(problem);
        let c = estimate_constants(
            &ModelSpec::Quadratic { dim: 5 },
            &data,
            &ParamVector::zeros(5),
            &ProbePlan::default(),
        )
        .unwrap();
        assert!((c.b_sq - 1.0).abs() <= 1e-6, "B^2 = {}", c.b_sq);
        assert!(
            (c.g_sq - expected_g_sq).abs() <= 1e-6 * (1.0 + expected_g_sq),
            "G^2 = {} vs {}",
            c.g_sq,
            expected_g_sq
        );
        assert!((c.gamma - expected_gamma).abs() <= 1e-12 * (1.0 + expected_gamma));
    }

    #[test]
    fn noisy_quadratic_reports_injected_variance() {
        let problem = QuadraticProblem::new(vec![pv(&[0.0, 0.0])], 0.3).unwrap();
        let data = ProblemData::Quadratic(problem);
        let c = estimate_constants(
            &ModelSpec::Quadratic { dim: 2 },
            &data,
            &ParamVector::zeros(2),
            &ProbePlan::default(),
        )
        .unwrap();
        assert!((c.sigma_sq - 0.09).abs() < 1e-15);
    }

    fn fixed_constants() -> ProblemConstants {
        ProblemConstants {
            beta: 1.0,
            sigma_sq: 0.1,
            b_sq: 1.0,
            g_sq: 2.0,
            gamma: 1.0,
        }
    }

    fn fixed_hyper() -> HyperParams {
        HyperParams {
            eta: 0.001,
            rho: 0.0005,
            lambda: 0.5,
            tau: 10,
            rounds: 500,
            clients: 100,
            sampled: 10,
            batch_size: 1,
            mu: 1.0,
            algorithm: crate::algorithms::Algorithm::FedDeper,
        }
    }

    #[test]
    fn bound_terms_full_participation_identities() {
        let mut hyper = fixed_hyper();
        hyper.clients = 10;
        hyper.sampled = 10;
        let (_, terms, _) = theorem1_bound(&hyper, &fixed_constants()).unwrap();
        assert!((terms.b_tilde_sq - 1.0).abs() <= 1e-15);
        assert!(terms.g_tilde_sq.abs() <= 1e-15);
        assert!((terms.q - 80.0).abs() <= 1e-15);
    }

    #[test]
    fn zero_constants_give_zero_bound() {
        let consts = ProblemConstants {
            beta: 1.0,
            sigma_sq: 0.0,
            b_sq: 1.0,
            g_sq: 0.0,
            gamma: 0.0,
        };
        let (bound, _, _) = theorem1_bound(&fixed_hyper(), &consts).unwrap();
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn bound_reports_preconditions() {
        let mut hyper = fixed_hyper();
        hyper.clients = 10;
        hyper.sampled = 10;
        hyper.eta = 0.0001;
        hyper.rho = 0.00005;
        let (_, _, report) = theorem1_bound(&hyper, &fixed_constants()).unwrap();
        assert!(report.rho_ok);
        assert!(report.step_ok, "cap = {}", report.step_cap);
        hyper.rho = 1.0;
        hyper.eta = 0.5;
        let (_, _, report) = theorem1_bound(&hyper, &fixed_constants()).unwrap();
        assert!(!report.rho_ok);
        assert!(!report.step_ok);
    }

    #[test]
    fn rate_dominant_term_halves_when_k_quadruples() {
        let consts = fixed_constants();
        let mut hyper = fixed_hyper();
        let base = corollary1_rate(&hyper, &consts);
        hyper.rounds *= 4;
        hyper.eta /= 2.0;
        let scaled = corollary1_rate(&hyper, &consts);
        assert!(
            (scaled.dominant() - base.dominant() / 2.0).abs()
                <= 1e-12 * (1.0 + base.dominant())
        );
    }

    #[test]
    fn rate_zero_when_noise_free_and_converged_start() {
        let consts = ProblemConstants {
            beta: 1.0,
            sigma_sq: 0.0,
            b_sq: 1.0,
            g_sq: 0.0,
            gamma: 0.0,
        };
        let mut hyper = fixed_hyper();
        hyper.clients = 10;
        hyper.sampled = 10; // G~2 = 0 under full participation
        let rate = corollary1_rate(&hyper, &consts);
        assert_eq!(rate.dominant(), 0.0);
    }

    #[test]
    fn rate_matches_hand_decomposition() {
        let consts = fixed_constants();
        let hyper = fixed_hyper();
        let rate = corollary1_rate(&hyper, &consts);
        let m = 10.0;
        let tau = 10.0;
        let k = 500.0;
        let g_tilde = 2.0 * 2.0 * (1.0 / 10.0 - 1.0 / 100.0);
        let g_bar = 2.0 + 0.1 / tau;
        assert!((rate.terms[0] - (1.0 + m * tau * g_tilde + 0.1) / (m * tau * k).sqrt()).abs() < 1e-15);
        assert!((rate.terms[1] - (m * tau * g_bar + 0.1) / k).abs() < 1e-15);
        assert!((rate.terms[5] - (m * tau).powi(3) * 0.1 / k.powi(3)).abs() < 1e-15);
        assert!((rate.g_bar_sq - g_bar).abs() < 1e-15);
    }

    #[test]
    fn too_few_probes_is_rejected_for_supervised() {
        use crate::algorithms::SupervisedData;
        use crate::data::{partition_iid, LabeledDataset};
        use ndarray::Array2;
        let mut features = Array2::zeros((20, 2));
        for i in 0..20 {
            features[[i, 0]] = i as f64;
        }
        let labels = (0..20).map(|i| (i % 2) as u32).collect();
        let ds = LabeledDataset::new(features, labels, 2).unwrap();
        let partition = partition_iid(&ds, 2, 0).unwrap();
        let data = ProblemData::Supervised(SupervisedData::new(ds, partition).unwrap());
        let spec = ModelSpec::Logistic {
            features: 2,
            classes: 2,
        };
        let x0 = ParamVector::zeros(spec.param_count());
        let plan = ProbePlan {
            count: 5,
            ..ProbePlan::default()
        };
        assert!(matches!(
            estimate_constants(&spec, &data, &x0, &plan),
            Err(Error::TooFewProbes { got: 5, need: 30 })
        ));
    }

    #[test]
    fn dissimilarity_gap_positive_for_spread_centers() {
        let problem = synth_quadratic(8, 3, 2.0, 9).unwrap();
        let expected = problem.center_variance();
        let data = ProblemData::Quadratic(problem);
        let gap = dissimilarity_gap(
            &ModelSpec::Quadratic { dim: 3 },
            &data,
            &ParamVector::zeros(3),
        )
        .unwrap();
        assert!((gap - expected).abs() <= 1e-9 * (1.0 + expected));
    }
}
