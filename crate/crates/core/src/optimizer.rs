//! User association and per-AP energy-efficiency power allocation.
//!
//! The per-AP problem maximises `sum ln C_n(P_n) / sum P_n` over the box
//! `[rho_n, P_max_n]` and the AP budget, with `C_n = s ln(1 + a_n P_n) / ln 2`.
//! It is solved by a Dinkelbach outer loop whose parametric subproblem is
//! handled through its Lagrangian.

use serde::Serialize;

use crate::error::{ensure_non_negative, Error, Result};
use crate::phy::PhyParams;

/// Serving AP of every user; `None` means unassociated. A single optional
/// index per user makes "at most one AP" structural.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssociationMatrix {
    pub n_aps: usize,
    pub serving: Vec<Option<usize>>,
}

impl AssociationMatrix {
    pub fn empty(n_aps: usize, n_users: usize) -> Self {
        Self {
            n_aps,
            serving: vec![None; n_users],
        }
    }

    /// `S[a][n]` as a dense binary matrix (APs by users).
    pub fn dense(&self) -> Vec<Vec<u8>> {
        let mut s = vec![vec![0u8; self.serving.len()]; self.n_aps];
        for (n, a) in self.serving.iter().enumerate() {
            if let Some(a) = a {
                s[*a][n] = 1;
            }
        }
        s
    }

    pub fn users_of(&self, ap: usize) -> Vec<usize> {
        self.serving
            .iter()
            .enumerate()
            .filter_map(|(n, a)| (*a == Some(ap)).then_some(n))
            .collect()
    }

    pub fn served_count(&self) -> usize {
        self.serving.iter().filter(|a| a.is_some()).count()
    }
}

/// Per-user transmit powers and floors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerAllocation {
    pub power: Vec<f64>,
    pub floor: Vec<f64>,
}

/// Lagrange multipliers of one AP problem and their step sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualState {
    /// Floor multipliers, one per served user.
    pub lambda: Vec<f64>,
    /// Budget price of the AP.
    pub mu: f64,
    pub step_alpha1: f64,
    pub step_alpha2: f64,
}

/// One served user as seen by its AP's optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApUser {
    /// Rate coefficient `a` with `C = s log2(1 + a P)`.
    pub coefficient: f64,
    pub floor: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApProblem {
    pub users: Vec<ApUser>,
    pub budget: f64,
    /// `xi B` divided by the utility rate unit.
    pub rate_scale: f64,
}

impl ApProblem {
    pub fn rate(&self, j: usize, power: f64) -> f64 {
        self.rate_scale * (self.users[j].coefficient * power).ln_1p() / std::f64::consts::LN_2
    }

    pub fn utility(&self, j: usize, power: f64) -> f64 {
        self.rate(j, power).ln()
    }

    /// `sum ln C / sum P`.
    pub fn ee(&self, powers: &[f64]) -> f64 {
        let num: f64 = (0..self.users.len()).map(|j| self.utility(j, powers[j])).sum();
        num / powers.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizerParams {
    pub tol: f64,
    pub max_iter: usize,
    /// Base dual step sizes; iteration `i` uses `alpha / i`.
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            alpha1: 0.1,
            alpha2: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub ee: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EEResult {
    pub power: Vec<f64>,
    pub ee_value: f64,
    pub cf_db: f64,
    pub iterations: usize,
    pub converged: bool,
    pub duals: DualState,
    pub trace: Vec<TraceEntry>,
    /// Largest relative violation of the projected stationarity conditions.
    pub stationarity_residual: f64,
    /// Largest `|lambda (rho - P)|` or `|mu (sum P - budget)|`.
    pub slackness_residual: f64,
}

/// Smallest power meeting the class minimum rate, and at least `P_min`:
/// `Gamma (xi^2 sigma^2 + I) (2^(C_min / (xi B)) - 1) (2 pi / e) / (R H)^2`.
pub fn min_power_floor(
    interference: f64,
    min_rate: f64,
    power_min: f64,
    power_max: f64,
    gain: f64,
    phy: &PhyParams,
) -> Result<f64> {
    if !(gain > 0.0) {
        return Err(Error::InfeasibleFloor {
            required: f64::INFINITY,
            max: power_max,
        });
    }
    let rh = phy.responsivity * gain;
    let required = phy.link.sinr_gap
        * (phy.noise_term() + interference)
        * ((min_rate / phy.rate_scale()).exp2() - 1.0)
        * (2.0 * std::f64::consts::PI / std::f64::consts::E)
        / (rh * rh);
    let floor = required.max(power_min);
    if floor > power_max {
        return Err(Error::InfeasibleFloor {
            required: floor,
            max: power_max,
        });
    }
    Ok(floor)
}

/// Nearest AP by Euclidean distance; ties go to the lowest index.
pub fn associate_distance(users: &[[f64; 3]], aps: &[[f64; 3]]) -> AssociationMatrix {
    let serving = users
        .iter()
        .map(|u| {
            let mut best: Option<(usize, f64)> = None;
            for (a, p) in aps.iter().enumerate() {
                let d = ((u[0] - p[0]).powi(2) + (u[1] - p[1]).powi(2) + (u[2] - p[2]).powi(2)).sqrt();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((a, d));
                }
            }
            best.map(|(a, _)| a)
        })
        .collect();
    AssociationMatrix {
        n_aps: aps.len(),
        serving,
    }
}

/// Inputs of the PDP association for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Class priority key; larger is served first (the class minimum rate).
    pub priority: f64,
    /// Aggregate gain from every AP.
    pub gains: Vec<f64>,
    /// Power floor at every AP (`None` if the AP cannot meet the class rate).
    pub floors: Vec<Option<f64>>,
}

/// Greedy PDP association: users by descending priority (stable in input
/// order), each to the AP with the largest gain whose remaining budget covers
/// its floor there. `budgets` are the per-AP budgets left after the demand
/// reservations. Returns the association and the remaining budgets.
pub fn associate_pdp(candidates: &[Candidate], budgets: &[f64]) -> (AssociationMatrix, Vec<f64>) {
    let mut remaining = budgets.to_vec();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&x, &y| candidates[y].priority.total_cmp(&candidates[x].priority));
    let mut serving = vec![None; candidates.len()];
    for n in order {
        let c = &candidates[n];
        let mut best: Option<(usize, f64, f64)> = None;
        for (a, (&h, floor)) in c.gains.iter().zip(&c.floors).enumerate() {
            let Some(floor) = *floor else { continue };
            if h > 0.0 && remaining[a] >= floor && best.is_none_or(|(_, bh, _)| h > bh) {
                best = Some((a, h, floor));
            }
        }
        if let Some((a, _, floor)) = best {
            remaining[a] -= floor;
            serving[n] = Some(a);
        }
    }
    (
        AssociationMatrix {
            n_aps: budgets.len(),
            serving,
        },
        remaining,
    )
}

/// First-order coefficient of `U = ln C` in the power at `power`:
/// `dU/dP = (1/C) * s a / ((1 + a P) ln 2)`.
pub fn linearize_utility(power: f64, gain: f64, interference: f64, phy: &PhyParams, utility_unit: f64) -> Result<f64> {
    ensure_non_negative("power", power)?;
    let a = phy.rate_coefficient(gain, interference);
    let s = phy.rate_scale() / utility_unit;
    let c = s * (a * power).ln_1p() / std::f64::consts::LN_2;
    if !(c > 0.0) {
        return Err(Error::ZeroRate);
    }
    Ok(s * a / ((1.0 + a * power) * std::f64::consts::LN_2) / c)
}

/// Projected dual sub-gradient step:
/// `lambda <- max(0, lambda + alpha1 (rho - P))`,
/// `mu <- max(0, mu + alpha2 (sum P - budget))`.
pub fn dual_update(d: &DualState, power: &[f64], floors: &[f64], budget: f64) -> DualState {
    let lambda = d
        .lambda
        .iter()
        .zip(power.iter().zip(floors))
        .map(|(l, (p, r))| (l + d.step_alpha1 * (r - p)).max(0.0))
        .collect();
    let total: f64 = power.iter().sum();
    DualState {
        lambda,
        mu: (d.mu + d.step_alpha2 * (total - budget)).max(0.0),
        step_alpha1: d.step_alpha1,
        step_alpha2: d.step_alpha2,
    }
}

/// Marginal utility `d ln C / dP = a / ((1 + a P) ln(1 + a P))`.
pub fn marginal_utility(a: f64, power: f64) -> f64 {
    let x = a * power;
    if x < 1e-8 {
        // ln(1 + x) ~ x (1 - x/2) keeps the ratio accurate near zero.
        return 1.0 / (power * (1.0 + x) * (1.0 - 0.5 * x));
    }
    a / ((1.0 + x) * x.ln_1p())
}

/// Power at which the marginal utility equals `price`: solves
/// `y ln y = a / price` for `y = 1 + a P` by Newton's method from the right,
/// which converges monotonically because the left side is convex.
pub fn stationary_power(a: f64, price: f64) -> f64 {
    if !(price > 0.0) {
        return f64::INFINITY;
    }
    let k = a / price;
    if k <= 0.0 {
        return 0.0;
    }
    let mut y = k + std::f64::consts::E;
    for _ in 0..200 {
        let ln_y = y.ln();
        let h = y * ln_y - k;
        let next = y - h / (ln_y + 1.0);
        if !(next > 1.0) {
            y = 0.5 * (y + 1.0);
            continue;
        }
        if (y - next).abs() <= 1e-15 * y {
            y = next;
            break;
        }
        y = next;
    }
    // Small k puts y close to 1, where (y - 1) loses digits; refine in x.
    let mut x = (y - 1.0).max(0.0);
    for _ in 0..3 {
        let l = x.ln_1p();
        let h = (1.0 + x) * l - k;
        x = (x - h / (l + 1.0)).max(0.0);
    }
    x / a
}

fn primal_point(problem: &ApProblem, price: &[f64]) -> Vec<f64> {
    problem
        .users
        .iter()
        .zip(price)
        .map(|(u, &r)| stationary_power(u.coefficient, r).clamp(u.floor, u.cap))
        .collect()
}

/// Budget price making the projected stationary point spend exactly the
/// budget, found by bisection on the monotone total power.
fn budget_price(problem: &ApProblem, q: f64, lambda: &[f64]) -> f64 {
    let total = |mu: f64| -> f64 {
        let price: Vec<f64> = lambda.iter().map(|l| q - l + mu).collect();
        primal_point(problem, &price).iter().sum()
    };
    let mut lo = 0.0f64;
    let mut hi = 1.0f64.max(q.abs());
    while total(hi) > problem.budget {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > problem.budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Warm-start state carried between slots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmStart {
    pub power: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Energy-efficient power allocation for one AP.
///
/// Each outer iteration freezes the ratio `q` and solves the stationarity
/// condition of the Lagrangian
/// `sum ln C - q sum P - sum lambda (rho - P) - mu (sum P - budget)`,
/// i.e. `d ln C_n / dP = q - lambda_n + mu`, projects onto the box, prices
/// the budget when it binds, takes the dual step and updates `q` to the new
/// ratio. Without a warm start the iteration begins at the floors.
pub fn optimize_ap(problem: &ApProblem, params: &OptimizerParams, warm: Option<&WarmStart>) -> Result<EEResult> {
    let m = problem.users.len();
    if m == 0 {
        return Err(Error::EmptyNetwork);
    }
    let floor_sum: f64 = problem.users.iter().map(|u| u.floor).sum();
    if floor_sum > problem.budget * (1.0 + 1e-12) {
        return Err(Error::InfeasibleFloor {
            required: floor_sum,
            max: problem.budget,
        });
    }
    for u in &problem.users {
        if !(u.floor > 0.0 && u.floor <= u.cap && u.coefficient > 0.0) {
            return Err(Error::InvalidParameter {
                name: "ap user",
                reason: format!("need 0 < floor <= cap and a > 0, got {u:?}"),
            });
        }
    }
    let floors: Vec<f64> = problem.users.iter().map(|u| u.floor).collect();
    let mut power = match warm {
        Some(w) if w.power.len() == m => {
            let mut p: Vec<f64> = w.power.iter().zip(&problem.users).map(|(p, u)| p.clamp(u.floor, u.cap)).collect();
            fit_budget(&mut p, &floors, problem.budget);
            p
        }
        _ => floors.clone(),
    };
    let mut duals = DualState {
        lambda: warm.filter(|w| w.lambda.len() == m).map_or(vec![0.0; m], |w| w.lambda.clone()),
        mu: 0.0,
        step_alpha1: params.alpha1,
        step_alpha2: params.alpha2,
    };
    let mut q = problem.ee(&power);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=params.max_iter {
        iterations = it;
        let price: Vec<f64> = duals.lambda.iter().map(|l| q - l).collect();
        let mut next = primal_point(problem, &price);
        duals.mu = 0.0;
        if next.iter().sum::<f64>() > problem.budget {
            duals.mu = budget_price(problem, q, &duals.lambda);
            let price: Vec<f64> = duals.lambda.iter().map(|l| q - l + duals.mu).collect();
            next = primal_point(problem, &price);
            fit_budget(&mut next, &floors, problem.budget);
        }
        duals.step_alpha1 = params.alpha1 / it as f64;
        duals.step_alpha2 = params.alpha2 / it as f64;
        let mu_exact = duals.mu;
        duals = dual_update(&duals, &next, &floors, problem.budget);
        // The budget price is already the exact minimiser of the dual in mu;
        // a sub-gradient step on it could only move it away.
        duals.mu = mu_exact;
        let q_next = problem.ee(&next);
        let (stationarity, _) = kkt_residuals(problem, &next, q_next, &duals);
        trace.push(TraceEntry {
            ee: q_next,
            primal_residual: primal_violation(problem, &next),
            dual_residual: stationarity,
        });
        let delta = (q_next - q).abs();
        power = next;
        q = q_next;
        if delta <= params.tol * q.abs().max(1.0) && primal_violation(problem, &power) < 1e-9 {
            converged = true;
            break;
        }
    }
    let (stationarity_residual, slackness_residual) = kkt_residuals(problem, &power, q, &duals);
    let rate_sum: f64 = (0..m).map(|j| problem.rate(j, power[j])).sum();
    let power_sum: f64 = power.iter().sum();
    Ok(EEResult {
        ee_value: q,
        cf_db: 10.0 * (rate_sum / power_sum).log10(),
        power,
        iterations,
        converged,
        duals,
        trace,
        stationarity_residual,
        slackness_residual,
    })
}

/// Scales the above-floor part of `p` so that the total fits the budget.
fn fit_budget(p: &mut [f64], floors: &[f64], budget: f64) {
    let total: f64 = p.iter().sum();
    if total <= budget {
        return;
    }
    let floor_sum: f64 = floors.iter().sum();
    let excess = total - floor_sum;
    if excess <= 0.0 {
        return;
    }
    let scale = ((budget - floor_sum) / excess).clamp(0.0, 1.0);
    for (x, f) in p.iter_mut().zip(floors) {
        *x = f + (*x - f) * scale;
    }
}

fn primal_violation(problem: &ApProblem, p: &[f64]) -> f64 {
    let box_violation = problem
        .users
        .iter()
        .zip(p)
        .map(|(u, &x)| (u.floor - x).max(x - u.cap).max(0.0))
        .fold(0.0, f64::max);
    box_violation.max(p.iter().sum::<f64>() - problem.budget).max(0.0)
}

/// Relative stationarity residual over the box (with the box multipliers
/// implied by the projection) and the complementary-slackness products.
fn kkt_residuals(problem: &ApProblem, p: &[f64], q: f64, d: &DualState) -> (f64, f64) {
    let mut stationarity = 0.0f64;
    for ((u, &x), l) in problem.users.iter().zip(p).zip(&d.lambda) {
        let price = q - l + d.mu;
        let g = marginal_utility(u.coefficient, x);
        let scale = price.abs().max(g.abs()).max(1e-300);
        let at_floor = x <= u.floor * (1.0 + 1e-12);
        let at_cap = x >= u.cap * (1.0 - 1e-12);
        let r = if at_floor && at_cap {
            0.0
        } else if at_floor {
            (g - price).max(0.0)
        } else if at_cap {
            (price - g).max(0.0)
        } else {
            (g - price).abs()
        };
        stationarity = stationarity.max(r / scale);
    }
    let total: f64 = p.iter().sum();
    let mut slack = (d.mu * (total - problem.budget)).abs();
    for ((u, &x), l) in problem.users.iter().zip(p).zip(&d.lambda) {
        slack = slack.max((l * (u.floor - x)).abs());
    }
    (stationarity, slack)
}

/// Equal split of each AP's budget among its users, capped per user.
pub fn uniform_power(s: &AssociationMatrix, ap_budgets: &[f64], caps: &[f64]) -> Vec<f64> {
    let mut power = vec![0.0; s.serving.len()];
    for a in 0..s.n_aps {
        let users = s.users_of(a);
        if users.is_empty() {
            continue;
        }
        let share = ap_budgets[a] / users.len() as f64;
        for n in users {
            power[n] = share.min(caps[n]);
        }
    }
    power
}

/// Network objective `sum ln C / sum P` (rates in the utility unit) and the
/// consumption factor `10 log10(sum C / sum P)` in dB (rates in bit/s).
pub fn network_cf(s: &AssociationMatrix, power: &[f64], rates: &[f64], utility_unit: f64) -> Result<(f64, f64)> {
    let served: Vec<usize> = (0..s.serving.len()).filter(|&n| s.serving[n].is_some()).collect();
    if served.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    let p: f64 = served.iter().map(|&n| power[n]).sum();
    let c: f64 = served.iter().map(|&n| rates[n]).sum();
    let u: f64 = served.iter().map(|&n| (rates[n] / utility_unit).ln()).sum();
    Ok((u / p, 10.0 * (c / p).log10()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{NoiseModel, OfdmParams, QamLink};
    use approx::assert_relative_eq;

    fn phy() -> PhyParams {
        PhyParams {
            ofdm: OfdmParams::new(64, 1.5e9, 3.0).unwrap(),
            link: QamLink::new(1e-3, 4).unwrap(),
            noise: NoiseModel::from_components(1.5e9, 5.0, 300.0, 50.0, -155.0, 7e-3),
            responsivity: 0.7,
        }
    }

    fn problem(coefs: &[f64], floor: f64, cap: f64, budget: f64) -> ApProblem {
        ApProblem {
            users: coefs.iter().map(|&a| ApUser { coefficient: a, floor, cap }).collect(),
            budget,
            rate_scale: 1.45,
        }
    }

    #[test]
    fn floor_limits() {
        let phy = phy();
        assert_eq!(min_power_floor(0.0, 1e-9, 1e-3, 1.0, 1e-3, &phy).unwrap(), 1e-3);
        let cmin = phy.rate_scale() * 2.0;
        let f = min_power_floor(0.0, cmin, 0.0, 1e9, 1e-3, &phy).unwrap();
        let expected = 3.0 * phy.link.sinr_gap * phy.noise_term() * 2.0 * std::f64::consts::PI / std::f64::consts::E / (0.7e-3f64).powi(2);
        assert_relative_eq!(f, expected, max_relative = 1e-12);
        assert_relative_eq!(phy.user_rate(f, 1e-3, 0.0), cmin, max_relative = 1e-9);
        assert!(matches!(min_power_floor(0.0, cmin, 0.0, f / 2.0, 1e-3, &phy), Err(Error::InfeasibleFloor { .. })));
    }

    #[test]
    fn floor_linear_in_noise_plus_interference() {
        let phy = phy();
        let n0 = phy.noise_term();
        let f1 = min_power_floor(n0, 1e9, 0.0, 1e9, 1e-3, &phy).unwrap();
        let f2 = min_power_floor(3.0 * n0, 1e9, 0.0, 1e9, 1e-3, &phy).unwrap();
        assert_relative_eq!(f2, 2.0 * f1, max_relative = 1e-12);
    }

    #[test]
    fn distance_association() {
        let aps = [[0.0, 0.0, 3.0], [2.0, 0.0, 3.0], [1.0, 0.0, 3.0]];
        let s = associate_distance(&[[1.0, 0.1, 1.0], [0.5, 0.0, 1.0], [1.9, 0.0, 1.0]], &aps);
        assert_eq!(s.serving, vec![Some(2), Some(0), Some(1)]);
        let tie = associate_distance(&[[0.5, 0.0, 1.0]], &[[0.0, 0.0, 3.0], [1.0, 0.0, 3.0]]);
        assert_eq!(tie.serving, vec![Some(0)]);
    }

    #[test]
    fn pdp_association_budget() {
        let c = Candidate {
            priority: 1.0,
            gains: vec![1.0],
            floors: vec![Some(0.5)],
        };
        let (s, left) = associate_pdp(std::slice::from_ref(&c), &[1.0]);
        assert_eq!(s.serving, vec![Some(0)]);
        assert_relative_eq!(left[0], 0.5);
        let (s, _) = associate_pdp(&[c], &[0.4]);
        assert_eq!(s.serving, vec![None]);
    }

    #[test]
    fn pdp_association_priority_and_fallback() {
        let hi = Candidate {
            priority: 10.0,
            gains: vec![2.0, 1.0],
            floors: vec![Some(0.8), Some(0.8)],
        };
        let lo = Candidate {
            priority: 1.0,
            gains: vec![2.0, 1.0],
            floors: vec![Some(0.5), Some(0.5)],
        };
        let (s, _) = associate_pdp(&[lo, hi], &[1.0, 1.0]);
        assert_eq!(s.serving, vec![Some(1), Some(0)]);
    }

    #[test]
    fn linearization_matches_finite_difference() {
        let phy = phy();
        for &(p, h, i) in &[(1e-3, 1e-3, 0.0), (0.05, 2.0, 0.3), (0.2, 30.0, 1.0)] {
            let g = linearize_utility(p, h, i, &phy, 1e9).unwrap();
            let u = |x: f64| (phy.user_rate(x, h, i) / 1e9).ln();
            let d = 1e-6 * p;
            let fd = (u(p + d) - u(p)) / d;
            assert!((fd - g).abs() / g < 1e-2);
            assert!(linearize_utility(2.0 * p, h, i, &phy, 1e9).unwrap() < g);
        }
        assert!(matches!(linearize_utility(0.0, 1.0, 0.0, &phy, 1e9), Err(Error::ZeroRate)));
    }

    #[test]
    fn dual_update_rules() {
        let d = DualState {
            lambda: vec![0.3, 0.0],
            mu: 0.2,
            step_alpha1: 0.1,
            step_alpha2: 0.1,
        };
        let same = dual_update(&d, &[0.5, 0.5], &[0.5, 0.5], 1.0);
        assert_eq!(same, d);
        let slack = dual_update(&d, &[0.6, 0.6], &[0.5, 0.5], 1.5);
        assert_eq!(slack.lambda[1], 0.0);
        let mut cur = d.clone();
        for _ in 0..100 {
            let next = dual_update(&cur, &[0.6, 0.6], &[0.5, 0.5], 1.5);
            assert!(next.lambda[0] <= cur.lambda[0] && next.mu <= cur.mu);
            cur = next;
        }
        assert_eq!(cur.lambda[0], 0.0);
        assert_eq!(cur.mu, 0.0);
    }

    #[test]
    fn stationary_power_inverts_marginal() {
        for &a in &[1e-2, 1.0, 1e3, 1e6] {
            for &p in &[1e-6, 1e-3, 0.1, 2.0] {
                let g = marginal_utility(a, p);
                assert_relative_eq!(stationary_power(a, g), p, max_relative = 1e-9);
            }
        }
        assert_eq!(stationary_power(1.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn single_user_stationarity() {
        let prob = problem(&[2e4], 1e-5, 1.0, 1.25);
        let r = optimize_ap(&prob, &OptimizerParams::default(), None).unwrap();
        assert!(r.converged);
        let p = r.power[0];
        assert!(p > 1e-5 && p < 1.0);
        let d = 1e-6 * p;
        let fd = (prob.utility(0, p + d) - prob.utility(0, p - d)) / (2.0 * d);
        assert!((fd - r.ee_value).abs() / r.ee_value < 1e-4);
    }

    #[test]
    fn symmetric_users_get_equal_power() {
        let prob = problem(&[5e3, 5e3], 1e-5, 1.0, 1.25);
        let r = optimize_ap(&prob, &OptimizerParams::default(), None).unwrap();
        assert!((r.power[0] - r.power[1]).abs() < 1e-9);
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let prob = problem(&[3e2, 4e3, 9e4], 2e-4, 0.4, 0.5);
        let r = optimize_ap(&prob, &OptimizerParams::default(), None).unwrap();
        assert!(r.converged);
        for w in r.trace.windows(2) {
            assert!(w[1].ee >= w[0].ee - 1e-9 * w[0].ee.abs());
        }
        assert!(r.power.iter().sum::<f64>() <= 0.5 + 1e-9);
        assert!(r.stationarity_residual < 1e-6 && r.slackness_residual < 1e-6);
    }

    #[test]
    fn binding_budget_is_priced() {
        // Large floors push the optimum against the budget.
        let prob = problem(&[1e-1, 2e-1], 0.2, 1.0, 0.5);
        let r = optimize_ap(&prob, &OptimizerParams::default(), None).unwrap();
        assert!(r.power.iter().sum::<f64>() <= 0.5 + 1e-9);
        assert!(r.stationarity_residual < 1e-6, "{}", r.stationarity_residual);
        assert!(r.slackness_residual < 1e-6);
    }

    #[test]
    fn uniform_examples() {
        let s = AssociationMatrix {
            n_aps: 2,
            serving: vec![Some(0), Some(0), Some(0), Some(0), Some(0), Some(1), None],
        };
        let p = uniform_power(&s, &[1.25, 1.25], &[10.0; 7]);
        assert_relative_eq!(p[0], 0.25);
        assert_relative_eq!(p[5], 1.25);
        assert_eq!(p[6], 0.0);
        let capped = uniform_power(&s, &[1.25, 1.25], &[0.2; 7]);
        assert_relative_eq!(capped[0], 0.2);
    }

    #[test]
    fn network_objective() {
        let s = AssociationMatrix {
            n_aps: 1,
            serving: vec![Some(0)],
        };
        let (obj, cf) = network_cf(&s, &[1.0], &[2.0], 1.0).unwrap();
        assert_relative_eq!(obj, 2f64.ln());
        assert_relative_eq!(cf, 10.0 * 2f64.log10());
        let (half, _) = network_cf(&s, &[2.0], &[2.0], 1.0).unwrap();
        assert_relative_eq!(half, obj / 2.0);
        assert!(matches!(network_cf(&AssociationMatrix::empty(1, 1), &[0.0], &[0.0], 1.0), Err(Error::EmptyNetwork)));
    }
}
