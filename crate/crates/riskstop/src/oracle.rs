//! Exact verification of the bound identities on small binary trees.
//!
//! Everything here is a finite sum: stopping rules are enumerated
//! exhaustively, stopped distributions are exact, and the distorted values
//! come out of [`crate::empirical`] with no sampling error. That turns the
//! pathwise dual equality and the threshold-representation identity into
//! machine-precision assertions, which is what the battery runners check.

use crate::distortion::DistortionFn;
use crate::empirical::EmpiricalDist;
use crate::error::{Error, Result};
use crate::market::Dynamics;
use crate::measure::mu_from_distortion;
use crate::rng::Substream;
use crate::scalar::Real;
use crate::transform::{TransformedPayoff, ZSpec};
use serde::Serialize;

/// Absolute tolerance of the exact checks. Tree payoffs are O(1) dyadics,
/// so no scaling is needed.
pub const EXACT_TOL: f64 = 1e-12;

/// Hard cap on enumeration work.
pub const RULE_BUDGET: u64 = 1 << 20;

/// Full binary tree in heap order: node `i` has children `2i+1`, `2i+2`;
/// nodes `0..2^depth-1` are internal, the rest are leaves.
#[derive(Debug, Clone)]
pub struct TreeModel<T: Real> {
    depth: usize,
    /// One payoff per node, heap order, all nonnegative.
    payoffs: Vec<T>,
    /// `up_probs[i]` is the probability of moving from internal node `i` to
    /// child `2i+1`.
    up_probs: Vec<T>,
}

impl<T: Real> TreeModel<T> {
    pub const MAX_DEPTH: usize = 5;

    pub fn new(depth: usize, payoffs: Vec<T>, up_probs: Vec<T>) -> Result<Self> {
        if depth == 0 || depth > Self::MAX_DEPTH {
            return Err(Error::validation(format!(
                "tree depth {depth} outside 1..={}",
                Self::MAX_DEPTH
            )));
        }
        let n_nodes = (1usize << (depth + 1)) - 1;
        let n_internal = (1usize << depth) - 1;
        if payoffs.len() != n_nodes {
            return Err(Error::validation(format!(
                "{} payoffs for a depth-{depth} tree with {n_nodes} nodes",
                payoffs.len()
            )));
        }
        if up_probs.len() != n_internal {
            return Err(Error::validation(format!(
                "{} edge probabilities, expected {n_internal}",
                up_probs.len()
            )));
        }
        if payoffs.iter().any(|y| !(*y >= T::zero()) || !y.is_finite()) {
            return Err(Error::validation("payoffs must be finite and >= 0".to_string()));
        }
        if up_probs.iter().any(|p| !(*p > T::zero() && *p < T::one())) {
            return Err(Error::validation("edge probabilities must lie in (0,1)".to_string()));
        }
        Ok(TreeModel { depth, payoffs, up_probs })
    }

    /// Tree with fair coin edges and dyadic payoffs `k/64`, `k <= 128`.
    pub fn random(depth: usize, seed: u64) -> Result<Self> {
        let n_nodes = (1usize << (depth + 1)) - 1;
        let n_internal = (1usize << depth) - 1;
        let mut rng = Substream::new(seed, &[depth as u64]);
        let payoffs = (0..n_nodes)
            .map(|_| T::of((rng.next_u64() % 129) as f64 / 64.0))
            .collect();
        let half = T::of(0.5);
        TreeModel::new(depth, payoffs, vec![half; n_internal])
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_nodes(&self) -> usize {
        self.payoffs.len()
    }

    pub fn n_internal(&self) -> usize {
        self.up_probs.len()
    }

    pub fn payoff(&self, node: usize) -> T {
        self.payoffs[node]
    }

    pub fn up_prob(&self, node: usize) -> T {
        self.up_probs[node]
    }

    fn is_internal(&self, node: usize) -> bool {
        node < self.up_probs.len()
    }
}

/// Stopping rule as a bitmask over internal nodes; leaves always stop.
/// Canonical form: no bit is set below another set bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoppingRule(pub u64);

impl StoppingRule {
    pub fn stops_at(&self, node: usize) -> bool {
        node < 64 && self.0 >> node & 1 == 1
    }

    /// Checks the bits address internal nodes only and no stopped node has a
    /// stopped ancestor.
    pub fn validate<T: Real>(&self, tree: &TreeModel<T>) -> Result<()> {
        let n_internal = tree.n_internal();
        if n_internal < 64 && self.0 >> n_internal != 0 {
            return Err(Error::validation(format!(
                "rule {:#x} references nodes beyond the {n_internal} internal ones",
                self.0
            )));
        }
        for node in 0..n_internal {
            if !self.stops_at(node) {
                continue;
            }
            let mut anc = node;
            while anc > 0 {
                anc = (anc - 1) / 2;
                if self.stops_at(anc) {
                    return Err(Error::validation(format!(
                        "rule {:#x} stops at {node} under stopped ancestor {anc}",
                        self.0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Number of canonical stopping rules of a depth-`d` tree:
/// `R(0) = 1`, `R(d) = 1 + R(d-1)^2`.
pub fn rule_count(depth: usize) -> u64 {
    let mut r = 1u64;
    for _ in 0..depth {
        r = 1 + r * r;
    }
    r
}

/// Enumerates every canonical stopping rule exactly once.
pub fn enumerate_rules<T: Real>(tree: &TreeModel<T>) -> Result<Vec<StoppingRule>> {
    if rule_count(tree.depth()) > RULE_BUDGET {
        return Err(Error::Budget(format!(
            "{} rules exceed the budget of {RULE_BUDGET}",
            rule_count(tree.depth())
        )));
    }
    fn subtree<T: Real>(tree: &TreeModel<T>, node: usize) -> Vec<u64> {
        if !tree.is_internal(node) {
            return vec![0];
        }
        let left = subtree(tree, 2 * node + 1);
        let right = subtree(tree, 2 * node + 2);
        let mut out = Vec::with_capacity(1 + left.len() * right.len());
        out.push(1u64 << node);
        for &l in &left {
            for &r in &right {
                out.push(l | r);
            }
        }
        out
    }
    Ok(subtree(tree, 0).into_iter().map(StoppingRule).collect())
}

/// Exact distribution of the payoff at the rule's first stop.
pub fn stopped_distribution<T: Real>(
    tree: &TreeModel<T>,
    rule: &StoppingRule,
) -> Result<EmpiricalDist<T>> {
    rule.validate(tree)?;
    let mut values = Vec::new();
    let mut weights = Vec::new();
    let mut stack = vec![(0usize, T::one())];
    while let Some((node, prob)) = stack.pop() {
        if !tree.is_internal(node) || rule.stops_at(node) {
            values.push(tree.payoff(node));
            weights.push(prob);
        } else {
            let p = tree.up_prob(node);
            stack.push((2 * node + 1, prob * p));
            stack.push((2 * node + 2, prob * (T::one() - p)));
        }
    }
    EmpiricalDist::with_weights(values, weights)
}

/// Distorted expectation of the stopped payoff under `g`.
pub fn rule_value<T: Real>(
    tree: &TreeModel<T>,
    rule: &StoppingRule,
    g: &DistortionFn<T>,
) -> Result<T> {
    stopped_distribution(tree, rule)?.choquet(g)
}

/// Maximum of [`rule_value`] over all rules, with the first argmax in
/// enumeration order.
pub fn exact_value<T: Real>(tree: &TreeModel<T>, g: &DistortionFn<T>) -> Result<(T, StoppingRule)> {
    let rules = enumerate_rules(tree)?;
    let mut best_value = T::neg_infinity();
    let mut best_rule = rules[0];
    for rule in rules {
        let v = rule_value(tree, &rule, g)?;
        if v > best_value {
            best_value = v;
            best_rule = rule;
        }
    }
    Ok((best_value, best_rule))
}

/// Outcome of [`snell_dual_check`].
#[derive(Debug, Clone, Serialize)]
pub struct SnellDualReport {
    /// Root value of the exact backward induction on the transformed payoff.
    pub snell_value: f64,
    /// Max over rules of the plain expected stopped transformed payoff.
    pub best_rule_value: f64,
    /// `|snell_value - best_rule_value|`.
    pub rule_gap: f64,
    /// Worst over root-to-leaf paths of `|max_j (U_j - M_j) - snell_value|`.
    pub pathwise_deviation: f64,
    pub passed: bool,
}

/// Verifies the two exact dual identities for the transformed payoff `U`:
/// the backward-induction value equals the best rule value, and with the
/// centered increments of the exact value process the pathwise maximum of
/// `U_j - M_j` equals that value on every single path.
pub fn snell_dual_check<T: Real>(
    tree: &TreeModel<T>,
    transform: &TransformedPayoff<T>,
) -> Result<SnellDualReport> {
    snell_dual_check_perturbed(tree, transform, T::zero())
}

/// [`snell_dual_check`] with `perturbation` added to the martingale
/// increment of node 1; any nonzero value must break the pathwise equality,
/// which is used as a self-test of the checker.
pub fn snell_dual_check_perturbed<T: Real>(
    tree: &TreeModel<T>,
    transform: &TransformedPayoff<T>,
    perturbation: T,
) -> Result<SnellDualReport> {
    let n_nodes = tree.n_nodes();
    let mut u = Vec::with_capacity(n_nodes);
    for node in 0..n_nodes {
        u.push(transform.value(tree.payoff(node)));
    }
    let mut v = u.clone();
    for node in (0..tree.n_internal()).rev() {
        let p = tree.up_prob(node);
        let cont = p * v[2 * node + 1] + (T::one() - p) * v[2 * node + 2];
        if cont > v[node] {
            v[node] = cont;
        }
    }

    let rules = enumerate_rules(tree)?;
    let mut best = T::neg_infinity();
    for rule in &rules {
        let dist = stopped_distribution(tree, rule)?;
        let mut mean = T::zero();
        for (y, w) in dist.iter() {
            mean = mean + w * transform.value(y);
        }
        if mean > best {
            best = mean;
        }
    }
    let rule_gap = (v[0] - best).abs();

    // Doob increments of V, perturbed at node 1 if requested
    let mut increments = vec![T::zero(); n_nodes];
    for node in 0..tree.n_internal() {
        let p = tree.up_prob(node);
        let cont = p * v[2 * node + 1] + (T::one() - p) * v[2 * node + 2];
        increments[2 * node + 1] = v[2 * node + 1] - cont;
        increments[2 * node + 2] = v[2 * node + 2] - cont;
    }
    if n_nodes > 1 {
        increments[1] = increments[1] + perturbation;
    }

    let mut pathwise_deviation = T::zero();
    let n_leaves = 1usize << tree.depth();
    for leaf in 0..n_leaves {
        let mut node = 0usize;
        let mut m = T::zero();
        let mut path_max = u[0];
        for level in 0..tree.depth() {
            let go_up = leaf >> (tree.depth() - 1 - level) & 1 == 0;
            node = if go_up { 2 * node + 1 } else { 2 * node + 2 };
            m = m + increments[node];
            if u[node] - m > path_max {
                path_max = u[node] - m;
            }
        }
        let dev = (path_max - v[0]).abs();
        if dev > pathwise_deviation {
            pathwise_deviation = dev;
        }
    }

    let tol = T::of(EXACT_TOL);
    Ok(SnellDualReport {
        snell_value: v[0].as_f64(),
        best_rule_value: best.as_f64(),
        rule_gap: rule_gap.as_f64(),
        pathwise_deviation: pathwise_deviation.as_f64(),
        passed: rule_gap <= tol && pathwise_deviation <= tol,
    })
}

/// Outcome of [`primal_identity_check`].
#[derive(Debug, Clone, Serialize)]
pub struct PrimalIdentityReport {
    /// Max over rules of the distorted stopped value.
    pub exact: f64,
    /// Worst over rules of `|inf_x E[U_tau] - distorted value|`.
    pub worst_rule_mismatch: f64,
    /// `|sup_tau inf_x - exact|`.
    pub sup_inf_gap: f64,
    /// `inf_x sup_tau - exact`; nonnegative, and zero is not guaranteed on
    /// finite trees.
    pub weak_duality_gap: f64,
    pub passed: bool,
}

/// Verifies the threshold representation of the distorted stopping value.
///
/// The threshold grid holds 0, every node payoff, and each rule's stopped
/// quantiles at the measure's atom levels, so the per-rule infima are
/// attained on the grid and the identities hold to machine precision:
/// per rule, `inf_x E[U(Y_tau)]` equals the distorted value of the stopped
/// distribution, and the sup over rules of the infima equals
/// [`exact_value`]. The exchanged order (inf over a shared grid of the sup
/// over rules) is reported as a gap, which weak duality makes nonnegative.
pub fn primal_identity_check<T: Real>(
    tree: &TreeModel<T>,
    g: &DistortionFn<T>,
) -> Result<PrimalIdentityReport> {
    let mu = mu_from_distortion(g)?;
    let atoms = match mu.atoms() {
        Some(atoms) => atoms.to_vec(),
        None => {
            return Err(Error::incompatible(
                "threshold identity check needs a finite-atom measure".to_string(),
            ))
        }
    };
    let rules = enumerate_rules(tree)?;
    let dists: Vec<EmpiricalDist<T>> = rules
        .iter()
        .map(|rule| stopped_distribution(tree, rule))
        .collect::<Result<_>>()?;

    let mut grid: Vec<T> = vec![T::zero()];
    for node in 0..tree.n_nodes() {
        grid.push(tree.payoff(node));
    }
    for dist in &dists {
        for &(level, _) in &atoms {
            if level < T::one() {
                grid.push(dist.quantile_left(T::one() - level)?);
            }
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    grid.dedup();

    // cell(x) = x + E[(Y - x)^+] / s, one cell per atom at level s
    let cell = |dist: &EmpiricalDist<T>, level: T, x: T| -> T {
        let mut tail = T::zero();
        for (y, w) in dist.iter() {
            if y > x {
                tail = tail + w * (y - x);
            }
        }
        x + tail / level
    };

    let mut exact = T::neg_infinity();
    let mut sup_inf = T::neg_infinity();
    let mut worst_rule_mismatch = T::zero();
    for dist in &dists {
        let direct = dist.choquet(g)?;
        let mut inf = T::zero();
        for &(level, weight) in &atoms {
            let mut least = T::infinity();
            for &x in &grid {
                let v = cell(dist, level, x);
                if v < least {
                    least = v;
                }
            }
            inf = inf + weight * least;
        }
        let mismatch = (inf - direct).abs();
        if mismatch > worst_rule_mismatch {
            worst_rule_mismatch = mismatch;
        }
        if direct > exact {
            exact = direct;
        }
        if inf > sup_inf {
            sup_inf = inf;
        }
    }
    let sup_inf_gap = (sup_inf - exact).abs();

    // exchanged order over level vectors on the same grid, one level per
    // interior atom (the unit atom's threshold is pinned at 0)
    let n_interior = atoms.iter().filter(|&&(l, _)| l < T::one()).count();
    let combos = (grid.len() as u64).checked_pow(n_interior as u32);
    match combos {
        Some(c) if c <= RULE_BUDGET => {}
        _ => {
            return Err(Error::Budget(format!(
                "{} grid points ^ {n_interior} atoms exceeds the budget",
                grid.len()
            )))
        }
    }
    let mut weak_duality_gap = T::infinity();
    let mut index = vec![0usize; n_interior];
    loop {
        let levels: Vec<T> = index.iter().map(|&i| grid[i]).collect();
        let z = ZSpec::finite_levels(levels)?;
        let tp = TransformedPayoff::new(&mu, &z)?;
        let mut sup = T::neg_infinity();
        for dist in &dists {
            let mut mean = T::zero();
            for (y, w) in dist.iter() {
                mean = mean + w * tp.value(y);
            }
            if mean > sup {
                sup = mean;
            }
        }
        if sup < weak_duality_gap {
            weak_duality_gap = sup;
        }
        // odometer over grid^n_interior
        let mut carry = true;
        for slot in index.iter_mut() {
            *slot += 1;
            if *slot < grid.len() {
                carry = false;
                break;
            }
            *slot = 0;
        }
        if carry {
            break;
        }
    }
    let weak_duality_gap = weak_duality_gap - exact;

    let tol = T::of(EXACT_TOL);
    Ok(PrimalIdentityReport {
        exact: exact.as_f64(),
        worst_rule_mismatch: worst_rule_mismatch.as_f64(),
        sup_inf_gap: sup_inf_gap.as_f64(),
        weak_duality_gap: weak_duality_gap.as_f64(),
        passed: worst_rule_mismatch <= tol
            && sup_inf_gap <= tol
            && weak_duality_gap >= -tol,
    })
}

/// Adapter exposing a tree as simulation dynamics, for end-to-end runs of
/// the Monte Carlo machinery against the exact values.
///
/// The state is the heap index; regression features are the one-hot encoding
/// of the position within the date's level.
pub struct TreeDynamics<'a> {
    tree: &'a TreeModel<f64>,
}

impl<'a> TreeDynamics<'a> {
    pub fn new(tree: &'a TreeModel<f64>) -> Self {
        TreeDynamics { tree }
    }
}

impl Dynamics for TreeDynamics<'_> {
    fn n_dates(&self) -> usize {
        self.tree.depth() + 1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn initial_state(&self, out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn step(&self, state: &mut [f64], _from: usize, rng: &mut Substream) {
        let node = state[0] as usize;
        state[0] = if rng.next_uniform() < self.tree.up_prob(node) {
            (2 * node + 1) as f64
        } else {
            (2 * node + 2) as f64
        };
    }

    fn payoff(&self, state: &[f64], _date: usize) -> f64 {
        self.tree.payoff(state[0] as usize)
    }

    fn n_features(&self) -> usize {
        (1usize << self.tree.depth().saturating_sub(1)).max(1)
    }

    fn features(&self, state: &[f64], date: usize, _transformed_payoff: f64, out: &mut [f64]) {
        out.fill(0.0);
        let node = state[0] as usize;
        let level_base = (1usize << date) - 1;
        out[node - level_base] = 1.0;
    }
}

/// Aggregate outcome of [`run_battery`].
#[derive(Debug, Clone, Serialize)]
pub struct BatteryReport {
    pub n_trees: usize,
    pub n_checks: usize,
    pub n_passed: usize,
    pub worst_rule_gap: f64,
    pub worst_pathwise_deviation: f64,
    pub worst_rule_mismatch: f64,
    pub worst_sup_inf_gap: f64,
    pub min_weak_duality_gap: f64,
    pub passed: bool,
}

/// Runs both exact checks over random trees and a spread of distortions.
///
/// Tree `t` has depth `1 + (t mod max_depth)`. Each tree is checked under a
/// tail-average, a semideviation and an expectile distortion; the dual check
/// fixes the threshold at the median node payoff. A nonzero
/// `martingale_perturbation` is injected into every dual check and must make
/// the battery fail.
pub fn run_battery(
    n_trees: usize,
    max_depth: usize,
    seed: u64,
    martingale_perturbation: f64,
) -> Result<BatteryReport> {
    if n_trees == 0 {
        return Err(Error::validation("need at least one tree".to_string()));
    }
    if max_depth == 0 || max_depth > TreeModel::<f64>::MAX_DEPTH {
        return Err(Error::validation(format!(
            "max depth {max_depth} outside 1..={}",
            TreeModel::<f64>::MAX_DEPTH
        )));
    }
    let families: Vec<DistortionFn<f64>> = vec![
        DistortionFn::avar_level(0.5)?,
        DistortionFn::semidev_kappa(1.0, 0.5)?,
        DistortionFn::expectile_gamma(0.75, 2.0 / 3.0)?,
    ];
    let mut report = BatteryReport {
        n_trees,
        n_checks: 0,
        n_passed: 0,
        worst_rule_gap: 0.0,
        worst_pathwise_deviation: 0.0,
        worst_rule_mismatch: 0.0,
        worst_sup_inf_gap: 0.0,
        min_weak_duality_gap: f64::INFINITY,
        passed: true,
    };
    for t in 0..n_trees {
        let depth = 1 + t % max_depth;
        let tree = TreeModel::<f64>::random(depth, seed.wrapping_add(t as u64))?;
        let mut sorted = (0..tree.n_nodes()).map(|i| tree.payoff(i)).collect::<Vec<_>>();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = sorted[sorted.len() / 2];
        for g in &families {
            let mu = mu_from_distortion(g)?;
            let interior =
                mu.atoms().map_or(0, |a| a.iter().filter(|&&(l, _)| l < 1.0).count());
            let z = ZSpec::finite_levels(vec![median; interior])?;
            let tp = TransformedPayoff::new(&mu, &z)?;
            let dual = snell_dual_check_perturbed(&tree, &tp, martingale_perturbation)?;
            let primal = primal_identity_check(&tree, g)?;
            report.n_checks += 2;
            report.n_passed += usize::from(dual.passed) + usize::from(primal.passed);
            report.worst_rule_gap = report.worst_rule_gap.max(dual.rule_gap);
            report.worst_pathwise_deviation =
                report.worst_pathwise_deviation.max(dual.pathwise_deviation);
            report.worst_rule_mismatch =
                report.worst_rule_mismatch.max(primal.worst_rule_mismatch);
            report.worst_sup_inf_gap = report.worst_sup_inf_gap.max(primal.sup_inf_gap);
            report.min_weak_duality_gap =
                report.min_weak_duality_gap.min(primal.weak_duality_gap);
            report.passed &= dual.passed && primal.passed;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::simulate;

    fn depth1_tree(root: f64, up: f64, down: f64) -> TreeModel<f64> {
        TreeModel::new(1, vec![root, up, down], vec![0.5]).unwrap()
    }

    #[test]
    fn rule_counts_follow_the_recursion() {
        assert_eq!(rule_count(1), 2);
        assert_eq!(rule_count(2), 5);
        assert_eq!(rule_count(3), 26);
        assert_eq!(rule_count(4), 677);
        assert_eq!(rule_count(5), 458330);
        for depth in 1..=4 {
            let tree = TreeModel::<f64>::random(depth, 7).unwrap();
            let rules = enumerate_rules(&tree).unwrap();
            assert_eq!(rules.len() as u64, rule_count(depth));
            for rule in &rules {
                rule.validate(&tree).unwrap();
            }
            let mut seen = rules.iter().map(|r| r.0).collect::<Vec<_>>();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), rules.len(), "duplicate rules at depth {depth}");
        }
    }

    #[test]
    fn tail_average_prefers_the_risky_branch() {
        let tree = depth1_tree(4.0, 0.0, 10.0);
        let g = DistortionFn::avar_level(0.5).unwrap();
        let stop = StoppingRule(1);
        let go = StoppingRule(0);
        assert_eq!(rule_value(&tree, &stop, &g).unwrap(), 4.0);
        assert_eq!(rule_value(&tree, &go, &g).unwrap(), 10.0);
        let (value, rule) = exact_value(&tree, &g).unwrap();
        assert_eq!(value, 10.0);
        assert_eq!(rule, go);
    }

    #[test]
    fn identity_distortion_matches_backward_induction() {
        for seed in 0..5u64 {
            let tree = TreeModel::<f64>::random(3, seed).unwrap();
            let (value, _) = exact_value(&tree, &DistortionFn::identity()).unwrap();
            // independent backward induction on the raw payoffs
            let mut v: Vec<f64> = (0..tree.n_nodes()).map(|i| tree.payoff(i)).collect();
            for node in (0..tree.n_internal()).rev() {
                let p = tree.up_prob(node);
                let cont = p * v[2 * node + 1] + (1.0 - p) * v[2 * node + 2];
                v[node] = v[node].max(cont);
            }
            assert!((value - v[0]).abs() <= EXACT_TOL, "seed {seed}");
        }
    }

    #[test]
    fn invalid_rules_are_rejected() {
        let tree = TreeModel::<f64>::random(2, 1).unwrap();
        // referencing a leaf
        assert!(StoppingRule(1 << 5).validate(&tree).is_err());
        assert!(StoppingRule(0b110).validate(&tree).is_ok());
        let deep = TreeModel::<f64>::random(3, 1).unwrap();
        // stopping at node 3 under its stopped parent 1
        assert!(StoppingRule(0b1010).validate(&deep).is_err());
        assert!(StoppingRule(0b1010).validate(&tree).is_err());
    }

    #[test]
    fn constant_tree_has_zero_increments() {
        let tree = TreeModel::new(2, vec![1.5; 7], vec![0.5; 3]).unwrap();
        let tp = TransformedPayoff::plain();
        let report = snell_dual_check(&tree, &tp).unwrap();
        assert!(report.passed);
        assert_eq!(report.snell_value, 1.5);
        assert_eq!(report.best_rule_value, 1.5);
    }

    #[test]
    fn dual_identities_hold_on_random_trees() {
        for seed in 0..10u64 {
            let tree = TreeModel::<f64>::random(3, seed).unwrap();
            let g = DistortionFn::semidev_kappa(1.0, 0.5).unwrap();
            let mu = mu_from_distortion(&g).unwrap();
            let z = ZSpec::finite_levels(vec![0.75]).unwrap();
            let tp = TransformedPayoff::new(&mu, &z).unwrap();
            let report = snell_dual_check(&tree, &tp).unwrap();
            assert!(
                report.passed,
                "seed {seed}: rule gap {}, pathwise {}",
                report.rule_gap, report.pathwise_deviation
            );
        }
    }

    #[test]
    fn perturbed_martingale_is_caught() {
        // root payoff 0 keeps the root from masking the left-branch shift
        let tree = TreeModel::new(
            2,
            vec![0.0, 1.5, 0.25, 2.0, 0.5, 1.0, 0.75],
            vec![0.5; 3],
        )
        .unwrap();
        let tp = TransformedPayoff::plain();
        let clean = snell_dual_check(&tree, &tp).unwrap();
        assert!(clean.passed);
        for sign in [1.0, -1.0] {
            let broken = snell_dual_check_perturbed(&tree, &tp, sign * 0.01).unwrap();
            assert!(!broken.passed);
            assert!(broken.pathwise_deviation > 1e-3);
        }
    }

    #[test]
    fn threshold_identity_is_exact() {
        let families = [
            DistortionFn::avar_level(0.4).unwrap(),
            DistortionFn::semidev_kappa(1.0, 0.5).unwrap(),
            DistortionFn::expectile_gamma(0.8, 0.5).unwrap(),
            DistortionFn::identity(),
        ];
        for seed in 0..5u64 {
            let tree = TreeModel::<f64>::random(3, seed).unwrap();
            for g in &families {
                let report = primal_identity_check(&tree, g).unwrap();
                assert!(
                    report.passed,
                    "seed {seed}, {g:?}: mismatch {}, sup-inf {}, weak {}",
                    report.worst_rule_mismatch, report.sup_inf_gap, report.weak_duality_gap
                );
            }
        }
    }

    #[test]
    fn tree_dynamics_walks_the_heap() {
        let tree = TreeModel::<f64>::random(3, 11).unwrap();
        let d = TreeDynamics::new(&tree);
        let paths = simulate(&d, 2000, 5).unwrap();
        for p in 0..paths.n_paths {
            let mut node = 0usize;
            for j in 1..paths.n_dates {
                let s = paths.state(p, j)[0] as usize;
                assert!(s == 2 * node + 1 || s == 2 * node + 2);
                node = s;
            }
        }
        // level-1 frequencies near the fair coin
        let ups = (0..paths.n_paths)
            .filter(|&p| paths.state(p, 1)[0] as usize == 1)
            .count() as f64;
        let frac = ups / paths.n_paths as f64;
        assert!((frac - 0.5).abs() < 0.05, "frac {frac}");
        let mut phi = vec![0.0; d.n_features()];
        d.features(paths.state(0, 2), 2, 0.0, &mut phi);
        assert_eq!(phi.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn battery_passes_clean_and_fails_corrupted() {
        let clean = run_battery(6, 3, 17, 0.0).unwrap();
        assert!(clean.passed, "{clean:?}");
        assert_eq!(clean.n_checks, 36);
        assert_eq!(clean.n_passed, 36);
        assert!(clean.min_weak_duality_gap >= -EXACT_TOL);
        let corrupted = run_battery(4, 2, 17, 0.02).unwrap();
        assert!(!corrupted.passed);
        assert!(corrupted.n_passed < corrupted.n_checks);
    }
}
