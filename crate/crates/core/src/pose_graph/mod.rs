//! Keyframe pose graph with prior, relative, loop, IMU and bias factors, solved by
//! batch Levenberg-Marquardt on the product manifold.

mod factors;

pub use factors::{
    retract, BetweenPoses, BiasBetween, BiasPrior, Factor, FactorKind, ImuFactor, PosePrior, VarKind, Variable,
    VelocityPrior,
};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::GraphError;
use crate::geom::Pose;
use crate::imu::NavState;

/// Central-difference step for factor Jacobians.
const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePolicy {
    pub angle: f64,
    pub distance: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            angle: 30f64.to_radians(),
            distance: 1.0,
        }
    }
}

pub fn should_insert_keyframe(current: &Pose, last_keyframe: &Pose, policy: &KeyframePolicy) -> bool {
    current.rotation_angle_to(last_keyframe) > policy.angle || current.distance_to(last_keyframe) > policy.distance
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmParams {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            relative_tolerance: 1e-9,
            initial_lambda: 1e-4,
            max_lambda: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

#[derive(Debug)]
struct Entry {
    factor: Box<dyn Factor>,
    variables: Vec<Variable>,
    /// Inverse Cholesky factor of the covariance: `‖W r‖² = rᵀ Σ⁻¹ r`.
    whitener: DMatrix<f64>,
}

#[derive(Debug, Default)]
pub struct FactorGraph {
    states: Vec<NavState>,
    entries: Vec<Entry>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, state: NavState) -> usize {
        self.states.push(state);
        self.states.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, node: usize) -> Option<&NavState> {
        self.states.get(node)
    }

    pub fn states(&self) -> &[NavState] {
        &self.states
    }

    pub fn set_state(&mut self, node: usize, state: NavState) -> Result<(), GraphError> {
        let slot = self.states.get_mut(node).ok_or(GraphError::DanglingNode(node))?;
        *slot = state;
        Ok(())
    }

    pub fn factor_count(&self) -> usize {
        self.entries.len()
    }

    pub fn factors(&self) -> impl Iterator<Item = &dyn Factor> + '_ {
        self.entries.iter().map(|e| e.factor.as_ref())
    }

    pub fn count_kind(&self, kind: FactorKind) -> usize {
        self.factors().filter(|f| f.kind() == kind).count()
    }

    pub fn add_factor(&mut self, factor: Box<dyn Factor>) -> Result<usize, GraphError> {
        let variables = factor.variables();
        if let Some(v) = variables.iter().find(|v| v.node >= self.states.len()) {
            return Err(GraphError::DanglingNode(v.node));
        }
        let cov = factor.covariance();
        if cov.nrows() != factor.dim() || cov.ncols() != factor.dim() || (&cov - cov.transpose()).amax() > 1e-9 * cov.amax()
        {
            return Err(GraphError::BadCovariance);
        }
        let chol = cov.cholesky().ok_or(GraphError::BadCovariance)?;
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(factor.dim(), factor.dim()))
            .ok_or(GraphError::BadCovariance)?;
        if !l_inv.iter().all(|v| v.is_finite()) {
            return Err(GraphError::BadCovariance);
        }
        self.entries.push(Entry {
            factor,
            variables,
            whitener: l_inv,
        });
        Ok(self.entries.len() - 1)
    }

    /// Checks that a pose prior exists and every node reaches one through factors.
    pub fn check_connectivity(&self) -> Result<(), GraphError> {
        let n = self.states.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut anchored = vec![false; n];
        let mut any_prior = false;
        for e in &self.entries {
            let nodes: Vec<usize> = e.variables.iter().map(|v| v.node).collect();
            if e.factor.kind() == FactorKind::PosePrior {
                any_prior = true;
                anchored[nodes[0]] = true;
            }
            for w in nodes.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a.max(b)] = a.min(b);
            }
        }
        if !any_prior {
            return Err(GraphError::NoPrior);
        }
        let mut root_anchored = vec![false; n];
        for i in 0..n {
            if anchored[i] {
                let r = find(&mut parent, i);
                root_anchored[r] = true;
            }
        }
        for i in 0..n {
            if !root_anchored[find(&mut parent, i)] {
                return Err(GraphError::Disconnected(i));
            }
        }
        Ok(())
    }

    /// Column offset of every variable that some factor touches, in node order.
    fn layout(&self) -> (BTreeMap<Variable, usize>, usize) {
        let mut used: Vec<Variable> = self.entries.iter().flat_map(|e| e.variables.iter().copied()).collect();
        used.sort();
        used.dedup();
        let mut offsets = BTreeMap::new();
        let mut dim = 0;
        for v in used {
            offsets.insert(v, dim);
            dim += v.kind.dof();
        }
        (offsets, dim)
    }

    fn gather(&self, vars: &[Variable]) -> Vec<NavState> {
        vars.iter().map(|v| self.states[v.node]).collect()
    }

    fn whitened_residual(e: &Entry, states: &[NavState]) -> DVector<f64> {
        &e.whitener * e.factor.residual(states)
    }

    /// `½ Σ ‖W r‖²` over all factors.
    pub fn cost(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| 0.5 * Self::whitened_residual(e, &self.gather(&e.variables)).norm_squared())
            .sum()
    }

    /// Whitened residual and its Jacobian with respect to the factor's variables.
    fn linearize(&self, e: &Entry) -> (DVector<f64>, DMatrix<f64>) {
        let states = self.gather(&e.variables);
        let r0 = Self::whitened_residual(e, &states);
        let cols: usize = e.variables.iter().map(|v| v.kind.dof()).sum();
        let mut jac = DMatrix::zeros(r0.len(), cols);
        let mut col = 0;
        // Each variable has its own slot and factors read only that slot's component.
        for (k, v) in e.variables.iter().enumerate() {
            for d in 0..v.kind.dof() {
                let eval = |h: f64| {
                    let mut s = states.clone();
                    let mut delta = vec![0.0; v.kind.dof()];
                    delta[d] = h;
                    retract(&mut s[k], v.kind, &delta);
                    Self::whitened_residual(e, &s)
                };
                let diff = eval(JACOBIAN_STEP) - eval(-JACOBIAN_STEP);
                jac.set_column(col, &(diff / (2.0 * JACOBIAN_STEP)));
                col += 1;
            }
        }
        (r0, jac)
    }

    /// Levenberg-Marquardt with `H + λ·diag(H)` damping; states are updated in place.
    pub fn optimize(&mut self, params: &LmParams) -> Result<OptimizeReport, GraphError> {
        self.check_connectivity()?;
        let (offsets, dim) = self.layout();
        let mut cost = self.cost();
        let initial_cost = cost;
        let mut history = vec![cost];
        let mut lambda = params.initial_lambda;
        let mut iterations = 0;
        if dim == 0 {
            return Ok(OptimizeReport {
                initial_cost,
                final_cost: cost,
                iterations,
                cost_history: history,
            });
        }

        'outer: while iterations < params.max_iterations {
            iterations += 1;
            let (h_blocks, g) = self.normal_equations(&offsets, dim);
            let diag: Vec<f64> = (0..dim).map(|i| h_blocks.get(&(i, i)).copied().unwrap_or(0.0)).collect();
            loop {
                let step = match solve_damped(&h_blocks, &diag, &g, dim, lambda) {
                    Some(step) => step,
                    None => {
                        lambda *= 10.0;
                        if lambda > params.max_lambda {
                            return Err(GraphError::Indefinite(lambda));
                        }
                        continue;
                    }
                };
                let saved = self.states.clone();
                self.apply_step(&offsets, &step);
                let new_cost = self.cost();
                if new_cost.is_finite() && new_cost <= cost {
                    let change = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    cost = new_cost;
                    history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    if change < params.relative_tolerance {
                        break 'outer;
                    }
                    break;
                }
                self.states = saved;
                lambda *= 10.0;
                if lambda > params.max_lambda {
                    // No damping level improves the cost: a local minimum.
                    break 'outer;
                }
            }
        }
        Ok(OptimizeReport {
            initial_cost,
            final_cost: cost,
            iterations,
            cost_history: history,
        })
    }

    /// Sparse `JᵀJ` as a map of entries plus the gradient `Jᵀr`.
    fn normal_equations(
        &self,
        offsets: &BTreeMap<Variable, usize>,
        dim: usize,
    ) -> (BTreeMap<(usize, usize), f64>, DVector<f64>) {
        let mut h: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut g = DVector::zeros(dim);
        for e in &self.entries {
            let (r, jac) = self.linearize(e);
            let mut global = Vec::with_capacity(jac.ncols());
            for v in &e.variables {
                let o = offsets[v];
                global.extend(o..o + v.kind.dof());
            }
            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * &r;
            for (a, &ga) in global.iter().enumerate() {
                g[ga] += jtr[a];
                for (b, &gb) in global.iter().enumerate() {
                    let val = jtj[(a, b)];
                    if val != 0.0 {
                        *h.entry((ga, gb)).or_insert(0.0) += val;
                    }
                }
            }
        }
        (h, g)
    }

    fn apply_step(&mut self, offsets: &BTreeMap<Variable, usize>, step: &DVector<f64>) {
        for (v, &o) in offsets {
            let delta: Vec<f64> = step.rows(o, v.kind.dof()).iter().copied().collect();
            retract(&mut self.states[v.node], v.kind, &delta);
        }
    }
}

fn solve_damped(
    h: &BTreeMap<(usize, usize), f64>,
    diag: &[f64],
    g: &DVector<f64>,
    dim: usize,
    lambda: f64,
) -> Option<DVector<f64>> {
    let mut coo = CooMatrix::new(dim, dim);
    for (&(r, c), &v) in h {
        coo.push(r, c, v);
    }
    for (i, d) in diag.iter().enumerate() {
        // A tiny floor keeps variables with an empty diagonal from breaking the factorization.
        coo.push(i, i, lambda * d.max(1e-12));
    }
    let csc = CscMatrix::from(&coo);
    let chol = CscCholesky::factor(&csc).ok()?;
    let rhs = DMatrix::from_column_slice(dim, 1, (-g).as_slice());
    let x = chol.solve(&rhs);
    let step = DVector::from_column_slice(x.as_slice());
    step.iter().all(|v| v.is_finite()).then_some(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3};

    use crate::geom::se3_exp;
    use crate::imu::{preintegrate, ImuBias, ImuNoise, ImuSample};

    fn iso6(sigma: f64) -> Matrix6<f64> {
        Matrix6::identity() * sigma * sigma
    }

    fn prior(node: usize, pose: Pose) -> Box<dyn Factor> {
        Box::new(PosePrior {
            node,
            pose,
            covariance: iso6(1e-3),
        })
    }

    fn between(from: usize, to: usize, measured: Pose, sigma: f64, loop_closure: bool) -> Box<dyn Factor> {
        Box::new(BetweenPoses {
            from,
            to,
            measured,
            covariance: iso6(sigma),
            loop_closure,
        })
    }

    fn at(pose: Pose) -> NavState {
        NavState {
            pose,
            ..NavState::default()
        }
    }

    fn truth_chain(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let f = i as f64;
                Pose::new(
                    Rotation3::from_euler_angles(0.02 * f, -0.01 * f, 0.3 * f),
                    Vector3::new(f.cos() * 3.0, f.sin() * 3.0, 0.1 * f),
                )
            })
            .collect()
    }

    #[test]
    fn keyframe_policy() {
        let p = KeyframePolicy::default();
        let id = Pose::identity();
        assert!(!should_insert_keyframe(&id, &id, &p));
        assert!(should_insert_keyframe(&Pose::from_yaw(31f64.to_radians(), Vector3::zeros()), &id, &p));
        let half = KeyframePolicy { distance: 0.5, ..p };
        assert!(should_insert_keyframe(&Pose::from_translation(Vector3::new(0.6, 0.0, 0.0)), &id, &half));
        assert!(!should_insert_keyframe(&Pose::from_translation(Vector3::new(0.6, 0.0, 0.0)), &id, &p));
    }

    #[test]
    fn consistency_errors() {
        let mut g = FactorGraph::new();
        g.add_node(NavState::default());
        g.add_factor(prior(0, Pose::identity())).unwrap();
        assert_eq!((g.node_count(), g.factor_count()), (1, 1));
        assert_eq!(
            g.add_factor(between(0, 1, Pose::identity(), 0.1, false)).unwrap_err(),
            GraphError::DanglingNode(1)
        );
        g.add_node(NavState::default());
        assert_eq!(g.check_connectivity(), Err(GraphError::Disconnected(1)));
        let mut bad = Matrix6::identity();
        bad[(0, 0)] = -1.0;
        assert_eq!(
            g.add_factor(Box::new(PosePrior {
                node: 1,
                pose: Pose::identity(),
                covariance: bad
            }))
            .unwrap_err(),
            GraphError::BadCovariance
        );
        let mut unanchored = FactorGraph::new();
        unanchored.add_node(NavState::default());
        unanchored.add_node(NavState::default());
        unanchored.add_factor(between(0, 1, Pose::identity(), 0.1, false)).unwrap();
        assert_eq!(unanchored.optimize(&LmParams::default()).unwrap_err(), GraphError::NoPrior);
    }

    #[test]
    fn single_prior_is_a_fixed_point() {
        let mut g = FactorGraph::new();
        g.add_node(NavState::default());
        g.add_factor(prior(0, Pose::identity())).unwrap();
        let rep = g.optimize(&LmParams::default()).unwrap();
        assert_eq!(rep.final_cost, 0.0);
        assert_eq!(g.state(0).unwrap().pose, Pose::identity());
    }

    #[test]
    fn exact_chain_is_recovered() {
        let truth = truth_chain(10);
        let mut g = FactorGraph::new();
        for (i, t) in truth.iter().enumerate() {
            let noise = se3_exp(&nalgebra::Vector6::new(0.05, -0.03, 0.1, 0.2, -0.1, 0.3).map(|v| v * (i as f64 + 1.0) / 10.0));
            g.add_node(at(t.compose(&noise)));
        }
        g.add_factor(prior(0, truth[0])).unwrap();
        for i in 0..9 {
            g.add_factor(between(i, i + 1, truth[i].between(&truth[i + 1]), 0.01, false)).unwrap();
        }
        let rep = g.optimize(&LmParams::default()).unwrap();
        for (s, t) in g.states().iter().zip(&truth) {
            assert!(s.pose.distance_to(t) < 1e-8, "{}", s.pose.distance_to(t));
            assert!(s.pose.rotation_angle_to(t) < 1e-8);
        }
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gauge_is_fixed_by_the_prior() {
        let truth = truth_chain(6);
        let build = |offset: Pose| {
            let mut g = FactorGraph::new();
            for t in &truth {
                g.add_node(at(offset.compose(t)));
            }
            g.add_factor(prior(0, truth[0])).unwrap();
            for i in 0..5 {
                let z = truth[i].between(&truth[i + 1]).compose(&Pose::from_translation(Vector3::new(0.01, 0.0, 0.0)));
                g.add_factor(between(i, i + 1, z, 0.01, false)).unwrap();
            }
            g.add_factor(between(5, 0, truth[5].between(&truth[0]), 0.01, true)).unwrap();
            g.optimize(&LmParams::default()).unwrap();
            g.states().to_vec()
        };
        let a = build(Pose::identity());
        let b = build(Pose::new(Rotation3::from_euler_angles(0.1, 0.05, 0.4), Vector3::new(0.5, -0.3, 0.2)));
        for (x, y) in a.iter().zip(&b) {
            assert!(x.pose.distance_to(&y.pose) < 1e-8);
            assert!(x.pose.rotation_angle_to(&y.pose) < 1e-8);
        }
    }

    #[test]
    fn loop_factor_removes_drift() {
        // A ring of 20 nodes; odometry climbs 2.5 cm per step that never happened.
        let n = 20;
        let truth: Vec<Pose> = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                Pose::from_yaw(a + std::f64::consts::FRAC_PI_2, Vector3::new(5.0 * a.cos(), 5.0 * a.sin(), 0.0))
            })
            .collect();
        let mut g = FactorGraph::new();
        let mut dead = truth[0];
        g.add_node(at(dead));
        g.add_factor(prior(0, truth[0])).unwrap();
        for i in 0..n - 1 {
            let z = truth[i].between(&truth[i + 1]).compose(&Pose::from_translation(Vector3::new(0.0, 0.0, 0.025)));
            dead = dead.compose(&z);
            g.add_node(at(dead));
            g.add_factor(between(i, i + 1, z, 0.05, false)).unwrap();
        }
        let drift_before = g.state(n - 1).unwrap().pose.distance_to(&truth[n - 1]);
        assert!(drift_before > 0.4);
        g.add_factor(between(n - 1, 0, truth[n - 1].between(&truth[0]), 0.002, true)).unwrap();
        let rep = g.optimize(&LmParams::default()).unwrap();
        let s = g.states();
        let gap = s[n - 1].pose.between(&s[0].pose).distance_to(&truth[n - 1].between(&truth[0]));
        assert!(gap < 0.02, "{gap}");
        assert!(rep.final_cost < rep.initial_cost);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(g.count_kind(FactorKind::Loop), 1);
    }

    #[test]
    fn bias_between_cost_matches_hand_computation() {
        let mut g = FactorGraph::new();
        let noise = ImuNoise::default();
        g.add_node(NavState::default());
        g.add_node(NavState {
            bias: ImuBias::new(Vector3::new(1e-4, 0.0, 0.0), Vector3::new(0.0, 2e-5, 0.0)),
            ..NavState::default()
        });
        g.add_factor(Box::new(BiasBetween {
            from: 0,
            to: 1,
            dt: 0.5,
            noise,
        }))
        .unwrap();
        let expect = 0.5 * ((1e-4_f64).powi(2) / (noise.accel_bias_rw.powi(2) * 0.5) + (2e-5_f64).powi(2) / (noise.gyro_bias_rw.powi(2) * 0.5));
        assert!((g.cost() - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn imu_chain_recovers_velocity_and_bias() {
        // Constant acceleration along x with a yaw rate; accelerometer bias on z.
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let (acc, w) = (Vector3::new(0.4, 0.0, 0.0), 0.3);
        let bias = ImuBias::new(Vector3::new(0.0, 0.0, 0.05), Vector3::zeros());
        let state_at = |t: f64| {
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), w * t);
            NavState::new(Pose::new(rot, acc * 0.5 * t * t), acc * t, bias)
        };
        let samples: Vec<ImuSample> = (0..=400)
            .map(|k| {
                let t = k as f64 * 0.005;
                let r = state_at(t).pose.rotation;
                ImuSample::new(t, Vector3::new(0.0, 0.0, w), r.inverse() * (acc - gravity) + bias.accel)
            })
            .collect();
        let mut g = FactorGraph::new();
        let knots = [0usize, 100, 200, 300, 400];
        for &k in &knots {
            let mut s = state_at(k as f64 * 0.005);
            s.velocity = Vector3::zeros();
            s.bias = ImuBias::default();
            g.add_node(s);
        }
        g.add_factor(prior(0, state_at(0.0).pose)).unwrap();
        g.add_factor(Box::new(VelocityPrior {
            node: 0,
            velocity: Vector3::zeros(),
            covariance: Matrix3::identity() * 1e-6,
        }))
        .unwrap();
        g.add_factor(Box::new(BiasPrior {
            node: 0,
            bias: ImuBias::default(),
            covariance: Matrix6::identity(),
        }))
        .unwrap();
        for (i, pair) in knots.windows(2).enumerate() {
            let pim = preintegrate(&samples[pair[0]..=pair[1]], &ImuBias::default(), &ImuNoise::default()).unwrap();
            let (a, b) = (state_at(pair[0] as f64 * 0.005), state_at(pair[1] as f64 * 0.005));
            g.add_factor(between(i, i + 1, a.pose.between(&b.pose), 1e-3, false)).unwrap();
            g.add_factor(Box::new(ImuFactor {
                from: i,
                to: i + 1,
                preintegrated: pim,
                gravity,
            }))
            .unwrap();
            g.add_factor(Box::new(BiasBetween {
                from: i,
                to: i + 1,
                dt: 0.5,
                noise: ImuNoise::default(),
            }))
            .unwrap();
        }
        g.optimize(&LmParams::default()).unwrap();
        let last = g.state(4).unwrap();
        assert!((last.velocity - acc * 2.0).norm() < 1e-3, "{}", last.velocity);
        assert!((last.bias.accel - bias.accel).norm() < 5e-3, "{:?}", last.bias);
    }
}
