//! Online traffic assignment over explicit path sets.
//!
//! Each origin-destination pair `i` splits its demand `λᵢ` across its paths
//! with shares `x_{i,p}` on the simplex. Edge `e` carries the load
//! `y_e = Σ_{(i,p) ∋ e} λᵢ x_{i,p}` and costs `ℓ_e(y) = a_e + b_e y⁴`. The
//! smooth loss is `Σ_i Σ_p x_{i,p} ℓ_p` with `ℓ_p = Σ_{e ∈ p} ℓ_e(y_e)`; the
//! `μ‖x‖₁` term lives in the regularizer.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{keyed_rng, DrawKey, Seed};
use crate::prox::{Block, Regularizer};
use crate::stream::LossStream;
use crate::vector::DecisionVector;

/// Tolerance of the profile membership check.
pub const PROFILE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub vertices: usize,
    /// `(tail, head)`; parallel edges are allowed
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
    /// each path is a sequence of edge ids
    pub paths: Vec<Vec<usize>>,
}

/// `ℓ_e(y) = a_e + b_e y⁴`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bpr {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Bpr {
    fn cost(&self, e: usize, y: f64) -> f64 {
        self.a[e] + self.b[e] * y.powi(4)
    }

    fn slope(&self, e: usize, y: f64) -> f64 {
        4.0 * self.b[e] * y.powi(3)
    }
}

/// Network, O/D path sets and edge costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntapInstance {
    pub network: Network,
    pub ods: Vec<OdPair>,
    pub bpr: Bpr,
}

impl OntapInstance {
    pub fn new(network: Network, ods: Vec<OdPair>, bpr: Bpr) -> Result<Self> {
        let inst = OntapInstance { network, ods, bpr };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let net = &self.network;
        if net.edges.is_empty() {
            return Err(Error::param("network needs at least one edge"));
        }
        if let Some(&(u, v)) = net.edges.iter().find(|(u, v)| *u >= net.vertices || *v >= net.vertices) {
            return Err(Error::Range(format!("edge ({u}, {v}) uses a vertex >= {}", net.vertices)));
        }
        let e = net.edges.len();
        if self.bpr.a.len() != e {
            return Err(Error::shape(e, self.bpr.a.len()));
        }
        if self.bpr.b.len() != e {
            return Err(Error::shape(e, self.bpr.b.len()));
        }
        if self.bpr.a.iter().chain(&self.bpr.b).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param("BPR coefficients must be finite and nonnegative"));
        }
        if self.ods.is_empty() {
            return Err(Error::param("need at least one O/D pair"));
        }
        for (i, od) in self.ods.iter().enumerate() {
            if od.paths.is_empty() {
                return Err(Error::param(format!("O/D pair {i} has no paths")));
            }
            for (k, p) in od.paths.iter().enumerate() {
                let mut at = od.origin;
                for &edge in p {
                    let &(u, v) = net
                        .edges
                        .get(edge)
                        .ok_or_else(|| Error::Range(format!("O/D {i} path {k}: edge {edge} does not exist")))?;
                    if u != at {
                        return Err(Error::param(format!(
                            "O/D {i} path {k}: edge {edge} leaves {u}, expected {at}"
                        )));
                    }
                    at = v;
                }
                if p.is_empty() || at != od.destination {
                    return Err(Error::param(format!(
                        "O/D {i} path {k} does not reach {}",
                        od.destination
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total number of path variables.
    pub fn dim(&self) -> usize {
        self.ods.iter().map(|o| o.paths.len()).sum()
    }

    pub fn blocks(&self) -> Vec<Block> {
        Block::consecutive(&self.ods.iter().map(|o| o.paths.len()).collect::<Vec<_>>())
    }

    /// `(od, path, edges)` for every path variable, in profile order.
    fn paths(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.ods
            .iter()
            .enumerate()
            .flat_map(|(i, od)| od.paths.iter().map(move |p| (i, p.as_slice())))
    }

    fn check(&self, x: &[f64], lambda: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(self.dim(), x.len()));
        }
        if lambda.len() != self.ods.len() {
            return Err(Error::shape(self.ods.len(), lambda.len()));
        }
        if lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::param("demands must be finite and nonnegative"));
        }
        for b in self.blocks() {
            let s = &x[b.range()];
            let sum: f64 = s.iter().sum();
            if s.iter().any(|v| *v < -PROFILE_TOL || !v.is_finite()) || (sum - 1.0).abs() > PROFILE_TOL {
                return Err(Error::Domain(format!(
                    "allocation block at {} is not on the simplex (sum {sum})",
                    b.start
                )));
            }
        }
        Ok(())
    }

    /// Loads `y_e` and path counts `z_e = Σ_{(i,p) ∋ e} x_{i,p}`, unchecked.
    fn loads_and_counts(&self, x: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let e = self.network.edges.len();
        let mut y = vec![0.0; e];
        let mut z = vec![0.0; e];
        for ((od, path), xp) in self.paths().zip(x) {
            for &edge in path {
                y[edge] += lambda[od] * xp;
                z[edge] += xp;
            }
        }
        (y, z)
    }

    pub(crate) fn loss_unchecked(&self, x: &[f64], lambda: &[f64]) -> f64 {
        let (y, z) = self.loads_and_counts(x, lambda);
        (0..y.len()).map(|e| z[e] * self.bpr.cost(e, y[e])).sum()
    }

    /// `∂/∂x_{i,p} = Σ_{e∈p} [ℓ_e(y_e) + z_e ℓ′_e(y_e) λᵢ]`.
    pub(crate) fn grad_unchecked(&self, x: &[f64], lambda: &[f64]) -> Vec<f64> {
        let (y, z) = self.loads_and_counts(x, lambda);
        let edge_cost: Vec<f64> = (0..y.len()).map(|e| self.bpr.cost(e, y[e])).collect();
        let edge_coupling: Vec<f64> = (0..y.len()).map(|e| z[e] * self.bpr.slope(e, y[e])).collect();
        self.paths()
            .map(|(od, path)| {
                path.iter()
                    .map(|&e| edge_cost[e] + edge_coupling[e] * lambda[od])
                    .sum()
            })
            .collect()
    }

    /// Upper bounds on `y_e` and `z_e` over the simplex product for demands
    /// bounded by `lambda_max`.
    fn load_caps(&self, lambda_max: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let e = self.network.edges.len();
        let mut y = vec![0.0; e];
        let mut z = vec![0.0; e];
        for (i, od) in self.ods.iter().enumerate() {
            for edge in 0..e {
                let most = od
                    .paths
                    .iter()
                    .map(|p| p.iter().filter(|&&q| q == edge).count())
                    .max()
                    .unwrap_or(0) as f64;
                y[edge] += lambda_max[i] * most;
                z[edge] += most;
            }
        }
        (y, z)
    }

    /// Gershgorin bound on `‖∇²F‖₂` over the simplex product, using
    /// `∂²F/∂x_{i,p}∂x_{j,q} = Σ_{e∈p∩q} [ℓ′_e(λᵢ+λⱼ) + z_e ℓ″_e λᵢλⱼ]`.
    pub fn smoothness_bound(&self, lambda_max: &[f64]) -> f64 {
        let (ycap, zcap) = self.load_caps(lambda_max);
        let b = &self.bpr.b;
        let paths: Vec<(usize, &[usize])> = self.paths().collect();
        let mut worst = 0.0f64;
        for &(i, p) in &paths {
            let mut row = 0.0;
            for &(j, q) in &paths {
                for &e in p {
                    let shared = q.iter().filter(|&&f| f == e).count() as f64;
                    if shared == 0.0 {
                        continue;
                    }
                    let d1 = 4.0 * b[e] * ycap[e].powi(3);
                    let d2 = 12.0 * b[e] * ycap[e].powi(2);
                    row += shared * (d1 * (lambda_max[i] + lambda_max[j]) + zcap[e] * d2 * lambda_max[i] * lambda_max[j]);
                }
            }
            worst = worst.max(row);
        }
        worst
    }

    /// `Σ_i max_p Σ_{e∈p} ℓ_e(ȳ_e) ≥ F` over the simplex product.
    pub fn value_bound(&self, lambda_max: &[f64]) -> f64 {
        let (ycap, _) = self.load_caps(lambda_max);
        self.ods
            .iter()
            .map(|od| {
                od.paths
                    .iter()
                    .map(|p| p.iter().map(|&e| self.bpr.cost(e, ycap[e])).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .sum()
    }
}

/// Edge loads `y_e = Σ_{(i,p) ∋ e} λᵢ x_{i,p}`.
pub fn edge_loads(inst: &OntapInstance, x: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    inst.check(x, lambda)?;
    Ok(inst.loads_and_counts(x, lambda).0)
}

/// `ℓ_p = Σ_{e∈p} ℓ_e(y_e)` for path `path` of O/D pair `od`.
pub fn path_cost(inst: &OntapInstance, x: &[f64], lambda: &[f64], od: usize, path: usize) -> Result<f64> {
    inst.check(x, lambda)?;
    let p = inst
        .ods
        .get(od)
        .and_then(|o| o.paths.get(path))
        .ok_or_else(|| Error::Range(format!("no path {path} for O/D pair {od}")))?;
    let (y, _) = inst.loads_and_counts(x, lambda);
    Ok(p.iter().map(|&e| inst.bpr.cost(e, y[e])).sum())
}

pub fn ontap_smooth_loss(inst: &OntapInstance, x: &[f64], lambda: &[f64]) -> Result<f64> {
    inst.check(x, lambda)?;
    Ok(inst.loss_unchecked(x, lambda))
}

pub fn ontap_smooth_grad(inst: &OntapInstance, x: &[f64], lambda: &[f64]) -> Result<DecisionVector> {
    inst.check(x, lambda)?;
    Ok(DecisionVector::from(inst.grad_unchecked(x, lambda)))
}

/// `λᵢ(t) = max(0, baseᵢ + amplitudeᵢ sin(2πt/period) + noise·ξ_{t,i})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProcess {
    pub base: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// `None` keeps demand constant apart from noise
    pub period: Option<f64>,
    pub noise: f64,
    pub seed: Seed,
}

impl DemandProcess {
    pub fn validate(&self, pairs: usize) -> Result<()> {
        if self.base.len() != pairs {
            return Err(Error::shape(pairs, self.base.len()));
        }
        if self.amplitude.len() != pairs {
            return Err(Error::shape(pairs, self.amplitude.len()));
        }
        if let Some(p) = self.period {
            if !(p > 0.0) {
                return Err(Error::param(format!("demand period must be positive, got {p}")));
            }
        }
        if !(self.noise >= 0.0) || self.base.iter().any(|b| *b < 0.0) {
            return Err(Error::param("demand base and noise must be nonnegative"));
        }
        Ok(())
    }

    pub fn at(&self, t: usize) -> Vec<f64> {
        let season = match self.period {
            Some(p) => (2.0 * PI * t as f64 / p).sin(),
            None => 0.0,
        };
        (0..self.base.len())
            .map(|i| {
                let xi = if self.noise > 0.0 {
                    let key = DrawKey {
                        round: t as u64,
                        inner: 0,
                        slot: i as u64,
                    };
                    let mut keyed = keyed_rng(self.seed.derive(0xd3), key);
                    keyed.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                (self.base[i] + self.amplitude[i] * season + self.noise * xi).max(0.0)
            })
            .collect()
    }
}

/// `f_t(x) = F(x; λ_t)` with demands drawn once at construction.
#[derive(Debug, Clone)]
pub struct OntapStream {
    inst: OntapInstance,
    demands: Vec<Vec<f64>>,
    smoothness: f64,
    bound: f64,
}

impl OntapStream {
    pub fn instance(&self) -> &OntapInstance {
        &self.inst
    }

    pub fn demand(&self, t: usize) -> &[f64] {
        &self.demands[t - 1]
    }

    /// Per-pair maximum demand over the horizon.
    pub fn demand_max(&self) -> Vec<f64> {
        let k = self.inst.ods.len();
        (0..k)
            .map(|i| self.demands.iter().map(|d| d[i]).fold(0.0, f64::max))
            .collect()
    }
}

impl LossStream for OntapStream {
    fn dim(&self) -> usize {
        self.inst.dim()
    }
    fn horizon(&self) -> usize {
        self.demands.len()
    }
    fn smoothness(&self) -> f64 {
        self.smoothness
    }
    fn bound(&self) -> f64 {
        self.bound
    }
    fn descriptor(&self) -> String {
        format!(
            "ontap(edges={}, pairs={}, T={})",
            self.inst.network.edges.len(),
            self.inst.ods.len(),
            self.demands.len()
        )
    }
    fn value_at(&self, t: usize, x: &[f64]) -> f64 {
        self.inst.loss_unchecked(x, &self.demands[t - 1])
    }
    fn grad_at(&self, t: usize, x: &[f64]) -> Vec<f64> {
        self.inst.grad_unchecked(x, &self.demands[t - 1])
    }
}

/// The online stream and its regularizer `g = ι_K + μ‖·‖₁`.
///
/// `L` is the Gershgorin bound on the Hessian and `M` the path-cost bound,
/// both taken at the largest realized demand of each pair.
pub fn make_ontap_stream(
    inst: &OntapInstance,
    demand: &DemandProcess,
    horizon: usize,
    mu: f64,
) -> Result<(OntapStream, Regularizer)> {
    inst.validate()?;
    demand.validate(inst.ods.len())?;
    if horizon == 0 {
        return Err(Error::param("horizon must be >= 1"));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::param(format!("mu must be finite and >= 0, got {mu}")));
    }
    let demands: Vec<Vec<f64>> = (1..=horizon).map(|t| demand.at(t)).collect();
    let mut s = OntapStream {
        inst: inst.clone(),
        demands,
        smoothness: 0.0,
        bound: 0.0,
    };
    let lmax = s.demand_max();
    let l = inst.smoothness_bound(&lmax);
    s.smoothness = if l > 0.0 { l } else { 1.0 };
    s.bound = inst.value_bound(&lmax);
    let g = Regularizer::SimplexL1 { blocks: inst.blocks(), mu };
    Ok((s, g))
}

/// Six vertices, nine edges, three O/D pairs with three or four paths each.
pub fn default_instance() -> OntapInstance {
    let network = Network {
        vertices: 6,
        edges: vec![
            (0, 1),
            (0, 2),
            (1, 3),
            (2, 3),
            (1, 2),
            (3, 4),
            (2, 4),
            (4, 5),
            (3, 5),
        ],
    };
    let ods = vec![
        OdPair {
            origin: 0,
            destination: 3,
            paths: vec![vec![0, 2], vec![1, 3], vec![0, 4, 3]],
        },
        OdPair {
            origin: 0,
            destination: 5,
            paths: vec![vec![0, 2, 8], vec![1, 3, 8], vec![1, 6, 7], vec![0, 4, 6, 7]],
        },
        OdPair {
            origin: 1,
            destination: 5,
            paths: vec![vec![2, 8], vec![2, 5, 7], vec![4, 6, 7], vec![4, 3, 8]],
        },
    ];
    let bpr = Bpr {
        a: vec![1.0, 1.2, 0.8, 1.1, 0.5, 0.9, 1.3, 0.7, 1.0],
        b: vec![0.05, 0.04, 0.06, 0.05, 0.08, 0.03, 0.04, 0.05, 0.06],
    };
    OntapInstance::new(network, ods, bpr).expect("default instance is valid")
}

/// Seasonal demand for [`default_instance`].
pub fn default_demand(period: Option<f64>, noise: f64, seed: Seed) -> DemandProcess {
    DemandProcess {
        base: vec![1.0, 0.8, 0.6],
        amplitude: vec![0.4, 0.3, 0.25],
        period,
        noise,
        seed,
    }
}
