//! Graph isomorphism network encoder mapping node features to per-node
//! selection probabilities.
//!
//! Each layer computes `h_v <- MLP((1 + eps) h_v + sum_{u in N(v)} h_u)` with
//! a ReLU after every linear map of the MLP; a linear head followed by a
//! sigmoid produces `x_v` in (0, 1).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::problems::{DiscreteSolution, ProblemKind, SoftAssignment};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GinConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    /// Linear maps per layer MLP.
    pub mlp_depth: usize,
    pub input_dim: usize,
    /// Self-loop weight; fixed, not learned.
    pub epsilon: f64,
}

impl GinConfig {
    /// Four layers for MC/MVC and six for MIS, 64 wide.
    pub fn for_problem(kind: ProblemKind) -> Self {
        let layers = match kind {
            ProblemKind::MaxIndependentSet => 6,
            ProblemKind::MaxClique | ProblemKind::MinVertexCover => 4,
        };
        GinConfig {
            layers,
            hidden_dim: 64,
            mlp_depth: 2,
            input_dim: 1,
            epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.mlp_depth == 0 || self.input_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "GIN config needs layers, hidden_dim, mlp_depth and input_dim >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Shapes of every parameter tensor in storage order: per layer and MLP
    /// stage a weight then a bias, then the head weight and bias.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for layer in 0..self.layers {
            for stage in 0..self.mlp_depth {
                let fan_in = if layer == 0 && stage == 0 {
                    self.input_dim
                } else {
                    self.hidden_dim
                };
                shapes.push((fan_in, self.hidden_dim));
                shapes.push((1, self.hidden_dim));
            }
        }
        shapes.push((self.hidden_dim, 1));
        shapes.push((1, 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(r, c)| r * c).sum()
    }

    /// FNV-1a hash of the architecture fields.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let words = [
            self.layers as u64,
            self.hidden_dim as u64,
            self.mlp_depth as u64,
            self.input_dim as u64,
            self.epsilon.to_bits(),
        ];
        for w in words {
            for byte in w.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: GinConfig,
    pub fingerprint: u64,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn new(config: GinConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let p = ModelParams {
            config,
            fingerprint: config.fingerprint(),
            tensors,
        };
        p.check()?;
        Ok(p)
    }

    /// Same architecture, different weights.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        ModelParams::new(self.config, tensors)
    }

    /// Fingerprint and tensor shapes agree with the config.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                found: self.fingerprint,
            });
        }
        let shapes = self.config.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "config needs {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (i, (shape, t)) in shapes.iter().zip(&self.tensors).enumerate() {
            if *shape != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {i}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Errors unless `self` has exactly the architecture `expected`.
    pub fn check_matches(&self, expected: &GinConfig) -> Result<()> {
        self.check()?;
        if self.fingerprint != expected.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: expected.fingerprint(),
                found: self.fingerprint,
            });
        }
        Ok(())
    }

    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(cfg: &GinConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = cfg
        .param_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, (r, c))| {
            // shapes alternate weight, bias
            if i % 2 == 1 {
                Tensor::zeros(r, c)
            } else {
                let limit = (6.0 / (r + c) as f64).sqrt();
                let data = (0..r * c).map(|_| rng.gen_range(-limit..=limit)).collect();
                Tensor::new(r, c, data).expect("shape from config")
            }
        })
        .collect();
    ModelParams::new(*cfg, tensors)
}

/// Input feature scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureInit {
    /// One node set to 1, all others 0.
    SingleNodeSeed(usize),
    /// Indicator of a heuristic solution.
    GreedySolution(DiscreteSolution),
    /// All ones.
    Constant,
}

/// `n x 1` feature column for `scheme`.
pub fn make_features(g: &Graph, scheme: &FeatureInit) -> Result<Tensor> {
    let n = g.node_count();
    match scheme {
        FeatureInit::SingleNodeSeed(node) => {
            if *node >= n {
                return Err(Error::NodeOutOfRange { node: *node, n });
            }
            let mut col = vec![0.0; n];
            col[*node] = 1.0;
            Ok(Tensor::column(col))
        }
        FeatureInit::GreedySolution(sol) => {
            if sol.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: sol.len(),
                });
            }
            Ok(Tensor::column(
                sol.values()
                    .iter()
                    .map(|&b| if b { 1.0 } else { 0.0 })
                    .collect(),
            ))
        }
        FeatureInit::Constant => Ok(Tensor::filled(n, 1, 1.0)),
    }
}

/// Puts every parameter tensor on the tape as a differentiable leaf.
pub fn param_vars(tape: &Tape<'_>, params: &ModelParams) -> Vec<Var> {
    params
        .tensors
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect()
}

/// Records the message-passing stack and returns the final `n x hidden`
/// node embeddings.
pub fn record_hidden<'g>(
    tape: &Tape<'g>,
    cfg: &GinConfig,
    params: &[Var],
    g: &'g Graph,
    features: Var,
) -> Var {
    let mut h = features;
    let mut idx = 0;
    for _ in 0..cfg.layers {
        let neighbors = tape.neighbor_sum(h, g);
        let own = if cfg.epsilon == 0.0 {
            h
        } else {
            tape.scale(h, 1.0 + cfg.epsilon)
        };
        h = tape.add(own, neighbors);
        for _ in 0..cfg.mlp_depth {
            let z = tape.linear(h, params[idx], params[idx + 1]);
            h = tape.relu(z);
            idx += 2;
        }
    }
    h
}

/// Records the full encoder and returns the `n x 1` probabilities.
pub fn record_forward<'g>(
    tape: &Tape<'g>,
    cfg: &GinConfig,
    params: &[Var],
    g: &'g Graph,
    features: Var,
) -> Var {
    let h = record_hidden(tape, cfg, params, g, features);
    let k = params.len();
    let logits = tape.linear(h, params[k - 2], params[k - 1]);
    tape.sigmoid(logits)
}

fn check_features(cfg: &GinConfig, g: &Graph, features: &Tensor) -> Result<()> {
    if features.shape() != (g.node_count(), cfg.input_dim) {
        return Err(Error::ShapeMismatch(format!(
            "features {:?} vs expected ({}, {})",
            features.shape(),
            g.node_count(),
            cfg.input_dim
        )));
    }
    Ok(())
}

/// Soft assignment from a raw feature matrix.
pub fn forward_features(
    params: &ModelParams,
    g: &Graph,
    features: &Tensor,
) -> Result<SoftAssignment> {
    params.check()?;
    check_features(&params.config, g, features)?;
    let tape = Tape::new();
    let vars: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let x = tape.constant(features.clone());
    let out = record_forward(&tape, &params.config, &vars, g, x);
    let values = tape.value(out).data().to_vec();
    SoftAssignment::new(values)
}

pub fn forward(params: &ModelParams, g: &Graph, feat: &FeatureInit) -> Result<SoftAssignment> {
    forward_features(params, g, &make_features(g, feat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{gen_er, gen_rrg, RrgParams};

    fn small_cfg() -> GinConfig {
        GinConfig {
            layers: 3,
            hidden_dim: 8,
            mlp_depth: 2,
            input_dim: 1,
            epsilon: 0.0,
        }
    }

    #[test]
    fn features_examples() {
        let g = Graph::path(3);
        assert_eq!(
            make_features(&g, &FeatureInit::SingleNodeSeed(1))
                .unwrap()
                .data(),
            &[0.0, 1.0, 0.0]
        );
        let sol = DiscreteSolution::from_selected(3, &[0, 2]).unwrap();
        assert_eq!(
            make_features(&g, &FeatureInit::GreedySolution(sol))
                .unwrap()
                .data(),
            &[1.0, 0.0, 1.0]
        );
        assert_eq!(
            make_features(&Graph::empty(2), &FeatureInit::Constant)
                .unwrap()
                .data(),
            &[1.0, 1.0]
        );
        assert!(make_features(&g, &FeatureInit::SingleNodeSeed(3)).is_err());
    }

    #[test]
    fn identity_layer_sums_neighbors() {
        let cfg = GinConfig {
            layers: 1,
            hidden_dim: 2,
            mlp_depth: 1,
            input_dim: 2,
            epsilon: 0.0,
        };
        let eye = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let params = ModelParams::new(
            cfg,
            vec![
                eye,
                Tensor::zeros(1, 2),
                Tensor::zeros(2, 1),
                Tensor::zeros(1, 1),
            ],
        )
        .unwrap();
        let g = Graph::from_edge_list(2, &[(0, 1)]).unwrap();
        let tape = Tape::new();
        let vars = param_vars(&tape, &params);
        let x = tape.constant(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let h = record_hidden(&tape, &cfg, &vars, &g, x);
        assert_eq!(tape.value(h).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut params = init_params(&small_cfg(), 4).unwrap();
        let k = params.tensors.len();
        params.tensors[k - 2] = Tensor::zeros(8, 1);
        let g = gen_er(7, 0.4, 1).unwrap();
        let x = forward(&params, &g, &FeatureInit::SingleNodeSeed(2)).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = small_cfg();
        let a = init_params(&cfg, 7).unwrap();
        assert_eq!(a, init_params(&cfg, 7).unwrap());
        assert_ne!(a, init_params(&cfg, 8).unwrap());
        for (i, ((r, c), t)) in cfg.param_shapes().into_iter().zip(&a.tensors).enumerate() {
            let limit = (6.0 / (r + c) as f64).sqrt();
            if i % 2 == 1 {
                assert!(t.data().iter().all(|&v| v == 0.0));
            } else {
                assert!(t.data().iter().all(|v| v.abs() <= limit));
                assert!(t.data().iter().any(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let mut p = init_params(&small_cfg(), 1).unwrap();
        p.fingerprint ^= 1;
        let g = Graph::path(3);
        assert!(matches!(
            forward(&p, &g, &FeatureInit::Constant),
            Err(Error::FingerprintMismatch { .. })
        ));
        let q = init_params(&small_cfg(), 1).unwrap();
        let other = GinConfig {
            layers: 2,
            ..small_cfg()
        };
        assert!(q.check_matches(&other).is_err());
        assert!(q.check_matches(&small_cfg()).is_ok());
    }

    #[test]
    fn outputs_lie_strictly_inside_unit_interval() {
        let p = init_params(&small_cfg(), 3).unwrap();
        for seed in 0..5 {
            let g = gen_er(15, 0.3, seed).unwrap();
            let x = forward(&p, &g, &FeatureInit::SingleNodeSeed(seed as usize)).unwrap();
            assert!(x.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn permutation_equivariance() {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = init_params(&small_cfg(), 5).unwrap();
        for seed in 0..5 {
            let g = gen_er(12, 0.35, seed).unwrap();
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut rng);
            // node v of g becomes node perm[v] of h
            let pairs: Vec<(usize, usize)> =
                g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
            let h = Graph::from_edge_list(12, &pairs).unwrap();
            let greedy = DiscreteSolution::from_selected(12, &[0, 3, 7]).unwrap();
            let mut permuted = vec![false; 12];
            for v in 0..12 {
                permuted[perm[v]] = greedy.values()[v];
            }
            let schemes = [
                (
                    FeatureInit::SingleNodeSeed(4),
                    FeatureInit::SingleNodeSeed(perm[4]),
                ),
                (
                    FeatureInit::GreedySolution(greedy.clone()),
                    FeatureInit::GreedySolution(DiscreteSolution::from_values(permuted)),
                ),
                (FeatureInit::Constant, FeatureInit::Constant),
            ];
            for (fg, fh) in schemes {
                let xg = forward(&p, &g, &fg).unwrap();
                let xh = forward(&p, &h, &fh).unwrap();
                for v in 0..12 {
                    assert!((xg.values()[v] - xh.values()[perm[v]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn regular_graph_with_constant_features_is_ambiguous() {
        let p = init_params(&GinConfig::for_problem(ProblemKind::MaxIndependentSet), 2).unwrap();
        let g = gen_rrg(&RrgParams {
            n: 40,
            d: 3,
            seed: 1,
        })
        .unwrap();
        let x = forward(&p, &g, &FeatureInit::Constant).unwrap();
        let first = x.values()[0];
        assert!(x.values().iter().all(|&v| (v - first).abs() < 1e-12));
    }
}
