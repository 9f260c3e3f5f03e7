//! Structural data model: layers of hypercolumns, projections between them,
//! probability traces and the parameters derived from those traces.
//!
//! Every projection uses the same slot layout. Each post-synaptic hypercolumn
//! `h` owns `n_act + n_sil` slots, each naming one pre-synaptic hypercolumn;
//! the first `n_act` slots are active, the rest silent. Joint traces and
//! weights are stored per `(h, slot, pre_mcu, post_mcu)` with the post
//! minicolumn innermost, so one row holds every weight a single pre-synaptic
//! minicolumn sends into one post-synaptic hypercolumn. The fully connected
//! hidden-to-output projection is the degenerate case where every hidden
//! hypercolumn is an active slot of the single output hypercolumn.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::precision::Precision;

/// Independent random streams derived from the master seed.
pub(crate) mod streams {
    pub const CONNECTIVITY: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const REWIRE: u64 = 3;
    pub const INIT_SAMPLES: u64 = 4;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which pre-synaptic hypercolumns feed each post-synaptic hypercolumn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseConnectivity {
    n_pre_hcu: usize,
    n_act: usize,
    n_sil: usize,
    /// `n_post_hcu * (n_act + n_sil)` pre-synaptic indices.
    indices: Vec<u32>,
}

impl SparseConnectivity {
    /// Draws each post hypercolumn's links uniformly without replacement.
    pub fn random(
        n_pre_hcu: usize,
        n_post_hcu: usize,
        n_act: usize,
        n_sil: usize,
        rng: &mut impl rand::Rng,
    ) -> SparseConnectivity {
        let slots = n_act + n_sil;
        let mut indices = Vec::with_capacity(n_post_hcu * slots);
        for _ in 0..n_post_hcu {
            let mut drawn: Vec<u32> = sample(rng, n_pre_hcu, slots)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            drawn[..n_act].sort_unstable();
            drawn[n_act..].sort_unstable();
            indices.extend(drawn);
        }
        SparseConnectivity {
            n_pre_hcu,
            n_act,
            n_sil,
            indices,
        }
    }

    /// Every post hypercolumn connected to every pre hypercolumn, no silent links.
    pub fn full(n_pre_hcu: usize, n_post_hcu: usize) -> SparseConnectivity {
        let indices = (0..n_post_hcu)
            .flat_map(|_| 0..n_pre_hcu as u32)
            .collect();
        SparseConnectivity {
            n_pre_hcu,
            n_act: n_pre_hcu,
            n_sil: 0,
            indices,
        }
    }

    /// Builds connectivity from explicit per-hypercolumn index lists.
    pub fn from_indices(
        n_pre_hcu: usize,
        n_act: usize,
        n_sil: usize,
        indices: Vec<u32>,
    ) -> Result<SparseConnectivity> {
        let c = SparseConnectivity {
            n_pre_hcu,
            n_act,
            n_sil,
            indices,
        };
        c.check()?;
        Ok(c)
    }

    pub fn n_pre_hcu(&self) -> usize {
        self.n_pre_hcu
    }

    pub fn n_post_hcu(&self) -> usize {
        self.indices.len() / self.n_slots().max(1)
    }

    pub fn n_act(&self) -> usize {
        self.n_act
    }

    pub fn n_sil(&self) -> usize {
        self.n_sil
    }

    pub fn n_slots(&self) -> usize {
        self.n_act + self.n_sil
    }

    /// All slots of hypercolumn `h`: active first, then silent.
    pub fn slots(&self, h: usize) -> &[u32] {
        let n = self.n_slots();
        &self.indices[h * n..(h + 1) * n]
    }

    pub fn active(&self, h: usize) -> &[u32] {
        &self.slots(h)[..self.n_act]
    }

    pub fn silent(&self, h: usize) -> &[u32] {
        &self.slots(h)[self.n_act..]
    }

    pub(crate) fn slots_mut(&mut self, h: usize) -> &mut [u32] {
        let n = self.n_slots();
        &mut self.indices[h * n..(h + 1) * n]
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Checks cardinality, range and disjointness for every hypercolumn.
    pub fn check(&self) -> Result<()> {
        let n = self.n_slots();
        if n == 0 || self.indices.len() % n != 0 {
            return Err(Error::ShapeMismatch {
                what: "connectivity slots",
                expected: n,
                actual: self.indices.len(),
            });
        }
        let mut seen = vec![usize::MAX; self.n_pre_hcu];
        for h in 0..self.n_post_hcu() {
            for &c in self.slots(h) {
                let c = c as usize;
                if c >= self.n_pre_hcu {
                    return Err(Error::IndexOutOfRange {
                        what: "pre-synaptic hypercolumn",
                        index: c,
                        len: self.n_pre_hcu,
                    });
                }
                if seen[c] == h {
                    return Err(Error::MalformedModel(format!(
                        "hypercolumn {h} links input {c} twice"
                    )));
                }
                seen[c] = h;
            }
        }
        Ok(())
    }
}

/// Probability traces of one projection.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    /// Marginal activation probability of every pre-synaptic minicolumn.
    pub p_pre: Vec<f64>,
    /// Marginal activation probability of every post-synaptic minicolumn.
    pub p_post: Vec<f64>,
    /// Joint probabilities in slot layout, one per stored pair.
    pub p_joint: Vec<f64>,
}

/// A projection between two layers: connectivity, traces and derived parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub connectivity: SparseConnectivity,
    pub pre_mcus: usize,
    pub post_mcus: usize,
    pub traces: TraceSet,
    /// Pointwise mutual information weights, same layout as `traces.p_joint`.
    pub weights: Vec<f32>,
    /// Log-prior biases, one per post-synaptic minicolumn.
    pub biases: Vec<f32>,
}

impl Projection {
    /// Creates a projection with independence-prior traces and zero weights.
    pub fn new(connectivity: SparseConnectivity, pre_mcus: usize, post_mcus: usize) -> Projection {
        let n_post = connectivity.n_post_hcu() * post_mcus;
        let n_pairs = connectivity.indices.len() * pre_mcus * post_mcus;
        let mut p = Projection {
            traces: TraceSet {
                p_pre: vec![0.0; connectivity.n_pre_hcu * pre_mcus],
                p_post: vec![0.0; n_post],
                p_joint: vec![0.0; n_pairs],
            },
            weights: vec![0.0; n_pairs],
            biases: vec![0.0; n_post],
            connectivity,
            pre_mcus,
            post_mcus,
        };
        p.init_traces();
        p
    }

    pub fn n_post_hcu(&self) -> usize {
        self.connectivity.n_post_hcu()
    }

    pub fn n_pre_mcu(&self) -> usize {
        self.connectivity.n_pre_hcu * self.pre_mcus
    }

    pub fn n_post_mcu(&self) -> usize {
        self.n_post_hcu() * self.post_mcus
    }

    /// Length of the joint-trace block of one slot.
    pub(crate) fn slot_len(&self) -> usize {
        self.pre_mcus * self.post_mcus
    }

    /// Offset of the `(h, slot)` block in `p_joint` / `weights`.
    #[inline]
    pub(crate) fn slot_offset(&self, h: usize, slot: usize) -> usize {
        (h * self.connectivity.n_slots() + slot) * self.slot_len()
    }

    /// Resets traces to independence priors: `p_pre = 1/M_pre`,
    /// `p_post = 1/M_post`, `p_joint = p_pre * p_post`. Weights become 0 and
    /// biases `ln(1/M_post)`.
    pub fn init_traces(&mut self) {
        let pi = 1.0 / self.pre_mcus as f64;
        let pj = 1.0 / self.post_mcus as f64;
        self.traces.p_pre.fill(pi);
        self.traces.p_post.fill(pj);
        self.traces.p_joint.fill(pi * pj);
        self.weights.fill(0.0);
        self.biases.fill(pj.ln() as f32);
    }

    /// Resets the joint traces of one slot to the independence prior implied
    /// by the current marginals, and zeroes its weights.
    pub(crate) fn reset_slot(&mut self, h: usize, slot: usize) {
        let c = self.connectivity.slots(h)[slot] as usize;
        let off = self.slot_offset(h, slot);
        let m = self.post_mcus;
        for i in 0..self.pre_mcus {
            let pi = self.traces.p_pre[c * self.pre_mcus + i];
            let row = off + i * m;
            for j in 0..m {
                self.traces.p_joint[row + j] = pi * self.traces.p_post[h * m + j];
            }
            self.weights[row..row + m].fill(0.0);
        }
    }

    /// Gathers the pre-synaptic activity seen by hypercolumn `h` through its
    /// active slots, in slot order (the dense-vector view of the support sum).
    pub fn gather_active(&self, pre_activity: &[f32], h: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.connectivity.n_act * self.pre_mcus);
        for &c in self.connectivity.active(h) {
            let c = c as usize;
            out.extend_from_slice(&pre_activity[c * self.pre_mcus..(c + 1) * self.pre_mcus]);
        }
        out
    }
}

/// The full three-layer network: input -> hidden (sparse, plastic) -> output (dense).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub config: NetworkConfig,
    pub input_hidden: Projection,
    pub hidden_output: Projection,
    pub input_activity: Vec<f32>,
    pub hidden_activity: Vec<f32>,
    pub output_activity: Vec<f32>,
    /// Grid on which weights and biases currently sit.
    pub stored_precision: Precision,
    /// Trace learning rate of the most recent training phase; 0 if untrained.
    pub alpha: f64,
}

impl NetworkState {
    /// Hash of every parameter, trace, index and activity bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crc32fast::Hasher::new();
        let mut h2 = crc32fast::Hasher::new_with_initial(0x9E37_79B9);
        let mut feed = |bytes: &[u8]| {
            h.update(bytes);
            h2.update(bytes);
        };
        for p in [&self.input_hidden, &self.hidden_output] {
            for &i in p.connectivity.indices() {
                feed(&i.to_le_bytes());
            }
            for v in p.traces.p_pre.iter().chain(&p.traces.p_post).chain(&p.traces.p_joint) {
                feed(&v.to_bits().to_le_bytes());
            }
            for v in p.weights.iter().chain(&p.biases) {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        for v in self
            .input_activity
            .iter()
            .chain(&self.hidden_activity)
            .chain(&self.output_activity)
        {
            feed(&v.to_bits().to_le_bytes());
        }
        ((h.finalize() as u64) << 32) | h2.finalize() as u64
    }
}

/// Builds an initialized network: random sparse input links, independence
/// priors everywhere, zero weights.
pub fn build_network(config: &NetworkConfig) -> Result<NetworkState> {
    config.validate()?;
    let mut rng = rng_for(config.seed, streams::CONNECTIVITY);
    let conn = SparseConnectivity::random(
        config.n_input_hcu,
        config.n_hidden_hcu,
        config.n_act,
        config.n_sil,
        &mut rng,
    );
    Ok(NetworkState {
        input_hidden: Projection::new(conn, config.input_mcu_per_hcu, config.hidden_mcu_per_hcu),
        hidden_output: Projection::new(
            SparseConnectivity::full(config.n_hidden_hcu, 1),
            config.hidden_mcu_per_hcu,
            config.n_classes,
        ),
        input_activity: vec![0.0; config.n_input_mcu()],
        hidden_activity: vec![0.0; config.n_hidden_mcu()],
        output_activity: vec![0.0; config.n_classes],
        stored_precision: Precision::Fp32,
        alpha: 0.0,
        config: config.clone(),
    })
}

/// Resets a projection's traces to independence priors.
pub fn init_traces(projection: &mut Projection) {
    projection.init_traces();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigViolation;

    #[test]
    fn mnist_shape() {
        let net = build_network(&NetworkConfig::mnist()).unwrap();
        let c = &net.input_hidden.connectivity;
        assert_eq!(c.n_post_hcu(), 32);
        for h in 0..32 {
            assert_eq!(c.active(h).len(), 64);
            assert_eq!(c.silent(h).len(), 64);
        }
        c.check().unwrap();
        assert_eq!(net.input_hidden.weights.len(), 32 * 128 * 2 * 128);
        assert_eq!(net.hidden_output.weights.len(), 32 * 128 * 10);
        assert_eq!(net.input_activity.len(), 1568);
    }

    #[test]
    fn full_connectivity_is_a_permutation() {
        let cfg = NetworkConfig {
            n_input_hcu: 20,
            n_act: 20,
            n_sil: 0,
            n_replace: 0,
            n_hidden_hcu: 3,
            hidden_mcu_per_hcu: 4,
            ..NetworkConfig::mnist()
        };
        let net = build_network(&cfg).unwrap();
        for h in 0..3 {
            let mut a = net.input_hidden.connectivity.active(h).to_vec();
            a.sort_unstable();
            assert_eq!(a, (0..20).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn deterministic() {
        let a = build_network(&NetworkConfig::mnist()).unwrap();
        let b = build_network(&NetworkConfig::mnist()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a, b);
        let c = build_network(&NetworkConfig {
            seed: 2,
            ..NetworkConfig::mnist()
        })
        .unwrap();
        assert_ne!(a.input_hidden.connectivity, c.input_hidden.connectivity);
    }

    #[test]
    fn invalid_config_lists_violations() {
        let cfg = NetworkConfig {
            tau_p: 0.0,
            beta: -1.0,
            ..NetworkConfig::mnist()
        };
        match build_network(&cfg) {
            Err(Error::InvalidConfig(v)) => {
                assert_eq!(
                    v,
                    vec![
                        ConfigViolation::NonPositiveTau(0.0),
                        ConfigViolation::NonPositiveBeta(-1.0)
                    ]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn priors() {
        let net = build_network(&NetworkConfig::mnist()).unwrap();
        let p = &net.input_hidden;
        assert!(p.traces.p_pre.iter().all(|&v| v == 0.5));
        assert!(p.traces.p_post.iter().all(|&v| v == 1.0 / 128.0));
        assert!(p.traces.p_joint.iter().all(|&v| v == 1.0 / 256.0));
        assert!(p.weights.iter().all(|&w| w == 0.0));
        let b = (1.0f64 / 128.0).ln();
        assert!((b + 4.852).abs() < 1e-3);
        assert!(p.biases.iter().all(|&v| v == b as f32));
        let b = (1.0f64 / 10.0).ln() as f32;
        assert!(net.hidden_output.biases.iter().all(|&v| v == b));
    }

    #[test]
    fn check_detects_duplicates() {
        let c = SparseConnectivity::from_indices(10, 2, 1, vec![1, 2, 1]);
        assert!(c.is_err());
        let c = SparseConnectivity::from_indices(10, 2, 1, vec![1, 2, 10]);
        assert!(matches!(c, Err(Error::IndexOutOfRange { .. })));
        SparseConnectivity::from_indices(10, 2, 1, vec![1, 2, 3, 1, 2, 3]).unwrap();
    }
}
