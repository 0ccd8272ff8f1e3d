//! A small dense policy/value network with hand-written reverse-mode
//! gradients — no external learning framework.
//!
//! Architecture: a shared tanh trunk (default two hidden layers) feeding
//! three linear heads — dimension logits, operation logits, and a scalar
//! state value. Parameters live in one flat `Vec<f64>` so optimizers and
//! finite-difference checks can treat the network as a plain vector
//! function. All computation is `f64` and fully deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::OP_COUNT;

/// Network shape. `dims` is the subset dimension count (the size of the
/// first categorical head).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub dims: usize,
}

impl NetConfig {
    pub fn new(input: usize, hidden: Vec<usize>, dims: usize) -> Self {
        assert!(input > 0 && dims > 0 && hidden.iter().all(|&h| h > 0));
        NetConfig { input, hidden, dims }
    }
}

/// One dense layer's place in the flat parameter vector: `rows×cols`
/// weights followed by `rows` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    off: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * (self.cols + 1)
    }
    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.off..self.off + self.rows * self.cols]
    }
    fn biases<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.off + self.rows * self.cols..self.off + self.len()]
    }
}

/// y = W·x + b.
fn affine(block: Block, params: &[f64], x: &[f64], y: &mut [f64]) {
    let w = block.weights(params);
    let b = block.biases(params);
    for r in 0..block.rows {
        let row = &w[r * block.cols..(r + 1) * block.cols];
        y[r] = b[r] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
    }
}

/// Accumulate dL/dW += dy ⊗ x, dL/db += dy, and dL/dx += Wᵀ·dy.
fn affine_backward(block: Block, params: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
    let (gw, gb) = grad[block.off..block.off + block.len()].split_at_mut(block.rows * block.cols);
    for r in 0..block.rows {
        gb[r] += dy[r];
        let grow = &mut gw[r * block.cols..(r + 1) * block.cols];
        for (g, xi) in grow.iter_mut().zip(x) {
            *g += dy[r] * xi;
        }
    }
    if let Some(dx) = dx {
        let w = block.weights(params);
        for r in 0..block.rows {
            let row = &w[r * block.cols..(r + 1) * block.cols];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += dy[r] * wi;
            }
        }
    }
}

/// The policy/value network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub config: NetConfig,
    trunk: Vec<Block>,
    head_dim: Block,
    head_op: Block,
    head_value: Block,
    params: Vec<f64>,
}

/// Forward-pass caches plus the head outputs.
#[derive(Debug, Clone)]
pub struct Forward {
    input: Vec<f64>,
    /// Post-tanh activation of each trunk layer.
    acts: Vec<Vec<f64>>,
    pub dim_logits: Vec<f64>,
    pub op_logits: Vec<f64>,
    pub value: f64,
}

impl PolicyNet {
    /// Lay out the blocks and initialize: orthogonal trunk weights, heads
    /// scaled down to 0.01 so initial policies are near-uniform and initial
    /// values near zero, all biases zero.
    pub fn new(config: NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::new();
        let mut off = 0;
        let mut push = |rows: usize, cols: usize| {
            let b = Block { off, rows, cols };
            off += b.len();
            b
        };
        let mut trunk = Vec::new();
        let mut prev = config.input;
        for &h in &config.hidden {
            trunk.push(push(h, prev));
            prev = h;
        }
        let head_dim = push(config.dims, prev);
        let head_op = push(OP_COUNT, prev);
        let head_value = push(1, prev);
        blocks.extend(trunk.iter().copied());
        blocks.push(head_dim);
        blocks.push(head_op);
        blocks.push(head_value);

        let mut params = vec![0.0; off];
        for &b in &trunk {
            orthogonal_init(&mut params[b.off..b.off + b.rows * b.cols], b.rows, b.cols, 1.0, rng);
        }
        for &b in [head_dim, head_op, head_value].iter() {
            orthogonal_init(&mut params[b.off..b.off + b.rows * b.cols], b.rows, b.cols, 0.01, rng);
        }
        PolicyNet { config, trunk, head_dim, head_op, head_value, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Rebuild a network from a saved parameter vector.
    pub fn from_params(config: NetConfig, params: Vec<f64>) -> crate::Result<Self> {
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let mut net = PolicyNet::new(config, &mut rng);
        if params.len() != net.params.len() {
            return Err(crate::Error::Format(format!(
                "parameter count mismatch: file has {}, architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, observation: &[f64]) -> Forward {
        assert_eq!(observation.len(), self.config.input, "observation length mismatch");
        let mut acts = Vec::with_capacity(self.trunk.len());
        let mut x = observation;
        for &b in &self.trunk {
            let mut z = vec![0.0; b.rows];
            affine(b, &self.params, x, &mut z);
            for v in &mut z {
                *v = v.tanh();
            }
            acts.push(z);
            x = acts.last().unwrap();
        }
        let mut dim_logits = vec![0.0; self.config.dims];
        affine(self.head_dim, &self.params, x, &mut dim_logits);
        let mut op_logits = vec![0.0; OP_COUNT];
        affine(self.head_op, &self.params, x, &mut op_logits);
        let mut value = [0.0];
        affine(self.head_value, &self.params, x, &mut value);
        Forward { input: observation.to_vec(), acts, dim_logits, op_logits, value: value[0] }
    }

    /// Accumulate dL/dparams into `grad` given the loss gradients at the
    /// three heads. `grad` must have `param_count()` entries.
    pub fn backward(
        &self,
        fwd: &Forward,
        d_dim_logits: &[f64],
        d_op_logits: &[f64],
        d_value: f64,
        grad: &mut [f64],
    ) {
        assert_eq!(grad.len(), self.params.len());
        let last: &[f64] = fwd.acts.last().map(Vec::as_slice).unwrap_or(&fwd.input);
        let mut dh = vec![0.0; last.len()];
        affine_backward(self.head_dim, &self.params, last, d_dim_logits, grad, Some(&mut dh));
        affine_backward(self.head_op, &self.params, last, d_op_logits, grad, Some(&mut dh));
        affine_backward(self.head_value, &self.params, last, &[d_value], grad, Some(&mut dh));

        for (l, &b) in self.trunk.iter().enumerate().rev() {
            // Through tanh: dz = dh ⊙ (1 − act²).
            let act = &fwd.acts[l];
            let dz: Vec<f64> = dh.iter().zip(act).map(|(d, a)| d * (1.0 - a * a)).collect();
            let prev: &[f64] = if l == 0 { &fwd.input } else { &fwd.acts[l - 1] };
            if l == 0 {
                affine_backward(b, &self.params, prev, &dz, grad, None);
            } else {
                dh = vec![0.0; prev.len()];
                affine_backward(b, &self.params, prev, &dz, grad, Some(&mut dh));
            }
        }
    }
}

/// Fill `w` (rows×cols, row-major) with a gain-scaled orthogonal matrix:
/// Gaussian draws orthonormalized by modified Gram–Schmidt along the shorter
/// side.
fn orthogonal_init(w: &mut [f64], rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) {
    let (n, m, transpose) = if rows <= cols { (rows, cols, false) } else { (cols, rows, true) };
    // n orthonormal vectors of length m, n ≤ m.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // essentially-dependent draw; take another
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    for r in 0..rows {
        for c in 0..cols {
            let v = if transpose { basis[c][r] } else { basis[r][c] };
            w[r * cols + c] = gain * v;
        }
    }
}

/// Standard normal via Box–Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A masked categorical head: probabilities (exactly 0 on masked entries)
/// and log-probabilities (−∞ on masked entries).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDist {
    pub probs: Vec<f64>,
    pub logps: Vec<f64>,
}

impl HeadDist {
    /// Softmax over the unmasked entries. At least one entry must be
    /// unmasked — a node with no legal action never reaches the policy.
    pub fn new(logits: &[f64], mask: &[bool]) -> Self {
        assert_eq!(logits.len(), mask.len());
        let max = logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max.is_finite(), "masked softmax needs at least one legal entry");
        let mut sum = 0.0;
        let exps: Vec<f64> = logits
            .iter()
            .zip(mask)
            .map(|(&l, &m)| {
                if m {
                    let e = (l - max).exp();
                    sum += e;
                    e
                } else {
                    0.0
                }
            })
            .collect();
        let log_sum = sum.ln() + max;
        let probs = exps.iter().map(|e| e / sum).collect();
        let logps = logits
            .iter()
            .zip(mask)
            .map(|(&l, &m)| if m { l - log_sum } else { f64::NEG_INFINITY })
            .collect();
        HeadDist { probs, logps }
    }

    /// Entropy over the unmasked entries.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// Sample an index proportionally to the probabilities.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_legal = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_legal = i;
                acc += p;
                if r < acc {
                    return i;
                }
            }
        }
        last_legal // floating-point slack at the tail
    }

    /// Highest-probability index, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > best_p {
                best = i;
                best_p = p;
            }
        }
        best
    }

    /// KL(self ‖ other) over the unmasked support. Both heads must share a
    /// mask (the node state fixes it, so paired old/new snapshots do).
    pub fn kl(&self, other: &HeadDist) -> f64 {
        self.probs
            .iter()
            .zip(&self.logps)
            .zip(&other.logps)
            .filter(|((&p, _), _)| p > 0.0)
            .map(|((&p, &lp), &lq)| p * (lp - lq))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_net(seed: u64) -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyNet::new(NetConfig::new(7, vec![5, 4], 3), &mut rng)
    }

    fn tiny_obs() -> Vec<f64> {
        vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]
    }

    #[test]
    fn deterministic_and_finite() {
        let a = tiny_net(3);
        let b = tiny_net(3);
        assert_eq!(a.params(), b.params());
        assert!(a.all_finite());
        let fa = a.forward(&tiny_obs());
        let fb = b.forward(&tiny_obs());
        assert_eq!(fa.dim_logits, fb.dim_logits);
        assert_eq!(fa.value, fb.value);
        assert_ne!(tiny_net(4).params(), a.params());
    }

    #[test]
    fn trunk_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = PolicyNet::new(NetConfig::new(20, vec![6], 3), &mut rng);
        // First block: 6×20 weights at offset 0; rows should be orthonormal.
        let w = &net.params()[..6 * 20];
        for r in 0..6 {
            for s in 0..6 {
                let dot: f64 = (0..20).map(|c| w[r * 20 + c] * w[s * 20 + c]).sum();
                let expect = if r == s { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "rows {r},{s}: {dot}");
            }
        }
    }

    #[test]
    fn masked_softmax_properties() {
        let logits = [2.0, -1.0, 1000.0, 0.5];
        let mask = [true, true, false, true];
        let d = HeadDist::new(&logits, &mask);
        assert_eq!(d.probs[2], 0.0);
        assert_eq!(d.logps[2], f64::NEG_INFINITY);
        let sum: f64 = d.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Log-probs agree with probabilities.
        for i in [0, 1, 3] {
            assert!((d.logps[i].exp() - d.probs[i]).abs() < 1e-12);
        }
        // Huge legal logits stay stable.
        let d = HeadDist::new(&[1e8, 1e8 - 1.0], &[true, true]);
        assert!(d.probs.iter().all(|p| p.is_finite()));
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_never_picks_masked_entries() {
        let d = HeadDist::new(&[0.0, 5.0, -2.0, 1.0], &[true, false, true, true]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            assert_ne!(d.sample(&mut rng), 1);
        }
        assert_ne!(d.argmax(), 1);
    }

    #[test]
    fn kl_is_zero_for_identical_distributions() {
        let d = HeadDist::new(&[0.3, -1.0, 2.0], &[true, true, true]);
        assert!(d.kl(&d).abs() < 1e-12);
        let e = HeadDist::new(&[0.0, 0.0, 0.0], &[true, true, true]);
        assert!(d.kl(&e) > 0.0);
    }

    /// Central finite differences over every parameter for three scalar
    /// functions of the network: the value head, a chosen log-probability,
    /// and a head entropy.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let net = tiny_net(11);
        let obs = tiny_obs();
        let dim_mask = [true, true, false];
        let op_mask = [true, false, true, true, false, true];
        let chosen_dim = 1;
        let chosen_op = 3;
        let eps = 1e-6;

        // f1 = value
        let analytic = |net: &PolicyNet, which: usize| -> Vec<f64> {
            let fwd = net.forward(&obs);
            let dim = HeadDist::new(&fwd.dim_logits, &dim_mask);
            let op = HeadDist::new(&fwd.op_logits, &op_mask);
            let mut g = vec![0.0; net.param_count()];
            match which {
                0 => net.backward(&fwd, &[0.0; 3], &[0.0; 6], 1.0, &mut g),
                1 => {
                    // d logπ / d logits = onehot − p on the unmasked support.
                    let mut dd = vec![0.0; 3];
                    for i in 0..3 {
                        if dim_mask[i] {
                            dd[i] = f64::from(i == chosen_dim) - dim.probs[i];
                        }
                    }
                    let mut dop = vec![0.0; 6];
                    for i in 0..6 {
                        if op_mask[i] {
                            dop[i] = f64::from(i == chosen_op) - op.probs[i];
                        }
                    }
                    net.backward(&fwd, &dd, &dop, 0.0, &mut g);
                }
                _ => {
                    // dH/dz_j = −p_j (ln p_j + H) on the unmasked support.
                    let h = op.entropy();
                    let mut dop = vec![0.0; 6];
                    for i in 0..6 {
                        if op_mask[i] && op.probs[i] > 0.0 {
                            dop[i] = -op.probs[i] * (op.probs[i].ln() + h);
                        }
                    }
                    net.backward(&fwd, &[0.0; 3], &dop, 0.0, &mut g);
                }
            }
            g
        };
        let eval = |net: &PolicyNet, which: usize| -> f64 {
            let fwd = net.forward(&obs);
            match which {
                0 => fwd.value,
                1 => {
                    let dim = HeadDist::new(&fwd.dim_logits, &dim_mask);
                    let op = HeadDist::new(&fwd.op_logits, &op_mask);
                    dim.logps[chosen_dim] + op.logps[chosen_op]
                }
                _ => HeadDist::new(&fwd.op_logits, &op_mask).entropy(),
            }
        };

        for which in 0..3 {
            let g = analytic(&net, which);
            let mut worst = 0.0f64;
            for p in 0..net.param_count() {
                let mut plus = net.clone();
                plus.params_mut()[p] += eps;
                let mut minus = net.clone();
                minus.params_mut()[p] -= eps;
                let fd = (eval(&plus, which) - eval(&minus, which)) / (2.0 * eps);
                let denom = fd.abs().max(g[p].abs()).max(1e-4);
                worst = worst.max((fd - g[p]).abs() / denom);
            }
            assert!(worst <= 1e-4, "function {which}: worst relative error {worst}");
        }
    }

    #[test]
    fn from_params_round_trip() {
        let net = tiny_net(13);
        let copy = PolicyNet::from_params(net.config.clone(), net.params().to_vec()).unwrap();
        assert_eq!(net, copy);
        let wrong = PolicyNet::from_params(net.config.clone(), vec![0.0; 3]);
        assert!(wrong.is_err());
    }
}
