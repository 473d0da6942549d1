use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, ParamRecord, Parameterized, Tensor};
use crate::encode::StructureTree;

pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Dense {
            w: Tensor::xavier(output, input, rng),
            b: Tensor::zeros(output, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.data.clone();
        self.w.matvec_acc(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        grad.w.outer_acc(dy, x);
        grad.b.add_vec(dy);
        let mut dx = vec![0.0; x.len()];
        self.w.matvec_t_acc(dy, &mut dx);
        dx
    }

    pub fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }

    pub fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }

    pub fn take_from(record: &mut ParamRecord, prefix: &str) -> Result<Dense, NnError> {
        let w = record.take(&format!("{prefix}.w"))?;
        let b = record.take(&format!("{prefix}.b"))?;
        if b.rows != w.rows || b.cols != 1 {
            return Err(NnError::Record(format!("bias shape of `{prefix}` does not match")));
        }
        Ok(Dense { w, b })
    }
}

/// Recursive child-aggregating tree encoder:
/// `h(v) = lrelu(W_self x(v) + W_left h(left) + W_right h(right) + bias)`,
/// absent children contribute zero, output `W_out h(root) + b_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamRecord", try_from = "ParamRecord")]
pub struct TreeModule {
    pub w_self: Tensor,
    pub w_left: Tensor,
    pub w_right: Tensor,
    pub bias: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// Forward intermediates, indexed by pre-order position.
#[derive(Clone, Debug)]
pub struct TreeCache {
    pub pre: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

impl TreeModule {
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        TreeModule {
            w_self: Tensor::xavier(hidden, input, rng),
            w_left: Tensor::xavier(hidden, hidden, rng),
            w_right: Tensor::xavier(hidden, hidden, rng),
            bias: Tensor::zeros(hidden, 1),
            w_out: Tensor::xavier(output, hidden, rng),
            b_out: Tensor::zeros(output, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_self.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_self.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.rows
    }

    /// `inputs[i]` is the vector of the node at pre-order position `i`.
    pub fn forward(
        &self,
        tree: &StructureTree,
        inputs: &[Vec<f64>],
    ) -> Result<(Vec<f64>, TreeCache), NnError> {
        if inputs.len() != tree.len() {
            return Err(NnError::Dimension(format!(
                "{} node vectors for a {}-node tree",
                inputs.len(),
                tree.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != self.input_dim()) {
            return Err(NnError::Dimension(format!(
                "node vector of length {}, module expects {}",
                bad.len(),
                self.input_dim()
            )));
        }
        let h_dim = self.hidden_dim();
        let n = tree.len();
        let mut pre = vec![Vec::new(); n];
        let mut hidden = vec![Vec::new(); n];
        // Children follow their parent in pre-order, so a reverse sweep is bottom-up.
        for i in (0..n).rev() {
            let mut z = self.bias.data.clone();
            self.w_self.matvec_acc(&inputs[i], &mut z);
            let (l, r) = tree.children[i];
            if let Some(l) = l {
                self.w_left.matvec_acc(&hidden[l], &mut z);
            }
            if let Some(r) = r {
                self.w_right.matvec_acc(&hidden[r], &mut z);
            }
            debug_assert_eq!(z.len(), h_dim);
            hidden[i] = z.iter().map(|&v| leaky_relu(v)).collect();
            pre[i] = z;
        }
        let mut out = self.b_out.data.clone();
        self.w_out.matvec_acc(&hidden[0], &mut out);
        Ok((out, TreeCache { pre, hidden }))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` per node.
    pub fn backward(
        &self,
        tree: &StructureTree,
        inputs: &[Vec<f64>],
        cache: &TreeCache,
        d_out: &[f64],
        grad: &mut TreeModule,
    ) -> Vec<Vec<f64>> {
        let n = tree.len();
        let h_dim = self.hidden_dim();
        grad.w_out.outer_acc(d_out, &cache.hidden[0]);
        grad.b_out.add_vec(d_out);
        let mut d_hidden = vec![vec![0.0; h_dim]; n];
        self.w_out.matvec_t_acc(d_out, &mut d_hidden[0]);
        let mut d_inputs = vec![vec![0.0; self.input_dim()]; n];
        // Parents before children.
        for i in 0..n {
            let dz: Vec<f64> = d_hidden[i]
                .iter()
                .zip(&cache.pre[i])
                .map(|(d, z)| d * leaky_relu_grad(*z))
                .collect();
            grad.bias.add_vec(&dz);
            grad.w_self.outer_acc(&dz, &inputs[i]);
            self.w_self.matvec_t_acc(&dz, &mut d_inputs[i]);
            let (l, r) = tree.children[i];
            if let Some(l) = l {
                grad.w_left.outer_acc(&dz, &cache.hidden[l]);
                let mut dl = std::mem::take(&mut d_hidden[l]);
                self.w_left.matvec_t_acc(&dz, &mut dl);
                d_hidden[l] = dl;
            }
            if let Some(r) = r {
                grad.w_right.outer_acc(&dz, &cache.hidden[r]);
                let mut dr = std::mem::take(&mut d_hidden[r]);
                self.w_right.matvec_t_acc(&dz, &mut dr);
                d_hidden[r] = dr;
            }
        }
        d_inputs
    }
}

impl Parameterized for TreeModule {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("w_self", &self.w_self);
        f("w_left", &self.w_left);
        f("w_right", &self.w_right);
        f("bias", &self.bias);
        f("w_out", &self.w_out);
        f("b_out", &self.b_out);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w_self", &mut self.w_self);
        f("w_left", &mut self.w_left);
        f("w_right", &mut self.w_right);
        f("bias", &mut self.bias);
        f("w_out", &mut self.w_out);
        f("b_out", &mut self.b_out);
    }
}

impl From<TreeModule> for ParamRecord {
    fn from(m: TreeModule) -> Self {
        m.to_record()
    }
}

impl TryFrom<ParamRecord> for TreeModule {
    type Error = NnError;

    fn try_from(mut r: ParamRecord) -> Result<Self, Self::Error> {
        let m = TreeModule {
            w_self: r.take("w_self")?,
            w_left: r.take("w_left")?,
            w_right: r.take("w_right")?,
            bias: r.take("bias")?,
            w_out: r.take("w_out")?,
            b_out: r.take("b_out")?,
        };
        r.finish()?;
        let h = m.w_self.rows;
        let ok = m.w_left.rows == h
            && m.w_left.cols == h
            && m.w_right.rows == h
            && m.w_right.cols == h
            && m.bias.rows == h
            && m.w_out.cols == h
            && m.b_out.rows == m.w_out.rows;
        if !ok {
            return Err(NnError::Record("inconsistent tree module shapes".into()));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, zeros_like, LossEval};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_node() -> StructureTree {
        StructureTree::from_triples(&[[1, 2, 3], [2, 0, 0], [3, 0, 0]]).unwrap()
    }

    #[test]
    fn zero_params_single_node_gives_zero() {
        let mut m = TreeModule::new(4, 6, 5, &mut ChaCha8Rng::seed_from_u64(0));
        m.fill(0.0);
        let tree = StructureTree::from_triples(&[[1, 0, 0]]).unwrap();
        let (out, _) = m.forward(&tree, &[vec![1.0, -2.0, 3.0, 0.5]]).unwrap();
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn child_order_matters() {
        let m = TreeModule::new(3, 8, 4, &mut ChaCha8Rng::seed_from_u64(11));
        let tree = three_node();
        let inputs = vec![vec![0.1, 0.2, 0.3], vec![1.0, 0.0, -1.0], vec![-0.5, 2.0, 0.0]];
        let swapped = vec![inputs[0].clone(), inputs[2].clone(), inputs[1].clone()];
        let (a, _) = m.forward(&tree, &inputs).unwrap();
        let (b, _) = m.forward(&tree, &swapped).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn dimension_mismatch() {
        let m = TreeModule::new(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(m.forward(&three_node(), &[vec![0.0; 3]]).is_err());
        assert!(m.forward(&three_node(), &vec![vec![0.0; 2]; 3]).is_err());
    }

    #[test]
    fn tree_module_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = TreeModule::new(5, 7, 4, &mut rng);
        m.visit_mut(&mut |_, t| t.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1)));
        let tree = StructureTree::from_triples(&[[1, 2, 5], [2, 3, 0], [3, 0, 0], [5, 6, 7], [6, 0, 0], [7, 0, 0]]).unwrap();
        let inputs: Vec<Vec<f64>> = (0..tree.len()).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let target = [0.3, -0.2, 0.5, 1.0];
        let eval = |p: &TreeModule| {
            let (out, cache) = p.forward(&tree, &inputs).unwrap();
            let loss = out.iter().zip(&target).map(|(o, t)| 0.5 * (o - t) * (o - t)).sum();
            LossEval::with_activations(loss, cache.pre.iter().flatten().copied())
        };
        let (out, cache) = m.forward(&tree, &inputs).unwrap();
        let d_out: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
        let mut grad = zeros_like(&m);
        m.backward(&tree, &inputs, &cache, &d_out, &mut grad);
        let report = grad_check(&mut m, eval, &grad, 1e-5, usize::MAX, 0).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 100);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = Dense::new(4, 3, &mut rng);
        layer.b.data = vec![0.1, -0.2, 0.3];
        let x = [0.5, -1.0, 2.0, 0.25];
        struct Wrap(Dense);
        impl Clone for Wrap {
            fn clone(&self) -> Self {
                Wrap(self.0.clone())
            }
        }
        impl Parameterized for Wrap {
            fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
                self.0.visit_named("d", f)
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
                self.0.visit_named_mut("d", f)
            }
        }
        let mut w = Wrap(layer);
        let eval = |p: &Wrap| {
            let y = p.0.forward(&x);
            LossEval::smooth(y.iter().map(|v| v * v).sum::<f64>())
        };
        let y = w.0.forward(&x);
        let dy: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let mut g = zeros_like(&w);
        w.0.backward(&x, &dy, &mut g.0);
        let report = grad_check(&mut w, eval, &g, 1e-5, usize::MAX, 0).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn record_round_trip() {
        let m = TreeModule::new(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(8));
        let json = serde_json::to_string(&m).unwrap();
        let back: TreeModule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(json.contains("\"shape\":[4,3]"));
    }
}
