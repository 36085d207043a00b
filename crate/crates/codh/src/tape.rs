//! Eager tape for reverse-mode gradients over the fixed op set.
//!
//! Every op records its inputs; `backward` replays the tape in reverse and
//! accumulates cotangents via the per-op VJPs in [`crate::tensor`].

use crate::tensor::{
    activation, activation_vjp, affine, affine_vjp, conv1d_batched, conv1d_vjp, conv2d_batched,
    conv2d_vjp, gap_batched, gap_vjp, transpose2d, Activation, ConvSpec, Result, Tensor,
    TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv1d {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        spec: ConvSpec,
    },
    Conv2d {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        spec: ConvSpec,
    },
    Gap {
        x: VarId,
    },
    Affine {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    Activation {
        x: VarId,
        kind: Activation,
    },
    Reshape {
        x: VarId,
    },
    Transpose {
        x: VarId,
    },
    Add {
        a: VarId,
        b: VarId,
    },
    Sub {
        a: VarId,
        b: VarId,
    },
    /// x `[N, C, ..spatial..]` scaled channel-wise by a gate: `[N, C]` when
    /// `per_instance`, `[C]` shared across the batch otherwise.
    ScaleChannels {
        x: VarId,
        gate: VarId,
        per_instance: bool,
    },
    SumAll {
        x: VarId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recording of a pure tensor computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value)
    }

    pub fn conv1d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        spec: ConvSpec,
    ) -> Result<VarId> {
        let y = conv1d_batched(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        Ok(self.push(Op::Conv1d { x, w, b, spec }, y))
    }

    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        spec: ConvSpec,
    ) -> Result<VarId> {
        let y = conv2d_batched(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        Ok(self.push(Op::Conv2d { x, w, b, spec }, y))
    }

    pub fn gap(&mut self, x: VarId) -> Result<VarId> {
        let y = gap_batched(self.value(x))?;
        Ok(self.push(Op::Gap { x }, y))
    }

    pub fn affine(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let y = affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Affine { x, w, b }, y))
    }

    pub fn activation(&mut self, x: VarId, kind: Activation) -> VarId {
        let y = activation(self.value(x), kind);
        self.push(Op::Activation { x, kind }, y)
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape { x }, y))
    }

    pub fn transpose(&mut self, x: VarId) -> Result<VarId> {
        let y = transpose2d(self.value(x))?;
        Ok(self.push(Op::Transpose { x }, y))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::RankMismatch {
                context: "add operands",
                expected: ta.shape().len(),
                shape: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&u, &v)| u + v)
            .collect();
        let y = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add { a, b }, y))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::RankMismatch {
                context: "sub operands",
                expected: ta.shape().len(),
                shape: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&u, &v)| u - v)
            .collect();
        let y = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Sub { a, b }, y))
    }

    pub fn scale_channels(&mut self, x: VarId, gate: VarId, per_instance: bool) -> Result<VarId> {
        let xt = self.value(x);
        let gt = self.value(gate);
        let (n, c, sp) = split_ncs(xt)?;
        if per_instance {
            gt.expect_rank(2, "channel gate")?;
            gt.expect_axis(0, n, "channel gate")?;
            gt.expect_axis(1, c, "channel gate")?;
        } else {
            gt.expect_rank(1, "channel gate")?;
            gt.expect_axis(0, c, "channel gate")?;
        }
        let mut out = vec![0.0; xt.len()];
        for i in 0..n {
            for ch in 0..c {
                let g = if per_instance {
                    gt.data()[i * c + ch]
                } else {
                    gt.data()[ch]
                };
                let base = (i * c + ch) * sp;
                for p in 0..sp {
                    out[base + p] = xt.data()[base + p] * g;
                }
            }
        }
        let y = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(
            Op::ScaleChannels {
                x,
                gate,
                per_instance,
            },
            y,
        ))
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let mut acc = 0.0;
        for &v in self.value(x).data() {
            acc += v;
        }
        self.push(Op::SumAll { x }, Tensor::scalar(acc))
    }

    /// Reverse pass from a scalar root; returns one optional cotangent per
    /// tape node (None where the node does not influence the root).
    pub fn backward(&self, root: VarId) -> Result<Vec<Option<Tensor>>> {
        if self.value(root).len() != 1 {
            return Err(TensorError::RankMismatch {
                context: "backward root must be scalar",
                expected: 0,
                shape: self.value(root).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);

        for i in (0..=root.0).rev() {
            let go = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(go);
                    continue;
                }
                Op::Conv1d { x, w, b, spec } => {
                    let (gx, gw, gb) = conv1d_vjp(self.value(*x), self.value(*w), spec, &go)?;
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *w, gw)?;
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Conv2d { x, w, b, spec } => {
                    let (gx, gw, gb) = conv2d_vjp(self.value(*x), self.value(*w), spec, &go)?;
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *w, gw)?;
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Gap { x } => {
                    let gx = gap_vjp(self.value(*x), &go)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Affine { x, w, b } => {
                    let (gx, gw, gb) = affine_vjp(self.value(*x), self.value(*w), &go)?;
                    accumulate(&mut grads, *x, gx)?;
                    accumulate(&mut grads, *w, gw)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Activation { x, kind } => {
                    let gx = activation_vjp(self.value(*x), &self.nodes[i].value, *kind, &go);
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Reshape { x } => {
                    let gx = go.reshape(self.value(*x).shape().to_vec())?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Transpose { x } => {
                    let gx = transpose2d(&go)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, go.clone())?;
                    accumulate(&mut grads, *b, go)?;
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, go.clone())?;
                    let neg =
                        Tensor::new(go.shape().to_vec(), go.data().iter().map(|v| -v).collect())?;
                    accumulate(&mut grads, *b, neg)?;
                }
                Op::ScaleChannels {
                    x,
                    gate,
                    per_instance,
                } => {
                    let xt = self.value(*x);
                    let gt = self.value(*gate);
                    let (n, c, sp) = split_ncs(xt)?;
                    let mut gx = vec![0.0; xt.len()];
                    let mut gg = vec![0.0; gt.len()];
                    for bi in 0..n {
                        for ch in 0..c {
                            let gi = if *per_instance { bi * c + ch } else { ch };
                            let g = gt.data()[gi];
                            let base = (bi * c + ch) * sp;
                            for p in 0..sp {
                                gx[base + p] = go.data()[base + p] * g;
                                gg[gi] += go.data()[base + p] * xt.data()[base + p];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xt.shape().to_vec(), gx)?)?;
                    accumulate(&mut grads, *gate, Tensor::new(gt.shape().to_vec(), gg)?)?;
                }
                Op::SumAll { x } => {
                    let g = go.data()[0];
                    let xt = self.value(*x);
                    let gx = Tensor::filled(xt.shape().to_vec(), g);
                    accumulate(&mut grads, *x, gx)?;
                }
            }
        }
        Ok(grads)
    }

    /// Gradient of a scalar root with respect to one node.
    pub fn grad(&self, root: VarId, wrt: VarId) -> Result<Tensor> {
        let grads = self.backward(root)?;
        Ok(grads[wrt.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value(wrt).shape().to_vec())))
    }
}

fn split_ncs(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 2 {
        return Err(TensorError::RankMismatch {
            context: "channel-scaled tensor",
            expected: 2,
            shape: x.shape().to_vec(),
        });
    }
    let n = x.shape()[0];
    let c = x.shape()[1];
    let sp: usize = x.shape()[2..].iter().product();
    Ok((n, c, sp.max(1)))
}

fn accumulate(grads: &mut [Option<Tensor>], id: VarId, g: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
    Ok(())
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compare an analytic gradient against central differences of `f` at `x`.
/// Relative error uses an absolute floor of 1e-8 in the denominator.
pub fn finite_diff_check<F>(
    f: F,
    analytic: &Tensor,
    x: &Tensor,
    eps: f64,
    tol: f64,
) -> Result<CheckReport>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(TensorError::DegenerateStep { eps });
    }
    let mut probe = x.clone();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let an = analytic.data()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(CheckReport {
        max_rel_err: max_rel,
        tol,
        pass: max_rel <= tol,
    })
}

/// Build a scalar-valued tape function of `x`, take its tape gradient, and
/// verify it against central differences.
pub fn gradcheck<B>(build: B, x: &Tensor, eps: f64, tol: f64) -> Result<CheckReport>
where
    B: Fn(&mut Tape, VarId) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let out = build(&mut tape, xid)?;
    let root = if tape.value(out).len() == 1 {
        out
    } else {
        tape.sum_all(out)
    };
    let analytic = tape.grad(root, xid)?;
    finite_diff_check(
        |probe| {
            let mut t = Tape::new();
            let id = t.leaf(probe.clone());
            let out = build(&mut t, id)?;
            let root = if t.value(out).len() == 1 {
                out
            } else {
                t.sum_all(out)
            };
            Ok(t.value(root).data()[0])
        },
        &analytic,
        x,
        eps,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        // f = sum(x*x) via scale_channels with x as its own gate over [1,2] view
        let xv = tape.reshape(xid, vec![1, 2]).unwrap();
        let g = tape.reshape(xid, vec![1, 2]).unwrap();
        let sq = tape.scale_channels(xv, g, true).unwrap();
        let root = tape.sum_all(sq);
        let grad = tape.grad(root, xid).unwrap();
        assert!((grad.data()[0] - 2.0).abs() < 1e-12);
        assert!((grad.data()[1] - 4.0).abs() < 1e-12);

        let rep = finite_diff_check(
            |p| {
                Ok(p.data().iter().map(|v| v * v).sum())
            },
            &grad,
            &x,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(rep.pass, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn degenerate_eps_is_error() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!(matches!(
            finite_diff_check(|p| Ok(p.data()[0]), &g, &x, 0.0, 1e-6),
            Err(TensorError::DegenerateStep { .. })
        ));
    }

    #[test]
    fn affine_identity_cotangent() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap());
        let w = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.leaf(Tensor::zeros(vec![2]));
        let y = tape.affine(x, w, b).unwrap();
        let root = tape.sum_all(y);
        let gx = tape.grad(root, x).unwrap();
        // upstream of sum is all-ones; identity W passes it through
        assert_eq!(gx.data(), &[1.0, 1.0]);
    }

    #[test]
    fn relu_blocks_negative_cotangent() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.5, 2.0]).unwrap());
        let y = tape.relu(x);
        let root = tape.sum_all(y);
        let gx = tape.grad(root, x).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn conv1d_gradcheck() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::new(
            vec![1, 2, 8],
            (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let spec = ConvSpec {
            kernel: 3,
            stride: 1,
            padding: 1,
            in_channels: 2,
            out_channels: 2,
            grouped: false,
            bias: true,
        };
        let w = Tensor::new(
            vec![2, 2, 3],
            (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let b = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let rep = gradcheck(
            |t, xid| {
                let wid = t.leaf(w.clone());
                let bid = t.leaf(b.clone());
                t.conv1d(xid, wid, Some(bid), spec)
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(rep.pass, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn conv2d_and_gap_gradcheck() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::new(
            vec![1, 2, 3, 3],
            (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let spec = ConvSpec {
            kernel: 3,
            stride: 1,
            padding: 1,
            in_channels: 2,
            out_channels: 2,
            grouped: true,
            bias: false,
        };
        let w = Tensor::new(
            vec![2, 1, 3, 3],
            (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let rep = gradcheck(
            |t, xid| {
                let wid = t.leaf(w.clone());
                let y = t.conv2d(xid, wid, None, spec)?;
                t.gap(y)
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(rep.pass, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn transpose_gradient_round_trips() {
        let x = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let rep = gradcheck(
            |t, xid| {
                let tr = t.transpose(xid)?;
                let s = t.sigmoid(tr);
                t.transpose(s)
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(rep.pass);
    }
}
