//! Eager computation graph with reverse-mode differentiation.
//!
//! Every op runs immediately when it is applied and, if any input needs a
//! gradient, the node keeps what backward needs (inputs are read back from
//! their own nodes). Node ids are handed out in creation order, so the node
//! list is already topologically sorted.

mod kernels;

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive op kinds and their attributes.
///
/// Shape rules (`N` = batch):
/// - `Conv2d`: x `[N,Ci,H,W]`, w `[Co,Ci,Kh,Kw]`, optional b `[Co]` -> `[N,Co,Ho,Wo]`,
///   `Ho = (H + 2·pad - Kh) / stride + 1`.
/// - `DepthwiseConv2d`: x `[N,C,H,W]`, w `[C,1,Kh,Kw]`, optional b `[C]` -> `[N,C,Ho,Wo]`.
/// - `Prelu`: x `[N,C,..]`, slope `[C]` -> same as x.
/// - `AvgPool2`: x `[N,C,H,W]` with even H, W -> `[N,C,H/2,W/2]`.
/// - `Dense`: x `[N,In]`, w `[Out,In]`, optional b `[Out]` -> `[N,Out]`.
/// - `Add`, `Sub`, `Mul`, `Mse`: operands of identical shape (`Mse` -> `[1]`).
/// - `Scale`, `Sigmoid`: any shape. `Sum`, `Mean` -> `[1]`.
/// - `Reshape`: same element count. `Concat`: equal shapes except along `axis`.
/// - `AffineGrid`: theta `[N,2,3]` -> grid `[N,out_h,out_w,2]`.
/// - `BilinearSample`: features `[N,C,H,W]`, grid `[N,h,w,2]` -> `[N,C,h,w]`.
/// - `ResampleChain`: points `[N,P,3]` -> `[N,k,2]` (x, y of the chain `ids`).
/// - `RegionTheta`: points `[N,P,3]` -> theta `[N,2,3]` for the region `ids`.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Conv2d { stride: usize, pad: usize },
    DepthwiseConv2d { stride: usize, pad: usize },
    Prelu,
    AvgPool2,
    Dense,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Sum,
    Mean,
    Sigmoid,
    Reshape(Vec<usize>),
    Concat { axis: usize },
    AffineGrid { out_h: usize, out_w: usize },
    BilinearSample,
    Mse,
    ResampleChain { ids: Vec<usize>, k: usize, closed: bool },
    RegionTheta { ids: Vec<usize>, left: usize, right: usize, margin: f64 },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::DepthwiseConv2d { .. } => "depthwise_conv2d",
            Primitive::Prelu => "prelu",
            Primitive::AvgPool2 => "avg_pool2",
            Primitive::Dense => "dense",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Reshape(_) => "reshape",
            Primitive::Concat { .. } => "concat",
            Primitive::AffineGrid { .. } => "affine_grid",
            Primitive::BilinearSample => "bilinear_sample",
            Primitive::Mse => "mse",
            Primitive::ResampleChain { .. } => "resample_chain",
            Primitive::RegionTheta { .. } => "region_theta",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Option<Primitive>,
    inputs: Vec<NodeId>,
    needs_grad: bool,
}

pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
    macs: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false, macs: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; its `requires_grad` flag decides whether backward fills it.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        if !tensor.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let needs_grad = tensor.requires_grad();
        Ok(self.push(Node { value: tensor, op: None, inputs: Vec::new(), needs_grad }))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn variable(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        self.leaf(tensor.with_requires_grad(true))
    }

    fn push(&mut self, node: Node<T>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Invalid(format!("unknown node id {}", id.0)));
        }
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Multiply-accumulates executed by all forward ops so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Number of nodes produced by ops with the given name.
    pub fn count_op(&self, name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.as_ref().is_some_and(|p| p.name() == name)).count()
    }

    /// Runs a primitive on existing nodes and records it.
    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        for &id in inputs {
            self.check_id(id)?;
        }
        let values: Vec<&Tensor<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let (value, macs) = kernels::forward(&prim, &values)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: prim.name() });
        }
        self.macs += macs;
        let needs_grad = inputs.iter().any(|id| self.nodes[id.0].needs_grad);
        Ok(self.push(Node { value, op: Some(prim), inputs: inputs.to_vec(), needs_grad }))
    }

    /// Reverse pass from a scalar loss. Fills the gradient slot of every leaf
    /// that requires a gradient; unreachable leaves get zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check_id(loss)?;
        if self.backward_done {
            return Err(Error::Backward("graph already differentiated; call reset_grads first".to_string()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(prim) = node.op.as_ref() else { continue };
            let Some(gout) = grads[idx].take() else { continue };
            let need: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].needs_grad).collect();
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            let gins = kernels::backward(prim, &inputs, &node.value, &gout, &need)?;
            for (input, gin) in node.inputs.iter().zip(gins) {
                let Some(gin) = gin else { continue };
                if gin.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: prim.name() });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gin).for_each(|(a, g)| *a += *g),
                    slot @ None => *slot = Some(gin),
                }
            }
        }
        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if node.op.is_none() && node.value.requires_grad() {
                let g = grads[idx].take().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.value.set_grad(g);
            }
        }
        self.backward_done = true;
        Ok(())
    }

    /// Gradient of a leaf after `backward`.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes.get(id.0).and_then(|n| n.value.grad())
    }

    /// Leaf id to gradient, for every leaf that received one.
    pub fn gradients(&self) -> impl Iterator<Item = (NodeId, &[T])> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.value.grad().map(|g| (NodeId(i), g)))
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        self.backward_done = false;
    }

    // Convenience wrappers.

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.apply(Primitive::Conv2d { stride, pad }, &ins)
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.apply(Primitive::DepthwiseConv2d { stride, pad }, &ins)
    }

    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Prelu, &[x, slope])
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::AvgPool2, &[x])
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.apply(Primitive::Dense, &ins)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(Primitive::Scale(factor), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn affine_grid(&mut self, theta: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        self.apply(Primitive::AffineGrid { out_h, out_w }, &[theta])
    }

    pub fn bilinear_sample(&mut self, features: NodeId, grid: NodeId) -> Result<NodeId> {
        self.apply(Primitive::BilinearSample, &[features, grid])
    }

    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mse, &[pred, target])
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(node, w) in terms {
            let scaled = if w == 1.0 { node } else { self.scale(node, w)? };
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| Error::Invalid("weighted_sum of no terms".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.])).unwrap();
        let w = g.constant(t(&[1, 1, 1, 1], &[1.0])).unwrap();
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
    }

    #[test]
    fn avg_pool_of_2x2() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        let y = g.avg_pool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::<f32>::new();
        let x = g.variable(t(&[3], &[1., 2., 3.])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., 4., 6.]);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let x = g.variable(t(&[2], &[1., 2.])).unwrap();
        let c = g.variable(t(&[2], &[3., 4.])).unwrap();
        let loss = g.sum(c).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 0.]);
        assert_eq!(g.grad(c).unwrap(), &[1., 1.]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.variable(t(&[2], &[1., 2.])).unwrap();
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Backward(_))));
    }

    #[test]
    fn second_backward_requires_reset() {
        let mut g = Graph::<f32>::new();
        let x = g.variable(t(&[2], &[1., 2.])).unwrap();
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        assert!(g.backward(loss).is_err());
        g.reset_grads();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1., 1.]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut g = Graph::<f32>::new();
        assert!(g.constant(t(&[2], &[1.0, f32::NAN])).is_err());
        let x = g.constant(t(&[1], &[f32::MAX])).unwrap();
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        let err = g.add(a, b).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "add", .. }), "{err}");
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        let w = g.constant(Tensor::zeros(&[3, 5, 3, 3])).unwrap();
        let msg = alloc::format!("{}", g.conv2d(x, w, None, 1, 1).unwrap_err());
        assert!(msg.contains("conv2d") && msg.contains('5'), "{msg}");
        assert!(g.conv2d(x, w, None, 0, 1).is_err());
    }

    #[test]
    fn linearity_of_backward() {
        use crate::rng::Rng;
        let mut rng = Rng::new(5);
        let xv = Tensor::<f64>::uniform(&[6], 1.0, &mut rng);
        let grad_of = |build: &dyn Fn(&mut Graph<f64>, NodeId) -> NodeId| {
            let mut g = Graph::<f64>::new();
            let x = g.variable(xv.clone()).unwrap();
            let loss = build(&mut g, x);
            g.backward(loss).unwrap();
            g.grad(x).unwrap().to_vec()
        };
        let l1 = |g: &mut Graph<f64>, x: NodeId| {
            let s = g.sigmoid(x).unwrap();
            g.sum(s).unwrap()
        };
        let l2 = |g: &mut Graph<f64>, x: NodeId| {
            let sq = g.mul(x, x).unwrap();
            g.mean(sq).unwrap()
        };
        let (a, b) = (0.7, -1.3);
        let g1 = grad_of(&l1);
        let g2 = grad_of(&l2);
        let gc = grad_of(&|g, x| {
            let p = l1(g, x);
            let q = l2(g, x);
            g.weighted_sum(&[(p, a), (q, b)]).unwrap()
        });
        for i in 0..6 {
            assert!((gc[i] - (a * g1[i] + b * g2[i])).abs() < 1e-6);
        }
    }
}
