//! Layer plans. A plan fixes every shape from the config alone, so the same
//! description initializes parameters, runs the forward pass and counts MACs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::network::params::{Bound, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { channels: usize, side: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Map { channels, side } => channels * side * side,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    He { fan_in: usize, gain: f32 },
    Zeros,
    Const(f32),
}

pub(crate) const PRELU_INIT: f32 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    /// k×k convolution, bias, PReLU.
    Conv { name: String, cin: usize, cout: usize, k: usize, stride: usize, pad: usize },
    /// Depthwise 3×3 then pointwise 1×1, added to a pooled / zero-padded skip, then PReLU.
    Block { name: String, cin: usize, cout: usize, stride: usize },
    Flatten,
    /// Fully connected; `act` adds a PReLU. `gain` scales the He init.
    Dense { name: String, fin: usize, fout: usize, act: bool, gain: f32 },
}

fn out_side(side: usize, k: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - k) / stride + 1
}

impl Layer {
    fn params(&self) -> Vec<(String, Vec<usize>, Init)> {
        match self {
            Layer::Conv { name, cin, cout, k, .. } => vec![
                (format!("{name}.w"), vec![*cout, *cin, *k, *k], Init::He { fan_in: cin * k * k, gain: 1.0 }),
                (format!("{name}.b"), vec![*cout], Init::Zeros),
                (format!("{name}.a"), vec![*cout], Init::Const(PRELU_INIT)),
            ],
            Layer::Block { name, cin, cout, .. } => vec![
                (format!("{name}.dw.w"), vec![*cin, 1, 3, 3], Init::He { fan_in: 9, gain: 1.0 }),
                (format!("{name}.dw.b"), vec![*cin], Init::Zeros),
                (format!("{name}.pw.w"), vec![*cout, *cin, 1, 1], Init::He { fan_in: *cin, gain: 1.0 }),
                (format!("{name}.pw.b"), vec![*cout], Init::Zeros),
                (format!("{name}.a"), vec![*cout], Init::Const(PRELU_INIT)),
            ],
            Layer::Flatten => Vec::new(),
            Layer::Dense { name, fin, fout, act, gain } => {
                let mut v = vec![
                    (format!("{name}.w"), vec![*fout, *fin], Init::He { fan_in: *fin, gain: *gain }),
                    (format!("{name}.b"), vec![*fout], Init::Zeros),
                ];
                if *act {
                    v.push((format!("{name}.a"), vec![*fout], Init::Const(PRELU_INIT)));
                }
                v
            }
        }
    }

    fn output(&self, input: Shape) -> Result<Shape> {
        let bad = || Error::Config(format!("layer {self:?} cannot take input {input:?}"));
        Ok(match (self, input) {
            (Layer::Conv { cin, cout, k, stride, pad, .. }, Shape::Map { channels, side })
                if channels == *cin && side + 2 * pad >= *k =>
            {
                Shape::Map { channels: *cout, side: out_side(side, *k, *stride, *pad) }
            }
            (Layer::Block { cin, cout, stride, .. }, Shape::Map { channels, side })
                if channels == *cin && cout >= cin && (*stride == 1 || (*stride == 2 && side % 2 == 0)) =>
            {
                Shape::Map { channels: *cout, side: side / stride }
            }
            (Layer::Flatten, s) => Shape::Flat(s.numel()),
            (Layer::Dense { fin, fout, .. }, Shape::Flat(n)) if n == *fin => Shape::Flat(*fout),
            _ => return Err(bad()),
        })
    }

    /// Static multiply-accumulates for one sample: convolutions count
    /// `out_elems · k² · C_in` (depthwise: `· 1`), dense layers `in · out`.
    fn macs(&self, input: Shape) -> Result<u64> {
        let out = self.output(input)?;
        Ok(match (self, out) {
            (Layer::Conv { cin, k, .. }, o) => (o.numel() * k * k * cin) as u64,
            (Layer::Block { cin, .. }, Shape::Map { channels, side }) => {
                (cin * side * side * 9 + channels * side * side * cin) as u64
            }
            (Layer::Dense { fin, fout, .. }, _) => (fin * fout) as u64,
            _ => 0,
        })
    }

    fn forward(&self, g: &mut Graph<f32>, b: &Bound, x: NodeId) -> Result<NodeId> {
        match self {
            Layer::Conv { name, stride, pad, .. } => {
                let y = g.conv2d(x, b.id(&format!("{name}.w"))?, Some(b.id(&format!("{name}.b"))?), *stride, *pad)?;
                g.prelu(y, b.id(&format!("{name}.a"))?)
            }
            Layer::Block { name, cin, cout, stride } => {
                let y = g.depthwise_conv2d(
                    x,
                    b.id(&format!("{name}.dw.w"))?,
                    Some(b.id(&format!("{name}.dw.b"))?),
                    *stride,
                    1,
                )?;
                let y = g.conv2d(y, b.id(&format!("{name}.pw.w"))?, Some(b.id(&format!("{name}.pw.b"))?), 1, 0)?;
                let mut skip = if *stride == 2 { g.avg_pool2(x)? } else { x };
                if cout > cin {
                    let s = g.value(skip).shape().to_vec();
                    let zeros = g.constant(Tensor::zeros(&[s[0], cout - cin, s[2], s[3]]))?;
                    skip = g.concat(&[skip, zeros], 1)?;
                }
                let sum = g.add(y, skip)?;
                g.prelu(sum, b.id(&format!("{name}.a"))?)
            }
            Layer::Flatten => {
                let s = g.value(x).shape().to_vec();
                let n = s[0];
                let rest: usize = s[1..].iter().product();
                g.reshape(x, &[n, rest])
            }
            Layer::Dense { name, act, .. } => {
                let y = g.dense(x, b.id(&format!("{name}.w"))?, Some(b.id(&format!("{name}.b"))?))?;
                if *act {
                    g.prelu(y, b.id(&format!("{name}.a"))?)
                } else {
                    Ok(y)
                }
            }
        }
    }
}

/// A chain of layers with a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Stack {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(input: Shape) -> Self {
        Stack { input, layers: Vec::new() }
    }

    pub fn output(&self) -> Result<Shape> {
        self.layers.iter().try_fold(self.input, |s, l| l.output(s))
    }

    pub fn push(&mut self, layer: Layer) -> Result<()> {
        let s = self.output()?;
        layer.output(s)?;
        self.layers.push(layer);
        Ok(())
    }

    pub fn side(&self) -> usize {
        match self.output() {
            Ok(Shape::Map { side, .. }) => side,
            _ => 0,
        }
    }

    pub fn channels(&self) -> usize {
        match self.output() {
            Ok(Shape::Map { channels, .. }) => channels,
            Ok(Shape::Flat(n)) => n,
            Err(_) => 0,
        }
    }

    pub fn macs(&self) -> Result<u64> {
        let mut s = self.input;
        let mut total = 0;
        for l in &self.layers {
            total += l.macs(s)?;
            s = l.output(s)?;
        }
        Ok(total)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        for l in &self.layers {
            for (name, shape, init) in l.params() {
                let t = match init {
                    Init::He { fan_in, gain } => {
                        let mut t = Tensor::he_normal(&shape, fan_in, rng);
                        t.data_mut().iter_mut().for_each(|v| *v *= gain);
                        t
                    }
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Const(c) => Tensor::full(&shape, c),
                };
                store.insert(name, t);
            }
        }
    }

    pub fn forward(&self, g: &mut Graph<f32>, b: &Bound, x: NodeId) -> Result<NodeId> {
        self.layers.iter().try_fold(x, |x, l| l.forward(g, b, x))
    }
}

/// Stride-2 blocks from the current side down to `target`.
pub(crate) fn downsample_to(stack: &mut Stack, prefix: &str, target: usize, channels: usize) -> Result<()> {
    let mut i = 0;
    while stack.side() > target {
        let cin = stack.channels();
        stack.push(Layer::Block { name: format!("{prefix}.down{i}"), cin, cout: channels.max(cin), stride: 2 })?;
        i += 1;
    }
    if stack.side() != target {
        return Err(Error::Config(format!("{prefix}: cannot pool to side {target}")));
    }
    Ok(())
}

/// Valid k×k convolution to 1×1, flatten, dense to `outputs`.
pub(crate) fn collapse(stack: &mut Stack, prefix: &str, channels: usize, outputs: usize, gain: f32) -> Result<()> {
    let (cin, side) = (stack.channels(), stack.side());
    stack.push(Layer::Conv { name: format!("{prefix}.collapse"), cin, cout: channels, k: side, stride: 1, pad: 0 })?;
    stack.push(Layer::Flatten)?;
    stack.push(Layer::Dense { name: format!("{prefix}.out"), fin: channels, fout: outputs, act: false, gain })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_macs() {
        let mut s = Stack::new(Shape::Map { channels: 1, side: 8 });
        s.push(Layer::Conv { name: "c".into(), cin: 1, cout: 1, k: 3, stride: 1, pad: 1 }).unwrap();
        assert_eq!(s.macs().unwrap(), 576);
    }

    #[test]
    fn static_macs_match_executed() {
        let mut s = Stack::new(Shape::Map { channels: 3, side: 16 });
        s.push(Layer::Conv { name: "stem".into(), cin: 3, cout: 8, k: 3, stride: 2, pad: 1 }).unwrap();
        downsample_to(&mut s, "h", 2, 12).unwrap();
        collapse(&mut s, "h", 16, 10, 1.0).unwrap();
        let mut store = ParamStore::new();
        s.init(&mut store, &mut Rng::new(3));
        let mut g = Graph::new();
        let b = store.bind(&mut g, |_| false).unwrap();
        let x = g.constant(Tensor::full(&[1, 3, 16, 16], 0.5)).unwrap();
        let y = s.forward(&mut g, &b, x).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 10]);
        assert_eq!(g.macs(), s.macs().unwrap());
    }

    #[test]
    fn shape_errors() {
        let mut s = Stack::new(Shape::Map { channels: 3, side: 5 });
        assert!(s.push(Layer::Block { name: "b".into(), cin: 3, cout: 4, stride: 2 }).is_err());
        assert!(s.push(Layer::Dense { name: "d".into(), fin: 3, fout: 4, act: false, gain: 1.0 }).is_err());
    }
}
