//! Toy blend-shape head: crop-local region landmarks to expression
//! coefficients in (0, 1).

use alloc::string::String;
use alloc::vec::Vec;

use super::layers::{Layer, Shape, Stack};
use super::{AttentionMeshOutput, Bound, Model};
use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::topology::Topology;

pub const MOUTH_COEFFS: usize = 10;
pub const EYE_COEFFS: usize = 8;
const HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BlendArch {
    mouth: Stack,
    eye: Stack,
    pub mouth_inputs: usize,
    pub eye_inputs: usize,
}

fn mlp(prefix: &str, fin: usize, fout: usize) -> Result<Stack> {
    let mut s = Stack::new(Shape::Flat(fin));
    s.push(Layer::Dense { name: alloc::format!("{prefix}.hidden"), fin, fout: HIDDEN, act: true, gain: 1.0 })?;
    // zero output layer: every coefficient starts at sigmoid(0) = 0.5
    s.push(Layer::Dense { name: alloc::format!("{prefix}.out"), fin: HIDDEN, fout, act: false, gain: 0.0 })?;
    Ok(s)
}

impl BlendArch {
    pub(crate) fn new(topo: &Topology) -> Result<BlendArch> {
        let mouth_inputs = 3 * topo.regions[0].output_count;
        let eye_inputs = 3 * (topo.regions[1].output_count + topo.iris_count);
        Ok(BlendArch {
            mouth: mlp("blend.mouth", mouth_inputs, MOUTH_COEFFS)?,
            eye: mlp("blend.eye", eye_inputs, EYE_COEFFS)?,
            mouth_inputs,
            eye_inputs,
        })
    }

    pub(crate) fn stacks(&self) -> impl Iterator<Item = &Stack> {
        [&self.mouth, &self.eye].into_iter()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlendCoefficients {
    pub mouth: Vec<f32>,
    pub left_eye: Vec<f32>,
    pub right_eye: Vec<f32>,
}

/// Flattened head inputs: the lips, and each eye with its iris. The right
/// eye is mirrored (u negated) so both eyes share one head.
pub fn blend_inputs(region_local: &[LandmarkSet], iris_local: &[LandmarkSet]) -> Result<(Vec<f32>, [Vec<f32>; 2])> {
    if region_local.len() != 3 || iris_local.len() != 2 {
        return Err(Error::Invalid(String::from("blend inputs need 3 regions and 2 irises")));
    }
    let eye = |contour: &LandmarkSet, iris: &LandmarkSet, mirror: bool| -> Vec<f32> {
        contour
            .points
            .iter()
            .chain(&iris.points)
            .flat_map(|p| [if mirror { -p[0] } else { p[0] }, p[1], p[2]])
            .collect()
    };
    Ok((
        region_local[0].flat(),
        [eye(&region_local[1], &iris_local[0], false), eye(&region_local[2], &iris_local[1], true)],
    ))
}

impl Model {
    /// Sigmoid coefficients for batches of mouth `[N, mouth_inputs]` and eye `[N, eye_inputs]` features.
    pub fn blend_forward(&self, g: &mut Graph<f32>, b: &Bound, mouth: NodeId, eyes: NodeId) -> Result<(NodeId, NodeId)> {
        let m = self.blend.mouth.forward(g, b, mouth)?;
        let e = self.blend.eye.forward(g, b, eyes)?;
        Ok((g.sigmoid(m)?, g.sigmoid(e)?))
    }

    pub fn blendshape_head(&self, region_local: &[LandmarkSet], iris_local: &[LandmarkSet]) -> Result<BlendCoefficients> {
        let (mouth, [le, re]) = blend_inputs(region_local, iris_local)?;
        let arch = &self.blend;
        if mouth.len() != arch.mouth_inputs || le.len() != arch.eye_inputs {
            return Err(Error::Topology(String::from("blend inputs do not match the topology")));
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, |_| false)?;
        let m = g.constant(Tensor::new(&[1, mouth.len()], mouth)?)?;
        let mut eyes = le;
        eyes.extend(re);
        let e = g.constant(Tensor::new(&[2, arch.eye_inputs], eyes)?)?;
        let (mc, ec) = self.blend_forward(&mut g, &b, m, e)?;
        let ev = g.value(ec).data();
        Ok(BlendCoefficients {
            mouth: g.value(mc).data().to_vec(),
            left_eye: ev[..EYE_COEFFS].to_vec(),
            right_eye: ev[EYE_COEFFS..].to_vec(),
        })
    }

    pub fn blendshapes(&self, out: &AttentionMeshOutput) -> Result<BlendCoefficients> {
        self.blendshape_head(&out.region_local, &out.iris_local)
    }
}
