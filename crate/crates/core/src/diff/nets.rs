//! Fully connected networks expressed as program fragments.

use alloc::vec::Vec;

use rand_core::RngCore;

use super::program::{Activation, LayerId, Node, ParamLayout, ParameterVector, ProgramBuilder};
use crate::rng::uniform01;

/// Nodes created for one MLP inside a program.
#[derive(Clone, Debug)]
pub struct MlpNodes {
    pub input: Node,
    pub output: Node,
    pub layers: Vec<LayerId>,
    /// Pre-activation node of every layer, in order.
    pub pre_activations: Vec<Node>,
    pub activations: Vec<Activation>,
}

/// Appends `sizes[0] -> sizes[1] -> ... -> sizes[last]` dense layers with
/// `hidden` between layers and `output` after the last one.
pub fn mlp(
    b: &mut ProgramBuilder,
    input: Node,
    sizes: &[usize],
    hidden: Activation,
    output: Activation,
) -> MlpNodes {
    assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
    let mut x = input;
    let mut layers = Vec::new();
    let mut pre_activations = Vec::new();
    let mut activations = Vec::new();
    for (i, w) in sizes.windows(2).enumerate() {
        let layer = b.layer(w[0], w[1], true);
        let pre = b.affine(x, layer);
        let act = if i + 2 == sizes.len() { output } else { hidden };
        x = b.activate(pre, act);
        layers.push(layer);
        pre_activations.push(pre);
        activations.push(act);
    }
    MlpNodes {
        input,
        output: x,
        layers,
        pre_activations,
        activations,
    }
}

/// Forward-mode tangent of an MLP's output along `direction` (a node with the
/// same shape as the MLP input). Reuses the MLP's pre-activations, so the
/// result is the exact directional derivative and stays differentiable in
/// the parameters.
pub fn tangent(b: &mut ProgramBuilder, net: &MlpNodes, direction: Node) -> Node {
    let mut t = direction;
    for ((layer, pre), act) in net
        .layers
        .iter()
        .zip(&net.pre_activations)
        .zip(&net.activations)
    {
        t = b.affine_tangent(t, *layer);
        if *act != Activation::Identity {
            let slope = b.activate_derivative(*pre, *act);
            t = b.mul(t, slope);
        }
    }
    t
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization of every layer.
pub fn init_uniform<R: RngCore>(layout: &ParamLayout, rng: &mut R) -> ParameterVector {
    let mut p = ParameterVector::zeros(layout.len());
    for shape in &layout.layers {
        let bound = 1.0 / libm::sqrt(shape.in_dim.max(1) as f64);
        let range = shape.offset..shape.offset + shape.param_count();
        for v in &mut p.as_mut_slice()[range] {
            *v = (2.0 * uniform01(rng) - 1.0) * bound;
        }
    }
    p
}
