//! The six objectives, on adversary outputs and score maps already in a graph.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Mean over non-ignored pixels of `−log softmax(scores)[label]`.
pub fn pixelwise_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    scores: Var,
    labels: &Tensor<u8>,
    ignore: Option<u8>,
) -> Result<Var> {
    g.cross_entropy(scores, labels, ignore)
}

/// Feature adversary objective: `½·mean((A_f(target) − 1)²) + ½·mean(A_f(compensated)²)`.
pub fn loss_feature_adversary<T: Scalar>(g: &mut Graph<T>, on_target: Var, on_compensated: Var) -> Result<Var> {
    two_sided("loss_feature_adversary", g, on_target, on_compensated)
}

/// Compensator objective: `½·mean((A_f(compensated) − 1)²)`.
pub fn loss_compensator<T: Scalar>(g: &mut Graph<T>, on_compensated: Var) -> Var {
    g.least_squares(on_compensated, T::one())
}

/// Label adversary objective: `½·mean((A_l(one-hot) − 1)²) + ½·mean(A_l(probs)²)`.
pub fn loss_label_adversary<T: Scalar>(g: &mut Graph<T>, on_ground_truth: Var, on_predictions: Var) -> Result<Var> {
    two_sided("loss_label_adversary", g, on_ground_truth, on_predictions)
}

/// Parser objective against the label adversary: `½·mean((A_l(probs) − 1)²)`.
pub fn loss_parser_adversarial<T: Scalar>(g: &mut Graph<T>, on_predictions: Var) -> Var {
    g.least_squares(on_predictions, T::one())
}

fn two_sided<T: Scalar>(op: &'static str, g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    if g.dims(real) != g.dims(fake) {
        return Err(Error::Shape {
            op,
            msg: format!("adversary outputs {:?} and {:?} differ", g.dims(real), g.dims(fake)),
        });
    }
    let a = g.least_squares(real, T::one());
    let b = g.least_squares(fake, T::zero());
    g.add(a, b)
}
