//! Compares the double-backward pixel gradient of the matching loss with
//! central finite differences on a small MLP.

use ddm::datahub::{make_blobs, LabeledBatch};
use ddm::diffcore::{finite_diff, grad_params, grad_synthetic, matching_value, DistanceKind, GradDistance, LossKind, Tensor};
use ddm::nets::{Activation, Architecture, InitScheme, Model, ModelSpec};

fn main() -> ddm::Result<()> {
    let data = make_blobs(3, 10, 6, 3.0, 7)?;
    let model = Model::new(ModelSpec {
        architecture: Architecture::Mlp { hidden: vec![12] },
        activation: Activation::Tanh,
        num_classes: 3,
        input_shape: vec![6],
        init: InitScheme::Kaiming,
        seed: 7,
    })?;
    let theta = model.init();
    let real = data.batch(&(0..10).collect::<Vec<_>>());
    let target = grad_params(&model, &theta, &real, LossKind::CrossEntropy)?;
    let synth = data.batch(&[0, 10, 20]);

    for kind in [DistanceKind::LayerwiseCosine, DistanceKind::Mse] {
        let dist = GradDistance::new(kind, model.layout().clone());
        let analytic = grad_synthetic(&model, &theta, &synth, &target, &dist)?;
        let numeric = finite_diff(
            |x| {
                let b = LabeledBatch::new(Tensor::new(synth.inputs.shape().to_vec(), x.to_vec()).unwrap(), synth.labels.clone())
                    .unwrap();
                matching_value(&model, &theta, &b, &target, &dist).unwrap()
            },
            synth.inputs.data(),
            1e-5,
        );
        let num: f64 = analytic.grad.data().iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = numeric.iter().map(|b| b * b).sum();
        println!(
            "{kind:?}: loss {:.6}, {} params, relative error {:.2e}",
            analytic.value,
            model.num_params(),
            (num / den).sqrt()
        );
    }
    Ok(())
}
