//! Backpropagation through the LSTM against central finite differences on
//! a tiny two-layer model.

use vgrid::nn::{backward, finite_difference_gradient, forward, init_params, max_relative_error, ModelConfig, Sample};

fn main() {
    let cfg = ModelConfig {
        vocab_size: 5,
        hidden_units: 3,
        num_layers: 2,
        sample_length: 4,
    };
    let params = init_params(cfg, 42).unwrap();
    let batch = vec![
        Sample {
            input: vec![0, 1, 2, 3],
            target: 4,
        },
        Sample {
            input: vec![4, 4, 1, 0],
            target: 2,
        },
    ];
    let pass = forward(&params, &batch).unwrap();
    let (analytic, loss_sum) = backward(&params, &batch, &pass).unwrap();
    let numeric = finite_difference_gradient(&params, &batch, 1e-5).unwrap();
    println!("{} parameters, summed loss {loss_sum:.6}", params.len());
    println!("max relative error {:.3e}", max_relative_error(&analytic, &numeric));
}
