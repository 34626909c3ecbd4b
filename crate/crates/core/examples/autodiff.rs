//! Records an MLP forward pass on the tape and compares the backward sweep
//! with a finite difference on one weight.

use dpadapter::model::{loss_and_gradient, mean_loss};
use dpadapter::{ModelParams, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dpadapter::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = ModelParams::init(&[3, 4, 2], &mut rng)?;
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.2, -0.3]])?;
    let y = [1, 0];

    let (loss, grad) = loss_and_gradient(&model, &x, &y)?;
    println!("loss {loss:.6}, {} parameters", grad.len());

    let h = 1e-6;
    let mut plus = model.flatten();
    plus[0] += h;
    let mut minus = model.flatten();
    minus[0] -= h;
    let fd = (mean_loss(&model.unflatten(plus)?, &x, &y)? - mean_loss(&model.unflatten(minus)?, &x, &y)?) / (2.0 * h);
    println!("d loss / d w[0]: tape {:.9}, finite difference {fd:.9}", grad[0]);
    Ok(())
}
