//! Multilayer perceptron parameters stored as one flat vector.
//!
//! Layout per layer: the `[fan_in, fan_out]` weight matrix in row-major order
//! followed by the `fan_out` bias. Hidden layers use ReLU; the last layer
//! emits logits.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{GradTape, Var};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    sizes: Vec<usize>,
    values: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelParams {
    /// All-zero parameters for layer widths `sizes = [input, hidden.., classes]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Input(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), values: vec![0.0; param_count(sizes)] })
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(sizes)?;
        for (l, &fan_in) in sizes[..model.layer_count()].iter().enumerate() {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let (w, _) = model.layer_range(l);
            for v in &mut model.values[w] {
                *v = normal.sample(rng);
            }
        }
        Ok(model)
    }

    pub fn from_flat(sizes: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(sizes)?;
        if values.len() != model.values.len() {
            return Err(Error::Input(format!(
                "architecture {sizes:?} has {} parameters, got {}",
                model.values.len(),
                values.len()
            )));
        }
        model.values = values;
        Ok(model)
    }

    /// Same architecture, new parameter values.
    pub fn unflatten(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_flat(&self.sizes, values)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total scalar parameter count.
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// Index ranges of the weight and bias of `layer`.
    pub fn layer_range(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start = self.layer_offset(layer);
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w_end = start + fan_in * fan_out;
        (start..w_end, w_end..w_end + fan_out)
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.values[self.layer_range(layer).0]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.values[self.layer_range(layer).1]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layer_range(layer).0;
        &mut self.values[r]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layer_range(layer).1;
        &mut self.values[r]
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.cols() != self.input_dim() {
            return Err(Error::Shape {
                layer: 0,
                detail: format!("batch shape {:?} does not match input width {}", batch.shape(), self.input_dim()),
            });
        }
        Ok(())
    }

    /// Records the forward pass on `tape` and returns the logits node.
    pub fn forward(&self, tape: &mut GradTape, batch: &Tensor) -> Result<Var> {
        self.check_batch(batch)?;
        let mut h = tape.leaf(batch.clone());
        let mut params = Vec::with_capacity(self.layer_count());
        for l in 0..self.layer_count() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = tape.leaf(Tensor::new(vec![fan_in, fan_out], self.weight(l).to_vec())?);
            let b = tape.leaf(Tensor::new(vec![fan_out], self.bias(l).to_vec())?);
            params.push((w, b));
            let z = tape.matmul(h, w).map_err(|e| Error::Shape { layer: l, detail: e.to_string() })?;
            h = tape.add_bias(z, b)?;
            if l + 1 < self.layer_count() {
                h = tape.relu(h)?;
            }
        }
        tape.register_params(params);
        Ok(h)
    }

    /// Tape-free forward pass, identical arithmetic to [`ModelParams::forward`].
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let n = batch.rows();
        let mut h = batch.data().to_vec();
        for l in 0..self.layer_count() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = tensor::matmul(&h, self.weight(l), n, fan_in, fan_out);
            let bias = self.bias(l);
            let last = l + 1 == self.layer_count();
            for row in z.chunks_mut(fan_out) {
                for (o, b) in row.iter_mut().zip(bias) {
                    *o += b;
                    if !last {
                        *o = o.max(0.0);
                    }
                }
            }
            h = z;
        }
        Tensor::new(vec![n, self.num_classes()], h)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Mean cross-entropy of `model` on a labelled batch, without a tape.
pub fn mean_loss(model: &ModelParams, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let logits = model.logits(batch)?;
    if labels.len() != logits.rows() || labels.is_empty() {
        return Err(Error::Input(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    let k = logits.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Input(format!("label {y} out of range for {k} classes")));
        }
        let row = logits.row(i);
        total += crate::tape::log_sum_exp(row) - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(model: &ModelParams, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Input("accuracy of an empty set".into()));
    }
    let preds = model.predict(batch)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean cross-entropy and its gradient over the whole batch.
pub fn loss_and_gradient(model: &ModelParams, batch: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if labels.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let mut tape = GradTape::new();
    let logits = model.forward(&mut tape, batch)?;
    let loss = tape.cross_entropy(logits, labels)?;
    let grad = tape.param_gradient(loss)?;
    Ok((tape.value(loss).data()[0], grad))
}

/// One gradient per example, each obtained by replaying the tape on that row alone.
pub fn per_sample_gradients(model: &ModelParams, batch: &Tensor, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    if batch.rows() == 0 || labels.is_empty() {
        return Err(Error::Input("per-sample gradients of an empty batch".into()));
    }
    if labels.len() != batch.rows() {
        return Err(Error::Input(format!("{} labels for {} rows", labels.len(), batch.rows())));
    }
    (0..batch.rows())
        .map(|i| {
            let row = batch.select_rows(&[i]);
            loss_and_gradient(model, &row, &labels[i..=i]).map(|(_, g)| g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_affine_passes_input_through() {
        let mut m = ModelParams::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            m.weight_mut(0)[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        let mut tape = GradTape::new();
        let out = m.forward(&mut tape, &x).unwrap();
        assert_eq!(tape.value(out).data(), x.data());
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = ModelParams::zeros(&[4, 5, 3]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0; 4]]).unwrap();
        assert!(m.logits(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_names_the_layer() {
        let m = ModelParams::zeros(&[4, 2]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut tape = GradTape::new();
        match m.forward(&mut tape, &x) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn flatten_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = ModelParams::init(&[5, 7, 3], &mut rng).unwrap();
        assert_eq!(m.dim(), 5 * 7 + 7 + 7 * 3 + 3);
        let back = m.unflatten(m.flatten()).unwrap();
        assert_eq!(back, m);
        assert!(m.unflatten(vec![0.0; 3]).is_err());
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let m = ModelParams::zeros(&[2, 6]).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, 0.1], vec![1.0, -1.0]]).unwrap();
        let loss = mean_loss(&m, &x, &[0, 5]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = ModelParams::zeros(&[2, 2]).unwrap();
        let x = Tensor::zeros(vec![0, 2]);
        assert!(matches!(per_sample_gradients(&m, &x, &[]), Err(Error::Input(_))));
    }
}
