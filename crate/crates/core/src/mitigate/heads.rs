use super::MitigateError;
use crate::linalg::Matrix;
use crate::subgroup::softmax;

/// One or more linear softmax heads over a shared input. With several heads
/// the training output mixes the heads' probabilities by a per-sample
/// membership vector `g`; at test time all heads are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeads {
    /// Per head, d×L.
    pub weights: Vec<Matrix>,
    /// Per head, length L.
    pub biases: Vec<Vec<f64>>,
}

/// Loss `Σᵢ wᵢ·(−ln p_{yᵢ})` and its gradients.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub per_sample: Vec<f64>,
    pub grad_w: Vec<Matrix>,
    pub grad_b: Vec<Vec<f64>>,
}

pub(crate) struct Forward {
    /// Per sample, per head, class probabilities (flattened heads×L).
    probs: Vec<Vec<f64>>,
    /// Mixed probability of the true class.
    p_true: Vec<f64>,
    pub losses: Vec<f64>,
}

impl LinearHeads {
    pub fn zeros(heads: usize, d: usize, classes: usize) -> Self {
        Self { weights: vec![Matrix::zeros(d, classes); heads], biases: vec![vec![0.0; classes]; heads] }
    }

    pub fn num_heads(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn head_probs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.num_heads()).map(|h| softmax(&self.logits(h, x), 1.0)).collect()
    }

    fn logits(&self, h: usize, x: &[f64]) -> Vec<f64> {
        let mut z = self.biases[h].clone();
        let w = &self.weights[h];
        for (j, xj) in x.iter().enumerate() {
            for (zc, wc) in z.iter_mut().zip(w.row(j)) {
                *zc += xj * wc;
            }
        }
        z
    }

    /// `Σ gₕ pₕ` with a membership vector, or the plain head average without one.
    pub fn soft_di_forward(&self, x: &[f64], g: Option<&[f64]>) -> Result<Vec<f64>, MitigateError> {
        if x.len() != self.dim() {
            return Err(MitigateError::InvalidArgument(format!(
                "input has dimension {}, heads expect {}",
                x.len(),
                self.dim()
            )));
        }
        let k = self.num_heads();
        let uniform = vec![1.0 / k as f64; k];
        let g = match g {
            Some(g) => {
                if !on_simplex(g, k) {
                    return Err(MitigateError::InvalidSoftLabel { row: 0 });
                }
                g
            }
            None => &uniform,
        };
        let mut out = vec![0.0; self.num_classes()];
        for (p, gh) in self.head_probs(x).iter().zip(g) {
            for (o, pc) in out.iter_mut().zip(p) {
                *o += gh * pc;
            }
        }
        Ok(out)
    }

    /// Test-time prediction: argmax of the head average.
    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.soft_di_forward(x, None).expect("dimension checked by caller");
        crate::subgroup::argmax(&p)
    }

    pub(crate) fn forward(&self, x: &Matrix, y: &[usize], g: Option<&Matrix>) -> Forward {
        let k = self.num_heads();
        let l = self.num_classes();
        let mut probs = Vec::with_capacity(x.rows());
        let mut p_true = Vec::with_capacity(x.rows());
        let mut losses = Vec::with_capacity(x.rows());
        for (i, row) in x.iter_rows().enumerate() {
            let mut flat = Vec::with_capacity(k * l);
            for h in 0..k {
                flat.extend(softmax(&self.logits(h, row), 1.0));
            }
            let py: f64 = match g {
                Some(g) => (0..k).map(|h| g[(i, h)] * flat[h * l + y[i]]).sum(),
                None => flat[y[i]],
            };
            let py = py.max(f64::MIN_POSITIVE);
            losses.push(-py.ln());
            p_true.push(py);
            probs.push(flat);
        }
        Forward { probs, p_true, losses }
    }

    /// Gradient of `Σᵢ wᵢ ℓᵢ`. For mixed heads,
    /// `∂ℓ/∂z_{h,c} = −(gₕ/p_y)·p_{h,y}(δ_{cy} − p_{h,c})`.
    pub(crate) fn backward(
        &self,
        fwd: &Forward,
        x: &Matrix,
        y: &[usize],
        g: Option<&Matrix>,
        weights: &[f64],
    ) -> (Vec<Matrix>, Vec<Vec<f64>>) {
        let k = self.num_heads();
        let l = self.num_classes();
        let d = self.dim();
        let mut gw = vec![Matrix::zeros(d, l); k];
        let mut gb = vec![vec![0.0; l]; k];
        let mut dz = vec![0.0; l];
        for (i, row) in x.iter_rows().enumerate() {
            let wi = weights[i];
            if wi == 0.0 {
                continue;
            }
            for h in 0..k {
                let p = &fwd.probs[i][h * l..(h + 1) * l];
                let gh = match g {
                    Some(g) => g[(i, h)],
                    None => 1.0,
                };
                if gh == 0.0 {
                    continue;
                }
                let coef = -wi * gh * p[y[i]] / fwd.p_true[i];
                for c in 0..l {
                    let delta = if c == y[i] { 1.0 } else { 0.0 };
                    dz[c] = coef * (delta - p[c]);
                }
                for (j, xj) in row.iter().enumerate() {
                    if *xj == 0.0 {
                        continue;
                    }
                    for (gwc, dzc) in gw[h].row_mut(j).iter_mut().zip(&dz) {
                        *gwc += xj * dzc;
                    }
                }
                for (gbc, dzc) in gb[h].iter_mut().zip(&dz) {
                    *gbc += dzc;
                }
            }
        }
        (gw, gb)
    }

    pub fn loss_and_grad(&self, x: &Matrix, y: &[usize], g: Option<&Matrix>, weights: &[f64]) -> LossAndGrad {
        let fwd = self.forward(x, y, g);
        let (grad_w, grad_b) = self.backward(&fwd, x, y, g, weights);
        let loss = fwd.losses.iter().zip(weights).map(|(a, b)| a * b).sum();
        LossAndGrad { loss, per_sample: fwd.losses, grad_w, grad_b }
    }

    /// All parameters flattened (weights then biases, head by head).
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend_from_slice(w.as_slice());
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (r, c) = (w.rows(), w.cols());
            *w = Matrix::from_vec(r, c, p[at..at + r * c].to_vec()).expect("same shape");
            at += r * c;
            b.copy_from_slice(&p[at..at + c]);
            at += c;
        }
    }

    pub(crate) fn step(&mut self, gw: &[Matrix], gb: &[Vec<f64>], lr: f64) {
        for h in 0..self.num_heads() {
            let w = &mut self.weights[h];
            let (r, c) = (w.rows(), w.cols());
            let mut data = std::mem::replace(w, Matrix::zeros(0, 0)).into_vec();
            for (v, gv) in data.iter_mut().zip(gw[h].as_slice()) {
                *v -= lr * gv;
            }
            *w = Matrix::from_vec(r, c, data).expect("same shape");
            for (v, gv) in self.biases[h].iter_mut().zip(&gb[h]) {
                *v -= lr * gv;
            }
        }
    }
}

pub(crate) fn on_simplex(g: &[f64], k: usize) -> bool {
    g.len() == k && g.iter().all(|&v| v >= -1e-12 && v.is_finite()) && (g.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two heads whose softmax outputs are (0.7, 0.3) and (0.2, 0.8).
    fn fixed_heads() -> LinearHeads {
        let mut h = LinearHeads::zeros(2, 1, 2);
        h.biases[0] = vec![(0.7f64 / 0.3).ln(), 0.0];
        h.biases[1] = vec![(0.2f64 / 0.8).ln(), 0.0];
        h
    }

    #[test]
    fn mixing_rules() {
        let h = fixed_heads();
        let p = h.soft_di_forward(&[0.0], Some(&[0.5, 0.5])).unwrap();
        assert!((p[0] - 0.45).abs() < 1e-12 && (p[1] - 0.55).abs() < 1e-12);
        let p = h.soft_di_forward(&[0.0], None).unwrap();
        assert!((p[0] - 0.45).abs() < 1e-12 && (p[1] - 0.55).abs() < 1e-12);
        let p = h.soft_di_forward(&[0.0], Some(&[0.0, 1.0])).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-12);
        assert_eq!(h.soft_di_forward(&[0.0], Some(&[0.7, 0.7])), Err(MitigateError::InvalidSoftLabel { row: 0 }));
    }

    #[test]
    fn param_round_trip() {
        let mut h = fixed_heads();
        let p: Vec<f64> = (0..h.params().len()).map(|i| i as f64).collect();
        h.set_params(&p);
        assert_eq!(h.params(), p);
    }
}
